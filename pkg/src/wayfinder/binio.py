"""Little-endian framing shared by the place archive and the road-map file."""

from __future__ import annotations

import struct

from .errors import BadMagic, TruncatedArchive, VersionMismatch


class Writer:
    def __init__(self, magic: bytes, version: int):
        self._parts = [magic, struct.pack("<H", version)]

    def pack(self, fmt: str, *values) -> None:
        self._parts.append(struct.pack("<" + fmt, *values))

    def raw(self, data: bytes) -> None:
        self._parts.append(data)

    def string(self, text: str) -> None:
        data = text.encode("utf-8")
        if len(data) > 0xFFFF:
            raise ValueError("string longer than 65535 bytes")
        self.pack("H", len(data))
        self._parts.append(data)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes, magic: bytes, version: int):
        self._data = memoryview(bytes(data))
        self._pos = 0
        if len(self._data) < len(magic):
            if bytes(self._data) == magic[: len(self._data)]:
                raise TruncatedArchive("stream ends inside the magic number")
            raise BadMagic("not a recognised archive")
        head = bytes(self.take(len(magic)))
        if head != magic:
            raise BadMagic(f"bad magic {head!r}, expected {magic!r}")
        (found,) = self.unpack("H")
        if found != version:
            raise VersionMismatch(f"archive version {found}, reader supports {version}")

    def take(self, n: int) -> memoryview:
        end = self._pos + n
        if end > len(self._data):
            raise TruncatedArchive(f"needed {n} bytes at offset {self._pos}, "
                                   f"only {len(self._data) - self._pos} left")
        chunk = self._data[self._pos:end]
        self._pos = end
        return chunk

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("H")
        return bytes(self.take(n)).decode("utf-8")

    def at_end(self) -> bool:
        return self._pos == len(self._data)

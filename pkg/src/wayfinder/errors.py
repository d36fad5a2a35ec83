"""Exception hierarchy shared by all modules."""


class WayfinderError(Exception):
    """Base class for domain failures (CLI exit code 1)."""


class CoincidentPoints(WayfinderError, ValueError):
    pass


class MalformedDocument(WayfinderError, ValueError):
    pass


class InvalidGeometry(WayfinderError, ValueError):
    pass


class NoCandidates(WayfinderError):
    """No start intersection of the requested type lies within the search radius."""


class ImageTooSmall(WayfinderError, ValueError):
    pass


class EmptyInput(WayfinderError, ValueError):
    pass


class InsufficientEntries(WayfinderError, ValueError):
    pass


class EmptyDatabase(WayfinderError, ValueError):
    pass


class AllAbstained(WayfinderError):
    """Every query image had zero good matches against every place."""


class ArchiveError(WayfinderError, ValueError):
    pass


class BadMagic(ArchiveError):
    pass


class TruncatedArchive(ArchiveError):
    pass


class VersionMismatch(ArchiveError):
    pass


class DegenerateConfiguration(WayfinderError, ValueError):
    pass


class NoConsensus(WayfinderError):
    def __init__(self, message, pair_index=None):
        super().__init__(message)
        self.pair_index = pair_index


class FullyBlack(WayfinderError, ValueError):
    pass


class UnknownClass(WayfinderError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class UnknownLabel(WayfinderError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class EmptyMatrix(WayfinderError, ValueError):
    pass


class ZeroCount(WayfinderError, ValueError):
    pass

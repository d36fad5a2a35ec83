"""Descriptor matching, the place database and vote-based place recognition.

A query image votes for the place whose descriptors give it the most
ratio-test matches; the place with the most votes wins.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import binio
from .errors import AllAbstained, ArchiveError, EmptyDatabase, EmptyInput, InsufficientEntries
from .features import DESCRIPTOR_SIZE, SiftConfig, extract_arrays
from .geomath import GeoCoordinate

log = logging.getLogger(__name__)

RATIO = 0.75
MARKER_COLOR = "green"

ARCHIVE_MAGIC = b"WFDB"
ARCHIVE_VERSION = 1
MODE_FLOAT, MODE_U8 = 0, 1
QUANT_SCALE = 512.0


# -- index -----------------------------------------------------------------------

class _KDTree:
    """One randomized k-d tree stored as flat arrays.

    Internal node i splits on ``dim[i]`` at ``val[i]``; leaves have
    ``dim[i] == -1`` and own ``order[lo[i]:hi[i]]``.
    """

    def __init__(self, data: np.ndarray, rng: np.random.Generator, leaf_size: int, top_dims: int = 5,
                 sample: int = 100):
        self.order = np.arange(len(data))
        dim, val, left, right, lo, hi = [], [], [], [], [], []

        def new_node():
            for lst, v in ((dim, -1), (val, 0.0), (left, -1), (right, -1), (lo, 0), (hi, 0)):
                lst.append(v)
            return len(dim) - 1

        root = new_node()
        stack = [(root, 0, len(data))]
        while stack:
            node, a, b = stack.pop()
            idx = self.order[a:b]
            if b - a <= leaf_size:
                lo[node], hi[node] = a, b
                continue
            pts = data[idx[:sample]]
            var = pts.var(axis=0)
            cands = np.argsort(-var, kind="stable")[:top_dims]
            d = int(rng.choice(cands))
            split = float(pts[:, d].mean())
            go_left = data[idx, d] < split
            n_left = int(go_left.sum())
            if n_left == 0 or n_left == b - a:
                # degenerate split on this sample; fall back to the median
                vals = data[idx, d]
                split = float(np.median(vals))
                go_left = vals < split
                n_left = int(go_left.sum())
                if n_left == 0 or n_left == b - a:
                    lo[node], hi[node] = a, b
                    continue
            self.order[a:b] = np.concatenate([idx[go_left], idx[~go_left]])
            dim[node], val[node] = d, split
            l, r = new_node(), new_node()
            left[node], right[node] = l, r
            stack.append((r, a + n_left, b))
            stack.append((l, a, a + n_left))

        self.dim = np.array(dim)
        self.val = np.array(val)
        self.left = np.array(left)
        self.right = np.array(right)
        self.lo = np.array(lo)
        self.hi = np.array(hi)


class DescriptorIndex:
    """Nearest-neighbor index over 128-d descriptors.

    ``mode="exact"`` scans every entry and is the correctness reference.
    ``mode="approx"`` searches a forest of randomized k-d trees, examining at
    most ``checks`` entries per query.
    """

    def __init__(self, descriptors, mode: str = "exact", trees: int = 4, checks: int = 128,
                 leaf_size: int = 8, seed: int = 0):
        data = np.asarray(descriptors, dtype=np.float64)
        if data.size == 0:
            raise EmptyInput("cannot index an empty descriptor list")
        if data.ndim != 2:
            raise ValueError("descriptors must be an (n, d) array")
        if mode not in ("exact", "approx"):
            raise ValueError(f"unknown index mode {mode!r}")
        self.data = data
        self.mode = mode
        self.checks = checks
        self._sq = np.einsum("ij,ij->i", data, data)
        self._trees = []
        if mode == "approx":
            rng = np.random.default_rng(seed)
            self._trees = [_KDTree(data, rng, leaf_size) for _ in range(trees)]

    def __len__(self):
        return len(self.data)

    def knn(self, queries, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
        """Distances and ids of the ``k`` nearest entries for each query row.

        Ties in distance are broken by ascending id.
        """
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if q.shape[1] != self.data.shape[1]:
            raise ValueError(f"query dimension {q.shape[1]} != index dimension {self.data.shape[1]}")
        k = min(k, len(self.data))
        dists = np.empty((len(q), k))
        ids = np.empty((len(q), k), dtype=np.int64)
        search = self._exact if self.mode == "exact" else self._approx
        for i, row in enumerate(q):
            dists[i], ids[i] = search(row, k)
        return dists, ids

    def _rank(self, row, cand, k):
        d = np.sqrt(((self.data[cand] - row) ** 2).sum(axis=1))
        order = np.lexsort((cand, d))[:k]
        return d[order], cand[order]

    def _exact(self, row, k):
        # expanded squared distances pick a superset, exact differences rank it
        d2 = self._sq - 2.0 * (self.data @ row) + row @ row
        kth = np.partition(d2, k - 1)[k - 1]
        tol = 1e-9 * (self._sq.max() + row @ row) + 1e-12
        cand = np.flatnonzero(d2 <= kth + tol)
        return self._rank(row, cand, k)

    def _approx(self, row, k):
        seen = np.zeros(len(self.data), dtype=bool)
        found = []
        heap = []
        counter = 0
        for t, tree in enumerate(self._trees):
            heap.append((0.0, counter, t, 0))
            counter += 1
        heapq.heapify(heap)
        checked = 0
        while heap and (checked < self.checks or len(found) < k):
            bound, _, t, node = heapq.heappop(heap)
            tree = self._trees[t]
            while tree.dim[node] >= 0:
                diff = row[tree.dim[node]] - tree.val[node]
                near, far = (tree.left[node], tree.right[node]) if diff < 0 else (tree.right[node], tree.left[node])
                heapq.heappush(heap, (max(bound, diff * diff), counter, t, far))
                counter += 1
                node = near
            for j in tree.order[tree.lo[node]:tree.hi[node]]:
                if not seen[j]:
                    seen[j] = True
                    found.append(j)
                    checked += 1
        return self._rank(row, np.array(found, dtype=np.int64), k)


def build_index(descriptors, mode: str = "exact", **kwargs) -> DescriptorIndex:
    return DescriptorIndex(descriptors, mode=mode, **kwargs)


def knn2(index: DescriptorIndex, query) -> tuple[float, float, int]:
    """``(d1, d2, id1)``: the two smallest distances and the nearest entry's id."""
    if len(index) < 2:
        raise InsufficientEntries("two-nearest-neighbor search needs at least 2 indexed descriptors")
    d, ids = index.knn(query, 2)
    return float(d[0, 0]), float(d[0, 1]), int(ids[0, 0])


def ratio_accepts(d1, d2, ratio: float = RATIO):
    return d1 < ratio * d2


@dataclass(frozen=True)
class GoodMatches:
    count: int
    matches: list  # (query index, target id, d1)


def good_matches(query_descs, index: DescriptorIndex, ratio: float = RATIO) -> GoodMatches:
    """Query descriptors whose nearest distance is strictly below ``ratio`` times the second."""
    q = np.asarray(query_descs, dtype=np.float64).reshape(-1, index.data.shape[1])
    if len(q) == 0:
        return GoodMatches(0, [])
    if len(index) < 2:
        raise InsufficientEntries("two-nearest-neighbor search needs at least 2 indexed descriptors")
    d, ids = index.knn(q, 2)
    ok = ratio_accepts(d[:, 0], d[:, 1], ratio)
    matches = [(int(i), int(ids[i, 0]), float(d[i, 0])) for i in np.flatnonzero(ok)]
    return GoodMatches(len(matches), matches)


# -- places ----------------------------------------------------------------------

@dataclass
class PlaceRecord:
    place_id: str
    name: str
    location: GeoCoordinate
    keypoints: np.ndarray  # (n, 4) float32: x, y, scale, orientation
    descriptors: np.ndarray  # (n, 128) float32

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float32).reshape(-1, 4)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float32).reshape(-1, DESCRIPTOR_SIZE)
        if len(self.keypoints) != len(self.descriptors):
            raise ValueError(f"place {self.place_id!r}: {len(self.keypoints)} keypoints but "
                             f"{len(self.descriptors)} descriptors")

    def __eq__(self, other):
        if not isinstance(other, PlaceRecord):
            return NotImplemented
        return (self.place_id == other.place_id and self.name == other.name
                and self.location == other.location
                and np.array_equal(self.keypoints, other.keypoints)
                and np.array_equal(self.descriptors, other.descriptors))


class PlaceDatabase:
    """Immutable collection of places with lazily built per-place indexes."""

    def __init__(self, records, index_mode: str = "exact"):
        self.records = tuple(records)
        ids = [r.place_id for r in self.records]
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        if dupes:
            raise ValueError(f"duplicate place_id(s): {', '.join(dupes)}")
        self.index_mode = index_mode
        self._indexes: dict[str, DescriptorIndex | None] = {}

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return isinstance(other, PlaceDatabase) and self.records == other.records

    def place(self, place_id: str) -> PlaceRecord:
        for r in self.records:
            if r.place_id == place_id:
                return r
        raise KeyError(place_id)

    def index(self, place_id: str) -> DescriptorIndex | None:
        if place_id not in self._indexes:
            rec = self.place(place_id)
            self._indexes[place_id] = (DescriptorIndex(rec.descriptors, mode=self.index_mode)
                                       if len(rec.descriptors) >= 2 else None)
        return self._indexes[place_id]


def build_place_record(place_id: str, name: str, location: GeoCoordinate, images,
                       cfg: SiftConfig = SiftConfig()) -> PlaceRecord:
    """Extract and pool SIFT features from every reference image of a place."""
    kps, descs = [], []
    for img in images:
        k, d = extract_arrays(img, cfg)
        kps.append(k)
        descs.append(d)
    return PlaceRecord(place_id, name, location,
                       np.concatenate(kps) if kps else np.zeros((0, 4), np.float32),
                       np.concatenate(descs) if descs else np.zeros((0, DESCRIPTOR_SIZE), np.float32))


def match_image_to_place(image_descs, db: PlaceDatabase, ratio: float = RATIO) -> dict[str, int]:
    """Good-match count of the image's descriptors against each place."""
    if len(db) == 0:
        raise EmptyDatabase("place database is empty")
    counts = {}
    for rec in db.records:
        idx = db.index(rec.place_id)
        if idx is None:
            log.warning("place %s has fewer than 2 descriptors; it cannot collect matches", rec.place_id)
            counts[rec.place_id] = 0
            continue
        counts[rec.place_id] = good_matches(image_descs, idx, ratio).count
    return counts


@dataclass(frozen=True)
class ImageResult:
    counts: dict[str, int]

    @property
    def best(self) -> str | None:
        """Place with the most good matches (smallest id on ties); None when all counts are zero."""
        top = max(self.counts.values(), default=0)
        if top <= 0:
            return None
        return min(p for p, c in self.counts.items() if c == top)


@dataclass
class MatchReport:
    per_image: list[ImageResult]
    tally: dict[str, float]
    winner: str
    tie: bool
    abstained: list[int] = field(default_factory=list)
    winner_name: str | None = None
    winner_location: GeoCoordinate | None = None

    def to_dict(self) -> dict:
        out = {
            "winner": self.winner,
            "tie": self.tie,
            "tally": dict(sorted(self.tally.items())),
            "abstained": list(self.abstained),
            "per_image": [{"best": r.best, "counts": dict(sorted(r.counts.items()))} for r in self.per_image],
        }
        if self.winner_location is not None:
            out["winner_name"] = self.winner_name
            out["winner_location"] = {"lat": self.winner_location.lat, "lon": self.winner_location.lon}
        return out


def vote_places(per_image_results, weighted: bool = False, db: PlaceDatabase | None = None) -> MatchReport:
    """Tally one vote per image for its best place and pick the winner.

    Images with no good matches abstain. With ``weighted=True`` an image adds
    its good-match count instead of a single vote. Ties go to the smallest
    place_id and set ``tie``.
    """
    results = [r if isinstance(r, ImageResult) else ImageResult(dict(r)) for r in per_image_results]
    if not results:
        raise EmptyInput("no image results to vote on")
    tally: dict[str, float] = {}
    for r in results:
        for p in r.counts:
            tally.setdefault(p, 0)
    abstained = []
    for i, r in enumerate(results):
        best = r.best
        if best is None:
            abstained.append(i)
            continue
        tally[best] += r.counts[best] if weighted else 1
    if len(abstained) == len(results):
        raise AllAbstained(f"all {len(results)} query image(s) had zero good matches")
    top = max(tally.values())
    leaders = sorted(p for p, v in tally.items() if v == top)
    report = MatchReport(results, dict(sorted(tally.items())), leaders[0], len(leaders) > 1, abstained)
    if db is not None:
        rec = db.place(report.winner)
        report.winner_name, report.winner_location = rec.name, rec.location
    return report


@dataclass(frozen=True)
class RecognitionConfig:
    sift: SiftConfig = SiftConfig()
    ratio: float = RATIO
    weighted: bool = False


def marker_geojson(report: MatchReport) -> bytes:
    """GeoJSON FeatureCollection with a single green Point at the winning place."""
    if report.winner_location is None:
        raise ValueError("report has no winner location; vote with a database")
    feat = {
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": report.winner_location.to_lonlat()},
        "properties": {"place_id": report.winner, "name": report.winner_name,
                       "votes": report.tally[report.winner], "color": MARKER_COLOR},
    }
    return json.dumps({"type": "FeatureCollection", "features": [feat]},
                      separators=(",", ":"), sort_keys=True).encode("utf-8")


def recognize_place(images, db: PlaceDatabase, cfg: RecognitionConfig = RecognitionConfig()):
    """Extract, match and vote; returns ``(report, marker GeoJSON bytes)``."""
    results = [ImageResult(match_image_to_place(extract_arrays(img, cfg.sift)[1], db, cfg.ratio))
               for img in images]
    report = vote_places(results, cfg.weighted, db)
    return report, marker_geojson(report)


# -- archive ---------------------------------------------------------------------

def quantize(desc: np.ndarray) -> np.ndarray:
    """Scale by 512 and round to u8; components above 255/512 saturate."""
    return np.clip(np.rint(np.asarray(desc, dtype=np.float64) * QUANT_SCALE), 0, 255).astype(np.uint8)


def dequantize(q: np.ndarray) -> np.ndarray:
    return (np.asarray(q, dtype=np.float32) / np.float32(QUANT_SCALE)).astype(np.float32)


def save_archive(db: PlaceDatabase, quantized: bool = False) -> bytes:
    """Serialize the database in the portable little-endian WFDB format."""
    w = binio.Writer(ARCHIVE_MAGIC, ARCHIVE_VERSION)
    w.pack("I", len(db))
    le_f32 = np.dtype("<f4")
    for rec in db.records:
        w.string(rec.place_id)
        w.string(rec.name)
        w.pack("dd", rec.location.lat, rec.location.lon)
        w.pack("I", len(rec.keypoints))
        w.pack("B", MODE_U8 if quantized else MODE_FLOAT)
        for kp, desc in zip(rec.keypoints, rec.descriptors):
            w.raw(kp.astype(le_f32).tobytes())
            w.raw(quantize(desc).tobytes() if quantized else desc.astype(le_f32).tobytes())
    return w.getvalue()


def load_archive(data: bytes, index_mode: str = "exact") -> PlaceDatabase:
    r = binio.Reader(data, ARCHIVE_MAGIC, ARCHIVE_VERSION)
    (n_places,) = r.unpack("I")
    records = []
    for _ in range(n_places):
        place_id = r.string()
        name = r.string()
        lat, lon = r.unpack("dd")
        (n,) = r.unpack("I")
        (mode,) = r.unpack("B")
        if mode not in (MODE_FLOAT, MODE_U8):
            raise ArchiveError(f"unknown descriptor mode {mode} for place {place_id!r}")
        desc_bytes = DESCRIPTOR_SIZE * (4 if mode == MODE_FLOAT else 1)
        block = np.frombuffer(r.take(n * (16 + desc_bytes)), dtype=np.uint8).reshape(n, 16 + desc_bytes)
        kps = block[:, :16].copy().view("<f4").astype(np.float32)
        if mode == MODE_FLOAT:
            descs = block[:, 16:].copy().view("<f4").astype(np.float32)
        else:
            descs = dequantize(block[:, 16:])
        records.append(PlaceRecord(place_id, name, GeoCoordinate(lat, lon), kps, descs))
    if not r.at_end():
        raise ArchiveError("trailing bytes after the last place")
    try:
        return PlaceDatabase(records, index_mode)
    except ValueError as exc:
        raise ArchiveError(str(exc)) from exc

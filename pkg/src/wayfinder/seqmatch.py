"""Locate an observed sequence of junction types on a road network.

Starting from intersections near a known position, a depth-first search
follows road edges, expanding a neighbor only when its junction type is the
next one in the observed sequence.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator

from .errors import NoCandidates
from .geomath import GeoCoordinate, haversine_distance
from .roadnet import JunctionType, RoadNetwork

MATCHABLE = (JunctionType.T, JunctionType.X, JunctionType.Y, JunctionType.ROUNDABOUT, JunctionType.CROSSROAD)

TOKENS = {
    "T": JunctionType.T,
    "X": JunctionType.X,
    "Y": JunctionType.Y,
    "R": JunctionType.ROUNDABOUT,
    "C": JunctionType.CROSSROAD,
}
TOKEN_OF = {v: k for k, v in TOKENS.items()}

PATH_COLOR = "purple"


@dataclass(frozen=True)
class JunctionSequence:
    items: tuple[JunctionType, ...]

    def __post_init__(self):
        items = tuple(JunctionType(i) for i in self.items)
        if not items:
            raise ValueError("junction sequence is empty")
        for item in items:
            if item not in MATCHABLE:
                raise ValueError(f"{item} cannot be observed along a route")
        object.__setattr__(self, "items", items)

    @classmethod
    def parse(cls, text: str) -> "JunctionSequence":
        """Parse ``"T,X,Y"``-style text (tokens T, X, Y, R, C; any case)."""
        tokens = [t.strip().upper() for t in text.split(",")]
        if tokens == [""]:
            raise ValueError("junction sequence is empty")
        unknown = [t for t in tokens if t not in TOKENS]
        if unknown:
            raise ValueError(f"unknown junction token(s): {', '.join(repr(t) for t in unknown)}")
        return cls(tuple(TOKENS[t] for t in tokens))

    def __len__(self):
        return len(self.items)

    def __str__(self):
        return ",".join(TOKEN_OF[i] for i in self.items)


@dataclass
class MatchConfig:
    start: GeoCoordinate
    radius: float = 500.0
    max_candidates: int = 25
    max_results: int | None = 1  # None: unlimited
    allow_node_revisit: bool = False

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")
        if self.max_results is not None and self.max_results < 1:
            raise ValueError("max_results must be >= 1 (or None for unlimited)")


@dataclass(frozen=True)
class PathCandidate:
    nodes: tuple[int, ...]
    total_length: float
    start_distance: float
    edges: tuple[int, ...] = field(default=(), compare=False)


def _link(net: RoadNetwork, u: int, v: int):
    """Shortest edge joining u and v, or None."""
    best = None
    for nbr, eid in net.neighbors(u):
        if nbr == v:
            length = net.edges[eid].length
            if best is None or length < best[1]:
                best = (eid, length)
    return best


def make_candidate(net: RoadNetwork, nodes, start: GeoCoordinate) -> PathCandidate:
    edges, total = [], []
    for u, v in zip(nodes, nodes[1:]):
        eid, length = _link(net, u, v)
        edges.append(eid)
        total.append(length)
    return PathCandidate(
        nodes=tuple(nodes),
        total_length=math.fsum(total),
        start_distance=haversine_distance(start, net.nodes[nodes[0]].position),
        edges=tuple(edges),
    )


def find_start_candidates(net: RoadNetwork, cfg: MatchConfig, first_type: JunctionType) -> list[int]:
    """Nodes of ``first_type`` within ``cfg.radius`` of ``cfg.start``, nearest first."""
    hits = []
    for nid, node in net.nodes.items():
        if node.junction_type != first_type:
            continue
        d = haversine_distance(cfg.start, node.position)
        if d <= cfg.radius:
            hits.append((d, nid))
    if not hits:
        raise NoCandidates(f"no {first_type} intersection within {cfg.radius:g} m of "
                           f"({cfg.start.lat:.6f}, {cfg.start.lon:.6f})")
    hits.sort()
    return [nid for _, nid in hits[:cfg.max_candidates]]


def _ordered_neighbors(net: RoadNetwork, node: int) -> list[int]:
    out = []
    for nbr, _ in net.neighbors(node):
        if nbr != node and (not out or out[-1] != nbr):
            out.append(nbr)
    return out


def iter_completions(net: RoadNetwork, prefix, remaining, allow_node_revisit: bool = False) -> Iterator[tuple[int, ...]]:
    """Every node path extending ``prefix`` through the types in ``remaining``.

    Paths are produced in depth-first order with neighbors visited by
    ascending node id.
    """
    prefix = tuple(prefix)
    remaining = tuple(remaining)
    if not remaining:
        yield prefix
        return
    # explicit stack keeps deep sequences clear of the recursion limit
    stack = [(prefix, iter(_ordered_neighbors(net, prefix[-1])))]
    while stack:
        path, nbrs = stack[-1]
        depth = len(path) - len(prefix)
        want = remaining[depth]
        for nbr in nbrs:
            if net.nodes[nbr].junction_type != want:
                continue
            if not allow_node_revisit and nbr in path:
                continue
            new_path = path + (nbr,)
            if depth + 1 == len(remaining):
                yield new_path
                continue
            stack.append((new_path, iter(_ordered_neighbors(net, nbr))))
            break
        else:
            stack.pop()


def find_path(net: RoadNetwork, start_node: int, seq: JunctionSequence, cfg: MatchConfig) -> PathCandidate | None:
    """First type-consistent path from ``start_node`` in depth-first order, or None."""
    if net.nodes[start_node].junction_type != seq.items[0]:
        return None
    for nodes in iter_completions(net, (start_node,), seq.items[1:], cfg.allow_node_revisit):
        return make_candidate(net, nodes, cfg.start)
    return None


def match_sequence(net: RoadNetwork, seq: JunctionSequence, cfg: MatchConfig) -> list[PathCandidate]:
    """Paths realizing ``seq`` that start near ``cfg.start``.

    With ``max_results=1`` this stops at the first start candidate (nearest
    first) that admits any path and returns that path. Otherwise every path
    from every start candidate is collected, ordered by
    ``(start_distance, total_length, nodes)`` and truncated to
    ``max_results`` (``None`` keeps all).
    """
    starts = find_start_candidates(net, cfg, seq.items[0])
    if cfg.max_results == 1:
        for nid in starts:
            found = find_path(net, nid, seq, cfg)
            if found is not None:
                return [found]
        return []
    results = [make_candidate(net, nodes, cfg.start)
               for nid in starts
               for nodes in iter_completions(net, (nid,), seq.items[1:], cfg.allow_node_revisit)]
    results.sort(key=lambda c: (c.start_distance, c.total_length, c.nodes))
    return results if cfg.max_results is None else results[:cfg.max_results]


def first_discrepancy(net: RoadNetwork, nodes, seq: JunctionSequence) -> int | None:
    """Index of the first node that no longer fits the sequence, or None."""
    if len(nodes) != len(seq):
        return min(len(nodes), len(seq))
    for k, nid in enumerate(nodes):
        node = net.nodes.get(nid)
        if node is None or node.junction_type != seq.items[k]:
            return k
        if k and _link(net, nodes[k - 1], nid) is None:
            return k
    return None


def validate_and_correct(net: RoadNetwork, candidate: PathCandidate, seq: JunctionSequence,
                         cfg: MatchConfig) -> PathCandidate | None:
    """Re-check a matched path and repair it after its first discrepancy.

    The valid prefix is kept and the search resumes from its last node with
    the unmatched part of the sequence. When even the first node fails, the
    whole sequence is matched again from ``cfg.start``.
    """
    k = first_discrepancy(net, candidate.nodes, seq)
    if k is None:
        return candidate
    if k == 0:
        try:
            found = match_sequence(net, seq, MatchConfig(cfg.start, cfg.radius, cfg.max_candidates, 1,
                                                         cfg.allow_node_revisit))
        except NoCandidates:
            return None
        return found[0] if found else None
    prefix = candidate.nodes[:k]
    for nodes in iter_completions(net, prefix, seq.items[k:], cfg.allow_node_revisit):
        return make_candidate(net, nodes, cfg.start)
    return None


def export_path_geojson(net: RoadNetwork, candidate: PathCandidate) -> bytes:
    """Ordered purple Points for the path nodes plus a LineString per traversed edge."""
    feats = []
    for i, nid in enumerate(candidate.nodes):
        node = net.nodes[nid]
        feats.append({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": node.position.to_lonlat()},
            "properties": {
                "sequence_index": i,
                "node_id": nid,
                "junction_type": node.junction_type.value,
                "color": PATH_COLOR,
            },
        })
    edges = candidate.edges or tuple(_link(net, u, v)[0] for u, v in zip(candidate.nodes, candidate.nodes[1:]))
    for i, ((u, v), eid) in enumerate(zip(zip(candidate.nodes, candidate.nodes[1:]), edges)):
        line = net.edges[eid].polyline
        if net.edges[eid].endpoints[0] != u:
            line = line[::-1]
        feats.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": [p.to_lonlat() for p in line]},
            "properties": {"sequence_index": i, "edge_id": eid, "from": u, "to": v,
                           "length_m": round(net.edges[eid].length, 3), "color": PATH_COLOR},
        })
    doc = {
        "type": "FeatureCollection",
        "features": feats,
        "properties": {"total_length_m": round(candidate.total_length, 3),
                       "start_distance_m": round(candidate.start_distance, 3)},
    }
    return json.dumps(doc, separators=(",", ":"), sort_keys=True).encode("utf-8")


def read_path_nodes(document) -> list[int]:
    """Node ids of an exported path, in sequence order."""
    doc = json.loads(document)
    points = [f["properties"] for f in doc["features"] if f["geometry"]["type"] == "Point"]
    return [p["node_id"] for p in sorted(points, key=lambda p: p["sequence_index"])]

"""Road network construction from GeoJSON line strings.

Intersections become nodes, the road pieces between them become edges, and
each node is labelled with a junction type derived from the bearings of the
roads that meet there.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree

from . import binio
from .errors import InvalidGeometry, MalformedDocument
from .geomath import (
    EARTH_RADIUS_M,
    GeoCoordinate,
    angle_between_bearings,
    haversine_distance,
    initial_bearing,
    polyline_length,
)

log = logging.getLogger(__name__)

DEFAULT_SNAP_TOLERANCE = 0.5
DEFAULT_COLLINEAR_TOL = 20.0
DEFAULT_BEARING_LOOKAHEAD = 5.0
DEFAULT_ROUNDABOUT_PERIMETER = 120.0

# properties that mark a line string as something other than a road
_NON_ROAD_KEYS = ("building", "barrier", "waterway", "railway", "power", "natural", "landuse", "boundary")


class JunctionType(str, Enum):
    T = "T"
    X = "X"
    Y = "Y"
    ROUNDABOUT = "Roundabout"
    CROSSROAD = "Crossroad"
    ENDPOINT = "Endpoint"
    PASS_THROUGH = "PassThrough"

    def __str__(self):
        return self.value


JUNCTION_COLORS = {
    JunctionType.X: "red",
    JunctionType.Y: "yellow",
    JunctionType.T: "blue",
    JunctionType.ROUNDABOUT: "purple",
    JunctionType.CROSSROAD: "green",
    JunctionType.ENDPOINT: "gray",
    JunctionType.PASS_THROUGH: "lightgray",
}

_TYPE_CODES = {t: i for i, t in enumerate(JunctionType)}


@dataclass(frozen=True)
class RoadFeature:
    id: str
    geometry: tuple[GeoCoordinate, ...]
    road_class: str = ""
    name: str | None = None
    junction: str | None = None

    def __post_init__(self):
        if len(self.geometry) < 2:
            raise InvalidGeometry(f"feature {self.id}: fewer than 2 points")
        for p, q in zip(self.geometry, self.geometry[1:]):
            if p == q:
                raise InvalidGeometry(f"feature {self.id}: repeated consecutive point {p}")


@dataclass
class IntersectionNode:
    id: int
    position: GeoCoordinate
    incident_edges: list[int]
    junction_type: JunctionType
    approach_bearings: list[float]

    @property
    def degree(self) -> int:
        return len(self.incident_edges)


@dataclass
class RoadSegment:
    id: int
    endpoints: tuple[int, int]
    polyline: list[GeoCoordinate]
    length: float
    road_class: str = ""
    junction: str | None = None
    feature_id: str = ""


@dataclass
class RoadNetwork:
    nodes: dict[int, IntersectionNode]
    edges: dict[int, RoadSegment]
    adjacency: dict[int, list[tuple[int, int]]]
    stats: dict[str, int] = field(default_factory=dict)

    def neighbors(self, node_id: int) -> list[tuple[int, int]]:
        return self.adjacency.get(node_id, [])

    def type_histogram(self) -> dict[str, int]:
        counts = Counter(n.junction_type for n in self.nodes.values())
        return {t.value: counts[t] for t in JunctionType if counts[t]}


@dataclass
class ParseReport:
    features: list[RoadFeature]
    skipped_non_road: int = 0
    invalid: list[str] = field(default_factory=list)


# -- parsing -----------------------------------------------------------------

def _load_document(document) -> dict:
    if isinstance(document, (bytes, bytearray, memoryview)):
        try:
            text = bytes(document).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not UTF-8: {exc}") from None
    else:
        text = document
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"not JSON: {exc}") from None
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise MalformedDocument("document is not a GeoJSON FeatureCollection")
    features = doc.get("features")
    if not isinstance(features, list):
        raise MalformedDocument("FeatureCollection without a features array")
    return doc


def _is_road(props: dict) -> bool:
    if "highway" in props:
        return True
    return not any(k in props for k in _NON_ROAD_KEYS)


def _line_coords(raw, fid: str) -> tuple[GeoCoordinate, ...]:
    if not isinstance(raw, list):
        raise InvalidGeometry(f"feature {fid}: coordinates are not an array")
    pts = []
    for pos in raw:
        if not isinstance(pos, (list, tuple)) or len(pos) < 2:
            raise InvalidGeometry(f"feature {fid}: bad position {pos!r}")
        try:
            p = GeoCoordinate.from_lonlat(pos)
        except (TypeError, ValueError) as exc:
            raise InvalidGeometry(f"feature {fid}: {exc}") from None
        if not pts or pts[-1] != p:
            pts.append(p)
    if len(pts) < 2:
        raise InvalidGeometry(f"feature {fid}: fewer than 2 distinct points")
    return tuple(pts)


def read_roads(document) -> ParseReport:
    """Parse a FeatureCollection, keeping per-feature problems in the report."""
    doc = _load_document(document)
    report = ParseReport(features=[])
    for index, feat in enumerate(doc["features"]):
        if not isinstance(feat, dict):
            report.invalid.append(f"feature-{index}")
            continue
        props = feat.get("properties") or {}
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        fid = feat.get("id", props.get("@id", props.get("id", f"feature-{index}")))
        fid = str(fid)
        if gtype == "LineString":
            parts = [(fid, geom.get("coordinates"))]
        elif gtype == "MultiLineString":
            coords = geom.get("coordinates") or []
            parts = [(f"{fid}#{k}", c) for k, c in enumerate(coords)]
        else:
            report.skipped_non_road += 1
            continue
        if not _is_road(props):
            report.skipped_non_road += 1
            continue
        for part_id, coords in parts:
            try:
                pts = _line_coords(coords, part_id)
            except InvalidGeometry as exc:
                log.warning("skipping %s", exc)
                report.invalid.append(part_id)
                continue
            report.features.append(RoadFeature(
                id=part_id,
                geometry=pts,
                road_class=str(props.get("highway") or props.get("road_class") or ""),
                name=props.get("name"),
                junction=props.get("junction"),
            ))
    if report.skipped_non_road:
        log.warning("skipped %d non-road features", report.skipped_non_road)
    return report


def parse_geojson_roads(document) -> list[RoadFeature]:
    """Read road line strings from a GeoJSON FeatureCollection.

    GeoJSON positions are ``[lon, lat]``; they are swapped into
    :class:`GeoCoordinate`. MultiLineStrings are split into one feature per
    part. Features that are not lines, or lines tagged as non-road objects,
    are skipped; lines with fewer than two distinct points are skipped and
    logged.
    """
    return read_roads(document).features


# -- graph construction ------------------------------------------------------

def classify_junction(approach_bearings, collinear_tol: float = DEFAULT_COLLINEAR_TOL) -> JunctionType:
    """Junction type from the bearings of the roads leaving a node."""
    b = list(approach_bearings)
    if not b:
        raise ValueError("at least one bearing required")
    degree = len(b)
    if degree == 1:
        return JunctionType.ENDPOINT
    if degree == 2:
        return JunctionType.PASS_THROUGH

    def collinear(i, j):
        return angle_between_bearings(b[i], b[j]) >= 180.0 - collinear_tol

    if degree == 3:
        pairs = sum(collinear(i, j) for i, j in combinations(range(3), 2))
        return JunctionType.T if pairs == 1 else JunctionType.Y
    if degree == 4:
        for (i, j), (k, l) in (((0, 1), (2, 3)), ((0, 2), (1, 3)), ((0, 3), (1, 2))):
            if collinear(i, j) and collinear(k, l):
                return JunctionType.X
        return JunctionType.CROSSROAD
    return JunctionType.CROSSROAD


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, i):
        while self.parent[i] != i:
            self.parent[i] = self.parent[self.parent[i]]
            i = self.parent[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            # smallest index stays the root so representatives are deterministic
            if rj < ri:
                ri, rj = rj, ri
            self.parent[rj] = ri


def _ecef(points) -> np.ndarray:
    lat = np.radians([p.lat for p in points])
    lon = np.radians([p.lon for p in points])
    return EARTH_RADIUS_M * np.column_stack(
        (np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)))


def _cluster(points, snap_tolerance: float) -> list[int]:
    """Map each point index to the smallest index of its snap cluster."""
    if snap_tolerance <= 0:
        first = {}
        return [first.setdefault((p.lat, p.lon), i) for i, p in enumerate(points)]
    uf = _UnionFind(len(points))
    tree = cKDTree(_ecef(points))
    for i, j in sorted(tree.query_pairs(snap_tolerance)):
        uf.union(i, j)
    return [uf.find(i) for i in range(len(points))]


def _approach_point(polyline, lookahead: float) -> GeoCoordinate:
    origin = polyline[0]
    travelled = 0.0
    for p, q in zip(polyline, polyline[1:]):
        travelled += haversine_distance(p, q)
        if travelled >= lookahead and q != origin:
            return q
    if polyline[-1] != origin:
        return polyline[-1]
    # short closed loop: aim at the vertex farthest from the node
    return max(polyline, key=lambda p: haversine_distance(origin, p))


def _finish(nodes_pos: dict[int, GeoCoordinate], edges: dict[int, RoadSegment],
            collinear_tol: float, lookahead: float, stats: dict,
            types: dict[int, JunctionType] | None = None) -> RoadNetwork:
    incident: dict[int, list[int]] = defaultdict(list)
    bearings: dict[int, list[float]] = defaultdict(list)
    adjacency: dict[int, list[tuple[int, int]]] = {nid: [] for nid in nodes_pos}
    for eid in sorted(edges):
        e = edges[eid]
        u, v = e.endpoints
        for node, line in ((u, e.polyline), (v, e.polyline[::-1])):
            incident[node].append(eid)
            bearings[node].append(initial_bearing(line[0], _approach_point(line, lookahead)))
        adjacency[u].append((v, eid))
        adjacency[v].append((u, eid))
    nodes = {}
    for nid, pos in nodes_pos.items():
        if types is not None:
            jtype = types[nid]
        elif incident[nid]:
            jtype = classify_junction(bearings[nid], collinear_tol)
        else:
            jtype = JunctionType.ENDPOINT
        nodes[nid] = IntersectionNode(nid, pos, incident[nid], jtype, bearings[nid])
    for nid in adjacency:
        adjacency[nid].sort()
    return RoadNetwork(nodes=nodes, edges=edges, adjacency=adjacency, stats=stats)


def build_graph(features, snap_tolerance: float = DEFAULT_SNAP_TOLERANCE,
                collinear_tol: float = DEFAULT_COLLINEAR_TOL,
                bearing_lookahead: float = DEFAULT_BEARING_LOOKAHEAD) -> RoadNetwork:
    """Turn road line strings into an intersection graph.

    Nodes are placed at line-string endpoints and at every coordinate that
    occurs more than once (across features or within one), after merging
    coordinates closer than ``snap_tolerance`` meters. Lines are split at
    nodes, so each edge joins exactly two nodes. Degree-2 nodes are kept and
    typed ``PassThrough``.
    """
    if snap_tolerance < 0:
        raise ValueError("snap_tolerance must be >= 0")
    features = list(features)
    flat = [p for f in features for p in f.geometry]
    stats = {"features": len(features), "dropped_zero_length": 0}
    cluster = _cluster(flat, snap_tolerance) if flat else []

    # per-feature cluster sequences with snapped duplicates collapsed
    sequences = []
    offset = 0
    for f in features:
        seq = []
        for k in range(len(f.geometry)):
            c = cluster[offset + k]
            if seq and seq[-1][0] == c:
                continue
            seq.append((c, offset + k))
        offset += len(f.geometry)
        if len(seq) < 2:
            stats["dropped_zero_length"] += 1
            seq = []
        sequences.append(seq)

    occurrences = Counter(c for seq in sequences for c, _ in seq)
    node_clusters = set()
    for seq in sequences:
        if seq:
            node_clusters.add(seq[0][0])
            node_clusters.add(seq[-1][0])
    node_clusters.update(c for c, n in occurrences.items() if n >= 2)

    node_of_cluster: dict[int, int] = {}
    nodes_pos: dict[int, GeoCoordinate] = {}
    for seq in sequences:
        for c, _ in seq:
            if c in node_clusters and c not in node_of_cluster:
                nid = len(node_of_cluster)
                node_of_cluster[c] = nid
                nodes_pos[nid] = flat[c]

    edges: dict[int, RoadSegment] = {}
    for f, seq in zip(features, sequences):
        if not seq:
            continue
        start = 0
        for k in range(1, len(seq)):
            c = seq[k][0]
            if c not in node_clusters:
                continue
            piece = seq[start:k + 1]
            line = [flat[piece[0][0]]] + [flat[idx] for _, idx in piece[1:-1]] + [flat[piece[-1][0]]]
            length = polyline_length(line)
            if length <= 0.0:
                stats["dropped_zero_length"] += 1
            else:
                eid = len(edges)
                edges[eid] = RoadSegment(
                    id=eid,
                    endpoints=(node_of_cluster[piece[0][0]], node_of_cluster[c]),
                    polyline=line,
                    length=length,
                    road_class=f.road_class,
                    junction=f.junction,
                    feature_id=f.id,
                )
            start = k
    return _finish(nodes_pos, edges, collinear_tol, bearing_lookahead, stats)


def features_from_network(net: RoadNetwork) -> list[RoadFeature]:
    """One feature per edge polyline (used to re-derive a graph)."""
    return [RoadFeature(id=f"edge-{e.id}", geometry=tuple(e.polyline), road_class=e.road_class,
                        junction=e.junction)
            for e in (net.edges[k] for k in sorted(net.edges))]


# -- roundabouts ---------------------------------------------------------------

def _is_roundabout_tagged(edge: RoadSegment) -> bool:
    return edge.road_class == "roundabout" or edge.junction in ("roundabout", "circular")


def short_cycles(net: RoadNetwork, max_perimeter: float) -> list[tuple[int, ...]]:
    """Simple cycles with total length <= max_perimeter, as edge-id tuples.

    Each cycle is reported once, as the lexicographically smallest rotation
    and direction of its edge sequence.
    """
    found = set()
    for s in sorted(net.nodes):
        # depth-first over nodes with id > s, so every cycle is rooted at its minimum node
        stack = [(s, 0.0, (), frozenset((s,)))]
        while stack:
            node, dist, path, seen = stack.pop()
            for nbr, eid in net.neighbors(node):
                if eid in path:
                    continue
                d = dist + net.edges[eid].length
                if d > max_perimeter:
                    continue
                if nbr == s:
                    found.add(_canonical_cycle(path + (eid,)))
                elif nbr > s and nbr not in seen:
                    stack.append((nbr, d, path + (eid,), seen | {nbr}))
    return sorted(found)


def _canonical_cycle(edges: tuple[int, ...]) -> tuple[int, ...]:
    n = len(edges)
    variants = []
    for seq in (edges, edges[::-1]):
        for r in range(n):
            variants.append(seq[r:] + seq[:r])
    return min(variants)


def detect_roundabouts(net: RoadNetwork, max_perimeter: float = DEFAULT_ROUNDABOUT_PERIMETER) -> RoadNetwork:
    """Return a copy of ``net`` with roundabout member nodes retyped.

    A node is a roundabout member when it lies on a simple cycle no longer
    than ``max_perimeter`` meters, or on an edge tagged as a roundabout.
    """
    members = set()
    for cycle in short_cycles(net, max_perimeter):
        for eid in cycle:
            members.update(net.edges[eid].endpoints)
    for e in net.edges.values():
        if _is_roundabout_tagged(e):
            members.update(e.endpoints)
    nodes = {nid: (replace(n, junction_type=JunctionType.ROUNDABOUT) if nid in members else n)
             for nid, n in net.nodes.items()}
    stats = dict(net.stats, roundabout_nodes=len(members))
    return RoadNetwork(nodes=nodes, edges=net.edges, adjacency=net.adjacency, stats=stats)


# -- validation ------------------------------------------------------------------

@dataclass
class ValidationReport:
    asymmetric: list[tuple[int, int, int]] = field(default_factory=list)
    dangling: list[tuple[int, int]] = field(default_factory=list)
    type_mismatches: list[tuple[int, str, str]] = field(default_factory=list)

    def __len__(self):
        return len(self.asymmetric) + len(self.dangling) + len(self.type_mismatches)

    @property
    def ok(self) -> bool:
        return len(self) == 0


def validate_graph(net: RoadNetwork, collinear_tol: float = DEFAULT_COLLINEAR_TOL) -> ValidationReport:
    """Check adjacency symmetry, edge endpoints, and stored junction types.

    Roundabout labels come from cycle detection rather than bearings; they
    are accepted on any node of degree >= 2.
    """
    report = ValidationReport()
    entries = Counter((u, v, e) for u, lst in net.adjacency.items() for v, e in lst)
    for (u, v, e), n in sorted(entries.items()):
        missing = n - entries.get((v, u, e), 0) if u != v else 0
        for _ in range(max(missing, 0)):
            report.asymmetric.append((u, v, e))
    for eid in sorted(net.edges):
        for end in net.edges[eid].endpoints:
            if end not in net.nodes:
                report.dangling.append((eid, end))
    for nid in sorted(net.nodes):
        node = net.nodes[nid]
        if node.junction_type is JunctionType.ROUNDABOUT and node.degree >= 2:
            continue
        expected = (classify_junction(node.approach_bearings, collinear_tol)
                    if node.approach_bearings else JunctionType.ENDPOINT)
        if expected is not node.junction_type:
            report.type_mismatches.append((nid, node.junction_type.value, expected.value))
    return report


# -- GeoJSON export ----------------------------------------------------------------

def _dumps(doc) -> bytes:
    return json.dumps(doc, separators=(",", ":"), sort_keys=True).encode("utf-8")


def export_annotated_geojson(net: RoadNetwork) -> bytes:
    """FeatureCollection with a colored Point per node and a LineString per edge."""
    feats = []
    for nid in sorted(net.nodes):
        n = net.nodes[nid]
        feats.append({
            "type": "Feature",
            "id": f"node-{nid}",
            "geometry": {"type": "Point", "coordinates": n.position.to_lonlat()},
            "properties": {
                "node_id": nid,
                "junction_type": n.junction_type.value,
                "degree": n.degree,
                "color": JUNCTION_COLORS[n.junction_type],
            },
        })
    for eid in sorted(net.edges):
        e = net.edges[eid]
        props = {"edge_id": eid, "from": e.endpoints[0], "to": e.endpoints[1],
                 "length_m": round(e.length, 3), "highway": e.road_class or None}
        if e.junction:
            props["junction"] = e.junction
        feats.append({
            "type": "Feature",
            "id": f"edge-{eid}",
            "geometry": {"type": "LineString", "coordinates": [p.to_lonlat() for p in e.polyline]},
            "properties": props,
        })
    return _dumps({"type": "FeatureCollection", "features": feats})


def read_annotated_nodes(document) -> list[tuple[int, GeoCoordinate, JunctionType]]:
    """Node points from an annotated export, in file order."""
    doc = _load_document(document)
    out = []
    for feat in doc["features"]:
        geom = feat.get("geometry") or {}
        props = feat.get("properties") or {}
        if geom.get("type") == "Point" and "junction_type" in props:
            out.append((int(props["node_id"]), GeoCoordinate.from_lonlat(geom["coordinates"]),
                        JunctionType(props["junction_type"])))
    return out


# -- binary map file ---------------------------------------------------------------

MAP_MAGIC = b"WFMP"
MAP_VERSION = 1


def save_network(net: RoadNetwork) -> bytes:
    """Serialize nodes (with stored types) and edges; bearings are re-derived on load."""
    w = binio.Writer(MAP_MAGIC, MAP_VERSION)
    w.pack("I", len(net.nodes))
    for nid in sorted(net.nodes):
        n = net.nodes[nid]
        w.pack("IddB", nid, n.position.lat, n.position.lon, _TYPE_CODES[n.junction_type])
    w.pack("I", len(net.edges))
    for eid in sorted(net.edges):
        e = net.edges[eid]
        w.pack("IIII", eid, e.endpoints[0], e.endpoints[1], len(e.polyline))
        for p in e.polyline:
            w.pack("dd", p.lat, p.lon)
        w.string(e.road_class)
        w.string(e.junction or "")
        w.string(e.feature_id)
    return w.getvalue()


def load_network(data: bytes, collinear_tol: float = DEFAULT_COLLINEAR_TOL,
                 bearing_lookahead: float = DEFAULT_BEARING_LOOKAHEAD) -> RoadNetwork:
    r = binio.Reader(data, MAP_MAGIC, MAP_VERSION)
    codes = list(JunctionType)
    (n_nodes,) = r.unpack("I")
    nodes_pos, types = {}, {}
    for _ in range(n_nodes):
        nid, lat, lon, code = r.unpack("IddB")
        nodes_pos[nid] = GeoCoordinate(lat, lon)
        types[nid] = codes[code]
    (n_edges,) = r.unpack("I")
    edges = {}
    for _ in range(n_edges):
        eid, u, v, npts = r.unpack("IIII")
        line = [GeoCoordinate(*r.unpack("dd")) for _ in range(npts)]
        road_class = r.string()
        junction = r.string() or None
        fid = r.string()
        edges[eid] = RoadSegment(eid, (u, v), line, polyline_length(line), road_class, junction, fid)
    return _finish(nodes_pos, edges, collinear_tol, bearing_lookahead, {}, types=types)


__all__ = [
    "JunctionType", "RoadFeature", "IntersectionNode", "RoadSegment", "RoadNetwork",
    "parse_geojson_roads", "read_roads", "build_graph", "classify_junction",
    "detect_roundabouts", "validate_graph", "ValidationReport", "export_annotated_geojson",
    "read_annotated_nodes", "save_network", "load_network", "features_from_network",
    "short_cycles", "JUNCTION_COLORS",
]

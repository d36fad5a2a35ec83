"""Synthetic road and image fixtures with known ground truth.

Used by the test-suite and handy for trying the CLI without field data.
"""

from __future__ import annotations

import json

import numpy as np

from .geomath import GeoCoordinate, destination_point
from .roadnet import RoadFeature

ORIGIN = GeoCoordinate(36.7120, 3.1810)


def offset(origin: GeoCoordinate, east: float, north: float) -> GeoCoordinate:
    """Point ``east``/``north`` meters away from ``origin`` (small offsets)."""
    p = destination_point(origin, 0.0, north) if north else origin
    return destination_point(p, 90.0, east) if east else p


def plus_sign(center: GeoCoordinate = ORIGIN, arm: float = 100.0) -> list[RoadFeature]:
    """Two roads crossing at ``center``: one N-S, one E-W."""
    ns = (offset(center, 0, -arm), center, offset(center, 0, arm))
    ew = (offset(center, -arm, 0), center, offset(center, arm, 0))
    return [RoadFeature("ns", ns, "residential"), RoadFeature("ew", ew, "residential")]


def grid(h: int, v: int, spacing: float = 100.0, origin: GeoCoordinate = ORIGIN) -> list[RoadFeature]:
    """``h`` east-west and ``v`` north-south roads, each overhanging the outermost crossings.

    Crossing coordinates are computed once and shared by both roads through
    them, so every crossing becomes a degree-4 node.
    """
    pts = {(i, j): offset(origin, j * spacing, i * spacing)
           for i in range(-1, h + 1) for j in range(-1, v + 1)}
    feats = []
    for i in range(h):
        feats.append(RoadFeature(f"h{i}", tuple(pts[i, j] for j in range(-1, v + 1)), "residential"))
    for j in range(v):
        feats.append(RoadFeature(f"v{j}", tuple(pts[i, j] for i in range(-1, h + 1)), "residential"))
    return feats


def ring_with_spokes(center: GeoCoordinate = ORIGIN, n: int = 6, perimeter: float = 80.0,
                     spoke: float = 60.0, tag: str | None = None) -> list[RoadFeature]:
    """Closed ring of ``n`` vertices (a polygon of the given perimeter) with one spoke per vertex."""
    radius = perimeter / (2 * n * np.sin(np.pi / n))
    ring = [destination_point(center, 360.0 * k / n, radius) for k in range(n)]
    feats = [RoadFeature("ring", tuple(ring + ring[:1]), "roundabout" if tag else "residential",
                         junction=tag)]
    for k, p in enumerate(ring):
        far = destination_point(center, 360.0 * k / n, radius + spoke)
        feats.append(RoadFeature(f"spoke{k}", (p, far), "residential"))
    return feats


def route_fixture(origin: GeoCoordinate = ORIGIN) -> tuple[list[RoadFeature], list[str]]:
    """A small town whose main street passes T, Y, X, T, X junctions in order.

    Returns the features and the junction tokens along the route. The
    geometry is laid out so that each crossing classifies to the intended
    type; a decoy T junction sits just west of the first one.
    """
    step = 120.0
    c0 = origin
    c1 = offset(c0, step, 0)
    bend = destination_point(c1, 60.0, 60.0)  # the main street leaves the Y junction north-east
    c2 = offset(bend, step, 0)
    c3 = offset(c2, step, 0)
    c4 = offset(c3, step, 0)
    main = [offset(c0, -step, 0), c0, c1, bend, c2, c3, c4, offset(c4, step, 0)]
    feats = [RoadFeature("main", tuple(main), "primary")]
    # T: perpendicular branch north
    feats.append(RoadFeature("t0", (c0, offset(c0, 0, 90)), "residential"))
    # Y: branch south-south-east, no pair of roads is collinear
    feats.append(RoadFeature("y1", (c1, destination_point(c1, 165.0, 90)), "residential"))
    # X: full crossing
    feats.append(RoadFeature("x2", (offset(c2, 0, -90), c2, offset(c2, 0, 90)), "residential"))
    # T: branch south
    feats.append(RoadFeature("t3", (c3, offset(c3, 0, -90)), "residential"))
    # X: full crossing
    feats.append(RoadFeature("x4", (offset(c4, 0, -90), c4, offset(c4, 0, 90)), "residential"))
    # decoy: a T junction west of the origin that leads nowhere useful
    decoy = offset(c0, -step, 0)
    feats.append(RoadFeature("decoy", (offset(decoy, 0, -70), decoy, offset(decoy, 0, 70)), "residential"))
    return feats, ["T", "Y", "X", "T", "X"]


def features_to_geojson(features, extra=()) -> bytes:
    """Serialize road features as a GeoJSON FeatureCollection (lon, lat order)."""
    out = []
    for f in features:
        props = {"highway": f.road_class or "road"}
        if f.name:
            props["name"] = f.name
        if f.junction:
            props["junction"] = f.junction
        out.append({"type": "Feature", "id": f.id, "properties": props,
                    "geometry": {"type": "LineString", "coordinates": [p.to_lonlat() for p in f.geometry]}})
    out.extend(extra)
    return json.dumps({"type": "FeatureCollection", "features": out}).encode("utf-8")


# -- images --------------------------------------------------------------------

def blob_scene(height: int, width: int, seed: int = 0, n_blobs: int | None = None,
               scale: float = 1.0) -> np.ndarray:
    """Smooth gray scene of random elliptical Gaussian blobs, evaluated analytically.

    Blobs are anisotropic so that keypoints on them have a well-defined
    dominant orientation. ``scale`` renders the same continuous scene at a
    different resolution (2.0 gives an exact 2x enlargement of the content).
    """
    rng = np.random.default_rng(seed)
    n = n_blobs if n_blobs is not None else max(8, height * width // 300)
    cy = rng.uniform(0, height, n)
    cx = rng.uniform(0, width, n)
    major = rng.uniform(2.0, 7.0, n)
    minor = major * rng.uniform(0.3, 0.7, n)
    angle = rng.uniform(0, np.pi, n)
    amp = rng.uniform(-0.45, 0.45, n)
    hh, ww = int(round(height * scale)), int(round(width * scale))
    img = np.full((hh, ww), 0.5)
    for y0, x0, a, b, t, k in zip(cy, cx, major, minor, angle, amp):
        reach = 4.0 * a
        # rendered pixel i covers scene coordinate (i + 0.5) / scale - 0.5
        r0 = max(0, int(np.floor(((y0 - reach) + 0.5) * scale - 0.5)))
        r1 = min(hh, int(np.ceil(((y0 + reach) + 0.5) * scale - 0.5)) + 1)
        c0 = max(0, int(np.floor(((x0 - reach) + 0.5) * scale - 0.5)))
        c1 = min(ww, int(np.ceil(((x0 + reach) + 0.5) * scale - 0.5)) + 1)
        if r0 >= r1 or c0 >= c1:
            continue
        ys = (np.arange(r0, r1) + 0.5) / scale - 0.5 - y0
        xs = (np.arange(c0, c1) + 0.5) / scale - 0.5 - x0
        dy, dx = np.meshgrid(ys, xs, indexing="ij")
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        img[r0:r1, c0:c1] += k * np.exp(-0.5 * ((u / a) ** 2 + (v / b) ** 2))
    return np.clip(img, 0.0, 1.0)


def checker_blobs(size: int = 128, square: int = 16, seed: int = 1) -> np.ndarray:
    """Checkerboard (lightly smoothed) overlaid with random blobs."""
    from scipy import ndimage

    yy, xx = np.mgrid[0:size, 0:size]
    board = ((yy // square + xx // square) % 2).astype(float) * 0.4 + 0.3
    board = ndimage.gaussian_filter(board, 1.0)
    blobs = blob_scene(size, size, seed=seed, n_blobs=size * size // 400) - 0.5
    return np.clip(board + blobs, 0.0, 1.0)


def panorama_scene(height: int, width: int, seed: int = 0) -> np.ndarray:
    """Wide color scene (blob texture per channel with shared structure)."""
    base = blob_scene(height, width, seed=seed)
    tint = [blob_scene(height, width, seed=seed * 31 + c + 1, n_blobs=width // 6) for c in range(3)]
    return np.clip(np.stack([0.7 * base + 0.3 * t for t in tint], axis=-1), 0.0, 1.0)

"""Regenerate campus.geojson, an OpenStreetMap-style export used by the parser tests.

Run from this directory: python make_campus.py
"""

import json

LAT0, LON0 = 36.7120, 3.1810
D = 0.0009  # roughly 100 m

features = []
way = 1000


def add_way(coords, **props):
    global way
    way += 1
    props.setdefault("highway", "service")
    features.append({"type": "Feature", "id": f"way/{way}",
                     "properties": {"@id": f"way/{way}", **props},
                     "geometry": {"type": "LineString", "coordinates": coords}})


def pt(i, j):
    return [round(LON0 + j * D, 7), round(LAT0 + i * D, 7)]


# 3 x 4 street grid with overhangs
for i in range(3):
    add_way([pt(i, j) for j in range(-1, 5)], highway="residential", name=f"Rue {i}")
for j in range(4):
    add_way([pt(i, j) for i in range(-1, 4)], highway="tertiary", name=f"Avenue {j}")

# tagged roundabout ring east of the grid, two spokes joining it to the grid
ring = [[round(LON0 + 6 * D + 0.0004 * c, 7), round(LAT0 + D + 0.0003 * s, 7)]
        for c, s in ((1, 0), (0.5, 0.87), (-0.5, 0.87), (-1, 0), (-0.5, -0.87), (0.5, -0.87))]
add_way(ring + ring[:1], highway="primary", junction="roundabout")
add_way([pt(1, 4), ring[3]], highway="primary")
add_way([ring[0], [round(ring[0][0] + D, 7), ring[0][1]]], highway="primary")

# a footpath split into a MultiLineString
features.append({"type": "Feature", "id": "relation/77",
                 "properties": {"@id": "relation/77", "highway": "footway"},
                 "geometry": {"type": "MultiLineString",
                              "coordinates": [[pt(-1, -1), [pt(-1, -1)[0] - 0.0003, pt(-1, -1)[1] - 0.0003]],
                                              [pt(3, 4), [pt(3, 4)[0] + 0.0003, pt(3, 4)[1] + 0.0003]]]}})

# buildings and points of interest (not roads)
for k in range(4):
    x, y = pt(0.5, k + 0.5)
    sq = [[x - 0.0002, y - 0.0002], [x + 0.0002, y - 0.0002], [x + 0.0002, y + 0.0002],
          [x - 0.0002, y + 0.0002], [x - 0.0002, y - 0.0002]]
    features.append({"type": "Feature", "id": f"way/{2000 + k}",
                     "properties": {"building": "university", "name": f"Faculty {k}"},
                     "geometry": {"type": "Polygon", "coordinates": [sq]}})
for k in range(3):
    features.append({"type": "Feature", "id": f"node/{3000 + k}",
                     "properties": {"amenity": "cafe"},
                     "geometry": {"type": "Point", "coordinates": pt(1.5, k + 0.5)}})
# a fence line (not a road)
features.append({"type": "Feature", "id": "way/4000", "properties": {"barrier": "fence"},
                 "geometry": {"type": "LineString", "coordinates": [pt(2.5, 0), pt(2.5, 1)]}})
# a degenerate way with one distinct point
features.append({"type": "Feature", "id": "way/4001", "properties": {"highway": "service"},
                 "geometry": {"type": "LineString", "coordinates": [pt(2.5, 2), pt(2.5, 2)]}})

with open("campus.geojson", "w", encoding="utf-8") as fh:
    json.dump({"type": "FeatureCollection", "generator": "osm-export-style fixture",
               "features": features}, fh, indent=1)

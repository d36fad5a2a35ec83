import csv
import io
import json
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from wayfinder import synthetic
from wayfinder.cli import main
from wayfinder.geomath import GeoCoordinate
from wayfinder.imageio import read_image, write_image, write_labels
from wayfinder.roadnet import load_network
from wayfinder.seqmatch import JunctionSequence

from geojson_schema import validate as validate_geojson
from oracles import brute_paths, starts_within

DATA = Path(__file__).parent / "data"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def files_in(path):
    return sorted(p.name for p in Path(path).iterdir())


# -- buildmap --------------------------------------------------------------------

@pytest.fixture
def plus_file(tmp_path):
    p = tmp_path / "plus.geojson"
    p.write_bytes(synthetic.features_to_geojson(synthetic.plus_sign()))
    return p


def test_buildmap_plus_sign(tmp_path, capsys, plus_file):
    code, out, err = run(capsys, "buildmap", "--roads", plus_file, "--out", tmp_path / "m.bin",
                         "--annotated", tmp_path / "a.geojson")
    assert code == 0
    hist = dict(csv.reader(io.StringIO(out)))
    assert hist["X"] == "1" and hist["Endpoint"] == "4"
    assert "X=1" in err
    validate_geojson(json.loads((tmp_path / "a.geojson").read_bytes()))
    assert len(load_network((tmp_path / "m.bin").read_bytes()).nodes) == 5


def test_buildmap_missing_file_is_usage_error(tmp_path, capsys):
    code, _, err = run(capsys, "buildmap", "--roads", tmp_path / "nope.geojson", "--out", tmp_path / "m.bin",
                       "--annotated", tmp_path / "a.geojson")
    assert code == 2 and "not found" in err
    assert files_in(tmp_path) == []


def test_buildmap_malformed_is_domain_error(tmp_path, capsys):
    bad = tmp_path / "bad.geojson"
    bad.write_text('{"type": "Feature"}')
    code, _, err = run(capsys, "buildmap", "--roads", bad, "--out", tmp_path / "m.bin",
                       "--annotated", tmp_path / "a.geojson")
    assert code == 1 and "MalformedDocument" in err
    assert files_in(tmp_path) == ["bad.geojson"]


def campus_node_count(doc):
    """Counting oracle: endpoints plus coordinates shared by two or more road vertices."""
    occ, ends = Counter(), set()
    for f in doc["features"]:
        props, g = f.get("properties") or {}, f["geometry"]
        if "highway" not in props:
            continue
        parts = ([g["coordinates"]] if g["type"] == "LineString"
                 else g["coordinates"] if g["type"] == "MultiLineString" else [])
        for part in parts:
            pts = []
            for q in map(tuple, part):
                if not pts or pts[-1] != q:
                    pts.append(q)
            if len(set(pts)) < 2:
                continue
            ends.update((pts[0], pts[-1]))
            occ.update(pts[:-1] if pts[0] == pts[-1] else pts)
    return len({q for q, c in occ.items() if c >= 2} | ends)


def test_buildmap_campus_count(tmp_path, capsys):
    src = DATA / "campus.geojson"
    code, out, err = run(capsys, "buildmap", "--roads", src, "--out", tmp_path / "m.bin",
                         "--annotated", tmp_path / "a.geojson")
    assert code == 0
    hist = {k: int(v) for k, v in list(csv.reader(io.StringIO(out)))[1:]}
    assert sum(hist.values()) == campus_node_count(json.loads(src.read_bytes()))


def test_buildmap_byte_stable_with_figure(tmp_path, capsys, plus_file):
    outs = []
    for run_id in range(2):
        d = tmp_path / f"r{run_id}"
        d.mkdir()
        assert run(capsys, "buildmap", "--roads", plus_file, "--out", d / "m.bin", "--annotated",
                   d / "a.geojson", "--figure", d / "map.png")[0] == 0
        outs.append([(d / n).read_bytes() for n in ("m.bin", "a.geojson", "map.png")])
    assert outs[0] == outs[1]
    assert outs[0][2][:8] == b"\x89PNG\r\n\x1a\n"


# -- matchseq --------------------------------------------------------------------

@pytest.fixture
def town_map(tmp_path, capsys):
    feats, tokens = synthetic.route_fixture()
    roads = tmp_path / "town.geojson"
    roads.write_bytes(synthetic.features_to_geojson(feats))
    assert run(capsys, "buildmap", "--roads", roads, "--out", tmp_path / "town.bin",
               "--annotated", tmp_path / "town.ann.geojson")[0] == 0
    return tmp_path / "town.bin", tokens


def test_matchseq_five_junction_route(tmp_path, capsys, town_map):
    map_path, tokens = town_map
    o = synthetic.ORIGIN
    code, out, err = run(capsys, "matchseq", "--map", map_path, "--lat", o.lat, "--lon", o.lon,
                         "--seq", ",".join(tokens), "--out", tmp_path / "path.geojson")
    assert code == 0
    doc = json.loads((tmp_path / "path.geojson").read_bytes())
    validate_geojson(doc)
    points = [f for f in doc["features"] if f["geometry"]["type"] == "Point"]
    assert len(points) == 5 and {f["properties"]["color"] for f in doc["features"]} == {"purple"}
    # brute-force oracle: the emitted path is a valid completion from the nearest start
    net = load_network(map_path.read_bytes())
    seq = JunctionSequence.parse(",".join(tokens))
    starts = starts_within(net, o, 500.0, seq.items[0])
    valid = brute_paths(net, seq.items, starts)
    nodes = tuple(f["properties"]["node_id"] for f in sorted(points, key=lambda f: f["properties"]["sequence_index"]))
    assert nodes in valid
    assert len(list(csv.reader(io.StringIO(out)))) == 2


@pytest.mark.parametrize("seq", ["", "T,Q", "T,,X"])
def test_matchseq_bad_sequence(tmp_path, capsys, town_map, seq):
    map_path, _ = town_map
    before = files_in(tmp_path)
    code, _, _ = run(capsys, "matchseq", "--map", map_path, "--lat", 36.7, "--lon", 3.18, "--seq", seq,
                     "--out", tmp_path / "path.geojson")
    assert code == 2 and files_in(tmp_path) == before


def test_matchseq_radius_too_small(tmp_path, capsys, town_map):
    map_path, tokens = town_map
    far = synthetic.offset(synthetic.ORIGIN, 0, 2000)
    code, _, err = run(capsys, "matchseq", "--map", map_path, "--lat", far.lat, "--lon", far.lon,
                       "--seq", "T,Y", "--radius", 10, "--out", tmp_path / "p.geojson")
    assert code == 1 and "NoCandidates" in err
    assert not (tmp_path / "p.geojson").exists()


def test_matchseq_no_path(tmp_path, capsys, town_map):
    map_path, _ = town_map
    o = synthetic.ORIGIN
    code, _, err = run(capsys, "matchseq", "--map", map_path, "--lat", o.lat, "--lon", o.lon,
                       "--seq", "T,T,T,T", "--out", tmp_path / "p.geojson")
    assert code == 1 and "no path" in err


def test_matchseq_bad_latitude(tmp_path, capsys, town_map):
    map_path, _ = town_map
    assert run(capsys, "matchseq", "--map", map_path, "--lat", 95, "--lon", 3, "--seq", "T",
               "--out", tmp_path / "p.geojson")[0] == 2


# -- placedb ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def place_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("places")
    (root / "refs").mkdir()
    (root / "queries").mkdir()
    rows = ["place_id,name,lat,lon,image_glob"]
    for i in range(3):
        pano = synthetic.panorama_scene(96, 240, seed=70 + i)
        write_image(root / "refs" / f"p{i}_a.ppm", pano[:, :140])
        write_image(root / "refs" / f"p{i}_b.ppm", pano[:, 100:])
        rows.append(f"p{i},Place {i},36.7{i},3.0{5 + i},p{i}_*.ppm")
    (root / "places.csv").write_text("\n".join(rows) + "\n")
    pano = synthetic.panorama_scene(96, 240, seed=71)
    write_image(root / "queries" / "q1.ppm", pano[10:86, 30:150])
    write_image(root / "queries" / "q2.ppm", pano[:, 120:230])
    return root


def test_placedb_build_and_match(tmp_path, capsys, place_files):
    db = tmp_path / "db.wfdb"
    code, out, _ = run(capsys, "placedb", "build", "--images", place_files / "refs",
                       "--places", place_files / "places.csv", "--out", db)
    assert code == 0 and db.read_bytes()[:4] == b"WFDB"
    code, out, err = run(capsys, "placedb", "match", "--db", db, "--images", place_files / "queries",
                         "--out", tmp_path / "m.geojson", "--votes", tmp_path / "votes.csv",
                         "--figure", tmp_path / "votes.png")
    assert code == 0
    (feat,) = json.loads((tmp_path / "m.geojson").read_bytes())["features"]
    assert feat["properties"]["place_id"] == "p1" and feat["properties"]["color"] == "green"
    assert feat["geometry"]["coordinates"] == [3.06, 36.71]
    assert (tmp_path / "votes.csv").read_text() == out
    assert out.splitlines()[-1].startswith("votes,p1,")


def test_placedb_corrupted_archive(tmp_path, capsys, place_files):
    bad = tmp_path / "bad.wfdb"
    bad.write_bytes(b"XXXX\x01\x00")
    code, _, err = run(capsys, "placedb", "match", "--db", bad, "--images", place_files / "queries",
                       "--out", tmp_path / "m.geojson")
    assert code == 1 and "BadMagic" in err
    assert not (tmp_path / "m.geojson").exists()


def test_placedb_all_filtered(tmp_path, capsys, place_files):
    db = tmp_path / "db.wfdb"
    assert run(capsys, "placedb", "build", "--images", place_files / "refs",
               "--places", place_files / "places.csv", "--out", db)[0] == 0
    masks = tmp_path / "masks"
    masks.mkdir()
    for q in ("q1", "q2"):
        labels = np.zeros((8, 10), np.uint8)
        labels[:4] = 7  # exactly 40% road
        write_labels(masks / f"{q}.pgm", labels)
    legend = tmp_path / "legend.json"
    legend.write_text(json.dumps({"classes": {"0": "building", "7": "road", "11": "pavement"}}))
    code, _, err = run(capsys, "placedb", "match", "--db", db, "--images", place_files / "queries",
                       "--out", tmp_path / "m.geojson", "--masks", masks, "--legend", legend)
    assert code == 1 and "road" in err
    assert not (tmp_path / "m.geojson").exists()


def test_placedb_masks_need_legend(tmp_path, capsys, place_files):
    assert run(capsys, "placedb", "match", "--db", tmp_path / "x", "--images", place_files / "queries",
               "--out", tmp_path / "m.geojson", "--masks", tmp_path)[0] == 2


# -- stitch ----------------------------------------------------------------------

@pytest.fixture
def frames(tmp_path):
    d = tmp_path / "frames"
    d.mkdir()
    scene = synthetic.panorama_scene(120, 300, seed=3)
    write_image(d / "f01.ppm", scene[:, :180])
    write_image(d / "f02.ppm", scene[:, 90:270])
    return d


def test_stitch_reassembles_and_is_byte_stable(tmp_path, capsys, frames):
    a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
    code, out, err = run(capsys, "stitch", "--frames", frames, "--out", a, "--seed", 5)
    assert code == 0
    assert run(capsys, "stitch", "--frames", frames, "--out", b, "--seed", 5)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    pano = read_image(a)
    assert abs(pano.shape[1] - 270) <= 2
    assert out.startswith("pair,overlap\n0-1,0.500")


def test_stitch_seed_from_environment(tmp_path, capsys, frames, monkeypatch):
    monkeypatch.setenv("WAYFINDER_SEED", "7")
    code, _, err = run(capsys, "stitch", "--frames", frames, "--out", tmp_path / "p.ppm")
    assert code == 0 and "seed 7" in err
    monkeypatch.setenv("WAYFINDER_SEED", "seven")
    assert run(capsys, "stitch", "--frames", frames, "--out", tmp_path / "q.ppm")[0] == 2
    assert not (tmp_path / "q.ppm").exists()


def test_stitch_one_frame(tmp_path, capsys, frames):
    (frames / "f02.ppm").unlink()
    assert run(capsys, "stitch", "--frames", frames, "--out", tmp_path / "p.ppm")[0] == 2
    assert not (tmp_path / "p.ppm").exists()


def test_stitch_no_consensus_reports_pair(tmp_path, capsys, frames):
    write_image(frames / "f03.ppm", synthetic.panorama_scene(120, 150, seed=99))
    code, _, err = run(capsys, "stitch", "--frames", frames, "--out", tmp_path / "p.ppm")
    assert code == 1 and "frames 1 and 2" in err


# -- eval ------------------------------------------------------------------------

def write_preds(path, pairs):
    path.write_text("image,true,predicted\n" + "".join(f"img{i},{t},{p}\n" for i, (t, p) in enumerate(pairs)))


def test_eval_roundabout_row(tmp_path, capsys):
    pairs = [("roundabout", "roundabout")] * 2 + [("roundabout", "Y")] + [("T", "T")] * 11 \
        + [("X", "X")] * 10 + [("Y", "Y")] * 19
    write_preds(tmp_path / "p.csv", pairs)
    code, out, _ = run(capsys, "eval", "--predictions", tmp_path / "p.csv", "--out", tmp_path / "r.json",
                       "--classes", "roundabout,T,X,Y", "--figure", tmp_path / "cm.png")
    assert code == 0
    rows = {line.split()[0]: line.split()[1:] for line in out.splitlines()[1:]}
    assert rows["roundabout"][:3] == ["1.00", "0.67", "0.80"]
    assert rows["Y"][:3] == ["0.95", "1.00", "0.97"]
    rec = json.loads((tmp_path / "r.json").read_text())
    assert rec["classes"] == ["roundabout", "T", "X", "Y"]
    assert (tmp_path / "cm.png").exists()


def test_eval_all_correct(tmp_path, capsys):
    write_preds(tmp_path / "p.csv", [("a", "a"), ("b", "b")])
    code, out, _ = run(capsys, "eval", "--predictions", tmp_path / "p.csv", "--out", tmp_path / "r.json")
    assert code == 0
    assert all(line.split()[1:4] == ["1.00", "1.00", "1.00"] for line in out.splitlines()[1:3])


def test_eval_empty_and_unknown(tmp_path, capsys):
    (tmp_path / "e.csv").write_text("")
    assert run(capsys, "eval", "--predictions", tmp_path / "e.csv", "--out", tmp_path / "r.json")[0] == 1
    write_preds(tmp_path / "p.csv", [("a", "zebra")])
    code, _, err = run(capsys, "eval", "--predictions", tmp_path / "p.csv", "--out", tmp_path / "r.json",
                       "--classes", "a,b")
    assert code == 1 and "UnknownLabel" in err
    assert not (tmp_path / "r.json").exists()


def test_unknown_command_and_help(capsys):
    assert main(["frobnicate"]) == 2
    assert main(["--help"]) == 0
    assert main([]) == 2

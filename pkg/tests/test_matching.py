import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wayfinder import synthetic
from wayfinder.errors import (AllAbstained, ArchiveError, BadMagic, EmptyDatabase, EmptyInput,
                              InsufficientEntries, TruncatedArchive, VersionMismatch)
from wayfinder.geomath import GeoCoordinate
from wayfinder.matching import (DescriptorIndex, ImageResult, PlaceDatabase, PlaceRecord, build_index,
                                build_place_record, good_matches, knn2, load_archive, match_image_to_place,
                                ratio_accepts, recognize_place, save_archive, vote_places)


def unit_rows(rng, n, d=128):
    x = rng.random((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def brute_knn(data, q, k):
    d = np.linalg.norm(data - q, axis=1)
    order = np.lexsort((np.arange(len(d)), d))[:k]
    return d[order], order


def place(pid, descs, lat=36.7, lon=3.1, name=None):
    descs = np.asarray(descs, dtype=np.float32)
    kps = np.arange(len(descs) * 4, dtype=np.float32).reshape(-1, 4)
    return PlaceRecord(pid, name or f"Place {pid}", GeoCoordinate(lat, lon), kps, descs)


# -- index -------------------------------------------------------------------------

def test_empty_index_rejected():
    with pytest.raises(EmptyInput):
        build_index(np.zeros((0, 128)))


@pytest.mark.parametrize("mode", ["exact", "approx"])
def test_single_descriptor_is_always_nearest(mode):
    rng = np.random.default_rng(1)
    idx = build_index(unit_rows(rng, 1), mode=mode)
    d, ids = idx.knn(unit_rows(rng, 5), 1)
    assert (ids == 0).all()


def test_exact_mode_equals_brute_force():
    rng = np.random.default_rng(2)
    data = unit_rows(rng, 500)
    # include duplicates so tie-breaking by id is exercised
    data[10] = data[3]
    idx = build_index(data)
    queries = np.vstack([unit_rows(rng, 50), data[[3, 7, 499]]])
    d, ids = idx.knn(queries, 5)
    for q, drow, irow in zip(queries, d, ids):
        bd, bi = brute_knn(data, q, 5)
        assert np.array_equal(irow, bi)
        assert np.allclose(drow, bd, rtol=0, atol=1e-12)


def test_approx_recall_against_exact():
    rng = np.random.default_rng(3)
    data = unit_rows(rng, 10_000)
    exact, approx = build_index(data), build_index(data, mode="approx")
    pick = rng.integers(0, len(data), 400)
    # perturbed copies of stored descriptors (a true near neighbor exists)
    queries = data[pick] + rng.normal(0, 0.02, (400, 128))
    _, ie = exact.knn(queries, 1)
    _, ia = approx.knn(queries, 1)
    assert (ie[:, 0] == ia[:, 0]).mean() >= 0.95


def test_approx_returns_true_distances():
    rng = np.random.default_rng(4)
    data = unit_rows(rng, 300)
    idx = build_index(data, mode="approx", seed=5)
    q = unit_rows(rng, 3)
    d, ids = idx.knn(q, 2)
    for qq, dd, ii in zip(q, d, ids):
        assert np.allclose(dd, np.linalg.norm(data[ii] - qq, axis=1))
        assert dd[0] <= dd[1]


def test_knn2_basics():
    a, b = np.zeros(128), np.zeros(128)
    b[0] = 1.0
    idx = build_index([a, b])
    q = np.zeros(128)
    q[0] = 0.25
    assert knn2(idx, q) == (0.25, 0.75, 0)
    assert knn2(idx, b)[0] == 0.0
    with pytest.raises(InsufficientEntries):
        knn2(build_index([a]), q)


def test_knn2_matches_sorted_brute_force():
    rng = np.random.default_rng(6)
    data = unit_rows(rng, 64)
    idx = build_index(data)
    for q in unit_rows(rng, 20):
        d = np.sort(np.linalg.norm(data - q, axis=1))
        d1, d2, i1 = knn2(idx, q)
        assert (d1, d2) == pytest.approx((d[0], d[1]), abs=1e-12)
        assert np.linalg.norm(data[i1] - q) == pytest.approx(d[0], abs=1e-12)


# -- ratio test -------------------------------------------------------------------

def two_point_index(d1, d2):
    """Index whose two entries sit at distances d1 and d2 from the zero query."""
    a, b = np.zeros(128), np.zeros(128)
    a[0], b[1] = d1, d2
    return build_index([a, b]), np.zeros(128)


@pytest.mark.parametrize("d1,d2,ok", [(0.5, 1.0, True), (0.75, 1.0, False), (1.0, 1.0, False)])
def test_ratio_boundaries(d1, d2, ok):
    idx, q = two_point_index(d1, d2)
    assert good_matches([q], idx).count == int(ok)
    assert bool(ratio_accepts(d1, d2)) is ok


# distances are realized geometrically, so keep clear of squares that underflow
DIST = st.one_of(st.just(0.0), st.floats(1e-100, 10))


@settings(max_examples=200, deadline=None)
@given(DIST, DIST)
def test_ratio_property(d1, d2):
    lo, hi = sorted((d1, d2))
    idx, q = two_point_index(lo, hi)
    expected = lo < 0.75 * hi
    assert good_matches([q], idx).count == int(expected)


def test_ratio_monotone_in_threshold():
    rng = np.random.default_rng(7)
    idx = build_index(unit_rows(rng, 200))
    q = unit_rows(rng, 300)
    counts = [good_matches(q, idx, r).count for r in (0.5, 0.75, 0.9)]
    assert counts == sorted(counts)


def test_good_match_list_contents():
    rng = np.random.default_rng(8)
    data = unit_rows(rng, 50)
    idx = build_index(data)
    res = good_matches(data[[4, 9]], idx)
    assert res.count == 2
    assert [(m[0], m[1], m[2]) for m in res.matches] == [(0, 4, 0.0), (1, 9, 0.0)]
    assert good_matches(np.zeros((0, 128)), idx).count == 0


# -- places and voting -----------------------------------------------------------

@pytest.fixture
def planted():
    rng = np.random.default_rng(9)
    recs = [place(pid, unit_rows(rng, 120), lat=36.7 + i / 100) for i, pid in enumerate("ABC")]
    return PlaceDatabase(recs), rng


def test_planted_match_argmax(planted):
    db, rng = planted
    for rec in db.records:
        q = rec.descriptors[:40] + rng.normal(0, 0.005, (40, 128))
        counts = match_image_to_place(q, db)
        assert ImageResult(counts).best == rec.place_id
        assert counts[rec.place_id] >= 35


def test_empty_query_and_empty_db(planted):
    db, _ = planted
    assert match_image_to_place(np.zeros((0, 128)), db) == {"A": 0, "B": 0, "C": 0}
    with pytest.raises(EmptyDatabase):
        match_image_to_place(np.zeros((1, 128)), PlaceDatabase([]))


def test_counts_equivariant_under_place_order(planted):
    db, rng = planted
    q = db.records[1].descriptors[:30] + rng.normal(0, 0.01, (30, 128))
    shuffled = PlaceDatabase(db.records[::-1])
    assert match_image_to_place(q, db) == match_image_to_place(q, shuffled)


def test_duplicate_place_ids_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        PlaceDatabase([place("A", unit_rows(rng, 2)), place("A", unit_rows(rng, 2))])


def test_record_length_invariant():
    with pytest.raises(ValueError):
        PlaceRecord("A", "a", GeoCoordinate(0, 0), np.zeros((2, 4)), np.zeros((3, 128)))


def votes(*bests, places="AB"):
    return [{p: (5 if p == b else 1 if b else 0) for p in places} for b in bests]


def test_majority_wins():
    r = vote_places(votes("A", "A", "B", "A"))
    assert r.winner == "A" and r.tally == {"A": 3, "B": 1} and not r.tie


def test_single_image_argmax():
    assert vote_places([{"A": 2, "B": 7}]).winner == "B"


def test_tie_goes_to_smallest_id():
    r = vote_places(votes("B", "A"))
    assert r.winner == "A" and r.tie


def test_abstention():
    r = vote_places(votes("B", None, None))
    assert r.winner == "B" and r.abstained == [1, 2]
    with pytest.raises(AllAbstained):
        vote_places(votes(None, None))


def test_weighted_tally():
    r = vote_places([{"A": 9, "B": 0}, {"A": 0, "B": 2}, {"A": 0, "B": 3}], weighted=True)
    assert r.tally == {"A": 9, "B": 5} and r.winner == "A"
    assert vote_places([{"A": 9, "B": 0}, {"A": 0, "B": 2}, {"A": 0, "B": 3}]).winner == "B"


@settings(max_examples=100, deadline=None)
@given(st.lists(st.dictionaries(st.sampled_from("ABCD"), st.integers(0, 20), min_size=1), min_size=1, max_size=8),
       st.integers(1, 50))
def test_winner_invariant_under_count_scaling(results, k):
    if all(max(r.values()) == 0 for r in results):
        return
    a = vote_places(results)
    b = vote_places([{p: c * k for p, c in r.items()} for r in results])
    assert (a.winner, a.tie, a.tally) == (b.winner, b.tie, b.tally)


def test_recognize_place_end_to_end():
    places = []
    for i in range(3):
        pano = synthetic.blob_scene(96, 256, seed=50 + i)
        places.append(build_place_record(f"p{i}", f"Square {i}", GeoCoordinate(36.70 + i * 0.01, 3.05 + i * 0.01),
                                         [pano]))
    db = PlaceDatabase(places)
    pano = synthetic.blob_scene(96, 256, seed=51)
    crops = [pano[8:88, 20:140], pano[:, 100:220]]
    report, marker = recognize_place(crops, db)
    assert report.winner == "p1"
    doc = json.loads(marker)
    (feat,) = doc["features"]
    assert feat["geometry"]["coordinates"] == [db.place("p1").location.lon, db.place("p1").location.lat]
    assert feat["properties"] == {"color": "green", "name": "Square 1", "place_id": "p1", "votes": 2}
    again, marker2 = recognize_place(crops, db)
    assert marker2 == marker and again.to_dict() == report.to_dict()


# -- archive ---------------------------------------------------------------------

@pytest.fixture
def small_db():
    rng = np.random.default_rng(11)
    descs = unit_rows(rng, 7)
    descs[0, :] = 0
    descs[0, 0] = 255 / 512  # largest value representable after quantization
    return PlaceDatabase([place("north-gate", descs, 36.71, 3.17, "Porte Nord"),
                          place("souk", unit_rows(rng, 3), -12.5, -77.25, "Souk é")])


def test_float_round_trip_lossless(small_db):
    assert load_archive(save_archive(small_db)) == small_db


def test_quantized_round_trip(small_db):
    back = load_archive(save_archive(small_db, quantized=True))
    for a, b in zip(small_db.records, back.records):
        assert np.abs(a.descriptors - b.descriptors).max() <= 1 / 512
        assert np.array_equal(a.keypoints, b.keypoints) and a.location == b.location


def test_archive_layout_is_little_endian(small_db):
    data = save_archive(small_db)
    assert data[:6] == b"WFDB\x01\x00"
    assert data[6:10] == (2).to_bytes(4, "little")
    assert data[10:12] == len("north-gate").to_bytes(2, "little")


def test_archive_error_paths(small_db):
    data = save_archive(small_db)
    for cut in (3, 5, 11, len(data) // 2, len(data) - 1):
        with pytest.raises(TruncatedArchive):
            load_archive(data[:cut])
    with pytest.raises(BadMagic):
        load_archive(b"NOPE" + data[4:])
    with pytest.raises(VersionMismatch):
        load_archive(data[:4] + b"\x02\x00" + data[6:])
    with pytest.raises(ArchiveError):
        load_archive(data + b"\x00")

"""``wayfinder`` command-line interface.

Exit codes: 0 success, 1 domain failure, 2 usage error. Summaries go to
standard error, delimited tables to standard output, artifacts to the paths
given. Nothing is written when the command line itself is at fault, and
artifacts are only written once the whole command has succeeded.

Coordinates are given as ``--lat``/``--lon`` flags; GeoJSON files keep the
RFC 7946 ``[lon, lat]`` order.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .errors import WayfinderError
from .imageio import ImageFormatError

log = logging.getLogger("wayfinder")

SEED_ENV = "WAYFINDER_SEED"
IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm")


class UsageError(Exception):
    pass


# -- helpers ---------------------------------------------------------------------

def _existing_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _existing_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} directory not found: {path}")
    return p


def _output(path: str | None) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.parent.is_dir():
        raise UsageError(f"output directory does not exist: {p.parent}")
    if p.is_dir():
        raise UsageError(f"output path is a directory: {p}")
    return p


def _write_all(artifacts: dict) -> None:
    """Write every artifact via a temporary file and an atomic rename."""
    for path, data in artifacts.items():
        if path is None:
            continue
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise


def _figure_bytes(fig, path: Path) -> bytes:
    from .plotting import save_figure

    buf = tempfile.NamedTemporaryFile(suffix=path.suffix or ".png", delete=False)
    buf.close()
    try:
        save_figure(fig, buf.name)
        return Path(buf.name).read_bytes()
    finally:
        Path(buf.name).unlink(missing_ok=True)


def _csv(rows) -> str:
    out = io.StringIO()
    csv.writer(out, lineterminator="\n").writerows(rows)
    return out.getvalue()


def _image_files(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file())


def _seed(value) -> int:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        from .stitcher import DEFAULT_SEED

        return DEFAULT_SEED
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _check_lat_lon(lat: float, lon: float) -> None:
    if not -90.0 <= lat <= 90.0:
        raise UsageError(f"--lat must lie in [-90, 90], got {lat}")
    if not -180.0 <= lon <= 180.0:
        raise UsageError(f"--lon must lie in [-180, 180], got {lon}")


# -- buildmap --------------------------------------------------------------------

def cmd_buildmap(args) -> int:
    from .roadnet import (build_graph, detect_roundabouts, export_annotated_geojson, read_roads,
                          save_network, validate_graph)

    roads = _existing_file(args.roads, "road file")
    out, annotated, figure = _output(args.out), _output(args.annotated), _output(args.figure)
    if args.snap_tol < 0 or args.roundabout_perimeter <= 0:
        raise UsageError("--snap-tol must be >= 0 and --roundabout-perimeter > 0")

    parsed = read_roads(roads.read_bytes())
    net = build_graph(parsed.features, snap_tolerance=args.snap_tol)
    net = detect_roundabouts(net, max_perimeter=args.roundabout_perimeter)
    problems = validate_graph(net)
    if not problems.ok:
        log.warning("graph validation found %d problem(s)", len(problems))

    hist = net.type_histogram()
    artifacts = {out: save_network(net), annotated: export_annotated_geojson(net)}
    if figure:
        from .plotting import plot_network

        artifacts[figure] = _figure_bytes(plot_network(net), figure)
    _write_all(artifacts)
    sys.stdout.write(_csv([("junction_type", "count")] + sorted(hist.items())))
    print(f"{len(parsed.features)} road line(s), {parsed.skipped_non_road} non-road feature(s) skipped, "
          f"{len(parsed.invalid)} invalid; {len(net.nodes)} nodes, {len(net.edges)} edges; "
          + ", ".join(f"{k}={v}" for k, v in sorted(hist.items())), file=sys.stderr)
    return 0


# -- matchseq --------------------------------------------------------------------

def cmd_matchseq(args) -> int:
    from .geomath import GeoCoordinate
    from .roadnet import load_network
    from .seqmatch import JunctionSequence, MatchConfig, export_path_geojson, match_sequence

    map_path = _existing_file(args.map, "map file")
    out, figure = _output(args.out), _output(args.figure)
    try:
        seq = JunctionSequence.parse(args.seq)
    except ValueError as exc:
        raise UsageError(f"--seq: {exc}") from None
    _check_lat_lon(args.lat, args.lon)
    if args.radius <= 0:
        raise UsageError("--radius must be positive")
    if args.max_results < 0:
        raise UsageError("--max-results must be >= 0 (0 = unlimited)")
    cfg = MatchConfig(GeoCoordinate(args.lat, args.lon), radius=args.radius,
                      max_results=args.max_results or None)

    net = load_network(map_path.read_bytes())
    found = match_sequence(net, seq, cfg)
    if not found:
        print(f"no path realizes {seq} from the start candidates within {args.radius:g} m", file=sys.stderr)
        return 1
    best = found[0]
    artifacts = {out: export_path_geojson(net, best)}
    if figure:
        from .plotting import plot_path

        artifacts[figure] = _figure_bytes(plot_path(net, best, title=f"sequence {seq}"), figure)
    _write_all(artifacts)
    rows = [("rank", "nodes", "total_length_m", "start_distance_m")]
    rows += [(i, " ".join(map(str, c.nodes)), f"{c.total_length:.3f}", f"{c.start_distance:.3f}")
             for i, c in enumerate(found)]
    sys.stdout.write(_csv(rows))
    print(f"{len(found)} path(s) for {seq}; best starts {best.start_distance:.1f} m away, "
          f"length {best.total_length:.1f} m", file=sys.stderr)
    return 0


# -- placedb ---------------------------------------------------------------------

def _read_places(path: Path):
    rows = [r for r in csv.reader(io.StringIO(path.read_text(encoding="utf-8"))) if r and any(c.strip() for c in r)]
    if rows and rows[0] and rows[0][0].strip().lower() == "place_id":
        rows = rows[1:]
    places = []
    for n, r in enumerate(rows, 1):
        if len(r) != 5:
            raise UsageError(f"{path}: row {n} needs place_id,name,lat,lon,image_glob")
        pid, name, lat, lon, pattern = (c.strip() for c in r)
        try:
            lat_f, lon_f = float(lat), float(lon)
        except ValueError:
            raise UsageError(f"{path}: row {n} has a non-numeric coordinate") from None
        _check_lat_lon(lat_f, lon_f)
        places.append((pid, name, lat_f, lon_f, pattern))
    if not places:
        raise UsageError(f"{path}: no places listed")
    return places


def cmd_placedb_build(args) -> int:
    from .geomath import GeoCoordinate
    from .imageio import read_image
    from .matching import PlaceDatabase, build_place_record, save_archive

    images = _existing_dir(args.images, "images")
    places = _read_places(_existing_file(args.places, "places file"))
    out = _output(args.out)
    ids = [p[0] for p in places]
    if len(set(ids)) != len(ids):
        raise UsageError("places file repeats a place_id")
    resolved = []
    for pid, name, lat, lon, pattern in places:
        files = sorted(p for p in images.glob(pattern) if p.is_file())
        if not files:
            raise UsageError(f"place {pid}: no image matches {pattern!r} in {images}")
        resolved.append((pid, name, lat, lon, files))

    records = []
    for pid, name, lat, lon, files in resolved:
        records.append(build_place_record(pid, name, GeoCoordinate(lat, lon), [read_image(f) for f in files]))
    db = PlaceDatabase(records)
    _write_all({out: save_archive(db, quantized=args.quantize)})
    sys.stdout.write(_csv([("place_id", "images", "descriptors")]
                          + [(r.place_id, len(f[4]), len(r.descriptors)) for r, f in zip(records, resolved)]))
    print(f"{len(db)} place(s), {sum(len(r.descriptors) for r in records)} descriptors", file=sys.stderr)
    return 0


def cmd_placedb_match(args) -> int:
    from .imageio import read_image
    from .matching import ImageResult, load_archive, marker_geojson, match_image_to_place, vote_places
    from .features import extract_arrays
    from .segfilter import filter_images, load_mask, read_legend

    db_path = _existing_file(args.db, "database")
    images = _existing_dir(args.images, "images")
    out, votes_out, figure = _output(args.out), _output(args.votes), _output(args.figure)
    if (args.masks is None) != (args.legend is None):
        raise UsageError("--masks and --legend must be given together")
    masks_dir = _existing_dir(args.masks, "masks") if args.masks else None
    legend_path = _existing_file(args.legend, "legend") if args.legend else None
    files = _image_files(images)
    if not files:
        raise UsageError(f"no .ppm/.pgm images in {images}")
    if masks_dir is not None:
        missing = [f.name for f in files if not (masks_dir / (f.stem + ".pgm")).is_file()]
        if missing:
            raise UsageError(f"no mask for image(s): {', '.join(missing)}")

    db = load_archive(db_path.read_bytes())
    query = files
    if masks_dir is not None:
        legend = read_legend(legend_path)
        pairs = [(f.name, load_mask(masks_dir / (f.stem + ".pgm"), legend)) for f in files]
        result = filter_images(pairs, args.threshold)
        for name in result.rejected:
            log.info("filtered out %s (%.0f%% road)", name, 100 * result.fractions[name])
        query = [f for f in files if f.name in set(result.retained)]
        if not query:
            print(f"all {len(files)} image(s) have at least {args.threshold:.0%} road and pavement", file=sys.stderr)
            return 1
    results = [ImageResult(match_image_to_place(extract_arrays(read_image(f))[1], db)) for f in query]
    report = vote_places(results, weighted=args.weighted, db=db)

    places = sorted(report.tally)
    table = [("image", "best") + tuple(places)]
    table += [(f.name, r.best or "") + tuple(r.counts.get(p, 0) for p in places) for f, r in zip(query, results)]
    table.append(("votes", report.winner) + tuple(report.tally[p] for p in places))
    table_text = _csv(table)
    artifacts = {out: marker_geojson(report), votes_out: table_text.encode("utf-8")}
    if figure:
        from .plotting import plot_votes

        artifacts[figure] = _figure_bytes(plot_votes(report), figure)
    _write_all(artifacts)
    sys.stdout.write(table_text)
    loc = report.winner_location
    print(f"winner {report.winner} ({report.winner_name}) at {loc.lat:.6f}, {loc.lon:.6f} with "
          f"{report.tally[report.winner]} vote(s)" + (" [tie]" if report.tie else "")
          + (f"; {len(report.abstained)} image(s) abstained" if report.abstained else ""), file=sys.stderr)
    return 0


# -- stitch ----------------------------------------------------------------------

def cmd_stitch(args) -> int:
    from .imageio import encode_pnm, read_image
    from .stitcher import StitchConfig, stitch_sequence

    frames_dir = _existing_dir(args.frames, "frames")
    out, figure = _output(args.out), _output(args.figure)
    files = _image_files(frames_dir)
    if len(files) < 2:
        raise UsageError(f"need at least 2 frames in {frames_dir}, found {len(files)}")
    cfg = StitchConfig(seed=_seed(args.seed), crop=not args.no_crop)

    frames = [read_image(f) for f in files]
    pano = stitch_sequence(frames, cfg)
    artifacts = {out: encode_pnm(pano.image)}
    if figure:
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(8, 8 * pano.image.shape[0] / pano.image.shape[1] + 0.5))
        ax.imshow(pano.image, cmap="gray" if pano.image.ndim == 2 else None, vmin=0, vmax=1)
        ax.set_axis_off()
        artifacts[figure] = _figure_bytes(fig, figure)
    _write_all(artifacts)
    sys.stdout.write(_csv([("pair", "overlap")] + [(f"{i}-{i + 1}", f"{o:.3f}") for i, o in enumerate(pano.overlaps)]))
    h, w = pano.image.shape[:2]
    print(f"stitched {len(frames)} frames into {w}x{h} (seed {cfg.seed})", file=sys.stderr)
    return 0


# -- eval ------------------------------------------------------------------------

def cmd_eval(args) -> int:
    from .clseval import compute_metrics, confusion_from_rows, metrics_json, read_predictions, report

    preds = _existing_file(args.predictions, "predictions file")
    out, figure = _output(args.out), _output(args.figure)
    classes = [c.strip() for c in args.classes.split(",")] if args.classes else None
    if classes is not None and (not all(classes) or len(set(classes)) != len(classes)):
        raise UsageError("--classes must list distinct, non-empty names")

    rows = read_predictions(preds.read_text(encoding="utf-8"))
    cm = confusion_from_rows(rows, classes)
    metrics = compute_metrics(cm)
    text, _ = report(metrics)
    artifacts = {out: metrics_json(metrics).encode("utf-8")}
    if figure:
        from .plotting import plot_confusion

        artifacts[figure] = _figure_bytes(plot_confusion(cm), figure)
    _write_all(artifacts)
    sys.stdout.write(text)
    print(f"{cm.total} prediction(s) over {len(cm.classes)} class(es); accuracy {metrics.accuracy:.4f}"
          + (f"; undefined ratios set to 0: {', '.join(metrics.zero_division)}" if metrics.zero_division else ""),
          file=sys.stderr)
    return 0


# -- parser ----------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wayfinder", description="Offline visual and road-network geo-localization.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("buildmap", help="build an intersection graph from GeoJSON roads")
    b.add_argument("--roads", required=True)
    b.add_argument("--out", required=True, help="binary map file")
    b.add_argument("--annotated", required=True, help="annotated GeoJSON output")
    b.add_argument("--snap-tol", type=float, default=0.5, help="meters (default 0.5)")
    b.add_argument("--roundabout-perimeter", type=float, default=120.0, help="meters (default 120)")
    b.add_argument("--figure", help="optional map figure (.png/.svg/.pdf)")
    b.set_defaults(func=cmd_buildmap)

    m = sub.add_parser("matchseq", help="locate a junction-type sequence on a built map")
    m.add_argument("--map", required=True)
    m.add_argument("--lat", type=float, required=True)
    m.add_argument("--lon", type=float, required=True)
    m.add_argument("--seq", required=True, help='comma-separated tokens T,X,Y,R,C, e.g. "T,X,Y"')
    m.add_argument("--radius", type=float, default=500.0, help="start search radius in meters")
    m.add_argument("--max-results", type=int, default=1, help="paths to list (0 = all)")
    m.add_argument("--out", required=True, help="path GeoJSON")
    m.add_argument("--figure")
    m.set_defaults(func=cmd_matchseq)

    pdb = sub.add_parser("placedb", help="build or query the place database")
    psub = pdb.add_subparsers(dest="action", required=True, parser_class=_Parser)
    pb = psub.add_parser("build")
    pb.add_argument("--images", required=True)
    pb.add_argument("--places", required=True, help="CSV: place_id,name,lat,lon,image_glob")
    pb.add_argument("--out", required=True)
    pb.add_argument("--quantize", action="store_true", help="store descriptors as 8-bit")
    pb.set_defaults(func=cmd_placedb_build)
    pm = psub.add_parser("match")
    pm.add_argument("--db", required=True)
    pm.add_argument("--images", required=True)
    pm.add_argument("--out", required=True, help="green-marker GeoJSON")
    pm.add_argument("--masks")
    pm.add_argument("--legend")
    pm.add_argument("--threshold", type=float, default=0.40, help="road+pavement cut-off (default 0.40)")
    pm.add_argument("--weighted", action="store_true", help="weight votes by good-match count")
    pm.add_argument("--votes", help="also write the vote table to this CSV")
    pm.add_argument("--figure")
    pm.set_defaults(func=cmd_placedb_match)

    s = sub.add_parser("stitch", help="stitch frames (lexicographic order) into a panorama")
    s.add_argument("--frames", required=True)
    s.add_argument("--out", required=True, help="panorama .ppm/.pgm")
    s.add_argument("--seed", type=int, help=f"RANSAC seed (default ${SEED_ENV} or 42)")
    s.add_argument("--no-crop", action="store_true")
    s.add_argument("--figure")
    s.set_defaults(func=cmd_stitch)

    e = sub.add_parser("eval", help="confusion-matrix metrics from a predictions CSV")
    e.add_argument("--predictions", required=True, help="CSV: image,true,predicted")
    e.add_argument("--out", required=True, help="JSON metrics record")
    e.add_argument("--classes", help="comma-separated class order; other labels are errors")
    e.add_argument("--figure")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"wayfinder: usage error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    if getattr(args, "threshold", None) is not None and not 0 < args.threshold <= 1:
        print("wayfinder: usage error: --threshold must lie in (0, 1]", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"wayfinder: usage error: {exc}", file=sys.stderr)
        return 2
    except (WayfinderError, ImageFormatError) as exc:
        print(f"wayfinder: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except (ValueError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        print(f"wayfinder: invalid input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

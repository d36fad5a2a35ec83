"""Panorama construction from overlapping frames.

Frames are matched pairwise with SIFT and the ratio test, related by RANSAC
homographies, composed into the middle frame's reference, warped onto a
shared canvas with feathered blending and finally cropped to the largest
rectangle free of warp voids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateConfiguration, FullyBlack, NoConsensus
from .features import SiftConfig, extract_arrays
from .matching import RATIO, DescriptorIndex

log = logging.getLogger(__name__)

DEFAULT_SEED = 42
LOW_OVERLAP = 0.30
# a crop row/column may contain fewer than this fraction of undefined pixels
CROP_TOLERANCE = 0.02


@dataclass(frozen=True)
class StitchConfig:
    iterations: int = 2000
    inlier_threshold: float = 3.0
    seed: int = DEFAULT_SEED
    ratio: float = RATIO
    min_inliers: int = 8
    gain: bool = True
    crop: bool = True
    sift: SiftConfig = SiftConfig()


# -- homographies ------------------------------------------------------------------

def normalize_h(h: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if abs(h[2, 2]) < 1e-15:
        raise DegenerateConfiguration("homography has a zero bottom-right element")
    h = h / h[2, 2]
    if abs(np.linalg.det(h)) <= 1e-12:
        raise DegenerateConfiguration("homography is singular")
    return h


def apply_h(h: np.ndarray, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    q = pts @ h[:, :2].T + h[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        return q[:, :2] / q[:, 2:3]


def _similarity_normalizer(pts: np.ndarray) -> np.ndarray:
    """Translate to the centroid and scale so the mean distance is sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = np.sqrt(2.0) / d if d > 0 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _collinear(pts: np.ndarray) -> bool:
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    return sv[0] == 0 or sv[-1] <= 1e-9 * sv[0]


def estimate_homography_dlt(src, dst) -> np.ndarray:
    """Least-squares homography mapping ``src`` to ``dst`` (normalized DLT)."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    if len(src) != len(dst):
        raise ValueError("src and dst must have the same number of points")
    if len(src) < 4:
        raise DegenerateConfiguration(f"need at least 4 correspondences, got {len(src)}")
    if _collinear(src) or _collinear(dst):
        raise DegenerateConfiguration("correspondences are collinear or coincident")
    ts, td = _similarity_normalizer(src), _similarity_normalizer(dst)
    s = apply_h(ts, src)
    d = apply_h(td, dst)
    n = len(s)
    a = np.zeros((2 * n, 9))
    x, y, u, v = s[:, 0], s[:, 1], d[:, 0], d[:, 1]
    a[0::2, 0:3] = np.column_stack([x, y, np.ones(n)])
    a[0::2, 6:9] = -u[:, None] * a[0::2, 0:3]
    a[1::2, 3:6] = a[0::2, 0:3]
    a[1::2, 6:9] = -v[:, None] * a[0::2, 0:3]
    _, sv, vt = np.linalg.svd(a)
    if n == 4 and sv[-2] <= 1e-10 * sv[0] or n > 4 and sv[-2] <= 1e-12 * sv[0]:
        raise DegenerateConfiguration("correspondences do not determine a unique homography")
    hn = vt[-1].reshape(3, 3)
    return normalize_h(np.linalg.inv(td) @ hn @ ts)


def _batch_minimal(s: np.ndarray, d: np.ndarray):
    """Homographies (h33 = 1) from batches of 4 normalized correspondences.

    Returns ``(H, ok)`` with ``H`` of shape (b, 3, 3).
    """
    b = len(s)
    x, y, u, v = s[..., 0], s[..., 1], d[..., 0], d[..., 1]
    z, o = np.zeros_like(x), np.ones_like(x)
    rows_u = np.stack([x, y, o, z, z, z, -u * x, -u * y], axis=-1)
    rows_v = np.stack([z, z, z, x, y, o, -v * x, -v * y], axis=-1)
    a = np.concatenate([rows_u, rows_v], axis=1)
    rhs = np.concatenate([u, v], axis=1)
    det = np.linalg.det(a)
    ok = np.abs(det) > 1e-10
    a[~ok] = np.eye(8)
    sol = np.linalg.solve(a, rhs[..., None])[..., 0]
    h = np.concatenate([sol, np.ones((b, 1))], axis=1).reshape(b, 3, 3)
    return h, ok


def _transfer_errors(h: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Forward transfer error of every point under each homography in ``h`` (b, n)."""
    p = np.einsum("bij,nj->bni", h, np.column_stack([src, np.ones(len(src))]))
    with np.errstate(divide="ignore", invalid="ignore"):
        proj = p[..., :2] / p[..., 2:3]
        err = np.sqrt(((proj - dst) ** 2).sum(axis=-1))
    return np.where(np.isfinite(err), err, np.inf)


def ransac_homography(src, dst, iterations: int = 2000, inlier_threshold: float = 3.0,
                      seed: int = DEFAULT_SEED, min_inliers: int = 4):
    """Best-consensus homography refit on its inliers; returns ``(H, inlier mask)``.

    Random minimal samples come from ``numpy.random.default_rng(seed)``, so
    results are reproducible for a fixed seed. Consensus ties keep the
    earliest sample.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4:
        raise NoConsensus(f"need at least 4 correspondences, got {n}")
    ts, td = _similarity_normalizer(src), _similarity_normalizer(dst)
    s, d = apply_h(ts, src), apply_h(td, dst)
    rng = np.random.default_rng(seed)
    samples = np.argsort(rng.random((iterations, n)), axis=1)[:, :4]
    hn, ok = _batch_minimal(s[samples], d[samples])
    h = np.linalg.inv(td) @ hn @ ts
    counts = np.zeros(iterations, dtype=np.int64)
    chunk = max(1, 2_000_000 // max(n, 1))
    for a in range(0, iterations, chunk):
        err = _transfer_errors(h[a:a + chunk], src, dst)
        counts[a:a + chunk] = (err < inlier_threshold).sum(axis=1)
    counts[~ok] = 0
    best = int(np.argmax(counts))
    if counts[best] < max(4, min_inliers):
        raise NoConsensus(f"best model has {counts[best]} inliers, need {max(4, min_inliers)}")
    mask = _transfer_errors(h[best:best + 1], src, dst)[0] < inlier_threshold
    model = h[best] / h[best, 2, 2]
    for _ in range(5):
        try:
            refit = estimate_homography_dlt(src[mask], dst[mask])
        except DegenerateConfiguration:
            break
        new_mask = _transfer_errors(refit[None], src, dst)[0] < inlier_threshold
        model = refit
        if np.array_equal(new_mask, mask) or new_mask.sum() < max(4, min_inliers):
            break
        mask = new_mask
    model = normalize_h(model)
    return model, _transfer_errors(model[None], src, dst)[0] < inlier_threshold


# -- correspondences ---------------------------------------------------------------

def match_points(kp_a, desc_a, kp_b, desc_b, ratio: float = RATIO):
    """Ratio-test correspondences from image A to image B as two (n, 2) arrays."""
    if len(desc_a) == 0 or len(desc_b) < 2:
        return np.zeros((0, 2)), np.zeros((0, 2))
    idx = DescriptorIndex(desc_b)
    d, ids = idx.knn(desc_a, 2)
    ok = d[:, 0] < ratio * d[:, 1]
    return np.asarray(kp_a)[ok, :2].astype(np.float64), np.asarray(kp_b)[ids[ok, 0], :2].astype(np.float64)


def pairwise_homography(feat_a, feat_b, cfg: StitchConfig = StitchConfig()):
    """Homography mapping image A pixel coordinates into image B."""
    src, dst = match_points(feat_a[0], feat_a[1], feat_b[0], feat_b[1], cfg.ratio)
    return ransac_homography(src, dst, cfg.iterations, cfg.inlier_threshold, cfg.seed, cfg.min_inliers)


@dataclass(frozen=True)
class OverlapEstimate:
    fraction: float
    low: bool
    homography: np.ndarray = field(compare=False)


def coverage_fraction_under(h: np.ndarray, shape_a, shape_b) -> float:
    """Fraction of B's pixels whose preimage under ``h`` (A -> B) lies inside A."""
    hb, wb = shape_b[:2]
    ha, wa = shape_a[:2]
    yy, xx = np.mgrid[0:hb, 0:wb]
    pts = apply_h(np.linalg.inv(h), np.column_stack([xx.ravel(), yy.ravel()]))
    inside = ((pts[:, 0] >= -0.5) & (pts[:, 0] <= wa - 0.5) & (pts[:, 1] >= -0.5) & (pts[:, 1] <= ha - 0.5))
    return float(inside.mean())


def check_overlap(img_a, img_b, cfg: StitchConfig = StitchConfig()) -> OverlapEstimate:
    """Estimated fraction of B covered by A; ``low`` when below 0.30."""
    fa, fb = extract_arrays(img_a, cfg.sift), extract_arrays(img_b, cfg.sift)
    h, _ = pairwise_homography(fa, fb, cfg)
    frac = coverage_fraction_under(h, np.shape(img_a), np.shape(img_b))
    return OverlapEstimate(frac, frac < LOW_OVERLAP, h)


# -- warping and blending ----------------------------------------------------------

def _as_color(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


def feather_weights(h: int, w: int) -> np.ndarray:
    """Linear ramp: distance in pixels to the nearest frame edge, plus one."""
    y = np.minimum(np.arange(h), np.arange(h)[::-1]) + 1.0
    x = np.minimum(np.arange(w), np.arange(w)[::-1]) + 1.0
    return np.minimum.outer(y, x)


@dataclass
class Canvas:
    image: np.ndarray  # (H, W, C)
    weight: np.ndarray  # (H, W); zero where nothing has been drawn

    @classmethod
    def empty(cls, height: int, width: int, channels: int = 1) -> "Canvas":
        return cls(np.zeros((height, width, channels)), np.zeros((height, width)))

    @property
    def mask(self) -> np.ndarray:
        return self.weight > 0


def warp_image(img, h: np.ndarray, out_shape, eps: float = 0.01):
    """Inverse-mapped bilinear warp of ``img`` by ``h`` (source -> output coords).

    Returns ``(warped, defined mask, source coordinates)``.
    """
    src = _as_color(img)
    hs, ws = src.shape[:2]
    ho, wo = out_shape
    yy, xx = np.mgrid[0:ho, 0:wo]
    pts = apply_h(np.linalg.inv(h), np.column_stack([xx.ravel(), yy.ravel()]))
    sx, sy = pts[:, 0].reshape(ho, wo), pts[:, 1].reshape(ho, wo)
    ok = np.isfinite(sx) & np.isfinite(sy)
    ok &= (sx >= -eps) & (sx <= ws - 1 + eps) & (sy >= -eps) & (sy <= hs - 1 + eps)
    cx = np.clip(np.where(ok, sx, 0), 0, ws - 1)
    cy = np.clip(np.where(ok, sy, 0), 0, hs - 1)
    out = np.stack([ndimage.map_coordinates(src[..., c], [cy, cx], order=1, mode="nearest")
                    for c in range(src.shape[2])], axis=-1)
    out[~ok] = 0.0
    return out, ok, (cx, cy)


def warp_and_blend(canvas: Canvas, img, h: np.ndarray, gain: bool = True) -> Canvas:
    """Warp ``img`` onto ``canvas`` through ``h`` and feather it in.

    Before blending, each channel of the warped image is scaled so its mean
    over the overlap matches the canvas.
    """
    h = normalize_h(h)
    src = _as_color(img)
    warped, ok, (cx, cy) = warp_image(src, h, canvas.weight.shape)
    fw = feather_weights(*src.shape[:2])
    w_new = np.where(ok, ndimage.map_coordinates(fw, [cy, cx], order=1, mode="nearest"), 0.0)
    overlap = ok & canvas.mask
    if gain and overlap.any():
        for c in range(warped.shape[2]):
            denom = warped[..., c][overlap].mean()
            if denom > 1e-6:
                warped[..., c] *= canvas.image[..., c][overlap].mean() / denom
    w_old = canvas.weight
    total = w_old + w_new
    image = canvas.image.copy()
    fresh = ok & ~canvas.mask
    image[fresh] = warped[fresh]
    image[overlap] = ((canvas.image[overlap] * w_old[overlap, None] + warped[overlap] * w_new[overlap, None])
                      / total[overlap, None])
    return Canvas(image, total)


# -- cropping ---------------------------------------------------------------------

def crop_rectangle(defined: np.ndarray) -> tuple[int, int, int, int]:
    """Largest rectangle ``(top, left, bottom, right)`` (exclusive ends) whose
    rows and columns each hold fewer than 2% undefined pixels.

    Among rectangles of equal area the top-most, then left-most, then the
    shorter one wins.
    """
    undefined = ~np.asarray(defined, dtype=bool)
    if undefined.all():
        raise FullyBlack("image has no defined pixels")
    h, w = undefined.shape
    u = undefined.astype(np.int64)
    col_cum = np.vstack([np.zeros((1, w), np.int64), np.cumsum(u, axis=0)])  # (h+1, w)
    row_cum = np.hstack([np.zeros((h, 1), np.int64), np.cumsum(u, axis=1)])  # (h, w+1)
    best_key, best = None, None
    for height in range(h, 0, -1):
        if best_key is not None and height * w < -best_key[0]:
            break
        for top in range(0, h - height + 1):
            bottom = top + height
            good_col = (col_cum[bottom] - col_cum[top]) * 50 < height
            if not good_col.any():
                continue
            # longest run of good columns bounds the width
            padded = np.concatenate([[0], good_col.astype(np.int8), [0]])
            edges = np.flatnonzero(np.diff(padded))
            starts, ends = edges[0::2], edges[1::2]
            longest = int((ends - starts).max())
            if best_key is not None and height * longest < -best_key[0]:
                continue
            rows = row_cum[top:bottom]
            good_prefix = np.concatenate([[0], np.cumsum(good_col)])
            for width in range(longest, 0, -1):
                if best_key is not None and height * width < -best_key[0]:
                    break
                lefts = np.arange(0, w - width + 1)
                all_good = good_prefix[lefts + width] - good_prefix[lefts] == width
                if not all_good.any():
                    continue
                lefts = lefts[all_good]
                bad = rows[:, lefts + width] - rows[:, lefts]
                fits = (bad * 50 < width).all(axis=0)
                if fits.any():
                    left = int(lefts[np.argmax(fits)])
                    key = (-height * width, top, left, height)
                    if best_key is None or key < best_key:
                        best_key, best = key, (top, left, bottom, left + width)
                    break
    return best


def crop_black_edges(img, mask=None, return_box: bool = False):
    """Crop to the largest rectangle that is (nearly) free of undefined pixels.

    ``mask`` marks defined pixels; without it a pixel is undefined when all
    of its channels are exactly zero.
    """
    arr = np.asarray(img)
    if mask is None:
        mask = (arr != 0).any(axis=-1) if arr.ndim == 3 else arr != 0
    top, left, bottom, right = crop_rectangle(mask)
    out = arr[top:bottom, left:right]
    return (out, (top, left, bottom, right)) if return_box else out


# -- sequences -------------------------------------------------------------------

@dataclass
class Panorama:
    image: np.ndarray
    mask: np.ndarray
    transforms: list  # per frame: homography into panorama pixel coordinates (before cropping)
    box: tuple[int, int, int, int] | None = None
    overlaps: list = field(default_factory=list)


def chain_to_reference(pairwise: list[np.ndarray], ref: int) -> list[np.ndarray]:
    """Compose pairwise homographies (frame i+1 -> frame i) into maps frame j -> frame ``ref``."""
    n = len(pairwise) + 1
    out = [None] * n
    out[ref] = np.eye(3)
    for j in range(ref + 1, n):
        out[j] = normalize_h(out[j - 1] @ pairwise[j - 1])
    for j in range(ref - 1, -1, -1):
        out[j] = normalize_h(out[j + 1] @ np.linalg.inv(pairwise[j]))
    return out


def stitch_sequence(frames, cfg: StitchConfig = StitchConfig()) -> Panorama:
    """Stitch an ordered list of overlapping frames into one panorama."""
    frames = [_as_color(f) for f in frames]
    if len(frames) < 2:
        raise ValueError("need at least 2 frames to stitch")
    channels = {f.shape[2] for f in frames}
    if len(channels) != 1:
        raise ValueError("frames mix gray and color images")
    feats = [extract_arrays(f[..., 0] if f.shape[2] == 1 else f, cfg.sift) for f in frames]
    pairwise, overlaps = [], []
    for i in range(len(frames) - 1):
        try:
            h, _ = pairwise_homography(feats[i + 1], feats[i], cfg)
        except NoConsensus as exc:
            raise NoConsensus(f"frames {i} and {i + 1}: {exc}", pair_index=i) from exc
        frac = coverage_fraction_under(h, frames[i + 1].shape, frames[i].shape)
        overlaps.append(frac)
        if frac < LOW_OVERLAP:
            log.warning("frames %d and %d overlap by only %.0f%%", i, i + 1, 100 * frac)
        pairwise.append(h)

    ref = (len(frames) - 1) // 2
    to_ref = chain_to_reference(pairwise, ref)
    corners = []
    for f, h in zip(frames, to_ref):
        fh, fw = f.shape[:2]
        corners.append(apply_h(h, [(0, 0), (fw - 1, 0), (0, fh - 1), (fw - 1, fh - 1)]))
    corners = np.vstack(corners)
    # sub-pixel estimation jitter should not add a canvas row or column
    x0, y0 = np.floor(corners.min(axis=0) + 0.05)
    x1, y1 = np.ceil(corners.max(axis=0) - 0.05)
    width, height = int(x1 - x0) + 1, int(y1 - y0) + 1
    budget = 16 * sum(f.shape[0] * f.shape[1] for f in frames)
    if not np.isfinite([x0, y0, x1, y1]).all() or width * height > budget:
        raise DegenerateConfiguration(f"panorama canvas would be {width}x{height} pixels; homographies diverge")
    shift = np.array([[1, 0, -x0], [0, 1, -y0], [0, 0, 1.0]])
    transforms = [shift @ h for h in to_ref]

    canvas = Canvas.empty(height, width, frames[0].shape[2])
    order = [ref] + list(range(ref + 1, len(frames))) + list(range(ref - 1, -1, -1))
    for j in order:
        canvas = warp_and_blend(canvas, frames[j], transforms[j], gain=cfg.gain)
    image, mask = np.clip(canvas.image, 0.0, 1.0), canvas.mask
    box = None
    if cfg.crop:
        top, left, bottom, right = box = crop_rectangle(mask)
        image, mask = image[top:bottom, left:right], mask[top:bottom, left:right]
    if image.shape[2] == 1:
        image = image[..., 0]
    return Panorama(image, mask, transforms, box, overlaps)

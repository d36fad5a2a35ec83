"""SIFT keypoints and 128-d descriptors, written against numpy/scipy.ndimage.

The pipeline follows the classic recipe: a Gaussian scale space with a
difference-of-Gaussians (DoG) pyramid, 3-D extrema, quadratic sub-pixel
refinement with contrast and edge rejection, gradient-histogram orientation,
and a 4x4x8 rotated gradient descriptor.

Image convention: arrays indexed ``[row, col]`` = ``[y, x]`` with y pointing
down. Orientations are ``atan2(dy, dx)`` in those coordinates, in degrees.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ImageTooSmall
from .imageio import to_gray

log = logging.getLogger(__name__)

DESCRIPTOR_SIZE = 128
MIN_IMAGE_SIZE = 16


@dataclass(frozen=True)
class SiftConfig:
    octaves: int | None = None  # None: as many as fit
    scales_per_octave: int = 3
    sigma0: float = 1.6
    contrast_threshold: float = 0.04
    edge_threshold: float = 10.0
    upsample: bool = True
    assumed_blur: float = 0.5
    border: int = 5
    max_interp_steps: int = 5
    orientation_bins: int = 36
    orientation_sigma: float = 1.5
    peak_ratio: float = 0.8
    descriptor_width: int = 4
    descriptor_bins: int = 8
    descriptor_scale: float = 3.0
    descriptor_clamp: float = 0.2

    def __post_init__(self):
        if self.scales_per_octave < 3:
            raise ValueError("scales_per_octave must be >= 3")
        if self.contrast_threshold <= 0 or self.edge_threshold <= 0:
            raise ValueError("thresholds must be positive")
        if self.descriptor_width * self.descriptor_width * self.descriptor_bins != DESCRIPTOR_SIZE:
            raise ValueError("descriptor layout must give 128 values")


@dataclass
class Keypoint:
    """A keypoint in input-image pixel coordinates."""

    x: float
    y: float
    scale: float
    orientation: float = 0.0
    octave: int = 0
    layer: int = 0
    response: float = 0.0
    # position inside the octave's own pixel grid, and sub-layer scale there
    ox: float = field(default=0.0, repr=False)
    oy: float = field(default=0.0, repr=False)
    oscale: float = field(default=0.0, repr=False)


@dataclass
class ScaleSpace:
    gaussians: list[np.ndarray]  # per octave: (levels, h, w)
    dogs: list[np.ndarray]  # per octave: (levels - 1, h, w)
    sigmas: np.ndarray  # blur of each level, in the octave's own pixel units
    upsampled: bool
    shape: tuple[int, int]  # input image shape

    def to_input(self, octave: int, ox: float, oy: float) -> tuple[float, float]:
        """Map octave pixel coordinates back to input-image coordinates."""
        f = float(2 ** octave)
        # octave pixel i is centred on base coordinate f * i + (f - 1) / 2
        bx, by = f * ox + (f - 1) / 2, f * oy + (f - 1) / 2
        if self.upsampled:
            return (bx + 0.5) / 2.0 - 0.5, (by + 0.5) / 2.0 - 0.5
        return bx, by

    def scale_factor(self, octave: int) -> float:
        return 2.0 ** octave / (2.0 if self.upsampled else 1.0)


def as_gray_image(img) -> np.ndarray:
    arr = to_gray(np.asarray(img, dtype=np.float64))
    if arr.ndim != 2:
        raise ValueError("expected a 2-D image")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    return arr


def upsample2x(img: np.ndarray) -> np.ndarray:
    """Bilinear 2x enlargement with pixel-centre alignment (edges clamped)."""
    def along(a, axis):
        prev = np.concatenate([np.take(a, [0], axis), np.take(a, range(a.shape[axis] - 1), axis)], axis)
        nxt = np.concatenate([np.take(a, range(1, a.shape[axis]), axis), np.take(a, [-1], axis)], axis)
        even = 0.75 * a + 0.25 * prev
        odd = 0.75 * a + 0.25 * nxt
        out = np.stack([even, odd], axis=axis + 1)
        shape = list(a.shape)
        shape[axis] *= 2
        return out.reshape(shape)
    return along(along(img, 0), 1)


def halve(img: np.ndarray) -> np.ndarray:
    """2x2 block average.

    Unlike keeping every other pixel, the sampling grid stays centred, so
    decimation commutes with flips and 90-degree rotations of even-sized
    images.
    """
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    a = img[:h, :w]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def blur(img: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(img, sigma, mode="reflect", truncate=4.0)


def _octave_count(shape, cfg: SiftConfig) -> int:
    min_dim = min(shape)
    fit = int(math.floor(math.log2(min_dim / MIN_IMAGE_SIZE))) + 1
    if cfg.octaves is not None:
        return max(1, min(cfg.octaves, fit))
    return max(1, fit)


def build_scale_space(img, cfg: SiftConfig = SiftConfig()) -> ScaleSpace:
    """Gaussian and DoG pyramids.

    Each octave holds ``scales_per_octave + 3`` Gaussian levels whose blur
    grows geometrically by ``2 ** (1 / scales_per_octave)``; the next octave
    starts from the level with twice the base blur, halved by 2x2 averaging.
    """
    gray = as_gray_image(img)
    if min(gray.shape) < MIN_IMAGE_SIZE:
        raise ImageTooSmall(f"image {gray.shape[1]}x{gray.shape[0]} is below {MIN_IMAGE_SIZE} px")
    s = cfg.scales_per_octave
    if cfg.upsample:
        base = upsample2x(gray)
        prior = 2.0 * cfg.assumed_blur
    else:
        base = gray
        prior = cfg.assumed_blur
    base = blur(base, math.sqrt(max(cfg.sigma0 ** 2 - prior ** 2, 0.01)))

    k = 2.0 ** (1.0 / s)
    sigmas = cfg.sigma0 * k ** np.arange(s + 3)
    steps = [math.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2) for i in range(1, s + 3)]

    gaussians, dogs = [], []
    for o in range(_octave_count(base.shape, cfg)):
        if o:
            base = halve(gaussians[-1][s])
        levels = [base]
        for step in steps:
            levels.append(blur(levels[-1], step))
        stack = np.stack(levels)
        gaussians.append(stack)
        dogs.append(stack[1:] - stack[:-1])
    return ScaleSpace(gaussians, dogs, sigmas, cfg.upsample, gray.shape)


def detect_extrema(space: ScaleSpace, cfg: SiftConfig = SiftConfig()) -> list[tuple[int, int, int, int]]:
    """Raw (octave, layer, row, col) candidates: 26-neighbourhood extrema above threshold."""
    s = cfg.scales_per_octave
    threshold = 0.5 * cfg.contrast_threshold / s
    b = cfg.border
    out = []
    for o, dog in enumerate(space.dogs):
        if min(dog.shape[1:]) <= 2 * b:
            continue
        mx = ndimage.maximum_filter(dog, size=3, mode="nearest")
        mn = ndimage.minimum_filter(dog, size=3, mode="nearest")
        core = np.zeros(dog.shape, dtype=bool)
        core[1:s + 1, b:-b, b:-b] = True
        hit = core & (np.abs(dog) > threshold) & (((dog == mx) & (dog > 0)) | ((dog == mn) & (dog < 0)))
        for layer, r, c in zip(*np.nonzero(hit)):
            out.append((o, int(layer), int(r), int(c)))
    return out


def _derivatives(d: np.ndarray, layer: int, r: int, c: int):
    cube = d[layer - 1:layer + 2, r - 1:r + 2, c - 1:c + 2]
    v = cube[1, 1, 1]
    dx = 0.5 * (cube[1, 1, 2] - cube[1, 1, 0])
    dy = 0.5 * (cube[1, 2, 1] - cube[1, 0, 1])
    ds = 0.5 * (cube[2, 1, 1] - cube[0, 1, 1])
    dxx = cube[1, 1, 2] + cube[1, 1, 0] - 2 * v
    dyy = cube[1, 2, 1] + cube[1, 0, 1] - 2 * v
    dss = cube[2, 1, 1] + cube[0, 1, 1] - 2 * v
    dxy = 0.25 * (cube[1, 2, 2] - cube[1, 2, 0] - cube[1, 0, 2] + cube[1, 0, 0])
    dxs = 0.25 * (cube[2, 1, 2] - cube[2, 1, 0] - cube[0, 1, 2] + cube[0, 1, 0])
    dys = 0.25 * (cube[2, 2, 1] - cube[2, 0, 1] - cube[0, 2, 1] + cube[0, 0, 1])
    grad = np.array([dx, dy, ds])
    hess = np.array([[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]])
    return v, grad, hess


def refine_with_reason(candidate, space: ScaleSpace, cfg: SiftConfig = SiftConfig()):
    """Like :func:`refine_keypoint` but returns ``(keypoint or None, reason)``.

    ``reason`` is ``"ok"``, ``"unstable"`` (no convergence, singular fit, or
    drift out of the pyramid interior), ``"low-contrast"`` or ``"edge"``.
    """
    o, layer, r, c = candidate
    dog = space.dogs[o]
    s = cfg.scales_per_octave
    b = cfg.border
    h, w = dog.shape[1:]
    for _ in range(cfg.max_interp_steps):
        v, grad, hess = _derivatives(dog, layer, r, c)
        try:
            offset = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return None, "unstable"
        if np.all(np.abs(offset) < 0.5):
            break
        if np.any(np.abs(offset) > 1e6):
            return None, "unstable"
        c += int(round(offset[0]))
        r += int(round(offset[1]))
        layer += int(round(offset[2]))
        if layer < 1 or layer > s or r < b or r >= h - b or c < b or c >= w - b:
            return None, "unstable"
    else:
        return None, "unstable"

    contrast = v + 0.5 * grad @ offset
    if abs(contrast) * s < cfg.contrast_threshold:
        return None, "low-contrast"
    dxx, dyy, dxy = hess[0, 0], hess[1, 1], hess[0, 1]
    trace, det = dxx + dyy, dxx * dyy - dxy * dxy
    e = cfg.edge_threshold
    if det <= 0 or trace * trace * e >= (e + 1) ** 2 * det:
        return None, "edge"

    ox, oy = c + offset[0], r + offset[1]
    oscale = cfg.sigma0 * 2.0 ** ((layer + offset[2]) / s)
    x, y = space.to_input(o, ox, oy)
    kp = Keypoint(x=x, y=y, scale=oscale * space.scale_factor(o), octave=o, layer=layer,
                  response=float(abs(contrast)), ox=ox, oy=oy, oscale=oscale)
    return kp, "ok"


def refine_keypoint(candidate, space: ScaleSpace, cfg: SiftConfig = SiftConfig()) -> Keypoint | None:
    """Quadratic sub-pixel/sub-scale fit; None when the candidate is rejected.

    Rejects candidates that do not converge within ``max_interp_steps``,
    drift out of the pyramid interior, have low contrast
    (``|D| * scales_per_octave < contrast_threshold``), or lie on an edge
    (principal-curvature ratio above ``edge_threshold``).
    """
    return refine_with_reason(candidate, space, cfg)[0]


def _gradients(img: np.ndarray):
    """Central-difference gradients; border pixels get zero."""
    dx = np.zeros_like(img)
    dy = np.zeros_like(img)
    dx[1:-1, 1:-1] = img[1:-1, 2:] - img[1:-1, :-2]
    dy[1:-1, 1:-1] = img[2:, 1:-1] - img[:-2, 1:-1]
    return dx, dy


class _GradientCache:
    def __init__(self, space: ScaleSpace):
        self.space = space
        self._cache = {}

    def __call__(self, octave: int, layer: int):
        key = (octave, layer)
        if key not in self._cache:
            dx, dy = _gradients(self.space.gaussians[octave][layer])
            self._cache[key] = (np.hypot(dx, dy), np.degrees(np.arctan2(dy, dx)) % 360.0)
        return self._cache[key]


def orientation_histogram(kp: Keypoint, space: ScaleSpace, cfg: SiftConfig = SiftConfig(),
                          _grad=None) -> np.ndarray:
    """Smoothed, Gaussian-weighted 36-bin gradient orientation histogram."""
    mag, ang = (_grad or _GradientCache(space))(kp.octave, kp.layer)
    h, w = mag.shape
    sigma = cfg.orientation_sigma * kp.oscale
    radius = int(round(3 * sigma))
    cx, cy = int(round(kp.ox)), int(round(kp.oy))
    y0, y1 = max(cy - radius, 1), min(cy + radius, h - 2)
    x0, x1 = max(cx - radius, 1), min(cx + radius, w - 2)
    n = cfg.orientation_bins
    hist = np.zeros(n)
    if y0 > y1 or x0 > x1:
        return hist
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    weight = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma * sigma))
    # votes split linearly between the two nearest bins
    pos = (ang[y0:y1 + 1, x0:x1 + 1] * n / 360.0).ravel()
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(int) % n
    vote = (weight * mag[y0:y1 + 1, x0:x1 + 1]).ravel()
    np.add.at(hist, lo, vote * (1.0 - frac))
    np.add.at(hist, (lo + 1) % n, vote * frac)
    # circular [1 4 6 4 1] / 16 smoothing
    return (np.roll(hist, 2) + np.roll(hist, -2) + 4 * (np.roll(hist, 1) + np.roll(hist, -1)) + 6 * hist) / 16.0


def assign_orientation(kp: Keypoint, space: ScaleSpace, cfg: SiftConfig = SiftConfig(),
                       _grad=None) -> list[Keypoint]:
    """One keypoint per histogram peak reaching ``peak_ratio`` of the maximum."""
    hist = orientation_histogram(kp, space, cfg, _grad)
    n = len(hist)
    top = hist.max()
    if top <= 0:
        return []
    out = []
    for i in range(n):
        left, mid, right = hist[i - 1], hist[i], hist[(i + 1) % n]
        if mid > left and mid > right and mid >= cfg.peak_ratio * top:
            shift = 0.5 * (left - right) / (left - 2 * mid + right)
            angle = ((i + shift) * 360.0 / n) % 360.0
            out.append(Keypoint(kp.x, kp.y, kp.scale, 0.0 if angle >= 360.0 else angle, kp.octave,
                                kp.layer, kp.response, kp.ox, kp.oy, kp.oscale))
    return out


def compute_descriptor(kp: Keypoint, space: ScaleSpace, cfg: SiftConfig = SiftConfig(),
                       _grad=None) -> np.ndarray:
    """128-d descriptor: 4x4 cells x 8 orientation bins, rotated to ``kp.orientation``.

    Samples are spread over neighbouring cells and bins by trilinear
    interpolation; the vector is L2-normalised, clamped at 0.2 and
    renormalised.
    """
    mag, ang = (_grad or _GradientCache(space))(kp.octave, kp.layer)
    h, w = mag.shape
    d, nb = cfg.descriptor_width, cfg.descriptor_bins
    cell = cfg.descriptor_scale * kp.oscale
    radius = int(round(cell * math.sqrt(2) * (d + 1) * 0.5))
    radius = min(radius, int(math.hypot(h, w)))
    cx, cy = int(round(kp.ox)), int(round(kp.oy))
    theta = math.radians(kp.orientation)
    cos_t, sin_t = math.cos(theta) / cell, math.sin(theta) / cell

    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    # offsets expressed in the keypoint frame, in units of cells
    c_rot = xx * cos_t + yy * sin_t
    r_rot = -xx * sin_t + yy * cos_t
    rbin = r_rot + d / 2 - 0.5
    cbin = c_rot + d / 2 - 0.5
    py, px = yy + cy, xx + cx
    ok = (rbin > -1) & (rbin < d) & (cbin > -1) & (cbin < d) & (py >= 1) & (py < h - 1) & (px >= 1) & (px < w - 1)
    rbin, cbin = rbin[ok], cbin[ok]
    weight = np.exp(-(c_rot[ok] ** 2 + r_rot[ok] ** 2) / (0.5 * d * d))
    m = mag[py[ok], px[ok]] * weight
    obin = ((ang[py[ok], px[ok]] - kp.orientation) % 360.0) * nb / 360.0

    r0 = np.floor(rbin).astype(int)
    c0 = np.floor(cbin).astype(int)
    o0 = np.floor(obin).astype(int)
    dr, dc, do = rbin - r0, cbin - c0, obin - o0
    o0 %= nb
    hist = np.zeros((d + 2, d + 2, nb))
    for ri, wr in ((0, 1 - dr), (1, dr)):
        for ci, wc in ((0, 1 - dc), (1, dc)):
            for oi, wo in ((0, 1 - do), (1, do)):
                np.add.at(hist, (r0 + 1 + ri, c0 + 1 + ci, (o0 + oi) % nb), m * wr * wc * wo)
    vec = hist[1:d + 1, 1:d + 1].ravel()
    return normalize_descriptor(vec, cfg.descriptor_clamp)


def normalize_descriptor(vec: np.ndarray, clamp: float = 0.2) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    norm = np.linalg.norm(vec)
    if norm == 0:
        return np.zeros_like(vec)
    vec = np.minimum(vec / norm, clamp)
    return vec / np.linalg.norm(vec)


def extract_sift(img, cfg: SiftConfig = SiftConfig()) -> list[tuple[Keypoint, np.ndarray]]:
    """Full pipeline: keypoints with their descriptors, in a deterministic order."""
    space = build_scale_space(img, cfg)
    grad = _GradientCache(space)
    out = []
    for cand in detect_extrema(space, cfg):
        kp = refine_keypoint(cand, space, cfg)
        if kp is None:
            continue
        for oriented in assign_orientation(kp, space, cfg, grad):
            desc = compute_descriptor(oriented, space, cfg, grad)
            if desc.any():
                out.append((oriented, desc))
    log.debug("extracted %d keypoints from %s image", len(out), space.shape)
    return out


def keypoint_array(keypoints) -> np.ndarray:
    """(n, 4) float32 rows of x, y, scale, orientation."""
    rows = [(k.x, k.y, k.scale, k.orientation) for k in keypoints]
    return np.asarray(rows, dtype=np.float32).reshape(-1, 4)


def extract_arrays(img, cfg: SiftConfig = SiftConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Keypoints as an (n, 4) array and descriptors as (n, 128) float32."""
    feats = extract_sift(img, cfg)
    kps = keypoint_array(k for k, _ in feats)
    desc = np.asarray([d for _, d in feats], dtype=np.float32).reshape(-1, DESCRIPTOR_SIZE)
    return kps, desc

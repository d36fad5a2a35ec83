"""Keep images whose segmentation shows little road surface.

Masks come from an external panoptic segmentation model as 8-bit label
images with a JSON legend mapping class ids to names.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import UnknownClass
from .imageio import read_labels

ROAD_CLASSES = ("road", "pavement")
DEFAULT_THRESHOLD = 0.40


@dataclass(frozen=True)
class CoverageRule:
    classes: tuple[str, ...]
    threshold: float
    keep_below: bool = True  # retain iff fraction < threshold; otherwise iff fraction > threshold

    def __post_init__(self):
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must lie in (0, 1]")
        if not self.classes:
            raise ValueError("rule needs at least one class")

    def retains(self, fraction: float) -> bool:
        return fraction < self.threshold if self.keep_below else fraction > self.threshold


ROADS_RULE = CoverageRule(ROAD_CLASSES, DEFAULT_THRESHOLD)
# alternate criterion: mostly building facade
BUILDINGS_RULE = CoverageRule(("building",), 0.60, keep_below=False)


@dataclass(frozen=True)
class SegmentationMask:
    labels: np.ndarray  # (H, W) integer class ids
    legend: dict[int, str]

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise ValueError("mask must be a non-empty 2-D label array")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "legend", {int(k): str(v) for k, v in self.legend.items()})
        missing = sorted(set(np.unique(labels).tolist()) - set(self.legend))
        if missing:
            raise UnknownClass(f"label id(s) {missing} are not in the legend")

    @property
    def shape(self):
        return self.labels.shape

    def ids_for(self, names) -> list[int]:
        known = set(self.legend.values())
        unknown = [n for n in names if n not in known]
        if unknown:
            raise UnknownClass(f"class(es) {unknown} not in legend {sorted(known)}")
        return sorted(i for i, n in self.legend.items() if n in set(names))


def read_legend(path) -> dict[int, str]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(doc, dict) or not isinstance(doc.get("classes"), dict):
        raise ValueError(f"{path}: legend must be an object with a 'classes' map")
    return {int(k): v for k, v in doc["classes"].items()}


def load_mask(mask_path, legend) -> SegmentationMask:
    """Label PGM plus a legend (a dict or a path to the legend JSON)."""
    if not isinstance(legend, dict):
        legend = read_legend(legend)
    return SegmentationMask(read_labels(mask_path), legend)


def coverage_fraction(mask: SegmentationMask, classes=ROAD_CLASSES) -> float:
    """Share of pixels labeled with any of ``classes``."""
    ids = mask.ids_for(tuple(classes))
    return int(np.isin(mask.labels, ids).sum()) / mask.labels.size


@dataclass(frozen=True)
class FilterResult:
    retained: list
    rejected: list
    fractions: dict


def filter_images(pairs, threshold: float = DEFAULT_THRESHOLD, classes=ROAD_CLASSES,
                  rule: CoverageRule | None = None, image_shapes: dict | None = None) -> FilterResult:
    """Split ``(image id, mask)`` pairs by the coverage rule, keeping input order.

    The default rule retains an image iff its road + pavement fraction is
    strictly below ``threshold``.
    """
    rule = rule or CoverageRule(tuple(classes), threshold)
    retained, rejected, fractions = [], [], {}
    for image_id, mask in pairs:
        if image_shapes is not None and image_id in image_shapes:
            if tuple(image_shapes[image_id][:2]) != mask.shape:
                raise ValueError(f"{image_id}: mask {mask.shape} does not match image {image_shapes[image_id][:2]}")
        frac = coverage_fraction(mask, rule.classes)
        fractions[image_id] = frac
        (retained if rule.retains(frac) else rejected).append(image_id)
    return FilterResult(retained, rejected, fractions)

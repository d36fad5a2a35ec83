"""Static figures for CLI reports (matplotlib, Agg backend).

Each ``plot_*`` function returns a Figure; ``save_figure`` writes it with
metadata stripped so the same inputs give the same bytes.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .roadnet import JUNCTION_COLORS, JunctionType, RoadNetwork  # noqa: E402

_MARKED = (JunctionType.T, JunctionType.X, JunctionType.Y, JunctionType.ROUNDABOUT, JunctionType.CROSSROAD)


def _geo_axes(ax, lat0: float):
    # keep meters roughly square at this latitude
    ax.set_aspect(1.0 / max(math.cos(math.radians(lat0)), 1e-6))
    ax.set_xlabel("longitude")
    ax.set_ylabel("latitude")
    ax.ticklabel_format(useOffset=False, style="plain")


def _draw_network(ax, net: RoadNetwork):
    for eid in sorted(net.edges):
        line = net.edges[eid].polyline
        ax.plot([p.lon for p in line], [p.lat for p in line], color="0.6", lw=1.0, zorder=1)
    for jt in _MARKED:
        pts = [n.position for n in net.nodes.values() if n.junction_type == jt]
        if pts:
            ax.scatter([p.lon for p in pts], [p.lat for p in pts], s=18, color=JUNCTION_COLORS[jt],
                       label=jt.value, zorder=2, edgecolors="none")


def plot_network(net: RoadNetwork, title: str | None = None):
    fig, ax = plt.subplots(figsize=(6, 6))
    _draw_network(ax, net)
    if net.nodes:
        _geo_axes(ax, float(np.mean([n.position.lat for n in net.nodes.values()])))
    if ax.get_legend_handles_labels()[0]:
        ax.legend(loc="best", fontsize=8, frameon=False)
    ax.set_title(title or f"{len(net.nodes)} intersections, {len(net.edges)} segments")
    return fig


def plot_path(net: RoadNetwork, candidate, title: str | None = None, color: str = "purple"):
    fig = plot_network(net, title)
    ax = fig.axes[0]
    for eid, (u, v) in zip(candidate.edges, zip(candidate.nodes, candidate.nodes[1:])):
        line = net.edges[eid].polyline
        ax.plot([p.lon for p in line], [p.lat for p in line], color=color, lw=2.5, zorder=3)
    pts = [net.nodes[n].position for n in candidate.nodes]
    ax.scatter([p.lon for p in pts], [p.lat for p in pts], s=60, color=color, zorder=4)
    for i, p in enumerate(pts):
        ax.annotate(str(i), (p.lon, p.lat), xytext=(4, 4), textcoords="offset points", fontsize=8, color=color)
    return fig


def plot_confusion(cm, normalize: bool = False):
    counts = np.asarray(cm.counts, dtype=float)
    shown = counts / np.maximum(counts.sum(axis=1, keepdims=True), 1) if normalize else counts
    k = len(cm.classes)
    fig, ax = plt.subplots(figsize=(1.2 * k + 2, 1.2 * k + 1.5))
    im = ax.imshow(shown, cmap="Blues", vmin=0)
    ax.set_xticks(range(k), cm.classes, rotation=45, ha="right")
    ax.set_yticks(range(k), cm.classes)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    top = shown.max() if shown.size else 0
    for i in range(k):
        for j in range(k):
            text = f"{shown[i, j]:.2f}" if normalize else f"{int(counts[i, j])}"
            ax.text(j, i, text, ha="center", va="center", fontsize=9,
                    color="white" if top and shown[i, j] > 0.6 * top else "black")
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    return fig


def plot_votes(report):
    places = sorted(report.tally)
    votes = [report.tally[p] for p in places]
    fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(places) + 2), 3.5))
    colors = ["green" if p == report.winner else "0.7" for p in places]
    ax.bar(range(len(places)), votes, color=colors, tick_label=places, width=0.7)
    ax.set_ylabel("votes")
    ax.set_title(f"winner: {report.winner}" + (" (tie)" if report.tie else ""))
    fig.tight_layout()
    return fig


def plot_coverage(fractions: dict, threshold: float):
    ids = list(fractions)
    vals = [fractions[i] for i in ids]
    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(ids) + 2), 3.5))
    ax.bar(range(len(ids)), vals, tick_label=ids, color=["0.4" if v < threshold else "0.8" for v in vals])
    ax.axhline(threshold, color="red", lw=1, ls="--")
    ax.set_ylim(0, 1)
    ax.set_ylabel("road + pavement fraction")
    plt.setp(ax.get_xticklabels(), rotation=90)
    fig.tight_layout()
    return fig


def save_figure(fig, path) -> None:
    """Write ``fig`` (format from the suffix) without timestamps or version stamps."""
    path = Path(path)
    fmt = path.suffix.lstrip(".").lower() or "png"
    meta = {"png": {"Software": None}, "svg": {"Date": None, "Creator": None},
            "pdf": {"CreationDate": None, "ModDate": None, "Producer": None, "Creator": None}}.get(fmt)
    try:
        # fixed salt keeps SVG element ids stable between runs
        with matplotlib.rc_context({"svg.hashsalt": "wayfinder"}):
            fig.savefig(path, format=fmt, dpi=100, metadata=meta)
    finally:
        plt.close(fig)

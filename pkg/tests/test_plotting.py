import numpy as np

from wayfinder import synthetic
from wayfinder.clseval import ConfusionMatrix
from wayfinder.matching import vote_places
from wayfinder.plotting import plot_confusion, plot_coverage, plot_network, plot_path, plot_votes, save_figure
from wayfinder.roadnet import JUNCTION_COLORS, build_graph
from wayfinder.seqmatch import JunctionSequence, MatchConfig, match_sequence


def test_network_legend_uses_junction_colors():
    fig = plot_network(build_graph(synthetic.grid(2, 2)))
    ax = fig.axes[0]
    labels = ax.get_legend_handles_labels()[1]
    assert "X" in labels and "Endpoint" not in labels
    import matplotlib.colors as mc
    x = ax.collections[labels.index("X")]
    assert np.allclose(x.get_facecolor()[0][:3], mc.to_rgb(JUNCTION_COLORS["X"]))


def test_path_figure_and_byte_stable_files(tmp_path):
    feats, tokens = synthetic.route_fixture()
    net = build_graph(feats)
    (cand,) = match_sequence(net, JunctionSequence.parse(",".join(tokens)), MatchConfig(synthetic.ORIGIN))
    for name in ("a.png", "b.png", "a.svg", "b.svg"):
        save_figure(plot_path(net, cand), tmp_path / name)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()


def test_report_figures(tmp_path):
    cm = ConfusionMatrix(["T", "X"], [[3, 1], [0, 4]])
    save_figure(plot_confusion(cm, normalize=True), tmp_path / "cm.png")
    save_figure(plot_votes(vote_places([{"A": 3, "B": 1}, {"A": 0, "B": 2}])), tmp_path / "v.png")
    save_figure(plot_coverage({"i1": 0.2, "i2": 0.5}, 0.4), tmp_path / "c.pdf")
    assert all((tmp_path / n).stat().st_size > 0 for n in ("cm.png", "v.png", "c.pdf"))

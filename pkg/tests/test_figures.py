import xml.etree.ElementTree as ET

import numpy as np
import pytest

from shortcut.figures import (interpolation_svg, metric_vs_budget_svg, scatter_svg,
                              trajectories_svg, write_svg)
from shortcut.net import StepGrid
from shortcut.sampler import integrate

NS = "{http://www.w3.org/2000/svg}"


def parse(text):
    assert text.startswith("<svg")
    root = ET.fromstring(text.encode())
    assert root.get("width") == "800" and root.get("height") == "800"
    return root


def by_class(root, tag, cls):
    return [e for e in root.iter(NS + tag) if e.get("class") == cls]


def texts(root):
    return [e.text for e in root.iter(NS + "text")]


def test_scatter_counts_and_labels():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(40, 2))
    samples = {"1 step": rng.normal(size=(13, 2)), "4 steps": rng.normal(size=(7, 2))}
    root = parse(scatter_svg(data, samples, title="t"))
    assert len(by_class(root, "circle", "sample")) == 20
    assert len(by_class(root, "circle", "data")) == 80
    t = texts(root)
    assert "x" in t and "y" in t and "1 step" in t
    assert by_class(root, "g", "legend")


def test_trajectories_constant_field_are_collinear():
    x0 = np.random.default_rng(1).normal(size=(6, 2))
    _, traj = integrate(lambda x, t, b: np.tile([1.0, 0.5], (len(x), 1)), x0, 8, StepGrid(8), record=True)
    root = parse(trajectories_svg(traj))
    lines = by_class(root, "polyline", "path")
    assert len(lines) == 6
    for line in lines:
        pts = np.array([[float(v) for v in p.split(",")] for p in line.get("points").split()])
        d = pts - pts[0]
        cross = d[:, 0] * d[-1, 1] - d[:, 1] * d[-1, 0]
        # perpendicular pixel distance of every recorded point from the chord
        assert np.abs(cross).max() / np.linalg.norm(d[-1]) < 1e-6


def test_metric_chart_has_one_line_per_run():
    series = {"shortcut": {1: 0.01, 4: 0.012, 128: 0.013}, "flow": {1: 0.3, 4: 0.02, 128: 0.01}}
    root = parse(metric_vs_budget_svg(series, "sliced_w2"))
    assert len(by_class(root, "polyline", "series")) == 2
    assert len(by_class(root, "circle", "marker")) == 6
    assert {"1", "4", "128", "sliced_w2", "sampling steps"} <= set(texts(root))


def test_interpolation_cells():
    rows = [(n, np.zeros((1, 2)), np.full((1, 2), n)) for n in np.linspace(0, 1, 9)]
    root = parse(interpolation_svg(rows, data=np.zeros((5, 2))))
    assert len(by_class(root, "rect", "cell")) == 9
    assert len(by_class(root, "circle", "generation")) == 9


def test_empty_inputs_still_valid(tmp_path):
    parse(scatter_svg(np.zeros((0, 2)), {"none": np.zeros((0, 2))}))
    parse(metric_vs_budget_svg({}, "mmd2"))
    write_svg(tmp_path / "a.svg", scatter_svg(np.zeros((0, 2)), {}))
    parse((tmp_path / "a.svg").read_text())

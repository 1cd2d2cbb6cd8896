import xml.etree.ElementTree as ET

import numpy as np
import pytest

from cis_kit.errors import DimensionMismatch
from cis_kit.plotting import plot_sets, plot_time_series, polygon_2d
from cis_kit.polytope import HPolytope, VPolytope


def test_polygon_is_ccw_hull():
    pts = np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0.5, 0.5]])
    P = polygon_2d(pts)
    assert len(P) == 4
    area = 0.5 * sum(P[i, 0] * P[(i + 1) % 4, 1] - P[(i + 1) % 4, 0] * P[i, 1] for i in range(4))
    assert area == pytest.approx(1.0)


def test_plot_sets_is_valid_deterministic_svg():
    sets = [HPolytope.box([-1, -1], [1, 1]), VPolytope([[0, 0], [0.5, 0], [0, 0.5]])]
    a = plot_sets(sets, trajectory=np.array([[0, 0], [0.2, 0.1]]), title="t")
    assert a == plot_sets(sets, trajectory=np.array([[0, 0], [0.2, 0.1]]), title="t")
    root = ET.fromstring(a.encode())
    assert root.tag.endswith("svg")
    assert len(root.findall(".//{http://www.w3.org/2000/svg}polygon")) == 2


def test_projection_caption_in_higher_dimension():
    svg = plot_sets([HPolytope.box([-1, -1, -1], [1, 1, 1])], dims=(0, 2))
    assert "projection of the vertex set" in svg
    with pytest.raises(DimensionMismatch):
        plot_sets([HPolytope.box([-1, -1], [1, 1])], dims=(0, 3))


def test_time_series():
    t = np.arange(5)
    svg = plot_time_series(t, np.random.default_rng(0).normal(size=(5, 2)), np.ones((4, 1)))
    root = ET.fromstring(svg.encode())
    assert len(root.findall(".//{http://www.w3.org/2000/svg}polyline")) == 3

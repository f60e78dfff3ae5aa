import xml.etree.ElementTree as ET

import numpy as np
import pytest

from mvcage import plots
from mvcage.errors import FormatError
from mvcage.geometry import build_grid, make_partition


def parse(path):
    return ET.parse(path).getroot()


def test_line_and_bar(tmp_path):
    plots.line_plot(tmp_path / "l.svg", np.arange(5), {"a": np.arange(5.0), "b": np.ones(5)},
                    "t", step=["b"])
    assert parse(tmp_path / "l.svg").tag.endswith("svg")
    plots.bar_chart(tmp_path / "b.svg", [1.0, 0.0, 2.5])
    root = parse(tmp_path / "b.svg")
    assert len(root.findall("{http://www.w3.org/2000/svg}rect")) >= 3


def test_choropleth(tmp_path, rng):
    g = build_grid([[0, 1], [0, 1]], (4, 4))
    part = make_partition(rng.integers(0, 3, 16), g)
    plots.choropleth(tmp_path / "c.svg", g, part, np.arange(part.m, dtype=float))
    assert parse(tmp_path / "c.svg") is not None
    with pytest.raises(FormatError):
        plots.choropleth(tmp_path / "x.svg", build_grid((0, 1), 4),
                         make_partition([0, 0, 1, 1], build_grid((0, 1), 4)), [1.0, 2.0])


def test_trace_plot(tmp_path):
    plots.trace_plot(tmp_path / "t.svg", [(1, 1, 3.0, 3.0), (2, 2, 2.0, 1.0)])
    assert parse(tmp_path / "t.svg") is not None

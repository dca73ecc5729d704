import json
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from skbarrier._core import NORMAL, REVERSED
from skbarrier.barrier import Barrier
from skbarrier.envelope import GridFunction
from skbarrier.io import (grid_function_from_csv, grid_function_to_csv, load_measure, measure_from_dict,
                          profile_to_csv, save_measure)
from skbarrier.measures import DiscreteMeasure, MeasureError, RadialMeasure, potential_profile
from skbarrier.plots import barrier_svg, cdf_svg, stop_arcs


def test_measure_json_round_trip(tmp_path, two_rings):
    f = tmp_path / "m.json"
    save_measure(two_rings, f)
    assert load_measure(f).atoms == two_rings.atoms
    d = DiscreteMeasure(np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([0.25, 0.75]))
    save_measure(d, f)
    back = load_measure(f)
    assert np.array_equal(back.points, d.points) and np.array_equal(back.weights, d.weights)


def test_measure_loader_errors(tmp_path):
    with pytest.raises(MeasureError):
        measure_from_dict({"dimension": 2, "atoms": [{"r": 1.0, "w": 0.4}]})
    with pytest.raises(MeasureError):
        measure_from_dict({"kind": "spiral"})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(MeasureError):
        load_measure(bad)
    bad.write_text(json.dumps({"dimension": 2}))
    with pytest.raises(MeasureError):
        load_measure(bad)
    with pytest.raises(MeasureError):
        load_measure(tmp_path / "missing.json")


def test_profile_csv_writes_inf(section1_nu):
    text = profile_to_csv(potential_profile(section1_nu, np.array([0.0, 1.0])))
    lines = text.splitlines()
    assert lines[0] == "r,n_value"
    assert lines[1] == "0.0,inf"


@pytest.mark.parametrize("radial", [True, False])
def test_grid_function_csv_round_trip(radial):
    f = GridFunction.from_callable(lambda p: np.sum(np.asarray(p) ** 2, axis=-1) - 0.3, 1.5, 65, radial=radial)
    g = grid_function_from_csv(grid_function_to_csv(f))
    assert np.array_equal(g.values, f.values) and g.radius == f.radius and g.radial == radial


def test_stop_arcs():
    assert stop_arcs(NORMAL, -1.0) == [(-math.pi, math.pi)]
    assert stop_arcs(NORMAL, 1.0) == []
    (a, b), = stop_arcs(NORMAL, 0.0)
    assert (a, b) == pytest.approx((-math.pi / 2, math.pi / 2))
    (a, b), = stop_arcs(REVERSED, 0.0)
    assert (a, b) == pytest.approx((math.pi / 2, 3 * math.pi / 2))
    assert stop_arcs(REVERSED, -1.0) == []


def test_svgs_are_valid_and_deterministic(sphere1, two_rings):
    b = Barrier([1.5, 2.5], [0.3, -1.0], NORMAL, 3.0)
    s = barrier_svg(b)
    assert s == barrier_svg(b)
    root = ET.fromstring(s)
    assert root.tag.endswith("svg")
    c = cdf_svg([sphere1, two_rings], ["mu", "nu"])
    assert len(ET.fromstring(c).findall(".//{*}polyline")) == 2

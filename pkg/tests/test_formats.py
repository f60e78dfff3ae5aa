import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mvcage import formats as fm
from mvcage.bayes import ModelConfig, gibbs_fit
from mvcage.cage import dmvcage
from mvcage.errors import FormatError
from mvcage.geometry import build_grid, grid_from_arrays, make_partition

from .oracles import random_system


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_text_round_trip(x):
    assert float(fm.fmt(x)) == x


def test_data_csv_round_trip(tmp_path, rng):
    Z = rng.standard_normal((3, 5, 2))
    Z[1, 2, 0] = np.nan
    fm.write_data_csv(tmp_path / "d.csv", Z)
    back = fm.read_data_csv(tmp_path / "d.csv")
    assert np.array_equal(np.isnan(back), np.isnan(Z))
    assert np.array_equal(np.nan_to_num(back), np.nan_to_num(Z))


def test_binary_round_trip(tmp_path, rng):
    arrays = {"a": rng.standard_normal((2, 3, 4)), "b": np.arange(5.0)}
    fm.write_binary(tmp_path / "x.bin", arrays, {"k": 1})
    back, meta = fm.read_binary(tmp_path / "x.bin")
    assert meta == {"k": 1}
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])


def test_binary_rejects_bad_files(tmp_path):
    (tmp_path / "junk.bin").write_bytes(b"nope")
    with pytest.raises(FormatError):
        fm.read_binary(tmp_path / "junk.bin")
    fm.write_binary(tmp_path / "t.bin", {"a": np.ones(10)})
    raw = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        fm.read_binary(tmp_path / "t.bin")


def test_read_missing_file(tmp_path):
    with pytest.raises(FormatError):
        fm.read_json(tmp_path / "absent.json")


def test_table_header_checked(tmp_path):
    fm.write_table(tmp_path / "t.csv", ["x", "y"], [(1, 2.5)])
    with pytest.raises(FormatError):
        fm.read_table(tmp_path / "t.csv", ["cell", "unit"])


def test_grid_dict_round_trip():
    g = build_grid([[0, 2], [0, 1]], (4, 3))
    h = fm.grid_from_dict(fm.grid_to_dict(g))
    assert np.array_equal(h.centers, g.centers)
    irr = grid_from_arrays([[0.0], [1.0]], [1.0, 2.0], [[0, 1]])
    back = fm.grid_from_dict(json.loads(json.dumps(fm.grid_to_dict(irr))))
    assert np.array_equal(back.areas, irr.areas) and back.counts is None


def test_labels_round_trip(tmp_path, rng):
    g = build_grid((0, 1), 12)
    part = make_partition(rng.integers(0, 4, 12), g)
    fm.write_labels(tmp_path / "l.csv", part)
    assert np.array_equal(fm.read_labels(tmp_path / "l.csv", g).labels, part.labels)
    fm.write_table(tmp_path / "short.csv", ["cell", "unit"], [(0, 0)])
    with pytest.raises(FormatError):
        fm.read_labels(tmp_path / "short.csv", g)


def test_eigensystem_round_trip(tmp_path, rng):
    sys = random_system(rng, 9, 2, 3)
    fm.write_eigensystem(tmp_path / "e", sys)
    back = fm.read_eigensystem(tmp_path / "e")
    assert np.array_equal(back.eigenvalues, sys.eigenvalues)
    assert np.array_equal(back.eigenfunctions, sys.eigenfunctions)


def test_draws_outputs(tmp_path, rng):
    Phi = np.linalg.qr(rng.standard_normal((20, 3)))[0]
    d = gibbs_fit(rng.standard_normal((2, 20, 2)), [Phi, Phi],
                  ModelConfig(n_iter=20, n_burn=10, thin=2))
    fm.write_draws_csv(tmp_path / "d.csv", d)
    _, body = fm.read_table(tmp_path / "d.csv", ["iter", "process", "parameter", "index", "value"])
    assert len(body) == d.n_draws * 2 * (2 + 2 * 3)
    fm.write_draws_binary(tmp_path / "d.bin", d)
    mu, s2, nu = fm.read_draws_binary(tmp_path / "d.bin")
    assert np.array_equal(mu, d.mu) and np.array_equal(nu[1], d.nu[1])


@pytest.mark.parametrize("shape", [(6,), (3, 2)])
def test_geojson(tmp_path, rng, shape):
    g = build_grid([[0, 1]] * len(shape), shape)
    part = make_partition(rng.integers(0, 2, g.n), g)
    sys = random_system(rng, g.n, 2, 2)
    fm.write_geojson(tmp_path / "u.geojson", g, part, dmvcage(sys, part, g))
    doc = fm.read_json(tmp_path / "u.geojson")
    assert doc["type"] == "FeatureCollection" and len(doc["features"]) == part.m
    kind = {1: "MultiLineString", 2: "MultiPolygon"}[len(shape)]
    assert all(f["geometry"]["type"] == kind for f in doc["features"])
    assert "dmvcage" in doc["features"][0]["properties"]


def test_report_and_trace_csv(tmp_path, rng):
    g = build_grid((0, 1), 6)
    part = make_partition([0, 0, 1, 1, 2, 2], g)
    rep = dmvcage(random_system(rng, 6, 2, 2), part, g)
    fm.write_report_csv(tmp_path / "r.csv", rep)
    _, body = fm.read_table(tmp_path / "r.csv", ["unit", "process", "value"])
    assert len(body) == 3 * 3
    fm.write_trace_csv(tmp_path / "t.csv", [(1, 1, 2.0, 2.0), (2, 2, 1.0, 0.5)])
    assert fm.read_table(tmp_path / "t.csv")[0] == ["j", "units", "total", "weighted_total"]

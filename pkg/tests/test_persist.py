import json

import numpy as np
from hypothesis import given, strategies as st

from mpquant import TimeGrid, basket2d, build_chain
from mpquant.persist import (chain_manifest, fmt, read_grid, read_transition, write_chain,
                             write_lambda, write_manifest)


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_repr_round_trips(x):
    assert float(fmt(x)) == x


def test_chain_files_round_trip(tmp_path):
    ch = build_chain(basket2d(0.04, 0.3, 0.4, 0.5), TimeGrid(1.0, 3), (4, 3))
    files = write_chain(tmp_path, ch)
    assert files[:4] == [f"grid_{k}.csv" for k in range(4)]
    for k in range(1, ch.steps + 1):
        multi, pts, w = read_grid(tmp_path / f"grid_{k}.csv")
        grid = ch.grids[k]
        assert multi.min() == 1 and multi.max(axis=0).tolist() == [4, 3]
        np.testing.assert_array_equal(multi, grid.multi_indices + 1)
        np.testing.assert_array_equal(pts, grid.points)
        np.testing.assert_array_equal(w, ch.weights[k])
    # flat column equals the zero-based row-major index
    head = (tmp_path / "grid_1.csv").read_text().splitlines()
    assert head[0] == "flat,i1,i2,x1,x2,weight"
    assert [int(r.split(",")[0]) for r in head[1:]] == list(range(12))
    for k, t in enumerate(ch.transitions):
        back = read_transition(tmp_path / f"transition_{k}.csv", t.matrix.shape)
        kept = np.abs(t.matrix) >= 1e-14
        np.testing.assert_array_equal(back[kept], t.matrix[kept])
        assert np.all(back[~kept] == 0.0)


def test_lambda_file_uses_one_based_noise(tmp_path):
    values = np.zeros((2, 3, 2))
    values[1, 2, 0] = 0.25
    values[0, 1, 1] = -1e-20
    assert write_lambda(tmp_path / "lambda_0.csv", values) == 1
    assert (tmp_path / "lambda_0.csv").read_text().splitlines() == ["row,col,p,value",
                                                                   "1,2,1,0.25"]


def test_manifest_serializes(tmp_path):
    ch = build_chain(basket2d(0.04, 0.3, 0.4, 0.5), TimeGrid(1.0, 2), 3)
    man = chain_manifest(ch)
    write_manifest(tmp_path, {"chain": man, "flag": np.bool_(True), "n": np.int64(3)})
    back = json.loads((tmp_path / "manifest.json").read_text())
    assert back["chain"]["index_base"] == {"flat": 0, "multi": 1, "noise": 1}
    assert back["flag"] is True and back["n"] == 3
    assert back["chain"]["levels"] == man["levels"]

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from seponet import cli, griddump
from seponet.tensor import DimensionError


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 5), st.integers(1, 4)),
                  elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_grid_roundtrip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("g") / "a.sepg"
    axes = [np.linspace(0, 1, values.shape[1]), np.linspace(0, 2, values.shape[2])]
    griddump.write_grid(path, values, axes, {"k": 1})
    back, ax, desc = griddump.read_grid(path)
    assert back.tobytes() == values.tobytes()
    np.testing.assert_array_equal(ax[1], axes[1])
    assert desc == {"k": 1}


def test_grid_shape_check(tmp_path):
    with pytest.raises(DimensionError):
        griddump.write_grid(tmp_path / "b.sepg", np.zeros((2, 3)), [np.zeros(4)])


def test_bad_magic(tmp_path):
    p = tmp_path / "c.sepg"
    p.write_bytes(b"XXXX" + bytes(8))
    with pytest.raises(ValueError):
        griddump.read_grid(p)


def test_cli_reference(tmp_path):
    assert cli.main(["reference", "--problem", "heat", "--n-funcs", "2", "--out", str(tmp_path)]) == 0
    sol, axes, desc = griddump.read_grid(tmp_path / "heat_solution.sepg")
    assert sol.shape == (2, 128, 128)
    u, _, _ = griddump.read_grid(tmp_path / "heat_inputs.sepg")
    assert u.shape == (2, 128)


def test_cli_train_and_benchmark(tmp_path, capsys):
    cfg = {"problem": "heat", "iterations": 3, "width": 6, "depth": 1, "r": 2, "N": 4, "n_funcs": 2,
           "warmup_skip": 0}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    cli.main(["train", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "run"), "--test-funcs", "2"])
    assert (tmp_path / "run" / "checkpoint.sepm").exists()
    spec = {"problem": "heat", "models": ["seponet"], "N_values": [4], "fixed_Nf": 2, "test_funcs": 2,
            "base": {k: cfg[k] for k in ("iterations", "width", "depth", "r", "warmup_skip")}}
    (tmp_path / "s.json").write_text(json.dumps(spec))
    cli.main(["benchmark", "--spec", str(tmp_path / "s.json"), "--out", str(tmp_path / "bench")])
    assert (tmp_path / "bench" / "plots" / "rmse_vs_N_c.csv").exists()
    assert "ok" in capsys.readouterr().out


def test_cli_rejects_unknown_problem():
    with pytest.raises(SystemExit):
        cli.main(["reference", "--problem", "wave", "--out", "x"])

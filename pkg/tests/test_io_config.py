import json
import struct

import numpy as np
import pytest

from solcorr import io
from solcorr.cgle import PAPER_PARAMS, StepScheme, propagate
from solcorr.config import RunConfig, config_from_dict, load_config
from solcorr.errors import ConfigError, ContractError
from solcorr.grid import Field, make_grid
from solcorr.pipeline import figure_config
from solcorr.states import sech_pulse


def test_state_round_trip(tmp_path, rng):
    g = make_grid(64, 12.0)
    u = Field(g, rng.normal(size=64) + 1j * rng.normal(size=64))
    paths = io.save_state(tmp_path / "s.bin", u, {"note": "x"})
    assert [p.name for p in paths] == ["s.bin", "s.json"]
    back, meta = io.load_state(tmp_path / "s.bin")
    assert np.array_equal(back.values, u.values)
    assert back.grid.n_points == 64 and back.grid.t_window == 12.0
    assert meta["note"] == "x" and meta["energy"] == pytest.approx(u.energy())


def test_binary_layout(tmp_path):
    g = make_grid(16, 4.0)
    u = Field(g, np.arange(16) * (1 + 2j))
    io.save_state(tmp_path / "s.bin", u)
    raw = (tmp_path / "s.bin").read_bytes()
    assert len(raw) == 32 + 16 * 16
    magic, version, code, n, frames, dz, window = struct.unpack("<4sHHIIdd", raw[:32])
    assert (magic, version, code, n, frames, dz, window) == (b"SOLC", 1, 1, 16, 1, 0.0, 4.0)
    assert np.array_equal(np.frombuffer(raw[32:], "<c16"), u.values)


def test_corrupt_files(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ContractError):
        io.load_state(tmp_path / "bad.bin")
    g = make_grid(16, 4.0)
    io.save_state(tmp_path / "s.bin", Field(g, np.ones(16)))
    raw = (tmp_path / "s.bin").read_bytes()
    (tmp_path / "s.bin").write_bytes(raw[:-16])
    with pytest.raises(ContractError):
        io.load_state(tmp_path / "s.bin")


def test_trajectory_round_trip(tmp_path):
    g = make_grid(64, 10.0)
    out, traj = propagate(sech_pulse(g, 2.0, 0.6), PAPER_PARAMS, 0.05, StepScheme(1e-3), record=True)
    io.save_trajectory(tmp_path / "t.bin", traj)
    back = io.load_trajectory(tmp_path / "t.bin", PAPER_PARAMS)
    assert back.n_steps == traj.n_steps and back.dz == traj.dz
    assert np.array_equal(back.midpoints, traj.midpoints)
    assert np.array_equal(back.node(back.n_steps), out.values)


def test_csv_precision(tmp_path):
    x = [1 / 3, np.pi, 1e-300, -2.5]
    io.write_csv(tmp_path / "a.csv", ["a", "b", "c", "d"], [x])
    header, data = io.read_csv(tmp_path / "a.csv")
    assert header == ["a", "b", "c", "d"]
    assert np.array_equal(data[0], x)
    m = np.array([[1.0, 0.1], [0.1, 1.0]])
    io.write_matrix_csv(tmp_path / "m.csv", m, [-1.5, 1.5])
    header, data = io.read_csv(tmp_path / "m.csv")
    assert header == ["t", "-1.5", "1.5"]
    assert np.array_equal(data[:, 1:], m) and np.array_equal(data[:, 0], [-1.5, 1.5])


def test_metadata_hashes(tmp_path):
    f = io.write_csv(tmp_path / "a.csv", ["x"], [[1.0]])
    io.write_metadata(tmp_path / "metadata.json", {"k": np.float64(2.0), "n": np.int64(3)}, [f])
    meta = json.loads((tmp_path / "metadata.json").read_text())
    assert meta["k"] == 2.0 and meta["n"] == 3
    assert meta["artifacts"] == [{"path": "a.csv", "sha256": io.sha256(f), "bytes": f.stat().st_size}]


def test_default_config():
    cfg = load_config()
    assert cfg == config_from_dict({})
    assert cfg.grid.n_points == 1024 and cfg.grid.t_window == 40.0
    assert cfg.scheme.dz == 1e-3 and cfg.params == PAPER_PARAMS
    assert cfg.measurement.denominator == "full"
    assert cfg.distance == 0.5


def test_config_file(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("""
[grid]
n_points = 256
t_window = 20
[params]
epsilon = 1.7
[measurement]
checkpoints = [0.3, 0.1, 0.3]
slot_span = [-4, 4]
""")
    cfg = load_config(path)
    assert cfg.grid.n_points == 256 and cfg.params.epsilon == 1.7 and cfg.params.beta == 0.5
    assert cfg.measurement.checkpoints == (0.1, 0.3)
    assert cfg.measurement.slot_span == (-4.0, 4.0)


@pytest.mark.parametrize("raw", [
    {"grid": {"n_pts": 10}},
    {"bogus": {}},
    {"grid": {"n_points": 100}},
    {"grid": {"n_points": 256.5}},
    {"scheme": {"dz": -1}},
    {"params": {"beta": -0.5}},
    {"state": {"mode": "triple"}},
    {"state": {"mode": "pair", "phases": [0.0]}},
    {"state": {"exact_sech": 1}},
    {"measurement": {"checkpoints": []}},
    {"measurement": {"checkpoints": [-1.0]}},
    {"measurement": {"denominator": "half"}},
    {"measurement": {"channels": ["gain", "magic"]}},
    {"measurement": {"slot_span": [-30, 30]}},
    {"sweep": {"workers": 0}},
    {"sweep": {"beta": [-1.0]}},
])
def test_config_rejections(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    (tmp_path / "bad.toml").write_text("[grid\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")


def test_sweep_points_and_with_point():
    cfg = config_from_dict({"sweep": {"epsilon": [1.7, 1.8], "separation": [2.0, 3.0, 4.0]}})
    pts = cfg.sweep.points(cfg)
    assert len(pts) == 6 and pts[0] == {"epsilon": 1.7, "separation": 2.0}
    p = cfg.with_point(pts[-1])
    assert p.params.epsilon == 1.8 and p.state.separation == 4.0
    with pytest.raises(ConfigError):
        cfg.with_point({"beta": -1.0})
    assert RunConfig().sweep.points(RunConfig()) == [{}]


def test_figure_configs():
    for which in ("fig1a", "fig1b", "fig2", "fig3"):
        cfg = figure_config(which)
        assert cfg.distance == max(cfg.measurement.checkpoints)
    assert figure_config("fig1a").params.is_conservative()
    assert figure_config("fig3").state.n_solitons == 4
    with pytest.raises(ConfigError):
        figure_config("fig9")

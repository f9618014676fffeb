import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from gsqglab.io import (ConfigError, parse_config, read_series, read_snapshot, read_snapshot_sequence,
                        write_series, write_snapshot)
from gsqglab.solver import SimulationConfig, forcing_function, initial_field
from gsqglab.spectral import TorusGrid


@settings(max_examples=25, deadline=None)
@given(values=arrays(np.float64, (8, 8), elements=st.floats(allow_nan=False, allow_infinity=False)),
       t=st.floats(0, 100), beta=st.floats(0.01, 0.99))
def test_snapshot_round_trip(tmp_path_factory, values, t, beta):
    path = tmp_path_factory.mktemp("snap") / "a.bin"
    write_snapshot(path, values, 2 * math.pi, t, beta)
    snap = read_snapshot(path)
    assert snap["values"].tobytes() == values.tobytes()
    assert (snap["n"], snap["t"], snap["beta"]) == (8, t, beta)


def test_snapshot_layout(tmp_path):
    path = tmp_path / "a.bin"
    v = np.arange(16, dtype=float).reshape(4, 4)
    write_snapshot(path, v, 1.5, 0.25, 0.5)
    raw = path.read_bytes()
    assert raw[:5] == b"GSQG1"
    assert struct.unpack_from("<I", raw, 5)[0] == 4
    assert struct.unpack_from("<ddd", raw, 9) == (1.5, 0.25, 0.5)
    assert struct.unpack_from("<d", raw, 33 + 8 * 5)[0] == v[1, 1]
    assert len(raw) == 33 + 8 * 16


def test_snapshot_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXXX" + bytes(28) + bytes(8))
    with pytest.raises(ValueError, match="magic"):
        read_snapshot(bad)
    short = tmp_path / "short.bin"
    short.write_bytes(b"GSQG1")
    with pytest.raises(ValueError, match="truncated"):
        read_snapshot(short)
    trunc = tmp_path / "trunc.bin"
    write_snapshot(trunc, np.zeros((4, 4)), 1.0, 0.0, 0.5)
    trunc.write_bytes(trunc.read_bytes()[:-8])
    with pytest.raises(ValueError, match="expected 16"):
        read_snapshot(trunc)
    with pytest.raises(ValueError):
        write_snapshot(tmp_path / "x.bin", np.zeros((3, 4)), 1.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        read_snapshot_sequence(tmp_path / "empty")


def test_snapshot_initial_and_forcing(tmp_path):
    g = TorusGrid(16)
    x, y = g.coords
    write_snapshot(tmp_path / "ic.bin", np.cos(x), g.length, 0.0, 0.5)
    theta = initial_field(f"snapshot:{tmp_path / 'ic.bin'}", g, amplitude=2.0)
    np.testing.assert_allclose(theta.values, 2 * np.cos(x))
    with pytest.raises(ValueError):
        initial_field(f"snapshot:{tmp_path / 'ic.bin'}", TorusGrid(32))
    seq = tmp_path / "seq"
    seq.mkdir()
    write_snapshot(seq / "b.bin", np.sin(y), g.length, 0.5, 0.5)
    write_snapshot(seq / "a.bin", np.cos(x), g.length, 0.0, 0.5)
    f = forcing_function(f"snapshots:{seq}", g)
    np.testing.assert_allclose(f(0.2).values, np.cos(x))
    np.testing.assert_allclose(f(0.7).values, np.sin(y))


def test_series_round_trip(tmp_path):
    path = tmp_path / "s.csv"
    times = [0.0, 0.1, 0.2]
    series = {"L1": [1.0, 1 / 3, 2.5e-17], "L2": [0.5, 0.25, 0.125]}
    write_series(path, times, series, ("time", "L1", "L2"))
    assert path.read_text().splitlines()[0] == "time,L1,L2"
    back = read_series(path)
    assert back["L1"].tolist() == series["L1"]
    assert back["time"].tolist() == times


def test_parse_config_values():
    cfg = parse_config("""
# comment
n = 64
beta = 0.5   # trailing comment
noise = false
name = two_mode
nus = 1e-3, 1e-2
length = 2pi
gamma = none
""")
    assert cfg == {"n": 64, "beta": 0.5, "noise": False, "name": "two_mode", "nus": [1e-3, 1e-2],
                   "length": 2 * math.pi, "gamma": None}
    assert cfg.lines["n"] == 3 and cfg.lines["gamma"] == 9
    SimulationConfig(n=cfg["n"], beta=cfg["beta"])


@pytest.mark.parametrize("text,line,fragment", [
    ("n = 64\nbeta 0.5\n", 2, "expected"),
    ("n = 64\nn = 32\n", 2, "duplicate"),
    ("\n\n1x = 3\n", 3, "invalid key"),
    ("dt =\n", 1, "missing value"),
])
def test_parse_config_errors(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:") and fragment in str(info.value)

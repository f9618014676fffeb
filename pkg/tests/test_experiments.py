"""Small, fast configurations of the experiment drivers; the full-size runs live in test_acceptance."""
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsqglab import __version__
from gsqglab import experiments as ex
from gsqglab.experiments import (FAIL, INCONCLUSIVE, PASS, ExperimentReport, config_hash, ensemble_stats,
                                 product_ratio)
from gsqglab.solver import SimulationConfig
from gsqglab.spectral import Field, TorusGrid

from oracles import two_pass_stats

SMALL = dict(n=32, cutoff=4, dt=2e-3, T=0.02, diag_every=2)


# --- report plumbing --------------------------------------------------------------

def test_report_status_precedence():
    rep = ExperimentReport("x", {})
    assert rep.status == INCONCLUSIVE and not rep.ok
    rep.completed = True
    assert rep.status == "COMPLETE" and rep.ok
    rep.add("a", PASS, 1.0, 0.5, "a >= 0.5")
    assert rep.status == PASS
    rep.add("b", INCONCLUSIVE, 1.0, 0.5, "b")
    assert rep.status == INCONCLUSIVE and not rep.ok
    rep.add("c", FAIL, 0.0, 0.5, "c")
    assert rep.status == FAIL
    assert rep.verdict("a").threshold == 0.5
    assert rep.summary_lines()[0] == "x: FAIL"


def test_report_hash_and_version(tmp_path):
    rep = ExperimentReport("x", {"n": 32, "beta": 0.5}, {"h": 1e-3})
    rep.metrics = {"arr": np.arange(3), "inf": math.inf, "flag": np.bool_(True)}
    rep.series["s"] = (["time", "v"], [[0.0, 1.0], [0.5, 2.0]])
    rep.write(tmp_path)
    d = json.loads((tmp_path / "report.json").read_text())
    assert d["code_version"] == __version__
    assert d["config_hash"] == config_hash({"config": {"n": 32, "beta": 0.5}, "params": {"h": 1e-3}})
    assert d["metrics"] == {"arr": [0, 1, 2], "inf": "inf", "flag": True}
    assert (tmp_path / "series" / "s.csv").read_text() == "time,v\n0.0,1.0\n0.5,2.0\n"
    other = ExperimentReport("x", {"n": 64, "beta": 0.5}, {"h": 1e-3}).to_dict()["config_hash"]
    assert other != d["config_hash"]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=64))
def test_ensemble_stats_matches_two_pass(values):
    mean, err = ensemble_stats(values)
    ref_mean, ref_err = two_pass_stats(values)
    scale = max(1.0, max(abs(v) for v in values))
    assert abs(mean - ref_mean) <= 1e-12 * scale
    assert abs(err - ref_err) <= 1e-9 * scale


def test_ensemble_stats_single_member():
    mean, err = ensemble_stats([[1.0, 2.0]])
    assert mean.tolist() == [1.0, 2.0] and np.all(np.isinf(err))


def test_loglog_slope_recovers_power():
    x = np.log([1e-3, 3e-3, 1e-2, 3e-2])
    slope, sigma = ex._loglog_slope(x, 1.7 * x + 0.3, np.full(4, 0.01))
    assert slope == pytest.approx(1.7, rel=1e-12) and sigma > 0
    assert ex._bracket(2.0, 3.0, 1.5) == PASS
    assert ex._bracket(0.0, 1.0, 1.5) == FAIL
    assert ex._bracket(1.0, 2.0, 1.5) == INCONCLUSIVE


def test_map_members_parallel_matches_serial():
    tasks = [(SimulationConfig(**SMALL, realization=r).as_dict(), [1e-2, 2e-2, 4e-2, 8e-2]) for r in range(2)]
    serial = ex.map_members(ex._viscosity_member, tasks, 1)
    parallel = ex.map_members(ex._viscosity_member, tasks, 2)
    for (ta, ra), (tb, rb) in zip(serial, parallel):
        assert ra.tobytes() == rb.tobytes()


# --- invariants ----------------------------------------------------------------------

def test_invariants_steady_mode_has_zero_drift():
    rep = ex.exp_invariants(dict(n=32, T=0.1, initial="single_mode", initial_amplitude=1.0), h=1e-2, levels=3)
    assert rep.ok
    assert max(rep.metrics["drift"]["L2"]) < 1e-13
    assert rep.verdict("convergence_order").note.startswith("all drifts")


def test_invariants_order_on_small_grid():
    rep = ex.exp_invariants(dict(n=64, T=0.2, initial_amplitude=4.0), h=8e-3, levels=3, drift_max=1e-4)
    assert rep.verdict("convergence_order").status == PASS
    assert rep.verdict("convergence_order").value >= 3.5


def test_invariants_cfl_failure():
    rep = ex.exp_invariants(dict(n=32, T=0.2, initial_amplitude=60.0), h=0.2, levels=2)
    assert rep.status == FAIL and rep.verdict("stability").status == FAIL
    assert "CFL" in rep.verdict("stability").value


def test_invariants_requires_deterministic_scheme():
    with pytest.raises(ValueError):
        ex.exp_invariants(dict(n=32, scheme="ito-euler", noise=True))


# --- pathwise bound --------------------------------------------------------------------

def test_pathwise_small():
    rep = ex.exp_pathwise_bound(dict(n=32, cutoff=4, T=0.04), members=2, h=8e-3, levels=2)
    assert rep.ok
    assert len(rep.metrics["slack_L1"]) == 2 and rep.steps == 2 * (5 + 10)


# --- viscosity ------------------------------------------------------------------------

def test_viscosity_rejects_bad_lists():
    with pytest.raises(ValueError):
        ex.exp_viscosity_sweep(SMALL, nus=[1e-2] * 4)
    with pytest.raises(ValueError):
        ex.exp_viscosity_sweep(SMALL, nus=[1e-2, 2e-2, 3e-2])
    with pytest.raises(ValueError):
        ex.exp_viscosity_sweep(dict(SMALL, alpha=0.2, beta=0.6))


def test_viscosity_short_time_taylor_regime():
    # smooth data, tiny T: theta^nu - theta ~ nu t Lap theta, so the squared error scales like nu^2
    rep = ex.exp_viscosity_sweep(dict(SMALL, alpha=0.4, beta=0.45), nus=(1e-3, 3e-3, 1e-2, 3e-2), members=2)
    assert rep.metrics["slope"] == pytest.approx(2.0, abs=0.05)
    assert rep.status == PASS


# --- stability ------------------------------------------------------------------------

def test_stability_zero_perturbation():
    rep = ex.exp_stability(dict(SMALL, alpha=0.4, beta=0.45), eps_list=[0.0], members=2)
    assert rep.status == PASS and rep.metrics["g"] == [0.0]


def test_stability_small_linear_response():
    rep = ex.exp_stability(dict(SMALL, alpha=0.4, beta=0.45), eps_list=(1e-3, 1e-2, 1e-1), members=2)
    assert rep.ok
    # g(eps) >= eps ||eta|| from t = 0, and the response barely grows over so short a horizon
    assert all(1.0 <= r < 1.01 for r in rep.metrics["ratio"])


def test_stability_forcing_mode():
    rep = ex.exp_stability(dict(SMALL, alpha=0.4, beta=0.45), eps_list=(1e-3, 1e-2), members=2, mode="forcing")
    assert rep.verdict("linear_response").status == PASS
    g = rep.metrics["g"]
    assert 0 < g[0] <= 1e-3 * SMALL["T"] * math.exp(rep.metrics["C_hat"] * SMALL["T"]) * (1 + 1e-9)
    with pytest.raises(ValueError):
        ex.exp_stability(SMALL, mode="sideways")


def test_perturbation_unit_norm():
    from gsqglab.spectral import sobolev_norm
    g = TorusGrid(64)
    eta = ex.perturbation_field(g, 0.45, 0)
    assert sobolev_norm(eta, 0.225 - 1) == pytest.approx(1.0, rel=1e-12)


# --- mollification ---------------------------------------------------------------------

def test_mollification_small_and_validation():
    rep = ex.exp_mollification(dict(SMALL, T=0.02), deltas=(0.5, 0.25, 0.125), members=1)
    cd = rep.metrics["c_delta"]
    assert all(b > a for a, b in zip(cd, cd[1:])) and cd[-1] < rep.metrics["c0"]
    assert rep.verdict("monotone_error").status == PASS
    with pytest.raises(ValueError):
        ex.exp_mollification(SMALL, deltas=(0.1, 0.2))


def test_mollification_sub_grid_delta_is_roundoff():
    # the Gaussian symbol at delta = 1e-9 equals 1 to double precision on the band
    rep = ex.exp_mollification(dict(SMALL, T=0.01), deltas=(1e-8, 1e-9), members=1)
    assert max(rep.metrics["error"]) < 1e-12


def test_negative_norm_constant_mode():
    g = TorusGrid(16)
    one = Field.from_values(g, np.ones((16, 16)))
    assert ex.negative_norm(one, 0.1) == pytest.approx(2 * math.pi, rel=1e-13)


# --- linear transport ------------------------------------------------------------------

def test_linear_identical_inputs_stay_identical():
    rep = ex.exp_linear_stability(dict(T=0.02, cutoff=4), levels=((32, 4e-3), (32, 2e-3)), members=1,
                                  perturbation=0.0, forcing_gap=0.0)
    assert rep.ok
    assert all(m == 0.0 for m in rep.metrics["margin_L1"])


def test_linear_small_refinement():
    rep = ex.exp_linear_stability(dict(T=0.02, cutoff=4), levels=((32, 4e-3), (32, 2e-3)), members=1)
    assert rep.ok
    assert min(rep.metrics["margin_L2"]) > 0
    assert rep.metrics["gamma"] == 0.5 and rep.metrics["b_H_gamma_sup"] > 0


# --- noise covariance -----------------------------------------------------------------

def test_noise_check_small():
    rep = ex.exp_noise_covariance(dict(n=32, cutoff=4), samples=2000)
    assert rep.ok and rep.metrics["max_z"] < 4


def test_noise_check_degenerate_spectrum():
    rep = ex.exp_noise_covariance(dict(n=32, noise=False), samples=1000)
    assert rep.ok and rep.metrics["max_deviation"] == 0.0


def test_noise_check_symmetric_pair():
    rep = ex.exp_noise_covariance(dict(n=32, cutoff=4), samples=2000,
                                  probes=[((0.3, 0.1), (2.0, 1.0)), ((2.0, 1.0), (0.3, 0.1))])
    a, b = (np.asarray(r["empirical"]) for r in rep.runs)
    np.testing.assert_allclose(a, b.T, atol=1e-14)
    with pytest.raises(ValueError):
        ex.exp_noise_covariance(samples=10)


# --- product inequality -----------------------------------------------------------------

def test_product_ratio_closed_form():
    g = TorusGrid(32)
    f = Field.from_function(g, lambda x, y: np.cos(x))
    alpha, beta = 0.3, 0.4
    expect = 2 ** (alpha - beta / 2) / (2 * math.pi * math.sqrt(2))
    assert product_ratio(f, f, alpha, beta, 2.0) == pytest.approx(expect, rel=1e-10)
    assert math.isnan(product_ratio(f, Field.zeros(g), alpha, beta, 2.0))


def test_product_inequality_small_and_validation():
    rep = ex.exp_product_inequality(0.3, 0.4, 2.0, samples=40, n=32)
    assert len(rep.series["ratios"][1]) == 40 and rep.metrics["max_ratio"][-1] > 0
    with pytest.raises(ValueError):
        ex.exp_product_inequality(0.4, 0.4, 3.0, samples=8)


# --- coercivity and simulate --------------------------------------------------------------

def test_coercivity_small():
    rep = ex.exp_coercivity(0.4, 0.6, radii=[1, 2, 4, 8, 32])
    assert rep.status == PASS and rep.metrics["K"] > 0
    assert len(rep.series["profile"][1]) == 15


def test_coercivity_fit_failure_is_fail():
    rep = ex.exp_coercivity(0.4, 0.6, radii=[1, 2, 4])
    assert rep.status == FAIL


def test_simulate_report():
    rep = ex.exp_simulate(dict(n=32, T=0.01, dt=2e-3, level=0.5, diag_every=1), snapshots=True)
    assert rep.status == "COMPLETE" and rep.steps == 5
    cols, rows = rep.series["diagnostics"]
    assert cols[:8] == ["time", "L1", "L2", "Lp", "Linf", "Hneg1bh", "Hba", "H0"]
    assert "decomposition_residual" in cols and len(rows) == 6 == len(rep.snapshots)
    assert rep.metrics["uniqueness_regime"] is True      # alpha 0.4, beta 0.5, p 4


@pytest.mark.xfail(strict=True, reason="tight linear-transport bound (same forcing) is violated at fixed N as dt -> 0: "
                                       "L1 is not contractive for the band-limited scheme; see the ledger")
def test_linear_tight_case_known_limitation():
    rep = ex.exp_linear_stability(levels=((64, 2e-3), (64, 1e-3), (64, 5e-4)), members=2, forcing_gap=0.0)
    assert rep.ok

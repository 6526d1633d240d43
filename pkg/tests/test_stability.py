"""Energy traces, trajectory-bound checks, detectability, and envelope fits."""

import numpy as np
import pytest

from hymem.comparison import ClassKFn, KLLFn, eval_kll
from hymem.memory_arc import constant_arc
from hymem.simulator import FlowInterval, SimOptions, SolutionRecord
from hymem.stability import (
    check_asymptotic_gain,
    check_bebs,
    check_global_prestability,
    check_iiss_bound,
    check_zero_input_detectability,
    derived_steady_state_v,
    fit_kll_beta,
    fit_linear_gamma,
    fit_linear_rho,
    fit_power_alpha,
    initial_sup_norm,
    input_energy,
)
from hymem.system_model import QuadcopterParams, linear_dde_system, zero_input

LINEAR_1 = ClassKFn("linear", 1.0)


def _fabricated(values, h=0.01, u_level=0.0):
    """Single-interval scalar record with a prescribed trajectory."""
    values = np.asarray(values, dtype=float)
    times = np.arange(values.size) * h
    system = linear_dde_system(a=-1.0, b=-0.5, r=1.0)
    arc = constant_arc(np.array([values[0]]), depth=1.0, grid_step=h)
    interval = FlowInterval(
        j=0,
        g0=0,
        times=times,
        states=values[:, None],
        derivs=None,
        inputs=np.full((values.size, 1), u_level),
    )
    return SolutionRecord(
        system=system,
        options=SimOptions(h=h, t_end=float(times[-1])),
        initial_arc=arc,
        input=zero_input(1),
        intervals=[interval],
        jumps=[],
        end_condition="horizon",
    )


def _decaying(t_end=10.0, h=0.01, u_level=0.0):
    n = int(round(t_end / h)) + 1
    return _fabricated(np.exp(-np.arange(n) * h), h=h, u_level=u_level)


def test_input_energy_exp_decay_closed_form(quad_records):
    # |u| = sqrt(0.29) e^{-t/2} integrates to 2 sqrt(0.29) (1 - e^{-10})
    trace = input_energy(quad_records["u1"], LINEAR_1)
    exact = 2.0 * np.sqrt(0.29) * (1.0 - np.exp(-10.0))
    assert trace.total == pytest.approx(exact, abs=1e-4)
    assert np.all(np.diff(trace.energy) >= -1e-15)


def test_input_energy_constant_is_linear(quad_records):
    trace = input_energy(quad_records["u3"], LINEAR_1)
    assert trace.total == pytest.approx(np.sqrt(2.29) * 20.0, rel=1e-9)
    mid = np.searchsorted(trace.t, 10.0)
    assert trace.energy[mid] == pytest.approx(np.sqrt(2.29) * trace.t[mid], rel=1e-9)


def test_input_energy_constant_across_jumps(quad_records):
    trace = input_energy(quad_records["u3"], LINEAR_1)
    same_t = np.nonzero(np.diff(trace.t) == 0.0)[0]
    assert same_t.size >= 99  # one duplicated node per jump
    np.testing.assert_array_equal(trace.energy[same_t], trace.energy[same_t + 1])


def test_input_energy_zero_run():
    rec = _decaying()
    assert input_energy(rec, LINEAR_1).total == 0.0


def test_iiss_bound_pass_and_fail():
    rec = _decaying()
    good = check_iiss_bound(rec, KLLFn(ClassKFn("linear", 2.0), 0.5), LINEAR_1, 1.0)
    assert good.passed
    assert good.max_ratio == pytest.approx(0.5, abs=1e-12)
    assert good.first_violation is None
    assert good.n_points == 1001

    bad = check_iiss_bound(rec, KLLFn(ClassKFn("linear", 0.5), 1.0), LINEAR_1, 1.0)
    assert not bad.passed
    assert bad.max_ratio == pytest.approx(2.0, abs=1e-12)
    assert bad.first_violation.t == 0.0


def test_bound_report_pass_is_monotone_in_tol():
    rec = _fabricated(np.linspace(1.0, 1.04, 101))
    beta = KLLFn(ClassKFn("linear", 1.0), 1e-9)  # essentially the constant 1
    loose = check_iiss_bound(rec, beta, LINEAR_1, 1.0, tol=0.05)
    tight = check_iiss_bound(rec, beta, LINEAR_1, 1.0, tol=0.01)
    assert loose.passed and not tight.passed
    assert loose.max_ratio == tight.max_ratio


def test_fit_kll_beta_recovers_exponential():
    rec = _decaying()
    beta = fit_kll_beta([rec])
    assert beta.rate == pytest.approx(1.0, rel=1e-6)
    assert 1.0 <= beta.gain.c < 1.0 + 1e-6
    # exact majorization at every fitted node
    t = np.arange(1001) * 0.01
    assert np.all(eval_kll(beta, 1.0, t, 0.0) >= np.exp(-t) - 1e-12)


def test_fit_kll_beta_rejects_non_decay():
    with pytest.raises(ValueError, match="does not decay"):
        fit_kll_beta([_fabricated(np.ones(200))])
    with pytest.raises(ValueError, match="identically zero"):
        fit_kll_beta([_fabricated(np.zeros(200))])


def test_fit_kll_beta_slowest_run_sets_rate():
    n = 1001
    t = np.arange(n) * 0.01
    fast = _fabricated(np.exp(-2.0 * t))
    slow = _fabricated(np.exp(-0.5 * t))
    beta = fit_kll_beta([fast, slow])
    assert beta.rate == pytest.approx(0.5, rel=1e-6)


def test_bebs_reduces_to_initial_norm_when_alphas_match():
    rec = _decaying()
    alpha = ClassKFn("power", 1.0, 2.0)
    report = check_bebs(rec, alpha, alpha, LINEAR_1)
    assert report.passed
    assert report.max_ratio == pytest.approx(1.0, abs=1e-6)
    assert report.params["initial_norm"] == pytest.approx(1.0)


def test_bebs_flags_growth_beyond_energy():
    t = np.arange(501) * 0.01
    rec = _fabricated(1.0 + t)
    alpha = ClassKFn("power", 1.0, 2.0)
    report = check_bebs(rec, alpha, alpha, LINEAR_1)
    assert not report.passed
    assert report.first_violation is not None
    assert report.first_violation.t < 0.1
    with pytest.raises(ValueError, match="K-infinity"):
        check_bebs(rec, ClassKFn("saturating", 1.0), alpha, LINEAR_1)


def test_asymptotic_gain_zero_energy_uses_floor():
    report = check_asymptotic_gain([_decaying()], LINEAR_1)
    assert report.passed
    (entry,) = report.params["per_run"]
    assert not entry["vacuous"]
    assert entry["energy_total"] == 0.0
    assert entry["ratio"] == pytest.approx(np.exp(-7.5) / 1e-2, rel=1e-6)


def test_asymptotic_gain_converged_failure_is_real():
    report = check_asymptotic_gain([_fabricated(np.ones(1001))], LINEAR_1)
    assert not report.passed
    (entry,) = report.params["per_run"]
    assert not entry["vacuous"]


def test_asymptotic_gain_unconverged_energy_is_vacuous():
    rec = _fabricated(np.ones(1001), u_level=1.0)
    report = check_asymptotic_gain([rec], ClassKFn("linear", 0.01))
    assert report.passed
    (entry,) = report.params["per_run"]
    assert entry["vacuous"]
    assert entry["raw_ratio"] == pytest.approx(1.0 / 0.1, rel=1e-6)
    assert entry["ratio"] == 0.0


def test_asymptotic_gain_tail_fraction_validation():
    with pytest.raises(ValueError, match="tail_fraction"):
        check_asymptotic_gain([_decaying()], LINEAR_1, tail_fraction=1.5)


def test_global_prestability_pass_and_fail():
    rec = _decaying()
    good = check_global_prestability([rec], ClassKFn("linear", 1.0), LINEAR_1)
    assert good.passed
    assert good.max_ratio == pytest.approx(1.0, abs=1e-12)
    bad = check_global_prestability([rec], ClassKFn("linear", 0.5), LINEAR_1)
    assert not bad.passed


def test_detectability_tail_verdicts():
    decaying = _decaying()
    verdict = check_zero_input_detectability([decaying], lambda row: True, 2.0)
    assert verdict.passed
    assert verdict.tail_max == pytest.approx(np.exp(-8.0), rel=1e-9)

    stuck = _fabricated(np.full(1001, 0.5))
    verdict = check_zero_input_detectability([stuck], lambda row: True, 2.0)
    assert not verdict.passed
    assert verdict.tail_max == pytest.approx(0.5)


def test_detectability_excludes_runs_leaving_n():
    verdict = check_zero_input_detectability(
        [_decaying()], lambda row: row[0] <= 0.9, 2.0
    )
    assert verdict.excluded == [0]
    assert not verdict.per_run[0]["included"]
    assert verdict.passed  # nothing qualified, nothing failed


def test_detectability_rejects_forced_runs():
    with pytest.raises(ValueError, match="nonzero input"):
        check_zero_input_detectability([_decaying(u_level=0.3)], lambda row: True, 2.0)


def test_derived_steady_state_velocities():
    params = QuadcopterParams()
    np.testing.assert_allclose(
        derived_steady_state_v(params, [1.5, 0.0, -0.2]), [2.5, 0.0, 0.0]
    )
    np.testing.assert_allclose(derived_steady_state_v(params, [0.0, 0.0, 0.0]), 0.0)
    np.testing.assert_allclose(derived_steady_state_v(params, [-1.4]), [-2.0])


def test_fitted_rho_majorizes_calibration_run(quad_records):
    zero_runs = [quad_records[n] for n in ("zero_05", "zero_1", "zero_2")]
    beta = fit_kll_beta(zero_runs)
    rho = fit_linear_rho(quad_records["u1"], beta)
    report = check_iiss_bound(
        quad_records["u1"], beta, rho, initial_sup_norm(quad_records["u1"]), tol=1e-6
    )
    assert report.passed


def test_fit_linear_gamma_and_power_alpha():
    rec = _decaying(u_level=1.0)
    gamma = fit_linear_gamma([rec])
    assert gamma.c == pytest.approx(np.exp(-7.5) / 10.0, rel=1e-6)
    alpha = fit_power_alpha([_decaying()])
    assert alpha.family == "power" and alpha.p == 1.0
    assert alpha.c == pytest.approx(1.0, rel=1e-6)
    with pytest.raises(ValueError, match="positive input energy"):
        fit_linear_gamma([_decaying()])
    with pytest.raises(ValueError, match="positive initial norm"):
        fit_power_alpha([_fabricated(np.zeros(100))])

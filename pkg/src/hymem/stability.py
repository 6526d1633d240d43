"""Trajectory-level stability checks: energy integrals and norm bounds.

Every check here compares the recorded distance |x(t,j)|_W against a bound
built from comparison functions and the cumulative input energy
E(t,j) = sum_n int rho(|u(s,n)|) ds.  Results come back as BoundReport
with the per-run worst ratio, so pass/fail is monotone in the tolerance.

Fitting helpers (fit_kll_beta, fit_linear_rho, ...) produce the comparison
functions from designated calibration runs; verification should use
disjoint runs to keep the certification non-circular.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .comparison import ClassKFn, KLLFn, eval_kll, evaluate, numeric_inverse
from .memory_arc import sup_norm_to_set


@dataclass
class EnergyTrace:
    """Cumulative flow integral of rho(|u|), constant across jumps."""

    t: np.ndarray
    j: np.ndarray
    energy: np.ndarray

    @property
    def total(self) -> float:
        return float(self.energy[-1])


@dataclass(frozen=True)
class PointRatio:
    t: float
    j: int
    ratio: float


@dataclass
class BoundReport:
    """Pointwise ratio |x|_W / bound over one or more runs."""

    name: str
    tol: float
    max_ratio: float
    n_points: int
    first_violation: PointRatio | None
    params: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_ratio <= 1.0 + self.tol


@dataclass
class DetectabilityVerdict:
    """Tail-convergence verdict over zero-input runs restricted to N."""

    tol: float
    tail_window: float
    tail_max: float
    per_run: list[dict]
    excluded: list[int]
    passed: bool


def _describe(f) -> dict:
    if isinstance(f, KLLFn):
        return {"kind": "KLL", "gain": _describe(f.gain), "rate": f.rate}
    if isinstance(f, ClassKFn):
        return {"kind": "classK", "family": f.family, "c": f.c, "p": f.p}
    return {"kind": type(f).__name__}


def _flat_dist(record):
    """Flattened (t, j, |x|_W) arrays over all recorded nodes, in hybrid order."""
    w = record.system.target
    n = record.system.n_cont
    ts, js, ds = [], [], []
    for iv in record.intervals:
        cont = iv.states[:, :n]
        ts.append(iv.times)
        js.append(np.full(iv.times.size, iv.j, dtype=int))
        ds.append(np.maximum(np.linalg.norm(cont, axis=1) - w.radius, 0.0))
    return np.concatenate(ts), np.concatenate(js), np.concatenate(ds)


def initial_sup_norm(record) -> float:
    return sup_norm_to_set(record.initial_arc, record.system.target)


def input_energy(record, rho: ClassKFn) -> EnergyTrace:
    """Trapezoidal cumulative integral of rho(|u|) along the flow."""
    ts, js, es = [], [], []
    total = 0.0
    for iv in record.intervals:
        vals = evaluate(rho, np.linalg.norm(iv.inputs, axis=1))
        if iv.times.size > 1:
            panels = 0.5 * (vals[1:] + vals[:-1]) * np.diff(iv.times)
            cum = np.concatenate(([0.0], np.cumsum(panels)))
        else:
            cum = np.zeros(1)
        ts.append(iv.times)
        js.append(np.full(iv.times.size, iv.j, dtype=int))
        es.append(total + cum)
        total += float(cum[-1])
    return EnergyTrace(np.concatenate(ts), np.concatenate(js), np.concatenate(es))


def _ratio_report(name, tol, ts, js, dist, bound, params) -> BoundReport:
    ratio = dist / np.maximum(bound, 1e-300)
    bad = np.nonzero(ratio > 1.0 + tol)[0]
    first = None
    if bad.size:
        i = bad[0]
        first = PointRatio(float(ts[i]), int(js[i]), float(ratio[i]))
    return BoundReport(
        name=name,
        tol=tol,
        max_ratio=float(ratio.max()) if ratio.size else 0.0,
        n_points=int(ratio.size),
        first_violation=first,
        params=params,
    )


def check_iiss_bound(
    record, beta: KLLFn, rho: ClassKFn, initial_norm: float, tol: float = 1e-2
) -> BoundReport:
    """Verify |x(t,j)|_W <= max{beta(initial_norm, t, j), E(t,j)} (1 + tol)."""
    ts, js, dist = _flat_dist(record)
    energy = input_energy(record, rho)
    decay = eval_kll(beta, initial_norm, ts, js.astype(float))
    bound = np.maximum(decay, energy.energy)
    params = {
        "beta": _describe(beta),
        "rho": _describe(rho),
        "initial_norm": initial_norm,
        "energy_total": energy.total,
    }
    return _ratio_report("iISS trajectory bound", tol, ts, js, dist, bound, params)


def check_bebs(
    record, alpha1: ClassKFn, alpha2: ClassKFn, rho: ClassKFn, tol: float = 1e-2
) -> BoundReport:
    """Verify |x(t,j)|_W <= alpha1^{-1}(alpha2(nu) + E(t,j)) (1 + tol).

    nu is the initial arc's sup norm; the inverse is evaluated numerically
    point by point.
    """
    if not alpha1.k_infinity:
        raise ValueError("alpha1 must be K-infinity for the inverse to exist")
    ts, js, dist = _flat_dist(record)
    energy = input_energy(record, rho)
    nu = initial_sup_norm(record)
    base = float(evaluate(alpha2, nu))
    bound = np.array(
        [numeric_inverse(alpha1, base + e, tol=1e-10) for e in energy.energy]
    )
    params = {
        "alpha1": _describe(alpha1),
        "alpha2": _describe(alpha2),
        "rho": _describe(rho),
        "initial_norm": nu,
        "energy_total": energy.total,
    }
    return _ratio_report("bounded energy bounded state", tol, ts, js, dist, bound, params)


def check_asymptotic_gain(
    solutions, gamma: ClassKFn, tail_fraction: float = 0.25, tol: float = 1e-2
) -> BoundReport:
    """Verify the tail max of |x|_W against the total gamma-energy.

    The limsup is read as the max over the final tail_fraction of each run.
    A run that would fail the finite-window ratio but whose energy has not
    leveled off (more than 5% of the total accrues in the last tenth)
    cannot falsify the bound, since the right-hand side still grows; it is
    scored as a vacuous pass with the raw ratio reported.  Zero-energy runs
    use tol as an absolute floor for the right-hand side.
    """
    if not 0 < tail_fraction < 1:
        raise ValueError("tail_fraction must lie in (0, 1)")
    worst = (0.0, None)
    per_run = []
    for rec in solutions:
        ts, js, dist = _flat_dist(rec)
        energy = input_energy(rec, gamma)
        t_end = float(ts[-1])
        cut = (1.0 - tail_fraction) * t_end
        tail = ts >= cut - 1e-9
        if not tail.any():
            raise ValueError("tail window is empty; run too short")
        i_tail = np.nonzero(tail)[0]
        i_max = i_tail[np.argmax(dist[i_tail])]
        tail_max = float(dist[i_max])
        total = energy.total
        late = total - float(np.interp(0.9 * t_end, energy.t, energy.energy))
        not_converged = total > tol and late > 0.05 * total
        bound = max(total, tol)
        raw = tail_max / bound
        vacuous = raw > 1.0 + tol and not_converged
        ratio = 0.0 if vacuous else raw
        per_run.append(
            {
                "tail_max": tail_max,
                "energy_total": total,
                "raw_ratio": raw,
                "vacuous": vacuous,
                "ratio": ratio,
            }
        )
        if ratio > worst[0]:
            worst = (ratio, PointRatio(float(ts[i_max]), int(js[i_max]), ratio))
    first = worst[1] if worst[0] > 1.0 + tol else None
    return BoundReport(
        name="asymptotic gain",
        tol=tol,
        max_ratio=worst[0],
        n_points=len(per_run),
        first_violation=first,
        params={
            "gamma": _describe(gamma),
            "tail_fraction": tail_fraction,
            "per_run": per_run,
        },
    )


def check_global_prestability(
    solutions, alpha: ClassKFn, gamma: ClassKFn, tol: float = 1e-2
) -> BoundReport:
    """Verify |x(t,j)|_W <= max{alpha(nu), E_gamma(t,j)} (1 + tol) pointwise."""
    all_ts, all_js, all_dist, all_bound = [], [], [], []
    for rec in solutions:
        ts, js, dist = _flat_dist(rec)
        energy = input_energy(rec, gamma)
        nu = initial_sup_norm(rec)
        bound = np.maximum(float(evaluate(alpha, nu)), energy.energy)
        all_ts.append(ts)
        all_js.append(js)
        all_dist.append(dist)
        all_bound.append(bound)
    params = {"alpha": _describe(alpha), "gamma": _describe(gamma), "n_runs": len(solutions)}
    return _ratio_report(
        "global pre-stability",
        tol,
        np.concatenate(all_ts),
        np.concatenate(all_js),
        np.concatenate(all_dist),
        np.concatenate(all_bound),
        params,
    )


def check_zero_input_detectability(
    solutions, n_predicate, tail_window: float, tol: float = 1e-2
) -> DetectabilityVerdict:
    """Tail test: qualifying zero-input runs must satisfy |x|_W <= tol at the end.

    n_predicate(state_row) -> bool restricts attention to runs that stay in
    N throughout; violating runs are excluded and listed.  tail_window is a
    duration in flow seconds measured back from each run's end.  Runs with
    any nonzero recorded input raise.
    """
    per_run = []
    excluded = []
    worst = 0.0
    for idx, rec in enumerate(solutions):
        peak_u = max(
            (float(np.abs(iv.inputs).max()) for iv in rec.intervals if iv.inputs.size),
            default=0.0,
        )
        if peak_u > 0.0:
            raise ValueError(f"run {idx} has nonzero input; detectability needs u = 0")
        in_n = all(
            bool(n_predicate(row)) for iv in rec.intervals for row in iv.states
        )
        if not in_n:
            excluded.append(idx)
            per_run.append({"included": False, "reason": "left N"})
            continue
        ts, _, dist = _flat_dist(rec)
        cut = float(ts[-1]) - tail_window
        tail = dist[ts >= cut - 1e-9]
        tail_max = float(tail.max()) if tail.size else 0.0
        worst = max(worst, tail_max)
        per_run.append({"included": True, "tail_max": tail_max})
    return DetectabilityVerdict(
        tol=tol,
        tail_window=tail_window,
        tail_max=worst,
        per_run=per_run,
        excluded=excluded,
        passed=worst <= tol,
    )


def derived_steady_state_v(params, u_const) -> np.ndarray:
    """Saturated velocity fixed point per channel for constant input.

    A channel whose constant input exceeds the actuator bound settles at
    (u_i - sign(u_i) u_max) / d_c; unsaturated channels regulate to zero.
    """
    u = np.atleast_1d(np.asarray(u_const, dtype=float))
    out = np.zeros_like(u)
    over = np.abs(u) > params.u_max
    out[over] = (u[over] - np.sign(u[over]) * params.u_max) / params.d_c
    return out


# ---------------------------------------------------------------------------
# fitting


def fit_kll_beta(zero_input_solutions) -> KLLFn:
    """Fit the smallest-gain exponential envelope majorizing zero-input runs.

    The decay rate comes from a log-linear regression on each run's
    reverse running-max envelope (the slowest run wins); the linear gain is
    then inflated so beta(nu, t, j) >= |x(t,j)|_W holds exactly at every
    fitted point.  Zero trajectories contribute no constraint; a run whose
    envelope does not decay raises.
    """
    rates = []
    constraints = []  # (nu, lengths, dists)
    for idx, rec in enumerate(zero_input_solutions):
        ts, js, dist = _flat_dist(rec)
        nu = initial_sup_norm(rec)
        if nu <= 0 or dist.max() <= 0:
            continue
        lengths = ts + js
        env = np.maximum.accumulate(dist[::-1])[::-1]
        if env[-1] > 0.5 * env[0]:
            raise ValueError(f"run {idx} does not decay; cannot fit an envelope")
        floor = max(1e-12, 1e-6 * float(env.max()))
        keep = env > floor
        slope, _ = np.polyfit(lengths[keep], np.log(env[keep]), 1)
        if slope >= 0:
            raise ValueError(f"run {idx} does not decay; cannot fit an envelope")
        rates.append(-slope)
        constraints.append((nu, lengths, dist))
    if not constraints:
        raise ValueError("no usable runs: all trajectories are identically zero")
    rate = min(rates)
    gain = max(
        float(np.max(dist * np.exp(rate * lengths))) / nu
        for nu, lengths, dist in constraints
    )
    return KLLFn(gain=ClassKFn("linear", gain), rate=rate)


def fit_linear_rho(record, beta: KLLFn) -> ClassKFn:
    """Smallest linear rho making the iISS bound hold on a calibration run.

    Wherever the decay term beta(nu, t, j) already covers |x|_W the point
    is unconstrained; elsewhere the linear energy must cover it, so the
    slope is the worst ratio of distance to unit-rho energy.
    """
    ts, js, dist = _flat_dist(record)
    nu = initial_sup_norm(record)
    decay = eval_kll(beta, nu, ts, js.astype(float))
    unit = input_energy(record, ClassKFn("linear", 1.0)).energy
    need = (dist > decay) & (unit > 0)
    c = float(dist.max()) / float(unit[-1]) if unit[-1] > 0 else 1.0
    if need.any():
        c = max(c, float(np.max(dist[need] / unit[need])))
    return ClassKFn("linear", c * (1.0 + 1e-9))


def fit_linear_gamma(solutions, tail_fraction: float = 0.25) -> ClassKFn:
    """Linear gamma calibrated so each run's tail max equals its gamma-energy."""
    c = 0.0
    for rec in solutions:
        ts, _, dist = _flat_dist(rec)
        cut = (1.0 - tail_fraction) * float(ts[-1])
        tail_max = float(dist[ts >= cut - 1e-9].max())
        total = input_energy(rec, ClassKFn("linear", 1.0)).energy[-1]
        if total > 0:
            c = max(c, tail_max / float(total))
    if c <= 0:
        raise ValueError("no run with positive input energy to calibrate gamma")
    return ClassKFn("linear", c * (1.0 + 1e-9))


def fit_power_alpha(zero_input_solutions) -> ClassKFn:
    """Linear overshoot bound: worst peak-to-initial-norm ratio across runs."""
    c = 0.0
    for rec in zero_input_solutions:
        _, _, dist = _flat_dist(rec)
        nu = initial_sup_norm(rec)
        if nu > 0:
            c = max(c, float(dist.max()) / nu)
    if c <= 0:
        raise ValueError("no run with positive initial norm")
    return ClassKFn("power", c * (1.0 + 1e-9), 1.0)

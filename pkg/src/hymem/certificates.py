"""Krasovskii functionals and certificate condition checkers.

The functional V(phi) = sigma_l |psi(0,0)|^2 + mu_l int_{-r}^0 e^{eta s}
|psi(s, k(s))|^2 ds is evaluated by trapezoidal quadrature split at jump
abscissae, so no panel crosses a discontinuity.  Checkers run over whole
solution records through a vectorized trace (same quadrature, computed by
convolution against the exponential kernel) and report violations with
located hybrid times and margins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .comparison import ClassKFn, evaluate
from .hybrid_time import HybridTimePoint
from .memory_arc import MemoryArc, _interp_rows, window
from .system_model import (
    QuadcopterParams,
    a_bar,
    b_bar,
    gain_matrix,
    requires_grid_alignment,
)

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

VIOLATION_CAP = 100  # reports keep this many located violations plus a count


@dataclass(frozen=True)
class KrasovskiiFunctional:
    """Per-mode weights sigma, mu (indexed by mode - 1), decay eta, delay r."""

    sigma: tuple[float, ...]
    mu: tuple[float, ...]
    eta: float
    r: float

    def __post_init__(self):
        sigma = tuple(float(s) for s in np.atleast_1d(self.sigma))
        mu = tuple(float(m) for m in np.atleast_1d(self.mu))
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "mu", mu)
        if len(sigma) != len(mu):
            raise ValueError("sigma and mu must list one weight per mode")
        if any(s <= 0 for s in sigma) or any(m <= 0 for m in mu):
            raise ValueError("functional weights must be positive")
        if self.eta < 0 or self.r <= 0:
            raise ValueError("need eta >= 0 and r > 0")

    def weights(self, mode: int) -> tuple[float, float]:
        if not 1 <= mode <= len(self.sigma):
            raise ValueError(f"mode {mode} has no weights")
        return self.sigma[mode - 1], self.mu[mode - 1]


@dataclass(frozen=True)
class CertificateSpec:
    """A candidate certificate: the functional plus comparison functions.

    alpha1 and alpha2 must be K-infinity.  v is the optional exponential
    decay rate in (0, 1]; psi_coeff configures the storage dissipation as
    psi(phi) = psi_coeff * V(phi); rho_hat defaults to rho.
    """

    functional: KrasovskiiFunctional
    alpha1: ClassKFn
    alpha2: ClassKFn
    alpha3: ClassKFn | None = None
    rho: ClassKFn | None = None
    v: float | None = None
    psi_coeff: float | None = None
    rho_hat: ClassKFn | None = None

    def __post_init__(self):
        if not (self.alpha1.k_infinity and self.alpha2.k_infinity):
            raise ValueError("alpha1 and alpha2 must be K-infinity families")
        if self.v is not None and not 0 < self.v <= 1:
            raise ValueError("exponential rate v must lie in (0, 1]")


@dataclass(frozen=True)
class Violation:
    condition: str
    t: float
    j: int
    lhs: float
    rhs: float
    note: str | None = None

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs


@dataclass
class CheckReport:
    """Outcome of one checker: per-condition verdicts and located violations."""

    name: str
    tol: float
    conditions: dict[str, bool]
    violations: list[Violation]
    worst_margin: float
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.conditions.values())


def default_tol(h: float) -> float:
    """Default check tolerance, 1e-3 at h = 0.005, scaled linearly with h."""
    return 1e-3 * (h / 0.005)


def certificate_alpha_bounds(v: KrasovskiiFunctional) -> tuple[ClassKFn, ClassKFn]:
    """The sandwich bounds implied by the functional itself.

    alpha1(s) = (min sigma) s^2 and alpha2(s) = max(sigma + mu r) s^2.
    """
    lo = min(v.sigma)
    hi = max(s + m * v.r for s, m in zip(v.sigma, v.mu))
    return ClassKFn("power", lo, 2.0), ClassKFn("power", hi, 2.0)


def eval_functional(v: KrasovskiiFunctional, arc: MemoryArc, mode: int = 1) -> float:
    """Evaluate V on one arc: head term plus split trapezoidal quadrature.

    The integrand reads the arc at the maximal jump offset (post-jump values
    inside the window), and the quadrature never spans a jump: each stored
    piece is integrated over its overlap with [-r, 0].
    """
    sig, mu = v.weights(mode)
    head = arc.head[: arc.n_cont]
    deepest = min(float(p.s[0]) for p in arc.pieces)
    if deepest > -v.r + 1e-9:
        raise ValueError(
            f"arc covers [{deepest}, 0] but the functional integrates from {-v.r}"
        )
    integral = 0.0
    for piece in arc.pieces:
        lo = max(float(piece.s[0]), -v.r)
        hi = min(float(piece.s[-1]), 0.0)
        if hi < lo - 1e-12:
            continue
        inner = (piece.s > lo + 1e-12) & (piece.s < hi - 1e-12)
        s_nodes = np.concatenate(([lo], piece.s[inner], [hi]))
        vals = [_interp_rows(piece.s, piece.values, lo)[: arc.n_cont]]
        vals.extend(row[: arc.n_cont] for row in piece.values[inner])
        vals.append(_interp_rows(piece.s, piece.values, hi)[: arc.n_cont])
        sq = np.array([float(row @ row) for row in vals])
        integral += float(_trapezoid(np.exp(v.eta * s_nodes) * sq, s_nodes))
    return sig * float(head @ head) + mu * integral


def _mode_of(record, interval) -> int:
    idx = record.system.mode_index
    if idx is None:
        return 1
    return int(round(interval.states[0, idx]))


def _depth_for_span(record, at: HybridTimePoint, span: float) -> float:
    """Hybrid depth that makes a window cover `span` seconds behind `at`."""
    k = sum(1 for e in record.jumps if at.t - span - 1e-9 <= e.t and e.j < at.j)
    return span + k


def numeric_dini(
    v: KrasovskiiFunctional, solution, at: HybridTimePoint, h: float | None = None
) -> float:
    """Forward-difference Dini estimate (V(t+h) - V(t)) / h along a flow interval.

    Both points must be interior to the same flow interval; straddling a jump
    or running off the interval end raises.
    """
    step = solution.options.h
    if h is None:
        h = step
    n_steps = int(round(h / step))
    if abs(h - n_steps * step) > 1e-9 or n_steps < 1:
        raise ValueError("h must be a positive multiple of the record step")
    if not 0 <= at.j < len(solution.intervals):
        raise ValueError(f"no flow interval with j = {at.j}")
    interval = solution.intervals[at.j]
    pos = (at.t - interval.times[0]) / step
    i = int(round(pos))
    if abs(pos - i) > 1e-6 or not 0 <= i < interval.times.size:
        raise ValueError(f"{at} is not a recorded node")
    if i + n_steps >= interval.times.size:
        raise ValueError(f"{at} + h straddles a jump or the end of its interval")
    mode = _mode_of(solution, interval)
    w0 = window(solution, at, _depth_for_span(solution, at, v.r))
    at1 = HybridTimePoint(float(interval.times[i + n_steps]), at.j)
    w1 = window(solution, at1, _depth_for_span(solution, at1, v.r))
    return (eval_functional(v, w1, mode) - eval_functional(v, w0, mode)) / h


def _flow_bound_coeffs(
    params: QuadcopterParams, v: KrasovskiiFunctional, mode: int, eps1: float, eps2: float
) -> tuple[float, float, float]:
    """Per-mode coefficients (c0, cr, cu) of the derived flow bound."""
    if eps1 <= 0 or eps2 <= 0:
        raise ValueError("eps1 and eps2 must be positive")
    sig, mu = v.weights(mode)
    a = a_bar(params)
    lam = float(np.linalg.eigvalsh(0.5 * (a + a.T))[-1])
    bn2 = float(np.linalg.norm(b_bar(params), 2)) ** 2
    kn2 = float(np.linalg.norm(gain_matrix(params, mode), 2)) ** 2
    c0 = 2.0 * sig * lam + mu + eps1 + eps2
    cr = sig**2 * bn2 * kn2 / eps1 - mu * math.exp(-v.eta * v.r)
    cu = sig**2 * bn2 / eps2
    return c0, cr, cu


def analytic_flow_bound(
    params: QuadcopterParams,
    cert: CertificateSpec,
    eps1: float,
    eps2: float,
    arc: MemoryArc,
    u,
) -> float:
    """The derived upper bound on D+V along the flow, at one arc.

    c0 |psi(0,0)|^2 + cr |psi(-r)|^2 + cu |u|^2 with the Young's-inequality
    coefficients of the functional's flow estimate.  The mode is read from
    the arc head.
    """
    head = arc.head
    mode = int(round(head[6])) if head.size >= 7 else 1
    c0, cr, cu = _flow_bound_coeffs(params, cert.functional, mode, eps1, eps2)
    psi0 = head[: arc.n_cont]
    psir = arc.delayed(-cert.functional.r)[: arc.n_cont]
    un = float(np.linalg.norm(np.atleast_1d(u)))
    return (
        c0 * float(psi0 @ psi0) + cr * float(psir @ psir) + cu * un**2
    )


# ---------------------------------------------------------------------------
# vectorized trace over a whole record


@dataclass
class TraceBlock:
    """Per-node certificate quantities along one flow interval."""

    j: int
    times: np.ndarray
    v: np.ndarray
    dini: np.ndarray  # forward difference, NaN at the interval's last node
    dist: np.ndarray  # |x|_W, own side at jump rows
    window_sup: np.ndarray  # sup of |x|_W over the functional's support window
    psi_r_sq: np.ndarray  # |psi(-r, k(-r))|^2
    u_norm: np.ndarray
    mode: int


@dataclass
class CertificateTrace:
    blocks: list[TraceBlock]
    jump_v: list[tuple[float, int, float, float]]  # (t, pre-jump j, V_pre, V_post)


def certificate_trace(v: KrasovskiiFunctional, record) -> CertificateTrace:
    """Evaluate V, its forward Dini difference, |x|_W and the window sup
    at every recorded node of a solution, with the same split-at-jumps
    trapezoid as eval_functional.

    Costs O(nodes * r/h) via convolution against the exponential kernel.
    """
    h = record.options.h
    (r_steps,) = requires_grid_alignment((v.r,), h)
    n_cont = record.system.n_cont
    w = record.system.target
    radius = w.radius

    g_min = min(int(round(p.s[0] / h)) for p in record.initial_arc.pieces)
    g_max = record.intervals[-1].g0 + record.intervals[-1].times.size - 1
    off = -g_min
    if off < r_steps:
        raise ValueError(
            "initial history is shallower than the functional's delay window"
        )
    size = off + g_max + 1
    dense_sq = np.zeros(size)
    pre_sq: dict[int, float] = {}
    dense_dist = np.zeros(size)
    pre_dist: dict[int, float] = {}

    def sq_and_dist(states):
        cont = states[:, :n_cont]
        sq = np.einsum("ij,ij->i", cont, cont)
        dist = np.maximum(np.sqrt(sq) - radius, 0.0)
        return sq, dist

    pieces = [
        (int(round(p.s[0] / h)), p.values) for p in record.initial_arc.pieces
    ] + [(iv.g0, iv.states) for iv in record.intervals]
    for g0, states in pieces:
        sq, dist = sq_and_dist(np.asarray(states))
        a = g0 + off
        if g0 > g_min:
            # keep the time-left-limit of a shared boundary node (first write wins)
            pre_sq.setdefault(g0, float(dense_sq[a]))
            pre_dist.setdefault(g0, float(dense_dist[a]))
        dense_sq[a : a + sq.size] = sq
        dense_dist[a : a + dist.size] = dist

    pre_sq_arr = dense_sq.copy()
    pre_dist_arr = dense_dist.copy()
    for g, val in pre_sq.items():
        pre_sq_arr[g + off] = val
    for g, val in pre_dist.items():
        pre_dist_arr[g + off] = val

    # windowed integral of e^{eta s}|psi|^2 by convolution, pre-side head
    q = np.arange(r_steps + 1)
    wts = np.exp(-v.eta * q * h)
    kernel_a = np.zeros(r_steps + 1)
    kernel_a[1:] = wts[1:]
    kernel_b = wts[:r_steps]
    conv_a = np.convolve(dense_sq, kernel_a)
    conv_b = np.convolve(pre_sq_arr, kernel_b)
    integral_pre = 0.5 * h * (conv_a[off : off + g_max + 1] + conv_b[off : off + g_max + 1])

    # sliding sup of |x|_W over the window's interior samples (both jump sides)
    both_dist = np.maximum(dense_dist, pre_dist_arr)
    if size >= r_steps:
        sw = np.lib.stride_tricks.sliding_window_view(both_dist, r_steps)
        interior_sup = sw.max(axis=1)  # window [p, p + r_steps - 1]
    else:
        interior_sup = np.zeros(1)

    blocks: list[TraceBlock] = []
    jump_v: list[tuple[float, int, float, float]] = []
    for idx, iv in enumerate(record.intervals):
        g0 = iv.g0
        k = iv.times.size
        sig, mu = v.weights(_mode_of(record, iv))
        head_sq, head_dist = sq_and_dist(iv.states)
        ig = integral_pre[g0 : g0 + k].copy()
        if idx > 0:
            # post-jump row: the head term of the last panel is its own side
            ig[0] += 0.5 * h * (head_sq[0] - pre_sq_arr[g0 + off])
        v_nodes = sig * head_sq + mu * ig
        dini = np.full(k, np.nan)
        if k > 1:
            dini[:-1] = np.diff(v_nodes) / h
        sup = np.empty(k)
        lo = g0 + off - r_steps
        sup_interior = interior_sup[lo : lo + k]
        sup[:] = np.maximum(sup_interior, head_dist)
        if idx > 0:
            sup[0] = max(sup[0], pre_dist_arr[g0 + off])
        psi_r = dense_sq[g0 + off - r_steps : g0 + off - r_steps + k]
        blocks.append(
            TraceBlock(
                j=iv.j,
                times=iv.times,
                v=v_nodes,
                dini=dini,
                dist=head_dist,
                window_sup=sup,
                psi_r_sq=psi_r.copy(),
                u_norm=np.linalg.norm(iv.inputs, axis=1),
                mode=_mode_of(record, iv),
            )
        )
    for idx in range(1, len(blocks)):
        jump_v.append(
            (
                float(blocks[idx].times[0]),
                blocks[idx - 1].j,
                float(blocks[idx - 1].v[-1]),
                float(blocks[idx].v[0]),
            )
        )
    return CertificateTrace(blocks=blocks, jump_v=jump_v)


def _collect(
    violations: list[Violation],
    counts: dict[str, int],
    condition: str,
    times,
    js,
    lhs,
    rhs,
    mask,
):
    idx = np.nonzero(mask)[0]
    counts[condition] = counts.get(condition, 0) + idx.size
    for i in idx:
        if len(violations) >= VIOLATION_CAP:
            break
        violations.append(
            Violation(condition, float(times[i]), int(js[i]), float(lhs[i]), float(rhs[i]))
        )


def _sandwich_and_jumps(cert, trace, tol, violations, counts, worst):
    a1, a2 = cert.alpha1, cert.alpha2
    for blk in trace.blocks:
        js = np.full(blk.times.size, blk.j)
        lhs = evaluate(a1, blk.dist)
        rhs = blk.v + tol
        worst["sandwich_lower"] = max(worst["sandwich_lower"], float(np.max(lhs - rhs)))
        _collect(violations, counts, "sandwich_lower", blk.times, js, lhs, rhs, lhs > rhs)
        lhs2 = blk.v
        rhs2 = evaluate(a2, blk.window_sup) + tol
        worst["sandwich_upper"] = max(worst["sandwich_upper"], float(np.max(lhs2 - rhs2)))
        _collect(violations, counts, "sandwich_upper", blk.times, js, lhs2, rhs2, lhs2 > rhs2)
    for t, j, v_pre, v_post in trace.jump_v:
        gap = v_post - (v_pre + tol)
        worst["jump_nonincrease"] = max(worst["jump_nonincrease"], gap)
        if gap > 0:
            counts["jump_nonincrease"] = counts.get("jump_nonincrease", 0) + 1
            if len(violations) < VIOLATION_CAP:
                violations.append(
                    Violation("jump_nonincrease", t, j, v_post, v_pre + tol)
                )


def _flow_condition(name, rhs_of, trace, tol, violations, counts, worst):
    for blk in trace.blocks:
        ok = ~np.isnan(blk.dini)
        if not ok.any():
            continue
        lhs = blk.dini[ok]
        rhs = rhs_of(blk)[ok] + tol
        worst[name] = max(worst[name], float(np.max(lhs - rhs)))
        _collect(
            violations,
            counts,
            name,
            blk.times[ok],
            np.full(lhs.size, blk.j),
            lhs,
            rhs,
            lhs > rhs,
        )


def _finish(name, tol, violations, counts, worst, details=None):
    conditions = {c: counts.get(c, 0) == 0 for c in worst}
    report = CheckReport(
        name=name,
        tol=tol,
        conditions=conditions,
        violations=violations,
        worst_margin=max(worst.values()) if worst else float("-inf"),
        details=details or {},
    )
    report.details["violation_counts"] = counts
    return report


def check_iiss_lkf(cert: CertificateSpec, solutions, tol: float | None = None) -> CheckReport:
    """Check the three dissipation conditions on recorded solutions.

    (1) alpha1(|phi(0,0)|_W) <= V(phi) <= alpha2(||phi||_W), (2) the forward
    Dini difference is at most -alpha3(|phi(0,0)|_W) + rho(|u|) at flow
    points, (3) V does not increase at jumps; all within tol.  The sup norm
    in (1) is taken over the functional's own support window [-r, 0], a
    conservative (never larger) stand-in for the full-depth window sup.
    """
    if cert.alpha3 is None or cert.rho is None:
        raise ValueError("check_iiss_lkf needs alpha3 and rho in the certificate")
    if tol is None:
        tol = default_tol(solutions[0].options.h)
    violations: list[Violation] = []
    counts: dict[str, int] = {}
    worst = {
        "sandwich_lower": float("-inf"),
        "sandwich_upper": float("-inf"),
        "flow_decay": float("-inf"),
        "jump_nonincrease": float("-inf"),
    }
    for rec in solutions:
        trace = certificate_trace(cert.functional, rec)
        _sandwich_and_jumps(cert, trace, tol, violations, counts, worst)
        _flow_condition(
            "flow_decay",
            lambda blk: -evaluate(cert.alpha3, blk.dist) + evaluate(cert.rho, blk.u_norm),
            trace,
            tol,
            violations,
            counts,
            worst,
        )
    return _finish("iISS-LKF conditions", tol, violations, counts, worst)


def check_exponential(cert: CertificateSpec, solutions, tol: float | None = None) -> CheckReport:
    """Same sandwich and jump conditions, with flow condition
    D+V <= -v V + rho(|u|)."""
    if cert.v is None:
        raise ValueError("check_exponential needs the decay rate v")
    if cert.rho is None:
        raise ValueError("check_exponential needs rho")
    if tol is None:
        tol = default_tol(solutions[0].options.h)
    violations: list[Violation] = []
    counts: dict[str, int] = {}
    worst = {
        "sandwich_lower": float("-inf"),
        "sandwich_upper": float("-inf"),
        "flow_decay": float("-inf"),
        "jump_nonincrease": float("-inf"),
    }
    for rec in solutions:
        trace = certificate_trace(cert.functional, rec)
        _sandwich_and_jumps(cert, trace, tol, violations, counts, worst)
        _flow_condition(
            "flow_decay",
            lambda blk: -cert.v * blk.v + evaluate(cert.rho, blk.u_norm),
            trace,
            tol,
            violations,
            counts,
            worst,
        )
    return _finish("exponential decay", tol, violations, counts, worst)


def check_storage(cert: CertificateSpec, solutions, tol: float | None = None) -> CheckReport:
    """Storage-functional conditions: sandwich, D+V <= -psi(phi) + rho_hat(|u|)
    with psi = psi_coeff * V, and jump non-increase."""
    if cert.psi_coeff is None:
        raise ValueError("check_storage needs psi_coeff")
    rho_hat = cert.rho_hat or cert.rho
    if rho_hat is None:
        raise ValueError("check_storage needs rho_hat (or rho)")
    if tol is None:
        tol = default_tol(solutions[0].options.h)
    violations: list[Violation] = []
    counts: dict[str, int] = {}
    worst = {
        "sandwich_lower": float("-inf"),
        "sandwich_upper": float("-inf"),
        "flow_decay": float("-inf"),
        "jump_nonincrease": float("-inf"),
    }
    for rec in solutions:
        trace = certificate_trace(cert.functional, rec)
        _sandwich_and_jumps(cert, trace, tol, violations, counts, worst)
        _flow_condition(
            "flow_decay",
            lambda blk: -cert.psi_coeff * blk.v + evaluate(rho_hat, blk.u_norm),
            trace,
            tol,
            violations,
            counts,
            worst,
        )
    return _finish("storage functional", tol, violations, counts, worst)


def check_jump_nonincrease(
    v: KrasovskiiFunctional, solutions, tol: float = 1e-9
) -> CheckReport:
    """Assert |V(phi+) - V(phi)| <= tol at every recorded jump."""
    violations: list[Violation] = []
    counts: dict[str, int] = {}
    worst = {"jump_value_change": float("-inf")}
    max_abs = 0.0
    for rec in solutions:
        trace = certificate_trace(v, rec)
        for t, j, v_pre, v_post in trace.jump_v:
            delta = abs(v_post - v_pre)
            max_abs = max(max_abs, delta)
            worst["jump_value_change"] = max(worst["jump_value_change"], delta - tol)
            if delta > tol:
                counts["jump_value_change"] = counts.get("jump_value_change", 0) + 1
                if len(violations) < VIOLATION_CAP:
                    violations.append(
                        Violation("jump_value_change", t, j, v_post, v_pre)
                    )
    return _finish(
        "jump value invariance",
        tol,
        violations,
        counts,
        worst,
        details={"max_abs_delta": max_abs},
    )


def flow_bound_audit(
    params: QuadcopterParams,
    cert: CertificateSpec,
    eps1: float,
    eps2: float,
    solutions,
    tol: float | None = None,
) -> CheckReport:
    """Audit: forward Dini difference <= analytic flow bound at every flow point.

    The comparison adds a per-point discretization margin 2h * L, with L a
    local Lipschitz estimate of the Dini trace from its own differences;
    the maximal margin used is reported in details.
    """
    if tol is None:
        tol = default_tol(solutions[0].options.h)
    violations: list[Violation] = []
    counts: dict[str, int] = {}
    worst = {"flow_bound": float("-inf")}
    max_margin = 0.0
    for rec in solutions:
        h = rec.options.h
        trace = certificate_trace(cert.functional, rec)
        for blk in trace.blocks:
            ok = ~np.isnan(blk.dini)
            if not ok.any():
                continue
            dini = blk.dini[ok]
            c0, cr, cu = _flow_bound_coeffs(
                params, cert.functional, blk.mode, eps1, eps2
            )
            head_sq = blk.dist[ok] ** 2  # target set is the continuous origin here
            bound = c0 * head_sq + cr * blk.psi_r_sq[ok] + cu * blk.u_norm[ok] ** 2
            lip = np.zeros(dini.size)
            if dini.size > 1:
                d = np.abs(np.diff(dini)) / h
                lip[:-1] = d
                lip[1:] = np.maximum(lip[1:], d)
            margin = tol + 2.0 * h * lip
            max_margin = float(max(max_margin, np.max(margin)))
            rhs = bound + margin
            worst["flow_bound"] = max(worst["flow_bound"], float(np.max(dini - rhs)))
            _collect(
                violations,
                counts,
                "flow_bound",
                blk.times[ok],
                np.full(dini.size, blk.j),
                dini,
                rhs,
                dini > rhs,
            )
    return _finish(
        "flow-bound audit",
        tol,
        violations,
        counts,
        worst,
        details={"max_margin": max_margin},
    )

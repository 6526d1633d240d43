"""Parametric comparison functions: class K / K-infinity gains and KLL envelopes.

Only closed parametric families are allowed (no arbitrary closures), so that
monotonicity and inverses stay certifiable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FAMILIES = ("linear", "power", "saturating")


@dataclass(frozen=True)
class ClassKFn:
    """A class K function: linear c*s, power c*s^p, or saturating c*s/(1+s).

    The saturating family is bounded by c and is therefore not K-infinity.
    """

    family: str
    c: float
    p: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if not self.c > 0:
            raise ValueError("parameter c must be positive")
        if not self.p > 0:
            raise ValueError("parameter p must be positive")

    @property
    def k_infinity(self) -> bool:
        return self.family in ("linear", "power")


def evaluate(f: ClassKFn, s):
    """Evaluate f at s >= 0 (scalar or array)."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise ValueError("class K functions take nonnegative arguments")
    if f.family == "linear":
        out = f.c * s
    elif f.family == "power":
        out = f.c * s**f.p
    else:
        out = f.c * s / (1.0 + s)
    return float(out) if out.ndim == 0 else out


def numeric_inverse(f: ClassKFn, y: float, tol: float = 1e-9) -> float:
    """Solve f(s) = y by bracketing bisection, to |f(s) - y| <= tol.

    Raises when y exceeds the supremum of a saturating family.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if y < 0:
        raise ValueError("y must be nonnegative")
    if y == 0:
        return 0.0
    if f.family == "saturating" and y >= f.c:
        raise ValueError(f"y={y} at or above the supremum {f.c} of a saturating family")
    hi = 1.0
    while evaluate(f, hi) < y:
        hi *= 2.0
        if hi > 1e300:
            raise ValueError("failed to bracket the inverse")
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        val = evaluate(f, mid)
        if abs(val - y) <= tol:
            return mid
        if val < y:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class KLLFn:
    """KLL envelope beta(r, s, t) = gain(r) * exp(-rate * (s + t))."""

    gain: ClassKFn
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise ValueError("decay rate must be positive")


def eval_kll(beta: KLLFn, r, s, t):
    """Evaluate the envelope; r, s, t must be nonnegative."""
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(r < 0) or np.any(s < 0) or np.any(t < 0):
        raise ValueError("eval_kll arguments must be nonnegative")
    out = evaluate(beta.gain, r) * np.exp(-beta.rate * (s + t))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class KValidation:
    ok: bool
    k_infinity: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def validate_class_k(f, grid=None) -> KValidation:
    """Confirm f(0) = 0 and strict monotonicity on a sampled grid.

    f may be a ClassKFn or any callable; callables are reported with the
    k_infinity flag False since unboundedness cannot be certified from
    samples.  The grid needs at least 100 points.
    """
    if grid is None:
        grid = np.linspace(0.0, 10.0, 201)
    grid = np.asarray(grid, dtype=float)
    if grid.size < 100:
        raise ValueError("validation grid needs at least 100 points")
    fn = (lambda s: evaluate(f, s)) if isinstance(f, ClassKFn) else f
    vals = np.array([fn(s) for s in grid])
    kinf = f.k_infinity if isinstance(f, ClassKFn) else False
    if abs(fn(0.0)) > 1e-12:
        return KValidation(False, kinf, "f(0) != 0")
    if np.any(np.diff(vals) <= 0):
        i = int(np.nonzero(np.diff(vals) <= 0)[0][0])
        return KValidation(False, kinf, f"not strictly increasing near grid[{i}]")
    return KValidation(True, kinf)

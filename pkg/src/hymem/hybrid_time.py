"""Hybrid time points (t, j), hybrid time domains, and the t+j ordering."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class HybridTimePoint:
    """A point in hybrid time: t seconds of flow, j jumps taken."""

    t: float
    j: int


@dataclass(frozen=True)
class HybridTimeDomain:
    """A union of intervals [t_start, t_end] x {j} with j increasing by one.

    Forward domains start at (0, 0).  Domains with a memory part carry
    intervals with j < 0 ending at (0, 0); the j = 0 interval always
    contains t = 0.
    """

    intervals: tuple[tuple[float, float, int], ...]


@dataclass(frozen=True)
class DomainCheck:
    """Result of a structural validation; falsy when a violation was found."""

    ok: bool
    index: int | None = None
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def precedes(a: HybridTimePoint, b: HybridTimePoint) -> bool:
    """Hybrid-time order: (t,j) comes before (s,k) iff t+j <= s+k."""
    return a.t + a.j <= b.t + b.j


def hybrid_length(p: HybridTimePoint) -> float:
    """Elapsed hybrid length t + j of a point."""
    return p.t + p.j


def validate_domain(d: HybridTimeDomain) -> DomainCheck:
    """Check the structural invariants of a hybrid time domain.

    Verifies, in order: intervals are nonempty and individually ordered
    (t_start <= t_end), consecutive intervals chain (t_end matches the next
    t_start and j increments by exactly one), and the j = 0 interval exists
    and contains t = 0.  Returns the index and reason of the first violation.
    """
    iv = tuple(d.intervals)
    if not iv:
        return DomainCheck(False, None, "empty domain")
    for i, (a, b, _) in enumerate(iv):
        if not a <= b:
            return DomainCheck(False, i, f"t_start > t_end in interval {i}")
    for i in range(1, len(iv)):
        if iv[i][2] != iv[i - 1][2] + 1:
            return DomainCheck(False, i, f"j not incremented by 1 at index {i}")
        if iv[i][0] != iv[i - 1][1]:
            return DomainCheck(False, i, f"gap at index {i}: t_end != next t_start")
    zero = [(a, b) for a, b, j in iv if j == 0]
    if not zero or not zero[0][0] <= 0.0 <= zero[0][1]:
        return DomainCheck(False, None, "domain does not contain (0, 0)")
    return DomainCheck(True)

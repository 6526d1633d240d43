"""Memory arcs: recorded history windows of hybrid solutions.

An arc stores the state over the hybrid-length window [-Delta, 0] behind a
point of a solution, as grid samples grouped into pieces that never span a
jump.  Arcs are what flow maps, jump maps and functionals consume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .hybrid_time import DomainCheck, HybridTimePoint

_SLACK = 1e-9


@dataclass(frozen=True)
class ArcPiece:
    """Samples of one continuous stretch of history at jump offset k.

    s is increasing, s[-1] <= 0.  derivs holds the flow derivative at each
    node when known (used by the integrator for dense reads); value-only
    pieces set it to None.
    """

    k: int
    s: np.ndarray
    values: np.ndarray
    derivs: np.ndarray | None = None


@dataclass(frozen=True)
class MemoryArc:
    """History window phi with samples phi(s, k) for s + k in [-Delta, 0].

    pieces are ordered by k ascending; the last piece ends at (0, 0), the
    current point.  delay_depth is the hybrid length actually exposed, and
    n_cont the leading continuous substate dimension (the part entering
    norms and functionals).
    """

    pieces: tuple[ArcPiece, ...]
    delay_depth: float
    grid_step: float
    n_cont: int

    @property
    def head(self) -> np.ndarray:
        """The sample at (0, 0)."""
        return self.pieces[-1].values[-1]

    @property
    def dim(self) -> int:
        return self.pieces[-1].values.shape[1]

    def samples(self) -> Iterator[tuple[float, int, np.ndarray]]:
        """Yield (s, k, value) triples oldest first."""
        for piece in self.pieces:
            for s, v in zip(piece.s, piece.values):
                yield float(s), piece.k, v

    def delayed(self, s: float) -> np.ndarray:
        return eval_delayed(self, s)


def validate_arc(arc: MemoryArc) -> DomainCheck:
    """Check the structural invariants of a memory arc."""
    if not arc.pieces:
        return DomainCheck(False, None, "arc has no pieces")
    for i, piece in enumerate(arc.pieces):
        if piece.s.size == 0:
            return DomainCheck(False, i, f"piece {i} is empty")
        if np.any(np.diff(piece.s) <= 0):
            return DomainCheck(False, i, f"piece {i} has non-increasing s grid")
        depth = -(piece.s + piece.k)
        if np.any(depth < -_SLACK) or np.any(depth > arc.delay_depth + 1.0 + _SLACK):
            return DomainCheck(False, i, f"piece {i} leaves [-Delta-1, 0]")
    ks = [p.k for p in arc.pieces]
    if ks != sorted(ks) or len(set(ks)) != len(ks):
        return DomainCheck(False, None, "piece jump offsets not strictly increasing")
    last = arc.pieces[-1]
    if last.k != 0 or abs(last.s[-1]) > _SLACK:
        return DomainCheck(False, None, "sample at (0, 0) missing")
    return DomainCheck(True)


def eval_delayed(arc: MemoryArc, s: float) -> np.ndarray:
    """Value phi(s, k(s)) at the maximal jump offset whose piece contains s.

    Between grid samples the value is linearly interpolated within one
    piece; lookups never cross a jump.  At a jump abscissa the later
    (post-jump) piece wins, matching k(s) = max{k : (s, k) in dom phi}.
    """
    if s > _SLACK or s < -(arc.delay_depth + 1.0) - _SLACK:
        raise ValueError(f"delayed lookup s={s} outside [-Delta-1, 0]")
    for piece in reversed(arc.pieces):
        if piece.s[0] - _SLACK <= s <= piece.s[-1] + _SLACK:
            return _interp_rows(piece.s, piece.values, s)
    raise ValueError(f"delayed lookup s={s} not covered by any recorded piece")


def _interp_rows(grid: np.ndarray, values: np.ndarray, s: float) -> np.ndarray:
    s = min(max(s, grid[0]), grid[-1])
    i = int(np.searchsorted(grid, s, side="right")) - 1
    if i >= grid.size - 1:
        return values[-1].copy()
    if i < 0:
        return values[0].copy()
    w = (s - grid[i]) / (grid[i + 1] - grid[i])
    return (1.0 - w) * values[i] + w * values[i + 1]


@dataclass(frozen=True)
class TargetSet:
    """Descriptor of the closed target set W.

    The continuous part is the origin of the leading n_cont components, or a
    ball of the given radius around it.  Optional discrete components follow:
    a mode constrained to `modes`, then a timer constrained to [0, timer_max].
    Distance is Euclidean distance of the continuous part only; discrete
    components inside their admissible ranges contribute zero.
    """

    n_cont: int
    radius: float = 0.0
    modes: tuple[int, ...] | None = None
    timer_max: float | None = None


def point_distance(x: np.ndarray, w: TargetSet) -> float:
    """Distance |x|_W of one extended-state vector to the target set."""
    x = np.asarray(x, dtype=float)
    d = float(np.linalg.norm(x[: w.n_cont]))
    d = max(d - w.radius, 0.0)
    idx = w.n_cont
    if w.modes is not None:
        mode = x[idx]
        if abs(mode - round(mode)) > _SLACK or int(round(mode)) not in w.modes:
            raise ValueError(f"discrete mode {mode} outside admissible set {w.modes}")
        idx += 1
    if w.timer_max is not None:
        tau = x[idx]
        if not -_SLACK <= tau <= w.timer_max + _SLACK:
            raise ValueError(f"timer {tau} outside [0, {w.timer_max}]")
    return d


def sup_norm_to_set(arc: MemoryArc, w: TargetSet) -> float:
    """Supremum of the point distance to W over all stored arc samples."""
    worst = 0.0
    for piece in arc.pieces:
        cont = piece.values[:, : w.n_cont]
        dists = np.linalg.norm(cont, axis=1) - w.radius
        worst = max(worst, float(dists.max()))
        idx = w.n_cont
        if w.modes is not None:
            modes = piece.values[:, idx]
            rounded = np.round(modes)
            if np.any(np.abs(modes - rounded) > _SLACK) or not set(
                int(m) for m in rounded
            ) <= set(w.modes):
                raise ValueError("arc sample has mode outside admissible set")
            idx += 1
        if w.timer_max is not None:
            taus = piece.values[:, idx]
            if np.any(taus < -_SLACK) or np.any(taus > w.timer_max + _SLACK):
                raise ValueError("arc sample has timer outside its range")
    return max(worst, 0.0)


def window(solution, at: HybridTimePoint, delay_depth: float) -> MemoryArc:
    """Extract the memory arc at a recorded point of a solution.

    Implements the shift phi(s, k) = x(t+s, j+k), collecting samples until
    their hybrid depth -(s+k) reaches delay_depth.  The boundary sample is
    included, and the returned arc's delay_depth reports the depth actually
    resolved on the grid (the smallest recorded depth >= delay_depth, or
    everything that exists when the recorded history is shallower).

    Raises ValueError when `at` is not a recorded grid point.
    """
    h = solution.options.h
    if not 0 <= at.j < len(solution.intervals):
        raise ValueError(f"point {at} outside recorded domain: no interval j={at.j}")
    interval = solution.intervals[at.j]
    pos = (at.t - interval.times[0]) / h
    i = int(round(pos))
    if abs(pos - i) > 1e-6 or not 0 <= i < interval.times.size:
        raise ValueError(f"point {at} is not a recorded grid node")

    collected: list[ArcPiece] = []  # newest first
    resolved = 0.0
    done = False

    def take(s_grid, vals, ders, k, depths):
        # include samples shallower than delay_depth plus the first at or past it
        nonlocal resolved, done
        deep = depths >= delay_depth - _SLACK
        if deep.any():
            cut = int(np.nonzero(deep)[0][-1])  # depths decrease along the grid
            resolved = float(depths[cut])
            done = True
        else:
            cut = 0
            resolved = max(resolved, float(depths[0]))
        collected.append(
            ArcPiece(
                k=k,
                s=s_grid[cut:],
                values=vals[cut:],
                derivs=None if ders is None else ders[cut:],
            )
        )

    for jj in range(at.j, -1, -1):
        cur = solution.intervals[jj]
        hi = i if jj == at.j else cur.times.size - 1
        s_grid = cur.times[: hi + 1] - at.t
        depths = (at.t - cur.times[: hi + 1]) + (at.j - jj)
        ders = None if cur.derivs is None else cur.derivs[: hi + 1]
        take(s_grid, cur.states[: hi + 1], ders, jj - at.j, depths)
        if done:
            break
    if not done:
        for piece in reversed(solution.initial_arc.pieces):
            s_grid = piece.s - at.t
            depths = (at.t - piece.s) + (at.j - piece.k)
            take(s_grid, piece.values, piece.derivs, piece.k - at.j, depths)
            if done:
                break

    pieces = _merge_abutting(list(reversed(collected)))
    return MemoryArc(
        pieces=tuple(pieces),
        delay_depth=resolved,
        grid_step=h,
        n_cont=solution.system.n_cont,
    )


def _merge_abutting(pieces: list[ArcPiece]) -> list[ArcPiece]:
    """Concatenate consecutive pieces with the same k that share a boundary node.

    Happens where the initial arc's head meets the first flow interval; the
    duplicated sample is dropped.  Derivatives are not merged (the two sides
    of the seam have different one-sided derivatives), so merged pieces are
    value-only.
    """
    out: list[ArcPiece] = []
    for piece in pieces:
        if (
            out
            and out[-1].k == piece.k
            and abs(out[-1].s[-1] - piece.s[0]) <= _SLACK
        ):
            prev = out.pop()
            out.append(
                ArcPiece(
                    k=piece.k,
                    s=np.concatenate([prev.s, piece.s[1:]]),
                    values=np.concatenate([prev.values, piece.values[1:]]),
                    derivs=None,
                )
            )
        else:
            out.append(piece)
    return out


def constant_arc(
    value, depth: float, grid_step: float, n_cont: int | None = None
) -> MemoryArc:
    """Constant history arc with the given time depth, sampled on the step grid."""
    value = np.atleast_1d(np.asarray(value, dtype=float))
    count = max(int(round(depth / grid_step)), 1)
    s = np.arange(-count, 1, dtype=float) * grid_step
    vals = np.tile(value, (count + 1, 1))
    piece = ArcPiece(k=0, s=s, values=vals, derivs=np.zeros_like(vals))
    return MemoryArc(
        pieces=(piece,),
        delay_depth=depth,
        grid_step=grid_step,
        n_cont=value.size if n_cont is None else n_cont,
    )


def sampled_arc(
    fn, depth: float, grid_step: float, n_cont: int | None = None, dfn=None
) -> MemoryArc:
    """History arc sampled from a callable s -> state on [-depth, 0].

    dfn, when given, supplies the exact time derivative for dense reads;
    otherwise the piece is value-only and the integrator falls back to
    linear interpolation inside it.
    """
    count = max(int(round(depth / grid_step)), 1)
    s = np.arange(-count, 1, dtype=float) * grid_step
    vals = np.array([np.atleast_1d(np.asarray(fn(si), dtype=float)) for si in s])
    ders = None
    if dfn is not None:
        ders = np.array([np.atleast_1d(np.asarray(dfn(si), dtype=float)) for si in s])
    piece = ArcPiece(k=0, s=s, values=vals, derivs=ders)
    return MemoryArc(
        pieces=(piece,),
        delay_depth=depth,
        grid_step=grid_step,
        n_cont=vals.shape[1] if n_cont is None else n_cont,
    )

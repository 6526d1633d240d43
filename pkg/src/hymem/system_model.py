"""System definitions: delayed flow maps, jump maps, predicates and inputs.

Ships two concrete systems: the saturated quadcopter position loop with a
mode-toggling timer, and a scalar linear delay equation used as an
integrator reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .memory_arc import TargetSet


@dataclass(frozen=True, eq=False)
class SystemDefinition:
    """A hybrid system with memory, as single-valued selections.

    flow_map/jump_map/in_flow_set/in_jump_set all take (arc, u) where arc
    provides `.head` (the current extended state) and `.delayed(s)` (history
    lookup at lag s <= 0).  n_cont is the leading continuous substate entering
    distances and functionals; lags lists every delay the flow map reads and
    grid_align the constants the integrator step must divide.
    """

    name: str
    n: int
    n_cont: int
    m: int
    delay_depth: float
    max_lag: float
    lags: tuple[float, ...]
    grid_align: tuple[float, ...]
    flow_map: Callable
    jump_map: Callable
    in_flow_set: Callable
    in_jump_set: Callable
    target: TargetSet
    mode_index: int | None = None
    timer_index: int | None = None


@dataclass(frozen=True, eq=False)
class QuadcopterParams:
    """Parameters of the delayed, saturated position control loop.

    Double-integrator translational dynamics with linear drag, delayed
    saturated PD feedback, and a timer that toggles between two gain sets
    every delta seconds.
    """

    m: float = 1.2
    d_c: float = 0.2
    u_max: float = 1.0
    r: float = 0.05
    delta: float = 0.2
    k_p1: float = 4.8
    k_d1: float = 1.5
    k_p2: float = 3.6
    k_d2: float = 1.3
    reset: np.ndarray = field(default_factory=lambda: np.eye(6))

    def __post_init__(self):
        for name in ("m", "d_c", "u_max", "r", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"quadcopter parameter {name} must be positive")
        reset = np.asarray(self.reset, dtype=float)
        if reset.shape != (6, 6):
            raise ValueError("reset matrix must be 6x6")
        object.__setattr__(self, "reset", reset)


def a_bar(p: QuadcopterParams) -> np.ndarray:
    """Drift matrix [[0, I], [0, -(d_c/m) I]] of the translational dynamics."""
    a = np.zeros((6, 6))
    a[:3, 3:] = np.eye(3)
    a[3:, 3:] = -(p.d_c / p.m) * np.eye(3)
    return a


def b_bar(p: QuadcopterParams) -> np.ndarray:
    """Input matrix [[0], [I/m]]."""
    b = np.zeros((6, 3))
    b[3:, :] = np.eye(3) / p.m
    return b


def gain_matrix(p: QuadcopterParams, mode: int) -> np.ndarray:
    """Feedback gain K_mode = [-k_p I, -k_d I] as a 3x6 matrix."""
    if mode == 1:
        kp, kd = p.k_p1, p.k_d1
    elif mode == 2:
        kp, kd = p.k_p2, p.k_d2
    else:
        raise ValueError(f"mode must be 1 or 2, got {mode}")
    return np.hstack([-kp * np.eye(3), -kd * np.eye(3)])


def saturate(v, u_max: float):
    """Component-wise clamp to [-u_max, u_max]."""
    if not u_max > 0:
        raise ValueError("u_max must be positive")
    return np.clip(np.asarray(v, dtype=float), -u_max, u_max)


def quadcopter_system(p: QuadcopterParams) -> SystemDefinition:
    """Build the 8-state hybrid system (psi in R^6, mode, timer).

    Flow: psi' = A psi + B (sat(K_mode psi(-r)) + u), mode' = 0, timer' = 1,
    on timer in [0, delta].  Jump at timer = delta: psi <- reset psi, mode
    toggles between 1 and 2, timer <- 0.
    """
    a = a_bar(p)
    b = b_bar(p)
    gains = (gain_matrix(p, 1), gain_matrix(p, 2))
    reset = p.reset
    delta = p.delta
    r = p.r
    u_max = p.u_max
    slack = 1e-9

    def flow(arc, u):
        x = arc.head
        psi_r = arc.delayed(-r)[:6]
        mode = int(round(x[6]))
        ctrl = saturate(gains[mode - 1] @ psi_r, u_max) + np.asarray(u, dtype=float)
        out = np.empty(8)
        out[:6] = a @ x[:6] + b @ ctrl
        out[6] = 0.0
        out[7] = 1.0
        return out

    def jump(arc, u):
        x = arc.head
        out = np.empty(8)
        out[:6] = reset @ x[:6]
        out[6] = 3 - int(round(x[6]))
        out[7] = 0.0
        return out

    def in_flow(arc, u):
        return -slack <= arc.head[7] <= delta + slack

    def in_jump(arc, u):
        return arc.head[7] >= delta - slack

    return SystemDefinition(
        name="quadcopter",
        n=8,
        n_cont=6,
        m=3,
        delay_depth=r + 8.0,  # dynamics read back r seconds; analysis windows 8 jumps
        max_lag=r,
        lags=(r,),
        grid_align=(r, delta),
        flow_map=flow,
        jump_map=jump,
        in_flow_set=in_flow,
        in_jump_set=in_jump,
        target=TargetSet(n_cont=6, modes=(1, 2), timer_max=delta),
        mode_index=6,
        timer_index=7,
    )


def linear_dde_system(a: float, b: float, r: float) -> SystemDefinition:
    """Scalar x' = a x(t) + b x(t - r) + u, jump-free; the integrator reference."""
    if not r > 0:
        raise ValueError("delay r must be positive")

    def flow(arc, u):
        return a * arc.head + b * arc.delayed(-r) + np.asarray(u, dtype=float)

    def jump(arc, u):  # unreachable, the jump set is empty
        return arc.head.copy()

    return SystemDefinition(
        name="linear_dde",
        n=1,
        n_cont=1,
        m=1,
        delay_depth=r,
        max_lag=r,
        lags=(r,),
        grid_align=(r,),
        flow_map=flow,
        jump_map=jump,
        in_flow_set=lambda arc, u: True,
        in_jump_set=lambda arc, u: False,
        target=TargetSet(n_cont=1),
    )


@dataclass(frozen=True, eq=False)
class InputSignal:
    """Closed-form input signal: zero, constant a, exp-decay a*e^{-rate t},
    or a sampled table interpolated linearly and held at the ends."""

    kind: str = "zero"
    amplitude: np.ndarray = field(default_factory=lambda: np.zeros(1))
    rate: float = 0.0
    times: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "exp_decay", "table"):
            raise ValueError(f"unknown input kind {self.kind!r}")
        object.__setattr__(
            self, "amplitude", np.atleast_1d(np.asarray(self.amplitude, dtype=float))
        )
        if self.kind == "exp_decay" and self.rate < 0:
            raise ValueError("exp_decay rate must be nonnegative")
        if self.kind == "table":
            if self.times is None or self.values is None:
                raise ValueError("table input needs times and values")
            object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
            object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def dim(self) -> int:
        if self.kind == "table":
            return self.values.shape[1]
        return self.amplitude.size


def eval_input(sig: InputSignal, t: float) -> np.ndarray:
    """Input value at time t >= 0."""
    if t < -1e-12:
        raise ValueError("input signals are defined for t >= 0")
    if sig.kind == "zero":
        return np.zeros_like(sig.amplitude)
    if sig.kind == "constant":
        return sig.amplitude.copy()
    if sig.kind == "exp_decay":
        return sig.amplitude * np.exp(-sig.rate * max(t, 0.0))
    out = np.empty(sig.values.shape[1])
    for col in range(sig.values.shape[1]):
        out[col] = np.interp(t, sig.times, sig.values[:, col])
    return out


def zero_input(m: int) -> InputSignal:
    return InputSignal(kind="zero", amplitude=np.zeros(m))


def requires_grid_alignment(
    constants: tuple[float, ...], h: float
) -> tuple[int, ...]:
    """Express each constant as an integer number of steps, or raise.

    Snaps within a 1e-6 relative tolerance so that values carrying float
    representation noise (a delay constructed as 7 * 0.005, say) still count
    as aligned; the integrator resolves lags by step index, not by float
    time, so the snap is what actually matters.
    """
    out = []
    for c in constants:
        ratio = float(c) / float(h)
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-6 * max(1.0, abs(ratio)):
            raise ValueError(f"step {h} does not divide {c}")
        out.append(n)
    return tuple(out)

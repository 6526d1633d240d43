"""Scenario files: YAML descriptions of systems, runs, and requested checks.

A scenario bundles one system (quadcopter or scalar linear DDE), integrator
options, a list of named runs (input signal plus optional initial-condition
scaling), an optional certificate block, and an analysis block listing the
checks to execute.  Everything is validated up front: malformed blocks
raise ScenarioError naming the offending key, and every comparison
function is validated as class K before any run starts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .certificates import CertificateSpec, KrasovskiiFunctional
from .comparison import ClassKFn, validate_class_k
from .memory_arc import MemoryArc, constant_arc
from .simulator import SimOptions
from .system_model import (
    InputSignal,
    QuadcopterParams,
    SystemDefinition,
    linear_dde_system,
    quadcopter_system,
)


class ScenarioError(ValueError):
    """A scenario file failed to parse or validate."""


KNOWN_CHECKS = (
    "iiss_lkf",
    "exponential",
    "storage",
    "jump_nonincrease",
    "flow_bound_audit",
    "iiss_bound",
    "bebs",
    "asymptotic_gain",
    "prestability",
    "detectability",
)


@dataclass
class RunSpec:
    name: str
    input: InputSignal
    initial_scale: float = 1.0


@dataclass
class CheckRequest:
    check: str
    runs: list[str]
    gate: bool = True
    expect_fail: bool = False
    options: dict = field(default_factory=dict)


@dataclass
class Scenario:
    name: str
    system_kind: str
    system: SystemDefinition
    quad_params: QuadcopterParams | None
    options: SimOptions
    initial: dict
    runs: list[RunSpec]
    certificate: CertificateSpec | None
    eps: tuple[float, float]
    fits: dict
    checks: list[CheckRequest]
    out_dir: str | None

    def run_named(self, name: str) -> RunSpec:
        for run in self.runs:
            if run.name == name:
                return run
        raise ScenarioError(f"analysis references unknown run {name!r}")


def _require(block: dict, key: str, path: str):
    if key not in block:
        raise ScenarioError(f"{path}.{key}: required key missing")
    return block[key]


def _as_mapping(obj, path: str) -> dict:
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ScenarioError(f"{path}: expected a mapping")
    return obj


def _floats(obj, n: int, path: str) -> np.ndarray:
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError):
        raise ScenarioError(f"{path}: expected {n} numbers") from None
    if arr.shape != (n,):
        raise ScenarioError(f"{path}: expected {n} numbers, got shape {arr.shape}")
    return arr


def parse_class_k(block, path: str) -> ClassKFn:
    block = _as_mapping(block, path)
    family = _require(block, "family", path)
    c = float(_require(block, "c", path))
    p = float(block.get("p", 1.0))
    try:
        fn = ClassKFn(family, c, p)
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    check = validate_class_k(fn)
    if not check.ok:
        raise ScenarioError(f"{path}: not class K ({check.reason})")
    return fn


def parse_input(block, m: int, path: str) -> InputSignal:
    block = _as_mapping(block, path)
    kind = block.get("kind", "zero")
    if kind == "zero":
        return InputSignal(kind="zero", amplitude=np.zeros(m))
    if kind in ("constant", "exp_decay"):
        amp = _floats(_require(block, "amplitude", path), m, f"{path}.amplitude")
        rate = float(block.get("rate", 0.0))
        if kind == "exp_decay" and rate <= 0:
            raise ScenarioError(f"{path}.rate: exp_decay needs a positive rate")
        return InputSignal(kind=kind, amplitude=amp, rate=rate)
    if kind == "table":
        times = np.asarray(_require(block, "times", path), dtype=float)
        values = np.asarray(_require(block, "values", path), dtype=float)
        return InputSignal(kind="table", amplitude=np.zeros(m), times=times, values=values)
    raise ScenarioError(f"{path}.kind: unknown input kind {kind!r}")


def _parse_system(block, path: str):
    block = _as_mapping(block, path)
    kind = _require(block, "kind", path)
    params_block = _as_mapping(block.get("params"), f"{path}.params")
    if kind == "quadcopter":
        try:
            params = QuadcopterParams(**params_block)
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{path}.params: {exc}") from None
        return kind, quadcopter_system(params), params
    if kind == "linear_dde":
        for key in ("a", "b", "r"):
            _require(params_block, key, f"{path}.params")
        system = linear_dde_system(
            float(params_block["a"]), float(params_block["b"]), float(params_block["r"])
        )
        return kind, system, None
    raise ScenarioError(f"{path}.kind: unknown system kind {kind!r}")


def _parse_certificate(block, path: str):
    block = _as_mapping(block, path)
    if not block:
        return None, (1.0, 1.0)
    sigma = block.get("sigma", 1.0)
    mu = block.get("mu", 1.0)
    try:
        functional = KrasovskiiFunctional(
            sigma=tuple(np.atleast_1d(np.asarray(sigma, dtype=float))),
            mu=tuple(np.atleast_1d(np.asarray(mu, dtype=float))),
            eta=float(block.get("eta", 0.0)),
            r=float(_require(block, "r", path)),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    from .certificates import certificate_alpha_bounds

    a1_default, a2_default = certificate_alpha_bounds(functional)
    alpha1 = parse_class_k(block["alpha1"], f"{path}.alpha1") if "alpha1" in block else a1_default
    alpha2 = parse_class_k(block["alpha2"], f"{path}.alpha2") if "alpha2" in block else a2_default
    kwargs = {}
    for key in ("alpha3", "rho", "rho_hat"):
        if key in block:
            kwargs[key] = parse_class_k(block[key], f"{path}.{key}")
    if "v" in block:
        kwargs["v"] = float(block["v"])
    if "psi_coeff" in block:
        kwargs["psi_coeff"] = float(block["psi_coeff"])
    try:
        cert = CertificateSpec(functional=functional, alpha1=alpha1, alpha2=alpha2, **kwargs)
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    eps = (float(block.get("eps1", 1.0)), float(block.get("eps2", 1.0)))
    if eps[0] <= 0 or eps[1] <= 0:
        raise ScenarioError(f"{path}.eps1/eps2: must be positive")
    return cert, eps


def _parse_checks(block, runs: list[RunSpec], path: str) -> list[CheckRequest]:
    if block is None:
        return []
    if not isinstance(block, list):
        raise ScenarioError(f"{path}: expected a list of check entries")
    known_runs = {r.name for r in runs}
    out = []
    for i, entry in enumerate(block):
        entry = dict(_as_mapping(entry, f"{path}[{i}]"))
        name = _require(entry, "check", f"{path}[{i}]")
        if name not in KNOWN_CHECKS:
            raise ScenarioError(f"{path}[{i}].check: unknown check {name!r}")
        run_names = entry.pop("runs", [r.name for r in runs])
        if isinstance(run_names, str):
            run_names = [run_names]
        for rn in run_names:
            if rn not in known_runs:
                raise ScenarioError(f"{path}[{i}].runs: unknown run {rn!r}")
        gate = bool(entry.pop("gate", True))
        expect_fail = bool(entry.pop("expect_fail", False))
        if expect_fail:
            gate = bool(entry.get("gate_on_expected", False))
        entry.pop("check")
        out.append(
            CheckRequest(
                check=name, runs=list(run_names), gate=gate,
                expect_fail=expect_fail, options=entry,
            )
        )
    return out


def load_scenario(path: str, step: float | None = None, t_end: float | None = None) -> Scenario:
    """Parse and validate a scenario file; optional step/horizon overrides."""
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    doc = _as_mapping(doc, "scenario")
    name = str(doc.get("name", "unnamed"))
    kind, system, quad_params = _parse_system(_require(doc, "system", "scenario"), "system")

    integ = _as_mapping(doc.get("integrator"), "integrator")
    try:
        options = SimOptions(
            h=float(step if step is not None else integ.get("step", 0.005)),
            t_end=float(t_end if t_end is not None else integ.get("t_end", 20.0)),
            n_zeno=int(integ.get("n_zeno", 16)),
            record_stride=int(integ.get("record_stride", 1)),
        )
    except ValueError as exc:
        raise ScenarioError(f"integrator: {exc}") from None

    initial = _as_mapping(doc.get("initial"), "initial")
    runs_block = doc.get("runs")
    if not isinstance(runs_block, list) or not runs_block:
        raise ScenarioError("runs: expected a nonempty list")
    runs = []
    seen = set()
    for i, entry in enumerate(runs_block):
        entry = _as_mapping(entry, f"runs[{i}]")
        rname = str(_require(entry, "name", f"runs[{i}]"))
        if rname in seen:
            raise ScenarioError(f"runs[{i}].name: duplicate run name {rname!r}")
        seen.add(rname)
        sig = parse_input(entry.get("input"), system.m, f"runs[{i}].input")
        scale = float(entry.get("initial_scale", 1.0))
        if scale < 0:
            raise ScenarioError(f"runs[{i}].initial_scale: must be nonnegative")
        runs.append(RunSpec(name=rname, input=sig, initial_scale=scale))

    certificate, eps = _parse_certificate(doc.get("certificate"), "certificate")

    analysis = _as_mapping(doc.get("analysis"), "analysis")
    fits = _as_mapping(analysis.get("fits"), "analysis.fits")
    for fit_key, fit_block in fits.items():
        fb = _as_mapping(fit_block, f"analysis.fits.{fit_key}")
        for rn in fb.get("runs", []):
            if rn not in seen:
                raise ScenarioError(f"analysis.fits.{fit_key}: unknown run {rn!r}")
    checks = _parse_checks(analysis.get("checks"), runs, "analysis.checks")

    output = _as_mapping(doc.get("output"), "output")
    out_dir = output.get("dir")

    return Scenario(
        name=name,
        system_kind=kind,
        system=system,
        quad_params=quad_params,
        options=options,
        initial=initial,
        runs=runs,
        certificate=certificate,
        eps=eps,
        fits=fits,
        checks=checks,
        out_dir=out_dir,
    )


def build_initial_arc(scenario: Scenario, run: RunSpec) -> MemoryArc:
    """Constant-history initial arc for one run, scaled per the run spec."""
    system = scenario.system
    initial = scenario.initial
    depth = float(initial.get("depth", system.max_lag))
    if depth < system.max_lag:
        raise ScenarioError(
            f"initial.depth: {depth} is shallower than the longest lag {system.max_lag}"
        )
    h = scenario.options.h
    if scenario.system_kind == "quadcopter":
        pos = _floats(initial.get("position", (1.0, 1.0, 0.5)), 3, "initial.position")
        vel = _floats(initial.get("velocity", (0.0, 0.0, 0.0)), 3, "initial.velocity")
        mode = int(initial.get("mode", 1))
        if mode not in (1, 2):
            raise ScenarioError("initial.mode: must be 1 or 2")
        timer = float(initial.get("timer", 0.0))
        state = np.concatenate([run.initial_scale * pos, run.initial_scale * vel, [mode, timer]])
        return constant_arc(state, depth, h, system.n_cont)
    value = float(initial.get("value", 1.0)) * run.initial_scale
    return constant_arc(np.array([value]), depth, h, system.n_cont)

"""Scenario-driven command line: simulate, check, plot.

Artifacts per run: a delimited trajectory file (full-precision repr floats,
so files round-trip to the exact in-memory values) plus a JSON metadata
file carrying the integrator options, the initial history samples, and the
jump log.  `check` writes one structured report.json aggregating every
requested check with its verdict and parameters; the process exits 0 only
if all gating checks are satisfied.  Reports use Python's JSON dialect
(IEEE Infinity literals allowed).

Per-run work fans out over a thread pool (--jobs); files are written by the
main thread in scenario order so outputs are byte-identical across reruns.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .certificates import (
    CertificateSpec,
    certificate_alpha_bounds,
    certificate_trace,
    check_exponential,
    check_iiss_lkf,
    check_jump_nonincrease,
    check_storage,
    flow_bound_audit,
)
from .comparison import ClassKFn
from .memory_arc import ArcPiece, MemoryArc
from .scenario import Scenario, ScenarioError, build_initial_arc, load_scenario, parse_class_k
from .simulator import (
    FlowInterval,
    JumpEvent,
    SimOptions,
    SimulationError,
    SolutionRecord,
    simulate,
)
from .stability import (
    check_asymptotic_gain,
    check_bebs,
    check_iiss_bound,
    check_global_prestability,
    check_zero_input_detectability,
    fit_kll_beta,
    fit_linear_gamma,
    fit_linear_rho,
    fit_power_alpha,
    initial_sup_norm,
    input_energy,
)
from .svgplot import line_plot
from .system_model import InputSignal

OUT_ENV = "HYMEM_OUT"


def _plain(obj):
    """Recursively convert numpy scalars/arrays for JSON serialization."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _energy_rho(scenario: Scenario) -> ClassKFn:
    cert = scenario.certificate
    if cert is not None and cert.rho is not None:
        return cert.rho
    return ClassKFn("linear", 1.0)


def run_scenario(scenario: Scenario, jobs: int = 1) -> dict[str, SolutionRecord]:
    """Simulate every run; results keyed by run name, in scenario order."""

    def one(run):
        try:
            arc = build_initial_arc(scenario, run)
            return simulate(scenario.system, arc, run.input, scenario.options)
        except (ValueError, SimulationError) as exc:
            raise SimulationError(f"run {run.name!r}: {exc}") from exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(one, scenario.runs))
    else:
        records = [one(run) for run in scenario.runs]
    return {run.name: rec for run, rec in zip(scenario.runs, records)}


# ---------------------------------------------------------------------------
# trajectory files


def _header(record: SolutionRecord) -> list[str]:
    sys_def = record.system
    cols = ["t", "j"] + [f"x{i}" for i in range(sys_def.n_cont)]
    if sys_def.mode_index is not None:
        cols.append("mode")
    if sys_def.timer_index is not None:
        cols.append("timer")
    cols += [f"u{i}" for i in range(sys_def.m)]
    cols += ["dist_w", "v_lkf", "dini", "energy"]
    return cols


def write_trajectory(
    out_dir: Path, name: str, record: SolutionRecord, cert: CertificateSpec | None,
    energy_rho: ClassKFn,
) -> tuple[Path, Path]:
    """Write <name>.csv and <name>.meta.json; returns both paths."""
    sys_def = record.system
    w = sys_def.target
    trace = None
    if cert is not None:
        trace = certificate_trace(cert.functional, record)
    energy = input_energy(record, energy_rho)
    stride = record.options.record_stride

    csv_path = out_dir / f"{name}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header(record))
        row_base = 0
        for b, iv in enumerate(record.intervals):
            k = iv.times.size
            dist = np.maximum(
                np.linalg.norm(iv.states[:, : sys_def.n_cont], axis=1) - w.radius, 0.0
            )
            v_arr = trace.blocks[b].v if trace else np.full(k, np.nan)
            d_arr = trace.blocks[b].dini if trace else np.full(k, np.nan)
            e_arr = energy.energy[row_base : row_base + k]
            keep = set(range(0, k, stride)) | {0, k - 1}
            for i in range(k):
                if i not in keep:
                    continue
                row = [repr(float(iv.times[i])), str(iv.j)]
                row += [repr(float(v)) for v in iv.states[i, : sys_def.n_cont]]
                if sys_def.mode_index is not None:
                    row.append(repr(float(iv.states[i, sys_def.mode_index])))
                if sys_def.timer_index is not None:
                    row.append(repr(float(iv.states[i, sys_def.timer_index])))
                row += [repr(float(v)) for v in iv.inputs[i]]
                row += [
                    repr(float(dist[i])),
                    repr(float(v_arr[i])),
                    repr(float(d_arr[i])),
                    repr(float(e_arr[i])),
                ]
                writer.writerow(row)
            row_base += k

    meta = {
        "run": name,
        "system_kind": "quadcopter" if sys_def.mode_index is not None else "linear_dde",
        "options": {
            "h": record.options.h,
            "t_end": record.options.t_end,
            "n_zeno": record.options.n_zeno,
            "record_stride": record.options.record_stride,
        },
        "end_condition": record.end_condition,
        "zeno_trips": record.zeno_trips,
        "n_intervals": len(record.intervals),
        "n_jumps": len(record.jumps),
        "input": {
            "kind": record.input.kind,
            "amplitude": _plain(record.input.amplitude),
            "rate": record.input.rate,
        },
        "initial_arc": {
            "grid_step": record.initial_arc.grid_step,
            "n_cont": record.initial_arc.n_cont,
            "delay_depth": record.initial_arc.delay_depth,
            "pieces": [
                {"k": p.k, "s": _plain(p.s), "values": _plain(p.values)}
                for p in record.initial_arc.pieces
            ],
        },
        "jumps": [
            {
                "t": e.t,
                "j": e.j,
                "pre": _plain(e.pre),
                "post": _plain(e.post),
                "u": _plain(e.u),
            }
            for e in record.jumps
        ],
        "energy_rho": {"family": energy_rho.family, "c": energy_rho.c, "p": energy_rho.p},
    }
    meta_path = out_dir / f"{name}.meta.json"
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, meta_path


def load_run(csv_path, meta_path, system) -> SolutionRecord:
    """Rebuild a SolutionRecord from a trajectory file pair.

    Requires a stride-1 file (every node present).  State derivatives are
    not stored in the files; none of the checks read them.
    """
    with open(meta_path) as fh:
        meta = json.load(fh)
    options = SimOptions(**meta["options"])
    h = options.h
    with open(csv_path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    col = {name: i for i, name in enumerate(header)}
    x_cols = [col[f"x{i}"] for i in range(system.n_cont)]
    if system.mode_index is not None:
        x_cols.append(col["mode"])
    if system.timer_index is not None:
        x_cols.append(col["timer"])
    u_cols = [col[f"u{i}"] for i in range(system.m)]

    intervals: list[FlowInterval] = []
    cur_j = None
    times: list[float] = []
    states: list[list[float]] = []
    inputs: list[list[float]] = []

    def flush():
        if cur_j is None:
            return
        t_arr = np.array(times)
        intervals.append(
            FlowInterval(
                j=cur_j,
                g0=int(round(t_arr[0] / h)),
                times=t_arr,
                states=np.array(states),
                derivs=None,
                inputs=np.array(inputs),
            )
        )

    for row in rows:
        jv = int(row[col["j"]])
        if jv != cur_j:
            flush()
            cur_j = jv
            times, states, inputs = [], [], []
        times.append(float(row[col["t"]]))
        states.append([float(row[i]) for i in x_cols])
        inputs.append([float(row[i]) for i in u_cols])
    flush()

    arc_meta = meta["initial_arc"]
    pieces = tuple(
        ArcPiece(
            k=int(p["k"]),
            s=np.array(p["s"]),
            values=np.array(p["values"]),
            derivs=None,
        )
        for p in arc_meta["pieces"]
    )
    initial_arc = MemoryArc(
        pieces=pieces,
        delay_depth=float(arc_meta["delay_depth"]),
        grid_step=float(arc_meta["grid_step"]),
        n_cont=int(arc_meta["n_cont"]),
    )
    jumps = [
        JumpEvent(
            t=float(e["t"]),
            j=int(e["j"]),
            pre=np.array(e["pre"]),
            post=np.array(e["post"]),
            u=np.array(e["u"]),
        )
        for e in meta["jumps"]
    ]
    sig = meta["input"]
    signal = InputSignal(
        kind=sig["kind"], amplitude=np.array(sig["amplitude"]), rate=float(sig["rate"])
    )
    return SolutionRecord(
        system=system,
        options=options,
        initial_arc=initial_arc,
        input=signal,
        intervals=intervals,
        jumps=jumps,
        end_condition=meta["end_condition"],
        zeno_trips=int(meta["zeno_trips"]),
    )


# ---------------------------------------------------------------------------
# checks and reports


def compute_fits(scenario: Scenario, records: dict[str, SolutionRecord]) -> dict:
    """Run the requested calibration fits, in dependency order."""
    out: dict = {}
    spec = scenario.fits
    if "beta" in spec:
        runs = spec["beta"].get("runs") or [r.name for r in scenario.runs]
        out["beta"] = fit_kll_beta([records[n] for n in runs])
    if "rho" in spec:
        if "beta" not in out:
            raise ScenarioError("analysis.fits.rho: needs beta fitted first")
        run = spec["rho"].get("run") or spec["rho"].get("runs", [None])[0]
        if run is None:
            raise ScenarioError("analysis.fits.rho: needs a calibration run")
        out["rho"] = fit_linear_rho(records[run], out["beta"])
    if "gamma" in spec:
        runs = spec["gamma"].get("runs") or [r.name for r in scenario.runs]
        frac = float(spec["gamma"].get("tail_fraction", 0.25))
        out["gamma"] = fit_linear_gamma([records[n] for n in runs], frac)
    if "alpha" in spec:
        runs = spec["alpha"].get("runs") or [r.name for r in scenario.runs]
        out["alpha"] = fit_power_alpha([records[n] for n in runs])
    return out


def _need_cert(scenario: Scenario, check: str) -> CertificateSpec:
    if scenario.certificate is None:
        raise ScenarioError(f"analysis.checks: {check} needs a certificate block")
    return scenario.certificate


def _pick_rho(scenario, fits, check: str) -> ClassKFn:
    if "rho" in fits:
        return fits["rho"]
    cert = scenario.certificate
    if cert is not None and cert.rho is not None:
        return cert.rho
    raise ScenarioError(f"analysis.checks: {check} needs a fitted or certificate rho")


def _predicate_from(options: dict, n_cont: int):
    spec = options.get("predicate", {"kind": "all"})
    kind = spec.get("kind", "all")
    if kind == "all":
        return lambda row: True
    if kind == "dist_below":
        limit = float(spec["value"])
        return lambda row: float(np.linalg.norm(row[:n_cont])) <= limit
    raise ScenarioError(f"analysis.checks: unknown predicate kind {kind!r}")


def dispatch_check(req, scenario: Scenario, records, fits) -> list[tuple[str, object]]:
    """Execute one check request; returns (entry id, report) pairs."""
    recs = [records[n] for n in req.runs]
    opt = req.options
    tol = opt.get("tol")
    name = req.check
    if name == "iiss_lkf":
        return [(name, check_iiss_lkf(_need_cert(scenario, name), recs, tol))]
    if name == "exponential":
        return [(name, check_exponential(_need_cert(scenario, name), recs, tol))]
    if name == "storage":
        return [(name, check_storage(_need_cert(scenario, name), recs, tol))]
    if name == "jump_nonincrease":
        cert = _need_cert(scenario, name)
        return [(name, check_jump_nonincrease(cert.functional, recs, tol if tol is not None else 1e-9))]
    if name == "flow_bound_audit":
        cert = _need_cert(scenario, name)
        if scenario.quad_params is None:
            raise ScenarioError("analysis.checks: flow_bound_audit needs the quadcopter system")
        eps1, eps2 = scenario.eps
        return [
            (name, flow_bound_audit(scenario.quad_params, cert, eps1, eps2, recs, tol))
        ]
    if name == "iiss_bound":
        beta = fits.get("beta")
        if beta is None:
            raise ScenarioError("analysis.checks: iiss_bound needs analysis.fits.beta")
        rho = _pick_rho(scenario, fits, name)
        out = []
        for rn in req.runs:
            rec = records[rn]
            out.append(
                (
                    f"{name}:{rn}",
                    check_iiss_bound(rec, beta, rho, initial_sup_norm(rec), tol if tol is not None else 0.05),
                )
            )
        return out
    if name == "bebs":
        cert = _need_cert(scenario, name)
        alpha1, alpha2 = certificate_alpha_bounds(cert.functional)
        rho = _pick_rho(scenario, fits, name)
        return [
            (f"{name}:{rn}", check_bebs(records[rn], alpha1, alpha2, rho, tol if tol is not None else 0.05))
            for rn in req.runs
        ]
    if name == "asymptotic_gain":
        gamma = fits.get("gamma")
        if "gamma" in opt:
            gamma = parse_class_k(opt["gamma"], "analysis.checks.gamma")
        if gamma is None:
            raise ScenarioError("analysis.checks: asymptotic_gain needs a gamma (fit or inline)")
        frac = float(opt.get("tail_fraction", 0.25))
        rid = f"{name}:{'+'.join(req.runs)}"
        return [(rid, check_asymptotic_gain(recs, gamma, frac, tol if tol is not None else 0.05))]
    if name == "prestability":
        alpha = fits.get("alpha")
        gamma = fits.get("gamma")
        if "alpha" in opt:
            alpha = parse_class_k(opt["alpha"], "analysis.checks.alpha")
        if "gamma" in opt:
            gamma = parse_class_k(opt["gamma"], "analysis.checks.gamma")
        if alpha is None or gamma is None:
            raise ScenarioError("analysis.checks: prestability needs alpha and gamma")
        return [
            (name, check_global_prestability(recs, alpha, gamma, tol if tol is not None else 0.05))
        ]
    if name == "detectability":
        predicate = _predicate_from(opt, scenario.system.n_cont)
        window = float(opt.get("tail_window", 5.0))
        return [
            (
                name,
                check_zero_input_detectability(recs, predicate, window, tol if tol is not None else 1e-2),
            )
        ]
    raise ScenarioError(f"analysis.checks: unknown check {name!r}")


def _serialize_report(rep) -> dict:
    kind = type(rep).__name__
    if kind == "CheckReport":
        return _plain(
            {
                "kind": kind,
                "name": rep.name,
                "tol": rep.tol,
                "passed": rep.passed,
                "conditions": rep.conditions,
                "worst_margin": rep.worst_margin,
                "details": rep.details,
                "violations": [
                    {"condition": v.condition, "t": v.t, "j": v.j, "lhs": v.lhs, "rhs": v.rhs}
                    for v in rep.violations[:10]
                ],
            }
        )
    if kind == "BoundReport":
        first = rep.first_violation
        return _plain(
            {
                "kind": kind,
                "name": rep.name,
                "tol": rep.tol,
                "passed": rep.passed,
                "max_ratio": rep.max_ratio,
                "n_points": rep.n_points,
                "first_violation": None
                if first is None
                else {"t": first.t, "j": first.j, "ratio": first.ratio},
                "params": rep.params,
            }
        )
    if kind == "DetectabilityVerdict":
        return _plain(
            {
                "kind": kind,
                "passed": rep.passed,
                "tol": rep.tol,
                "tail_window": rep.tail_window,
                "tail_max": rep.tail_max,
                "per_run": rep.per_run,
                "excluded": rep.excluded,
            }
        )
    raise TypeError(f"cannot serialize report type {kind}")


def _describe_fit(fit) -> dict:
    from .comparison import KLLFn

    if isinstance(fit, KLLFn):
        return {
            "kind": "KLL",
            "gain": {"family": fit.gain.family, "c": fit.gain.c, "p": fit.gain.p},
            "rate": fit.rate,
        }
    return {"kind": "classK", "family": fit.family, "c": fit.c, "p": fit.p}


def build_report(scenario: Scenario, records: dict[str, SolutionRecord]) -> dict:
    """Compute fits and all requested checks; returns the report tree."""
    fits = compute_fits(scenario, records)
    entries = []
    all_ok = True
    for req in scenario.checks:
        for rid, rep in dispatch_check(req, scenario, records, fits):
            passed = bool(rep.passed)
            satisfied = (not passed) if req.expect_fail else passed
            if req.gate and not satisfied:
                all_ok = False
            entries.append(
                {
                    "id": rid,
                    "check": req.check,
                    "runs": list(req.runs),
                    "gate": req.gate,
                    "expect_fail": req.expect_fail,
                    "passed": passed,
                    "satisfied": satisfied,
                    "report": _serialize_report(rep),
                }
            )
    run_summaries = {}
    for name, rec in records.items():
        last = rec.intervals[-1]
        n = rec.system.n_cont
        run_summaries[name] = {
            "end_condition": rec.end_condition,
            "jumps": len(rec.jumps),
            "final_t": float(last.times[-1]),
            "final_dist": float(np.linalg.norm(last.states[-1, :n])),
        }
    return {
        "scenario": scenario.name,
        "system": scenario.system_kind,
        "options": {"h": scenario.options.h, "t_end": scenario.options.t_end},
        "fits": {k: _describe_fit(v) for k, v in fits.items()},
        "runs": run_summaries,
        "checks": entries,
        "all_gates_passed": all_ok,
    }


# ---------------------------------------------------------------------------
# subcommands


def _resolve_out(args, scenario: Scenario) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or scenario.out_dir or "hymem_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_simulate(scenario: Scenario, out_dir: Path, jobs: int) -> dict[str, SolutionRecord]:
    records = run_scenario(scenario, jobs)
    rho = _energy_rho(scenario)
    for run in scenario.runs:
        rec = records[run.name]
        csv_path, meta_path = write_trajectory(
            out_dir, run.name, rec, scenario.certificate, rho
        )
        print(f"{run.name}: {rec.end_condition}, {len(rec.jumps)} jumps -> {csv_path}")
    return records


def cmd_check(scenario: Scenario, out_dir: Path, records: dict[str, SolutionRecord]) -> bool:
    report = build_report(scenario, records)
    path = out_dir / "report.json"
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for entry in report["checks"]:
        tag = "gate" if entry["gate"] else ("demo" if entry["expect_fail"] else "info")
        verdict = "PASS" if entry["passed"] else "FAIL"
        suffix = ""
        if entry["expect_fail"]:
            suffix = " (expected)" if entry["satisfied"] else " (unexpected)"
        print(f"[{tag}] {entry['id']:<40} {verdict}{suffix}")
    ok = report["all_gates_passed"]
    print(f"report -> {path}")
    print("all gates passed" if ok else "GATE FAILURE")
    return ok


def cmd_plot(scenario: Scenario, out_dir: Path, records: dict[str, SolutionRecord]) -> None:
    for run in scenario.runs:
        rec = records[run.name]
        n = rec.system.n_cont
        ts, dists, jump_ts = [], [], [e.t for e in rec.jumps]
        for iv in rec.intervals:
            ts.append(iv.times)
            dists.append(np.linalg.norm(iv.states[:, :n], axis=1))
        t = np.concatenate(ts)
        d = np.concatenate(dists)
        norm_path = out_dir / f"{run.name}_norm.svg"
        line_plot(
            str(norm_path),
            [("", t, d)],
            f"{scenario.name}: |x|_W, run {run.name}",
            "t [s]",
            "|x(t)|_W",
            jump_times=jump_ts,
        )
        print(f"{run.name}: plot -> {norm_path}")
        if scenario.system_kind == "quadcopter":
            vel = np.concatenate([iv.states[:, 3:6] for iv in rec.intervals])
            vel_path = out_dir / f"{run.name}_velocity.svg"
            line_plot(
                str(vel_path),
                [(f"v{i + 1}", t, vel[:, i]) for i in range(3)],
                f"{scenario.name}: velocity, run {run.name}",
                "t [s]",
                "v(t)",
                jump_times=jump_ts,
            )
            print(f"{run.name}: plot -> {vel_path}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hymem",
        description="Simulate hybrid systems with delayed flows and check stability bounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, blurb in (
        ("simulate", "run all scenario runs and write trajectory files"),
        ("check", "run checks and write report.json"),
        ("plot", "write SVG plots per run"),
        ("all", "simulate, check, and plot"),
    ):
        p = sub.add_parser(cmd, help=blurb)
        p.add_argument("--scenario", required=True, help="scenario YAML path")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or scenario)")
        p.add_argument("--step", type=float, help="override integrator step")
        p.add_argument("--tend", type=float, help="override flow-time horizon")
        p.add_argument("--seed", type=int, help="reserved; dynamics are deterministic")
        p.add_argument("--jobs", type=int, default=1, help="worker threads for runs")
    args = parser.parse_args(argv)

    try:
        scenario = load_scenario(args.scenario, step=args.step, t_end=args.tend)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    out_dir = _resolve_out(args, scenario)

    try:
        if args.command == "simulate":
            cmd_simulate(scenario, out_dir, args.jobs)
            return 0
        if args.command == "check":
            records = run_scenario(scenario, args.jobs)
            return 0 if cmd_check(scenario, out_dir, records) else 1
        if args.command == "plot":
            records = run_scenario(scenario, args.jobs)
            cmd_plot(scenario, out_dir, records)
            return 0
        records = cmd_simulate(scenario, out_dir, args.jobs)
        ok = cmd_check(scenario, out_dir, records)
        cmd_plot(scenario, out_dir, records)
        return 0 if ok else 1
    except (ScenarioError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())

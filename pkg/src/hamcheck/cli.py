"""Command-line pipeline: problem registry -> extremal -> sheet -> checks -> report.

Subcommands
-----------
verify    full certification pipeline (first-order checks, sheet, the three
          standing assumptions, endpoint probes, cost-comparison sampling,
          second-order sufficiency test)
mintime   minimum-time pipeline (hypothesis sampling plus a seeded pool of
          perturbed-bang competitors)
flow      build and export the flow sheet only
extremal  integrate the reference extremal and report first-order residuals

Exit codes: 0 certified, 2 refuted-at-step, 3 inconclusive, 1 execution error.
Reports are JSON documents validating against the shipped schema; figures are
SVG with deterministic bytes; the ``HAMCHECK_THREADS`` environment variable
caps worker counts.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from . import problems
from .errors import ConfigError, HamcheckError, NonsmoothHessianError
from .extremal import check_constancy, check_maximization, check_transversality, integrate_extremal
from .flowsheet import LagrangianChart, check_invertibility, flow_from_lambda
from .perturb import (
    PerturbationSpec,
    corroborate_mintime,
    make_reference_trajectory,
    mintime_competitors,
    needle_family,
    path_family,
)
from .verify import (
    VerificationReport,
    check_assumption2,
    check_assumption3,
    check_mintime,
    check_theorem1,
    check_theorem2,
    phi_probe,
)

SCHEMA_VERSION = "1"

DEFAULT_TOLERANCES = {
    "transversality": 1e-8,
    "maximization": 1e-8,
    "constancy": 1e-8,
    "assumption3_flow": 1e-8,
    "assumption3_reference": 1e-8,
    "theorem1": 1e-7,
    "dphi": 1e-6,
    "eps_pd": 1e-6,
    "mintime_orthogonality": 1e-7,
    "eps_hit": 1e-4,
    "mintime_time": 1e-6,
}


@dataclass
class RunConfig:
    """One canonical, serializable description of a run."""

    problem: str
    params: dict = field(default_factory=dict)
    alpha: str = "auto"
    alpha_k: float = 1.0
    chart_radius: Optional[float] = None
    horizon_factor: float = 1.1
    time_points: int = 49
    params_per_axis: int = 9
    ref_grid_points: int = 201
    integrator_rtol: float = 1e-10
    integrator_atol: float = 1e-10
    delta_min: Optional[float] = None
    tolerances: dict = field(default_factory=dict)
    perturb_kind: Optional[str] = None
    amplitude: Optional[float] = None
    count: int = 200
    tube_radius: Optional[float] = None
    seed: int = 0
    out_dir: Optional[str] = None

    def validate(self) -> None:
        if self.problem not in problems.registry():
            raise ConfigError(f"unknown problem {self.problem!r}")
        for name, value in {**DEFAULT_TOLERANCES, **self.tolerances}.items():
            if not (isinstance(value, (int, float)) and value > 0):
                raise ConfigError(f"tolerance {name!r} must be positive, got {value!r}")
        for name in ("horizon_factor", "alpha_k", "integrator_rtol", "integrator_atol"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.time_points < 5 or self.params_per_axis < 4 or self.ref_grid_points < 9:
            raise ConfigError("grids are too coarse (need >=5 times, >=4 params, >=9 samples)")
        if self.count < 1:
            raise ConfigError("perturbation count must be at least 1")
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ConfigError(f"unknown tolerance names: {sorted(unknown)}")

    def tol(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES[name]))

    def to_dict(self) -> dict:
        return _jsonable(dataclasses.asdict(self))

    @staticmethod
    def from_dict(data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(RunConfig)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return RunConfig(**data)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {}
        for f in dataclasses.fields(obj):
            if f.name in ("segments", "state_fn", "control_fn"):
                continue
            out[f.name] = _jsonable(getattr(obj, f.name))
        for prop in ("passed", "min_margin", "mean_margin", "grad_norm", "verdict"):
            if hasattr(obj, prop) and prop not in out:
                try:
                    out[prop] = _jsonable(getattr(obj, prop))
                except Exception:
                    pass
        return out
    if callable(obj):
        return None
    return obj


def _resolved(config: RunConfig, built: problems.BuiltProblem) -> RunConfig:
    """Fill unset fields from the problem's own defaults."""
    d = built.defaults
    cfg = dataclasses.replace(config)
    if cfg.chart_radius is None:
        cfg.chart_radius = float(d.get("chart_radius", 0.2))
    if cfg.alpha == "auto":
        cfg.alpha = d.get("alpha", "auto")
    if "alpha_k" in d and cfg.alpha_k == 1.0:
        cfg.alpha_k = float(d["alpha_k"])
    if cfg.perturb_kind is None:
        cfg.perturb_kind = d.get("perturb_kind", "needle")
    if cfg.amplitude is None:
        cfg.amplitude = float(d.get("amplitude", 0.05))
    if cfg.tube_radius is None:
        cfg.tube_radius = float(d.get("tube_radius", 2.0 * cfg.amplitude))
    if cfg.delta_min is None:
        cfg.delta_min = 1e-3 * cfg.chart_radius
    return cfg


def _build_stage(config: RunConfig):
    """Shared pipeline prefix: extremal, first-order checks, sheet, assumptions."""
    built = problems.get_problem(config.problem, config.params)
    config = _resolved(config, built)
    prob = built.prob
    report = VerificationReport(problem=config.problem)

    ext = integrate_extremal(
        prob,
        built.uref,
        built.ell0,
        alpha_mode=config.alpha,
        alpha_k=config.alpha_k,
        grid_points=config.ref_grid_points,
        rtol=config.integrator_rtol,
        atol=config.integrator_atol,
    )
    report.pmp_transversality = check_transversality(prob, ext, tol=config.tol("transversality"))
    report.pmp_maximization = check_maximization(prob, ext, tol=config.tol("maximization"))
    report.pmp_constancy = check_constancy(prob, ext, tol=config.tol("constancy"))
    if not (
        report.pmp_transversality.passed
        and report.pmp_maximization.passed
        and report.pmp_constancy.passed
    ):
        report.verdict = "refuted-at-step"
        report.failing_check = "pmp"
        return config, built, ext, None, report

    chart = LagrangianChart(alpha=ext.alpha0, center=ext.x0, radius=config.chart_radius)
    chart.validate(ext.ps[0])
    sheet = flow_from_lambda(
        built.spec,
        prob,
        chart,
        horizon=config.horizon_factor * ext.horizon,
        time_points=config.time_points,
        params_per_axis=config.params_per_axis,
        rtol=config.integrator_rtol,
        atol=config.integrator_atol,
    )
    report.assumption2 = check_assumption2(sheet, seed=config.seed)
    report.assumption3 = check_assumption3(
        built.spec,
        prob,
        ext,
        sheet,
        seed=config.seed,
        tol_flow=config.tol("assumption3_flow"),
        tol_reference=config.tol("assumption3_reference"),
    )
    if not report.assumption3.passed:
        report.verdict = "refuted-at-step"
        report.failing_check = "assumption3"
        return config, built, ext, sheet, report
    report.assumption4 = check_invertibility(sheet, delta_min=config.delta_min)
    if not report.assumption4.passed:
        report.verdict = "refuted-at-step"
        report.failing_check = "assumption4"
        return config, built, ext, sheet, report
    return config, built, ext, sheet, report


def run_verify(config: RunConfig):
    """Full certification pipeline; returns (report, sheet, ext, config)."""
    config.validate()
    config, built, ext, sheet, report = _build_stage(config)
    if report.verdict == "refuted-at-step":
        return report, sheet, ext, config
    prob = built.prob

    try:
        report.phi = phi_probe(sheet, prob, ext, ext.horizon, ext.xf, want_hess=True)
    except NonsmoothHessianError:
        report.phi = phi_probe(sheet, prob, ext, ext.horizon, ext.xf, want_hess=False)

    pspec = PerturbationSpec(
        kind=config.perturb_kind,
        amplitude=config.amplitude,
        count=config.count,
        seed=config.seed,
        tube_radius=config.tube_radius,
    )
    if config.perturb_kind == "path-based":
        family = path_family(prob, ext, pspec)
    else:
        family = needle_family(prob, built.uref, ext, pspec)
    trajectories = [make_reference_trajectory(prob, ext)] + family.accepted
    report.theorem1 = check_theorem1(
        sheet, prob, ext, trajectories, tol=config.tol("theorem1")
    )
    report.extras["perturbation"] = {
        "kind": pspec.kind,
        "count": pspec.count,
        "accepted": family.accepted_count,
        "rejected": family.rejected,
        "seed": pspec.seed,
    }
    if report.theorem1.margins.size and not report.theorem1.passed:
        report.verdict = "refuted-at-step"
        report.failing_check = "theorem1"
        return report, sheet, ext, config

    if report.phi.hess is None:
        report.verdict = "inconclusive"
        report.failing_check = "theorem2:nonsmooth-hessian"
        return report, sheet, ext, config
    report.theorem2 = check_theorem2(
        report.phi, prob, eps_pd=config.tol("eps_pd"), dphi_tol=config.tol("dphi")
    )
    if report.theorem2.passed:
        report.verdict = "certified"
    else:
        report.verdict = "inconclusive"
        report.failing_check = "theorem2"
    return report, sheet, ext, config


def run_mintime(config: RunConfig):
    """Minimum-time pipeline; returns (report, sheet, ext, config)."""
    config.validate()
    entry = problems.registry()[config.problem]
    if not entry.mintime:
        raise ConfigError(f"problem {config.problem!r} is not a minimum-time problem")
    config, built, ext, sheet, report = _build_stage(config)
    report.extras["horizon"] = ext.horizon
    report.extras["switch_times"] = [a.end_time for a in built.uref.arcs[:-1]]
    if report.verdict == "refuted-at-step":
        return report, sheet, ext, config
    prob = built.prob

    try:
        report.phi = phi_probe(sheet, prob, ext, ext.horizon, ext.xf, want_hess=False)
    except HamcheckError:
        report.phi = None

    report.mintime = check_mintime(
        sheet,
        prob,
        ext,
        seed=config.seed,
        tol_orth=config.tol("mintime_orthogonality"),
    )
    pspec = PerturbationSpec(
        kind="bounded-variation",
        amplitude=config.amplitude,
        count=config.count,
        seed=config.seed,
        tube_radius=config.tube_radius,
    )
    family = mintime_competitors(prob, ext, pspec)
    corro = corroborate_mintime(
        family, ext.horizon, eps_hit=config.tol("eps_hit"), tol=config.tol("mintime_time")
    )
    report.extras["corroboration"] = dataclasses.asdict(corro)
    report.extras["corroboration"]["passed"] = corro.passed
    report.extras["competitors"] = {
        "count": pspec.count,
        "seed": pspec.seed,
        "amplitude": pspec.amplitude,
    }
    report.extras["family"] = family

    if not report.mintime.passed:
        report.verdict = "inconclusive"
        report.failing_check = "mintime-hypotheses"
    elif not corro.passed:
        report.verdict = "inconclusive"
        report.failing_check = "mintime-corroboration"
    else:
        report.verdict = "certified"
    return report, sheet, ext, config


EXIT_CODES = {"certified": 0, "refuted-at-step": 2, "inconclusive": 3, "error": 1}


def report_to_dict(report: VerificationReport, command: str, config: RunConfig) -> dict:
    checks = {}
    for name in (
        "pmp_transversality",
        "pmp_maximization",
        "pmp_constancy",
        "assumption2",
        "assumption3",
        "assumption4",
        "phi",
        "theorem1",
        "theorem2",
        "mintime",
    ):
        value = getattr(report, name)
        if value is not None:
            checks[name] = _jsonable(value)
    extras = {k: _jsonable(v) for k, v in report.extras.items() if k != "family"}
    return {
        "schema_version": SCHEMA_VERSION,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "command": command,
        "problem": report.problem,
        "verdict": report.verdict,
        "failing_check": report.failing_check,
        "exit_code": EXIT_CODES[report.verdict],
        "seed": config.seed,
        "config": config.to_dict(),
        "checks": checks,
        "extras": extras,
        "error": None,
    }


def emit_plots(sheet, report: VerificationReport, out_dir: str) -> list:
    """Write the standard SVG figures with deterministic bytes."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "hamcheck"
    written = []

    def save(fig, name):
        path = os.path.join(out_dir, name)
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)

    ts = sheet.times
    minsv = np.array(
        [
            min(
                float(np.linalg.svd(sheet.jac[i, c], compute_uv=False)[-1])
                for c in range(sheet.params.shape[0])
            )
            for i in range(ts.size)
        ]
    )
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ts, minsv, lw=1.5)
    ax.set_xlabel("t")
    ax.set_ylabel("min singular value")
    ax.set_title("projection Jacobian: smallest singular value")
    fig.tight_layout()
    save(fig, "minsv_vs_t.svg")

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(ts, sheet.theta[:, sheet.center_index], lw=1.5)
    ax.set_xlabel("t")
    ax.set_ylabel("theta")
    ax.set_title("accumulated action over the reference column")
    fig.tight_layout()
    save(fig, "theta_center.svg")

    fig, ax = plt.subplots(figsize=(5, 3.2))
    margins = report.theorem1.margins if report.theorem1 is not None else np.zeros(0)
    if margins.size:
        ax.hist(margins, bins=min(30, max(5, margins.size // 5)))
    else:
        ax.text(0.5, 0.5, "no samples", ha="center", va="center", transform=ax.transAxes)
    ax.set_xlabel("cost-comparison margin")
    ax.set_ylabel("count")
    ax.set_title("margin histogram")
    fig.tight_layout()
    save(fig, "margins_hist.svg")

    fig, ax = plt.subplots(figsize=(5, 3.2))
    for c in range(sheet.params.shape[0]):
        for i in range(sheet.n):
            ax.plot(ts, sheet.ell[:, c, i], lw=0.7, alpha=0.7)
    ax.set_xlabel("t")
    ax.set_ylabel("state components")
    ax.set_title("projected flow columns")
    fig.tight_layout()
    save(fig, "extremal_field.svg")
    return written


def _write_outputs(report, sheet, config: RunConfig, command: str) -> dict:
    doc = report_to_dict(report, command, config)
    if config.out_dir:
        os.makedirs(config.out_dir, exist_ok=True)
        with open(os.path.join(config.out_dir, "report.json"), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        if sheet is not None:
            sheet.export_csv(os.path.join(config.out_dir, "sheet.csv"))
            emit_plots(sheet, report, config.out_dir)
        if report.theorem1 is not None:
            with open(os.path.join(config.out_dir, "margins.csv"), "w") as fh:
                fh.write("index,margin\n")
                for i, m in enumerate(report.theorem1.margins):
                    fh.write(f"{i},{m:.15g}\n")
        family = report.extras.get("family")
        if family is not None:
            family.export_csv(os.path.join(config.out_dir, "competitors.csv"))
    return doc


def _parse_param_value(text: str):
    parts = text.split(",")
    vals = []
    for p in parts:
        p = p.strip()
        try:
            vals.append(float(p))
        except ValueError:
            return text
    return vals[0] if len(vals) == 1 else vals


def _config_from_args(args) -> RunConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    config = RunConfig.from_dict(data) if data else RunConfig(problem=args.problem or "")
    if args.problem:
        config.problem = args.problem
    for item in args.param or []:
        if "=" not in item:
            raise ConfigError(f"--param expects k=v, got {item!r}")
        key, value = item.split("=", 1)
        config.params[key.strip()] = _parse_param_value(value)
    if args.out:
        config.out_dir = args.out
    if args.seed is not None:
        config.seed = args.seed
    if getattr(args, "count", None) is not None:
        config.count = args.count
    if getattr(args, "amplitude", None) is not None:
        config.amplitude = args.amplitude
    if getattr(args, "chart_radius", None) is not None:
        config.chart_radius = args.chart_radius
    if getattr(args, "horizon_factor", None) is not None:
        config.horizon_factor = args.horizon_factor
    if getattr(args, "alpha", None) is not None:
        config.alpha = args.alpha
    if getattr(args, "alpha_k", None) is not None:
        config.alpha_k = args.alpha_k
    if not config.problem:
        raise ConfigError("no problem selected (use --problem or a config file)")
    return config


def _run_flow(config: RunConfig):
    config.validate()
    config, built, ext, sheet, report = _build_stage(config)
    if report.verdict != "refuted-at-step":
        report.verdict = "certified" if report.assumption4.passed else "refuted-at-step"
        if not report.assumption4.passed:
            report.failing_check = "assumption4"
    return report, sheet, ext, config


def _run_extremal(config: RunConfig):
    config.validate()
    built = problems.get_problem(config.problem, config.params)
    config = _resolved(config, built)
    prob = built.prob
    report = VerificationReport(problem=config.problem)
    ext = integrate_extremal(
        prob,
        built.uref,
        built.ell0,
        alpha_mode=config.alpha,
        alpha_k=config.alpha_k,
        grid_points=config.ref_grid_points,
        rtol=config.integrator_rtol,
        atol=config.integrator_atol,
    )
    report.pmp_transversality = check_transversality(prob, ext, tol=config.tol("transversality"))
    report.pmp_maximization = check_maximization(prob, ext, tol=config.tol("maximization"))
    report.pmp_constancy = check_constancy(prob, ext, tol=config.tol("constancy"))
    ok = (
        report.pmp_transversality.passed
        and report.pmp_maximization.passed
        and report.pmp_constancy.passed
    )
    report.verdict = "certified" if ok else "refuted-at-step"
    if not ok:
        report.failing_check = "pmp"
    report.extras["horizon"] = ext.horizon
    return report, None, ext, config


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hamcheck",
        description="numerical certification of strong local optimality for "
        "smooth optimal control problems",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("verify", "run the full certification pipeline"),
        ("mintime", "run the minimum-time pipeline"),
        ("flow", "build the flow sheet and export it"),
        ("extremal", "integrate the reference extremal and check it"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--problem", help="registered problem name")
        p.add_argument("--param", action="append", help="problem parameter k=v[,v...]")
        p.add_argument("--config", help="JSON config file (flags override)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--count", type=int, default=None, help="perturbation sample count")
        p.add_argument("--amplitude", type=float, default=None)
        p.add_argument("--chart-radius", dest="chart_radius", type=float, default=None)
        p.add_argument("--horizon-factor", dest="horizon_factor", type=float, default=None)
        p.add_argument("--alpha", choices=["auto", "from-c0", "quadratic"], default=None)
        p.add_argument("--alpha-k", dest="alpha_k", type=float, default=None)

    args = parser.parse_args(argv)
    runners = {
        "verify": run_verify,
        "mintime": run_mintime,
        "flow": _run_flow,
        "extremal": _run_extremal,
    }
    try:
        config = _config_from_args(args)
        report, sheet, ext, config = runners[args.command](config)
        doc = _write_outputs(report, sheet, config, args.command)
        tail = f" ({report.failing_check})" if report.failing_check else ""
        print(f"hamcheck {args.command} {config.problem}: {report.verdict}{tail}")
        return EXIT_CODES[report.verdict]
    except HamcheckError as exc:
        _write_error_report(args, exc)
        print(f"hamcheck error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


def _write_error_report(args, exc) -> None:
    out = getattr(args, "out", None)
    if not out:
        return
    try:
        os.makedirs(out, exist_ok=True)
        doc = {
            "schema_version": SCHEMA_VERSION,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "command": args.command,
            "problem": args.problem or "",
            "verdict": "error",
            "failing_check": None,
            "exit_code": 1,
            "seed": args.seed or 0,
            "config": {},
            "checks": {},
            "extras": {},
            "error": f"{type(exc).__name__}: {exc}",
        }
        with open(os.path.join(out, "report.json"), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError:
        pass


if __name__ == "__main__":
    sys.exit(main())

"""Scenario runner: config files in, trajectory CSVs and experiment reports out.

Config files are INI-style (``[section]`` headers, ``key = value`` lines).
Every key is checked against ``SCHEMA``; unknown sections or keys are errors.
"""

from __future__ import annotations

import argparse
import configparser
import enum
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.stats import spearmanr

from . import dynamics
from .asymptotics import AsymptoticPrediction, LimitKind, RatioLimit, predict
from .errors import ConfigError, FDEGrowthError
from .measures import MeasureKernel, PowerLawDensity, SupportKind, total_mass
from .nonlinearity import LambdaClass, Nonlinearity, make_custom, make_example_family, make_sqrt

SCHEMA = {
    "scenario": {"name", "description"},
    "nonlinearity": {"name", "theta", "f", "f_prime", "log_f", "lambda"},
    "kernel": {"support", "tau", "atoms", "density", "alpha", "scale", "mass", "s_max"},
    "equation": {"kind", "initial", "history_grid", "history_values"},
    "integration": {"t_end", "h", "thin", "refine", "refine_t_end"},
    "report": {"window", "value_tol", "spearman_min", "movement_factor"},
    "prediction": {"override"},
}
REQUIRED = {"nonlinearity": {"name"}, "kernel": {"support"}, "equation": {"kind"},
            "integration": {"t_end", "h"}}


# -- config --------------------------------------------------------------------------

@dataclass(frozen=True)
class Tolerances:
    window: float = 0.3
    value_tol: float = 0.10
    spearman_min: float = 0.8
    movement_factor: float = 2.0


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    nonlinearity: Nonlinearity
    kernel: MeasureKernel
    kernel_text: str
    equation: str
    initial: float
    history: Optional[dynamics.HistoryFunction]
    t_end: float
    h: float
    thin: int
    refine: bool
    refine_t_end: float
    tolerances: Tolerances
    override: Optional[RatioLimit] = None


def _float(section, key, default=None, positive=True):
    raw = section.get(key)
    if raw is None:
        if default is None:
            raise ConfigError(f"[{section.name}] needs '{key}'")
        return default
    try:
        value = float(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} = {raw!r} is not a number") from None
    if not math.isfinite(value) or (positive and not value > 0):
        raise ConfigError(f"[{section.name}] {key} must be a positive number")
    return value


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"{what}: cannot parse {text!r}") from None


def _bool(section, key, default: bool) -> bool:
    try:
        return section.getboolean(key, fallback=default)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} must be true or false") from None


def _parse_lambda(text: str) -> LambdaClass:
    text = text.strip().lower()
    if text == "zero":
        return LambdaClass.zero()
    if text in ("infinite", "inf"):
        return LambdaClass.infinite()
    try:
        return LambdaClass.finite(float(text))
    except ValueError:
        raise ConfigError(f"lambda must be zero, infinite or a number, got {text!r}") from None


def _build_nonlinearity(sec) -> Nonlinearity:
    name = sec["name"].strip()
    if name == "example":
        return make_example_family(_float(sec, "theta"))
    if name == "sqrt":
        return make_sqrt()
    if name == "custom":
        for key in ("f", "f_prime", "log_f"):
            if key not in sec:
                raise ConfigError(f"custom nonlinearity needs '{key}'")
        declared = _parse_lambda(sec["lambda"]) if "lambda" in sec else None
        try:
            return make_custom(sec["f"], sec["f_prime"], sec["log_f"], declared_lambda=declared)
        except (SyntaxError, ValueError) as exc:
            raise ConfigError(f"custom nonlinearity: {exc}") from None
    raise ConfigError(f"unknown nonlinearity {name!r}")


def _build_kernel(sec):
    support = sec["support"].strip()
    atoms = []
    if "atoms" in sec and sec["atoms"].strip():
        for item in sec["atoms"].split(","):
            parts = item.split(":")
            if len(parts) != 2:
                raise ConfigError(f"atom {item.strip()!r} must be location:weight")
            loc, weight = _floats(parts[0], "atom location"), _floats(parts[1], "atom weight")
            if len(loc) != 1 or len(weight) != 1:
                raise ConfigError(f"atom {item.strip()!r} must be location:weight")
            atoms.append((loc[0], weight[0]))
    density = None
    kind = sec.get("density", "none").strip()
    if kind == "powerlaw":
        alpha = _float(sec, "alpha")
        if "mass" in sec and "scale" in sec:
            raise ConfigError("give either scale or mass for a power-law density")
        if "mass" in sec:
            density = PowerLawDensity.normalized(alpha, _float(sec, "mass"))
        else:
            density = PowerLawDensity(alpha, _float(sec, "scale"))
    elif kind != "none":
        raise ConfigError(f"unknown density {kind!r}")
    try:
        if support == "delay":
            mu = MeasureKernel.delay(_float(sec, "tau"), atoms=atoms, density=density)
        elif support == "half-line":
            mu = MeasureKernel.half_line(atoms=atoms, density=density, s_max=_float(sec, "s_max", 1e6))
        else:
            raise ConfigError(f"unknown kernel support {support!r}")
    except ConfigError:
        raise
    except (ValueError, FDEGrowthError) as exc:
        raise ConfigError(f"kernel: {exc}") from None
    parts = [f"{support}"]
    if support == "delay":
        parts.append(f"tau={mu.tau:g}")
    if atoms:
        parts.append("atoms=" + ",".join(f"{s:g}:{w:g}" for s, w in mu.atoms))
    if density is not None:
        parts.append(density.name)
    return mu, " ".join(parts)


def parse_config(text: str, name: str = "scenario", h: Optional[float] = None,
                 t_end: Optional[float] = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        extra = set(cp[section]) - SCHEMA[section]
        if extra:
            raise ConfigError(f"unknown keys in [{section}]: {', '.join(sorted(extra))}")
    for section, keys in REQUIRED.items():
        if section not in cp:
            raise ConfigError(f"missing section [{section}]")
        missing = keys - set(cp[section])
        if missing:
            raise ConfigError(f"[{section}] needs {', '.join(sorted(missing))}")
    empty = cp["__none__"]
    scen = cp["scenario"] if "scenario" in cp else empty
    name = scen.get("name", name).strip()

    n = _build_nonlinearity(cp["nonlinearity"])
    mu, kernel_text = _build_kernel(cp["kernel"])

    eq = cp["equation"]
    kind = eq["kind"].strip()
    if kind not in ("fde", "vde", "ode"):
        raise ConfigError(f"unknown equation kind {kind!r}")
    if kind == "fde" and mu.support is not SupportKind.DELAY:
        raise ConfigError("fde needs a delay kernel")
    if kind == "vde" and mu.support is not SupportKind.HALF_LINE:
        raise ConfigError("vde needs a half-line kernel")
    initial = _float(eq, "initial", 1.0)
    history = None
    if "history_grid" in eq or "history_values" in eq:
        if kind != "fde":
            raise ConfigError("a sampled history applies to fde only")
        try:
            history = dynamics.HistoryFunction.from_samples(
                _floats(eq.get("history_grid", ""), "history_grid"),
                _floats(eq.get("history_values", ""), "history_values"))
        except (ValueError, FDEGrowthError) as exc:
            raise ConfigError(f"history: {exc}") from None

    it = cp["integration"]
    t_end = t_end if t_end is not None else _float(it, "t_end")
    h = h if h is not None else _float(it, "h")
    thin = int(_float(it, "thin", 1.0))
    if kind == "fde" and h > mu.tau / 16.0 * (1 + 1e-12):
        raise ConfigError(f"h={h:g} exceeds tau/16 for the delay kernel")
    steps = t_end / h
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError("t_end must be a multiple of h")
    refine = _bool(it, "refine", True)
    refine_t_end = min(t_end, _float(it, "refine_t_end", 200.0))
    if abs(refine_t_end / h - round(refine_t_end / h)) > 1e-9 * max(1.0, refine_t_end / h):
        raise ConfigError("refine_t_end must be a multiple of h")

    rep = cp["report"] if "report" in cp else empty
    tol = Tolerances(
        window=_float(rep, "window", 0.3),
        value_tol=_float(rep, "value_tol", 0.10),
        spearman_min=_float(rep, "spearman_min", 0.8),
        movement_factor=_float(rep, "movement_factor", 2.0),
    )
    if not tol.window < 1:
        raise ConfigError("window must be a fraction below 1")

    override = None
    if "prediction" in cp and "override" in cp["prediction"]:
        try:
            override = RatioLimit.parse(cp["prediction"]["override"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    return ExperimentConfig(name, n, mu, kernel_text, kind, initial, history, t_end, h, thin,
                            refine, refine_t_end, tol, override)


def load_config(path, h: Optional[float] = None, t_end: Optional[float] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, name=path.stem, h=h, t_end=t_end)


# -- verdicts ------------------------------------------------------------------------

class Outcome(enum.Enum):
    CONFIRMED = "Confirmed"
    INCONSISTENT = "Inconsistent"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class Empirical:
    r_final: float
    r_extrapolated: float
    extrapolation_beta: Optional[float]
    d_final: float
    c_final: float
    window_spearman: float
    r_min: float
    r_max: float


def verdict(prediction: RatioLimit, emp: Empirical, tol: Tolerances = Tolerances()):
    """(Outcome, reason) for a prediction against empirical diagnostics.

    Value targets, and Unit read as the value 1, need r_extrapolated within
    the relative tolerance.  Otherwise Zero and Unit targets need the window
    trend to point at the target (Spearman coefficient past
    ``spearman_min``) and the final distance to the target to be at most
    1/movement_factor of the largest distance seen.
    """
    kind = prediction.kind
    if kind is LimitKind.INDETERMINATE:
        return Outcome.INCONCLUSIVE, "no prediction"
    if kind is LimitKind.VALUE:
        v = prediction.value
        err = abs(emp.r_extrapolated - v) / v
        if err <= tol.value_tol:
            return Outcome.CONFIRMED, f"relative error {err:.3g} <= {tol.value_tol:g}"
        return Outcome.INCONSISTENT, f"relative error {err:.3g} > {tol.value_tol:g}"
    if kind is LimitKind.UNIT and abs(emp.r_extrapolated - 1.0) <= tol.value_tol:
        return Outcome.CONFIRMED, f"r_extrapolated within {tol.value_tol:g} of 1"
    sign = 1.0 if kind is LimitKind.UNIT else -1.0
    rho = sign * emp.window_spearman
    if not np.isfinite(rho) or abs(rho) < tol.spearman_min:
        return Outcome.INCONCLUSIVE, f"no clear trend (spearman {emp.window_spearman:.3g})"
    if rho < 0:
        return Outcome.INCONSISTENT, f"trend away from target (spearman {emp.window_spearman:.3g})"
    if kind is LimitKind.UNIT:
        final, worst = 1.0 - emp.r_final, 1.0 - emp.r_min
    else:
        final, worst = emp.r_final, emp.r_max
    if final * tol.movement_factor <= worst:
        return Outcome.CONFIRMED, f"trend toward target, distance {worst:.3g} -> {final:.3g}"
    return Outcome.INCONCLUSIVE, f"trend toward target but distance only {worst:.3g} -> {final:.3g}"


def empirical_summary(traj: dynamics.Trajectory, window: float = 0.3) -> Empirical:
    t, r = traj.times, traj.r
    live = t > 0
    start = int(math.floor((1.0 - window) * t.size))
    tw, rw = t[start:], r[start:]
    rho = float(spearmanr(tw, rw)[0]) if tw.size >= 3 and np.ptp(rw) > 0 else 0.0
    ext = dynamics.extrapolate_limit(t, r, window=window)
    return Empirical(
        r_final=float(r[-1]),
        r_extrapolated=float(ext.limit),
        extrapolation_beta=ext.beta if not ext.degenerate else None,
        d_final=float(traj.d[-1]),
        c_final=float(traj.c[-1]),
        window_spearman=rho,
        r_min=float(np.min(r[live])),
        r_max=float(np.max(r[live])),
    )


# -- running -------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    prediction: AsymptoticPrediction
    predicted: RatioLimit
    empirical: Empirical
    refine_sup_du: Optional[float]
    outcome: Outcome
    reason: str

    FIELDS = (
        "scenario", "equation", "nonlinearity", "kernel", "t_end", "h",
        "lambda_class", "M", "C", "predicted_ratio_limit", "rationale",
        "r_final", "r_extrapolated", "extrapolation_beta", "d_final", "c_final",
        "window_spearman", "refine_sup_du", "verdict", "reason",
    )

    def fields(self) -> dict:
        p, e, c = self.prediction, self.empirical, self.config
        predicted = str(self.predicted) + (" (override)" if c.override is not None else "")
        return {
            "scenario": c.name,
            "equation": c.equation,
            "nonlinearity": c.nonlinearity.name,
            "kernel": c.kernel_text,
            "t_end": f"{c.t_end:g}",
            "h": f"{c.h:g}",
            "lambda_class": str(p.lambda_class),
            "M": f"{p.M:.10g}",
            "C": "inf" if math.isinf(p.C) else f"{p.C:.10g}",
            "predicted_ratio_limit": predicted,
            "rationale": p.rationale,
            "r_final": f"{e.r_final:.10g}",
            "r_extrapolated": f"{e.r_extrapolated:.10g}",
            "extrapolation_beta": "none" if e.extrapolation_beta is None else f"{e.extrapolation_beta:.4g}",
            "d_final": f"{e.d_final:.10g}",
            "c_final": f"{e.c_final:.10g}",
            "window_spearman": f"{e.window_spearman:.6g}",
            "refine_sup_du": "skipped" if self.refine_sup_du is None else f"{self.refine_sup_du:.3g}",
            "verdict": self.outcome.value,
            "reason": self.reason,
        }

    def text(self) -> str:
        values = self.fields()
        return "".join(f"{key}: {values[key]}\n" for key in self.FIELDS)


def _integrator(cfg: ExperimentConfig):
    if cfg.equation == "ode":
        M = total_mass(cfg.kernel)
        return lambda **kw: dynamics.integrate_ode(cfg.nonlinearity, M, y0=cfg.initial, **kw)
    if cfg.equation == "fde":
        psi = cfg.history or dynamics.HistoryFunction.from_constant(cfg.initial)
        return lambda **kw: dynamics.integrate_fde(cfg.nonlinearity, cfg.kernel, psi, **kw)
    return lambda **kw: dynamics.integrate_vde(cfg.nonlinearity, cfg.kernel, x0=cfg.initial, **kw)


def run_scenario(cfg: ExperimentConfig, out_dir=None):
    """Integrate, predict and judge one scenario; returns (report, trajectory)."""
    try:
        prediction = predict(cfg.nonlinearity, cfg.kernel)
        if cfg.equation == "ode":
            # the reference solution tracks itself exactly
            prediction = replace(prediction, predicted_ratio_limit=RatioLimit(LimitKind.UNIT),
                                 rationale="reference-equation")
        op = _integrator(cfg)
        traj = op(T_end=cfg.t_end, h=cfg.h, thin=cfg.thin)
        sup_du = None
        if cfg.refine:
            _, _, sup_du = dynamics.refine_check(op, cfg.h, T_end=cfg.refine_t_end)
    except FDEGrowthError as exc:
        raise type(exc)(f"scenario {cfg.name}: {exc}") from exc
    emp = empirical_summary(traj, cfg.tolerances.window)
    predicted = cfg.override or prediction.predicted_ratio_limit
    outcome, reason = verdict(predicted, emp, cfg.tolerances)
    report = ExperimentReport(cfg, prediction, predicted, emp, sup_du, outcome, reason)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        traj.write_csv(out / f"{cfg.name}.csv")
        (out / f"{cfg.name}.report.txt").write_text(report.text())
    return report, traj


@dataclass(frozen=True)
class SuiteRow:
    name: str
    verdict: str
    predicted: str
    r_extrapolated: str
    detail: str


def run_suite(directory, out_dir=None, h=None, t_end=None):
    """Run every ``*.ini`` in ``directory``; errors become rows instead of aborting."""
    rows = []
    for path in sorted(Path(directory).glob("*.ini")):
        try:
            cfg = load_config(path, h=h, t_end=t_end)
            report, _ = run_scenario(cfg, out_dir)
            rows.append(SuiteRow(cfg.name, report.outcome.value, str(report.predicted),
                                 f"{report.empirical.r_extrapolated:.6g}", report.reason))
        except FDEGrowthError as exc:
            rows.append(SuiteRow(path.stem, "Error", "-", "-", str(exc)))
    return rows


def suite_failed(rows) -> bool:
    return any(row.verdict in (Outcome.INCONSISTENT.value, "Error") for row in rows)


def format_suite(rows) -> str:
    lines = [f"{'scenario':<28} {'verdict':<13} {'predicted':<18} {'r_extrapolated':<15} detail"]
    for row in rows:
        lines.append(f"{row.name:<28} {row.verdict:<13} {row.predicted:<18} "
                     f"{row.r_extrapolated:<15} {row.detail}")
    counts = {}
    for row in rows:
        counts[row.verdict] = counts.get(row.verdict, 0) + 1
    lines.append("total: " + (", ".join(f"{k}={v}" for k, v in sorted(counts.items())) or "0"))
    return "\n".join(lines) + "\n"


def prediction_text(cfg: ExperimentConfig) -> str:
    p = predict(cfg.nonlinearity, cfg.kernel)
    lines = [
        f"scenario: {cfg.name}",
        f"nonlinearity: {cfg.nonlinearity.name}",
        f"kernel: {cfg.kernel_text}",
        f"lambda_class: {p.lambda_class}",
        f"M: {p.M:.10g}",
        f"C: {'inf' if math.isinf(p.C) else f'{p.C:.10g}'}",
        f"predicted_ratio_limit: {p.predicted_ratio_limit}",
        f"rationale: {p.rationale}",
    ]
    if p.report is not None:
        for cond in p.report.conditions.values():
            lines.append(f"condition {cond.name}: {cond.verdict.value}")
    return "\n".join(lines) + "\n"


# -- entry point ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdegrowth", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "integrate one scenario and judge it"),
                            ("suite", "run every *.ini scenario in a directory"),
                            ("predict", "print the theoretical prediction only")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("target", help="config file" if name != "suite" else "directory of configs")
        p.add_argument("--out", default=None, help="directory for CSV and report files")
        p.add_argument("--h", type=float, default=None, help="override the step size")
        p.add_argument("--t-end", type=float, default=None, help="override the horizon")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "suite":
            if not Path(args.target).is_dir():
                raise ConfigError(f"{args.target} is not a directory")
            rows = run_suite(args.target, args.out, args.h, args.t_end)
            sys.stdout.write(format_suite(rows))
            return 1 if suite_failed(rows) else 0
        cfg = load_config(args.target, h=args.h, t_end=args.t_end)
        if args.command == "predict":
            sys.stdout.write(prediction_text(cfg))
            return 0
        report, _ = run_scenario(cfg, args.out)
        sys.stdout.write(report.text())
        return 1 if report.outcome is Outcome.INCONSISTENT else 0
    except FDEGrowthError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Theoretical predictions for the growth ratio x(t) / F^{-1}(Mt).

The ratio limit is ``exp(-lambda C)`` whenever the kernel has a finite first
moment; for half-line kernels with an infinite moment the answer depends on
how fast the integrated tail grows, and is classified by sampled trend tests
of three limit expressions (plus a memory functional that a unit limit forces
to vanish).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BadTheta, DomainError, WrongRegime
from .measures import (
    MeasureKernel,
    SupportKind,
    first_moment,
    integrated_tail_identity,
    partial_first_moment,
    total_mass,
    window_mass,
)
from .nonlinearity import LambdaClass, LambdaKind, Nonlinearity, lambda_class

LN10 = math.log(10.0)

# half-decades of log x; x ranges from 10^3 to 10^(3e5)
CLASSIFY_LOG10_X = np.geomspace(3.0, 3.0e5, 11)
TREND_MIN_POINTS = 5
TREND_MIN_FACTOR = 10.0


class LimitKind(enum.Enum):
    VALUE = "Value"
    ZERO = "Zero"
    UNIT = "Unit"
    INDETERMINATE = "Indeterminate"


@dataclass(frozen=True)
class RatioLimit:
    kind: LimitKind
    value: Optional[float] = None

    def __post_init__(self):
        if self.kind is LimitKind.VALUE and not (self.value is not None and 0.0 < self.value <= 1.0):
            raise ValueError("a Value limit must lie in (0, 1]")

    @classmethod
    def of(cls, v: float) -> "RatioLimit":
        if v == 1.0:
            return cls(LimitKind.UNIT)
        if v == 0.0:
            return cls(LimitKind.ZERO)
        return cls(LimitKind.VALUE, float(v))

    @property
    def target(self) -> Optional[float]:
        """Numeric limit, or None when indeterminate."""
        return {LimitKind.VALUE: self.value, LimitKind.ZERO: 0.0,
                LimitKind.UNIT: 1.0}.get(self.kind)

    def __str__(self) -> str:
        if self.kind is LimitKind.VALUE:
            return f"Value({self.value:.6g})"
        return self.kind.value

    @classmethod
    def parse(cls, text: str) -> "RatioLimit":
        text = text.strip()
        if text.startswith("Value(") and text.endswith(")"):
            return cls.of(float(text[6:-1]))
        for kind in LimitKind:
            if text == kind.value and kind is not LimitKind.VALUE:
                return cls(kind)
        raise ValueError(f"unknown ratio limit {text!r}")


class Verdict(enum.Enum):
    HOLDS = "Holds"
    FAILS = "Fails"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class ConditionTrend:
    name: str
    toward: str  # "zero" or "infinity"
    log10_x: np.ndarray
    values: np.ndarray
    verdict: Verdict


@dataclass
class ConditionReport:
    conditions: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> ConditionTrend:
        return self.conditions[name]

    def add(self, trend: ConditionTrend) -> None:
        self.conditions[trend.name] = trend


@dataclass(frozen=True)
class AsymptoticPrediction:
    lambda_class: LambdaClass
    M: float
    C: float
    predicted_ratio_limit: RatioLimit
    rationale: str
    report: Optional[ConditionReport] = None


# -- trend protocol ----------------------------------------------------------------

def trend_verdict(values, toward: str = "zero", min_points: int = TREND_MIN_POINTS,
                  min_factor: float = TREND_MIN_FACTOR) -> Verdict:
    """Classify a sampled limit at infinity.

    The last run of strictly monotone samples must span ``min_points`` points.
    Moving toward the target by ``min_factor`` or more gives Holds; moving
    away gives Fails; anything else is Inconclusive.
    """
    if toward not in ("zero", "infinity"):
        raise ValueError("toward must be 'zero' or 'infinity'")
    v = np.asarray(values, dtype=float)
    if v.size == 0 or not np.all(np.isfinite(v)) or np.any(v < 0):
        return Verdict.INCONCLUSIVE
    if toward == "zero" and np.all(v == 0.0):
        return Verdict.HOLDS
    if v.size < 2 or np.any(v == 0.0):
        return Verdict.INCONCLUSIVE
    step = np.sign(np.diff(v))
    last = step[-1]
    if last == 0:
        return Verdict.INCONCLUSIVE
    run = 1
    while run < step.size and step[-1 - run] == last:
        run += 1
    if run + 1 < min_points:
        return Verdict.INCONCLUSIVE
    start = v[-1 - run]
    decreasing = last < 0
    if decreasing == (toward == "zero"):
        factor = start / v[-1] if decreasing else v[-1] / start
        return Verdict.HOLDS if factor >= min_factor else Verdict.INCONCLUSIVE
    return Verdict.FAILS


# -- prediction --------------------------------------------------------------------

def predict(n: Nonlinearity, mu: MeasureKernel,
            lam: Optional[LambdaClass] = None) -> AsymptoticPrediction:
    """Predicted lim x(t)/F^{-1}(Mt) for either equation."""
    lam = lam if lam is not None else lambda_class(n)
    M = total_mass(mu)
    C = first_moment(mu)
    if mu.support is SupportKind.DELAY or math.isfinite(C):
        rationale = "bounded-delay" if mu.support is SupportKind.DELAY else "finite-moment-memory"
        if C == 0.0 or lam.kind is LambdaKind.ZERO:
            limit = RatioLimit(LimitKind.UNIT)
        elif lam.kind is LambdaKind.INFINITE:
            limit = RatioLimit(LimitKind.ZERO)
        else:
            limit = RatioLimit.of(math.exp(-lam.value * C))
        return AsymptoticPrediction(lam, M, C, limit, rationale)
    if lam.kind is not LambdaKind.ZERO:
        return AsymptoticPrediction(lam, M, C, RatioLimit(LimitKind.ZERO), "infinite-moment-memory")
    report, limit = classify_infinite_memory(n, mu, lam=lam)
    rationale = {LimitKind.UNIT: "unit-sufficient", LimitKind.ZERO: "zero-sufficient"}.get(
        limit.kind, "unclassified")
    return AsymptoticPrediction(lam, M, C, limit, rationale, report)


def _classify_grid(n: Nonlinearity, log10_x) -> np.ndarray:
    w = LN10 * np.asarray(log10_x, dtype=float)
    return w[w <= n.transform.w_max]


def classify_infinite_memory(n: Nonlinearity, mu: MeasureKernel, log10_x=CLASSIFY_LOG10_X,
                       lam: Optional[LambdaClass] = None):
    """Sufficient-condition classification for infinite-moment memory with lambda = 0.

    Returns (ConditionReport, RatioLimit).  Unit needs both the first-moment
    condition and the small integrated-tail condition to hold; Zero needs the
    integrated tail to blow up; otherwise the limit is Indeterminate.
    """
    if mu.support is not SupportKind.HALF_LINE:
        raise WrongRegime("the classification applies to half-line kernels")
    lam = lam if lam is not None else lambda_class(n)
    if lam.kind is not LambdaKind.ZERO:
        raise WrongRegime(f"the classification needs lambda = 0, got {lam}")
    if math.isfinite(first_moment(mu)):
        raise WrongRegime("the classification needs an infinite first moment")
    M = total_mass(mu)
    w = _classify_grid(n, log10_x)
    t = np.exp(n.transform.log_F(w)) / M
    f_over_x = np.exp(n.log_f(w) - w)
    first = f_over_x * w * partial_first_moment(mu, t)
    tail = f_over_x * integrated_tail_identity(mu, t)
    grid = w / LN10
    report = ConditionReport()
    report.add(ConditionTrend("first-moment", "zero", grid, first, trend_verdict(first, "zero")))
    report.add(ConditionTrend("integrated-tail-small", "zero", grid, tail, trend_verdict(tail, "zero")))
    report.add(ConditionTrend("integrated-tail-large", "infinity", grid, tail,
                              trend_verdict(tail, "infinity")))
    if report["integrated-tail-large"].verdict is Verdict.HOLDS:
        limit = RatioLimit(LimitKind.ZERO)
    elif (report["first-moment"].verdict is Verdict.HOLDS
          and report["integrated-tail-small"].verdict is Verdict.HOLDS):
        limit = RatioLimit(LimitKind.UNIT)
    else:
        limit = RatioLimit(LimitKind.INDETERMINATE)
    return report, limit


# -- power-law example thresholds ---------------------------------------------------

def rv_thresholds(theta: float):
    """(alpha above which the limit is unity, alpha below which it is zero)."""
    if not theta > 1:
        raise BadTheta("thresholds need theta > 1 (lambda = 0)")
    return 1.0 + 2.0 / (1.0 + theta), 1.0 + 1.0 / (1.0 + theta)


def rv_index_first_moment(theta: float, alpha: float) -> float:
    """Regular-variation index (in t = F/M) of the first-moment condition."""
    return (1.0 - theta) / (1.0 + theta) + 2.0 - alpha


def rv_index_integrated_tail(theta: float, alpha: float) -> float:
    """Regular-variation index (in t = F/M) of the integrated-tail condition."""
    return 1.0 / (1.0 + theta) - alpha + 1.0


def symbolic_limit(theta: float, alpha: float) -> RatioLimit:
    """Limit implied by the signs of the two indices."""
    if rv_index_first_moment(theta, alpha) < 0:
        return RatioLimit(LimitKind.UNIT)
    if rv_index_integrated_tail(theta, alpha) > 0:
        return RatioLimit(LimitKind.ZERO)
    return RatioLimit(LimitKind.INDETERMINATE)


# -- memory functional K -----------------------------------------------------------

def _simpson_pieces(edges, panels: int):
    """Composite Simpson over consecutive [edges[i], edges[i+1]] in rho = log(1 + value).

    Returns the node values (exactly equal to the edges at piece ends), the
    weights in rho, rho itself, and masks of the nodes that open and close a
    piece, where one-sided limits apply.
    """
    edges = np.asarray(edges, dtype=float)
    redges = np.log1p(edges)
    total = redges[-1] - redges[0]
    values, weights, rhos, opening, closing = [], [], [], [], []
    for i in range(edges.size - 1):
        a, b = redges[i], redges[i + 1]
        if b <= a:
            continue
        m = max(8, int(math.ceil(panels * (b - a) / total)))
        rho = np.linspace(a, b, 2 * m + 1)
        w = np.ones(2 * m + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        val = np.expm1(rho)
        val[0], val[-1] = edges[i], edges[i + 1]
        first = np.zeros(2 * m + 1, dtype=bool)
        last = np.zeros(2 * m + 1, dtype=bool)
        first[0], last[-1] = True, True
        values.append(val)
        weights.append(w * (b - a) / (6.0 * m))
        rhos.append(rho)
        opening.append(first)
        closing.append(last)
    return tuple(np.concatenate(part) for part in (values, weights, rhos, opening, closing))


def _scaled_K(n: Nonlinearity, mu: MeasureKernel, w, reach, M: float, panels: int,
              open_top=None) -> np.ndarray:
    """K(e^w) / f(e^w) for arrays of w and reach = F(e^w) / M, integrated over the window start a.

    With a = (F(x) - F(v)) / M, K = M int f(v)^2 / v * mu([a, F(x)/M]) da; the
    variable rho = log(1 + a) spreads the sharp edge near v = x evenly.
    Atom locations split the range, and the window just right of an atom
    excludes it. Where open_top is set the window is [a, reach), the limit
    from below in x.
    """
    w = np.atleast_1d(np.asarray(w, dtype=float))
    reach = np.atleast_1d(np.asarray(reach, dtype=float))
    open_top = np.zeros(w.size, dtype=bool) if open_top is None else np.atleast_1d(open_top)
    parts, seg = [], [0]
    for wi, top, ot in zip(w, reach, open_top):
        if wi <= 0.0 or top <= 0.0:
            seg.append(seg[-1])
            continue
        inner = mu.atom_lags[(mu.atom_lags > 0) & (mu.atom_lags < top)]
        a, wts, rho, opening, _ = _simpson_pieces(np.unique(np.concatenate([[0.0], inner, [top]])),
                                                  panels)
        parts.append((a, wts, rho, opening, np.full(a.size, top), np.full(a.size, M * top),
                      np.full(a.size, ot)))
        seg.append(seg[-1] + a.size)
    out = np.zeros(w.size)
    if not parts:
        return out
    a, wts, rho, opening, top, Fv, ot = (np.concatenate(col) for col in zip(*parts))
    window = window_mass(mu, a, top)
    if mu.atom_lags.size:
        lags = mu.atom_lags[None, :]
        excluded = (opening[:, None] & (a[:, None] == lags)) | (ot[:, None] & (top[:, None] == lags))
        window = window - excluded @ mu.atom_weights
    log_v = n.F_inv_log(np.maximum(Fv - M * a, 0.0))
    lfx = np.repeat(n.log_f(w), np.diff(seg))
    g = np.exp(2.0 * n.log_f(log_v) - log_v - lfx + rho)
    terms = M * wts * g * np.maximum(window, 0.0)
    seg = np.asarray(seg)
    for i in range(w.size):
        out[i] = terms[seg[i]:seg[i + 1]].sum()
    return out


def compute_K(n: Nonlinearity, mu: MeasureKernel, x: float, panels: int = 64) -> float:
    """K(x) = int_1^x (f(v)/v) mu([F(x)/M - F(v)/M, F(x)/M]) dv."""
    if mu.support is not SupportKind.HALF_LINE:
        raise WrongRegime("K is defined for half-line kernels")
    if not x >= 1.0:
        raise DomainError("K needs x >= 1")
    w = math.log(x)
    M = total_mass(mu)
    scaled = _scaled_K(n, mu, w, n.F_of_log(w) / M, M, panels)
    return float(scaled[0]) * float(n.f(x))


def compute_log_K(n: Nonlinearity, mu: MeasureKernel, w: float, panels: int = 64) -> float:
    """log K(e^w), usable where e^w overflows."""
    if mu.support is not SupportKind.HALF_LINE:
        raise WrongRegime("K is defined for half-line kernels")
    if not w >= 0.0:
        raise DomainError("K needs x >= 1")
    M = total_mass(mu)
    scaled = float(_scaled_K(n, mu, w, n.F_of_log(w) / M, M, panels)[0])
    return math.log(scaled) + float(n.log_f(w)) if scaled > 0 else -math.inf


def memory_functional(n: Nonlinearity, mu: MeasureKernel, w: float, panels: int = 64,
                      outer_panels: int = 64) -> float:
    """(f(x)/x) int_1^x K(u) / f(u)^2 du at x = e^w.

    Substituting phi = F(u) turns the integral into int_0^{F(x)} K/f dphi,
    evaluated by Simpson in log(1 + phi / M).
    """
    M = total_mass(mu)
    Fx = float(n.F_of_log(w))
    if Fx <= 0.0:
        return 0.0
    # K(u) jumps where F(u)/M crosses an atom
    jumps = mu.atom_lags[(mu.atom_lags > 0) & (M * mu.atom_lags < Fx)]
    edges = np.unique(np.concatenate([[0.0], jumps, [Fx / M]]))
    reach, wts, _, _, closing = _simpson_pieces(edges, outer_panels)
    # closing nodes at a jump take the value from below
    from_below = closing & np.isin(reach, jumps)
    scaled = _scaled_K(n, mu, n.F_inv_log(M * reach), reach, M, panels, from_below)
    integral = M * float(np.dot(wts, scaled * (1.0 + reach)))
    return integral * math.exp(float(n.log_f(w)) - w)


def check_memory_functional(n: Nonlinearity, mu: MeasureKernel, log10_x=CLASSIFY_LOG10_X,
                 panels: int = 64, outer_panels: int = 64) -> ConditionTrend:
    """Trend of the memory functional; a unit limit requires it to vanish."""
    if mu.support is not SupportKind.HALF_LINE:
        raise WrongRegime("the memory functional needs a half-line kernel")
    w = _classify_grid(n, log10_x)
    values = np.array([memory_functional(n, mu, float(wi), panels, outer_panels) for wi in w])
    return ConditionTrend("memory-functional", "zero", w / LN10, values,
                          trend_verdict(values, "zero"))


def regular_index_deviation(n: Nonlinearity, log10_x=np.geomspace(1.0, 300.0, 12)) -> np.ndarray:
    """|x f'(x) / f(x) - 1| on a grid; should decrease toward zero for RV(1) nonlinearities."""
    x = 10.0 ** np.asarray(log10_x, dtype=float)
    return np.abs(x * n.f_prime(x) / n.f(x) - 1.0)


# aliases matching the published operation names
classify_theorem24 = classify_infinite_memory
check_suff31 = check_memory_functional

"""Sublinear nonlinearities f, the transform F(x) = int_1^x du/f(u) and its inverse.

Everything that can overflow is evaluated in log form: callers pass
``w = log x`` and the transform works with ``v - log f(e^v)``, so solutions
with ``log x`` in the hundreds (or the classifier grids, which go far beyond
that) never materialise ``x`` itself.
"""

from __future__ import annotations

import ast
import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import logsumexp

from .errors import BadTheta, DomainError, LambdaMismatch, NonMonotoneTail, Inconclusive

ArrayFn = Callable[[np.ndarray], np.ndarray]

_GL_X, _GL_W = leggauss(16)
_GL_LOGW = np.log(_GL_W)

#: grid of log10(x) used by the growth classifiers (half decades of log x)
LOG10_X_GRID = np.geomspace(2.0, 2.0e9, 19)


class LambdaKind(enum.Enum):
    ZERO = "zero"
    FINITE = "finite"
    INFINITE = "infinite"


@dataclass(frozen=True)
class LambdaClass:
    """Value class of lim f(x) / (x / log x)."""

    kind: LambdaKind
    value: Optional[float] = None

    @classmethod
    def zero(cls) -> "LambdaClass":
        return cls(LambdaKind.ZERO, 0.0)

    @classmethod
    def finite(cls, value: float) -> "LambdaClass":
        if not value > 0:
            raise ValueError("finite lambda must be positive")
        return cls(LambdaKind.FINITE, float(value))

    @classmethod
    def infinite(cls) -> "LambdaClass":
        return cls(LambdaKind.INFINITE, math.inf)

    @property
    def numeric(self) -> float:
        if self.kind is LambdaKind.ZERO:
            return 0.0
        if self.kind is LambdaKind.INFINITE:
            return math.inf
        return float(self.value)

    def __str__(self) -> str:
        if self.kind is LambdaKind.FINITE:
            return f"Finite({self.value:.6g})"
        return self.kind.value.capitalize()


def _safeguarded_newton(phi, dphi, lo, hi, w0, tol=1e-15, maxiter=80):
    """Vectorised Newton iteration kept inside the bracket [lo, hi].

    ``phi`` must be increasing on each bracket with phi(lo) <= 0 <= phi(hi).
    """
    lo = lo.copy()
    hi = hi.copy()
    w = np.clip(w0, lo, hi)
    active = np.ones(w.shape, dtype=bool)
    for _ in range(maxiter):
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        wa = w[idx]
        val = phi(wa, idx)
        neg = val < 0
        lo[idx] = np.where(neg, wa, lo[idx])
        hi[idx] = np.where(neg, hi[idx], wa)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = val / dphi(wa, idx)
            cand = wa - step
        bad = ~np.isfinite(cand) | (cand < lo[idx]) | (cand > hi[idx])
        cand = np.where(bad, 0.5 * (lo[idx] + hi[idx]), cand)
        cand = np.where(val == 0, wa, cand)
        w[idx] = cand
        width = np.abs(cand - wa)
        done = (val == 0) | (width <= tol * np.maximum(1.0, np.abs(cand)))
        done |= (hi[idx] - lo[idx]) <= tol * np.maximum(1.0, np.abs(cand))
        active[idx[done]] = False
    return w


class TransformF:
    """Tabulated F(e^w) = int_0^w exp(v - log f(e^v)) dv.

    The table is a set of Gauss-Legendre panels whose widths are chosen by
    step doubling (a panel is accepted when the 16-point rule on the whole
    panel agrees with the sum over its halves), anchored at w = 0 where
    F(1) = 0.  The positive side stores log F so it can run far past the
    double range of F itself.
    """

    def __init__(
        self,
        log_f: ArrayFn,
        w_min: float = -50.0,
        w_max: float = 1.0e6,
        log_F_cap: float = 1.0e4,
        panel_tol: float = 1e-13,
    ):
        self._log_f = log_f
        self.w_min = float(w_min)
        self.panel_tol = panel_tol
        self._pos_edges, self._pos_logcum = self._build_positive(w_max, log_F_cap)
        self._neg_edges, self._neg_cum = self._build_negative()
        self.w_max = float(self._pos_edges[-1])

    # -- quadrature primitives -------------------------------------------
    def _log_integrand(self, v):
        return v - self._log_f(v)

    def _log_panel(self, a, b):
        """log of int_a^b exp(v - log f(e^v)) dv, vectorised, b >= a."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        half = 0.5 * (b - a)
        mid = 0.5 * (a + b)
        v = mid[..., None] + half[..., None] * _GL_X
        with np.errstate(divide="ignore"):
            return logsumexp(self._log_integrand(v) + _GL_LOGW, axis=-1) + np.log(half)

    def _accept(self, a, b):
        whole = self._log_panel(a, b)
        m = 0.5 * (a + b)
        halves = np.logaddexp(self._log_panel(a, m), self._log_panel(m, b))
        # log-integrand values carry round-off proportional to |v|
        tol = self.panel_tol * max(1.0, abs(float(a)), abs(float(b)))
        return abs(float(whole - halves)) <= tol, float(halves)

    def _build_positive(self, w_max, log_F_cap):
        edges = [0.0]
        logcum = [-np.inf]
        a, width = 0.0, 0.25
        while a < w_max and logcum[-1] < log_F_cap:
            b = min(a + width, w_max)
            ok, piece = self._accept(np.array(a), np.array(b))
            if not ok and width > 1e-6:
                width *= 0.5
                continue
            edges.append(b)
            logcum.append(float(np.logaddexp(logcum[-1], piece)))
            a = b
            width = min(width * 1.5, max(1.0, 0.5 * a))
        return np.array(edges), np.array(logcum)

    def _build_negative(self):
        edges = [0.0]
        cum = [0.0]
        b, width = 0.0, 0.25
        while b > self.w_min:
            a = max(b - width, self.w_min)
            ok, piece = self._accept(np.array(a), np.array(b))
            if not ok and width > 1e-6:
                width *= 0.5
                continue
            edges.append(a)
            cum.append(cum[-1] + math.exp(piece))
            b = a
            width = min(width * 1.5, 2.0)
        return np.array(edges), np.array(cum)

    # -- evaluation -------------------------------------------------------
    def _check_range(self, w):
        if np.any(w < self.w_min):
            raise DomainError(f"log x below tabulated range (w_min={self.w_min})")
        if np.any(w > self.w_max):
            raise DomainError(f"log x above tabulated range (w_max={self.w_max:.6g})")

    def log_F(self, w):
        """log F(e^w) for w >= 0 (returns -inf at w = 0)."""
        w = np.asarray(w, dtype=float)
        if np.any(w < 0):
            raise DomainError("log_F is defined for w >= 0 only")
        self._check_range(w)
        k = np.clip(np.searchsorted(self._pos_edges, w, side="right") - 1, 0, len(self._pos_edges) - 1)
        return np.logaddexp(self._pos_logcum[k], self._log_panel(self._pos_edges[k], w))

    def F_of_log(self, w):
        """F(e^w) for any tabulated w, as a float (may be inf past ~1e308)."""
        w = np.asarray(w, dtype=float)
        self._check_range(w)
        out = np.empty(w.shape)
        pos = w >= 0
        if np.any(pos):
            with np.errstate(over="ignore"):
                out[pos] = np.exp(self.log_F(w[pos]))
        neg = ~pos
        if np.any(neg):
            wn = w[neg]
            # neg edges descend from 0; panel j is [edges[j+1], edges[j]]
            j = np.searchsorted(-self._neg_edges, -wn, side="left") - 1
            j = np.clip(j, 0, len(self._neg_edges) - 2)
            upper = self._neg_edges[j]
            with np.errstate(over="ignore"):
                part = np.exp(self._log_panel(wn, upper))
            out[neg] = -(self._neg_cum[j] + part)
        return out

    @property
    def F_min(self) -> float:
        """F at the smallest representable argument e^{w_min}."""
        return -float(self._neg_cum[-1])

    def inverse_log(self, y):
        """w = log F^{-1}(y), vectorised."""
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 0
        y = np.atleast_1d(y)
        if np.any(~np.isfinite(y)):
            raise DomainError("F^{-1} needs finite arguments")
        if np.any(y < self.F_min):
            raise DomainError(f"F^{{-1}}(y) undefined for y < {self.F_min:.6g}")
        out = np.zeros(y.shape)
        pos = y > 0
        if np.any(pos):
            out[pos] = self._inverse_positive(y[pos])
        neg = y < 0
        if np.any(neg):
            out[neg] = self._inverse_negative(y[neg])
        return out[0] if scalar else out

    def _inverse_positive(self, y):
        logy = np.log(y)
        edges, logcum = self._pos_edges, self._pos_logcum
        if np.any(logy > logcum[-1]):
            raise DomainError("F^{-1}(y) beyond tabulated range")
        k = np.clip(np.searchsorted(logcum, logy, side="right") - 1, 0, len(edges) - 2)
        lo, hi = edges[k].copy(), edges[k + 1].copy()
        L0, L1 = logcum[k], logcum[k + 1]
        with np.errstate(invalid="ignore"):
            frac = np.where(np.isfinite(L0), (logy - L0) / (L1 - L0), np.exp(logy - L1))
        w0 = lo + np.clip(frac, 0.0, 1.0) * (hi - lo)

        def phi(w, idx):
            return np.logaddexp(L0[idx], self._log_panel(lo_anchor[idx], w)) - logy[idx]

        def dphi(w, idx):
            logF = np.logaddexp(L0[idx], self._log_panel(lo_anchor[idx], w))
            # infinite slope at F = 0 is handled by the bisection safeguard
            with np.errstate(over="ignore"):
                return np.exp(self._log_integrand(w) - logF)

        lo_anchor = lo.copy()
        return _safeguarded_newton(phi, dphi, lo, hi, w0)

    def _inverse_negative(self, y):
        edges, cum = self._neg_edges, self._neg_cum
        target = -y
        j = np.clip(np.searchsorted(cum, target, side="right") - 1, 0, len(edges) - 2)
        upper = edges[j].copy()
        lower = edges[j + 1].copy()
        C0, C1 = cum[j], cum[j + 1]
        frac = (target - C0) / (C1 - C0)
        w0 = upper - np.clip(frac, 0.0, 1.0) * (upper - lower)

        def phi(w, idx):
            return -(C0[idx] + np.exp(self._log_panel(w, upper[idx]))) - y[idx]

        def dphi(w, idx):
            return np.exp(self._log_integrand(w))

        return _safeguarded_newton(phi, dphi, lower, upper.copy(), w0)


class Nonlinearity:
    """A sublinear f together with its derivative, log-domain form and F.

    ``log_f`` receives ``w = log x`` and must return ``log f(e^w)`` without
    forming ``e^w`` when that would overflow.
    """

    def __init__(
        self,
        f: ArrayFn,
        f_prime: ArrayFn,
        log_f: ArrayFn,
        *,
        name: str = "custom",
        declared_lambda: Optional[LambdaClass] = None,
        monotone_from: float = 0.0,
        concave_from: Optional[float] = None,
        theta: Optional[float] = None,
        validate: bool = True,
    ):
        self.name = name
        self._f = f
        self._f_prime = f_prime
        self._log_f = log_f
        self.declared_lambda = declared_lambda
        self.monotone_from = float(monotone_from)
        self.concave_from = concave_from
        self.theta = theta
        if validate:
            self.validate()
        self.transform = TransformF(self.log_f)

    def __repr__(self) -> str:
        return f"Nonlinearity({self.name!r})"

    def f(self, x):
        return self._f(np.asarray(x, dtype=float))

    def f_prime(self, x):
        return self._f_prime(np.asarray(x, dtype=float))

    def log_f(self, w):
        return self._log_f(np.asarray(w, dtype=float))

    def validate(self) -> None:
        """Spot-check positivity, monotonicity, decay of f' and log-form agreement."""
        x = np.geomspace(1e-2, 1e12, 57)
        fx = self.f(x)
        if not np.all(np.isfinite(fx)) or np.any(fx <= 0):
            raise ValueError(f"{self.name}: f must be positive on (0, inf)")
        xm = x[x > self.monotone_from]
        if np.any(self.f_prime(xm) <= 0):
            raise ValueError(f"{self.name}: f' must be positive beyond monotone_from")
        ref = max(1.0, 2.0 * self.monotone_from)
        if not self.f_prime(1e12) < 0.5 * self.f_prime(ref):
            raise ValueError(f"{self.name}: f' does not decay along the sample grid")
        lf = self.log_f(np.log(x))
        err = np.abs(np.exp(lf) - fx) / fx
        if np.max(err) > 1e-10:
            raise ValueError(f"{self.name}: log_f disagrees with f (max rel err {np.max(err):.3g})")

    # -- transform ---------------------------------------------------------
    def F(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise DomainError("F(x) needs x > 0")
        return self.transform.F_of_log(np.log(x))

    def F_of_log(self, w):
        return self.transform.F_of_log(w)

    def F_inv_log(self, y):
        return self.transform.inverse_log(y)


# -- built-in families ------------------------------------------------------------

def make_example_family(theta: float) -> Nonlinearity:
    """f(x) = g(x + e^{theta+1} - 2) with g(x) = (x + 1) / log^theta(2 + x).

    The shift puts the whole half-line inside the region where g is
    increasing and concave, so monotone_from = concave_from = 0.
    """
    if not theta > 0:
        raise BadTheta(f"theta must be positive, got {theta}")
    theta = float(theta)
    shift = math.exp(theta + 1.0) - 2.0
    log_c1 = math.log(math.exp(theta + 1.0) - 1.0)

    def f(x):
        z = x + shift + 2.0
        return (z - 1.0) / np.log(z) ** theta

    def f_prime(x):
        z = x + shift + 2.0
        L = np.log(z)
        return (1.0 - (z - 1.0) * theta / (z * L)) / L**theta

    def log_f(w):
        # log(e^w + e^{theta+1} - 1) - theta log log(e^w + e^{theta+1})
        return np.logaddexp(w, log_c1) - theta * np.log(np.logaddexp(w, theta + 1.0))

    if theta > 1:
        lam = LambdaClass.zero()
    elif theta == 1:
        lam = LambdaClass.finite(1.0)
    else:
        lam = LambdaClass.infinite()
    return Nonlinearity(
        f, f_prime, log_f,
        name=f"example({theta:g})",
        declared_lambda=lam,
        monotone_from=0.0,
        concave_from=0.0,
        theta=theta,
    )


def make_sqrt() -> Nonlinearity:
    return Nonlinearity(
        np.sqrt,
        lambda x: 0.5 / np.sqrt(x),
        lambda w: 0.5 * w,
        name="sqrt",
        declared_lambda=LambdaClass.zero(),
        monotone_from=0.0,
        concave_from=0.0,
    )


_ALLOWED_FUNCS = {
    "exp": np.exp,
    "log": np.log,
    "pow": np.power,
    "sqrt": np.sqrt,
    "log1p": np.log1p,
    "logaddexp": np.logaddexp,
}
_ALLOWED_CONSTS = {"e": math.e, "pi": math.pi}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd,
)


def compile_expression(text: str, var: str) -> ArrayFn:
    """Compile a small arithmetic expression in one variable to a numpy function."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ValueError(f"disallowed syntax {type(node).__name__} in {text!r}")
        if isinstance(node, ast.Name) and node.id not in _ALLOWED_FUNCS \
                and node.id not in _ALLOWED_CONSTS and node.id != var:
            raise ValueError(f"unknown name {node.id!r} in {text!r}")
        if isinstance(node, ast.Call) and not (
                isinstance(node.func, ast.Name) and node.func.id in _ALLOWED_FUNCS):
            raise ValueError(f"only {sorted(_ALLOWED_FUNCS)} may be called")
        if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
            raise ValueError(f"non-numeric constant in {text!r}")
    code = compile(tree, "<expression>", "eval")
    namespace = {"__builtins__": {}, **_ALLOWED_FUNCS, **_ALLOWED_CONSTS}

    def fn(arg):
        with np.errstate(over="ignore"):
            return np.asarray(eval(code, namespace, {var: np.asarray(arg, dtype=float)}), dtype=float)

    return fn


def make_custom(f_expr: str, f_prime_expr: str, log_f_expr: str, **kwargs) -> Nonlinearity:
    """Nonlinearity from expression strings: f(x), f'(x) and log f(e^w)."""
    return Nonlinearity(
        compile_expression(f_expr, "x"),
        compile_expression(f_prime_expr, "x"),
        compile_expression(log_f_expr, "w"),
        **kwargs,
    )


# -- module-level operations ------------------------------------------------------

def eval_F(n: Nonlinearity, x):
    return n.F(x)


def eval_F_inv_log(n: Nonlinearity, y):
    return n.F_inv_log(y)


def _monotone_flags(tail: np.ndarray, rtol: float = 1e-6):
    d = np.diff(tail)
    scale = np.max(np.abs(tail)) if tail.size else 0.0
    return bool(np.all(d <= rtol * scale)), bool(np.all(d >= -rtol * scale))


def lambda_ratio(n: Nonlinearity, w):
    """q = f(x) / (x / log x) at x = e^w."""
    w = np.asarray(w, dtype=float)
    with np.errstate(over="ignore"):
        return np.exp(n.log_f(w) - w + np.log(w))


def estimate_lambda(
    n: Nonlinearity,
    low: float = 1e-3,
    high: float = 1e3,
    log10_x: np.ndarray = LOG10_X_GRID,
    tail_points: int = 5,
    check_declared: bool = True,
) -> LambdaClass:
    """Classify lim f(x)/(x/log x) from its values along a log-log grid."""
    w = np.asarray(log10_x, dtype=float) * math.log(10.0)
    q = lambda_ratio(n, w)
    tail = q[-tail_points:]
    nonincreasing, nondecreasing = _monotone_flags(tail)
    if q[-1] < low and nonincreasing:
        est = LambdaClass.zero()
    elif q[-1] > high and nondecreasing:
        est = LambdaClass.infinite()
    elif nonincreasing or nondecreasing:
        ratio = w[-1] / w[-2]
        lam = (ratio * q[-1] - q[-2]) / (ratio - 1.0)
        est = LambdaClass.zero() if lam <= low else LambdaClass.finite(lam)
    else:
        raise NonMonotoneTail(f"{n.name}: f(x)/(x/log x) oscillates on the sample grid")

    declared = n.declared_lambda
    if check_declared and declared is not None:
        agree = declared.kind is est.kind
        if agree and declared.kind is LambdaKind.FINITE:
            agree = abs(est.value - declared.value) <= 0.05 * max(1.0, declared.value)
        if not agree:
            raise LambdaMismatch(f"{n.name}: declared {declared}, estimated {est}")
    return est


def lambda_class(n: Nonlinearity) -> LambdaClass:
    """Declared class when present (checked against the estimate), else the estimate."""
    est = estimate_lambda(n)
    return n.declared_lambda if n.declared_lambda is not None else est


class RVHW(enum.Enum):
    BOUNDED = "bounded"
    UNBOUNDED = "unbounded"


def rvhw_ratio(n: Nonlinearity, w):
    """f(x) F(x) / x at x = e^w (w > 0), evaluated in log form."""
    w = np.asarray(w, dtype=float)
    with np.errstate(over="ignore"):
        return np.exp(n.log_f(w) + n.transform.log_F(w) - w)


def check_RVHW_condition(
    n: Nonlinearity,
    bound: float = 1e3,
    log10_x: np.ndarray = LOG10_X_GRID,
    tail_points: int = 5,
) -> RVHW:
    """Decide whether limsup f(x)F(x)/x is finite from a sampled trend."""
    w = np.asarray(log10_x, dtype=float) * math.log(10.0)
    w = w[w <= n.transform.w_max]
    if w.size < tail_points:
        raise Inconclusive(f"{n.name}: transform table too short for the trend check")
    ratio = rvhw_ratio(n, w)
    tail = ratio[-tail_points:]
    nonincreasing, nondecreasing = _monotone_flags(tail)
    if nondecreasing and not nonincreasing and tail[-1] > bound:
        return RVHW.UNBOUNDED
    if nonincreasing or tail.max() < bound:
        return RVHW.BOUNDED
    raise Inconclusive(f"{n.name}: f(x)F(x)/x has no monotone trend on the grid")

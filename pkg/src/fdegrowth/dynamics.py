"""Log-state integrators for the delay equation, the Volterra equation and the reference ODE.

All three integrate ``u = log x``.  The right-hand side of both functional
equations is ``u'(t) = e^{-u(t)} int mu(dl) f(x(t - l))`` with lags ``l``;
history values between grid nodes come from cubic Hermite interpolation of
the stored ``(u, u')`` pairs.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from .errors import NonPositiveHistory, OverflowGuard, StepTooLarge
from .measures import MeasureKernel, SupportKind, tail_mass, total_mass
from .nonlinearity import Nonlinearity

U_LIMIT = 1.0e6


# -- history -----------------------------------------------------------------------

@dataclass(frozen=True)
class HistoryFunction:
    """Initial function psi on [-tau, 0], constant or sampled."""

    constant: Optional[float] = None
    grid: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.constant is not None:
            if not self.constant > 0:
                raise NonPositiveHistory("initial value must be positive")
            return
        if self.grid is None or self.values is None:
            raise ValueError("sampled history needs grid and values")
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if np.any(values <= 0):
            raise NonPositiveHistory("history values must be positive")
        if grid.size < 2 or np.any(np.diff(grid) <= 0) or grid[-1] != 0.0:
            raise ValueError("history grid must increase strictly and end at 0")
        # interpolating log psi keeps the history positive between samples
        object.__setattr__(self, "_spline", CubicSpline(grid, np.log(values)))

    @classmethod
    def from_constant(cls, psi0: float = 1.0) -> "HistoryFunction":
        return cls(constant=float(psi0))

    @classmethod
    def from_samples(cls, grid: Sequence[float], values: Sequence[float]) -> "HistoryFunction":
        return cls(grid=np.asarray(grid, dtype=float), values=np.asarray(values, dtype=float))

    @property
    def start(self) -> float:
        return -math.inf if self.constant is not None else float(self.grid[0])

    def log_value(self, q):
        q = np.asarray(q, dtype=float)
        if self.constant is not None:
            return np.full(q.shape, math.log(self.constant))
        return self._spline(np.maximum(q, self.grid[0]))


# -- trajectory --------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    log_state: np.ndarray
    log_ref: np.ndarray
    r: np.ndarray
    d: np.ndarray
    c: np.ndarray
    F_state: np.ndarray
    M: float
    meta: dict = field(default_factory=dict)

    CSV_HEADER = "t,u,log_ref,r,d,c"

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(self.CSV_HEADER + "\n")
        cols = (self.times, self.log_state, self.log_ref, self.r, self.d, self.c)
        for row in zip(*cols):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())


def _diagnostics(n: Nonlinearity, M: float, times, u, meta) -> Trajectory:
    times = np.asarray(times, dtype=float)
    u = np.asarray(u, dtype=float)
    log_ref = n.F_inv_log(M * times)
    F_state = n.F_of_log(u)
    gap = F_state - M * times
    with np.errstate(divide="ignore", invalid="ignore"):
        lf = n.log_f(u)
        d = np.where(lf != 0, gap / lf, np.nan)
        c = np.where(log_ref != 0, -gap / log_ref, np.nan)
    r = np.exp(u - log_ref)
    return Trajectory(times, u, log_ref, r, d, c, F_state, float(M), meta)


# -- Hermite store -----------------------------------------------------------------

class _Store:
    """Grid values of u and u' with cubic Hermite lookup (and one-step extrapolation)."""

    def __init__(self, n_steps: int, h: float, history: Callable[[np.ndarray], np.ndarray]):
        self.h = h
        self.u = np.empty(n_steps + 1)
        self.du = np.empty(n_steps + 1)
        self.n = 0
        self.history = history

    def lookup(self, q: np.ndarray) -> np.ndarray:
        """u at times q <= t_n + h; q > t_n is extrapolated from the last segment."""
        out = np.empty(q.shape)
        past = q <= 0.0
        if past.any():
            out[past] = self.history(q[past])
        live = ~past
        if live.any():
            ql = q[live]
            h, n = self.h, self.n
            if n == 0:
                out[live] = self.u[0] + ql * self.du[0]
                return out
            i = np.minimum(np.floor(ql / h).astype(np.int64), n - 1)
            s = ql / h - i
            s2 = s * s
            s3 = s2 * s
            u0, u1 = self.u[i], self.u[i + 1]
            m0, m1 = self.du[i], self.du[i + 1]
            out[live] = ((2 * s3 - 3 * s2 + 1) * u0 + (s3 - 2 * s2 + s) * h * m0
                         + (-2 * s3 + 3 * s2) * u1 + (s3 - s2) * h * m1)
        return out


def _check_overflow(u: float, t: float) -> None:
    if not math.isfinite(u) or u > U_LIMIT:
        raise OverflowGuard(f"log-state {u:.6g} at t={t:.6g} exceeds {U_LIMIT:g}; shorten the horizon")


def _grid(T_end: float, h: float) -> int:
    if not h > 0 or not T_end > 0:
        raise ValueError("T_end and h must be positive")
    n_steps = int(round(T_end / h))
    if abs(n_steps * h - T_end) > 1e-9 * max(1.0, T_end):
        raise ValueError("T_end must be a multiple of h")
    return n_steps


def _output_indices(n_steps: int, thin: int) -> np.ndarray:
    if thin < 1:
        raise ValueError("thin must be >= 1")
    idx = np.arange(0, n_steps + 1, thin)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


# -- reference ODE -----------------------------------------------------------------

def integrate_ode(n: Nonlinearity, M: float, y0: float = 1.0, T_end: float = 100.0,
                  h: float = 1.0 / 32.0, thin: int = 1) -> Trajectory:
    """y' = M f(y) solved through the transform: y(t) = F^{-1}(F(y0) + M t)."""
    if not y0 > 0:
        raise NonPositiveHistory("y0 must be positive")
    if not M > 0:
        raise ValueError("M must be positive")
    n_steps = _grid(T_end, h)
    idx = _output_indices(n_steps, thin)
    times = idx * h
    F0 = float(n.F(y0))
    u = n.F_inv_log(F0 + M * times)
    meta = {"equation": "ode", "scheme": "transform", "h": h, "thin": thin}
    return _diagnostics(n, M, times, u, meta)


# -- delay equation ----------------------------------------------------------------

def _simpson(a: float, b: float, panels: int):
    nodes = np.linspace(a, b, 2 * panels + 1)
    w = np.ones(2 * panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return nodes, w * (b - a) / (6.0 * panels)


def _fde_lags(mu: MeasureKernel, simpson_panels: int):
    lags = [mu.atom_lags]
    weights = [mu.atom_weights]
    if mu.density is not None:
        nodes, w = _simpson(0.0, mu.tau, simpson_panels)
        lags.append(nodes)
        weights.append(w * mu.density.pdf(nodes))
    lags = np.concatenate(lags)
    weights = np.concatenate(weights)
    zero = lags == 0.0
    keep = ~zero & (weights != 0)
    return float(weights[zero].sum()), lags[keep], weights[keep]


def integrate_fde(n: Nonlinearity, mu: MeasureKernel, psi: Optional[HistoryFunction] = None,
                  T_end: float = 100.0, h: float = 1.0 / 32.0, thin: int = 1,
                  simpson_panels: int = 64) -> Trajectory:
    """Classical RK4 in log-state for x'(t) = int_{[-tau,0]} mu(ds) f(x(t+s))."""
    if mu.support is not SupportKind.DELAY:
        raise ValueError("integrate_fde needs a delay-interval kernel")
    if h > mu.tau / 16.0 * (1 + 1e-12):
        raise StepTooLarge(f"h={h:g} exceeds tau/16={mu.tau / 16:g}")
    psi = psi or HistoryFunction.from_constant(1.0)
    if psi.constant is None and psi.start > -mu.tau + 1e-12:
        raise ValueError("sampled history must cover [-tau, 0]")
    n_steps = _grid(T_end, h)
    M = total_mass(mu)
    w0, lags, weights = _fde_lags(mu, simpson_panels)
    store = _Store(n_steps, h, psi.log_value)
    lf = n.log_f

    def lagged_sum(t: float, ref: float) -> float:
        if lags.size == 0:
            return 0.0
        return float(np.dot(weights, np.exp(lf(store.lookup(t - lags)) - ref)))

    def slope(u_stage: float, hist: float, ref: float) -> float:
        # hist carries the lagged terms scaled by e^{-ref}
        return (w0 * math.exp(float(lf(u_stage)) - ref) + hist) * math.exp(ref - u_stage)

    u = float(psi.log_value(0.0))
    store.u[0] = u
    hist0 = lagged_sum(0.0, u)
    store.du[0] = slope(u, hist0, u)
    for k in range(n_steps):
        t = k * h
        ref = store.u[k]
        k1 = store.du[k]
        hist_half = lagged_sum(t + 0.5 * h, ref)
        hist_one = lagged_sum(t + h, ref)
        k2 = slope(ref + 0.5 * h * k1, hist_half, ref)
        k3 = slope(ref + 0.5 * h * k2, hist_half, ref)
        k4 = slope(ref + h * k3, hist_one, ref)
        u_new = ref + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        _check_overflow(u_new, t + h)
        store.u[k + 1] = u_new
        store.du[k + 1] = slope(u_new, hist_one, ref)
        store.n = k + 1

    idx = _output_indices(n_steps, thin)
    meta = {
        "equation": "fde", "scheme": "rk4-hermite", "h": h, "thin": thin,
        "simpson_panels": simpson_panels if mu.density is not None else 0,
        "truncated_mass": 0.0,
    }
    return _diagnostics(n, M, idx * h, store.u[idx], meta)


# -- Volterra equation -------------------------------------------------------------

_CELL_X, _CELL_W = leggauss(8)


def _cell_weights(density, lo: np.ndarray, width: float, s_max: float):
    """Product-trapezoid weights for cells [lo, lo + width] of the lag axis.

    Returns (A, B): weights of the value at the cell's small-lag end and at
    its large-lag end when f(x(t - l)) is linear across the cell.
    """
    hi = np.minimum(lo + width, s_max)
    span = np.maximum(hi - lo, 0.0)
    half = 0.5 * span
    nodes = (lo + half)[:, None] + half[:, None] * _CELL_X
    k = density.pdf(nodes)
    m0 = (k * _CELL_W).sum(axis=1) * half
    m1 = (k * (nodes - lo[:, None]) * _CELL_W).sum(axis=1) * half
    B = m1 / width
    return m0 - B, B


class _Convolution:
    """Cached weights for int_0^tau k(l) g(tau - l) dl on the uniform grid."""

    def __init__(self, density, h: float, n_steps: int, s_max: float):
        m = np.arange(n_steps + 2, dtype=float)
        A, B = _cell_weights(density, m * h, h, s_max)
        Ah, Bh = _cell_weights(density, 0.5 * h + m * h, h, s_max)
        first_A, first_B = _cell_weights(density, np.array([0.0]), 0.5 * h, s_max)
        self.A, self.B = A, B
        self.Ah, self.Bh = Ah, Bh
        self.half_A = float(first_A[0])
        # combined interior weight for the node at lag m*h (integer grid)
        omega = A.copy()
        omega[1:] += B[:-1]
        # node at lag h/2 + m*h (half grid)
        omega_h = Ah.copy()
        omega_h[0] += float(first_B[0])
        omega_h[1:] += Bh[:-1]
        # reversed copies make the sums contiguous dot products
        self._rev = omega[::-1].copy()
        self._rev_h = omega_h[::-1].copy()
        self._len = omega.size

    def at_next_node(self, g: np.ndarray, n: int) -> float:
        """Sum over nodes 0..n for tau = t_{n+1}, excluding the node at t_{n+1}."""
        L = self._len
        # nodes j = 1..n carry omega[n + 1 - j]
        inner = float(np.dot(self._rev[L - 1 - n:L - 1], g[1:n + 1])) if n > 0 else 0.0
        return inner + float(self.B[n]) * g[0]

    def at_half(self, g: np.ndarray, n: int) -> float:
        """Sum over nodes 0..n for tau = t_n + h/2, excluding the stage point."""
        if n == 0:
            return (self.half_B_only()) * g[0]
        L = self._len
        # nodes j = 1..n carry omega_h[n - j]; node 0 carries Bh[n - 1]
        inner = float(np.dot(self._rev_h[L - n:L], g[1:n + 1]))
        return inner + float(self.Bh[n - 1]) * g[0]

    def half_B_only(self) -> float:
        # at n = 0 the node at lag h/2 is t_0 and only the first half cell exists
        return float(self._rev_h[-1] - self.Ah[0])


def integrate_vde(n: Nonlinearity, mu: MeasureKernel, x0: float = 1.0, T_end: float = 100.0,
                  h: float = 1.0 / 32.0, thin: int = 1) -> Trajectory:
    """RK4 in log-state for x'(t) = int_{[0,t]} mu(ds) f(x(t-s)).

    The density part of the memory integral is a product trapezoid rule
    (f(x) piecewise linear between nodes, kernel moments exact per cell).
    """
    if mu.support is not SupportKind.HALF_LINE:
        raise ValueError("integrate_vde needs a half-line kernel")
    if not x0 > 0:
        raise NonPositiveHistory("x0 must be positive")
    n_steps = _grid(T_end, h)
    M = total_mass(mu)
    lf = n.log_f
    u0 = math.log(x0)
    store = _Store(n_steps, h, lambda q: np.full(q.shape, u0))
    conv = _Convolution(mu.density, h, n_steps, mu.s_max) if mu.density is not None else None

    zero = mu.atom_lags == 0.0
    w0 = float(mu.atom_weights[zero].sum())
    lags = mu.atom_lags[~zero]
    weights = mu.atom_weights[~zero]

    # g[j] = f(x(t_j)) e^{-gref}
    g = np.zeros(n_steps + 1)
    gref = float(lf(u0))

    def atom_sum(tau: float, ref: float) -> float:
        active = lags <= tau * (1 + 1e-14)
        if not active.any():
            return 0.0
        return float(np.dot(weights[active], np.exp(lf(store.lookup(tau - lags[active])) - ref)))

    def slope(u_stage: float, hist: float, top_weight: float, ref: float) -> float:
        top = (w0 + top_weight) * math.exp(float(lf(u_stage)) - ref)
        return (top + hist) * math.exp(ref - u_stage)

    store.u[0] = u0
    g[0] = 1.0
    store.du[0] = slope(u0, atom_sum(0.0, u0), 0.0, u0)
    A0 = float(conv.A[0]) if conv else 0.0
    half_A = conv.half_A if conv else 0.0
    for k in range(n_steps):
        t = k * h
        ref = store.u[k]
        scale = math.exp(gref - ref)
        if conv is not None:
            conv_half = conv.at_half(g, k) * scale
            conv_one = conv.at_next_node(g, k) * scale
        else:
            conv_half = conv_one = 0.0
        hist_half = conv_half + atom_sum(t + 0.5 * h, ref)
        hist_one = conv_one + atom_sum(t + h, ref)
        k1 = store.du[k]
        k2 = slope(ref + 0.5 * h * k1, hist_half, half_A, ref)
        k3 = slope(ref + 0.5 * h * k2, hist_half, half_A, ref)
        k4 = slope(ref + h * k3, hist_one, A0, ref)
        u_new = ref + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        _check_overflow(u_new, t + h)
        store.u[k + 1] = u_new
        store.du[k + 1] = slope(u_new, hist_one, A0, ref)
        store.n = k + 1
        lg = float(lf(u_new))
        if lg - gref > 300.0:
            g[:k + 1] *= math.exp(gref - lg)
            gref = lg
        g[k + 1] = math.exp(lg - gref)

    idx = _output_indices(n_steps, thin)
    horizon = min(T_end, mu.s_max)
    meta = {
        "equation": "vde", "scheme": "rk4-product-trapezoid", "h": h, "thin": thin,
        "s_max": mu.s_max,
        # memory the solution has not seen by T_end (tail beyond the horizon)
        "truncated_mass": float(tail_mass(mu, horizon)),
    }
    return _diagnostics(n, M, idx * h, store.u[idx], meta)


# -- refinement and extrapolation --------------------------------------------------

def refine_check(op: Callable[..., Trajectory], h: float, thin: int = 1, **params):
    """Run ``op`` at h and h/2 and return both with sup |u_h - u_{h/2}| on common times."""
    coarse = op(h=h, thin=thin, **params)
    fine = op(h=h / 2.0, thin=2 * thin, **params)
    if coarse.times.shape != fine.times.shape or not np.allclose(coarse.times, fine.times):
        raise RuntimeError("refinement grids do not line up")
    diff = float(np.max(np.abs(coarse.log_state - fine.log_state)))
    return coarse, fine, diff


@dataclass(frozen=True)
class Extrapolation:
    limit: float
    beta: Optional[float]
    amplitude: Optional[float]
    degenerate: bool
    last_value: float


def extrapolate_limit(t, y, window: float = 0.3, betas: Optional[np.ndarray] = None) -> Extrapolation:
    """Fit y ~ y_inf + a t^{-beta} on the last ``window`` fraction of points.

    beta is chosen by grid search, then polished, with a linear
    least-squares fit of (y_inf, a) at each beta.  A best beta on the edge of the search range, a
    vanishing amplitude or too few points is treated as degenerate and the
    last value is returned instead.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y) & (t > 0)
    t, y = t[ok], y[ok]
    last = float(y[-1]) if y.size else math.nan
    start = int(math.floor((1.0 - window) * t.size))
    tw, yw = t[start:], y[start:]
    if tw.size < 5:
        return Extrapolation(last, None, None, True, last)
    if betas is None:
        betas = np.geomspace(0.02, 4.0, 241)
    spread = float(np.ptp(yw))
    if spread <= 1e-13 * max(1.0, abs(last)):
        return Extrapolation(last, None, None, True, last)
    ts = tw / tw[-1]

    def fit(beta):
        X = np.column_stack([np.ones_like(ts), ts ** (-beta)])
        coef, *_ = np.linalg.lstsq(X, yw, rcond=None)
        return float(np.sum((X @ coef - yw) ** 2)), coef

    sse = np.array([fit(beta)[0] for beta in betas])
    i = int(np.argmin(sse))
    if i in (0, betas.size - 1):
        return Extrapolation(last, float(betas[i]), None, True, last)
    # polish between the neighbouring grid values
    res = minimize_scalar(lambda b: fit(b)[0], bounds=(betas[i - 1], betas[i + 1]),
                          method="bounded", options={"xatol": 1e-10})
    beta = float(res.x) if res.fun <= sse[i] else float(betas[i])
    coef = fit(beta)[1]
    if not np.all(np.isfinite(coef)):
        return Extrapolation(last, beta, None, True, last)
    # amplitude in the original time units
    amp = float(coef[1]) * tw[-1] ** beta
    return Extrapolation(float(coef[0]), beta, amp, False, last)

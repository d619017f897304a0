"""Positive finite measures (atoms plus a density) and their kernel functionals.

Internally every location is stored as a lag ``l >= 0``: an atom at
``s in [-tau, 0]`` of a delay kernel becomes lag ``-s`` and a half-line atom
at ``s`` is lag ``s``.  Both equations then read
``x'(t) = int mu(dl) f(x(t - l))``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad

from .errors import BadWindow, MomentUndecidable, NonPositiveMass, WrongSupport

QUAD_EPSABS = 1e-14
QUAD_EPSREL = 1e-10


class SupportKind(enum.Enum):
    DELAY = "delay"
    HALF_LINE = "half-line"


def _breakpoints(a: float, b: float, extra: Sequence[float] = ()) -> list[float]:
    """Split [a, b] at decades and at the given points so quad sees short pieces."""
    pts = {a, b}
    if b > a:
        lo = max(a, 1.0)
        p = 10.0 ** math.ceil(math.log10(lo)) if lo > 0 else 1.0
        while p < b:
            if p > a:
                pts.add(p)
            p *= 10.0
        pts.update(e for e in extra if a < e < b)
    return sorted(pts)


def _quad(fn: Callable[[float], float], a: float, b: float, extra: Sequence[float] = ()) -> float:
    if b <= a:
        return 0.0
    pts = _breakpoints(a, b, extra)
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        val, _ = quad(fn, lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
        total += val
    return total


def _power_integral(p: float, a, b):
    """int_a^b (1 + s)^{-p} ds for 0 <= a <= b (b may be inf), vectorised."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    la = np.log1p(a)
    with np.errstate(over="ignore", invalid="ignore"):
        lb = np.log1p(b)
        q = 1.0 - p
        if abs(q) < 1e-12:
            return lb - la
        # (1+a)^q * expm1(q * log((1+b)/(1+a))) / q, stable for q near 0
        out = np.exp(q * la) * np.expm1(q * (lb - la)) / q
    return np.where(b == a, 0.0, out)


class Density:
    """Non-negative density k(l) on lags, with optional analytic integrals.

    ``mass_fn(a, b)`` and ``moment_fn(a, b)`` (int_a^b l k(l) dl), when given,
    must accept b = inf.  ``rv_index`` is alpha for k in RV(-alpha).
    """

    def __init__(
        self,
        pdf: Callable[[np.ndarray], np.ndarray],
        *,
        mass_fn: Optional[Callable] = None,
        moment_fn: Optional[Callable] = None,
        rv_index: Optional[float] = None,
        name: str = "density",
    ):
        self._pdf = pdf
        self._mass_fn = mass_fn
        self._moment_fn = moment_fn
        self.rv_index = rv_index
        self.name = name

    def __repr__(self) -> str:
        return f"Density({self.name})"

    @property
    def analytic(self) -> bool:
        return self._mass_fn is not None and self._moment_fn is not None

    def pdf(self, lag):
        return np.asarray(self._pdf(np.asarray(lag, dtype=float)), dtype=float)

    def mass(self, a, b, s_max: float = math.inf):
        """int_a^b k; without an analytic form the range is cut at s_max."""
        if self._mass_fn is not None:
            return np.asarray(self._mass_fn(a, b), dtype=float)
        fn = np.vectorize(lambda lo, hi: _quad(lambda s: float(self.pdf(s)), lo, min(hi, s_max)))
        return np.asarray(fn(a, b), dtype=float)

    def moment(self, a, b, s_max: float = math.inf):
        if self._moment_fn is not None:
            return np.asarray(self._moment_fn(a, b), dtype=float)
        fn = np.vectorize(lambda lo, hi: _quad(lambda s: s * float(self.pdf(s)), lo, min(hi, s_max)))
        return np.asarray(fn(a, b), dtype=float)


class PowerLawDensity(Density):
    """k(l) = scale * (1 + l)^{-alpha}."""

    def __init__(self, alpha: float, scale: float):
        if not alpha > 0 or not scale > 0:
            raise ValueError("powerlaw needs alpha > 0 and scale > 0")
        self.alpha = float(alpha)
        self.scale = float(scale)
        super().__init__(
            lambda s: self.scale * (1.0 + s) ** (-self.alpha),
            mass_fn=self._mass,
            moment_fn=self._moment,
            rv_index=self.alpha,
            name=f"powerlaw({alpha:g}, {scale:g})",
        )

    @classmethod
    def normalized(cls, alpha: float, mass: float = 1.0) -> "PowerLawDensity":
        """Half-line power law with total mass ``mass`` (needs alpha > 1)."""
        if not alpha > 1:
            raise ValueError("a normalised half-line power law needs alpha > 1")
        return cls(alpha, mass * (alpha - 1.0))

    def _mass(self, a, b):
        return self.scale * _power_integral(self.alpha, a, b)

    def _moment(self, a, b):
        # l (1+l)^{-a} = (1+l)^{1-a} - (1+l)^{-a}
        with np.errstate(invalid="ignore"):
            hi = _power_integral(self.alpha - 1.0, a, b)
            lo = _power_integral(self.alpha, a, b)
            return self.scale * np.where(np.isinf(hi), np.inf, hi - lo)


@dataclass(frozen=True)
class MeasureKernel:
    """Positive finite Borel measure on [-tau, 0] (delay) or [0, inf) (half-line)."""

    support: SupportKind
    atom_lags: np.ndarray
    atom_weights: np.ndarray
    density: Optional[Density] = None
    tau: Optional[float] = None
    s_max: float = 1.0e6
    truncation: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        lags = np.asarray(self.atom_lags, dtype=float).reshape(-1)
        weights = np.asarray(self.atom_weights, dtype=float).reshape(-1)
        if lags.shape != weights.shape:
            raise ValueError("atom lags and weights must have equal length")
        if np.any(weights <= 0):
            raise ValueError("atom weights must be positive")
        if np.any(lags < 0):
            raise ValueError("atom locations lie outside the support")
        if self.support is SupportKind.DELAY:
            if self.tau is None or not self.tau > 0:
                raise ValueError("delay kernels need tau > 0")
            if np.any(lags > self.tau):
                raise ValueError("atom locations lie outside [-tau, 0]")
        order = np.argsort(lags, kind="stable")
        object.__setattr__(self, "atom_lags", lags[order])
        object.__setattr__(self, "atom_weights", weights[order])
        if self.density is not None:
            probe_hi = self.tau if self.support is SupportKind.DELAY else min(self.s_max, 1e4)
            probe = np.concatenate([[0.0], np.geomspace(1e-3, probe_hi, 64)])
            if np.any(self.density.pdf(probe) < 0):
                raise ValueError("density must be non-negative")
        if not total_mass(self) > 0:
            raise NonPositiveMass("kernel has no mass")

    # -- constructors -----------------------------------------------------
    @classmethod
    def delay(cls, tau: float, atoms: Sequence[tuple[float, float]] = (),
              density: Optional[Density] = None) -> "MeasureKernel":
        """Kernel on [-tau, 0]; atoms are (location s <= 0, weight).

        A density is given as a function of the lag -s.
        """
        locs = np.array([a[0] for a in atoms], dtype=float)
        if np.any(locs > 0) or np.any(locs < -tau):
            raise ValueError("atom locations lie outside [-tau, 0]")
        return cls(SupportKind.DELAY, -locs, [a[1] for a in atoms], density, tau=float(tau))

    @classmethod
    def half_line(cls, atoms: Sequence[tuple[float, float]] = (),
                  density: Optional[Density] = None, s_max: float = 1.0e6) -> "MeasureKernel":
        locs = [a[0] for a in atoms]
        return cls(SupportKind.HALF_LINE, locs, [a[1] for a in atoms], density, s_max=s_max)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        """Atoms in the equation's own coordinates."""
        sign = -1.0 if self.support is SupportKind.DELAY else 1.0
        return [(sign * l + 0.0, w) for l, w in zip(self.atom_lags, self.atom_weights)]

    @property
    def upper_lag(self) -> float:
        return self.tau if self.support is SupportKind.DELAY else math.inf

    def density_mass(self, a, b):
        if self.density is None:
            return np.zeros(np.broadcast(np.asarray(a), np.asarray(b)).shape)
        b = np.minimum(b, self.upper_lag)
        a = np.minimum(a, b)
        return self.density.mass(a, b, s_max=self.s_max)

    def density_moment(self, a, b):
        if self.density is None:
            return np.zeros(np.broadcast(np.asarray(a), np.asarray(b)).shape)
        b = np.minimum(b, self.upper_lag)
        a = np.minimum(a, b)
        return self.density.moment(a, b, s_max=self.s_max)


# -- operations ---------------------------------------------------------------------

def total_mass(mu: MeasureKernel) -> float:
    """M = mu(support)."""
    M = float(np.sum(mu.atom_weights)) + float(mu.density_mass(0.0, mu.upper_lag))
    if not M > 0:
        raise NonPositiveMass(f"total mass {M} is not positive")
    if not math.isfinite(M):
        raise NonPositiveMass("total mass is infinite")
    if mu.density is not None and mu.support is SupportKind.HALF_LINE and mu.density._mass_fn is None:
        mu.truncation.setdefault("s_max", mu.s_max)
        mu.truncation.setdefault(
            "last_decade_mass", float(mu.density.mass(mu.s_max / 10.0, mu.s_max)))
    return M


def first_moment(mu: MeasureKernel) -> float:
    """C = int |s| mu(ds); returns math.inf when the moment diverges."""
    atoms = float(np.dot(mu.atom_lags, mu.atom_weights))
    d = mu.density
    if d is None:
        return atoms
    if mu.support is SupportKind.DELAY:
        return atoms + float(mu.density_moment(0.0, mu.tau))
    if d._moment_fn is not None:
        return atoms + float(d.moment(0.0, math.inf))
    if d.rv_index is not None and d.rv_index < 2.0:
        return math.inf
    full = float(d.moment(0.0, mu.s_max, s_max=mu.s_max))
    last = float(d.moment(mu.s_max / 10.0, mu.s_max, s_max=mu.s_max))
    if d.rv_index is not None and d.rv_index > 2.0:
        return atoms + full
    if last > 1e-4 * max(full, 1e-300):
        raise MomentUndecidable(
            f"int s k(s) ds has not converged by S_max={mu.s_max:g}; declare an analytic tail")
    return atoms + full


def partial_first_moment(mu: MeasureKernel, t):
    """int_{[0, t]} l mu(dl), vectorised over t."""
    t = np.asarray(t, dtype=float)
    lags, w = mu.atom_lags, mu.atom_weights
    atoms = np.sum(np.where(lags[None, :] <= t.reshape(-1, 1), lags * w, 0.0), axis=1).reshape(t.shape)
    return atoms + mu.density_moment(np.zeros_like(t), t)


def tail_mass(mu: MeasureKernel, t):
    """epsilon_1(t) = mu((t, inf)) for half-line kernels."""
    if mu.support is not SupportKind.HALF_LINE:
        raise WrongSupport("tail_mass needs a half-line kernel")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise BadWindow("tail_mass needs t >= 0")
    lags, w = mu.atom_lags, mu.atom_weights
    atoms = np.sum(np.where(lags[None, :] > t.reshape(-1, 1), w, 0.0), axis=1).reshape(t.shape)
    return atoms + mu.density_mass(t, np.full_like(t, math.inf))


def window_mass(mu: MeasureKernel, a, b):
    """mu([a, b]) over lags, closed at both ends."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a > b):
        raise BadWindow("window_mass needs a <= b")
    if np.any(a < 0):
        raise BadWindow("window_mass needs a >= 0")
    a, b = np.broadcast_arrays(a, b)
    lags, w = mu.atom_lags, mu.atom_weights
    inside = (lags[None, :] >= a.reshape(-1, 1)) & (lags[None, :] <= b.reshape(-1, 1))
    atoms = np.sum(np.where(inside, w, 0.0), axis=1).reshape(a.shape)
    return atoms + mu.density_mass(a, b)


def integrated_tail(mu: MeasureKernel, t: float) -> float:
    """T(t) = int_0^t epsilon_1(s) ds by adaptive quadrature of the tail function."""
    if mu.support is not SupportKind.HALF_LINE:
        raise WrongSupport("integrated_tail needs a half-line kernel")
    t = float(t)
    if t < 0:
        raise BadWindow("integrated_tail needs t >= 0")
    if t == 0:
        return 0.0
    if math.isinf(t):
        return first_moment(mu)
    return _quad(lambda s: float(tail_mass(mu, s)), 0.0, t, extra=mu.atom_lags)


def integrated_tail_identity(mu: MeasureKernel, t):
    """Right-hand side int_{[0,t]} u mu(du) + t mu((t, inf)) of the tail identity."""
    t = np.asarray(t, dtype=float)
    with np.errstate(invalid="ignore"):
        return partial_first_moment(mu, t) + np.where(t > 0, t * tail_mass(mu, t), 0.0)

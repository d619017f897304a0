import math

import numpy as np
import pytest
from scipy.integrate import quad

from fdegrowth import dynamics
from fdegrowth.dynamics import (
    HistoryFunction,
    extrapolate_limit,
    integrate_fde,
    integrate_ode,
    integrate_vde,
    refine_check,
)
from fdegrowth.errors import NonPositiveHistory, OverflowGuard, StepTooLarge
from fdegrowth.measures import MeasureKernel, PowerLawDensity
from fdegrowth.nonlinearity import make_example_family, make_sqrt

H = 1.0 / 32.0
DELAY1 = MeasureKernel.delay(1.0, atoms=[(-1.0, 1.0)])
POWER3 = MeasureKernel.half_line(density=PowerLawDensity(3.0, 2.0))


@pytest.fixture(scope="module")
def theta1():
    return make_example_family(1.0)


# -- reference equation ----------------------------------------------------------------

def test_ode_closed_form_for_sqrt():
    traj = integrate_ode(make_sqrt(), 1.0, y0=1.0, T_end=100.0, h=0.5)
    exact = 2.0 * np.log1p(traj.times / 2.0)
    assert np.max(np.abs(traj.log_state - exact)) <= 1e-9
    assert math.exp(traj.log_state[4]) == pytest.approx(4.0, rel=1e-9)  # t = 2


def test_ode_starts_at_initial_value(theta1):
    traj = integrate_ode(theta1, 2.0, y0=3.5, T_end=10.0, h=0.5)
    assert traj.log_state[0] == pytest.approx(math.log(3.5), abs=1e-12)


def test_ode_growth_rate(theta1):
    traj = integrate_ode(theta1, 1.0, T_end=5000.0, h=1.0, thin=5000)
    assert traj.log_state[-1] / math.sqrt(2 * 5000.0) == pytest.approx(1.0, abs=0.01)


def test_ode_diagnostics_are_identity(theta1):
    traj = integrate_ode(theta1, 1.0, T_end=100.0, h=0.25)
    assert np.allclose(traj.r, 1.0, rtol=0, atol=1e-9)
    assert np.allclose(traj.d[1:], 0.0, atol=1e-9)


# -- collapse onto the reference equation ----------------------------------------------

@pytest.mark.parametrize("name", ["sqrt", "example1", "example2"])
def test_point_mass_at_zero_collapses(name):
    n = make_sqrt() if name == "sqrt" else make_example_family(float(name[-1]))
    ode = integrate_ode(n, 1.0, T_end=100.0, h=H)
    fde = integrate_fde(n, MeasureKernel.delay(1.0, atoms=[(0.0, 1.0)]), T_end=100.0, h=H)
    vde = integrate_vde(n, MeasureKernel.half_line(atoms=[(0.0, 1.0)]), T_end=100.0, h=H)
    assert np.max(np.abs(np.expm1(fde.log_state - ode.log_state))) <= 1e-6
    assert np.max(np.abs(np.expm1(vde.log_state - ode.log_state))) <= 1e-6


def test_sqrt_closed_form_through_fde():
    traj = integrate_fde(make_sqrt(), MeasureKernel.delay(1.0, atoms=[(0.0, 1.0)]), T_end=100.0, h=H)
    for t in (1.0, 10.0, 100.0):
        i = int(round(t / H))
        assert math.exp(traj.log_state[i]) == pytest.approx((1 + t / 2) ** 2, rel=1e-6)


# -- errors ----------------------------------------------------------------------------

def test_step_too_large(theta1):
    with pytest.raises(StepTooLarge):
        integrate_fde(theta1, DELAY1, T_end=10.0, h=0.125)


def test_non_positive_history(theta1):
    with pytest.raises(NonPositiveHistory):
        HistoryFunction.from_constant(0.0)
    with pytest.raises(NonPositiveHistory):
        HistoryFunction.from_samples([-1.0, 0.0], [1.0, -1.0])
    with pytest.raises(NonPositiveHistory):
        integrate_vde(theta1, POWER3, x0=0.0, T_end=1.0, h=H)


def test_overflow_guard(theta1, monkeypatch):
    monkeypatch.setattr(dynamics, "U_LIMIT", 5.0)
    with pytest.raises(OverflowGuard):
        integrate_fde(theta1, DELAY1, T_end=100.0, h=H)


# -- refinement ------------------------------------------------------------------------

def test_refine_ode_is_step_free(theta1):
    _, _, diff = refine_check(lambda **kw: integrate_ode(theta1, 1.0, **kw), 0.5, T_end=100.0)
    assert diff <= 1e-12


def test_refine_fde(theta1):
    _, _, diff = refine_check(lambda **kw: integrate_fde(theta1, DELAY1, **kw), H, T_end=200.0)
    assert diff <= 1e-6


def test_refine_vde(theta1):
    _, _, diff = refine_check(lambda **kw: integrate_vde(theta1, POWER3, **kw), H, T_end=200.0)
    assert diff <= 1e-4


# -- product trapezoid weights -----------------------------------------------------------

def test_convolution_weights_are_exact_for_piecewise_linear_data():
    density = PowerLawDensity(2.5, 1.5)
    h, n = 0.25, 12
    conv = dynamics._Convolution(density, h, n, 1e6)

    def g(time):
        # linear between grid nodes with a kink at every node
        return 1.0 + 0.3 * time + 0.2 * np.abs(np.sin(time / h * np.pi / 2))

    nodes = g(np.arange(n + 2) * h)
    for k in range(n):
        # tau = t_{k+1}
        tau = (k + 1) * h
        lin = lambda s: np.interp(tau - s, np.arange(n + 2) * h, nodes)
        exact = sum(quad(lambda s: density.pdf(s) * lin(s), m * h, (m + 1) * h, epsabs=1e-14)[0]
                    for m in range(k + 1))
        approx = conv.at_next_node(nodes, k) + conv.A[0] * nodes[k + 1]
        assert approx == pytest.approx(exact, rel=1e-12)
        # tau = t_k + h/2, with the stage value linear on the half cell
        tau = k * h + h / 2
        half_val = 0.5 * (nodes[k] + nodes[k + 1])
        grid = np.append(np.arange(k + 1) * h, tau)
        vals = np.append(nodes[:k + 1], half_val)
        lin = lambda s: np.interp(tau - s, grid, vals)
        pieces = [0.0, h / 2] + [h / 2 + (m + 1) * h for m in range(k)]
        exact = sum(quad(lambda s: density.pdf(s) * lin(s), a, b, epsabs=1e-14)[0]
                    for a, b in zip(pieces[:-1], pieces[1:]))
        approx = conv.at_half(nodes, k) + conv.half_A * half_val
        assert approx == pytest.approx(exact, rel=1e-12)


# -- invariants ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sample_trajectories(theta1):
    two_atoms = MeasureKernel.delay(2.0, atoms=[(-2.0, 0.25), (-0.5, 0.25)],
                                    density=PowerLawDensity(2.0, 0.75))
    return [
        integrate_fde(theta1, DELAY1, T_end=300.0, h=H),
        integrate_fde(make_example_family(0.5), two_atoms, T_end=300.0, h=H),
        integrate_vde(make_example_family(3.0), MeasureKernel.half_line(
            density=PowerLawDensity.normalized(1.1)), T_end=300.0, h=H),
        integrate_vde(theta1, POWER3, x0=2.0, T_end=300.0, h=H),
    ]


def test_monotone_growth(sample_trajectories):
    for traj in sample_trajectories:
        assert np.all(np.diff(traj.log_state[1:]) >= 0)


def test_upper_barrier(sample_trajectories):
    for traj in sample_trajectories:
        F0 = traj.F_state[0]
        bound = F0 + traj.M * traj.times + 1e-6 * (1 + traj.M * traj.times)
        assert np.all(traj.F_state <= bound)


def test_ratio_stays_below_one(sample_trajectories):
    for traj in sample_trajectories:
        later = traj.times >= 10.0
        assert np.all(traj.r[later] <= 1 + 1e-3)


def test_diagnostic_identity(sample_trajectories, theta1):
    for traj in sample_trajectories[:1]:
        lf = theta1.log_f(traj.log_state)
        resid = traj.d * lf + traj.M * traj.times - traj.F_state
        scale = np.maximum(np.abs(traj.F_state), np.abs(traj.M * traj.times))
        assert np.all(np.abs(resid[1:]) <= 1e-12 * scale[1:])


def test_sampled_history_matches_constant(theta1):
    grid = np.linspace(-1.0, 0.0, 9)
    sampled = HistoryFunction.from_samples(grid, np.full(grid.size, 2.0))
    a = integrate_fde(theta1, DELAY1, sampled, T_end=20.0, h=H)
    b = integrate_fde(theta1, DELAY1, HistoryFunction.from_constant(2.0), T_end=20.0, h=H)
    assert np.max(np.abs(a.log_state - b.log_state)) <= 1e-12


def test_sampled_history_stays_positive():
    psi = HistoryFunction.from_samples([-1.0, -0.5, 0.0], [1e-3, 5.0, 1e-3])
    assert np.all(np.isfinite(psi.log_value(np.linspace(-1.0, 0.0, 101))))


# -- output ----------------------------------------------------------------------------

def test_csv_export(theta1, tmp_path):
    traj = integrate_fde(theta1, DELAY1, T_end=10.0, h=H, thin=8)
    path = tmp_path / "traj.csv"
    traj.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,u,log_ref,r,d,c"
    assert len(lines) == traj.times.size + 1
    row = [float(v) for v in lines[-1].split(",")]
    assert row[1] == traj.log_state[-1]
    assert traj.times[-1] == 10.0 and np.all(np.diff(traj.times) > 0)


def test_extrapolation_recovers_power_law_limit():
    t = np.linspace(1.0, 2000.0, 2001)
    est = extrapolate_limit(t, 0.3 + 2.0 * t ** -0.5)
    assert not est.degenerate
    assert est.limit == pytest.approx(0.3, abs=1e-6)
    assert est.beta == pytest.approx(0.5, rel=0.05)


def test_extrapolation_falls_back_to_last_value():
    t = np.linspace(1.0, 100.0, 101)
    assert extrapolate_limit(t, np.full(t.size, 0.7)).limit == 0.7
    short = extrapolate_limit(t[:5], 1.0 / t[:5])
    assert short.degenerate and short.limit == 1.0 / t[4]

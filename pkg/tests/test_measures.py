import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdegrowth.errors import BadWindow, MomentUndecidable, NonPositiveMass, WrongSupport
from fdegrowth.measures import (
    Density,
    MeasureKernel,
    PowerLawDensity,
    first_moment,
    integrated_tail,
    integrated_tail_identity,
    partial_first_moment,
    tail_mass,
    total_mass,
    window_mass,
)


def generic_cubic():
    # same density as PowerLawDensity(3, 2) but without analytic integrals
    return MeasureKernel.half_line(density=Density(lambda s: 2.0 * (1.0 + s) ** -3.0, name="cubic"))


@pytest.fixture(params=["analytic", "generic"])
def cubic(request):
    if request.param == "analytic":
        return MeasureKernel.half_line(density=PowerLawDensity(3.0, 2.0))
    return generic_cubic()


def test_total_mass_examples(cubic):
    assert total_mass(MeasureKernel.delay(1.0, atoms=[(-1.0, 1.0)])) == 1.0
    assert total_mass(cubic) == pytest.approx(1.0, rel=1e-8)
    assert total_mass(MeasureKernel.delay(1.0, atoms=[(-0.5, 0.3), (0.0, 0.7)])) == pytest.approx(1.0)


def test_non_positive_mass():
    with pytest.raises((NonPositiveMass, ValueError)):
        MeasureKernel.half_line()
    with pytest.raises(ValueError):
        MeasureKernel.half_line(atoms=[(1.0, -0.5)])


def truncation_bound(mu):
    # int_{S_max}^inf s k(s) ds <= 2 / S_max for k = 2 (1+s)^{-3}
    return 0.0 if mu.density.analytic else 2.0 / mu.s_max


def test_first_moment_examples(cubic):
    assert first_moment(MeasureKernel.delay(1.0, atoms=[(-1.0, 1.0)])) == 1.0
    assert abs(first_moment(cubic) - 1.0) <= truncation_bound(cubic) + 1e-9
    assert first_moment(MeasureKernel.half_line(density=PowerLawDensity(1.5, 1.0))) == math.inf
    assert first_moment(MeasureKernel.delay(1.0, atoms=[(-0.5, 0.3), (0.0, 0.7)])) == pytest.approx(0.15)


def test_moment_undecidable_without_tail_information():
    slow = Density(lambda s: 1.0 / (1.0 + s) ** 2.5)
    with pytest.raises(MomentUndecidable):
        first_moment(MeasureKernel.half_line(density=slow))


def test_tail_mass_examples(cubic):
    assert tail_mass(cubic, 0.0) == pytest.approx(1.0, rel=1e-8)
    assert tail_mass(cubic, 1.0) == pytest.approx(0.25, rel=1e-8)
    assert tail_mass(MeasureKernel.half_line(atoms=[(3.0, 0.5)]), 4.0) == 0.0
    # open interval: an atom at t is not in the tail
    assert tail_mass(MeasureKernel.half_line(atoms=[(3.0, 0.5)]), 3.0) == 0.0
    with pytest.raises(WrongSupport):
        tail_mass(MeasureKernel.delay(1.0, atoms=[(-1.0, 1.0)]), 0.5)


def test_window_mass_examples(cubic):
    assert window_mass(MeasureKernel.half_line(atoms=[(3.0, 0.5)]), 2.0, 4.0) == 0.5
    assert window_mass(MeasureKernel.half_line(atoms=[(3.0, 0.5)]), 3.0, 3.0) == 0.5
    assert window_mass(cubic, 0.0, 1.0) == pytest.approx(0.75, rel=1e-8)
    assert window_mass(cubic, 5.0, 5.0) == 0.0
    assert window_mass(cubic, 0.0, math.inf) == pytest.approx(1.0, rel=1e-8)
    with pytest.raises(BadWindow):
        window_mass(cubic, 2.0, 1.0)


def test_integrated_tail_examples(cubic):
    assert abs(integrated_tail(cubic, math.inf) - 1.0) <= truncation_bound(cubic) + 1e-9
    assert integrated_tail(MeasureKernel.half_line(atoms=[(2.0, 1.0)]), 1.0) == pytest.approx(1.0)
    assert integrated_tail(cubic, 0.0) == 0.0
    with pytest.raises(WrongSupport):
        integrated_tail(MeasureKernel.delay(1.0, atoms=[(-1.0, 1.0)]), 1.0)


# -- invariants ----------------------------------------------------------------------

def kernels():
    atoms = st.lists(st.tuples(st.floats(0.0, 50.0), st.floats(0.01, 2.0)), max_size=3)
    density = st.one_of(
        st.none(),
        st.builds(PowerLawDensity, st.floats(1.05, 4.0), st.floats(0.05, 3.0)),
    )
    parts = st.tuples(atoms, density).filter(lambda p: p[0] or p[1] is not None)
    return parts.map(lambda p: MeasureKernel.half_line(atoms=p[0], density=p[1]))


@settings(max_examples=50, deadline=None, derandomize=True)
@given(kernels(), st.floats(0.0, 1e3))
def test_tail_identity(mu, t):
    lhs = integrated_tail(mu, t)
    rhs = float(integrated_tail_identity(mu, t))
    assert abs(lhs - rhs) <= 1e-8 * max(1.0, lhs)


@settings(max_examples=50, deadline=None, derandomize=True)
@given(kernels(), st.floats(0.0, 1e3), st.floats(0.0, 1e3))
def test_tail_monotone_and_integrated_tail_slope(mu, t1, t2):
    t1, t2 = min(t1, t2), max(t1, t2)
    assert float(tail_mass(mu, t2)) <= float(tail_mass(mu, t1)) + 1e-15
    T1, T2 = (float(integrated_tail_identity(mu, t)) for t in (t1, t2))
    assert T1 <= T2 + 1e-12 * max(1.0, T2)
    assert T2 - T1 <= float(tail_mass(mu, t1)) * (t2 - t1) * (1 + 1e-10) + 1e-12


@settings(max_examples=50, deadline=None, derandomize=True)
@given(kernels(), st.floats(0.0, 1e3))
def test_window_plus_tail_is_mass(mu, t):
    if np.any(mu.atom_lags == t):
        return
    total = float(window_mass(mu, 0.0, t)) + float(tail_mass(mu, t))
    assert total == pytest.approx(total_mass(mu), rel=1e-10)


@settings(max_examples=50, deadline=None, derandomize=True)
@given(kernels(), st.floats(0.0, 100.0), st.floats(0.0, 100.0), st.floats(0.0, 100.0))
def test_window_additivity(mu, a, b, c):
    a, b, c = sorted((a, b, c))
    if np.any(mu.atom_lags == b):
        return
    whole = float(window_mass(mu, a, c))
    assert float(window_mass(mu, a, b)) + float(window_mass(mu, b, c)) == pytest.approx(
        whole, rel=1e-10, abs=1e-14)


@pytest.mark.parametrize("alpha", [1.3, 1.5, 1.7])
def test_karamata_ratio(alpha):
    mu = MeasureKernel.half_line(density=PowerLawDensity.normalized(alpha))
    target = 1.0 + (2.0 - alpha) / (alpha - 1.0)

    def err(t):
        return abs(float(integrated_tail_identity(mu, t) / partial_first_moment(mu, t)) / target - 1.0)

    errors = [err(t) for t in (1e3, 1e4, 1e5)]
    assert errors[2] <= 0.05
    assert errors[0] > errors[1] > errors[2]


def test_delay_atoms_report_equation_coordinates():
    mu = MeasureKernel.delay(2.0, atoms=[(-2.0, 0.25), (0.0, 0.5)])
    assert mu.atoms == [(0.0, 0.5), (-2.0, 0.25)]

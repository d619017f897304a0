import itertools
import math

import numpy as np
import pytest

from fdegrowth.asymptotics import (
    LimitKind,
    RatioLimit,
    Verdict,
    check_memory_functional,
    classify_infinite_memory,
    compute_K,
    memory_functional,
    predict,
    regular_index_deviation,
    rv_index_first_moment,
    rv_index_integrated_tail,
    rv_thresholds,
    symbolic_limit,
    trend_verdict,
)
from fdegrowth.errors import BadTheta, DomainError, WrongRegime
from fdegrowth.measures import MeasureKernel, PowerLawDensity, window_mass
from fdegrowth.nonlinearity import LambdaClass, make_example_family, make_sqrt

ALPHA_GRID = (1.05, 1.1, 1.45, 1.6, 1.8, 1.9, 2.0)
DELAY1 = MeasureKernel.delay(1.0, atoms=[(-1.0, 1.0)])


def powerlaw(alpha):
    return MeasureKernel.half_line(density=PowerLawDensity.normalized(alpha))


@pytest.fixture(scope="module")
def fam():
    return {theta: make_example_family(theta) for theta in (1.0, 2.0, 3.0, 5.0)}


# -- dispatch ------------------------------------------------------------------------

def test_predict_examples(fam):
    p = predict(fam[1.0], DELAY1)
    assert p.predicted_ratio_limit.kind is LimitKind.VALUE
    assert p.predicted_ratio_limit.value == pytest.approx(math.exp(-1.0))
    assert predict(fam[2.0], DELAY1).predicted_ratio_limit.kind is LimitKind.UNIT
    assert predict(fam[1.0], powerlaw(1.5)).predicted_ratio_limit.kind is LimitKind.ZERO


def test_predict_finite_moment_memory(fam):
    p = predict(fam[1.0], MeasureKernel.half_line(density=PowerLawDensity(3.0, 2.0)))
    assert p.C == pytest.approx(1.0)
    assert p.predicted_ratio_limit.value == pytest.approx(math.exp(-1.0))


def test_predict_point_mass_at_zero_is_unit():
    zero_atom = MeasureKernel.half_line(atoms=[(0.0, 2.0)])
    p = predict(make_example_family(0.5), zero_atom)
    assert p.predicted_ratio_limit.kind is LimitKind.UNIT


LAMBDAS = [LambdaClass.zero(), LambdaClass.finite(0.7), LambdaClass.infinite()]
KERNELS = {
    "delay": DELAY1,
    "half-line-finite": MeasureKernel.half_line(atoms=[(2.0, 0.5)], density=PowerLawDensity(3.0, 1.0)),
    "half-line-infinite": powerlaw(1.9),
}


@pytest.mark.parametrize("lam,kernel", list(itertools.product(LAMBDAS, KERNELS)), ids=str)
def test_dispatch_totality(fam, lam, kernel):
    p = predict(fam[3.0], KERNELS[kernel], lam=lam)
    limit = p.predicted_ratio_limit
    assert isinstance(limit, RatioLimit)
    if limit.kind is LimitKind.VALUE:
        assert 0.0 < limit.value < 1.0
    if lam == LambdaClass.infinite():
        assert limit.kind is LimitKind.ZERO
    if lam == LambdaClass.zero() and math.isfinite(p.C):
        assert limit.kind is LimitKind.UNIT


def test_ratio_limit_text_roundtrip():
    for text in ("Value(0.5)", "Zero", "Unit", "Indeterminate"):
        assert str(RatioLimit.parse(text)) == text
    assert RatioLimit.parse("Value(1)").kind is LimitKind.UNIT
    with pytest.raises(ValueError):
        RatioLimit(LimitKind.VALUE, 1.5)


# -- classification ------------------------------------------------------------------

def test_thresholds():
    assert rv_thresholds(3.0) == (1.5, 1.25)
    lo, hi = rv_thresholds(2.0)
    assert lo == pytest.approx(5.0 / 3.0) and hi == pytest.approx(4.0 / 3.0)
    lo, hi = rv_thresholds(1e12)
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)
    with pytest.raises(BadTheta):
        rv_thresholds(1.0)


@pytest.mark.parametrize("alpha,kind", [(1.9, LimitKind.UNIT), (1.1, LimitKind.ZERO),
                                        (1.35, LimitKind.INDETERMINATE)])
def test_classify_examples(fam, alpha, kind):
    _, limit = classify_infinite_memory(fam[3.0], powerlaw(alpha))
    assert limit.kind is kind


@pytest.mark.parametrize("theta,alpha", list(itertools.product((2.0, 3.0, 5.0), ALPHA_GRID)))
def test_classification_matches_index_signs(fam, theta, alpha):
    report, limit = classify_infinite_memory(fam[theta], powerlaw(alpha))
    assert limit == symbolic_limit(theta, alpha)
    # the zero-sufficient condition excludes the small integrated tail
    if report["integrated-tail-large"].verdict is Verdict.HOLDS:
        assert report["integrated-tail-small"].verdict is Verdict.FAILS


def test_index_formulas():
    assert rv_index_first_moment(3.0, 1.5) == pytest.approx(0.0)
    assert rv_index_integrated_tail(3.0, 1.25) == pytest.approx(0.0)


def test_classify_wrong_regime(fam):
    with pytest.raises(WrongRegime):
        classify_infinite_memory(fam[3.0], DELAY1)
    with pytest.raises(WrongRegime):
        classify_infinite_memory(fam[1.0], powerlaw(1.5))
    with pytest.raises(WrongRegime):
        classify_infinite_memory(fam[3.0], MeasureKernel.half_line(density=PowerLawDensity(3.0, 1.0)))


def test_trend_verdict_protocol():
    assert trend_verdict(10.0 ** -np.arange(6), "zero") is Verdict.HOLDS
    assert trend_verdict(10.0 ** np.arange(6), "infinity") is Verdict.HOLDS
    assert trend_verdict(10.0 ** np.arange(6), "zero") is Verdict.FAILS
    # too little movement
    assert trend_verdict(1.0 + 0.01 * np.arange(6), "infinity") is Verdict.INCONCLUSIVE
    # too few monotone points
    assert trend_verdict([1.0, 5.0, 0.5, 0.1, 0.01], "zero") is Verdict.INCONCLUSIVE
    assert trend_verdict(np.zeros(6), "zero") is Verdict.HOLDS


# -- memory functional ---------------------------------------------------------------

def test_K_at_one_is_zero(fam):
    assert compute_K(fam[1.0], powerlaw(1.5), 1.0) == 0.0
    with pytest.raises(DomainError):
        compute_K(fam[1.0], powerlaw(1.5), 0.5)


def test_K_window_misses_support(fam):
    n = fam[1.0]
    x = 50.0
    beyond = float(n.F(x)) + 1.0
    assert compute_K(n, MeasureKernel.half_line(atoms=[(beyond, 1.0)]), x) == 0.0


def test_K_refinement_oracle(fam):
    n, mu = fam[1.0], powerlaw(1.5)
    x = math.exp(20.0)
    assert compute_K(n, mu, x) == pytest.approx(compute_K(n, mu, x, panels=640), rel=1e-4)


def test_K_against_direct_quadrature(fam):
    # brute force in log v with a fine trapezoid grid
    n = fam[1.0]
    mu = MeasureKernel.half_line(atoms=[(0.3, 0.4)], density=PowerLawDensity(3.0, 1.2))
    M = 1.0
    x = math.exp(6.0)
    s = np.linspace(0.0, 6.0, 400001)
    top = float(n.F(x)) / M
    lo = np.maximum(top - n.F_of_log(s) / M, 0.0)
    integrand = np.exp(n.log_f(s)) * window_mass(mu, lo, np.full_like(s, top))
    brute = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(s)))
    assert compute_K(n, mu, x, panels=256) == pytest.approx(brute, rel=1e-4)


def test_K_non_decreasing(fam):
    n, mu = fam[2.0], powerlaw(1.6)
    values = [compute_K(n, mu, x) for x in np.geomspace(2.0, 1e12, 15)]
    assert np.all(np.diff(values) >= 0)


def brute_memory_functional(n, reach, w):
    # unit atom at lag `reach`: K(u) = int f(e^s) ds over F(e^s) >= F(u) - reach, once F(u) >= reach
    s = np.linspace(0.0, w, 200001)
    f = np.exp(n.log_f(s))
    G = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(s))])
    start = n.F_inv_log(np.maximum(n.F_of_log(s) - reach, 0.0))
    K = np.where(n.F_of_log(s) >= reach, G - np.interp(start, s, G), 0.0)
    integrand = K * np.exp(s - 2.0 * n.log_f(s))
    inner = float(np.sum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(s)))
    return inner * math.exp(float(n.log_f(w)) - w)


def test_memory_functional_compact_support(fam):
    n = fam[3.0]
    mu = MeasureKernel.half_line(atoms=[(2.0, 1.0)])
    grid = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    trend = check_memory_functional(n, mu, log10_x=grid)
    direct = np.array([brute_memory_functional(n, 2.0, g * math.log(10.0)) for g in grid])
    assert np.allclose(trend.values, direct, rtol=1e-4)
    assert trend.verdict is trend_verdict(direct, "zero")


def test_memory_functional_unit_case(fam):
    trend = check_memory_functional(fam[3.0], powerlaw(1.9))
    assert trend.verdict is Verdict.HOLDS
    _, limit = classify_infinite_memory(fam[3.0], powerlaw(1.9))
    assert limit.kind is LimitKind.UNIT


def test_memory_functional_point_mass(fam):
    trend = check_memory_functional(fam[3.0], MeasureKernel.half_line(atoms=[(0.0, 1.0)]),
                         log10_x=np.geomspace(3.0, 3.0e3, 5))
    assert trend.verdict is Verdict.HOLDS


def test_regular_index_deviation_decays(fam):
    dev = regular_index_deviation(fam[3.0])
    assert np.all(np.diff(dev) < 0)
    assert dev[-1] < 0.01
    assert regular_index_deviation(make_sqrt())[-1] == pytest.approx(0.5)

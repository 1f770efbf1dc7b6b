"""Tests for density estimation and mode-centered intervals."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridcast.errors import PreconditionError
from gridcast.kde import (
    KdeModel,
    adaptive_interval,
    cdf,
    fit_kde,
    interval_forecast,
    max_density_point,
    pdf,
    quantile,
)


# ---------------------------------------------------------------- fitting


def test_fit_kde_silverman_value():
    """Uniform draws scaled to unit sample std: IQR/1.34 > std there, so
    h = 0.9 * n^(-1/5) exactly."""
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=100)
    x = (x - x.mean()) / x.std(ddof=1)
    model = fit_kde(x)
    assert model.bandwidth == pytest.approx(0.9 * 100 ** (-0.2), rel=1e-12)
    assert model.bandwidth == pytest.approx(0.3583, abs=1e-4)


def test_fit_kde_silverman_chooses_min_branch():
    rng = np.random.default_rng(4)
    x = rng.normal(size=500)
    # heavy tails widen std but not the IQR: the IQR branch should win
    x[:10] *= 50
    model = fit_kde(x)
    q75, q25 = np.percentile(np.sort(x), [75, 25])
    expect = 0.9 * min(np.std(x, ddof=1), (q75 - q25) / 1.34) * 500 ** (-0.2)
    assert model.bandwidth == pytest.approx(expect, rel=1e-12)
    assert (q75 - q25) / 1.34 < np.std(x, ddof=1)


def test_fit_kde_all_equal_falls_back():
    model = fit_kde(np.full(10, 7.0))
    assert model.bandwidth == pytest.approx(1e-6 * 8.0)
    assert pdf(model, 7.0) > 0  # no division by zero anywhere


def test_fit_kde_is_permutation_invariant():
    rng = np.random.default_rng(5)
    x = rng.normal(size=50)
    a = fit_kde(x)
    b = fit_kde(rng.permutation(x))
    assert np.array_equal(a.samples, b.samples)
    assert a.bandwidth == b.bandwidth


def test_fit_kde_needs_two_samples():
    with pytest.raises(PreconditionError):
        fit_kde(np.array([1.0]))


# ---------------------------------------------------------------- pdf/cdf


def test_pdf_kernel_at_zero():
    model = KdeModel(samples=np.zeros(3), bandwidth=1.0)
    assert pdf(model, 0.0) == pytest.approx(1.0 / np.sqrt(2 * np.pi), rel=1e-12)
    assert pdf(model, 0.0) == pytest.approx(0.39894, abs=1e-5)


def test_pdf_vanishes_in_the_tails():
    rng = np.random.default_rng(6)
    model = fit_kde(rng.normal(size=64))
    m = float(np.mean(model.samples))
    far = m + 20 * model.bandwidth * np.array([-1.0, 1.0])
    # far beyond the data the density is negligible relative to the center
    assert np.all(pdf(model, far) < 1e-10 * pdf(model, m) + 1e-300)


def test_pdf_symmetry():
    model = fit_kde(np.array([-1.0, 1.0]))
    for a in (0.3, 0.7, 1.5):
        assert pdf(model, a) == pytest.approx(pdf(model, -a), rel=1e-12)


def test_pdf_integrates_to_one():
    rng = np.random.default_rng(7)
    model = fit_kde(rng.normal(2.0, 3.0, size=200))
    h = model.bandwidth
    grid = np.linspace(model.samples[0] - 10 * h, model.samples[-1] + 10 * h, 20001)
    integral = np.trapezoid(pdf(model, grid), grid)
    assert integral == pytest.approx(1.0, abs=1e-4)


# ---------------------------------------------------------------- quantile


def test_quantile_symmetric_median():
    model = fit_kde(np.array([-1.0, 1.0]))
    assert quantile(model, 0.5) == pytest.approx(0.0, abs=1e-6 * model.bandwidth + 1e-12)


def test_quantile_monotone_and_round_trip():
    rng = np.random.default_rng(8)
    model = fit_kde(rng.normal(size=150))
    assert quantile(model, 0.25) < quantile(model, 0.75)
    for a in (0.1, 0.5, 0.9):
        assert cdf(model, quantile(model, a)) == pytest.approx(a, abs=1e-6)


def test_quantile_rejects_bad_levels():
    model = fit_kde(np.array([0.0, 1.0]))
    for a in (0.0, 1.0, -0.1, 1.7):
        with pytest.raises(PreconditionError):
            quantile(model, a)


# ---------------------------------------------------------------- argmax


def test_max_density_point_repeated_value():
    model = fit_kde(np.array([1.0, 2.0, 2.0, 2.0, 3.0]))
    c, z = max_density_point(model)
    assert z == 2.0
    assert model.samples[c] == 2.0


def test_max_density_point_tie_takes_smallest_index():
    for a in (0.5, 1.0, 3.0):
        model = fit_kde(np.array([-a, a]))
        c, z = max_density_point(model)
        assert c == 0
        assert z == -a


def test_max_density_point_tracks_gaussian_mean():
    rng = np.random.default_rng(9)
    mu, sigma = 4.0, 2.0
    model = fit_kde(rng.normal(mu, sigma, size=1000))
    _, z = max_density_point(model)
    assert abs(z - mu) < 0.2 * sigma


def test_max_density_affine_equivariance():
    rng = np.random.default_rng(10)
    x = rng.normal(size=80)
    c0, z0 = max_density_point(fit_kde(x))
    for a, b in ((2.0, 1.0), (0.5, -3.0), (10.0, 100.0)):
        c1, z1 = max_density_point(fit_kde(a * x + b))
        assert c1 == c0
        assert z1 == pytest.approx(a * z0 + b, rel=1e-12)


# ---------------------------------------------------------------- intervals


def test_adaptive_interval_middle_case():
    # wide kernel: density peaks at the central point 3
    model = KdeModel(samples=np.array([1.0, 2.0, 3.0, 4.0, 5.0]), bandwidth=1.5)
    c, _ = max_density_point(model)
    assert c == 2
    assert adaptive_interval(model, 0.4) == (2.0, 4.0)


def test_adaptive_interval_lower_edge_case():
    # narrow kernel: all densities tie, argmax falls to the smallest index
    model = KdeModel(samples=np.array([1.0, 2.0, 3.0, 4.0, 5.0]), bandwidth=0.05)
    c, _ = max_density_point(model)
    assert c == 0
    assert adaptive_interval(model, 0.4) == (1.0, 3.0)


def test_adaptive_interval_full_span_case():
    model = KdeModel(samples=np.array([1.0, 2.0, 3.0, 4.0, 5.0]), bandwidth=1.5)
    # gamma 0.9: n_g = round(4.5) = 4 = n - 1, so the span covers everything
    assert adaptive_interval(model, 0.9) == (1.0, 5.0)


def test_adaptive_interval_upper_edge_case():
    model = KdeModel(samples=np.array([1.0, 4.0, 4.8, 4.9, 5.0]), bandwidth=0.3)
    c, _ = max_density_point(model)
    assert c >= 3
    lo, hi = adaptive_interval(model, 0.4)
    assert hi == 5.0
    assert lo == model.samples[5 - 1 - 2]


def test_adaptive_interval_sample_coverage_bound():
    """Interval contains at least n_g + 1 sample points, so the covered
    fraction is >= gamma - 1/n. 200 random sets per the acceptance wording."""
    rng = np.random.default_rng(11)
    for trial in range(200):
        n = int(rng.integers(5, 60))
        x = rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 4.0), size=n)
        model = fit_kde(x)
        for gamma in (0.5, 0.7, 0.9):
            lo, hi = adaptive_interval(model, gamma)
            frac = np.mean((model.samples >= lo) & (model.samples <= hi))
            assert frac >= gamma - 1.0 / n


def test_adaptive_interval_nesting_in_middle_case():
    rng = np.random.default_rng(12)
    model = fit_kde(rng.normal(size=101))
    lo1, hi1 = adaptive_interval(model, 0.3)
    lo2, hi2 = adaptive_interval(model, 0.5)
    assert lo2 <= lo1 and hi1 <= hi2


@given(
    gamma=st.floats(min_value=0.01, max_value=0.99),
    seed=st.integers(0, 10_000),
)
@settings(max_examples=60, deadline=None)
def test_adaptive_interval_always_well_formed(gamma, seed):
    rng = np.random.default_rng(seed)
    model = fit_kde(rng.normal(size=int(rng.integers(2, 40))))
    lo, hi = adaptive_interval(model, gamma)
    _, z = max_density_point(model)
    assert lo <= z <= hi
    assert lo >= model.samples[0] and hi <= model.samples[-1]


# ---------------------------------------------------------------- assembly


def test_interval_forecast_degenerate_column(caplog):
    scenarios = np.ones((10, 3)) * 5.0
    scenarios[:, 1] = np.linspace(0, 1, 10)
    with caplog.at_level("WARNING"):
        fc = interval_forecast(scenarios, [0.5, 0.9], kind="adaptive")
    assert "degenerate" in caplog.text
    assert fc.z_max[0] == 5.0 and fc.z_max[2] == 5.0
    for g in (0.5, 0.9):
        assert fc.lower[g][0] == fc.upper[g][0] == 5.0


def test_interval_forecast_adaptive_contains_z_max():
    rng = np.random.default_rng(13)
    scenarios = rng.normal(size=(60, 8))
    fc = interval_forecast(scenarios, [0.5, 0.7, 0.9], kind="adaptive")
    for g in fc.levels():
        assert np.all(fc.lower[g] <= fc.z_max)
        assert np.all(fc.z_max <= fc.upper[g])
        assert np.all(fc.lower[g] <= fc.upper[g])


def test_interval_forecast_symmetric_calibration():
    """Symmetric quantile intervals on Gaussian scenarios cover fresh draws
    from the same distribution within 3% of the nominal level."""
    rng = np.random.default_rng(14)
    n_scen, horizon = 1000, 4
    mu, sigma = 10.0, 2.0
    scenarios = rng.normal(mu, sigma, size=(n_scen, horizon))
    fc = interval_forecast(scenarios, [0.5, 0.9], kind="symmetric")
    fresh = rng.normal(mu, sigma, size=(5000, horizon))
    for g in (0.5, 0.9):
        covered = np.mean((fresh >= fc.lower[g][None, :]) & (fresh <= fc.upper[g][None, :]))
        assert abs(covered - g) < 0.03


def test_interval_forecast_validates_inputs():
    good = np.random.default_rng(15).normal(size=(10, 4))
    with pytest.raises(PreconditionError):
        interval_forecast(good[:1], [0.5], kind="adaptive")
    with pytest.raises(PreconditionError):
        interval_forecast(good, [0.5], kind="bands")
    with pytest.raises(PreconditionError):
        interval_forecast(good, [1.5], kind="adaptive")

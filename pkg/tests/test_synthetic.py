"""Benchmark generator: reproducibility and exact-optimum construction."""

import numpy as np
import pytest

from epigrad import synthetic as syn


def test_benchmark_is_deterministic():
    a = syn.make_benchmark(n_regions=2, n=120, seed=4)
    b = syn.make_benchmark(n_regions=2, n=120, seed=4)
    for ra, rb in zip(a, b):
        np.testing.assert_array_equal(ra.episode.target, rb.episode.target)
        np.testing.assert_array_equal(ra.episode.features, rb.episode.features)
        np.testing.assert_array_equal(ra.theta_star, rb.theta_star)


def test_generating_parameters_are_exactly_optimal():
    region = syn.make_benchmark(n_regions=1, n=150, seed=2)[0]
    resim = syn.simulate_theta(region, region.theta_star)
    np.testing.assert_array_equal(resim, region.episode.target)
    assert syn.heldout_weekly_mse(region, region.theta_star, 4) == 0.0


def test_perturbed_parameters_score_worse():
    region = syn.make_benchmark(n_regions=1, n=150, seed=2)[0]
    off = region.theta_star.copy()
    off[:, 0] += 0.4
    assert syn.heldout_weekly_mse(region, off, 4) > 0.0


def test_regions_differ():
    regions = syn.make_benchmark(n_regions=3, n=150, seed=1)
    targets = [tuple(r.episode.target) for r in regions]
    assert len(set(targets)) == 3
    names = [r.name for r in regions]
    assert len(set(names)) == 3


def test_covid_variant_produces_deaths():
    region = syn.make_benchmark(n_regions=1, weeks=4, n=600, seed=3,
                                disease="covid")[0]
    assert region.theta_star.shape == (4, 3)
    assert region.episode.target[-1] > 0          # cumulative deaths
    weekly = syn.weekly_values(region.episode.target, "covid")
    assert weekly.shape == (4,)
    # differenced weekly sums total the final cumulative value
    assert np.isclose(weekly.sum(), region.episode.target[27])


def test_validation():
    with pytest.raises(ValueError, match="two weeks"):
        syn.make_benchmark(weeks=1)
    region = syn.make_benchmark(n_regions=1, n=120, seed=0)[0]
    with pytest.raises(ValueError, match="held-out"):
        syn.heldout_weekly_mse(region, region.theta_star, 6)

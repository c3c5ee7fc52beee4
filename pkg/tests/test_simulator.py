import numpy as np
import pytest

from lgrowth.data import summarize
from lgrowth.diagnostics import spearman_matrix
from lgrowth.gibbs import round_count
from lgrowth.simulator import (
    PUBLISHED_MISSINGNESS, SimulationTruth, default_truth, gen_cohort, truth_from_config,
)
from lgrowth.spline import basis_matrix


def test_default_truth_published_values():
    t = default_truth()
    np.testing.assert_array_equal(t.mu_beta[:4], [28.59, 24.86, 6.51, 8.52])
    np.testing.assert_array_equal(t.mu_beta[4:], [0.48, 0.95, 0.11, 0.07])
    assert t.alpha[0] == 141.08
    assert t.missing[7] == 0.44
    assert t.gamma[9, 1] == -0.05
    assert t.knots == (12.0, 15.0, 18.0) and t.n_subjects == 304
    assert np.argmax(t.position_probs) in (1, 2)


def test_truth_validation():
    with pytest.raises(ValueError):
        default_truth(missing=np.full(10, 1.5))
    with pytest.raises(ValueError):
        default_truth(loadings=np.ones(10) * 2)
    with pytest.raises(ValueError):
        default_truth(mu_beta=np.zeros(3))


def test_degenerate_noise_gives_population_curve():
    t = default_truth(n_subjects=15, sigma_beta=np.zeros((8, 8)), sigma_eps=np.zeros((10, 10)),
                      missing=np.zeros(10), seed=1)
    data, latent = gen_cohort(t)
    np.testing.assert_array_equal(latent.beta, np.tile(t.mu_beta, (latent.beta.shape[0], 1)))
    zeta1 = basis_matrix(data.age, t.knots) @ t.mu_beta[:4]
    X = data.covariates()
    np.testing.assert_allclose(latent.y_star[:, 0], t.alpha[0] + X @ t.gamma[0] + zeta1, rtol=1e-12)
    assert not np.isnan(data.y).any()


def test_counts_are_rounded_latents():
    data, latent = gen_cohort(default_truth(n_subjects=50, seed=2))
    for d, o in enumerate(data.outcomes):
        obs = ~np.isnan(data.y[:, d])
        if o.is_count:
            np.testing.assert_array_equal(data.y[obs, d], round_count(latent.y_star[obs, d]))
        else:
            np.testing.assert_array_equal(data.y[obs, d], latent.y_star[obs, d])


def test_full_masking_of_one_outcome():
    miss = np.zeros(10)
    miss[5] = 1.0
    data, _ = gen_cohort(default_truth(n_subjects=40, missing=miss, seed=3))
    assert np.isnan(data.y[:, 5]).all()
    assert not np.isnan(np.delete(data.y, 5, axis=1)).any()
    assert all(s.missing_proportion == 0 for i, s in enumerate(summarize(data)) if i != 5)


def test_missingness_rates_at_cohort_size():
    data, _ = gen_cohort(default_truth(seed=4))
    rates = np.isnan(data.y).mean(axis=0)
    assert np.all(np.abs(rates - np.array(PUBLISHED_MISSINGNESS)) < 0.05)
    assert data.n_subjects == 304


def test_schedule_is_semiannual_and_bounded():
    data, _ = gen_cohort(default_truth(n_subjects=100, seed=5))
    assert data.age.min() >= 10.0 and data.age.max() < 21.0
    for sid in range(data.n_subjects):
        ages = data.age[np.asarray(data.subject) == sid]
        np.testing.assert_allclose(np.diff(ages), 0.5, atol=2e-3)
        assert ages[-1] - ages[0] <= 2.5 + 1e-9


def test_seed_determinism():
    a, _ = gen_cohort(default_truth(n_subjects=30, seed=9))
    b, _ = gen_cohort(default_truth(n_subjects=30, seed=9))
    c, _ = gen_cohort(default_truth(n_subjects=30, seed=10))
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(np.nan_to_num(a.y), np.nan_to_num(c.y)) or a.n_rows != c.n_rows


def test_spearman_sign_structure():
    data, _ = gen_cohort(default_truth(n_subjects=1500, missing=np.zeros(10), seed=6))
    r = spearman_matrix(data)
    speeds = [d for d, o in enumerate(data.outcomes) if o.channel == "speed"]
    for i in speeds:
        for j in speeds:
            if i < j:
                assert r[i, j] > 0, (i, j)
    # determination test: correct answers vs log response time
    assert r[0, 1] < 0


def test_other_knot_counts():
    t = default_truth(knots=(14.0,))
    assert t.mu_beta.shape == (4,)
    data, latent = gen_cohort(SimulationTruth(**{**t.__dict__, "n_subjects": 10}))
    assert latent.beta.shape[1] == 4
    t3 = truth_from_config({"n_subjects": 12, "knots": [11.0, 13.0, 15.0, 17.0]})
    assert t3.mu_beta.shape == (10,) and t3.n_subjects == 12

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from segslab.diffusion import (chain_rng, default_prior_spec, epsilon_pred, forward_noise,
                               linear_schedule, make_prior, reverse_step, sample,
                               write_samples_csv, x0hat)
from segslab.errors import InvalidInputError


def test_schedule_frozen_values(schedule):
    assert schedule.T == 1000
    assert schedule.alpha_bar(0) == 1.0
    assert schedule.beta(1) == pytest.approx(1e-4)
    assert schedule.beta(1000) == pytest.approx(2e-2)
    assert schedule.alpha_bar(1) == pytest.approx(1 - 1e-4)
    assert schedule.alpha_bar(2) == pytest.approx((1 - 1e-4) * (1 - (1e-4 + 0.0199 / 999)))
    assert schedule.alpha_bar(1000) == pytest.approx(4.0358e-5, rel=1e-3)
    ab = schedule.alpha_bar(500)
    assert schedule.gamma(500) == pytest.approx(np.sqrt((1 - ab) / ab))


@pytest.mark.parametrize("t", [-1, 1001])
def test_schedule_rejects_t(schedule, t):
    with pytest.raises(InvalidInputError):
        schedule.alpha_bar(t)


def test_schedule_rejects_betas():
    with pytest.raises(InvalidInputError):
        linear_schedule(0)
    with pytest.raises(InvalidInputError):
        linear_schedule(10, 0.0, 0.1)


def test_default_prior_layout(prior):
    assert prior.labels == ("front", "side", "back")
    assert prior.label_weights() == pytest.approx({"front": 0.8, "side": 0.1, "back": 0.1})
    np.testing.assert_allclose(prior.means, [[3, -3], [0, -3 * np.sqrt(2)], [-3, 3]])


@pytest.mark.parametrize("spec", [
    [],
    [{"label": "a", "weight": 0.5, "mean": [0, 0], "std": [1, 1]}],
    [{"label": "a", "weight": 1.0, "mean": [0, 0], "cov": [[1, 2], [2, 1]]}],
    [{"label": "a", "weight": 1.0, "mean": [0, 0], "cov": [[1, 0], [0.5, 1]]}],
    [{"label": "a", "weight": 0.5, "mean": [0, 0], "std": [1, 1]},
     {"label": "b", "weight": 0.5, "mean": [0, 0, 0], "std": [1, 1, 1]}],
])
def test_make_prior_rejects(spec):
    with pytest.raises(InvalidInputError):
        make_prior(spec)


@pytest.mark.parametrize("ab", [1.0, 0.7, 0.05])
def test_score_matches_finite_difference(prior, ab):
    rng = np.random.default_rng(0)
    h = 1e-5
    for x in rng.normal(scale=3.0, size=(20, 2)):
        fd = np.array([(prior.log_density(x + h * e, ab) - prior.log_density(x - h * e, ab))
                       / (2 * h) for e in np.eye(2)])
        np.testing.assert_allclose(prior.score(x, ab), fd, rtol=1e-6, atol=1e-8)


def test_conditional_score_matches_finite_difference(prior):
    x, h = np.array([0.4, -1.2]), 1e-5
    fd = np.array([(prior.log_density(x + h * e, 0.5, "back")
                    - prior.log_density(x - h * e, 0.5, "back")) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(prior.score(x, 0.5, "back"), fd, rtol=1e-6)


def test_forward_noise_moments(prior, schedule):
    rng = np.random.default_rng(1)
    x0, _ = prior.sample_clean(200_000, rng)
    t = 300
    ab = schedule.alpha_bar(t)
    xt = forward_noise(schedule, x0, t, rng.standard_normal(x0.shape))
    w = prior.weights
    mean = np.sqrt(ab) * (w @ prior.means)
    second = sum(wi * (ab * (c + np.outer(m, m)) + (1 - ab) * np.eye(2))
                 for wi, m, c in zip(w, prior.means, prior.covs))
    cov = second - np.outer(mean, mean)
    np.testing.assert_allclose(xt.mean(0), mean, atol=0.03)
    np.testing.assert_allclose(np.cov(xt.T), cov, atol=0.08)


def test_forward_terminal_is_standard_normal(prior, schedule):
    rng = np.random.default_rng(2)
    x0, _ = prior.sample_clean(10_000, rng)
    xT = forward_noise(schedule, x0, 1000, rng.standard_normal(x0.shape))
    for j in range(2):
        assert stats.kstest(xT[:, j], "norm").statistic < 0.03


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 1000), st.floats(-10, 10), st.floats(-10, 10), st.floats(-3, 3))
def test_x0hat_inverts_forward(t, a, b, e):
    sch = linear_schedule(1000)
    x0, eps = np.array([a, b]), np.array([e, -e])
    np.testing.assert_allclose(x0hat(sch, forward_noise(sch, x0, t, eps), t, eps), x0,
                               atol=1e-6 * max(1.0, 1 / np.sqrt(sch.alpha_bar(t))))


def test_epsilon_pred_is_scaled_score(prior, schedule):
    x = np.array([[1.0, 2.0]])
    ab = schedule.alpha_bar(100)
    np.testing.assert_allclose(epsilon_pred(prior, schedule, x, 100),
                               -np.sqrt(1 - ab) * prior.score(x, ab))


def test_ddpm_last_step_is_noise_free(schedule):
    x = np.array([0.3, -0.2])
    eps = np.array([0.1, 0.5])
    a = reverse_step(schedule, x, 1, eps, "ddpm", np.array([100.0, 100.0]))
    b = reverse_step(schedule, x, 1, eps, "ddpm", None)
    np.testing.assert_array_equal(a, b)
    # at t = 1 the DDPM mean equals the clean estimate
    np.testing.assert_allclose(a, x0hat(schedule, x, 1, eps))


def test_ddim_step_formula(schedule):
    x, eps, t = np.array([0.5, 1.0]), np.array([-0.3, 0.2]), 400
    ab, abp = schedule.alpha_bar(t), schedule.alpha_bar(t - 1)
    x0 = (x - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
    np.testing.assert_allclose(reverse_step(schedule, x, t, eps, "ddim"),
                               np.sqrt(abp) * x0 + np.sqrt(1 - abp) * eps)


def test_sample_independent_of_block_and_n(prior, short_schedule):
    a = sample(prior, short_schedule, None, 10, seed=4, mode="ddpm", block=3)
    b = sample(prior, short_schedule, None, 25, seed=4, mode="ddpm")
    np.testing.assert_array_equal(a, b[:10])
    c = sample(prior, short_schedule, None, 5, seed=4, mode="ddpm", chain_offset=5)
    np.testing.assert_array_equal(c, b[5:10])


def test_chain_rng_streams_differ():
    assert chain_rng(0, 0).standard_normal() != chain_rng(0, 1).standard_normal()
    assert chain_rng(3, 2).standard_normal() == chain_rng(3, 2).standard_normal()


@pytest.mark.parametrize("mode", ["ddim", "ddpm"])
def test_unguided_sampler_recovers_mode_weights(prior, schedule, mode):
    xs = sample(prior, schedule, None, 2000, seed=0, mode=mode)
    frac = np.bincount(prior.classify(xs), minlength=3) / len(xs)
    se = np.sqrt(prior.weights * (1 - prior.weights) / len(xs))
    assert np.all(np.abs(frac - prior.weights) < 4 * se)


def test_conditional_sampling(prior, schedule):
    xs = sample(prior, schedule, "back", 300, seed=1, mode="ddpm")
    assert np.mean(prior.classify(xs) == 2) > 0.97
    back = prior.modes[2]
    np.testing.assert_allclose(xs.mean(0), back.mean, atol=0.4)


def test_sample_rejects(prior, short_schedule):
    with pytest.raises(InvalidInputError):
        sample(prior, short_schedule, None, 0, seed=0)
    with pytest.raises(InvalidInputError):
        sample(prior, short_schedule, None, 3, seed=0, mode="euler")
    with pytest.raises(InvalidInputError):
        sample(prior, short_schedule, "top", 3, seed=0)


def test_samples_csv(tmp_path, prior):
    xs = np.array([[3.0, -3.0], [-3.0, 3.0]])
    write_samples_csv(tmp_path / "s.csv", xs, prior)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "chain,x0,x1,view_argmax"
    assert lines[1].endswith(",front") and lines[2].endswith(",back")


def test_prior_spec_custom_weights():
    p = make_prior(default_prior_spec((0.5, 0.25, 0.25)))
    assert p.label_weights()["side"] == pytest.approx(0.25)

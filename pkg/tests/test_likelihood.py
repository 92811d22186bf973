import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from sdnioc import (ExperimenterObservationModel, GainSchedule, GaussianBelief,
                    build_joint_dynamics_full, build_joint_dynamics_partial, condition_gaussian,
                    exact_plain_lqg_loglik, log_likelihood_dataset, log_likelihood_trajectory,
                    position_only, propagate_moment_matched, reaching_model, rollout_batch,
                    solve_gains, track_beliefs)
from sdnioc.likelihood import trial_logliks

from conftest import random_lqg, scalar_model


# -- conditioning ---------------------------------------------------------------

def test_bivariate_conditioning():
    joint = GaussianBelief([0.0, 0.0], [[2.0, 1.0], [1.0, 2.0]])
    ll, post = condition_gaussian(joint, [1.0], 1)
    np.testing.assert_allclose(post.mean, [0.5], atol=1e-15)
    np.testing.assert_allclose(post.cov, [[1.5]], atol=1e-15)
    assert ll == pytest.approx(stats.norm(0, math.sqrt(2)).logpdf(1.0), abs=1e-14)


def test_zero_cross_covariance_keeps_prior(rng):
    mean = rng.standard_normal(4)
    cov = np.zeros((4, 4))
    cov[:2, :2] = [[2.0, 0.3], [0.3, 1.0]]
    cov[2:, 2:] = [[1.0, -0.2], [-0.2, 0.5]]
    _, post = condition_gaussian(GaussianBelief(mean, cov), rng.standard_normal(2), 2)
    np.testing.assert_allclose(post.mean, mean[2:], atol=1e-14)
    np.testing.assert_allclose(post.cov, cov[2:, 2:], atol=1e-14)


def test_observing_the_mean_keeps_prior_mean(rng):
    G = rng.standard_normal((4, 4))
    mean = rng.standard_normal(4)
    _, post = condition_gaussian(GaussianBelief(mean, G @ G.T + np.eye(4)), mean[[1, 3]], [1, 3])
    np.testing.assert_allclose(post.mean, mean[[0, 2]], atol=1e-13)


# -- joint dynamics -------------------------------------------------------------

def test_scalar_symbolic_expansion():
    a, b, h, v, w, e, c, d = 0.9, 0.7, 1.3, 0.2, 0.3, 0.05, 0.4, 0.25
    model = scalar_model(T=3, A=a, B=b, H=h, V=v, W=w, E=e, C=[[[c]]], D=[[[d]]])
    l, k = 0.6, 0.45
    gains = GainSchedule(np.full((2, 1, 1), l), np.full((2, 1, 1), k))
    jd = build_joint_dynamics_full(model, gains, 1)
    # x' = a x - (b + eps c) l xh + v xi
    # xh' = a xh - b l xh + k (h x + eps' d x + w om - h xh) + e eta
    np.testing.assert_allclose(jd.F_bar, [[a], [k * h]])
    np.testing.assert_allclose(jd.F_tilde, [[-b * l], [a - b * l - k * h]])
    np.testing.assert_allclose(jd.state_noise, [[[0.0], [k * d]]])
    np.testing.assert_allclose(jd.control_noise, [[[-c * l], [0.0]]])
    np.testing.assert_allclose(jd.Gamma, [[v, 0, 0], [0, k * w, e]])


def test_open_loop_decoupling(rng):
    model, cost = random_lqg(rng, m=3, p=2, k=2, T=5, signal=True)
    m = model.m
    gains = GainSchedule(np.zeros((4, 2, 3)), np.zeros((4, 3, 2)))
    jd = build_joint_dynamics_full(model, gains, 2)
    np.testing.assert_array_equal(jd.F_bar, np.vstack([model.A[2], np.zeros((m, m))]))
    np.testing.assert_array_equal(jd.F_tilde, np.vstack([np.zeros((m, m)), model.A[2]]))


def test_plain_model_has_empty_noise_stacks(rng):
    model, cost = random_lqg(rng, signal=False)
    gains = solve_gains(model, cost).gains
    jd = build_joint_dynamics_full(model, gains, 0)
    assert jd.state_noise.shape[0] == 0 and jd.control_noise.shape[0] == 0


def test_partial_identity_duplicates_state_row(rng):
    model, cost = random_lqg(rng, m=3, signal=True)
    gains = solve_gains(model, cost).gains
    exp = ExperimenterObservationModel(np.eye(3), np.zeros((3, 3)))
    jd = build_joint_dynamics_partial(model, exp, gains, 0)
    np.testing.assert_array_equal(jd.F_bar[6:], jd.F_bar[:3])
    np.testing.assert_array_equal(jd.F_tilde[6:], jd.F_tilde[:3])
    np.testing.assert_array_equal(jd.control_noise[:, 6:], jd.control_noise[:, :3])
    np.testing.assert_array_equal(jd.Gamma[6:, :3], jd.Gamma[:3, :3])


def test_partial_reaching_shapes():
    model, cost, _ = reaching_model()
    gains = solve_gains(model, cost).gains
    jd = build_joint_dynamics_partial(model, position_only(model), gains, 0)
    assert jd.F_bar.shape == (11, 5) and jd.F_tilde.shape == (11, 5)
    assert jd.rows == 2 * model.m + 1


def test_transition_index_checked(rng):
    model, cost = random_lqg(rng, T=4)
    gains = solve_gains(model, cost).gains
    with pytest.raises(IndexError):
        build_joint_dynamics_full(model, gains, 3)


# -- moment matching -------------------------------------------------------------

def test_linear_propagation_is_exact(rng):
    model, cost = random_lqg(rng, m=3, signal=False)
    gains = solve_gains(model, cost).gains
    jd = build_joint_dynamics_full(model, gains, 0)
    G = rng.standard_normal((3, 3))
    prior = GaussianBelief(rng.standard_normal(3), G @ G.T)
    x = rng.standard_normal(3)
    out = propagate_moment_matched(jd, prior, x)
    np.testing.assert_allclose(out.mean, jd.F_bar @ x + jd.F_tilde @ prior.mean, atol=1e-13)
    np.testing.assert_allclose(out.cov, jd.F_tilde @ prior.cov @ jd.F_tilde.T
                               + jd.Gamma @ jd.Gamma.T, atol=1e-13)


def test_zero_prior_gives_additive_noise(rng):
    model, cost = random_lqg(rng, m=3, signal=True)
    gains = solve_gains(model, cost).gains
    jd = build_joint_dynamics_full(model, gains, 0)
    out = propagate_moment_matched(jd, GaussianBelief(np.zeros(3), np.zeros((3, 3))), np.zeros(3))
    np.testing.assert_allclose(out.cov, jd.Gamma @ jd.Gamma.T, atol=1e-15)


def _mc_check(samples, mean, cov, n_se=4.0):
    n = len(samples)
    dev = samples - mean
    se_mean = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(dev.mean(0)) <= n_se * se_mean)
    prods = dev[:, :, None] * dev[:, None, :]
    se_cov = prods.std(0) / np.sqrt(n)
    assert np.all(np.abs(prods.mean(0) - cov) <= n_se * se_cov + 1e-12)


def test_scalar_monte_carlo_moments():
    rng = np.random.default_rng(0)
    a, b, h, v, w, e, c, d = 0.9, 0.7, 1.3, 0.2, 0.3, 0.05, 0.8, 0.5
    model = scalar_model(T=3, A=a, B=b, H=h, V=v, W=w, E=e, C=[[[c]]], D=[[[d]]])
    gains = GainSchedule(np.full((2, 1, 1), 0.6), np.full((2, 1, 1), 0.45))
    jd = build_joint_dynamics_full(model, gains, 0)
    prior = GaussianBelief([0.4], [[0.3]])
    x = np.array([1.2])
    out = propagate_moment_matched(jd, prior, x)
    n = 1_000_000
    xh = 0.4 + math.sqrt(0.3) * rng.standard_normal(n)
    eps_c, eps_d, xi, om, eta = rng.standard_normal((5, n))
    l, k = 0.6, 0.45
    u = -l * xh
    x_next = a * x[0] + b * u + c * eps_c * u + v * xi
    y = h * x[0] + d * eps_d * x[0] + w * om
    xh_next = a * xh + b * u + k * (y - h * xh) + e * eta
    _mc_check(np.column_stack([x_next, xh_next]), out.mean, out.cov)


def test_random_model_monte_carlo_moments():
    rng = np.random.default_rng(1)
    model, cost = random_lqg(rng, m=2, p=1, k=2, T=4, signal=True)
    gains = solve_gains(model, cost).gains
    jd = build_joint_dynamics_full(model, gains, 1)
    m = model.m
    G = rng.standard_normal((2 * m, 2 * m))
    prior = GaussianBelief(rng.standard_normal(2 * m), 0.2 * G @ G.T)
    out = propagate_moment_matched(jd, prior)
    n = 1_000_000
    z = prior.mean + rng.standard_normal((n, 2 * m)) @ np.linalg.cholesky(prior.cov).T
    x, xh = z[:, :m], z[:, m:]
    F = np.hstack([jd.F_bar, jd.F_tilde])
    w = z @ F.T + rng.standard_normal((n, jd.Gamma.shape[1])) @ jd.Gamma.T
    for S in jd.state_noise:
        w += rng.standard_normal((n, 1)) * (x @ S.T)
    for U in jd.control_noise:
        w += rng.standard_normal((n, 1)) * (xh @ U.T)
    _mc_check(w, out.mean, out.cov)


# -- trajectories ---------------------------------------------------------------

def _exp_model(rng, m, s=2, noise=0.2):
    return ExperimenterObservationModel(rng.standard_normal((s, m)),
                                        noise * np.eye(s) + 0.05 * rng.standard_normal((s, s)))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31), partial=st.booleans())
def test_exact_reduction_property(seed, partial):
    rng = np.random.default_rng(seed)
    model, cost = random_lqg(rng, signal=False)
    gains = solve_gains(model, cost).gains
    exp = _exp_model(rng, model.m) if partial else None
    ds = rollout_batch(model, gains, 3, seed % 1000, exp)
    approx = trial_logliks(model, gains, ds, exp)
    exact = exact_plain_lqg_loglik(model, gains, ds, exp)
    np.testing.assert_allclose(approx, exact, atol=1e-8, rtol=0)


def test_single_step_is_initial_density(rng):
    model, cost = random_lqg(rng, m=3, T=2, signal=False)
    model = model.replace(T=1, A=model.A[:1], B=model.B[:1], H=model.H[:1])
    gains = GainSchedule(np.zeros((0, model.p, 3)), np.zeros((0, 3, model.k)))
    x1 = rng.standard_normal((1, 1, 3))
    ll = exact_plain_lqg_loglik(model, gains, x1)
    ref = stats.multivariate_normal(model.x1_mean, model.x1_cov).logpdf(x1[0, 0])
    assert ll[0] == pytest.approx(ref, abs=1e-10)


@pytest.fixture(scope="module")
def reaching_data():
    model, cost, spec = reaching_model()
    gains = solve_gains(model, cost).gains
    exp = position_only(model, 1e-3)
    ds = rollout_batch(model, gains, 20, 4, exp)
    return model, cost, spec, gains, exp, ds


def test_dataset_of_one_equals_trajectory(reaching_data):
    model, _, _, gains, _, ds = reaching_data
    ll_traj, beliefs = log_likelihood_trajectory(model, gains, ds[3])
    assert log_likelihood_dataset(model, gains, ds.subset([3])) == ll_traj
    assert len(beliefs) == model.T


def test_trial_order_and_duplication(reaching_data):
    model, _, _, gains, exp, ds = reaching_data
    for e in (None, exp):
        base = log_likelihood_dataset(model, gains, ds, e)
        perm = np.random.default_rng(0).permutation(len(ds))
        assert abs(log_likelihood_dataset(model, gains, ds.subset(perm), e) - base) <= 1e-12 * abs(base)
        dup = ds.subset(np.repeat(np.arange(len(ds)), 2))
        assert log_likelihood_dataset(model, gains, dup, e) == 2 * base


def test_true_parameters_beat_high_effort_cost(reaching_data):
    model, cost, spec, gains, _, ds = reaching_data
    from sdnioc import apply_params

    m2, c2 = apply_params(spec, [1e-3, 0.2, 0.02], model, cost)
    assert log_likelihood_dataset(model, gains, ds) > \
        log_likelihood_dataset(m2, solve_gains(m2, c2).gains, ds)


def test_partial_obs_tracks_agent_estimate(reaching_data):
    model, _, _, gains, exp, ds = reaching_data
    means, covs = track_beliefs(model, gains, ds, exp)
    m = model.m
    est = means[..., m + 1]  # the agent's velocity estimate
    sd = np.sqrt(np.diagonal(covs, axis1=-2, axis2=-1)[..., m + 1])
    truth = ds.estimates[..., 1]
    rmse = np.sqrt(np.mean((est - truth) ** 2))
    assert rmse < 0.1 * np.ptp(truth)
    assert np.mean(np.abs(est - truth) <= 2 * sd + 1e-9) >= 0.9


def test_posterior_covariances_psd(reaching_data):
    model, _, _, gains, exp, ds = reaching_data
    for e in (None, exp):
        _, covs = track_beliefs(model, gains, ds, e)
        assert np.linalg.eigvalsh(covs).min() >= -1e-10


def test_loglik_continuous_in_data(reaching_data):
    model, _, _, gains, _, ds = reaching_data
    data = ds.states[:1].copy()
    base = log_likelihood_dataset(model, gains, ds.subset([0]))
    diffs = []
    for delta in (1e-6, 1e-7):
        pert = data.copy()
        pert[0, 10, 2] += delta
        from sdnioc import TrajectoryDataset
        diffs.append(abs(log_likelihood_dataset(model, gains, TrajectoryDataset(pert)) - base))
    assert diffs[1] < diffs[0] * 0.2  # shrinks linearly with delta


def test_bad_data_rejected(reaching_data):
    model, _, _, gains, _, ds = reaching_data
    bad = ds.states[:1].copy()
    bad[0, 3, 0] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        log_likelihood_trajectory(model, gains, bad[0])
    with pytest.raises(ValueError):
        log_likelihood_trajectory(model, gains, ds.states[0, :-1])


def test_initial_factor_flag(reaching_data):
    model, _, _, gains, exp, ds = reaching_data
    model2 = model.replace(x1_cov=1e-4 * np.eye(5))
    ds2 = rollout_batch(model2, gains, 3, 0)
    with_x1 = log_likelihood_dataset(model2, gains, ds2)
    without = log_likelihood_dataset(model2, gains, ds2, include_initial=False)
    first = stats.multivariate_normal(model2.x1_mean, model2.x1_cov).logpdf(ds2.states[:, 0]).sum()
    assert with_x1 - without == pytest.approx(first, rel=1e-10)

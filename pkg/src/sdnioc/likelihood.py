"""Approximate likelihood of observed trajectories and tracking of the agent's belief.

The experimenter keeps a Gaussian belief over the agent's internal estimate
(or, under partial observability, over the stacked true state and estimate).
Each step pushes that belief through the joint state/estimate dynamics,
matches the first two moments of the result, scores the new observation under
the predicted marginal, and conditions on it.

All trials of a dataset are processed together: arrays carry a leading trial
axis, the loop runs over time only.

Observed coordinates whose predicted variance is zero (relative to the other
observed coordinates) are deterministic given the past; they are left out of
both the density and the conditioning, so e.g. a known initial state or a
noiseless integrator coordinate contributes ``log 1 = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._linalg import NumericalError, batched_cholesky
from .model import ExperimenterObservationModel, GainSchedule, SystemModel, symmetrize
from .simulate import Trajectory, TrajectoryDataset

LOG_2PI = math.log(2 * math.pi)
DETERMINISTIC_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", symmetrize(np.asarray(self.cov, dtype=float)))


@dataclass(frozen=True, eq=False)
class JointDynamics:
    """One step of the stacked (state, estimate[, measurement]) dynamics.

    ``w = (F_bar + sum_i e_i S_i) x + (F_tilde + sum_j n_j U_j) xhat + Gamma v``
    where ``S_i = G D_i`` are the state-dependent noise maps (``state_noise``)
    and ``U_j`` the control-dependent ones (``control_noise``), all of shape
    (rows, m).
    """

    F_bar: np.ndarray
    F_tilde: np.ndarray
    state_noise: np.ndarray
    control_noise: np.ndarray
    Gamma: np.ndarray

    @property
    def rows(self):
        return self.F_bar.shape[0]


def build_joint_dynamics_full(model: SystemModel, gains: GainSchedule, t: int) -> JointDynamics:
    """Joint dynamics of ``(x, xhat)`` for the transition out of step ``t`` (0-based)."""
    if not 0 <= t < model.T - 1:
        raise IndexError(f"transition index {t} outside [0, {model.T - 1})")
    A, B, H = model.A[t], model.B[t], model.H[t]
    L, K = gains.L[t], gains.K[t]
    m, k = model.m, model.k
    zm = np.zeros((m, m))
    F_bar = np.vstack([A, K @ H])
    F_tilde = np.vstack([-B @ L, A - B @ L - K @ H])
    state_noise = np.stack([np.vstack([zm, K @ D]) for D in model.D]) if len(model.D) \
        else np.zeros((0, 2 * m, m))
    control_noise = np.stack([np.vstack([-C @ L, zm]) for C in model.C]) if len(model.C) \
        else np.zeros((0, 2 * m, m))
    Gamma = np.block([[model.V, np.zeros((m, k)), zm],
                      [zm, K @ model.W, model.E]])
    return JointDynamics(F_bar, F_tilde, state_noise, control_noise, Gamma)


def build_joint_dynamics_partial(model: SystemModel, exp_model: ExperimenterObservationModel,
                                 gains: GainSchedule, t: int) -> JointDynamics:
    """As :func:`build_joint_dynamics_full` with the measurement ``o`` of the next state appended."""
    jd = build_joint_dynamics_full(model, gains, t)
    M, N = exp_model.M, exp_model.N
    m, k, s = model.m, model.k, exp_model.s
    top = slice(0, m)
    F_bar = np.vstack([jd.F_bar, M @ jd.F_bar[top]])
    F_tilde = np.vstack([jd.F_tilde, M @ jd.F_tilde[top]])
    state_noise = np.concatenate([jd.state_noise, np.zeros((len(model.D), s, m))], axis=1)
    control_noise = np.concatenate([jd.control_noise, M @ jd.control_noise[:, top]], axis=1)
    Gamma = np.block([[jd.Gamma, np.zeros((2 * m, s))],
                      [M @ model.V, np.zeros((s, k + m)), N]])
    return JointDynamics(F_bar, F_tilde, state_noise, control_noise, Gamma)


# -- batched kernels ------------------------------------------------------------

def _outer(a):
    return a[..., :, None] * a[..., None, :]


def _sandwich_sum(S, M2):
    """``sum_i S_i M2 S_i^T`` for maps S (c, r, m) and moments M2 (N, m, m)."""
    if len(S) == 0:
        return 0.0
    out = S[0] @ M2 @ S[0].T
    for Si in S[1:]:
        out = out + Si @ M2 @ Si.T
    return out


def _propagate_full(jd: JointDynamics, x, mu, Sig):
    """Batched moment matching with the current state observed; x, mu (N, m)."""
    mean = x @ jd.F_bar.T + mu @ jd.F_tilde.T
    cov = jd.F_tilde @ Sig @ jd.F_tilde.T + jd.Gamma @ jd.Gamma.T
    cov = cov + _sandwich_sum(jd.state_noise, _outer(x)) \
        + _sandwich_sum(jd.control_noise, Sig + _outer(mu))
    return mean, symmetrize(cov)


def _propagate_joint(jd: JointDynamics, mu, Sig):
    """Batched moment matching from a belief over ``(x, xhat)``; mu (N, 2m)."""
    m = jd.F_bar.shape[1]
    F = np.hstack([jd.F_bar, jd.F_tilde])
    mean = mu @ F.T
    cov = F @ Sig @ F.T + jd.Gamma @ jd.Gamma.T
    second = Sig + _outer(mu)
    cov = cov + _sandwich_sum(jd.state_noise, second[:, :m, :m]) \
        + _sandwich_sum(jd.control_noise, second[:, m:, m:])
    return mean, symmetrize(cov)


def _condition_batch(mean, cov, value, obs, t=None):
    """Condition ``N(mean, cov)`` on ``w[obs] = value``; returns (loglik, mean, cov) of the rest."""
    n = mean.shape[-1]
    obs = np.asarray(obs)
    lat = np.setdiff1d(np.arange(n), obs)
    diag = np.diagonal(cov, axis1=-2, axis2=-1)[:, obs]
    scale = diag.max(axis=1, keepdims=True)
    keep = diag > DETERMINISTIC_RTOL * scale
    N = mean.shape[0]
    ll = np.zeros(N)
    post_mean = np.array(mean[:, lat])
    post_cov = np.array(cov[:, lat[:, None], lat])
    patterns, inverse = np.unique(keep, axis=0, return_inverse=True)
    for g, pattern in enumerate(patterns):
        rows = np.flatnonzero(inverse.ravel() == g)
        o = obs[pattern]
        if len(o) == 0:
            continue
        S = cov[rows][:, o[:, None], o]
        Slo = cov[rows][:, o[:, None], lat]
        r = value[rows][:, pattern] - mean[rows][:, o]
        Lc = batched_cholesky(S, t=t)
        a = np.linalg.solve(Lc, r[..., None])[..., 0]
        Bm = np.linalg.solve(Lc, Slo)
        logdet = 2.0 * np.log(np.diagonal(Lc, axis1=-2, axis2=-1)).sum(-1)
        ll[rows] = -0.5 * ((a * a).sum(-1) + logdet + len(o) * LOG_2PI)
        post_mean[rows] += np.einsum("nij,ni->nj", Bm, a)
        post_cov[rows] -= np.swapaxes(Bm, -1, -2) @ Bm
    return ll, post_mean, symmetrize(post_cov)


# -- public single-step API ----------------------------------------------------

def propagate_moment_matched(jd: JointDynamics, prior: GaussianBelief, x_obs=None) -> GaussianBelief:
    """Gaussian with the exact first two moments of the pushed-forward belief.

    With ``x_obs`` the prior is over the agent's estimate alone (dimension m)
    and ``x_obs`` is the observed current state; without it the prior covers
    the stacked ``(x, xhat)`` (dimension 2m).
    """
    mu, Sig = prior.mean[None], prior.cov[None]
    if x_obs is not None:
        mean, cov = _propagate_full(jd, np.asarray(x_obs, dtype=float)[None], mu, Sig)
    else:
        mean, cov = _propagate_joint(jd, mu, Sig)
    return GaussianBelief(mean[0], cov[0])


def condition_gaussian(joint: GaussianBelief, observed_value, observed):
    """Condition a joint Gaussian on some of its coordinates.

    ``observed`` is an index array, or an int ``q`` for the leading ``q``
    coordinates.  Returns ``(log-density of the observed value under its
    marginal, posterior over the remaining coordinates)``.
    """
    obs = np.arange(observed) if np.isscalar(observed) else np.asarray(observed)
    ll, mean, cov = _condition_batch(joint.mean[None], joint.cov[None],
                                     np.atleast_1d(np.asarray(observed_value, dtype=float))[None], obs)
    return float(ll[0]), GaussianBelief(mean[0], cov[0])


# -- trajectories ---------------------------------------------------------------

def _check_data(data, name="data"):
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{name} contains NaN or Inf")


def _loglik_batch(model, gains, data, exp_model=None, include_initial=True, keep_beliefs=False):
    """Per-trial log-likelihoods for data (N, T, dim); optional belief tracks."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 2:
        data = data[None]
    _check_data(data)
    N, T = data.shape[:2]
    if T != model.T:
        raise ValueError(f"data has {T} steps, model horizon is {model.T}")
    if len(gains) != T - 1:
        raise ValueError(f"gain schedule has {len(gains)} entries, expected {T - 1}")
    m = model.m
    total = np.zeros(N)
    means, covs = [], []

    if exp_model is None:
        if data.shape[2] != m:
            raise ValueError(f"state data must have {m} columns")
        mu = np.broadcast_to(model.xhat1_mean, (N, m)).copy()
        Sig = np.broadcast_to(model.xhat1_cov, (N, m, m)).copy()
        if include_initial:
            ll, _, _ = _condition_batch(np.broadcast_to(model.x1_mean, (N, m)),
                                        np.broadcast_to(model.x1_cov, (N, m, m)),
                                        data[:, 0], np.arange(m), t=1)
            total += ll
        for t in range(T):
            if keep_beliefs:
                means.append(mu)
                covs.append(Sig)
            if t == T - 1:
                break
            jd = build_joint_dynamics_full(model, gains, t)
            mean, cov = _propagate_full(jd, data[:, t], mu, Sig)
            ll, mu, Sig = _condition_batch(mean, cov, data[:, t + 1], np.arange(m), t=t + 2)
            total += ll
    else:
        s = exp_model.s
        if data.shape[2] != s:
            raise ValueError(f"measurement data must have {s} columns")
        M, NN = exp_model.M, exp_model.N @ exp_model.N.T
        z_mean = np.concatenate([model.x1_mean, model.xhat1_mean])
        z_cov = np.zeros((2 * m, 2 * m))
        z_cov[:m, :m] = model.x1_cov
        z_cov[m:, m:] = model.xhat1_cov
        # initial joint over (x1, xhat1, o1)
        F0 = np.vstack([np.eye(2 * m), np.hstack([M, np.zeros((s, m))])])
        mean0 = F0 @ z_mean
        cov0 = F0 @ z_cov @ F0.T
        cov0[2 * m:, 2 * m:] += NN
        ll, mu, Sig = _condition_batch(np.broadcast_to(mean0, (N, 2 * m + s)),
                                       np.broadcast_to(cov0, (N, 2 * m + s, 2 * m + s)),
                                       data[:, 0], np.arange(2 * m, 2 * m + s), t=1)
        if include_initial:
            total += ll
        obs = np.arange(2 * m, 2 * m + s)
        for t in range(T):
            if keep_beliefs:
                means.append(mu)
                covs.append(Sig)
            if t == T - 1:
                break
            jd = build_joint_dynamics_partial(model, exp_model, gains, t)
            mean, cov = _propagate_joint(jd, mu, Sig)
            ll, mu, Sig = _condition_batch(mean, cov, data[:, t + 1], obs, t=t + 2)
            total += ll
    if keep_beliefs:
        return total, np.stack(means, axis=1), np.stack(covs, axis=1)
    return total


def _as_array(data, exp_model):
    if isinstance(data, Trajectory):
        return data.exp_obs if exp_model is not None else data.states
    return np.asarray(data, dtype=float)


def log_likelihood_trajectory(model: SystemModel, gains: GainSchedule, data,
                              exp_model: ExperimenterObservationModel | None = None,
                              include_initial: bool = True):
    """Approximate log-likelihood of one trajectory and the tracked beliefs.

    ``data`` is a Trajectory or a (T, m) state array (T, s measurement array
    when ``exp_model`` is given).  The beliefs are over the agent's estimate
    given the states so far, or over ``(x, xhat)`` given the measurements so
    far.
    """
    arr = _as_array(data, exp_model)
    total, means, covs = _loglik_batch(model, gains, arr[None], exp_model, include_initial,
                                       keep_beliefs=True)
    beliefs = [GaussianBelief(means[0, t], covs[0, t]) for t in range(means.shape[1])]
    return float(total[0]), beliefs


def trial_logliks(model, gains, dataset: TrajectoryDataset, exp_model=None,
                  include_initial=True) -> np.ndarray:
    data = dataset.exp_obs if exp_model is not None else dataset.states
    if data is None:
        raise ValueError("dataset lacks the observations required by this model")
    try:
        return _loglik_batch(model, gains, data, exp_model, include_initial)
    except NumericalError:
        # locate the failing trial
        for i in range(len(dataset)):
            try:
                _loglik_batch(model, gains, data[i:i + 1], exp_model, include_initial)
            except NumericalError as exc:
                raise NumericalError(f"trial {i}: {exc}", exc.t) from None
        raise


def log_likelihood_dataset(model: SystemModel, gains: GainSchedule, dataset: TrajectoryDataset,
                           exp_model: ExperimenterObservationModel | None = None,
                           include_initial: bool = True) -> float:
    """Sum of per-trial log-likelihoods (exactly rounded, so trial order is irrelevant)."""
    return math.fsum(trial_logliks(model, gains, dataset, exp_model, include_initial))


def track_beliefs(model, gains, dataset: TrajectoryDataset, exp_model=None):
    """Belief means (N, T, n) and covariances (N, T, n, n) for every trial."""
    data = dataset.exp_obs if exp_model is not None else dataset.states
    _, means, covs = _loglik_batch(model, gains, data, exp_model, keep_beliefs=True)
    return means, covs


# -- exact linear-Gaussian reference -------------------------------------------

def _whitener(S, rtol=DETERMINISTIC_RTOL):
    """``(Wh, log pseudo-determinant, rank)`` with ``Wh.T @ Wh`` the pseudo-inverse of S.

    Full-rank S uses the inverse Cholesky factor, which is markedly more
    accurate than the eigendecomposition when S is ill-conditioned.
    """
    S = symmetrize(S)
    w, U = np.linalg.eigh(S)
    keep = w > rtol * max(w.max(), 0.0)
    if keep.all():
        try:
            Lc = np.linalg.cholesky(S)
            Wh = linalg.solve_triangular(Lc, np.eye(len(S)), lower=True)
            return Wh, 2.0 * float(np.log(np.diag(Lc)).sum()), len(S)
        except np.linalg.LinAlgError:
            pass
    Uk, wk = U[:, keep], w[keep]
    return (Uk / np.sqrt(wk)).T, float(np.log(wk).sum()), int(keep.sum())


def exact_plain_lqg_loglik(model: SystemModel, gains: GainSchedule, data,
                           exp_model: ExperimenterObservationModel | None = None,
                           include_initial: bool = True) -> np.ndarray:
    """Exact per-trial log-likelihoods ignoring every signal-dependent noise term.

    A Kalman filter over the stacked ``(x, xhat)`` with the experimenter's
    measurement as its observation model; covariances do not depend on the
    data, so they are computed once for all trials.  Singular innovation
    covariances use the pseudo-determinant density on their support.
    """
    data = np.asarray(data.exp_obs if exp_model is not None else data.states) \
        if isinstance(data, TrajectoryDataset) else np.asarray(data, dtype=float)
    if data.ndim == 2:
        data = data[None]
    _check_data(data)
    N, T = data.shape[:2]
    m = model.m
    if exp_model is None:
        O = np.hstack([np.eye(m), np.zeros((m, m))])
        R_obs = np.zeros((m, m))
    else:
        O = np.hstack([exp_model.M, np.zeros((exp_model.s, m))])
        R_obs = exp_model.N @ exp_model.N.T
    z = np.tile(np.concatenate([model.x1_mean, model.xhat1_mean]), (N, 1))
    P = np.zeros((2 * m, 2 * m))
    P[:m, :m] = model.x1_cov
    P[m:, m:] = model.xhat1_cov
    out = np.zeros(N)
    for t in range(T):
        if t > 0:
            A, B, H = model.A[t - 1], model.B[t - 1], model.H[t - 1]
            L, K = gains.L[t - 1], gains.K[t - 1]
            F = np.block([[A, -B @ L], [K @ H, A - B @ L - K @ H]])
            G = np.block([[model.V, np.zeros((m, model.k)), np.zeros((m, m))],
                          [np.zeros((m, m)), K @ model.W, model.E]])
            z = z @ F.T
            P = F @ P @ F.T + G @ G.T
        S = O @ P @ O.T + R_obs
        Wh, logpdet, rank = _whitener(S)
        r = data[:, t] - z @ O.T
        if t > 0 or include_initial:
            out += -0.5 * (np.square(r @ Wh.T).sum(-1) + logpdet + rank * LOG_2PI)
        gain = P @ O.T @ Wh.T @ Wh
        z = z + r @ gain.T
        P = symmetrize(P - gain @ S @ gain.T)
    return out


def trajectory_moments(model: SystemModel, gains: GainSchedule):
    """Unconditional per-step mean (T, 2m) and covariance (T, 2m, 2m) of ``(x, xhat)``.

    Exact in the first two moments: the signal-dependent terms are bilinear in
    independent noise and the state, so moment propagation loses nothing when
    no conditioning is involved.
    """
    m = model.m
    mu = np.concatenate([model.x1_mean, model.xhat1_mean])[None]
    Sig = np.zeros((1, 2 * m, 2 * m))
    Sig[0, :m, :m] = model.x1_cov
    Sig[0, m:, m:] = model.xhat1_cov
    means, covs = [mu[0]], [Sig[0]]
    for t in range(model.T - 1):
        mu, Sig = _propagate_joint(build_joint_dynamics_full(model, gains, t), mu, Sig)
        means.append(mu[0])
        covs.append(Sig[0])
    return np.array(means), np.array(covs)

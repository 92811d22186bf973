"""Evaluation measures: log-space parameter errors, per-step Gaussian summaries,
symmetrized KL divergences and convergence-rate fits."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._linalg import psd_sqrt
from .likelihood import trajectory_moments
from .model import GainSchedule, SystemModel
from .simulate import TrajectoryDataset


@dataclass(frozen=True, eq=False)
class TimestepGaussianSummary:
    means: np.ndarray  # (T, n)
    covs: np.ndarray   # (T, n, n)
    n_samples: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "covs", 0.5 * (self.covs + np.swapaxes(self.covs, -1, -2)))

    @property
    def T(self):
        return self.means.shape[0]

    def select(self, idx) -> "TimestepGaussianSummary":
        idx = np.asarray(idx)
        return TimestepGaussianSummary(self.means[:, idx], self.covs[:, idx][:, :, idx],
                                       self.n_samples)


def analytic_summary(model: SystemModel, gains: GainSchedule, dims=None,
                     estimate: bool = False) -> TimestepGaussianSummary:
    """Moment-propagated per-step Gaussian over the state (or the agent's estimate)."""
    means, covs = trajectory_moments(model, gains)
    m = model.m
    idx = np.arange(m) + (m if estimate else 0)
    if dims is not None:
        idx = idx[np.asarray(dims)]
    return TimestepGaussianSummary(means[:, idx], covs[:, idx][:, :, idx])


def additive_noise_baseline(model: SystemModel, gains: GainSchedule) -> SystemModel:
    """Replace signal-dependent noise by additive noise of the same average size.

    The control-dependent covariance ``sum_i C_i E[u u'] C_i'`` (and the
    state-dependent ``sum_i D_i E[x x'] D_i'``) is averaged over the horizon
    under the original policy and folded into ``V`` (and ``W``).
    """
    means, covs = trajectory_moments(model, gains)
    m = model.m
    second = covs + np.einsum("ti,tj->tij", means, means)
    xx = second[:, :m, :m]
    hh = second[:-1, m:, m:]
    uu = np.einsum("tpm,tmn,tqn->tpq", gains.L, hh, gains.L)
    extra_v = sum(np.einsum("ap,tpq,bq->ab", Ci, uu, Ci) for Ci in model.C) / len(uu)
    extra_w = sum(np.einsum("ka,tab,lb->kl", Di, xx, Di) for Di in model.D) / len(xx)
    V = psd_sqrt(model.V @ model.V.T + extra_v)
    W = psd_sqrt(model.W @ model.W.T + extra_w)
    return model.replace(V=V, W=W, C=None, D=None)


def log_rmse(theta_true, theta_est, base: float = math.e) -> float:
    """Root mean squared error of log parameters (natural log by default)."""
    err = log_errors(theta_true, theta_est, base)
    return float(np.sqrt(np.mean(err ** 2)))


def log_errors(theta_true, theta_est, base: float = math.e) -> np.ndarray:
    """``log(theta_est) - log(theta_true)`` per parameter."""
    if not base > 1:
        raise ValueError("log base must exceed 1")
    a = np.asarray(theta_true, dtype=float)
    b = np.asarray(theta_est, dtype=float)
    if a.shape != b.shape:
        raise ValueError("theta_true and theta_est must have equal length")
    if np.any(a <= 0) or np.any(b <= 0):
        raise ValueError("log errors need strictly positive parameters")
    return (np.log(b) - np.log(a)) / math.log(base)


_FIELDS = {"state": "states", "estimate": "estimates", "control": "controls",
           "agent_obs": "agent_obs", "exp_obs": "exp_obs"}


def empirical_summary(dataset: TrajectoryDataset, field: str = "state",
                      dims=None) -> TimestepGaussianSummary:
    """Per-step sample mean and unbiased sample covariance across trials."""
    data = getattr(dataset, _FIELDS[field])
    if data is None:
        raise ValueError(f"dataset has no {field!r} data")
    if dims is not None:
        data = data[..., np.asarray(dims)]
    n = data.shape[0]
    if n < 2:
        raise ValueError("need at least two trials")
    # shift by the first trial so identical trials give exactly zero spread
    shifted = data - data[0]
    offset = shifted.mean(axis=0)
    mean = data[0] + offset
    dev = shifted - offset
    cov = np.einsum("nti,ntj->tij", dev, dev) / (n - 1)
    return TimestepGaussianSummary(mean, cov, n)


def _kl(mu_p, S_p, mu_q, S_q):
    n = len(mu_p)
    Lq = np.linalg.cholesky(S_q)
    Lp = np.linalg.cholesky(S_p)
    X = np.linalg.solve(Lq, Lp)
    z = np.linalg.solve(Lq, mu_q - mu_p)
    logdet = 2 * (np.log(np.diag(Lq)).sum() - np.log(np.diag(Lp)).sum())
    return 0.5 * (np.sum(X ** 2) + z @ z - n + logdet)


def _unpack(g):
    if hasattr(g, "mean") and hasattr(g, "cov"):
        return g.mean, g.cov
    mu, cov = g
    return mu, cov


def symmetrized_kl(p, q, jitter: float = 1e-9) -> float:
    """``KL(p||q)/2 + KL(q||p)/2`` for Gaussians given as ``(mean, cov)`` pairs
    (or objects with ``mean`` and ``cov`` attributes).

    Both covariances receive the same ``jitter * mean variance`` ridge (with a
    tiny absolute floor), so exactly singular directions shared by the two
    Gaussians do not contribute.
    """
    (mu_p, cov_p), (mu_q, cov_q) = _unpack(p), _unpack(q)
    mu_p, mu_q = np.atleast_1d(mu_p).astype(float), np.atleast_1d(mu_q).astype(float)
    cov_p, cov_q = np.atleast_2d(cov_p).astype(float), np.atleast_2d(cov_q).astype(float)
    n = len(mu_p)
    scale = (np.trace(cov_p) + np.trace(cov_q)) / (2 * n)
    ridge = jitter * scale + 1e-300
    I = np.eye(n)
    cov_p = 0.5 * (cov_p + cov_p.T) + ridge * I
    cov_q = 0.5 * (cov_q + cov_q.T) + ridge * I
    try:
        val = 0.5 * (_kl(mu_p, cov_p, mu_q, cov_q) + _kl(mu_q, cov_q, mu_p, cov_p))
    except np.linalg.LinAlgError:
        raise ValueError("covariance is singular after jitter") from None
    return float(max(val, 0.0))


def skl_over_time(a: TimestepGaussianSummary, b: TimestepGaussianSummary) -> np.ndarray:
    if a.means.shape != b.means.shape:
        raise ValueError("summaries differ in horizon or dimension")
    return np.array([symmetrized_kl((a.means[t], a.covs[t]), (b.means[t], b.covs[t]))
                     for t in range(a.T)])


def mean_skl_over_time(a: TimestepGaussianSummary, b: TimestepGaussianSummary) -> float:
    return math.fsum(skl_over_time(a, b)) / a.T


def fit_convergence_rate(ns, rmses) -> float:
    """OLS slope of ``log(rmse)`` against ``log(n)``."""
    ns = np.asarray(ns, dtype=float)
    rmses = np.asarray(rmses, dtype=float)
    if ns.shape != rmses.shape or ns.size < 2:
        raise ValueError("need at least two (n, rmse) pairs of equal length")
    if np.any(ns <= 0) or np.any(rmses <= 0):
        raise ValueError("trial counts and errors must be positive")
    x, y = np.log(ns), np.log(rmses)
    x = x - x.mean()
    if np.allclose(x, 0):
        raise ValueError("trial counts are all equal")
    return float(x @ (y - y.mean()) / (x @ x))


def metrics_report(names, theta_true, theta_est, mean_skl=None, slope=None,
                   base: float = math.e) -> dict:
    err = log_errors(theta_true, theta_est, base)
    return {"log_rmse": float(np.sqrt(np.mean(err ** 2))),
            "per_param_log_err": {n: float(e) for n, e in zip(names, err)},
            "mean_skl": mean_skl, "slope": slope}

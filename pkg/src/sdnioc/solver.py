"""Approximately optimal controller and filter under signal-dependent noise.

The controller gains ``L`` (given the filter) come from a backward Riccati-type
pass and the filter gains ``K`` (given the controller) from a forward pass over
second moments; the two are alternated until the expected cost settles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import spd_solve
from .model import CostModel, GainSchedule, SystemModel, symmetrize

DEFAULT_MAX_ITERS = 50
DEFAULT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ControlPassState:
    """Cost-to-go ``x'Vx x + e'Ve e + s`` at every step (e = x - xhat)."""

    Vx: np.ndarray
    Ve: np.ndarray
    s: np.ndarray


@dataclass(frozen=True, eq=False)
class FilterPassState:
    """Second moments of the estimation error, of the estimate, and their cross term."""

    Sig_e: np.ndarray
    Sig_xhat: np.ndarray
    Sig_xhat_e: np.ndarray


@dataclass(frozen=True, eq=False)
class SolveResult:
    gains: GainSchedule
    expected_cost: float
    iters_used: int
    converged: bool
    cost_history: list = field(default_factory=list)

    def __iter__(self):
        # allows ``gains, cost, iters = solve_gains(...)``
        return iter((self.gains, self.expected_cost, self.iters_used))


def _noise_cov(S):
    return S @ S.T


def backward_pass(model: SystemModel, cost: CostModel, K: np.ndarray):
    """Controller gains for fixed filter gains ``K`` of shape (T-1, m, k)."""
    T, m, p = model.T, model.m, model.p
    K = np.asarray(K, dtype=float)
    if K.shape != (T - 1, m, model.k):
        raise ValueError(f"K must have shape {(T - 1, m, model.k)}, got {K.shape}")
    VV = _noise_cov(model.V)
    EE = _noise_cov(model.E)
    WW = _noise_cov(model.W)

    Vx = np.empty((T, m, m))
    Ve = np.empty((T, m, m))
    s = np.empty(T)
    L = np.empty((T - 1, p, m))
    Vx[-1] = cost.Q[-1]
    Ve[-1] = 0.0
    s[-1] = 0.0
    for t in range(T - 2, -1, -1):
        A, B, H, Kt = model.A[t], model.B[t], model.H[t], K[t]
        Vx1, Ve1 = Vx[t + 1], Ve[t + 1]
        Vsum = Vx1 + Ve1
        lhs = cost.R[t] + B.T @ Vx1 @ B
        for Ci in model.C:
            lhs = lhs + Ci.T @ Vsum @ Ci
        L[t] = spd_solve(lhs, B.T @ Vx1 @ A, t=t + 1)

        AK = A - Kt @ H
        vx = cost.Q[t] + A.T @ Vx1 @ (A - B @ L[t])
        for Di in model.D:
            KD = Kt @ Di
            vx = vx + KD.T @ Ve1 @ KD
        Vx[t] = symmetrize(vx)
        Ve[t] = symmetrize(A.T @ Vx1 @ B @ L[t] + AK.T @ Ve1 @ AK)
        s[t] = np.trace(Vx1 @ VV + Ve1 @ (VV + EE + Kt @ WW @ Kt.T)) + s[t + 1]
    return L, ControlPassState(Vx, Ve, s)


def _initial_moments(model: SystemModel):
    """Second moments of (e1, xhat1) with x1 and xhat1 drawn independently."""
    mu_x, mu_h = model.x1_mean, model.xhat1_mean
    delta = mu_x - mu_h
    Sig_e = model.x1_cov + model.xhat1_cov + np.outer(delta, delta)
    Sig_h = model.xhat1_cov + np.outer(mu_h, mu_h)
    Sig_he = np.outer(mu_h, delta) - model.xhat1_cov
    return Sig_e, Sig_h, Sig_he


def forward_pass(model: SystemModel, L: np.ndarray):
    """Filter gains for fixed controller gains ``L`` of shape (T-1, p, m)."""
    T, m, k = model.T, model.m, model.k
    L = np.asarray(L, dtype=float)
    if L.shape != (T - 1, model.p, m):
        raise ValueError(f"L must have shape {(T - 1, model.p, m)}, got {L.shape}")
    VV = _noise_cov(model.V)
    EE = _noise_cov(model.E)
    WW = _noise_cov(model.W)

    Se = np.empty((T, m, m))
    Sh = np.empty((T, m, m))
    She = np.empty((T, m, m))
    K = np.empty((T - 1, m, k))
    Se[0], Sh[0], She[0] = _initial_moments(model)
    for t in range(T - 1):
        A, B, H, Lt = model.A[t], model.B[t], model.H[t], L[t]
        se, sh, she = Se[t], Sh[t], She[t]
        second_x = se + sh + she + she.T
        innov = H @ se @ H.T + WW
        for Di in model.D:
            innov = innov + Di @ second_x @ Di.T
        K[t] = spd_solve(innov, H @ se @ A.T, t=t + 1).T

        ABL = A - B @ Lt
        AKH = A - K[t] @ H
        se_next = VV + EE + AKH @ se @ A.T
        for Ci in model.C:
            CL = Ci @ Lt
            se_next = se_next + CL @ sh @ CL.T
        KH = K[t] @ H
        sh_next = (EE + KH @ se @ A.T + ABL @ sh @ ABL.T
                   + ABL @ she @ KH.T + KH @ she.T @ ABL.T)
        Se[t + 1] = symmetrize(se_next)
        Sh[t + 1] = symmetrize(sh_next)
        She[t + 1] = ABL @ she @ AKH.T - EE
    return K, FilterPassState(Se, Sh, She)


def expected_cost(state: ControlPassState, model: SystemModel) -> float:
    """Expected total cost of the policy the backward pass was computed for."""
    mu_x, mu_h = model.x1_mean, model.xhat1_mean
    delta = mu_x - mu_h
    Vx, Ve = state.Vx[0], state.Ve[0]
    cov_e = model.x1_cov + model.xhat1_cov
    return float(mu_x @ Vx @ mu_x + np.trace(Vx @ model.x1_cov)
                 + delta @ Ve @ delta + np.trace(Ve @ cov_e) + state.s[0])


def solve_gains(model: SystemModel, cost: CostModel, max_iters: int = DEFAULT_MAX_ITERS,
                tol: float = DEFAULT_TOL) -> SolveResult:
    """Alternate backward and forward passes, starting from zero filter gains.

    Stops when the relative change of the expected cost between two
    alternations drops below ``tol``; hitting ``max_iters`` is reported through
    ``converged=False`` rather than raised.
    """
    K = np.zeros((model.T - 1, model.m, model.k))
    L, cps = backward_pass(model, cost, K)
    J = expected_cost(cps, model)
    history = [J]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        K, _ = forward_pass(model, L)
        L, cps = backward_pass(model, cost, K)
        J_new = expected_cost(cps, model)
        history.append(J_new)
        converged = abs(J_new - J) <= tol * max(abs(J), np.finfo(float).tiny)
        J = J_new
        if converged:
            break
    return SolveResult(GainSchedule(L, K), J, it, converged, history)

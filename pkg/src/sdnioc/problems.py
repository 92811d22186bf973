"""Benchmark problems: single-joint reaching, saccades and random LQG problems.

Plant constants for the reaching and saccade tasks are conventional values
from the motor-control literature; they are arguments so they can be changed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .estimate import Binding, ParamSpec
from .model import CostModel, SystemModel


# -- reaching -------------------------------------------------------------------

@dataclass(frozen=True)
class ReachingParams:
    r: float = 1e-5
    v: float = 0.2
    f: float = 0.02
    target: float = 0.1
    dt: float = 0.01
    duration: float = 0.35
    mass: float = 1.0
    tau1: float = 0.04          # excitation filter (s)
    tau2: float = 0.04          # force filter (s)
    control_noise: float = 0.5  # std of the multiplicative control noise
    motor_noise: float = 1e-3   # additive noise on force and excitation
    sensory_noise: float = 5e-3  # std of the agent's position measurement
    start: float = 0.0

    def __post_init__(self):
        for name in ("r", "v", "f"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be finite and non-negative")
        if self.dt <= 0 or self.duration <= 0:
            raise ValueError("dt and duration must be positive")
        M = self.duration / self.dt
        if abs(M - round(M)) > 1e-9 * M or round(M) < 2:
            raise ValueError("duration must be an integer multiple (>= 2) of dt")

    @property
    def M(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def T(self) -> int:
        # M control steps connect M + 1 states
        return self.M + 1


REACHING_STATE = ("position", "velocity", "force", "excitation", "target")


def reaching_model(params: ReachingParams = ReachingParams()):
    """Point mass driven by a second-order muscle filter, with a target state.

    Terminal cost ``(x_p - x*)^2 + (v x_v)^2 + (f x_f)^2``, running cost
    ``r/(M-1) u^2``; the agent sees a noisy position only.
    """
    P = params
    dt = P.dt
    A = np.eye(5)
    A[0, 1] = dt
    A[1, 2] = dt / P.mass
    A[2, 2] = 1 - dt / P.tau2
    A[2, 3] = dt / P.tau2
    A[3, 3] = 1 - dt / P.tau1
    B = np.zeros((5, 1))
    B[3, 0] = dt / P.tau1
    C = P.control_noise * B[None]
    H = np.zeros((1, 5))
    H[0, 0] = 1.0
    V = np.diag([0.0, 0.0, P.motor_noise, P.motor_noise, 0.0])
    W = np.array([[P.sensory_noise]])
    x1 = np.array([P.start, 0.0, 0.0, 0.0, P.target])
    model = SystemModel(A=A, B=B, H=H, V=V, W=W, E=np.zeros((5, 5)),
                        x1_mean=x1, x1_cov=np.zeros((5, 5)),
                        xhat1_mean=x1, xhat1_cov=np.zeros((5, 5)), C=C, T=P.T)

    T, M = P.T, P.M
    Q = np.zeros((T, 5, 5))
    d = np.array([1.0, 0, 0, 0, -1.0])
    Q[-1] = np.outer(d, d)
    Q[-1, 1, 1] += P.v ** 2
    Q[-1, 2, 2] += P.f ** 2
    scale = 1.0 / (M - 1)
    R = np.full((T, 1, 1), P.r * scale)
    cost = CostModel(Q, R, T=T)

    bindings = (
        Binding("r", "R", (0, 0), scale=scale),
        Binding("v", "Q", (1, 1), steps=(T - 1,), power=2.0),
        Binding("f", "Q", (2, 2), steps=(T - 1,), power=2.0),
    )
    spec = ParamSpec.log_around(("r", "v", "f"), bindings,
                                [max(P.r, 1e-300), max(P.v, 1e-300), max(P.f, 1e-300)])
    return model, cost, spec


def position_only(model: SystemModel, noise: float = 0.0):
    """Experimenter model that measures the first state coordinate."""
    from .model import ExperimenterObservationModel

    M = np.zeros((1, model.m))
    M[0, 0] = 1.0
    return ExperimenterObservationModel(M, np.array([[noise]]))


# -- saccades -------------------------------------------------------------------

@dataclass(frozen=True)
class SaccadeParams:
    r: float = 1e-3
    dt: float = 1.25e-3
    initial_angle: float = -10.0
    target_angle: float = 10.0
    duration: float = 0.1
    fixation_start: float = 0.05  # position cost applies from here on (s)
    tau1: float = 0.224           # eye-plant time constants (s)
    tau2: float = 0.013
    tau_m: float = 0.01           # muscle activation (s)
    velocity_weight: float = 0.01
    control_noise: float = 0.3
    motor_noise: float = 0.05
    sensory_noise: tuple = (0.5, 5.0)  # angle (deg), velocity (deg/s)

    @property
    def T(self) -> int:
        return int(round(self.duration / self.dt)) + 1


SACCADE_STATE = ("angle", "velocity", "activation", "integrator", "target")


def saccade_model(r: float = 1e-3, dt: float = 1.25e-3, initial_angle: float = -10.0,
                  target_angle: float = 10.0, params: SaccadeParams | None = None):
    """Oculomotor plant with a neural integrator (pulse-step control).

    The eye obeys ``tau1 tau2 th'' + (tau1 + tau2) th' + th = a``, the
    activation ``a`` low-pass filters the integrator output ``n`` and the
    control increments ``n`` directly, so zero control holds the eye still.
    Cost: ``r u^2`` per step plus squared angle error (and a small velocity
    term) once the fixation window starts.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    P = params or SaccadeParams()
    P = SaccadeParams(**{**P.__dict__, "r": r, "dt": dt, "initial_angle": initial_angle,
                         "target_angle": target_angle})
    t1, t2 = P.tau1, P.tau2
    A = np.eye(5)
    A[0, 1] = dt
    A[1, 0] = -dt / (t1 * t2)
    A[1, 1] = 1 - dt * (t1 + t2) / (t1 * t2)
    A[1, 2] = dt / (t1 * t2)
    A[2, 2] = 1 - dt / P.tau_m
    A[2, 3] = dt / P.tau_m
    B = np.zeros((5, 1))
    B[3, 0] = 1.0
    C = P.control_noise * B[None]
    H = np.zeros((2, 5))
    H[0, 0] = H[1, 1] = 1.0
    W = np.diag(P.sensory_noise)
    V = np.diag([0.0, 0.0, 0.0, P.motor_noise, 0.0])
    x1 = np.array([initial_angle, 0.0, initial_angle, initial_angle, target_angle])
    T = P.T
    model = SystemModel(A=A, B=B, H=H, V=V, W=W, E=np.zeros((5, 5)),
                        x1_mean=x1, x1_cov=np.zeros((5, 5)),
                        xhat1_mean=x1, xhat1_cov=np.zeros((5, 5)), C=C, T=T)

    d = np.array([1.0, 0, 0, 0, -1.0])
    Qfix = np.outer(d, d)
    Qfix[1, 1] += P.velocity_weight
    Q = np.zeros((T, 5, 5))
    t_fix = int(round(P.fixation_start / dt))
    Q[t_fix:] = Qfix
    R = np.full((T, 1, 1), r)
    cost = CostModel(Q, R, T=T)
    spec = ParamSpec.log_around(("r",), (Binding("r", "R", (0, 0)),), [r])
    return model, cost, spec


# -- random problems ------------------------------------------------------------

def sample_lkj_cholesky(dim: int, eta: float = 1.0, seed=None) -> np.ndarray:
    """Cholesky factor of an LKJ(eta) correlation matrix (onion construction)."""
    if dim < 1:
        raise ValueError("dim must be at least 1")
    if eta <= 0:
        raise ValueError("eta must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    L = np.zeros((dim, dim))
    L[0, 0] = 1.0
    beta = eta + (dim - 2) / 2.0
    for k in range(1, dim):
        y = rng.beta(k / 2.0, beta - (k - 1) / 2.0)
        u = rng.standard_normal(k)
        u /= np.linalg.norm(u)
        L[k, :k] = np.sqrt(y) * u
        L[k, k] = np.sqrt(1.0 - y)
    return L


@dataclass(frozen=True)
class RandomProblemParams:
    r_vec: tuple = (0.1, 0.1)
    seed: int = 0
    mult_noise_lo: float = 0.0
    mult_noise_hi: float = 0.5
    lkj_eta: float = 1.0
    n_physical: int = 4
    T: int = 30
    param_center: tuple = field(default=None)  # bound-box centre; defaults to 0.01 per entry

    def __post_init__(self):
        object.__setattr__(self, "r_vec", tuple(float(r) for r in self.r_vec))
        if not self.r_vec or any(not r > 0 for r in self.r_vec):
            raise ValueError("r_vec entries must be positive")


def random_problem(params: RandomProblemParams = RandomProblemParams()):
    """Random linear problem whose first coordinate must reach a target state."""
    P = params
    rng = np.random.default_rng(P.seed)
    n, p = P.n_physical, len(P.r_vec)
    m = n + 1
    A = np.eye(m)
    Ap = rng.standard_normal((n, n))
    A[:n, :n] = Ap / np.linalg.norm(Ap)
    B = np.zeros((m, p))
    Bp = rng.standard_normal((n, p))
    B[:n] = Bp / np.linalg.norm(Bp)
    H = np.zeros((n, m))
    H[:, :n] = rng.standard_normal((n, n))
    V = np.zeros((m, m))
    V[:n, :n] = sample_lkj_cholesky(n, P.lkj_eta, rng)
    W = sample_lkj_cholesky(n, P.lkj_eta, rng)
    C = np.zeros((1, m, p))
    C[0, :n] = rng.uniform(P.mult_noise_lo, P.mult_noise_hi, (n, p))
    D = np.zeros((1, n, m))
    D[0, :, :n] = rng.uniform(P.mult_noise_lo, P.mult_noise_hi, (n, n))
    x1 = np.zeros(m)
    x1[-1] = 1.0
    model = SystemModel(A=A, B=B, H=H, V=V, W=W, E=np.zeros((m, m)),
                        x1_mean=x1, x1_cov=np.zeros((m, m)),
                        xhat1_mean=x1, xhat1_cov=np.zeros((m, m)), C=C, D=D, T=P.T)

    d = np.zeros(m)
    d[0], d[-1] = 1.0, -1.0
    Q = np.zeros((P.T, m, m))
    Q[-1] = np.outer(d, d)
    R = np.broadcast_to(np.diag(P.r_vec), (P.T, p, p)).copy()
    cost = CostModel(Q, R, T=P.T)
    names = tuple(f"r{i + 1}" for i in range(p))
    bindings = tuple(Binding(nm, "R", (i, i)) for i, nm in enumerate(names))
    center = P.param_center or (0.01,) * p
    spec = ParamSpec.log_around(names, bindings, center)
    return model, cost, spec

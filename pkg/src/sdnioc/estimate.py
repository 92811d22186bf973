"""Maximum-likelihood recovery of cost (or any other model) parameters.

A :class:`ParamSpec` maps a low-dimensional parameter vector onto entries of
the model and cost matrices.  The negative approximate log-likelihood is
minimized in transformed (log10 for positive weights) space by BOBYQA with
several random starts.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pybobyqa

from ._linalg import NumericalError
from .likelihood import exact_plain_lqg_loglik, log_likelihood_dataset
from .model import CostModel, ExperimenterObservationModel, SystemModel
from .simulate import TrajectoryDataset
from .solver import solve_gains

log = logging.getLogger(__name__)

_COST_FIELDS = ("Q", "R")
_MODEL_FIELDS = ("A", "B", "H", "V", "W", "E", "C", "D")


@dataclass(frozen=True)
class Binding:
    """Write ``scale * theta[param] ** power`` into ``matrix[steps][index]``.

    ``steps`` selects time slices of time-stacked matrices (``None`` means all)
    or list members for ``C``/``D``; it is ignored for constant matrices.
    """

    param: str
    matrix: str
    index: tuple
    steps: tuple | None = None
    scale: float = 1.0
    power: float = 1.0

    def to_json(self):
        return {"param": self.param, "matrix": self.matrix, "index": list(self.index),
                "steps": None if self.steps is None else list(self.steps),
                "scale": self.scale, "power": self.power}

    @classmethod
    def from_json(cls, d):
        steps = d.get("steps")
        return cls(d["param"], d["matrix"], tuple(d["index"]),
                   None if steps is None else tuple(steps),
                   float(d.get("scale", 1.0)), float(d.get("power", 1.0)))


@dataclass(frozen=True)
class ParamSpec:
    names: tuple
    bindings: tuple
    transforms: tuple
    bounds: tuple  # (lo, hi) per parameter, in transformed space

    def __post_init__(self):
        for name in ("names", "bindings", "transforms"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "bounds", tuple(tuple(map(float, b)) for b in self.bounds))
        n = len(self.names)
        if not (len(self.transforms) == len(self.bounds) == n):
            raise ValueError("names, transforms and bounds must have equal length")
        for tr in self.transforms:
            if tr not in ("log", "identity"):
                raise ValueError(f"unknown transform {tr!r}")
        for b in self.bindings:
            if b.param not in self.names:
                raise ValueError(f"binding refers to unknown parameter {b.param!r}")
            if b.matrix not in _COST_FIELDS + _MODEL_FIELDS:
                raise ValueError(f"binding refers to unknown matrix {b.matrix!r}")
        for lo, hi in self.bounds:
            if not lo < hi:
                raise ValueError("each bound needs lo < hi")

    @property
    def dim(self):
        return len(self.names)

    @property
    def lower(self):
        return np.array([b[0] for b in self.bounds])

    @property
    def upper(self):
        return np.array([b[1] for b in self.bounds])

    def to_transformed(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = theta.copy()
        for i, tr in enumerate(self.transforms):
            if tr == "log":
                if theta[i] <= 0:
                    raise ValueError(f"parameter {self.names[i]!r} must be positive")
                out[i] = np.log10(theta[i])
        return out

    def to_natural(self, z):
        z = np.asarray(z, dtype=float)
        return np.array([10.0 ** v if tr == "log" else v for v, tr in zip(z, self.transforms)])

    def as_dict(self, theta):
        return {n: float(v) for n, v in zip(self.names, theta)}

    def to_json(self):
        return {"names": list(self.names), "transforms": list(self.transforms),
                "bounds": [list(b) for b in self.bounds],
                "bindings": [b.to_json() for b in self.bindings]}

    @classmethod
    def from_json(cls, d):
        return cls(tuple(d["names"]), tuple(Binding.from_json(b) for b in d["bindings"]),
                   tuple(d["transforms"]), tuple(tuple(b) for b in d["bounds"]))

    @classmethod
    def log_around(cls, names, bindings, base_values, decades=3.0):
        """Log-space spec with bounds ``decades`` either side of ``base_values``."""
        bounds = [(np.log10(v) - decades, np.log10(v) + decades) for v in base_values]
        return cls(tuple(names), tuple(bindings), ("log",) * len(names), tuple(bounds))


def apply_params(spec: ParamSpec, theta, base_model: SystemModel, base_cost: CostModel,
                 check_bounds: bool = True):
    """Copies of the base structures with the bound entries overwritten."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape != (spec.dim,):
        raise ValueError(f"theta must have {spec.dim} entries")
    if check_bounds:
        z = spec.to_transformed(theta)
        tol = 1e-12 * np.maximum(1.0, np.abs(z))
        if np.any(z < spec.lower - tol) or np.any(z > spec.upper + tol):
            raise ValueError(f"theta {theta} outside bounds {spec.bounds}")
    if not spec.bindings:
        return base_model, base_cost
    values = dict(zip(spec.names, theta))
    arrays = {}
    for b in spec.bindings:
        owner = base_cost if b.matrix in _COST_FIELDS else base_model
        if b.matrix not in arrays:
            arrays[b.matrix] = np.array(getattr(owner, b.matrix))
        a = arrays[b.matrix]
        v = b.scale * values[b.param] ** b.power
        if a.ndim == 3:
            sel = slice(None) if b.steps is None else list(b.steps)
            a[(sel,) + tuple(b.index)] = v
        else:
            a[tuple(b.index)] = v
    cost_changes = {k: v for k, v in arrays.items() if k in _COST_FIELDS}
    model_changes = {k: v for k, v in arrays.items() if k in _MODEL_FIELDS}
    cost = CostModel(cost_changes.get("Q", base_cost.Q), cost_changes.get("R", base_cost.R),
                     T=base_cost.T) if cost_changes else base_cost
    model = base_model.replace(**model_changes) if model_changes else base_model
    return model, cost


def neg_loglik_objective(spec: ParamSpec, theta, dataset: TrajectoryDataset,
                         base_model: SystemModel, base_cost: CostModel,
                         exp_model: ExperimenterObservationModel | None = None,
                         solver_opts: dict | None = None, likelihood: str = "approx",
                         include_initial: bool = True) -> float:
    """Negative log-likelihood at natural-space ``theta``; failures give ``+inf``.

    ``likelihood="plain"`` drops all signal-dependent noise from the model and
    scores the data with the exact linear-Gaussian likelihood.
    ``include_initial=False`` omits the density of the first observation.
    """
    try:
        model, cost = apply_params(spec, theta, base_model, base_cost)
        if likelihood == "plain":
            model = model.without_signal_noise()
        gains = solve_gains(model, cost, **(solver_opts or {})).gains
        if likelihood == "plain":
            ll = math.fsum(exact_plain_lqg_loglik(model, gains, dataset, exp_model,
                                                  include_initial))
        else:
            ll = log_likelihood_dataset(model, gains, dataset, exp_model, include_initial)
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("objective failed at theta=%s: %s", theta, exc)
        return np.inf
    if not np.isfinite(ll):
        log.warning("non-finite log-likelihood at theta=%s", theta)
        return np.inf
    return -ll


@dataclass
class DFOResult:
    x: np.ndarray
    f: float
    n_evals: int
    converged: bool
    message: str = ""

    def __iter__(self):
        return iter((self.x, self.f, self.n_evals, self.converged))


def minimize_dfo(objective, bounds, x0, budget: int | None = None, rho_begin: float | None = None,
                 rho_end: float = 1e-6, npt: int | None = None, seed=0) -> DFOResult:
    """Bound-constrained BOBYQA (Py-BOBYQA backend).

    Non-finite objective values are replaced by a finite penalty above the
    worst finite value seen so far, since interpolation models cannot absorb
    infinities.  The backend draws geometry-repair directions from numpy's
    global RNG; it is seeded with ``seed`` for the call and restored after.
    """
    bounds = np.asarray(bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    x0 = np.asarray(x0, dtype=float)
    n = len(x0)
    if np.any(x0 < lo) or np.any(x0 > hi):
        raise ValueError(f"x0 {x0} is outside the bounds")
    budget = budget if budget is not None else 100 * (n + 1)
    if budget < n + 2:
        raise ValueError("budget must be at least dimension + 2")
    npt = npt if npt is not None else min(2 * n + 1, budget - 1)
    rho_begin = rho_begin if rho_begin is not None else 0.25 * float(np.min(hi - lo))

    worst = [None]

    def wrapped(x):
        f = float(objective(x))
        if np.isfinite(f):
            worst[0] = f if worst[0] is None else max(worst[0], f)
            return f
        return 1e30 if worst[0] is None else worst[0] + max(1.0, abs(worst[0]))

    saved = np.random.get_state()
    np.random.seed(seed)
    try:
        res = pybobyqa.solve(wrapped, x0, bounds=(lo, hi), npt=npt, rhobeg=rho_begin,
                             rhoend=rho_end, maxfun=budget, do_logging=False)
    finally:
        np.random.set_state(saved)
    if res.x is None:
        return DFOResult(x0, float(objective(x0)), res.nf, False, res.msg)
    f = float(objective(res.x))
    converged = res.flag in (res.EXIT_SUCCESS, res.EXIT_SLOW_WARNING)
    return DFOResult(np.asarray(res.x), f, int(res.nf), bool(converged), res.msg)


@dataclass
class StartResult:
    init: np.ndarray
    final: np.ndarray
    loglik: float
    n_evals: int
    converged: bool


@dataclass
class FitResult:
    names: tuple
    theta_mle: np.ndarray
    loglik: float
    starts: list
    best_start_index: int
    seed: int | None = None
    spec: ParamSpec | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "theta_mle": dict(zip(self.names, map(float, self.theta_mle))),
            "loglik": self.loglik,
            "best_start_index": self.best_start_index,
            "starts": [{"init": s.init.tolist(), "final": s.final.tolist(), "loglik": s.loglik,
                        "n_evals": s.n_evals, "converged": s.converged} for s in self.starts],
            "spec": None if self.spec is None else self.spec.to_json(),
            "seed": self.seed,
            **self.extra,
        }


class FitError(RuntimeError):
    def __init__(self, message, starts):
        super().__init__(message)
        self.starts = starts


def _run_start(args):
    (spec, z0, dataset, base_model, base_cost, exp_model, solver_opts, likelihood,
     include_initial, budget, rho_end, dfo_seed) = args
    obj = lambda z: neg_loglik_objective(spec, spec.to_natural(z), dataset, base_model, base_cost,
                                         exp_model, solver_opts, likelihood, include_initial)
    res = minimize_dfo(obj, np.column_stack([spec.lower, spec.upper]), z0, budget=budget,
                       rho_end=rho_end, seed=dfo_seed)
    return StartResult(spec.to_natural(z0), spec.to_natural(res.x), -res.f, res.n_evals,
                       res.converged)


def fit_mle(spec: ParamSpec, dataset: TrajectoryDataset, base_model: SystemModel,
            base_cost: CostModel, exp_model: ExperimenterObservationModel | None = None,
            n_starts: int = 10, seed: int = 0, budget: int | None = None,
            likelihood: str = "approx", solver_opts: dict | None = None,
            rho_end: float = 1e-6, n_jobs: int = 1, include_initial: bool = True) -> FitResult:
    """Multi-start maximum likelihood; start points are uniform over the transformed box."""
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    rng = np.random.default_rng(seed)
    inits = rng.uniform(spec.lower, spec.upper, size=(n_starts, spec.dim))
    jobs = [(spec, z0, dataset, base_model, base_cost, exp_model, solver_opts, likelihood,
             include_initial, budget, rho_end, [seed, i]) for i, z0 in enumerate(inits)]
    if n_jobs > 1:
        with ProcessPoolExecutor(n_jobs) as pool:
            starts = list(pool.map(_run_start, jobs))
    else:
        starts = [_run_start(j) for j in jobs]

    ll = np.array([s.loglik for s in starts])
    finite = np.isfinite(ll) & (ll > -1e29)
    candidates = finite & np.array([s.converged for s in starts])
    if not candidates.any():
        candidates = finite
    if not candidates.any():
        raise FitError("all starts failed", starts)
    best = int(np.argmax(np.where(candidates, ll, -np.inf)))
    return FitResult(tuple(spec.names), starts[best].final, float(ll[best]), starts, best,
                     seed=seed, spec=spec)

"""Closed-loop rollouts of agent, filter and controller plus experimenter measurements.

Randomness: every trial owns a PCG64 stream seeded by ``(seed, trial)``;
Gaussian variates come from NumPy's ziggurat ``standard_normal``.  The
experimenter's measurement noise uses the separate stream
``(seed, trial, 1)`` so that adding a measurement model never changes the
simulated states.  All arithmetic is row-wise, so a trial's values do not
depend on how many other trials are simulated alongside it.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._linalg import psd_sqrt
from .model import ExperimenterObservationModel, GainSchedule, SystemModel

KINDS = ("state", "estimate", "control", "agent_obs", "exp_obs")


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray          # (T, m)
    estimates: np.ndarray       # (T, m)
    controls: np.ndarray        # (T-1, p)
    agent_obs: np.ndarray       # (T, k)
    exp_obs: np.ndarray | None  # (T, s)
    seed: tuple = None


@dataclass(frozen=True, eq=False)
class TrajectoryDataset:
    """N trials stored as stacked arrays with a leading trial axis."""

    states: np.ndarray
    estimates: np.ndarray | None = None
    controls: np.ndarray | None = None
    agent_obs: np.ndarray | None = None
    exp_obs: np.ndarray | None = None
    seed: int | None = None
    model_fingerprint: str | None = None

    def __len__(self):
        return self.states.shape[0] if self.states is not None else self.exp_obs.shape[0]

    @property
    def T(self):
        arr = self.states if self.states is not None else self.exp_obs
        return arr.shape[1]

    def __getitem__(self, i) -> Trajectory:
        pick = lambda a: None if a is None else a[i]
        return Trajectory(pick(self.states), pick(self.estimates), pick(self.controls),
                          pick(self.agent_obs), pick(self.exp_obs),
                          None if self.seed is None else (self.seed, i))

    @property
    def trials(self) -> list:
        return [self[i] for i in range(len(self))]

    def subset(self, idx) -> "TrajectoryDataset":
        idx = np.asarray(idx)
        pick = lambda a: None if a is None else a[idx]
        return TrajectoryDataset(pick(self.states), pick(self.estimates), pick(self.controls),
                                 pick(self.agent_obs), pick(self.exp_obs), self.seed,
                                 self.model_fingerprint)

    def observed_only(self) -> "TrajectoryDataset":
        """Only what the experimenter sees under partial observability."""
        return TrajectoryDataset(None, exp_obs=self.exp_obs, seed=self.seed,
                                 model_fingerprint=self.model_fingerprint)

    @classmethod
    def from_trajectories(cls, trajs, seed=None, model_fingerprint=None):
        stack = lambda name: (None if getattr(trajs[0], name) is None
                              else np.stack([getattr(tr, name) for tr in trajs]))
        return cls(*(stack(n) for n in ("states", "estimates", "controls", "agent_obs", "exp_obs")),
                   seed=seed, model_fingerprint=model_fingerprint)


def _mv(A, x):
    """Row-wise matrix-vector product; ``A`` (r, c) or (N, r, c), ``x`` (N, c)."""
    return (A * x[..., None, :]).sum(-1)


def _simulate(model: SystemModel, gains: GainSchedule, rngs, exp_model=None, exp_rngs=None):
    T, m, p, k = model.T, model.m, model.p, model.k
    c, d = model.C.shape[0], model.D.shape[0]
    N = len(rngs)
    x1_sqrt = psd_sqrt(model.x1_cov)
    xh1_sqrt = psd_sqrt(model.xhat1_cov)

    z_x1 = np.empty((N, m))
    z_xh1 = np.empty((N, m))
    omega = np.empty((N, T, k))
    eps_d = np.empty((N, T, d))
    xi = np.empty((N, T - 1, m))
    eps_c = np.empty((N, T - 1, c))
    eta = np.empty((N, T - 1, m))
    for n, rng in enumerate(rngs):
        z_x1[n] = rng.standard_normal(m)
        z_xh1[n] = rng.standard_normal(m)
        omega[n] = rng.standard_normal((T, k))
        eps_d[n] = rng.standard_normal((T, d))
        xi[n] = rng.standard_normal((T - 1, m))
        eps_c[n] = rng.standard_normal((T - 1, c))
        eta[n] = rng.standard_normal((T - 1, m))

    x = np.empty((N, T, m))
    xh = np.empty((N, T, m))
    u = np.empty((N, T - 1, p))
    y = np.empty((N, T, k))
    x[:, 0] = model.x1_mean + _mv(x1_sqrt, z_x1)
    xh[:, 0] = model.xhat1_mean + _mv(xh1_sqrt, z_xh1)
    for t in range(T):
        xt = x[:, t]
        yt = _mv(model.H[t], xt) + _mv(model.W, omega[:, t])
        for i in range(d):
            yt = yt + eps_d[:, t, i:i + 1] * _mv(model.D[i], xt)
        y[:, t] = yt
        if t == T - 1:
            break
        A, B = model.A[t], model.B[t]
        ut = -_mv(gains.L[t], xh[:, t])
        u[:, t] = ut
        xn = _mv(A, xt) + _mv(B, ut) + _mv(model.V, xi[:, t])
        for i in range(c):
            xn = xn + eps_c[:, t, i:i + 1] * _mv(model.C[i], ut)
        x[:, t + 1] = xn
        xht = xh[:, t]
        innov = yt - _mv(model.H[t], xht)
        xh[:, t + 1] = (_mv(A, xht) + _mv(B, ut) + _mv(gains.K[t], innov)
                        + _mv(model.E, eta[:, t]))

    o = None
    if exp_model is not None:
        nu = np.stack([r.standard_normal((T, exp_model.s)) for r in exp_rngs])
        o = _mv(exp_model.M, x) + _mv(exp_model.N, nu)
    return x, xh, u, y, o


def trial_rng(seed: int, trial: int, stream: int = 0):
    key = [int(seed), int(trial)] + ([stream] if stream else [])
    return np.random.default_rng(key)


def rollout(model: SystemModel, gains: GainSchedule, seed, exp_model=None) -> Trajectory:
    """One closed-loop trajectory; ``seed`` is an int or a ``(seed, trial)`` pair."""
    seed, trial = (seed, 0) if np.isscalar(seed) else seed
    rngs = [trial_rng(seed, trial)]
    exp_rngs = [trial_rng(seed, trial, 1)]
    x, xh, u, y, o = _simulate(model, gains, rngs, exp_model, exp_rngs)
    return Trajectory(x[0], xh[0], u[0], y[0], None if o is None else o[0], (seed, trial))


def rollout_batch(model: SystemModel, gains: GainSchedule, n_trials: int, seed: int,
                  exp_model: ExperimenterObservationModel | None = None,
                  fingerprint: str | None = None) -> TrajectoryDataset:
    """``n_trials`` independent rollouts; trial ``i`` equals ``rollout(..., (seed, i))``."""
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    rngs = [trial_rng(seed, i) for i in range(n_trials)]
    exp_rngs = [trial_rng(seed, i, 1) for i in range(n_trials)]
    x, xh, u, y, o = _simulate(model, gains, rngs, exp_model, exp_rngs)
    return TrajectoryDataset(x, xh, u, y, o, seed=seed, model_fingerprint=fingerprint)


# -- CSV ----------------------------------------------------------------------

def save_dataset_csv(path, ds: TrajectoryDataset, kinds=KINDS) -> None:
    """Long-format CSV ``trial,t,kind,c0..c{n-1}`` plus a JSON sidecar."""
    arrays = {"state": ds.states, "estimate": ds.estimates, "control": ds.controls,
              "agent_obs": ds.agent_obs, "exp_obs": ds.exp_obs}
    arrays = {kind: a for kind, a in arrays.items() if kind in kinds and a is not None}
    width = max(a.shape[-1] for a in arrays.values())
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial", "t", "kind"] + [f"c{j}" for j in range(width)])
        for n in range(len(ds)):
            for kind, a in arrays.items():
                for t, row in enumerate(a[n]):
                    vals = [repr(float(v)) for v in row]
                    w.writerow([n, t + 1, kind] + vals + [""] * (width - len(vals)))
    sidecar = {"model_fingerprint": ds.model_fingerprint, "seed": ds.seed,
               "n_trials": len(ds), "kinds": list(arrays)}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=1))


def load_dataset_csv(path) -> TrajectoryDataset:
    """Inverse of :func:`save_dataset_csv`; also accepts hand-made files
    (e.g. measured positions written as ``exp_obs`` rows)."""
    path = Path(path)
    rows = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:3] != ["trial", "t", "kind"]:
            raise ValueError(f"{path}: expected header 'trial,t,kind,c0,...'")
        for line_no, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                trial, t, kind = int(rec[0]), int(rec[1]), rec[2]
                vals = [float(v) for v in rec[3:] if v != ""]
            except (ValueError, IndexError):
                raise ValueError(f"{path}: malformed row at line {line_no}") from None
            if kind not in KINDS:
                raise ValueError(f"{path}: unknown kind {kind!r} at line {line_no}")
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"{path}: non-finite value at line {line_no}")
            rows.setdefault(kind, {}).setdefault(trial, {})[t] = vals
    if not rows:
        raise ValueError(f"{path}: no data rows")

    def stack(kind):
        if kind not in rows:
            return None
        trials = rows[kind]
        return np.array([[trials[n][t] for t in sorted(trials[n])] for n in sorted(trials)])

    meta = {}
    side = path.with_suffix(path.suffix + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
    return TrajectoryDataset(stack("state"), stack("estimate"), stack("control"),
                             stack("agent_obs"), stack("exp_obs"),
                             seed=meta.get("seed"), model_fingerprint=meta.get("model_fingerprint"))

"""Problem definition: dynamics, noise, cost and the experimenter's measurement model.

Noise covariances are stored as scale factors ``S`` with covariance ``S @ S.T``.
Time-varying matrices are stored with a leading time axis of length ``T``; a
single matrix given at construction is broadcast across the horizon.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PSD_TOL = 1e-10


def _frozen(a) -> np.ndarray:
    # C order fixes the memory layout, and with it BLAS summation order, so a
    # model gives bit-identical results after pickling into a worker process
    a = np.array(a, dtype=float, order="C")
    a.setflags(write=False)
    return a


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _time_stack(a, T: int, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim == 2:
        a = np.broadcast_to(a, (T,) + a.shape)
    elif a.ndim != 3:
        raise ValueError(f"{name}: expected a matrix or a stack of {T} matrices")
    return _frozen(a)


def _matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise ValueError(f"{name}: expected a matrix, got shape {a.shape}")
    return _frozen(a)


def _matrix_list(a, name: str) -> np.ndarray:
    a = np.asarray(a if a is not None else [], dtype=float)
    if a.size == 0:
        return _frozen(np.zeros((0, 0, 0)))
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"{name}: expected a list of matrices")
    return _frozen(a)


def _vector(a, name: str) -> np.ndarray:
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if a.ndim != 1:
        raise ValueError(f"{name}: expected a vector")
    return _frozen(a)


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Linear dynamics with additive, control-dependent and state-dependent noise.

    ``x[t+1] = A x + B u + V xi + sum_i eps_i C_i u``
    ``y[t]   = H x + W omega + sum_i eps_i D_i x``
    and the agent's filter carries internal noise ``E eta``.
    """

    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    V: np.ndarray
    W: np.ndarray
    E: np.ndarray
    x1_mean: np.ndarray
    x1_cov: np.ndarray
    xhat1_mean: np.ndarray
    xhat1_cov: np.ndarray
    C: np.ndarray = None
    D: np.ndarray = None
    T: int = None

    def __post_init__(self):
        T = self.T
        if T is None:
            T = next((np.shape(a)[0] for a in (self.A, self.B, self.H) if np.ndim(a) == 3), 1)
        set_ = object.__setattr__
        set_(self, "T", int(T))
        for name in ("A", "B", "H"):
            set_(self, name, _time_stack(getattr(self, name), self.T, name))
        for name in ("V", "W", "E", "x1_cov", "xhat1_cov"):
            set_(self, name, _matrix(getattr(self, name), name))
        for name in ("x1_mean", "xhat1_mean"):
            set_(self, name, _vector(getattr(self, name), name))
        C = _matrix_list(self.C, "C")
        D = _matrix_list(self.D, "D")
        if C.shape[0] == 0:
            C = _frozen(np.zeros((0, self.m, self.p)))
        if D.shape[0] == 0:
            D = _frozen(np.zeros((0, self.k, self.m)))
        set_(self, "C", C)
        set_(self, "D", D)

    @property
    def m(self) -> int:
        return self.A.shape[-1]

    @property
    def p(self) -> int:
        return self.B.shape[-1]

    @property
    def k(self) -> int:
        return self.H.shape[-2]

    @property
    def signal_dependent(self) -> bool:
        return self.C.shape[0] > 0 or self.D.shape[0] > 0

    def replace(self, **changes) -> "SystemModel":
        fields = {name: getattr(self, name) for name in _SYSTEM_FIELDS}
        fields.update(changes)
        return SystemModel(**fields)

    def without_signal_noise(self) -> "SystemModel":
        """The same model with every signal-dependent noise term removed."""
        return self.replace(C=None, D=None)


_SYSTEM_FIELDS = ("A", "B", "H", "V", "W", "E", "x1_mean", "x1_cov",
                  "xhat1_mean", "xhat1_cov", "C", "D", "T")


@dataclass(frozen=True, eq=False)
class CostModel:
    """Per-step quadratic costs ``x'Q_t x + u'R_t u``."""

    Q: np.ndarray
    R: np.ndarray
    T: int = None

    def __post_init__(self):
        T = self.T
        if T is None:
            T = next((np.shape(a)[0] for a in (self.Q, self.R) if np.ndim(a) == 3), 1)
        object.__setattr__(self, "T", int(T))
        object.__setattr__(self, "Q", _time_stack(self.Q, self.T, "Q"))
        object.__setattr__(self, "R", _time_stack(self.R, self.T, "R"))

    def scaled(self, alpha: float) -> "CostModel":
        return CostModel(alpha * self.Q, alpha * self.R, T=self.T)


@dataclass(frozen=True, eq=False)
class ExperimenterObservationModel:
    """``o_t = M x_t + N nu_t`` as measured by the experimenter."""

    M: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "M", _matrix(self.M, "M"))
        object.__setattr__(self, "N", _matrix(self.N, "N"))

    @property
    def s(self) -> int:
        return self.M.shape[0]


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Controller gains ``L`` (T-1, p, m) and filter gains ``K`` (T-1, m, k).

    Entry ``t`` acts on the transition from step ``t`` to ``t+1``; the final
    state of the horizon has no control and no filter update.
    """

    L: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "L", _frozen(self.L))
        object.__setattr__(self, "K", _frozen(self.K))
        if self.L.shape[0] != self.K.shape[0]:
            raise ValueError("L and K must cover the same number of steps")

    def __len__(self):
        return self.L.shape[0]

    def to_json(self) -> dict:
        return {
            "L": [{"t": t + 1, "matrix": self.L[t].tolist()} for t in range(len(self))],
            "K": [{"t": t + 1, "matrix": self.K[t].tolist()} for t in range(len(self))],
        }


@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self):
        return self.ok


def _psd_violation(a: np.ndarray, strict: bool = False) -> bool:
    if not np.all(np.isfinite(a)):
        return True
    eig = np.linalg.eigvalsh(symmetrize(a))
    return eig.min() <= 0 if strict else eig.min() < -PSD_TOL


def validate_model(model: SystemModel, cost: CostModel | None = None,
                   exp_model: ExperimenterObservationModel | None = None) -> ValidationReport:
    """Check shapes and definiteness; failures are collected, never raised."""
    errs = []
    m, p, k, T = model.m, model.p, model.k, model.T
    expected = {
        "A": (T, m, m), "B": (T, m, p), "H": (T, k, m),
        "V": (m, m), "W": (k, k), "E": (m, m),
        "x1_mean": (m,), "x1_cov": (m, m), "xhat1_mean": (m,), "xhat1_cov": (m, m),
    }
    for name, shape in expected.items():
        got = getattr(model, name).shape
        if got != shape:
            errs.append(f"{name}: shape mismatch, expected {shape}, got {got}")
    if model.C.shape[1:] != (m, p):
        errs.append(f"C: shape mismatch, expected (c, {m}, {p}), got {model.C.shape}")
    if model.D.shape[1:] != (k, m):
        errs.append(f"D: shape mismatch, expected (d, {k}, {m}), got {model.D.shape}")
    for name in expected:
        if not np.all(np.isfinite(getattr(model, name))):
            errs.append(f"{name}: non-finite entries")
    for name in ("x1_cov", "xhat1_cov"):
        a = getattr(model, name)
        if a.shape == (m, m) and _psd_violation(a):
            errs.append(f"{name}: not positive semidefinite")

    if cost is not None:
        if cost.T != T:
            errs.append(f"cost horizon {cost.T} does not match model horizon {T}")
        if cost.Q.shape[1:] != (m, m):
            errs.append(f"Q: shape mismatch, expected (T, {m}, {m}), got {cost.Q.shape}")
        elif any(_psd_violation(q) for q in cost.Q):
            errs.append("Q not positive semidefinite")
        if cost.R.shape[1:] != (p, p):
            errs.append(f"R: shape mismatch, expected (T, {p}, {p}), got {cost.R.shape}")
        elif any(_psd_violation(r, strict=True) for r in cost.R):
            errs.append("R not positive definite")

    if exp_model is not None:
        s = exp_model.s
        if exp_model.M.shape != (s, m):
            errs.append(f"M: shape mismatch, expected ({s}, {m}), got {exp_model.M.shape}")
        if exp_model.N.shape != (s, s):
            errs.append(f"N: shape mismatch, expected ({s}, {s}), got {exp_model.N.shape}")
    return ValidationReport(errs)


# -- config files -------------------------------------------------------------

class ConfigError(ValueError):
    """Raised for malformed or schema-violating model configs."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


_REQUIRED = ("m", "p", "k", "T", "A", "B", "H", "V", "W", "E",
             "x1_mean", "x1_cov", "xhat1_mean", "xhat1_cov", "Q", "R")


def _compact(a: np.ndarray):
    """Collapse a time stack to a single matrix when constant over time."""
    if a.ndim == 3 and len(a) > 0 and np.all(a == a[0]):
        return a[0].tolist()
    return a.tolist()


def model_to_dict(model: SystemModel, cost: CostModel,
                  exp_model: ExperimenterObservationModel | None = None) -> dict:
    d = {
        "m": model.m, "p": model.p, "k": model.k, "T": model.T,
        "A": _compact(model.A), "B": _compact(model.B), "H": _compact(model.H),
        "V": model.V.tolist(), "C": model.C.tolist(),
        "W": model.W.tolist(), "D": model.D.tolist(), "E": model.E.tolist(),
        "x1_mean": model.x1_mean.tolist(), "x1_cov": model.x1_cov.tolist(),
        "xhat1_mean": model.xhat1_mean.tolist(), "xhat1_cov": model.xhat1_cov.tolist(),
        "Q": _compact(cost.Q), "R": _compact(cost.R),
    }
    if exp_model is not None:
        d["M"] = exp_model.M.tolist()
        d["N"] = exp_model.N.tolist()
    return d


def _shaped(d: dict, name: str, shapes: list[tuple]) -> np.ndarray:
    try:
        a = np.asarray(d[name], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field {name!r}: not a numeric array ({exc})", name) from None
    if a.ndim == 0 and any(len(s) == 2 and s == (1, 1) for s in shapes):
        a = a.reshape(1, 1)
    if a.ndim == 0 and (1,) in shapes:
        a = a.reshape(1)
    if a.size == 0 and any(s[0] == 0 for s in shapes if s):
        return a
    for s in shapes:
        if len(s) == a.ndim and all(e is None or e == g for e, g in zip(s, a.shape)):
            return a
    raise ConfigError(f"field {name!r}: shape {a.shape} does not match any of {shapes}", name)


def model_from_dict(d: dict):
    missing = [name for name in _REQUIRED if name not in d]
    if missing:
        raise ConfigError(f"missing required field {missing[0]!r}", missing[0])
    try:
        m, p, k, T = (int(d[n]) for n in ("m", "p", "k", "T"))
    except (TypeError, ValueError):
        raise ConfigError("fields 'm', 'p', 'k', 'T' must be integers") from None
    for n, v in zip("mpkT", (m, p, k, T)):
        if v < 1:
            raise ConfigError(f"field {n!r} must be positive", n)

    model = SystemModel(
        A=_shaped(d, "A", [(m, m), (T, m, m)]),
        B=_shaped(d, "B", [(m, p), (T, m, p)]),
        H=_shaped(d, "H", [(k, m), (T, k, m)]),
        V=_shaped(d, "V", [(m, m)]),
        W=_shaped(d, "W", [(k, k)]),
        E=_shaped(d, "E", [(m, m)]),
        C=_shaped(d, "C", [(0,), (None, m, p)]) if "C" in d else None,
        D=_shaped(d, "D", [(0,), (None, k, m)]) if "D" in d else None,
        x1_mean=_shaped(d, "x1_mean", [(m,)]),
        x1_cov=_shaped(d, "x1_cov", [(m, m)]),
        xhat1_mean=_shaped(d, "xhat1_mean", [(m,)]),
        xhat1_cov=_shaped(d, "xhat1_cov", [(m, m)]),
        T=T,
    )
    cost = CostModel(_shaped(d, "Q", [(m, m), (T, m, m)]),
                     _shaped(d, "R", [(p, p), (T, p, p)]), T=T)
    exp_model = None
    if "M" in d:
        if "N" not in d:
            raise ConfigError("field 'M' given without 'N'", "N")
        M = _shaped(d, "M", [(None, m)])
        exp_model = ExperimenterObservationModel(M, _shaped(d, "N", [(M.shape[0], M.shape[0])]))
    return model, cost, exp_model


def save_model(path, model: SystemModel, cost: CostModel,
               exp_model: ExperimenterObservationModel | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model, cost, exp_model), indent=1))


def load_model(path):
    """Read ``(SystemModel, CostModel, ExperimenterObservationModel | None)``."""
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return model_from_dict(d)


def fingerprint(model: SystemModel, cost: CostModel | None = None,
                exp_model: ExperimenterObservationModel | None = None) -> str:
    import hashlib

    cost = cost if cost is not None else CostModel(np.zeros((model.m, model.m)),
                                                    np.eye(model.p), T=model.T)
    blob = json.dumps(model_to_dict(model, cost, exp_model), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]

"""Small dense linear-algebra helpers shared by the solver and the likelihood."""
import numpy as np
from scipy import linalg


class NumericalError(RuntimeError):
    """A factorization failed even after the jitter retry."""

    def __init__(self, message, t=None):
        super().__init__(message if t is None else f"{message} (step {t})")
        self.t = t


def spd_solve(S, b, jitter=1e-12, t=None):
    """Solve ``S x = b`` for symmetric positive definite ``S``.

    One retry with ``jitter * I`` added when the Cholesky factorization fails.
    """
    S = 0.5 * (S + S.T)
    for ridge in (0.0, jitter):
        try:
            Lc = np.linalg.cholesky(S + ridge * np.eye(len(S)) if ridge else S)
        except np.linalg.LinAlgError:
            continue
        return linalg.cho_solve((Lc, True), b, check_finite=False)
    raise NumericalError("matrix is not positive definite", t)


def psd_sqrt(S):
    """Symmetric square root of a PSD matrix (negative eigenvalues clipped)."""
    w, U = np.linalg.eigh(0.5 * (S + S.T))
    return (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T


def batched_cholesky(S, jitter_scale=1e-9, t=None):
    """Cholesky factors of a stack ``(..., n, n)``; failing slices get one
    trace-scaled jitter retry."""
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        pass
    flat = S.reshape((-1,) + S.shape[-2:])
    out = np.empty_like(flat)
    n = S.shape[-1]
    for i, s in enumerate(flat):
        try:
            out[i] = np.linalg.cholesky(s)
            continue
        except np.linalg.LinAlgError:
            pass
        eps = jitter_scale * max(np.trace(s) / n, np.finfo(float).tiny)
        try:
            out[i] = np.linalg.cholesky(s + eps * np.eye(n))
        except np.linalg.LinAlgError:
            raise NumericalError("observed-block covariance is singular", t) from None
    return out.reshape(S.shape)

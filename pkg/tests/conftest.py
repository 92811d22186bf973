import numpy as np
import pytest

from sdnioc import CostModel, SystemModel


def random_lqg(rng, m=None, p=None, k=None, T=None, signal=False, x1_cov=True, E=True):
    """Small random model; ``signal=True`` adds one C and one D matrix."""
    m = m or int(rng.integers(1, 6))
    p = p or int(rng.integers(1, m + 1))
    k = k or int(rng.integers(1, m + 1))
    T = T or int(rng.integers(2, 31))
    A = rng.standard_normal((m, m))
    A *= 0.95 / max(1.0, np.abs(np.linalg.eigvals(A)).max())
    B = rng.standard_normal((m, p))
    H = rng.standard_normal((k, m))
    V = 0.3 * rng.standard_normal((m, m))
    W = 0.3 * rng.standard_normal((k, k)) + 0.3 * np.eye(k)
    Emat = 0.1 * rng.standard_normal((m, m)) if E else np.zeros((m, m))
    S1 = 0.2 * rng.standard_normal((m, m)) if x1_cov else np.zeros((m, m))
    x1 = rng.standard_normal(m)
    C = 0.3 * rng.random((1, m, p)) if signal else None
    D = 0.2 * rng.random((1, k, m)) if signal else None
    model = SystemModel(A=A, B=B, H=H, V=V, W=W, E=Emat, x1_mean=x1, x1_cov=S1 @ S1.T,
                        xhat1_mean=x1, xhat1_cov=np.zeros((m, m)), C=C, D=D, T=T)
    Q = np.zeros((T, m, m))
    for t in range(T):
        G = rng.standard_normal((m, m))
        Q[t] = 0.1 * G @ G.T
    R = np.zeros((T, p, p))
    for t in range(T):
        G = rng.standard_normal((p, p))
        R[t] = G @ G.T + 0.5 * np.eye(p)
    return model, CostModel(Q, R, T=T)


def riccati_oracle(model, cost):
    """Textbook finite-horizon LQR gains."""
    P = cost.Q[-1]
    gains = []
    for t in range(model.T - 2, -1, -1):
        A, B = model.A[t], model.B[t]
        L = np.linalg.inv(cost.R[t] + B.T @ P @ B) @ B.T @ P @ A
        P = cost.Q[t] + A.T @ P @ A - A.T @ P @ B @ L
        gains.append(L)
    return np.array(gains[::-1])


def kalman_oracle(model):
    """Textbook one-step predictor gains."""
    P = model.x1_cov + model.xhat1_cov
    Qn = model.V @ model.V.T + model.E @ model.E.T
    Rn = model.W @ model.W.T
    gains = []
    for t in range(model.T - 1):
        A, H = model.A[t], model.H[t]
        K = A @ P @ H.T @ np.linalg.inv(H @ P @ H.T + Rn)
        P = A @ P @ A.T + Qn - K @ H @ P @ A.T
        gains.append(K)
    return np.array(gains)


def scalar_model(T=2, C=None, D=None, **kw):
    args = dict(A=1.0, B=1.0, H=1.0, V=0.0, W=0.0, E=0.0, x1_mean=[1.0], x1_cov=0.0,
                xhat1_mean=[1.0], xhat1_cov=0.0, C=C, D=D, T=T)
    args.update(kw)
    return SystemModel(**args)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Record one PASS/FAIL line per acceptance criterion for the run summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)

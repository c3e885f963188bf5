"""Random matrix ensembles and spectral helpers.

GOE(n) is ``G + G.T`` with ``G_ij ~ N(0, 1/(2n))``; the i.i.d. sensing
ensemble has entries ``N(0, 1/m)``.  Storage is always dense float64.
"""

from __future__ import annotations

import numpy as np

from nsamp.rng import stream


class ConvergenceError(RuntimeError):
    """An iterative numerical routine hit its iteration cap."""


def _check_dim(name: str, value: int) -> int:
    value = int(value)
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return value


def sample_goe(n: int, seed: int) -> np.ndarray:
    """Sample an ``n x n`` matrix from the Gaussian orthogonal ensemble.

    Off-diagonal entries have variance ``1/n`` and diagonal entries ``2/n``.
    The result is exactly symmetric.
    """
    n = _check_dim("n", n)
    g = stream(seed, "goe", n).standard_normal((n, n))
    g *= np.sqrt(1.0 / (2 * n))
    a = g + g.T
    a.flags.writeable = False
    return a


def sample_gaussian_iid(m: int, n: int, seed: int) -> np.ndarray:
    """``m x n`` matrix with i.i.d. ``N(0, 1/m)`` entries."""
    m = _check_dim("m", m)
    n = _check_dim("n", n)
    a = stream(seed, "iid", m, n).standard_normal((m, n))
    a *= 1.0 / np.sqrt(m)
    a.flags.writeable = False
    return a


def _power(M: np.ndarray, x: np.ndarray, tol: float, max_iter: int):
    x = x / np.linalg.norm(x)
    sigma = 0.0
    for _ in range(max_iter):
        y = M.T @ (M @ x)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0, True
        new = np.sqrt(ny)
        x = y / ny
        if abs(new - sigma) <= tol * new:
            return new, True
        sigma = new
    return sigma, False


def operator_norm(M, tol: float = 1e-6, max_iter: int = 20000, seed: int = 0) -> float:
    """Largest singular value of ``M`` by power iteration on ``M.T @ M``.

    Two runs are made: one from the constant start vector and one from a
    seeded Gaussian restart.  The larger converged estimate is returned.
    Raises ConvergenceError if neither run meets ``tol`` within
    ``max_iter`` iterations.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        raise ValueError("operator_norm of an empty matrix")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = M.shape[1]
    starts = [np.ones(n), stream(seed, "power-restart", n).standard_normal(n)]
    estimates = []
    for x0 in starts:
        s, ok = _power(M, x0, tol, max_iter)
        if ok:
            estimates.append(s)
    if not estimates:
        raise ConvergenceError(f"power iteration did not reach tol={tol} in {max_iter} iterations")
    return float(max(estimates))


def goe_geometry_probe(A, u, v) -> tuple[float, float]:
    """Return ``(<v, A u>/n, ||A u||^2/n)``.

    Callers normalise ``u`` and ``v`` to norm ``sqrt(n)``.
    """
    A = np.asarray(A)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n) or u.shape != (n,) or v.shape != (n,):
        raise ValueError(f"shape mismatch: A{A.shape}, u{u.shape}, v{v.shape}")
    au = A @ u
    return float(v @ au) / n, float(au @ au) / n

"""Monte-Carlo state evolution.

All expectations over Gaussian vectors are replaced by seeded sample means
at a finite working dimension ``n``.  Outputs carry standard errors so the
finite-``n`` noise is visible downstream.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from nsamp.denoisers import Denoiser
from nsamp.rng import stream


class StateEvolutionError(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"state evolution step {iteration}: {message}")
        self.iteration = iteration


class PsdFloorWarning(UserWarning):
    """A Monte-Carlo covariance array needed eigenvalue flooring or diagonal clamping."""


# -- scalar recursion for compressed sensing ---------------------------------------


@dataclass
class ScalarSeSequence:
    sigma_w: float
    delta: float
    tau_sq: np.ndarray
    stderr: np.ndarray
    mc_samples: int
    n: int
    signal_power: float  # ||theta0||^2 / n

    @property
    def horizon(self) -> int:
        return len(self.tau_sq) - 1


def scalar_se(theta0, eta_for: Callable[[int, float], Denoiser], sigma_w: float, delta: float,
              T: int, mc_samples: int = 10, seed: int = 0) -> ScalarSeSequence:
    """Run ``tau_{t+1}^2 = sigma_w^2 + E||eta_t(theta0 + tau_t Z) - theta0||^2 / (delta n)``.

    ``eta_for(t, tau_t)`` builds the denoiser of step ``t``; thresholds that
    track the residual in AMP track ``tau_t`` here.  Returns ``tau_0^2 ..
    tau_T^2``.
    """
    if not delta > 0:
        raise ValueError("delta must be > 0")
    if mc_samples < 1:
        raise ValueError("mc_samples must be >= 1")
    if T < 0:
        raise ValueError("horizon must be >= 0")
    theta0 = np.asarray(theta0, dtype=float)
    n = theta0.size
    power = float(theta0 @ theta0) / n
    tau_sq = [sigma_w**2 + power / delta]
    err = [0.0]
    for t in range(T):
        tau = np.sqrt(tau_sq[-1])
        eta = eta_for(t, tau)
        rng = stream(seed, "scalar-se", t)
        losses = np.empty(mc_samples)
        for k in range(mc_samples):
            z = rng.standard_normal(n)
            d = eta(theta0 + tau * z) - theta0
            losses[k] = float(d @ d) / (delta * n)
        if not np.all(np.isfinite(losses)):
            raise StateEvolutionError(t, "denoiser produced non-finite values")
        tau_sq.append(sigma_w**2 + losses.mean())
        err.append(losses.std(ddof=1) / np.sqrt(mc_samples) if mc_samples > 1 else 0.0)
    return ScalarSeSequence(sigma_w, delta, np.array(tau_sq), np.array(err), mc_samples, n, power)


def predicted_nmse(se: ScalarSeSequence, t: int, theta0_norm_sq_over_n: Optional[float] = None) -> float:
    """Normalised MSE of ``theta^{t+1}`` predicted by ``delta (tau_{t+1}^2 - sigma_w^2)``."""
    if not 0 <= t + 1 <= se.horizon:
        raise IndexError(f"t+1={t + 1} outside SE horizon {se.horizon}")
    power = se.signal_power if theta0_norm_sq_over_n is None else theta0_norm_sq_over_n
    if power <= 0:
        raise ZeroDivisionError("signal has zero norm")
    return se.delta * (se.tau_sq[t + 1] - se.sigma_w**2) / power


def nmse_curve(se: ScalarSeSequence) -> np.ndarray:
    """Predicted NMSE of ``theta^t`` for ``t = 0..horizon`` (1 at ``t = 0``)."""
    if se.signal_power <= 0:
        raise ZeroDivisionError("signal has zero norm")
    return se.delta * (se.tau_sq - se.sigma_w**2) / se.signal_power


# -- covariance arrays ------------------------------------------------------------


@dataclass
class CovarianceArray:
    entries: np.ndarray
    dim: int
    stderr: np.ndarray
    floored: int = 0
    warnings: list = field(default_factory=list)


def _factor(K: np.ndarray, label: str, notes: list, floor_warn_fraction: float):
    K = 0.5 * (K + K.T)
    w, V = np.linalg.eigh(K)
    scale = max(float(np.abs(w).max()), 1e-300) if w.size else 1.0
    neg = w < -1e-10 * scale
    n_floor = int(np.count_nonzero(neg))
    if n_floor and n_floor > floor_warn_fraction * w.size:
        msg = f"{label}: floored {n_floor} negative eigenvalue(s), min {w.min():.3e}"
        notes.append(msg)
        warnings.warn(msg, PsdFloorWarning, stacklevel=3)
    return V * np.sqrt(np.maximum(w, 0.0)), n_floor


def _coupled(L: np.ndarray, dim: int, rng) -> np.ndarray:
    """Rows are jointly Gaussian vectors with covariance ``L L^T`` (times I_dim)."""
    return L @ rng.standard_normal((L.shape[1], dim))


def _clamp_diag(K, label, notes):
    d = np.diag(K).copy()
    if np.any(d < 0):
        msg = f"{label}: clamped negative diagonal entries to 0"
        notes.append(msg)
        warnings.warn(msg, PsdFloorWarning, stacklevel=3)
        np.fill_diagonal(K, np.maximum(d, 0.0))
    return K


def covariance_se(f_by_t: Callable[[int], Denoiser], x0, T: int, mc_samples: int = 50,
                  seed: int = 0, floor_warn_fraction: float = 0.0) -> CovarianceArray:
    """State evolution array ``K_{s,r}``, ``1 <= s, r <= T``, for symmetric AMP.

    ``K[0, 0] = ||f_0(x0)||^2 / n``; row ``t+1`` comes from
    ``E<f_s(Z^s), f_t(Z^t)>/n`` with ``Z^0 = x0`` and ``(Z^1..Z^t)`` drawn
    from the current array.  Entry ``[i, j]`` holds ``K_{i+1, j+1}``.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    K = np.zeros((T, T))
    err = np.zeros((T, T))
    notes: list = []
    floored = 0
    if T == 0:
        return CovarianceArray(K, n, err)
    f0x = f_by_t(0)(x0)
    K[0, 0] = float(f0x @ f0x) / n
    for t in range(1, T):
        L, nf = _factor(K[:t, :t], f"K step {t}", notes, floor_warn_fraction)
        floored += nf
        rng = stream(seed, "cov-se", t)
        acc = np.zeros((mc_samples, t + 1))
        ft = f_by_t(t)
        fs = [f_by_t(s) for s in range(1, t)]
        for k in range(mc_samples):
            Z = _coupled(L, n, rng)  # Z[s-1] is Z^s
            top = ft(Z[t - 1])
            acc[k, 0] = float(f0x @ top) / n
            for s in range(1, t):
                acc[k, s] = float(fs[s - 1](Z[s - 1]) @ top) / n
            acc[k, t] = float(top @ top) / n
        if not np.all(np.isfinite(acc)):
            raise StateEvolutionError(t, "denoiser produced non-finite values")
        row = acc.mean(axis=0)
        se = acc.std(axis=0, ddof=1) / np.sqrt(mc_samples) if mc_samples > 1 else np.zeros(t + 1)
        K[t, : t + 1] = row
        K[: t + 1, t] = row
        err[t, : t + 1] = se
        err[: t + 1, t] = se
        K = _clamp_diag(K, f"K step {t}", notes)
    return CovarianceArray(K, n, err, floored, notes)


def asymmetric_covariance_se(e_by_t: Callable[[int], Denoiser], g_by_t: Callable[[int], Denoiser], u0,
                             m: int, T: int, mc_samples: int = 50, seed: int = 0,
                             floor_warn_fraction: float = 0.0):
    """Arrays ``(Sigma, T)`` for asymmetric AMP up to ``Sigma_{T-1}`` and ``T_{T}``.

    ``Sigma[i, j] = Sigma_{i,j}`` (``0 <= i, j < T``, vectors in R^m) and
    ``Tau[i, j] = T_{i+1, j+1}`` (vectors in R^n), alternating as in the
    recursion with ``Z_tau^0 = u0`` held fixed.
    """
    u0 = np.asarray(u0, dtype=float)
    n = u0.size
    Sig, Tau = np.zeros((T, T)), np.zeros((T, T))
    Sig_err, Tau_err = np.zeros((T, T)), np.zeros((T, T))
    notes: list = []
    floored = 0
    e0u = e_by_t(0)(u0)
    for t in range(T):
        # Sigma row t: needs Z_tau^1..Z_tau^t from Tau[:t, :t]
        if t == 0:
            Sig[0, 0] = float(e0u @ e0u) / m
        else:
            L, nf = _factor(Tau[:t, :t], f"T step {t}", notes, floor_warn_fraction)
            floored += nf
            rng = stream(seed, "asym-sigma", t)
            acc = np.zeros((mc_samples, t + 1))
            es = [e_by_t(s) for s in range(t + 1)]
            for k in range(mc_samples):
                Z = _coupled(L, n, rng)
                top = es[t](Z[t - 1])
                acc[k, 0] = float(e0u @ top) / m
                for s in range(1, t):
                    acc[k, s] = float(es[s](Z[s - 1]) @ top) / m
                acc[k, t] = float(top @ top) / m
            if not np.all(np.isfinite(acc)):
                raise StateEvolutionError(t, "e_t produced non-finite values")
            Sig[t, : t + 1] = Sig[: t + 1, t] = acc.mean(0)
            Sig_err[t, : t + 1] = Sig_err[: t + 1, t] = acc.std(0, ddof=1) / np.sqrt(mc_samples) if mc_samples > 1 else 0
            Sig = _clamp_diag(Sig, f"Sigma step {t}", notes)
        # Tau row t+1: Z_sigma^0..Z_sigma^t from Sig[:t+1, :t+1]
        L, nf = _factor(Sig[: t + 1, : t + 1], f"Sigma step {t}", notes, floor_warn_fraction)
        floored += nf
        rng = stream(seed, "asym-tau", t)
        acc = np.zeros((mc_samples, t + 1))
        gs = [g_by_t(s) for s in range(t + 1)]
        for k in range(mc_samples):
            Z = _coupled(L, m, rng)
            top = gs[t](Z[t])
            for s in range(t):
                acc[k, s] = float(gs[s](Z[s]) @ top) / m
            acc[k, t] = float(top @ top) / m
        if not np.all(np.isfinite(acc)):
            raise StateEvolutionError(t, "g_t produced non-finite values")
        Tau[t, : t + 1] = Tau[: t + 1, t] = acc.mean(0)
        Tau_err[t, : t + 1] = Tau_err[: t + 1, t] = acc.std(0, ddof=1) / np.sqrt(mc_samples) if mc_samples > 1 else 0
        Tau = _clamp_diag(Tau, f"T step {t}", notes)
    return (CovarianceArray(Sig, m, Sig_err, floored, notes),
            CovarianceArray(Tau, n, Tau_err, floored, notes))


def expectation_onsager(f: Denoiser, variance: float, n: int, mc_samples: int = 10, seed: int = 0) -> float:
    """``(1/n) E div f(Z)`` with ``Z ~ N(0, variance I_n)``."""
    if variance < 0:
        raise ValueError("variance must be >= 0")
    rng = stream(seed, "exp-onsager", n)
    sd = np.sqrt(variance)
    vals = [f.div(sd * rng.standard_normal(n)) / n for _ in range(mc_samples)]
    return float(np.mean(vals))


def stein_check(phi: Denoiser, K, n: int, mc_samples: int = 200, seed: int = 0) -> tuple[float, float]:
    """Both sides of ``E<Z1, phi(Z2)> = K12 E div phi(Z2)`` by Monte Carlo.

    ``(Z1, Z2) ~ N(0, K (x) I_n)``.  Returns per-coordinate averages
    ``(lhs / n, rhs / n)``.
    """
    K = np.asarray(K, dtype=float)
    if K.shape != (2, 2):
        raise ValueError("K must be 2x2")
    L, _ = _factor(K, "stein", [], 1.0)
    rng = stream(seed, "stein", n)
    lhs = np.empty(mc_samples)
    div = np.empty(mc_samples)
    for k in range(mc_samples):
        z1, z2 = _coupled(L, n, rng)
        lhs[k] = float(z1 @ phi(z2)) / n
        div[k] = phi.div(z2) / n
    return float(lhs.mean()), float(K[0, 1] * div.mean())


# -- cones and the convex-projection rate ------------------------------------------


@dataclass(frozen=True)
class ConeDescriptor:
    """A polyhedral cone that is a product of coordinate cones.

    ``signs[i]`` is 0 for a free coordinate, +1 for ``v_i >= 0`` and -1 for
    ``v_i <= 0``.  ``kind`` records how the cone was built.
    """

    kind: str
    signs: np.ndarray

    @property
    def n(self) -> int:
        return int(self.signs.size)

    @classmethod
    def full(cls, n: int) -> "ConeDescriptor":
        return cls("full", np.zeros(n, dtype=int))

    @classmethod
    def subspace(cls, n: int, d: int) -> "ConeDescriptor":
        if not 0 <= d <= n:
            raise ValueError("subspace dimension must lie in [0, n]")
        signs = np.full(n, 2, dtype=int)  # 2 marks a coordinate forced to zero
        signs[:d] = 0
        return cls("subspace", signs)

    @classmethod
    def orthant(cls, free_mask) -> "ConeDescriptor":
        free = np.asarray(free_mask, dtype=bool)
        return cls("orthant", np.where(free, 0, 1))

    @classmethod
    def box_tangent(cls, theta0, lo, hi, atol: float = 0.0) -> "ConeDescriptor":
        theta0 = np.asarray(theta0, dtype=float)
        lo = np.broadcast_to(np.asarray(lo, dtype=float), theta0.shape)
        hi = np.broadcast_to(np.asarray(hi, dtype=float), theta0.shape)
        if np.any(theta0 < lo - atol) or np.any(theta0 > hi + atol):
            raise ValueError("theta0 lies outside the box")
        at_lo = np.abs(theta0 - lo) <= atol
        at_hi = np.abs(theta0 - hi) <= atol
        signs = np.zeros(theta0.size, dtype=int)
        signs[at_lo] = 1
        signs[at_hi & ~at_lo] = -1
        signs[at_lo & at_hi] = 2  # degenerate interval
        return cls("box_tangent", signs)

    def project(self, z):
        z = np.asarray(z, dtype=float)
        out = z.copy()
        out[self.signs == 1] = np.maximum(z[self.signs == 1], 0.0)
        out[self.signs == -1] = np.minimum(z[self.signs == -1], 0.0)
        out[self.signs == 2] = 0.0
        return out

    def exact_dimension(self) -> float:
        return float(np.count_nonzero(self.signs == 0)) + 0.5 * np.count_nonzero(np.abs(self.signs) == 1)


def statistical_dimension(cone: ConeDescriptor, mc_samples: int = 0, seed: int = 0) -> float:
    """``E ||P_C(Z)||^2``; closed form when ``mc_samples == 0``, else Monte Carlo."""
    if mc_samples == 0:
        return cone.exact_dimension()
    rng = stream(seed, "stat-dim", cone.n)
    vals = [float(np.sum(cone.project(rng.standard_normal(cone.n)) ** 2)) for _ in range(mc_samples)]
    return float(np.mean(vals))


def convex_rate_bound(R0: float, sigma_w: float, delta: float, rho: float, t: int) -> float:
    """``delta R0^2 rho^{t+1} + delta sigma_w^2 (rho - rho^{t+1}) / (1 - rho)``."""
    if not 0 <= rho < 1:
        raise ValueError(f"rate rho must lie in [0, 1), got {rho}")
    if t < 0:
        raise ValueError("t must be >= 0")
    return delta * R0**2 * rho ** (t + 1) + delta * sigma_w**2 * (rho - rho ** (t + 1)) / (1 - rho)

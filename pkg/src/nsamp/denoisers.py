"""Denoisers consumed by the AMP engines.

A :class:`Denoiser` bundles a map ``R^n -> R^n`` with its divergence
(exact when a closed form exists, Monte-Carlo otherwise).  Iteration
dependent parameters such as thresholds are baked in by the factory
functions at each step; the objects themselves hold no mutable state.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from nsamp.ensembles import ConvergenceError
from nsamp.rng import check_seed, stream


class DivergenceFallbackWarning(UserWarning):
    """Closed-form divergence was unusable; the Monte-Carlo estimate was used."""


@dataclass(frozen=True)
class MatrixShape:
    n1: int
    n2: int

    def __post_init__(self):
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError(f"matrix shape must be positive, got {self.n1}x{self.n2}")

    @property
    def size(self) -> int:
        return self.n1 * self.n2

    def as_matrix(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.size != self.size:
            raise ValueError(f"vector of length {y.size} does not match shape {self.n1}x{self.n2}")
        return y.reshape(self.n1, self.n2)


@dataclass(frozen=True)
class DivergenceEstimatorConfig:
    """Monte-Carlo divergence settings.

    ``epsilon=None`` selects the scale-aware probe ``1e-3 (1 + ||x||/sqrt(n))``.
    ``keys`` names the sub-stream so repeated calls inside an iteration loop
    use fresh probes.
    """

    epsilon: Optional[float] = None
    num_samples: int = 1
    seed: int = 0
    keys: tuple = ()

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        check_seed(self.seed)

    def child(self, *keys) -> "DivergenceEstimatorConfig":
        return replace(self, keys=self.keys + keys)


def mc_divergence(f: Callable, x, cfg: DivergenceEstimatorConfig) -> float:
    """Monte-Carlo estimate of ``div f(x)``.

    Averages ``<Z, f(x + eps Z) - f(x)> / eps`` over ``cfg.num_samples``
    standard Gaussian probes drawn from the configured stream.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    eps = cfg.epsilon
    if eps is None:
        eps = 1e-3 * (1.0 + np.linalg.norm(x) / np.sqrt(n))
    rng = stream(cfg.seed, "mc-div", *cfg.keys)
    fx = np.asarray(f(x), dtype=float)
    total = 0.0
    for _ in range(cfg.num_samples):
        z = rng.standard_normal(n)
        total += float(z @ (np.asarray(f(x + eps * z), dtype=float) - fx)) / eps
    return total / cfg.num_samples


@dataclass(frozen=True)
class Denoiser:
    """A non-linearity with its divergence.

    ``divergence`` is the exact divergence map when known; otherwise
    :meth:`div` falls back to :func:`mc_divergence` with ``mc``.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    divergence: Optional[Callable[[np.ndarray], float]] = None
    lipschitz_bound: Optional[float] = None
    kind: str = "generic"
    mc: DivergenceEstimatorConfig = field(default_factory=DivergenceEstimatorConfig)

    def __call__(self, x) -> np.ndarray:
        return self.apply(np.asarray(x, dtype=float))

    def div(self, x, mc: Optional[DivergenceEstimatorConfig] = None) -> float:
        x = np.asarray(x, dtype=float)
        if self.divergence is not None:
            return float(self.divergence(x))
        return mc_divergence(self.apply, x, mc or self.mc)

    @property
    def has_exact_divergence(self) -> bool:
        return self.divergence is not None


# -- elementary maps ---------------------------------------------------------


def identity() -> Denoiser:
    return Denoiser(lambda x: x.copy(), lambda x: float(x.size), 1.0, "identity")


def zero() -> Denoiser:
    return Denoiser(np.zeros_like, lambda x: 0.0, 0.0, "zero")


def soft_threshold(x, lam: float) -> np.ndarray:
    """Componentwise ``sign(x) * max(|x| - lam, 0)``."""
    if lam < 0:
        raise ValueError(f"threshold must be >= 0, got {lam}")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - lam, 0.0)


def soft_threshold_divergence(x, lam: float) -> float:
    return float(np.count_nonzero(np.abs(np.asarray(x)) > lam))


def soft_threshold_denoiser(lam: float) -> Denoiser:
    if lam < 0:
        raise ValueError(f"threshold must be >= 0, got {lam}")
    return Denoiser(
        lambda x: soft_threshold(x, lam),
        lambda x: soft_threshold_divergence(x, lam),
        1.0,
        "soft_threshold",
    )


# -- singular value thresholding -----------------------------------------------

SVT_TIE_RTOL = 1e-8


def _svd(Y):
    try:
        return np.linalg.svd(Y, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge: {exc}") from exc


def svt(y, shape: MatrixShape, lam: float) -> np.ndarray:
    """Singular value soft thresholding of the vector ``y`` viewed as a matrix."""
    if lam < 0:
        raise ValueError(f"threshold must be >= 0, got {lam}")
    Y = shape.as_matrix(y)
    U, s, Vt = _svd(Y)
    s = np.maximum(s - lam, 0.0)
    return ((U * s) @ Vt).ravel()


def svt_divergence(y, shape: MatrixShape, lam: float, mc: Optional[DivergenceEstimatorConfig] = None) -> float:
    """Closed-form divergence of :func:`svt` at ``y``.

    The pair sum is evaluated over unordered pairs,
    ``2 sum_{i<j} (a_i - a_j) / (s_i^2 - s_j^2)`` with ``a = s (s - lam)_+``,
    which equals the ordered-pair form and is stable when both singular
    values exceed ``lam``.  A near tie that straddles ``lam`` makes the
    formula ill-conditioned; then the Monte-Carlo estimate is returned and a
    DivergenceFallbackWarning is emitted.
    """
    if lam < 0:
        raise ValueError(f"threshold must be >= 0, got {lam}")
    Y = shape.as_matrix(y)
    s = np.linalg.svd(Y, compute_uv=False) if Y.size else np.zeros(0)
    if s.size == 0 or s[0] <= lam:
        return 0.0
    above = s > lam
    gap = np.abs(s[:, None] - s[None, :])
    iu = np.triu_indices(s.size, k=1)
    straddle = above[:, None] != above[None, :]
    if np.any((gap[iu] < SVT_TIE_RTOL * s[0]) & straddle[iu]):
        warnings.warn(
            "near-repeated singular values straddle the threshold; using Monte-Carlo divergence",
            DivergenceFallbackWarning,
            stacklevel=2,
        )
        cfg = mc or DivergenceEstimatorConfig(num_samples=50)
        return mc_divergence(lambda v: svt(v, shape, lam), np.asarray(y, dtype=float), cfg)

    sa = s[above]
    total = np.sum(1.0 + abs(shape.n1 - shape.n2) * (1.0 - lam / sa))

    si, sj = s[iu[0]], s[iu[1]]
    both = above[iu[0]] & above[iu[1]]
    one = above[iu[0]] & ~above[iu[1]]  # s sorted descending, so i < j means s_i >= s_j
    total += 2.0 * np.sum((si[both] + sj[both] - lam) / (si[both] + sj[both]))
    total += 2.0 * np.sum(si[one] * (si[one] - lam) / (si[one] ** 2 - sj[one] ** 2))
    return float(total)


def svt_denoiser(shape: MatrixShape, lam: float, mc: Optional[DivergenceEstimatorConfig] = None) -> Denoiser:
    if lam < 0:
        raise ValueError(f"threshold must be >= 0, got {lam}")
    mc = mc or DivergenceEstimatorConfig(num_samples=50)
    return Denoiser(
        lambda x: svt(x, shape, lam),
        lambda x: svt_divergence(x, shape, lam, mc),
        1.0,
        "svt",
        mc,
    )


# -- non-local means -------------------------------------------------------------


def _box_sum(a: np.ndarray, half: int) -> np.ndarray:
    """Sum of ``a`` over the (2 half + 1)^2 window around each pixel, zero outside."""
    n1, n2 = a.shape
    c = np.zeros((n1 + 1, n2 + 1))
    c[1:, 1:] = a.cumsum(0).cumsum(1)
    r0 = np.clip(np.arange(n1) - half, 0, n1)
    r1 = np.clip(np.arange(n1) + half + 1, 0, n1)
    c0 = np.clip(np.arange(n2) - half, 0, n2)
    c1 = np.clip(np.arange(n2) + half + 1, 0, n2)
    return c[r1][:, c1] - c[r0][:, c1] - c[r1][:, c0] + c[r0][:, c0]


def _shifted(z: np.ndarray, di: int, dj: int):
    """``z[i + di, j + dj]`` on the grid, with a validity mask."""
    n1, n2 = z.shape
    out = np.zeros_like(z)
    mask = np.zeros(z.shape, dtype=bool)
    i0, i1 = max(0, -di), min(n1, n1 - di)
    j0, j1 = max(0, -dj), min(n2, n2 - dj)
    if i0 < i1 and j0 < j1:
        out[i0:i1, j0:j1] = z[i0 + di:i1 + di, j0 + dj:j1 + dj]
        mask[i0:i1, j0:j1] = True
    return out, mask


def nlm(z, shape: MatrixShape, patch: int, search: float, h: float) -> np.ndarray:
    """Non-local means.

    Each pixel becomes a weighted average of the pixels within Chebyshev
    distance ``search``.  The weight of pixel ``q`` for pixel ``p`` is
    ``exp(-d(p, q) / h^2)`` where ``d`` is the mean squared difference of the
    ``patch x patch`` neighbourhoods of ``p`` and ``q``, taken over the
    offsets for which both neighbourhoods stay inside the image.
    """
    if h <= 0:
        raise ValueError(f"NLM precision h must be > 0, got {h}")
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch size must be a positive odd integer, got {patch}")
    if patch > max(shape.n1, shape.n2):
        raise ValueError(f"patch size {patch} exceeds image dimensions {shape.n1}x{shape.n2}")
    if search <= 0:
        raise ValueError(f"search range must be > 0, got {search}")
    Z = shape.as_matrix(z)
    half = patch // 2
    reach = int(np.floor(search))
    num = np.zeros_like(Z)
    den = np.zeros_like(Z)
    inv_h2 = 1.0 / (h * h)
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            zs, valid = _shifted(Z, di, dj)
            if not valid.any():
                continue
            d2 = np.where(valid, (Z - zs) ** 2, 0.0)
            ssd = _box_sum(d2, half)
            cnt = _box_sum(valid.astype(float), half)
            w = np.zeros_like(Z)
            w[valid] = np.exp(-(ssd[valid] / cnt[valid]) * inv_h2)
            num += w * (zs - Z)
            den += w
    # offsets from the centre pixel keep a constant image exactly fixed
    return (Z + num / den).ravel()


def nlm_denoiser(shape: MatrixShape, patch: int, search: float, h: float,
                 mc: Optional[DivergenceEstimatorConfig] = None) -> Denoiser:
    if h <= 0:
        raise ValueError(f"NLM precision h must be > 0, got {h}")
    return Denoiser(lambda x: nlm(x, shape, patch, search, h), None, None, "nlm",
                    mc or DivergenceEstimatorConfig())


# -- projections onto convex sets ------------------------------------------------


@dataclass(frozen=True)
class Orthant:
    """Nonnegative orthant."""

    def project(self, x):
        return np.maximum(x, 0.0)

    def divergence(self, x):
        return float(np.count_nonzero(x > 0))

    def contains(self, x):
        return bool(np.all(x >= 0))


@dataclass(frozen=True)
class Box:
    """Coordinatewise box ``[lo, hi]``; bounds are scalars or arrays."""

    lo: object
    hi: object

    def __post_init__(self):
        if np.any(np.asarray(self.lo, dtype=float) > np.asarray(self.hi, dtype=float)):
            raise ValueError("malformed box: lo > hi for some coordinate")

    def project(self, x):
        return np.clip(x, self.lo, self.hi)

    def divergence(self, x):
        return float(np.count_nonzero((x > self.lo) & (x < self.hi)))

    def contains(self, x):
        return bool(np.all((x >= self.lo) & (x <= self.hi)))


@dataclass(frozen=True)
class Ball:
    """Centred Euclidean ball of the given radius."""

    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("ball radius must be >= 0")

    def project(self, x):
        nrm = np.linalg.norm(x)
        if nrm <= self.radius:
            return x.copy()
        return x * (self.radius / nrm)

    def divergence(self, x):
        nrm = np.linalg.norm(x)
        if nrm <= self.radius:
            return float(x.size)
        return (x.size - 1) * self.radius / nrm

    def contains(self, x):
        return bool(np.linalg.norm(x) <= self.radius)


def convex_project(x, cset) -> np.ndarray:
    """Euclidean projection of ``x`` onto ``cset`` (Orthant, Box or Ball)."""
    return cset.project(np.asarray(x, dtype=float))


def projection_denoiser(cset) -> Denoiser:
    return Denoiser(cset.project, cset.divergence, 1.0, f"project_{type(cset).__name__.lower()}")

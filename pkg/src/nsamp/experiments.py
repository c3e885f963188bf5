"""Desk-scale compressed sensing studies and their comparison metrics.

Each study builds a :class:`SensingProblem` per seed, runs CS AMP with a
noise-adaptive denoiser family, runs the scalar state evolution with the
same family driven by ``tau_t`` instead of ``||r^t||/sqrt(m)``, and
reduces the per-seed results into a comparison table.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from nsamp import amp
from nsamp import denoisers as dn
from nsamp import state_evolution as se_mod
from nsamp.ensembles import sample_gaussian_iid, sample_goe
from nsamp.rng import stream

COMPARISON_HEADER = ("t", "nmse_emp", "nmse_emp_stderr", "nmse_pred", "tau_sq",
                     "resid_over_sqrt_m", "lambda_or_h", "abs_gap")
TRAJECTORY_HEADER = ("t", "nmse_emp", "nmse_emp_stderr", "resid_over_sqrt_m", "lambda_or_h", "onsager")
SE_HEADER = ("t", "tau_sq", "predicted_nmse", "stderr")


# -- problems ---------------------------------------------------------------------


@dataclass
class SensingProblem:
    A: np.ndarray
    theta0: np.ndarray
    w: np.ndarray
    y: np.ndarray
    sigma_w: Optional[float] = None  # nominal noise level; None means use the realised ||w|| / sqrt(m)

    def __post_init__(self):
        m, n = self.A.shape
        if self.theta0.shape != (n,) or self.w.shape != (m,) or self.y.shape != (m,):
            raise ValueError("inconsistent problem dimensions")
        resid = self.y - self.A @ self.theta0 - self.w
        scale = 1.0 + np.abs(self.y).max(initial=0.0)
        if np.abs(resid).max(initial=0.0) > 1e-12 * scale:
            raise ValueError("y != A theta0 + w")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]

    @property
    def delta(self) -> float:
        return self.m / self.n

    @property
    def noise_level(self) -> float:
        if self.sigma_w is not None:
            return float(self.sigma_w)
        return float(np.linalg.norm(self.w)) / np.sqrt(self.m)


def make_problem(A, theta0, w, sigma_w: Optional[float] = None) -> SensingProblem:
    theta0 = np.asarray(theta0, dtype=float)
    w = np.asarray(w, dtype=float)
    return SensingProblem(A, theta0, w, A @ theta0 + w, sigma_w)


def _gaussian_problem(theta0, m: int, sigma_w: float, seed: int) -> SensingProblem:
    A = sample_gaussian_iid(m, theta0.size, seed)
    w = sigma_w * stream(seed, "noise").standard_normal(m)
    return make_problem(A, theta0, w, sigma_w)


@dataclass
class LowRankSignal:
    n1: int
    n2: int
    r: int
    U: np.ndarray
    V: np.ndarray

    @property
    def X0(self) -> np.ndarray:
        return (self.U @ self.V.T).ravel()


def _haar_columns(rng, n: int, r: int) -> np.ndarray:
    if r == 0:
        return np.zeros((n, 0))
    q, R = np.linalg.qr(rng.standard_normal((n, r)))
    return q * np.sign(np.diag(R))


def matrix_study_ratios(n1: int) -> dict:
    """Ratios of the matrix study: square, rank 0.1 n1, m = 0.65 n1 n2."""
    return {"n1": n1, "n2": n1, "r": int(round(0.1 * n1)), "m": int(round(0.65 * n1 * n1))}


def low_rank_signal(n1: int, n2: int, r: int, seed: int) -> LowRankSignal:
    """``U V^T`` with Haar-distributed orthonormal ``U`` (n1 x r) and ``V`` (n2 x r)."""
    if r < 0 or r > min(n1, n2):
        raise ValueError(f"rank {r} must lie in [0, min(n1, n2)]")
    rng = stream(seed, "low-rank")
    return LowRankSignal(n1, n2, r, _haar_columns(rng, n1, r), _haar_columns(rng, n2, r))


def make_low_rank_problem(n1: int, n2: int, r: int, m: int, sigma_w: float, seed: int):
    """Low-rank signal observed through an i.i.d. Gaussian A acting on ``vec(X0)``."""
    sig = low_rank_signal(n1, n2, r, seed)
    return _gaussian_problem(sig.X0, m, sigma_w, seed), sig


def bernoulli_gaussian(n: int, sparsity: float, rng) -> np.ndarray:
    return (rng.random(n) < sparsity) * rng.standard_normal(n)


def sparse_signal(n: int, sparsity: float, seed: int) -> np.ndarray:
    return bernoulli_gaussian(n, sparsity, stream(seed, "sparse"))


def make_sparse_problem(n: int, m: int, sparsity: float, sigma_w: float, seed: int) -> SensingProblem:
    return _gaussian_problem(sparse_signal(n, sparsity, seed), m, sigma_w, seed)


def piecewise_constant_image(n1: int, n2: int, seed: int, pieces: int = 6) -> np.ndarray:
    """Synthetic test image: a background plus overlapping flat rectangles and discs in [0, 1]."""
    rng = stream(seed, "image")
    img = np.full((n1, n2), 0.2)
    ii, jj = np.mgrid[:n1, :n2]
    for k in range(pieces):
        value = rng.choice([0.0, 0.5, 0.8, 1.0])
        ci, cj = rng.integers(0, n1), rng.integers(0, n2)
        size = rng.integers(max(2, n1 // 8), max(3, n1 // 3))
        if k % 2 == 0:
            mask = (np.abs(ii - ci) <= size) & (np.abs(jj - cj) <= size)
        else:
            mask = (ii - ci) ** 2 + (jj - cj) ** 2 <= size**2
        img[mask] = value
    return img


def image_noise_level(image, noise_coef: float) -> float:
    """``noise_coef ||x0|| / sqrt(n1)``."""
    image = np.asarray(image, dtype=float)
    return noise_coef * float(np.linalg.norm(image)) / np.sqrt(image.shape[0])


def make_image_problem(image, m: int, noise_coef: float, seed: int) -> SensingProblem:
    image = np.asarray(image, dtype=float)
    return _gaussian_problem(image.ravel(), m, image_noise_level(image, noise_coef), seed)


# -- parameter rules and metrics ----------------------------------------------------


def matrix_cs_lambda(r, n1: int, m: int, coef: float = 2.0) -> float:
    """SVT threshold ``coef sqrt(n1) ||r|| / sqrt(m)``."""
    if m <= 0:
        raise ValueError("m must be > 0")
    return coef * np.sqrt(n1) * np.linalg.norm(r) / np.sqrt(m)


def nlm_h_rule(r, m: int, coef: float = 0.9) -> float:
    """NLM precision ``coef ||r|| / sqrt(m)``; callers apply a floor."""
    if m <= 0:
        raise ValueError("m must be > 0")
    return coef * np.linalg.norm(r) / np.sqrt(m)


def nmse(estimate, truth) -> float:
    truth = np.asarray(truth, dtype=float)
    den = float(truth @ truth)
    if den == 0.0:
        raise ZeroDivisionError("nmse undefined for a zero ground truth")
    d = np.asarray(estimate, dtype=float) - truth
    return float(d @ d) / den


@dataclass(frozen=True)
class NoiseAdaptiveFamily:
    """Denoisers indexed by an effective noise level.

    ``param(level)`` maps the noise level (``||r^t||/sqrt(m)`` in AMP,
    ``tau_t`` in state evolution) to the denoiser parameter, ``build(p)``
    makes the denoiser.
    """

    kind: str
    param: Callable[[float], float]
    build: Callable[[float], dn.Denoiser]

    def at(self, level: float) -> dn.Denoiser:
        return self.build(self.param(level))


def svt_family(shape: dn.MatrixShape, coef: float = 2.0) -> NoiseAdaptiveFamily:
    return NoiseAdaptiveFamily("svt", lambda lv: coef * np.sqrt(shape.n1) * lv,
                               lambda lam: dn.svt_denoiser(shape, lam))


def soft_threshold_family(coef: float) -> NoiseAdaptiveFamily:
    return NoiseAdaptiveFamily("soft_threshold", lambda lv: coef * lv, dn.soft_threshold_denoiser)


def nlm_family(shape: dn.MatrixShape, patch: int, search: float, coef: float = 0.9,
               h_floor: float = 1e-6, mc: Optional[dn.DivergenceEstimatorConfig] = None) -> NoiseAdaptiveFamily:
    return NoiseAdaptiveFamily("nlm", lambda lv: max(coef * lv, h_floor),
                               lambda h: dn.nlm_denoiser(shape, patch, search, h, mc))


def projection_family(cset) -> NoiseAdaptiveFamily:
    return NoiseAdaptiveFamily("projection", lambda lv: float("nan"), lambda _: dn.projection_denoiser(cset))


# -- single runs and comparison --------------------------------------------------------


@dataclass
class CsRun:
    seed: int
    problem: SensingProblem
    trajectory: amp.AmpTrajectory
    se: Optional[se_mod.ScalarSeSequence]
    params: np.ndarray  # lambda_t or h_t per record

    @property
    def nmse(self) -> np.ndarray:
        return self.trajectory.column("nmse")

    @property
    def resid_over_sqrt_m(self) -> np.ndarray:
        return self.trajectory.column("residual_norm") / np.sqrt(self.problem.m)


def run_cs(problem: SensingProblem, family: NoiseAdaptiveFamily, max_iters: int, seed: int,
           onsager: Optional[amp.OnsagerEstimator] = None, se_samples: int = 10,
           with_se: bool = True, plateau_tol: Optional[float] = None, se_theta0=None) -> CsRun:
    """CS AMP on ``problem`` plus its scalar SE, both driven by ``family``.

    The SE runs on ``problem.theta0`` unless ``se_theta0`` (for instance a
    larger draw from the same prior) is given.
    """
    m = problem.m
    onsager = onsager or amp.OnsagerEstimator(mc=dn.DivergenceEstimatorConfig(num_samples=1, seed=seed))
    power = float(problem.theta0 @ problem.theta0)
    hooks = [amp.MetricHook("nmse", (lambda th: nmse(th, problem.theta0)) if power > 0 else (lambda th: float("nan")))]

    def schedule(t, state):
        return family.at(np.linalg.norm(state.r) / np.sqrt(m))

    traj = amp.run("cs", problem.A, problem.y, schedule, onsager, max_iters, plateau_tol, hooks,
                   theta0=problem.theta0 if onsager.kind == amp.INNER_PRODUCT else None)
    params = np.array([family.param(rec.residual_norm / np.sqrt(m)) for rec in traj.records])
    se = None
    if with_se:
        se_signal = problem.theta0 if se_theta0 is None else se_theta0
        se = scalar_se_for(se_signal, family, problem.noise_level, problem.delta, len(traj) - 1, se_samples, seed)
    return CsRun(seed, problem, traj, se, params)


def scalar_se_for(theta0, family: NoiseAdaptiveFamily, sigma_w: float, delta: float, T: int,
                  mc_samples: int, seed: int) -> se_mod.ScalarSeSequence:
    """Scalar SE with the denoiser family driven by ``tau_t``."""
    return se_mod.scalar_se(np.asarray(theta0, dtype=float), lambda t, tau: family.at(tau), sigma_w, delta, T,
                            mc_samples, seed)


def compare_to_se(traj: amp.AmpTrajectory, se: se_mod.ScalarSeSequence, theta0, m: Optional[int] = None,
                  params=None) -> list:
    """Per-iteration rows of empirical vs predicted NMSE for one run."""
    if len(traj) - 1 != se.horizon:
        raise ValueError(f"horizon mismatch: trajectory {len(traj) - 1}, SE {se.horizon}")
    theta0 = np.asarray(theta0, dtype=float)
    m = m if m is not None else int(round(se.delta * theta0.size))
    emp = traj.column("nmse") if "nmse" in traj.records[0].metrics else np.array(
        [nmse(th, theta0) for th in traj.iterates])
    resid = traj.column("residual_norm") / np.sqrt(m)
    lam = np.full(len(traj), np.nan) if params is None else np.asarray(params, dtype=float)
    return comparison_rows(emp, np.zeros_like(emp), se_mod.nmse_curve(se), se.tau_sq, resid, lam)


def comparison_rows(nmse_emp, nmse_stderr, nmse_pred, tau_sq, resid, lam) -> list:
    rows = []
    for t in range(len(nmse_emp)):
        rows.append({
            "t": t,
            "nmse_emp": float(nmse_emp[t]),
            "nmse_emp_stderr": float(nmse_stderr[t]),
            "nmse_pred": float(nmse_pred[t]),
            "tau_sq": float(tau_sq[t]),
            "resid_over_sqrt_m": float(resid[t]),
            "lambda_or_h": float(lam[t]),
            "abs_gap": abs(float(nmse_emp[t]) - float(nmse_pred[t])),
        })
    return rows


def _mean_se(stack: np.ndarray):
    k = stack.shape[0]
    mean = stack.mean(axis=0)
    err = stack.std(axis=0, ddof=1) / np.sqrt(k) if k > 1 else np.zeros_like(mean)
    return mean, err


@dataclass
class CsStudy:
    """Per-seed runs of one study and their seed-averaged summaries."""

    runs: list
    trajectory_rows: list = field(default_factory=list)
    se_rows: list = field(default_factory=list)
    comparison: list = field(default_factory=list)


def summarize(runs: Sequence[CsRun]) -> CsStudy:
    """Seed averages.  All runs must share one horizon."""
    lengths = {len(r.trajectory) for r in runs}
    if len(lengths) != 1:
        raise ValueError(f"runs have different horizons: {sorted(lengths)}")
    emp, emp_err = _mean_se(np.stack([r.nmse for r in runs]))
    resid = np.mean([r.resid_over_sqrt_m for r in runs], axis=0)
    lam = np.mean([r.params for r in runs], axis=0)
    ons = np.mean([r.trajectory.column("onsager") for r in runs], axis=0)
    traj_rows = [{"t": t, "nmse_emp": emp[t], "nmse_emp_stderr": emp_err[t], "resid_over_sqrt_m": resid[t],
                  "lambda_or_h": lam[t], "onsager": ons[t]} for t in range(len(emp))]
    study = CsStudy(list(runs), traj_rows)
    if all(r.se is not None for r in runs):
        study.se_rows = se_rows([r.se for r in runs])
        study.comparison = join_comparison(traj_rows, study.se_rows)
    return study


def se_rows(seqs: Sequence[se_mod.ScalarSeSequence]) -> list:
    """Seed-averaged ``tau_t^2`` and predicted NMSE."""
    tau = np.mean([s.tau_sq for s in seqs], axis=0)
    pred = np.mean([se_mod.nmse_curve(s) if s.signal_power > 0 else np.full(len(s.tau_sq), np.nan) for s in seqs],
                   axis=0)
    err = np.sqrt(np.mean([s.stderr**2 for s in seqs], axis=0) / len(seqs))
    return [{"t": t, "tau_sq": tau[t], "predicted_nmse": pred[t], "stderr": err[t]} for t in range(len(tau))]


def join_comparison(traj_rows: Sequence[dict], se_rows: Sequence[dict]) -> list:
    """Join trajectory and SE tables on ``t``; horizons must match."""
    t_traj = [int(r["t"]) for r in traj_rows]
    t_se = [int(r["t"]) for r in se_rows]
    if t_traj != t_se:
        def span(ts):
            return f"{ts[0]}..{ts[-1]}" if ts else "empty"

        raise ValueError(f"horizon mismatch: trajectory t={span(t_traj)}, SE t={span(t_se)}")
    return comparison_rows([r["nmse_emp"] for r in traj_rows], [r["nmse_emp_stderr"] for r in traj_rows],
                           [r["predicted_nmse"] for r in se_rows], [r["tau_sq"] for r in se_rows],
                           [r["resid_over_sqrt_m"] for r in traj_rows], [r["lambda_or_h"] for r in traj_rows])


def map_seeds(fn: Callable[[int], object], seeds: Sequence[int], threads: int = 1) -> list:
    """Apply ``fn`` to each seed; results come back in seed order."""
    if threads <= 1 or len(seeds) <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, seeds))


# -- the studies ---------------------------------------------------------------------


def cs_study(make: Callable[[int], SensingProblem], family, seeds: Sequence[int], max_iters: int,
             onsager_kind: str = amp.EMPIRICAL, se_samples: int = 10, threads: int = 1, mc_samples: int = 1,
             se_signal: Optional[Callable[[int], np.ndarray]] = None, with_se: bool = True) -> CsStudy:
    """Run ``make(seed)`` through CS AMP for every seed and summarise.

    ``family`` is a :class:`NoiseAdaptiveFamily` or a callable ``seed ->
    family`` (for families carrying seeded Monte Carlo settings).
    ``se_signal(seed)`` optionally replaces the signal used by the SE.
    """

    def one(seed):
        fam = family if isinstance(family, NoiseAdaptiveFamily) else family(seed)
        ons = amp.OnsagerEstimator(onsager_kind, dn.DivergenceEstimatorConfig(num_samples=mc_samples, seed=seed))
        return run_cs(make(seed), fam, max_iters, seed, ons, se_samples, with_se,
                      se_theta0=None if se_signal is None else se_signal(seed))

    return summarize(map_seeds(one, seeds, threads))


def matrix_cs_study(n1: int, n2: int, r: int, m: int, sigma_w: float, seeds: Sequence[int], max_iters: int,
                    lambda_coef: float = 2.0, se_samples: int = 10, threads: int = 1,
                    onsager_kind: str = amp.EMPIRICAL) -> CsStudy:
    family = svt_family(dn.MatrixShape(n1, n2), lambda_coef)
    return cs_study(lambda s: make_low_rank_problem(n1, n2, r, m, sigma_w, s)[0], family, seeds, max_iters,
                    onsager_kind, se_samples, threads)


def separable_cs_study(n: int, m: int, sparsity: float, sigma_w: float, seeds: Sequence[int], max_iters: int,
                       lambda_coef: float = 1.5, se_samples: int = 10, threads: int = 1,
                       onsager_kind: str = amp.EMPIRICAL, se_n: Optional[int] = None) -> CsStudy:
    """Soft-threshold AMP on a Bernoulli-Gaussian signal.  ``se_n`` runs the SE on a fresh signal of that size."""
    se_signal = None if se_n is None else (lambda s: bernoulli_gaussian(se_n, sparsity, stream(s, "se-signal")))
    return cs_study(lambda s: make_sparse_problem(n, m, sparsity, sigma_w, s), soft_threshold_family(lambda_coef),
                    seeds, max_iters, onsager_kind, se_samples, threads, se_signal=se_signal)


def image_cs_study(image, m: int, noise_coef: float, seeds: Sequence[int], max_iters: int, patch: int = 5,
                   search: float = 5, h_coef: float = 0.9, h_floor: float = 1e-6, mc_samples: int = 1,
                   se_samples: int = 10, threads: int = 1) -> CsStudy:
    """NLM-AMP on an image, with Monte Carlo divergences for the Onsager term."""
    image = np.asarray(image, dtype=float)
    shape = dn.MatrixShape(*image.shape)

    def family(seed):
        return nlm_family(shape, patch, search, h_coef, h_floor,
                          dn.DivergenceEstimatorConfig(num_samples=mc_samples, seed=seed))

    return cs_study(lambda s: make_image_problem(image, m, noise_coef, s), family, seeds, max_iters,
                    amp.EMPIRICAL, se_samples, threads, mc_samples)


@dataclass
class ConvexReport:
    n: int
    m: int
    constrained: int
    stat_dim: float
    rho: float
    delta: float
    R0: float
    sigma_w: float
    mse: np.ndarray  # mean over seeds of ||theta^t - theta0||^2 / n, t = 0..T
    mse_stderr: np.ndarray
    bound: np.ndarray  # bound[t] applies to theta^{t+1}; nan in the last slot
    slope: float  # fitted per-iteration slope of log mse, t >= 1
    study: Optional[CsStudy] = None

    def rows(self) -> list:
        return [{"t": t, "mse": self.mse[t], "mse_stderr": self.mse_stderr[t],
                 "bound_next": self.bound[t]} for t in range(len(self.mse))]


CONVEX_HEADER = ("t", "mse", "mse_stderr", "bound_next")


def orthant_signal(n: int, constrained: int, seed: int) -> np.ndarray:
    """Nonnegative signal: ``constrained`` zeros, the rest ``1 + |N(0,1)|``, in random positions."""
    if not 0 <= constrained <= n:
        raise ValueError("constrained count must lie in [0, n]")
    rng = stream(seed, "orthant-signal")
    theta = 1.0 + np.abs(rng.standard_normal(n))
    theta[rng.permutation(n)[:constrained]] = 0.0
    return theta


def orthant_design(n: int, constrained: int, rho: float):
    """``(Delta, m)`` for the orthant tangent cone with ``constrained`` zero coordinates."""
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if not 0 <= constrained <= n:
        raise ValueError("constrained count must lie in [0, n]")
    free = np.ones(n, dtype=bool)
    free[:constrained] = False
    stat_dim = se_mod.statistical_dimension(se_mod.ConeDescriptor.orthant(free))
    return stat_dim, int(round(stat_dim / rho))


def make_orthant_problem(n: int, constrained: int, m: int, sigma_w: float, seed: int) -> SensingProblem:
    return _gaussian_problem(orthant_signal(n, constrained, seed), m, sigma_w, seed)


def convex_report(study: CsStudy, n: int, constrained: int, rho: float, sigma_w: float) -> ConvexReport:
    """Mean squared error of a projection study against the convex rate bound."""
    stat_dim, m = orthant_design(n, constrained, rho)
    rho_eff = stat_dim / m
    runs = study.runs
    T = len(runs[0].trajectory) - 1
    powers = np.array([float(r.problem.theta0 @ r.problem.theta0) / n for r in runs])
    mse, mse_err = _mean_se(np.stack([r.nmse * p for r, p in zip(runs, powers)]))
    R0 = float(np.sqrt(powers.mean()))
    delta = m / n
    bound = np.array([se_mod.convex_rate_bound(R0, sigma_w, delta, rho_eff, t) for t in range(T)] + [np.nan])
    slope = float("nan")
    if T >= 2 and np.all(mse[1:] > 0):
        slope = float(np.polyfit(np.arange(1, T + 1), np.log(mse[1:]), 1)[0])
    return ConvexReport(n, m, constrained, stat_dim, rho_eff, delta, R0, sigma_w, mse, mse_err, bound, slope, study)


def convex_cs_experiment(n: int, constrained: int, rho: float, sigma_w: float, T: int, seeds: Sequence[int],
                         threads: int = 1, se_samples: int = 10) -> ConvexReport:
    """CS AMP with projection on the nonnegative orthant against the convex rate bound.

    ``m = round(Delta / rho)`` with ``Delta`` the statistical dimension of
    the tangent cone at the signal.  The bound indexed ``t`` is compared to
    the estimate ``theta^{t+1}``.
    """
    _, m = orthant_design(n, constrained, rho)
    study = cs_study(lambda s: make_orthant_problem(n, constrained, m, sigma_w, s), projection_family(dn.Orthant()),
                     seeds, T, amp.EMPIRICAL, se_samples, threads)
    return convex_report(study, n, constrained, rho, sigma_w)


# -- symmetric setting and LAMP ------------------------------------------------------


def shifted_soft_threshold(offset, lam: float) -> dn.Denoiser:
    """``x -> soft_threshold(x + offset, lam)`` for a fixed offset vector."""
    offset = np.asarray(offset, dtype=float)
    return dn.Denoiser(lambda x: dn.soft_threshold(x + offset, lam),
                       lambda x: dn.soft_threshold_divergence(x + offset, lam), 1.0, "shifted_soft_threshold")


SYMMETRIC_HEADER = ("t", "x_sq", "x_sq_stderr", "K_tt", "onsager_diff", "onsager_max_seed_diff", "lamp_gap")


@dataclass
class SymmetricReport:
    """Rows are indexed by ``t = 1..T`` (entry ``t - 1``)."""

    n: int
    x_sq: np.ndarray  # ||x^t||^2 / n averaged over seeds
    x_sq_stderr: np.ndarray
    K_diag: np.ndarray  # state evolution K_{t,t}, averaged over seeds
    K_stderr: np.ndarray
    onsager_diff: np.ndarray  # seed mean of b_emp - b_ip at x^t; nan at t = T
    onsager_max_seed_diff: np.ndarray  # max over seeds of |b_emp - b_ip|
    lamp_gap: np.ndarray  # max over seeds of ||h^t - x^t|| / sqrt(n); nan without LAMP
    lamp_geometry_gap: float  # max over seeds, s, r < T of |<h^{s+1},h^{r+1}>/n - <q^s,q^r>/n|
    min_rank: int

    def rows(self) -> list:
        return [{"t": t + 1, "x_sq": self.x_sq[t], "x_sq_stderr": self.x_sq_stderr[t], "K_tt": self.K_diag[t],
                 "onsager_diff": self.onsager_diff[t], "onsager_max_seed_diff": self.onsager_max_seed_diff[t],
                 "lamp_gap": self.lamp_gap[t]} for t in range(len(self.x_sq))]

    def se_rows(self) -> list:
        return symmetric_se_rows(self.K_diag, self.K_stderr)


def symmetric_se_rows(K_diag, K_stderr) -> list:
    # predicted NMSE has no meaning without a signal
    return [{"t": t + 1, "tau_sq": K_diag[t], "predicted_nmse": float("nan"), "stderr": K_stderr[t]}
            for t in range(len(K_diag))]


def symmetric_denoiser(n: int, threshold: float, offset_scale: float, seed: int) -> dn.Denoiser:
    return shifted_soft_threshold(offset_scale * stream(seed, "offset").standard_normal(n), threshold)


def symmetric_se(n: int, threshold: float, offset_scale: float, seeds: Sequence[int], T: int,
                 se_samples: int = 20, threads: int = 1):
    """Seed-averaged ``K_{t,t}`` and its standard error for ``t = 1..T``."""

    def one(seed):
        f = symmetric_denoiser(n, threshold, offset_scale, seed)
        K = se_mod.covariance_se(lambda t: f, np.zeros(n), T, se_samples, seed)
        return np.diag(K.entries), np.diag(K.stderr)

    res = map_seeds(one, seeds, threads)
    return (np.mean([r[0] for r in res], axis=0),
            np.sqrt(np.mean([r[1] ** 2 for r in res], axis=0) / len(res)))


def symmetric_study(n: int, threshold: float, offset_scale: float, seeds: Sequence[int], T: int,
                    se_samples: int = 20, with_lamp: bool = True, threads: int = 1,
                    onsager_kind: str = amp.EMPIRICAL) -> SymmetricReport:
    """Symmetric AMP with a shifted soft threshold on GOE, its SE and (optionally) LAMP, from ``x^0 = 0``."""
    if T < 1:
        raise ValueError("symmetric study needs at least one iteration")

    def one(seed):
        A = sample_goe(n, seed)
        f = symmetric_denoiser(n, threshold, offset_scale, seed)
        x0 = np.zeros(n)
        s = amp.SymmetricAmpState.initial(x0)
        xs, diffs = [], np.full(T, np.nan)
        est = amp.OnsagerEstimator(onsager_kind)
        for t in range(T):
            if t >= 1:
                diffs[t - 1] = (amp.symmetric_onsager(f, s.x, amp.OnsagerEstimator())
                                - amp.symmetric_onsager(f, s.x, amp.OnsagerEstimator(amp.INNER_PRODUCT)))
            s = amp.symmetric_amp_step(s, A, f, est)
            xs.append(s.x)
        lamp_gap, geo, rank = np.full(T, np.nan), float("nan"), T
        if with_lamp:
            L = amp.LampState.initial(A, x0, f)
            while L.t < T:
                L = amp.lamp_step(L, A, f)
            lamp_gap = np.array([np.linalg.norm(L.h[t] - xs[t]) / np.sqrt(n) for t in range(T)])
            H, Q = np.column_stack(L.h), np.column_stack(L.q)
            geo = float(np.abs(H.T @ H / n - Q.T @ Q / n).max())
            rank = L.rank
        return np.array([x @ x / n for x in xs]), diffs, lamp_gap, geo, rank

    res = map_seeds(one, seeds, threads)
    x_sq, x_err = _mean_se(np.stack([r[0] for r in res]))
    diffs = np.stack([r[1] for r in res])
    K_diag, K_err = symmetric_se(n, threshold, offset_scale, seeds, T, se_samples, threads)
    return SymmetricReport(n, x_sq, x_err, K_diag, K_err, diffs.mean(axis=0), np.abs(diffs).max(axis=0),
                           np.max(np.stack([r[2] for r in res]), axis=0),
                           float(np.max([r[3] for r in res])), int(min(r[4] for r in res)))


def onsager_pair(problem: SensingProblem, family: NoiseAdaptiveFamily, iters: int) -> np.ndarray:
    """Empirical and inner-product Onsager coefficients along a CS AMP run.

    The run uses the empirical estimator; row ``t`` holds ``(b_emp, b_ip)``
    for the coefficient entering ``r^{t+1}``.
    """
    m = problem.m
    state = amp.CsAmpState.initial(problem.A, problem.y)
    out = np.empty((iters, 2))
    for t in range(iters):
        eta = family.at(np.linalg.norm(state.r) / np.sqrt(m))
        pre = state.theta + problem.A.T @ state.r
        b_ip = amp.cs_onsager(eta, pre, m, amp.OnsagerEstimator(amp.INNER_PRODUCT), problem.theta0)
        state = amp.cs_amp_step(state, problem.A, problem.y, eta)
        out[t] = state.b, b_ip
    return out


ONSAGER_HEADER = ("t", "b_emp", "b_ip", "abs_diff", "max_seed_abs_diff")


def onsager_rows(pairs: np.ndarray) -> list:
    """Rows from stacked ``(seed, t, [b_emp, b_ip])`` coefficients."""
    mean = pairs.mean(axis=0)
    per_seed = np.abs(pairs[:, :, 0] - pairs[:, :, 1]).max(axis=0)
    return [{"t": t + 1, "b_emp": mean[t, 0], "b_ip": mean[t, 1], "abs_diff": abs(mean[t, 0] - mean[t, 1]),
             "max_seed_abs_diff": per_seed[t]} for t in range(pairs.shape[1])]


def onsager_study(n: int, m: int, sparsity: float, sigma_w: float, seeds: Sequence[int], iters: int,
                  lambda_coef: float = 1.5, threads: int = 1) -> list:
    """Seed-averaged empirical and inner-product coefficients on the separable benchmark."""
    family = soft_threshold_family(lambda_coef)
    return onsager_rows(np.stack(map_seeds(
        lambda s: onsager_pair(make_sparse_problem(n, m, sparsity, sigma_w, s), family, iters), seeds, threads)))

"""AMP iteration engines.

Three engines share one convention: each step is a pure function from a
state to the next state, and the memory (Onsager) term is absent at
``t = 0``.

* symmetric AMP on a GOE matrix: ``x^{t+1} = A f_t(x^t) - b_t f_{t-1}(x^{t-1})``
* asymmetric AMP on an ``m x n`` Gaussian matrix with the pair ``(e_t, g_t)``
* compressed-sensing AMP ``theta^{t+1} = eta_t(theta^t + A^T r^t)``

plus the LAMP recursion, which replaces the Onsager term by explicit
projections on the span of past iterates.  It is only used as a numerical
diagnostic.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from nsamp.denoisers import Denoiser, DivergenceEstimatorConfig

EMPIRICAL = "empirical_divergence"
INNER_PRODUCT = "inner_product"


class AmpIterationError(RuntimeError):
    """A step failed; ``iteration`` is the index of the failing step."""

    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class RankTruncationWarning(UserWarning):
    """LAMP least squares dropped directions below the rank tolerance."""


@dataclass(frozen=True)
class OnsagerEstimator:
    kind: str = EMPIRICAL
    mc: Optional[DivergenceEstimatorConfig] = None

    def __post_init__(self):
        if self.kind not in (EMPIRICAL, INNER_PRODUCT):
            raise ValueError(f"unknown Onsager estimator {self.kind!r}")

    def _mc(self, *keys):
        return None if self.mc is None else self.mc.child(*keys)


def _stein_ratio(x, fx, what: str) -> float:
    nx = float(x @ x)
    if nx == 0.0:
        raise ValueError(
            f"inner-product Onsager estimator undefined for zero {what}; use the empirical_divergence estimator"
        )
    return float(x @ fx) / nx


# -- symmetric ------------------------------------------------------------------


@dataclass(frozen=True)
class SymmetricAmpState:
    t: int
    x: np.ndarray
    m_prev: np.ndarray
    b: float = 0.0

    @classmethod
    def initial(cls, x0) -> "SymmetricAmpState":
        x0 = np.asarray(x0, dtype=float)
        return cls(0, x0, np.zeros_like(x0), 0.0)


def symmetric_onsager(f: Denoiser, x, onsager: OnsagerEstimator, fx=None, t: int = 0) -> float:
    """Estimate ``b_t = (1/n) E div f_t(Z^t)`` from the current iterate."""
    x = np.asarray(x, dtype=float)
    if onsager.kind == EMPIRICAL:
        return f.div(x, onsager._mc("sym", t)) / x.size
    return _stein_ratio(x, f(x) if fx is None else fx, "iterate")


def symmetric_amp_step(state: SymmetricAmpState, A, f_t: Denoiser,
                       onsager: OnsagerEstimator = OnsagerEstimator()) -> SymmetricAmpState:
    n = state.x.size
    if A.shape != (n, n):
        raise ValueError(f"matrix shape {A.shape} does not match iterate length {n}")
    m = f_t(state.x)
    b = 0.0 if state.t == 0 else symmetric_onsager(f_t, state.x, onsager, m, state.t)
    x_next = A @ m - b * state.m_prev
    return SymmetricAmpState(state.t + 1, x_next, m, b)


# -- asymmetric -----------------------------------------------------------------


@dataclass(frozen=True)
class AsymmetricAmpState:
    """State at the start of step ``t``: ``u^t`` plus ``g_{t-1}(v^{t-1})``.

    ``v_prev`` is ``v^{t-1}`` (None at ``t = 0``); ``b`` and ``d`` are the
    coefficients used in the step that produced this state.
    """

    t: int
    u: np.ndarray
    m: int
    v_prev: Optional[np.ndarray] = None
    g_prev: Optional[np.ndarray] = None
    b: float = 0.0
    d: float = 0.0

    @classmethod
    def initial(cls, u0, m: int) -> "AsymmetricAmpState":
        return cls(0, np.asarray(u0, dtype=float), int(m))


def asymmetric_amp_step(state: AsymmetricAmpState, A, e_t: Denoiser, g_t: Denoiser,
                        onsager: OnsagerEstimator = OnsagerEstimator()) -> AsymmetricAmpState:
    m, n = A.shape
    if state.u.size != n or state.m != m:
        raise ValueError(f"matrix shape {A.shape} does not match state dimensions (m={state.m}, n={state.u.size})")
    t = state.t
    e = e_t(state.u)
    if t == 0 or state.g_prev is None:
        b = 0.0
        v = A @ e
    else:
        if onsager.kind == EMPIRICAL:
            b = e_t.div(state.u, onsager._mc("asym-b", t)) / m
        else:
            b = n * _stein_ratio(state.u, e, "u iterate") / m
        v = A @ e - b * state.g_prev
    g = g_t(v)
    if onsager.kind == EMPIRICAL:
        d = g_t.div(v, onsager._mc("asym-d", t)) / m
    else:
        d = _stein_ratio(v, g, "v iterate")
    u_next = A.T @ g - d * e
    return AsymmetricAmpState(t + 1, u_next, m, v, g, b, d)


# -- compressed sensing -----------------------------------------------------------


@dataclass(frozen=True)
class CsAmpState:
    """Estimate ``theta^t`` and residual ``r^t``.

    ``pre`` caches ``theta^{t-1} + A^T r^{t-1}`` (None at ``t = 0``) and ``b``
    is the coefficient that entered ``r^t``.
    """

    t: int
    theta: np.ndarray
    r: np.ndarray
    pre: Optional[np.ndarray] = None
    b: float = 0.0

    @classmethod
    def initial(cls, A, y) -> "CsAmpState":
        m, n = A.shape
        y = np.asarray(y, dtype=float)
        if y.shape != (m,):
            raise ValueError(f"observation length {y.size} does not match m={m}")
        return cls(0, np.zeros(n), y.copy())


def cs_onsager(eta: Denoiser, pre, m: int, onsager: OnsagerEstimator = OnsagerEstimator(),
               theta0=None, t: int = 0) -> float:
    """``(1/m) div eta(pre)`` or its Stein form.

    The inner-product form needs the true signal (it is the image of the
    asymmetric estimator under the change of variables
    ``u = theta0 - pre``), so it is a diagnostic, not a practical estimator.
    """
    pre = np.asarray(pre, dtype=float)
    if onsager.kind == EMPIRICAL:
        return eta.div(pre, onsager._mc("cs", t)) / m
    if theta0 is None:
        raise ValueError("inner-product Onsager estimator for CS AMP needs theta0")
    z = pre - theta0
    return pre.size * _stein_ratio(z, eta(pre) - theta0, "effective noise") / m


def cs_amp_step(state: CsAmpState, A, y, eta_t: Denoiser,
                onsager: OnsagerEstimator = OnsagerEstimator(), theta0=None) -> CsAmpState:
    m, n = A.shape
    y = np.asarray(y, dtype=float)
    if y.shape != (m,):
        raise ValueError(f"observation length {y.size} does not match m={m}")
    pre = state.theta + A.T @ state.r
    theta = eta_t(pre)
    b = cs_onsager(eta_t, pre, m, onsager, theta0, state.t)
    r = y - A @ theta + b * state.r
    return CsAmpState(state.t + 1, theta, r, pre, b)


def cs_reduction(theta0, w, eta_by_t: Callable[[int], Denoiser]):
    """Change of variables mapping CS AMP onto asymmetric AMP.

    Returns ``(e_by_t, g_by_t, u0)`` with ``e_t(u) = eta_{t-1}(theta0 - u) - theta0``,
    ``g_t(v) = v - w`` and ``u0 = -theta0``; ``eta_{-1}`` is the zero map.
    """
    theta0 = np.asarray(theta0, dtype=float)
    w = np.asarray(w, dtype=float)

    def e_by_t(t: int) -> Denoiser:
        if t == 0:
            return Denoiser(lambda u: -theta0.copy(), lambda u: 0.0, 0.0, "cs-e0")
        eta = eta_by_t(t - 1)
        return Denoiser(lambda u: eta(theta0 - u) - theta0,
                        lambda u: -eta.div(theta0 - u), eta.lipschitz_bound, f"cs-e({eta.kind})")

    g = Denoiser(lambda v: v - w, lambda v: float(v.size), 1.0, "cs-g")
    return e_by_t, (lambda t: g), -theta0


# -- LAMP -------------------------------------------------------------------------


@dataclass(frozen=True)
class LampState:
    """LAMP iterates after initialisation: ``h = [h^1..h^t]``, ``q = [q^0..q^{t-1}]``."""

    t: int
    h: tuple
    q: tuple
    alpha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rank: int = 0
    rank_tolerance: float = 1e-10

    @classmethod
    def initial(cls, A, x0, f0: Denoiser, rank_tolerance: float = 1e-10) -> "LampState":
        q0 = f0(np.asarray(x0, dtype=float))
        return cls(1, (A @ q0,), (q0,), np.zeros(0), 1 if np.any(q0) else 0, rank_tolerance)


def _truncated_basis(Q: np.ndarray, rtol: float):
    U, s, Vt = np.linalg.svd(Q, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return U[:, :0], s[:0], Vt[:0]
    keep = s > rtol * s[0]
    return U[:, keep], s[keep], Vt[keep]


def lamp_step(state: LampState, A, f_t: Denoiser) -> LampState:
    """One LAMP update ``h^{t+1} = P A P q^t + H alpha``, ``P`` the projector off span(q^0..q^{t-1})."""
    t = state.t
    q_t = f_t(state.h[-1])
    Q = np.column_stack(state.q)
    H = np.column_stack(state.h)
    U, s, Vt = _truncated_basis(Q, state.rank_tolerance)
    rank = s.size
    if rank < Q.shape[1]:
        warnings.warn(f"LAMP step {t}: Q has effective rank {rank} < {Q.shape[1]}",
                      RankTruncationWarning, stacklevel=2)
    alpha = Vt.T @ ((U.T @ q_t) / s) if rank else np.zeros(Q.shape[1])

    def perp(v):
        return v - U @ (U.T @ v)

    h_next = perp(A @ perp(q_t)) + H @ alpha
    return LampState(t + 1, state.h + (h_next,), state.q + (q_t,), alpha, rank, state.rank_tolerance)


# -- driver ------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricHook:
    """Named scalar metric of the current iterate.

    ``order`` is the pseudo-Lipschitz order of the metric, kept as metadata.
    """

    name: str
    fn: Callable[[np.ndarray], float]
    order: int = 2


@dataclass
class IterationRecord:
    t: int
    iterate_norm: float
    residual_norm: float
    onsager: float
    metrics: dict
    wall_time: float
    extra: dict = field(default_factory=dict)


@dataclass
class AmpTrajectory:
    engine: str
    records: list
    iterates: list
    final_state: object = None

    def column(self, name: str) -> np.ndarray:
        out = []
        for rec in self.records:
            if name in rec.metrics:
                out.append(rec.metrics[name])
            elif name in rec.extra:
                out.append(rec.extra[name])
            else:
                out.append(getattr(rec, name))
        return np.asarray(out, dtype=float)

    def __len__(self):
        return len(self.records)


ENGINES = ("symmetric", "asymmetric", "cs", "lamp")


def _as_schedule(schedule):
    # a tuple is a constant (e, g) pair, a list is indexed by t
    if isinstance(schedule, (Denoiser, tuple)):
        return lambda t, state: schedule
    if isinstance(schedule, list):
        return lambda t, state: schedule[t]
    return schedule


def run(engine: str, A, start, schedule, onsager: OnsagerEstimator = OnsagerEstimator(),
        max_iters: int = 10, plateau_tol: Optional[float] = None,
        metrics: Sequence[MetricHook] = (), keep_iterates: bool = False,
        theta0=None, on_step: Optional[Callable] = None) -> AmpTrajectory:
    """Iterate an engine and record a trajectory with ``max_iters + 1`` records.

    ``start`` is ``x^0`` (symmetric, lamp), ``u^0`` (asymmetric) or ``y`` (cs).
    ``schedule(t, state)`` returns the denoiser for step ``t``; for the
    asymmetric engine it returns the pair ``(e_t, g_t)``.  A fixed Denoiser or
    a list indexed by ``t`` is also accepted.  ``metrics`` are evaluated on
    ``theta^t`` (cs), ``x^t`` (symmetric), ``u^t`` (asymmetric) or ``h^t``
    (lamp).  With ``plateau_tol`` set, iteration stops early once the
    relative change of the residual norm falls below it.
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    if max_iters < 0:
        raise ValueError("max_iters must be >= 0")
    sched = _as_schedule(schedule)
    A = np.asarray(A)
    start = np.asarray(start, dtype=float)

    if engine == "symmetric":
        state = SymmetricAmpState.initial(start)
    elif engine == "asymmetric":
        state = AsymmetricAmpState.initial(start, A.shape[0])
    elif engine == "cs":
        state = CsAmpState.initial(A, start)
    else:
        try:
            state = LampState.initial(A, start, sched(0, None))
        except Exception as exc:
            raise AmpIterationError(0, str(exc)) from exc

    def current(st):
        if engine == "symmetric":
            return st.x
        if engine == "asymmetric":
            return st.u
        if engine == "cs":
            return st.theta
        return st.h[-1]

    def record(st, prev_iter, elapsed):
        it = current(st)
        if engine == "cs":
            res = float(np.linalg.norm(st.r))
        elif prev_iter is None:
            res = float("nan")
        else:
            res = float(np.linalg.norm(it - prev_iter))
        extra = {}
        if engine == "lamp":
            extra["rank"] = float(st.rank)
        if engine == "asymmetric":
            extra["d"] = st.d
        onsager_val = getattr(st, "b", float("nan"))
        return IterationRecord(st.t, float(np.linalg.norm(it)), res, float(onsager_val),
                               {h.name: float(h.fn(it)) for h in metrics}, elapsed, extra)

    records, iterates = [], []
    t_start = time.perf_counter()
    prev = None
    records.append(record(state, prev, 0.0))
    if keep_iterates:
        iterates.append(current(state).copy())
    last_res = records[-1].residual_norm
    for k in range(max_iters):
        prev = current(state)
        try:
            den = sched(state.t, state)
            if engine == "symmetric":
                state = symmetric_amp_step(state, A, den, onsager)
            elif engine == "asymmetric":
                e_t, g_t = den
                state = asymmetric_amp_step(state, A, e_t, g_t, onsager)
            elif engine == "cs":
                state = cs_amp_step(state, A, start, den, onsager, theta0)
            else:
                state = lamp_step(state, A, den)
            if not np.all(np.isfinite(current(state))):
                raise FloatingPointError("non-finite iterate")
        except AmpIterationError:
            raise
        except Exception as exc:
            raise AmpIterationError(k, f"{type(exc).__name__}: {exc}") from exc
        rec = record(state, prev, time.perf_counter() - t_start)
        records.append(rec)
        if keep_iterates:
            iterates.append(current(state).copy())
        if on_step is not None:
            on_step(state, rec)
        if plateau_tol is not None and np.isfinite(last_res) and last_res > 0:
            if abs(rec.residual_norm - last_res) <= plateau_tol * last_res:
                break
        last_res = rec.residual_norm
    return AmpTrajectory(engine, records, iterates, state)

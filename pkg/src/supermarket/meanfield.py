"""Mean-field tail dynamics: the ODE dv(k)/dt = lambda (v(k-1)^d - v(k)^d)
- (v(k) - v(k+1)), its closed-form fixed point, and tail-based distances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .model import EmpiricalLaw, ModelParams, TailVector, scalar_law

__all__ = [
    "OdeConfig",
    "drift",
    "integrate",
    "limit_law",
    "istar",
    "tail_to_law",
    "weighted_tail_distance",
    "fixed_point_residual",
    "adaptive_truncation",
]

# exp() underflows to exactly 0 below roughly this, which is the behaviour
# we want for the doubly-exponential tail
_LOG_FLOOR = -745.0


@dataclass(frozen=True)
class OdeConfig:
    K: int = 30
    step_tol: float = 1e-10
    max_step: float = 1.0

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("K must be at least 1")
        if self.step_tol <= 0:
            raise ValueError("step_tol must be positive")
        if self.max_step <= 0:
            raise ValueError("max_step must be positive")


def _tail_exponent(d: int, k: int) -> int:
    """1 + d + ... + d^(k-1); interpreted as its limit k when d = 1.

    Python integers are unbounded, so d^k never silently overflows.
    """
    if d == 1:
        return k
    return (d**k - 1) // (d - 1)


def limit_law(lam: float, d: int, K: int) -> TailVector:
    """Tail v(k) = lam^((d^k - 1)/(d - 1)) of the limiting single-queue law,
    computed in log-space; the geometric law lam^k when d = 1."""
    if not (0.0 < lam < 1.0):
        raise ValueError(f"lam: expected a value strictly inside (0, 1), got {lam!r}")
    if d < 1:
        raise ValueError("d must be a positive integer")
    if K < 0:
        raise ValueError("K must be non-negative")
    log_lam = math.log(lam)
    v = np.zeros(K + 1)
    for k in range(K + 1):
        t = _tail_exponent(d, k) * log_lam
        v[k] = math.exp(t) if t > _LOG_FLOOR else 0.0
    return TailVector(v)


def adaptive_truncation(lam: float, d: int, floor: int = 30, cutoff: float = 1e-16) -> int:
    """Smallest K with limit tail below `cutoff`, floored at `floor`."""
    log_lam = math.log(lam)
    k = 1
    while _tail_exponent(d, k) * log_lam >= math.log(cutoff):
        k += 1
    return max(k, floor)


def _as_tail(v) -> TailVector:
    return v if isinstance(v, TailVector) else TailVector(np.asarray(v, dtype=float))


def _rhs(ext: np.ndarray, lam: float, d: int) -> np.ndarray:
    """Drift for components 1..K of an extended tail (1, v(1..K), 0)."""
    p = ext**d
    return lam * (p[:-2] - p[1:-1]) - (ext[1:-1] - ext[2:])


def drift(v, params: ModelParams) -> np.ndarray:
    """Component-wise drift (Av)(k) for k = 0..K; the k = 0 component is 0
    since v(0) = 1 identically."""
    tail = _as_tail(v)
    ext = np.concatenate((tail.v, [0.0]))
    return np.concatenate(([0.0], _rhs(ext, params.lam, params.d)))


def integrate(v0, t: float, params: ModelParams, cfg: OdeConfig | None = None) -> TailVector:
    """Solve the tail ODE from v0 up to time t (adaptive RK45).

    The output is clamped to [0, 1] and re-monotonised by cumulative minimum,
    so it always satisfies the tail-vector invariants.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    tail = _as_tail(v0)
    cfg = cfg or OdeConfig(K=max(tail.K, adaptive_truncation(params.lam, params.d)))
    if t == 0.0:
        return tail
    y0 = np.zeros(cfg.K)
    upto = min(tail.K, cfg.K)
    y0[:upto] = tail.v[1 : upto + 1]
    lam, d = params.lam, params.d

    def rhs(_t, y):
        ext = np.concatenate(([1.0], np.clip(y, 0.0, 1.0), [0.0]))
        return _rhs(ext, lam, d)

    sol = solve_ivp(
        rhs,
        (0.0, t),
        y0,
        method="RK45",
        rtol=cfg.step_tol,
        atol=cfg.step_tol * 1e-2,
        max_step=cfg.max_step,
    )
    if not sol.success:
        raise RuntimeError(f"tail ODE integration failed: {sol.message}")
    y = sol.y[:, -1]
    if np.any(y < -10 * cfg.step_tol):
        raise RuntimeError("tail ODE produced a negative component beyond tolerance")
    return TailVector(np.concatenate(([1.0], np.clip(y, 0.0, 1.0))))


def istar(n: int, lam: float, d: int) -> int:
    """Smallest i with lam^((d^i - 1)/(d - 1)) < n^(-1/2) * (ln n)^2.

    The maximum queue length concentrates on two values near this index;
    the two-point statement is for d >= 2 only.
    """
    if d < 2:
        raise ValueError("istar requires d >= 2")
    if n < 2:
        raise ValueError("istar requires n >= 2")
    log_thresh = math.log(math.log(n) ** 2 / math.sqrt(n))
    log_lam = math.log(lam)
    i = 1
    while _tail_exponent(d, i) * log_lam >= log_thresh:
        i += 1
    return i


def tail_to_law(v) -> EmpiricalLaw:
    """Law with Pr(V >= k) = v(k): pmf p(k) = v(k) - v(k+1), p(K) = v(K)."""
    tail = _as_tail(v)
    ext = np.concatenate((tail.v, [0.0]))
    pmf = {k: ext[k] - ext[k + 1] for k in range(tail.K + 1) if ext[k] > ext[k + 1]}
    if not pmf:
        pmf = {0: 1.0}
    return scalar_law(pmf)


def weighted_tail_distance(v, lam: float, d: int, theta: float = 2.0, K: int | None = None) -> float:
    """Theta-weighted l2 distance between a tail and the limiting tail:
    sqrt(sum_{k>=1} (v(k) - lam^((d^k-1)/(d-1)))^2 theta^k), truncated at K."""
    if theta <= 1.0:
        raise ValueError("theta must exceed 1")
    tail = _as_tail(v)
    if K is None:
        K = max(tail.K, adaptive_truncation(lam, d))
    ref = limit_law(lam, d, K)
    total = 0.0
    for k in range(1, K + 1):
        diff = tail.get(k) - ref.get(k)
        total += diff * diff * theta**k
    return math.sqrt(total)


def fixed_point_residual(v, params: ModelParams) -> float:
    """sup_k |(Av)(k)|; zero at the limiting tail."""
    return float(np.max(np.abs(drift(v, params))))

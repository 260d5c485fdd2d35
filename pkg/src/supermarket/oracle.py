"""Exact stationary laws for tiny systems (n <= 4) via a direct linear solve
of the truncated generator; ground truth for simulator and estimator tests.

Arrival routing probabilities are obtained by literal enumeration of all n^d
choice lists with first-in-list tie-breaking, so this module doubles as a
reference implementation of the arrival semantics.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import EmpiricalLaw, ModelParams, scalar_law

__all__ = [
    "TruncatedChain",
    "build_chain",
    "stationary",
    "exact_marginal",
    "exact_joint",
    "exact_u_power",
    "generator_identity_residual",
    "default_cap",
]

MAX_N = 4
MAX_STATES = 2_000_000


def default_cap(params: ModelParams, mass_tol: float = 1e-10) -> int:
    """Smallest cap with n * lam^cap below mass_tol (equilibrium tail bound),
    clipped so the state count stays tractable."""
    c = math.ceil(math.log(mass_tol / params.n) / math.log(params.lam))
    cap = max(int(c), 5)
    while (cap + 1) ** params.n > MAX_STATES:
        cap -= 1
    return cap


@lru_cache(maxsize=None)
def _routing_counts(pattern: tuple[int, ...], d: int) -> tuple[int, ...]:
    """Per-queue count of the n^d equiprobable lists it wins under
    shortest-queue routing with first-in-list ties. Only the comparison
    pattern of the lengths matters, so results are cached on dense ranks."""
    n = len(pattern)
    counts = [0] * n
    for lst in itertools.product(range(n), repeat=d):
        best = lst[0]
        for c in lst[1:]:
            if pattern[c] < pattern[best]:
                best = c
        counts[best] += 1
    return tuple(counts)


def _rank_pattern(x: tuple[int, ...]) -> tuple[int, ...]:
    ranks = {v: i for i, v in enumerate(sorted(set(x)))}
    return tuple(ranks[v] for v in x)


@dataclass(frozen=True)
class TruncatedChain:
    """The n-queue CTMC restricted to states with every length <= cap."""

    params: ModelParams
    cap: int
    states: np.ndarray  # (num_states, n)
    generator: sp.csr_matrix

    def index_of(self, x) -> int:
        x = np.asarray(x, dtype=np.int64)
        base = self.cap + 1
        weights = base ** np.arange(self.params.n - 1, -1, -1)
        return int(x @ weights)


def build_chain(params: ModelParams, cap: int | None = None) -> TruncatedChain:
    """Construct the truncated generator. Arrival rate from x to x + e_j is
    lam * n * (wins_j / n^d); departures run at rate 1 per non-empty queue."""
    if params.n > MAX_N:
        raise ValueError(f"exact solve supports n <= {MAX_N}, got n = {params.n}")
    if cap is None:
        cap = default_cap(params)
    if cap < 1:
        raise ValueError("cap must be at least 1")
    n, d, lam = params.n, params.d, params.lam
    base = cap + 1
    num = base**n
    if num > MAX_STATES:
        raise ValueError(f"state count {num} exceeds the {MAX_STATES} guard; lower cap")
    grids = np.meshgrid(*[np.arange(base)] * n, indexing="ij")
    states = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
    weights = base ** np.arange(n - 1, -1, -1)
    list_total = n**d
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for idx in range(num):
        x = tuple(int(v) for v in states[idx])
        out_rate = 0.0
        wins = _routing_counts(_rank_pattern(x), d)
        for j in range(n):
            if wins[j] and x[j] < cap:
                rate = lam * n * wins[j] / list_total
                rows.append(idx)
                cols.append(idx + int(weights[j]))
                vals.append(rate)
                out_rate += rate
            if x[j] > 0:
                rows.append(idx)
                cols.append(idx - int(weights[j]))
                vals.append(1.0)
                out_rate += 1.0
        rows.append(idx)
        cols.append(idx)
        vals.append(-out_rate)
    gen = sp.csr_matrix((vals, (rows, cols)), shape=(num, num))
    return TruncatedChain(params, cap, states, gen)


def stationary(chain: TruncatedChain) -> np.ndarray:
    """Solve pi G = 0, sum(pi) = 1 by replacing the empty state's balance
    equation with the normalisation row."""
    G = chain.generator
    num = G.shape[0]
    A = G.transpose().tolil()
    A[0, :] = 1.0
    b = np.zeros(num)
    b[0] = 1.0
    pi = spla.spsolve(A.tocsr(), b)
    residual = float(np.max(np.abs(pi @ G)))
    if not np.all(np.isfinite(pi)) or residual > 1e-10:
        raise RuntimeError(
            f"stationary solve failed (residual {residual}); generator is likely malformed"
        )
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def exact_marginal(chain: TruncatedChain, pi: np.ndarray, queue_index: int = 0) -> EmpiricalLaw:
    """Exact law of one queue's length under pi (sample_count = 0)."""
    masses = np.bincount(chain.states[:, queue_index], weights=pi, minlength=chain.cap + 1)
    return scalar_law({k: m for k, m in enumerate(masses) if m > 0.0})


def exact_joint(chain: TruncatedChain, pi: np.ndarray, r: int) -> EmpiricalLaw:
    """Exact joint law of queues 0..r-1 under pi."""
    if r < 1 or r > chain.params.n:
        raise ValueError("r must be in 1..n")
    pmf: dict[tuple, float] = {}
    for x, p in zip(chain.states, pi):
        if p > 0.0:
            key = tuple(int(v) for v in x[:r])
            pmf[key] = pmf.get(key, 0.0) + float(p)
    return EmpiricalLaw(r, pmf)


def exact_u_power(chain: TruncatedChain, pi: np.ndarray, k: int, power: int = 1) -> float:
    """E[u(k, Y)^power] under pi."""
    u_k = (chain.states >= k).mean(axis=1)
    return float(pi @ (u_k**power))


def generator_identity_residual(chain: TruncatedChain, pi: np.ndarray, k: int) -> float:
    """lam (E[u(k-1,Y)^d] - E[u(k,Y)^d]) - (u(k) - u(k+1)) under pi; zero up
    to truncation error in exact equilibrium."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    p = chain.params
    return (
        p.lam * (exact_u_power(chain, pi, k - 1, p.d) - exact_u_power(chain, pi, k, p.d))
        - (exact_u_power(chain, pi, k) - exact_u_power(chain, pi, k + 1))
    )

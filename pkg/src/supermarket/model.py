"""Core domain types for the supermarket (join-shortest-of-d) queueing model.

A system state is a length-n vector of non-negative queue lengths, held as a
read-only integer numpy array. The derived objects used everywhere else are
the tail profile u(k, x) -- the fraction of queues with length at least k --
and finite probability mass functions over queue lengths or tuples of them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping

import numpy as np

__all__ = [
    "ModelParams",
    "TailVector",
    "EmpiricalLaw",
    "new_params",
    "as_state",
    "tail_profile",
    "queue_counts",
    "scalar_law",
]


@dataclass(frozen=True)
class ModelParams:
    """Parameters (n, lambda, d): n servers, per-server arrival intensity
    lambda in (0, 1), d uniform choices with replacement per customer.

    d = 1 and n = 1 are allowed on purpose: both reduce to independent
    M/M/1 queues and serve as exact analytic controls.
    """

    n: int
    lam: float
    d: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n: expected a positive integer, got {self.n!r}")
        if not (0.0 < self.lam < 1.0):
            raise ValueError(f"lam: expected a value strictly inside (0, 1), got {self.lam!r}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d: expected a positive integer, got {self.d!r}")

    @property
    def arrival_rate(self) -> float:
        """System-wide arrival rate lambda * n."""
        return self.lam * self.n

    @property
    def event_rate(self) -> float:
        """Rate of the merged arrival + potential-departure Poisson process."""
        return self.n * (1.0 + self.lam)


def new_params(n: int, lam: float, d: int) -> ModelParams:
    """Validated constructor; raises ValueError naming the offending field."""
    return ModelParams(int(n), float(lam), int(d))


def as_state(lengths) -> np.ndarray:
    """Coerce to a read-only 1-d array of non-negative queue lengths."""
    x = np.asarray(lengths)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("queue-lengths vector must be a non-empty 1-d sequence")
    if not np.issubdtype(x.dtype, np.integer):
        xi = x.astype(np.int64)
        if np.any(xi != x):
            raise ValueError("queue lengths must be integers")
        x = xi
    if np.any(x < 0):
        raise ValueError("queue lengths must be non-negative")
    x = np.ascontiguousarray(x, dtype=np.int64)
    x.flags.writeable = False
    return x


@dataclass(frozen=True)
class TailVector:
    """Monotone tail sequence v(0..K) with v(0) = 1.

    Entries beyond the truncation index K are exactly 0 by convention; the
    laws this carries decay doubly exponentially, so finite truncation costs
    less than machine precision for modest K.
    """

    v: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.v, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("tail vector must be a non-empty 1-d sequence")
        if abs(v[0] - 1.0) > 1e-9:
            raise ValueError(f"v(0) must equal 1, got {v[0]!r}")
        if np.any(v < -1e-12) or np.any(v > 1.0 + 1e-12):
            raise ValueError("tail entries must lie in [0, 1]")
        if np.any(np.diff(v) > 1e-9):
            raise ValueError("tail vector must be non-increasing")
        # normalise away float dust so downstream invariants hold exactly
        v = np.minimum.accumulate(np.clip(v, 0.0, 1.0))
        v[0] = 1.0
        v.flags.writeable = False
        object.__setattr__(self, "v", v)

    @property
    def K(self) -> int:
        return self.v.size - 1

    def get(self, k: int) -> float:
        """v(k), treating indices beyond K as 0."""
        if k < 0:
            raise ValueError("tail index must be non-negative")
        return float(self.v[k]) if k <= self.K else 0.0

    def __len__(self) -> int:
        return self.v.size


def tail_profile(x) -> TailVector:
    """Tail profile u(k, x): fraction of queues with length >= k, k = 0..max."""
    x = as_state(x)
    n = x.size
    m = int(x.max())
    counts = np.bincount(x, minlength=m + 1)
    below = np.concatenate(([0], np.cumsum(counts)[:-1]))  # |{j : x(j) < k}|
    return TailVector((n - below) / n)


def queue_counts(k: int, x) -> int:
    """l(k, x) = |{j : x(j) >= k}|, so that l(k, x) = n * u(k, x)."""
    if k < 0:
        raise ValueError("k must be non-negative")
    x = as_state(x)
    return int(np.count_nonzero(x >= k))


@dataclass(frozen=True)
class EmpiricalLaw:
    """Finite pmf over r-tuples of non-negative integers.

    sample_count is 0 for exact/analytic laws and otherwise records how many
    draws the pmf was estimated from.
    """

    support_dim: int
    pmf: Mapping[tuple, float]
    sample_count: int = 0

    def __post_init__(self) -> None:
        if int(self.support_dim) != self.support_dim or self.support_dim < 1:
            raise ValueError(f"support_dim must be a positive integer, got {self.support_dim!r}")
        if self.sample_count < 0:
            raise ValueError("sample_count must be non-negative")
        clean: dict[tuple, float] = {}
        for key, p in self.pmf.items():
            tup = tuple(int(i) for i in (key if isinstance(key, tuple) else (key,)))
            if len(tup) != self.support_dim:
                raise ValueError(f"support point {key!r} has arity {len(tup)}, expected {self.support_dim}")
            if any(i < 0 for i in tup):
                raise ValueError(f"support point {key!r} has a negative coordinate")
            p = float(p)
            if p < -1e-15:
                raise ValueError(f"negative mass {p!r} at {key!r}")
            if p > 0.0:
                clean[tup] = clean.get(tup, 0.0) + p
        total = math.fsum(clean.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"pmf sums to {total!r}, expected 1 within 1e-9")
        object.__setattr__(self, "pmf", MappingProxyType(clean))

    def prob(self, key) -> float:
        tup = tuple(int(i) for i in (key if isinstance(key, tuple) else (key,)))
        return self.pmf.get(tup, 0.0)

    def scalar_items(self) -> list[tuple[int, float]]:
        """(value, mass) pairs for a scalar law, sorted by value."""
        if self.support_dim != 1:
            raise ValueError("scalar_items requires support_dim == 1")
        return sorted((k[0], p) for k, p in self.pmf.items())


def scalar_law(pmf: Mapping[int, float], sample_count: int = 0) -> EmpiricalLaw:
    """Convenience constructor for a law over single queue lengths."""
    return EmpiricalLaw(1, {(int(k),): float(p) for k, p in pmf.items()}, sample_count)

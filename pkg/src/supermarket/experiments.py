"""Configuration-driven experiment runner.

A run is a pure function of (config, master seed): replication seeds are
spawned as SeedSequence([master_seed, cell_index, replication_index]), so
records are reproducible individually and invariant to execution order.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
import yaml

from . import estimators as est
from .coupling import coalescence_time, default_burn_in, generate_events, sample_equilibrium
from .meanfield import OdeConfig, adaptive_truncation, integrate, limit_law, tail_to_law
from .model import EmpiricalLaw, ModelParams, TailVector, scalar_law
from .oracle import build_chain, exact_marginal, generator_identity_residual, stationary

__all__ = [
    "ExperimentConfig",
    "ResultSet",
    "SCENARIOS",
    "load_config",
    "config_from_mapping",
    "run",
    "initial_tail",
    "sample_initial",
    "default_time_grid",
]

SCHEMA_VERSION = 1

SCENARIOS = (
    "equilibrium-marginal",
    "marginal-scaling",
    "chaos-scaling",
    "nonequilibrium-tracking",
    "mixing-diagnostic",
    "max-queue-concentration",
    "variance-study",
    "oracle-validation",
)

# scenarios whose records carry replication-based standard errors
_SE_SCENARIOS = frozenset(
    {
        "equilibrium-marginal",
        "marginal-scaling",
        "chaos-scaling",
        "nonequilibrium-tracking",
        "variance-study",
    }
)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    grid: tuple[ModelParams, ...]
    replications: int
    samples_per_replication: int = 2000
    spacing: float = 1.0
    burn_in: float | None = None
    master_seed: int = 0
    output: str | None = None
    workers: int = 1
    options: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        if not self.grid:
            raise ValueError("parameter grid must be non-empty")
        if self.replications < 1:
            raise ValueError("replications must be positive")
        if self.scenario in _SE_SCENARIOS and self.replications < 20:
            raise ValueError(
                f"scenario {self.scenario!r} reports standard errors and needs >= 20 replications"
            )
        if self.samples_per_replication < 1:
            raise ValueError("samples_per_replication must be positive")
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    def echo(self) -> dict:
        d = asdict(self)
        d["grid"] = [{"n": p.n, "lam": p.lam, "d": p.d} for p in self.grid]
        d["options"] = dict(self.options)
        return d


def config_from_mapping(m: Mapping[str, Any]) -> ExperimentConfig:
    try:
        grid = tuple(
            ModelParams(int(c["n"]), float(c["lam"]), int(c["d"])) for c in m["grid"]
        )
    except (KeyError, TypeError) as exc:
        raise ValueError(f"grid entries must be mappings with n/lam/d: {exc}") from exc
    known = {
        "scenario",
        "grid",
        "replications",
        "samples_per_replication",
        "spacing",
        "burn_in",
        "master_seed",
        "output",
        "workers",
        "options",
    }
    unknown = set(m) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(
        scenario=str(m.get("scenario", "")),
        grid=grid,
        replications=int(m.get("replications", 0)),
        samples_per_replication=int(m.get("samples_per_replication", 2000)),
        spacing=float(m.get("spacing", 1.0)),
        burn_in=None if m.get("burn_in") is None else float(m["burn_in"]),
        master_seed=int(m.get("master_seed", 0)),
        output=m.get("output"),
        workers=int(m.get("workers", 1)),
        options=dict(m.get("options") or {}),
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, Mapping):
        raise ValueError("config file must contain a mapping at the top level")
    return config_from_mapping(data)


@dataclass
class ResultSet:
    scenario: str
    config: dict
    cells: list[dict]
    wall_clock_seconds: float

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "config": self.config,
            "cells": self.cells,
            "wall_clock_seconds": self.wall_clock_seconds,
        }

    def save(self, path) -> None:
        payload = self.to_dict()
        _validate_result(payload)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def load_results(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    _validate_result(payload)
    return payload


def _validate_result(payload: Mapping) -> None:
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported result schema version {payload.get('schema_version')!r}")
    for key in ("scenario", "config", "cells"):
        if key not in payload:
            raise ValueError(f"result payload missing {key!r}")


def rep_seed(master_seed: int, cell_index: int, rep_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), int(cell_index), int(rep_index)])


def _estimate_dict(e: est.EstimateWithError) -> dict:
    return {"value": e.value, "std_error": e.std_error, "replications": e.replication_count}


def _cell_header(params: ModelParams) -> dict:
    return {"n": params.n, "lam": params.lam, "d": params.d}


def _map_reps(cfg: ExperimentConfig, fn: Callable[[int], Any]) -> list:
    if cfg.workers <= 1:
        return [fn(i) for i in range(cfg.replications)]
    with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
        return list(ex.map(fn, range(cfg.replications)))


def _burn_in(cfg: ExperimentConfig, params: ModelParams) -> float:
    return cfg.burn_in if cfg.burn_in is not None else default_burn_in(params)


def _equilibrium_rep(cfg: ExperimentConfig, params: ModelParams, cell_index: int, rep: int):
    return sample_equilibrium(
        params,
        _burn_in(cfg, params),
        cfg.spacing,
        cfg.samples_per_replication,
        rep_seed(cfg.master_seed, cell_index, rep),
    )


def _pooled_law(count_arrays: Sequence[np.ndarray]) -> EmpiricalLaw:
    kmax = max(c.size for c in count_arrays)
    total = np.zeros(kmax)
    for c in count_arrays:
        total[: c.size] += c
    return scalar_law(
        {k: v / total.sum() for k, v in enumerate(total) if v}, sample_count=int(total.sum())
    )


# ----------------------------------------------------------------- scenarios


def _scenario_equilibrium_marginal(cfg: ExperimentConfig) -> list[dict]:
    kmax = int(cfg.options.get("kmax", 12))
    cells = []
    for ci, params in enumerate(cfg.grid):
        ref = tail_to_law(limit_law(params.lam, params.d, adaptive_truncation(params.lam, params.d)))

        def one(rep):
            s = _equilibrium_rep(cfg, params, ci, rep)
            return (
                np.bincount(s.ravel()),
                est.tail_fractions(s, kmax),
                est.tv_distance(est.empirical_marginal(s), ref),
                est.lag_one_autocorr(s),
            )

        per_rep = _map_reps(cfg, one)
        counts = [r[0] for r in per_rep]
        u_hats = np.stack([r[1] for r in per_rep])
        pooled = _pooled_law(counts)
        cells.append(
            {
                "cell": _cell_header(params),
                "tv_to_limit": _estimate_dict(est.aggregate(r[2] for r in per_rep)),
                "tv_pooled_to_limit": est.tv_distance(pooled, ref),
                "u_hat": u_hats.mean(axis=0).tolist(),
                "lag_one_autocorr": float(np.mean([r[3] for r in per_rep])),
            }
        )
    return cells


def _limit_tail_values(params: ModelParams, kmax: int) -> np.ndarray:
    return limit_law(params.lam, params.d, kmax).v


def _scenario_marginal_scaling(cfg: ExperimentConfig) -> list[dict]:
    kmax = int(cfg.options.get("kmax", 12))
    cells = []
    log_n = []
    log_dev = []
    log_dev_var = []
    for ci, params in enumerate(cfg.grid):
        ref_tail = _limit_tail_values(params, kmax)
        ref_law = tail_to_law(limit_law(params.lam, params.d, adaptive_truncation(params.lam, params.d)))

        def one(rep):
            s = _equilibrium_rep(cfg, params, ci, rep)
            return est.tail_fractions(s, kmax), np.bincount(s.ravel())

        per_rep = _map_reps(cfg, one)
        u_hats = np.stack([r[0] for r in per_rep])
        pooled_u = u_hats.mean(axis=0)
        sup_dev = float(np.max(np.abs(pooled_u - ref_tail)[1:]))
        # jackknife over replications for the pooled sup deviation
        jack = []
        for i in range(u_hats.shape[0]):
            loo = (pooled_u * u_hats.shape[0] - u_hats[i]) / (u_hats.shape[0] - 1)
            jack.append(float(np.max(np.abs(loo - ref_tail)[1:])))
        jack = np.asarray(jack)
        r_count = u_hats.shape[0]
        sup_dev_se = float(math.sqrt((r_count - 1) / r_count * np.sum((jack - jack.mean()) ** 2)))
        pooled = _pooled_law([r[1] for r in per_rep])
        cells.append(
            {
                "cell": _cell_header(params),
                "sup_tail_deviation": sup_dev,
                "sup_tail_deviation_se": sup_dev_se,
                "tv_pooled_to_limit": est.tv_distance(pooled, ref_law),
                "u1_hat": float(pooled_u[1]),
                "u_hat": pooled_u.tolist(),
            }
        )
        log_n.append(math.log(params.n))
        log_dev.append(math.log(max(sup_dev, 1e-300)))
        log_dev_var.append((sup_dev_se / sup_dev) ** 2 if sup_dev > 0 else 0.0)
    if len(set(log_n)) >= 2:
        slope, slope_se = _weighted_slope(log_n, log_dev, log_dev_var)
        cells.append(
            {
                "cell": "regression",
                "loglog_slope": slope,
                "loglog_slope_se": slope_se,
            }
        )
    return cells


def _weighted_slope(xs, ys, y_vars) -> tuple[float, float]:
    x = np.asarray(xs)
    y = np.asarray(ys)
    v = np.asarray(y_vars)
    xc = x - x.mean()
    sxx = float(np.sum(xc**2))
    coef = xc / sxx
    slope = float(np.sum(coef * y))
    slope_se = float(math.sqrt(np.sum(coef**2 * v)))
    return slope, slope_se


def _scenario_chaos_scaling(cfg: ExperimentConfig) -> list[dict]:
    r = int(cfg.options.get("r", 2))
    reference = str(cfg.options.get("reference", "empirical"))
    pooled = bool(cfg.options.get("pooled_pairs", True))
    debias = bool(cfg.options.get("debias", True))
    cells = []
    for ci, params in enumerate(cfg.grid):
        limit_ref = None
        if reference == "limit":
            limit_ref = tail_to_law(
                limit_law(params.lam, params.d, adaptive_truncation(params.lam, params.d))
            )

        def one(rep):
            s = _equilibrium_rep(cfg, params, ci, rep)
            return est.chaos_gap_single(s, r, params, reference, limit_ref, pooled, debias)

        gaps = _map_reps(cfg, one)
        cells.append(
            {
                "cell": _cell_header(params),
                "r": r,
                "reference": reference,
                "chaos_gap": _estimate_dict(est.aggregate(gaps)),
            }
        )
    return cells


def initial_tail(initial: Mapping[str, Any]) -> TailVector:
    """Exact tail Pr(X0 >= k) of a supported iid initial-length family."""
    family = initial.get("family")
    if family == "point":
        m = int(initial.get("value", 0))
        return TailVector(np.ones(m + 1))
    if family == "trunc-geom":
        q = float(initial["q"])
        cap = int(initial.get("cap", 10))
        if not (0.0 < q < 1.0):
            raise ValueError("trunc-geom q must lie in (0, 1)")
        weights = q ** np.arange(cap + 1)
        pmf = weights / weights.sum()
        tail = 1.0 - np.concatenate(([0.0], np.cumsum(pmf)[:-1]))
        return TailVector(np.clip(tail, 0.0, 1.0))
    if family == "uniform":
        high = int(initial["high"])
        tail = (high + 1 - np.arange(high + 1)) / (high + 1)
        return TailVector(tail)
    raise ValueError(f"unsupported initial family {family!r}")


def sample_initial(initial: Mapping[str, Any], n: int, rng: np.random.Generator) -> np.ndarray:
    tail = initial_tail(initial).v
    pmf = np.concatenate((tail, [0.0]))
    pmf = pmf[:-1] - pmf[1:]
    return rng.choice(pmf.size, size=n, p=pmf).astype(np.int32)


def default_time_grid(t_max: float) -> np.ndarray:
    """Geometric grid {0, 0.5, 1, 2, 4, ...} capped at t_max."""
    points = [0.0]
    t = 0.5
    while t < t_max:
        points.append(t)
        t *= 2.0
    points.append(float(t_max))
    return np.asarray(points)


def _scenario_nonequilibrium_tracking(cfg: ExperimentConfig) -> list[dict]:
    initial = cfg.options.get("initial", {"family": "point", "value": 0})
    cells = []
    for ci, params in enumerate(cfg.grid):
        t_max = float(cfg.options.get("t_max") or 20.0 * math.log(max(params.n, 3)))
        grid = default_time_grid(t_max)
        v0 = initial_tail(initial)
        K = max(v0.K, adaptive_truncation(params.lam, params.d))
        ode_cfg = OdeConfig(K=K, step_tol=1e-10)
        laws = []
        v = v0
        for t_prev, t_next in zip(np.concatenate(([0.0], grid[:-1])), grid):
            v = integrate(v, float(t_next - t_prev), params, ode_cfg)
            laws.append(tail_to_law(v))

        def one(rep):
            ss = rep_seed(cfg.master_seed, ci, rep)
            rng = np.random.default_rng(ss)
            x0 = sample_initial(initial, params.n, rng)
            from . import _sim

            snaps = _sim.simulate_snapshots(params, x0, grid, rng)
            tvs = [
                est.tv_distance(est.empirical_marginal(row), law)
                for row, law in zip(snaps, laws)
            ]
            return np.asarray(tvs)

        per_rep = np.stack(_map_reps(cfg, one))
        sup_tv = est.aggregate(per_rep.max(axis=1))
        cells.append(
            {
                "cell": _cell_header(params),
                "time_grid": grid.tolist(),
                "mean_tv_curve": per_rep.mean(axis=0).tolist(),
                "sup_tv": _estimate_dict(sup_tv),
            }
        )
    return cells


def _scenario_mixing_diagnostic(cfg: ExperimentConfig) -> list[dict]:
    level = int(cfg.options.get("congested_level", 2))
    cells = []
    for ci, params in enumerate(cfg.grid):
        horizon = float(cfg.options.get("t_max") or 20.0 * (level + math.log(max(params.n, 3))))

        def one(rep):
            seed = int(rep_seed(cfg.master_seed, ci, rep).generate_state(1)[0])
            stream = generate_events(params, horizon, seed)
            x = np.zeros(params.n, dtype=np.int64)
            y = np.full(params.n, level, dtype=np.int64)
            return coalescence_time(x, y, stream)

        times = np.asarray(_map_reps(cfg, one))
        finite = times[np.isfinite(times)]
        cells.append(
            {
                "cell": _cell_header(params),
                "horizon": horizon,
                "coalesced_fraction": float(np.isfinite(times).mean()),
                "median_coalescence": float(np.median(finite)) if finite.size else None,
                "q25": float(np.quantile(finite, 0.25)) if finite.size else None,
                "q75": float(np.quantile(finite, 0.75)) if finite.size else None,
            }
        )
    return cells


def _scenario_max_queue(cfg: ExperimentConfig) -> list[dict]:
    cells = []
    for ci, params in enumerate(cfg.grid):
        report = est.max_queue_stats(
            (_equilibrium_rep(cfg, params, ci, rep) for rep in range(cfg.replications)),
            params,
        )
        cells.append(
            {
                "cell": _cell_header(params),
                "istar": report.istar,
                "two_point": list(report.two_point) if report.two_point else None,
                "two_point_mass": report.two_point_mass,
                "tail_bound_cells": report.tail_bound_cells,
                "tail_bound_violations": report.tail_bound_violations,
                "max_law": {str(k): p for (k,), p in report.law.pmf.items()},
            }
        )
    return cells


def _scenario_variance_study(cfg: ExperimentConfig) -> list[dict]:
    cells = []
    for ci, params in enumerate(cfg.grid):

        def one(rep):
            s = _equilibrium_rep(cfg, params, ci, rep)
            f = (s >= 1).sum(axis=1)
            u1 = (s >= 1).mean(axis=1)
            return (
                float(f.var(ddof=1)),
                float((s >= 2).mean()) - params.lam ** (params.d + 1),
                float((s >= 2).mean() - params.lam * (u1**params.d).mean()),
            )

        per_rep = _map_reps(cfg, one)
        var_e = est.aggregate(r[0] for r in per_rep)
        cells.append(
            {
                "cell": _cell_header(params),
                "var_nonempty": _estimate_dict(var_e),
                "var_nonempty_over_n": _estimate_dict(
                    est.EstimateWithError(
                        var_e.value / params.n, var_e.std_error / params.n, var_e.replication_count
                    )
                ),
                "u2_excess": _estimate_dict(est.aggregate(r[1] for r in per_rep)),
                "u2_identity_gap": _estimate_dict(est.aggregate(r[2] for r in per_rep)),
            }
        )
    return cells


def _scenario_oracle_validation(cfg: ExperimentConfig) -> list[dict]:
    cap = cfg.options.get("cap")
    k_values = [int(k) for k in cfg.options.get("k_values", (1, 2, 3))]
    cells = []
    for ci, params in enumerate(cfg.grid):
        chain = build_chain(params, None if cap is None else int(cap))
        pi = stationary(chain)
        exact = exact_marginal(chain, pi)

        def one(rep):
            s = _equilibrium_rep(cfg, params, ci, rep)
            return np.bincount(s.ravel()), est.tv_distance(est.empirical_marginal(s), exact)

        per_rep = _map_reps(cfg, one)
        pooled = _pooled_law([r[0] for r in per_rep])
        cells.append(
            {
                "cell": _cell_header(params),
                "cap": chain.cap,
                "tv_pooled_to_oracle": est.tv_distance(pooled, exact),
                "tv_to_oracle": _estimate_dict(est.aggregate(r[1] for r in per_rep)),
                "oracle_identity_residuals": {
                    str(k): generator_identity_residual(chain, pi, k) for k in k_values
                },
            }
        )
    return cells


_SCENARIO_FUNCS: dict[str, Callable[[ExperimentConfig], list[dict]]] = {
    "equilibrium-marginal": _scenario_equilibrium_marginal,
    "marginal-scaling": _scenario_marginal_scaling,
    "chaos-scaling": _scenario_chaos_scaling,
    "nonequilibrium-tracking": _scenario_nonequilibrium_tracking,
    "mixing-diagnostic": _scenario_mixing_diagnostic,
    "max-queue-concentration": _scenario_max_queue,
    "variance-study": _scenario_variance_study,
    "oracle-validation": _scenario_oracle_validation,
}


def run(config: ExperimentConfig) -> ResultSet:
    """Execute the configured scenario over its grid; deterministic given
    (config, master seed) apart from wall-clock metadata."""
    start = time.perf_counter()
    cells = _SCENARIO_FUNCS[config.scenario](config)
    result = ResultSet(
        scenario=config.scenario,
        config=config.echo(),
        cells=cells,
        wall_clock_seconds=time.perf_counter() - start,
    )
    if config.output:
        result.save(config.output)
    return result

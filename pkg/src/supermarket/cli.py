"""Command-line entry points.

Exit codes: 0 success, 1 config validation failure, 2 runtime failure.
The only environment override is SUPERMARKET_WORKERS (worker count).
"""
from __future__ import annotations

import dataclasses
import os
import sys

import click
import numpy as np

from .experiments import load_config, run as run_experiment
from .meanfield import OdeConfig, adaptive_truncation, integrate, limit_law
from .model import ModelParams
from .oracle import build_chain, exact_marginal, stationary


def _apply_worker_override(config):
    override = os.environ.get("SUPERMARKET_WORKERS")
    if override is None:
        return config
    return dataclasses.replace(config, workers=max(1, int(override)))


@click.group()
def main() -> None:
    """Supermarket-model simulation and verification harness."""


@main.command("validate")
@click.argument("config_path", type=click.Path(exists=False))
def validate_cmd(config_path: str) -> None:
    """Parse and validate an experiment config; print a summary."""
    try:
        config = load_config(config_path)
    except (OSError, ValueError) as exc:
        click.echo(f"invalid config: {exc}", err=True)
        sys.exit(1)
    click.echo(
        f"ok: scenario={config.scenario} cells={len(config.grid)} "
        f"replications={config.replications} seed={config.master_seed}"
    )


@main.command("run")
@click.argument("config_path", type=click.Path(exists=False))
def run_cmd(config_path: str) -> None:
    """Run an experiment config and write its JSON result set."""
    try:
        config = _apply_worker_override(load_config(config_path))
    except (OSError, ValueError) as exc:
        click.echo(f"invalid config: {exc}", err=True)
        sys.exit(1)
    try:
        result = run_experiment(config)
    except Exception as exc:  # noqa: BLE001 - per-run failures map to exit code 2
        click.echo(f"run failed: {exc}", err=True)
        sys.exit(2)
    dest = config.output or "<not written>"
    click.echo(f"done: scenario={config.scenario} cells={len(result.cells)} output={dest}")


@main.command("oracle")
@click.argument("n", type=int)
@click.argument("lam", type=float)
@click.argument("d", type=int)
@click.argument("cap", type=int)
def oracle_cmd(n: int, lam: float, d: int, cap: int) -> None:
    """Print the exact stationary single-queue pmf as CSV (k, prob)."""
    try:
        params = ModelParams(n, lam, d)
        chain = build_chain(params, cap)
        law = exact_marginal(chain, stationary(chain))
    except ValueError as exc:
        click.echo(f"invalid parameters: {exc}", err=True)
        sys.exit(1)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"oracle solve failed: {exc}", err=True)
        sys.exit(2)
    click.echo("k,prob")
    for k, p in law.scalar_items():
        click.echo(f"{k},{p:.15g}")


@main.command("ode")
@click.argument("lam", type=float)
@click.argument("d", type=int)
@click.argument("t", type=float)
def ode_cmd(lam: float, d: int, t: float) -> None:
    """Integrate the tail ODE from the empty system and print v_t as CSV."""
    try:
        if not (0.0 < lam < 1.0) or d < 1 or t < 0:
            raise ValueError("require 0 < lam < 1, d >= 1, t >= 0")
        K = adaptive_truncation(lam, d)
        params = ModelParams(1, lam, d)
        v0 = np.zeros(K + 1)
        v0[0] = 1.0
        v = integrate(v0, t, params, OdeConfig(K=K))
    except ValueError as exc:
        click.echo(f"invalid parameters: {exc}", err=True)
        sys.exit(1)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"integration failed: {exc}", err=True)
        sys.exit(2)
    click.echo("k,v")
    for k in range(v.K + 1):
        click.echo(f"{k},{v.get(k):.15g}")


if __name__ == "__main__":
    main()

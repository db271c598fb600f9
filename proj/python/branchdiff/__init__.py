"""Monte Carlo estimators for semilinear parabolic PDEs based on marked branching diffusions."""

import json

from . import _core
from ._core import (
    FdError,
    PopulationExplosion,
    estimate,
    exact_solution,
    expected_population,
    fd_reference,
    gamma_survival,
    presets,
    psi,
)


def check(preset, q=2.0, scheme="a", kappa=0.5, theta=2.5, grid=2000):
    """Moment-condition report as a dict; infinite quantities appear as the string "inf"."""
    return json.loads(_core.check(preset, q, scheme, kappa, theta, grid))


def tree(preset, seed=1, sample=0, scheme="a"):
    """One branching skeleton as a dict (horizon plus particle list)."""
    return json.loads(_core.tree_json(preset, seed, sample, scheme))


def estimate_config(config):
    """Runs a configuration dict with the same fields as the CLI --config file."""
    return _core.estimate_config(json.dumps(config))


__all__ = [
    "FdError",
    "PopulationExplosion",
    "check",
    "estimate",
    "estimate_config",
    "exact_solution",
    "expected_population",
    "fd_reference",
    "gamma_survival",
    "presets",
    "psi",
    "tree",
]

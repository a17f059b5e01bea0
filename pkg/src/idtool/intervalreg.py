"""Linear regression with an interval-censored dependent variable.

The latent outcome y* = alpha + beta*w + eps is only known to lie in an
observed interval [y_lo, y_hi].  Two formulations of the same economic
content ship here:

* ``proper``: the interval restriction enters as a support restriction
  (sections are the observed intervals) with the two orthogonality
  moments (u - a - b*w) and w*(u - a - b*w);
* ``dagger``: the latent line is left unrestricted and the interval
  restriction is re-encoded as a third moment row 1{y_lo <= u <= y_hi} - 1.

The dagger form is deliberately badly posed for the sphere criterion
(its moment image is unbounded along the regression directions), which
makes it the canonical stress test for the divergence detector and the
reduction machinery.

Observed vector layout: z = (y_lo, y_hi, w).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (DiscreteDistribution, LatentDomain, ModelSpec, MomentSpec,
                   ParameterBox, SupportPredicate)
from .errors import ConfigError

__all__ = ["IntervalRegConfig", "build_interval_model", "simulate_interval_data"]


@dataclass(frozen=True)
class IntervalRegConfig:
    """Design of the interval-regression model and its default test bed."""

    w_support: tuple[float, ...] = (-1.0, 0.0, 1.0)
    interval_halfwidths: tuple[float, float] = (0.3, 0.4)   # (below, above)
    formulation: str = "proper"                             # proper | dagger
    param_bounds: tuple[tuple[float, float], ...] = ((-2.0, 2.0), (-2.0, 2.0))
    param_resolution: tuple[int, int] = (41, 41)
    truncation: float = 5.0
    latent_points: int = 201    # step 0.05 at the default truncation

    def __post_init__(self):
        if self.formulation not in ("proper", "dagger"):
            raise ConfigError(f"unknown formulation {self.formulation!r}")
        below, above = self.interval_halfwidths
        if below < 0 or above < 0:
            raise ConfigError("interval halfwidths must be nonnegative")
        if len(self.w_support) == 0:
            raise ConfigError("w_support must be nonempty")


def _residual(u: np.ndarray, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
    w = z[2]
    return u[:, 0] - theta[0] - theta[1] * w


def _r2_proper(u: np.ndarray, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
    e = _residual(u, z, theta)
    return np.column_stack([e, z[2] * e])


def _r2_dagger(u: np.ndarray, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
    e = _residual(u, z, theta)
    inside = (z[0] <= u[:, 0]) & (u[:, 0] <= z[1])
    return np.column_stack([e, z[2] * e, inside.astype(float) - 1.0])


def _support_proper(u: np.ndarray, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return (z[0] <= u[:, 0]) & (u[:, 0] <= z[1])


def _support_dagger(u: np.ndarray, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return np.ones(u.shape[0], dtype=bool)


def build_interval_model(cfg: IntervalRegConfig) -> ModelSpec:
    """Model over a scalar latent line; see module docstring for the forms."""
    latent = LatentDomain(dim=1, box=((-math.inf, math.inf),),
                          default_truncation=cfg.truncation,
                          points_per_dim=cfg.latent_points)
    params = ParameterBox(dim=2, bounds=tuple(cfg.param_bounds),
                          resolution=tuple(cfg.param_resolution))
    if cfg.formulation == "proper":
        moments = MomentSpec(dim_r1=0, dim_r2=2, r2=_r2_proper)
        support = SupportPredicate(contains=_support_proper)
        label = "interval_proper"
    else:
        moments = MomentSpec(dim_r1=0, dim_r2=3, r2=_r2_dagger)
        support = SupportPredicate(contains=_support_dagger)
        label = "interval_dagger"
    return ModelSpec(latent=latent, support=support, moments=moments,
                     params=params, label=label)


def simulate_interval_data(cfg: IntervalRegConfig, theta0, n: int,
                           eps_law: tuple | None = None,
                           seed: int = 0) -> DiscreteDistribution:
    """Draw n observations from the design at theta0 and aggregate atoms.

    ``eps_law`` is a (values, probs) pair for a finite mean-zero error
    law; None means the error is degenerate at zero.  Intervals are
    built as [y* - below, y* + above].  Fully deterministic given seed.
    """
    if n < 1:
        raise ConfigError("need at least one observation")
    theta0 = np.asarray(theta0, dtype=float).ravel()
    if theta0.shape[0] != 2:
        raise ConfigError("theta0 must be (alpha, beta)")
    if eps_law is None:
        eps_values, eps_probs = np.array([0.0]), np.array([1.0])
    else:
        eps_values = np.asarray(eps_law[0], dtype=float)
        eps_probs = np.asarray(eps_law[1], dtype=float)
        if abs(eps_probs.sum() - 1.0) > 1e-12:
            raise ConfigError("eps_law probabilities must sum to 1")
        if abs(float(eps_values @ eps_probs)) > 1e-12:
            raise ConfigError("eps_law must have mean zero")
    rng = np.random.default_rng(seed)
    w = rng.choice(np.asarray(cfg.w_support, dtype=float), size=n)
    eps = rng.choice(eps_values, p=eps_probs, size=n)
    y_star = theta0[0] + theta0[1] * w + eps
    below, above = cfg.interval_halfwidths
    rows = np.column_stack([y_star - below, y_star + above, w])
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    return DiscreteDistribution.from_arrays(uniq, counts / n)

"""Static entry game with complete information.

Firm j observes a profit-shifter vector x_j and a payoff shock u_j and
enters (y_j = 1) or stays out.  Entry pays x_j' alpha minus a rivalry
penalty delta_j per entering rival plus u_j; staying out pays zero.
The observed outcome is assumed to be a pure-strategy Nash equilibrium,
which exists for every shock profile when all delta_j >= 0.

Observed vector layout: z = (x stacked firm-major, y), so a market with
n firms and per-firm covariate dimension dx has dim(z) = n*dx + n.

Instrument convention for moment rows: a constant is prepended to the
market covariates; when all firms share the same covariate vector the
shared row is used once, otherwise the rows are stacked.

Moment variants:

* ``median``: per firm, instruments times (1{u_j <= 0} - 1/2);
* ``median_symmetric``: median plus, per firm and rival entry count a,
  instruments times (1{u_j >= c} - 1{u_j <= -c}) at the indifference
  cutoff c = -x_j' alpha + delta_j * a;
* ``uncorr_variance``: per firm, u_j times instruments plus the row
  u_j^2 - tau_j * sigma2_R_j, with tau appended to the parameter vector.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .augment import CounterfactualSpec
from .core import (DiscreteDistribution, LatentDomain, ModelSpec, MomentSpec,
                   ParameterBox, SupportPredicate)
from .errors import ConfigError

__all__ = [
    "EntryGameConfig",
    "FirstLex",
    "Random",
    "ShiftX",
    "Merger",
    "NewCompetitor",
    "ExpectedEntrants",
    "ProbUnserved",
    "TotalSurplus",
    "ProfitGivenEntry",
    "enumerate_pure_ne",
    "build_entry_model",
    "build_entry_counterfactual",
    "simulate_entry_data",
    "default_entry_config",
]

DEFAULT_U_LAW = (np.array([-1.5, -0.5, 0.5, 1.5]), np.full(4, 0.25))


@dataclass(frozen=True)
class EntryGameConfig:
    n_firms: int
    x_support: tuple                       # per market: (n_firms, dx) array
    alpha: np.ndarray                      # data-generating coefficient
    delta: np.ndarray                      # per-firm rivalry effect, >= 0
    moment_variant: str = "median"
    tau: np.ndarray | None = None          # uncorr_variance only, in [0, 1]
    sigma2_R: np.ndarray | None = None     # uncorr_variance only, > 0
    alpha_bounds: tuple = ((-2.0, 2.0),)
    alpha_resolution: tuple = (21,)
    delta_bounds: tuple = ((0.0, 2.0), (0.0, 2.0))
    delta_resolution: tuple = (21, 21)
    tau_bounds: tuple = ((0.0, 1.0), (0.0, 1.0))
    tau_resolution: tuple = (5, 5)
    truncation: float = 5.0
    latent_points: int = 21

    def __post_init__(self):
        if self.n_firms not in (2, 3):
            raise ConfigError("n_firms must be 2 or 3")
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float).ravel())
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=float).ravel())
        xs = tuple(np.atleast_2d(np.asarray(x, dtype=float)) for x in self.x_support)
        object.__setattr__(self, "x_support", xs)
        if not xs:
            raise ConfigError("x_support must be nonempty")
        dx = xs[0].shape[1]
        for x in xs:
            if x.shape != (self.n_firms, dx):
                raise ConfigError(
                    f"every x_support entry must be ({self.n_firms}, {dx})")
        if self.alpha.shape[0] != dx:
            raise ConfigError("alpha length must match covariate dimension")
        if self.delta.shape[0] != self.n_firms:
            raise ConfigError("delta must have one entry per firm")
        if np.any(self.delta < 0):
            raise ConfigError("delta must be nonnegative")
        if self.moment_variant not in ("median", "median_symmetric",
                                       "uncorr_variance"):
            raise ConfigError(f"unknown moment variant {self.moment_variant!r}")
        if self.moment_variant == "uncorr_variance":
            if self.tau is None or self.sigma2_R is None:
                raise ConfigError("uncorr_variance needs tau and sigma2_R")
            tau = np.asarray(self.tau, dtype=float).ravel()
            s2 = np.asarray(self.sigma2_R, dtype=float).ravel()
            object.__setattr__(self, "tau", tau)
            object.__setattr__(self, "sigma2_R", s2)
            if tau.shape[0] != self.n_firms or s2.shape[0] != self.n_firms:
                raise ConfigError("tau and sigma2_R need one entry per firm")
            if np.any((tau < 0) | (tau > 1)):
                raise ConfigError("tau must lie in [0, 1]")
            if np.any(s2 <= 0):
                raise ConfigError("sigma2_R must be positive")

    @property
    def dx(self) -> int:
        return self.x_support[0].shape[1]

    @property
    def dim_theta(self) -> int:
        extra = self.n_firms if self.moment_variant == "uncorr_variance" else 0
        return self.dx + self.n_firms + extra

    def theta0(self) -> np.ndarray:
        parts = [self.alpha, self.delta]
        if self.moment_variant == "uncorr_variance":
            parts.append(self.tau)
        return np.concatenate(parts)

    def split_theta(self, theta: np.ndarray):
        theta = np.asarray(theta, dtype=float).ravel()
        alpha = theta[:self.dx]
        delta = theta[self.dx:self.dx + self.n_firms]
        tau = theta[self.dx + self.n_firms:]
        return alpha, delta, tau

    def split_z(self, z: np.ndarray):
        z = np.asarray(z, dtype=float).ravel()
        X = z[:self.n_firms * self.dx].reshape(self.n_firms, self.dx)
        y = z[self.n_firms * self.dx:]
        return X, y

    def instruments(self, z: np.ndarray) -> np.ndarray:
        X, _ = self.split_z(z)
        if np.all(X == X[0]):
            return np.concatenate([[1.0], X[0]])
        return np.concatenate([[1.0], X.ravel()])


def default_entry_config(moment_variant: str = "median", n_firms: int = 2,
                         **overrides) -> EntryGameConfig:
    """Two market types with a shared scalar covariate in {-1, +1}."""
    base = dict(
        n_firms=n_firms,
        x_support=tuple(np.full((n_firms, 1), v) for v in (-1.0, 1.0)),
        alpha=np.array([0.4]),
        delta=np.array([1.0, 1.2, 0.8][:n_firms]),
        moment_variant=moment_variant,
    )
    if moment_variant == "uncorr_variance":
        base["tau"] = np.full(n_firms, 0.5)
        base["sigma2_R"] = np.full(n_firms, 2.0)
        base["delta_bounds"] = tuple((0.0, 2.0) for _ in range(n_firms))
        base["delta_resolution"] = tuple(21 for _ in range(n_firms))
        base["tau_bounds"] = tuple((0.0, 1.0) for _ in range(n_firms))
        base["tau_resolution"] = tuple(5 for _ in range(n_firms))
    elif n_firms == 3:
        base["delta_bounds"] = tuple((0.0, 2.0) for _ in range(3))
        base["delta_resolution"] = (11, 11, 11)
    base.update(overrides)
    return EntryGameConfig(**base)


def _ne_mask_fixed_y(U: np.ndarray, X: np.ndarray, y: np.ndarray,
                     alpha: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Rows of U for which the fixed profile y is a pure-strategy NE."""
    base = X @ alpha
    rivals = y.sum() - y
    ok = np.ones(U.shape[0], dtype=bool)
    for j in range(y.shape[0]):
        margin = base[j] - delta[j] * rivals[j] + U[:, j]
        ok &= (margin >= 0.0) if y[j] == 1 else (margin <= 0.0)
    return ok


def _ne_mask_var_y(Y: np.ndarray, U: np.ndarray, X: np.ndarray,
                   alpha: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Row-wise NE check when the action profile varies with the row."""
    base = X @ alpha
    rivals = Y.sum(axis=1, keepdims=True) - Y
    margin = base[None, :] - delta[None, :] * rivals + U
    cond = np.where(Y == 1.0, margin >= 0.0, margin <= 0.0)
    return cond.all(axis=1)


def enumerate_pure_ne(x: np.ndarray, u: np.ndarray, theta: np.ndarray,
                      n_firms: int) -> list[tuple[int, ...]]:
    """All pure-strategy Nash profiles, in lexicographic order.

    ``theta`` is read as (alpha, delta, ...); trailing auxiliary
    parameters (tau) are ignored for payoffs.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.asarray(u, dtype=float).ravel()
    theta = np.asarray(theta, dtype=float).ravel()
    dx = x.shape[1]
    alpha = theta[:dx]
    delta = theta[dx:dx + n_firms]
    out = []
    for y in itertools.product((0, 1), repeat=n_firms):
        ya = np.asarray(y, dtype=float)
        if _ne_mask_fixed_y(u[None, :], x, ya, alpha, delta)[0]:
            out.append(y)
    return out


def _median_rows(U: np.ndarray, instr: np.ndarray, firms: int) -> np.ndarray:
    cols = []
    for j in range(firms):
        s = (U[:, j] <= 0.0).astype(float) - 0.5
        cols.append(s[:, None] * instr[None, :])
    return np.hstack(cols)


def build_entry_model(cfg: EntryGameConfig) -> ModelSpec:
    """Entry-game ModelSpec over unbounded shocks u in R^n_firms."""
    n, dx = cfg.n_firms, cfg.dx
    variant = cfg.moment_variant

    def contains(U, z, theta):
        X, y = cfg.split_z(z)
        alpha, delta, _ = cfg.split_theta(theta)
        return _ne_mask_fixed_y(U, X, y, alpha, delta)

    def r2(U, z, theta):
        X, _ = cfg.split_z(z)
        alpha, delta, tau = cfg.split_theta(theta)
        instr = cfg.instruments(z)
        if variant == "median":
            return _median_rows(U, instr, n)
        if variant == "median_symmetric":
            blocks = [_median_rows(U, instr, n)]
            for j in range(n):
                for a in range(n):
                    c = -float(X[j] @ alpha) + delta[j] * a
                    s = ((U[:, j] >= c).astype(float)
                         - (U[:, j] <= -c).astype(float))
                    blocks.append(s[:, None] * instr[None, :])
            return np.hstack(blocks)
        blocks = []
        for j in range(n):
            blocks.append(U[:, j][:, None] * instr[None, :])
            blocks.append((U[:, j] ** 2 - tau[j] * cfg.sigma2_R[j])[:, None])
        return np.hstack(blocks)

    k = cfg.instruments(np.concatenate([cfg.x_support[0].ravel(),
                                        np.zeros(n)])).shape[0]
    if variant == "median":
        dim_r2 = n * k
    elif variant == "median_symmetric":
        dim_r2 = n * k + n * n * k
    else:
        dim_r2 = n * (k + 1)

    bounds = tuple(cfg.alpha_bounds) + tuple(cfg.delta_bounds[:n])
    resolution = tuple(cfg.alpha_resolution) + tuple(cfg.delta_resolution[:n])
    if variant == "uncorr_variance":
        bounds += tuple(cfg.tau_bounds[:n])
        resolution += tuple(cfg.tau_resolution[:n])
    params = ParameterBox(dim=len(bounds), bounds=bounds, resolution=resolution)
    latent = LatentDomain(dim=n, box=tuple((-math.inf, math.inf) for _ in range(n)),
                          default_truncation=cfg.truncation,
                          points_per_dim=cfg.latent_points)
    return ModelSpec(latent=latent,
                     support=SupportPredicate(contains=contains),
                     moments=MomentSpec(dim_r1=0, dim_r2=dim_r2, r2=r2),
                     params=params,
                     label=f"entry_{variant}")


# ---------------------------------------------------------------------------
# counterfactual cases and targets


@dataclass(frozen=True)
class ShiftX:
    """Transform profit shifters x -> phi(x), shocks unchanged."""
    phi: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Merger:
    """The two entrants merge; the merged firm inherits componentwise
    maxima of the shifters and the maximum shock."""


@dataclass(frozen=True)
class NewCompetitor:
    """A third potential entrant with constructed shifters and rivalry."""
    phi_x: Callable[[np.ndarray, np.ndarray], np.ndarray]
    phi_delta: Callable[[float, float], float]


@dataclass(frozen=True)
class ExpectedEntrants:
    pass


@dataclass(frozen=True)
class ProbUnserved:
    pass


@dataclass(frozen=True)
class TotalSurplus:
    pass


@dataclass(frozen=True)
class ProfitGivenEntry:
    firm: int = 0


def _all_profiles(n: int) -> np.ndarray:
    return np.array(list(itertools.product((0.0, 1.0), repeat=n)))


def build_entry_counterfactual(cfg: EntryGameConfig, case, target,
                               theta_tilde_bounds: tuple[float, float] | None = None,
                               theta_tilde_resolution: int = 41,
                               ) -> CounterfactualSpec:
    """Counterfactual spec for one intervention case and one target.

    The correspondence enforces that the counterfactual profile is a
    pure-strategy NE of the modified game (cases ShiftX and
    NewCompetitor) or optimal entry of the merged firm (Merger).  The
    target's defining moment is affine in the parameter; conditional
    profit is ratio-type and solved by bisection downstream.
    """
    if cfg.n_firms != 2:
        raise ConfigError("counterfactual constructions assume a 2-firm baseline")
    n, dx = cfg.n_firms, cfg.dx

    if isinstance(case, ShiftX):
        n_cf = n
        cf_latent = None

        def cf_env(z, theta):
            X, _ = cfg.split_z(z)
            alpha, delta, _ = cfg.split_theta(theta)
            return np.atleast_2d(np.asarray(case.phi(X), dtype=float)), alpha, delta

        def shocks(u, u_cf):
            return u

        label = "shift_x"
    elif isinstance(case, Merger):
        n_cf = 1
        cf_latent = None

        def cf_env(z, theta):
            X, _ = cfg.split_z(z)
            alpha, delta, _ = cfg.split_theta(theta)
            return np.max(X, axis=0)[None, :], alpha, np.zeros(1)

        def shocks(u, u_cf):
            return np.max(u, axis=1, keepdims=True)

        label = "merger"
    elif isinstance(case, NewCompetitor):
        n_cf = n + 1
        cf_latent = LatentDomain(dim=1, box=((-math.inf, math.inf),),
                                 default_truncation=cfg.truncation,
                                 points_per_dim=cfg.latent_points)

        def cf_env(z, theta):
            X, _ = cfg.split_z(z)
            alpha, delta, _ = cfg.split_theta(theta)
            x2 = np.asarray(case.phi_x(X[0], X[1]), dtype=float).ravel()
            d2 = float(case.phi_delta(float(delta[0]), float(delta[1])))
            return np.vstack([X, x2[None, :]]), alpha, np.append(delta, d2)

        def shocks(u, u_cf):
            return np.hstack([u, u_cf])

        label = "new_competitor"
    else:
        raise ConfigError(f"unknown counterfactual case {case!r}")

    def correspondence(y_cf, u_cf, z, u, theta):
        X_cf, alpha, delta_cf = cf_env(z, theta)
        return _ne_mask_var_y(y_cf, shocks(u, u_cf), X_cf, alpha, delta_cf)

    def profits(y_cf, u_cf, z, u, theta):
        X_cf, alpha, delta_cf = cf_env(z, theta)
        base = X_cf @ alpha
        rivals = y_cf.sum(axis=1, keepdims=True) - y_cf
        return y_cf * (base[None, :] - delta_cf[None, :] * rivals
                       + shocks(u, u_cf))

    r_tilde = None
    dim_r_tilde = 0
    if isinstance(case, NewCompetitor):
        def r_tilde(y_cf, u_cf, z, u, theta):
            instr = cfg.instruments(z)
            s = (u_cf[:, 0] <= 0.0).astype(float) - 0.5
            return s[:, None] * instr[None, :]

        dim_r_tilde = cfg.instruments(
            np.concatenate([cfg.x_support[0].ravel(), np.zeros(n)])).shape[0]

    kind = "mean"
    if isinstance(target, ExpectedEntrants):
        bounds = theta_tilde_bounds or (0.0, float(n_cf))

        def m_tilde(y_cf, u_cf, z, u, theta, theta_cf):
            return y_cf.sum(axis=1, keepdims=True) - theta_cf[0]

        tlabel = "expected_entrants"
    elif isinstance(target, ProbUnserved):
        bounds = theta_tilde_bounds or (0.0, 1.0)

        def m_tilde(y_cf, u_cf, z, u, theta, theta_cf):
            unserved = (y_cf.sum(axis=1, keepdims=True) == 0.0).astype(float)
            return unserved - theta_cf[0]

        tlabel = "prob_unserved"
    elif isinstance(target, TotalSurplus):
        bounds = theta_tilde_bounds or (-50.0, 50.0)

        def m_tilde(y_cf, u_cf, z, u, theta, theta_cf):
            return profits(y_cf, u_cf, z, u, theta).sum(axis=1, keepdims=True) \
                - theta_cf[0]

        tlabel = "total_surplus"
    elif isinstance(target, ProfitGivenEntry):
        j = target.firm
        if not 0 <= j < n_cf:
            raise ConfigError(f"firm index {j} outside counterfactual game")
        bounds = theta_tilde_bounds or (-20.0, 20.0)
        kind = "ratio"

        def m_tilde(y_cf, u_cf, z, u, theta, theta_cf):
            pi = profits(y_cf, u_cf, z, u, theta)
            return (pi[:, j] - theta_cf[0] * y_cf[:, j])[:, None]

        tlabel = f"profit_given_entry_{j}"
    else:
        raise ConfigError(f"unknown counterfactual target {target!r}")

    box = ParameterBox(dim=1, bounds=(tuple(bounds),),
                       resolution=(theta_tilde_resolution,))
    return CounterfactualSpec(
        cf_outcome_domain=_all_profiles(n_cf),
        correspondence=correspondence,
        m_tilde=m_tilde,
        dim_m_tilde=1,
        dim_theta_tilde=1,
        theta_tilde_box=box,
        cf_latent=cf_latent,
        r_tilde=r_tilde,
        dim_r_tilde=dim_r_tilde,
        parameter_kind=kind,
        label=f"{label}/{tlabel}")


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class FirstLex:
    """Select the lexicographically smallest equilibrium."""


@dataclass(frozen=True)
class Random:
    """Select an equilibrium uniformly at random with its own seed."""
    seed: int = 0


def simulate_entry_data(cfg: EntryGameConfig, theta0, n_markets: int,
                        selection=FirstLex(), u_law: tuple | None = None,
                        seed: int = 0) -> DiscreteDistribution:
    """Empirical distribution of (x, y) from the game simulated at theta0.

    Shocks are drawn per firm i.i.d. from the finite symmetric law
    ``u_law`` (values, probs); market covariates uniformly from
    ``cfg.x_support``.  One equilibrium per market is selected by the
    given rule.  Fully deterministic given the seeds.
    """
    if n_markets < 1:
        raise ConfigError("n_markets must be positive")
    theta0 = np.asarray(theta0, dtype=float).ravel()
    if u_law is None:
        values, probs = DEFAULT_U_LAW
    else:
        values = np.asarray(u_law[0], dtype=float)
        probs = np.asarray(u_law[1], dtype=float)
    if abs(probs.sum() - 1.0) > 1e-12:
        raise ConfigError("u_law probabilities must sum to 1")
    law = {float(v): float(p) for v, p in zip(values, probs)}
    for v, p in law.items():
        if abs(law.get(-v, -1.0) - p) > 1e-12:
            raise ConfigError("u_law must be symmetric around zero")
    rng = np.random.default_rng(seed)
    sel_rng = (np.random.default_rng(selection.seed)
               if isinstance(selection, Random) else None)
    x_idx = rng.integers(0, len(cfg.x_support), size=n_markets)
    u = rng.choice(values, p=probs, size=(n_markets, cfg.n_firms))
    rows = []
    for m in range(n_markets):
        x = cfg.x_support[x_idx[m]]
        ne = enumerate_pure_ne(x, u[m], theta0, cfg.n_firms)
        assert ne, "no pure-strategy equilibrium despite delta >= 0"
        if sel_rng is None:
            y = ne[0]
        else:
            y = ne[sel_rng.integers(len(ne))]
        rows.append(np.concatenate([x.ravel(), np.asarray(y, dtype=float)]))
    rows = np.vstack(rows)
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    return DiscreteDistribution.from_arrays(uniq, counts / n_markets)

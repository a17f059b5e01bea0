"""Embedding counterfactual restrictions into an augmented model.

A counterfactual exercise adds three ingredients to a baseline model: a
correspondence restricting the counterfactual outcome (and any new
latent primitives) given the baseline variables, optional supplementary
moment rows for the new primitives, and a defining moment for the
counterfactual parameter itself.  Stacking these with the baseline
restrictions yields a single model over the product latent space
u' = (u, y_cf, u_cf) and the extended parameter (theta, theta_cf), so
the same scan and LP machinery identifies counterfactual parameters.

Batched-call contract for the user-provided functions, with n the
number of latent product points being evaluated at once:

* ``correspondence(y_cf (n,m), u_cf (n,dc) | None, z, u (n,du), theta) -> (n,) bool``
* ``r_tilde(y_cf, u_cf, z, u, theta) -> (n, dim_r_tilde)``
* ``m_tilde(y_cf, u_cf, z, u, theta, theta_cf) -> (n, dim_m_tilde)``
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (DiscreteDistribution, LatentDomain, LatentGrid, ModelSpec,
                   MomentSpec, ParameterBox, SupportPredicate, Tolerances,
                   EPS_GROW, build_grid, model_grid)
from .errors import (ConfigError, DimensionError, EmptyIntervalError,
                     NonemptyCorrespondenceViolated, NotSupportedError,
                     RatioDegenerateError)
from .lp import (BoundsResult, build_selection_lp, functional_bounds,
                 min_violation, solve_lp, _balance_block)

__all__ = [
    "CounterfactualSpec",
    "AugmentedModel",
    "augment",
    "check_correspondence",
    "project_theta",
    "theta_tilde_interval",
]

_BISECT_REL_TOL = 1e-6


@dataclass(frozen=True)
class CounterfactualSpec:
    """Counterfactual restrictions to stack onto a baseline model.

    ``cf_outcome_domain`` is either a finite array of outcome rows
    (discrete counterfactual outcomes, one row per value) or a
    LatentDomain that gets gridded like any latent box.  ``m_tilde``
    must be affine in the counterfactual parameter; ``parameter_kind``
    distinguishes plain means (coefficient one) from ratio-type
    definitions g - theta_cf * h, which are bounded by bisection.
    """

    cf_outcome_domain: np.ndarray | LatentDomain
    correspondence: Callable
    m_tilde: Callable
    dim_m_tilde: int
    dim_theta_tilde: int
    theta_tilde_box: ParameterBox
    cf_latent: LatentDomain | None = None
    r_tilde: Callable | None = None
    dim_r_tilde: int = 0
    parameter_kind: str = "mean"    # mean | ratio | quantile (rejected)
    label: str = ""

    def __post_init__(self):
        if self.dim_theta_tilde < 1:
            raise ConfigError("dim_theta_tilde must be >= 1")
        if self.dim_m_tilde < 1:
            raise ConfigError("dim_m_tilde must be >= 1")
        if self.dim_r_tilde > 0 and self.r_tilde is None:
            raise ConfigError("dim_r_tilde > 0 but no r_tilde given")
        if self.theta_tilde_box.dim != self.dim_theta_tilde:
            raise ConfigError("theta_tilde_box dim mismatch")
        if self.parameter_kind not in ("mean", "ratio", "quantile"):
            raise ConfigError(f"unknown parameter_kind {self.parameter_kind!r}")


@dataclass(frozen=True)
class AugmentedModel:
    """Baseline plus counterfactual restrictions as one ModelSpec.

    ``spec`` is scanned like any model; the bookkeeping fields map the
    product latent coordinates and the stacked parameter vector back to
    their baseline and counterfactual roles.
    """

    spec: ModelSpec
    base: ModelSpec
    cf: CounterfactualSpec
    dim_u: int
    dim_y_cf: int
    dim_u_cf: int
    dim_theta_base: int

    def split_latent(self, u_aug: np.ndarray):
        u_aug = np.atleast_2d(u_aug)
        du, dy = self.dim_u, self.dim_y_cf
        u = u_aug[:, :du]
        y_cf = u_aug[:, du:du + dy]
        u_cf = u_aug[:, du + dy:] if self.dim_u_cf else None
        return u, y_cf, u_cf

    def split_theta(self, theta_aug: np.ndarray):
        theta_aug = np.asarray(theta_aug, dtype=float).ravel()
        return theta_aug[:self.dim_theta_base], theta_aug[self.dim_theta_base:]


def _outcome_rows(domain, truncation: float) -> tuple[np.ndarray, np.ndarray]:
    """Outcome value rows and their boundary flags."""
    if isinstance(domain, LatentDomain):
        g = build_grid(domain, truncation)
        return g.points, g.boundary_mask
    rows = np.atleast_2d(np.asarray(domain, dtype=float))
    return rows, np.zeros(rows.shape[0], dtype=bool)


def augment(base: ModelSpec, cf: CounterfactualSpec,
            data: DiscreteDistribution | None = None,
            thetas=None) -> AugmentedModel:
    """Build the stacked model over (u, y_cf, u_cf) and (theta, theta_cf).

    The augmented moment vector is ordered (r1, r2, r_tilde, m_tilde)
    with the counterfactual blocks appended to the latent-dependent
    part.  When ``data`` is given, the correspondence is checked to be
    nonempty-valued at every baseline-feasible grid point for every
    theta in ``thetas`` (the baseline parameter grid by default).
    """
    if cf.parameter_kind == "quantile":
        raise NotSupportedError(
            "quantile-type counterfactual parameters are not supported")
    du = base.latent.dim
    sample_rows, _ = _outcome_rows(cf.cf_outcome_domain,
                                   base.latent.default_truncation)
    dy = sample_rows.shape[1]
    dc = cf.cf_latent.dim if cf.cf_latent is not None else 0
    d_theta = base.params.dim

    if isinstance(cf.cf_outcome_domain, LatentDomain):
        y_box = cf.cf_outcome_domain.box
    else:
        # metadata only (the grid builder enumerates the rows directly);
        # pad degenerate coordinates to keep the box nondegenerate
        y_box = tuple(
            (float(lo), float(hi) if hi > lo else float(lo) + 1.0)
            for lo, hi in zip(sample_rows.min(axis=0), sample_rows.max(axis=0)))
    cf_box = cf.cf_latent.box if cf.cf_latent is not None else ()
    latent = LatentDomain(
        dim=du + dy + dc,
        box=base.latent.box + y_box + cf_box,
        default_truncation=base.latent.default_truncation,
        points_per_dim=base.latent.points_per_dim)

    def grid_builder(truncation: float) -> LatentGrid:
        bg = model_grid(base, truncation)
        orows, omask = _outcome_rows(cf.cf_outcome_domain, truncation)
        if cf.cf_latent is not None:
            cg = build_grid(cf.cf_latent, truncation)
            crows, cmask = cg.points, cg.boundary_mask
        else:
            crows, cmask = np.zeros((1, 0)), np.zeros(1, dtype=bool)
        nb, no, nc = bg.points.shape[0], orows.shape[0], crows.shape[0]
        U = np.repeat(bg.points, no * nc, axis=0)
        Y = np.tile(np.repeat(orows, nc, axis=0), (nb, 1))
        C = np.tile(crows, (nb * no, 1))
        points = np.hstack([U, Y, C])
        mask = (np.repeat(bg.boundary_mask, no * nc)
                | np.tile(np.repeat(omask, nc), nb)
                | np.tile(cmask, nb * no))
        return LatentGrid(points=points, truncation=float(truncation),
                          boundary_mask=mask)

    def contains(u_aug: np.ndarray, z: np.ndarray, theta_aug: np.ndarray) -> np.ndarray:
        theta = theta_aug[:d_theta]
        u = u_aug[:, :du]
        y_cf = u_aug[:, du:du + dy]
        u_cf = u_aug[:, du + dy:] if dc else None
        ok = base.support.mask(u, z, theta)
        ok &= np.asarray(cf.correspondence(y_cf, u_cf, z, u, theta), dtype=bool)
        return ok

    d2_base = base.moments.dim_r2
    dim_r2 = d2_base + cf.dim_r_tilde + cf.dim_m_tilde

    def r2(u_aug: np.ndarray, z: np.ndarray, theta_aug: np.ndarray) -> np.ndarray:
        theta = theta_aug[:d_theta]
        theta_cf = theta_aug[d_theta:]
        u = u_aug[:, :du]
        y_cf = u_aug[:, du:du + dy]
        u_cf = u_aug[:, du + dy:] if dc else None
        blocks = []
        if d2_base:
            blocks.append(base.moments.eval_r2(u, z, theta))
        if cf.dim_r_tilde:
            blocks.append(np.asarray(cf.r_tilde(y_cf, u_cf, z, u, theta),
                                     dtype=float).reshape(u.shape[0], cf.dim_r_tilde))
        blocks.append(np.asarray(cf.m_tilde(y_cf, u_cf, z, u, theta, theta_cf),
                                 dtype=float).reshape(u.shape[0], cf.dim_m_tilde))
        return np.hstack(blocks)

    r1_fn = None
    if base.moments.dim_r1:
        base_r1 = base.moments.r1

        def r1_fn(z, theta_aug):
            return base_r1(z, theta_aug[:d_theta])

    moments = MomentSpec(dim_r1=base.moments.dim_r1, dim_r2=dim_r2,
                         r1=r1_fn, r2=r2)
    spec = ModelSpec(
        latent=latent,
        support=SupportPredicate(contains=contains),
        moments=moments,
        params=base.params.concat(cf.theta_tilde_box),
        label=(base.label + "+" + cf.label) if cf.label else base.label + "+cf",
        grid_builder=grid_builder)
    aug = AugmentedModel(spec=spec, base=base, cf=cf, dim_u=du, dim_y_cf=dy,
                         dim_u_cf=dc, dim_theta_base=d_theta)
    if data is not None:
        check_correspondence(aug, data, thetas)
    return aug


def check_correspondence(aug: AugmentedModel, data: DiscreteDistribution,
                         thetas=None) -> None:
    """Verify the correspondence is nonempty at baseline-feasible points.

    Raises NonemptyCorrespondenceViolated naming the first grid witness
    (z, u, theta) whose counterfactual section is empty.
    """
    base = aug.base
    if thetas is None:
        thetas = base.params.grid_points()
    bg = model_grid(base)
    ag = model_grid(aug.spec)
    per_base = len(ag) // len(bg)
    pad = np.zeros(aug.spec.params.dim - aug.dim_theta_base)
    for theta in np.atleast_2d(np.asarray(thetas, dtype=float)):
        theta_aug = np.concatenate([theta, pad])
        for atom in data:
            base_ok = base.support.mask(bg.points, atom.z, theta)
            aug_ok = aug.spec.support.mask(ag.points, atom.z, theta_aug)
            covered = aug_ok.reshape(len(bg), per_base).any(axis=1)
            bad = np.flatnonzero(base_ok & ~covered)
            if bad.size:
                u_bad = bg.points[int(bad[0])]
                raise NonemptyCorrespondenceViolated(
                    f"correspondence empty at z={atom.z.tolist()}, "
                    f"u={u_bad.tolist()}, theta={theta.tolist()}",
                    z=atom.z, u=u_bad, theta=theta)


def project_theta(aug: AugmentedModel, report, which: str = "lp") -> np.ndarray:
    """Baseline-theta rows of member verdicts, duplicates removed."""
    flag = {"lp": "member_lp", "sf": "member_sf"}[which]
    rows = [v.theta[:aug.dim_theta_base] for v in report.verdicts
            if v.error is None and getattr(v, flag)]
    if not rows:
        return np.zeros((0, aug.dim_theta_base))
    return np.unique(np.vstack(rows), axis=0)


def _strip_m_tilde(aug: AugmentedModel) -> ModelSpec:
    """Baseline-parameter model over the augmented latent space.

    Moments keep (r1, r2, r_tilde) but drop the parameter-defining
    block, so selections feasible for this model are exactly the
    admissible counterfactual joint laws at a given baseline theta.
    """
    base, cf = aug.base, aug.cf
    d_theta = aug.dim_theta_base
    spec = aug.spec
    dim_r2 = base.moments.dim_r2 + cf.dim_r_tilde

    def r2(u_aug, z, theta):
        theta_aug = np.concatenate([theta, np.zeros(spec.params.dim - d_theta)])
        full = spec.moments.eval_r2(u_aug, z, theta_aug)
        return full[:, :dim_r2]

    def contains(u_aug, z, theta):
        theta_aug = np.concatenate([theta, np.zeros(spec.params.dim - d_theta)])
        return spec.support.mask(u_aug, z, theta_aug)

    moments = MomentSpec(dim_r1=base.moments.dim_r1,
                         dim_r2=dim_r2,
                         r1=base.moments.r1,
                         r2=r2 if dim_r2 else None)
    return ModelSpec(latent=spec.latent,
                     support=SupportPredicate(contains=contains),
                     moments=moments,
                     params=base.params,
                     label=spec.label + "/pinned",
                     grid_builder=spec.grid_builder)


def theta_tilde_interval(base: ModelSpec, cf: CounterfactualSpec,
                         data: DiscreteDistribution, theta,
                         truncation: float | None = None) -> BoundsResult:
    """Interval of counterfactual-parameter values consistent at ``theta``.

    Mean-type parameters reduce to two LP solves for the extremes of
    E[g] over pinned selections; ratio-type definitions g - t*h are
    bracketed by bisection on t with an LP feasibility check per
    candidate.  Endpoints re-solved at twice the truncation radius are
    flagged as growing when they move materially, which is the
    operational signature of a one-sided (unbounded) interval.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    if cf.dim_theta_tilde != 1 or cf.dim_m_tilde != 1:
        raise DimensionError(
            "interval computation requires a scalar counterfactual parameter")
    aug = augment(base, cf)
    grid = model_grid(base, truncation)
    viol, _ = min_violation(base, grid, data, theta)
    base_lp = build_selection_lp(base, grid, data, theta)
    tol = Tolerances.from_scale(base_lp.scale)
    if viol > tol.lp:
        raise EmptyIntervalError(
            f"theta={theta.tolist()} is outside the discretized identified set "
            f"(violation {viol:.3e} > {tol.lp:.3e})")

    pinned = _strip_m_tilde(aug)
    aug_grid = model_grid(pinned, truncation)

    def m_at(u_aug, z, t_val):
        u, y_cf, u_cf = aug.split_latent(u_aug)
        out = np.asarray(cf.m_tilde(y_cf, u_cf, z, u, theta,
                                    np.array([t_val])), dtype=float)
        return out.reshape(u_aug.shape[0])

    if cf.parameter_kind == "mean":
        return functional_bounds(pinned, aug_grid, data, theta,
                                 g=lambda u_aug, z: m_at(u_aug, z, 0.0))

    # ratio type: m = g - t*h
    def g_fn(u_aug, z):
        return m_at(u_aug, z, 0.0)

    def h_fn(u_aug, z):
        return m_at(u_aug, z, 0.0) - m_at(u_aug, z, 1.0)

    def endpoints_at(grid_at) -> tuple[float, float]:
        lp = build_selection_lp(pinned, grid_at, data, theta,
                                extra_fns=[g_fn, h_fn])
        tol_at = Tolerances.from_scale(max(lp.scale, base_lp.scale))
        if lp.r1_resid.size and np.abs(lp.r1_resid).max() > tol_at.lp:
            raise EmptyIntervalError("z-only residual too large for pinning")
        n_p = lp.n_cols
        V_pin = lp.r2.T    # rows pinning r2 and r_tilde to ~zero

        def boxed_system(V: np.ndarray, slacks: np.ndarray):
            rows = V.shape[0]
            A = np.zeros((lp.n_atoms + 2 * rows, n_p + 2 * rows))
            b = np.zeros(lp.n_atoms + 2 * rows)
            A[:lp.n_atoms, :n_p] = _balance_block(lp)
            b[:lp.n_atoms] = lp.weights
            A[lp.n_atoms:lp.n_atoms + rows, :n_p] = V
            A[lp.n_atoms + rows:, :n_p] = V
            A[lp.n_atoms:lp.n_atoms + rows, n_p:n_p + rows] = np.eye(rows)
            A[lp.n_atoms + rows:, n_p + rows:] = -np.eye(rows)
            b[lp.n_atoms:lp.n_atoms + rows] = slacks
            b[lp.n_atoms + rows:] = -slacks
            return A, b

        A, b = boxed_system(V_pin, np.full(V_pin.shape[0], tol_at.lp))
        denom_obj = np.zeros(A.shape[1])
        denom_obj[:n_p] = lp.extra[:, 1]
        hmin = solve_lp(denom_obj, A, b, sense="min")
        if hmin.status == "infeasible":
            raise EmptyIntervalError(
                f"pinned selection LP infeasible at theta={theta.tolist()}")
        hscale = max(1.0, float(np.abs(lp.extra[:, 1]).max(initial=0.0)))
        if hmin.objective <= tol_at.lp * hscale:
            raise RatioDegenerateError(
                "a feasible selection drives the denominator to zero; "
                "the ratio-type parameter is undefined for it")

        def feasible(t_val: float) -> bool:
            gv = lp.extra[:, 0] - t_val * lp.extra[:, 1]
            V = np.vstack([V_pin, gv[None, :]])
            slacks = np.full(V.shape[0], tol_at.lp)
            slacks[-1] = tol_at.lp * max(1.0, abs(t_val))
            A2, b2 = boxed_system(V, slacks)
            out = solve_lp(np.zeros(A2.shape[1]), A2, b2)
            return out.status == "optimal"

        lo_box, hi_box = cf.theta_tilde_box.bounds[0]
        probes = np.linspace(lo_box, hi_box, max(33, cf.theta_tilde_box.resolution[0]))
        feas = [t for t in probes if feasible(float(t))]
        if not feas:
            raise EmptyIntervalError(
                f"no feasible counterfactual-parameter value in "
                f"[{lo_box}, {hi_box}] at theta={theta.tolist()}")
        t_in = float(feas[0])

        def bisect(lo: float, hi: float, want_feasible_hi: bool) -> float:
            # invariant: exactly one end is feasible
            while hi - lo > _BISECT_REL_TOL * (1.0 + max(abs(lo), abs(hi))):
                mid = 0.5 * (lo + hi)
                if feasible(mid) == want_feasible_hi:
                    hi = mid
                else:
                    lo = mid
            return hi if want_feasible_hi else lo

        if feasible(lo_box):
            t_lo = float(lo_box)
        else:
            t_lo = bisect(lo_box, t_in, want_feasible_hi=True)
        t_hi_start = float(feas[-1])
        if feasible(hi_box):
            t_hi = float(hi_box)
        else:
            t_hi = bisect(t_hi_start, hi_box, want_feasible_hi=False)
        return t_lo, t_hi

    lo, hi = endpoints_at(aug_grid)
    result = BoundsResult(lo=lo, hi=hi, truncation=aug_grid.truncation)
    if pinned.latent.has_unbounded_dim():
        grid2 = model_grid(pinned, 2.0 * aug_grid.truncation)
        lo2, hi2 = endpoints_at(grid2)
        result.doubled = (lo2, hi2)
        result.lo_growing = abs(lo2 - lo) > EPS_GROW * (1.0 + abs(lo))
        result.hi_growing = abs(hi2 - hi) > EPS_GROW * (1.0 + abs(hi))
    return result

"""Support functions of discretized moment images and the sphere criterion.

For a direction lambda on the unit sphere, the support value at an atom
z is the maximum of lambda' r2(u, z, theta) over the admissible grid
points; membership of theta in the (moment-closure of the) identified
set is decided by the sign of the infimum of the expected support value
over the sphere, paired with exact z-only moment equalities.

Directions whose expected support value keeps growing when the
truncation radius doubles are treated as having an infinite expectation
and are excluded from the infimum: an infinite value can never attain
it.  The infimum itself is approximated by a deterministic quasi-uniform
sphere sample refined by multi-restart projected coordinate descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (DiscreteDistribution, LatentGrid, ModelSpec, EPS_GROW,
                   model_grid, section)
from .errors import DimensionError, EmptySectionError

__all__ = [
    "SupportValue",
    "CriterionResult",
    "ImageTable",
    "support_function",
    "expected_support",
    "detect_divergence",
    "criterion",
    "gmm_residual",
    "unit_sphere_samples",
    "candidate_directions",
]

_DESCENT_INITIAL_STEP = 0.5
_DESCENT_MIN_STEP = 1e-6


@dataclass(frozen=True)
class SupportValue:
    """Support-function value at one atom: max of lambda' r2 over the section."""

    value: float
    attained_at: int          # grid index of the maximizer (lowest on ties)
    boundary_attained: bool   # maximizer sits on a truncation face


@dataclass
class CriterionResult:
    """Approximate infimum of the expected support value over the sphere.

    ``value`` is +inf only in the degenerate case where every probed
    direction diverges; otherwise it is the best finite value seen and
    ``argmin`` the direction attaining it.  ``gmm_residual`` carries the
    z-only moment block so callers can apply the paired membership test
    (residual within tolerance and criterion value above -crit).
    """

    value: float
    argmin: np.ndarray | None
    infinite_directions_sampled: int
    gmm_residual: np.ndarray
    scale: float
    diagnostics: dict = field(default_factory=dict)


class ImageTable:
    """Per-atom moment images with exact-duplicate rows merged.

    Duplicate rows are interchangeable for maxima, so merging them makes
    sphere evaluation cheap for indicator-style moments while leaving
    every support value unchanged.  Column order follows the grid, so
    argmax ties keep resolving to the lowest grid index.
    """

    def __init__(self, model: ModelSpec, grid: LatentGrid,
                 data: DiscreteDistribution, theta: np.ndarray):
        self.weights = data.weights
        self.images: list[np.ndarray] = []
        self.boundary: list[np.ndarray] = []
        self.rep_index: list[np.ndarray] = []
        scale = 0.0
        for i, atom in enumerate(data):
            try:
                idx = section(model, grid, atom.z, theta)
            except EmptySectionError as e:
                e.atom_index = i
                raise
            values = model.moments.eval_r2(grid.points[idx], atom.z, theta)
            if values.size and not np.all(np.isfinite(values)):
                raise EmptySectionError(
                    f"non-finite moment values at atom {i}", atom_index=i)
            on_boundary = grid.boundary_mask[idx]
            if values.shape[0]:
                scale = max(scale, float(np.abs(values).max(initial=0.0)))
                _, first = np.unique(values, axis=0, return_index=True)
                first = np.sort(first)
                self.images.append(values[first])
                self.boundary.append(on_boundary[first])
                self.rep_index.append(idx[first])
            else:
                self.images.append(values)
                self.boundary.append(on_boundary)
                self.rep_index.append(idx[:0])
        if model.moments.dim_r1:
            for atom in data:
                r1 = model.moments.eval_r1(atom.z, theta)
                scale = max(scale, float(np.abs(r1).max(initial=0.0)))
        self.scale = scale
        self.dim = model.moments.dim_r2

    def expected(self, directions: np.ndarray) -> np.ndarray:
        """Expected support values for a batch of directions (n, dim)."""
        directions = np.atleast_2d(directions)
        total = np.zeros(directions.shape[0])
        for w, img in zip(self.weights, self.images):
            total += w * (img @ directions.T).max(axis=0)
        return total

    def expected_single(self, lam: np.ndarray) -> tuple[float, float]:
        """Expected support value and boundary-attainment weight fraction."""
        value = 0.0
        boundary_weight = 0.0
        for w, img, bnd in zip(self.weights, self.images, self.boundary):
            scores = img @ lam
            k = int(np.argmax(scores))
            value += w * float(scores[k])
            if bnd[k]:
                boundary_weight += w
        return value, boundary_weight

    def mean_image_direction(self) -> np.ndarray | None:
        """Direction opposite the weighted mean image row, if nonzero."""
        acc = np.zeros(self.dim)
        for w, img in zip(self.weights, self.images):
            acc += w * img.mean(axis=0)
        nrm = float(np.linalg.norm(acc))
        if nrm < 1e-14:
            return None
        return -acc / nrm


def support_function(model: ModelSpec, grid: LatentGrid, z: np.ndarray,
                     theta: np.ndarray, lam: np.ndarray) -> SupportValue:
    """Maximum of lambda' r2 over the section at (z, theta).

    Ties resolve to the lowest grid index so diagnostics reproduce.
    """
    lam = np.asarray(lam, dtype=float).ravel()
    idx = section(model, grid, z, theta)
    values = model.moments.eval_r2(grid.points[idx], np.asarray(z, dtype=float).ravel(),
                                   np.asarray(theta, dtype=float).ravel())
    if lam.shape[0] != values.shape[1]:
        raise DimensionError(
            f"direction dim {lam.shape[0]} != dim_r2 {values.shape[1]}")
    scores = values @ lam
    k = int(np.argmax(scores))
    return SupportValue(value=float(scores[k]), attained_at=int(idx[k]),
                        boundary_attained=bool(grid.boundary_mask[idx[k]]))


def expected_support(model: ModelSpec, grid: LatentGrid,
                     data: DiscreteDistribution, theta: np.ndarray,
                     lam: np.ndarray) -> tuple[float, float]:
    """Weighted average of support values over atoms.

    Returns the expectation together with the fraction of F-weight whose
    maximizer sits on a truncation boundary.
    """
    lam = np.asarray(lam, dtype=float).ravel()
    table = ImageTable(model, grid, data, theta)
    return table.expected_single(lam)


def detect_divergence(model: ModelSpec, data: DiscreteDistribution,
                      theta: np.ndarray, lam: np.ndarray, M: float) -> bool:
    """Doubling test for an infinite expected support value.

    True when the expected support value at truncation 2M exceeds the
    value at M by more than EPS_GROW * (1 + |value at M|); such a
    direction is treated as having an infinite expectation.
    """
    if M < model.latent.default_truncation:
        raise ValueError("M must be at least the default truncation radius")
    lam = np.asarray(lam, dtype=float).ravel()
    v1, _ = expected_support(model, model_grid(model, M), data, theta, lam)
    v2, _ = expected_support(model, model_grid(model, 2.0 * M), data, theta, lam)
    return bool(v2 - v1 > EPS_GROW * (1.0 + abs(v1)))


def gmm_residual(model: ModelSpec, data: DiscreteDistribution,
                 theta: np.ndarray) -> np.ndarray:
    """Weighted sum of the z-only moment block over atoms."""
    theta = np.asarray(theta, dtype=float).ravel()
    if model.moments.dim_r1 == 0:
        return np.zeros(0)
    acc = np.zeros(model.moments.dim_r1)
    for atom in data:
        acc += atom.weight * model.moments.eval_r1(atom.z, theta)
    return acc


def _van_der_corput(n: int, base: int, skip: int = 20) -> np.ndarray:
    out = np.empty(n)
    for i in range(n):
        q, inv = 0.0, 1.0 / base
        k = i + skip + 1
        while k > 0:
            q += (k % base) * inv
            k //= base
            inv /= base
        out[i] = q
    return out


_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def _halton_gaussian(n: int, dim: int) -> np.ndarray:
    """Deterministic low-discrepancy Gaussian cloud via Box-Muller on Halton."""
    pairs = (dim + 1) // 2
    cols = []
    for p in range(pairs):
        u1 = _van_der_corput(n, _PRIMES[2 * p])
        u2 = _van_der_corput(n, _PRIMES[2 * p + 1])
        r = np.sqrt(-2.0 * np.log(u1))
        cols.append(r * np.cos(2.0 * np.pi * u2))
        cols.append(r * np.sin(2.0 * np.pi * u2))
    return np.column_stack(cols[:dim])


def unit_sphere_samples(dim: int, n: int) -> np.ndarray:
    """Deterministic quasi-uniform sample of the unit sphere in R^dim."""
    if dim < 1:
        raise DimensionError("sphere dimension must be >= 1")
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        angles = 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(angles), np.sin(angles)])
    if dim == 3:
        i = np.arange(n) + 0.5
        z = 1.0 - 2.0 * i / n
        r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
        golden = np.pi * (3.0 - np.sqrt(5.0))
        phi = golden * i
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    g = _halton_gaussian(n, dim)
    norms = np.linalg.norm(g, axis=1)
    keep = norms > 1e-12
    return g[keep] / norms[keep, None]


def _axis_directions(dim: int) -> np.ndarray:
    eye = np.eye(dim)
    return np.vstack([eye, -eye])


def _default_samples(dim: int, sphere_samples: int | None) -> int:
    if sphere_samples is not None:
        return sphere_samples
    return 512 if dim <= 3 else 4096


def candidate_directions(table: ImageTable, dim: int,
                         sphere_samples: int | None = None) -> np.ndarray:
    """Deterministic direction candidates: quasi-uniform sample, the
    coordinate axes, and the direction opposite the weighted mean image."""
    n = _default_samples(dim, sphere_samples)
    samples = [unit_sphere_samples(dim, n), _axis_directions(dim)]
    mean_dir = table.mean_image_direction()
    if mean_dir is not None:
        samples.append(mean_dir[None, :])
    return np.vstack(samples)


def _descend(start: np.ndarray, start_value: float, evaluate, is_excluded):
    """Projected coordinate descent on the sphere with step halving."""
    x = start.copy()
    fx = start_value
    dim = x.shape[0]
    step = _DESCENT_INITIAL_STEP
    evals = 0
    while step >= _DESCENT_MIN_STEP:
        trial = np.repeat(x[None, :], 2 * dim, axis=0)
        for k in range(dim):
            trial[2 * k, k] += step
            trial[2 * k + 1, k] -= step
        trial /= np.linalg.norm(trial, axis=1)[:, None]
        values = evaluate(trial)
        evals += trial.shape[0]
        excluded = is_excluded(trial, values)
        values = np.where(excluded, np.inf, values)
        k = int(np.argmin(values))
        if values[k] < fx - 1e-15:
            x = trial[k]
            fx = float(values[k])
        else:
            step *= 0.5
    return x, fx, evals


def criterion(model: ModelSpec, grid: LatentGrid, data: DiscreteDistribution,
              theta: np.ndarray, restarts: int = 8,
              sphere_samples: int | None = None) -> CriterionResult:
    """Approximate inf over unit directions of the expected support value.

    Deterministic pipeline: sample the sphere quasi-uniformly (plus the
    coordinate axes and the direction opposite the mean image), exclude
    directions flagged as divergent by the truncation-doubling test,
    keep the best ``restarts`` candidates and refine each by projected
    coordinate descent with step halving down to 1e-6.

    The z-only residual is returned alongside so callers can apply the
    split membership test; a DimensionError is raised when the model
    has no u-dependent moments (use the plain GMM path instead).
    """
    theta = np.asarray(theta, dtype=float).ravel()
    if model.moments.dim_r2 == 0:
        raise DimensionError("criterion requires dim_r2 >= 1")
    dim = model.moments.dim_r2
    table = ImageTable(model, grid, data, theta)
    sweep_divergence = model.latent.has_unbounded_dim()
    table2 = None
    if sweep_divergence:
        grid2 = model_grid(model, 2.0 * grid.truncation)
        table2 = ImageTable(model, grid2, data, theta)

    directions = candidate_directions(table, dim, sphere_samples)
    values = table.expected(directions)
    if sweep_divergence:
        values2 = table2.expected(directions)
        divergent = values2 - values > EPS_GROW * (1.0 + np.abs(values))
    else:
        divergent = np.zeros(directions.shape[0], dtype=bool)
    n_divergent = int(divergent.sum())

    def evaluate(batch: np.ndarray) -> np.ndarray:
        return table.expected(batch)

    def is_excluded(batch: np.ndarray, batch_values: np.ndarray) -> np.ndarray:
        if not sweep_divergence:
            return np.zeros(batch.shape[0], dtype=bool)
        v2 = table2.expected(batch)
        return v2 - batch_values > EPS_GROW * (1.0 + np.abs(batch_values))

    resid = gmm_residual(model, data, theta)
    diagnostics: dict = {"n_samples": int(directions.shape[0]),
                         "n_divergent_samples": n_divergent,
                         "restarts": []}

    finite = np.flatnonzero(~divergent)
    if finite.size == 0:
        # hunt for a finite direction by descending on the doubling growth
        growth = values2 - values
        k = int(np.argmin(growth))
        lam, g_end, _ = _descend(
            directions[k], float(growth[k]),
            evaluate=lambda B: table2.expected(B) - table.expected(B),
            is_excluded=lambda B, V: np.zeros(B.shape[0], dtype=bool))
        v_end = float(table.expected(lam[None, :])[0])
        if table2.expected(lam[None, :])[0] - v_end <= EPS_GROW * (1.0 + abs(v_end)):
            finite_start = [(v_end, lam)]
        else:
            diagnostics["all_directions_divergent"] = True
            return CriterionResult(value=math.inf, argmin=None,
                                   infinite_directions_sampled=n_divergent,
                                   gmm_residual=resid, scale=table.scale,
                                   diagnostics=diagnostics)
    else:
        order = finite[np.argsort(values[finite], kind="stable")]
        finite_start = [(float(values[k]), directions[k])
                        for k in order[:max(1, restarts)]]

    best_value = math.inf
    best_dir = None
    for start_value, start_dir in finite_start:
        if start_value < best_value:
            best_value, best_dir = start_value, start_dir
        lam, val, evals = _descend(start_dir, start_value, evaluate, is_excluded)
        diagnostics["restarts"].append(
            {"start": start_value, "final": val, "evals": evals})
        if val < best_value:
            best_value, best_dir = val, lam
    return CriterionResult(value=float(best_value), argmin=best_dir,
                           infinite_directions_sampled=n_divergent,
                           gmm_residual=resid, scale=table.scale,
                           diagnostics=diagnostics)

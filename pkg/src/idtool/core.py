"""Model abstraction and latent-space discretization.

A model couples four ingredients:

* a latent domain, a box in R^d whose ends may be unbounded,
* a support predicate restricting the joint values of (u, z),
* a partitioned moment function r = (r1(z; theta), r2(u, z; theta)),
* a finite parameter box that is swept on a tensor grid.

Observed data enters as a finite discrete distribution over z atoms, so
all expectations reduce to weighted sums and the admissible joint laws
of (u, z) become finite-dimensional mass tables.  Unbounded latent
dimensions are truncated at a radius M; every grid point sitting on a
truncation face is flagged so downstream code can detect when an
optimum escapes to the artificial boundary.

Vectorization contract: ``SupportPredicate.contains`` and ``MomentSpec.r2``
receive a batch of latent points as an ``(n, dim)`` array and must return
an ``(n,)`` boolean array resp. an ``(n, dim_r2)`` float array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptySectionError

__all__ = [
    "LatentDomain",
    "ObservedAtom",
    "DiscreteDistribution",
    "MomentSpec",
    "SupportPredicate",
    "ParameterBox",
    "ModelSpec",
    "LatentGrid",
    "Tolerances",
    "EPS_GROW",
    "build_grid",
    "model_grid",
    "section",
    "moment_image",
    "validate_model",
]

# Relative growth across a truncation doubling above which a quantity is
# treated as diverging with M.  Chosen an order of magnitude above the
# grid-refinement jitter seen at shipped resolutions.
EPS_GROW = 0.01


@dataclass(frozen=True)
class Tolerances:
    """Scale-adjusted numerical tolerances used by membership tests.

    ``scale`` is the largest absolute moment value observed in the
    context where the tolerance is applied, so all thresholds are
    relative to the data's natural magnitude.
    """

    eq: float      # sup-norm tolerance for z-only moment equalities
    crit: float    # slack allowed below zero for the sphere criterion
    lp: float      # L1 violation below which the LP declares membership
    red: float     # threshold certifying a reducing direction
    tie: float     # equality tolerance for argmax-tightened predicates

    @staticmethod
    def from_scale(scale: float) -> "Tolerances":
        s = 1.0 + abs(float(scale))
        return Tolerances(eq=1e-9 * s, crit=1e-7 * s, lp=1e-8 * s,
                          red=1e-7 * s, tie=1e-9 * s)


@dataclass(frozen=True)
class LatentDomain:
    """Axis-aligned latent box; +-inf marks an unbounded end.

    ``default_truncation`` is the radius substituted for unbounded ends,
    and ``points_per_dim`` the node count per dimension at that radius.
    When a grid is requested at a larger truncation, the node spacing on
    unbounded dimensions is held fixed (the count grows), so that a grid
    at 2M contains the grid at M as a subset.
    """

    dim: int
    box: tuple[tuple[float, float], ...]
    default_truncation: float = 5.0
    points_per_dim: int = 21

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("latent dim must be >= 1")
        if len(self.box) != self.dim:
            raise ConfigError("box must have one (lo, hi) pair per dimension")
        for lo, hi in self.box:
            if math.isfinite(lo) and math.isfinite(hi) and not lo < hi:
                raise ConfigError(f"degenerate latent interval [{lo}, {hi}]")
        if not self.default_truncation > 0:
            raise ConfigError("default_truncation must be positive")
        if self.points_per_dim < 2:
            raise ConfigError("points_per_dim must be >= 2")

    @property
    def unbounded(self) -> tuple[bool, ...]:
        return tuple(not (math.isfinite(lo) and math.isfinite(hi))
                     for lo, hi in self.box)

    def has_unbounded_dim(self) -> bool:
        return any(self.unbounded)


@dataclass(frozen=True)
class ObservedAtom:
    """One support point of the observed-variable distribution."""

    z: np.ndarray
    weight: float

    def __post_init__(self):
        object.__setattr__(self, "z", np.asarray(self.z, dtype=float).ravel())
        if not 0.0 < self.weight <= 1.0:
            raise ConfigError(f"atom weight {self.weight} outside (0, 1]")
        if not np.all(np.isfinite(self.z)):
            raise ConfigError("atom z contains non-finite values")


class DiscreteDistribution:
    """Finite list of observed atoms with weights summing to one."""

    def __init__(self, atoms: Sequence[ObservedAtom]):
        if len(atoms) == 0:
            raise ConfigError("distribution needs at least one atom")
        dims = {a.z.shape[0] for a in atoms}
        if len(dims) != 1:
            raise ConfigError(f"atoms have mixed z dimensions: {sorted(dims)}")
        total = math.fsum(a.weight for a in atoms)
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"atom weights sum to {total!r}, expected 1")
        self.atoms: tuple[ObservedAtom, ...] = tuple(atoms)

    @classmethod
    def from_arrays(cls, z: np.ndarray, weights: np.ndarray) -> "DiscreteDistribution":
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        weights = np.asarray(weights, dtype=float).ravel()
        if z.shape[0] != weights.shape[0]:
            raise ConfigError("z rows and weights length differ")
        return cls([ObservedAtom(z[i], float(weights[i])) for i in range(len(weights))])

    def __len__(self) -> int:
        return len(self.atoms)

    def __iter__(self):
        return iter(self.atoms)

    @property
    def z_dim(self) -> int:
        return self.atoms[0].z.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.array([a.weight for a in self.atoms])

    def z_matrix(self) -> np.ndarray:
        return np.stack([a.z for a in self.atoms])

    def expectation(self, fn: Callable[[np.ndarray], np.ndarray | float]) -> np.ndarray:
        """Weighted sum of ``fn(z)`` over atoms."""
        acc = None
        for a in self.atoms:
            v = np.asarray(fn(a.z), dtype=float) * a.weight
            acc = v if acc is None else acc + v
        return acc

    def to_csv(self, path, z_names: Sequence[str] | None = None) -> None:
        """Write one atom per line; columns are z components then weight."""
        d = self.z_dim
        names = list(z_names) if z_names is not None else [f"z{i}" for i in range(d)]
        if len(names) != d:
            raise ConfigError("z_names length does not match z dimension")
        lines = [",".join(names + ["weight"])]
        for a in self.atoms:
            lines.append(",".join([repr(float(v)) for v in a.z] + [repr(float(a.weight))]))
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path) -> "DiscreteDistribution":
        with open(path) as f:
            rows = [ln.strip() for ln in f if ln.strip() and not ln.startswith("#")]
        if len(rows) < 2:
            raise ConfigError(f"{path}: expected a header and at least one atom")
        data = np.array([[float(v) for v in ln.split(",")] for ln in rows[1:]])
        return cls.from_arrays(data[:, :-1], data[:, -1])


@dataclass(frozen=True)
class MomentSpec:
    """Partitioned moment function r = (r1, r2).

    ``r1`` never reads the latent variable; ``r2`` carries everything
    that does.  The concatenation order (r1, r2) is the canonical
    ordering of the full moment vector everywhere in the package.
    """

    dim_r1: int
    dim_r2: int
    r1: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None
    r2: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.dim_r1 < 0 or self.dim_r2 < 0:
            raise ConfigError("moment dimensions must be nonnegative")
        if self.dim_r1 + self.dim_r2 < 1:
            raise ConfigError("need at least one moment restriction")
        if self.dim_r1 > 0 and self.r1 is None:
            raise ConfigError("dim_r1 > 0 but no r1 function given")
        if self.dim_r2 > 0 and self.r2 is None:
            raise ConfigError("dim_r2 > 0 but no r2 function given")

    def eval_r1(self, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        if self.dim_r1 == 0:
            return np.zeros(0)
        out = np.asarray(self.r1(z, theta), dtype=float).ravel()
        if out.shape[0] != self.dim_r1:
            raise ConfigError(f"r1 returned length {out.shape[0]}, expected {self.dim_r1}")
        return out

    def eval_r2(self, u: np.ndarray, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Evaluate r2 on a batch of latent points; returns (n, dim_r2)."""
        u = np.atleast_2d(np.asarray(u, dtype=float))
        if self.dim_r2 == 0:
            return np.zeros((u.shape[0], 0))
        out = np.asarray(self.r2(u, z, theta), dtype=float)
        if out.ndim == 1:
            out = out[:, None]
        if out.shape != (u.shape[0], self.dim_r2):
            raise ConfigError(
                f"r2 returned shape {out.shape}, expected {(u.shape[0], self.dim_r2)}")
        return out


@dataclass(frozen=True)
class SupportPredicate:
    """Deterministic pure predicate deciding whether (u, z) is admissible."""

    contains: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

    def mask(self, u: np.ndarray, z: np.ndarray, theta: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        out = np.asarray(self.contains(u, z, theta))
        if out.shape != (u.shape[0],):
            raise ConfigError(
                f"support predicate returned shape {out.shape}, expected {(u.shape[0],)}")
        return out.astype(bool)


@dataclass(frozen=True)
class ParameterBox:
    """Finite box of parameter values swept on a tensor grid."""

    dim: int
    bounds: tuple[tuple[float, float], ...]
    resolution: tuple[int, ...]

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("parameter dim must be >= 1")
        if len(self.bounds) != self.dim or len(self.resolution) != self.dim:
            raise ConfigError("bounds and resolution must match dim")
        for lo, hi in self.bounds:
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ConfigError(f"parameter interval [{lo}, {hi}] must be finite")
        for r in self.resolution:
            if r < 1:
                raise ConfigError("resolution must be >= 1")

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, n)
                for (lo, hi), n in zip(self.bounds, self.resolution)]

    def grid_points(self) -> np.ndarray:
        """All grid points as an (N, dim) array, last axis fastest."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def concat(self, other: "ParameterBox") -> "ParameterBox":
        return ParameterBox(self.dim + other.dim, self.bounds + other.bounds,
                            self.resolution + other.resolution)


@dataclass(frozen=True)
class LatentGrid:
    """Finite point set standing in for the latent space.

    ``boundary_mask`` flags points sitting on a truncation face of an
    unbounded dimension; downstream code uses it to detect optima that
    escape to the artificial boundary.
    """

    points: np.ndarray
    truncation: float
    boundary_mask: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, dtype=float)))
        object.__setattr__(self, "boundary_mask", np.asarray(self.boundary_mask, dtype=bool))
        if self.points.shape[0] != self.boundary_mask.shape[0]:
            raise ConfigError("points and boundary_mask lengths differ")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class ModelSpec:
    """A full incomplete model.

    ``grid_builder`` is an optional override used by composite models
    whose latent space is not a plain box (e.g. products of a box with a
    finite outcome set); when absent, grids come from ``build_grid``.
    """

    latent: LatentDomain
    support: SupportPredicate
    moments: MomentSpec
    params: ParameterBox
    label: str = ""
    grid_builder: Callable[[float], LatentGrid] | None = None

    @property
    def dim_r(self) -> int:
        return self.moments.dim_r1 + self.moments.dim_r2


def _axis_nodes(lo: float, hi: float, unbounded: bool, truncation: float,
                base_truncation: float, points_per_dim: int) -> np.ndarray:
    if not unbounded:
        return np.linspace(lo, hi, points_per_dim)
    a = lo if math.isfinite(lo) else -truncation
    b = hi if math.isfinite(hi) else truncation
    # Hold the node spacing of the default-truncation grid fixed so that
    # grids at larger radii are supersets of smaller ones.
    base_a = lo if math.isfinite(lo) else -base_truncation
    base_b = hi if math.isfinite(hi) else base_truncation
    step = (base_b - base_a) / (points_per_dim - 1)
    n = int(round((b - a) / step)) + 1
    return np.linspace(a, b, n)


def build_grid(latent: LatentDomain, truncation: float) -> LatentGrid:
    """Tensor-product grid over the latent box truncated at ``truncation``.

    Unbounded ends are replaced by +-truncation.  On unbounded
    dimensions the node spacing implied by ``points_per_dim`` at the
    default truncation is preserved, so doubling the truncation adds
    points without moving existing ones.
    """
    if not truncation > 0:
        raise ConfigError("truncation must be positive")
    axes = []
    face_masks = []
    for d in range(latent.dim):
        lo, hi = latent.box[d]
        unbounded = latent.unbounded[d]
        nodes = _axis_nodes(lo, hi, unbounded, truncation,
                            latent.default_truncation, latent.points_per_dim)
        axes.append(nodes)
        if unbounded:
            mask = np.zeros(nodes.shape[0], dtype=bool)
            if not math.isfinite(lo):
                mask[0] = True
            if not math.isfinite(hi):
                mask[-1] = True
        else:
            mask = np.zeros(nodes.shape[0], dtype=bool)
        face_masks.append(mask)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    bmesh = np.meshgrid(*face_masks, indexing="ij")
    boundary = np.zeros(points.shape[0], dtype=bool)
    for m in bmesh:
        boundary |= m.ravel()
    return LatentGrid(points=points, truncation=float(truncation), boundary_mask=boundary)


def model_grid(model: ModelSpec, truncation: float | None = None) -> LatentGrid:
    """Latent grid for ``model`` at ``truncation`` (default radius if None)."""
    M = float(truncation) if truncation is not None else model.latent.default_truncation
    if model.grid_builder is not None:
        return model.grid_builder(M)
    return build_grid(model.latent, M)


def section(model: ModelSpec, grid: LatentGrid, z: np.ndarray,
            theta: np.ndarray) -> np.ndarray:
    """Indices of grid points admissible at (z, theta), in grid order.

    Raises EmptySectionError when no grid point satisfies the predicate,
    which signals a truncation or resolution failure rather than a
    legitimate empty prediction.
    """
    z = np.asarray(z, dtype=float).ravel()
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.shape[0] != model.params.dim:
        raise ConfigError(
            f"theta has dim {theta.shape[0]}, model expects {model.params.dim}")
    mask = model.support.mask(grid.points, z, theta)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise EmptySectionError(
            f"empty section at z={z.tolist()}, theta={theta.tolist()}, "
            f"truncation={grid.truncation}")
    return idx


def moment_image(model: ModelSpec, grid: LatentGrid, z: np.ndarray,
                 theta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Discretized set of r2 values over the section at (z, theta).

    Returns ``(values, on_boundary)`` where ``values`` has one row per
    section point (dim_r2 columns) and ``on_boundary`` copies the grid's
    truncation-face flag for the attaining point.
    """
    idx = section(model, grid, z, theta)
    if model.moments.dim_r2 == 0:
        return np.zeros((0, 0)), np.zeros(0, dtype=bool)
    u = grid.points[idx]
    values = model.moments.eval_r2(u, np.asarray(z, dtype=float).ravel(),
                                   np.asarray(theta, dtype=float).ravel())
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise ConfigError(
            f"non-finite moment value at grid point {idx[bad[0]]}, "
            f"coordinate {bad[1]} (z={np.asarray(z).tolist()})")
    return values, grid.boundary_mask[idx]


def validate_model(model: ModelSpec, data: DiscreteDistribution,
                   thetas: Iterable[np.ndarray] | None = None) -> None:
    """Check nonemptiness of every discretized section at the default radius."""
    grid = model_grid(model)
    if thetas is None:
        thetas = model.params.grid_points()
    for theta in thetas:
        for i, atom in enumerate(data):
            try:
                section(model, grid, atom.z, theta)
            except EmptySectionError as e:
                e.atom_index = i
                raise

"""Exact linear-programming backend for the discretized selection problem.

Admissible joint laws of (u, z) on a fixed grid form a polytope: one
nonnegative mass per (atom, admissible grid point) pair, mass balance
per atom, and linear moment rows.  This module solves feasibility and
linear-functional optimization over that polytope with a dense
revised-simplex method using Bland's rule, so membership verdicts have
an auditable exact oracle independent of the sphere search.

Columns whose full coefficient profile (moment rows plus any extra
functional rows) coincides exactly are merged, keeping the lowest grid
index as representative; mass on merged columns is interchangeable, so
objectives and feasibility are unaffected while indicator-style moment
functions collapse to a handful of columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import (DiscreteDistribution, LatentGrid, ModelSpec, Tolerances,
                   EPS_GROW, model_grid, moment_image, section)
from .errors import (EmptyIntervalError, EmptySectionError,
                     NumericalInstabilityError)

__all__ = [
    "LpOutcome",
    "SelectionLP",
    "Selection",
    "BoundsResult",
    "solve_lp",
    "build_selection_lp",
    "min_violation",
    "functional_bounds",
    "dump_lp",
]

_PIVOT_ZERO = 1e-12   # below this a pivot candidate is treated as zero
_PIVOT_SAFE = 1e-9    # gray zone [_PIVOT_ZERO, _PIVOT_SAFE) raises
_RCOST_TOL = 1e-9
_FEAS_TOL = 1e-9
_REFACTOR_EVERY = 64


@dataclass
class LpOutcome:
    """Result of one LP solve in standard form min c'x, Ax=b, x>=0."""

    status: str                      # "optimal" | "infeasible" | "unbounded"
    objective: float = math.nan
    x: np.ndarray | None = None
    dual: np.ndarray | None = None   # simplex multipliers at the final basis
    farkas: np.ndarray | None = None  # y with A'y <= 0, b'y > 0 when infeasible
    ray: np.ndarray | None = None    # improving feasible direction when unbounded
    iterations: int = 0


class _Simplex:
    """Revised simplex on min c'x s.t. Ax=b, x>=0 with Bland's rule."""

    def __init__(self, A: np.ndarray, b: np.ndarray, c: np.ndarray):
        self.A = A
        self.b = b
        self.c = c
        self.m, self.n = A.shape
        self.iterations = 0

    def run(self, basis: list[int], B_inv: np.ndarray):
        """Iterate from a feasible basis; returns (status, basis, B_inv)."""
        A, b, c = self.A, self.b, self.c
        since_refactor = 0
        max_iter = 10000 + 50 * (self.m + self.n)
        while True:
            if self.iterations > max_iter:
                raise NumericalInstabilityError(
                    f"simplex exceeded {max_iter} iterations")
            y = c[basis] @ B_inv
            reduced = c - y @ A
            candidates = np.flatnonzero(reduced < -_RCOST_TOL)
            if candidates.size == 0:
                return "optimal", basis, B_inv
            j = int(candidates[0])  # Bland: smallest entering index
            d = B_inv @ A[:, j]
            x_b = B_inv @ b
            pos = d > _PIVOT_SAFE
            if not np.any(pos):
                gray = (d > _PIVOT_ZERO) & ~pos
                if np.any(gray):
                    raise NumericalInstabilityError(
                        f"pivot candidates in column {j} all below {_PIVOT_SAFE}")
                self._ray_col = j
                self._ray_dir = d
                return "unbounded", basis, B_inv
            ratios = np.full(self.m, np.inf)
            ratios[pos] = x_b[pos] / d[pos]
            best = ratios.min()
            # ties broken by smallest basic-variable index (Bland)
            tied = np.flatnonzero(ratios <= best + 1e-15)
            r = int(min(tied, key=lambda i: basis[i]))
            pivot = d[r]
            if abs(pivot) < _PIVOT_ZERO:
                raise NumericalInstabilityError(
                    f"pivot magnitude {abs(pivot):.3e} below {_PIVOT_ZERO}")
            # product-form update of the basis inverse
            E = B_inv[r] / pivot
            B_inv = B_inv - np.outer(d, E)
            B_inv[r] = E
            basis[r] = j
            self.iterations += 1
            since_refactor += 1
            if since_refactor >= _REFACTOR_EVERY:
                B_inv = np.linalg.inv(A[:, basis])
                since_refactor = 0


def solve_lp(c: np.ndarray, A: np.ndarray, b: np.ndarray,
             sense: str = "min") -> LpOutcome:
    """Solve min (or max) c'x subject to Ax = b, x >= 0.

    Two-phase dense revised simplex.  Infeasibility is certified by a
    Farkas direction, unboundedness by a feasible improving ray.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    c = np.asarray(c, dtype=float).ravel()
    m, n = A.shape
    if b.shape[0] != m or c.shape[0] != n:
        raise ValueError("inconsistent LP shapes")
    if sense not in ("min", "max"):
        raise ValueError(f"unknown sense {sense!r}")
    flip_obj = -1.0 if sense == "max" else 1.0
    c_int = flip_obj * c

    # normalize to b >= 0 for phase 1, remembering the row signs
    row_sign = np.where(b < 0, -1.0, 1.0)
    A1 = A * row_sign[:, None]
    b1 = b * row_sign

    # phase 1: artificial basis
    A_ph1 = np.hstack([A1, np.eye(m)])
    c_ph1 = np.concatenate([np.zeros(n), np.ones(m)])
    basis = list(range(n, n + m))
    B_inv = np.eye(m)
    ph1 = _Simplex(A_ph1, b1, c_ph1)
    status, basis, B_inv = ph1.run(basis, B_inv)
    x_b = B_inv @ b1
    infeas = float(c_ph1[basis] @ x_b)
    if infeas > _FEAS_TOL * (1.0 + abs(b1).max(initial=0.0)):
        y = c_ph1[basis] @ B_inv
        # farkas certificate in the original row orientation
        return LpOutcome(status="infeasible", farkas=-(y * row_sign),
                         iterations=ph1.iterations)

    # drive remaining artificials out of the basis, dropping redundant rows
    keep_rows = list(range(m))
    for r in range(m):
        if basis[r] >= n:
            row = B_inv[r] @ A1
            piv_candidates = np.flatnonzero(np.abs(row) > _PIVOT_SAFE)
            if piv_candidates.size == 0:
                keep_rows = [k for k in keep_rows if k != r]
                continue
            j = int(piv_candidates[0])
            d = B_inv @ A_ph1[:, j]
            pivot = d[r]
            E = B_inv[r] / pivot
            B_inv = B_inv - np.outer(d, E)
            B_inv[r] = E
            basis[r] = j
    if len(keep_rows) < m:
        rows = np.array(keep_rows, dtype=int)
        A1 = A1[rows]
        b1 = b1[rows]
        row_sign = row_sign[rows]
        basis = [basis[r] for r in keep_rows]
        B_inv = np.linalg.inv(A1[:, basis])
        m = len(keep_rows)

    # phase 2
    ph2 = _Simplex(A1, b1, c_int)
    status, basis, B_inv = ph2.run(list(basis), B_inv)
    iters = ph1.iterations + ph2.iterations
    if status == "unbounded":
        ray = np.zeros(n)
        ray[ph2._ray_col] = 1.0
        for r, var in enumerate(basis):
            ray[var] = -ph2._ray_dir[r]
        return LpOutcome(status="unbounded", objective=flip_obj * (-math.inf),
                         ray=ray, iterations=iters)

    B_inv = np.linalg.inv(A1[:, basis])  # final refactorization
    x = np.zeros(n)
    x[basis] = B_inv @ b1
    x[np.abs(x) < 1e-14] = 0.0
    resid = np.abs(A1 @ x - b1).max(initial=0.0)
    if resid > 1e-10:
        raise NumericalInstabilityError(
            f"optimal-basis residual {resid:.3e} exceeds 1e-10")
    y = c_int[basis] @ B_inv
    obj = float(c_int @ x)
    return LpOutcome(status="optimal", objective=flip_obj * obj, x=x,
                     dual=flip_obj * (y * row_sign), iterations=iters)


@dataclass
class SelectionLP:
    """Mass-variable description of the admissible-selection polytope.

    One column per exactly-distinct coefficient profile within each
    atom's section; ``col_rep`` records the lowest grid index realizing
    the profile.  ``extra`` carries values of additional per-point
    functionals (objectives or pinned rows) aligned with the columns.
    """

    weights: np.ndarray            # (n_atoms,)
    col_atom: np.ndarray           # (n_cols,) atom index per column
    col_rep: np.ndarray            # (n_cols,) representative grid index
    r2: np.ndarray                 # (n_cols, dim_r2)
    extra: np.ndarray              # (n_cols, n_extra)
    r1_resid: np.ndarray           # (dim_r1,)
    scale: float

    @property
    def n_cols(self) -> int:
        return self.col_atom.shape[0]

    @property
    def n_atoms(self) -> int:
        return self.weights.shape[0]


@dataclass
class Selection:
    """A feasible conditional mass table, reported per atom."""

    atoms: list[list[tuple[int, float]]]   # (grid index, mass) pairs

    def total_mass(self) -> float:
        return math.fsum(m for per_atom in self.atoms for _, m in per_atom)


@dataclass
class BoundsResult:
    """Scalar interval with truncation-growth flags per endpoint.

    A growing endpoint moved by more than EPS_GROW * (1 + |endpoint|)
    when the truncation radius doubled, which is the operational signal
    that the underlying quantity is unbounded in that direction.
    """

    lo: float
    hi: float
    lo_growing: bool = False
    hi_growing: bool = False
    truncation: float | None = None
    doubled: tuple[float, float] | None = None


def build_selection_lp(model: ModelSpec, grid: LatentGrid,
                       data: DiscreteDistribution, theta: np.ndarray,
                       extra_fns: Sequence[Callable] = ()) -> SelectionLP:
    """Assemble the per-atom mass columns at ``theta``.

    ``extra_fns`` are vectorized functionals ``fn(u_batch, z) -> (n,)``
    evaluated on section points; their values join the dedup key so
    merged columns are exactly interchangeable for every later use.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    col_atom: list[np.ndarray] = []
    col_rep: list[np.ndarray] = []
    r2_rows: list[np.ndarray] = []
    extra_rows: list[np.ndarray] = []
    scale = 0.0
    r1_resid = np.zeros(model.moments.dim_r1)
    for i, atom in enumerate(data):
        try:
            idx = section(model, grid, atom.z, theta)
        except EmptySectionError as e:
            e.atom_index = i
            raise
        u = grid.points[idx]
        vals = model.moments.eval_r2(u, atom.z, theta)
        if vals.size and not np.all(np.isfinite(vals)):
            raise EmptySectionError(
                f"non-finite moment values at atom {i}", atom_index=i)
        ex = (np.column_stack([np.asarray(fn(u, atom.z), dtype=float).ravel()
                               for fn in extra_fns])
              if extra_fns else np.zeros((idx.shape[0], 0)))
        profile = np.hstack([vals, ex])
        if profile.shape[1]:
            _, first, inverse = np.unique(profile, axis=0, return_index=True,
                                          return_inverse=True)
            # reorder unique profiles by first occurrence to keep grid order
            order = np.argsort(first, kind="stable")
            rank = np.empty_like(order)
            rank[order] = np.arange(order.size)
            inverse = rank[inverse]
            first = first[order]
            reps = idx[first]
            vals_u = vals[first]
            ex_u = ex[first]
        else:
            reps = idx[:1]
            vals_u = vals[:1] if vals.size else np.zeros((1, 0))
            ex_u = ex[:1]
        col_atom.append(np.full(reps.shape[0], i, dtype=int))
        col_rep.append(reps)
        r2_rows.append(vals_u)
        extra_rows.append(ex_u)
        if vals.size:
            scale = max(scale, float(np.abs(vals).max()))
        if model.moments.dim_r1:
            r1_val = model.moments.eval_r1(atom.z, theta)
            scale = max(scale, float(np.abs(r1_val).max()))
            r1_resid += atom.weight * r1_val
    return SelectionLP(
        weights=data.weights,
        col_atom=np.concatenate(col_atom),
        col_rep=np.concatenate(col_rep),
        r2=np.vstack(r2_rows),
        extra=np.vstack(extra_rows),
        r1_resid=r1_resid,
        scale=scale,
    )


def _balance_block(lp: SelectionLP) -> np.ndarray:
    B = np.zeros((lp.n_atoms, lp.n_cols))
    B[lp.col_atom, np.arange(lp.n_cols)] = 1.0
    return B


def _selection_from_x(lp: SelectionLP, x: np.ndarray) -> Selection:
    per_atom: list[list[tuple[int, float]]] = [[] for _ in range(lp.n_atoms)]
    for j in range(lp.n_cols):
        mass = float(x[j])
        if mass > 0.0:
            per_atom[int(lp.col_atom[j])].append((int(lp.col_rep[j]), mass))
    return Selection(atoms=per_atom)


def min_violation(model: ModelSpec, grid: LatentGrid,
                  data: DiscreteDistribution, theta: np.ndarray,
                  ) -> tuple[float, Selection]:
    """Smallest attainable L1 norm of the full moment residual.

    Slack pairs s+, s- per coordinate of (r1, r2) linearize the L1
    objective; the z-only block enters through its constant residual.
    The parameter is declared a member of the discretized identified
    set when the optimum is at most ``Tolerances.lp`` for the model's
    moment scale.
    """
    lp = build_selection_lp(model, grid, data, theta)
    d1 = model.moments.dim_r1
    d2 = model.moments.dim_r2
    d = d1 + d2
    n_p = lp.n_cols
    n = n_p + 2 * d
    A = np.zeros((lp.n_atoms + d, n))
    b = np.zeros(lp.n_atoms + d)
    A[:lp.n_atoms, :n_p] = _balance_block(lp)
    b[:lp.n_atoms] = lp.weights
    # moment rows: (E_H r)_j + s+_j - s-_j = 0
    for j in range(d1):
        row = lp.n_atoms + j
        b[row] = -lp.r1_resid[j]
    if d2:
        A[lp.n_atoms + d1:, :n_p] = lp.r2.T
    A[lp.n_atoms:, n_p:n_p + d] = np.eye(d)
    A[lp.n_atoms:, n_p + d:] = -np.eye(d)
    c = np.concatenate([np.zeros(n_p), np.ones(2 * d)])
    out = solve_lp(c, A, b)
    if out.status != "optimal":
        # mass-balance rows always admit a feasible point, so anything
        # else indicates solver trouble rather than model content
        raise NumericalInstabilityError(
            f"violation LP returned {out.status}")
    return float(out.objective), _selection_from_x(lp, out.x[:n_p])


def _pinned_rows(lp: SelectionLP, slack: float,
                 pin_extra_from: int = 0) -> tuple[np.ndarray, np.ndarray, int]:
    """Rows pinning weighted moment sums (and extra rows) to within ``slack``.

    Each pinned functional v'p contributes the pair v'p + a = slack and
    v'p - b = -slack with fresh nonnegative slacks a, b, so feasibility
    means |v'p| <= slack.
    """
    n_p = lp.n_cols
    blocks = []
    if lp.r2.shape[1]:
        blocks.append(lp.r2.T)
    if lp.extra.shape[1] > pin_extra_from:
        blocks.append(lp.extra[:, pin_extra_from:].T)
    if not blocks:
        return np.zeros((0, n_p)), np.zeros(0), 0
    V = np.vstack(blocks)
    k = V.shape[0]
    A = np.zeros((2 * k, n_p + 2 * k))
    b = np.zeros(2 * k)
    A[:k, :n_p] = V
    A[k:, :n_p] = V
    A[:k, n_p:n_p + k] = np.eye(k)
    A[k:, n_p + k:] = -np.eye(k)
    b[:k] = slack
    b[k:] = -slack
    return A, b, k


def functional_bounds(model: ModelSpec, grid: LatentGrid,
                      data: DiscreteDistribution, theta: np.ndarray,
                      g: Callable, extra_rows: Sequence[Callable] = (),
                      ) -> BoundsResult:
    """Min and max of E_H[g(U, Z)] over admissible selections at ``theta``.

    All r2 moment rows and every function in ``extra_rows`` are pinned
    to zero (within the membership tolerance); the z-only residual must
    already satisfy it.  When the latent box has an unbounded dimension
    the pair of solves is repeated at twice the truncation radius and
    each endpoint is flagged as growing when it moves by more than
    EPS_GROW * (1 + |endpoint|).
    """
    def solve_at(grid_at: LatentGrid) -> tuple[float, float]:
        lp = build_selection_lp(model, grid_at, data, theta,
                                extra_fns=[g, *extra_rows])
        tol = Tolerances.from_scale(lp.scale)
        if lp.r1_resid.size and np.abs(lp.r1_resid).max() > tol.lp:
            raise EmptyIntervalError(
                f"z-only residual {np.abs(lp.r1_resid).max():.3e} exceeds "
                f"membership tolerance at theta={theta.tolist()}")
        n_p = lp.n_cols
        P, pb, k = _pinned_rows(lp, tol.lp, pin_extra_from=1)
        n = n_p + 2 * k
        A = np.zeros((lp.n_atoms + P.shape[0], n))
        b = np.zeros(lp.n_atoms + P.shape[0])
        A[:lp.n_atoms, :n_p] = _balance_block(lp)
        b[:lp.n_atoms] = lp.weights
        A[lp.n_atoms:] = P[:, :n]
        b[lp.n_atoms:] = pb
        obj = np.zeros(n)
        obj[:n_p] = lp.extra[:, 0]
        lo_out = solve_lp(obj, A, b, sense="min")
        if lo_out.status == "infeasible":
            raise EmptyIntervalError(
                f"pinned selection LP infeasible at theta={theta.tolist()}")
        hi_out = solve_lp(obj, A, b, sense="max")
        if hi_out.status == "infeasible":
            raise EmptyIntervalError(
                f"pinned selection LP infeasible at theta={theta.tolist()}")
        return float(lo_out.objective), float(hi_out.objective)

    lo, hi = solve_at(grid)
    result = BoundsResult(lo=lo, hi=hi, truncation=grid.truncation)
    if model.latent.has_unbounded_dim():
        grid2 = model_grid(model, 2.0 * grid.truncation)
        lo2, hi2 = solve_at(grid2)
        result.doubled = (lo2, hi2)
        result.lo_growing = abs(lo2 - lo) > EPS_GROW * (1.0 + abs(lo))
        result.hi_growing = abs(hi2 - hi) > EPS_GROW * (1.0 + abs(hi))
    return result


def dump_lp(c: np.ndarray, A: np.ndarray, b: np.ndarray,
            sense: str = "min") -> str:
    """Plain-text tableau dump: one row per constraint, then the objective."""
    lines = [f"{sense} " + " ".join(repr(float(v)) for v in np.ravel(c))]
    A = np.atleast_2d(A)
    for i in range(A.shape[0]):
        coeffs = " ".join(repr(float(v)) for v in A[i])
        lines.append(f"{coeffs} == {float(b[i])!r}")
    return "\n".join(lines) + "\n"

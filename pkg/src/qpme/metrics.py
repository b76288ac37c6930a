"""Slice-based evaluation of trained solutions.

High-dimensional errors are measured on a 2D solution slice
u(t, x, y, c, ..., c) over an evenly spaced n-by-n grid on [-a, a]^2 (in
one dimension the slice degenerates to a line u(t, x)).  The discrete
norms follow the trapezoid-free mesh-sum convention

    ||f||_1 ~ (2a)^2 / n^2 * sum |f(x_i, y_j)|

with the L2 and H1 variants built the same way; relative errors divide
the difference norm by the exact-solution norm.  Gradients at the nodes
come from the evaluator itself (analytic or AD), not from grid
differencing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytic import DomainSpec


class UndefinedRelativeError(ArithmeticError):
    """Reference slice has zero norm; a relative error is meaningless."""


@dataclass
class SliceGrid:
    """Solution values and spatial gradient components on a planar slice.

    For d >= 2: values[i, j] = u(t, x_i, y_j, c, ..., c) with grad holding
    (du/dx, du/dy).  For d = 1 the arrays are one-dimensional.
    """

    t: float
    fixed_coord: float
    axis_points: np.ndarray
    values: np.ndarray
    grad: np.ndarray  # shape (2, n, n), or (1, n) when d = 1

    @property
    def n(self):
        return self.axis_points.shape[0]


def slice_points(domain: DomainSpec, fixed_coord, n):
    """(axis, X) with X of shape (d, n^2) enumerating the slice nodes
    (or (d, n) when d = 1)."""
    a = min(domain.half_widths)
    axis = np.linspace(-a, a, n)
    if domain.d == 1:
        return axis, axis[None, :]
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    X = np.full((domain.d, n * n), float(fixed_coord))
    X[0] = xx.ravel()
    X[1] = yy.ravel()
    return axis, X


def eval_slice(solution, domain: DomainSpec, t, fixed_coord=1.0, n=100) -> SliceGrid:
    """Fill a SliceGrid from an evaluator exposing value_and_grad(t, X)."""
    axis, X = slice_points(domain, fixed_coord, n)
    u, g = solution.value_and_grad(np.full(X.shape[1], float(t)), X)
    u = np.asarray(u, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    bad = ~(np.isfinite(u) & np.all(np.isfinite(g), axis=0))
    if bad.any():
        idx = int(np.argmax(bad))
        raise ArithmeticError(f"evaluator returned non-finite value at node {idx}")
    if domain.d == 1:
        return SliceGrid(t=float(t), fixed_coord=float(fixed_coord),
                         axis_points=axis, values=u, grad=g[:1])
    return SliceGrid(t=float(t), fixed_coord=float(fixed_coord), axis_points=axis,
                     values=u.reshape(n, n), grad=g[:2].reshape(2, n, n))


def _norms(values, grad, cell):
    l1 = cell * np.sum(np.abs(values))
    l2 = np.sqrt(cell * np.sum(values**2))
    h1 = np.sqrt(cell * np.sum(values**2 + np.sum(grad**2, axis=0)))
    return l1, l2, h1


def relative_errors(pred: SliceGrid, exact: SliceGrid):
    """(e_L1, e_L2, e_H1) of pred against exact on congruent grids."""
    if pred.values.shape != exact.values.shape:
        raise ValueError("slice grids are not congruent")
    if not np.allclose(pred.axis_points, exact.axis_points):
        raise ValueError("slice grids cover different axes")
    a = exact.axis_points[-1]
    n = exact.n
    cell = (2.0 * a) / n if exact.values.ndim == 1 else (2.0 * a) ** 2 / n**2
    dn = _norms(pred.values - exact.values, pred.grad - exact.grad, cell)
    en = _norms(exact.values, exact.grad, cell)
    if any(v == 0.0 for v in en):
        raise UndefinedRelativeError("exact slice norm is zero")
    return tuple(d / e for d, e in zip(dn, en))


def dump_slice_csv(path, grid: SliceGrid):
    """Write `x,y,value,gx,gy` rows (y, gy blank-free zeros when d = 1)."""
    with open(path, "w", newline="") as fh:
        fh.write("x,y,value,gx,gy\n")
        ax = grid.axis_points
        if grid.values.ndim == 1:
            for i in range(grid.n):
                fh.write(f"{ax[i]:.17g},0,{grid.values[i]:.17g},"
                         f"{grid.grad[0, i]:.17g},0\n")
            return
        for i in range(grid.n):
            for j in range(grid.n):
                fh.write(f"{ax[i]:.17g},{ax[j]:.17g},{grid.values[i, j]:.17g},"
                         f"{grid.grad[0, i, j]:.17g},{grid.grad[1, i, j]:.17g}\n")


# ---------------------------------------------------------------------------
# post-training constraint audits


@dataclass
class ConstraintReport:
    """Fractions of samples violating the a-priori solution bounds, for
    post-training solution selection."""

    denominator_violation: float
    negative_u: float
    sigma_below_growth: float
    min_denominator: float
    n_samples: int


def constraint_audit(t, X, T, d, u=None, denominator=None, sigma=None) -> ConstraintReport:
    """Check 1 - lap(phi) >= (t/T)^(d/(d+2)), u >= 0 and the matching
    lower bound on sigma over a sample set; entries may be None when the
    formulation does not produce them."""
    t = np.asarray(t, dtype=np.float64)
    bound = (np.clip(t, 0.0, None) / T) ** (d / (d + 2.0))
    n = int(np.atleast_1d(t).shape[0])

    def frac(mask):
        return float(np.mean(mask)) if mask is not None else 0.0

    denom_viol = None
    min_den = np.inf
    if denominator is not None:
        denominator = np.asarray(denominator, dtype=np.float64)
        denom_viol = denominator < bound
        min_den = float(np.min(denominator))
    neg_u = None if u is None else np.asarray(u) < 0
    sig_viol = None
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=np.float64)
        sig_viol = sigma < bound
        min_den = min(min_den, float(np.min(sigma)))
    return ConstraintReport(
        denominator_violation=frac(denom_viol),
        negative_u=frac(neg_u),
        sigma_below_growth=frac(sig_viol),
        min_denominator=min_den,
        n_samples=n,
    )

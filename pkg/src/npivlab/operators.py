"""Discretized conditional-expectation operator and its diagnostics.

The operator maps a function of x to its conditional expectation given
z = z_j, computed by quadrature against the conditional density:
(A phi)(z_j) = sum_i phi(x_i) f_{X|Z}(x_i | z_j) w_i. Rows of the kernel
are renormalized so each integrates exactly to one on the grid, which on
the one hand matches the defining property of a conditional density and
on the other makes A annihilate constants' error exactly.

Singular values are reported for the weighted matrix
W_z^(1/2) K W_x^(-1/2), whose singular values are those of the operator
between the weighted L2 spaces rather than artifacts of node placement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .function_space import Grid, GridFunction, GridMismatchError


@dataclass(frozen=True)
class DiscreteOperator:
    """Kernel matrix with quadrature weights folded in.

    kernel_matrix[j, i] = f_{X|Z}(x_i | z_j) * w_i, one row per z node.
    fz_weights[j] = z-quadrature weight times f_Z(z_j); rows excluded by a
    sampled-mode degeneracy flag carry fz_weight 0.
    """

    x_grid: Grid
    z_grid: Grid
    kernel_matrix: np.ndarray
    fz_weights: np.ndarray
    flagged_z: np.ndarray | None = None

    def __post_init__(self):
        K = np.asarray(self.kernel_matrix, dtype=float)
        fzw = np.asarray(self.fz_weights, dtype=float)
        object.__setattr__(self, "kernel_matrix", K)
        object.__setattr__(self, "fz_weights", fzw)
        if K.shape != (self.z_grid.size, self.x_grid.size):
            raise ValueError("kernel matrix shape must be (z size, x size)")
        row_sums = K.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > 1e-8):
            raise ValueError("kernel rows must integrate to 1 within 1e-8")
        if fzw.shape != (self.z_grid.size,) or np.any(fzw < 0):
            raise ValueError("fz_weights must be nonnegative, one per z node")


@dataclass(frozen=True)
class SvdReport:
    singular_values: np.ndarray
    numerical_rank: int
    decay_fit: float
    rank_tolerance: float


def discretize(dgp, x_grid: Grid, z_grid: Grid) -> DiscreteOperator:
    """Build the discrete operator from a Dgp's conditional density."""
    dens = dgp.f_x_given_z(x_grid.nodes[None, :], z_grid.nodes[:, None])
    K = dens * x_grid.weights[None, :]
    K = K / K.sum(axis=1, keepdims=True)
    fzw = z_grid.weights * dgp.f_z(z_grid.nodes)
    return DiscreteOperator(x_grid=x_grid, z_grid=z_grid, kernel_matrix=K, fz_weights=fzw)


def apply(A: DiscreteOperator, phi: GridFunction) -> GridFunction:
    if not phi.grid.same_as(A.x_grid):
        raise GridMismatchError("phi must live on the operator's x grid")
    return GridFunction(A.z_grid, A.kernel_matrix @ phi.values)


def residual_m(A: DiscreteOperator, phi: GridFunction, r: GridFunction) -> GridFunction:
    """Pointwise moment residual (A phi)(z) - r(z)."""
    if not r.grid.same_as(A.z_grid):
        raise GridMismatchError("r must live on the operator's z grid")
    return GridFunction(A.z_grid, apply(A, phi).values - r.values)


def q_infinity(A: DiscreteOperator, phi: GridFunction, r: GridFunction) -> float:
    """Weighted mean-square moment residual, the population criterion."""
    m = residual_m(A, phi, r)
    return float(np.dot(A.fz_weights, m.values**2))


def adjoint_apply(A: DiscreteOperator, psi: GridFunction) -> GridFunction:
    """Adjoint with respect to the f_Z-weighted product on the z side.

    Satisfies <A phi, psi>_{fz} = <phi, A* psi>_{x} on the grids exactly,
    up to rounding.
    """
    if not psi.grid.same_as(A.z_grid):
        raise GridMismatchError("psi must live on the operator's z grid")
    weighted = A.fz_weights * psi.values
    values = (A.kernel_matrix.T @ weighted) / A.x_grid.weights
    return GridFunction(A.x_grid, values)


def weighted_matrix(A: DiscreteOperator) -> np.ndarray:
    """The operator as a matrix between the weighted coordinate spaces.

    With u = sqrt(w_x) phi and v = sqrt(fz_weights) (A phi), the map u -> v
    is this matrix; Euclidean norms of u and v equal the weighted L2 norms.
    """
    sz = np.sqrt(A.fz_weights)
    sx = np.sqrt(A.x_grid.weights)
    return sz[:, None] * A.kernel_matrix / sx[None, :]


def svd_report(A: DiscreteOperator, rank_tolerance: float = 1e-12) -> SvdReport:
    """Singular values of the weighted operator plus decay diagnostics.

    decay_fit is the least-squares slope of log sigma_k against k over the
    values above 1e-14 * sigma_1 (the part of the spectrum not drowned in
    rounding).
    """
    s = np.linalg.svd(weighted_matrix(A), compute_uv=False)
    rank = int(np.sum(s > rank_tolerance * s[0])) if s.size and s[0] > 0 else 0
    positive = s > (1e-14 * s[0] if s.size and s[0] > 0 else 0.0)
    if positive.sum() >= 2:
        k = np.arange(1, s.size + 1)[positive]
        slope = float(np.polyfit(k, np.log(s[positive]), 1)[0])
    else:
        slope = float("nan")
    return SvdReport(
        singular_values=s,
        numerical_rank=rank,
        decay_fit=slope,
        rank_tolerance=rank_tolerance,
    )

"""Data-generating processes on [0, 1]^2 with known structural function.

The dependence between X and Z is a Gaussian copula: (X, Z) =
(Phi(V), Phi(W)) for standard bivariate normal (V, W) with correlation rho.
Both marginals are exactly uniform on [0, 1], the joint density is smooth
and bounded for |rho| < 1, and rho = 0 degenerates to the independent
case with density identically 1. Y = phi0(X) + noise_sd * eta with eta
standard normal independent of (V, W), so E[Y - phi0(X) | Z] = 0 holds by
construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .function_space import Grid, GridFunction

PHI0_CHOICES = ("square", "linear", "affine_plus_exp", "custom")

# Evaluation points are clipped away from 0 and 1 before the normal
# quantile transform; ndtri has poles at the endpoints.
_CLIP = 1e-12

_LATTICE = 512


@dataclass(frozen=True)
class DgpSpec:
    """Structural function choice, copula dependence, and noise level."""

    phi0: str = "square"
    rho: float = 0.5
    noise_sd: float = 0.0
    independent_case: bool = False
    phi0_table: tuple | None = None

    def __post_init__(self):
        if self.phi0 not in PHI0_CHOICES:
            raise ValueError(f"unknown phi0 choice {self.phi0!r}")
        if not abs(self.rho) < 1:
            raise ValueError("rho must satisfy |rho| < 1")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if self.phi0 == "custom":
            if self.phi0_table is None:
                raise ValueError("custom phi0 requires phi0_table")
            if len(self.phi0_table) < 2 or any(len(p) != 2 for p in self.phi0_table):
                raise ValueError("phi0_table must hold at least two (x, y) pairs")
            xs = [float(p[0]) for p in self.phi0_table]
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ValueError("phi0_table x values must be strictly increasing")


def phi0_callable(spec: DgpSpec):
    """Return phi0 as a vectorized callable on [0, 1]."""
    if spec.phi0 == "square":
        return lambda x: np.asarray(x, dtype=float) ** 2
    if spec.phi0 == "linear":
        return lambda x: np.asarray(x, dtype=float)
    if spec.phi0 == "affine_plus_exp":
        return lambda x: np.asarray(x, dtype=float) + 0.25 * np.expm1(
            np.asarray(x, dtype=float)
        )
    xs = np.array([p[0] for p in spec.phi0_table], dtype=float)
    ys = np.array([p[1] for p in spec.phi0_table], dtype=float)
    return lambda x: np.interp(np.asarray(x, dtype=float), xs, ys)


def phi0_on_grid(spec: DgpSpec, grid: Grid) -> GridFunction:
    return GridFunction(grid, phi0_callable(spec)(grid.nodes))


@dataclass(frozen=True)
class Dgp:
    spec: DgpSpec
    sup_fz: float
    sup_fxz: float

    def _copula(self, x, z):
        x = np.clip(np.asarray(x, dtype=float), _CLIP, 1.0 - _CLIP)
        z = np.clip(np.asarray(z, dtype=float), _CLIP, 1.0 - _CLIP)
        rho = self.spec.rho
        if self.spec.independent_case or rho == 0.0:
            return np.ones(np.broadcast(x, z).shape)
        a = ndtri(x)
        b = ndtri(z)
        s2 = 1.0 - rho * rho
        expo = (-rho * rho * (a * a + b * b) + 2.0 * rho * a * b) / (2.0 * s2)
        return np.exp(expo) / math.sqrt(s2)

    def f_xz(self, x, z):
        """Joint density of (X, Z); the copula density itself because the
        marginals are uniform."""
        return self._copula(x, z)

    def f_z(self, z):
        z = np.asarray(z, dtype=float)
        return np.ones(z.shape)

    def f_x_given_z(self, x, z):
        # conditional density equals the joint since f_Z is identically 1
        return self._copula(x, z)


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    seed: int

    @property
    def size(self) -> int:
        return self.x.size


def make_dgp(spec: DgpSpec) -> Dgp:
    """Construct the Dgp with density sup bounds from a midpoint lattice.

    The sup of the joint density is taken over a 512 x 512 lattice of cell
    midpoints. The copula density grows toward two corners of the square,
    so the lattice value understates the true supremum; it is the bound at
    the resolution the package actually evaluates densities on, and is the
    constant used by the integral-bound checks.
    """
    if not abs(spec.rho) < 1:
        raise ValueError("rho must satisfy |rho| < 1")
    pts = (np.arange(_LATTICE) + 0.5) / _LATTICE
    probe = Dgp(spec=spec, sup_fz=1.0, sup_fxz=1.0)
    vals = probe.f_xz(pts[None, :], pts[:, None])
    return Dgp(spec=spec, sup_fz=1.0, sup_fxz=float(vals.max()))


def bounded_density_check(dgp: Dgp, limit: float = 1e3) -> dict:
    """Report the density sup bounds and whether both sit below ``limit``."""
    return {
        "sup_fz": dgp.sup_fz,
        "sup_fxz": dgp.sup_fxz,
        "bounded": bool(np.isfinite(dgp.sup_fz))
        and bool(np.isfinite(dgp.sup_fxz))
        and dgp.sup_fz < limit
        and dgp.sup_fxz < limit,
    }


def reduced_form(dgp: Dgp, phi0: GridFunction, z_grid: Grid) -> GridFunction:
    """r(z_j) = integral of phi0(x) f_{X|Z}(x | z_j) dx on the x-quadrature.

    Uses the same row-normalized kernel as the discretized operator, so the
    moment condition r = A phi0 holds to machine precision on the grid.
    """
    from .operators import apply, discretize

    A = discretize(dgp, phi0.grid, z_grid)
    return apply(A, phi0)


def sample(dgp: Dgp, m: int, seed: int) -> Sample:
    """Draw m observations (x_i, y_i, z_i), deterministic in the seed."""
    if m < 1:
        raise ValueError("sample size m must be at least 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(m)
    w_indep = rng.standard_normal(m)
    rho = 0.0 if dgp.spec.independent_case else dgp.spec.rho
    w = rho * v + math.sqrt(1.0 - rho * rho) * w_indep
    x = ndtr(v)
    z = ndtr(w)
    y = phi0_callable(dgp.spec)(x)
    if dgp.spec.noise_sd > 0:
        y = y + dgp.spec.noise_sd * rng.standard_normal(m)
    return Sample(x=x, y=y, z=z, seed=seed)

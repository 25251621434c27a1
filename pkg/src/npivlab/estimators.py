"""Estimators for the inverse problem A phi = r, stable and unstable.

Four routes are implemented on top of the discretized operator:

  * tir_estimate: Tikhonov-regularized least squares with an identity or
    first-order Sobolev penalty, solved by the normal equations. Stable,
    with amplification bounded by 1/(2 sqrt(lambda)).
  * naive_estimate: minimum-norm least squares through a truncated SVD at
    machine tolerance. Faithful to the data and catastrophically unstable,
    since retained singular values reach the truncation floor.
  * constrained_estimate: the same least-squares objective under linear
    shape inequalities (nonnegativity, monotonicity, convexity) enforced on
    a uniform inspection grid, solved by a primal active-set method in the
    retained singular subspace with a KKT certificate.
  * sampled_plugin: kernel plug-in estimates of the operator and reduced
    form from a finite sample, feeding the same solvers.

All solves work in weighted coordinates u = sqrt(w_x) phi so that Euclidean
norms agree with the L2 norms of the function space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .function_space import (
    Grid,
    GridFunction,
    ShapeConstraint,
    ShapeVerdict,
    check_shape,
    default_inspection_grid,
    differentiation_matrix,
    l2_norm,
    resample_matrix,
)
from .operators import DiscreteOperator, apply, weighted_matrix

SVD_TRUNCATION_RTOL = 1e-12
QP_MAX_ITERATIONS = 2000


class NumericalError(RuntimeError):
    """A solve failed for numerical reasons."""


class DegenerateSampleError(NumericalError):
    """The sample cannot support a kernel plug-in (zero spread or the
    estimated instrument density vanishes on most of the grid)."""


@dataclass(frozen=True)
class TirConfig:
    """Regularization weight, penalty form, and estimation mode.

    lam >= 0; the Tikhonov solver itself requires lam > 0, while the
    constrained solver accepts lam = 0 to probe what constraints alone
    achieve. Bandwidths apply to sampled mode only; when omitted they fall
    back to the 1.06 * sigma * m^(-1/5) rule of thumb.
    """

    lam: float = 1e-4
    penalty: str = "sobolev_first_order"
    mode: str = "population"
    h_x: float | None = None
    h_z: float | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.penalty not in ("sobolev_first_order", "l2_only"):
            raise ValueError(f"unknown penalty {self.penalty!r}")
        if self.mode not in ("population", "sampled"):
            raise ValueError(f"unknown mode {self.mode!r}")
        for h in (self.h_x, self.h_z):
            if h is not None and h <= 0:
                raise ValueError("bandwidths must be positive")


@dataclass(frozen=True)
class ConstraintSet:
    """Shape constraints enforced as linear inequalities on grid values.

    Each constraint contributes the rows of an m-th order difference matrix
    applied to the estimate's values on the inspection grid.
    """

    constraints: tuple
    inspection_grid: Grid = field(default_factory=default_inspection_grid)

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        for c in self.constraints:
            if not isinstance(c, ShapeConstraint):
                raise ValueError("constraints must be ShapeConstraint instances")
            if c.tolerance < 0:
                raise ValueError("constraint tolerance must be nonnegative")

    def row_counts(self) -> list[int]:
        n = self.inspection_grid.size
        return [n - c.difference_order for c in self.constraints]

    def matrix_on_values(self, x_grid: Grid) -> np.ndarray:
        """Stacked inequality rows acting on values at x_grid nodes."""
        R = resample_matrix(x_grid, self.inspection_grid.nodes)
        blocks = []
        for c in self.constraints:
            m = c.difference_order
            blocks.append(np.diff(R, n=m, axis=0) if m > 0 else R)
        G = np.vstack(blocks) if blocks else np.zeros((0, x_grid.size))
        expected = sum(self.row_counts())
        if G.shape[0] != expected:
            raise NumericalError("constraint encoding lost rows")
        return G


@dataclass(frozen=True)
class EstimateResult:
    phi_hat: GridFunction
    objective: float
    lambda_used: float
    kkt_residual: float
    constraint_verdicts: dict
    condition_diagnostic: float
    converged: bool = True
    solver: str = ""


def _weighted_system(A: DiscreteOperator, r: GridFunction):
    if not r.grid.same_as(A.z_grid):
        raise ValueError("r must live on the operator's z grid")
    M = weighted_matrix(A)
    sw = np.sqrt(A.x_grid.weights)
    rt = np.sqrt(A.fz_weights) * r.values
    return M, sw, rt


def _derivative_form(A: DiscreteOperator) -> np.ndarray:
    # derivative operator expressed in the weighted coordinates
    sw = np.sqrt(A.x_grid.weights)
    D = differentiation_matrix(A.x_grid)
    return (sw[:, None] * D) / sw[None, :]


def tir_estimate(A: DiscreteOperator, r: GridFunction, cfg: TirConfig) -> EstimateResult:
    """Tikhonov-regularized solve via the normal equations.

    Minimizes ||A phi - r||^2 (fz-weighted) + lam * penalty(phi)^2. With the
    Sobolev penalty the system matrix is M^T M + lam (I + F^T F), symmetric
    positive definite with smallest eigenvalue at least lam.
    """
    if cfg.mode != "population":
        raise ValueError("tir_estimate runs in population mode")
    if cfg.lam <= 0:
        raise ValueError("tir_estimate requires lam > 0")
    M, sw, rt = _weighted_system(A, r)
    n = M.shape[1]
    H = M.T @ M + cfg.lam * np.eye(n)
    if cfg.penalty == "sobolev_first_order":
        F = _derivative_form(A)
        H = H + cfg.lam * (F.T @ F)
    b = M.T @ rt
    try:
        u = np.linalg.solve(H, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"normal equations solve failed: {exc}") from exc
    kkt = float(np.linalg.norm(H @ u - b))
    fit = float(np.linalg.norm(M @ u - rt) ** 2)
    pen = float(u @ u)
    if cfg.penalty == "sobolev_first_order":
        pen += float(np.linalg.norm(F @ u) ** 2)
    smallest_eig = float(np.linalg.eigvalsh(H)[0])
    return EstimateResult(
        phi_hat=GridFunction(A.x_grid, u / sw),
        objective=fit + cfg.lam * pen,
        lambda_used=cfg.lam,
        kkt_residual=kkt,
        constraint_verdicts={},
        condition_diagnostic=smallest_eig,
        solver="tir",
    )


def tir_penalty_value(A: DiscreteOperator, result: EstimateResult, cfg: TirConfig) -> float:
    """Penalty functional evaluated at an estimate (for path diagnostics)."""
    sw = np.sqrt(A.x_grid.weights)
    u = sw * result.phi_hat.values
    pen = float(u @ u)
    if cfg.penalty == "sobolev_first_order":
        F = _derivative_form(A)
        pen += float(np.linalg.norm(F @ u) ** 2)
    return pen


def naive_estimate(A: DiscreteOperator, r: GridFunction) -> EstimateResult:
    """Minimum-norm least squares through a truncated SVD.

    Truncation keeps singular values above 1e-12 relative to the largest,
    so the pseudo-inverse amplifies data perturbations by up to the
    reciprocal of the smallest retained value. condition_diagnostic reports
    that smallest retained singular value.
    """
    M, sw, rt = _weighted_system(A, r)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    keep = s > SVD_TRUNCATION_RTOL * (s[0] if s.size else 0.0)
    J = int(keep.sum())
    if J == 0:
        u = np.zeros(M.shape[1])
        sigma_min = 0.0
    else:
        coeffs = (U[:, :J].T @ rt) / s[:J]
        u = Vt[:J].T @ coeffs
        sigma_min = float(s[J - 1])
    fit = float(np.linalg.norm(M @ u - rt) ** 2)
    return EstimateResult(
        phi_hat=GridFunction(A.x_grid, u / sw),
        objective=fit,
        lambda_used=0.0,
        kkt_residual=0.0,
        constraint_verdicts={},
        condition_diagnostic=sigma_min,
        solver="naive",
    )


def _restricted_multipliers(Acon: np.ndarray, grad: np.ndarray, slack: np.ndarray):
    """Nonnegative multipliers supported on the near-active rows."""
    scale = max(1.0, float(np.abs(slack).max()) if slack.size else 1.0)
    active = slack <= 1e-7 * scale
    mu = np.zeros(Acon.shape[0])
    if active.any():
        try:
            mu_a, _ = nnls(Acon[active].T, grad, maxiter=max(600, 3 * Acon.shape[1] * 10))
        except Exception:
            mu_a = np.zeros(int(active.sum()))
        mu[np.nonzero(active)[0]] = mu_a
    return mu


def _solve_inequality_qp(S: np.ndarray, d: np.ndarray, Acon: np.ndarray, maxit: int):
    """min ||diag(S) y - d||^2 subject to Acon y >= 0, starting from y = 0.

    Primal active-set iteration with two safeguards for the degenerate
    geometry that arises here (hundreds of constraint rows meeting a low
    dimensional subspace): inner equality-constrained solves take the
    minimum-norm least-squares solution, and whenever a candidate point
    stalls, a nonnegative-least-squares fit of the gradient on the active
    rows either certifies optimality or supplies its residual as a strictly
    feasible descent direction (by the NNLS optimality conditions, the
    residual has nonnegative inner product with every active row).

    Returns (y, multipliers, iterations, converged).
    """
    nv = S.size
    nc = Acon.shape[0]
    y_unc = d / S
    if nc == 0 or float((Acon @ y_unc).min()) >= -1e-9:
        return y_unc, np.zeros(nc), 0, True
    y = np.zeros(nv)
    work: list[int] = []
    grad_scale = max(1.0, float(np.abs(2.0 * S * d).max()))
    best = (np.inf, y.copy(), np.zeros(nc))
    for it in range(1, maxit + 1):
        if len(work) >= nv:
            Z = np.zeros((nv, 0))
        elif work:
            Q, _ = np.linalg.qr(Acon[work].T, mode="complete")
            Z = Q[:, len(work):]
        else:
            Z = np.eye(nv)
        if Z.shape[1]:
            t, *_ = np.linalg.lstsq(S[:, None] * Z, d, rcond=SVD_TRUNCATION_RTOL)
            y_cand = Z @ t
        else:
            y_cand = y
        p = y_cand - y
        if np.linalg.norm(p) <= 1e-11 * (1.0 + np.linalg.norm(y)):
            grad = 2.0 * S * (S * y - d)
            slack = Acon @ y
            mu = _restricted_multipliers(Acon, grad, slack)
            residual_dir = Acon.T @ mu - grad
            stat = float(np.abs(residual_dir).max())
            if stat < best[0]:
                best = (stat, y.copy(), mu.copy())
            if stat <= 1e-8 * grad_scale:
                return y, mu, it, True
            q = S * residual_dir
            denom = 2.0 * float(q @ q)
            if denom <= 0.0:
                break
            step_unc = -float(grad @ residual_dir) / denom
            along = Acon @ residual_dir
            # rows where the direction points inward only by NNLS rounding
            # noise are not treated as blocking
            thresh = -1e-9 * max(1.0, float(np.abs(along).max()))
            blocking = along < thresh
            if blocking.any():
                step_max = float(
                    np.min(np.maximum(-slack[blocking], 0.0) / (-along[blocking]))
                )
            else:
                step_max = np.inf
            alpha = min(step_unc, step_max)
            if not np.isfinite(alpha) or alpha <= 1e-16:
                break
            y = y + alpha * residual_dir
            work = []
            continue
        slack = Acon @ y
        along = Acon @ p
        in_work = np.isin(np.arange(nc), work)
        mask = (along < -1e-13) & (~in_work)
        if mask.any():
            ratios = np.where(mask, -slack / np.where(mask, along, -1.0), np.inf)
            np.clip(ratios, 0.0, None, out=ratios)
            step_max = float(ratios.min())
        else:
            step_max = np.inf
        if step_max < 1.0:
            y = y + step_max * p
            if len(work) >= nv:
                grad = 2.0 * S * (S * y - d)
                mu_w, *_ = np.linalg.lstsq(Acon[work].T, grad, rcond=None)
                work.pop(int(np.argmin(mu_w)))
            work.append(int(np.argmin(ratios)))
        else:
            y = y_cand
    grad = 2.0 * S * (S * y - d)
    slack = Acon @ y
    mu = _restricted_multipliers(Acon, grad, slack)
    stat = float(np.abs(Acon.T @ mu - grad).max())
    if stat < best[0]:
        best = (stat, y, mu)
    return best[1], best[2], maxit, False


def _qp_certificate(S, d, Acon, y, mu):
    grad = 2.0 * S * (S * y - d)
    slack = Acon @ y if Acon.shape[0] else np.zeros(0)
    stat = float(np.abs(grad - Acon.T @ mu).max()) if Acon.shape[0] else float(
        np.abs(grad).max()
    )
    feas = float(max(0.0, -slack.min())) if slack.size else 0.0
    comp = float(np.abs(mu * slack).max()) if slack.size else 0.0
    dual = float(max(0.0, -mu.min())) if mu.size else 0.0
    return max(stat, feas, comp, dual)


def constrained_estimate(
    A: DiscreteOperator,
    r: GridFunction,
    cfg: TirConfig,
    constraints: ConstraintSet,
    maxit: int = QP_MAX_ITERATIONS,
) -> EstimateResult:
    """Least-squares solve under shape inequalities, with a KKT certificate.

    Minimizes the same objective as tir_estimate (with lam = 0 reducing to
    the plain data-fit objective) subject to the constraint rows evaluated
    on the inspection grid. The problem is projected onto the singular
    subspace retained at the truncation tolerance; within that subspace the
    active-set solver returns a certified optimum or, if the iteration cap
    is hit, the best iterate found with converged = False and the honest
    residual.
    """
    if cfg.lam < 0:
        raise ValueError("constrained_estimate requires lam >= 0")
    M, sw, rt = _weighted_system(A, r)
    n = M.shape[1]
    blocks = [M]
    rhs = [rt]
    if cfg.lam > 0:
        root = math.sqrt(cfg.lam)
        blocks.append(root * np.eye(n))
        rhs.append(np.zeros(n))
        if cfg.penalty == "sobolev_first_order":
            blocks.append(root * _derivative_form(A))
            rhs.append(np.zeros(n))
    B = np.vstack(blocks)
    b = np.concatenate(rhs)
    U, s, Vt = np.linalg.svd(B, full_matrices=False)
    keep = s > SVD_TRUNCATION_RTOL * (s[0] if s.size else 0.0)
    J = int(keep.sum())
    if J == 0:
        phi = GridFunction(A.x_grid, np.zeros(n))
        verdicts = {
            _verdict_key(c): check_shape(phi, c, constraints.inspection_grid)
            for c in constraints.constraints
        }
        return EstimateResult(
            phi_hat=phi,
            objective=float(b @ b),
            lambda_used=cfg.lam,
            kkt_residual=0.0,
            constraint_verdicts=verdicts,
            condition_diagnostic=0.0,
            solver="constrained",
        )
    Sj = s[:J]
    d = U[:, :J].T @ b
    G = constraints.matrix_on_values(A.x_grid) / sw[None, :]
    A_red = G @ Vt[:J].T
    y, mu, iterations, converged = _solve_inequality_qp(Sj, d, A_red, maxit)
    u = Vt[:J].T @ y
    kkt = _qp_certificate(Sj, d, A_red, y, mu)
    phi = GridFunction(A.x_grid, u / sw)
    verdicts = {
        _verdict_key(c): check_shape(phi, c, constraints.inspection_grid)
        for c in constraints.constraints
    }
    return EstimateResult(
        phi_hat=phi,
        objective=float(np.linalg.norm(B @ u - b) ** 2),
        lambda_used=cfg.lam,
        kkt_residual=kkt,
        constraint_verdicts=verdicts,
        condition_diagnostic=float(Sj[-1]),
        converged=converged,
        solver="constrained",
    )


def _verdict_key(c: ShapeConstraint) -> str:
    if c.kind == "derivative_sign":
        return f"derivative_sign_{c.order}"
    return c.kind


def sampled_plugin(sample, cfg: TirConfig, x_grid: Grid, z_grid: Grid):
    """Kernel plug-in operator and reduced form from a finite sample.

    The joint density of (X, Z) is estimated by a product-Gaussian kernel
    density estimator evaluated on the grid lattice, the instrument density
    by marginal integration over the x-quadrature, and the reduced form by
    Nadaraya-Watson regression of Y on Z at the z nodes. Kernel rows are
    renormalized to integrate to one. Nodes where the estimated instrument
    density falls below 1e-6 are flagged and excluded from the fz weights;
    if more than half the nodes are flagged the sample is declared
    degenerate.
    """
    if cfg.mode != "sampled":
        raise ValueError("sampled_plugin requires sampled mode")
    m = sample.size
    if m < 50:
        raise ValueError("sampled_plugin needs at least 50 observations")
    hx = cfg.h_x if cfg.h_x is not None else 1.06 * float(np.std(sample.x)) * m**-0.2
    hz = cfg.h_z if cfg.h_z is not None else 1.06 * float(np.std(sample.z)) * m**-0.2
    if not (hx > 1e-12 and hz > 1e-12):
        raise DegenerateSampleError("sample has (near) zero spread in x or z")
    gauss_x = np.exp(-0.5 * ((x_grid.nodes[:, None] - sample.x[None, :]) / hx) ** 2)
    gauss_z = np.exp(-0.5 * ((z_grid.nodes[:, None] - sample.z[None, :]) / hz) ** 2)
    norm = 1.0 / (m * hx * hz * 2.0 * math.pi)
    fxz_hat = norm * (gauss_z @ gauss_x.T)
    fz_hat = fxz_hat @ x_grid.weights
    flagged = fz_hat < 1e-6
    kernel_mass = gauss_z.sum(axis=1)
    flagged = flagged | (kernel_mass <= 0.0)
    if int(flagged.sum()) > z_grid.size // 2:
        raise DegenerateSampleError(
            f"estimated instrument density below threshold at "
            f"{int(flagged.sum())} of {z_grid.size} nodes"
        )
    K = fxz_hat * x_grid.weights[None, :]
    row_sums = K.sum(axis=1)
    dead = row_sums <= 0.0
    K[dead] = x_grid.weights[None, :]
    row_sums[dead] = 1.0
    K = K / row_sums[:, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        r_hat = np.where(kernel_mass > 0.0, (gauss_z @ sample.y) / kernel_mass, 0.0)
    fzw = z_grid.weights * fz_hat
    fzw[flagged] = 0.0
    op = DiscreteOperator(
        x_grid=x_grid,
        z_grid=z_grid,
        kernel_matrix=K,
        fz_weights=fzw,
        flagged_z=flagged,
    )
    return op, GridFunction(z_grid, r_hat)


def _probe_directions(A: DiscreteOperator, psi_index: int = 50):
    from .counterexamples import MONOTONE, CounterexampleSpec, psi as psi_fn

    fzw = A.fz_weights
    U, s, _ = np.linalg.svd(weighted_matrix(A), full_matrices=False)
    keep = s > SVD_TRUNCATION_RTOL * (s[0] if s.size else 0.0)
    J = max(int(keep.sum()), 1)
    sqrt_fzw = np.sqrt(fzw)
    inv = np.where(sqrt_fzw > 0, 1.0 / np.where(sqrt_fzw > 0, sqrt_fzw, 1.0), 0.0)
    worst = U[:, J - 1] * inv

    image = apply(A, psi_fn(CounterexampleSpec(MONOTONE, psi_index), A.x_grid)).values
    noise = np.random.default_rng(0).standard_normal(A.z_grid.size)

    def fz_normalize(v):
        nrm = math.sqrt(float(np.dot(fzw, v**2)))
        return v / nrm if nrm > 0 else v

    return {
        "worst_singular": fz_normalize(worst),
        "psi_image": fz_normalize(image),
        "white_noise": fz_normalize(noise),
    }


def stability_probe(
    A: DiscreteOperator,
    r: GridFunction,
    deltas,
    cfg: TirConfig,
) -> list:
    """Amplification table ||phi_hat(r + delta v) - phi_hat(r)|| / delta.

    Probed directions: the retained singular direction with the smallest
    singular value, the image of a high-index perturbation sequence member,
    and seeded white noise, each normalized in the fz-weighted norm. Rows
    cover the naive, Tikhonov, and constrained solvers. Tikhonov rows obey
    the operator-norm bound 1/(2 sqrt(lam)).
    """
    if cfg.lam <= 0:
        raise ValueError("stability_probe requires lam > 0 for the Tikhonov rows")
    directions = _probe_directions(A)
    cset = ConstraintSet(constraints=(ShapeConstraint("monotone_nondecreasing"),))
    solvers = {
        "naive": lambda rr: naive_estimate(A, rr),
        "tir": lambda rr: tir_estimate(A, rr, cfg),
        "constrained": lambda rr: constrained_estimate(A, rr, cfg, cset),
    }
    base = {name: solve(r) for name, solve in solvers.items()}
    rows = []
    for delta in deltas:
        for dname, v in directions.items():
            for sname, solve in solvers.items():
                if delta == 0:
                    amp = 0.0
                else:
                    shifted = GridFunction(A.z_grid, r.values + delta * v)
                    moved = solve(shifted)
                    diff = GridFunction(
                        A.x_grid,
                        moved.phi_hat.values - base[sname].phi_hat.values,
                    )
                    amp = l2_norm(diff) / delta
                rows.append(
                    {
                        "delta": float(delta),
                        "direction": dname,
                        "solver": sname,
                        "amplification": float(amp),
                    }
                )
    return rows

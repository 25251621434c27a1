"""Experiment runner: config ingestion, canonical experiments, CSV output.

Four experiments are provided, each returning a ResultTable whose metadata
echoes every configuration field, so a table is sufficient to re-run the
experiment that produced it.

  * illposedness_demo: walks the perturbation sequence and tabulates the
    criterion value, the analytic bound, and shape-preservation flags.
  * svd_report: singular value decay of the discretized operator at grid
    sizes 64 and 128.
  * estimator_comparison: naive, Tikhonov, and shape-constrained solves
    under perturbed reduced forms, with error and amplification columns.
  * montecarlo: sampled-mode replications with per-replication and summary
    rows.

Tables are written as RFC-4180-style CSV with '#'-prefixed metadata lines
and 17-significant-digit floats, so emitted values round-trip exactly.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .counterexamples import (
    FAMILIES,
    CounterexampleSpec,
    analytic_sup_A_psi_bound,
    perturb,
    perturbation_distance,
    psi,
)
from .dgp import DgpSpec, make_dgp, phi0_on_grid, sample
from .estimators import (
    ConstraintSet,
    DegenerateSampleError,
    TirConfig,
    constrained_estimate,
    naive_estimate,
    sampled_plugin,
    tir_estimate,
)
from .function_space import (
    UNIFORM_TRAPEZOID,
    Grid,
    GridFunction,
    ShapeConstraint,
    check_shape,
    l2_norm,
    make_grid,
    sobolev_norm,
)
from .operators import apply, discretize, q_infinity, svd_report

ARTIFACT_VERSION = "0.1.0"

EXPERIMENTS = (
    "illposedness_demo",
    "svd_report",
    "estimator_comparison",
    "montecarlo",
)

SVD_GRID_SIZES = (64, 128)
COMPARISON_N_VALUES = (0, 1, 2, 5, 10, 20, 50, 100)
CONSTRAINT_NAMES = ("nonnegative", "monotone_nondecreasing", "convex")


class ConfigError(ValueError):
    """An experiment configuration violates a validation rule."""


def parse_constraint(name: str) -> ShapeConstraint:
    if name in CONSTRAINT_NAMES:
        return ShapeConstraint(name)
    if name.startswith("derivative_sign_"):
        tail = name[len("derivative_sign_"):]
        if tail.isdigit() and int(tail) >= 1:
            return ShapeConstraint("derivative_sign", order=int(tail))
    raise ConfigError(f"unknown constraint name {name!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything an experiment needs, validated at construction.

    Validation raises ConfigError with a message naming the violated rule,
    so a bad config is rejected before any computation starts.
    """

    experiment: str
    dgp: DgpSpec = field(default_factory=DgpSpec)
    quadrature_size: int = 128
    inspection_size: int = 1001
    z_size: int = 128
    family: str = "monotone"
    n_max: int = 100
    epsilon: float = 0.1
    ball_radius: float = 0.5
    lambdas: tuple = (1e-4,)
    constraints: tuple = ("monotone_nondecreasing",)
    replications: int = 1
    sample_size: int = 10000
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "lambdas", tuple(float(l) for l in self.lambdas))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(
                f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}"
            )
        if not isinstance(self.dgp, DgpSpec):
            raise ConfigError("dgp must be a DgpSpec")
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.quadrature_size < 2 or self.z_size < 2:
            raise ConfigError("quadrature_size and z_size must be at least 2")
        if self.inspection_size < 4:
            raise ConfigError("inspection_size must be at least 4")
        if self.n_max < 0:
            raise ConfigError("n_max must be nonnegative")
        if self.n_max > 200:
            raise ConfigError(
                f"n_max must not exceed 200 (got {self.n_max}); the power-law "
                "normalizers overflow beyond that index"
            )
        if self.ball_radius <= 0:
            raise ConfigError("ball_radius must be positive")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.epsilon >= self.ball_radius:
            raise ConfigError(
                f"epsilon must lie strictly inside the ball: epsilon="
                f"{self.epsilon} >= ball_radius={self.ball_radius}"
            )
        if not self.lambdas:
            raise ConfigError("lambdas must contain at least one value")
        if any(l <= 0 for l in self.lambdas):
            raise ConfigError(
                "Tikhonov lambda values must be positive; got "
                f"{min(self.lambdas)}"
            )
        for name in self.constraints:
            parse_constraint(name)
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.experiment == "montecarlo" and self.sample_size < 50:
            raise ConfigError("sample_size must be at least 50 for montecarlo")


@dataclass
class ResultTable:
    columns: tuple
    rows: list
    metadata: dict

    def __post_init__(self):
        self.columns = tuple(self.columns)
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError("row length does not match column count")

    def column(self, name: str) -> list:
        idx = self.columns.index(name)
        return [row[idx] for row in self.rows]


def _metadata(cfg: ExperimentConfig) -> dict:
    table = cfg.dgp.phi0_table
    return {
        "artifact_version": ARTIFACT_VERSION,
        "experiment": cfg.experiment,
        "phi0": cfg.dgp.phi0,
        "rho": cfg.dgp.rho,
        "noise_sd": cfg.dgp.noise_sd,
        "independent_case": cfg.dgp.independent_case,
        "phi0_table": ""
        if table is None
        else ";".join("%.17g:%.17g" % (x, y) for x, y in table),
        "quadrature_size": cfg.quadrature_size,
        "inspection_size": cfg.inspection_size,
        "z_size": cfg.z_size,
        "family": cfg.family,
        "n_max": cfg.n_max,
        "epsilon": cfg.epsilon,
        "ball_radius": cfg.ball_radius,
        "lambdas": ";".join("%.17g" % l for l in cfg.lambdas),
        "constraints": ";".join(cfg.constraints),
        "replications": cfg.replications,
        "sample_size": cfg.sample_size,
        "seed": cfg.seed,
        "out": cfg.out or "",
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def _require(cfg: ExperimentConfig, experiment: str):
    if cfg.experiment != experiment:
        raise ConfigError(
            f"config is for experiment {cfg.experiment!r}, not {experiment!r}"
        )


def _problem(cfg: ExperimentConfig):
    dgp = make_dgp(cfg.dgp)
    x_grid = make_grid(cfg.quadrature_size)
    z_grid = make_grid(cfg.z_size)
    phi0 = phi0_on_grid(cfg.dgp, x_grid)
    A = discretize(dgp, x_grid, z_grid)
    r = apply(A, phi0)
    return dgp, x_grid, z_grid, phi0, A, r


def run_illposedness_demo(cfg: ExperimentConfig) -> ResultTable:
    """One row per perturbation index n from 0 to n_max.

    l2_dist is the measured distance of the perturbed function from the
    truth (equal to epsilon by the unit norm of the sequence), q_infty the
    population criterion, analytic_bound the closed-form upper bound
    epsilon^2 sup_fz bound(n)^2, and the _ok columns report shape checks of
    the perturbed function itself.
    """
    _require(cfg, "illposedness_demo")
    dgp, x_grid, _, phi0, A, r = _problem(cfg)
    inspection = make_grid(cfg.inspection_size, UNIFORM_TRAPEZOID)
    checks = [
        ShapeConstraint("monotone_nondecreasing"),
        ShapeConstraint("nonnegative"),
        ShapeConstraint("convex"),
    ]
    rows = []
    for n in range(cfg.n_max + 1):
        cspec = CounterexampleSpec(cfg.family, n, cfg.epsilon)
        perturbed = perturb(phi0, cspec)
        phi_n = perturbed.result
        direction = psi(cspec, x_grid)
        bound = analytic_sup_A_psi_bound(cspec, dgp.sup_fxz)
        flags = [bool(check_shape(phi_n, c, inspection)) for c in checks]
        rows.append(
            (
                n,
                perturbation_distance(perturbed),
                q_infinity(A, phi_n, r),
                cfg.epsilon**2 * dgp.sup_fz * bound**2,
                float(np.abs(apply(A, direction).values).max()),
                sobolev_norm(phi_n),
                flags[0],
                flags[1],
                flags[2],
            )
        )
    columns = (
        "n",
        "l2_dist",
        "q_infty",
        "analytic_bound",
        "sup_A_psi",
        "sobolev_norm_phi_n",
        "monotone_ok",
        "nonneg_ok",
        "convex_ok",
    )
    return ResultTable(columns=columns, rows=rows, metadata=_metadata(cfg))


def run_svd_report(cfg: ExperimentConfig) -> ResultTable:
    """Singular values of the weighted operator at grid sizes 64 and 128."""
    _require(cfg, "svd_report")
    dgp = make_dgp(cfg.dgp)
    rows = []
    for size in SVD_GRID_SIZES:
        grid = make_grid(size)
        report = svd_report(discretize(dgp, grid, grid))
        for k, sigma in enumerate(report.singular_values, start=1):
            rows.append((size, k, float(sigma)))
    return ResultTable(
        columns=("grid_size", "k", "sigma_k"),
        rows=rows,
        metadata=_metadata(cfg),
    )


def _comparison_indices(n_max: int) -> list:
    return [n for n in COMPARISON_N_VALUES if n <= n_max]


def run_estimator_comparison(cfg: ExperimentConfig) -> ResultTable:
    """Solver head-to-head under perturbed reduced forms r + eps A psi_n.

    error is the distance of the estimate from the unperturbed truth;
    amplification is the estimate's movement divided by the data
    perturbation norm. Constrained solves that hit the iteration cap are
    flagged through the converged column and the run continues.
    """
    _require(cfg, "estimator_comparison")
    dgp, x_grid, z_grid, phi0, A, r = _problem(cfg)
    inspection = make_grid(cfg.inspection_size, UNIFORM_TRAPEZOID)
    cset = ConstraintSet(
        constraints=tuple(parse_constraint(name) for name in cfg.constraints),
        inspection_grid=inspection,
    )

    def shape_ok(result):
        if result.constraint_verdicts:
            return all(bool(v) for v in result.constraint_verdicts.values())
        return all(
            bool(check_shape(result.phi_hat, c, inspection)) for c in cset.constraints
        )

    solvers = [
        ("naive", 0.0, lambda rr: naive_estimate(A, rr)),
    ]
    for lam in cfg.lambdas:
        tir_cfg = TirConfig(lam=lam)
        solvers.append(
            ("tir", lam, lambda rr, c=tir_cfg: tir_estimate(A, rr, c))
        )
    zero_cfg = TirConfig(lam=0.0)
    solvers.append(
        ("constrained", 0.0, lambda rr: constrained_estimate(A, rr, zero_cfg, cset))
    )
    baselines = {
        (name, lam): solve(r).phi_hat.values for name, lam, solve in solvers
    }
    rows = []
    for n in _comparison_indices(cfg.n_max):
        cspec = CounterexampleSpec(cfg.family, n, cfg.epsilon)
        image = apply(A, psi(cspec, x_grid)).values
        shift = cfg.epsilon * image
        delta = math.sqrt(float(np.dot(A.fz_weights, shift**2)))
        r_n = GridFunction(z_grid, r.values + shift)
        for name, lam, solve in solvers:
            est = solve(r_n)
            err = l2_norm(GridFunction(x_grid, est.phi_hat.values - phi0.values))
            moved = l2_norm(
                GridFunction(x_grid, est.phi_hat.values - baselines[(name, lam)])
            )
            rows.append(
                (
                    n,
                    lam,
                    name,
                    err,
                    moved / delta if delta > 0 else 0.0,
                    est.kkt_residual,
                    shape_ok(est),
                    est.condition_diagnostic,
                    est.converged,
                )
            )
    columns = (
        "n",
        "lambda",
        "solver",
        "error",
        "amplification",
        "kkt_residual",
        "constraints_ok",
        "condition_diagnostic",
        "converged",
    )
    return ResultTable(columns=columns, rows=rows, metadata=_metadata(cfg))


def _thread_count(replications: int) -> int:
    raw = os.environ.get("NPIVLAB_THREADS", "0").strip() or "0"
    try:
        requested = int(raw)
    except ValueError:
        raise ConfigError(f"NPIVLAB_THREADS must be an integer, got {raw!r}")
    if requested < 0:
        raise ConfigError("NPIVLAB_THREADS must be nonnegative")
    if requested == 0:
        requested = os.cpu_count() or 1
    return max(1, min(requested, replications))


def run_montecarlo(cfg: ExperimentConfig) -> ResultTable:
    """Sampled-mode replications of the naive and Tikhonov solvers.

    Each replication draws a sample at seed + offset, builds the kernel
    plug-in operator and reduced form, and records the interior
    reconstruction error (weighted RMS over quadrature nodes in
    [0.1, 0.9], away from boundary bias). Degenerate samples produce rows
    with status 'degenerate' rather than aborting the run. Summary rows
    carry the mean and standard deviation over successful replications.
    """
    _require(cfg, "montecarlo")
    dgp = make_dgp(cfg.dgp)
    x_grid = make_grid(cfg.quadrature_size)
    z_grid = make_grid(cfg.z_size)
    phi0 = phi0_on_grid(cfg.dgp, x_grid)
    interior = (x_grid.nodes >= 0.1) & (x_grid.nodes <= 0.9)
    weight_sum = float(x_grid.weights[interior].sum())
    plugin_cfg = TirConfig(lam=cfg.lambdas[0], mode="sampled")
    m = cfg.sample_size

    def interior_error(phi_hat: GridFunction) -> float:
        err = (phi_hat.values - phi0.values)[interior]
        w = x_grid.weights[interior]
        return math.sqrt(float(np.dot(w, err**2)) / weight_sum)

    def run_replication(i: int) -> list:
        draws = sample(dgp, m, cfg.seed + i)
        cells = [("naive", 0.0)] + [("tir", lam) for lam in cfg.lambdas]
        try:
            op, r_hat = sampled_plugin(draws, plugin_cfg, x_grid, z_grid)
        except DegenerateSampleError:
            return [
                ("replication", i, m, lam, name, float("nan"), "degenerate")
                for name, lam in cells
            ]
        rows = []
        for name, lam in cells:
            if name == "naive":
                est = naive_estimate(op, r_hat)
            else:
                est = tir_estimate(op, r_hat, TirConfig(lam=lam))
            rows.append(
                ("replication", i, m, lam, name, interior_error(est.phi_hat), "ok")
            )
        return rows

    workers = _thread_count(cfg.replications)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_rep = list(pool.map(run_replication, range(cfg.replications)))
    else:
        per_rep = [run_replication(i) for i in range(cfg.replications)]
    rows = [row for rep_rows in per_rep for row in rep_rows]

    summary = []
    cells = [("naive", 0.0)] + [("tir", lam) for lam in cfg.lambdas]
    for name, lam in cells:
        errs = [
            row[5]
            for row in rows
            if row[4] == name and row[3] == lam and row[6] == "ok"
        ]
        if errs:
            mean = float(np.mean(errs))
            sd = float(np.std(errs, ddof=1)) if len(errs) >= 2 else 0.0
        else:
            mean = float("nan")
            sd = float("nan")
        summary.append(("mean", -1, m, lam, name, mean, "summary"))
        summary.append(("sd", -1, m, lam, name, sd, "summary"))
    rows.extend(summary)
    columns = (
        "row_kind",
        "replication",
        "m",
        "lambda",
        "solver",
        "interior_error",
        "status",
    )
    return ResultTable(columns=columns, rows=rows, metadata=_metadata(cfg))


_RUNNERS = {
    "illposedness_demo": run_illposedness_demo,
    "svd_report": run_svd_report,
    "estimator_comparison": run_estimator_comparison,
    "montecarlo": run_montecarlo,
}


def run_experiment(cfg: ExperimentConfig) -> ResultTable:
    return _RUNNERS[cfg.experiment](cfg)


def _format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    if value is None:
        return ""
    return str(value)


def emit_csv(table: ResultTable, path) -> None:
    """Write metadata comment lines, a header row, and data rows.

    Floats are printed at 17 significant digits so parsing the file
    recovers them exactly. Lines end with CRLF.
    """
    import csv

    try:
        handle = open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path!r}: {exc}") from exc
    with handle:
        for key, value in table.metadata.items():
            handle.write(f"# {key} = {_format_cell(value)}\r\n")
        writer = csv.writer(handle)
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([_format_cell(cell) for cell in row])


def load_csv(path):
    """Parse a file written by emit_csv back into (metadata, columns, rows).

    Row cells come back as strings; numeric columns parse exactly with
    float() or int() thanks to the 17-digit output format.
    """
    import csv

    metadata = {}
    data_lines = []
    with open(path, newline="", encoding="utf-8") as handle:
        for line in handle:
            if line.startswith("#"):
                # keep any trailing space so empty values still split on " = "
                body = line[1:].strip("\r\n").lstrip()
                key, _, value = body.partition(" = ")
                metadata[key] = value.rstrip()
            else:
                data_lines.append(line)
    reader = csv.reader(data_lines)
    table = list(reader)
    if not table:
        raise ValueError(f"no header row in {path!r}")
    return metadata, tuple(table[0]), [tuple(r) for r in table[1:]]


_CONFIG_KEYS = (
    "experiment",
    "dgp",
    "quadrature_size",
    "inspection_size",
    "z_size",
    "family",
    "n_max",
    "epsilon",
    "ball_radius",
    "lambdas",
    "constraints",
    "replications",
    "sample_size",
    "seed",
    "out",
)

_DGP_KEYS = ("phi0", "rho", "noise_sd", "independent_case", "phi0_table")


def config_from_mapping(raw: dict) -> ExperimentConfig:
    """Build a validated config from parsed JSON, rejecting unknown keys."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    for key in raw:
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    kwargs = dict(raw)
    dgp_raw = kwargs.pop("dgp", None)
    if dgp_raw is None:
        dgp = DgpSpec()
    elif isinstance(dgp_raw, DgpSpec):
        dgp = dgp_raw
    elif isinstance(dgp_raw, dict):
        for key in dgp_raw:
            if key not in _DGP_KEYS:
                raise ConfigError(f"unknown dgp config key {key!r}")
        if "phi0_table" in dgp_raw and dgp_raw["phi0_table"] is not None:
            dgp_raw = dict(dgp_raw)
            dgp_raw["phi0_table"] = tuple(
                (float(x), float(y)) for x, y in dgp_raw["phi0_table"]
            )
        try:
            dgp = DgpSpec(**dgp_raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid dgp config: {exc}") from exc
    else:
        raise ConfigError("dgp config must be a JSON object")
    if "experiment" not in kwargs:
        raise ConfigError("config must name an experiment")
    try:
        return ExperimentConfig(dgp=dgp, **kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as handle:
            raw = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc}") from exc
    return config_from_mapping(raw)

"""Experiment drivers: convergence, conditioning, cut-position sweeps, ablation."""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .analysis import ErrorReport, constant_problem, eoc, error_norms, manufactured
from .assembly import AssembledSystem, PenaltyParameters, assemble, compute_scalings
from .geometry import Geometry, build_geometry
from .levelset import LevelSet, Sphere, Torus
from .mesh import BackgroundMesh, build_grid, check_resolution, refine_counts, shift_mesh
from .solver import estimate_condition, solve
from .space import DGSpace

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    geometry: str = "sphere"
    degree: int = 1
    epsilon: float = 1.0
    levels: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    gamma0: float | None = None
    gamma1: float = 0.5
    gamman: float = 1.0
    delta_samples: int = 50
    solver: str = "direct"
    tol: float = 1e-10
    maxit: int = 10_000
    out: str = "results"
    seed: int = 0
    problem: str = "manufactured"
    operator: str = "system"
    with_condition: bool = False
    condition_method: str = "lanczos"
    alpha: float = 1.03
    lifted: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.geometry not in ("sphere", "torus"):
            raise ConfigError(f"unknown geometry {self.geometry!r}")
        if self.degree not in (1, 2, 3):
            raise ConfigError("degree must be 1, 2 or 3")
        if not self.levels or any(l < 0 for l in self.levels) or list(self.levels) != sorted(self.levels):
            raise ConfigError("levels must be a nonempty ascending list of nonnegative integers")
        if self.delta_samples < 1:
            raise ConfigError("delta_samples must be >= 1")
        if self.solver not in ("direct", "bicgstab"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.problem not in ("manufactured", "constant"):
            raise ConfigError(f"unknown problem {self.problem!r}")
        if self.operator not in ("system", "identity"):
            raise ConfigError(f"unknown operator {self.operator!r}")
        try:
            self.penalties()
        except ValueError as err:
            raise ConfigError(str(err)) from err
        return self

    def penalties(self) -> PenaltyParameters:
        g0 = 5.0 * self.degree**2 if self.gamma0 is None else self.gamma0
        return PenaltyParameters(float(g0), float(self.gamma1), float(self.gamman))

    def header(self) -> list[str]:
        p = self.penalties()
        lines = [f"{f.name} = {_format_value(getattr(self, f.name))}" for f in fields(self)
                 if f.name not in ("out",)]
        lines.append(f"effective_penalties = {p.gamma0!r} {p.gamma1!r} {p.gamman!r}")
        lines.append("preconditioner = jacobi")
        return lines


def _format_value(v):
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return "" if v is None else str(v)


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _coerce(name: str, raw):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if name == "levels":
        return [int(x) for x in text.replace(",", " ").split()]
    if name == "gamma0":
        return None if text.lower() in ("", "none", "default") else float(text)
    if name in ("degree", "delta_samples", "maxit", "seed"):
        return int(text)
    if name in ("epsilon", "gamma1", "gamman", "tol", "alpha"):
        return float(text)
    if name in ("with_condition", "lifted"):
        if text.lower() not in _BOOL:
            raise ConfigError(f"invalid boolean {text!r}")
        return _BOOL[text.lower()]
    return text


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Flat ``key = value`` file (``#`` comments) plus keyword overrides."""
    values = {}
    names = {f.name for f in fields(ExperimentConfig)}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in names:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = val
    for key, val in overrides.items():
        if val is None:
            continue
        if key not in names:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = val
    try:
        coerced = {k: _coerce(k, v) for k, v in values.items()}
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    return ExperimentConfig(**coerced).validate()


def make_geometry_setup(config: ExperimentConfig) -> tuple[LevelSet, tuple, tuple]:
    """Level set, background box and base subdivision for the configured surface."""
    if config.geometry == "sphere":
        L = 1.21
        return Sphere(1.0), ((-L, -L, -L), (L, L, L)), (12, 12, 12)
    ls = Torus(1.0, 1.0 / 3.0)
    H = config.alpha * ls.r
    W = config.alpha * (ls.R + ls.r)
    return ls, ((-W, -W, -H), (W, W, H)), (12, 12, 3)


@dataclass
class Discretization:
    mesh: BackgroundMesh
    geometry: Geometry
    space: DGSpace
    problem: object
    system: AssembledSystem


def discretize(config: ExperimentConfig, level: int, delta: float = 0.0,
               penalties: PenaltyParameters | None = None) -> Discretization:
    ls, bounds, base = make_geometry_setup(config)
    mesh = build_grid(bounds, refine_counts(level, base))
    if delta:
        mesh = shift_mesh(mesh, delta)
    check_resolution(mesh.h, ls.curvature)
    k = config.degree
    geom = build_geometry(ls, mesh, 2 * k + 2, lifted=config.lifted)
    space = DGSpace(geom.active, k)
    if config.problem == "constant":
        problem = constant_problem(ls)
        data = problem
    else:
        problem = manufactured(config.epsilon, ls)
        data = problem.problem_data()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scalings = compute_scalings(data, ls, mesh.h)
    system = assemble(space, geom, data, penalties or config.penalties(), scalings)
    return Discretization(mesh, geom, space, problem, system)


def _solve(config: ExperimentConfig, system: AssembledSystem, method: str | None = None):
    method = method or config.solver
    if method == "bicgstab":
        return solve(system, "bicgstab", tol=config.tol, maxit=config.maxit)
    return solve(system, "direct", tol=config.tol)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if not math.isfinite(v):
        return "" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return f"{v:.15e}"


def rows_to_csv(rows: list[dict], columns: list[str], header: list[str] | None = None) -> str:
    buf = io.StringIO()
    for line in header or []:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, rows, columns, header=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(rows_to_csv(rows, columns, header))
    return path


def _distinct_levels(config: ExperimentConfig) -> list[int]:
    _, _, base = make_geometry_setup(config)
    seen, keep = set(), []
    for level in config.levels:
        counts = refine_counts(level, base)
        if counts in seen:
            log.info("level %d repeats mesh %s; skipped", level, counts)
            continue
        seen.add(counts)
        keep.append(level)
    return keep


CONVERGENCE_COLUMNS = ["level", "h", "ndofs", "l2_error", "sd_error", "sdh_error",
                       "eoc_l2", "eoc_sd", "iterations", "residual", "converged"]


def run_convergence(config: ExperimentConfig) -> list[dict]:
    """One row per distinct mesh of ``config.levels``; EOC against the previous row."""
    rows = []
    for level in _distinct_levels(config):
        d = discretize(config, level)
        report = _solve(config, d.system)
        err = error_norms(d.system, report.solution, d.problem, d.geometry)
        rows.append(dict(level=level, h=d.mesh.h, ndofs=d.space.n_dofs, l2_error=err.l2_error,
                         sd_error=err.sd_error, sdh_error=err.sdh_error,
                         iterations=report.iterations, residual=report.residual,
                         converged=report.converged))
        log.info("level %d: ndofs=%d l2=%.3e sd=%.3e", level, d.space.n_dofs,
                 err.l2_error, err.sd_error)
    for prev, row in zip(rows, rows[1:]):
        if prev["l2_error"] > 0 and row["l2_error"] > 0:
            row["eoc_l2"] = eoc([prev["l2_error"], row["l2_error"]], [prev["h"], row["h"]])[0]
        if prev["sd_error"] > 0 and row["sd_error"] > 0:
            row["eoc_sd"] = eoc([prev["sd_error"], row["sd_error"]], [prev["h"], row["h"]])[0]
    return rows


CONDITION_COLUMNS = ["level", "h", "ndofs", "sigma_max", "sigma_min", "cond"]


def _operator(config: ExperimentConfig, system: AssembledSystem):
    if config.operator == "identity":
        return sp.identity(system.n_dofs, format="csr")
    return system.A


def run_condition(config: ExperimentConfig) -> list[dict]:
    """Extreme singular values per level; rows whose ``sigma_min`` fails are dropped."""
    rows = []
    for level in _distinct_levels(config):
        d = discretize(config, level)
        sv = estimate_condition(_operator(config, d.system), method=config.condition_method,
                                  seed=config.seed)
        if sv.cond is None:
            log.warning("level %d: smallest singular value unavailable (%s)", level, sv.message)
            continue
        rows.append(dict(level=level, h=d.mesh.h, ndofs=d.space.n_dofs, sigma_max=sv.sigma_max,
                         sigma_min=sv.sigma_min, cond=sv.cond))
    return rows


PERTURBATION_COLUMNS = ["index", "delta", "ndofs", "l2_error", "sd_error", "sdh_error",
                        "iterations", "residual", "converged", "cond"]


def deltas(n: int) -> np.ndarray:
    return np.arange(n) / n


def run_perturbation(config: ExperimentConfig, penalties: PenaltyParameters | None = None,
                     with_condition: bool | None = None) -> list[dict]:
    """Shift the mesh through ``delta_samples`` values in [0, 1) at ``levels[0]``.

    Every sample is solved with BiCGStab (``tol``, ``maxit`` from the config).
    """
    with_condition = config.with_condition if with_condition is None else with_condition
    level = config.levels[0]
    rows = []
    for i, delta in enumerate(deltas(config.delta_samples)):
        d = discretize(config, level, float(delta), penalties)
        report = _solve(config, d.system, "bicgstab")
        if np.all(np.isfinite(report.solution)):
            err = error_norms(d.system, report.solution, d.problem, d.geometry)
        else:
            err = ErrorReport(math.inf, math.inf, math.inf, math.inf, math.inf)
        row = dict(index=i, delta=float(delta), ndofs=d.space.n_dofs, l2_error=err.l2_error,
                   sd_error=err.sd_error, sdh_error=err.sdh_error, iterations=report.iterations,
                   residual=report.residual, converged=report.converged)
        if with_condition:
            sv = estimate_condition(d.system, method=config.condition_method, seed=config.seed)
            row["cond"] = sv.cond
        rows.append(row)
        log.info("delta %.3f: sd=%.3e it=%d conv=%s", delta, err.sd_error, report.iterations,
                 report.converged)
    return rows


def ablation_variants(config: ExperimentConfig) -> dict[str, PenaltyParameters]:
    p = config.penalties()
    return {
        "default": p,
        "gamman0": replace(p, gamman=0.0),
        "gamma00": replace(p, gamma0=0.0),
        "gamma10": replace(p, gamma1=0.0),
    }


ABLATION_COLUMNS = ["variant"] + PERTURBATION_COLUMNS


def run_ablation(config: ExperimentConfig) -> list[dict]:
    rows = []
    for name, pen in ablation_variants(config).items():
        for row in run_perturbation(config, pen):
            rows.append({"variant": name, **row})
    return rows


SOLVE_COLUMNS = ["level", "h", "ndofs", "active_cells", "l2_error", "sd_error", "sdh_error",
                 "iterations", "residual", "converged"]


def run_solve(config: ExperimentConfig) -> list[dict]:
    level = config.levels[-1]
    d = discretize(config, level)
    report = _solve(config, d.system)
    err = error_norms(d.system, report.solution, d.problem, d.geometry)
    return [dict(level=level, h=d.mesh.h, ndofs=d.space.n_dofs, active_cells=d.space.active.n_cells,
                 l2_error=err.l2_error, sd_error=err.sd_error, sdh_error=err.sdh_error,
                 iterations=report.iterations, residual=report.residual,
                 converged=report.converged)]


EXPERIMENTS = {
    "convergence": (run_convergence, CONVERGENCE_COLUMNS),
    "condition": (run_condition, CONDITION_COLUMNS),
    "perturbation": (run_perturbation, PERTURBATION_COLUMNS),
    "ablation": (run_ablation, ABLATION_COLUMNS),
    "solve": (run_solve, SOLVE_COLUMNS),
}


def run_experiment(name: str, config: ExperimentConfig) -> Path:
    func, columns = EXPERIMENTS[name]
    rows = func(config)
    return write_csv(Path(config.out) / f"{name}.csv", rows, columns, config.header())

"""Convergence studies: L2(Q) errors, empirical orders, study drivers.

A study sweeps mesh levels, couples the penalty weight to the mesh size
(rho = h^2 with h = 1/m on structured meshes), solves, and measures the
L2(Q) distance between the computed state and the desired state by
subdivided quadrature.  Rows stream as they are produced so long runs
can be observed incrementally.
"""

import json
import math
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from . import dofmap as dofmap_mod
from . import mesh as mesh_mod
from . import ocp, quadrature

CSV_HEADER = "level,h,rho,dofs_total,dofs_X,dofs_Y,error_L2,eoc,iterations,wall_time_s"


@dataclass
class StudyRow:
    level: int
    h: float
    rho: float
    dofs_total: int
    dofs_X: int
    dofs_Y: int
    error_L2: float
    eoc: Optional[float]
    iterations: int
    wall_time: float
    h_diam: float = float("nan")
    delta: Optional[float] = None
    converged: bool = True
    block_residual: float = float("nan")
    true_relative_residual: float = float("nan")
    state_norm: float = float("nan")
    target_norm: Optional[float] = None
    audit_ok: Optional[bool] = None

    def csv_line(self):
        eoc = "" if self.eoc is None else f"{self.eoc:.6g}"
        return (
            f"{self.level},{self.h:.10g},{self.rho:.10g},{self.dofs_total},"
            f"{self.dofs_X},{self.dofs_Y},{self.error_L2:.10e},{eoc},"
            f"{self.iterations},{self.wall_time:.3f}"
        )


@dataclass
class StudyConfig:
    dim: int
    target: object
    levels: list
    coupling: object = "rho_eq_h2"  # or a fixed float rho
    solver: str = "saddle_gmres_ilu0"
    tol: float = 1e-8
    restart: int = 100
    maxit: int = 10000
    error_depth: Optional[int] = None  # None: per-target policy
    load_depth: int = 4
    audit: bool = True

    def __post_init__(self):
        if not self.levels:
            raise ValueError("levels must be nonempty")


def eoc(errors, h_ratio=2):
    """Empirical orders log(e_{l-1}/e_l) / log(h_ratio)."""
    errors = [float(e) for e in errors]
    if len(errors) < 2:
        raise ValueError("need at least two errors")
    if any(e <= 0 for e in errors):
        raise ValueError("errors must be positive")
    return [
        math.log(errors[i - 1] / errors[i]) / math.log(h_ratio)
        for i in range(1, len(errors))
    ]


def error_depth_policy(target, h):
    """Subdivision depth for error integration at mesh size h.

    Discontinuous targets follow the fixed deep setting (descent prunes
    elements away from the interface); kinked targets need moderate
    depth near creases; smooth integrands only need subcells below an
    absolute scale, so the depth shrinks as the mesh refines.
    """
    smooth_depth = max(0, math.ceil(math.log2(max(h * 32.0, 1.0))))
    if target.smoothness_class == "H12":
        return 6
    if target.smoothness_class == "H32":
        return max(4, smooth_depth)
    return smooth_depth


def element_errors(mesh, u_vertex, target, depth, order=2):
    """Per-element integrals of (u_h - target)^2 by subdivided quadrature."""
    d = mesh.dim
    acc = np.zeros(mesh.n_simplices)
    elem_ids = np.arange(mesh.n_simplices)
    for ids, bary, phys, w in quadrature.subdivided_batches(
        mesh.vertices, mesh.simplices, elem_ids, int(depth), order,
        simple_on_boxes=target.simple_on_boxes,
    ):
        u_loc = u_vertex[mesh.simplices[ids]]
        u_at = np.einsum("bpk,bk->bp", bary, u_loc)
        tv = target.evaluator(phys.reshape(-1, d)).reshape(w.shape)
        acc += np.bincount(ids, weights=(w * (u_at - tv) ** 2).sum(axis=1),
                           minlength=len(acc))
    return acc


def l2_error(mesh, u_vertex, target, depth, order=2):
    """L2(Q) distance between the P1 field and the target."""
    return float(np.sqrt(element_errors(mesh, u_vertex, target, depth,
                                        order=order).sum()))


def _solve_level(mesh, rho, target, config):
    problem = ocp.build_problem(mesh, rho, target,
                                load_depth=config.load_depth)
    solution = ocp.solve(problem, method=config.solver, tol=config.tol,
                         restart=config.restart, maxit=config.maxit)
    return problem, solution


def run_study(config):
    """Yield one StudyRow per level of a rho = h^2 convergence study."""
    target = config.target
    prev_error = None
    for lvl, m in enumerate(config.levels):
        t0 = time.perf_counter()
        mesh = mesh_mod.build_kuhn_mesh(config.dim, int(m))
        h = 1.0 / m
        rho = h * h if config.coupling == "rho_eq_h2" else float(config.coupling)
        problem, solution = _solve_level(mesh, rho, target, config)
        depth = (config.error_depth if config.error_depth is not None
                 else error_depth_policy(target, h))
        u_vertex = dofmap_mod.prolongate(problem.dof_X, solution.u)
        err = l2_error(mesh, u_vertex, target, depth)
        audit_ok = mesh_mod.audit_mesh(mesh).ok if config.audit else None
        row = StudyRow(
            level=lvl,
            h=h,
            rho=rho,
            dofs_total=problem.dof_X.count + problem.dof_Y.count,
            dofs_X=problem.dof_X.count,
            dofs_Y=problem.dof_Y.count,
            error_L2=err,
            eoc=(None if prev_error is None
                 else math.log(prev_error / err) / math.log(2.0)),
            iterations=solution.report.iterations,
            wall_time=time.perf_counter() - t0,
            h_diam=mesh.h_max,
            converged=solution.converged,
            block_residual=solution.block_residual,
            true_relative_residual=solution.report.true_relative_residual,
            state_norm=ocp.state_l2_norm(problem, solution.u),
            target_norm=target.norm_l2,
            audit_ok=audit_ok,
        )
        prev_error = err
        yield row


def run_noise_study(deltas, config=None, dim=3):
    """Noise study rows: h = 16 delta^2, rho = h^2, error vs the clean target.

    Every delta must satisfy 16 delta^2 = 2^-k so the mesh is dyadic.
    """
    from . import targets as targets_mod

    clean = targets_mod.cube_indicator(dim)
    prev_error = None
    prev_h = None
    for lvl, delta in enumerate(deltas):
        t0 = time.perf_counter()
        h = 16.0 * float(delta) ** 2
        m = round(1.0 / h)
        if not (m >= 1 and abs(m * h - 1.0) < 1e-12 and (m & (m - 1)) == 0):
            raise ValueError(
                f"delta={delta} gives h={h}, not an inverse power of two")
        cfg = config or StudyConfig(dim=dim, target=clean, levels=[m])
        mesh = mesh_mod.build_kuhn_mesh(dim, m)
        rho = h * h
        noisy = targets_mod.noisy_indicator(float(delta))
        problem, solution = _solve_level(mesh, rho, noisy, cfg)
        depth = (cfg.error_depth if cfg.error_depth is not None
                 else error_depth_policy(clean, h))
        u_vertex = dofmap_mod.prolongate(problem.dof_X, solution.u)
        err = l2_error(mesh, u_vertex, clean, depth)
        audit_ok = mesh_mod.audit_mesh(mesh).ok if cfg.audit else None
        row = StudyRow(
            level=lvl,
            h=h,
            rho=rho,
            dofs_total=problem.dof_X.count + problem.dof_Y.count,
            dofs_X=problem.dof_X.count,
            dofs_Y=problem.dof_Y.count,
            error_L2=err,
            eoc=(None if prev_error is None
                 else math.log(prev_error / err) / math.log(prev_h / h)),
            iterations=solution.report.iterations,
            wall_time=time.perf_counter() - t0,
            h_diam=mesh.h_max,
            delta=float(delta),
            converged=solution.converged,
            block_residual=solution.block_residual,
            true_relative_residual=solution.report.true_relative_residual,
            state_norm=ocp.state_l2_norm(problem, solution.u),
            target_norm=noisy.norm_l2,
            audit_ok=audit_ok,
        )
        prev_error, prev_h = err, h
        yield row


def write_csv(rows, path):
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.csv_line() + "\n")


def write_json(rows, path, config_text=None, extra=None):
    payload = {
        "rows": [_row_dict(r) for r in rows],
    }
    if config_text is not None:
        payload["config"] = config_text
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def _row_dict(row):
    d = asdict(row)
    return d


def write_gnuplot(rows, path):
    """Two-column (log10 h, log10 error) data file."""
    with open(path, "w") as fh:
        fh.write("# log10(h)  log10(error_L2)\n")
        for row in rows:
            fh.write(f"{math.log10(row.h):.10g} {math.log10(row.error_L2):.10g}\n")

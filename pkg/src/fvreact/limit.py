"""Implicit finite-volume solver for the conserved-variable diffusion problem.

In the fast-reaction regime the pair (u, v) collapses onto the equilibrium
manifold and the conserved combination w = u/alpha + v/beta alone evolves by
nonlinear diffusion.  Each implicit step solves

    m_K (w_K - w_K^prev) + dt sum_L T (phi(w_K) - phi(w_L)) = 0

with phi the kinetics' flux potential.  Newton corrections use the analytic
chain-rule slope of phi.  The scheme conserves sum_K m_K w_K exactly and
obeys a discrete maximum principle; both are enforced as post-conditions
within numerical slack.

phi is evaluated through its odd extension (phi(-s) := -phi(s)) so line
searches survive transiently negative iterates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._newton import damped_newton
from .errors import ConsistencyError, NonConvergenceError
from .kinetics import Kinetics
from .mesh import Mesh, TimeGrid
from .scheme import SolverConfig, StepStats, _cell_averages, _chain_transmissibilities

__all__ = [
    "WState",
    "WTrajectory",
    "project_initial_w",
    "step_w",
    "integrate_w",
    "write_w_csv",
]


@dataclass(eq=False)
class WState:
    """Cellwise conserved variable at one time level."""

    w: np.ndarray
    level: int
    time: float

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.w.ndim != 1:
            raise ValueError("w must be a 1D array")
        if not np.all(np.isfinite(self.w)):
            raise ValueError("state contains non-finite values")
        if self.level < 0 or self.time < 0:
            raise ValueError("level and time must be nonnegative")

    @property
    def n_cells(self) -> int:
        return self.w.shape[0]


@dataclass(eq=False)
class WTrajectory:
    states: list[WState]
    stats: list[StepStats] = field(default_factory=list)

    @property
    def levels(self) -> list[int]:
        return [s.level for s in self.states]

    @property
    def final(self) -> WState:
        return self.states[-1]

    def state_at(self, level: int) -> WState:
        for s in self.states:
            if s.level == level:
                return s
        raise KeyError(f"level {level} not recorded in trajectory")

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        levels = np.array([s.level for s in self.states], dtype=int)
        times = np.array([s.time for s in self.states], dtype=float)
        w = np.vstack([s.w for s in self.states]) if self.states else np.empty((0, 0))
        return levels, times, w


def project_initial_w(mesh: Mesh, kin: Kinetics, u0, v0,
                      n_quad: int = 1) -> WState:
    """Cell averages of u0/alpha + v0/beta, using the same quadrature as the
    coupled solver's projection so the two problems start from identical
    discrete mass."""
    u = _cell_averages(mesh, u0, n_quad, "u0")
    v = _cell_averages(mesh, v0, n_quad, "v0")
    return WState(w=u / kin.alpha + v / kin.beta, level=0, time=0.0)


def _phi_ext(kin: Kinetics, w: np.ndarray) -> np.ndarray:
    return np.sign(w) * np.asarray(kin.flux_potential(np.abs(w)), dtype=float)


def _phi_deriv_ext(kin: Kinetics, w: np.ndarray) -> np.ndarray:
    return np.asarray(kin.flux_potential_deriv(np.abs(w)), dtype=float)


def step_w(mesh: Mesh, kin: Kinetics, dt: float, prev: WState,
           cfg: SolverConfig | None = None) -> tuple[WState, StepStats]:
    """Advance the conserved variable one implicit step."""
    if cfg is None:
        cfg = SolverConfig()
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if prev.n_cells != mesh.n_cells:
        raise ValueError("state size does not match the mesh")
    m = mesh.volumes
    n = mesh.n_cells
    lap = mesh.laplacian()

    def residual_fn(w):
        return m * (w - prev.w) + dt * (lap @ _phi_ext(kin, w))

    def norm_fn(w, r):
        return float(np.max(np.abs(r) / (m * np.maximum(1.0, np.abs(w)))))

    solve_fn = _make_solve_fn_w(mesh, kin, dt, cfg)

    guesses = [("", prev.w)]
    mean = float(np.sum(m * prev.w) / np.sum(m))
    guesses.append(("mean-guess", np.full(n, mean)))
    result = None
    fallback = ""
    for tag, w0 in guesses:
        result = damped_newton(w0, residual_fn, solve_fn, norm_fn,
                               tol=cfg.newton_tol,
                               max_iter=cfg.newton_max_iter,
                               linesearch=cfg.linesearch)
        if result.converged:
            fallback = tag
            break
    if result is None or not result.converged:
        raise NonConvergenceError("implicit diffusion step did not converge",
                                  iterations=result.iterations,
                                  residual=result.residual)

    w_new = result.z
    slack = 10.0 * cfg.newton_tol * max(1.0, float(np.max(np.abs(prev.w))))
    if float(np.min(w_new)) < float(np.min(prev.w)) - slack \
            or float(np.max(w_new)) > float(np.max(prev.w)) + slack:
        raise ConsistencyError(
            "converged diffusion step violated the maximum principle "
            f"(range [{float(np.min(w_new))!r}, {float(np.max(w_new))!r}] vs "
            f"previous [{float(np.min(prev.w))!r}, {float(np.max(prev.w))!r}])")
    state = WState(w=w_new, level=prev.level + 1, time=prev.time + dt)
    stats = StepStats(level=state.level, dt=dt,
                      newton_iterations=result.iterations,
                      residual=result.residual, fallback=fallback)
    return state, stats


def _make_solve_fn_w(mesh: Mesh, kin: Kinetics, dt: float, cfg: SolverConfig):
    m = mesh.volumes
    n = mesh.n_cells

    if cfg.linear_solver == "sparse-direct" and mesh.is_chain() and n >= 2:
        from scipy.linalg import solve_banded

        t = _chain_transmissibilities(mesh)
        deg = np.zeros(n)
        deg[:-1] += t
        deg[1:] += t

        def solve_fn(w, r):
            phip = _phi_deriv_ext(kin, w)
            ab = np.zeros((3, n))
            ab[1] = m + dt * deg * phip
            ab[0, 1:] = -dt * t * phip[1:]
            ab[2, :-1] = -dt * t * phip[:-1]
            return solve_banded((1, 1), ab, r)

        return solve_fn

    lap = mesh.laplacian()

    if cfg.linear_solver == "dense-direct" or (
            cfg.linear_solver == "sparse-direct" and n <= 4):
        lap_dense = lap.toarray()

        def solve_fn(w, r):
            jac = np.diag(m) + dt * lap_dense * _phi_deriv_ext(kin, w)[None, :]
            return np.linalg.solve(jac, r)

        return solve_fn

    from scipy import sparse
    from scipy.sparse.linalg import bicgstab, spsolve

    def assemble(w):
        return (sparse.diags(m)
                + dt * (lap @ sparse.diags(_phi_deriv_ext(kin, w)))).tocsc()

    if cfg.linear_solver == "conjugate-gradient-class":
        def solve_fn(w, r):
            jac = assemble(w)
            precond = sparse.diags(1.0 / jac.diagonal())
            sol, info = bicgstab(jac, r, rtol=cfg.linear_tol, atol=0.0,
                                 M=precond, maxiter=20 * n)
            if info != 0:
                raise np.linalg.LinAlgError(
                    f"Krylov linear solve failed (info={info})")
            return sol

        return solve_fn

    def solve_fn(w, r):
        return spsolve(assemble(w), r)

    return solve_fn


def integrate_w(mesh: Mesh, kin: Kinetics, grid: TimeGrid, initial: WState,
                cfg: SolverConfig | None = None,
                output_levels=None) -> WTrajectory:
    """March the diffusion scheme over the whole grid; see scheme.integrate
    for the output_levels convention."""
    from .scheme import _output_set

    if initial.level != 0 or initial.time != 0.0:
        raise ValueError("integration starts from level 0 at time 0")
    if initial.n_cells != mesh.n_cells:
        raise ValueError("initial state size does not match the mesh")
    if np.any(initial.w < 0):
        raise ValueError("initial state must be nonnegative")
    keep = _output_set(output_levels, grid.n_steps)
    states: list[WState] = []
    stats: list[StepStats] = []
    state = initial
    if 0 in keep:
        states.append(state)
    for dt in grid.steps:
        state, st = step_w(mesh, kin, float(dt), state, cfg)
        stats.append(st)
        if state.level in keep:
            states.append(state)
    return WTrajectory(states=states, stats=stats)


def write_w_csv(mesh: Mesh, traj: WTrajectory, path) -> None:
    """Write recorded states as rows (level, t, cell_id, x, w)."""
    x = mesh.x
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "t", "cell_id", "x", "w"])
        for s in traj.states:
            for k in range(s.n_cells):
                writer.writerow([s.level, repr(float(s.time)), k, repr(float(x[k])),
                                 repr(float(s.w[k]))])

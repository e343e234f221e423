"""Fully implicit finite-volume scheme for the coupled two-species system.

Each time step solves, for every cell K with measure m_K and neighbor
transmissibilities T,

    m_K (u_K - u_K^prev) - dt diff_u sum_L T (u_L - u_K)
        + dt m_K alpha_hat (r_u(u_K) - r_v(v_K)) = 0
    m_K (v_K - v_K^prev) - dt diff_v sum_L T (v_L - v_K)
        - dt m_K beta_hat (r_u(u_K) - r_v(v_K)) = 0

simultaneously by damped Newton iteration on the full coupled system with an
analytic Jacobian.  No operator splitting, no clipping: nonnegativity and the
comparison structure must emerge from the solve, and a converged state that
violates them beyond numerical slack is reported as an internal error.

Rate laws are evaluated through their odd extension (r(-s) := -r(s)) so line
searches remain defined when an iterate transiently dips negative; converged
states are still required to be nonnegative within slack.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from ._newton import NewtonResult, damped_newton
from .errors import ConsistencyError, NonConvergenceError
from .kinetics import Kinetics, RateLaw
from .mesh import Mesh, TimeGrid, build_uniform_1d

__all__ = [
    "State",
    "SolverConfig",
    "StepStats",
    "Trajectory",
    "project_initial",
    "residual",
    "step",
    "integrate",
    "ode_upper_solution",
    "write_trajectory_csv",
    "write_stats_csv",
]

_LINEAR_SOLVERS = ("dense-direct", "sparse-direct", "conjugate-gradient-class")


@dataclass(eq=False)
class State:
    """Cellwise concentrations at one time level."""

    u: np.ndarray
    v: np.ndarray
    level: int
    time: float

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.u.ndim != 1 or self.u.shape != self.v.shape:
            raise ValueError("u and v must be 1D arrays of equal length")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ValueError("state contains non-finite values")
        if self.level < 0 or self.time < 0:
            raise ValueError("level and time must be nonnegative")

    @property
    def n_cells(self) -> int:
        return self.u.shape[0]


@dataclass(frozen=True)
class SolverConfig:
    """Knobs of the implicit step.

    linear_solver selects how Newton corrections are computed:
      * "sparse-direct" (default): banded direct solve when the mesh is a
        1D chain, scipy sparse LU otherwise (dense LAPACK below 5 cells,
        where sparse machinery only adds overhead).
      * "dense-direct": dense LAPACK solve; fine for small meshes.
      * "conjugate-gradient-class": Krylov iteration (BiCGStab with diagonal
        preconditioning) to linear_tol.
    """

    newton_tol: float = 1e-12
    newton_max_iter: int = 40
    linesearch: bool = True
    linear_solver: str = "sparse-direct"
    linear_tol: float = 1e-12

    def __post_init__(self):
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")
        if self.linear_solver == "cg":  # accepted shorthand
            object.__setattr__(self, "linear_solver", "conjugate-gradient-class")
        if self.linear_solver not in _LINEAR_SOLVERS:
            raise ValueError(
                f"linear_solver must be one of {_LINEAR_SOLVERS}, "
                f"got {self.linear_solver!r}")
        if self.linear_tol <= 0:
            raise ValueError("linear_tol must be positive")


@dataclass(frozen=True)
class StepStats:
    level: int              # index of the level this step produced
    dt: float
    newton_iterations: int
    residual: float         # final scaled residual (max norm)
    fallback: str = ""      # "", "equilibrium-guess" or "splitting"


@dataclass(eq=False)
class Trajectory:
    """States recorded along a time grid plus per-step solver statistics."""

    states: list[State]
    stats: list[StepStats] = field(default_factory=list)

    @property
    def levels(self) -> list[int]:
        return [s.level for s in self.states]

    @property
    def final(self) -> State:
        return self.states[-1]

    def state_at(self, level: int) -> State:
        for s in self.states:
            if s.level == level:
                return s
        raise KeyError(f"level {level} not recorded in trajectory")

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(levels, times, U, V) with U, V shaped (n_recorded, n_cells)."""
        levels = np.array([s.level for s in self.states], dtype=int)
        times = np.array([s.time for s in self.states], dtype=float)
        u = np.vstack([s.u for s in self.states]) if self.states else np.empty((0, 0))
        v = np.vstack([s.v for s in self.states]) if self.states else np.empty((0, 0))
        return levels, times, u, v


# -- odd extension of the rate laws ---------------------------------------

def _rate_ext(law: RateLaw, s: np.ndarray) -> np.ndarray:
    return np.sign(s) * np.asarray(law.value(np.abs(s)), dtype=float)


def _rate_deriv_ext(law: RateLaw, s: np.ndarray) -> np.ndarray:
    return np.asarray(law.deriv(np.abs(s)), dtype=float)


# -- initial projection ----------------------------------------------------

def project_initial(mesh: Mesh, u0, v0, n_quad: int = 1) -> State:
    """Project initial profiles onto cell averages.

    n_quad = 1 samples cell centers (the midpoint rule); higher orders use
    Gauss-Legendre quadrature on each cell and require 1D cell edges.
    Sampled values must be nonnegative.
    """
    u = _cell_averages(mesh, u0, n_quad, "u0")
    v = _cell_averages(mesh, v0, n_quad, "v0")
    return State(u=u, v=v, level=0, time=0.0)


def _cell_averages(mesh: Mesh, fn, n_quad: int, name: str) -> np.ndarray:
    if int(n_quad) != n_quad or n_quad < 1:
        raise ValueError(f"n_quad must be a positive integer, got {n_quad}")
    n_quad = int(n_quad)
    if n_quad == 1:
        pts = mesh.x if mesh.dim == 1 else mesh.centers
        vals = np.asarray(fn(pts), dtype=float)
        if vals.shape != (mesh.n_cells,):
            raise ValueError(f"{name} must return one value per sample point")
        if np.any(vals < 0):
            raise ValueError(f"{name} is negative at a cell center")
        return vals
    if mesh.edges is None:
        raise ValueError("quadrature beyond the midpoint rule needs 1D cell edges")
    nodes, weights = np.polynomial.legendre.leggauss(n_quad)
    lo = mesh.edges[:-1]
    hi = mesh.edges[1:]
    # points shaped (n_cells, n_quad); weights sum to 2 on [-1, 1]
    pts = 0.5 * (lo + hi)[:, None] + 0.5 * (hi - lo)[:, None] * nodes[None, :]
    vals = np.asarray(fn(pts.ravel()), dtype=float).reshape(pts.shape)
    if np.any(vals < 0):
        raise ValueError(f"{name} is negative at a quadrature point")
    return vals @ (weights / 2.0)


# -- residual and Jacobian solves ------------------------------------------

def residual(mesh: Mesh, kin: Kinetics, dt: float,
             prev: State, guess: State) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell residual pair of the implicit step at the given guess."""
    _check_shapes(mesh, prev, guess)
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    return _residual_uv(mesh, kin, dt, prev.u, prev.v, guess.u, guess.v)


def _residual_uv(mesh, kin, dt, u_prev, v_prev, u, v):
    m = mesh.volumes
    lap = mesh.laplacian()
    gap = _rate_ext(kin.rate_u, u) - _rate_ext(kin.rate_v, v)
    res_u = m * (u - u_prev) + dt * kin.diff_u * (lap @ u) \
        + dt * m * kin.alpha_hat * gap
    res_v = m * (v - v_prev) + dt * kin.diff_v * (lap @ v) \
        - dt * m * kin.beta_hat * gap
    return res_u, res_v


def _check_shapes(mesh, prev, guess):
    if prev.n_cells != mesh.n_cells or guess.n_cells != mesh.n_cells:
        raise ValueError("state size does not match the mesh")


def _chain_transmissibilities(mesh: Mesh) -> np.ndarray:
    """Per-pair transmissibility t[i] of face (i, i+1) on a chain mesh."""
    t = np.empty(mesh.n_cells - 1)
    lo = np.minimum(mesh.face_cells[:, 0], mesh.face_cells[:, 1])
    t[lo] = mesh.transmissibilities
    return t


def _make_solve_fn(mesh: Mesh, kin: Kinetics, dt: float, cfg: SolverConfig):
    """Return solve_fn(z, r) computing the Newton correction for the coupled
    system; z stacks [u, v]."""
    n = mesh.n_cells
    m = mesh.volumes
    a, b = kin.diff_u, kin.diff_v
    ah, bh = kin.alpha_hat, kin.beta_hat

    if cfg.linear_solver == "sparse-direct" and mesh.is_chain() and n >= 2:
        from scipy.linalg import solve_banded

        t = _chain_transmissibilities(mesh)
        deg = np.zeros(n)
        deg[:-1] += t
        deg[1:] += t
        idx_u = np.arange(0, 2 * n, 2)
        idx_v = idx_u + 1

        def solve_fn(z, r):
            # Interleaved ordering (u_0, v_0, u_1, v_1, ...) makes the
            # Jacobian pentadiagonal; assemble it directly in banded form.
            u, v = z[:n], z[n:]
            rup = _rate_deriv_ext(kin.rate_u, u)
            rvp = _rate_deriv_ext(kin.rate_v, v)
            ab = np.zeros((5, 2 * n))
            ab[2, idx_u] = m + dt * a * deg + dt * m * ah * rup
            ab[2, idx_v] = m + dt * b * deg + dt * m * bh * rvp
            ab[1, idx_v] = -dt * m * ah * rvp      # d res_u / d v, same cell
            ab[3, idx_u] = -dt * m * bh * rup      # d res_v / d u, same cell
            ab[0, idx_u[1:]] = -dt * a * t         # u coupling to next cell
            ab[0, idx_v[1:]] = -dt * b * t
            ab[4, idx_u[:-1]] = -dt * a * t
            ab[4, idx_v[:-1]] = -dt * b * t
            rhs = np.empty(2 * n)
            rhs[idx_u] = r[:n]
            rhs[idx_v] = r[n:]
            sol = solve_banded((2, 2), ab, rhs)
            return np.concatenate([sol[idx_u], sol[idx_v]])

        return solve_fn

    if cfg.linear_solver == "dense-direct" or (
            cfg.linear_solver == "sparse-direct" and n <= 4):
        # Direct solve either way; LAPACK beats sparse machinery for a
        # handful of cells (the companion ODE system is a single cell).
        lap_dense = mesh.laplacian().toarray()

        def solve_fn(z, r):
            u, v = z[:n], z[n:]
            rup = _rate_deriv_ext(kin.rate_u, u)
            rvp = _rate_deriv_ext(kin.rate_v, v)
            juu = np.diag(m) + dt * a * lap_dense + np.diag(dt * m * ah * rup)
            jvv = np.diag(m) + dt * b * lap_dense + np.diag(dt * m * bh * rvp)
            juv = np.diag(-dt * m * ah * rvp)
            jvu = np.diag(-dt * m * bh * rup)
            jac = np.block([[juu, juv], [jvu, jvv]])
            return np.linalg.solve(jac, r)

        return solve_fn

    from scipy import sparse
    from scipy.sparse.linalg import bicgstab, spsolve

    lap = mesh.laplacian()
    m_diag = sparse.diags(m)

    def assemble(z):
        u, v = z[:n], z[n:]
        rup = _rate_deriv_ext(kin.rate_u, u)
        rvp = _rate_deriv_ext(kin.rate_v, v)
        juu = m_diag + dt * a * lap + sparse.diags(dt * m * ah * rup)
        jvv = m_diag + dt * b * lap + sparse.diags(dt * m * bh * rvp)
        juv = sparse.diags(-dt * m * ah * rvp)
        jvu = sparse.diags(-dt * m * bh * rup)
        return sparse.bmat([[juu, juv], [jvu, jvv]], format="csr")

    if cfg.linear_solver == "conjugate-gradient-class":
        def solve_fn(z, r):
            jac = assemble(z)
            precond = sparse.diags(1.0 / jac.diagonal())
            sol, info = bicgstab(jac, r, rtol=cfg.linear_tol, atol=0.0,
                                 M=precond, maxiter=20 * jac.shape[0])
            if info != 0:
                raise np.linalg.LinAlgError(
                    f"Krylov linear solve failed (info={info})")
            return sol

        return solve_fn

    def solve_fn(z, r):
        return spsolve(assemble(z).tocsc(), r)

    return solve_fn


def _scaled_norm(mesh: Mesh):
    m = mesh.volumes
    n = mesh.n_cells

    def norm_fn(z, r):
        scale = np.concatenate([m * np.maximum(1.0, np.abs(z[:n])),
                                m * np.maximum(1.0, np.abs(z[n:]))])
        return float(np.max(np.abs(r) / scale))

    return norm_fn


# -- the implicit step -----------------------------------------------------

def step(mesh: Mesh, kin: Kinetics, dt: float, prev: State,
         cfg: SolverConfig | None = None) -> tuple[State, StepStats]:
    """Advance one implicit step; returns the new state and solve statistics.

    Tries damped Newton from the previous state, then from the
    chemical-equilibrium projection of the previous state, then falls back
    to a fixed-point iteration that freezes the opposite species' rate while
    solving each single-species implicit problem (still converging to the
    fully coupled solution).  Raises NonConvergenceError when all fail and
    ConsistencyError when a converged state breaks the scheme's bounds.
    """
    if cfg is None:
        cfg = SolverConfig()
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    _check_shapes(mesh, prev, prev)
    n = mesh.n_cells
    z_prev = np.concatenate([prev.u, prev.v])

    def residual_fn(z):
        ru, rv = _residual_uv(mesh, kin, dt, prev.u, prev.v, z[:n], z[n:])
        return np.concatenate([ru, rv])

    norm_fn = _scaled_norm(mesh)
    solve_fn = _make_solve_fn(mesh, kin, dt, cfg)

    guesses: list[tuple[str, np.ndarray]] = [("", z_prev)]
    if kin.rate_factor > 0:
        w = np.maximum(prev.u / kin.alpha + prev.v / kin.beta, 0.0)
        u_eq = np.asarray(kin.u_from_w(w), dtype=float)
        v_eq = np.asarray(kin.v_from_u(u_eq), dtype=float)
        guesses.append(("equilibrium-guess", np.concatenate([u_eq, v_eq])))

    result: NewtonResult | None = None
    fallback = ""
    for tag, z0 in guesses:
        result = damped_newton(z0, residual_fn, solve_fn, norm_fn,
                               tol=cfg.newton_tol,
                               max_iter=cfg.newton_max_iter,
                               linesearch=cfg.linesearch)
        if result.converged:
            fallback = tag
            break
    if result is None or not result.converged:
        result = _splitting_fallback(mesh, kin, dt, prev, cfg,
                                     residual_fn, norm_fn)
        fallback = "splitting"

    u_new, v_new = result.z[:n], result.z[n:]
    _check_step_bounds(kin, prev, u_new, v_new, cfg.newton_tol)
    state = State(u=u_new, v=v_new, level=prev.level + 1, time=prev.time + dt)
    stats = StepStats(level=state.level, dt=dt,
                      newton_iterations=result.iterations,
                      residual=result.residual, fallback=fallback)
    return state, stats


def _single_species_solve(mesh, dt, diff, coupling, law, x_prev, other_rate,
                          cfg):
    """Implicit single-species problem with the opposite rate frozen:
    m (x - x_prev) + dt diff L x + dt m coupling (r(x) - other_rate) = 0."""
    from scipy.linalg import solve_banded
    from scipy import sparse
    from scipy.sparse.linalg import spsolve

    m = mesh.volumes
    n = mesh.n_cells
    lap = mesh.laplacian()
    chain = mesh.is_chain() and n >= 2
    t = _chain_transmissibilities(mesh) if chain else None
    if chain:
        deg = np.zeros(n)
        deg[:-1] += t
        deg[1:] += t

    def residual_fn(x):
        return m * (x - x_prev) + dt * diff * (lap @ x) \
            + dt * m * coupling * (_rate_ext(law, x) - other_rate)

    def norm_fn(x, r):
        return float(np.max(np.abs(r) / (m * np.maximum(1.0, np.abs(x)))))

    def solve_fn(x, r):
        rp = _rate_deriv_ext(law, x)
        if chain:
            ab = np.zeros((3, n))
            ab[1] = m + dt * diff * deg + dt * m * coupling * rp
            ab[0, 1:] = -dt * diff * t
            ab[2, :-1] = -dt * diff * t
            return solve_banded((1, 1), ab, r)
        jac = sparse.diags(m + dt * m * coupling * rp) + dt * diff * lap
        return spsolve(jac.tocsc(), r)

    result = damped_newton(x_prev, residual_fn, solve_fn, norm_fn,
                           tol=cfg.newton_tol, max_iter=cfg.newton_max_iter,
                           linesearch=True)
    if not result.converged:
        raise NonConvergenceError("single-species sub-solve stalled",
                                  iterations=result.iterations,
                                  residual=result.residual)
    return result.z


def _splitting_fallback(mesh, kin, dt, prev, cfg, residual_fn, norm_fn,
                        max_sweeps: int = 200) -> NewtonResult:
    """Fixed-point iteration over species for steps where coupled Newton
    stalls.  Each sweep solves the u problem with r_v(v) frozen, then the v
    problem with r_u(u) frozen; the fixed point is the coupled solution.

    The scalar sub-solves are cheap and robust, so they get their own
    iteration budget rather than inheriting a starved coupled one."""
    inner_cfg = replace(cfg, newton_max_iter=max(cfg.newton_max_iter, 30))
    u, v = prev.u.copy(), prev.v.copy()
    total_iters = 0
    for _ in range(max_sweeps):
        u = _single_species_solve(
            mesh, dt, kin.diff_u, kin.alpha_hat, kin.rate_u, prev.u,
            _rate_ext(kin.rate_v, v), inner_cfg)
        v = _single_species_solve(
            mesh, dt, kin.diff_v, kin.beta_hat, kin.rate_v, prev.v,
            _rate_ext(kin.rate_u, u), inner_cfg)
        total_iters += 1
        z = np.concatenate([u, v])
        res = norm_fn(z, residual_fn(z))
        if res <= cfg.newton_tol:
            return NewtonResult(z, total_iters, res, True)
    raise NonConvergenceError(
        f"implicit step did not converge: Newton stalled and {max_sweeps} "
        "splitting sweeps did not close the coupled residual",
        iterations=max_sweeps, residual=res)


def _check_step_bounds(kin, prev, u_new, v_new, newton_tol):
    """A converged step must stay inside the scheme's proven envelope:
    nonnegative, u below max(u_prev) + (alpha/beta) max(v_prev) and v below
    the symmetric bound, all within 10 * newton_tol slack."""
    cap_u = float(np.max(prev.u)) + (kin.alpha / kin.beta) * float(np.max(prev.v))
    cap_v = float(np.max(prev.v)) + (kin.beta / kin.alpha) * float(np.max(prev.u))
    slack_u = 10.0 * newton_tol * max(1.0, cap_u)
    slack_v = 10.0 * newton_tol * max(1.0, cap_v)
    if float(np.min(u_new)) < -slack_u or float(np.min(v_new)) < -slack_v:
        raise ConsistencyError(
            f"converged step produced negative concentrations "
            f"(min u = {float(np.min(u_new))!r}, min v = {float(np.min(v_new))!r})")
    if float(np.max(u_new)) > cap_u + slack_u or float(np.max(v_new)) > cap_v + slack_v:
        raise ConsistencyError(
            f"converged step escaped its comparison envelope "
            f"(max u = {float(np.max(u_new))!r} vs cap {cap_u!r}, "
            f"max v = {float(np.max(v_new))!r} vs cap {cap_v!r})")


# -- marching ---------------------------------------------------------------

def integrate(mesh: Mesh, kin: Kinetics, grid: TimeGrid, initial: State,
              cfg: SolverConfig | None = None,
              output_levels=None) -> Trajectory:
    """March the scheme over the whole time grid.

    output_levels: None records every level; otherwise an iterable of level
    indices to record (the final level is always included).
    """
    if initial.level != 0 or initial.time != 0.0:
        raise ValueError("integration starts from level 0 at time 0")
    if initial.n_cells != mesh.n_cells:
        raise ValueError("initial state size does not match the mesh")
    if np.any(initial.u < 0) or np.any(initial.v < 0):
        raise ValueError("initial state must be nonnegative")
    keep = _output_set(output_levels, grid.n_steps)
    states: list[State] = []
    stats: list[StepStats] = []
    state = initial
    if 0 in keep:
        states.append(state)
    for dt in grid.steps:
        state, st = step(mesh, kin, float(dt), state, cfg)
        stats.append(st)
        if state.level in keep:
            states.append(state)
    return Trajectory(states=states, stats=stats)


def _output_set(output_levels, n_steps: int) -> set[int]:
    if output_levels is None:
        return set(range(n_steps + 1))
    keep = set()
    for lv in output_levels:
        if int(lv) != lv or lv < 0 or lv > n_steps:
            raise ValueError(f"output level {lv!r} outside 0..{n_steps}")
        keep.add(int(lv))
    keep.add(n_steps)
    return keep


def ode_upper_solution(kin: Kinetics, grid: TimeGrid, u_bound: float,
                       v_bound: float,
                       cfg: SolverConfig | None = None
                       ) -> tuple[np.ndarray, np.ndarray]:
    """Space-free companion system started from constant bounds (U, V):

        ubar^{n+1} - ubar^n = dt alpha_hat (r_v(vbar^{n+1}) - r_u(ubar^{n+1}))
        vbar^{n+1} - vbar^n = dt beta_hat  (r_u(ubar^{n+1}) - r_v(vbar^{n+1}))

    Its iterates dominate the scheme started from data below (U, V), which
    is what makes it useful as an upper solution.  Returns arrays of shape
    (n_levels,).  Conserves ubar/alpha + vbar/beta exactly.
    """
    if u_bound < 0 or v_bound < 0:
        raise ValueError("bounds must be nonnegative")
    cell = build_uniform_1d(1.0, 1)
    state = State(u=[float(u_bound)], v=[float(v_bound)], level=0, time=0.0)
    ubar = np.empty(grid.n_steps + 1)
    vbar = np.empty(grid.n_steps + 1)
    ubar[0], vbar[0] = u_bound, v_bound
    for i, dt in enumerate(grid.steps, start=1):
        state, _ = step(cell, kin, float(dt), state, cfg)
        ubar[i] = state.u[0]
        vbar[i] = state.v[0]
    return ubar, vbar


# -- CSV export --------------------------------------------------------------

def write_trajectory_csv(mesh: Mesh, traj: Trajectory, path) -> None:
    """Write recorded states as rows (level, t, cell_id, x, u, v)."""
    x = mesh.x
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "t", "cell_id", "x", "u", "v"])
        for s in traj.states:
            for k in range(s.n_cells):
                writer.writerow([s.level, repr(float(s.time)), k, repr(float(x[k])),
                                 repr(float(s.u[k])), repr(float(s.v[k]))])


def write_stats_csv(traj: Trajectory, path) -> None:
    """Write per-step solver statistics as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "dt", "newton_iterations", "residual",
                         "fallback"])
        for st in traj.stats:
            writer.writerow([st.level, repr(float(st.dt)), st.newton_iterations,
                             repr(float(st.residual)), st.fallback])

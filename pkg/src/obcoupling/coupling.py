"""Optimization-based coupling of two subdomain models.

Each implicit Euler step solves a control problem on the interface: find the
flux control g minimizing

    J(g) = 1/2 ||u_1 - u_2||^2_{M_g} + delta/2 ||g||^2_{M_g}

where u_i are the subdomain solutions driven by +/- g and the norms use the
interface mass matrix. The minimization runs gradient descent with an
adaptive step: a trial update that increases J is rejected and the step
halved, reusing the already computed descent direction. The gradient is
delta g + (T_1 mu_1 - T_2 mu_2) with mu_i solving the adjoint systems, which
are exact transposes of the state systems, so the analytic gradient matches
the discrete objective to roundoff.

Subdomain models are interchangeable: full-order or reduced state solvers on
either side, full-order or reduced adjoint solvers. Backends expose solve,
trace and advance so the descent loop never branches on model type.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from obcoupling import assembly, rom
from obcoupling.fom import ProblemSpec, adjoint_solve, state_step
from obcoupling.geometry import build_mesh, decompose


@dataclass(frozen=True)
class CouplingConfig:
    """Parameters of the per-timestep interface minimization."""

    delta: float = 1e-16        # Tikhonov weight on the control
    tol: float = 1e-14          # stop when J drops below this
    alpha0: float = 2.0         # initial gradient step, reset every timestep
    max_iters: int = 10000      # attempted updates per timestep before giving up
    warm_start: bool = True     # start each step from the previous control
    supg_on: bool = True
    record_history: bool = False  # keep accepted objective values per step

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("delta must be nonnegative")
        if self.tol <= 0 or self.alpha0 <= 0:
            raise ValueError("tol and alpha0 must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass(frozen=True)
class Control:
    """Accepted interface controls, one column per time level (column 0 zero)."""

    values: np.ndarray  # (n_control, n_steps + 1)
    dt: float

    def at(self, n: int) -> np.ndarray:
        return self.values[:, n]


@dataclass(frozen=True)
class IterationStats:
    """Per-timestep record of the interface minimization."""

    step: int
    iterations: int          # attempted control updates (accepted + rejected)
    directions: int          # adjoint pairs solved
    alpha_reductions: int
    objective: float         # final value of J
    converged: bool
    wall_time: float
    accepted_objectives: list[float] | None = None


def objective(u_1: np.ndarray, u_2: np.ndarray, g: np.ndarray, delta: float,
              trace_free_1: np.ndarray, trace_free_2: np.ndarray, M_g) -> float:
    """Interface mismatch plus Tikhonov penalty for free-DOF states."""
    jump = u_1[trace_free_1] - u_2[trace_free_2]
    return _objective_from_jump(jump, g, delta, M_g)


def _objective_from_jump(jump: np.ndarray, g: np.ndarray, delta: float, M_g) -> float:
    val = 0.5 * float(jump @ (M_g @ jump))
    if delta != 0.0:
        val += 0.5 * delta * float(g @ (M_g @ g))
    return val


def control_gradient(mu_1: np.ndarray, mu_2: np.ndarray, g: np.ndarray, delta: float,
                     trace_free_1: np.ndarray, trace_free_2: np.ndarray) -> np.ndarray:
    """Nodal gradient of J: delta g + (T_1 mu_1 - T_2 mu_2)."""
    return delta * g + (mu_1[trace_free_1] - mu_2[trace_free_2])


class FomStateBackend:
    """Full-order subdomain state solver for the descent loop."""

    def __init__(self, ops: assembly.OperatorSet, u0_free: np.ndarray,
                 trace_free: np.ndarray, load=None):
        self.ops = ops
        self.side = ops.side
        self.trace_free = trace_free
        self._load = load          # callable n -> free-DOF load, or None
        self.u_prev = np.array(u0_free, dtype=np.float64)
        self._f_now = None

    @property
    def n_free(self) -> int:
        return self.ops.n_free

    def set_step(self, n: int):
        self._f_now = None if self._load is None else self._load(n)

    def solve(self, g: np.ndarray) -> np.ndarray:
        return state_step(self.ops, self.u_prev, g, self._f_now, self.side)

    def trace(self, u: np.ndarray) -> np.ndarray:
        return u[self.trace_free]

    def advance(self, u: np.ndarray):
        self.u_prev = u

    def to_free(self, u: np.ndarray) -> np.ndarray:
        return u

    def initial_free(self) -> np.ndarray:
        return self.u_prev


class RomStateBackend:
    """Reduced subdomain state solver for the descent loop."""

    def __init__(self, rops: rom.ReducedOperatorSet, u0_free: np.ndarray):
        self.rops = rops
        self.side = rops.side
        self.uhat_prev = rops.Psi_u.T @ np.asarray(u0_free, dtype=np.float64)
        self._n = 0

    @property
    def n_modes(self) -> int:
        return self.rops.n_modes_u

    def set_step(self, n: int):
        self._n = n

    def solve(self, g: np.ndarray) -> np.ndarray:
        return rom.rom_state_step(self.rops, self.uhat_prev, g, self.side, self._n)

    def trace(self, uhat: np.ndarray) -> np.ndarray:
        return self.rops.trace_u @ uhat

    def advance(self, uhat: np.ndarray):
        self.uhat_prev = uhat

    def to_free(self, uhat: np.ndarray) -> np.ndarray:
        return self.rops.lift(uhat)

    def initial_free(self) -> np.ndarray:
        return self.rops.lift(self.uhat_prev)


class FullAdjointBackend:
    """Full-order adjoint solver; exposes the trace of the adjoint."""

    def __init__(self, ops: assembly.OperatorSet, trace_free: np.ndarray):
        self.ops = ops
        self.side = ops.side
        self.trace_free = trace_free
        self._last = None

    def solve_trace(self, jump: np.ndarray, endpoint_jump=None) -> np.ndarray:
        self._last = adjoint_solve(self.ops, jump, self.side, endpoint_jump)
        return self._last[self.trace_free]

    def last_full(self) -> np.ndarray:
        return self._last


class RomAdjointBackend:
    """Reduced adjoint solver; exposes the trace of the lifted adjoint."""

    def __init__(self, rops: rom.ReducedOperatorSet):
        self.rops = rops
        self.side = rops.side
        self._last = None

    def solve_trace(self, jump: np.ndarray, endpoint_jump=None) -> np.ndarray:
        self._last = rom.rom_adjoint_from_jump(self.rops, jump, self.side, endpoint_jump)
        return self.rops.trace_mu @ self._last

    def last_full(self) -> np.ndarray:
        return self.rops.lift_adjoint(self._last)


def descent_timestep(state_1, state_2, adjoint_1, adjoint_2, g0: np.ndarray,
                     config: CouplingConfig, M_g, *, endpoint_jump=None,
                     recorder=None, step_index: int = 0):
    """Minimize the interface objective for one timestep.

    Returns (g, u_1, u_2, stats) with the accepted control and the subdomain
    states at that control. A rejected trial halves the step and retries with
    the same descent direction; adjoints are recomputed only after accepts.
    ``recorder(step_index, mu_1, mu_2)`` is invoked for every adjoint pair.
    """
    t_start = time.perf_counter()
    delta, tol = config.delta, config.tol
    alpha = config.alpha0

    g = np.array(g0, dtype=np.float64)
    u_1 = state_1.solve(g)
    u_2 = state_2.solve(g)
    jump = state_1.trace(u_1) - state_2.trace(u_2)
    obj = _objective_from_jump(jump, g, delta, M_g)

    iterations = 0
    directions = 0
    reductions = 0
    accepted = [obj] if config.record_history else None
    trace_diff = None

    while obj >= tol and iterations < config.max_iters:
        if trace_diff is None:
            t_1 = adjoint_1.solve_trace(jump, endpoint_jump)
            t_2 = adjoint_2.solve_trace(jump, endpoint_jump)
            directions += 1
            if recorder is not None:
                recorder(step_index, adjoint_1.last_full(), adjoint_2.last_full())
            trace_diff = t_1 - t_2

        g_try = (1.0 - alpha * delta) * g - alpha * trace_diff
        u_1_try = state_1.solve(g_try)
        u_2_try = state_2.solve(g_try)
        jump_try = state_1.trace(u_1_try) - state_2.trace(u_2_try)
        obj_try = _objective_from_jump(jump_try, g_try, delta, M_g)
        iterations += 1

        if obj_try > obj:
            # reject: halve the step, keep the current iterate and direction
            alpha *= 0.5
            reductions += 1
            continue

        g, u_1, u_2, jump, obj = g_try, u_1_try, u_2_try, jump_try, obj_try
        trace_diff = None
        if accepted is not None:
            accepted.append(obj)

    stats = IterationStats(
        step=step_index, iterations=iterations, directions=directions,
        alpha_reductions=reductions, objective=obj, converged=bool(obj < tol),
        wall_time=time.perf_counter() - t_start, accepted_objectives=accepted)
    return g, u_1, u_2, stats


@dataclass
class CoupledRunResult:
    """Transient coupled solve: controls, per-step stats, final states."""

    control: Control
    stats: list[IterationStats]
    final_1: np.ndarray                 # free-DOF state of subdomain 1 at T
    final_2: np.ndarray
    traj_1: np.ndarray | None = None    # (n_free_1, n_steps + 1) if kept
    traj_2: np.ndarray | None = None
    wall_time: float = 0.0

    @property
    def all_converged(self) -> bool:
        return all(s.converged for s in self.stats)

    @property
    def total_iterations(self) -> int:
        return sum(s.iterations for s in self.stats)

    @property
    def avg_iterations(self) -> float:
        return self.total_iterations / max(len(self.stats), 1)


def make_loads(problem: ProblemSpec, dec, side: int):
    """Per-step free-DOF load callable for one subdomain, or None if f is."""
    if problem.f is None:
        return None
    mesh = dec.sub(side)
    free = dec.free_nodes(side)

    def load(n: int) -> np.ndarray:
        return assembly.assemble_load(mesh, free, problem.f, n * problem.dt)

    return load


def run_transient(problem: ProblemSpec, config: CouplingConfig, *,
                  state_rops=(None, None), adjoint_rops=(None, None),
                  recorder=None, keep_trajectories: bool = True) -> CoupledRunResult:
    """March the coupled problem from 0 to T.

    ``state_rops`` / ``adjoint_rops`` select the model per subdomain: a
    ReducedOperatorSet runs that side reduced, None runs it full order.
    Reduced and full sides mix freely. ``recorder`` is forwarded to every
    timestep's minimization (it receives free-DOF adjoint pairs).
    """
    dec = problem.decomposition
    n_steps = problem.n_steps

    ops = {}
    states = []
    adjoints = []
    for side in (1, 2):
        needs_full = state_rops[side - 1] is None or adjoint_rops[side - 1] is None
        op = None
        if needs_full:
            op = assembly.subdomain_operators(
                dec, side, nu=problem.nu, dt=problem.dt, advection=problem.a,
                supg_on=config.supg_on)
        ops[side] = op

        u0_free = problem.u0[dec.node_map(side)[dec.free_nodes(side)]]
        rops = state_rops[side - 1]
        if rops is None:
            states.append(FomStateBackend(op, u0_free, dec.trace_free(side),
                                          load=make_loads(problem, dec, side)))
        else:
            states.append(RomStateBackend(rops, u0_free))

        arops = adjoint_rops[side - 1]
        if arops is None:
            adjoints.append(FullAdjointBackend(op, dec.trace_free(side)))
        else:
            adjoints.append(RomAdjointBackend(arops))

    # Both sides share the same interface mass matrix.
    if ops[1] is not None:
        M_g = ops[1].M_g
    elif ops[2] is not None:
        M_g = ops[2].M_g
    else:
        M_g = assembly.assemble_interface_mass(dec, 1)[1]

    n_control = dec.n_control
    controls = np.zeros((n_control, n_steps + 1))
    stats: list[IterationStats] = []

    traj_1 = traj_2 = None
    if keep_trajectories:
        traj_1 = np.empty((dec.free_nodes(1).size, n_steps + 1), order="F")
        traj_2 = np.empty((dec.free_nodes(2).size, n_steps + 1), order="F")
        traj_1[:, 0] = states[0].initial_free()
        traj_2[:, 0] = states[1].initial_free()

    g = np.zeros(n_control)
    u_1 = u_2 = None
    t_start = time.perf_counter()
    for n in range(1, n_steps + 1):
        states[0].set_step(n)
        states[1].set_step(n)
        g0 = g if config.warm_start else np.zeros(n_control)
        g, u_1, u_2, st = descent_timestep(
            states[0], states[1], adjoints[0], adjoints[1], g0, config, M_g,
            recorder=recorder, step_index=n)
        states[0].advance(u_1)
        states[1].advance(u_2)
        controls[:, n] = g
        stats.append(st)
        if keep_trajectories:
            traj_1[:, n] = states[0].to_free(u_1)
            traj_2[:, n] = states[1].to_free(u_2)
    wall = time.perf_counter() - t_start

    if u_1 is None:  # n_steps >= 1 is enforced by ProblemSpec
        raise RuntimeError("transient run performed no steps")
    return CoupledRunResult(
        control=Control(values=controls, dt=problem.dt), stats=stats,
        final_1=states[0].to_free(u_1), final_2=states[1].to_free(u_2),
        traj_1=traj_1, traj_2=traj_2, wall_time=wall)


def random_gradient_instance(level: int = 8, *, seed: int = 0, nu: float = 1e-2,
                             dt: float = 5e-2, supg_on: bool = False):
    """Small two-subdomain instance with random data for gradient checks.

    Returns (dec, ops_1, ops_2, u_prev_1, u_prev_2, g) on a level x level
    grid split at x = 0.5 under a rotating advection field.
    """
    mesh = build_mesh(level, level)
    dec = decompose(mesh, 0.5)

    def advection(x, y):
        return 0.5 - np.asarray(y), np.asarray(x) - 0.5

    ops_1 = assembly.subdomain_operators(dec, 1, nu=nu, dt=dt,
                                         advection=advection, supg_on=supg_on)
    ops_2 = assembly.subdomain_operators(dec, 2, nu=nu, dt=dt,
                                         advection=advection, supg_on=supg_on)
    rng = np.random.default_rng(seed)
    u_prev_1 = rng.standard_normal(dec.free_nodes(1).size)
    u_prev_2 = rng.standard_normal(dec.free_nodes(2).size)
    g = rng.standard_normal(dec.n_control)
    return dec, ops_1, ops_2, u_prev_1, u_prev_2, g


def fd_gradient_check(ops_1: assembly.OperatorSet, ops_2: assembly.OperatorSet,
                      trace_free_1: np.ndarray, trace_free_2: np.ndarray, M_g,
                      u_prev_1: np.ndarray, u_prev_2: np.ndarray, g: np.ndarray,
                      delta: float, *, eps: float = 1e-5, n_directions: int = 5,
                      seed: int = 0) -> float:
    """Max relative mismatch between FD and adjoint directional derivatives.

    For random unit directions e compares the central difference
    (J(g + eps e) - J(g - eps e)) / (2 eps) against grad^T M_g e. The
    objective is quadratic in g, so the central difference is exact up to
    roundoff and the returned mismatch should sit near machine precision.
    """

    def solve_pair(gv):
        u_1 = state_step(ops_1, u_prev_1, gv, None, 1)
        u_2 = state_step(ops_2, u_prev_2, gv, None, 2)
        return u_1, u_2

    def value(gv):
        u_1, u_2 = solve_pair(gv)
        return objective(u_1, u_2, gv, delta, trace_free_1, trace_free_2, M_g)

    u_1, u_2 = solve_pair(g)
    jump = u_1[trace_free_1] - u_2[trace_free_2]
    mu_1 = adjoint_solve(ops_1, jump, 1)
    mu_2 = adjoint_solve(ops_2, jump, 2)
    grad = control_gradient(mu_1, mu_2, g, delta, trace_free_1, trace_free_2)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_directions):
        e = rng.standard_normal(g.size)
        e /= np.linalg.norm(e)
        fd = (value(g + eps * e) - value(g - eps * e)) / (2.0 * eps)
        an = float(grad @ (M_g @ e))
        scale = max(abs(fd), abs(an), 1e-30)
        worst = max(worst, abs(fd - an) / scale)
    return worst

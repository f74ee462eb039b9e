"""Full-order model: implicit Euler stepping and interface adjoint solves.

The state step on free DOFs solves

  (M/dt + nu K + A + S_state) u^n = f^n + sign_i * M_g0 g + M u^{n-1} / dt

with sign_1 = -1 and sign_2 = +1 for the two subdomains. The adjoint of the
trace-mismatch objective carries no time history and solves the exact
transpose system

  (M/dt + nu K + A^T + S_adjoint) mu = sign_i * M_g0 (u_1 - u_2)|interface.

System matrices are time independent, so each is factored once and the
factorization reused for every step and every descent iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from obcoupling import assembly
from obcoupling.geometry import Decomposition, Mesh


@dataclass(frozen=True)
class ProblemSpec:
    """Transient advection-diffusion transmission problem on a split rectangle."""

    decomposition: Decomposition
    nu: float
    a: object          # advection field (x, y) -> (ax, ay), or None
    f: object          # source (x, y, t) -> value, or None
    u0: np.ndarray     # nodal initial condition on the parent mesh (all nodes)
    dt: float
    T: float
    beta: object = None  # Dirichlet boundary value (x, y, t) -> value, or None

    @property
    def mesh(self) -> Mesh:
        return self.decomposition.parent

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if n < 1:
            raise ValueError(f"T={self.T} and dt={self.dt} give no timesteps")
        return n


@dataclass(frozen=True)
class Trajectory:
    """Per-timestep free-DOF state vectors, column n holding u at t = n*dt."""

    data: np.ndarray        # (n_free, n_steps + 1)
    dt: float
    free_nodes: np.ndarray  # free node indices in the owning mesh

    @property
    def n_steps(self) -> int:
        return self.data.shape[1] - 1


def sign_of(side: int) -> float:
    """Interface flux orientation (-1)^side of a subdomain."""
    if side not in (1, 2):
        raise ValueError(f"side must be 1 or 2, got {side}")
    return -1.0 if side == 1 else 1.0


def _dirichlet_history(ops: assembly.OperatorSet, beta, t: float) -> np.ndarray:
    coords = ops.mesh.coords[ops.dirichlet_nodes]
    return np.asarray(beta(coords[:, 0], coords[:, 1], t), dtype=np.float64)


def monolithic_solve(problem: ProblemSpec, *, supg_on: bool = False) -> Trajectory:
    """March the undecomposed problem over [0, T]; reference for all couplings."""
    mesh = problem.mesh
    ops = assembly.assemble_operators(
        mesh, mesh.boundary_nodes, nu=problem.nu, dt=problem.dt,
        advection=problem.a, supg_on=supg_on)
    fact = ops.state_factor()

    n_steps = problem.n_steps
    u = np.asarray(problem.u0, dtype=np.float64)[ops.free_nodes]
    data = np.empty((u.size, n_steps + 1), order="F")
    data[:, 0] = u

    beta_prev = (_dirichlet_history(ops, problem.beta, 0.0)
                 if problem.beta is not None else None)
    for n in range(1, n_steps + 1):
        t = n * problem.dt
        rhs = ops.M @ u / problem.dt
        if problem.f is not None:
            rhs += assembly.assemble_load(mesh, ops.free_nodes, problem.f, t)
        if problem.beta is not None:
            beta_now = _dirichlet_history(ops, problem.beta, t)
            rhs -= (problem.nu * ops.K_fd + ops.A_fd) @ beta_now
            rhs -= ops.M_fd @ (beta_now - beta_prev) / problem.dt
            beta_prev = beta_now
        u = fact.solve(rhs)
        data[:, n] = u
    return Trajectory(data=data, dt=problem.dt, free_nodes=ops.free_nodes)


def state_step(ops: assembly.OperatorSet, u_prev: np.ndarray, g: np.ndarray,
               f_free: np.ndarray | None, side: int) -> np.ndarray:
    """One implicit Euler step of a subdomain with interface control g."""
    rhs = ops.M @ u_prev / ops.dt
    if f_free is not None:
        rhs = rhs + f_free
    if g is not None:
        rhs = rhs + sign_of(side) * (ops.M_g0 @ g)
    return ops.state_factor().solve(rhs)


def adjoint_solve(ops: assembly.OperatorSet, jump: np.ndarray, side: int,
                  endpoint_jump: np.ndarray | None = None) -> np.ndarray:
    """Adjoint of the trace mismatch: no history, transposed state operator.

    ``jump`` holds the control-ordered coefficients of (u_1 - u_2) on the
    interface; ``endpoint_jump`` optionally adds the Dirichlet endpoint
    mismatch (beta_1 - beta_2 at the two interface endpoints).
    """
    rhs = ops.M_g0 @ jump
    if endpoint_jump is not None:
        rhs = rhs + ops.W_end @ np.asarray(endpoint_jump, dtype=np.float64)
    return ops.adjoint_factor().solve(sign_of(side) * rhs)


def modified_state_step(ops: assembly.OperatorSet, u_snap_prev: np.ndarray,
                        g: np.ndarray, f_free: np.ndarray | None,
                        side: int) -> np.ndarray:
    """State step whose history comes from a stored snapshot, not the iterate.

    Identical system to :func:`state_step`; the distinction is semantic and is
    what makes per-timestep adjoint collection independent of every other
    timestep.
    """
    return state_step(ops, u_snap_prev, g, f_free, side)

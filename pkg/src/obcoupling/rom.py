"""Proper orthogonal decomposition and reduced subdomain models.

Bases come from one thin SVD per snapshot matrix (snapshots live on the free
DOFs, plain l2 inner product); truncated bases are nested prefixes of that
single SVD. Reduced operators are Galerkin projections Psi^T Op Psi under the
state basis Psi_u for the state system and under the adjoint basis Psi_mu for
the adjoint system, so a full orthonormal basis reproduces the corresponding
full-order solve exactly (change of basis).

Dirichlet data enters through lifting: with u = Psi u_hat + beta the reduced
load picks up  -Psi^T M (beta^n - beta^{n-1})/dt - Psi^T (nu K + A) beta^n,
evaluated through the free-by-Dirichlet coupling blocks. The benchmark runs
have beta = 0, in which case every lifting term vanishes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from obcoupling import assembly, linalg
from obcoupling.fom import sign_of


@dataclass(frozen=True)
class SnapshotMatrix:
    """Columns of free-DOF vectors collected from one subdomain."""

    data: np.ndarray   # (n_free, n_snapshots)
    kind: str          # "state" or "adjoint"
    subdomain: int

    @property
    def n_snapshots(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ReducedBasis:
    """Leading left singular vectors of a snapshot matrix."""

    Psi: np.ndarray    # (n_free, n_modes), orthonormal columns
    sigma: np.ndarray  # full singular value spectrum of the snapshot matrix

    @property
    def n_modes(self) -> int:
        return self.Psi.shape[1]

    def truncate(self, n_modes: int) -> "ReducedBasis":
        if not 1 <= n_modes <= self.n_modes:
            raise ValueError(f"cannot truncate {self.n_modes}-mode basis to {n_modes}")
        return ReducedBasis(Psi=self.Psi[:, :n_modes], sigma=self.sigma)


@dataclass(frozen=True)
class LiftingVector:
    """Dirichlet boundary values of one subdomain at one time level."""

    values: np.ndarray  # beta at the subdomain's Dirichlet nodes


def pod(snapshots, n_modes: int) -> ReducedBasis:
    """Leading n_modes left singular vectors of a snapshot matrix."""
    data = snapshots.data if isinstance(snapshots, SnapshotMatrix) else np.asarray(snapshots)
    max_modes = min(data.shape)
    if not 1 <= n_modes <= max_modes:
        raise ValueError(f"n_modes must be in [1, {max_modes}], got {n_modes}")
    u, s, _ = linalg.thin_svd(data)
    return ReducedBasis(Psi=u[:, :n_modes].copy(), sigma=s)


def full_pod(snapshots) -> ReducedBasis:
    """All left singular vectors; truncate() yields every nested basis."""
    data = snapshots.data if isinstance(snapshots, SnapshotMatrix) else np.asarray(snapshots)
    u, s, _ = linalg.thin_svd(data)
    return ReducedBasis(Psi=u, sigma=s)


def snapshot_energy(sigma: np.ndarray) -> np.ndarray:
    """Cumulative energy fractions sum(sigma_i^2, i<=k) / sum(sigma_i^2)."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.ndim != 1 or sigma.size == 0:
        raise ValueError("sigma must be a nonempty 1-d array")
    if (sigma < 0).any() or (np.diff(sigma) > 0).any():
        raise ValueError("singular values must be nonnegative and nonincreasing")
    total = np.sum(sigma ** 2)
    if total == 0.0:
        raise ValueError("all singular values are zero")
    return np.cumsum(sigma ** 2) / total


def projection_error(basis: ReducedBasis, vectors: np.ndarray) -> np.ndarray | float:
    """Relative l2 error of projecting vectors onto the basis column span.

    Accepts one vector or a matrix of columns; zero vectors report error 0.
    """
    v = np.asarray(vectors, dtype=np.float64)
    single = v.ndim == 1
    if single:
        v = v[:, None]
    coeff = basis.Psi.T @ v
    resid = v - basis.Psi @ coeff
    norms = np.linalg.norm(v, axis=0)
    errs = np.zeros(v.shape[1])
    nz = norms > 0
    errs[nz] = np.linalg.norm(resid[:, nz], axis=0) / norms[nz]
    return float(errs[0]) if single else errs


@dataclass
class ReducedOperatorSet:
    """Galerkin-projected operators for one subdomain.

    State blocks are projected under Psi_u, adjoint blocks under Psi_mu. The
    interface couplings Psi^T M_g0 and the trace rows T Psi are precomputed so
    the descent loop touches only control-sized and mode-sized arrays.
    """

    side: int
    nu: float
    dt: float
    Psi_u: np.ndarray
    Psi_mu: np.ndarray
    Mh: np.ndarray
    Kh: np.ndarray
    Ah: np.ndarray
    Sh_state: np.ndarray
    Mh_mu: np.ndarray
    Kh_mu: np.ndarray
    Ah_mu: np.ndarray
    Sh_adjoint: np.ndarray
    PsiT_Mg0: np.ndarray      # (n_u, n_control)
    PsiT_mu_Mg0: np.ndarray   # (n_mu, n_control)
    PsiT_mu_W: np.ndarray     # (n_mu, 2)
    trace_u: np.ndarray       # (n_control, n_u): control-ordered rows of Psi_u
    trace_mu: np.ndarray      # (n_control, n_mu)
    load_series: np.ndarray | None  # (n_u, n_steps + 1) reduced loads, or None
    _state_lu: tuple | None = field(default=None, repr=False)
    _adjoint_lu: tuple | None = field(default=None, repr=False)

    @property
    def n_modes_u(self) -> int:
        return self.Psi_u.shape[1]

    @property
    def n_modes_mu(self) -> int:
        return self.Psi_mu.shape[1]

    def state_matrix(self) -> np.ndarray:
        return self.Mh / self.dt + self.nu * self.Kh + self.Ah + self.Sh_state

    def adjoint_matrix(self) -> np.ndarray:
        return (self.Mh_mu / self.dt + self.nu * self.Kh_mu + self.Ah_mu.T
                + self.Sh_adjoint)

    def state_lu(self) -> tuple:
        if self._state_lu is None:
            self._state_lu = scipy.linalg.lu_factor(self.state_matrix())
        return self._state_lu

    def adjoint_lu(self) -> tuple:
        if self._adjoint_lu is None:
            self._adjoint_lu = scipy.linalg.lu_factor(self.adjoint_matrix())
        return self._adjoint_lu

    def reduced_load(self, n: int) -> np.ndarray | None:
        if self.load_series is None:
            return None
        return self.load_series[:, n]

    def lift(self, uhat: np.ndarray) -> np.ndarray:
        """Free-DOF representation Psi_u @ uhat of a reduced state."""
        return self.Psi_u @ uhat

    def lift_adjoint(self, muhat: np.ndarray) -> np.ndarray:
        return self.Psi_mu @ muhat


def _project(mat, basis: np.ndarray) -> np.ndarray:
    return basis.T @ (mat @ basis)


def reduce_operators(ops: assembly.OperatorSet, Psi_u: np.ndarray,
                     Psi_mu: np.ndarray | None = None, *,
                     trace_free: np.ndarray,
                     f_series: np.ndarray | None = None,
                     beta_series: list[LiftingVector] | None = None) -> ReducedOperatorSet:
    """Project one subdomain's operators onto reduced bases.

    ``trace_free`` gives the control-ordered free indices of the interface
    (the interface map of the decomposition). ``f_series`` optionally holds
    per-step free-DOF loads as columns (including the unused column 0);
    ``beta_series`` optionally holds per-step Dirichlet values for lifting.
    Either series triggers a precomputed reduced load table.
    """
    if Psi_mu is None:
        Psi_mu = Psi_u
    if ops.M_g0 is None:
        raise ValueError("reduce_operators needs subdomain operators with interface blocks")

    load_series = None
    if f_series is not None or beta_series is not None:
        if f_series is not None:
            n_cols = f_series.shape[1]
        else:
            n_cols = len(beta_series)
        load_series = np.zeros((Psi_u.shape[1], n_cols))
        for n in range(1, n_cols):
            load = np.zeros(ops.n_free)
            if f_series is not None:
                load = load + f_series[:, n]
            if beta_series is not None:
                b_now = beta_series[n].values
                b_prev = beta_series[n - 1].values
                load = load - ops.M_fd @ (b_now - b_prev) / ops.dt
                load = load - (ops.nu * ops.K_fd + ops.A_fd) @ b_now
            load_series[:, n] = Psi_u.T @ load

    return ReducedOperatorSet(
        side=ops.side, nu=ops.nu, dt=ops.dt, Psi_u=Psi_u, Psi_mu=Psi_mu,
        Mh=_project(ops.M, Psi_u), Kh=_project(ops.K, Psi_u),
        Ah=_project(ops.A, Psi_u), Sh_state=_project(ops.S_state, Psi_u),
        Mh_mu=_project(ops.M, Psi_mu), Kh_mu=_project(ops.K, Psi_mu),
        Ah_mu=_project(ops.A, Psi_mu), Sh_adjoint=_project(ops.S_adjoint, Psi_mu),
        PsiT_Mg0=(ops.M_g0.T @ Psi_u).T.copy(),
        PsiT_mu_Mg0=(ops.M_g0.T @ Psi_mu).T.copy(),
        PsiT_mu_W=(ops.W_end.T @ Psi_mu).T.copy(),
        trace_u=Psi_u[trace_free, :].copy(),
        trace_mu=Psi_mu[trace_free, :].copy(),
        load_series=load_series)


def rom_state_step(rops: ReducedOperatorSet, uhat_prev: np.ndarray,
                   g: np.ndarray, side: int, n: int = 0) -> np.ndarray:
    """One reduced implicit Euler step with interface control g."""
    rhs = rops.Mh @ uhat_prev / rops.dt
    load = rops.reduced_load(n)
    if load is not None:
        rhs = rhs + load
    if g is not None:
        rhs = rhs + sign_of(side) * (rops.PsiT_Mg0 @ g)
    return scipy.linalg.lu_solve(rops.state_lu(), rhs)


def rom_adjoint_from_jump(rops: ReducedOperatorSet, jump: np.ndarray, side: int,
                          endpoint_jump: np.ndarray | None = None) -> np.ndarray:
    """Reduced adjoint solve from a control-ordered interface jump."""
    rhs = rops.PsiT_mu_Mg0 @ jump
    if endpoint_jump is not None:
        rhs = rhs + rops.PsiT_mu_W @ np.asarray(endpoint_jump, dtype=np.float64)
    return scipy.linalg.lu_solve(rops.adjoint_lu(), sign_of(side) * rhs)


def rom_adjoint_solve(rops_1: ReducedOperatorSet, rops_2: ReducedOperatorSet,
                      uhat_1: np.ndarray, uhat_2: np.ndarray, side: int,
                      endpoint_jump: np.ndarray | None = None) -> np.ndarray:
    """Reduced adjoint of the trace mismatch between two reduced states."""
    jump = rops_1.trace_u @ uhat_1 - rops_2.trace_u @ uhat_2
    rops = rops_1 if side == 1 else rops_2
    return rom_adjoint_from_jump(rops, jump, side, endpoint_jump)

"""Q1 finite element operators on structured meshes.

All volume integrals use 2x2 Gauss quadrature on the reference square, which is
exact for every integrand appearing here (bilinear shapes, affine advection
fields, axis-aligned elements). Interface integrals use the 1D two-node mass
matrix h/6 * [[2, 1], [1, 2]] per interface edge.

Operator conventions on the free degrees of freedom:

  M[k, j] = (phi_j, phi_k)            mass
  K[k, j] = (grad phi_j, grad phi_k)  stiffness
  A[k, j] = (a phi_k, grad phi_j)     advection, equals (a . grad phi_j, phi_k)

The implicit state step solves (M/dt + nu K + A + S_state) u = rhs and the
adjoint solves its exact transpose (M/dt + nu K + A^T + S_adjoint) mu = rhs
with S_adjoint = S_state^T, so the discrete sensitivity/adjoint duality holds
to solver precision. For a divergence-free field, A + A^T equals the boundary
flux matrix int_boundary (a.n) phi_k phi_j, so the advection block is skew up
to interface terms.

SUPG stabilization adds, per element,
  tau_e * (phi_j/dt + a . grad phi_j, a . grad phi_k)
with tau_e = ((2/dt)^2 + (2|a|/h_e)^2 + (9 * 4 nu / h_e^2)^2)^(-1/2), |a| taken
at the element center and h_e = sqrt(hx*hy). It enters the left-hand sides
only; with a = 0 the stabilization vanishes identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from obcoupling import linalg
from obcoupling.geometry import Decomposition, Mesh


@dataclass(frozen=True)
class QuadratureRule:
    """Tensor-product Gauss rule on the reference square [-1, 1]^2."""

    points: np.ndarray   # (n_qp, 2)
    weights: np.ndarray  # (n_qp,)


def gauss_2x2() -> QuadratureRule:
    g = 1.0 / np.sqrt(3.0)
    points = np.array([[-g, -g], [g, -g], [g, g], [-g, g]])
    return QuadratureRule(points=points, weights=np.ones(4))


def _shape_values(xi: float, eta: float) -> np.ndarray:
    """Q1 shapes at a reference point, counterclockwise [BL, BR, TR, TL]."""
    return 0.25 * np.array([(1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
                            (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])


def _shape_gradients(xi: float, eta: float) -> np.ndarray:
    """Reference gradients dN/d(xi, eta), shape (4, 2)."""
    return 0.25 * np.array([
        [-(1 - eta), -(1 - xi)],
        [(1 - eta), -(1 + xi)],
        [(1 + eta), (1 + xi)],
        [-(1 + eta), (1 - xi)],
    ])


@dataclass
class OperatorSet:
    """Assembled operators for one mesh, restricted to its free DOFs.

    The free-by-Dirichlet coupling blocks (suffix _fd) support Dirichlet
    lifting; interface fields are present only for decomposed subdomains.
    Factorizations of the state and adjoint systems are built once on first
    use and reused for every timestep and descent iteration.
    """

    mesh: Mesh
    nu: float
    dt: float
    side: int                      # 1 or 2 for subdomains, 0 for monolithic
    supg_on: bool
    free_nodes: np.ndarray
    node_to_free: np.ndarray
    dirichlet_nodes: np.ndarray
    M: sp.csr_matrix
    K: sp.csr_matrix
    A: sp.csr_matrix
    S_state: sp.csr_matrix
    S_adjoint: sp.csr_matrix
    M_fd: sp.csr_matrix
    K_fd: sp.csr_matrix
    A_fd: sp.csr_matrix
    M_g0: sp.csr_matrix | None = None   # (n_free, n_control) interface mass
    M_g: sp.csr_matrix | None = None    # (n_control, n_control) control mass
    W_end: sp.csr_matrix | None = None  # (n_free, 2) endpoint-hat coupling
    _state_fact: linalg.Factorization | None = field(default=None, repr=False)
    _adjoint_fact: linalg.Factorization | None = field(default=None, repr=False)

    @property
    def n_free(self) -> int:
        return self.free_nodes.size

    def state_matrix(self) -> sp.csr_matrix:
        return (self.M / self.dt + self.nu * self.K + self.A + self.S_state).tocsr()

    def adjoint_matrix(self) -> sp.csr_matrix:
        return (self.M / self.dt + self.nu * self.K + self.A.T + self.S_adjoint).tocsr()

    def state_factor(self) -> linalg.Factorization:
        if self._state_fact is None:
            self._state_fact = linalg.factorize(self.state_matrix())
        return self._state_fact

    def adjoint_factor(self) -> linalg.Factorization:
        if self._adjoint_fact is None:
            self._adjoint_fact = linalg.factorize(self.adjoint_matrix())
        return self._adjoint_fact


def _element_geometry(mesh: Mesh):
    hx, hy = mesh.hx, mesh.hy
    corners = mesh.coords[mesh.elements[:, 0]]  # bottom-left corner per element
    return hx, hy, corners


def _assemble_volume(mesh: Mesh, advection, nu: float, dt: float, supg_on: bool):
    """Element loops for M, K, A, S_state over the full node space."""
    quad = gauss_2x2()
    hx, hy, corners = _element_geometry(mesh)
    jac = hx * hy / 4.0
    n_el = mesh.n_elements

    m_el = np.zeros((4, 4))
    k_el = np.zeros((4, 4))
    a_el = np.zeros((n_el, 4, 4))
    s_el = np.zeros((n_el, 4, 4))

    if advection is not None and supg_on:
        cx = corners[:, 0] + hx / 2.0
        cy = corners[:, 1] + hy / 2.0
        acx, acy = advection(cx, cy)
        a_mag = np.hypot(np.broadcast_to(acx, cx.shape),
                         np.broadcast_to(acy, cy.shape))
        h_e = np.sqrt(hx * hy)
        tau = 1.0 / np.sqrt((2.0 / dt) ** 2 + (2.0 * a_mag / h_e) ** 2
                            + (9.0 * 4.0 * nu / h_e ** 2) ** 2)
    else:
        tau = None

    for (xi, eta), w in zip(quad.points, quad.weights):
        shapes = _shape_values(xi, eta)                  # (4,)
        ref_grad = _shape_gradients(xi, eta)             # (4, 2)
        grad = np.column_stack([ref_grad[:, 0] * 2.0 / hx,
                                ref_grad[:, 1] * 2.0 / hy])  # physical gradients

        m_el += w * jac * np.outer(shapes, shapes)
        k_el += w * jac * (grad @ grad.T)

        if advection is not None:
            xq = corners[:, 0] + (xi + 1.0) * hx / 2.0
            yq = corners[:, 1] + (eta + 1.0) * hy / 2.0
            ax, ay = advection(xq, yq)
            ax = np.broadcast_to(ax, xq.shape)
            ay = np.broadcast_to(ay, yq.shape)
            # a . grad phi_j at this quadrature point, per element: (n_el, 4)
            adv_j = ax[:, None] * grad[None, :, 0] + ay[:, None] * grad[None, :, 1]
            # A[k, j] += w |J| phi_k (a . grad phi_j)
            a_el += w * jac * shapes[None, :, None] * adv_j[:, None, :]
            if tau is not None:
                trial = shapes[None, None, :] / dt + adv_j[:, None, :]
                s_el += (w * jac * tau[:, None, None]) * adv_j[:, :, None] * trial

    rows = np.repeat(mesh.elements, 4, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 4)).ravel()
    n = mesh.n_nodes
    M = linalg.from_triplets(n, n, rows, cols, np.tile(m_el.ravel(), n_el))
    K = linalg.from_triplets(n, n, rows, cols, np.tile(k_el.ravel(), n_el))
    A = linalg.from_triplets(n, n, rows, cols, a_el.reshape(n_el, -1).ravel())
    S = linalg.from_triplets(n, n, rows, cols, s_el.reshape(n_el, -1).ravel())
    A.eliminate_zeros()
    S.eliminate_zeros()
    return M, K, A, S


def assemble_operators(mesh: Mesh, dirichlet_nodes: np.ndarray, *, nu: float,
                       dt: float, advection=None, supg_on: bool = False,
                       side: int = 0) -> OperatorSet:
    """Assemble all volume operators, restricted to the free DOFs.

    ``dirichlet_nodes`` lists the strongly constrained nodes; rows and columns
    are eliminated, with the free-by-Dirichlet blocks retained for lifting.
    """
    if nu < 0 or dt <= 0:
        raise ValueError("need nu >= 0 and dt > 0")
    dirichlet_nodes = np.asarray(dirichlet_nodes, dtype=np.int64)
    M, K, A, S = _assemble_volume(mesh, advection, nu, dt, supg_on)

    mask = np.ones(mesh.n_nodes, dtype=bool)
    mask[dirichlet_nodes] = False
    free = np.flatnonzero(mask)
    node_to_free = np.full(mesh.n_nodes, -1, dtype=np.int64)
    node_to_free[free] = np.arange(free.size)

    def restrict(mat):
        return mat[free][:, free].tocsr(), mat[free][:, dirichlet_nodes].tocsr()

    M_ff, M_fd = restrict(M)
    K_ff, K_fd = restrict(K)
    A_ff, A_fd = restrict(A)
    S_ff, _ = restrict(S)

    return OperatorSet(
        mesh=mesh, nu=nu, dt=dt, side=side, supg_on=supg_on,
        free_nodes=free, node_to_free=node_to_free,
        dirichlet_nodes=dirichlet_nodes,
        M=M_ff, K=K_ff, A=A_ff,
        S_state=S_ff, S_adjoint=S_ff.T.tocsr(),
        M_fd=M_fd, K_fd=K_fd, A_fd=A_fd)


def assemble_interface_mass(dec: Decomposition, side: int):
    """Interface mass matrices for one subdomain.

    Returns (M_g0, M_g, W_end): M_g0 pairs the control hats with the
    subdomain's free trace hats, M_g is the control-space 1D mass, and W_end
    couples the two Dirichlet interface endpoints to the free interface rows
    (used by the Dirichlet-lifting correction of the adjoint right-hand side).
    """
    sub = dec.sub(side)
    iface = dec.interface_nodes_1 if side == 1 else dec.interface_nodes_2
    node_to_free = dec.node_to_free(side)
    ny = iface.size - 1
    n_control = ny - 1
    hy = sub.hy

    edge = hy / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    rows_g0, cols_g0, vals_g0 = [], [], []
    rows_g, cols_g, vals_g = [], [], []
    rows_w, cols_w, vals_w = [], [], []

    for e in range(ny):
        pair = (iface[e], iface[e + 1])
        pos = (e, e + 1)  # interface positions, 0..ny; control index = pos - 1
        for r in range(2):
            fr = node_to_free[pair[r]]
            if fr < 0:
                continue  # endpoint row, Dirichlet
            for c in range(2):
                cpos = pos[c]
                if 1 <= cpos <= ny - 1:
                    rows_g0.append(fr)
                    cols_g0.append(cpos - 1)
                    vals_g0.append(edge[r, c])
                else:
                    rows_w.append(fr)
                    cols_w.append(0 if cpos == 0 else 1)
                    vals_w.append(edge[r, c])
        for r in range(2):
            rpos = pos[r]
            if not 1 <= rpos <= ny - 1:
                continue
            for c in range(2):
                cpos = pos[c]
                if 1 <= cpos <= ny - 1:
                    rows_g.append(rpos - 1)
                    cols_g.append(cpos - 1)
                    vals_g.append(edge[r, c])

    n_free = dec.free_nodes(side).size
    M_g0 = linalg.from_triplets(n_free, n_control, rows_g0, cols_g0, vals_g0)
    M_g = linalg.from_triplets(n_control, n_control, rows_g, cols_g, vals_g)
    W_end = linalg.from_triplets(n_free, 2, rows_w, cols_w, vals_w)
    return M_g0, M_g, W_end


def subdomain_operators(dec: Decomposition, side: int, *, nu: float, dt: float,
                        advection=None, supg_on: bool = False) -> OperatorSet:
    """Assemble the full operator set for one subdomain of a decomposition."""
    ops = assemble_operators(dec.sub(side), dec.dirichlet_nodes(side), nu=nu,
                             dt=dt, advection=advection, supg_on=supg_on,
                             side=side)
    ops.M_g0, ops.M_g, ops.W_end = assemble_interface_mass(dec, side)
    return ops


def assemble_load(mesh: Mesh, free_nodes: np.ndarray, f, t: float) -> np.ndarray:
    """Load vector (f(., t), phi_k) on the free DOFs; f(x, y, t) vectorized."""
    quad = gauss_2x2()
    hx, hy, corners = _element_geometry(mesh)
    jac = hx * hy / 4.0
    vals = np.zeros(mesh.n_nodes)
    for (xi, eta), w in zip(quad.points, quad.weights):
        shapes = _shape_values(xi, eta)
        xq = corners[:, 0] + (xi + 1.0) * hx / 2.0
        yq = corners[:, 1] + (eta + 1.0) * hy / 2.0
        fq = np.broadcast_to(np.asarray(f(xq, yq, t), dtype=np.float64), xq.shape)
        np.add.at(vals, mesh.elements, (w * jac) * fq[:, None] * shapes[None, :])
    return vals[free_nodes]


def assemble_boundary_flux(mesh: Mesh, advection) -> sp.csr_matrix:
    """Boundary matrix int_boundary (a.n) phi_k phi_j over the full node space.

    For a divergence-free field this equals A + A^T exactly, which is what the
    advection skew-symmetry check verifies.
    """
    rows, cols, vals = [], [], []
    g = 1.0 / np.sqrt(3.0)

    def edge_contrib(n0, n1, h, normal):
        p0, p1 = mesh.coords[n0], mesh.coords[n1]
        for s in (-g, g):
            shapes = np.array([(1 - s) / 2.0, (1 + s) / 2.0])
            x = p0[0] + (s + 1) / 2.0 * (p1[0] - p0[0])
            y = p0[1] + (s + 1) / 2.0 * (p1[1] - p0[1])
            ax, ay = advection(np.array([x]), np.array([y]))
            an = float(np.asarray(ax)[0] * normal[0] + np.asarray(ay)[0] * normal[1])
            w = h / 2.0
            for r in range(2):
                for c in range(2):
                    rows.append((n0, n1)[r])
                    cols.append((n0, n1)[c])
                    vals.append(w * an * shapes[r] * shapes[c])

    nx, ny = mesh.nx, mesh.ny
    for i in range(nx):  # bottom and top
        edge_contrib(mesh.node_index(i, 0), mesh.node_index(i + 1, 0),
                     mesh.hx, (0.0, -1.0))
        edge_contrib(mesh.node_index(i, ny), mesh.node_index(i + 1, ny),
                     mesh.hx, (0.0, 1.0))
    for j in range(ny):  # left and right
        edge_contrib(mesh.node_index(0, j), mesh.node_index(0, j + 1),
                     mesh.hy, (-1.0, 0.0))
        edge_contrib(mesh.node_index(nx, j), mesh.node_index(nx, j + 1),
                     mesh.hy, (1.0, 0.0))

    return linalg.from_triplets(mesh.n_nodes, mesh.n_nodes, rows, cols, vals)

"""Independent dense reference implementations used by the tests.

Everything here is deliberately written the slow way: explicit Python loops
over elements and a 3-point Gauss rule per direction (one order higher than
the production 2x2 rule, exact for every bilinear-form integrand involved).
No code is shared with the package's vectorized assembly.
"""

import numpy as np

_G3 = np.sqrt(3.0 / 5.0)
GAUSS_1D = [(-_G3, 5.0 / 9.0), (0.0, 8.0 / 9.0), (_G3, 5.0 / 9.0)]
# the production scheme defines the stabilization term through the 2x2 rule,
# whose integrand (degree 4) it under-integrates; replicate that rule exactly
GAUSS_1D_2PT = [(-1.0 / np.sqrt(3.0), 1.0), (1.0 / np.sqrt(3.0), 1.0)]


def shapes(xi, eta):
    return 0.25 * np.array([
        (1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
        (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])


def ref_grads(xi, eta):
    return 0.25 * np.array([
        [-(1 - eta), -(1 - xi)], [(1 - eta), -(1 + xi)],
        [(1 + eta), (1 + xi)], [-(1 + eta), (1 - xi)]])


def element_matrices(x0, y0, hx, hy, advection=None):
    """Dense element M, K, A by direct quadrature.

    A follows the convention A[k, j] = integral of phi_k (a . grad phi_j).
    """
    m = np.zeros((4, 4))
    k = np.zeros((4, 4))
    a_mat = np.zeros((4, 4))
    jac = hx * hy / 4.0
    for xi, wx in GAUSS_1D:
        for eta, wy in GAUSS_1D:
            w = wx * wy * jac
            n = shapes(xi, eta)
            g = ref_grads(xi, eta)
            gx = g[:, 0] * 2.0 / hx
            gy = g[:, 1] * 2.0 / hy
            x = x0 + (xi + 1) * hx / 2.0
            y = y0 + (eta + 1) * hy / 2.0
            for r in range(4):
                for c in range(4):
                    m[r, c] += w * n[r] * n[c]
                    k[r, c] += w * (gx[r] * gx[c] + gy[r] * gy[c])
            if advection is not None:
                ax, ay = advection(x, y)
                for r in range(4):
                    for c in range(4):
                        a_mat[r, c] += w * n[r] * (ax * gx[c] + ay * gy[c])
    return m, k, a_mat


def assemble_dense(mesh, advection=None):
    """Full node-space dense M, K, A for a structured mesh."""
    n = mesh.n_nodes
    M = np.zeros((n, n))
    K = np.zeros((n, n))
    A = np.zeros((n, n))
    for el in range(mesh.n_elements):
        nodes = mesh.elements[el]
        x0, y0 = mesh.coords[nodes[0]]
        m_el, k_el, a_el = element_matrices(x0, y0, mesh.hx, mesh.hy, advection)
        for r in range(4):
            for c in range(4):
                M[nodes[r], nodes[c]] += m_el[r, c]
                K[nodes[r], nodes[c]] += k_el[r, c]
                A[nodes[r], nodes[c]] += a_el[r, c]
    return M, K, A


def supg_dense(mesh, advection, nu, dt):
    """Dense streamline stabilization matrix, entry [k, j] pairing the
    advective test action on phi_k with the discrete residual of phi_j."""
    n = mesh.n_nodes
    S = np.zeros((n, n))
    hx, hy = mesh.hx, mesh.hy
    h = np.sqrt(hx * hy)
    jac = hx * hy / 4.0
    for el in range(mesh.n_elements):
        nodes = mesh.elements[el]
        x0, y0 = mesh.coords[nodes[0]]
        xc, yc = x0 + hx / 2.0, y0 + hy / 2.0
        axc, ayc = advection(xc, yc)
        speed = np.hypot(axc, ayc)
        tau = 1.0 / np.sqrt((2.0 / dt) ** 2 + (2.0 * speed / h) ** 2
                            + (9.0 * 4.0 * nu / h ** 2) ** 2)
        for xi, wx in GAUSS_1D_2PT:
            for eta, wy in GAUSS_1D_2PT:
                w = wx * wy * jac
                nv = shapes(xi, eta)
                g = ref_grads(xi, eta)
                gx = g[:, 0] * 2.0 / hx
                gy = g[:, 1] * 2.0 / hy
                x = x0 + (xi + 1) * hx / 2.0
                y = y0 + (eta + 1) * hy / 2.0
                ax, ay = advection(x, y)
                adv = ax * gx + ay * gy   # a . grad phi at this point
                for r in range(4):
                    for c in range(4):
                        S[nodes[r], nodes[c]] += w * tau * adv[r] * (nv[c] / dt + adv[c])
    return S


def boundary_flux_dense(mesh, advection):
    """Dense boundary matrix with entries of the form (a.n) phi_k phi_j
    integrated over the four sides of a rectangular mesh."""
    n = mesh.n_nodes
    E = np.zeros((n, n))
    nx, ny = mesh.nx, mesh.ny
    x_lo, y_lo = mesh.coords[0]
    x_hi, y_hi = mesh.coords[-1]

    def edge(n0, n1, p0, p1, normal):
        h = np.hypot(p1[0] - p0[0], p1[1] - p0[1])
        for t, w in GAUSS_1D:
            s = (t + 1) / 2.0
            x = p0[0] + s * (p1[0] - p0[0])
            y = p0[1] + s * (p1[1] - p0[1])
            ax, ay = advection(x, y)
            an = ax * normal[0] + ay * normal[1]
            phi = np.array([1 - s, s])
            for r, nr in enumerate((n0, n1)):
                for c, nc in enumerate((n0, n1)):
                    E[nr, nc] += (w / 2.0) * h * an * phi[r] * phi[c]

    for i in range(nx):  # bottom and top
        a = mesh.node_index(i, 0)
        b = mesh.node_index(i + 1, 0)
        edge(a, b, mesh.coords[a], mesh.coords[b], (0.0, -1.0))
        a = mesh.node_index(i, ny)
        b = mesh.node_index(i + 1, ny)
        edge(a, b, mesh.coords[a], mesh.coords[b], (0.0, 1.0))
    for j in range(ny):  # left and right
        a = mesh.node_index(0, j)
        b = mesh.node_index(0, j + 1)
        edge(a, b, mesh.coords[a], mesh.coords[b], (-1.0, 0.0))
        a = mesh.node_index(nx, j)
        b = mesh.node_index(nx, j + 1)
        edge(a, b, mesh.coords[a], mesh.coords[b], (1.0, 0.0))
    return E


def load_dense(mesh, f, t):
    """Full node-space dense load vector by direct quadrature."""
    out = np.zeros(mesh.n_nodes)
    jac = mesh.hx * mesh.hy / 4.0
    for el in range(mesh.n_elements):
        nodes = mesh.elements[el]
        x0, y0 = mesh.coords[nodes[0]]
        for xi, wx in GAUSS_1D:
            for eta, wy in GAUSS_1D:
                w = wx * wy * jac
                nv = shapes(xi, eta)
                x = x0 + (xi + 1) * mesh.hx / 2.0
                y = y0 + (eta + 1) * mesh.hy / 2.0
                val = f(x, y, t)
                for r in range(4):
                    out[nodes[r]] += w * nv[r] * val
    return out


def backward_euler_dense(M, K, A, free, dirichlet, nu, dt, u0_full, n_steps,
                         beta_fn=None, coords=None, S=None):
    """Dense implicit Euler march on the free DOFs with optional lifting.

    Matrices are full node-space; u0_full holds all nodal values. Returns
    the free-DOF trajectory including the initial column.
    """
    Sm = np.zeros_like(M) if S is None else S
    L = M / dt + nu * K + A + Sm
    L_ff = L[np.ix_(free, free)]
    M_ff = M[np.ix_(free, free)]
    u = np.asarray(u0_full, dtype=float)[free]
    out = [u.copy()]
    if beta_fn is not None:
        bc = coords[dirichlet]
        beta_prev = beta_fn(bc[:, 0], bc[:, 1], 0.0)
        # lifting carries the Galerkin blocks only, not the stabilization
        KA_fd = (nu * K + A)[np.ix_(free, dirichlet)]
        M_fd = M[np.ix_(free, dirichlet)]
    for n in range(1, n_steps + 1):
        rhs = M_ff @ u / dt
        if beta_fn is not None:
            beta_now = beta_fn(bc[:, 0], bc[:, 1], n * dt)
            rhs -= KA_fd @ beta_now
            rhs -= M_fd @ (beta_now - beta_prev) / dt
            beta_prev = beta_now
        u = np.linalg.solve(L_ff, rhs)
        out.append(u.copy())
    return np.array(out).T

"""Sparse/dense linear algebra plumbing shared by the solver stack.

SparseMatrix is scipy's CSR format; factorizations are SuperLU objects wrapped
so a matrix is factored once and the factorization reused across timesteps and
descent iterations (the system matrices are time independent). The thin SVD is
LAPACK's economy SVD and backs proper orthogonal decomposition.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

SparseMatrix = sp.csr_matrix
DenseMatrix = np.ndarray


class Factorization:
    """LU factorization of a square sparse matrix, reusable across solves."""

    def __init__(self, matrix: sp.spmatrix):
        if matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"cannot factorize non-square matrix {matrix.shape}")
        self.shape = matrix.shape
        self._lu = spla.splu(sp.csc_matrix(matrix))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve A x = rhs for one right-hand side (or a stack of columns)."""
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.shape[0] != self.shape[0]:
            raise ValueError(f"rhs length {rhs.shape[0]} != matrix size {self.shape[0]}")
        return self._lu.solve(rhs)


def from_triplets(n_rows: int, n_cols: int, rows, cols, values) -> sp.csr_matrix:
    """Assemble a CSR matrix from COO triplets; duplicate entries are summed."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if not (rows.shape == cols.shape == values.shape):
        raise ValueError("triplet arrays must have identical shapes")
    if rows.size and (rows.min() < 0 or rows.max() >= n_rows
                      or cols.min() < 0 or cols.max() >= n_cols):
        raise ValueError("triplet index out of range")
    coo = sp.coo_matrix((values, (rows, cols)), shape=(n_rows, n_cols))
    out = coo.tocsr()
    out.sum_duplicates()
    return out


def factorize(matrix: sp.spmatrix) -> Factorization:
    """Factor a square sparse matrix once; reuse the result via .solve()."""
    return Factorization(matrix)


def solve(factorization: Factorization, rhs: np.ndarray) -> np.ndarray:
    return factorization.solve(rhs)


def thin_svd(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Economy SVD: matrix = U @ diag(s) @ Vt with U of shape (m, min(m, n))."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError("thin_svd expects a 2-d array")
    return np.linalg.svd(matrix, full_matrices=False)

"""Sparse and small-dense linear algebra shared by the whole toolkit.

Sparse matrices are scipy CSR in canonical form (duplicates summed, indices
sorted); coordinate triplets appear only at construction and IO boundaries.
Factorization is unsymmetric-capable sparse LU with partial pivoting and a
fill-reducing ordering (the bordered saddle-point systems downstream are
symmetric indefinite, so Cholesky is not an option).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(RuntimeError):
    """Raised when a factorization meets a singular-to-working-precision pivot."""


def csr_from_coo(rows, cols, vals, shape, dtype=None):
    """Build a canonical CSR matrix from coordinate triplets (duplicates summed)."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    if rows.size and (rows.min() < 0 or rows.max() >= shape[0]):
        raise ValueError("row index out of bounds")
    if cols.size and (cols.min() < 0 or cols.max() >= shape[1]):
        raise ValueError("column index out of bounds")
    a = sp.coo_matrix((vals, (rows, cols)), shape=shape, dtype=dtype).tocsr()
    a.sum_duplicates()
    a.sort_indices()
    return a


def spmv(a, v):
    """Sparse matrix-vector product with an explicit dimension check."""
    v = np.asarray(v)
    if v.shape[0] != a.shape[1]:
        raise ValueError(f"dimension mismatch: matrix is {a.shape}, vector has {v.shape[0]}")
    return a @ v


class Factorization:
    """Sparse LU of a square matrix, with singular pivots rejected up front."""

    def __init__(self, lu, shape, dtype):
        self._lu = lu
        self.shape = shape
        self.dtype = dtype

    def solve(self, b):
        b = np.asarray(b)
        if b.shape[0] != self.shape[0]:
            raise ValueError(f"dimension mismatch: matrix is {self.shape}, rhs has {b.shape[0]}")
        if np.iscomplexobj(b) and self.dtype == np.float64:
            return (self._lu.solve(np.ascontiguousarray(b.real))
                    + 1j * self._lu.solve(np.ascontiguousarray(b.imag)))
        return self._lu.solve(np.asarray(b, dtype=self.dtype))


def factorize(s, pivot_rtol=1e-13):
    """LU-factorize a square sparse matrix (real or complex).

    Partial pivoting with COLAMD ordering.  A pivot smaller than
    ``pivot_rtol`` times the largest pivot raises SingularMatrixError naming
    the pivot index.
    """
    if s.shape[0] != s.shape[1]:
        raise ValueError(f"matrix must be square, got {s.shape}")
    dtype = np.complex128 if np.iscomplexobj(s) else np.float64
    a = sp.csc_matrix(s, dtype=dtype)
    try:
        lu = spla.splu(a)
    except RuntimeError as exc:
        if "singular" in str(exc).lower():
            raise SingularMatrixError(f"singular matrix: {exc}") from exc
        raise
    d = np.abs(lu.U.diagonal())
    dmax = d.max() if d.size else 0.0
    if d.size and (dmax == 0.0 or d.min() <= pivot_rtol * dmax):
        k = int(np.argmin(d)) if dmax > 0 else 0
        raise SingularMatrixError(f"singular matrix at pivot index {k}")
    return Factorization(lu, s.shape, dtype)


def dense_sym_eig(a, sym_rtol=1e-12):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Returns (w, u) with a = u @ diag(w) @ u.T and u orthogonal.  Input more
    asymmetric than ``sym_rtol`` in relative Frobenius norm is rejected.
    """
    a = np.asarray(a, dtype=float)
    nrm = np.linalg.norm(a)
    if nrm > 0 and np.linalg.norm(a - a.T) > sym_rtol * nrm:
        raise ValueError("matrix is not symmetric within tolerance")
    w, u = np.linalg.eigh(a)
    return w[::-1].copy(), u[:, ::-1].copy()


@dataclass
class LanczosResult:
    lambda_min: float
    lambda_max: float
    iterations: int
    converged: bool
    ritz: np.ndarray | None = None


def lanczos_extremal(op, start, maxit=100, tol=1e-10, metric=None):
    """Extremal Ritz values of a self-adjoint operator by Lanczos iteration.

    ``op`` maps a vector to L @ v; ``metric`` (optional) maps v to M @ v and
    defines the working inner product <x, y> = x^T M y in which L must be
    self-adjoint (Euclidean when omitted).  Full reorthogonalization is used;
    convergence is declared when both Ritz extremes change by less than
    ``tol`` relatively between iterations, or when the Krylov-reachable
    subspace is exhausted (the Ritz values are then exact on it).  A
    breakdown before any Ritz value exists returns converged=False.
    """
    if metric is None:
        metric = lambda x: x
    v = np.asarray(start, dtype=float)
    mv = metric(v)
    nrm2 = float(v @ mv)
    if not nrm2 > 0:
        raise ValueError("start vector must be nonzero in the working inner product")
    v = v / np.sqrt(nrm2)
    basis = [v]
    alphas, betas = [], []
    prev = None
    lo = hi = np.nan
    ritz = None
    for k in range(maxit):
        w = op(basis[-1])
        alphas.append(float(basis[-1] @ metric(w)))
        # full reorthogonalization (two passes) against all Lanczos vectors
        b = np.asarray(basis)
        for _ in range(2):
            w = w - b.T @ (b @ metric(w))
        mw = metric(w)
        t = sp.diags(
            [betas, alphas, betas], offsets=[-1, 0, 1], shape=(k + 1, k + 1)
        ).toarray()
        ritz = np.linalg.eigvalsh(t)
        lo, hi = float(ritz[0]), float(ritz[-1])
        if prev is not None:
            scale = max(abs(lo), abs(hi), 1e-300)
            if abs(lo - prev[0]) < tol * scale and abs(hi - prev[1]) < tol * scale:
                return LanczosResult(lo, hi, k + 1, True, ritz)
        prev = (lo, hi)
        beta2 = float(w @ mw)
        if not beta2 > 0 or np.sqrt(beta2) < 1e-14 * max(abs(a) for a in alphas):
            # invariant subspace exhausted: Ritz values exact on it
            return LanczosResult(lo, hi, k + 1, True, ritz)
        beta = np.sqrt(beta2)
        betas.append(beta)
        basis.append(w / beta)
    return LanczosResult(lo, hi, maxit, False, ritz)


def write_matrix_market(path, a, symmetric=False):
    """Write a sparse (coordinate) or dense (array) matrix in Matrix Market form.

    1-based indices, full-precision scientific values; the symmetric flag
    stores the lower triangle only.
    """
    symmetry = "symmetric" if symmetric else "general"
    if sp.issparse(a):
        scipy.io.mmwrite(str(path), a.tocoo(), precision=17, symmetry=symmetry)
    else:
        scipy.io.mmwrite(str(path), np.asarray(a), precision=17, symmetry=symmetry)


def read_matrix_market(path):
    """Read a Matrix Market file; sparse files come back as canonical CSR."""
    a = scipy.io.mmread(str(path))
    if sp.issparse(a):
        a = a.tocsr()
        a.sum_duplicates()
        a.sort_indices()
    return a

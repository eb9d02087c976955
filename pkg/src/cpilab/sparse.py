"""Canonical symmetric sparse matrices in coordinate form.

Every matrix entering a pencil goes through one canonicalisation pass:
duplicate coordinates are summed, explicit zeros dropped, the matrix is
symmetrised by (X + X^T)/2, and the entries are stored sorted column-major
so that downstream assembly is deterministic.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.io import mmread, mmwrite

from .errors import DimensionMismatch, NotSymmetric

#: relative asymmetry above which ingestion warns before symmetrising
SYM_WARN_TOL = 1e-9
#: relative asymmetry above which ingestion refuses the matrix outright
SYM_ERROR_TOL = 1e-6


@dataclass
class SymSparseMatrix:
    """Symmetric sparse matrix stored as canonical COO triplets.

    Attributes
    ----------
    n : int
        Matrix dimension.
    row, col : ndarray of int64
        Coordinates, sorted column-major (col primary, row secondary).
    data : ndarray of float64
        Entry values; no explicit zeros, duplicates already summed.
    symmetric : bool
        Always True after canonicalisation; kept as an explicit flag.
    """

    n: int
    row: np.ndarray
    col: np.ndarray
    data: np.ndarray
    symmetric: bool = True
    _csr: sp.csr_matrix = field(default=None, repr=False, compare=False)

    @classmethod
    def from_coo(cls, n, row, col, data):
        """Canonicalise raw triplets into a validated symmetric matrix."""
        row = np.asarray(row, dtype=np.int64)
        col = np.asarray(col, dtype=np.int64)
        data = np.asarray(data, dtype=np.float64)
        if row.shape != col.shape or row.shape != data.shape:
            raise DimensionMismatch("row/col/data length mismatch")
        if row.size and (row.min() < 0 or row.max() >= n
                         or col.min() < 0 or col.max() >= n):
            raise DimensionMismatch("coordinate outside matrix dimension")
        x = sp.coo_matrix((data, (row, col)), shape=(n, n)).tocsr()
        x.sum_duplicates()
        scale = np.max(np.abs(x.data)) if x.nnz else 0.0
        if scale > 0.0:
            asym = sp.csr_matrix(abs(x - x.T))
            rel = (asym.data.max() / scale) if asym.nnz else 0.0
            if rel > SYM_ERROR_TOL:
                raise NotSymmetric(
                    f"relative asymmetry {rel:.3e} exceeds {SYM_ERROR_TOL:.0e}")
            if rel > SYM_WARN_TOL:
                warnings.warn(
                    f"matrix asymmetry {rel:.3e} exceeds {SYM_WARN_TOL:.0e}; "
                    "symmetrising by (X + X^T)/2", stacklevel=2)
        x = (x + x.T) * 0.5
        x.eliminate_zeros()
        coo = x.tocoo()
        order = np.lexsort((coo.row, coo.col))
        return cls(n=n,
                   row=coo.row[order].astype(np.int64),
                   col=coo.col[order].astype(np.int64),
                   data=coo.data[order].astype(np.float64))

    @classmethod
    def from_dense(cls, a):
        a = np.asarray(a, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch("dense input must be square")
        r, c = np.nonzero(a)
        return cls.from_coo(a.shape[0], r, c, a[r, c])

    @classmethod
    def from_scipy(cls, m):
        coo = sp.coo_matrix(m)
        if coo.shape[0] != coo.shape[1]:
            raise DimensionMismatch("matrix must be square")
        return cls.from_coo(coo.shape[0], coo.row, coo.col, coo.data)

    @property
    def nnz(self):
        return self.data.size

    @property
    def shape(self):
        return (self.n, self.n)

    def tocsr(self):
        if self._csr is None:
            csr = sp.csr_matrix(
                (self.data, (self.row, self.col)), shape=(self.n, self.n))
            object.__setattr__(self, "_csr", csr)
        return self._csr

    def tocsc(self):
        return self.tocsr().tocsc()

    def todense(self):
        return self.tocsr().toarray()

    def block(self, r0, r1, c0, c1):
        """CSR view of the sub-block with rows [r0, r1) and cols [c0, c1)."""
        return self.tocsr()[r0:r1, c0:c1]

    def __matmul__(self, other):
        return self.tocsr() @ other

    def same_values(self, other, tol=0.0):
        """True when both canonical triplet streams agree within ``tol``."""
        if self.n != other.n or self.nnz != other.nnz:
            return False
        if not (np.array_equal(self.row, other.row)
                and np.array_equal(self.col, other.col)):
            return False
        if tol == 0.0:
            return np.array_equal(self.data, other.data)
        return bool(np.max(np.abs(self.data - other.data)) <= tol)


def load_matrix_market(path):
    """Read a Matrix Market file (symmetric storage accepted) and canonicalise."""
    return SymSparseMatrix.from_scipy(mmread(str(path)))


def save_matrix_market(path, mat, comment=""):
    """Write a SymSparseMatrix in symmetric Matrix Market coordinate format."""
    mmwrite(str(path), mat.tocsr().tocoo(), comment=comment, symmetry="symmetric")

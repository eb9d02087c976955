"""Block-structured symmetric pencils, reduction, and block Cholesky.

A :class:`BlockPencil` pairs the stiffness-role matrix A with the mass-role
matrix M under the standard interior/exterior splitting at index ``n1``.
Reduced pencils replace the exterior block by its compression onto a basis
``Q22`` while the interior block is kept verbatim, and the exterior Gram
blocks can be recycled across problem versions that share the exterior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg.lapack import dpotrf

from .errors import (DimensionMismatch, NotPositiveDefinite,
                     RankDeficientBasis)
from .sparse import SymSparseMatrix

#: above this dimension SPD checks use sparse symmetric-mode LU pivot signs
SPD_DENSE_LIMIT = 4096

#: module-level instrumentation, incremented by the exterior Gram computation
PHASE_COUNTS = {"exterior_gram": 0}


def _cholesky_upper(a, block="full"):
    """Dense upper Cholesky via LAPACK; raises with the failing pivot index."""
    c, info = dpotrf(np.asarray(a, dtype=np.float64), lower=0,
                     clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefinite(
            f"Cholesky breakdown in {block} block at pivot {info}",
            block=block, pivot=int(info))
    if info < 0:
        raise ValueError(f"illegal argument {-info} to dpotrf")
    return c


def _check_spd(mat, name):
    """Verify positive definiteness by attempting a Cholesky factorisation."""
    n = mat.n
    if n <= SPD_DENSE_LIMIT:
        _cholesky_upper(mat.todense(), block=name)
        return
    try:
        lu = spla.splu(mat.tocsc(), permc_spec="MMD_AT_PLUS_A",
                       diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise NotPositiveDefinite(f"{name}: sparse factorisation failed "
                                  f"({exc})", block=name) from exc
    d = lu.U.diagonal()
    bad = np.flatnonzero(d <= 0.0)
    if bad.size:
        raise NotPositiveDefinite(
            f"{name}: nonpositive pivot at permuted index {bad[0]}",
            block=name, pivot=int(bad[0]))


@dataclass
class BlockPencil:
    """The matrix pair (A, M) with splitting metadata n = n1 + n2."""

    A: SymSparseMatrix
    M: SymSparseMatrix
    n1: int
    n2: int

    @property
    def n(self):
        return self.n1 + self.n2

    # block views (CSR) -----------------------------------------------------
    @property
    def A11(self):
        return self.A.block(0, self.n1, 0, self.n1)

    @property
    def A12(self):
        return self.A.block(0, self.n1, self.n1, self.n)

    @property
    def A21(self):
        return self.A.block(self.n1, self.n, 0, self.n1)

    @property
    def A22(self):
        return self.A.block(self.n1, self.n, self.n1, self.n)

    @property
    def M11(self):
        return self.M.block(0, self.n1, 0, self.n1)

    @property
    def M12(self):
        return self.M.block(0, self.n1, self.n1, self.n)

    @property
    def M21(self):
        return self.M.block(self.n1, self.n, 0, self.n1)

    @property
    def M22(self):
        return self.M.block(self.n1, self.n, self.n1, self.n)


@dataclass
class BlockCholesky:
    """Upper block Cholesky R with R^T R equal to the factored matrix.

    ``R = [[R11, coupling], [0, R22]]`` where R11 factors the leading block
    and R22 factors the Schur complement of the trailing block.
    """

    R11: np.ndarray
    coupling: np.ndarray
    R22: np.ndarray

    @property
    def n1(self):
        return self.R11.shape[0]

    @property
    def n2(self):
        return self.R22.shape[0]

    def assemble(self):
        n1, n2 = self.n1, self.n2
        r = np.zeros((n1 + n2, n1 + n2))
        r[:n1, :n1] = self.R11
        r[:n1, n1:] = self.coupling
        r[n1:, n1:] = self.R22
        return r


def build_pencil(a, m, n1):
    """Validate and assemble a BlockPencil from two symmetric matrices.

    Parameters
    ----------
    a, m : SymSparseMatrix
        Stiffness-role and mass-role matrices of equal dimension.
    n1 : int
        Interior dimension; must satisfy 0 < n1 < n.

    Returns
    -------
    BlockPencil
        Positive definiteness of both matrices is verified by attempting a
        Cholesky factorisation at construction.
    """
    if a.n != m.n:
        raise DimensionMismatch(f"A is {a.n}x{a.n} but M is {m.n}x{m.n}")
    if not (0 < n1 < a.n):
        raise DimensionMismatch(f"split index n1={n1} outside (0, {a.n})")
    _check_spd(a, "A")
    _check_spd(m, "M")
    return BlockPencil(A=a, M=m, n1=int(n1), n2=int(a.n - n1))


def interface_rank(pencil, rel_tol=1e-10):
    """Numerical rank of the concatenated coupling block [M21 A21].

    Counting singular values above ``rel_tol`` times the largest one; only
    the nonzero columns of the couplings enter the SVD.
    """
    m21 = pencil.M21.tocsc()
    a21 = pencil.A21.tocsc()
    cols = []
    for b in (m21, a21):
        nz = np.flatnonzero(np.diff(b.indptr))
        if nz.size:
            cols.append(b[:, nz].toarray())
    if not cols:
        return 0
    stacked = np.hstack(cols)
    svals = np.linalg.svd(stacked, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return 0
    return int(np.count_nonzero(svals > rel_tol * svals[0]))


def _assemble_reduced(a11, m11, a12q, m12q, a22r, m22r):
    """Deterministic COO assembly of a reduced pencil from its blocks.

    Blocks are appended in a fixed order (interior, coupling, mirrored
    coupling, exterior) and the canonical column-major sort of
    SymSparseMatrix fixes the final layout, so recycled and fresh paths
    agree bitwise.
    """
    n1 = a11.shape[0]
    m = a22r.shape[0]
    n = n1 + m

    def build(x11, x12q, x22r):
        c11 = sp.coo_matrix(x11)
        rows = [c11.row, ]
        cols = [c11.col, ]
        vals = [c11.data, ]
        ri, ci = np.nonzero(x12q)
        rows.append(ri)
        cols.append(ci + n1)
        vals.append(x12q[ri, ci])
        rows.append(ci + n1)
        cols.append(ri)
        vals.append(x12q[ri, ci])
        rj, cj = np.nonzero(x22r)
        rows.append(rj + n1)
        cols.append(cj + n1)
        vals.append(x22r[rj, cj])
        return SymSparseMatrix.from_coo(
            n, np.concatenate(rows), np.concatenate(cols),
            np.concatenate(vals))

    return build(a11, a12q, a22r), build(m11, m12q, m22r)


def exterior_gram(a22, m22, q22):
    """Compressions Q22^T A22 Q22 and Q22^T M22 Q22, symmetrised.

    This is the expensive exterior product pair that version recycling
    reuses; the module counter records how often it actually runs.
    """
    PHASE_COUNTS["exterior_gram"] += 1
    a22r = q22.T @ (a22 @ q22)
    m22r = q22.T @ (m22 @ q22)
    a22r = (a22r + a22r.T) * 0.5
    m22r = (m22r + m22r.T) * 0.5
    return a22r, m22r


def reduce_pencil(pencil, q22):
    """Compress the exterior block of a pencil onto the basis ``q22``.

    The reduced pencil keeps A11/M11 verbatim, replaces the couplings by
    A12 Q22 / M12 Q22 and the exterior blocks by their Gram compressions,
    which are symmetrised by averaging.

    Raises
    ------
    RankDeficientBasis
        If the Gram matrix Q22^T A22 Q22 fails its Cholesky factorisation.
    """
    q22 = np.asarray(q22, dtype=np.float64)
    if q22.ndim != 2 or q22.shape[0] != pencil.n2:
        raise DimensionMismatch(
            f"basis has {q22.shape[0]} rows, exterior dimension is {pencil.n2}")
    if q22.shape[1] > pencil.n2:
        raise DimensionMismatch("basis has more columns than exterior dofs")
    a22r, m22r = exterior_gram(pencil.A22, pencil.M22, q22)
    try:
        _cholesky_upper(a22r, block="reduced exterior")
    except NotPositiveDefinite as exc:
        raise RankDeficientBasis(
            f"Q22^T A22 Q22 not positive definite (pivot {exc.pivot}); "
            "basis is numerically rank deficient") from exc
    a12q = pencil.A12 @ q22
    m12q = pencil.M12 @ q22
    a_red, m_red = _assemble_reduced(pencil.A11, pencil.M11, a12q, m12q,
                                     a22r, m22r)
    return build_pencil(a_red, m_red, pencil.n1)


def recycle_reduced_blocks(cache, new_a11, new_m11, new_a12, new_m12):
    """Assemble a reduced pencil for a new version, reusing cached exterior.

    ``cache`` must expose ``q22``, ``reduced_a22`` and ``reduced_m22`` (a
    :class:`cpilab.basis.ReducedBasis` does).  Only the coupling products
    with the basis are recomputed; the interior dimension may differ from
    the one the cache was built with.
    """
    q22 = cache.q22
    n1 = new_a11.shape[0]
    for name, blk in (("A11", new_a11), ("M11", new_m11)):
        if blk.shape != (n1, n1):
            raise DimensionMismatch(f"{name} must be {n1}x{n1}")
    for name, blk in (("A12", new_a12), ("M12", new_m12)):
        if blk.shape != (n1, q22.shape[0]):
            raise DimensionMismatch(
                f"{name} must be {n1}x{q22.shape[0]} to match the cached basis")
    a12q = new_a12 @ q22
    m12q = new_m12 @ q22
    a_red, m_red = _assemble_reduced(new_a11, new_m11, a12q, m12q,
                                     cache.reduced_a22, cache.reduced_m22)
    return build_pencil(a_red, m_red, n1)


def block_cholesky(matrix, n1):
    """Block Cholesky R^T R = X with the trailing block via Schur complement.

    Parameters
    ----------
    matrix : SymSparseMatrix or ndarray
        SPD matrix to factor (densified internally; intended for reduced or
        test-scale operands).
    n1 : int
        Split index separating the leading block.
    """
    if isinstance(matrix, SymSparseMatrix):
        x = matrix.todense()
    else:
        x = np.asarray(matrix, dtype=np.float64)
    n = x.shape[0]
    if not (0 < n1 < n):
        raise DimensionMismatch(f"split index n1={n1} outside (0, {n})")
    x11 = x[:n1, :n1]
    x12 = x[:n1, n1:]
    x22 = x[n1:, n1:]
    r11 = _cholesky_upper(x11, block="leading")
    coupling = sla.solve_triangular(r11, x12, trans="T", lower=False)
    schur = x22 - coupling.T @ coupling
    schur = (schur + schur.T) * 0.5
    r22 = _cholesky_upper(schur, block="schur")
    return BlockCholesky(R11=r11, coupling=coupling, R22=r22)

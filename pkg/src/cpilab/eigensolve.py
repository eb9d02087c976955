"""Symmetric generalized eigensolvers, eigenvalue counting, truncated SVD.

The dense path (LAPACK ``eigh``) is the oracle used throughout the test
suite; the sparse path is a shift-and-invert Lanczos iteration with full
reorthogonalisation in the M-inner product, deterministic through a fixed
start vector.  Eigenvalue counts below a shift come from matrix inertia
(Sylvester's law) without a full eigensolve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (ConvergenceFailure, DimensionMismatch,
                     FactorizationFailure, NotPositiveDefinite, SingularShift)
from .pencil import BlockPencil
from .sparse import SymSparseMatrix

DENSE_EIG_LIMIT = 2000
INERTIA_DENSE_LIMIT = 1500
_LANCZOS_SEED = 20250214
_SVD_SEED = 777


def _as_csr(x):
    if isinstance(x, SymSparseMatrix):
        return x.tocsr()
    if sp.issparse(x):
        return x.tocsr()
    return sp.csr_matrix(np.asarray(x, dtype=np.float64))


def _as_dense(x):
    if isinstance(x, SymSparseMatrix):
        return x.todense()
    if sp.issparse(x):
        return x.toarray()
    return np.asarray(x, dtype=np.float64)


def _fix_signs(vecs):
    """Deterministic sign convention: largest-magnitude entry positive."""
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0.0] = 1.0
    return vecs * signs


@dataclass
class EigenPairSet:
    """Eigenvalues in ascending order with M-orthonormal eigenvectors."""

    values: np.ndarray
    vectors: np.ndarray
    m_orthonormal: bool = True

    def __len__(self):
        return self.values.size

    @classmethod
    def empty(cls, n):
        return cls(values=np.zeros(0), vectors=np.zeros((n, 0)))

    def clusters(self, rtol=1e-8):
        """Indices of eigenvalue clusters (relative gap below ``rtol``)."""
        groups = []
        cur = [0]
        for i in range(1, len(self)):
            lo, hi = self.values[i - 1], self.values[i]
            if abs(hi - lo) <= rtol * max(abs(hi), abs(lo)):
                cur.append(i)
            else:
                groups.append(cur)
                cur = [i]
        if len(self):
            groups.append(cur)
        return groups

    def max_residual(self, a, m):
        """Largest relative residual ||A x - lam M x|| / (lam ||x||_M)."""
        if not len(self):
            return 0.0
        a = _as_csr(a)
        m = _as_csr(m)
        ax = a @ self.vectors
        mx = m @ self.vectors
        res = ax - mx * self.values[None, :]
        num = np.linalg.norm(res, axis=0)
        xnorm = np.sqrt(np.einsum("ij,ij->j", self.vectors, mx))
        return float(np.max(num / (self.values * xnorm)))

    def orthonormality_defect(self, m):
        """max |X^T M X - I| over all entries."""
        if not len(self):
            return 0.0
        g = self.vectors.T @ (_as_csr(m) @ self.vectors)
        return float(np.max(np.abs(g - np.eye(len(self)))))


@dataclass
class SvdTriplet:
    """Leading singular triplets, sigma non-increasing."""

    sigma: np.ndarray
    u: np.ndarray
    w: np.ndarray

    def __len__(self):
        return self.sigma.size

    def reconstruct(self):
        return (self.u * self.sigma[None, :]) @ self.w.T


@dataclass
class SpectralResult:
    """Eigenvalues in the target interval with back-mapped eigenvectors.

    ``bound`` is the a-priori relative error bound attached by the solver
    (includes the truncation term when a truncated basis was used);
    ``bound_untruncated`` is the pure interpolation bound.
    """

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    bound: float = np.inf
    bound_untruncated: float = np.inf
    info: dict = field(default_factory=dict)

    def __len__(self):
        return self.values.size


def dense_geneig(a, m, limit=DENSE_EIG_LIMIT):
    """Full spectrum of the SPD pencil (A, M) with M-orthonormal vectors.

    Dense LAPACK oracle; refuses problems larger than ``limit``.
    """
    a = _as_dense(a)
    m = _as_dense(m)
    if a.shape != m.shape:
        raise DimensionMismatch("A and M differ in shape")
    if a.shape[0] > limit:
        raise DimensionMismatch(
            f"dense solver limited to n <= {limit}, got {a.shape[0]}")
    try:
        sla.cholesky(m)
    except sla.LinAlgError as exc:
        raise NotPositiveDefinite(f"M not positive definite: {exc}",
                                  block="M") from exc
    vals, vecs = sla.eigh(a, m)
    return EigenPairSet(values=vals, vectors=_fix_signs(vecs))


# ---------------------------------------------------------------------------
# inertia counts
# ---------------------------------------------------------------------------

def _inertia_dense(x):
    scale = np.max(np.abs(x)) if x.size else 0.0
    _, d, _ = sla.ldl(x)
    neg = 0
    i = 0
    n = x.shape[0]
    while i < n:
        if i + 1 < n and d[i + 1, i] != 0.0:
            blk = d[i:i + 2, i:i + 2]
            ev = np.linalg.eigvalsh(blk)
            if np.min(np.abs(ev)) <= 1e-12 * scale:
                raise SingularShift("shift coincides with an eigenvalue "
                                    "(singular 2x2 pivot)")
            neg += int(np.count_nonzero(ev < 0.0))
            i += 2
        else:
            piv = d[i, i]
            if abs(piv) <= 1e-12 * scale:
                raise SingularShift("shift coincides with an eigenvalue "
                                    "(vanishing pivot)")
            if piv < 0.0:
                neg += 1
            i += 1
    return neg


def _inertia_sparse(x):
    try:
        lu = spla.splu(x.tocsc(), permc_spec="MMD_AT_PLUS_A",
                       diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SingularShift(f"factorisation of shifted matrix failed: {exc}") \
            from exc
    d = lu.U.diagonal()
    dmax = np.max(np.abs(d))
    if dmax == 0.0 or np.min(np.abs(d)) <= 1e-14 * dmax:
        raise SingularShift("shift coincides with an eigenvalue "
                            "(vanishing pivot)")
    return int(np.count_nonzero(d < 0.0))


def inertia_count(a, m, l, dense_limit=INERTIA_DENSE_LIMIT):
    """Number of eigenvalues of the pencil (a, m) strictly below ``l``.

    Computed from the inertia of a - l m via a symmetric factorisation
    (Sylvester's law of inertia), without an eigensolve.
    """
    if l <= 0:
        raise DimensionMismatch("count threshold must be positive")
    a = _as_csr(a)
    m = _as_csr(m)
    x = (a - l * m).tocsc()
    if a.shape[0] <= dense_limit:
        return _inertia_dense(x.toarray())
    return _inertia_sparse(x)


def count_below(obj, l, dense_limit=INERTIA_DENSE_LIMIT):
    """Exact count of eigenvalues below ``l``.

    ``obj`` may be an :class:`EigenPairSet` (counted directly) or a
    :class:`BlockPencil`, in which case the exterior pair (A22, M22) is
    counted via Cholesky inertia.
    """
    if isinstance(obj, EigenPairSet):
        if l <= 0:
            raise DimensionMismatch("count threshold must be positive")
        return int(np.count_nonzero(obj.values < l))
    if isinstance(obj, BlockPencil):
        return inertia_count(obj.A22, obj.M22, l, dense_limit=dense_limit)
    raise TypeError("count_below expects an EigenPairSet or a BlockPencil")


def _retry_inertia(a, m, l, dense_limit=INERTIA_DENSE_LIMIT):
    """Inertia count with automatic shift nudging on singular shifts."""
    for bump in (0.0, 1e-9, -1e-9, 1e-8, -1e-8):
        try:
            return inertia_count(a, m, l * (1.0 + bump),
                                 dense_limit=dense_limit)
        except SingularShift:
            continue
    raise SingularShift(f"count threshold {l} keeps hitting eigenvalues")


# ---------------------------------------------------------------------------
# shift-and-invert Lanczos
# ---------------------------------------------------------------------------

def lanczos_smallest(a, m, count=None, interval=None, shift=0.0, tol=1e-9,
                     max_dim=None, seed=_LANCZOS_SEED):
    """Smallest eigenpairs of the SPD pencil (a, m) by shift-invert Lanczos.

    Either ``count`` (that many smallest) or ``interval=(0, lam)`` (all
    eigenvalues below ``lam``; completeness certified by an inertia count)
    must be given.  The iteration runs on (A + shift M)^{-1} M in the
    M-inner product with full reorthogonalisation, from a fixed seeded
    start vector, so results are deterministic.

    Returns
    -------
    EigenPairSet
        Ascending eigenvalues, M-orthonormal vectors, every pair converged
        to relative residual ``tol``.
    """
    a = _as_csr(a)
    m = _as_csr(m)
    n = a.shape[0]
    if a.shape != m.shape:
        raise DimensionMismatch("A and M differ in shape")
    if (count is None) == (interval is None):
        raise ValueError("exactly one of count/interval is required")

    if interval is not None:
        lam_hi = float(interval[1] if isinstance(interval, (tuple, list))
                       else interval)
        if lam_hi <= 0:
            raise DimensionMismatch("interval upper bound must be positive")
        want = _retry_inertia(a, m, lam_hi)
        if want == 0:
            return EigenPairSet.empty(n)
    else:
        want = int(count)
        lam_hi = None
        if want <= 0:
            return EigenPairSet.empty(n)
        if want > n:
            raise DimensionMismatch(f"requested {want} pairs from size {n}")

    try:
        op = (a + shift * m).tocsc() if shift != 0.0 else a.tocsc()
        lu = spla.splu(op)
    except RuntimeError as exc:
        raise FactorizationFailure(f"shifted factorisation failed: {exc}") \
            from exc

    cap = min(n, max(4 * want + 60, 120)) if max_dim is None \
        else min(n, max_dim)
    rng = np.random.default_rng(seed)

    V = np.zeros((n, cap))
    MV = np.zeros((n, cap))
    alphas = np.zeros(cap)
    betas = np.zeros(cap)

    v = rng.standard_normal(n)
    mv = m @ v
    v /= np.sqrt(v @ mv)
    mv = m @ v
    V[:, 0] = v
    MV[:, 0] = mv

    def ritz(k):
        theta, s = sla.eigh_tridiagonal(alphas[:k], betas[:k - 1]) \
            if k > 1 else (np.array([alphas[0]]), np.array([[1.0]]))
        order = np.argsort(theta)[::-1]
        return theta[order], s[:, order]

    def extract(k, theta, s, nkeep):
        lam = 1.0 / theta[:nkeep] - shift
        x = V[:, :k] @ s[:, :nkeep]
        # normalise in M and fix signs for determinism
        mx = m @ x
        nrm = np.sqrt(np.einsum("ij,ij->j", x, mx))
        x = _fix_signs(x / nrm)
        order = np.argsort(lam)
        return EigenPairSet(values=lam[order], vectors=x[:, order])

    k = 1
    grown = 0
    while True:
        while k < cap:
            w = lu.solve(MV[:, k - 1])
            alphas[k - 1] = w @ MV[:, k - 1]
            # full reorthogonalisation, twice for safety
            for _ in range(2):
                w -= V[:, :k] @ (MV[:, :k].T @ w)
            mw = m @ w
            beta = np.sqrt(max(w @ mw, 0.0))
            if beta <= 1e-14:
                # invariant subspace hit; restart direction
                w = rng.standard_normal(n)
                for _ in range(2):
                    w -= V[:, :k] @ (MV[:, :k].T @ w)
                mw = m @ w
                beta = np.sqrt(max(w @ mw, 0.0))
                if beta <= 1e-14:
                    break
                betas[k - 1] = 0.0
            else:
                betas[k - 1] = beta
            V[:, k] = w / beta
            MV[:, k] = m @ V[:, k]
            k += 1
            if k >= min(cap, max(2 * want, want + 10)) and \
                    (k % max(5, want // 2) == 0 or k == cap):
                theta, s = ritz(k)
                if theta.size >= want and np.all(theta[:want] > 0.0):
                    bound = np.abs(betas[k - 1] * s[-1, :want])
                    if np.all(bound <= 1e-2 * tol * theta[:want]):
                        cand = extract(k, theta, s, want)
                        if cand.max_residual(a, m) <= tol:
                            try:
                                return _finalize(cand, lam_hi, want)
                            except ConvergenceFailure:
                                pass  # interval count off; keep iterating
        # cap reached: accept if converged, else grow the budget
        theta, s = ritz(k)
        nkeep = min(want, int(np.count_nonzero(theta > 0.0)))
        cand = extract(k, theta, s, nkeep)
        if nkeep == want and cand.max_residual(a, m) <= tol:
            return _finalize(cand, lam_hi, want)
        if k >= n or grown >= 3:
            conv = [i for i in range(nkeep)
                    if _pair_residual(cand, i, a, m) <= tol]
            raise ConvergenceFailure(
                f"Lanczos converged {len(conv)} of {want} pairs within "
                f"{k} iterations",
                converged=EigenPairSet(values=cand.values[conv],
                                       vectors=cand.vectors[:, conv]))
        new_cap = min(n, cap * 2)
        V = np.pad(V, ((0, 0), (0, new_cap - cap)))
        MV = np.pad(MV, ((0, 0), (0, new_cap - cap)))
        alphas = np.pad(alphas, (0, new_cap - cap))
        betas = np.pad(betas, (0, new_cap - cap))
        cap = new_cap
        grown += 1


def _pair_residual(pairs, i, a, m):
    x = pairs.vectors[:, i]
    lam = pairs.values[i]
    num = np.linalg.norm(a @ x - lam * (m @ x))
    return num / (lam * np.sqrt(x @ (m @ x)))


def _finalize(pairs, lam_hi, want):
    if lam_hi is None:
        return pairs
    inside = pairs.values < lam_hi
    if int(np.count_nonzero(inside)) != want:
        raise ConvergenceFailure(
            f"interval count mismatch: inertia predicts {want}, "
            f"found {int(np.count_nonzero(inside))} below {lam_hi}",
            converged=pairs)
    return EigenPairSet(values=pairs.values[inside],
                        vectors=pairs.vectors[:, inside])


def exterior_eigs(pencil, lam_tilde, tol=1e-9):
    """All exterior eigenpairs (A22, M22) with eigenvalues in (0, lam_tilde).

    The interval is open: eigenvalues equal to ``lam_tilde`` are excluded.
    Vectors are M22-orthonormal.
    """
    if lam_tilde <= 0:
        raise DimensionMismatch("lam_tilde must be positive")
    return lanczos_smallest(pencil.A22, pencil.M22,
                            interval=(0.0, float(lam_tilde)), tol=tol)


# ---------------------------------------------------------------------------
# truncated SVD
# ---------------------------------------------------------------------------

def truncated_svd(b=None, mode="dense", rank_bound=None, sigma_cutoff=0.0,
                  apply=None, apply_t=None, shape=None, oversample=10,
                  max_iter=200, conv_tol=1e-10, seed=_SVD_SEED):
    """Leading singular triplets of B, dense or matrix-free.

    Parameters
    ----------
    b : ndarray, optional
        Explicit matrix (dense mode).
    mode : {"dense", "subspace_iteration"}
        Matrix-free mode needs ``apply`` (x -> B x), ``apply_t``
        (y -> B^T y) and ``shape``; it only ever touches B through products
        of B B^T with a block of ``rank_bound + oversample`` vectors.
    rank_bound : int
        Number of triplets to target.
    sigma_cutoff : float
        Triplets with sigma below the cutoff are discarded.
    """
    if mode == "dense":
        if b is None:
            raise ValueError("dense mode needs an explicit matrix")
        b = np.asarray(b, dtype=np.float64)
        u, s, wt = np.linalg.svd(b, full_matrices=False)
        k = s.size if rank_bound is None else min(rank_bound, s.size)
        floor = s[0] * max(b.shape) * np.finfo(float).eps if s.size else 0.0
        keep = min(k, int(np.count_nonzero(
            (s >= sigma_cutoff) & (s > floor))))
        u = _fix_signs(u[:, :keep])
        # recompute w consistently with the sign-fixed u: w_i = B^T u_i / s_i
        w = (b.T @ u) / s[:keep][None, :] if keep else np.zeros((b.shape[1], 0))
        return SvdTriplet(sigma=s[:keep].copy(), u=u, w=w)

    if mode != "subspace_iteration":
        raise ValueError(f"unknown SVD mode {mode!r}")
    if apply is None or apply_t is None or shape is None:
        raise ValueError("matrix-free mode needs apply/apply_t/shape")
    rows, cols = shape
    if rank_bound is None:
        raise ValueError("matrix-free mode needs rank_bound")
    rank_bound = min(rank_bound, rows, cols)
    blk = min(rank_bound + oversample, rows, cols)
    rng = np.random.default_rng(seed)
    x, _ = np.linalg.qr(rng.standard_normal((rows, blk)))
    prev = None
    for _ in range(max_iter):
        x, _ = np.linalg.qr(apply(apply_t(x)))
        s_est = np.linalg.svd(apply_t(x), compute_uv=False)[:rank_bound]
        if prev is not None and prev.size == s_est.size:
            denom = np.maximum(s_est, np.max(s_est) * 1e-15 + 1e-300)
            if np.max(np.abs(s_est - prev) / denom) < conv_tol:
                prev = s_est
                break
        prev = s_est
    else:
        raise ConvergenceFailure(
            "subspace iteration stagnated before the singular values "
            f"settled to {conv_tol:g}", converged=prev)
    s_mat = apply_t(x).T  # (blk, cols)
    ub, s, wt = np.linalg.svd(s_mat, full_matrices=False)
    u = x @ ub
    floor = s[0] * max(rows, cols) * np.finfo(float).eps if s.size else 0.0
    k = min(rank_bound, int(np.count_nonzero(
        (s >= sigma_cutoff) & (s > floor))))
    u = _fix_signs(u[:, :k])
    w = apply_t(u) / s[:k][None, :] if k else np.zeros((cols, 0))
    return SvdTriplet(sigma=s[:k].copy(), u=u, w=w)

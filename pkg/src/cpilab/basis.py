"""Construction of the condensed-pole-interpolation reduction basis.

The exterior subspace combines the spectral projector onto exterior modes
below gamma * lam with deflated shifted-system solves at Chebyshev points;
an SVD in the A22 inner product compresses the collected columns, and the
resulting basis block is cached together with its reduced exterior Gram
blocks so that many problem versions sharing the exterior can be solved
cheaply.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import planner
from .eigensolve import (EigenPairSet, SpectralResult, _fix_signs,
                         count_below, dense_geneig, exterior_eigs,
                         lanczos_smallest)
from .errors import (AllTruncated, BasisMismatch, DimensionMismatch,
                     EmptyCoupling, FactorizationFailure, IncompleteSpectrum,
                     NearSingularShift)
from .pencil import (BlockPencil, _cholesky_upper, recycle_reduced_blocks,
                     reduce_pencil)
from .sparse import SymSparseMatrix

#: dense SVD is used while n2 * (K + N r) stays below this entry count
DENSE_B_LIMIT = 50_000_000
#: minimum admissible distance between interpolation points and exterior
#: eigenvalues, relative to lam
POLE_GUARD_REL = 1e-6
#: reduced eigenproblems at most this large are solved densely
REDUCED_DENSE_LIMIT = 1200

_MAGIC = b"CPIB"
_FORMAT_VERSION = 1


def chebyshev_points(lam, n_points):
    """Chebyshev interpolation points of (0, lam), in descending order.

    xi_i = lam/2 (1 + cos((2i-1) pi / (2N))) for i = 1..N.
    """
    if lam <= 0:
        raise DimensionMismatch("lam must be positive")
    if n_points < 1:
        raise DimensionMismatch("N must be at least 1")
    i = np.arange(1, n_points + 1, dtype=np.float64)
    return lam / 2.0 * (1.0 + np.cos((2.0 * i - 1.0)
                                     / (2.0 * n_points) * np.pi))


@dataclass
class CpiPlan:
    """Solver parameters for one reduction basis.

    ``lam`` bounds the spectral interval of interest, ``gamma > 1``
    oversamples the projector interval to gamma * lam, ``n_points`` is the
    interpolation point count, ``tol`` the SVD truncation level (0 keeps
    the numerical rank), ``alpha_bound`` the coefficient-norm estimate used
    by the truncation rule (computed on demand when None), and ``mode``
    selects dense or matrix-free basis compression.
    """

    lam: float
    gamma: float
    n_points: int
    xi: np.ndarray
    tol: float = 0.0
    alpha_bound: float = None
    mode: str = "auto"

    def __post_init__(self):
        if self.gamma <= 1.0:
            raise DimensionMismatch(f"gamma must exceed 1, got {self.gamma}")
        if self.n_points < 1:
            raise DimensionMismatch("N must be at least 1")
        if self.tol < 0:
            raise DimensionMismatch("truncation tol must be nonnegative")
        xi = np.asarray(self.xi, dtype=np.float64)
        if xi.size != self.n_points or np.unique(xi).size != xi.size:
            raise DimensionMismatch("xi must hold N distinct points")
        if np.any((xi <= 0) | (xi >= self.lam)):
            raise DimensionMismatch("xi must lie strictly inside (0, lam)")
        self.xi = xi

    @property
    def lam_tilde(self):
        return self.gamma * self.lam


def make_plan(lam, gamma, n_points, tol=0.0, alpha_bound=None, mode="auto"):
    """Convenience constructor computing the Chebyshev points."""
    return CpiPlan(lam=float(lam), gamma=float(gamma),
                   n_points=int(n_points),
                   xi=chebyshev_points(lam, n_points), tol=float(tol),
                   alpha_bound=alpha_bound, mode=mode)


@dataclass
class SpectralProjector:
    """M22-orthogonal projector onto exterior modes below lam_tilde."""

    v1: np.ndarray
    m22: sp.csr_matrix
    mu: np.ndarray

    @property
    def k(self):
        return self.v1.shape[1]

    def apply(self, x):
        if self.k == 0:
            return np.zeros_like(x)
        return self.v1 @ (self.v1.T @ (self.m22 @ x))

    def deflate(self, x):
        return x - self.apply(x)

    def todense(self):
        if self.k == 0:
            return np.zeros((self.v1.shape[0], self.v1.shape[0]))
        return self.v1 @ (self.v1.T @ self.m22.toarray())


def build_projector(ext, m22, expected_count=None):
    """Projector from an exterior eigenpair set.

    Raises
    ------
    IncompleteSpectrum
        When ``expected_count`` (typically an inertia count) disagrees with
        the number of supplied pairs.
    """
    if expected_count is not None and expected_count != len(ext):
        raise IncompleteSpectrum(
            f"inertia predicts {expected_count} exterior modes, "
            f"got {len(ext)}")
    m22 = m22.tocsr() if sp.issparse(m22) else sp.csr_matrix(m22)
    return SpectralProjector(v1=ext.vectors, m22=m22, mu=ext.values.copy())


@dataclass
class CouplingColumns:
    """Nonzero coupling columns: M21 columns first, then A21 columns."""

    p: np.ndarray
    r1: int
    r2: int
    cols_m: np.ndarray
    cols_a: np.ndarray

    @property
    def r(self):
        return self.r1 + self.r2


def coupling_columns(pencil):
    """Extract the nonzero columns of M21 and A21 as probe vectors.

    Raises
    ------
    EmptyCoupling
        For a decoupled pencil (the reduction degenerates to independent
        interior and exterior solves).
    """
    m21 = pencil.M21.tocsc()
    a21 = pencil.A21.tocsc()
    cols_m = np.flatnonzero(np.diff(m21.indptr))
    cols_a = np.flatnonzero(np.diff(a21.indptr))
    r = cols_m.size + cols_a.size
    if r == 0:
        raise EmptyCoupling("pencil has no interior/exterior coupling")
    if r == 2 * pencil.n1:
        warnings.warn("coupling blocks are fully dense: probe count capped "
                      "at 2 n1; expect no sparsity savings", stacklevel=2)
    parts = []
    if cols_m.size:
        parts.append(m21[:, cols_m].toarray())
    if cols_a.size:
        parts.append(a21[:, cols_a].toarray())
    return CouplingColumns(p=np.hstack(parts), r1=int(cols_m.size),
                           r2=int(cols_a.size), cols_m=cols_m, cols_a=cols_a)


def adjust_plan_for_poles(plan, mu, max_bumps=5):
    """Enforce the pole-distance guard, raising N when points collide.

    Interpolation points must keep a distance of at least
    ``POLE_GUARD_REL * lam`` from every exterior eigenvalue; the point
    count is incremented (at most ``max_bumps`` times) until that holds.
    """
    mu = np.asarray(mu, dtype=np.float64)
    guard = POLE_GUARD_REL * plan.lam
    for extra in range(max_bumps + 1):
        n_try = plan.n_points + extra
        xi = chebyshev_points(plan.lam, n_try)
        if mu.size == 0 or np.min(np.abs(xi[:, None] - mu[None, :])) >= guard:
            if extra == 0:
                return plan
            return dataclasses.replace(plan, n_points=n_try, xi=xi)
    dist = np.abs(xi[:, None] - mu[None, :])
    bad = np.argwhere(dist < guard)
    pairs = [(float(xi[i]), float(mu[j])) for i, j in bad]
    raise NearSingularShift(
        f"interpolation points keep colliding with exterior eigenvalues "
        f"after {max_bumps} increments of N", pairs=pairs)


def sample_vectors(pencil, projector, xi, coupling, rel_residual=1e-10,
                   lam=None):
    """Deflated shifted-system solves (I - P)(A22 - xi_i M22)^{-1} p_j.

    One sparse factorisation per interpolation point, reused over all
    probe columns; columns are returned point-major within each probe,
    matching the basis layout [q_11 .. q_N1, ..., q_1r .. q_Nr].
    """
    mu = projector.mu
    guard = POLE_GUARD_REL * float(lam if lam is not None else
                                   (np.max(xi) if len(xi) else 0.0))
    if mu.size and len(xi):
        dist = np.abs(np.asarray(xi)[:, None] - mu[None, :])
        if np.min(dist) < guard:
            bad = np.argwhere(dist < guard)
            raise NearSingularShift(
                "interpolation point too close to an exterior eigenvalue",
                pairs=[(float(xi[i]), float(mu[j])) for i, j in bad])
    a22 = pencil.A22.tocsc()
    m22 = pencil.M22.tocsc()
    p = coupling.p
    n2, r = p.shape
    n_points = len(xi)
    q_all = np.empty((n2, n_points * r))
    p_norms = np.linalg.norm(p, axis=0)
    for i, x_i in enumerate(xi):
        shifted = (a22 - x_i * m22).tocsc()
        try:
            lu = spla.splu(shifted)
        except RuntimeError as exc:
            raise FactorizationFailure(
                f"factorisation at xi={x_i} failed: {exc}") from exc
        q = lu.solve(p)
        res = np.linalg.norm(shifted @ q - p, axis=0)
        bad = res > rel_residual * p_norms
        if np.any(bad):
            q[:, bad] += lu.solve(p[:, bad] - shifted @ q[:, bad])
            res = np.linalg.norm(shifted @ q - p, axis=0)
            if np.any(res > rel_residual * p_norms):
                raise FactorizationFailure(
                    f"shifted solve at xi={x_i} reached relative residual "
                    f"{np.max(res / p_norms):.2e}")
        q_all[:, i::n_points] = projector.deflate(q)
    return q_all


def assemble_B(v1, samples):
    """Stack projector modes and deflated samples into the basis matrix."""
    if v1.shape[0] != samples.shape[0]:
        raise DimensionMismatch("projector modes and samples disagree in n2")
    return np.hstack([v1, samples])


class MatrixFreeB:
    """Implicit basis matrix: stored factors, samples recomputed on demand.

    Memory-constrained variant: only the shifted factorisations, the probe
    block, and the projector are kept; every application of B or B^T
    replays the solves column by column.
    """

    def __init__(self, pencil, projector, xi, coupling):
        a22 = pencil.A22.tocsc()
        m22 = pencil.M22.tocsc()
        self.projector = projector
        self.p = coupling.p
        self.lus = [spla.splu((a22 - x_i * m22).tocsc()) for x_i in xi]
        self.n_points = len(xi)
        self.shape = (pencil.n2,
                      projector.k + self.n_points * coupling.p.shape[1])

    def _sample_block(self, j):
        q = np.column_stack([lu.solve(self.p[:, j]) for lu in self.lus])
        return self.projector.deflate(q)

    def apply(self, c):
        c = np.atleast_2d(c.T).T
        k = self.projector.k
        out = self.projector.v1 @ c[:k]
        r = self.p.shape[1]
        for j in range(r):
            blk = self._sample_block(j)
            out += blk @ c[k + j * self.n_points:k + (j + 1) * self.n_points]
        return out

    def apply_t(self, y):
        y = np.atleast_2d(y.T).T
        k = self.projector.k
        parts = [self.projector.v1.T @ y]
        for j in range(self.p.shape[1]):
            parts.append(self._sample_block(j).T @ y)
        return np.vstack(parts)


@dataclass
class ReducedBasis:
    """Compressed exterior basis plus everything needed to recycle it.

    ``q22`` has A22-orthonormal columns; ``reduced_a22``/``reduced_m22``
    are the cached exterior Gram blocks reused across problem versions;
    ``sigmas`` is the full singular value spectrum of the weighted basis
    matrix, of which the first ``k_c`` directions were retained.
    """

    q22: np.ndarray
    sigmas: np.ndarray
    k_c: int
    k_exterior: int
    reduced_a22: np.ndarray
    reduced_m22: np.ndarray
    plan: CpiPlan
    ext_a: SymSparseMatrix = None
    ext_m: SymSparseMatrix = None

    @property
    def n2(self):
        return self.q22.shape[0]

    @property
    def sigmas_retained(self):
        return self.sigmas[:self.k_c]

    def check_exterior(self, pencil, tol=1e-12):
        """Raise BasisMismatch unless the pencil's exterior matches ours."""
        if self.ext_a is None or self.ext_m is None:
            return
        if pencil.n2 != self.n2:
            raise BasisMismatch(
                f"pencil exterior dimension {pencil.n2} does not match "
                f"basis dimension {self.n2}")
        for name, mine, theirs in (("A22", self.ext_a, pencil.A22),
                                   ("M22", self.ext_m, pencil.M22)):
            other = SymSparseMatrix.from_scipy(theirs)
            scale = np.max(np.abs(mine.data)) if mine.nnz else 1.0
            if not mine.same_values(other, tol=tol * scale):
                raise BasisMismatch(
                    f"exterior block {name} differs from the basis "
                    f"beyond {tol:g} (relative)")

    # -- serialisation -----------------------------------------------------
    def save(self, path):
        """Write the basis to a binary container (deterministic bytes)."""
        header = {
            "n2": int(self.n2),
            "k_c": int(self.k_c),
            "k_exterior": int(self.k_exterior),
            "plan": {
                "lam": self.plan.lam,
                "gamma": self.plan.gamma,
                "n_points": self.plan.n_points,
                "tol": self.plan.tol,
                "alpha_bound": self.plan.alpha_bound,
                "mode": self.plan.mode,
            },
        }
        hbytes = json.dumps(header, sort_keys=True).encode()
        arrays = [self.q22, self.sigmas, self.reduced_a22, self.reduced_m22]
        for mat in (self.ext_a, self.ext_m):
            arrays.extend([np.array([mat.n], dtype=np.int64), mat.row,
                           mat.col, mat.data])
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", _FORMAT_VERSION))
            fh.write(struct.pack("<Q", len(hbytes)))
            fh.write(hbytes)
            for arr in arrays:
                np.lib.format.write_array(fh, np.ascontiguousarray(arr),
                                          allow_pickle=False)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != _MAGIC:
                raise BasisMismatch(f"not a basis container (magic {magic!r})")
            (version,) = struct.unpack("<I", fh.read(4))
            if version != _FORMAT_VERSION:
                raise BasisMismatch(f"unsupported container version {version}")
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen).decode())
            q22 = np.lib.format.read_array(fh, allow_pickle=False)
            sigmas = np.lib.format.read_array(fh, allow_pickle=False)
            red_a = np.lib.format.read_array(fh, allow_pickle=False)
            red_m = np.lib.format.read_array(fh, allow_pickle=False)
            mats = []
            for _ in range(2):
                n = int(np.lib.format.read_array(fh, allow_pickle=False)[0])
                row = np.lib.format.read_array(fh, allow_pickle=False)
                col = np.lib.format.read_array(fh, allow_pickle=False)
                data = np.lib.format.read_array(fh, allow_pickle=False)
                mats.append(SymSparseMatrix(n=n, row=row, col=col, data=data))
        p = header["plan"]
        plan = make_plan(p["lam"], p["gamma"], p["n_points"], p["tol"],
                         p["alpha_bound"], p["mode"])
        return cls(q22=q22, sigmas=sigmas, k_c=int(header["k_c"]),
                   k_exterior=int(header["k_exterior"]), reduced_a22=red_a,
                   reduced_m22=red_m, plan=plan, ext_a=mats[0],
                   ext_m=mats[1])


def _sigma_rank_floor(sigmas, n_rows, n_cols):
    if sigmas.size == 0:
        return 0.0
    return sigmas[0] * max(n_rows, n_cols) * np.finfo(float).eps


def _cutoff_index(sigmas, alpha_bound, tol, floor):
    """Truncation rule: keep i while sigma_i^2 alpha^2 > tol (and above the
    numerical-rank floor).  sigma is non-increasing, so the kept set is a
    prefix and K_c is the index of the first violation."""
    keep = (sigmas ** 2 * alpha_bound ** 2 > tol) & (sigmas > floor)
    if keep.size == 0:
        return 0
    if keep.all():
        return int(keep.size)
    return int(np.argmin(keep))


def truncate_basis(b_mat, a22, m22, alpha_bound, tol, plan=None,
                   k_exterior=0, ext_a=None, ext_m=None, mode="auto",
                   rank_bound=None):
    """SVD compression of the basis matrix in the A22 inner product.

    Computes the singular values of R B (R the Cholesky factor of A22),
    keeps the K_c leading directions with ``sigma_i^2 alpha_bound^2 >
    tol``, and returns the A22-orthonormal basis block together with its
    cached reduced exterior blocks.

    Raises
    ------
    AllTruncated
        When even the leading singular direction fails the rule.
    """
    if alpha_bound is None or alpha_bound < 1.0:
        raise DimensionMismatch("alpha_bound must be at least 1")
    a22 = a22.tocsr() if sp.issparse(a22) else sp.csr_matrix(a22)
    m22 = m22.tocsr() if sp.issparse(m22) else sp.csr_matrix(m22)
    n2 = a22.shape[0]

    if isinstance(b_mat, MatrixFreeB):
        n_cols = b_mat.shape[1]
        use_dense = False
    else:
        b_mat = np.asarray(b_mat, dtype=np.float64)
        n_cols = b_mat.shape[1]
        use_dense = (mode == "dense") or (
            mode == "auto" and n2 * n_cols <= DENSE_B_LIMIT)
    if mode == "matrixfree":
        use_dense = False
    if n_cols == 0:
        raise EmptyCoupling("basis matrix has no columns")

    if use_dense:
        r_fac = _cholesky_upper(a22.toarray(), block="A22")
        rb = r_fac @ b_mat
        u, sigmas, _ = np.linalg.svd(rb, full_matrices=False)
        floor = _sigma_rank_floor(sigmas, n2, n_cols)
        k_c = _cutoff_index(sigmas, alpha_bound, tol, floor)
        if k_c == 0:
            raise AllTruncated(
                "truncation rule discarded every direction; lower tol",
                sigmas=sigmas)
        u = _fix_signs(u[:, :k_c])
        q22 = sla.solve_triangular(r_fac, u, lower=False)
    else:
        sigmas, q22 = _a22_subspace_iteration(
            b_mat, a22, rank_bound=rank_bound or min(n_cols, 256))
        floor = _sigma_rank_floor(sigmas, n2, n_cols)
        k_c = _cutoff_index(sigmas, alpha_bound, tol, floor)
        if k_c == 0:
            raise AllTruncated(
                "truncation rule discarded every direction; lower tol",
                sigmas=sigmas)
        q22 = _fix_signs(q22[:, :k_c])

    red_a, red_m = exterior_gram(a22, m22, q22)
    return ReducedBasis(q22=q22, sigmas=sigmas, k_c=k_c,
                        k_exterior=k_exterior, reduced_a22=red_a,
                        reduced_m22=red_m, plan=plan, ext_a=ext_a,
                        ext_m=ext_m)


def _a22_subspace_iteration(b_op, a22, rank_bound, oversample=10,
                            max_iter=200, conv_tol=1e-10, seed=424242):
    """Leading A22-weighted singular directions without factorising A22.

    Subspace iteration on B B^T A22, self-adjoint in the A22 inner
    product; the Ritz values equal the squared singular values of R B and
    the Ritz vectors are the A22-orthonormal basis columns directly.
    """
    if isinstance(b_op, MatrixFreeB):
        apply_b = b_op.apply
        apply_bt = b_op.apply_t
        n2, n_cols = b_op.shape
    else:
        apply_b = lambda c: b_op @ c
        apply_bt = lambda y: b_op.T @ y
        n2, n_cols = b_op.shape
    blk = min(rank_bound + oversample, n_cols, n2)
    rng = np.random.default_rng(seed)

    def orthonormalize(y):
        g = y.T @ (a22 @ y)
        g = (g + g.T) * 0.5
        w, v = sla.eigh(g)
        keep = w > max(w[-1], 0.0) * 1e-14 + 1e-300
        return y @ (v[:, keep] / np.sqrt(w[keep])[None, :])

    x = orthonormalize(rng.standard_normal((n2, blk)))
    prev = None
    for _ in range(max_iter):
        x = orthonormalize(apply_b(apply_bt(a22 @ x)))
        c = apply_bt(a22 @ x)
        h = c.T @ c
        s2 = np.sort(sla.eigvalsh((h + h.T) * 0.5))[::-1][:rank_bound]
        sig = np.sqrt(np.maximum(s2, 0.0))
        if prev is not None and prev.size == sig.size:
            denom = np.maximum(sig, np.max(sig) * 1e-15 + 1e-300)
            if np.max(np.abs(sig - prev) / denom) < conv_tol:
                break
        prev = sig
    c = apply_bt(a22 @ x)
    h = (c.T @ c + (c.T @ c).T) * 0.5
    w, v = sla.eigh(h)
    order = np.argsort(w)[::-1]
    sig = np.sqrt(np.maximum(w[order], 0.0))
    q = x @ v[:, order]
    return sig, q


def default_alpha_bound(plan, pencil=None, m_inv_norm=None, h=None, d=None,
                        mesh_constant=1.0):
    """Coefficient-norm estimate used by the truncation rule.

    Uses lam as the worst-case eigenvalue.  ``||M^{-1}||`` comes from the
    mesh estimate ``mesh_constant * h^-d`` when mesh data is given, else
    from the smallest mass eigenvalue (inverse power iteration).
    """
    if plan.alpha_bound is not None:
        return plan.alpha_bound
    if m_inv_norm is None:
        if h is not None and d is not None:
            m_inv_norm = mesh_constant * h ** (-d)
        elif pencil is not None:
            m = pencil.M.tocsr()
            eye = sp.identity(m.shape[0], format="csr")
            smallest = lanczos_smallest(m, eye, count=1, tol=1e-8)
            m_inv_norm = 1.0 / smallest.values[0]
        else:
            raise DimensionMismatch(
                "alpha bound needs mesh data, a pencil, or ||M^-1||")
    return planner.alpha_bound(plan.n_points, plan.lam, m_inv_norm)


def build_reduced_basis(pencil, plan, h=None, d=None, mesh_constant=1.0,
                        timings=None):
    """Full basis construction: exterior modes, samples, SVD truncation."""
    timings = timings if timings is not None else {}
    t0 = time.perf_counter()
    lam_tilde = plan.lam_tilde
    ext = exterior_eigs(pencil, lam_tilde)
    expected = count_below(pencil, lam_tilde)
    projector = build_projector(ext, pencil.M22, expected_count=expected)
    timings["exterior"] = time.perf_counter() - t0

    plan = adjust_plan_for_poles(plan, ext.values)

    t0 = time.perf_counter()
    try:
        coupling = coupling_columns(pencil)
    except EmptyCoupling:
        if projector.k == 0:
            raise
        coupling = None
    if coupling is not None:
        n_cols = projector.k + plan.n_points * coupling.r
        use_dense = plan.mode == "dense" or (
            plan.mode == "auto" and pencil.n2 * n_cols <= DENSE_B_LIMIT)
        if use_dense:
            samples = sample_vectors(pencil, projector, plan.xi, coupling)
            b_mat = assemble_B(projector.v1, samples)
        else:
            b_mat = MatrixFreeB(pencil, projector, plan.xi, coupling)
    else:
        b_mat = projector.v1
    timings["samples"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    alpha = default_alpha_bound(plan, pencil=pencil, h=h, d=d,
                                mesh_constant=mesh_constant)
    plan = dataclasses.replace(plan, alpha_bound=alpha)
    basis = truncate_basis(
        b_mat, pencil.A22, pencil.M22, alpha, plan.tol, plan=plan,
        k_exterior=projector.k,
        ext_a=SymSparseMatrix.from_scipy(pencil.A22),
        ext_m=SymSparseMatrix.from_scipy(pencil.M22),
        mode="dense" if not isinstance(b_mat, MatrixFreeB) else "matrixfree")
    timings["svd"] = time.perf_counter() - t0
    return basis


@dataclass
class MethodOperator:
    """Block-diagonal subspace map: identity interior, basis exterior."""

    n1: int
    q22: np.ndarray

    @property
    def reduced_dim(self):
        return self.n1 + self.q22.shape[1]

    @property
    def full_dim(self):
        return self.n1 + self.q22.shape[0]

    def prolong(self, xt):
        xt = np.asarray(xt)
        one_d = xt.ndim == 1
        if one_d:
            xt = xt[:, None]
        out = np.vstack([xt[:self.n1], self.q22 @ xt[self.n1:]])
        return out[:, 0] if one_d else out


def build_method_matrix(basis, n1):
    """Expose the reduction as an operator; never materialised at full n."""
    return MethodOperator(n1=int(n1), q22=basis.q22)


def solve_pencil_interval(a, m, lam, tol=1e-10,
                          dense_limit=REDUCED_DENSE_LIMIT):
    """All eigenpairs of (a, m) in (0, lam): dense below the limit, else
    shift-invert Lanczos with inertia-certified completeness."""
    n = a.shape[0] if hasattr(a, "shape") else a.n
    if n <= dense_limit:
        pairs = dense_geneig(a, m, limit=dense_limit)
        inside = (pairs.values > 0) & (pairs.values < lam)
        return EigenPairSet(values=pairs.values[inside],
                            vectors=pairs.vectors[:, inside])
    return lanczos_smallest(a, m, interval=(0.0, lam), tol=tol)


def cpi_solve(pencil, plan, basis=None, h=None, d=None, solver_tol=1e-10,
              dense_limit=REDUCED_DENSE_LIMIT):
    """Eigenvalues of the pencil in (0, lam) through the reduction basis.

    Builds the basis when none is given; otherwise verifies the pencil
    shares the basis exterior and recycles the cached reduced blocks.
    Eigenvectors are mapped back to full length and M-normalised;
    residuals are measured against the full pencil.
    """
    timings = {}
    if basis is None:
        basis = build_reduced_basis(pencil, plan, h=h, d=d, timings=timings)
    else:
        basis.check_exterior(pencil)
    plan_used = basis.plan if basis.plan is not None else plan

    t0 = time.perf_counter()
    reduced = recycle_reduced_blocks(basis, pencil.A11, pencil.M11,
                                     pencil.A12, pencil.M12)
    timings["reduce"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    pairs = solve_pencil_interval(reduced.A.tocsr(), reduced.M.tocsr(),
                                  plan_used.lam, tol=solver_tol,
                                  dense_limit=dense_limit)
    timings["solve"] = time.perf_counter() - t0

    n1 = pencil.n1
    xt = pairs.vectors
    x_full = np.vstack([xt[:n1], basis.q22 @ xt[n1:]]) if len(pairs) \
        else np.zeros((pencil.n, 0))
    a_csr = pencil.A.tocsr()
    m_csr = pencil.M.tocsr()
    if len(pairs):
        mx = m_csr @ x_full
        nrm = np.sqrt(np.einsum("ij,ij->j", x_full, mx))
        x_full = _fix_signs(x_full / nrm)
        mx = m_csr @ x_full
        res = a_csr @ x_full - mx * pairs.values[None, :]
        residuals = np.linalg.norm(res, axis=0) / (
            pairs.values * np.sqrt(np.einsum("ij,ij->j", x_full, mx)))
    else:
        residuals = np.zeros(0)

    b0 = planner.theoretical_bound(plan_used.lam, plan_used.gamma,
                                   plan_used.n_points)
    bound = b0 if plan_used.tol == 0.0 else 2.0 * b0 + 2.0 * plan_used.tol
    return SpectralResult(
        values=pairs.values, vectors=x_full, residuals=residuals,
        bound=bound, bound_untruncated=b0,
        info={"k_exterior": basis.k_exterior, "k_c": basis.k_c,
              "reduced_dim": n1 + basis.k_c, "timings": timings,
              "plan": plan_used})

"""Closed-form planning: tolerance and cost models, parameter optimisation.

Everything here is scalar analysis supporting the reduction pipeline: the
normalised tolerance governing the a-priori error bound, the Weyl estimate
of exterior eigenvalue counts, cost-optimal selection of the oversampling
factor gamma and interpolation count N, the Lebesgue constant of the
Chebyshev nodes, the mass-coupling constant C_M, and the coefficient bounds
entering the SVD truncation rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .errors import (DomainError, NoPositiveElement, NoRoot, OutOfRange,
                     PoleCollision, UnsupportedDimension)

LEBESGUE_GRID = 100_000
GAMMA_BRACKET = (1.0 + 1e-6, 64.0)


@dataclass
class ProblemProfile:
    """A-priori description of a problem family for parameter planning.

    ``d`` is the spatial dimension, ``vol_omega2`` the exterior domain
    volume, ``n_gamma`` the interface coupling rank, ``lam`` the upper end
    of the spectral interval of interest, ``r`` the cost exponent of the
    Schur-complement factorisation, and ``eta`` the normalised tolerance
    target.
    """

    d: int
    vol_omega2: float
    n_gamma: int
    lam: float
    r: float = 2.0
    eta: float = 1e-6

    def __post_init__(self):
        if self.d not in (2, 3):
            raise UnsupportedDimension(f"d must be 2 or 3, got {self.d}")
        if min(self.vol_omega2, self.n_gamma, self.lam, self.eta) <= 0:
            raise DomainError("profile parameters must be positive")
        if not (1.0 < self.r < 3.0):
            raise DomainError(f"cost exponent r={self.r} outside (1, 3)")


@dataclass
class ErrorBudget:
    """Planner output: chosen parameters and the bounds they imply."""

    gamma: float
    n_points: int
    ntol_value: float
    bound_value: float
    c_m: float = 1.0
    lebesgue: float = None
    alpha_bound: float = None


def ntol(gamma, n_points):
    """Normalised tolerance gamma^3 (1/(4(gamma-1)))^(2N+2)."""
    if gamma <= 1.0:
        raise DomainError(f"gamma must exceed 1, got {gamma}")
    if n_points < 0:
        raise DomainError("N must be nonnegative")
    return gamma ** 3 * (1.0 / (4.0 * (gamma - 1.0))) ** (2.0 * n_points + 2.0)


def ball_volume(d):
    if d == 2:
        return math.pi
    if d == 3:
        return 4.0 * math.pi / 3.0
    raise UnsupportedDimension(f"d must be 2 or 3, got {d}")


def weyl_count(d, vol_omega2, l):
    """Weyl-law estimate of the eigenvalue count below ``l``."""
    if vol_omega2 <= 0 or l <= 0:
        raise DomainError("volume and threshold must be positive")
    c_d = ball_volume(d) / (2.0 * math.pi) ** d
    return c_d * vol_omega2 * l ** (d / 2.0)


def cost_model(k_hat, n_gamma, n_points, r):
    """(K_hat + n_gamma N)^r, the Schur factorisation cost proxy."""
    return (k_hat + n_gamma * n_points) ** r


def cost(profile, gamma, n_points):
    """Estimated per-version cost for parameters (gamma, N)."""
    if gamma <= 1.0:
        raise DomainError(f"gamma must exceed 1, got {gamma}")
    if n_points < 1:
        raise DomainError("N must be at least 1")
    k_hat = weyl_count(profile.d, profile.vol_omega2, gamma * profile.lam)
    return cost_model(k_hat, profile.n_gamma, n_points, profile.r)


def _n_of_gamma(profile, gamma):
    """Cost-optimal real-valued N as a function of gamma."""
    c_d = ball_volume(profile.d) / (2.0 * math.pi) ** profile.d
    lead = (profile.d * c_d * profile.lam ** (profile.d / 2.0)
            * profile.vol_omega2) / (2.0 * profile.n_gamma)
    return lead * gamma ** (profile.d / 2.0 - 1.0) * (gamma - 1.0) \
        * math.log(4.0 * (gamma - 1.0)) - 2.0


def _ntol_real(gamma, n_real):
    # real-valued N variant used during root finding
    return gamma ** 3 * (1.0 / (4.0 * (gamma - 1.0))) ** (2.0 * n_real + 2.0)


def optimize_parameters(profile):
    """Cost-optimal (gamma, N) meeting the normalised tolerance target.

    Solves the coupled optimality relation N(gamma) together with the
    constraint ntol(gamma, N(gamma)) = eta by locating a sign change of the
    constraint residual on a log grid over the gamma bracket and bisecting
    it to 1e-10.  N is rounded up afterwards, which can only tighten the
    tolerance.

    Returns
    -------
    ErrorBudget
        With ``ntol_value <= eta`` guaranteed.

    Raises
    ------
    NoRoot
        If the target is unreachable inside the gamma bracket.
    """
    eta = profile.eta
    lo, hi = GAMMA_BRACKET

    def f(gamma):
        val = _ntol_real(gamma, _n_of_gamma(profile, gamma))
        return math.log(val) - math.log(eta) if val > 0 else -math.inf

    grid = np.geomspace(lo, hi, 2048)
    fvals = np.array([f(g) for g in grid])
    sign_change = None
    for i in range(len(grid) - 1):
        if fvals[i] > 0.0 >= fvals[i + 1]:
            sign_change = (grid[i], grid[i + 1])
            break
    if sign_change is None:
        raise NoRoot(
            f"target eta={eta:g} unreachable for gamma in "
            f"[{lo:g}, {hi:g}] (residual {fvals[0]:+.3e} at left end, "
            f"{fvals[-1]:+.3e} at right end)", bracket=(lo, hi))
    a, b = sign_change
    while b - a > 1e-10:
        mid = 0.5 * (a + b)
        if f(mid) > 0.0:
            a = mid
        else:
            b = mid
    gamma_star = 0.5 * (a + b)
    n_star = max(1, math.ceil(_n_of_gamma(profile, gamma_star) - 1e-12))
    val = ntol(gamma_star, n_star)
    if val > eta:
        raise NoRoot(
            f"rounded N={n_star} misses the target "
            f"(ntol={val:g} > eta={eta:g})", bracket=(lo, hi))
    return ErrorBudget(gamma=gamma_star, n_points=n_star, ntol_value=val,
                       bound_value=theoretical_bound(profile.lam, gamma_star,
                                                     n_star))


def nomogram_approx(eta_tilde):
    """Graphical-procedure approximation for d = 2.

    Solves 2 (1/(4(gamma-1)))^{Ntilde(gamma)} = eta_tilde with
    Ntilde(gamma) = (gamma-1) ln 4(gamma-1) for gamma in [2, 5] by
    bisection, returning (gamma, Ntilde).  The caller recovers the point
    count as N = lam / (2 pi n_gamma) * Ntilde, rounded up.
    """
    if not (0.0 < eta_tilde < 1.0):
        raise DomainError("eta_tilde must lie in (0, 1)")

    def g(gamma):
        n_t = (gamma - 1.0) * math.log(4.0 * (gamma - 1.0))
        return 2.0 * math.exp(-n_t * math.log(4.0 * (gamma - 1.0)))

    lo, hi = 2.0, 5.0
    if not (g(hi) <= eta_tilde <= g(lo)):
        raise OutOfRange(
            f"eta_tilde={eta_tilde:g} outside the solvable band "
            f"[{g(hi):.3e}, {g(lo):.3e}] for gamma in [2, 5]")
    while hi - lo > 1e-12:
        mid = 0.5 * (lo + hi)
        if g(mid) > eta_tilde:
            lo = mid
        else:
            hi = mid
    gamma = 0.5 * (lo + hi)
    return gamma, (gamma - 1.0) * math.log(4.0 * (gamma - 1.0))


def _chebyshev_unit(n_points):
    i = np.arange(1, n_points + 1, dtype=np.float64)
    return 0.5 * (1.0 + np.cos((2.0 * i - 1.0) / (2.0 * n_points) * np.pi))


def lebesgue_constant(n_points, grid_size=LEBESGUE_GRID):
    """Lebesgue constant of the Chebyshev nodes by grid maximisation.

    The value is scale invariant, so nodes and grid live on (0, 1); the
    grid uses midpoints, keeping the interval open.
    """
    if n_points < 1:
        raise DomainError("N must be at least 1")
    if n_points == 1:
        return 1.0
    nodes = _chebyshev_unit(n_points)
    grid = (np.arange(grid_size, dtype=np.float64) + 0.5) / grid_size
    return float(_kernels.lebesgue_max(nodes, grid))


def constant_CM(m, n1):
    """Sharp constant C_M with C_M x^T M x >= ||x_2||^2_{M22}.

    Computed from the spectrum of I - M22^{-1/2} M12^T M11^{-1} M12
    M22^{-1/2}; the reciprocal of its smallest positive element.  Dense and
    diagnostic only.
    """
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    if not (0 < n1 < n):
        raise DomainError(f"split index n1={n1} outside (0, {n})")
    m11 = m[:n1, :n1]
    m12 = m[:n1, n1:]
    m22 = m[n1:, n1:]
    w22, v22 = sla.eigh(m22)
    if np.min(w22) <= 0:
        raise NoPositiveElement("M22 not positive definite")
    m22_isqrt = (v22 / np.sqrt(w22)[None, :]) @ v22.T
    core = m12 @ m22_isqrt
    s = core.T @ sla.solve(m11, core, assume_a="pos")
    spec = sla.eigvalsh(np.eye(n - n1) - 0.5 * (s + s.T))
    positive = spec[spec > 0.0]
    if positive.size == 0:
        raise NoPositiveElement(
            "spectrum has no positive element; M cannot be SPD")
    return float(1.0 / np.min(positive))


def theoretical_bound(lam, gamma, n_points, c_m=1.0, c_lambda=1.0):
    """A-priori relative eigenvalue error bound of the interpolation basis.

    ``c_m`` and ``c_lambda`` default to 1, the practical choice used in all
    experiments; both stay exposed as knobs.
    """
    if gamma <= 1.0:
        raise DomainError(f"gamma must exceed 1, got {gamma}")
    return (c_m * c_lambda * lam * (4.0 * gamma) ** 3
            * (1.0 / (4.0 * (gamma - 1.0))) ** (2.0 * n_points + 2.0))


def alpha_bound(n_points, lam, m_inv_norm):
    """Upper estimate of the coefficient norm ||alpha|| for truncation.

    sqrt(1 + Lambda_N^2 (1 + lam^2) ||M^{-1}||) with the Lebesgue constant
    Lambda_N of the Chebyshev nodes.
    """
    if lam < 0 or m_inv_norm <= 0:
        raise DomainError("lam must be nonnegative and ||M^-1|| positive")
    lcon = lebesgue_constant(n_points)
    return math.sqrt(1.0 + lcon ** 2 * (1.0 + lam ** 2) * m_inv_norm)


def lagrange_basis(xi, t):
    """Values of the Lagrange basis polynomials for nodes ``xi`` at ``t``."""
    xi = np.asarray(xi, dtype=np.float64)
    n = xi.size
    out = np.ones(n)
    for j in range(n):
        for i in range(n):
            if i != j:
                out[j] *= (t - xi[i]) / (xi[j] - xi[i])
    return out


def lagrange_error_coeffs(mu, xi, lam):
    """Interpolation error coefficients of the pole functions 1/(mu_k - .).

    c_k(lam) = 1/(mu_k - lam) - sum_j l_j(lam) / (mu_k - xi_j); diagnostic
    for a-posteriori study of the error bound's sharpness.
    """
    mu = np.asarray(mu, dtype=np.float64)
    xi = np.asarray(xi, dtype=np.float64)
    for val, what in ((lam, "lam"), *((x, "xi") for x in xi)):
        gap = np.min(np.abs(mu - val)) if mu.size else np.inf
        if gap == 0.0:
            raise PoleCollision(f"{what}={val} coincides with a pole")
    ell = lagrange_basis(xi, lam)
    coeffs = np.empty(mu.size)
    for k, mk in enumerate(mu):
        coeffs[k] = 1.0 / (mk - lam) - np.sum(ell / (mk - xi))
    return coeffs


def lagrange_coeff_bound(lam_max, n_points, mu_k):
    """Closed-form envelope for |c_k| when mu_k lies above the interval."""
    if mu_k <= lam_max:
        raise DomainError("bound requires mu_k > lam_max")
    return lam_max ** n_points / (2.0 ** (2 * n_points - 1)
                                  * (mu_k - lam_max) ** (n_points + 1))

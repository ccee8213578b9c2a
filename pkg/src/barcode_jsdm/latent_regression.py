"""Probit regression of factor presence with site-level GP intercepts.

Presence of factor ``l > 0`` in sample ``i`` has probability
``Phi_N(x_i @ beta_l + xi_l[site_i])`` where ``xi_l ~ GP(0, K)``. Updates use
Albert-Chib augmentation and a joint Gaussian draw of ``(beta_l, xi_l)``.
"""

from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist, squareform
from scipy.special import log_ndtr

from .distributions import _nb_trunc_norm

__all__ = [
    "SiteGeometry",
    "GPKernel",
    "RegressionState",
    "ProbitLayer",
    "build_kernel",
    "update_probit_layer",
    "presence_logprob",
]

# exp(-3) ~= 0.0498: the exponential kernel reaches 5% correlation at 3 lengthscales
EFFECTIVE_RANGE_FACTOR = 3.0


class FactorizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SiteGeometry:
    coords: np.ndarray
    site_of: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError("coords must be an (m, 2) array")
        site_of = np.asarray(self.site_of, dtype=np.int64)
        if site_of.size and (site_of.min() < 0 or site_of.max() >= coords.shape[0]):
            raise ValueError("sample references an unknown site")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "site_of", site_of)

    @property
    def m(self):
        return self.coords.shape[0]

    @property
    def dist(self):
        if self.m < 2:
            return np.zeros((self.m, self.m))
        return squareform(pdist(self.coords))

    def incidence(self):
        """Dense ``n x m`` sample-site incidence matrix."""
        A = np.zeros((self.site_of.size, self.m))
        A[np.arange(self.site_of.size), self.site_of] = 1.0
        return A


@dataclass(frozen=True)
class GPKernel:
    lengthscale: float
    variance: float
    K: np.ndarray
    chol: np.ndarray


def build_kernel(geometry, variance=1.0, jitter=1e-8):
    """Exponential kernel whose 5%-correlation range is the 5% distance quantile."""
    if not variance > 0:
        raise ValueError("kernel variance must be positive")
    m = geometry.m
    if m == 1:
        K = np.array([[variance + jitter]])
        return GPKernel(np.inf, variance, K, np.sqrt(K))
    if m < 2:
        raise ValueError("need at least one site")
    d = pdist(geometry.coords)
    if not np.any(d > 0):
        raise ValueError("need at least two distinct sites")
    q05 = np.quantile(d, 0.05)
    if q05 <= 0:
        q05 = d[d > 0].min()
    ell = q05 / EFFECTIVE_RANGE_FACTOR
    K = variance * np.exp(-squareform(d) / ell)
    K[np.diag_indices(m)] += jitter
    chol = linalg.cholesky(K, lower=True)
    return GPKernel(float(ell), float(variance), K, chol)


@dataclass
class RegressionState:
    B: np.ndarray      # q x L
    Xi: np.ndarray     # m x L
    Zaug: np.ndarray   # n x L

    def eta(self, X, site_of):
        return X @ self.B + self.Xi[site_of]


def presence_logprob(eta):
    """``(log Pr(c=1), log Pr(c=0))`` under the probit link."""
    return log_ndtr(eta), log_ndtr(-eta)


@nb.njit(cache=True)
def _draw_zaug(eta_col, c_col, out, rng):
    for i in range(eta_col.shape[0]):
        out[i] = _nb_trunc_norm(eta_col[i], c_col[i] != 0, rng)


class ProbitLayer:
    """Precomputed Gaussian conditional for ``(beta_l, xi_l)``.

    The posterior precision ``blockdiag(I / sigma0_sq, K^-1) + W.T @ W`` with
    ``W = [X, A]`` does not depend on the latent data, so it is factorized
    once per run.
    """

    def __init__(self, X, site_of, sigma0_sq, kernel=None, jitter=1e-8):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.site_of = np.asarray(site_of, dtype=np.int64)
        self.kernel = kernel
        self.q = self.X.shape[1]
        self.m = kernel.K.shape[0] if kernel is not None else 0
        self.sigma0_sq = float(sigma0_sq)
        self.chol = self._factorize(jitter)

    @property
    def spatial(self):
        return self.kernel is not None

    def precision(self, jitter=0.0):
        q, m = self.q, self.m
        Q = np.zeros((q + m, q + m))
        Q[:q, :q] = self.X.T @ self.X + np.eye(q) / self.sigma0_sq
        if m:
            A = np.zeros((self.X.shape[0], m))
            A[np.arange(self.X.shape[0]), self.site_of] = 1.0
            Kinv = linalg.cho_solve((self.kernel.chol, True), np.eye(m))
            Q[:q, q:] = self.X.T @ A
            Q[q:, :q] = Q[:q, q:].T
            Q[q:, q:] = A.T @ A + 0.5 * (Kinv + Kinv.T)
        Q[np.diag_indices(q + m)] += jitter
        return Q

    def _factorize(self, jitter):
        try:
            return linalg.cholesky(self.precision(), lower=True)
        except linalg.LinAlgError:
            pass
        try:
            Q = self.precision()
            return linalg.cholesky(Q + jitter * np.trace(Q) / Q.shape[0] * np.eye(Q.shape[0]), lower=True)
        except linalg.LinAlgError as exc:
            raise FactorizationError("posterior precision is not positive definite") from exc

    def rhs(self, z):
        b = self.X.T @ z
        if self.m:
            b = np.concatenate([b, np.bincount(self.site_of, weights=z, minlength=self.m)])
        return b

    def conditional_mean(self, z):
        return linalg.cho_solve((self.chol, True), self.rhs(z))

    def draw_coefficients(self, z, rng):
        """Joint Gaussian draw of ``(beta_l, xi_l)`` given probit latents ``z``."""
        mean = self.conditional_mean(z)
        eps = rng.standard_normal(mean.size)
        draw = mean + linalg.solve_triangular(self.chol.T, eps, lower=False)
        return draw[: self.q], draw[self.q:]


def update_probit_layer(C, layer, reg, rng):
    """Albert-Chib update of ``Zaug``, ``B`` and ``Xi`` for factors ``1..L-1``.

    Column 0 (the reference) is left untouched.
    """
    C = np.asarray(C)
    L = C.shape[1]
    site_of = layer.site_of
    for l in range(1, L):
        eta = layer.X @ reg.B[:, l]
        if layer.m:
            eta = eta + reg.Xi[site_of, l]
        col = np.empty(eta.size)
        _draw_zaug(np.ascontiguousarray(eta), np.ascontiguousarray(C[:, l]), col, rng)
        reg.Zaug[:, l] = col
        beta, xi = layer.draw_coefficients(col, rng)
        reg.B[:, l] = beta
        if layer.m:
            reg.Xi[:, l] = xi
    return reg

"""Core domain types and the mean / likelihood computations.

Indices are 0-based throughout; factor 0 is the reference factor
(``c_i0 = 1`` and ``phi_i0 = 1/n`` for every sample).
"""

from dataclasses import dataclass, fields

import numpy as np
from scipy import sparse
from scipy.special import gammaln

__all__ = [
    "INADMISSIBLE",
    "CountMatrix",
    "CovariateMatrix",
    "FactorState",
    "LoadingState",
    "HyperParams",
    "compute_phi",
    "compute_mean",
    "log_likelihood",
    "marginal_covariance",
]

#: log-likelihood of a configuration that puts zero mean on a positive count
INADMISSIBLE = float("-inf")


class InadmissibleStateError(RuntimeError):
    """A latent configuration assigns zero mean to an observed positive count."""


@dataclass(frozen=True)
class CountMatrix:
    """Sparse ``n x p`` abundance matrix with a sample-to-site map.

    Only positive counts are stored. ``site_of[i]`` is the 0-based site of
    sample ``i`` and ``m`` the number of sites.
    """

    n: int
    p: int
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    site_of: np.ndarray
    m: int
    species: tuple = ()
    samples: tuple = ()

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        vals = np.ascontiguousarray(self.vals, dtype=np.int64)
        site_of = np.ascontiguousarray(self.site_of, dtype=np.int64)
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("rows, cols and vals must have equal length")
        if np.any(vals < 1):
            raise ValueError("stored counts must be >= 1 (zeros are implicit)")
        if rows.size and (rows.min() < 0 or rows.max() >= self.n or cols.min() < 0 or cols.max() >= self.p):
            raise ValueError("entry index out of range")
        if site_of.shape != (self.n,):
            raise ValueError("every sample needs a site assignment")
        if self.n and (site_of.min() < 0 or site_of.max() >= self.m):
            raise ValueError("site index out of range")
        key = rows * self.p + cols
        order = np.argsort(key, kind="stable")
        if np.any(np.diff(key[order]) == 0):
            raise ValueError("duplicate (i, j) entries")
        # canonical row-major order
        object.__setattr__(self, "rows", rows[order])
        object.__setattr__(self, "cols", cols[order])
        object.__setattr__(self, "vals", vals[order])
        object.__setattr__(self, "site_of", site_of)

    @classmethod
    def from_dense(cls, Y, site_of=None, m=None, **kw):
        Y = np.asarray(Y)
        if np.any(Y < 0) or np.any(Y != np.round(Y)):
            raise ValueError("counts must be nonnegative integers")
        n, p = Y.shape
        if site_of is None:
            site_of = np.arange(n)
        site_of = np.asarray(site_of, dtype=np.int64)
        if m is None:
            m = int(site_of.max()) + 1 if n else 0
        r, c = np.nonzero(Y)
        return cls(n, p, r, c, Y[r, c].astype(np.int64), site_of, m, **kw)

    @property
    def nnz(self):
        return int(self.vals.size)

    @property
    def total(self):
        return int(self.vals.sum())

    @property
    def zero_fraction(self):
        return 1.0 - self.nnz / float(self.n * self.p)

    def to_csr(self):
        return sparse.csr_matrix((self.vals, (self.rows, self.cols)), shape=(self.n, self.p), dtype=np.int64)

    def dense(self):
        Y = np.zeros((self.n, self.p), dtype=np.int64)
        Y[self.rows, self.cols] = self.vals
        return Y

    def subset_rows(self, idx):
        """Samples ``idx`` (in the given order) with sites re-indexed densely."""
        idx = np.asarray(idx, dtype=np.int64)
        Yd = self.to_csr()[idx].tocoo()
        sites, site_of = np.unique(self.site_of[idx], return_inverse=True)
        samples = tuple(self.samples[k] for k in idx) if self.samples else ()
        out = CountMatrix(idx.size, self.p, Yd.row, Yd.col, Yd.data, site_of, sites.size,
                          species=self.species, samples=samples)
        return out, sites


@dataclass(frozen=True)
class CovariateMatrix:
    """Design matrix with a leading intercept column; other columns standardized."""

    X: np.ndarray
    names: tuple = ()

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[1] < 1:
            raise ValueError("X must be a 2-D matrix with at least the intercept column")
        if not np.all(X[:, 0] == 1.0):
            raise ValueError("first covariate column must be the all-ones intercept")
        object.__setattr__(self, "X", X)

    @classmethod
    def from_raw(cls, raw, names=()):
        """Standardize raw covariate columns and prepend the intercept."""
        raw = np.asarray(raw, dtype=float)
        if raw.ndim == 1:
            raw = raw[:, None]
        n = raw.shape[0]
        if raw.shape[1] == 0:
            return cls(np.ones((n, 1)), ("intercept",))
        mu = raw.mean(axis=0)
        sd = raw.std(axis=0)
        bad = np.flatnonzero(~(sd > 0))
        if bad.size:
            label = names[bad[0]] if names else str(bad[0])
            raise ValueError(f"degenerate covariate {label!r}: zero variance")
        Z = (raw - mu) / sd
        # second pass removes the residual rounding in mean and sd
        Z = Z - Z.mean(axis=0)
        Z = Z / Z.std(axis=0)
        return cls(np.column_stack([np.ones(n), Z]), ("intercept",) + tuple(names))

    @classmethod
    def intercept_only(cls, n):
        return cls(np.ones((n, 1)), ("intercept",))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def q(self):
        return self.X.shape[1]


@dataclass
class FactorState:
    """Sample-side latents: switches ``C``, auxiliaries ``Z`` and ``U``."""

    C: np.ndarray
    Z: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        if self.C.shape != self.Z.shape:
            raise ValueError("C and Z must have the same shape")
        if not np.all(self.C[:, 0] == 1):
            raise ValueError("reference column of C must be all ones")
        if not np.all(self.Z > 0) or not np.all(np.isfinite(self.Z)):
            raise ValueError("Z must be strictly positive and finite")

    @property
    def phi(self):
        return compute_phi(self.Z, self.C)


@dataclass
class LoadingState:
    """Species-side latents: switches ``S``, strengths ``G``, rates ``nu`` and ``psi``."""

    S: np.ndarray
    G: np.ndarray
    nu: np.ndarray
    psi: float

    def __post_init__(self):
        if self.S.shape != self.G.shape:
            raise ValueError("S and G must have the same shape")
        if not np.all(self.G > 0):
            raise ValueError("G must be strictly positive")
        if not np.all(np.asarray(self.nu) > 0):
            raise ValueError("nu must be strictly positive")


@dataclass(frozen=True)
class HyperParams:
    L: int = 7
    a_gamma: float = 0.5
    a_nu: float = 0.5
    b_nu: float = 0.5
    alpha: float = 1.0
    psi_a: float = 10.0
    psi_b: float = 10.0
    sigma0_sq: float = 10.0
    tau0: float = 1.0
    gp_variance: float = 1.0
    block_size: int = 2

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 2:
            raise ValueError("L must be an integer >= 2")
        if int(self.block_size) != self.block_size or self.block_size < 1:
            raise ValueError("block_size must be an integer >= 1")
        for f in fields(self):
            v = getattr(self, f.name)
            if not v > 0:
                raise ValueError(f"{f.name} must be positive, got {v}")

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def replace(self, **kw):
        d = self.to_dict()
        d.update(kw)
        return HyperParams(**d)


def compute_phi(Z, C):
    """Normalize auxiliary intensities into factor strengths.

    Column 0 is the reference (``1/n``). For other columns the active entries
    sum to one; a column with no active entry is normalized over all entries,
    which is harmless because it contributes nothing to the mean.
    """
    Z = np.asarray(Z, dtype=float)
    C = np.asarray(C)
    if Z.shape != C.shape:
        raise ValueError("Z and C must have the same shape")
    if not np.all(np.isfinite(Z)) or np.any(Z <= 0):
        raise ValueError("Z must be strictly positive and finite")
    n = Z.shape[0]
    active = (C != 0)
    denom = np.where(active, Z, 0.0).sum(axis=0)
    empty = ~active.any(axis=0)
    denom[empty] = Z[:, empty].sum(axis=0)
    phi = Z / denom
    phi[:, 0] = 1.0 / n
    return phi


def compute_mean(C, phi, S, G):
    """``M = (C * phi) @ (S * G).T``."""
    theta = np.asarray(C) * np.asarray(phi, dtype=float)
    lam = np.asarray(S) * np.asarray(G, dtype=float)
    if theta.shape[1] != lam.shape[1]:
        raise ValueError("factor dimensions disagree")
    return theta @ lam.T


def log_likelihood(Y, M):
    """Poisson log-likelihood of counts ``Y`` under mean matrix ``M``.

    ``Y`` may be a :class:`CountMatrix` or a dense array. Returns
    :data:`INADMISSIBLE` when a positive count sits on a zero mean.
    """
    M = np.asarray(M, dtype=float)
    if isinstance(Y, CountMatrix):
        if M.shape != (Y.n, Y.p):
            raise ValueError("shape mismatch between Y and M")
        r, c, y = Y.rows, Y.cols, Y.vals.astype(float)
    else:
        Yd = np.asarray(Y)
        if Yd.shape != M.shape:
            raise ValueError("shape mismatch between Y and M")
        r, c = np.nonzero(Yd)
        y = Yd[r, c].astype(float)
    mu = M[r, c]
    if np.any(mu <= 0.0):
        return INADMISSIBLE
    return float(np.sum(y * np.log(mu)) - M.sum() - np.sum(gammaln(y + 1.0)))


def marginal_covariance(S, G, E_i, V_i, tol=1e-10):
    """Covariance of a sample's abundance vector given loadings.

    ``diag(lam @ E_i) + lam @ V_i @ lam.T`` with ``lam = S * G``; ``E_i`` and
    ``V_i`` are the mean and covariance of ``c_i * phi_i``.
    """
    lam = np.asarray(S) * np.asarray(G, dtype=float)
    E_i = np.asarray(E_i, dtype=float)
    V_i = np.asarray(V_i, dtype=float)
    if V_i.shape != (lam.shape[1], lam.shape[1]) or E_i.shape != (lam.shape[1],):
        raise ValueError("E_i / V_i do not match the factor dimension")
    if np.max(np.abs(V_i - V_i.T), initial=0.0) > tol:
        raise ValueError("V_i is not symmetric")
    V_i = 0.5 * (V_i + V_i.T)
    out = np.diag(lam @ E_i) + lam @ V_i @ lam.T
    return 0.5 * (out + out.T)

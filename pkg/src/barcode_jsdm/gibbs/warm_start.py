"""Warm start from a KL nonnegative matrix factorization."""

import numpy as np
from scipy import sparse

__all__ = ["kl_divergence", "kl_nmf", "warm_start", "initial_switches"]

_EPS = 1e-300
_FLOOR = 1e-12


def kl_divergence(Y, W, H):
    """Generalized KL divergence ``D(Y || W H^T)`` for sparse ``Y``."""
    Y = sparse.csr_matrix(Y)
    coo = Y.tocoo()
    wh = np.einsum("kl,kl->k", W[coo.row], H[coo.col])
    y = coo.data.astype(float)
    return float(np.sum(y * np.log(y / np.maximum(wh, _EPS))) - y.sum() + W.sum(axis=0) @ H.sum(axis=0))


def kl_nmf(Y, L, iterations=200, seed=0, fixed_first=None, trace=False):
    """Lee-Seung multiplicative updates for the KL objective.

    ``Y`` may be dense or sparse; only its nonzeros are visited. When
    ``fixed_first`` is a scalar, column 0 of ``W`` is held at that constant
    and only the remaining columns are updated. Column 0 of ``H`` then starts
    at a ``1/L`` share of each column's mean, so the constant factor carries
    its part of the baseline from the first iteration; starting it at the
    generic scale lets the free factors absorb the baseline and stalls the
    updates in a poor local optimum.
    """
    Y = sparse.csr_matrix(Y, dtype=float)
    Y.sum_duplicates()
    n, p = Y.shape
    if Y.nnz == 0:
        raise ValueError("cannot factorize an all-zero count matrix")
    rng = np.random.default_rng(seed)
    scale = np.sqrt(Y.sum() / (n * p) / L)
    W = scale * (0.5 + rng.random((n, L)))
    H = scale * (0.5 + rng.random((p, L)))
    if fixed_first is not None:
        W[:, 0] = fixed_first
        H[:, 0] = np.asarray(Y.sum(axis=0)).ravel() / (n * fixed_first * L) + _FLOOR
    coo = Y.tocoo()
    r, c, y = coo.row, coo.col, coo.data

    def ratio():
        wh = np.einsum("kl,kl->k", W[r], H[c])
        return sparse.csr_matrix((y / np.maximum(wh, _EPS), (r, c)), shape=(n, p))

    history = []
    for _ in range(iterations):
        R = ratio()
        upd = (R @ H) / np.maximum(H.sum(axis=0), _EPS)
        if fixed_first is None:
            W *= upd
        else:
            W[:, 1:] *= upd[:, 1:]
        R = ratio()
        H *= (R.T @ W) / np.maximum(W.sum(axis=0), _EPS)
        if trace:
            history.append(kl_divergence(Y, W, H))
    if trace:
        return W, H, np.array(history)
    return W, H


def warm_start(Y, L, iterations=500, seed=0):
    """Initial strengths ``(phi, gamma)`` with unit column sums in ``phi``.

    The reference column is held at ``1/n`` during the factorization; other
    columns are rescaled to sum to one and their scale moved into ``gamma``.
    Entries are floored away from zero so every positive count keeps a
    positive mean under all-ones switches.
    """
    if L < 2:
        raise ValueError("need at least two factors")
    csr = Y.to_csr() if hasattr(Y, "to_csr") else sparse.csr_matrix(Y)
    n = csr.shape[0]
    W, H = kl_nmf(csr, L, iterations, seed=seed, fixed_first=1.0 / n)
    W = np.maximum(W, _FLOOR)
    H = np.maximum(H, _FLOOR)
    s = W.sum(axis=0)
    s[0] = 1.0
    W = W / s
    H = H * s
    W[:, 0] = 1.0 / n
    return W, H


def initial_switches(Y, phi, gamma, threshold=0.01):
    """Binary switches read off a warm-start factorization.

    ``c_il`` is on when factor ``l`` carries more than ``threshold`` of
    sample ``i``'s fitted total, ``s_jl`` likewise for species ``j``. The
    reference switches of samples stay on, and any positive count left
    without an active factor gets the pair with the largest fitted
    contribution switched on.
    """
    csr = Y.to_csr() if hasattr(Y, "to_csr") else sparse.csr_matrix(Y)
    coo = csr.tocoo()
    share_c = phi * gamma.sum(axis=0)
    share_c /= share_c.sum(axis=1, keepdims=True)
    share_s = gamma * phi.sum(axis=0)
    share_s /= share_s.sum(axis=1, keepdims=True)
    C = (share_c > threshold).astype(np.uint8)
    S = (share_s > threshold).astype(np.uint8)
    C[:, 0] = 1
    for i, j in zip(coo.row, coo.col):
        if not np.any(C[i] & S[j]):
            l = int(np.argmax(phi[i] * gamma[j]))
            C[i, l] = 1
            S[j, l] = 1
    return C, S

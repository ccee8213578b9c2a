"""Seedable random primitives shared by every conditional update.

All samplers take a ``numpy.random.Generator``. The ``_nb_*`` kernels are
numba-compiled and are called directly from the Gibbs kernels; the public
wrappers validate arguments and are what user code should call.
"""

import math

import numba as nb
import numpy as np
from scipy.special import logsumexp

__all__ = [
    "make_rng",
    "gamma_draw",
    "beta_draw",
    "dirichlet_draw",
    "multinomial_draw",
    "truncated_normal_draw",
    "log_categorical_draw",
    "logsumexp",
]

ABOVE_ZERO = 1
BELOW_ZERO = 0

# below this standardized lower bound plain rejection accepts with prob > 0.3
_TN_NAIVE_CUTOFF = 0.45


def make_rng(seed, stream_id=0):
    """Return the generator for substream ``stream_id`` of ``seed``.

    Streams are derived with ``SeedSequence`` spawn keys, so
    ``(seed, stream_id)`` identifies the same PCG64 sequence on any platform.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@nb.njit(cache=True)
def _nb_gamma(shape, rate, rng):
    # Marsaglia-Tsang; shape < 1 is boosted: G(a) = G(a + 1) * U**(1/a)
    boost = 1.0
    a = shape
    if a < 1.0:
        u = rng.random()
        while u == 0.0:
            u = rng.random()
        boost = math.exp(math.log(u) / a)
        a = a + 1.0
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = rng.standard_normal()
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = rng.random()
        if u < 1.0 - 0.0331 * (x * x) * (x * x):
            break
        if math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            break
    return d * v * boost / rate


@nb.njit(cache=True)
def _nb_std_tn_lower(a, rng):
    # standard normal truncated to (a, inf)
    if a < _TN_NAIVE_CUTOFF:
        while True:
            z = rng.standard_normal()
            if z > a:
                return z
    # Robert (1995) translated-exponential proposal
    lam = 0.5 * (a + math.sqrt(a * a + 4.0))
    while True:
        z = a + rng.standard_exponential() / lam
        if rng.random() <= math.exp(-0.5 * (z - lam) * (z - lam)):
            return z


@nb.njit(cache=True)
def _nb_trunc_norm(mean, above, rng):
    if above:
        return mean + _nb_std_tn_lower(-mean, rng)
    # X <= 0  <=>  -X >= 0 with mean -mean; the boundary point has measure zero
    return -(-mean + _nb_std_tn_lower(mean, rng))


_SMALL_TOTAL = 10


@nb.njit(cache=True)
def _nb_multinomial(total, weights, out, rng):
    k = weights.shape[0]
    wsum = 0.0
    for l in range(k):
        out[l] = 0
        wsum += weights[l]
    if total <= _SMALL_TOTAL:
        # one categorical draw per unit; cheaper than binomials for small totals
        for _ in range(total):
            u = rng.random() * wsum
            acc = 0.0
            last = -1
            for l in range(k):
                if weights[l] > 0.0:
                    last = l
                    acc += weights[l]
                    if u < acc:
                        break
            out[last] += 1
        return
    # sequential binomial conditioning
    remaining = total
    for l in range(k):
        if remaining == 0:
            break
        w = weights[l]
        if w <= 0.0:
            continue
        if w >= wsum:
            out[l] = remaining
            remaining = 0
            break
        p = w / wsum
        if p > 1.0:
            p = 1.0
        x = rng.binomial(remaining, p)
        out[l] = x
        remaining -= x
        wsum -= w
    if remaining > 0:
        # rounding left mass on the final positive-weight cell
        for l in range(k - 1, -1, -1):
            if weights[l] > 0.0:
                out[l] += remaining
                break


@nb.njit(cache=True)
def _nb_log_categorical(logw, rng):
    k = logw.shape[0]
    mx = -np.inf
    for t in range(k):
        if logw[t] > mx:
            mx = logw[t]
    if mx == -np.inf:
        return -1
    tot = 0.0
    for t in range(k):
        if logw[t] > -np.inf:
            tot += math.exp(logw[t] - mx)
    u = rng.random() * tot
    acc = 0.0
    last = -1
    for t in range(k):
        if logw[t] > -np.inf:
            acc += math.exp(logw[t] - mx)
            last = t
            if u < acc:
                return t
    return last


@nb.njit(cache=True)
def _nb_gamma_many(shape, rate, size, rng):
    out = np.empty(size)
    for t in range(size):
        out[t] = _nb_gamma(shape, rate, rng)
    return out


@nb.njit(cache=True)
def _nb_trunc_norm_many(mean, above, size, rng):
    out = np.empty(size)
    for t in range(size):
        out[t] = _nb_trunc_norm(mean, above, rng)
    return out


# ---------------------------------------------------------------------------
# public wrappers
# ---------------------------------------------------------------------------


def gamma_draw(shape, rate, rng, size=None):
    """Gamma draw(s) under the shape-rate convention (mean ``shape / rate``)."""
    shape = float(shape)
    rate = float(rate)
    if not (shape > 0.0 and rate > 0.0) or not (math.isfinite(shape) and math.isfinite(rate)):
        raise ValueError(f"gamma parameters must be positive and finite, got ({shape}, {rate})")
    if size is None:
        return _nb_gamma(shape, rate, rng)
    return _nb_gamma_many(shape, rate, int(size), rng)


def beta_draw(a, b, rng):
    x = gamma_draw(a, 1.0, rng)
    y = gamma_draw(b, 1.0, rng)
    return x / (x + y)


def dirichlet_draw(alpha, rng):
    g = np.array([gamma_draw(a, 1.0, rng) for a in np.asarray(alpha, dtype=float)])
    return g / g.sum()


def multinomial_draw(total, weights, rng):
    """Draw from ``Mult(total, weights / sum(weights))``; zero weights never receive mass."""
    w = np.asarray(weights, dtype=float)
    total = int(total)
    if total < 0:
        raise ValueError("total must be nonnegative")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    out = np.zeros(w.shape[0], dtype=np.int64)
    if total == 0:
        return out
    if w.sum() <= 0.0:
        raise ValueError("all-zero weights with a positive total")
    _nb_multinomial(total, w, out, rng)
    return out


def truncated_normal_draw(mean, side, rng, size=None):
    """Unit-variance normal truncated to one half-line.

    ``side`` is ``"above"`` for (0, inf) or ``"below"`` for (-inf, 0].
    Far tails use exponential rejection so extreme means never stall.
    """
    if side in ("above", "above-zero", ABOVE_ZERO, True):
        above = True
    elif side in ("below", "below-zero", BELOW_ZERO, False):
        above = False
    else:
        raise ValueError(f"unknown side {side!r}")
    if size is None:
        return _nb_trunc_norm(float(mean), above, rng)
    return _nb_trunc_norm_many(float(mean), above, int(size), rng)


def log_categorical_draw(log_weights, rng):
    """Index drawn with probability proportional to ``exp(log_weights)``.

    ``-inf`` entries are never selected; all ``-inf`` raises.
    """
    lw = np.asarray(log_weights, dtype=float)
    if np.any(np.isnan(lw)) or np.any(lw == np.inf):
        raise ValueError("log-weights must be finite or -inf")
    k = _nb_log_categorical(lw, rng)
    if k < 0:
        raise ValueError("every configuration is inadmissible")
    return int(k)

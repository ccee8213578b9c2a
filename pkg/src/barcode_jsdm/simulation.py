"""Synthetic data from the barcode model and recovery metrics."""

from dataclasses import asdict, dataclass, field

import numpy as np

from .data_model import CountMatrix, CovariateMatrix, HyperParams
from .posthoc import align_columns

__all__ = [
    "SimScenario",
    "SimTruth",
    "S_GRID",
    "C_GRID",
    "B_GRID",
    "generate",
    "recovery_error",
    "coverage_check",
    "interval_width",
    "run_replicate",
    "run_grid",
]

#: (n, p) cells of the recovery experiments
S_GRID = tuple((n, 50) for n in (50, 100, 500, 1000))
C_GRID = tuple((500, p) for p in (15, 30, 50, 75))
B_GRID = tuple((n, 50) for n in (100, 250, 500, 1000))

PHI_SHAPE, PHI_RATE = 1.0, 1.0 / 3.0
GAMMA_SHAPE, GAMMA_RATE = 1.0, 1.0 / 5.0
#: constant strength of the reference factor in generated data (the mean of
#: the other strengths)
REFERENCE_PHI = PHI_SHAPE / PHI_RATE


@dataclass(frozen=True)
class SimScenario:
    n: int
    p: int
    L: int = 4
    seed: int = 0
    with_covariates: bool = False
    n_replicates: int = 25
    #: covariate count including the intercept (covariate mode only)
    q: int = 5
    #: standard deviation of the true coefficients
    beta_sd: float = 0.75

    def __post_init__(self):
        if self.n < 2 or self.p < 1 or self.L < 2:
            raise ValueError("need n >= 2, p >= 1 and L >= 2")
        if self.with_covariates and self.q < 1:
            raise ValueError("q must be >= 1")

    def to_dict(self):
        return asdict(self)


@dataclass
class SimTruth:
    C: np.ndarray
    Phi: np.ndarray
    S: np.ndarray
    G: np.ndarray
    M: np.ndarray
    X: np.ndarray = None
    B: np.ndarray = None
    extra: dict = field(default_factory=dict)


def _bernoulli_rows(rng, rows, cols, lo=0):
    """Bernoulli(1/2) matrix whose rows are never all zero in columns ``lo:``.

    Offending rows are redrawn individually.
    """
    A = (rng.random((rows, cols)) < 0.5).astype(np.uint8)
    for i in range(rows):
        while not A[i, lo:].any():
            A[i, lo:] = rng.random(cols - lo) < 0.5
    return A


def generate(scenario, rng=None, replicate=0):
    """Draw ``(Y, truth)`` for one replicate of ``scenario``.

    Switches are Bernoulli(1/2), with all-zero rows of ``C`` (outside the
    reference) and of ``S`` redrawn. Strengths are Ga(1, 1/3) and Ga(1, 1/5)
    under the shape-rate convention; the reference factor is on in every
    sample with constant strength. In covariate mode the non-reference
    switches instead follow the probit presence model
    ``c_il = 1[x_i' beta_l + e_il > 0]`` with no spatial term, and ``X``
    holds an intercept plus standardized Gaussian covariates.
    """
    sc = scenario
    if rng is None:
        ss = np.random.SeedSequence(int(sc.seed), spawn_key=(sc.n, sc.p, sc.L, int(replicate)))
        rng = np.random.Generator(np.random.PCG64(ss))
    n, p, L = sc.n, sc.p, sc.L
    X = B = None
    if sc.with_covariates:
        raw = rng.standard_normal((n, sc.q - 1))
        X = CovariateMatrix.from_raw(raw).X if sc.q > 1 else np.ones((n, 1))
        B = np.zeros((sc.q, L))
        B[:, 1:] = sc.beta_sd * rng.standard_normal((sc.q, L - 1))
        C = np.ones((n, L), dtype=np.uint8)
        C[:, 1:] = (X @ B[:, 1:] + rng.standard_normal((n, L - 1)) > 0)
    else:
        C = _bernoulli_rows(rng, n, L, lo=1)
        C[:, 0] = 1
    S = _bernoulli_rows(rng, p, L)
    Phi = rng.gamma(PHI_SHAPE, 1.0 / PHI_RATE, (n, L))
    Phi[:, 0] = REFERENCE_PHI
    G = rng.gamma(GAMMA_SHAPE, 1.0 / GAMMA_RATE, (p, L))
    M = (C * Phi) @ (S * G).T
    Yd = rng.poisson(M)
    Y = CountMatrix.from_dense(Yd)
    return Y, SimTruth(C, Phi, S, G, M, X, B)


def recovery_error(est, truth, perm=None, skip_reference=False):
    """Mean absolute difference between a posterior-mean binary matrix and truth.

    Columns of ``est`` are permuted by ``perm`` (computed with
    :func:`align_columns` when not given) before comparison.
    ``skip_reference`` drops column 0 from the average (the reference
    column of ``C`` is fixed and carries no information).
    """
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError("shape mismatch")
    if perm is None:
        perm = align_columns(est, truth)
    D = np.abs(est[:, perm] - truth)
    if skip_reference:
        D = D[:, 1:]
    return float(D.mean())


def coverage_check(lower, upper, truth):
    """Fraction of entries with ``lower <= truth <= upper``, pooled over inputs.

    Arguments may be arrays or lists of arrays (one per replicate).
    """
    def flat(a):
        if isinstance(a, (list, tuple)):
            return np.concatenate([np.ravel(x) for x in a])
        return np.ravel(np.asarray(a, dtype=float))

    lo, hi, t = flat(lower), flat(upper), flat(truth)
    if not (lo.shape == hi.shape == t.shape):
        raise ValueError("shape mismatch")
    return float(np.mean((lo <= t) & (t <= hi)))


def interval_width(lower, upper):
    return np.asarray(upper, dtype=float) - np.asarray(lower, dtype=float)


def run_replicate(scenario, replicate, config, hypers=None):
    """Generate, fit and score one replicate.

    Returns a metrics dict with the aligned recovery errors of ``S`` and
    ``C`` and, in covariate mode, 95% interval coverage and median width of
    the non-reference coefficients.
    """
    from .gibbs import fit

    sc = scenario
    Y, truth = generate(sc, replicate=replicate)
    hypers = hypers or HyperParams(L=sc.L)
    if hypers.L != sc.L:
        raise ValueError("hyperparameter L differs from the scenario")
    arch = fit(Y, truth.X, None, hypers, config, seed=sc.seed * 1000 + replicate)
    S_hat = arch.posterior_mean("S")
    C_hat = arch.posterior_mean("C")
    perm = align_columns([C_hat, S_hat], [truth.C, truth.S])
    row = {
        "n": sc.n, "p": sc.p, "L": sc.L, "replicate": replicate,
        "S_error": recovery_error(S_hat, truth.S, perm),
        "C_error": recovery_error(C_hat, truth.C, perm, skip_reference=True),
        "nnz": Y.nnz, "seconds": sum(c.seconds for c in arch.chains),
    }
    if sc.with_covariates:
        Bd = arch.pooled("B")[..., perm][..., 1:]
        lo, hi = np.quantile(Bd, [0.025, 0.975], axis=0)
        row["B_coverage"] = coverage_check(lo, hi, truth.B[:, 1:])
        row["B_width"] = float(np.median(hi - lo))
        row["B_lower"], row["B_upper"], row["B_truth"] = lo, hi, truth.B[:, 1:]
    return row


def run_grid(cells, config, n_replicates=25, L=4, seed=0, with_covariates=False,
             hypers=None, progress=None):
    """Run :func:`run_replicate` over ``(n, p)`` cells; returns metric rows."""
    rows = []
    for n, p in cells:
        sc = SimScenario(n, p, L, seed=seed, with_covariates=with_covariates,
                         n_replicates=n_replicates)
        for r in range(n_replicates):
            row = run_replicate(sc, r, config, hypers)
            rows.append(row)
            if progress is not None:
                progress(row)
    return rows

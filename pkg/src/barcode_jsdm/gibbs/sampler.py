"""Chain state, the eight-step sweep and the chain driver."""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from ..archive import ChainDraws, PosteriorArchive
from ..data_model import CountMatrix, HyperParams, InadmissibleStateError
from ..latent_regression import (
    ProbitLayer,
    RegressionState,
    build_kernel,
    presence_logprob,
    update_probit_layer,
)
from . import kernels as K
from .warm_start import initial_switches, warm_start

log = logging.getLogger(__name__)

__all__ = [
    "SweepConfig",
    "ChainState",
    "initial_state",
    "allocate_counts",
    "update_species_switches",
    "update_sample_switches",
    "update_gamma",
    "update_u_and_zeta",
    "update_hypers",
    "sweep",
    "run_chain",
    "fit",
]

U_SHAPE_FLOOR = 1e-8


@dataclass(frozen=True)
class SweepConfig:
    n_burnin: int = 25_000
    n_samples: int = 25_000
    thin: int = 10
    n_chains: int = 4
    block_size: int = 2
    warm_start: bool = True
    warm_start_iters: int = 500
    spatial: bool = True
    #: "threshold" reads switches off the warm start, "ones" starts all on
    init_switches: str = "threshold"
    init_threshold: float = 0.01

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.n_burnin < 0 or self.n_samples < 0:
            raise ValueError("sweep counts must be nonnegative")
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        if self.init_switches not in ("threshold", "ones"):
            raise ValueError("init_switches must be 'threshold' or 'ones'")

    @property
    def n_kept(self):
        return self.n_samples // self.thin

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class ChainState:
    """Everything one chain mutates, plus the fixed sparse views of ``Y``."""

    Y: CountMatrix
    hypers: HyperParams
    block_size: int
    # sparse structure: CSR order is canonical, CSC is a permutation of it
    indptr: np.ndarray
    indices: np.ndarray
    yint: np.ndarray
    lgy: np.ndarray
    cptr: np.ndarray
    crow: np.ndarray
    c2r: np.ndarray
    # latents
    C: np.ndarray
    Z: np.ndarray
    T: np.ndarray
    nact: np.ndarray
    U: np.ndarray
    S: np.ndarray
    G: np.ndarray
    nu: np.ndarray
    psi: float
    alloc: np.ndarray
    row_tot: np.ndarray
    col_tot: np.ndarray
    fac_tot: np.ndarray
    reg: RegressionState
    layer: ProbitLayer = None
    sweeps_done: int = 0
    fixed: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.Y.n

    @property
    def p(self):
        return self.Y.p

    @property
    def L(self):
        return self.hypers.L

    def theta(self):
        return K.theta_matrix(self.C, self.Z, self.T, self.nact)

    def phi(self):
        """Normalized strengths with the all-inactive fallback for empty columns."""
        from ..data_model import compute_phi

        return compute_phi(self.Z, self.C)

    def colact(self):
        return (self.nact > 0).astype(float)

    def mean(self):
        return self.theta() @ (self.S * self.G).T

    def loglik(self):
        return K.loglik_sparse(self.indptr, self.indices, self.yint, self.lgy,
                               self.theta(), self.S, self.G)

    def eta(self):
        return self.reg.eta(self.layer.X, self.layer.site_of) if self.layer is not None else np.zeros((self.n, self.L))

    def set_data(self, Y, alloc=None, rng=None):
        """Swap in a new count matrix on the same samples.

        The allocation is taken from ``alloc`` (rows in canonical order) or
        drawn from its conditional.
        """
        _attach_data(self, Y)
        if alloc is None:
            allocate_counts(self, rng)
        else:
            self.alloc = np.ascontiguousarray(alloc, dtype=np.int64)
            _recount(self)

    def check_invariants(self, tol=1e-12):
        """Return a list of violated structural invariants (empty when sound)."""
        bad = []
        if not np.array_equal(self.alloc.sum(axis=1), self.yint):
            bad.append("allocation rows do not sum to y_ij")
        lam_on = np.repeat(self.C, np.diff(self.indptr), axis=0) * self.S[self.indices]
        if np.any((self.alloc > 0) & (lam_on == 0)):
            bad.append("allocation on an inactive factor")
        if not np.all(self.C[:, 0] == 1):
            bad.append("reference switch changed")
        theta = self.theta()
        if not np.all(theta[:, 0] == 1.0 / self.n):
            bad.append("reference strength changed")
        sums = theta[:, 1:].sum(axis=0)
        live = self.nact[1:] > 0
        if np.any(np.abs(sums[live] - 1.0) >= tol):
            bad.append("active strengths do not sum to one")
        return bad


def _attach_data(state, Y):
    csr = Y.to_csr()
    csr.sort_indices()
    state.Y = Y
    state.indptr = csr.indptr.astype(np.int64)
    state.indices = csr.indices.astype(np.int64)
    state.yint = csr.data.astype(np.int64)
    state.lgy = gammaln(state.yint + 1.0)
    # CSC view as a permutation of the CSR positions
    order = np.lexsort((np.repeat(np.arange(Y.n), np.diff(state.indptr)), state.indices))
    state.c2r = order.astype(np.int64)
    state.crow = np.repeat(np.arange(Y.n), np.diff(state.indptr))[order].astype(np.int64)
    state.cptr = np.concatenate([[0], np.cumsum(np.bincount(state.indices, minlength=Y.p))]).astype(np.int64)
    nnz = state.yint.size
    if state.alloc is None or state.alloc.shape != (nnz, state.L):
        state.alloc = np.zeros((nnz, state.L), dtype=np.int64)


def _recount(state):
    rows = np.repeat(np.arange(state.n), np.diff(state.indptr))
    state.row_tot = np.zeros((state.n, state.L), dtype=np.int64)
    state.col_tot = np.zeros((state.p, state.L), dtype=np.int64)
    np.add.at(state.row_tot, rows, state.alloc)
    np.add.at(state.col_tot, state.indices, state.alloc)
    state.fac_tot = state.alloc.sum(axis=0).astype(np.int64)


def initial_state(Y, hypers, X=None, geometry=None, rng=None, config=None,
                  phi=None, gamma=None, kernel=None):
    """Build a chain state.

    Strengths come from ``phi``/``gamma`` when given, else from the warm start
    (or a flat start when ``config.warm_start`` is false). Switches are read
    off the strengths by thresholding (``config.init_switches="threshold"``)
    or all set on. Inactive strengths are redrawn from their pseudo-prior
    (species) or prior (samples): the warm start leaves them near zero, where
    the slab density of a shape-below-one gamma would pin a switch on.
    """
    config = config or SweepConfig()
    n, p, L = Y.n, Y.p, hypers.L
    if X is None:
        X = np.ones((n, 1))
    X = np.asarray(getattr(X, "X", X), dtype=float)
    if phi is None or gamma is None:
        if config.warm_start:
            phi, gamma = warm_start(Y, L, config.warm_start_iters)
        else:
            phi = np.full((n, L), 1.0 / n)
            gamma = np.full((p, L), max(Y.total / max(p, 1) / L, 1e-3))
    phi = np.asarray(phi, dtype=float)
    gamma = np.maximum(np.asarray(gamma, dtype=float), 1e-10)
    Z = np.maximum(phi * n * hypers.alpha, 1e-300)
    Z[:, 0] = 1.0
    if config.init_switches == "threshold":
        C, S = initial_switches(Y, phi, gamma, config.init_threshold)
    else:
        C = np.ones((n, L), dtype=np.uint8)
        S = np.ones((p, L), dtype=np.uint8)
    gamma = gamma.copy()
    off_s, off_c = S == 0, C == 0
    if rng is not None:
        gamma[off_s] = rng.gamma(1.0, 1.0 / hypers.tau0, off_s.sum())
        Z[off_c] = rng.gamma(hypers.alpha, 1.0, off_c.sum())
    else:
        gamma[off_s] = 1.0 / hypers.tau0
        Z[off_c] = hypers.alpha
    on = S == 1
    nu = hypers.a_gamma / np.array([gamma[on[:, l], l].mean() if on[:, l].any() else 1.0
                                    for l in range(L)])
    m = geometry.m if geometry is not None else int(Y.m)
    q = X.shape[1]
    reg = RegressionState(np.zeros((q, L)), np.zeros((m, L)), np.zeros((n, L)))
    if config.spatial and geometry is not None:
        kernel = kernel or build_kernel(geometry, hypers.gp_variance)
        layer = ProbitLayer(X, geometry.site_of, hypers.sigma0_sq, kernel)
    else:
        site_of = geometry.site_of if geometry is not None else Y.site_of
        layer = ProbitLayer(X, site_of, hypers.sigma0_sq, None)
    state = ChainState(
        Y=Y, hypers=hypers, block_size=config.block_size or hypers.block_size,
        indptr=None, indices=None, yint=None, lgy=None, cptr=None, crow=None, c2r=None,
        C=C, Z=Z, T=np.zeros(L), nact=np.zeros(L, dtype=np.int64), U=np.zeros(L),
        S=S, G=gamma, nu=nu, psi=hypers.psi_a / (hypers.psi_a + hypers.psi_b),
        alloc=None, row_tot=None, col_tot=None, fac_tot=None, reg=reg, layer=layer,
    )
    _attach_data(state, Y)
    K.refresh_normalizers(state.C, state.Z, state.T, state.nact)
    if rng is not None:
        allocate_counts(state, rng)
    else:
        _recount(state)
    return state


# ---------------------------------------------------------------------------
# the eight steps
# ---------------------------------------------------------------------------


def update_species_switches(state, rng):
    """Step 1: blocked species switches; column allocations follow the new barcode.

    Unless strengths are frozen, every switch also gets a Metropolis-Hastings
    flip with its strength redrawn (slab when switching on, pseudo-prior when
    switching off).
    """
    h = state.hypers
    code = K.species_switches(state.cptr, state.crow, state.c2r, state.yint, state.theta(),
                              state.S, state.G, state.nu, float(state.psi), h.a_gamma, h.tau0,
                              int(state.block_size), state.alloc, state.row_tot, state.col_tot,
                              state.fac_tot, rng, not state.fixed.get("G"))
    if code < 0:
        raise InadmissibleStateError(f"species {-code - 1}: no admissible switch configuration")
    return state.S


def update_sample_switches(state, rng):
    """Step 2: blocked sample switches under the probit presence prior."""
    logp1, logp0 = presence_logprob(state.eta())
    code = K.sample_switches(state.indptr, state.indices, state.yint, state.C, state.Z,
                             state.T, state.nact, state.S, state.G,
                             np.ascontiguousarray(logp1), np.ascontiguousarray(logp0),
                             int(state.block_size), state.alloc, state.row_tot, state.col_tot,
                             state.fac_tot, rng)
    if code < 0:
        raise InadmissibleStateError(f"sample {-code - 1}: no admissible switch configuration")
    K.refresh_normalizers(state.C, state.Z, state.T, state.nact)
    return state.C


def allocate_counts(state, rng):
    """Step 3: factor-specific counts for every stored nonzero."""
    code = K.allocate_all(state.indptr, state.indices, state.yint, state.theta(), state.S,
                          state.G, state.alloc, _zeros(state, "row_tot", (state.n, state.L)),
                          _zeros(state, "col_tot", (state.p, state.L)),
                          _zeros(state, "fac_tot", (state.L,)), rng)
    if code < 0:
        pos = -code - 1
        i = int(np.searchsorted(state.indptr, pos, side="right") - 1)
        raise InadmissibleStateError(f"cell ({i}, {state.indices[pos]}) has zero mean")
    return state.alloc


def _zeros(state, name, shape):
    arr = getattr(state, name)
    if arr is None or arr.shape != shape:
        arr = np.zeros(shape, dtype=np.int64)
        setattr(state, name, arr)
    return arr


def update_gamma(state, rng):
    """Step 4: conjugate strengths for active loadings, pseudo-prior otherwise."""
    h = state.hypers
    K.update_gamma(state.S, state.G, state.nu, state.col_tot, state.colact(),
                   h.a_gamma, h.tau0, rng)
    return state.G


def update_u_and_zeta(state, rng):
    """Steps 5-6: normalizing auxiliaries, then unnormalized intensities."""
    K.update_u_zeta(state.C, state.Z, state.T, state.nact, state.U, state.row_tot,
                    state.fac_tot, state.hypers.alpha, U_SHAPE_FLOOR, rng)
    return state.U, state.Z


def update_hypers(state, rng):
    """Step 8: ``psi`` and the factor-scale rates ``nu``."""
    h = state.hypers
    state.psi = K.update_hypers(state.S, state.G, state.nu, h.a_gamma, h.a_nu, h.b_nu,
                                h.psi_a, h.psi_b, rng)
    return state.psi, state.nu


def sweep(state, rng):
    """One pass of steps 1-8 in order."""
    fixed = state.fixed
    if not fixed.get("S"):
        update_species_switches(state, rng)
    if not fixed.get("C"):
        update_sample_switches(state, rng)
    allocate_counts(state, rng)
    if not fixed.get("G"):
        update_gamma(state, rng)
    if not fixed.get("Z"):
        update_u_and_zeta(state, rng)
    if not fixed.get("B"):
        update_probit_layer(state.C, state.layer, state.reg, rng)
    if not fixed.get("hypers"):
        update_hypers(state, rng)
    state.sweeps_done += 1


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


def run_chain(Y, X, geometry, hypers, config, rng, *, seed=None, stream_id=0,
              init=None, callback=None, kernel=None):
    """Run one chain and return its draws.

    ``callback(state, sweep_index)`` is invoked after every sweep.
    """
    state = initial_state(Y, hypers, X, geometry, rng, config,
                          *(init if init is not None else (None, None)), kernel=kernel)
    n_total = config.n_burnin + config.n_samples
    keep = config.n_kept
    n, p, L = Y.n, Y.p, hypers.L
    q = state.layer.X.shape[1]
    m = state.reg.Xi.shape[0]
    draws = ChainDraws.empty(keep, n, p, L, q, m, n_total, seed=seed, stream_id=stream_id)
    t0 = time.perf_counter()
    d = 0
    for t in range(n_total):
        try:
            sweep(state, rng)
        except InadmissibleStateError as exc:
            raise InadmissibleStateError(f"sweep {t}: {exc}") from exc
        draws.loglik[t] = state.loglik()
        if t >= config.n_burnin and (t - config.n_burnin + 1) % config.thin == 0 and d < keep:
            draws.record(d, state)
            d += 1
        if callback is not None:
            callback(state, t)
    draws.n_sweeps = n_total
    draws.seconds = time.perf_counter() - t0
    log.debug("chain %s: %d sweeps in %.2fs", stream_id, n_total, draws.seconds)
    return draws


def fit(Y, X=None, geometry=None, hypers=None, config=None, seed=0, callback=None):
    """Run ``config.n_chains`` chains from a shared warm start.

    Chains share the initial point (dispersed starts are not used) and differ
    only in their random substream.
    """
    from ..distributions import make_rng

    hypers = hypers or HyperParams()
    config = config or SweepConfig()
    if config.warm_start:
        init = warm_start(Y, hypers.L, config.warm_start_iters)
    else:
        init = None
    kernel = None
    if config.spatial and geometry is not None:
        kernel = build_kernel(geometry, hypers.gp_variance)
    chains = []
    for c in range(config.n_chains):
        rng = make_rng(seed, c)
        chains.append(run_chain(Y, X, geometry, hypers, config, rng, seed=seed, stream_id=c,
                                init=init, callback=callback, kernel=kernel))
    return PosteriorArchive(chains=chains, hypers=hypers, config=config, seed=seed,
                            site_of=np.asarray(Y.site_of), species=tuple(Y.species),
                            samples=tuple(Y.samples))

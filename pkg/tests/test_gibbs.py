import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import ndtr

from barcode_jsdm.data_model import CountMatrix, HyperParams, InadmissibleStateError
from barcode_jsdm.distributions import make_rng
from barcode_jsdm.gibbs import (
    SweepConfig,
    allocate_counts,
    fit,
    initial_state,
    kl_divergence,
    kl_nmf,
    run_chain,
    sweep,
    update_sample_switches,
    update_species_switches,
    warm_start,
)
from barcode_jsdm.gibbs import kernels as K
from barcode_jsdm.gibbs.warm_start import initial_switches
from barcode_jsdm.simulation import SimScenario, generate

from oracles import (
    config_index,
    sample_conditional,
    small_state,
    species_conditional,
    within_binomial_se,
)

FROZEN = {"G": True, "Z": True, "B": True, "hypers": True}


# ---------------------------------------------------------------------------
# allocation
# ---------------------------------------------------------------------------


def test_allocation_single_support():
    rng = make_rng(0)
    Yd = np.array([[5, 0], [0, 3]])
    C = np.array([[1, 1], [1, 0]])
    S = np.array([[0, 1], [1, 0]])
    st_ = small_state(Yd, 2, C, S, np.ones((2, 2)), np.ones((2, 2)), rng)
    assert st_.alloc.tolist() == [[0, 5], [3, 0]]


def test_allocation_multinomial_frequencies():
    # theta_i = (1/2, 1) on row 0 and gamma = (4, 2)/... gives pi = (2, 1) / 3
    rng = make_rng(1)
    Yd = np.array([[3], [0]])
    C = np.array([[1, 1], [1, 0]])
    st_ = small_state(Yd, 2, C, np.ones((1, 2)), np.ones((2, 2)), np.array([[4.0, 1.0]]), rng)
    assert np.isclose(st_.theta()[0] @ np.array([4.0, 0.0]) / (st_.theta()[0] @ np.array([4.0, 1.0])), 2 / 3)
    counts = np.empty(100_000, dtype=np.int64)
    for t in range(counts.size):
        allocate_counts(st_, rng)
        counts[t] = st_.alloc[0, 0]
    obs = np.bincount(counts, minlength=4)
    exp = stats.binom.pmf(np.arange(4), 3, 2 / 3) * counts.size
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_allocation_inadmissible_raises():
    rng = make_rng(2)
    Yd = np.array([[2, 1]])
    st_ = small_state(np.array([[2, 0]]), 2, np.ones((1, 2)), np.array([[1, 0], [1, 0]]),
                      np.ones((1, 2)), np.ones((2, 2)), rng)
    st_.S[0] = 0
    with pytest.raises(InadmissibleStateError):
        allocate_counts(st_, rng)
    assert Yd.sum() == 3


# ---------------------------------------------------------------------------
# binary switches
# ---------------------------------------------------------------------------


def _species_fixture(seed=3):
    rng = make_rng(seed)
    Yd = np.array([[2, 0], [0, 1], [3, 4]])
    Z = np.array([[1.0, 0.7], [1.0, 2.0], [1.0, 1.1]])
    G = np.array([[2.5, 0.8], [1.2, 3.0]])
    C = np.ones((3, 2), dtype=np.uint8)
    h = HyperParams(L=2)
    st_ = small_state(Yd, 2, C, np.ones((2, 2)), Z, G, rng, hypers=h, psi=0.4, nu=np.array([0.3, 0.6]))
    st_.fixed = dict(FROZEN, C=True)
    return st_, Yd, rng


def test_species_switches_match_enumeration():
    st_, Yd, rng = _species_fixture()
    theta = st_.theta()
    per_species = [species_conditional(Yd, theta, st_.G, st_.psi, st_.nu, st_.hypers, j) for j in range(2)]
    exact = np.einsum("a,b->ba", *per_species).ravel()    # index = s_0 bits + 4 * s_1 bits
    N = 100_000
    hits = np.zeros(16)
    for _ in range(N):
        sweep(st_, rng)
        hits[config_index(st_.S)] += 1
    ok, _ = within_binomial_se(hits / N, exact, N)
    assert ok.all(), (hits / N, exact)


def test_species_switch_forced_on():
    # sample 1 has only the reference active, so its positive count forces s_j0 = 1
    rng = make_rng(4)
    Yd = np.array([[0, 1], [3, 0]])
    C = np.array([[1, 1], [1, 0]])
    st_ = small_state(Yd, 2, C, np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)), rng, psi=0.01)
    st_.fixed = dict(FROZEN, C=True)
    for _ in range(500):
        sweep(st_, rng)
        assert st_.S[0, 0] == 1


def test_species_switches_psi_one():
    st_, _, rng = _species_fixture()
    st_.psi = 1.0
    for _ in range(100):
        update_species_switches(st_, rng)
        assert st_.S.all()


def test_sample_switches_match_enumeration():
    rng = make_rng(5)
    Yd = np.array([[1, 0], [0, 2], [2, 1]])
    Z = np.array([[1.0, 0.5], [1.0, 1.5], [1.0, 1.0]])
    G = np.array([[3.0, 2.0], [1.5, 2.5]])
    S = np.ones((2, 2), dtype=np.uint8)
    B = np.array([[0.0, 0.3]])
    st_ = small_state(Yd, 2, np.ones((3, 2)), S, Z, G, rng, B=B)
    st_.fixed = dict(FROZEN, S=True)
    p1 = np.full((3, 2), ndtr(0.3))
    exact = sample_conditional(Yd, Z, S, G, p1)
    N = 100_000
    hits = np.zeros(8)
    for _ in range(N):
        sweep(st_, rng)
        sweep(st_, rng)
        hits[config_index(st_.C[:, 1:])] += 1
    ok, _ = within_binomial_se(hits / N, exact, N)
    assert ok.all(), (hits / N, exact)


def test_sample_switch_saturated_probit():
    rng = make_rng(6)
    Yd = np.array([[1, 1], [2, 0]])
    st_ = small_state(Yd, 2, np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)), np.ones((2, 2)), rng,
                      B=np.array([[0.0, 40.0]]))
    for _ in range(200):
        update_sample_switches(st_, rng)
        assert st_.C[:, 1].all()


def test_sample_switch_forced_on():
    # species 1 loads only on factor 1, so sample 0 must keep it
    rng = make_rng(7)
    Yd = np.array([[0, 4], [1, 0]])
    S = np.array([[1, 1], [0, 1]])
    st_ = small_state(Yd, 2, np.ones((2, 2)), S, np.ones((2, 2)), np.ones((2, 2)), rng,
                      B=np.array([[0.0, -3.0]]))
    st_.fixed = dict(FROZEN, S=True)
    for _ in range(300):
        sweep(st_, rng)
        assert st_.C[0, 1] == 1
        assert np.all(st_.C[:, 0] == 1)


# ---------------------------------------------------------------------------
# continuous conditionals
# ---------------------------------------------------------------------------


def test_gamma_conjugate_mean():
    p = 1_000_000
    S = np.ones((p, 1), dtype=np.uint8)
    G = np.ones((p, 1))
    col_tot = np.full((p, 1), 7, dtype=np.int64)
    K.update_gamma(S, G, np.array([2.0]), col_tot, np.ones(1), 0.5, 1.0, make_rng(8))
    assert abs(G.mean() - 2.5) < 0.01
    assert abs(G.var() - 7.5 / 9) < 0.01


def test_gamma_prior_and_pseudo_prior():
    p = 200_000
    S = np.zeros((p, 2), dtype=np.uint8)
    S[:, 0] = 1
    G = np.ones((p, 2))
    K.update_gamma(S, G, np.array([1.0, 1.0]), np.zeros((p, 2), dtype=np.int64), np.ones(2), 0.5, 4.0,
                   make_rng(9))
    # active with no counts: Ga(0.5, nu + 1); inactive: Ga(1, tau0)
    assert stats.kstest(G[:, 0], stats.gamma(0.5, scale=0.5).cdf).pvalue > 0.001
    assert stats.kstest(G[:, 1], stats.gamma(1.0, scale=0.25).cdf).pvalue > 0.001


def test_u_zeta_moments():
    rng = make_rng(10)
    C = np.ones((1, 2), dtype=np.uint8)
    T = np.zeros(2)
    nact = np.zeros(2, dtype=np.int64)
    U = np.zeros(2)
    row_tot = np.zeros((1, 2), dtype=np.int64)
    fac_tot = np.array([0, 100], dtype=np.int64)
    u = np.empty(100_000)
    z = np.empty(100_000)
    for t in range(u.size):
        Z = np.array([[1.0, 50.0]])
        K.refresh_normalizers(C, Z, T, nact)
        K.update_u_zeta(C, Z, T, nact, U, row_tot, fac_tot, 1.0, 1e-8, rng)
        u[t] = U[1]
        z[t] = Z[0, 1]
        assert T[1] == Z[0, 1]
    assert abs(u.mean() - 2.0) < 0.01
    # zeta | u ~ Ga(1, 1 + u)
    assert abs(z.mean() - np.mean(1.0 / (1.0 + u))) < 0.01


def test_u_zeta_dormant_column():
    rng = make_rng(11)
    C = np.array([[1, 0], [1, 0]], dtype=np.uint8)
    Z = np.ones((2, 2))
    T, nact, U = np.zeros(2), np.zeros(2, dtype=np.int64), np.zeros(2)
    K.refresh_normalizers(C, Z, T, nact)
    draws = []
    for _ in range(50_000):
        K.update_u_zeta(C, Z, T, nact, U, np.zeros((2, 2), dtype=np.int64), np.zeros(2, dtype=np.int64),
                        1.0, 1e-8, rng)
        draws.append(Z[0, 1])
        assert np.isfinite(Z).all() and (Z > 0).all()
    # inactive entries relax to the Ga(alpha, 1) prior
    assert abs(np.mean(draws) - 1.0) < 0.03


def test_hypers_psi_counts_all_entries():
    rng = make_rng(12)
    S = np.ones((10, 2), dtype=np.uint8)
    G = np.ones((10, 2))
    psi = [K.update_hypers(S, G, np.ones(2), 0.5, 0.5, 0.5, 10.0, 10.0, rng) for _ in range(20_000)]
    assert stats.kstest(psi, stats.beta(30, 10).cdf).pvalue > 0.001


def test_hypers_nu_conjugate():
    rng = make_rng(13)
    S = np.zeros((5, 2), dtype=np.uint8)
    S[:3, 1] = 1
    G = np.ones((5, 2))
    G[:3, 1] = [1.0, 2.0, 3.0]
    G[3:, 1] = 100.0   # pseudo-prior entries must not enter
    nu = np.ones(2)
    draws = np.empty((20_000, 2))
    for t in range(draws.shape[0]):
        K.update_hypers(S, G, nu, 0.5, 0.5, 0.5, 10.0, 10.0, rng)
        draws[t] = nu
    assert stats.kstest(draws[:, 1], stats.gamma(2.0, scale=1 / 6.5).cdf).pvalue > 0.001
    # no active loadings: prior Ga(a_nu, b_nu)
    assert stats.kstest(draws[:, 0], stats.gamma(0.5, scale=2.0).cdf).pvalue > 0.001


# ---------------------------------------------------------------------------
# warm start
# ---------------------------------------------------------------------------


def test_kl_nmf_monotone():
    Y, _ = generate(SimScenario(60, 20, seed=1))
    _, _, hist = kl_nmf(Y.to_csr(), 4, iterations=100, trace=True)
    assert np.all(np.diff(hist) <= 1e-9 * np.abs(hist[:-1]))


def test_kl_nmf_rank_one_exact():
    a = np.array([1, 2, 3, 4, 5])
    b = np.array([2, 1, 3, 1])
    Y = np.outer(a, b)
    W, H, hist = kl_nmf(Y, 1, iterations=200, trace=True)
    assert hist[-1] < 1e-8
    assert np.allclose(W @ H.T, Y, rtol=1e-5)


def test_warm_start_column_sums():
    Y, _ = generate(SimScenario(40, 15, seed=2))
    phi, gamma = warm_start(Y, 4, 50)
    assert np.allclose(phi.sum(axis=0)[1:], 1.0, atol=1e-12)
    assert np.all(phi[:, 0] == 1 / 40)
    assert np.all(gamma > 0)
    # rescaling keeps the fitted mean
    W, H = kl_nmf(Y.to_csr(), 4, 50, fixed_first=1 / 40)
    assert np.allclose(phi @ gamma.T, np.maximum(W, 1e-12) @ np.maximum(H, 1e-12).T, rtol=1e-8)


def test_warm_start_rejects_empty():
    with pytest.raises(ValueError):
        kl_nmf(np.zeros((3, 3)), 2)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31), thr=st.sampled_from([0.0, 0.01, 0.2, 0.9]))
def test_initial_switches_admissible(seed, thr):
    rng = np.random.default_rng(seed)
    Yd = rng.poisson(0.7, (12, 6))
    if Yd.sum() == 0:
        Yd[0, 0] = 1
    phi, gamma = warm_start(CountMatrix.from_dense(Yd), 3, 20)
    C, S = initial_switches(Yd, phi, gamma, thr)
    assert np.all(C[:, 0] == 1)
    r, c = np.nonzero(Yd)
    assert np.all((C[r] & S[c]).any(axis=1))


def test_kl_divergence_zero_at_truth():
    W = np.array([[1.0], [2.0]])
    H = np.array([[3.0], [1.0]])
    assert abs(kl_divergence(W @ H.T, W, H)) < 1e-12


# ---------------------------------------------------------------------------
# sweeps and chains
# ---------------------------------------------------------------------------


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(3, 25), p=st.integers(2, 12), L=st.integers(2, 5),
       block=st.integers(1, 3), init=st.sampled_from(["threshold", "ones"]))
def test_sweep_invariants(seed, n, p, L, block, init):
    rng = np.random.default_rng(seed)
    Yd = rng.poisson(rng.gamma(0.5, 2.0, (n, p)))
    Yd[0, 0] += 1
    Y = CountMatrix.from_dense(Yd)
    cfg = SweepConfig(block_size=block, warm_start_iters=20, init_switches=init)
    st_ = initial_state(Y, HyperParams(L=L), rng=make_rng(seed), config=cfg)
    r = make_rng(seed, 1)
    for _ in range(15):
        sweep(st_, r)
        assert st_.check_invariants() == []
        assert np.all(st_.G > 0) and np.all(st_.nu > 0) and 0 < st_.psi < 1
        assert np.all(st_.Z > 0)
        assert np.isfinite(st_.loglik())


def test_loglik_matches_dense_formula():
    from barcode_jsdm.data_model import log_likelihood

    Y, _ = generate(SimScenario(30, 10, seed=3))
    st_ = initial_state(Y, HyperParams(L=4), rng=make_rng(0), config=SweepConfig(warm_start_iters=30))
    r = make_rng(1)
    for _ in range(5):
        sweep(st_, r)
    assert np.isclose(st_.loglik(), log_likelihood(Y, st_.mean()), rtol=1e-12)


def _tiny_fit(seed, **kw):
    Y, _ = generate(SimScenario(30, 12, seed=4))
    cfg = SweepConfig(n_burnin=20, n_samples=30, thin=3, n_chains=2, warm_start_iters=30, **kw)
    return fit(Y, None, None, HyperParams(L=3), cfg, seed=seed)


def test_fit_deterministic():
    a, b = _tiny_fit(7), _tiny_fit(7)
    c = _tiny_fit(8)
    for name in ("C", "S", "G", "Phi", "psi", "nu", "B"):
        assert np.array_equal(a.stacked(name), b.stacked(name))
    assert not np.array_equal(a.stacked("G"), c.stacked("G"))
    # chains use distinct substreams
    assert not np.array_equal(a.chains[0].G, a.chains[1].G)


def test_run_chain_without_samples():
    Y, _ = generate(SimScenario(20, 8, seed=5))
    cfg = SweepConfig(n_burnin=3, n_samples=0, thin=1, n_chains=1, warm_start_iters=10)
    d = run_chain(Y, None, None, HyperParams(L=3), cfg, make_rng(0), seed=0)
    assert d.n_draws == 0 and d.n_sweeps == 3
    assert np.isfinite(d.loglik).all()


def test_archive_shapes_and_thinning():
    a = _tiny_fit(9)
    assert a.n_chains == 2
    assert a.stacked("S").shape == (2, 10, 12, 3)
    assert a.pooled("G").shape == (20, 12, 3)
    assert a.chains[0].loglik.shape == (50,)


def test_sweep_config_validation():
    with pytest.raises(ValueError):
        SweepConfig(thin=0)
    with pytest.raises(ValueError):
        SweepConfig(n_chains=0)
    with pytest.raises(ValueError):
        SweepConfig(init_switches="random")

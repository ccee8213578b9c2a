"""Posterior summaries: convergence diagnostics, barcode clusters, regions of
common profile, fit ratios, column alignment and cross-validated prediction."""

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import ndtr

__all__ = [
    "UNDEFINED",
    "psrf",
    "psrf_elementwise",
    "psrf_table",
    "ClusterReport",
    "barcode_clusters",
    "regions_of_common_profile",
    "variance_explained",
    "align_columns",
    "agreement_score",
    "factor_moments",
    "factor_presence",
    "covariate_sign_table",
    "CVResult",
    "cv_predict",
    "predict_heldout",
]

#: marker for statistics that do not exist (zero-variance traces, constant columns)
UNDEFINED = float("nan")


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------


def psrf_elementwise(draws):
    """Potential scale reduction factor for every trailing element.

    ``draws`` has shape ``(chains, length, ...)``. Uses
    ``R = sqrt((W + (1 + 1/m) B / n) / W)`` with ``W`` the mean within-chain
    variance and ``B / n`` the variance of chain means; identical chains give
    exactly 1. Elements with ``W = 0`` are :data:`UNDEFINED`.
    """
    x = np.asarray(draws, dtype=float)
    if x.ndim < 2 or x.shape[0] < 2:
        raise ValueError("PSRF needs at least two chains")
    m, n = x.shape[:2]
    if n < 2:
        raise ValueError("PSRF needs traces of length >= 2")
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean(axis=0)
    B_over_n = means.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.sqrt((W + (1.0 + 1.0 / m) * B_over_n) / W)
    return np.where(W > 0, R, UNDEFINED)


def psrf(traces):
    """PSRF of one scalar quantity from per-chain traces (``chains x length``)."""
    x = np.asarray(traces, dtype=float)
    if x.ndim != 2:
        raise ValueError("traces must be a (chains, length) array")
    if x.shape[0] < 2:
        raise ValueError("PSRF needs at least two chains")
    if x.shape[1] < 10:
        raise ValueError("PSRF needs traces of length >= 10")
    return float(psrf_elementwise(x))


PSRF_GROUPS = ("loglik", "theta", "lambda", "G", "B", "Xi")


def psrf_table(archive, burnin=None):
    """PSRF summary per parameter group.

    The log-likelihood uses the post-burn-in part of the per-sweep trace.
    Matrix groups report the median and the 2.5% / 97.5% quantiles of the
    elementwise statistics over defined entries, with the count of undefined
    ones. Columns of ``B`` and ``Xi`` for the reference factor never move and
    are left out.
    """
    if archive.n_chains < 2:
        raise ValueError("PSRF needs at least two chains")
    if burnin is None:
        burnin = archive.config.n_burnin
    rows = []
    ll = np.stack([c.loglik[burnin:] for c in archive.chains])
    rows.append(_summary_row("loglik", psrf_elementwise(ll)))
    stacked = {
        "theta": archive.stacked("C") * archive.stacked("Phi"),
        "lambda": archive.stacked("S") * archive.stacked("G"),
        "G": archive.stacked("G"),
        "B": archive.stacked("B")[..., 1:],
        "Xi": archive.stacked("Xi")[..., 1:],
    }
    for name in PSRF_GROUPS[1:]:
        x = stacked[name]
        if x.shape[1] < 2 or x[0, 0].size == 0:
            rows.append(_summary_row(name, np.array([])))
            continue
        rows.append(_summary_row(name, psrf_elementwise(x)))
    return rows


def _summary_row(name, values):
    values = np.ravel(values)
    ok = values[np.isfinite(values)]
    row = {"group": name, "n": int(values.size), "undefined": int(values.size - ok.size)}
    if ok.size:
        row.update(median=float(np.median(ok)), q025=float(np.quantile(ok, 0.025)),
                   q975=float(np.quantile(ok, 0.975)))
    else:
        row.update(median=UNDEFINED, q025=UNDEFINED, q975=UNDEFINED)
    return row


# ---------------------------------------------------------------------------
# alignment
# ---------------------------------------------------------------------------


def _stack(A):
    if isinstance(A, (list, tuple)):
        return np.vstack([np.asarray(a, dtype=float) for a in A])
    return np.asarray(A, dtype=float)


def agreement_score(A_est, A_ref, perm=None):
    """Total agreement ``sum(1 - |est - ref|)`` over non-reference columns."""
    est, ref = _stack(A_est), _stack(A_ref)
    if perm is not None:
        est = est[:, perm]
    return float(np.sum(1.0 - np.abs(est[:, 1:] - ref[:, 1:])))


def align_columns(A_est, A_ref):
    """Column permutation matching an estimate to a reference.

    Returns ``perm`` with ``perm[0] = 0`` such that ``A_est[:, perm]`` agrees
    best with ``A_ref``. Either argument may be a list of matrices sharing the
    factor dimension (e.g. ``[C, S]``), which are aligned jointly. The
    assignment over the ``L - 1`` non-reference columns is solved exactly.
    """
    est, ref = _stack(A_est), _stack(A_ref)
    if est.shape != ref.shape:
        raise ValueError("estimate and reference must have the same shape")
    L = est.shape[1]
    if L <= 2:
        return np.arange(L)
    # score[a, b]: agreement of estimate column a with reference column b
    score = est[:, 1:].T @ ref[:, 1:] + (1.0 - est[:, 1:]).T @ (1.0 - ref[:, 1:])
    rows, cols = linear_sum_assignment(score, maximize=True)
    perm = np.empty(L, dtype=np.int64)
    perm[0] = 0
    perm[cols + 1] = rows + 1
    return perm


def _brute_force_alignment(A_est, A_ref):
    """Exhaustive search over permutations; reference oracle for small ``L``."""
    L = _stack(A_est).shape[1]
    best, best_perm = -np.inf, None
    for tail in permutations(range(1, L)):
        perm = np.array((0,) + tail)
        s = agreement_score(A_est, A_ref, perm)
        if s > best + 1e-12:
            best, best_perm = s, perm
    return best_perm


# ---------------------------------------------------------------------------
# clusters and regions
# ---------------------------------------------------------------------------


@dataclass
class ClusterReport:
    """Species clusters defined by posterior-median barcodes.

    ``labels[j]`` indexes ``barcodes``; species whose median barcode is all
    zero carry label ``-1`` and belong to no cluster.
    """

    species_barcodes: np.ndarray
    barcodes: np.ndarray
    labels: np.ndarray
    occupancy: np.ndarray
    specialist: np.ndarray
    generalist: np.ndarray
    site_labels: np.ndarray = None
    species: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def n_clusters(self):
        return int(self.barcodes.shape[0])

    def rows(self):
        out = []
        for k in range(self.n_clusters):
            members = np.flatnonzero(self.labels == k)
            names = [self.species[j] if self.species else str(j) for j in members]
            out.append({
                "cluster": k,
                "barcode": "".join(str(int(b)) for b in self.barcodes[k]),
                "occupancy": int(self.occupancy[k]),
                "specialist": bool(self.specialist[k]),
                "generalist": bool(self.generalist[k]),
                "members": names,
            })
        return out


def barcode_clusters(archive, perm=None, with_regions=True):
    """Cluster species by their posterior-median barcode.

    Clusters are the distinct nonzero barcodes, ordered lexicographically.
    A barcode is a specialist when exactly one entry is on and a generalist
    when only the reference entry is on.
    """
    S_med = archive.posterior_median_binary("S")
    if perm is not None:
        S_med = S_med[:, perm]
    nonzero = S_med.any(axis=1)
    labels = np.full(S_med.shape[0], -1, dtype=np.int64)
    if nonzero.any():
        barcodes, inv = np.unique(S_med[nonzero], axis=0, return_inverse=True)
        labels[nonzero] = np.ravel(inv)
    else:
        barcodes = np.zeros((0, S_med.shape[1]), dtype=S_med.dtype)
    occupancy = np.bincount(labels[labels >= 0], minlength=barcodes.shape[0])
    n_on = barcodes.sum(axis=1)
    specialist = n_on == 1
    generalist = (n_on == 1) & (barcodes[:, 0] == 1) if barcodes.size else np.zeros(0, bool)
    site_labels = regions_of_common_profile(archive, perm=perm) if with_regions else None
    return ClusterReport(S_med, barcodes, labels, occupancy, specialist, generalist,
                         site_labels, tuple(archive.species))


def regions_of_common_profile(archive=None, site_of=None, perm=None, theta_mean=None):
    """Dominant factor per site.

    Posterior-mean strengths ``c_il * phi_il`` are averaged over each site's
    samples and the site is labelled by the argmax over the non-reference
    factors (the reference is a constant baseline shared by every sample),
    ties going to the lowest factor index. Sites without samples get ``-1``.
    """
    if theta_mean is None:
        theta_mean = archive.theta_draws().mean(axis=0)
    theta_mean = np.asarray(theta_mean, dtype=float)
    if perm is not None:
        theta_mean = theta_mean[:, perm]
    if site_of is None:
        site_of = archive.site_of
    site_of = np.asarray(site_of, dtype=np.int64)
    m = int(site_of.max()) + 1 if site_of.size else 0
    counts = np.bincount(site_of, minlength=m).astype(float)
    sums = np.zeros((m, theta_mean.shape[1]))
    np.add.at(sums, site_of, theta_mean)
    labels = np.full(m, -1, dtype=np.int64)
    has = counts > 0
    # np.argmax returns the first maximum, which is the lowest index on ties
    labels[has] = 1 + np.argmax(sums[has, 1:] / counts[has, None], axis=1)
    return labels


# ---------------------------------------------------------------------------
# fit summaries
# ---------------------------------------------------------------------------


def _mean_draws(archive, max_draws=None):
    theta = archive.theta_draws()
    lam = archive.lam_draws()
    if max_draws is not None and theta.shape[0] > max_draws:
        idx = np.linspace(0, theta.shape[0] - 1, max_draws).round().astype(int)
        theta, lam = theta[idx], lam[idx]
    return theta, lam


def variance_explained(Y, archive, max_draws=None):
    """Posterior versus empirical marginal moments for every species.

    The posterior marginal of species ``j`` mixes over samples and draws, so
    by the law of total variance its variance is
    ``E[mu_ij] + Var(mu_ij)`` with both moments taken over ``(i, draw)``.
    Returns ``(variance_ratio, expectation_ratio)``; a ratio whose empirical
    denominator is zero is :data:`UNDEFINED`.
    """
    Yd = Y.dense() if hasattr(Y, "dense") else np.asarray(Y)
    n, p = Yd.shape
    if n < 2:
        raise ValueError("need at least two samples")
    theta, lam = _mean_draws(archive, max_draws)
    D = theta.shape[0]
    s1 = np.zeros(p)
    s2 = np.zeros(p)
    for d in range(D):
        mu = theta[d] @ lam[d].T
        s1 += mu.sum(axis=0)
        s2 += (mu * mu).sum(axis=0)
    N = float(n * D)
    e_mu = s1 / N
    var_mu = np.maximum(s2 / N - e_mu ** 2, 0.0)
    post_var = e_mu + var_mu
    emp_mean = Yd.mean(axis=0)
    emp_var = Yd.var(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        var_ratio = np.where(emp_var > 0, post_var / emp_var, UNDEFINED)
        exp_ratio = np.where(emp_mean > 0, e_mu / emp_mean, UNDEFINED)
    return var_ratio, exp_ratio


def factor_moments(archive, i):
    """Posterior mean and covariance of ``c_i * phi_i`` for sample ``i``."""
    th = archive.pooled("C")[:, i, :] * archive.pooled("Phi")[:, i, :]
    E = th.mean(axis=0)
    V = np.cov(th, rowvar=False, ddof=0) if th.shape[0] > 1 else np.zeros((th.shape[1],) * 2)
    return E, np.atleast_2d(V)


def factor_presence(archive, groups=None, perm=None):
    """Factor presence and relative strength, overall and per group.

    Returns a dict with ``presence`` (posterior-mean fraction of samples in
    which each factor is on) and ``strength`` (share of the summed strengths
    ``c_il * phi_il`` carried by each factor). With ``groups`` (e.g. years)
    both are also reported per group value under ``by_group``.
    """
    C = archive.pooled("C").astype(float)
    theta = C * archive.pooled("Phi")
    if perm is not None:
        C, theta = C[..., perm], theta[..., perm]
    c_mean = C.mean(axis=0)
    t_mean = theta.mean(axis=0)

    def summarize(rows):
        pres = c_mean[rows].mean(axis=0)
        tot = t_mean[rows].sum(axis=0)
        share = tot / tot.sum() if tot.sum() > 0 else np.full_like(tot, UNDEFINED)
        return pres, share

    out = {}
    out["presence"], out["strength"] = summarize(np.arange(c_mean.shape[0]))
    if groups is not None:
        groups = np.asarray(groups)
        out["by_group"] = {}
        for g in np.unique(groups):
            pres, share = summarize(np.flatnonzero(groups == g))
            out["by_group"][g.item() if hasattr(g, "item") else g] = {"presence": pres, "strength": share}
    return out


def covariate_sign_table(archive, threshold=0.95, perm=None):
    """Posterior sign of each covariate effect on each non-reference factor.

    Returns ``(prob_positive, sign)`` arrays of shape ``q x (L-1)``; ``sign``
    is +1 (or -1) where the posterior probability of a positive (negative)
    effect exceeds ``threshold`` and 0 elsewhere.
    """
    B = archive.pooled("B")
    if perm is not None:
        B = B[..., perm]
    prob_pos = (B[..., 1:] > 0).mean(axis=0)
    prob_neg = (B[..., 1:] < 0).mean(axis=0)
    sign = np.where(prob_pos > threshold, 1, np.where(prob_neg > threshold, -1, 0))
    return prob_pos, sign


# ---------------------------------------------------------------------------
# cross-validated prediction
# ---------------------------------------------------------------------------


@dataclass
class CVResult:
    rmse: np.ndarray
    folds: list
    predictions: list
    bounds: np.ndarray

    @property
    def mean_rmse(self):
        return float(np.mean(self.rmse))

    @property
    def all_finite(self):
        return all(np.all(np.isfinite(P)) for P in self.predictions)


def predict_heldout(archive, X_new, site_new=None, n_train=None):
    """Posterior-predictive mean counts for unseen samples.

    Factor presence comes from the probit layer, ``Pr(c_il = 1) =
    Phi_N(x_i' beta_l + xi_l)`` averaged over draws, with the spatial effect
    taken at the sample's training site (``site_new[i] >= 0``) and set to its
    prior mean 0 otherwise. A present factor contributes ``lambda_jl`` spread
    evenly over the active training samples of that draw; the reference
    factor contributes ``lambda_j0 / n_train``.

    Returns ``(prediction, bound)`` where ``bound`` is the structural maximum
    ``max_j sum_l lambda_jl * max_i theta_il`` averaged over draws.
    """
    X_new = np.asarray(getattr(X_new, "X", X_new), dtype=float)
    C = archive.pooled("C")
    lam = archive.lam_draws()
    theta = archive.theta_draws()
    B = archive.pooled("B")
    Xi = archive.pooled("Xi")
    D, n, L = C.shape
    if n_train is None:
        n_train = n
    n_new = X_new.shape[0]
    if site_new is None:
        site_new = np.full(n_new, -1)
    site_new = np.asarray(site_new, dtype=np.int64)
    known = site_new >= 0
    pred = np.zeros((n_new, lam.shape[1]))
    bound = 0.0
    for d in range(D):
        eta = X_new @ B[d]
        if Xi.shape[1] and known.any():
            eta[known] += Xi[d][site_new[known]]
        prob = ndtr(eta)
        n_act = C[d].sum(axis=0).astype(float)
        w = np.where(n_act > 0, prob / np.maximum(n_act, 1.0), 0.0)
        w[:, 0] = 1.0 / n_train
        pred += w @ lam[d].T
        bound += np.max(lam[d] @ theta[d].max(axis=0))
    return pred / D, bound / D


def cv_predict(Y, X=None, geometry=None, hypers=None, config=None, folds=3, seed=0):
    """Row-wise ``folds``-fold cross-validated RMSE.

    Samples are split into folds at random; each fold is predicted from a fit
    to the others with :func:`predict_heldout`, and the RMSE is taken over
    every held-out cell, zeros included.
    """
    from .distributions import make_rng
    from .gibbs import fit
    from .latent_regression import SiteGeometry

    if folds < 2:
        raise ValueError("need at least two folds")
    n = Y.n
    Xm = np.ones((n, 1)) if X is None else np.asarray(getattr(X, "X", X), dtype=float)
    order = make_rng(seed, 10_000).permutation(n)
    parts = np.array_split(order, folds)
    Yd = Y.dense()
    rmse, preds, bounds = [], [], []
    for k in range(folds):
        test = np.sort(parts[k])
        train = np.sort(np.concatenate([parts[t] for t in range(folds) if t != k]))
        Y_tr, sites_tr = Y.subset_rows(train)
        geo_tr = None
        if geometry is not None:
            geo_tr = SiteGeometry(geometry.coords[sites_tr], Y_tr.site_of)
        archive = fit(Y_tr, Xm[train], geo_tr, hypers, config, seed=seed + k)
        # held-out samples at a training site reuse that site's effect
        lookup = {s: t for t, s in enumerate(sites_tr)}
        site_new = np.array([lookup.get(s, -1) for s in Y.site_of[test]], dtype=np.int64)
        P, bound = predict_heldout(archive, Xm[test], site_new, n_train=train.size)
        preds.append(P)
        bounds.append(bound)
        rmse.append(float(np.sqrt(np.mean((Yd[test] - P) ** 2))))
    return CVResult(np.array(rmse), [np.sort(p) for p in parts], preds, np.array(bounds))

"""Compiled sweep kernels.

All kernels iterate over stored nonzeros only; sample-side arrays are
touched O(n L) times per sweep. Kernels mutate their array arguments in
place and return a negative code when a block has no admissible
configuration.
"""

import math

import numba as nb
import numpy as np

from ..distributions import _nb_gamma, _nb_log_categorical, _nb_multinomial

NEG_INF = -np.inf


@nb.njit(cache=True)
def _shuffle(arr, rng):
    for t in range(arr.shape[0] - 1, 0, -1):
        k = int(rng.random() * (t + 1))
        if k > t:
            k = t
        tmp = arr[t]
        arr[t] = arr[k]
        arr[k] = tmp


@nb.njit(cache=True)
def theta_matrix(C, Z, T, nact):
    """Sample factors ``c_il * phi_il`` from the auxiliary parametrization."""
    n, L = C.shape
    theta = np.zeros((n, L))
    inv_n = 1.0 / n
    for i in range(n):
        theta[i, 0] = inv_n
        for l in range(1, L):
            if C[i, l] != 0 and nact[l] > 0:
                theta[i, l] = Z[i, l] / T[l]
    return theta


@nb.njit(cache=True)
def refresh_normalizers(C, Z, T, nact):
    n, L = C.shape
    for l in range(L):
        s = 0.0
        k = 0
        for i in range(n):
            if C[i, l] != 0:
                s += Z[i, l]
                k += 1
        T[l] = s
        nact[l] = k
    T[0] = 1.0
    nact[0] = n


@nb.njit(cache=True)
def _realloc_cell(pos, i, j, y, theta, S, G, alloc, row_tot, col_tot, fac_tot, w, cnt, rng):
    L = theta.shape[1]
    tot = 0.0
    for l in range(L):
        old = alloc[pos, l]
        row_tot[i, l] -= old
        col_tot[j, l] -= old
        fac_tot[l] -= old
        if S[j, l] != 0:
            w[l] = theta[i, l] * G[j, l]
        else:
            w[l] = 0.0
        tot += w[l]
    if not tot > 0.0:
        return False
    _nb_multinomial(y, w, cnt, rng)
    for l in range(L):
        alloc[pos, l] = cnt[l]
        row_tot[i, l] += cnt[l]
        col_tot[j, l] += cnt[l]
        fac_tot[l] += cnt[l]
    return True


@nb.njit(cache=True)
def allocate_all(indptr, indices, yint, theta, S, G, alloc, row_tot, col_tot, fac_tot, rng):
    """Multinomial thinning of every stored count into factor-specific counts."""
    n, L = theta.shape
    row_tot[:, :] = 0
    col_tot[:, :] = 0
    fac_tot[:] = 0
    w = np.empty(L)
    cnt = np.zeros(L, dtype=np.int64)
    for i in range(n):
        for pos in range(indptr[i], indptr[i + 1]):
            j = indices[pos]
            tot = 0.0
            for l in range(L):
                w[l] = theta[i, l] * G[j, l] if S[j, l] != 0 else 0.0
                tot += w[l]
            if not tot > 0.0:
                return -(pos + 1)
            _nb_multinomial(yint[pos], w, cnt, rng)
            for l in range(L):
                alloc[pos, l] = cnt[l]
                row_tot[i, l] += cnt[l]
                col_tot[j, l] += cnt[l]
                fac_tot[l] += cnt[l]
    return 0


@nb.njit(cache=True)
def _column_means(start, mj, crow, theta, s, g, mu):
    """Fill ``mu[k]`` with the mean of the ``k``-th stored cell of a column."""
    L = theta.shape[1]
    for k in range(mj):
        i = crow[start + k]
        acc = 0.0
        for l in range(L):
            if s[l]:
                acc += theta[i, l] * g[l]
        mu[k] = acc


@nb.njit(cache=True)
def _slab_flips(j, start, mj, crow, c2r, yint, theta, S, G, nu, log_psi, log_1m, a_gamma,
                tau0, colact, order, mu, rng):
    """Metropolis-Hastings flips of each ``s_jl`` with a fresh strength.

    Switching on draws the strength from its slab ``Ga(a_gamma, nu_l)``,
    switching off from the pseudo-prior ``Ga(1, tau0)``. Both densities
    cancel against the target, leaving prior odds times the likelihood ratio
    of column ``j``. This lets a weakly supported loading whose strength has
    drifted far above the pseudo-prior switch off. ``mu`` is scratch space
    holding the current cell means, updated one factor at a time.
    """
    L = theta.shape[1]
    _column_means(start, mj, crow, theta, S[j], G[j], mu)
    for t in range(L):
        l = order[t]
        if S[j, l]:
            g_new = _nb_gamma(1.0, tau0, rng)
            d_old, d_new = G[j, l], 0.0
            log_acc = log_1m - log_psi
        else:
            g_new = _nb_gamma(a_gamma, nu[l], rng)
            d_old, d_new = 0.0, g_new
            log_acc = log_psi - log_1m
        if not g_new > 0.0:
            continue
        # likelihood ratio: only factor l's contribution to each cell moves
        log_acc -= (d_new - d_old) * colact[l]
        ok = True
        for k in range(mj):
            m_new = mu[k] + theta[crow[start + k], l] * (d_new - d_old)
            if not m_new > 0.0:
                ok = False
                break
            log_acc += yint[c2r[start + k]] * math.log(m_new / mu[k])
        if ok and (log_acc >= 0.0 or math.log(rng.random()) < log_acc):
            for k in range(mj):
                mu[k] += theta[crow[start + k], l] * (d_new - d_old)
            S[j, l] = 1 - S[j, l]
            G[j, l] = g_new


@nb.njit(cache=True)
def species_switches(cptr, crow, c2r, yint, theta, S, G, nu, psi, a_gamma, tau0,
                     block_size, alloc, row_tot, col_tot, fac_tot, rng, slab_flips=True):
    """Blocked update of every species barcode, then re-thinning of its column.

    The weight of a block configuration is the switch prior, the density of
    the current strength under its slab (active) or pseudo-prior (inactive),
    and the Poisson likelihood of column ``j`` with allocations marginalized.
    With ``slab_flips`` each switch then also gets a Metropolis-Hastings flip
    that redraws its strength (see ``_slab_flips``).
    """
    n, L = theta.shape
    p = S.shape[0]
    colact = np.zeros(L)
    for l in range(L):
        for i in range(n):
            if theta[i, l] > 0.0:
                colact[l] = 1.0
                break
    log_psi = math.log(psi) if psi > 0.0 else NEG_INF
    log_1m = math.log1p(-psi) if psi < 1.0 else NEG_INF
    maxnz = 0
    for j in range(p):
        if cptr[j + 1] - cptr[j] > maxnz:
            maxnz = cptr[j + 1] - cptr[j]
    base = np.empty(maxnz)
    perm = np.arange(L)
    inblk = np.zeros(L, dtype=np.bool_)
    logw = np.empty(1 << block_size)
    contrib = np.empty(block_size)
    blk_l = np.zeros(block_size, dtype=np.int64)
    w = np.empty(L)
    cnt = np.zeros(L, dtype=np.int64)
    cell_mu = np.empty(maxnz)
    # prior and strength-density terms of each switch, on and off
    lw_on = np.empty(L)
    lw_off = np.empty(L)
    lg_slab = math.lgamma(a_gamma)
    log_nu = np.log(nu)
    log_tau0 = math.log(tau0)
    for j in range(p):
        for l in range(L):
            x = G[j, l]
            lx = math.log(x)
            lw_on[l] = (log_psi + a_gamma * log_nu[l] + (a_gamma - 1.0) * lx - nu[l] * x - lg_slab
                        - x * colact[l])
            lw_off[l] = log_1m + log_tau0 - tau0 * x
        _shuffle(perm, rng)
        start = cptr[j]
        mj = cptr[j + 1] - start
        for b0 in range(0, L, block_size):
            b1 = min(b0 + block_size, L)
            nbk = b1 - b0
            for t in range(b0, b1):
                inblk[perm[t]] = True
            for k in range(mj):
                i = crow[start + k]
                acc = 0.0
                for l in range(L):
                    if not inblk[l] and S[j, l] != 0:
                        acc += theta[i, l] * G[j, l]
                base[k] = acc
            ncfg = 1 << nbk
            for cfg in range(ncfg):
                lw = 0.0
                for t in range(nbk):
                    l = perm[b0 + t]
                    if (cfg >> t) & 1:
                        lw += lw_on[l]
                    else:
                        lw += lw_off[l]
                logw[cfg] = lw
            for t in range(nbk):
                blk_l[t] = perm[b0 + t]
            for k in range(mj):
                i = crow[start + k]
                for t in range(nbk):
                    contrib[t] = theta[i, blk_l[t]] * G[j, blk_l[t]]
                y = yint[c2r[start + k]]
                for cfg in range(ncfg):
                    if logw[cfg] == NEG_INF:
                        continue
                    mu = base[k]
                    for t in range(nbk):
                        if (cfg >> t) & 1:
                            mu += contrib[t]
                    if mu > 0.0:
                        logw[cfg] += y * math.log(mu)
                    else:
                        logw[cfg] = NEG_INF
            choice = _nb_log_categorical(logw[:ncfg], rng)
            if choice < 0:
                return -(j + 1)
            for t in range(nbk):
                l = perm[b0 + t]
                S[j, l] = (choice >> t) & 1
                inblk[l] = False
        if slab_flips:
            _shuffle(perm, rng)
            _slab_flips(j, start, mj, crow, c2r, yint, theta, S, G, nu, log_psi, log_1m,
                        a_gamma, tau0, colact, perm, cell_mu, rng)
        for k in range(mj):
            pos = c2r[start + k]
            if not _realloc_cell(pos, crow[start + k], j, yint[pos], theta, S, G,
                                 alloc, row_tot, col_tot, fac_tot, w, cnt, rng):
                return -(j + 1)
    return 0


@nb.njit(cache=True)
def sample_switches(indptr, indices, yint, C, Z, T, nact, S, G, logp1, logp0,
                    block_size, alloc, row_tot, col_tot, fac_tot, rng):
    """Blocked update of every non-reference sample barcode.

    Row ``i``'s allocation is marginalized while the other rows' allocations
    are held fixed. Flipping ``c_il`` renormalizes column ``l``; its effect on
    the other rows enters exactly through ``-y_{..l}^{(-i)} log T_l``, so the
    cost per row is proportional to that row's nonzeros.
    """
    n, L = C.shape
    p = S.shape[0]
    inv_n = 1.0 / n
    lam = np.zeros((p, L))
    Lam = np.zeros(L)
    for j in range(p):
        for l in range(L):
            if S[j, l] != 0:
                lam[j, l] = G[j, l]
                Lam[l] += G[j, l]
    maxnz = 0
    for i in range(n):
        if indptr[i + 1] - indptr[i] > maxnz:
            maxnz = indptr[i + 1] - indptr[i]
    base = np.empty(maxnz)
    nf = L - 1
    perm = np.arange(1, L)
    inblk = np.zeros(L, dtype=np.bool_)
    logw = np.empty(1 << block_size)
    Tcfg = np.empty((1 << block_size, block_size))
    w = np.empty(L)
    cnt = np.zeros(L, dtype=np.int64)
    theta_row = np.empty((1, L))
    for i in range(n):
        _shuffle(perm, rng)
        start = indptr[i]
        mi = indptr[i + 1] - start
        for b0 in range(0, nf, block_size):
            b1 = min(b0 + block_size, nf)
            nbk = b1 - b0
            for t in range(b0, b1):
                inblk[perm[t]] = True
            for k in range(mi):
                j = indices[start + k]
                acc = inv_n * lam[j, 0]
                for l in range(1, L):
                    if not inblk[l] and C[i, l] != 0 and nact[l] > 0:
                        acc += Z[i, l] / T[l] * lam[j, l]
                base[k] = acc
            ncfg = 1 << nbk
            for cfg in range(ncfg):
                lw = 0.0
                for t in range(nbk):
                    l = perm[b0 + t]
                    bit = (cfg >> t) & 1
                    cur = 1 if C[i, l] != 0 else 0
                    na = nact[l] - cur + bit
                    lw += logp1[i, l] if bit else logp0[i, l]
                    y_other = fac_tot[l] - row_tot[i, l]
                    if na > 0:
                        if na == 1 and bit:
                            tn = Z[i, l]
                        else:
                            tn = T[l] - cur * Z[i, l] + bit * Z[i, l]
                        Tcfg[cfg, t] = tn
                        lw -= y_other * math.log(tn) + Lam[l]
                    else:
                        Tcfg[cfg, t] = 0.0
                        if y_other > 0:
                            lw = NEG_INF
                logw[cfg] = lw
            for k in range(mi):
                j = indices[start + k]
                y = yint[start + k]
                for cfg in range(ncfg):
                    if logw[cfg] == NEG_INF:
                        continue
                    mu = base[k]
                    for t in range(nbk):
                        if (cfg >> t) & 1:
                            mu += Z[i, perm[b0 + t]] / Tcfg[cfg, t] * lam[j, perm[b0 + t]]
                    if mu > 0.0:
                        logw[cfg] += y * math.log(mu)
                    else:
                        logw[cfg] = NEG_INF
            choice = _nb_log_categorical(logw[:ncfg], rng)
            if choice < 0:
                return -(i + 1)
            for t in range(nbk):
                l = perm[b0 + t]
                bit = (choice >> t) & 1
                cur = 1 if C[i, l] != 0 else 0
                if bit != cur:
                    nact[l] += bit - cur
                    if nact[l] == 0:
                        T[l] = 0.0
                    elif nact[l] == 1 and bit:
                        T[l] = Z[i, l]
                    else:
                        T[l] = T[l] + (bit - cur) * Z[i, l]
                    C[i, l] = bit
                inblk[l] = False
        # re-thin row i under its new barcode
        theta_row[0, 0] = inv_n
        for l in range(1, L):
            theta_row[0, l] = Z[i, l] / T[l] if (C[i, l] != 0 and nact[l] > 0) else 0.0
        for k in range(mi):
            pos = start + k
            j = indices[pos]
            tot = 0.0
            for l in range(L):
                old = alloc[pos, l]
                row_tot[i, l] -= old
                col_tot[j, l] -= old
                fac_tot[l] -= old
                w[l] = theta_row[0, l] * lam[j, l]
                tot += w[l]
            if not tot > 0.0:
                return -(i + 1)
            _nb_multinomial(yint[pos], w, cnt, rng)
            for l in range(L):
                alloc[pos, l] = cnt[l]
                row_tot[i, l] += cnt[l]
                col_tot[j, l] += cnt[l]
                fac_tot[l] += cnt[l]
    return 0


@nb.njit(cache=True)
def update_gamma(S, G, nu, col_tot, colact, a_gamma, tau0, rng):
    p, L = S.shape
    for j in range(p):
        for l in range(L):
            if S[j, l] != 0:
                G[j, l] = _nb_gamma(a_gamma + col_tot[j, l], nu[l] + colact[l], rng)
            else:
                G[j, l] = _nb_gamma(1.0, tau0, rng)


@nb.njit(cache=True)
def update_u_zeta(C, Z, T, nact, U, row_tot, fac_tot, alpha, shape_floor, rng):
    n, L = C.shape
    for l in range(1, L):
        if nact[l] > 0:
            U[l] = _nb_gamma(max(float(fac_tot[l]), shape_floor), T[l], rng)
        else:
            U[l] = 0.0
        for i in range(n):
            rate = 1.0 + U[l] if C[i, l] != 0 else 1.0
            z = _nb_gamma(alpha + row_tot[i, l], rate, rng)
            Z[i, l] = z if z > 0.0 else 5e-324
    U[0] = 0.0
    refresh_normalizers(C, Z, T, nact)


@nb.njit(cache=True)
def update_hypers(S, G, nu, a_gamma, a_nu, b_nu, psi_a, psi_b, rng):
    p, L = S.shape
    ones = 0
    for l in range(L):
        k = 0
        s = 0.0
        for j in range(p):
            if S[j, l] != 0:
                k += 1
                s += G[j, l]
        ones += k
        nu[l] = _nb_gamma(a_nu + a_gamma * k, b_nu + s, rng)
    x = _nb_gamma(psi_a + ones, 1.0, rng)
    y = _nb_gamma(psi_b + (p * L - ones), 1.0, rng)
    return x / (x + y)


@nb.njit(cache=True)
def loglik_sparse(indptr, indices, yint, lgy, theta, S, G):
    """Poisson log-likelihood over nonzeros plus the closed-form mean total."""
    n, L = theta.shape
    p = S.shape[0]
    ll = 0.0
    for i in range(n):
        for pos in range(indptr[i], indptr[i + 1]):
            j = indices[pos]
            mu = 0.0
            for l in range(L):
                if S[j, l] != 0:
                    mu += theta[i, l] * G[j, l]
            if not mu > 0.0:
                return NEG_INF
            ll += yint[pos] * math.log(mu) - lgy[pos]
    colsum = np.zeros(L)
    for i in range(n):
        for l in range(L):
            colsum[l] += theta[i, l]
    for j in range(p):
        for l in range(L):
            if S[j, l] != 0:
                ll -= G[j, l] * colsum[l]
    return ll

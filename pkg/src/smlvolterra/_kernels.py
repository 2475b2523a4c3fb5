"""Compiled inner loops for the adaptive filters.

Every routine works on one realization at a time so its floating-point
result never depends on how realizations are batched or scheduled.
"""
import numpy as np
from numba import njit

DIVERGENCE_LIMIT = 1e10

PLANT_RANK_ONE = 0
PLANT_DENSE = 1
PLANT_PROBE = 2  # EMSE averaged over a fixed set of probe regressors

VARIANT_VOLTERRA = 0
VARIANT_DIAGONAL = 1  # PF is D = 1


@njit(cache=True, nogil=True, inline="always")
def sml_step(factors, U, dwin, n, head, mu, max_thr, ewin, ywin, yp_cur, z, delta, normal):
    """One SML-(TRUE-)LMS update over the ``n`` newest rows of the ring buffers.

    ``U``/``dwin`` are ring buffers of length ``L``; ``head`` is the row of the
    newest sample.  Errors are recomputed with the current factors for the
    whole window.  Fills ``ewin``/``ywin`` newest first and ``yp_cur`` with the
    current partial products; ``z`` (K), ``delta`` (K, M) and ``normal`` (K,
    bool) are scratch.  Returns ``True`` when the update would leave the
    factors non-finite or above the divergence limit; the factors are then
    left untouched.
    """
    K, M = factors.shape
    L = U.shape[0]
    for s in range(K):
        for m in range(M):
            delta[s, m] = 0.0
    for jj in range(n):
        row = head - jj
        if row < 0:
            row += L
        for s in range(K):
            acc = 0.0
            for m in range(M):
                acc += U[row, m] * factors[s, m]
            z[s] = acc
        y = 1.0
        for s in range(K):
            y *= z[s]
        e = dwin[row] - y
        ewin[jj] = e
        ywin[jj] = y
        for s in range(K):
            yp = 1.0
            for t in range(K):
                if t != s:
                    yp *= z[t]
            if jj == 0:
                yp_cur[s] = yp
                normal[s] = abs(yp) <= max_thr
            c = e * yp if normal[s] else e
            for m in range(M):
                delta[s, m] += c * U[row, m]
    scale = mu / n
    if not np.isfinite(ywin[0]):
        return True
    for s in range(K):
        for m in range(M):
            delta[s, m] = factors[s, m] + scale * delta[s, m]
            if not (abs(delta[s, m]) <= DIVERGENCE_LIMIT):
                return True
    for s in range(K):
        for m in range(M):
            factors[s, m] = delta[s, m]
    return False


@njit(cache=True, nogil=True)
def hafnian_sum(gram, pairs):
    total = 0.0
    for p in range(pairs.shape[0]):
        prod = 1.0
        for q in range(pairs.shape[1]):
            prod *= gram[pairs[p, q, 0], pairs[p, q, 1]]
        total += prod
    return total


@njit(cache=True, nogil=True)
def gram_blocks(a, b, out):
    """``out[i, j] = a_i . b_j`` for the rows of two ``(K, M)`` arrays."""
    K, M = a.shape
    for i in range(K):
        for j in range(K):
            acc = 0.0
            for m in range(M):
                acc += a[i, m] * b[j, m]
            out[i, j] = acc


@njit(cache=True, nogil=True)
def self_gram(a, out):
    K, M = a.shape
    for i in range(K):
        for j in range(i, K):
            acc = 0.0
            for m in range(M):
                acc += a[i, m] * a[j, m]
            out[i, j] = acc
            out[j, i] = acc


@njit(cache=True, nogil=True)
def block_hafnian(top, cross, bottom, pairs):
    """Hafnian of the Gram matrix of ``[a; b]`` given its ``K x K`` blocks.

    ``top = a a^T``, ``cross = a b^T``, ``bottom = b b^T``; pairs are
    ordered ``i < j``.
    """
    K = top.shape[0]
    total = 0.0
    for p in range(pairs.shape[0]):
        prod = 1.0
        for q in range(pairs.shape[1]):
            i = pairs[p, q, 0]
            j = pairs[p, q, 1]
            if j < K:
                prod *= top[i, j]
            elif i < K:
                prod *= cross[i, j - K]
            else:
                prod *= bottom[i - K, j - K]
        total += prod
    return total


@njit(cache=True, nogil=True)
def contract_dense(p, factors, work):
    """``p . (w_1 (x) ... (x) w_K)`` for a flat row-major ``p``.

    ``work`` needs ``M**(K-1)`` entries (at least one).
    """
    K, M = factors.shape
    size = p.shape[0] // M
    for a in range(size):
        acc = 0.0
        for m in range(M):
            acc += p[a * M + m] * factors[K - 1, m]
        work[a] = acc
    for s in range(K - 2, -1, -1):
        size //= M
        # reads of row a touch indices >= a * M >= a, so the contraction can run in place
        for a in range(size):
            acc = 0.0
            for m in range(M):
                acc += work[a * M + m] * factors[s, m]
            work[a] = acc
    return work[0]


@njit(cache=True, nogil=True)
def probe_sml_emse(factors, probes, probe_out):
    K, M = factors.shape
    total = 0.0
    for r in range(probes.shape[0]):
        y = 1.0
        for s in range(K):
            acc = 0.0
            for m in range(M):
                acc += probes[r, m] * factors[s, m]
            y *= acc
        diff = probe_out[r] - y
        total += diff * diff
    return total / probes.shape[0]


@njit(cache=True, nogil=True, inline="always")
def rank_one_emse_order2(factors, wo, c0):
    """Second-order rank-one EMSE in one pass over the taps.

    With ``u ~ N(0, I)``, ``E[(a.u)(b.u)(c.u)(d.u)] = (ab)(cd) + (ac)(bd) + (ad)(bc)``.
    """
    M = factors.shape[1]
    f11 = 0.0
    f22 = 0.0
    f12 = 0.0
    o1f1 = 0.0
    o1f2 = 0.0
    o2f1 = 0.0
    o2f2 = 0.0
    o12 = 0.0
    for m in range(M):
        a = factors[0, m]
        b = factors[1, m]
        p = wo[0, m]
        q = wo[1, m]
        f11 += a * a
        f22 += b * b
        f12 += a * b
        o1f1 += p * a
        o1f2 += p * b
        o2f1 += q * a
        o2f2 += q * b
        o12 += p * q
    qww = f11 * f22 + 2.0 * f12 * f12
    cross = o12 * f12 + o1f1 * o2f2 + o1f2 * o2f1
    return c0 - 2.0 * cross + qww


@njit(cache=True, nogil=True)
def rank_one_emse(factors, wo, woo, c0, pairs, ff, of):
    """Rank-one plant, any order: hafnians over the Gram blocks of ``[W_o; W]``."""
    self_gram(factors, ff)
    gram_blocks(wo, factors, of)
    return c0 - 2.0 * block_hafnian(woo, of, ff, pairs) + block_hafnian(ff, ff, ff, pairs)


@njit(cache=True, nogil=True)
def dense_plant_emse(factors, p, c0, pairs, ff, work):
    """Dense plant with precomputed cross-correlation ``p = R vec(W_o)``."""
    self_gram(factors, ff)
    return c0 - 2.0 * contract_dense(p, factors, work) + block_hafnian(ff, ff, ff, pairs)


EMSE_ORDER2 = 0
EMSE_RANK_ONE = 1
EMSE_DENSE = 2
EMSE_PROBE = 3


@njit(cache=True, nogil=True)
def emse_kind(plant_mode, order):
    if plant_mode == PLANT_PROBE:
        return EMSE_PROBE
    if plant_mode == PLANT_DENSE:
        return EMSE_DENSE
    return EMSE_ORDER2 if order == 2 else EMSE_RANK_ONE


@njit(cache=True, nogil=True)
def sml_emse(factors, plant_mode, wo, p, c0, pairs, probes, probe_out):
    """Excess MSE ``E|u^{(x)K}(W_o - W)|^2`` of rank-one factors, white Gaussian input.

    Allocating convenience wrapper; ``run_sml`` calls the specialised routines
    directly.
    """
    K, M = factors.shape
    kind = emse_kind(plant_mode, K)
    if kind == EMSE_PROBE:
        return probe_sml_emse(factors, probes, probe_out)
    if kind == EMSE_ORDER2:
        return rank_one_emse_order2(factors, wo, c0)
    ff = np.zeros((K, K))
    if kind == EMSE_DENSE:
        return dense_plant_emse(factors, p, c0, pairs, ff, np.zeros(max(1, M ** (K - 1))))
    woo = np.zeros((K, K))
    self_gram(wo, woo)
    return rank_one_emse(factors, wo, woo, c0, pairs, ff, np.zeros((K, K)))


@njit(cache=True, nogil=True)
def run_sml(u, d, factors, mu, max_thr, window, plant_mode, wo, p, c0, pairs,
            probes, probe_out, track_emse, y_out, e_out, emse_out):
    """Adapt over the whole record; returns the divergence index or -1.

    ``emse_out[i]`` is the a-priori excess MSE of the factors used at time
    ``i``.  After divergence the remaining outputs are NaN and the factors
    stay at their last value.
    """
    K, M = factors.shape
    n_samples = u.shape[0]
    x = np.zeros(M)
    U = np.zeros((window, M))
    dwin = np.zeros(window)
    ewin = np.zeros(window)
    ywin = np.zeros(window)
    yp_cur = np.zeros(K)
    z = np.zeros(K)
    delta = np.zeros((K, M))
    normal = np.zeros(K, dtype=np.bool_)
    ff = np.zeros((K, K))
    of = np.zeros((K, K))
    woo = np.zeros((K, K))
    work = np.zeros(max(1, M ** (K - 1)) if plant_mode == PLANT_DENSE else 1)
    kind = emse_kind(plant_mode, K)
    if kind == EMSE_RANK_ONE:
        self_gram(wo, woo)
    head = -1
    for i in range(n_samples):
        for m in range(M - 1, 0, -1):
            x[m] = x[m - 1]
        x[0] = u[i]
        head = (head + 1) % window
        for m in range(M):
            U[head, m] = x[m]
        dwin[head] = d[i]
        n = min(i + 1, window)
        if not track_emse:
            emse_out[i] = np.nan
        elif kind == EMSE_ORDER2:
            emse_out[i] = rank_one_emse_order2(factors, wo, c0)
        elif kind == EMSE_RANK_ONE:
            emse_out[i] = rank_one_emse(factors, wo, woo, c0, pairs, ff, of)
        elif kind == EMSE_DENSE:
            emse_out[i] = dense_plant_emse(factors, p, c0, pairs, ff, work)
        else:
            emse_out[i] = probe_sml_emse(factors, probes, probe_out)
        diverged = sml_step(factors, U, dwin, n, head, mu, max_thr, ewin, ywin, yp_cur,
                            z, delta, normal)
        y_out[i] = ywin[0]
        e_out[i] = ewin[0]
        if diverged:
            for j in range(i + 1, n_samples):
                y_out[j] = np.nan
                e_out[j] = np.nan
                emse_out[j] = np.nan
            return i
    return -1


@njit(cache=True, nogil=True)
def regressor(x, variant, order, diagonals, out):
    """Fill ``out`` with the linear-in-parameters regressor of ``x``."""
    M = x.shape[0]
    if variant == VARIANT_VOLTERRA:
        size = 1
        out[0] = 1.0
        for _ in range(order):
            for a in range(size - 1, -1, -1):
                base = out[a]
                for m in range(M - 1, -1, -1):
                    out[a * M + m] = base * x[m]
            size *= M
    else:
        for dd in range(diagonals):
            for i in range(M):
                out[dd * M + i] = x[i] * x[i + dd] if i + dd < M else 0.0


@njit(cache=True, nogil=True)
def linear_step(coeffs, xr, dval, mu):
    y = 0.0
    for a in range(coeffs.shape[0]):
        y += coeffs[a] * xr[a]
    e = dval - y
    c = mu * e
    if not np.isfinite(y):
        return y, e, True
    for a in range(coeffs.shape[0]):
        if not (abs(coeffs[a] + c * xr[a]) <= DIVERGENCE_LIMIT):
            return y, e, True
    for a in range(coeffs.shape[0]):
        coeffs[a] += c * xr[a]
    return y, e, False


@njit(cache=True, nogil=True)
def embed_dense(coeffs, variant, M, out):
    """Write the coefficient vector of a linear filter as a flat dense kernel."""
    if variant == VARIANT_VOLTERRA:
        for a in range(out.shape[0]):
            out[a] = coeffs[a]
    else:
        out[:] = 0.0
        D = coeffs.shape[0] // M
        for dd in range(D):
            for i in range(M - dd):
                out[i * M + i + dd] = coeffs[dd * M + i]


@njit(cache=True, nogil=True)
def dense_emse(v, M, order, R):
    """``v^T R_{u^K} v``; order 2 uses the closed form with no ``M**4`` work."""
    if order == 2:
        tr = 0.0
        for i in range(M):
            tr += v[i * M + i]
        s1 = 0.0
        s2 = 0.0
        for i in range(M):
            for j in range(M):
                vij = v[i * M + j]
                s1 += vij * vij
                s2 += vij * v[j * M + i]
        return tr * tr + s1 + s2
    total = 0.0
    n = v.shape[0]
    for a in range(n):
        acc = 0.0
        for b in range(n):
            acc += R[a, b] * v[b]
        total += v[a] * acc
    return total


@njit(cache=True, nogil=True)
def run_linear(u, d, coeffs, mu, variant, order, M, diagonals, wo_dense, R,
               track_emse, y_out, e_out, emse_out):
    size = wo_dense.shape[0]
    n_samples = u.shape[0]
    x = np.zeros(M)
    xr = np.zeros(coeffs.shape[0])
    dense = np.zeros(size)
    diff = np.zeros(size)
    for i in range(n_samples):
        for m in range(M - 1, 0, -1):
            x[m] = x[m - 1]
        x[0] = u[i]
        if track_emse:
            embed_dense(coeffs, variant, M, dense)
            for a in range(size):
                diff[a] = wo_dense[a] - dense[a]
            emse_out[i] = dense_emse(diff, M, order, R)
        else:
            emse_out[i] = np.nan
        regressor(x, variant, order, diagonals, xr)
        y, e, diverged = linear_step(coeffs, xr, d[i], mu)
        y_out[i] = y
        e_out[i] = e
        if diverged:
            for j in range(i + 1, n_samples):
                y_out[j] = np.nan
                e_out[j] = np.nan
                emse_out[j] = np.nan
            return i
    return -1


@njit(cache=True, nogil=True)
def chaos_run(mu, transient, samples, gain, w1_out, e_out):
    """Unstabilized SML-LMS with ``K = 2``, ``M = 1``, ``u = 1``, ``d = gain``.

    Starts from ``(1, 0)``, runs ``transient`` updates, then records ``w_1``
    and the a-priori error for ``samples`` more.  Returns the divergence index
    (counted from the first update) or -1.
    """
    factors = np.zeros((2, 1))
    factors[0, 0] = 1.0
    U = np.ones((1, 1))
    dwin = np.full(1, gain)
    ewin = np.zeros(1)
    ywin = np.zeros(1)
    yp = np.zeros(2)
    z = np.zeros(2)
    delta = np.zeros((2, 1))
    normal = np.zeros(2, dtype=np.bool_)
    for i in range(transient + samples):
        diverged = sml_step(factors, U, dwin, 1, 0, mu, np.inf, ewin, ywin, yp, z, delta, normal)
        if i >= transient:
            w1_out[i - transient] = factors[0, 0]
            e_out[i - transient] = ewin[0]
        if diverged:
            for j in range(max(i - transient, -1) + 1, samples):
                w1_out[j] = np.nan
                e_out[j] = np.nan
            return i
    return -1

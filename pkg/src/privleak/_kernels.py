"""Sequential SGD epoch loops, compiled with numba.

Both loops apply updates in the order given by the triple arrays, and all
gradients for one triple are taken at its pre-step values. They return the
summed recommender loss and the index of the first non-finite step (-1 if none).
"""

import math

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _neg_log_sigmoid(x):
    if x >= 0:
        return math.log1p(math.exp(-x))
    return -x + math.log1p(math.exp(x))


@numba.njit(cache=True, inline="always")
def _bpr_grads(P, Q, b, u, i, j, reg, g_pu, g_qi, g_qj):
    k = P.shape[1]
    x = b[i] - b[j]
    for f in range(k):
        x += P[u, f] * (Q[i, f] - Q[j, f])
    # sigma(-x)
    if x >= 0:
        e = math.exp(-x)
        s = e / (1.0 + e)
    else:
        s = 1.0 / (1.0 + math.exp(x))
    norm = b[i] * b[i] + b[j] * b[j]
    for f in range(k):
        pu, qi, qj = P[u, f], Q[i, f], Q[j, f]
        norm += pu * pu + qi * qi + qj * qj
        g_pu[f] = -s * (qi - qj) + 2.0 * reg * pu
        g_qi[f] = -s * pu + 2.0 * reg * qi
        g_qj[f] = s * pu + 2.0 * reg * qj
    g_bi = -s + 2.0 * reg * b[i]
    g_bj = s + 2.0 * reg * b[j]
    loss = _neg_log_sigmoid(x) + reg * norm
    return loss, g_bi, g_bj


@numba.njit(cache=True, inline="always")
def _apply_items(Q, b, i, j, alpha, g_qi, g_qj, g_bi, g_bj):
    for f in range(Q.shape[1]):
        Q[i, f] -= alpha * g_qi[f]
        Q[j, f] -= alpha * g_qj[f]
    b[i] -= alpha * g_bi
    b[j] -= alpha * g_bj


@numba.njit(cache=True)
def bpr_epoch(P, Q, b, users, pos, neg, alpha, reg):
    k = P.shape[1]
    g_pu = np.empty(k)
    g_qi = np.empty(k)
    g_qj = np.empty(k)
    total = 0.0
    for t in range(users.shape[0]):
        u, i, j = users[t], pos[t], neg[t]
        loss, g_bi, g_bj = _bpr_grads(P, Q, b, u, i, j, reg, g_pu, g_qi, g_qj)
        if not math.isfinite(loss):
            return total, t
        for f in range(k):
            P[u, f] -= alpha * g_pu[f]
        _apply_items(Q, b, i, j, alpha, g_qi, g_qj, g_bi, g_bj)
        total += loss
    return total, -1


@numba.njit(cache=True)
def adversarial_epoch(P, Q, b, users, pos, neg, alpha, reg, W, c, offsets, labels, lam, head_alpha, head_loss):
    """Privacy-adversarial loop.

    Heads are packed column-wise: head h owns columns ``offsets[h]:offsets[h+1]``
    of ``W`` (k x total classes) and ``c``. ``labels`` is (n_users, n_heads).
    ``head_loss[h]`` accumulates cross-entropy per head.
    """
    k = P.shape[1]
    n_heads = offsets.shape[0] - 1
    g_pu = np.empty(k)
    g_qi = np.empty(k)
    g_qj = np.empty(k)
    g_dem = np.empty(k)
    prob = np.empty(c.shape[0])
    total = 0.0
    for t in range(users.shape[0]):
        u, i, j = users[t], pos[t], neg[t]
        loss, g_bi, g_bj = _bpr_grads(P, Q, b, u, i, j, reg, g_pu, g_qi, g_qj)
        if not math.isfinite(loss):
            return total, t

        # softmax of every head at the pre-step p_u; prob becomes e = p - onehot
        for f in range(k):
            g_dem[f] = 0.0
        for h in range(n_heads):
            lo, hi = offsets[h], offsets[h + 1]
            top = -np.inf
            for m in range(lo, hi):
                z = c[m]
                for f in range(k):
                    z += P[u, f] * W[f, m]
                prob[m] = z
                if z > top:
                    top = z
            y = lo + labels[u, h]
            shifted_y = prob[y] - top
            norm = 0.0
            for m in range(lo, hi):
                prob[m] = math.exp(prob[m] - top)
                norm += prob[m]
            head_loss[h] += math.log(norm) - shifted_y
            for m in range(lo, hi):
                prob[m] /= norm
            prob[y] -= 1.0
            for f in range(k):
                acc = 0.0
                for m in range(lo, hi):
                    acc += W[f, m] * prob[m]
                g_dem[f] += acc

        for f in range(k):
            step = g_pu[f] - lam * g_dem[f]
            if not math.isfinite(step):
                return total, t
        # heads descend their own loss, evaluated at the pre-step p_u
        for h in range(n_heads):
            for m in range(offsets[h], offsets[h + 1]):
                for f in range(k):
                    W[f, m] -= head_alpha * P[u, f] * prob[m]
                c[m] -= head_alpha * prob[m]
        for f in range(k):
            P[u, f] -= alpha * (g_pu[f] - lam * g_dem[f])
        _apply_items(Q, b, i, j, alpha, g_qi, g_qj, g_bi, g_bj)
        total += loss
    return total, -1

"""Maximum-weight matching in general graphs (Edmonds' blossom algorithm).

Dense primal-dual implementation for integer weights, O(n^3) time and
O(n^2) memory, compiled with numba. Vertices are 1-based internally;
indices ``n+1 .. 2n`` hold blossoms. Edge ``(a, b)`` of the contracted
graph stores the original endpoints in ``gu[a, b], gv[a, b]`` so blossom
edges remember which real edge they came from.

Labels are kept doubled relative to weights (``slack = lab[u] + lab[v] -
2 w``) so all dual updates stay integral.
"""

from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["max_weight_matching_dense"]


@njit(cache=True)
def _e_delta(gu, gv, gw, lab, a, b):
    return lab[gu[a, b]] + lab[gv[a, b]] - gw[a, b] * 2


@njit(cache=True)
def _update_slack(gu, gv, gw, lab, slack, u, x):
    if slack[x] == 0 or _e_delta(gu, gv, gw, lab, u, x) < _e_delta(gu, gv, gw, lab, slack[x], x):
        slack[x] = u


@njit(cache=True)
def _set_slack(n, gu, gv, gw, lab, slack, st, S, x):
    slack[x] = 0
    for u in range(1, n + 1):
        if gw[u, x] > 0 and st[u] != x and S[st[u]] == 0:
            _update_slack(gu, gv, gw, lab, slack, u, x)


@njit(cache=True)
def _q_push(n, flower, flen, queue, qtail, x):
    # flatten a (possibly nested) blossom into its real vertices
    stack = np.empty(2 * n + 2, dtype=np.int64)
    top = 0
    stack[top] = x
    top += 1
    while top > 0:
        top -= 1
        y = stack[top]
        if y <= n:
            queue[qtail] = y
            qtail += 1
        else:
            for i in range(flen[y] - 1, -1, -1):
                stack[top] = flower[y, i]
                top += 1
    return qtail


@njit(cache=True)
def _set_st(n, flower, flen, st, x, b):
    stack = np.empty(2 * n + 2, dtype=np.int64)
    top = 0
    stack[top] = x
    top += 1
    while top > 0:
        top -= 1
        y = stack[top]
        st[y] = b
        if y > n:
            for i in range(flen[y]):
                stack[top] = flower[y, i]
                top += 1


@njit(cache=True)
def _get_pr(flower, flen, b, xr):
    m = flen[b]
    pr = 0
    while flower[b, pr] != xr:
        pr += 1
    if pr % 2 == 1:
        # reverse flower[b][1:]
        i, j = 1, m - 1
        while i < j:
            t = flower[b, i]
            flower[b, i] = flower[b, j]
            flower[b, j] = t
            i += 1
            j -= 1
        return m - pr
    return pr


@njit(cache=True)
def _set_match(n, gu, gv, match, flower, flen, flower_from, u, v):
    match[u] = gv[u, v]
    if u > n:
        xr = flower_from[u, gu[u, v]]
        pr = _get_pr(flower, flen, u, xr)
        for i in range(pr):
            _set_match(n, gu, gv, match, flower, flen, flower_from, flower[u, i], flower[u, i ^ 1])
        _set_match(n, gu, gv, match, flower, flen, flower_from, xr, v)
        # rotate flower[u] left by pr
        m = flen[u]
        tmp = flower[u, :m].copy()
        for i in range(m):
            flower[u, i] = tmp[(i + pr) % m]
    return 0


@njit(cache=True)
def _augment(n, gu, gv, match, flower, flen, flower_from, st, pa, u, v):
    while True:
        xnv = st[match[u]]
        _set_match(n, gu, gv, match, flower, flen, flower_from, u, v)
        if xnv == 0:
            return
        _set_match(n, gu, gv, match, flower, flen, flower_from, xnv, st[pa[xnv]])
        u = st[pa[xnv]]
        v = xnv


@njit(cache=True)
def _get_lca(st, match, pa, vis, stamp, u, v):
    while u != 0 or v != 0:
        if u != 0:
            if vis[u] == stamp:
                return u
            vis[u] = stamp
            u = st[match[u]]
            if u != 0:
                u = st[pa[u]]
        u, v = v, u
    return 0


@njit(cache=True)
def _add_blossom(n, state, gu, gv, gw, lab, match, slack, st, pa, S, flower, flen,
                 flower_from, queue, qtail, u, lca, v):
    n_x = state[0]
    b = n + 1
    while b <= n_x and st[b] != 0:
        b += 1
    if b > n_x:
        n_x += 1
        state[0] = n_x
    lab[b] = 0
    S[b] = 0
    match[b] = match[lca]
    m = 0
    flower[b, m] = lca
    m += 1
    x = u
    while x != lca:
        flower[b, m] = x
        m += 1
        y = st[match[x]]
        flower[b, m] = y
        m += 1
        qtail = _q_push(n, flower, flen, queue, qtail, y)
        x = st[pa[y]]
    # reverse flower[b][1:m]
    i, j = 1, m - 1
    while i < j:
        t = flower[b, i]
        flower[b, i] = flower[b, j]
        flower[b, j] = t
        i += 1
        j -= 1
    x = v
    while x != lca:
        flower[b, m] = x
        m += 1
        y = st[match[x]]
        flower[b, m] = y
        m += 1
        qtail = _q_push(n, flower, flen, queue, qtail, y)
        x = st[pa[y]]
    flen[b] = m
    _set_st(n, flower, flen, st, b, b)
    for x in range(1, n_x + 1):
        gw[b, x] = 0
        gw[x, b] = 0
    for x in range(1, n + 1):
        flower_from[b, x] = 0
    for i in range(m):
        xs = flower[b, i]
        for x in range(1, n_x + 1):
            if gw[b, x] == 0 or _e_delta(gu, gv, gw, lab, xs, x) < _e_delta(gu, gv, gw, lab, b, x):
                gu[b, x] = gu[xs, x]
                gv[b, x] = gv[xs, x]
                gw[b, x] = gw[xs, x]
                gu[x, b] = gu[x, xs]
                gv[x, b] = gv[x, xs]
                gw[x, b] = gw[x, xs]
        for x in range(1, n + 1):
            if flower_from[xs, x] != 0:
                flower_from[b, x] = xs
    _set_slack(n, gu, gv, gw, lab, slack, st, S, b)
    return qtail


@njit(cache=True)
def _expand_blossom(n, gu, gv, gw, lab, slack, st, pa, S, flower, flen, flower_from,
                    queue, qtail, b):
    for i in range(flen[b]):
        _set_st(n, flower, flen, st, flower[b, i], flower[b, i])
    xr = flower_from[b, gu[b, pa[b]]]
    pr = _get_pr(flower, flen, b, xr)
    for i in range(0, pr, 2):
        xs = flower[b, i]
        xns = flower[b, i + 1]
        pa[xs] = gu[xns, xs]
        S[xs] = 1
        S[xns] = 0
        slack[xs] = 0
        _set_slack(n, gu, gv, gw, lab, slack, st, S, xns)
        qtail = _q_push(n, flower, flen, queue, qtail, xns)
    S[xr] = 1
    pa[xr] = pa[b]
    for i in range(pr + 1, flen[b]):
        xs = flower[b, i]
        S[xs] = -1
        _set_slack(n, gu, gv, gw, lab, slack, st, S, xs)
    st[b] = 0
    return qtail


@njit(cache=True)
def _on_found_edge(n, state, gu, gv, gw, lab, match, slack, st, pa, S, vis, flower, flen,
                   flower_from, queue, qtail, eu, ev):
    """Returns (augmented, qtail)."""
    u = st[eu]
    v = st[ev]
    if S[v] == -1:
        pa[v] = eu
        S[v] = 1
        nu = st[match[v]]
        slack[v] = 0
        slack[nu] = 0
        S[nu] = 0
        qtail = _q_push(n, flower, flen, queue, qtail, nu)
    elif S[v] == 0:
        state[1] += 1
        lca = _get_lca(st, match, pa, vis, state[1], u, v)
        if lca == 0:
            _augment(n, gu, gv, match, flower, flen, flower_from, st, pa, u, v)
            _augment(n, gu, gv, match, flower, flen, flower_from, st, pa, v, u)
            return True, qtail
        qtail = _add_blossom(n, state, gu, gv, gw, lab, match, slack, st, pa, S, flower, flen,
                             flower_from, queue, qtail, u, lca, v)
    return False, qtail


@njit(cache=True)
def _stage(n, state, gu, gv, gw, lab, match, slack, st, pa, S, vis, flower, flen,
           flower_from, queue):
    """One augmentation stage; False when no improving path remains."""
    n_x = state[0]
    for x in range(1, n_x + 1):
        S[x] = -1
        slack[x] = 0
    qhead = 0
    qtail = 0
    for x in range(1, n_x + 1):
        if st[x] == x and match[x] == 0:
            pa[x] = 0
            S[x] = 0
            qtail = _q_push(n, flower, flen, queue, qtail, x)
    if qtail == 0:
        return False
    inf = np.iinfo(np.int64).max
    while True:
        while qhead < qtail:
            u = queue[qhead]
            qhead += 1
            if S[st[u]] == 1:
                continue
            for v in range(1, n + 1):
                if gw[u, v] > 0 and st[u] != st[v]:
                    if _e_delta(gu, gv, gw, lab, u, v) == 0:
                        found, qtail = _on_found_edge(n, state, gu, gv, gw, lab, match, slack, st,
                                                      pa, S, vis, flower, flen, flower_from,
                                                      queue, qtail, u, v)
                        if found:
                            return True
                    else:
                        _update_slack(gu, gv, gw, lab, slack, u, st[v])
        n_x = state[0]
        d = inf
        for b in range(n + 1, n_x + 1):
            if st[b] == b and S[b] == 1:
                d = min(d, lab[b] // 2)
        for x in range(1, n_x + 1):
            if st[x] == x and slack[x] != 0:
                if S[x] == -1:
                    d = min(d, _e_delta(gu, gv, gw, lab, slack[x], x))
                elif S[x] == 0:
                    d = min(d, _e_delta(gu, gv, gw, lab, slack[x], x) // 2)
        for u in range(1, n + 1):
            if S[st[u]] == 0:
                if lab[u] <= d:
                    return False
                lab[u] -= d
            elif S[st[u]] == 1:
                lab[u] += d
        for b in range(n + 1, n_x + 1):
            if st[b] == b:
                if S[st[b]] == 0:
                    lab[b] += d * 2
                elif S[st[b]] == 1:
                    lab[b] -= d * 2
        qhead = 0
        qtail = 0
        x = 1
        while x <= state[0]:
            if (st[x] == x and slack[x] != 0 and st[slack[x]] != x
                    and _e_delta(gu, gv, gw, lab, slack[x], x) == 0):
                found, qtail = _on_found_edge(n, state, gu, gv, gw, lab, match, slack, st, pa, S,
                                              vis, flower, flen, flower_from, queue, qtail,
                                              slack[x], x)
                if found:
                    return True
            x += 1
        for b in range(n + 1, state[0] + 1):
            if st[b] == b and S[b] == 1 and lab[b] == 0:
                qtail = _expand_blossom(n, gu, gv, gw, lab, slack, st, pa, S, flower, flen,
                                        flower_from, queue, qtail, b)


@njit(cache=True)
def _solve(w):
    n = w.shape[0]
    size = 2 * n + 1
    gu = np.zeros((size, size), dtype=np.int64)
    gv = np.zeros((size, size), dtype=np.int64)
    gw = np.zeros((size, size), dtype=np.int64)
    for u in range(1, n + 1):
        for v in range(1, n + 1):
            gu[u, v] = u
            gv[u, v] = v
            gw[u, v] = w[u - 1, v - 1]
    lab = np.zeros(size, dtype=np.int64)
    match = np.zeros(size, dtype=np.int64)
    slack = np.zeros(size, dtype=np.int64)
    st = np.zeros(size, dtype=np.int64)
    pa = np.zeros(size, dtype=np.int64)
    S = np.zeros(size, dtype=np.int64)
    vis = np.zeros(size, dtype=np.int64)
    flower = np.zeros((size, size), dtype=np.int64)
    flen = np.zeros(size, dtype=np.int64)
    flower_from = np.zeros((size, n + 1), dtype=np.int64)
    # every stage pushes each real vertex a bounded number of times
    queue = np.zeros(4 * n * n + 16, dtype=np.int64)
    state = np.zeros(2, dtype=np.int64)  # n_x, lca stamp
    state[0] = n
    for u in range(size):
        st[u] = u
    w_max = 0
    for u in range(1, n + 1):
        flower_from[u, u] = u
        for v in range(1, n + 1):
            if gw[u, v] > w_max:
                w_max = gw[u, v]
    for u in range(1, n + 1):
        lab[u] = w_max
    while _stage(n, state, gu, gv, gw, lab, match, slack, st, pa, S, vis, flower, flen,
                 flower_from, queue):
        pass
    mate = np.zeros(n, dtype=np.int64)
    for u in range(1, n + 1):
        mate[u - 1] = match[u] - 1
    return mate


def max_weight_matching_dense(weights: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-weight matching of a symmetric non-negative integer matrix.

    ``weights[i, j] == 0`` means no edge. Returns pairs ``(i, j)`` with
    ``i < j``, sorted.
    """
    w = np.asarray(weights)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("weights must be a square matrix")
    if not np.issubdtype(w.dtype, np.integer):
        if not np.all(np.mod(w, 1) == 0):
            raise ValueError("weights must be integers")
    w = w.astype(np.int64)
    if np.any(w < 0) or not np.array_equal(w, w.T):
        raise ValueError("weights must be symmetric and non-negative")
    if np.any(np.diag(w) != 0):
        raise ValueError("self loops are not allowed")
    if w.shape[0] == 0:
        return []
    mate = _solve(w)
    return sorted((i, int(j)) for i, j in enumerate(mate) if j > i)

"""NumPy implementations of the GBDT kernels (fallback for ``_kernels``)."""

from __future__ import annotations

import numpy as np


def _search(idx, X, g, h, feats, s, e, min_child, lam):
    rows = idx[feats[0], s:e]
    c = e - s
    # sequential sums, same order as the compiled loop
    g_sum = np.cumsum(g[rows])[-1] if c else 0.0
    h_sum = np.cumsum(h[rows])[-1] if c else 0.0
    best, best_f, best_t = 0.0, -1, 0.0
    if c >= 2 * min_child:
        parent = g_sum * g_sum / (h_sum + lam)
        for col in feats:
            r = idx[col, s:e]
            x = X[r, col]
            # candidate boundary j sits between sorted positions j-1 and j
            gl = np.cumsum(g[r])[:-1]
            hl = np.cumsum(h[r])[:-1]
            cl = np.arange(1, c)
            ok = (cl >= min_child) & (c - cl >= min_child) & (x[1:] > x[:-1])
            if not ok.any():
                continue
            gr = g_sum - gl
            hr = h_sum - hl
            gain = np.where(ok, gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent, -np.inf)
            j = int(np.argmax(gain))
            if gain[j] > best:
                best, best_f, best_t = gain[j], int(col), 0.5 * (x[j] + x[j + 1])
    return [g_sum, h_sum, best, best_f, best_t]


def grow_tree(order, X, g, h, sample, feature_mask, min_child, lam, num_leaves):
    feats = np.flatnonzero(feature_mask)
    n_sub = int(np.count_nonzero(sample))
    idx = np.zeros((order.shape[0], n_sub), dtype=np.int64)
    for col in feats:
        idx[col] = order[col][sample[order[col]] != 0]

    feature, threshold, left, right, gain = [-1], [0.0], [-1], [-1], [0.0]
    if n_sub == 0 or len(feats) == 0:
        return (np.asarray(feature, np.int64), np.zeros(1), np.asarray(left, np.int64),
                np.asarray(right, np.int64), np.zeros(1), np.zeros(1))
    span = [(0, n_sub)]
    stats = [_search(idx, X, g, h, feats, 0, n_sub, min_child, lam)]
    leaves = 1
    while leaves < num_leaves:
        node, best = -1, 0.0
        for i, st in enumerate(stats):
            if feature[i] < 0 and st[3] >= 0 and st[2] > best:
                node, best = i, st[2]
        if node < 0:
            break
        _, _, _, sf, thr = stats[node]
        s, e = span[node]
        go = np.zeros(X.shape[0], dtype=bool)
        r = idx[sf, s:e]
        go[r] = X[r, sf] <= thr
        nl = int(go[r].sum())
        for col in feats:
            seg = idx[col, s:e]
            flag = go[seg]
            idx[col, s:e] = np.concatenate([seg[flag], seg[~flag]])
        k = len(feature)
        feature[node], threshold[node], left[node], right[node], gain[node] = sf, thr, k, k + 1, best
        feature += [-1, -1]
        threshold += [0.0, 0.0]
        left += [-1, -1]
        right += [-1, -1]
        gain += [0.0, 0.0]
        span += [(s, s + nl), (s + nl, e)]
        stats.append(_search(idx, X, g, h, feats, s, s + nl, min_child, lam))
        stats.append(_search(idx, X, g, h, feats, s + nl, e, min_child, lam))
        leaves += 1

    value = [(-st[0] / (st[1] + lam)) if col < 0 else 0.0 for st, col in zip(stats, feature)]
    return (np.asarray(feature, np.int64), np.asarray(threshold, float), np.asarray(left, np.int64),
            np.asarray(right, np.int64), np.asarray(value, float), np.asarray(gain, float))


def predict_raw(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    out = np.zeros(n)
    rows = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            nd = node[active]
            go_left = X[rows[active], feature[nd]] <= threshold[nd]
            node[active] = np.where(go_left, left[nd], right[nd])
            active = feature[node] >= 0
        out += value[node]
    return out

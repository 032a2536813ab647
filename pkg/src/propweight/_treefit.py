"""Exact-greedy regression-tree and boosting kernels (numba).

Trees are packed into parallel arrays in breadth-first slot order.
``feature[k] >= 0`` marks an internal node splitting on that column at
``threshold[k]`` (rows with value <= threshold go left); ``feature[k] == -1``
marks a leaf carrying ``value[k]``.  An ensemble concatenates the per-tree
arrays with ``offsets[t]`` giving the slot where tree ``t`` starts; child
indices are relative to the owning tree's first slot.

Split candidates are midpoints between consecutive distinct sorted feature
values within a node; a split is kept only when both children carry at least
``min_node_w`` total case weight.  Ties in the split score resolve to the
smallest column index, then the smallest threshold (features and values are
scanned in ascending order and only strict improvements are accepted).

The scan works on feature-major presorted copies of the data (values and
case weights in sort order) so the hot loop reads sequentially; only the
per-row node id and weighted target are gathered.  Row indices are uint16
when the sample fits, int32 otherwise (numba specializes per dtype).
"""

import numpy as np
from numba import njit

LEAF = -1
SCORE_CLIP = 30.0


@njit(cache=True)
def _grow_tree(xs, ws, srt, Xf, targets, weights, wtargets, in_fit, row_node,
               max_depth, min_node_w, feat, thr, val, left, right,
               row_leaf_val, row_leaf_slot):
    """Fit one tree; returns the number of slots used.

    xs/ws hold feature values and case weights in per-feature sort order
    (``xs[j, k] = Xf[j, srt[j, k]]``); ``wtargets`` = weights * targets in
    row order.  ``row_node`` is int16 scratch of length n.  Per-row leaf
    values/slots are filled for rows with ``in_fit`` set; other rows are
    untouched.
    """
    p, n = xs.shape
    max_width = 1 << max_depth

    tot_w = np.zeros(max_width)
    tot_s = np.zeros(max_width)
    tmin = np.full(max_width, np.inf)
    tmax = np.full(max_width, -np.inf)
    nx_w = np.zeros(max_width)
    nx_s = np.zeros(max_width)
    nx_min = np.zeros(max_width)
    nx_max = np.zeros(max_width)
    best_score = np.zeros(max_width)
    best_feat = np.full(max_width, -1, np.int32)
    best_thr = np.zeros(max_width)
    lw = np.zeros(max_width)
    ls = np.zeros(max_width)
    prev = np.zeros(max_width)
    slot_of = np.zeros(max_width, np.int32)
    slot_next = np.zeros(max_width, np.int32)
    child_base = np.zeros(max_width, np.int32)
    node_split = np.zeros(max_width, np.uint8)

    for i in range(n):
        if in_fit[i]:
            row_node[i] = 0
            ti = targets[i]
            tot_w[0] += weights[i]
            tot_s[0] += wtargets[i]
            if ti < tmin[0]:
                tmin[0] = ti
            if ti > tmax[0]:
                tmax[0] = ti
        else:
            row_node[i] = -1

    slot_of[0] = 0
    next_slot = 1
    n_nodes = 1

    for level in range(max_depth + 1):
        for nd in range(n_nodes):
            best_feat[nd] = -1
            best_score[nd] = -np.inf
            node_split[nd] = 0

        if level < max_depth:
            for j in range(p):
                for nd in range(n_nodes):
                    lw[nd] = 0.0
                    ls[nd] = 0.0
                    prev[nd] = np.nan
                srtj = srt[j]
                xsj = xs[j]
                wsj = ws[j]
                for k in range(n):
                    rid = srtj[k]
                    nd = row_node[rid]
                    if nd < 0:
                        continue
                    v = xsj[k]
                    lwn = lw[nd]
                    if v != prev[nd] and lwn >= min_node_w:
                        rw = tot_w[nd] - lwn
                        if rw >= min_node_w:
                            lsn = ls[nd]
                            rs = tot_s[nd] - lsn
                            num = lsn * lsn * rw + rs * rs * lwn
                            if num > best_score[nd] * (lwn * rw):
                                best_score[nd] = num / (lwn * rw)
                                best_feat[nd] = j
                                best_thr[nd] = 0.5 * (prev[nd] + v)
                    lw[nd] = lwn + wsj[k]
                    ls[nd] += wtargets[rid]
                    prev[nd] = v

        new_n = 0
        for nd in range(n_nodes):
            s = slot_of[nd]
            if best_feat[nd] >= 0 and tmax[nd] > tmin[nd]:
                node_split[nd] = 1
                feat[s] = best_feat[nd]
                thr[s] = best_thr[nd]
                val[s] = 0.0
                left[s] = next_slot
                right[s] = next_slot + 1
                child_base[nd] = new_n
                slot_next[new_n] = next_slot
                slot_next[new_n + 1] = next_slot + 1
                nx_w[new_n] = 0.0
                nx_s[new_n] = 0.0
                nx_min[new_n] = np.inf
                nx_max[new_n] = -np.inf
                nx_w[new_n + 1] = 0.0
                nx_s[new_n + 1] = 0.0
                nx_min[new_n + 1] = np.inf
                nx_max[new_n + 1] = -np.inf
                next_slot += 2
                new_n += 2
            else:
                feat[s] = LEAF
                thr[s] = 0.0
                val[s] = tot_s[nd] / tot_w[nd]
                left[s] = -1
                right[s] = -1

        for i in range(n):
            nd = row_node[i]
            if nd < 0:
                continue
            if node_split[nd]:
                c = child_base[nd]
                if Xf[best_feat[nd], i] > best_thr[nd]:
                    c += 1
                row_node[i] = c
                ti = targets[i]
                nx_w[c] += weights[i]
                nx_s[c] += wtargets[i]
                if ti < nx_min[c]:
                    nx_min[c] = ti
                if ti > nx_max[c]:
                    nx_max[c] = ti
            else:
                row_leaf_val[i] = tot_s[nd] / tot_w[nd]
                row_leaf_slot[i] = slot_of[nd]
                row_node[i] = -1

        if new_n == 0:
            break
        for nd in range(new_n):
            slot_of[nd] = slot_next[nd]
            tot_w[nd] = nx_w[nd]
            tot_s[nd] = nx_s[nd]
            tmin[nd] = nx_min[nd]
            tmax[nd] = nx_max[nd]
        n_nodes = new_n

    return next_slot


@njit(cache=True)
def _route_leaf(Xf, i, feat, thr, left, right, base):
    k = 0
    while feat[base + k] >= 0:
        if Xf[feat[base + k], i] <= thr[base + k]:
            k = left[base + k]
        else:
            k = right[base + k]
    return base + k


@njit(cache=True)
def _predict_scores(Xf, b0, nu, feat, thr, val, left, right, offsets):
    """Evaluate b0 + nu * sum_t h_t(x) for every column of Xf (p, n)."""
    n = Xf.shape[1]
    out = np.full(n, b0)
    n_trees = offsets.shape[0] - 1
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            s = _route_leaf(Xf, i, feat, thr, left, right, base)
            out[i] += nu * val[s]
    return out


@njit(cache=True)
def _gbm_fit(Xf, sort_idx, labels, weights, b0, nu, n_trees, max_depth,
             min_node_w, snapshot_ts, bag_masks, use_bag):
    """Boost regression trees on logistic residuals labels - expit(b).

    Returns packed trees (feature, threshold, value, left, right, offsets),
    the final per-row scores, and per-row score snapshots after the tree
    counts listed in ``snapshot_ts`` (sorted ascending; 0 = initial model).
    """
    p, n = Xf.shape
    max_nodes = (1 << (max_depth + 1)) - 1

    xs = np.empty((p, n))
    ws = np.empty((p, n))
    for j in range(p):
        for k in range(n):
            rid = sort_idx[j, k]
            xs[j, k] = Xf[j, rid]
            ws[j, k] = weights[rid]

    feat_t = np.empty(max_nodes, np.int32)
    thr_t = np.empty(max_nodes)
    val_t = np.empty(max_nodes)
    left_t = np.empty(max_nodes, np.int32)
    right_t = np.empty(max_nodes, np.int32)

    cap = max_nodes * min(n_trees, 64) + 16
    feat_f = np.empty(cap, np.int32)
    thr_f = np.empty(cap)
    val_f = np.empty(cap)
    left_f = np.empty(cap, np.int32)
    right_f = np.empty(cap, np.int32)
    offsets = np.zeros(n_trees + 1, np.int64)

    b = np.full(n, b0)
    resid = np.empty(n)
    wresid = np.empty(n)
    row_leaf_val = np.zeros(n)
    row_leaf_slot = np.zeros(n, np.int32)
    row_node = np.empty(n, np.int16)
    all_rows = np.ones(n, np.uint8)

    n_snaps = snapshot_ts.shape[0]
    snaps = np.empty((n_snaps, n))
    si = 0
    while si < n_snaps and snapshot_ts[si] == 0:
        snaps[si] = b
        si += 1

    for t in range(n_trees):
        for i in range(n):
            bi = b[i]
            if bi > SCORE_CLIP:
                bi = SCORE_CLIP
            elif bi < -SCORE_CLIP:
                bi = -SCORE_CLIP
            r = labels[i] - 1.0 / (1.0 + np.exp(-bi))
            resid[i] = r
            wresid[i] = weights[i] * r

        in_fit = bag_masks[t] if use_bag else all_rows
        n_slots = _grow_tree(xs, ws, sort_idx, Xf, resid, weights, wresid,
                             in_fit, row_node, max_depth, min_node_w, feat_t,
                             thr_t, val_t, left_t, right_t, row_leaf_val,
                             row_leaf_slot)
        if use_bag:
            for i in range(n):
                if not in_fit[i]:
                    s = _route_leaf(Xf, i, feat_t, thr_t, left_t, right_t, 0)
                    row_leaf_val[i] = val_t[s]

        for i in range(n):
            b[i] += nu * row_leaf_val[i]

        start = offsets[t]
        need = start + n_slots
        if need > cap:
            new_cap = cap
            while new_cap < need:
                new_cap *= 2
            nf = np.empty(new_cap, np.int32)
            nf[:start] = feat_f[:start]
            feat_f = nf
            nt = np.empty(new_cap)
            nt[:start] = thr_f[:start]
            thr_f = nt
            nv = np.empty(new_cap)
            nv[:start] = val_f[:start]
            val_f = nv
            nl = np.empty(new_cap, np.int32)
            nl[:start] = left_f[:start]
            left_f = nl
            nr = np.empty(new_cap, np.int32)
            nr[:start] = right_f[:start]
            right_f = nr
            cap = new_cap
        feat_f[start:need] = feat_t[:n_slots]
        thr_f[start:need] = thr_t[:n_slots]
        val_f[start:need] = val_t[:n_slots]
        left_f[start:need] = left_t[:n_slots]
        right_f[start:need] = right_t[:n_slots]
        offsets[t + 1] = need

        while si < n_snaps and snapshot_ts[si] == t + 1:
            snaps[si] = b
            si += 1

    end = offsets[n_trees]
    return (feat_f[:end].copy(), thr_f[:end].copy(), val_f[:end].copy(),
            left_f[:end].copy(), right_f[:end].copy(), offsets, b, snaps)

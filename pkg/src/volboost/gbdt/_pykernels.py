"""Pure numpy implementation of the tree-learning kernels.

This is the fallback used when the compiled ``_ckernels`` extension is not
available. Both modules expose the same functions with the same semantics;
accumulation orders are kept sequential so the two agree to rounding.
"""

import numpy as np

LEAF = -1
# relative floor under which a split gain is treated as zero
GAIN_RTOL = 1e-12


def soft_threshold(G, alpha):
    if G > alpha:
        return G - alpha
    if G < -alpha:
        return G + alpha
    return 0.0


def build_histogram(binned, rows, g, h, features, max_bins):
    """Per-feature (sum g, sum h, count) for the given rows.

    Returns an array of shape ``(len(features), max_bins, 3)``.
    """
    n_feat = len(features)
    hist = np.zeros((n_feat, max_bins, 3))
    if len(rows) == 0 or n_feat == 0:
        return hist
    sub = binned[np.ix_(rows, features)].astype(np.int64)
    idx = sub + (np.arange(n_feat, dtype=np.int64) * max_bins)[None, :]
    flat = idx.ravel()
    size = n_feat * max_bins
    gr = np.repeat(g[rows], n_feat)
    hr = np.repeat(h[rows], n_feat)
    hist[:, :, 0] = np.bincount(flat, weights=gr, minlength=size).reshape(n_feat, max_bins)
    hist[:, :, 1] = np.bincount(flat, weights=hr, minlength=size).reshape(n_feat, max_bins)
    hist[:, :, 2] = np.bincount(flat, minlength=size).reshape(n_feat, max_bins)
    return hist


def find_best_split(hist, features, n_bins, G, H, C, lam, alpha, gamma, min_data):
    """Best (feature, bin, gain, G_left, H_left, C_left) over a node histogram.

    ``feature`` is -1 when no split has positive gain. Left child holds bins
    ``<= bin``. Ties resolve to the lowest feature id, then the lowest bin.
    """
    best = (LEAF, -1, 0.0, 0.0, 0.0, 0)
    if len(features) == 0:
        return best
    sp = soft_threshold(G, alpha)
    parent = sp * sp / (H + lam)
    cum = np.cumsum(hist, axis=1)
    GL = cum[:, :, 0]
    HL = cum[:, :, 1]
    CL = cum[:, :, 2]
    GR = G - GL
    HR = H - HL
    CR = C - CL
    SL = np.sign(GL) * np.maximum(np.abs(GL) - alpha, 0.0)
    SR = np.sign(GR) * np.maximum(np.abs(GR) - alpha, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        tl = SL * SL / (HL + lam)
        tr = SR * SR / (HR + lam)
        gain = 0.5 * (tl + tr - parent) - gamma
    nb = np.asarray(n_bins)[np.asarray(features)]
    bins = np.arange(hist.shape[1])[None, :]
    valid = (
        (bins < (nb[:, None] - 1))
        & (CL >= min_data)
        & (CR >= min_data)
        & (HL + lam > 0)
        & (HR + lam > 0)
    )
    tol = GAIN_RTOL * (np.abs(tl) + np.abs(tr) + abs(parent))
    valid &= gain > tol
    if not valid.any():
        return best
    masked = np.where(valid, gain, -np.inf)
    k = int(np.argmax(masked))
    fi, b = divmod(k, hist.shape[1])
    return (int(features[fi]), int(b), float(gain[fi, b]), float(GL[fi, b]),
            float(HL[fi, b]), int(CL[fi, b]))


def _seq_sum(x):
    return float(np.cumsum(x)[-1]) if len(x) else 0.0


def grow_tree(binned, rows, g, h, features, n_bins, max_bins, max_depth,
              min_data, lam, alpha, gamma, max_leaves):
    """Leaf-wise growth under a depth limit.

    Returns node arrays ``(feature, threshold, left, right, gain, value,
    count, sum_g, sum_h, depth)``; node 0 is the root and leaves carry
    ``feature == -1``.
    """
    features = np.asarray(features, dtype=np.int64)
    feature = [LEAF]
    threshold = [-1]
    left = [-1]
    right = [-1]
    gain = [0.0]
    count = [len(rows)]
    sum_g = [_seq_sum(g[rows])]
    sum_h = [_seq_sum(h[rows])]
    depth = [0]
    node_rows = {0: rows}
    hists = {0: build_histogram(binned, rows, g, h, features, max_bins)}
    cand = {}

    def evaluate(node):
        if depth[node] >= max_depth or count[node] < 2 * min_data:
            return
        res = find_best_split(hists[node], features, n_bins, sum_g[node], sum_h[node],
                              count[node], lam, alpha, gamma, min_data)
        if res[0] != LEAF:
            cand[node] = res

    evaluate(0)
    n_leaves = 1
    while cand and (max_leaves < 0 or n_leaves < max_leaves):
        node = max(cand, key=lambda k: (cand[k][2], -k))
        f, b, gn, gl, hl, cl = cand.pop(node)
        r = node_rows.pop(node)
        mask = binned[r, f] <= b
        lrows, rrows = r[mask], r[~mask]
        parent_hist = hists.pop(node)
        lid, rid = len(feature), len(feature) + 1
        for _ in range(2):
            feature.append(LEAF)
            threshold.append(-1)
            left.append(-1)
            right.append(-1)
            gain.append(0.0)
            depth.append(depth[node] + 1)
        count += [cl, count[node] - cl]
        sum_g += [gl, sum_g[node] - gl]
        sum_h += [hl, sum_h[node] - hl]
        feature[node], threshold[node], left[node], right[node], gain[node] = f, b, lid, rid, gn
        if cl <= count[node] - cl:
            hl_ = build_histogram(binned, lrows, g, h, features, max_bins)
            hists[lid], hists[rid] = hl_, parent_hist - hl_
        else:
            hr_ = build_histogram(binned, rrows, g, h, features, max_bins)
            hists[lid], hists[rid] = parent_hist - hr_, hr_
        node_rows[lid], node_rows[rid] = lrows, rrows
        n_leaves += 1
        evaluate(lid)
        evaluate(rid)

    n = len(feature)
    value = np.zeros(n)
    for k in range(n):
        if feature[k] == LEAF:
            value[k] = -soft_threshold(sum_g[k], alpha) / (sum_h[k] + lam)
    return (np.array(feature, dtype=np.int32), np.array(threshold, dtype=np.int32),
            np.array(left, dtype=np.int32), np.array(right, dtype=np.int32),
            np.array(gain), value, np.array(count, dtype=np.int64),
            np.array(sum_g), np.array(sum_h), np.array(depth, dtype=np.int32))


def apply_tree(binned, feature, threshold, left, right):
    """Leaf node index reached by each row of ``binned``."""
    n = binned.shape[0]
    node = np.zeros(n, dtype=np.int32)
    active = feature[node] != LEAF
    while active.any():
        idx = np.nonzero(active)[0]
        cur = node[idx]
        go_left = binned[idx, feature[cur]] <= threshold[cur]
        node[idx] = np.where(go_left, left[cur], right[cur])
        active = feature[node] != LEAF
    return node


def predict_trees(binned, feature, threshold, left, right, value, offsets, base, lr):
    """``base + lr * tree_1 + ... + lr * tree_M`` accumulated tree by tree."""
    out = np.full(binned.shape[0], float(base))
    for t in range(len(offsets) - 1):
        a, b = offsets[t], offsets[t + 1]
        leaf = apply_tree(binned, feature[a:b], threshold[a:b], left[a:b], right[a:b])
        out += lr * value[a:b][leaf]
    return out


def leaf_quantiles(leaf_of_row, rows, residual, q, value):
    """Overwrite ``value[leaf]`` with the lower q-quantile of residuals in the leaf."""
    leaves = leaf_of_row[rows]
    res = residual[rows]
    order = np.lexsort((res, leaves))
    leaves, res = leaves[order], res[order]
    starts = np.flatnonzero(np.r_[True, leaves[1:] != leaves[:-1]])
    ends = np.r_[starts[1:], len(leaves)]
    for a, b in zip(starts, ends):
        k = max(int(np.ceil(q * (b - a) - 1e-12)), 1) - 1
        value[leaves[a]] = res[a + k]

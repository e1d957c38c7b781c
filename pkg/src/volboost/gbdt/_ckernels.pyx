# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tree-learning kernels.

Same functions and semantics as ``_pykernels``; the whole leaf-wise growth of
one tree runs here without returning to the interpreter.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, ceil, fabs
from libc.stdlib cimport calloc, free, qsort

cnp.import_array()

cdef enum:
    LEAF = -1
cdef double GAIN_RTOL = 1e-12


cdef inline double _soft(double G, double alpha) nogil:
    if G > alpha:
        return G - alpha
    if G < -alpha:
        return G + alpha
    return 0.0


def soft_threshold(double G, double alpha):
    return _soft(G, alpha)


cdef void _hist(const unsigned char[:, ::1] binned, const cnp.int64_t* rows,
                Py_ssize_t n_rows, const double[::1] g, const double[::1] h,
                const cnp.int64_t[::1] features, int max_bins, double* out) noexcept nogil:
    cdef Py_ssize_t i, j, r, b, base
    cdef Py_ssize_t nf = features.shape[0]
    cdef double gi, hi
    for i in range(n_rows):
        r = rows[i]
        gi = g[r]
        hi = h[r]
        for j in range(nf):
            base = (j * max_bins + binned[r, features[j]]) * 3
            out[base] += gi
            out[base + 1] += hi
            out[base + 2] += 1.0


def build_histogram(const unsigned char[:, ::1] binned, const cnp.int64_t[::1] rows,
                    const double[::1] g, const double[::1] h,
                    const cnp.int64_t[::1] features, int max_bins):
    out = np.zeros((features.shape[0], max_bins, 3))
    cdef double[:, :, ::1] view = out
    if rows.shape[0] == 0 or features.shape[0] == 0:
        return out
    with nogil:
        _hist(binned, &rows[0], rows.shape[0], g, h, features, max_bins, &view[0, 0, 0])
    return out


cdef struct Split:
    int feature
    int bin
    double gain
    double GL
    double HL
    double CL


cdef Split _best(const double* hist, int max_bins, const cnp.int64_t[::1] features,
                 const cnp.int32_t[::1] n_bins, double G, double H, double C,
                 double lam, double alpha, double gamma, double min_data) noexcept nogil:
    cdef Split best
    best.feature = LEAF
    best.bin = -1
    best.gain = 0.0
    best.GL = 0.0
    best.HL = 0.0
    best.CL = 0.0
    cdef double best_gain = -INFINITY
    cdef double sp = _soft(G, alpha)
    cdef double parent = sp * sp / (H + lam)
    cdef Py_ssize_t j, b, base
    cdef int nb
    cdef double GL, HL, CL, GR, HR, CR, SL, SR, tl, tr, gain, tol
    for j in range(features.shape[0]):
        nb = n_bins[features[j]]
        GL = 0.0
        HL = 0.0
        CL = 0.0
        for b in range(max_bins):
            base = (j * max_bins + b) * 3
            GL = GL + hist[base]
            HL = HL + hist[base + 1]
            CL = CL + hist[base + 2]
            if b >= nb - 1:
                break
            CR = C - CL
            if CL < min_data or CR < min_data:
                continue
            GR = G - GL
            HR = H - HL
            if HL + lam <= 0.0 or HR + lam <= 0.0:
                continue
            SL = _soft(GL, alpha)
            SR = _soft(GR, alpha)
            tl = SL * SL / (HL + lam)
            tr = SR * SR / (HR + lam)
            gain = 0.5 * (tl + tr - parent) - gamma
            tol = GAIN_RTOL * (fabs(tl) + fabs(tr) + fabs(parent))
            if gain > tol and gain > best_gain:
                best_gain = gain
                best.feature = <int>features[j]
                best.bin = <int>b
                best.gain = gain
                best.GL = GL
                best.HL = HL
                best.CL = CL
    return best


def find_best_split(double[:, :, ::1] hist, const cnp.int64_t[::1] features,
                    const cnp.int32_t[::1] n_bins, double G, double H, double C,
                    double lam, double alpha, double gamma, double min_data):
    if features.shape[0] == 0:
        return (LEAF, -1, 0.0, 0.0, 0.0, 0)
    cdef Split s = _best(&hist[0, 0, 0], hist.shape[1], features, n_bins, G, H, C,
                         lam, alpha, gamma, min_data)
    return (s.feature, s.bin, s.gain, s.GL, s.HL, int(s.CL))


def grow_tree(const unsigned char[:, ::1] binned, cnp.int64_t[::1] rows,
              const double[::1] g, const double[::1] h,
              const cnp.int64_t[::1] features, const cnp.int32_t[::1] n_bins,
              int max_bins, int max_depth, int min_data, double lam, double alpha,
              double gamma, int max_leaves):
    cdef Py_ssize_t n_rows = rows.shape[0]
    cdef Py_ssize_t nf = features.shape[0]
    cdef Py_ssize_t hsize = nf * max_bins * 3
    # a binary tree over n rows with min leaf size 1 has at most 2n-1 nodes
    cdef Py_ssize_t cap = 2 * n_rows + 1
    if max_depth < 20 and (1 << (max_depth + 1)) - 1 < cap:
        cap = (1 << (max_depth + 1)) - 1
    if max_leaves > 0 and 2 * max_leaves - 1 < cap:
        cap = 2 * max_leaves - 1

    feature_a = np.full(cap, LEAF, dtype=np.int32)
    threshold_a = np.full(cap, -1, dtype=np.int32)
    left_a = np.full(cap, -1, dtype=np.int32)
    right_a = np.full(cap, -1, dtype=np.int32)
    gain_a = np.zeros(cap)
    value_a = np.zeros(cap)
    count_a = np.zeros(cap, dtype=np.int64)
    sumg_a = np.zeros(cap)
    sumh_a = np.zeros(cap)
    depth_a = np.zeros(cap, dtype=np.int32)
    start_a = np.zeros(cap, dtype=np.int64)
    cdef cnp.int32_t[::1] feature = feature_a
    cdef cnp.int32_t[::1] threshold = threshold_a
    cdef cnp.int32_t[::1] left = left_a
    cdef cnp.int32_t[::1] right = right_a
    cdef double[::1] gain = gain_a
    cdef double[::1] value = value_a
    cdef cnp.int64_t[::1] count = count_a
    cdef double[::1] sumg = sumg_a
    cdef double[::1] sumh = sumh_a
    cdef cnp.int32_t[::1] depth = depth_a
    cdef cnp.int64_t[::1] start = start_a

    # rows are partitioned in place on a private copy; node k owns
    # order[start[k] : start[k] + count[k]]
    order_a = np.array(rows, dtype=np.int64, copy=True)
    tmp_a = np.empty(max(n_rows, 1), dtype=np.int64)
    cdef cnp.int64_t[::1] order = order_a
    cdef cnp.int64_t[::1] tmp = tmp_a

    cdef Split* splits = <Split*>calloc(cap, sizeof(Split))
    cdef char* has_cand = <char*>calloc(cap, sizeof(char))
    cdef double** hp = <double**>calloc(cap, sizeof(double*))
    if splits == NULL or has_cand == NULL or hp == NULL:
        free(splits)
        free(has_cand)
        free(hp)
        raise MemoryError()

    cdef Py_ssize_t i, k, node, lid, rid, n_nodes, n_leaves, nl, nr, s, c, small, big
    cdef Py_ssize_t q
    cdef double sg = 0.0, sh = 0.0, best_gain
    cdef int f, b
    cdef Split sp
    cdef bint oom = False

    with nogil:
        for i in range(n_rows):
            sg = sg + g[order[i]]
            sh = sh + h[order[i]]
        count[0] = n_rows
        sumg[0] = sg
        sumh[0] = sh
        start[0] = 0
        n_nodes = 1
        n_leaves = 1
        if n_rows > 0 and depth[0] < max_depth and count[0] >= 2 * min_data and nf > 0:
            hp[0] = <double*>calloc(hsize, sizeof(double))
            if hp[0] == NULL:
                oom = True
            else:
                _hist(binned, &order[0], n_rows, g, h, features, max_bins, hp[0])
                sp = _best(hp[0], max_bins, features, n_bins, sumg[0], sumh[0],
                           <double>count[0], lam, alpha, gamma, min_data)
                if sp.feature != LEAF:
                    splits[0] = sp
                    has_cand[0] = 1

        while not oom and (max_leaves < 0 or n_leaves < max_leaves):
            node = -1
            best_gain = -INFINITY
            for k in range(n_nodes):
                if has_cand[k] and splits[k].gain > best_gain:
                    best_gain = splits[k].gain
                    node = k
            if node < 0:
                break
            has_cand[node] = 0
            sp = splits[node]
            f = sp.feature
            b = sp.bin
            s = start[node]
            c = count[node]
            nl = 0
            nr = 0
            # stable partition: left rows first, then right rows, both in order
            for i in range(s, s + c):
                if binned[order[i], f] <= b:
                    order[s + nl] = order[i]
                    nl = nl + 1
                else:
                    tmp[nr] = order[i]
                    nr = nr + 1
            for i in range(nr):
                order[s + nl + i] = tmp[i]

            lid = n_nodes
            rid = n_nodes + 1
            n_nodes = n_nodes + 2
            n_leaves = n_leaves + 1
            feature[node] = f
            threshold[node] = b
            left[node] = <cnp.int32_t>lid
            right[node] = <cnp.int32_t>rid
            gain[node] = sp.gain
            depth[lid] = depth[node] + 1
            depth[rid] = depth[node] + 1
            count[lid] = <cnp.int64_t>sp.CL
            count[rid] = c - <cnp.int64_t>sp.CL
            sumg[lid] = sp.GL
            sumg[rid] = sumg[node] - sp.GL
            sumh[lid] = sp.HL
            sumh[rid] = sumh[node] - sp.HL
            start[lid] = s
            start[rid] = s + nl
            if count[lid] <= count[rid]:
                small = lid
                big = rid
            else:
                small = rid
                big = lid
            hp[small] = <double*>calloc(hsize, sizeof(double))
            if hp[small] == NULL:
                oom = True
                break
            # sibling subtraction: the larger child reuses the parent buffer
            if count[small] > 0:
                _hist(binned, &order[start[small]], count[small], g, h, features,
                      max_bins, hp[small])
            for q in range(hsize):
                hp[node][q] = hp[node][q] - hp[small][q]
            hp[big] = hp[node]
            hp[node] = NULL
            for k in range(lid, rid + 1):
                if depth[k] < max_depth and count[k] >= 2 * min_data:
                    sp = _best(hp[k], max_bins, features, n_bins, sumg[k], sumh[k],
                               <double>count[k], lam, alpha, gamma, min_data)
                    if sp.feature != LEAF:
                        splits[k] = sp
                        has_cand[k] = 1

        for k in range(n_nodes):
            if feature[k] == LEAF:
                value[k] = -_soft(sumg[k], alpha) / (sumh[k] + lam)

    for k in range(cap):
        free(hp[k])
    free(hp)
    free(splits)
    free(has_cand)
    if oom:
        raise MemoryError()

    n = n_nodes
    return (feature_a[:n].copy(), threshold_a[:n].copy(), left_a[:n].copy(),
            right_a[:n].copy(), gain_a[:n].copy(), value_a[:n].copy(),
            count_a[:n].copy(), sumg_a[:n].copy(), sumh_a[:n].copy(), depth_a[:n].copy())


def apply_tree(const unsigned char[:, ::1] binned, const cnp.int32_t[::1] feature,
               const cnp.int32_t[::1] threshold, const cnp.int32_t[::1] left,
               const cnp.int32_t[::1] right):
    cdef Py_ssize_t n = binned.shape[0], i
    cdef int node
    out = np.empty(n, dtype=np.int32)
    cdef cnp.int32_t[::1] ov = out
    with nogil:
        for i in range(n):
            node = 0
            while feature[node] != LEAF:
                if binned[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            ov[i] = node
    return out


def predict_trees(const unsigned char[:, ::1] binned, const cnp.int32_t[::1] feature,
                  const cnp.int32_t[::1] threshold, const cnp.int32_t[::1] left,
                  const cnp.int32_t[::1] right, const double[::1] value,
                  const cnp.int64_t[::1] offsets, double base, double lr):
    cdef Py_ssize_t n = binned.shape[0], i, t, a
    cdef int node
    out = np.full(n, base)
    cdef double[::1] ov = out
    with nogil:
        for t in range(offsets.shape[0] - 1):
            a = offsets[t]
            for i in range(n):
                node = 0
                while feature[a + node] != LEAF:
                    if binned[i, feature[a + node]] <= threshold[a + node]:
                        node = left[a + node]
                    else:
                        node = right[a + node]
                ov[i] = ov[i] + lr * value[a + node]
    return out


cdef int _cmp_double(const void* a, const void* b) noexcept nogil:
    cdef double x = (<const double*>a)[0]
    cdef double y = (<const double*>b)[0]
    return (x > y) - (x < y)


def leaf_quantiles(const cnp.int32_t[::1] leaf_of_row, const cnp.int64_t[::1] rows,
                   const double[::1] residual, double q, double[::1] value):
    """Overwrite ``value[leaf]`` with the lower q-quantile of residuals in the leaf."""
    cdef Py_ssize_t n_nodes = value.shape[0]
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t i, k, leaf, cnt
    cdef cnp.int64_t* start = <cnp.int64_t*>calloc(n_nodes + 1, sizeof(cnp.int64_t))
    cdef cnp.int64_t* fill = <cnp.int64_t*>calloc(n_nodes + 1, sizeof(cnp.int64_t))
    cdef double* buf = <double*>calloc(n + 1, sizeof(double))
    if start == NULL or fill == NULL or buf == NULL:
        free(start); free(fill); free(buf)
        raise MemoryError()
    with nogil:
        for i in range(n):
            start[leaf_of_row[rows[i]] + 1] += 1
        for leaf in range(n_nodes):
            start[leaf + 1] += start[leaf]
            fill[leaf] = start[leaf]
        for i in range(n):
            leaf = leaf_of_row[rows[i]]
            buf[fill[leaf]] = residual[rows[i]]
            fill[leaf] += 1
        for leaf in range(n_nodes):
            cnt = start[leaf + 1] - start[leaf]
            if cnt == 0:
                continue
            qsort(buf + start[leaf], cnt, sizeof(double), _cmp_double)
            k = <Py_ssize_t>ceil(q * cnt - 1e-12)
            if k < 1:
                k = 1
            value[leaf] = buf[start[leaf] + k - 1]
    free(start); free(fill); free(buf)

# cython: language_level=3
"""Compiled kernels. Semantics are defined by ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int64_t, int32_t
from libc.stdlib cimport malloc, free
from libc.math cimport isnan, INFINITY

cnp.import_array()

cdef double TAU = 1e-12


cdef inline uint64_t splitmix_next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] += <uint64_t>0x9E3779B97F4A7C15ULL
    z = state[0]
    z = (z ^ (z >> 30)) * <uint64_t>0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * <uint64_t>0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline void insertion_sort(int32_t* a, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i, j
    cdef int32_t v
    for i in range(1, n):
        v = a[i]
        j = i - 1
        while j >= 0 and a[j] > v:
            a[j + 1] = a[j]
            j -= 1
        a[j + 1] = v


def grow_tree(int32_t[:, ::1] codes, n_levels_in, int64_t[::1] y, int64_t[::1] sample,
              Py_ssize_t min_split, Py_ssize_t min_bucket, Py_ssize_t mtry, uint64_t seed,
              bint allow_zero=False):
    cdef Py_ssize_t p = codes.shape[1]
    cdef Py_ssize_t m = sample.shape[0]
    cdef Py_ssize_t cap = 2 * m - 1 if m > 0 else 1
    cdef int64_t[::1] n_levels = np.ascontiguousarray(n_levels_in, dtype=np.int64)
    feature_a = np.full(cap, -1, dtype=np.int32)
    split_a = np.full(cap, -1, dtype=np.int32)
    left_a = np.full(cap, -1, dtype=np.int32)
    right_a = np.full(cap, -1, dtype=np.int32)
    count0_a = np.zeros(cap, dtype=np.int64)
    count1_a = np.zeros(cap, dtype=np.int64)
    cdef int32_t[::1] feature = feature_a
    cdef int32_t[::1] split = split_a
    cdef int32_t[::1] left = left_a
    cdef int32_t[::1] right = right_a
    cdef int64_t[::1] count0 = count0_a
    cdef int64_t[::1] count1 = count1_a

    cdef Py_ssize_t max_levels = 1
    cdef Py_ssize_t f
    for f in range(p):
        if n_levels[f] > max_levels:
            max_levels = n_levels[f]

    idx_a = np.array(sample, dtype=np.int64, copy=True)
    cdef int64_t[::1] idx = idx_a
    hist_tot_a = np.zeros(max_levels, dtype=np.int64)
    hist_pos_a = np.zeros(max_levels, dtype=np.int64)
    cdef int64_t[::1] hist_tot = hist_tot_a
    cdef int64_t[::1] hist_pos = hist_pos_a
    perm_a = np.zeros(max(p, 1), dtype=np.int32)
    feats_a = np.zeros(max(p, 1), dtype=np.int32)
    cdef int32_t[::1] perm = perm_a
    cdef int32_t[::1] feats = feats_a
    # stack entries: node id, start, end
    stack_a = np.zeros((cap, 3), dtype=np.int64)
    cdef int64_t[:, ::1] stack = stack_a

    cdef uint64_t state = seed
    cdef Py_ssize_t sp = 0, next_id = 1
    cdef Py_ssize_t node, start, end, w, i, j, r, nf, c, L, code
    cdef int64_t c0, c1, l0, l1, r0, r1, nl, nr
    cdef int64_t best_l0 = 0, best_l1 = 0, best_nl = 0
    cdef int64_t A, B, Cp
    cdef int32_t tmp
    cdef double gain, best_gain
    cdef Py_ssize_t best_f, best_code, lo, hi
    cdef int64_t t64

    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = m
    sp = 1
    with nogil:
        while sp > 0:
            sp -= 1
            node = stack[sp, 0]
            start = stack[sp, 1]
            end = stack[sp, 2]
            w = end - start
            c1 = 0
            for i in range(start, end):
                c1 += y[idx[i]]
            c0 = w - c1
            count0[node] = c0
            count1[node] = c1
            if c0 == 0 or c1 == 0 or w < min_split:
                continue
            if mtry < p:
                for j in range(p):
                    perm[j] = <int32_t>j
                for j in range(mtry):
                    r = j + <Py_ssize_t>(splitmix_next(&state) % <uint64_t>(p - j))
                    tmp = perm[j]
                    perm[j] = perm[r]
                    perm[r] = tmp
                for j in range(mtry):
                    feats[j] = perm[j]
                insertion_sort(&feats[0], mtry)
                nf = mtry
            else:
                for j in range(p):
                    feats[j] = <int32_t>j
                nf = p
            best_gain = -INFINITY
            best_f = -1
            best_code = -1
            for j in range(nf):
                f = feats[j]
                L = n_levels[f]
                for c in range(L):
                    hist_tot[c] = 0
                    hist_pos[c] = 0
                for i in range(start, end):
                    c = codes[idx[i], f]
                    hist_tot[c] += 1
                    hist_pos[c] += y[idx[i]]
                l0 = 0
                l1 = 0
                for c in range(L):
                    if hist_tot[c] == 0:
                        continue
                    l1 += hist_pos[c]
                    l0 += hist_tot[c] - hist_pos[c]
                    nl = l0 + l1
                    nr = w - nl
                    if nr <= 0:
                        break
                    if nl < min_bucket or nr < min_bucket:
                        continue
                    r1 = c1 - l1
                    r0 = nr - r1
                    gain = (<double>(l0 * l0 + l1 * l1)) / (<double>nl) + \
                        (<double>(r0 * r0 + r1 * r1)) / (<double>nr)
                    if gain > best_gain:
                        best_gain = gain
                        best_f = f
                        best_code = c
                        best_l0 = l0
                        best_l1 = l1
                        best_nl = nl
            if best_f < 0:
                continue
            nl = best_nl
            nr = w - nl
            r1 = c1 - best_l1
            r0 = nr - r1
            A = best_l0 * best_l0 + best_l1 * best_l1
            B = r0 * r0 + r1 * r1
            Cp = c0 * c0 + c1 * c1
            if (A * nr + B * nl) * w < Cp * nl * nr:
                continue
            if (A * nr + B * nl) * w == Cp * nl * nr and not allow_zero:
                continue
            feature[node] = <int32_t>best_f
            split[node] = <int32_t>best_code
            # partition idx[start:end] so rows with code <= best_code come first
            lo = start
            hi = end - 1
            while lo <= hi:
                if codes[idx[lo], best_f] <= best_code:
                    lo += 1
                else:
                    t64 = idx[lo]
                    idx[lo] = idx[hi]
                    idx[hi] = t64
                    hi -= 1
            left[node] = <int32_t>next_id
            right[node] = <int32_t>(next_id + 1)
            stack[sp, 0] = next_id + 1
            stack[sp, 1] = lo
            stack[sp, 2] = end
            sp += 1
            stack[sp, 0] = next_id
            stack[sp, 1] = start
            stack[sp, 2] = lo
            sp += 1
            next_id += 2
    n = next_id
    return (feature_a[:n].copy(), split_a[:n].copy(), left_a[:n].copy(), right_a[:n].copy(),
            count0_a[:n].copy(), count1_a[:n].copy())


def apply_trees(X_in, int32_t[::1] feature, double[::1] threshold, int32_t[::1] left,
                int32_t[::1] right, roots_in):
    cdef double[:, ::1] X = np.ascontiguousarray(X_in, dtype=np.float64)
    cdef int64_t[::1] roots = np.ascontiguousarray(roots_in, dtype=np.int64)
    cdef Py_ssize_t n = X.shape[0], T = roots.shape[0]
    out_a = np.empty((n, T), dtype=np.int64)
    cdef int64_t[:, ::1] out = out_a
    cdef Py_ssize_t i, t
    cdef int64_t node
    cdef int32_t f
    cdef double v
    cdef Py_ssize_t bad_row = -1, bad_f = -1
    with nogil:
        for i in range(n):
            for t in range(T):
                node = roots[t]
                while feature[node] >= 0:
                    f = feature[node]
                    v = X[i, f]
                    if isnan(v):
                        bad_row = i
                        bad_f = f
                        break
                    if v <= threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                if bad_row >= 0:
                    break
                out[i, t] = node
            if bad_row >= 0:
                break
    if bad_row >= 0:
        raise ValueError(f"row {bad_row}: missing value for feature {bad_f}")
    return out_a


def smo_solve(K_in, y_in, double C, double eps, long max_iter):
    cdef double[:, ::1] K = np.ascontiguousarray(K_in, dtype=np.float64)
    cdef double[::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef Py_ssize_t n = y.shape[0]
    alpha_a = np.zeros(n)
    G_a = -np.ones(n)
    cdef double[::1] alpha = alpha_a
    cdef double[::1] G = G_a
    cdef long it = 0
    cdef Py_ssize_t i, j, t
    cdef double gmax, gmax2, myg, gd, quad, obj, obj_min
    cdef double Kij, qc, delta, diff, s, ai, aj, dai, daj, Ci = C, Cj = C
    cdef bint up, low, converged = False
    with nogil:
        while it < max_iter:
            gmax = -INFINITY
            i = -1
            for t in range(n):
                if y[t] > 0:
                    up = alpha[t] < C
                else:
                    up = alpha[t] > 0
                if up:
                    myg = -y[t] * G[t]
                    if myg > gmax:
                        gmax = myg
                        i = t
            if i < 0:
                converged = True
                break
            gmax2 = -INFINITY
            obj_min = INFINITY
            j = -1
            for t in range(n):
                if y[t] > 0:
                    low = alpha[t] > 0
                else:
                    low = alpha[t] < C
                if not low:
                    continue
                myg = -y[t] * G[t]
                if -myg > gmax2:
                    gmax2 = -myg
                gd = gmax - myg
                if gd > 0:
                    quad = K[i, i] + K[t, t] - 2.0 * K[i, t]
                    if not quad > 0:
                        quad = TAU
                    obj = -(gd * gd) / quad
                    if obj < obj_min:
                        obj_min = obj
                        j = t
            if gmax + gmax2 < eps or j < 0:
                converged = True
                break
            it += 1
            Kij = K[i, j]
            ai = alpha[i]
            aj = alpha[j]
            if y[i] != y[j]:
                qc = K[i, i] + K[j, j] + 2.0 * (y[i] * y[j] * Kij)
                if qc <= 0:
                    qc = TAU
                delta = (-G[i] - G[j]) / qc
                diff = ai - aj
                ai += delta
                aj += delta
                if diff > 0:
                    if aj < 0:
                        aj = 0.0
                        ai = diff
                elif ai < 0:
                    ai = 0.0
                    aj = -diff
                if diff > Ci - Cj:
                    if ai > Ci:
                        ai = Ci
                        aj = Ci - diff
                elif aj > Cj:
                    aj = Cj
                    ai = Cj + diff
            else:
                qc = K[i, i] + K[j, j] - 2.0 * (y[i] * y[j] * Kij)
                if qc <= 0:
                    qc = TAU
                delta = (G[i] - G[j]) / qc
                s = ai + aj
                ai -= delta
                aj += delta
                if s > Ci:
                    if ai > Ci:
                        ai = Ci
                        aj = s - Ci
                elif aj < 0:
                    aj = 0.0
                    ai = s
                if s > Cj:
                    if aj > Cj:
                        aj = Cj
                        ai = s - Cj
                elif ai < 0:
                    ai = 0.0
                    aj = s
            dai = ai - alpha[i]
            daj = aj - alpha[j]
            alpha[i] = ai
            alpha[j] = aj
            for t in range(n):
                G[t] += (y[i] * y[t] * K[i, t]) * dai + (y[j] * y[t] * K[j, t]) * daj
    return alpha_a, G_a, it, bool(converged)

"""Pure-Python/NumPy kernels.

These define the reference semantics; ``_ckernels.pyx`` must reproduce them
bit for bit (same split choices, same RNG stream, same SMO iterates).
"""
import numpy as np

_MASK = (1 << 64) - 1
TAU = 1e-12


class SplitMix64:
    """Counter-based generator shared by both kernel backends."""

    __slots__ = ("state",)

    def __init__(self, seed):
        self.state = int(seed) & _MASK

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def below(self, m):
        return self.next() % m


def sample_features(rng, p, mtry):
    perm = list(range(p))
    for j in range(mtry):
        r = j + rng.below(p - j)
        perm[j], perm[r] = perm[r], perm[j]
    return sorted(perm[:mtry])


def grow_tree(codes, n_levels, y, sample, min_split, min_bucket, mtry, seed, allow_zero=False):
    """Grow a Gini tree on integer-coded features.

    ``codes[i, f]`` is the rank of row i's value among feature f's distinct
    values; ``sample`` lists the rows in the tree's training set (repeats
    allowed). A split must lower the impurity, or with ``allow_zero`` at
    least not raise it. Returns flat node arrays in preorder; leaves have
    feature -1.
    """
    codes = np.asarray(codes, dtype=np.int32)
    y = np.asarray(y, dtype=np.int64)
    n_levels = np.asarray(n_levels, dtype=np.int64)
    p = codes.shape[1]
    m = len(sample)
    cap = max(2 * m - 1, 1)
    feature = np.full(cap, -1, dtype=np.int32)
    split = np.full(cap, -1, dtype=np.int32)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    count0 = np.zeros(cap, dtype=np.int64)
    count1 = np.zeros(cap, dtype=np.int64)
    rng = SplitMix64(seed)
    all_features = list(range(p))
    next_id = 1
    stack = [(0, np.asarray(sample, dtype=np.int64))]
    while stack:
        node, rows = stack.pop()
        yr = y[rows]
        w = int(rows.size)
        c1 = int(yr.sum())
        c0 = w - c1
        count0[node] = c0
        count1[node] = c1
        if c0 == 0 or c1 == 0 or w < min_split:
            continue
        feats = sample_features(rng, p, mtry) if mtry < p else all_features
        nf = len(feats)
        levels = n_levels[feats]
        offsets = np.concatenate(([0], np.cumsum(levels)[:-1]))
        total = int(levels.sum())
        sub = codes[np.ix_(rows, feats)] + offsets
        flat = sub.ravel()
        tot = np.bincount(flat, minlength=total).astype(np.int64)
        pos = np.bincount(flat, weights=np.repeat(yr, nf).astype(float),
                          minlength=total).astype(np.int64)
        # per-feature running sums: global cumsum minus the value at each segment start
        seg = np.repeat(np.arange(nf), levels)
        ctot = np.cumsum(tot)
        cpos = np.cumsum(pos)
        base_tot = np.concatenate(([0], ctot[offsets[1:] - 1]))
        base_pos = np.concatenate(([0], cpos[offsets[1:] - 1]))
        nl = ctot - base_tot[seg]
        l1 = cpos - base_pos[seg]
        l0 = nl - l1
        nr = w - nl
        r1 = c1 - l1
        r0 = nr - r1
        valid = (tot > 0) & (nl >= min_bucket) & (nr >= min_bucket) & (nr > 0)
        if not valid.any():
            continue
        idx = np.flatnonzero(valid)
        a = l0[idx] * l0[idx] + l1[idx] * l1[idx]
        b = r0[idx] * r0[idx] + r1[idx] * r1[idx]
        gain = a / nl[idx] + b / nr[idx]
        k = int(idx[int(np.argmax(gain))])
        A = int(l0[k]) ** 2 + int(l1[k]) ** 2
        B = int(r0[k]) ** 2 + int(r1[k]) ** 2
        Cp = c0 * c0 + c1 * c1
        nlk, nrk = int(nl[k]), int(nr[k])
        lhs, rhs = (A * nrk + B * nlk) * w, Cp * nlk * nrk
        if lhs < rhs or (lhs == rhs and not allow_zero):
            continue
        f = feats[int(seg[k])]
        code = k - int(offsets[seg[k]])
        feature[node] = f
        split[node] = code
        go_left = codes[rows, f] <= code
        left[node], right[node] = next_id, next_id + 1
        next_id += 2
        stack.append((next_id - 1, rows[~go_left]))
        stack.append((next_id - 2, rows[go_left]))
    n = next_id
    return (feature[:n].copy(), split[:n].copy(), left[:n].copy(), right[:n].copy(),
            count0[:n].copy(), count1[:n].copy())


def apply_trees(X, feature, threshold, left, right, roots):
    """Leaf reached by every row in every tree, as an (n, n_trees) array.

    Trees are stored back to back in the node arrays; ``roots`` holds each
    tree's root position. A NaN on a routing path raises ValueError.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    out = np.empty((n, len(roots)), dtype=np.int64)
    rows = np.arange(n)
    for t, root in enumerate(roots):
        node = np.full(n, root, dtype=np.int64)
        active = feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[active]
            f = feature[nd]
            v = X[r, f]
            if np.isnan(v).any():
                bad = int(r[np.isnan(v)][0])
                raise ValueError(f"row {bad}: missing value for feature {int(f[np.isnan(v)][0])}")
            node[active] = np.where(v <= threshold[nd], left[nd], right[nd])
            active = feature[node] >= 0
        out[:, t] = node
    return out


def smo_solve(K, y, C, eps, max_iter):
    """Dual C-SVC by SMO with second-order working-set selection.

    Returns ``(alpha, G, iterations, converged)`` where G is the dual
    gradient Q alpha - 1 at the final iterate.
    """
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.size
    alpha = np.zeros(n)
    G = -np.ones(n)
    QD = np.diag(K).copy()
    pos = y > 0
    it = 0
    while it < max_iter:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        minus_yg = -y * G
        cand = np.where(up, minus_yg, -np.inf)
        i = int(np.argmax(cand))
        gmax = cand[i]
        if gmax == -np.inf:
            return alpha, G, it, True
        lowvals = np.where(low, minus_yg, np.inf)
        gmax2 = -np.min(lowvals) if low.any() else -np.inf
        if gmax + gmax2 < eps:
            return alpha, G, it, True
        grad_diff = gmax - minus_yg
        ok = low & (grad_diff > 0)
        if not ok.any():
            return alpha, G, it, True
        quad = QD[i] + QD - 2.0 * K[i]
        quad = np.where(quad > 0, quad, TAU)
        obj = np.where(ok, -(grad_diff * grad_diff) / quad, np.inf)
        j = int(np.argmin(obj))
        it += 1
        Kij = K[i, j]
        Ci = Cj = C
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            qc = QD[i] + QD[j] + 2.0 * (y[i] * y[j] * Kij)
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
            qc = QD[i] + QD[j] - 2.0 * (y[i] * y[j] * Kij)
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
        Qi = y[i] * y * K[i]
        Qj = y[j] * y * K[j]
        G += Qi * dai + Qj * daj
    return alpha, G, it, False

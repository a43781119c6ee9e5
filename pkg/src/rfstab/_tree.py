"""Compiled kernels for growing and evaluating CART regression trees.

Trees are stored as flat node arrays. A node with ``feature == -1`` is a
leaf; otherwise samples with ``x[feature] <= threshold`` go to ``left``.
Child indices are local to the tree.
"""

import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, nogil=True)
def grow_tree(X, y, bag, feature_keys, mtry, min_node_size, max_depth):
    """Grow one tree on the rows ``bag`` (with repetitions) of ``(X, y)``.

    ``feature_keys[k]`` ranks the features for the k-th created node; the
    ``mtry`` smallest keys are the candidate split features. ``max_depth < 0``
    means unlimited depth.
    """
    n = bag.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, LEAF, dtype=np.int32)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int32)
    right = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap, dtype=np.float64)

    samples = bag.copy()
    buf = np.empty(n, dtype=samples.dtype)
    xs = np.empty(n, dtype=np.float64)
    ys = np.empty(n, dtype=np.float64)

    stack_node = np.empty(cap, dtype=np.int64)
    stack_start = np.empty(cap, dtype=np.int64)
    stack_end = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int64)
    stack_node[0] = 0
    stack_start[0] = 0
    stack_end[0] = n
    stack_depth[0] = 0
    top = 1
    n_nodes = 1

    while top > 0:
        top -= 1
        node = stack_node[top]
        start = stack_start[top]
        end = stack_end[top]
        depth = stack_depth[top]
        m = end - start

        total = 0.0
        lo = np.inf
        hi = -np.inf
        for k in range(start, end):
            v = y[samples[k]]
            total += v
            if v < lo:
                lo = v
            if v > hi:
                hi = v
        if lo == hi:
            value[node] = lo
            continue
        # floating-point guard: a leaf mean never leaves the node's range
        mean = min(max(total / m, lo), hi)
        value[node] = mean
        if m <= min_node_size or (max_depth >= 0 and depth >= max_depth):
            continue

        candidates = np.sort(np.argsort(feature_keys[node])[:mtry])
        parent_score = total * total / m
        best_score = parent_score
        best_feature = -1
        best_threshold = 0.0
        for f in candidates:
            for k in range(m):
                xs[k] = X[samples[start + k], f]
            order = np.argsort(xs[:m], kind="mergesort")
            for k in range(m):
                ys[k] = y[samples[start + order[k]]]
            s_left = 0.0
            for k in range(m - 1):
                s_left += ys[k]
                a = xs[order[k]]
                b = xs[order[k + 1]]
                if a < b:
                    n_left = k + 1
                    s_right = total - s_left
                    score = s_left * s_left / n_left + s_right * s_right / (m - n_left)
                    # equal partitions can differ in the last bits; keep the earlier one
                    if score > best_score + 1e-12 * abs(best_score):
                        best_score = score
                        best_feature = f
                        thr = 0.5 * (a + b)
                        if thr >= b:
                            thr = a
                        best_threshold = thr
        if best_feature < 0 or best_score - parent_score <= 1e-12 * abs(parent_score):
            continue

        n_left = 0
        n_right = 0
        for k in range(start, end):
            s = samples[k]
            if X[s, best_feature] <= best_threshold:
                samples[start + n_left] = s
                n_left += 1
            else:
                buf[n_right] = s
                n_right += 1
        for k in range(n_right):
            samples[start + n_left + k] = buf[k]

        li = n_nodes
        ri = n_nodes + 1
        n_nodes += 2
        feature[node] = best_feature
        threshold[node] = best_threshold
        left[node] = li
        right[node] = ri
        # right pushed first so the left subtree is expanded first
        stack_node[top] = ri
        stack_start[top] = start + n_left
        stack_end[top] = end
        stack_depth[top] = depth + 1
        top += 1
        stack_node[top] = li
        stack_start[top] = start
        stack_end[top] = start + n_left
        stack_depth[top] = depth + 1
        top += 1

    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def apply_trees(feature, threshold, left, right, value, offsets, X):
    """Evaluate every tree at every row of ``X``; returns a (B, m) matrix."""
    n_trees = offsets.shape[0] - 1
    m = X.shape[0]
    out = np.empty((n_trees, m), dtype=np.float64)
    for b in range(n_trees):
        base = offsets[b]
        for j in range(m):
            node = 0
            while feature[base + node] != LEAF:
                f = feature[base + node]
                if X[j, f] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[b, j] = value[base + node]
    return out

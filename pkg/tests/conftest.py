"""Shared fixtures and independent oracle implementations.

The oracles here are deliberately naive (loops, enumeration, dense linear
algebra) and never call the code paths they are used to check.
"""

import itertools

import numpy as np
import pytest

from prefrank import dataset, face


# -- oracles ------------------------------------------------------------------


def brute_force_kendall(order_a, order_b) -> float:
    """O(n^2) pair counting straight from the definition."""
    items = list(order_a)
    pos_a = {item: i for i, item in enumerate(order_a)}
    pos_b = {item: i for i, item in enumerate(order_b)}
    concordant = discordant = 0
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            x, y = items[i], items[j]
            da = pos_a[x] - pos_a[y]
            db = pos_b[x] - pos_b[y]
            if da * db > 0:
                concordant += 1
            else:
                discordant += 1
    total = len(items) * (len(items) - 1) // 2
    return (concordant - discordant) / total


def reference_merge_sort(items, stronger):
    """Plain recursive top-down merge sort (descending by `stronger`).

    Returns (sorted_list, comparison_count). Splits at len // 2 like the
    session scheduler, but is an independent implementation.
    """
    count = 0

    def merge(left, right):
        nonlocal count
        out = []
        i = j = 0
        while i < len(left) and j < len(right):
            count += 1
            if stronger(left[i], right[j]) == left[i]:
                out.append(left[i])
                i += 1
            else:
                out.append(right[j])
                j += 1
        out.extend(left[i:])
        out.extend(right[j:])
        return out

    def sort(seq):
        if len(seq) <= 1:
            return list(seq)
        mid = len(seq) // 2
        return merge(sort(seq[:mid]), sort(seq[mid:]))

    return sort(list(items)), count


def brute_force_max_min_subset(vectors, k):
    """Exhaustive max-min-distance subset search (cosine distance)."""
    n = len(vectors)
    best_subset, best_score = None, -1.0
    for subset in itertools.combinations(range(n), k):
        dmin = min(
            1.0 - dataset.cosine_similarity(vectors[i], vectors[j])
            for i, j in itertools.combinations(subset, 2))
        if dmin > best_score:
            best_score, best_subset = dmin, subset
    return set(best_subset), best_score


def bilinear_at(src, y, x):
    """Scalar bilinear sample with clamped half-pixel coordinates."""
    h, w = src.shape
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    y0, x0 = int(np.floor(y)), int(np.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    wy, wx = y - y0, x - x0
    return ((src[y0, x0] * (1 - wx) + src[y0, x1] * wx) * (1 - wy)
            + (src[y1, x0] * (1 - wx) + src[y1, x1] * wx) * wy)


def latent_closed_form(v, emotion, seed=0):
    """Literal reimplementation of the synthetic intensity definition."""
    arr = np.asarray(v, dtype=float)
    dim = arr.shape[0]
    bounds = [round(g * dim / 6) for g in range(7)]
    feats = np.array([arr[bounds[g]:bounds[g + 1]].mean() for g in range(6)])
    target = face.emotion_feature_target(emotion, seed)
    d2 = float(np.sum((feats - target) ** 2))
    dmax2 = float(np.sum(np.maximum(target, 1 - target) ** 2))
    s2 = 0.0625 * dmax2
    bump = np.exp(-d2 / (2 * s2))
    floor = np.exp(-dmax2 / (2 * s2))
    return (bump - floor) / (1 - floor)


# -- fixtures -----------------------------------------------------------------


@pytest.fixture(scope="session")
def tiny_pool():
    """16 entries with spread-out feature values; ids 0..15."""
    rng = np.random.default_rng(424242)
    entries = []
    for i in range(16):
        phi = rng.uniform(0.05, 0.95, 6)
        v = np.empty(35)
        bounds = [round(g * 35 / 6) for g in range(7)]
        for g in range(6):
            v[bounds[g]:bounds[g + 1]] = phi[g]
        entries.append(dataset.PoolEntry(i, v))
    return dataset.CandidatePool(entries)


@pytest.fixture(scope="session")
def neutral_vector():
    return np.full(35, 0.5)

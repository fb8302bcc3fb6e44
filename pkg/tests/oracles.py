"""Independent reference implementations used only by the tests."""

import numpy as np


def brute_dominates(a, b):
    better_somewhere = False
    for x, y in zip(a, b):
        if x > y:
            return False
        if x < y:
            better_somewhere = True
    return better_somewhere


def brute_ranks(points):
    """rank(p) = 1 + max rank of its dominators, by repeated relaxation."""
    n = len(points)
    ranks = [1] * n
    changed = True
    while changed:
        changed = False
        for i in range(n):
            for j in range(n):
                if brute_dominates(points[j], points[i]) and ranks[i] < ranks[j] + 1:
                    ranks[i] = ranks[j] + 1
                    changed = True
    return ranks


def monte_carlo_hypervolume(points, reference, n_samples, rng):
    """Estimate and standard error of the dominated volume by uniform sampling."""
    points = np.asarray(points, dtype=float)
    reference = np.asarray(reference, dtype=float)
    lower = points.min(axis=0)
    box = np.prod(reference - lower)
    hits = np.zeros(n_samples, dtype=bool)
    chunk = 200_000
    for start in range(0, n_samples, chunk):
        stop = min(start + chunk, n_samples)
        u = lower + rng.random((stop - start, points.shape[1])) * (reference - lower)
        covered = np.zeros(stop - start, dtype=bool)
        for p in points:
            covered |= np.all(u >= p, axis=1)
        hits[start:stop] = covered
    frac = hits.mean()
    return box * frac, box * np.sqrt(frac * (1 - frac) / n_samples)


def definition_ranks(points):
    """Same definition as :func:`brute_ranks`, vectorized for larger sets.

    ``D[j, i]`` is ``all(p_j <= p_i) and any(p_j < p_i)``; ranks are relaxed
    to ``1 + max rank over dominators`` until nothing changes.
    """
    P = np.asarray(points, dtype=float)
    le = np.all(P[:, None, :] <= P[None, :, :], axis=2)
    lt = np.any(P[:, None, :] < P[None, :, :], axis=2)
    D = le & lt
    ranks = np.ones(len(P), dtype=int)
    while True:
        new = np.where(D, ranks[:, None], 0).max(axis=0, initial=0) + 1
        if np.array_equal(new, ranks):
            return ranks
        ranks = new

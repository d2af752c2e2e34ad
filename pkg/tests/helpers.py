"""Shared test oracles: exhaustive 1-D k-means, least-squares separability."""

import itertools

import numpy as np


def contiguous_optimum(values, k):
    """Exact 1-D k-means optimum by enumerating contiguous partitions.

    The optimal 1-D clustering always splits the sorted values into
    contiguous runs, so trying every cut set of at most k-1 cuts is exact.
    Returns (wcss, centroids as an ascending tuple).
    """
    vs = np.sort(np.asarray(values, dtype=np.float64))
    n = len(vs)
    best = None
    for parts in range(1, min(k, n) + 1):
        for cuts in itertools.combinations(range(1, n), parts - 1):
            bounds = (0,) + cuts + (n,)
            wcss, cents = 0.0, []
            for a, b in zip(bounds[:-1], bounds[1:]):
                seg = vs[a:b]
                m = seg.mean()
                cents.append(float(m))
                wcss += float(((seg - m) ** 2).sum())
            if best is None or wcss < best[0]:
                best = (wcss, tuple(cents))
    return best


def kmeans_wcss(values, centroids):
    values = np.asarray(values, dtype=np.float64).ravel()
    d = (values[:, None] - np.asarray(centroids)[None, :]) ** 2
    return float(d.min(axis=1).sum())


def lstsq_accuracy(x_train, y_train, x_test, y_test, classes):
    """Test accuracy of a closed-form one-hot least-squares classifier."""
    X = np.hstack([x_train, np.ones((len(x_train), 1))])
    W, *_ = np.linalg.lstsq(X, np.eye(classes)[y_train], rcond=None)
    Xt = np.hstack([x_test, np.ones((len(x_test), 1))])
    return float((np.argmax(Xt @ W, axis=1) == y_test).mean())

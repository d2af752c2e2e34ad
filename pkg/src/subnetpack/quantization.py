"""Codebook quantization: 1-D k-means, per-layer codebooks, adaptive bit-width.

Weights inside a task's mask are clustered into 2^psi centroids per layer;
codes index the centroid table. Centroids are held as IEEE-754 32-bit values,
matching the serialized form bit-exactly. The adaptive loop raises psi one bit
at a time until validation accuracy is within delta of the full-precision
reference.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import CapacityExhausted, CorruptCodesError, ToleranceWarning
from .network import DenseWeights, evaluate
from .seeding import rng_from


@dataclass(frozen=True)
class QuantConfig:
    psi_init: int = 2
    psi_max: int = 8
    delta: float = 0.01
    kmeans_iters: int = 50
    kmeans_restarts: int = 3
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.psi_init <= self.psi_max <= 16):
            raise ValueError("need 1 <= psi_init <= psi_max <= 16")
        if self.delta < 0:
            raise ValueError("delta must be >= 0")
        if self.kmeans_iters < 1 or self.kmeans_restarts < 1:
            raise ValueError("kmeans_iters and kmeans_restarts must be >= 1")


@dataclass
class Codebook:
    """Per-layer centroid tables for one task at one bit-width."""

    psi: int
    centroids: list[np.ndarray]  # float32, length <= 2^psi per layer

    def lengths(self) -> list[int]:
        return [len(c) for c in self.centroids]


@dataclass
class QuantizedTaskWeights:
    """Codes per masked slot (row-major slot order) plus the owning codebook."""

    mask: object  # TaskMask or sequence of per-layer bool arrays
    codes: list[np.ndarray]  # uint32 per layer
    codebook: Codebook
    task_id: int | None = None


def _prefix_sums(sorted_values):
    p1 = np.concatenate(([0.0], np.cumsum(sorted_values)))
    p2 = np.concatenate(([0.0], np.cumsum(sorted_values**2)))
    return p1, p2


def _cluster_bounds(sorted_values, centroids):
    """Right-open boundary indices per cluster; midpoint ties go to the lower cluster."""
    mids = (centroids[:-1] + centroids[1:]) / 2.0
    inner = np.searchsorted(sorted_values, mids, side="right")
    return np.concatenate((inner, [len(sorted_values)]))

def _wcss_per_cluster(p1, p2, bounds):
    lo = np.concatenate(([0], bounds[:-1]))
    counts = bounds - lo
    sums = p1[bounds] - p1[lo]
    sqs = p2[bounds] - p2[lo]
    wcss = np.zeros(len(bounds))
    nz = counts > 0
    wcss[nz] = sqs[nz] - sums[nz] ** 2 / counts[nz]
    return wcss, counts, sums


def _lloyd(sorted_values, p1, p2, init, iters):
    """Lloyd iterations on sorted scalars; returns (centroids, wcss)."""
    cent = np.sort(np.asarray(init, dtype=np.float64))
    for _ in range(iters):
        bounds = _cluster_bounds(sorted_values, cent)
        _, counts, sums = _wcss_per_cluster(p1, p2, bounds)
        new = cent.copy()
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz]
        new = np.sort(new)
        if np.array_equal(new, cent):
            break
        cent = new
    bounds = _cluster_bounds(sorted_values, cent)
    wcss, counts, _ = _wcss_per_cluster(p1, p2, bounds)
    # drop clusters that ended up empty; total error is unaffected
    return cent[counts > 0], float(wcss.sum())


def _assign(values, centroids):
    mids = (centroids[:-1] + centroids[1:]) / 2.0
    return np.searchsorted(mids, values, side="left").astype(np.uint32)


# Distinct-value count up to which the global optimum is computed outright
# instead of trusting restarts to find it.
_EXACT_LIMIT = 64


def _optimal_contiguous(uniq, counts, k):
    """Exact 1-D k-means over weighted distinct values.

    The optimal 1-D partition is contiguous in sorted order, so dynamic
    programming over distinct values with multiplicity weights finds the
    global minimum. Cost is O(k d^2) for d distinct values; callers gate on
    _EXACT_LIMIT. Returns ascending cluster means.
    """
    d = uniq.size
    cw = counts.astype(np.float64)
    w = np.concatenate(([0.0], np.cumsum(cw)))
    s = np.concatenate(([0.0], np.cumsum(cw * uniq)))
    q = np.concatenate(([0.0], np.cumsum(cw * uniq * uniq)))

    dp = np.full((k + 1, d), np.inf)
    cut = np.zeros((k + 1, d), dtype=np.int64)
    dp[1] = q[1:] - s[1:] ** 2 / w[1:]
    for m in range(2, k + 1):
        for j in range(m - 1, d):
            i = np.arange(m - 1, j + 1)
            left = w[j + 1] - w[i]
            mass = s[j + 1] - s[i]
            cost = dp[m - 1][i - 1] + q[j + 1] - q[i] - mass**2 / left
            arg = int(np.argmin(cost))
            dp[m][j] = cost[arg]
            cut[m][j] = m - 1 + arg

    cent = np.empty(k)
    j = d - 1
    for m in range(k, 0, -1):
        i = int(cut[m][j])
        cent[m - 1] = (s[j + 1] - s[i]) / (w[j + 1] - w[i])
        j = i - 1
    return cent


def kmeans_1d(values, k, cfg: QuantConfig, rng=None, extra_init=None):
    """Minimum within-cluster-sum-of-squares clustering of scalars.

    Small inputs (at most _EXACT_LIMIT distinct values) are solved exactly by
    dynamic programming. Larger inputs run best-of-restarts Lloyd iterations:
    restart 0 starts from k evenly spaced quantiles, later restarts pick k
    distinct values at random, and extra_init, when given, competes as one
    more start (used to warm-start bit-width increments). Returns ascending
    centroids and per-value nearest-centroid assignments, ties to the lower
    index. k of at least the distinct-value count reproduces the values
    exactly.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("cannot cluster an empty value set")
    if k < 1:
        raise ValueError("k must be >= 1")

    uniq, uniq_counts = np.unique(values, return_counts=True)
    if uniq.size <= k:
        return uniq.copy(), _assign(values, uniq)

    if uniq.size <= _EXACT_LIMIT:
        centroids = _optimal_contiguous(uniq, uniq_counts, k)
        return centroids, _assign(values, centroids)

    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    sorted_values = np.sort(values)
    p1, p2 = _prefix_sums(sorted_values)

    inits = [np.quantile(sorted_values, (np.arange(k) + 0.5) / k)]
    if extra_init is not None:
        inits.append(np.asarray(extra_init, dtype=np.float64))
    for _ in range(cfg.kmeans_restarts - 1):
        inits.append(rng.choice(uniq, size=k, replace=False))

    best = None
    for init in inits:
        cent, err = _lloyd(sorted_values, p1, p2, np.unique(init), cfg.kmeans_iters)
        if best is None or err < best[1]:
            best = (cent, err)
    centroids = best[0]
    return centroids, _assign(values, centroids)


def _split_worst(sorted_values, p1, p2, centroids, k_target):
    """Grow a centroid set toward k_target by quantile-splitting worst clusters.

    The input centroids are all kept, so a Lloyd run from the result can never
    end with a higher objective than the run that produced them.
    """
    cent = list(np.sort(centroids))
    while len(cent) < k_target:
        bounds = _cluster_bounds(sorted_values, np.asarray(cent))
        wcss, _, _ = _wcss_per_cluster(p1, p2, bounds)
        order = np.argsort(wcss)[::-1]
        added = False
        for j in order:
            if wcss[j] <= 0.0:
                break
            lo = 0 if j == 0 else bounds[j - 1]
            members = sorted_values[lo : bounds[j]]
            for q in (0.25, 0.75):
                if len(cent) >= k_target:
                    break
                candidate = float(np.quantile(members, q))
                if candidate not in cent:
                    cent.append(candidate)
                    added = True
            if added:
                break
        if not added:
            break  # every cluster already has zero error
        cent.sort()
    return np.asarray(cent)


def nonlinear_quantize(psi, masked_values, cfg: QuantConfig, warm: Codebook | None = None,
                       mask=None, task_id=None):
    """Cluster each layer's masked weights into 2^psi codes plus a codebook.

    masked_values is one 1-D array per layer (row-major slot order). Layers
    with no masked weights get an empty codebook entry. A warm codebook from a
    lower bit-width seeds the restarts so reconstruction error cannot rise.
    """
    if psi < 1:
        raise ValueError("psi must be >= 1")
    k = 1 << psi
    centroid_tables, code_arrays = [], []
    for layer_idx, vals in enumerate(masked_values):
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if vals.size == 0:
            centroid_tables.append(np.zeros(0, dtype=np.float32))
            code_arrays.append(np.zeros(0, dtype=np.uint32))
            continue
        extra = None
        if warm is not None and len(warm.centroids[layer_idx]):
            sv = np.sort(vals)
            p1, p2 = _prefix_sums(sv)
            extra = _split_worst(sv, p1, p2,
                                 warm.centroids[layer_idx].astype(np.float64), k)
        rng = rng_from(cfg.seed, layer_idx, psi)
        centroids, codes = kmeans_1d(vals, k, cfg, rng=rng, extra_init=extra)
        centroid_tables.append(centroids.astype(np.float32))
        code_arrays.append(codes)
    book = Codebook(psi, centroid_tables)
    return QuantizedTaskWeights(mask, code_arrays, book, task_id), book


def identity_quantize(mask, trained_weights: DenseWeights, task_id=None):
    """32-bit storage for pruning-only runs: codes are float32 bit patterns.

    No codebook is needed; dequantize recovers the float32 cast of each masked
    weight directly from its code.
    """
    code_arrays, tables = [], []
    for i, m in enumerate(mask):
        flat = np.asarray(m, dtype=bool).ravel()
        vals = trained_weights.weights[i].ravel()[flat].astype(np.float32)
        code_arrays.append(vals.view(np.uint32).copy())
        tables.append(np.zeros(0, dtype=np.float32))
    book = Codebook(32, tables)
    return QuantizedTaskWeights(mask, code_arrays, book, task_id), book


def dequantize(q: QuantizedTaskWeights) -> list[np.ndarray]:
    """Full-shape weight arrays from codes; slots outside the mask are zero."""
    identity = q.codebook.psi == 32
    out = []
    for i, m in enumerate(q.mask):
        m = np.asarray(m, dtype=bool)
        codes = q.codes[i]
        full = np.zeros(m.size, dtype=np.float64)
        if identity:
            if codes.size:
                full[m.ravel()] = codes.view(np.float32).astype(np.float64)
        else:
            table = q.codebook.centroids[i]
            if codes.size and (len(table) == 0 or codes.max() >= len(table)):
                raise CorruptCodesError(
                    f"layer {i}: code {int(codes.max())} outside codebook of {len(table)}"
                )
            if codes.size:
                full[m.ravel()] = table[codes].astype(np.float64)
        out.append(full.reshape(m.shape))
    return out


def reconstruction_error(q: QuantizedTaskWeights, masked_values) -> float:
    """Total squared error between masked weights and their codebook values."""
    total = 0.0
    for vals, codes, table in zip(masked_values, q.codes, q.codebook.centroids):
        vals = np.asarray(vals, dtype=np.float64).ravel()
        if vals.size:
            total += float(((vals - table[codes].astype(np.float64)) ** 2).sum())
    return total


def adaptive_quantize(task_id, spec, mask, trained_weights: DenseWeights, q_ref,
                      val_data, cfg: QuantConfig, psi_cap: int | None = None):
    """Escalate bit-width until quantized accuracy is within delta of q_ref.

    Returns (psi, QuantizedTaskWeights, Codebook, quantized accuracy). psi_cap
    is the tightest remaining-bit budget over the masked slots; needing more
    raises CapacityExhausted. Hitting psi_max above tolerance returns with a
    ToleranceWarning instead of failing.
    """
    X_val, y_val = val_data
    masked_values = [
        trained_weights.weights[i].ravel()[np.asarray(mask[i], dtype=bool).ravel()]
        for i in range(spec.n_layers)
    ]
    cap = cfg.psi_max if psi_cap is None else min(cfg.psi_max, psi_cap)
    if cfg.psi_init > cap:
        raise CapacityExhausted(
            range(spec.n_layers),
            f"bit-width {cfg.psi_init} exceeds the {cap}-bit slot budget of the mask",
        )

    psi = cfg.psi_init
    warm = None
    while True:
        q, book = nonlinear_quantize(psi, masked_values, cfg, warm=warm,
                                     mask=mask, task_id=task_id)
        view = DenseWeights(dequantize(q), [b.copy() for b in trained_weights.biases])
        acc = evaluate(spec, view, mask, X_val, y_val)
        if acc >= q_ref - cfg.delta:
            return psi, q, book, acc
        if psi >= cfg.psi_max:
            warnings.warn(
                f"task {task_id}: accuracy {acc:.4f} still below {q_ref - cfg.delta:.4f} "
                f"at psi_max={cfg.psi_max}",
                ToleranceWarning,
                stacklevel=2,
            )
            return psi, q, book, acc
        if psi + 1 > cap:
            raise CapacityExhausted(
                range(spec.n_layers),
                f"bit-width {psi + 1} exceeds the {cap}-bit slot budget of the mask",
            )
        warm = book
        psi += 1

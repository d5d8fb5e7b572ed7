"""kNN graphs, fuzzy simplicial sets, and a from-scratch 2-D layout optimizer.

The optimizer follows the standard UMAP recipe: per-point adaptive kernels
(rho = nearest-neighbor distance, sigma solved by binary search so the
smoothed neighborhood cardinality hits log2(k)), probabilistic t-conorm
symmetrization, a low-dimensional similarity curve 1 / (1 + a * d^(2b))
fitted to the min_dist target, and negative-sampling stochastic gradient
descent with an epochs-per-sample schedule. Single-threaded optimization is
bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

log = logging.getLogger(__name__)

SMOOTH_K_TOLERANCE = 1e-5
SMOOTH_K_ITER = 64
GRAD_CLIP = 4.0
REPULSION_EPS = 1e-3
EXACT_KNN_LIMIT = 20_000

NN_DESCENT_MAX_ITER = 10
NN_DESCENT_SAMPLE_RATE = 0.5
NN_DESCENT_DELTA = 0.001
NN_DESCENT_TREES = 6

SPECTRAL_MAX_ITER = 500
SPECTRAL_TOL = 1e-6

INIT_RANGE = 10.0


@dataclass(frozen=True)
class LayoutConfig:
    """Knobs for the layout stage; defaults follow common UMAP conventions."""

    n_neighbors: int = 15
    min_dist: float = 0.1
    n_epochs: int = 200
    learning_rate: float = 1.0
    negative_samples: int = 5
    seed: int = 42
    init: str = "random"
    knn_mode: str | None = None  # None -> exact for n <= 20000, nn_descent above

    def __post_init__(self):
        if self.n_neighbors < 2:
            raise ValueError("n_neighbors must be >= 2")
        if self.min_dist <= 0.0:
            raise ValueError("min_dist must be > 0")
        if self.n_epochs < 1:
            raise ValueError("n_epochs must be >= 1")
        if self.init not in ("random", "spectral"):
            raise ValueError(f"unknown init {self.init!r}")
        if self.knn_mode not in (None, "exact", "nn_descent"):
            raise ValueError(f"unknown knn_mode {self.knn_mode!r}")

    def resolve_knn_mode(self, n: int) -> str:
        if self.knn_mode is not None:
            return self.knn_mode
        return "exact" if n <= EXACT_KNN_LIMIT else "nn_descent"


@dataclass
class KnnGraph:
    """Per-point k nearest neighbors, each row sorted ascending by distance."""

    indices: np.ndarray    # (n, k) int64, no self-neighbors
    distances: np.ndarray  # (n, k) float64, non-negative ascending
    metric_tag: str = "euclidean"

    @property
    def n(self) -> int:
        return int(self.indices.shape[0])

    @property
    def k(self) -> int:
        return int(self.indices.shape[1])


@dataclass
class FuzzyGraph:
    """Symmetric weighted edge list with i < j and weights in (0, 1]."""

    heads: np.ndarray    # (m,) int64
    tails: np.ndarray    # (m,) int64
    weights: np.ndarray  # (m,) float64
    n: int


@dataclass
class Layout2D:
    """Per-object 2-D coordinates plus the config that produced them."""

    ids: list[str]
    coords: np.ndarray  # (n, 2) float64
    config: LayoutConfig

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max)."""
        return (float(self.coords[:, 0].min()), float(self.coords[:, 1].min()),
                float(self.coords[:, 0].max()), float(self.coords[:, 1].max()))


# ---------------------------------------------------------------------------
# kNN graph construction
# ---------------------------------------------------------------------------

def _exact_knn(data: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    n = data.shape[0]
    sq = np.einsum("ij,ij->i", data, data)
    indices = np.empty((n, k), dtype=np.int64)
    dists = np.empty((n, k), dtype=np.float64)
    block = max(1, int(16_000_000 // max(n, 1)))
    for start in range(0, n, block):
        end = min(n, start + block)
        d2 = sq[start:end, None] + sq[None, :] - 2.0 * (data[start:end] @ data.T)
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(end - start), np.arange(start, end)] = np.inf
        # Stable sort makes equal distances resolve to the lower index.
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        indices[start:end] = order
        dists[start:end] = np.sqrt(np.take_along_axis(d2, order, axis=1))
    return indices, dists


@numba.njit(cache=True, inline="always")
def _rand_u64(state):
    # xorshift64*; state must stay nonzero
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return x * np.uint64(0x2545F4914F6CDD1D)


@numba.njit(cache=True, inline="always")
def _rand_int(state, bound):
    return int(_rand_u64(state) >> np.uint64(33)) % bound


@numba.njit(cache=True, inline="always")
def _rand_unit(state):
    return float(_rand_u64(state) >> np.uint64(11)) / 9007199254740992.0


def _seed_state(seed: int) -> np.ndarray:
    mixed = ((seed & 0xFFFFFFFFFFFFFFFF) * 0x9E3779B97F4A7C15
             + 0x6A09E667F3BCC909) & 0xFFFFFFFFFFFFFFFF
    if mixed == 0:
        mixed = 0x853C49E6748FEA9B
    return np.array([mixed], dtype=np.uint64)


@numba.njit(cache=True, inline="always")
def _sqdist(data, i, j):
    acc = 0.0
    for c in range(data.shape[1]):
        diff = data[i, c] - data[j, c]
        acc += diff * diff
    return acc


@numba.njit(cache=True)
def _heap_push(heap_d, heap_i, heap_f, row, d, idx, flag):
    if d >= heap_d[row, 0]:
        return 0
    size = heap_d.shape[1]
    for j in range(size):
        if heap_i[row, j] == idx:
            return 0
    heap_d[row, 0] = d
    heap_i[row, 0] = idx
    heap_f[row, 0] = flag
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        swap = i
        if left < size and heap_d[row, left] > heap_d[row, swap]:
            swap = left
        if right < size and heap_d[row, right] > heap_d[row, swap]:
            swap = right
        if swap == i:
            break
        heap_d[row, i], heap_d[row, swap] = heap_d[row, swap], heap_d[row, i]
        heap_i[row, i], heap_i[row, swap] = heap_i[row, swap], heap_i[row, i]
        heap_f[row, i], heap_f[row, swap] = heap_f[row, swap], heap_f[row, i]
        i = swap
    return 1


@numba.njit(cache=True, inline="always")
def _cand_add(cand, counts, state, row, node):
    # reservoir sampling into a fixed-width candidate list
    seen = counts[row]
    cap = cand.shape[1]
    if seen < cap:
        cand[row, seen] = node
    else:
        pos = _rand_int(state, seen + 1)
        if pos < cap:
            cand[row, pos] = node
    counts[row] = seen + 1


@numba.njit(cache=True)
def _rp_forest_init(data, heap_d, heap_i, heap_f, state, n_trees, leaf_size):
    # Random-projection trees (split by the closer of two random anchors)
    # seed the neighbor heaps with locality, which random init cannot give
    # in high dimensions.
    n = data.shape[0]
    order = np.empty(n, dtype=np.int64)
    stack = np.empty((4096, 2), dtype=np.int64)
    for _ in range(n_trees):
        for i in range(n):
            order[i] = i
        top = 0
        stack[top, 0] = 0
        stack[top, 1] = n
        top += 1
        while top > 0:
            top -= 1
            start, end = stack[top, 0], stack[top, 1]
            m = end - start
            if m <= leaf_size:
                for ai in range(start, end):
                    a = order[ai]
                    for bi in range(ai + 1, end):
                        b = order[bi]
                        d = _sqdist(data, a, b)
                        _heap_push(heap_d, heap_i, heap_f, a, d, b, True)
                        _heap_push(heap_d, heap_i, heap_f, b, d, a, True)
                continue
            pa = order[start + _rand_int(state, m)]
            pb = order[start + _rand_int(state, m)]
            tries = 0
            while pb == pa and tries < 8:
                pb = order[start + _rand_int(state, m)]
                tries += 1
            if pa == pb:
                mid = start + m // 2
            else:
                i2 = start
                j2 = end - 1
                while i2 <= j2:
                    x = order[i2]
                    if _sqdist(data, x, pa) <= _sqdist(data, x, pb):
                        i2 += 1
                    else:
                        order[i2], order[j2] = order[j2], order[i2]
                        j2 -= 1
                mid = i2
                if mid == start or mid == end:
                    mid = start + m // 2  # degenerate split: force halves
            if top + 2 <= stack.shape[0]:
                stack[top, 0] = start
                stack[top, 1] = mid
                top += 1
                stack[top, 0] = mid
                stack[top, 1] = end
                top += 1


@numba.njit(cache=True)
def _nn_descent(data, k, state, max_iter, sample_rate, delta, max_candidates):
    n = data.shape[0]
    heap_d = np.full((n, k), np.inf)
    heap_i = np.full((n, k), -1, dtype=np.int64)
    heap_f = np.zeros((n, k), dtype=np.bool_)

    for i in range(n):
        added = 0
        tries = 0
        while added < k and tries < 4 * k:
            tries += 1
            j = _rand_int(state, n)
            if j == i:
                continue
            added += _heap_push(heap_d, heap_i, heap_f, i, _sqdist(data, i, j), j, True)

    _rp_forest_init(data, heap_d, heap_i, heap_f, state,
                    NN_DESCENT_TREES, max(2 * k, 30))

    new_c = np.full((n, max_candidates), -1, dtype=np.int64)
    old_c = np.full((n, max_candidates), -1, dtype=np.int64)
    new_n = np.zeros(n, dtype=np.int64)
    old_n = np.zeros(n, dtype=np.int64)

    for _ in range(max_iter):
        new_c[:] = -1
        old_c[:] = -1
        new_n[:] = 0
        old_n[:] = 0
        for i in range(n):
            for j in range(k):
                node = heap_i[i, j]
                if node < 0:
                    continue
                if heap_f[i, j]:
                    # new entries join at the sample rate; sampled ones age out
                    if _rand_unit(state) < sample_rate:
                        _cand_add(new_c, new_n, state, i, node)
                        _cand_add(new_c, new_n, state, node, i)
                        heap_f[i, j] = False
                else:
                    _cand_add(old_c, old_n, state, i, node)
                    _cand_add(old_c, old_n, state, node, i)

        changed = 0
        for i in range(n):
            n_new = min(new_n[i], max_candidates)
            n_old = min(old_n[i], max_candidates)
            for pi in range(n_new):
                p = new_c[i, pi]
                for qi in range(pi + 1, n_new):
                    q = new_c[i, qi]
                    if p == q:
                        continue
                    d = _sqdist(data, p, q)
                    changed += _heap_push(heap_d, heap_i, heap_f, p, d, q, True)
                    changed += _heap_push(heap_d, heap_i, heap_f, q, d, p, True)
                for qi in range(n_old):
                    q = old_c[i, qi]
                    if p == q:
                        continue
                    d = _sqdist(data, p, q)
                    changed += _heap_push(heap_d, heap_i, heap_f, p, d, q, True)
                    changed += _heap_push(heap_d, heap_i, heap_f, q, d, p, True)
        if changed < delta * n * k:
            break

    return heap_d, heap_i


def build_knn(data, k: int, mode: str = "exact", seed: int = 42) -> KnnGraph:
    """Build the k-nearest-neighbor graph of the rows of ``data``.

    ``data`` is an (n, d) array or an EmbeddingMatrix. ``mode`` is
    ``"exact"`` (true neighbors, ties resolved to the lower index) or
    ``"nn_descent"`` (approximate; recall >= 0.9 on benchmark corpora).
    Rows of the result are sorted ascending by distance.
    """
    if hasattr(data, "data") and hasattr(data, "ids"):
        data = data.data
    data = np.ascontiguousarray(data, dtype=np.float64)
    n = data.shape[0]
    if k >= n:
        raise ValueError(f"k={k} must be smaller than the point count {n}")
    if k < 1:
        raise ValueError("k must be >= 1")

    if mode == "exact":
        indices, dists = _exact_knn(data, k)
        return KnnGraph(indices=indices, distances=dists)
    if mode != "nn_descent":
        raise ValueError(f"unknown knn mode {mode!r}")

    state = _seed_state(seed)
    max_candidates = max(k, 60)
    heap_d, heap_i = _nn_descent(data, k, state, NN_DESCENT_MAX_ITER,
                                 NN_DESCENT_SAMPLE_RATE, NN_DESCENT_DELTA,
                                 max_candidates)
    # Repair any rows the descent left unfilled (tiny n edge case).
    unfilled = np.flatnonzero((heap_i < 0).any(axis=1))
    if unfilled.size:
        exact_idx, exact_d = _exact_knn(data, k)
        heap_i[unfilled] = exact_idx[unfilled]
        heap_d[unfilled] = exact_d[unfilled] ** 2
    order = np.lexsort((heap_i, heap_d), axis=1)
    indices = np.take_along_axis(heap_i, order, axis=1)
    dists = np.sqrt(np.maximum(np.take_along_axis(heap_d, order, axis=1), 0.0))
    return KnnGraph(indices=indices, distances=dists)


# ---------------------------------------------------------------------------
# Fuzzy simplicial set
# ---------------------------------------------------------------------------

def smooth_knn_distances(distances: np.ndarray,
                         n_iter: int = SMOOTH_K_ITER,
                         tolerance: float = SMOOTH_K_TOLERANCE
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Solve per-point (rho, sigma) of the adaptive exponential kernel.

    rho_i is the distance to the nearest neighbor; sigma_i is found by
    binary search so that sum_j exp(-max(0, d_ij - rho_i) / sigma_i)
    equals log2(k).
    """
    n, k = distances.shape
    target = np.log2(k)
    rho = distances[:, 0].copy()
    shifted = np.maximum(distances - rho[:, None], 0.0)

    lo = np.zeros(n)
    hi = np.full(n, np.inf)
    mid = np.ones(n)
    for _ in range(n_iter):
        psum = np.exp(-shifted / mid[:, None]).sum(axis=1)
        err = psum - target
        active = np.abs(err) >= tolerance
        if not active.any():
            break
        too_big = (err > 0.0) & active
        too_small = (err < 0.0) & active
        hi[too_big] = mid[too_big]
        lo[too_small] = mid[too_small]
        bounded = active & np.isfinite(hi)
        unbounded = active & np.isinf(hi)
        mid[bounded] = (lo[bounded] + hi[bounded]) / 2.0
        mid[unbounded] *= 2.0
    return rho, mid


def fuzzy_simplicial_set(knn: KnnGraph) -> FuzzyGraph:
    """Convert a kNN graph into a symmetric fuzzy graph.

    Directed weights w_ij = exp(-max(0, d_ij - rho_i) / sigma_i) are
    symmetrized with the probabilistic t-conorm w = a + b - a * b.
    """
    n, k = knn.n, knn.k
    rho, sigma = smooth_knn_distances(knn.distances)
    directed = np.exp(-np.maximum(knn.distances - rho[:, None], 0.0)
                      / sigma[:, None])

    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = knn.indices.ravel().astype(np.int64)
    vals = directed.ravel()

    lo = np.minimum(rows, cols)
    hi = np.maximum(rows, cols)
    key = lo * np.int64(n) + hi
    order = np.argsort(key, kind="stable")
    key, vals = key[order], vals[order]

    first = np.ones(key.size, dtype=bool)
    first[1:] = key[1:] != key[:-1]
    uniq_key = key[first]
    a = vals[first]
    b = np.zeros_like(a)
    second_idx = np.flatnonzero(~first)
    if second_idx.size:
        group = np.cumsum(first) - 1
        b[group[second_idx]] = vals[second_idx]
    weights = a + b - a * b

    keep = weights > 0.0
    return FuzzyGraph(heads=(uniq_key[keep] // n).astype(np.int64),
                      tails=(uniq_key[keep] % n).astype(np.int64),
                      weights=weights[keep], n=n)


# ---------------------------------------------------------------------------
# Low-dimensional similarity curve
# ---------------------------------------------------------------------------

def _curve_target(min_dist: float) -> tuple[np.ndarray, np.ndarray]:
    xs = np.linspace(0.0, 3.0, 300)
    ys = np.where(xs <= min_dist, 1.0, np.exp(-(xs - min_dist)))
    return xs, ys


def fit_curve_params(min_dist: float) -> tuple[float, float]:
    """Fit (a, b) of 1 / (1 + a * d^(2b)) to the min_dist membership target.

    Grid-refined descent over the squared error at 300 samples of
    d in [0, 3]; for min_dist = 0.1 the optimum is near (1.58, 0.90).
    """
    if min_dist <= 0.0:
        raise ValueError("min_dist must be > 0")
    xs, ys = _curve_target(min_dist)

    def sse(avals, bvals):
        curve = 1.0 / (1.0 + avals[:, None, None]
                       * xs[None, None, :] ** (2.0 * bvals[None, :, None]))
        return ((curve - ys[None, None, :]) ** 2).sum(axis=2)

    a_grid = np.geomspace(1e-2, 20.0, 49)
    b_grid = np.linspace(0.05, 2.5, 49)
    for _ in range(8):
        errs = sse(a_grid, b_grid)
        ai, bi = np.unravel_index(np.argmin(errs), errs.shape)
        a_lo = a_grid[max(ai - 1, 0)]
        a_hi = a_grid[min(ai + 1, a_grid.size - 1)]
        b_lo = b_grid[max(bi - 1, 0)]
        b_hi = b_grid[min(bi + 1, b_grid.size - 1)]
        a_grid = np.linspace(a_lo, a_hi, 25)
        b_grid = np.linspace(b_lo, b_hi, 25)
    errs = sse(a_grid, b_grid)
    ai, bi = np.unravel_index(np.argmin(errs), errs.shape)
    return float(a_grid[ai]), float(b_grid[bi])


# ---------------------------------------------------------------------------
# Per-edge objective terms (the optimizer's gradients, exposed for checking)
# ---------------------------------------------------------------------------

def attractive_log_likelihood(yi: np.ndarray, yj: np.ndarray,
                              a: float, b: float) -> float:
    """log Phi(d) with Phi = 1 / (1 + a * d^(2b)) for an attractive edge."""
    d2 = float(np.sum((yi - yj) ** 2))
    return -np.log1p(a * d2 ** b)


def attractive_gradient(yi: np.ndarray, yj: np.ndarray,
                        a: float, b: float) -> np.ndarray:
    """d/dyi of ``attractive_log_likelihood``."""
    d2 = float(np.sum((yi - yj) ** 2))
    if d2 == 0.0:
        return np.zeros_like(yi)
    coeff = -2.0 * a * b * d2 ** (b - 1.0) / (a * d2 ** b + 1.0)
    return coeff * (yi - yj)


def repulsive_log_likelihood(yi: np.ndarray, yj: np.ndarray,
                             a: float, b: float) -> float:
    """log(1 - Phi(d)) for a negative-sample pair."""
    d2 = float(np.sum((yi - yj) ** 2))
    return np.log(a) + b * np.log(d2) - np.log1p(a * d2 ** b)


def repulsive_gradient(yi: np.ndarray, yj: np.ndarray,
                       a: float, b: float) -> np.ndarray:
    """d/dyi of ``repulsive_log_likelihood``."""
    d2 = float(np.sum((yi - yj) ** 2))
    coeff = 2.0 * b / (d2 * (a * d2 ** b + 1.0))
    return coeff * (yi - yj)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def _rescale_axes(coords: np.ndarray) -> np.ndarray:
    out = np.empty_like(coords)
    for c in range(coords.shape[1]):
        col = coords[:, c]
        span = col.max() - col.min()
        if span <= 0.0:
            out[:, c] = 0.0
        else:
            out[:, c] = (col - col.min()) / span * (2.0 * INIT_RANGE) - INIT_RANGE
    return out


def _power_iteration(mat: np.ndarray, ortho: list[np.ndarray],
                     rng: np.random.Generator) -> np.ndarray | None:
    n = mat.shape[0]
    v = rng.standard_normal(n)
    for o in ortho:
        v -= (v @ o) * o
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return None
    v /= norm
    for _ in range(SPECTRAL_MAX_ITER):
        w = mat @ v
        for o in ortho:
            w -= (w @ o) * o
        norm = np.linalg.norm(w)
        if norm < 1e-12:
            return None
        w /= norm
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < SPECTRAL_TOL:
            return w
        v = w
    return None


def _spectral_coords(fuzzy: FuzzyGraph, rng: np.random.Generator
                     ) -> np.ndarray | None:
    n = fuzzy.n
    w = np.zeros((n, n))
    w[fuzzy.heads, fuzzy.tails] = fuzzy.weights
    w[fuzzy.tails, fuzzy.heads] = fuzzy.weights
    deg = w.sum(axis=1)
    inv_sqrt = np.where(deg > 0.0, 1.0 / np.sqrt(np.maximum(deg, 1e-12)), 0.0)
    sym = inv_sqrt[:, None] * w * inv_sqrt[None, :]
    # shift so the spectrum sits in [0, 1]; the top eigenvector is trivial
    mat = 0.5 * (sym + np.eye(n))
    trivial = np.sqrt(np.maximum(deg, 0.0))
    norm = np.linalg.norm(trivial)
    if norm == 0.0:
        return None
    trivial /= norm
    v1 = _power_iteration(mat, [trivial], rng)
    if v1 is None:
        return None
    v2 = _power_iteration(mat, [trivial, v1], rng)
    if v2 is None:
        return None
    return np.stack([v1, v2], axis=1)


def init_layout(fuzzy: FuzzyGraph, config: LayoutConfig,
                ids: list[str] | None = None) -> Layout2D:
    """Produce initial coordinates in [-10, 10]^2.

    ``"random"`` draws uniformly from a seeded generator; ``"spectral"``
    uses the first two non-trivial eigenvectors of the normalized graph
    Laplacian via power iteration with deflation, falling back to random
    (with a logged warning) if the iteration fails to converge.
    """
    rng = np.random.default_rng(config.seed)
    coords = None
    if config.init == "spectral":
        coords = _spectral_coords(fuzzy, rng)
        if coords is None:
            log.warning("spectral init failed to converge; falling back to random")
        else:
            coords = _rescale_axes(coords)
    if coords is None:
        coords = rng.uniform(-INIT_RANGE, INIT_RANGE, size=(fuzzy.n, 2))
    if ids is None:
        ids = [str(i) for i in range(fuzzy.n)]
    return Layout2D(ids=list(ids), coords=coords, config=config)


# ---------------------------------------------------------------------------
# Stochastic gradient descent
# ---------------------------------------------------------------------------

@numba.njit(cache=True, inline="always")
def _clip(val):
    if val > GRAD_CLIP:
        return GRAD_CLIP
    if val < -GRAD_CLIP:
        return -GRAD_CLIP
    return val


@numba.njit(cache=True)
def _sgd_epochs(coords, heads, tails, epochs_per_sample, n_epochs,
                learning_rate, negative_samples, a, b, state):
    n = coords.shape[0]
    m = heads.shape[0]
    next_sample = np.zeros(m)
    for epoch in range(n_epochs):
        alpha = learning_rate * (1.0 - epoch / n_epochs)
        for e in range(m):
            if next_sample[e] > epoch:
                continue
            i = heads[e]
            j = tails[e]
            dx = coords[i, 0] - coords[j, 0]
            dy = coords[i, 1] - coords[j, 1]
            d2 = dx * dx + dy * dy
            if d2 > 0.0:
                coeff = -2.0 * a * b * d2 ** (b - 1.0) / (a * d2 ** b + 1.0)
                gx = _clip(coeff * dx)
                gy = _clip(coeff * dy)
                coords[i, 0] += alpha * gx
                coords[i, 1] += alpha * gy
                coords[j, 0] -= alpha * gx
                coords[j, 1] -= alpha * gy
            for _ in range(negative_samples):
                other = _rand_int(state, n)
                if other == i:
                    continue
                dx = coords[i, 0] - coords[other, 0]
                dy = coords[i, 1] - coords[other, 1]
                d2 = dx * dx + dy * dy
                if d2 > 0.0:
                    coeff = 2.0 * b / ((REPULSION_EPS + d2)
                                       * (a * d2 ** b + 1.0))
                    gx = _clip(coeff * dx)
                    gy = _clip(coeff * dy)
                else:
                    gx = GRAD_CLIP
                    gy = GRAD_CLIP
                coords[i, 0] += alpha * gx
                coords[i, 1] += alpha * gy
            next_sample[e] += epochs_per_sample[e]
        for p in range(n):
            if not (np.isfinite(coords[p, 0]) and np.isfinite(coords[p, 1])):
                return epoch
    return -1


def optimize_layout(fuzzy: FuzzyGraph, init: Layout2D,
                    config: LayoutConfig) -> Layout2D:
    """Run negative-sampling SGD over the fuzzy graph from ``init``.

    Each directed edge is visited on an epochs-per-sample schedule
    proportional to its weight; every attractive update is followed by
    ``negative_samples`` clipped repulsive updates against random points.
    The learning rate decays linearly to zero. Deterministic for a fixed
    seed (single-threaded).
    """
    if fuzzy.n != len(init.ids):
        raise ValueError("fuzzy graph and init layout disagree on point count")
    a, b = fit_curve_params(config.min_dist)

    # expand to directed edges so both endpoints take attraction and
    # negative sampling, in a deterministic order
    heads = np.concatenate([fuzzy.heads, fuzzy.tails])
    tails = np.concatenate([fuzzy.tails, fuzzy.heads])
    weights = np.concatenate([fuzzy.weights, fuzzy.weights])
    order = np.lexsort((tails, heads))
    heads, tails, weights = heads[order], tails[order], weights[order]

    if weights.size == 0:
        raise ValueError("fuzzy graph has no edges")
    epochs_per_sample = weights.max() / weights

    coords = np.array(init.coords, dtype=np.float64, copy=True)
    state = _seed_state(config.seed)
    bad_epoch = _sgd_epochs(coords, heads, tails, epochs_per_sample,
                            config.n_epochs, config.learning_rate,
                            config.negative_samples, a, b, state)
    if bad_epoch >= 0:
        raise RuntimeError(
            f"non-finite coordinates during optimization at epoch {bad_epoch} "
            f"(edges={heads.size}, a={a:.4f}, b={b:.4f})")
    return Layout2D(ids=list(init.ids), coords=coords, config=config)


def compute_layout(matrix_data: np.ndarray, ids: list[str],
                   config: LayoutConfig) -> Layout2D:
    """Full layout pass: kNN -> fuzzy graph -> init -> optimize."""
    mode = config.resolve_knn_mode(matrix_data.shape[0])
    knn = build_knn(matrix_data, config.n_neighbors, mode=mode,
                    seed=config.seed)
    fuzzy = fuzzy_simplicial_set(knn)
    init = init_layout(fuzzy, config, ids=ids)
    return optimize_layout(fuzzy, init, config)


# ---------------------------------------------------------------------------
# Quality metric
# ---------------------------------------------------------------------------

def compute_trustworthiness(high, low, k: int) -> float:
    """Rank-weighted neighborhood-preservation score in [0, 1].

    Penalizes points that are k-neighbors in the low-dimensional layout
    but not in the high-dimensional data; 1.0 means perfect preservation.
    Accepts raw arrays or (EmbeddingMatrix, Layout2D); when both carry
    ids they must match.
    """
    high_ids = getattr(high, "ids", None)
    low_ids = getattr(low, "ids", None)
    if high_ids is not None and low_ids is not None and high_ids != low_ids:
        raise ValueError("embedding and layout ids do not match")
    if hasattr(high, "data"):
        high = high.data
    if hasattr(low, "coords"):
        low = low.coords
    high = np.asarray(high, dtype=np.float64)
    low = np.asarray(low, dtype=np.float64)
    n = high.shape[0]
    if low.shape[0] != n:
        raise ValueError("high and low point counts differ")
    if not 0 < k < n:
        raise ValueError(f"k={k} out of range for n={n}")
    if 2 * n - 3 * k - 1 <= 0:
        raise ValueError(f"k={k} too large for the trustworthiness normalizer")

    def sqdists(x):
        sq = np.einsum("ij,ij->i", x, x)
        d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
        np.fill_diagonal(d, np.inf)
        return d

    dist_h = sqdists(high)
    dist_l = sqdists(low)
    order_h = np.argsort(dist_h, axis=1, kind="stable")
    rank_h = np.empty((n, n), dtype=np.int64)
    rows = np.arange(n)[:, None]
    rank_h[rows, order_h] = np.arange(1, n + 1)[None, :]
    knn_l = np.argsort(dist_l, axis=1, kind="stable")[:, :k]
    ranks = np.take_along_axis(rank_h, knn_l, axis=1)
    penalty = np.maximum(ranks - k, 0).sum()
    return float(1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * penalty)


# ---------------------------------------------------------------------------
# Layout file format
# ---------------------------------------------------------------------------

LAYOUT_MAGIC = "LAY1"


def write_layout(path: str | Path, layout: Layout2D) -> None:
    cfg = layout.config
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{LAYOUT_MAGIC} {len(layout.ids)} {cfg.seed} "
                 f"{cfg.n_neighbors} {cfg.min_dist:g} {cfg.n_epochs}\n")
        for oid, (x, y) in zip(layout.ids, layout.coords):
            fh.write(f"{oid}\t{x:.6f}\t{y:.6f}\n")


def read_layout(path: str | Path) -> Layout2D:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 6 or header[0] != LAYOUT_MAGIC:
            raise ValueError(f"{path}: bad layout header")
        n = int(header[1])
        config = LayoutConfig(seed=int(header[2]), n_neighbors=int(header[3]),
                              min_dist=float(header[4]), n_epochs=int(header[5]))
        ids = []
        coords = np.empty((n, 2))
        for i in range(n):
            line = fh.readline()
            if not line:
                raise ValueError(f"{path}: expected {n} rows, got {i}")
            oid, x, y = line.rstrip("\n").split("\t")
            ids.append(oid)
            coords[i] = (float(x), float(y))
    return Layout2D(ids=ids, coords=coords, config=config)

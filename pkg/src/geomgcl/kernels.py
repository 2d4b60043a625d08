"""Hot numeric kernels, numba-jitted with a pure-numpy fallback.

The jitted path is used when numba imports cleanly and the environment
variable ``GEOMGCL_NUMBA`` is not set to ``0``/``false``/``off``. Both
implementations stay importable so they can be checked against each
other and benchmarked (see ``benchmarks/bench_kernels.py``).

Determinism: the accumulation order of every reduction is the row order
of its input, identically in both implementations, so repeated calls on
identical inputs are bit-identical.
"""

import os

import numpy as np

_flag = os.environ.get("GEOMGCL_NUMBA", "1").strip().lower()
_WANT_NUMBA = _flag not in ("0", "false", "off")

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


USING_NUMBA = HAS_NUMBA and _WANT_NUMBA


# ---------------------------------------------------------------------------
# numpy implementations


def segment_sum_np(data, seg, n_seg):
    """Sum rows of `data` into `n_seg` groups; empty groups stay zero."""
    out = np.zeros((n_seg, data.shape[1]), dtype=np.float64)
    np.add.at(out, seg, data)
    return out


def segment_max_np(data, seg, n_seg):
    """Columnwise max per group plus the attaining row (-1 when empty).

    Ties resolve to the lowest row index. Empty groups report 0.
    """
    n, d = data.shape
    out = np.zeros((n_seg, d), dtype=np.float64)
    arg = np.full((n_seg, d), -1, dtype=np.int64)
    if n == 0 or n_seg == 0:
        return out, arg
    order = np.argsort(seg, kind="stable")
    sseg = seg[order]
    ids = np.arange(n_seg)
    starts = np.searchsorted(sseg, ids, side="left")
    ends = np.searchsorted(sseg, ids, side="right")
    cols = np.arange(d)
    for s in range(n_seg):
        lo, hi = starts[s], ends[s]
        if lo == hi:
            continue
        rows = order[lo:hi]
        block = data[rows]
        amax = block.argmax(axis=0)
        out[s] = block[amax, cols]
        arg[s] = rows[amax]
    return out, arg


def pairwise_distances_np(coords):
    """Dense Euclidean distance matrix for a (V, dim) coordinate array."""
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def angles_np(coords, shared, p, q):
    """Angles at coords[shared] between coords[p] and coords[q], in [0, pi].

    Callers guarantee nonzero arm lengths.
    """
    v1 = coords[p] - coords[shared]
    v2 = coords[q] - coords[shared]
    n1 = np.sqrt(np.einsum("ij,ij->i", v1, v1))
    n2 = np.sqrt(np.einsum("ij,ij->i", v2, v2))
    cos = np.einsum("ij,ij->i", v1, v2) / (n1 * n2)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def gaussian_expand_np(t, centers, beta):
    """exp(-beta * (t - center)^2) for each value/center combination."""
    d = t[:, None] - centers[None, :]
    return np.exp(-beta * d * d)


# ---------------------------------------------------------------------------
# numba implementations (same contracts, loop form)


@njit(cache=True)
def segment_sum_nb(data, seg, n_seg):
    out = np.zeros((n_seg, data.shape[1]), dtype=np.float64)
    for i in range(data.shape[0]):
        s = seg[i]
        for j in range(data.shape[1]):
            out[s, j] += data[i, j]
    return out


@njit(cache=True)
def segment_max_nb(data, seg, n_seg):
    n, d = data.shape
    out = np.zeros((n_seg, d), dtype=np.float64)
    arg = np.full((n_seg, d), -1, dtype=np.int64)
    for i in range(n):
        s = seg[i]
        for j in range(d):
            if arg[s, j] < 0 or data[i, j] > out[s, j]:
                out[s, j] = data[i, j]
                arg[s, j] = i
    return out, arg


@njit(cache=True)
def pairwise_distances_nb(coords):
    v, dim = coords.shape
    out = np.zeros((v, v), dtype=np.float64)
    for i in range(v):
        for j in range(i + 1, v):
            acc = 0.0
            for k in range(dim):
                delta = coords[i, k] - coords[j, k]
                acc += delta * delta
            dist = np.sqrt(acc)
            out[i, j] = dist
            out[j, i] = dist
    return out


@njit(cache=True)
def angles_nb(coords, shared, p, q):
    n = shared.shape[0]
    dim = coords.shape[1]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        dot = 0.0
        n1 = 0.0
        n2 = 0.0
        for k in range(dim):
            a = coords[p[i], k] - coords[shared[i], k]
            b = coords[q[i], k] - coords[shared[i], k]
            dot += a * b
            n1 += a * a
            n2 += b * b
        cos = dot / (np.sqrt(n1) * np.sqrt(n2))
        if cos > 1.0:
            cos = 1.0
        elif cos < -1.0:
            cos = -1.0
        out[i] = np.arccos(cos)
    return out


@njit(cache=True)
def gaussian_expand_nb(t, centers, beta):
    n = t.shape[0]
    k = centers.shape[0]
    out = np.empty((n, k), dtype=np.float64)
    for i in range(n):
        for j in range(k):
            d = t[i] - centers[j]
            out[i, j] = np.exp(-beta * d * d)
    return out


# ---------------------------------------------------------------------------
# active implementation

if USING_NUMBA:
    segment_sum = segment_sum_nb
    segment_max = segment_max_nb
    pairwise_distances = pairwise_distances_nb
    angles = angles_nb
    gaussian_expand = gaussian_expand_nb
else:
    segment_sum = segment_sum_np
    segment_max = segment_max_np
    pairwise_distances = pairwise_distances_np
    angles = angles_np
    gaussian_expand = gaussian_expand_np


def implementations():
    """Both kernel suites keyed by name; 'numba' is None when unavailable."""
    numpy_impl = {
        "segment_sum": segment_sum_np,
        "segment_max": segment_max_np,
        "pairwise_distances": pairwise_distances_np,
        "angles": angles_np,
        "gaussian_expand": gaussian_expand_np,
    }
    numba_impl = None
    if HAS_NUMBA:
        numba_impl = {
            "segment_sum": segment_sum_nb,
            "segment_max": segment_max_nb,
            "pairwise_distances": pairwise_distances_nb,
            "angles": angles_nb,
            "gaussian_expand": gaussian_expand_nb,
        }
    return {"numpy": numpy_impl, "numba": numba_impl}

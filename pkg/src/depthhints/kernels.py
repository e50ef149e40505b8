"""Hot numeric kernels: numba-jitted with a pure-numpy fallback.

Two inner loops dominate runtime at dataset scale: per-pixel histogram
accumulation over label rasters, and the elementwise Adam update applied
thousands of times during leave-one-out training. Both come in a numba
``@njit`` version and a pure-numpy version that produce bit-identical
results (integer counts are exact; float accumulation orders match).

Selection is by the ``DEPTHHINTS_NUMBA`` environment variable, read at
import time:

* ``auto`` (default) - use numba when importable, else numpy
* ``0`` / ``off`` / ``false`` - force the numpy path
* ``1`` / ``on`` / ``true`` - require numba, raise if missing

``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DepthHintsError


def accumulate_instances_numpy(depth, ids, n_slots, bin_count, min_depth, max_depth):
    """Single pass over a flat raster: per-slot depth-bin counts, depth
    sums, and valid-pixel counts.

    Invalid pixels (non-finite or <= 0 depth) are skipped. Bin index is
    floor((d - min)/width) clamped into [0, bin_count-1].

    Args:
        depth: float64 flat array of depths in meters.
        ids: int64 flat array of slot indices, same length.
        n_slots: number of slots (instances).
        bin_count, min_depth, max_depth: binning parameters.

    Returns:
        (counts int64 [n_slots, bin_count], sums float64 [n_slots],
         valid int64 [n_slots])
    """
    valid = np.isfinite(depth) & (depth > 0.0)
    d = depth[valid]
    s = ids[valid]
    width = (max_depth - min_depth) / bin_count
    b = np.floor((d - min_depth) / width).astype(np.int64)
    np.clip(b, 0, bin_count - 1, out=b)
    # bincount adds weights in input order, matching the jitted loop bit
    # for bit on the float sums.
    counts = np.bincount(s * bin_count + b, minlength=n_slots * bin_count)
    sums = np.bincount(s, weights=d, minlength=n_slots)
    nvalid = np.bincount(s, minlength=n_slots)
    return counts.reshape(n_slots, bin_count), sums, nvalid


def adam_update_numpy(p, g, m, v, c1, c2, lr, eps, beta1, beta2):
    """Bias-corrected Adam update on flat float64 arrays, in place.

    c1 = 1 - beta1**t and c2 = 1 - beta2**t are computed by the caller so
    that both backends consume identical correction factors.
    """
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _accumulate_instances_loop(depth, ids, n_slots, bin_count, min_depth, max_depth):
    counts = np.zeros((n_slots, bin_count), np.int64)
    sums = np.zeros(n_slots, np.float64)
    nvalid = np.zeros(n_slots, np.int64)
    width = (max_depth - min_depth) / bin_count
    for i in range(depth.shape[0]):
        d = depth[i]
        if not np.isfinite(d) or d <= 0.0:
            continue
        s = ids[i]
        b = int(np.floor((d - min_depth) / width))
        if b < 0:
            b = 0
        elif b >= bin_count:
            b = bin_count - 1
        counts[s, b] += 1
        sums[s] += d
        nvalid[s] += 1
    return counts, sums, nvalid


def _adam_update_loop(p, g, m, v, c1, c2, lr, eps, beta1, beta2):
    for i in range(p.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


_flag = os.environ.get("DEPTHHINTS_NUMBA", "auto").strip().lower()
if _flag in ("0", "off", "false", "no"):
    NUMBA_ENABLED = False
else:
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:
        if _flag in ("1", "on", "true", "yes"):
            raise DepthHintsError("DEPTHHINTS_NUMBA requested numba but it is not importable")
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    accumulate_instances_numba = njit(cache=True)(_accumulate_instances_loop)
    adam_update_numba = njit(cache=True)(_adam_update_loop)
    accumulate_instances = accumulate_instances_numba
    adam_update = adam_update_numba
else:
    accumulate_instances_numba = None
    adam_update_numba = None
    accumulate_instances = accumulate_instances_numpy
    adam_update = adam_update_numpy

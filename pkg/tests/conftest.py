"""Shared fixtures and oracle helpers."""

from __future__ import annotations

import numpy as np
import pytest

from depthhints import l2d, losses
from depthhints.depth_data import DepthFrame


def make_random_frame(rng: np.random.Generator, size: int = 16, n_instances: int = 5,
                      labels=("chair", "table", "lamp", "sofa", "background")) -> DepthFrame:
    """Random square frame: instance ids cover [0, n_instances); a slice of
    pixels is invalidated (zero, negative, or NaN depth)."""
    depth = rng.uniform(-0.5, 12.0, (size, size)).astype(np.float32)
    bad = rng.random((size, size)) < 0.08
    depth[bad] = np.float32(np.nan)
    ids = rng.integers(0, n_instances, (size, size)).astype(np.uint16)
    table = {i: labels[i % len(labels)] for i in range(n_instances)}
    return DepthFrame(depth, ids, table)


def flatten_params(params: l2d.MlpParameters) -> np.ndarray:
    return np.concatenate(
        [a.ravel() for pair in zip(params.weights, params.biases) for a in pair]
    )


def unflatten_params(params: l2d.MlpParameters, flat: np.ndarray) -> l2d.MlpParameters:
    ws, bs = [], []
    i = 0
    for w, b in zip(params.weights, params.biases):
        ws.append(flat[i : i + w.size].reshape(w.shape).copy())
        i += w.size
        bs.append(flat[i : i + b.size].copy())
        i += b.size
    return l2d.MlpParameters(params.config, ws, bs)


def fd_max_rel_err(params, loss_fn, analytic_flat, coords, eps=1e-4):
    """Central finite differences against the analytic gradient at the
    given flat-parameter coordinates; returns the max relative error."""
    flat = flatten_params(params)
    worst = 0.0
    for i in coords:
        fp = flat.copy()
        fp[i] += eps
        fm = flat.copy()
        fm[i] -= eps
        lp = loss_fn(unflatten_params(params, fp))
        lm = loss_fn(unflatten_params(params, fm))
        fd = (lp - lm) / (2.0 * eps)
        denom = max(abs(fd), abs(analytic_flat[i]), 1e-6)
        worst = max(worst, abs(fd - analytic_flat[i]) / denom)
    return worst


def naive_eigen(pred, gt) -> losses.EigenMetrics:
    """Reference metric loop, written independently of losses.eigen_metrics."""
    import math

    n = len(pred)
    abs_rel = sq_rel = rms = rmsl = 0.0
    d1 = d2 = d3 = 0
    for i in range(n):
        p = float(pred[i])
        g = float(gt[i])
        abs_rel += abs(p - g) / g
        sq_rel += (p - g) ** 2 / g
        rms += (p - g) ** 2
        rmsl += (math.log(p) - math.log(g)) ** 2
        ratio = max(p / g, g / p)
        d1 += 1 if ratio < 1.25 else 0
        d2 += 1 if ratio < 1.25**2 else 0
        d3 += 1 if ratio < 1.25**3 else 0
    return losses.EigenMetrics(
        abs_rel=abs_rel / n,
        sq_rel=sq_rel / n,
        rms=math.sqrt(rms / n),
        rmsl=math.sqrt(rmsl / n),
        delta1=d1 / n,
        delta2=d2 / n,
        delta3=d3 / n,
    )


@pytest.fixture
def nprng():
    return np.random.default_rng(1234)

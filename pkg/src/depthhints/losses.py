"""Training losses and depth evaluation metrics.

``silog`` is the scale-invariant-log-style batch loss over log-depth
residuals g_i = log(pred_i) - log(gt_i):

    L = 10 * sqrt( (1/N) * sum g_i^2  +  (0.15/N^2) * (sum g_i)^2 )

The "+0.15" coupling term is the default ("as-printed" variant). The
widespread variance-style form, 10*sqrt(sum g^2/N - 0.85*(sum g)^2/N^2),
is available as variant="variance" but is not used by the harness.
Despite the name, the printed form is not scale-invariant: scaling all
predictions by s shifts every g_i by log(s) and both terms grow.

``kldiv`` measures divergence between a target depth-bin distribution
and predicted log-probabilities. The default direction sums
target * (log target - log pred) over bins, with 0*log(0) := 0; the
"as-written" direction swaps the roles and is rejected when the target
is zero anywhere the prediction has mass (infinite divergence).

``eigen_metrics`` is the standard depth evaluation suite: Abs Rel,
Sq Rel, RMS, RMSL, and threshold accuracies at 1.25, 1.25^2, 1.25^3.
All reductions accumulate in a fixed sequential order so results are
bit-reproducible and match a naive reference loop exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DepthHintsError

SILOG_SCALE = 10.0
SILOG_COUPLING = 0.15
DELTA_BASE = 1.25


def _check_depths(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise DepthHintsError(f"{name} is empty")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DepthHintsError(f"{name} must be positive and finite")
    return arr


def silog(pred, gt, variant: str = "as-printed") -> tuple[float, np.ndarray]:
    """Batch loss and its exact gradient w.r.t. each log-prediction.

    Args:
        pred, gt: positive finite depths in meters, equal length N >= 1.
        variant: "as-printed" (default) or "variance".

    Returns:
        (loss, grad) with grad[i] = dL/d log(pred[i]).
    """
    p = _check_depths(pred, "pred")
    t = _check_depths(gt, "gt")
    if p.shape != t.shape:
        raise DepthHintsError(f"length mismatch: {p.shape[0]} vs {t.shape[0]}")
    n = p.shape[0]
    g = np.log(p) - np.log(t)
    s1 = float(np.sum(g * g))
    s2 = float(np.sum(g))
    if variant == "as-printed":
        inner = s1 / n + SILOG_COUPLING * (s2 * s2) / (n * n)
        couple = SILOG_COUPLING
    elif variant == "variance":
        inner = s1 / n - (1.0 - SILOG_COUPLING) * (s2 * s2) / (n * n)
        couple = -(1.0 - SILOG_COUPLING)
    else:
        raise DepthHintsError(f"unknown silog variant {variant!r}")
    if inner <= 0.0:
        # all residuals zero (as-printed) or degenerate (variance); the
        # sqrt is non-differentiable here, use the zero subgradient
        return 0.0, np.zeros(n, dtype=np.float64)
    loss = SILOG_SCALE * math.sqrt(inner)
    grad = (SILOG_SCALE / math.sqrt(inner)) * (g / n + couple * s2 / (n * n))
    return loss, grad


def _check_distribution(target) -> np.ndarray:
    t = np.asarray(target, dtype=np.float64).ravel()
    if np.any(t < 0.0) or abs(float(t.sum()) - 1.0) > 1e-6:
        raise DepthHintsError("target is not a probability distribution")
    return t


def _check_log_probs(log_probs, k: int) -> np.ndarray:
    lp = np.asarray(log_probs, dtype=np.float64).ravel()
    if lp.shape[0] != k:
        raise DepthHintsError(f"length mismatch: {k} target bins vs {lp.shape[0]} log-probs")
    lse = float(np.logaddexp.reduce(lp))
    if abs(lse) > 1e-6:
        raise DepthHintsError(f"log-probs do not normalize: logsumexp = {lse}")
    return lp


def kldiv(target, pred_log_probs, direction: str = "gt-to-pred") -> tuple[float, np.ndarray]:
    """Divergence between one target distribution and predicted
    log-probabilities, plus the gradient w.r.t. the log-probabilities."""
    t = _check_distribution(target)
    lp = _check_log_probs(pred_log_probs, t.shape[0])
    if direction == "gt-to-pred":
        mask = t > 0.0
        loss = float(np.sum(t[mask] * (np.log(t[mask]) - lp[mask])))
        grad = -t
        return loss, grad
    if direction == "as-written":
        d = np.exp(lp)
        bad = (d > 0.0) & (t == 0.0)
        if np.any(bad):
            raise DepthHintsError(
                f"as-written divergence is infinite: target bin {int(np.argmax(bad))} "
                "is zero where prediction has mass"
            )
        active = d > 0.0
        loss = float(np.sum(d[active] * (lp[active] - np.log(t[active]))))
        grad = np.zeros_like(lp)
        grad[active] = d[active] * (lp[active] - np.log(t[active]) + 1.0)
        return loss, grad
    raise DepthHintsError(f"unknown kldiv direction {direction!r}")


def kldiv_batch(targets, pred_log_probs, direction: str = "gt-to-pred") -> tuple[float, np.ndarray]:
    """Arithmetic mean of per-datapoint divergences over a batch.

    Gradient comes back per datapoint, already carrying the 1/B factor.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    lps = np.atleast_2d(np.asarray(pred_log_probs, dtype=np.float64))
    if targets.shape != lps.shape:
        raise DepthHintsError(f"shape mismatch: {targets.shape} vs {lps.shape}")
    b = targets.shape[0]
    total = 0.0
    grads = np.zeros_like(lps)
    for i in range(b):
        loss_i, grad_i = kldiv(targets[i], lps[i], direction)
        total += loss_i
        grads[i] = grad_i / b
    return total / b, grads


@dataclass(frozen=True)
class EigenMetrics:
    abs_rel: float
    sq_rel: float
    rms: float
    rmsl: float
    delta1: float
    delta2: float
    delta3: float

    def as_dict(self) -> dict[str, float]:
        return {
            "abs_rel": self.abs_rel,
            "sq_rel": self.sq_rel,
            "rms": self.rms,
            "rmsl": self.rmsl,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta3": self.delta3,
        }


def eigen_metrics(pred, gt) -> EigenMetrics:
    """Evaluate predicted against ground-truth depths.

    Sq Rel uses the squared difference (d - d*)^2 / d*. Threshold
    accuracies count max(d/d*, d*/d) strictly below 1.25^n.
    """
    p = _check_depths(pred, "pred")
    t = _check_depths(gt, "gt")
    if p.shape != t.shape:
        raise DepthHintsError(f"length mismatch: {p.shape[0]} vs {t.shape[0]}")
    n = p.shape[0]
    thr1 = DELTA_BASE
    thr2 = DELTA_BASE * DELTA_BASE
    thr3 = thr2 * DELTA_BASE
    s_abs = s_sq = s_rms = s_rmsl = 0.0
    c1 = c2 = c3 = 0
    for i in range(n):
        d = float(p[i])
        dstar = float(t[i])
        diff = d - dstar
        s_abs += abs(diff) / dstar
        s_sq += diff * diff / dstar
        s_rms += diff * diff
        lg = math.log(d) - math.log(dstar)
        s_rmsl += lg * lg
        ratio = d / dstar if d > dstar else dstar / d
        if ratio < thr1:
            c1 += 1
        if ratio < thr2:
            c2 += 1
        if ratio < thr3:
            c3 += 1
    return EigenMetrics(
        abs_rel=s_abs / n,
        sq_rel=s_sq / n,
        rms=math.sqrt(s_rms / n),
        rmsl=math.sqrt(s_rmsl / n),
        delta1=c1 / n,
        delta2=c2 / n,
        delta3=c3 / n,
    )


_TABLE_COLUMNS = ("Abs Rel", "Sq Rel", "RMS", "RMSL", "d<1.25", "d<1.25^2", "d<1.25^3")


def metrics_json(metrics: EigenMetrics, n: int) -> str:
    """Single JSON object with the seven metric fields plus N."""
    obj = metrics.as_dict()
    obj["n"] = n
    return json.dumps(obj, sort_keys=True)


def metrics_table(metrics: EigenMetrics) -> str:
    """Fixed-width table in the conventional results column order."""
    values = (
        metrics.abs_rel,
        metrics.sq_rel,
        metrics.rms,
        metrics.rmsl,
        metrics.delta1,
        metrics.delta2,
        metrics.delta3,
    )
    header = "".join(f"{c:>10}" for c in _TABLE_COLUMNS)
    row = "".join(f"{v:>10.3f}" for v in values)
    return header + "\n" + row

"""The language-to-depth model: a small rectifier MLP in two configurations.

* ``logmean`` mode maps an embedding to a single unbounded output read as
  the natural log of mean depth (prediction = exp(output), so depth is
  positive by construction). Default hidden layout: [100].
* ``classification`` mode maps an embedding through compressing hidden
  layers to 256 depth-bin logits, exposed as log-probabilities via a
  max-subtracted log-softmax. The last hidden layer is 50 wide and its
  post-activation vector doubles as the per-label feature hint. Default
  hidden layout: [100, 50].

Forward, analytic backward, and the Adam parameter update are exact and
deterministic; gradients are verified against central finite differences
in the test suite.

DHL2 checkpoint file (binary, little-endian)::

    magic 'DHL2' | u8 mode (0=logmean, 1=classification) | u32 layer_count
    layer_count x (u32 out_dim, u32 in_dim)
    per layer, in order: weights row-major float32, then biases float32
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DepthHintsError, FormatError, NumericalError
from .rng import SplitMix64

MODE_LOGMEAN = "logmean"
MODE_CLASSIFICATION = "classification"
CLASSIFICATION_BINS = 256
FEATURE_DIM = 50

_MAGIC = b"DHL2"
_MODE_CODES = {MODE_LOGMEAN: 0, MODE_CLASSIFICATION: 1}
_CODE_MODES = {v: k for k, v in _MODE_CODES.items()}


@dataclass(frozen=True)
class L2DConfig:
    """Network layout. hidden_dims=None selects the per-mode default."""

    mode: str
    input_dim: int
    hidden_dims: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.mode not in _MODE_CODES:
            raise DepthHintsError(f"unknown mode {self.mode!r}")
        if self.input_dim < 1:
            raise DepthHintsError(f"input_dim must be >= 1, got {self.input_dim}")
        hidden = self.hidden_dims
        if hidden is None:
            hidden = (100,) if self.mode == MODE_LOGMEAN else (100, FEATURE_DIM)
        hidden = tuple(int(h) for h in hidden)
        if any(h < 1 for h in hidden):
            raise DepthHintsError(f"hidden dims must be positive, got {hidden}")
        if self.mode == MODE_CLASSIFICATION:
            if not hidden or hidden[-1] != FEATURE_DIM:
                raise DepthHintsError(
                    f"classification mode requires a {FEATURE_DIM}-wide last hidden layer, "
                    f"got {hidden}"
                )
        object.__setattr__(self, "hidden_dims", hidden)

    @property
    def output_dim(self) -> int:
        return 1 if self.mode == MODE_LOGMEAN else CLASSIFICATION_BINS

    def layer_dims(self) -> list[tuple[int, int]]:
        """(out, in) per layer, input to output."""
        sizes = [self.input_dim, *self.hidden_dims, self.output_dim]
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]


@dataclass
class MlpParameters:
    config: L2DConfig
    weights: list[np.ndarray]  # per layer [out, in] float64
    biases: list[np.ndarray]  # per layer [out] float64


@dataclass
class ForwardTrace:
    """Cached per-layer activations for one forward batch."""

    inputs: np.ndarray  # [B, input_dim]
    pre: list[np.ndarray] = field(default_factory=list)  # [B, out] per layer
    post: list[np.ndarray] = field(default_factory=list)  # [B, out] per layer
    log_probs: np.ndarray | None = None  # [B, 256], classification only


@dataclass
class AdamState:
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0


def init_model(config: L2DConfig, seed: int) -> MlpParameters:
    """Glorot-uniform weights, zero biases, drawn deterministically from
    one SplitMix64 stream layer by layer, row-major."""
    rng = SplitMix64(seed)
    weights = []
    biases = []
    for out_dim, in_dim in config.layer_dims():
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        u = rng.uniform64(out_dim * in_dim).reshape(out_dim, in_dim)
        weights.append((u * 2.0 - 1.0) * limit)
        biases.append(np.zeros(out_dim, dtype=np.float64))
    return MlpParameters(config=config, weights=weights, biases=biases)


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax with max subtraction (256-way logits overflow
    the naive exponential)."""
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return shifted - lse


def forward_batch(params: MlpParameters, x: np.ndarray) -> tuple[np.ndarray, ForwardTrace]:
    """Run a [B, input_dim] batch. Returns the raw output layer values
    (log-depth column for logmean, logits for classification) and the
    trace needed by backward()."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != params.config.input_dim:
        raise DepthHintsError(
            f"input dim {x.shape[1]} does not match model input_dim {params.config.input_dim}"
        )
    trace = ForwardTrace(inputs=x)
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        trace.pre.append(z)
        a = np.maximum(z, 0.0) if i < last else z
        trace.post.append(a)
    if params.config.mode == MODE_CLASSIFICATION:
        trace.log_probs = log_softmax(a)
    return a, trace


def forward_logmean(params: MlpParameters, x: np.ndarray) -> tuple[float, ForwardTrace]:
    """Log of predicted mean depth for one embedding."""
    if params.config.mode != MODE_LOGMEAN:
        raise DepthHintsError(f"model mode is {params.config.mode!r}, not {MODE_LOGMEAN!r}")
    out, trace = forward_batch(params, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return float(out[0, 0]), trace


def forward_classification(
    params: MlpParameters, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, ForwardTrace]:
    """(features50, log_probs, trace) for one embedding. features50 is
    the post-activation of the last hidden layer."""
    if params.config.mode != MODE_CLASSIFICATION:
        raise DepthHintsError(
            f"model mode is {params.config.mode!r}, not {MODE_CLASSIFICATION!r}"
        )
    _, trace = forward_batch(params, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return trace.post[-2][0].copy(), trace.log_probs[0].copy(), trace


def backward(
    trace: ForwardTrace, params: MlpParameters, output_grad: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact parameter gradients, summed over the batch.

    ``output_grad`` is dLoss/d(output) per batch element: w.r.t. the raw
    log-depth column for logmean, w.r.t. the log-probabilities for
    classification (the log-softmax Jacobian is applied here).
    """
    g = np.atleast_2d(np.asarray(output_grad, dtype=np.float64))
    b = trace.inputs.shape[0]
    out_dim = params.config.output_dim
    if g.shape != (b, out_dim):
        raise DepthHintsError(f"output_grad shape {g.shape} != ({b}, {out_dim})")
    if params.config.mode == MODE_CLASSIFICATION:
        probs = np.exp(trace.log_probs)
        dz = g - probs * g.sum(axis=1, keepdims=True)
    else:
        dz = g
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        a_prev = trace.inputs if i == 0 else trace.post[i - 1]
        grads[i] = (dz.T @ a_prev, dz.sum(axis=0))
        if i > 0:
            da = dz @ params.weights[i]
            dz = da * (trace.pre[i - 1] > 0.0)
    return grads


def adam_init(params: MlpParameters) -> AdamState:
    return AdamState(
        m_w=[np.zeros_like(w) for w in params.weights],
        v_w=[np.zeros_like(w) for w in params.weights],
        m_b=[np.zeros_like(b) for b in params.biases],
        v_b=[np.zeros_like(b) for b in params.biases],
    )


def adam_step(
    params: MlpParameters,
    grads: list[tuple[np.ndarray, np.ndarray]],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place."""
    for i, (dw, db) in enumerate(grads):
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise NumericalError(f"non-finite gradient in layer {i}")
    state.step += 1
    c1 = 1.0 - beta1**state.step
    c2 = 1.0 - beta2**state.step
    for i, (dw, db) in enumerate(grads):
        kernels.adam_update(
            params.weights[i].ravel(), np.ascontiguousarray(dw, dtype=np.float64).ravel(),
            state.m_w[i].ravel(), state.v_w[i].ravel(), c1, c2, lr, eps, beta1, beta2,
        )
        kernels.adam_update(
            params.biases[i], np.asarray(db, dtype=np.float64),
            state.m_b[i], state.v_b[i], c1, c2, lr, eps, beta1, beta2,
        )


def save_model(params: MlpParameters, path) -> None:
    config = params.config
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<BI", _MODE_CODES[config.mode], len(params.weights)))
        for w in params.weights:
            fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f4").tobytes())
            fh.write(np.asarray(b, dtype="<f4").tobytes())


def load_model(path) -> MlpParameters:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    try:
        mode_code, layer_count = struct.unpack_from("<BI", data, 4)
        off = 9
        shapes = []
        for _ in range(layer_count):
            out_dim, in_dim = struct.unpack_from("<II", data, off)
            shapes.append((out_dim, in_dim))
            off += 8
        weights = []
        biases = []
        for out_dim, in_dim in shapes:
            n = out_dim * in_dim
            w = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(out_dim, in_dim)
            off += 4 * n
            b = np.frombuffer(data, dtype="<f4", count=out_dim, offset=off)
            off += 4 * out_dim
            weights.append(w.astype(np.float64))
            biases.append(b.astype(np.float64))
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated payload") from exc
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    if mode_code not in _CODE_MODES:
        raise FormatError(f"{path}: unknown mode code {mode_code}")
    if not shapes:
        raise FormatError(f"{path}: checkpoint has no layers")
    config = L2DConfig(
        mode=_CODE_MODES[mode_code],
        input_dim=shapes[0][1],
        hidden_dims=tuple(s[0] for s in shapes[:-1]),
    )
    expected = config.layer_dims()
    if expected != shapes:
        raise FormatError(f"{path}: layer shapes {shapes} inconsistent with mode")
    return MlpParameters(config=config, weights=weights, biases=biases)

"""Per-pixel hint planes from label rasters.

A hint plane broadcasts per-label model outputs over a frame's instance
raster: one channel of predicted mean depth (scalar hints) or the 50
penultimate features of a classification model (feature hints). Hints
derive from labels alone, so pixels without valid depth still get them,
and each distinct label costs one model evaluation per frame, not one
per pixel.

DHP1 plane file (binary, little-endian)::

    magic 'DHP1' | u32 height | u32 width | u32 channels
    H*W*C float32, row-major, channel-minor
"""

from __future__ import annotations

import struct

import numpy as np

from .depth_data import DepthFrame
from .embedding_store import EmbeddingStore
from .errors import DepthHintsError, FormatError
from .harness import LookupTable
from .l2d import (
    FEATURE_DIM,
    MODE_CLASSIFICATION,
    MODE_LOGMEAN,
    MlpParameters,
    forward_classification,
    forward_logmean,
)

_MAGIC = b"DHP1"


class HintPlane:
    """H x W x C float32 raster of hint values."""

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] not in (1, FEATURE_DIM):
            raise DepthHintsError(f"plane must be HxWx1 or HxWx{FEATURE_DIM}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise DepthHintsError("plane contains non-finite values")
        if arr.shape[2] == 1 and np.any(arr <= 0.0):
            raise DepthHintsError("scalar depth plane must be strictly positive")
        self.data = arr

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other):
        if not isinstance(other, HintPlane):
            return NotImplemented
        return np.array_equal(self.data, other.data)


def _frame_label_slots(frame: DepthFrame) -> tuple[list[str], np.ndarray]:
    """Distinct labels in the frame and the per-pixel index into them."""
    ids_flat = frame.instance_ids.ravel().astype(np.int64)
    uniq_ids, inv = np.unique(ids_flat, return_inverse=True)
    id_labels = [frame.instance_table[int(i)] for i in uniq_ids]
    labels = sorted(set(id_labels))
    label_slot = {label: k for k, label in enumerate(labels)}
    id_to_slot = np.array([label_slot[lb] for lb in id_labels], dtype=np.int64)
    return labels, id_to_slot[inv]


def render_scalar(
    frame: DepthFrame,
    source: LookupTable | MlpParameters,
    store: EmbeddingStore | None = None,
) -> tuple[HintPlane, int]:
    """Mean-depth hint plane, one value per label.

    ``source`` is either a LookupTable or logmean-mode parameters with
    their embedding store. Returns the plane and the number of labels
    that resolved through the background fallback.
    """
    labels, pixel_slots = _frame_label_slots(frame)
    values = np.empty(len(labels), dtype=np.float32)
    fallbacks = 0
    if isinstance(source, LookupTable):
        for k, label in enumerate(labels):
            entry, fb = source.lookup(label)
            values[k] = np.float32(entry.mean_depth)
            fallbacks += fb
    else:
        if store is None:
            raise DepthHintsError("model-sourced rendering needs an embedding store")
        if source.config.mode != MODE_LOGMEAN:
            raise DepthHintsError(
                f"scalar hints from a model require {MODE_LOGMEAN!r} mode, "
                f"got {source.config.mode!r}; export a lookup table instead"
            )
        for k, label in enumerate(labels):
            vec, fb = store.lookup(label)
            log_depth, _ = forward_logmean(source, vec)
            values[k] = np.float32(np.exp(log_depth))
            fallbacks += fb
    data = values[pixel_slots].reshape(frame.height, frame.width, 1)
    return HintPlane(data), fallbacks


def render_features(
    frame: DepthFrame, params: MlpParameters, store: EmbeddingStore
) -> tuple[HintPlane, int]:
    """50-channel feature hint plane from a classification model."""
    if params.config.mode != MODE_CLASSIFICATION:
        raise DepthHintsError(
            f"feature hints require {MODE_CLASSIFICATION!r} mode, got {params.config.mode!r}"
        )
    labels, pixel_slots = _frame_label_slots(frame)
    values = np.empty((len(labels), FEATURE_DIM), dtype=np.float32)
    fallbacks = 0
    for k, label in enumerate(labels):
        vec, fb = store.lookup(label)
        features, _, _ = forward_classification(params, vec)
        values[k] = features.astype(np.float32)
        fallbacks += fb
    data = values[pixel_slots].reshape(frame.height, frame.width, FEATURE_DIM)
    return HintPlane(data), fallbacks


def save_plane(plane: HintPlane, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", plane.height, plane.width, plane.channels))
        fh.write(np.ascontiguousarray(plane.data, dtype="<f4").tobytes())


def load_plane(path) -> HintPlane:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    try:
        h, w, c = struct.unpack_from("<III", data, 4)
        n = h * w * c
        raw = np.frombuffer(data, dtype="<f4", count=n, offset=16).reshape(h, w, c)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated payload") from exc
    if 16 + 4 * n != len(data):
        raise FormatError(f"{path}: {len(data) - 16 - 4 * n} trailing bytes")
    return HintPlane(raw)

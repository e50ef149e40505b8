"""Label -> embedding collections.

An :class:`EmbeddingStore` maps label strings to fixed-dimension float32
vectors and is the sole language input to the toolkit. Stores come from
three places: a DHEMB text file (typically written by the exporter tool),
:func:`random_store` for control experiments, or synthetic generation in
the harness. Unknown labels fall back to the ``"background"`` entry.

DHEMB file layout (text, UTF-8, LF line endings)::

    DHEMB 1 <dim>
    <label>\\t<f32>,<f32>,...      one line per label, exactly dim values

Values are written with shortest float32 round-trip precision, so
save -> load is bit-exact.
"""

from __future__ import annotations

import numpy as np

from .errors import DepthHintsError, FormatError
from .rng import SplitMix64

BACKGROUND_LABEL = "background"
_HEADER_PREFIX = "DHEMB 1 "


class EmbeddingStore:
    """Immutable label -> float32 vector collection.

    Entries keep insertion order; equality compares labels, order, and
    exact vector bits.
    """

    def __init__(self, dim: int, entries: dict[str, np.ndarray]):
        if dim < 1:
            raise DepthHintsError(f"embedding dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self._entries: dict[str, np.ndarray] = {}
        for label, vec in entries.items():
            arr = np.asarray(vec, dtype=np.float32)
            if arr.shape != (self.dim,):
                raise DepthHintsError(
                    f"label {label!r}: expected {self.dim} components, got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise DepthHintsError(f"label {label!r}: non-finite embedding component")
            arr.flags.writeable = False
            self._entries[label] = arr

    def labels(self) -> list[str]:
        return list(self._entries)

    def lookup(self, label: str) -> tuple[np.ndarray, bool]:
        """Return (vector, used_fallback). Unknown labels resolve to the
        ``background`` entry; if that is also missing, raise."""
        vec = self._entries.get(label)
        if vec is not None:
            return vec, False
        bg = self._entries.get(BACKGROUND_LABEL)
        if bg is None:
            raise DepthHintsError(
                f"label {label!r} not in store and no {BACKGROUND_LABEL!r} entry to fall back to"
            )
        return bg, True

    def __contains__(self, label: str) -> bool:
        return label in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        if self.dim != other.dim or self.labels() != other.labels():
            return False
        return all(
            np.array_equal(self._entries[k], other._entries[k]) for k in self._entries
        )


def random_store(labels: list[str], dim: int, seed: int) -> EmbeddingStore:
    """Control store: one vector per label, components uniform on [0, 1).

    A pure function of (label order, dim, seed) via a single SplitMix64
    stream, so control runs reproduce bit-exactly. ``background`` is
    appended if not already listed.
    """
    if not labels:
        raise DepthHintsError("random_store needs at least one label")
    seen = set()
    for label in labels:
        if label in seen:
            raise DepthHintsError(f"duplicate label {label!r}")
        seen.add(label)
    if dim < 1:
        raise DepthHintsError(f"embedding dim must be >= 1, got {dim}")
    rng = SplitMix64(seed)
    all_labels = list(labels)
    if BACKGROUND_LABEL not in seen:
        all_labels.append(BACKGROUND_LABEL)
    entries = {label: rng.uniform32(dim) for label in all_labels}
    return EmbeddingStore(dim, entries)


def average_variants(variants: list[np.ndarray]) -> np.ndarray:
    """Componentwise mean of contextual variant vectors (float32).

    The sum runs in float64 before the final cast, so the result is
    permutation-invariant up to the addition order and exact for
    identical inputs.
    """
    if not variants:
        raise DepthHintsError("average_variants needs at least one vector")
    first = np.asarray(variants[0], dtype=np.float32)
    acc = first.astype(np.float64)
    for v in variants[1:]:
        arr = np.asarray(v, dtype=np.float32)
        if arr.shape != first.shape:
            raise DepthHintsError(
                f"dimension mismatch: {arr.shape[0]} vs {first.shape[0]}"
            )
        acc += arr
    return (acc / len(variants)).astype(np.float32)


def _format_f32(value: np.float32) -> str:
    return np.format_float_positional(value, unique=True, trim="0")


def save_store(store: EmbeddingStore, path) -> None:
    """Write DHEMB. Labels must not contain tabs or newlines."""
    lines = [f"DHEMB 1 {store.dim}"]
    for label in store.labels():
        if "\t" in label or "\n" in label or "\r" in label:
            raise DepthHintsError(f"label {label!r} contains tab/newline, not writable")
        vec, _ = store.lookup(label)
        lines.append(label + "\t" + ",".join(_format_f32(v) for v in vec))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_store(path) -> EmbeddingStore:
    """Parse DHEMB; errors name the offending 1-based line."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise FormatError(f"{path}: missing header")
    header = lines[0]
    if not header.startswith(_HEADER_PREFIX):
        raise FormatError(f"{path}: line 1: malformed header {header!r}")
    try:
        dim = int(header[len(_HEADER_PREFIX):])
    except ValueError:
        raise FormatError(f"{path}: line 1: malformed header {header!r}") from None
    if dim < 1:
        raise FormatError(f"{path}: line 1: dim must be >= 1, got {dim}")
    entries: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        label, sep, rest = line.partition("\t")
        if not sep:
            raise FormatError(f"{path}: line {lineno}: no tab separator")
        if label in entries:
            raise FormatError(f"{path}: line {lineno}: duplicate label {label!r}")
        parts = rest.split(",")
        if len(parts) != dim:
            raise FormatError(
                f"{path}: line {lineno}: expected {dim} values, got {len(parts)}"
            )
        try:
            vec = np.array([np.float32(p) for p in parts], dtype=np.float32)
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: unparseable value") from None
        if not np.all(np.isfinite(vec)):
            raise FormatError(f"{path}: line {lineno}: non-finite value")
        entries[label] = vec
    return EmbeddingStore(dim, entries)

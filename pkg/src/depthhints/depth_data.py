"""Depth/label rasters and the two pretraining dataset preparations.

A :class:`DepthFrame` carries a depth raster plus an instance-id raster
and an id -> label table (instances are ingested from an external
segmentation step, never inferred here). From frames we build:

* the per-instance ("inst") dataset: one record per detected instance,
  with its valid-pixel count, mean depth, and 256-bin depth histogram;
* the per-class ("loo") dataset: one record per vocabulary label,
  pooling all of that label's instances.

A pixel is valid iff its depth is finite and > 0 (zero-filled missing
depth, the NYUD2 convention). Depths at or above the histogram maximum
clamp into the last bin so probability mass is conserved.

DHF1 frame file (binary, little-endian)::

    magic 'DHF1' | u32 height | u32 width | u32 table_len
    table_len x (u16 instance_id, u16 label_byte_len, UTF-8 label bytes)
    H*W float32 depth, row-major | H*W u16 instance ids, row-major

Dataset files are JSON lines: ``label``, ``pixel_count``, ``mean_depth``,
optional ``histogram`` (array of bin_count probabilities).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DepthHintsError, FormatError

_MAGIC = b"DHF1"


@dataclass(frozen=True)
class BinningSpec:
    """Uniform depth binning over [min_depth, max_depth) meters."""

    min_depth: float = 0.0
    max_depth: float = 10.0
    bin_count: int = 256

    def __post_init__(self):
        if not self.min_depth < self.max_depth:
            raise DepthHintsError(
                f"min_depth {self.min_depth} must be < max_depth {self.max_depth}"
            )
        if self.bin_count < 1:
            raise DepthHintsError(f"bin_count must be >= 1, got {self.bin_count}")

    @property
    def bin_width(self) -> float:
        return (self.max_depth - self.min_depth) / self.bin_count

    def centers(self) -> np.ndarray:
        """Bin-center depths c_k = min + (k + 0.5) * width."""
        k = np.arange(self.bin_count, dtype=np.float64)
        return self.min_depth + (k + 0.5) * self.bin_width


DEFAULT_BINNING = BinningSpec()


@dataclass
class DepthRecord:
    """(label, pixel count, mean depth, histogram) data point."""

    label: str
    pixel_count: int
    mean_depth: float
    histogram: np.ndarray | None = None

    def __post_init__(self):
        if self.pixel_count < 1:
            raise DepthHintsError(f"{self.label!r}: pixel_count must be >= 1")
        if not (np.isfinite(self.mean_depth) and self.mean_depth > 0.0):
            raise DepthHintsError(f"{self.label!r}: mean_depth must be positive finite")
        if self.histogram is not None:
            h = np.asarray(self.histogram, dtype=np.float64)
            if np.any(h < 0.0) or abs(float(h.sum()) - 1.0) > 1e-6:
                raise DepthHintsError(f"{self.label!r}: histogram is not a distribution")
            object.__setattr__(self, "histogram", h)

    def __eq__(self, other):
        if not isinstance(other, DepthRecord):
            return NotImplemented
        if (self.label, self.pixel_count, self.mean_depth) != (
            other.label,
            other.pixel_count,
            other.mean_depth,
        ):
            return False
        if (self.histogram is None) != (other.histogram is None):
            return False
        return self.histogram is None or np.array_equal(self.histogram, other.histogram)


class InstanceRecord(DepthRecord):
    """One detected object instance."""


class ClassRecord(DepthRecord):
    """All instances of one label, pooled."""


@dataclass
class BuildReport:
    """Side counts from dataset construction."""

    frames: int = 0
    instances: int = 0
    dropped_empty: int = 0
    missing_vocab_labels: list[str] = field(default_factory=list)
    out_of_vocab_instances: int = 0


class DepthFrame:
    """Depth + instance-label rasters for one image."""

    def __init__(self, depth: np.ndarray, instance_ids: np.ndarray, instance_table: dict[int, str]):
        depth = np.asarray(depth, dtype=np.float32)
        ids = np.asarray(instance_ids, dtype=np.uint16)
        if depth.ndim != 2 or ids.shape != depth.shape:
            raise DepthHintsError(
                f"depth {depth.shape} and instance_ids {ids.shape} must be equal 2-D shapes"
            )
        present = np.unique(ids)
        for iid in present:
            if int(iid) not in instance_table:
                raise DepthHintsError(f"instance id {int(iid)} missing from instance table")
        self.depth = depth
        self.instance_ids = ids
        self.instance_table = {int(k): str(v) for k, v in instance_table.items()}

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def __eq__(self, other):
        if not isinstance(other, DepthFrame):
            return NotImplemented
        return (
            np.array_equal(self.depth, other.depth, equal_nan=True)
            and np.array_equal(self.instance_ids, other.instance_ids)
            and self.instance_table == other.instance_table
        )


def save_frame(frame: DepthFrame, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", frame.height, frame.width, len(frame.instance_table)))
        for iid in sorted(frame.instance_table):
            raw = frame.instance_table[iid].encode("utf-8")
            fh.write(struct.pack("<HH", iid, len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(frame.depth, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(frame.instance_ids, dtype="<u2").tobytes())


def load_frame(path) -> DepthFrame:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    off = 4
    try:
        height, width, table_len = struct.unpack_from("<III", data, off)
        off += 12
        table: dict[int, str] = {}
        for _ in range(table_len):
            iid, nbytes = struct.unpack_from("<HH", data, off)
            off += 4
            if off + nbytes > len(data):
                raise struct.error
            table[iid] = data[off : off + nbytes].decode("utf-8")
            off += nbytes
        n = height * width
        depth = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(height, width)
        off += 4 * n
        ids = np.frombuffer(data, dtype="<u2", count=n, offset=off).reshape(height, width)
        off += 2 * n
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated payload") from exc
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes")
    return DepthFrame(depth, ids, table)


def histogram(depths, spec: BinningSpec = DEFAULT_BINNING) -> np.ndarray:
    """Normalized depth histogram over the spec's bins.

    Invalid depths are skipped; at least one valid depth is required.
    """
    d = np.asarray(depths, dtype=np.float64).ravel()
    counts, _, nvalid = kernels.accumulate_instances(
        d, np.zeros(d.shape[0], np.int64), 1, spec.bin_count, spec.min_depth, spec.max_depth
    )
    if nvalid[0] == 0:
        raise DepthHintsError("histogram needs at least one valid depth")
    return counts[0].astype(np.float64) / float(nvalid[0])


def mean_depth(depths) -> float:
    """Arithmetic mean over valid depths."""
    d = np.asarray(depths, dtype=np.float64).ravel()
    valid = np.isfinite(d) & (d > 0.0)
    n = int(valid.sum())
    if n == 0:
        raise DepthHintsError("mean_depth needs at least one valid depth")
    return float(d[valid].sum() / n)


def expected_depth(hist, spec: BinningSpec = DEFAULT_BINNING) -> float:
    """Probability-weighted bin-center depth of a histogram."""
    h = np.asarray(hist, dtype=np.float64)
    if h.shape != (spec.bin_count,):
        raise DepthHintsError(f"histogram length {h.shape} does not match {spec.bin_count} bins")
    return float(np.dot(h, spec.centers()))


def extract_instances(
    frame: DepthFrame, spec: BinningSpec = DEFAULT_BINNING, report: BuildReport | None = None
) -> list[InstanceRecord]:
    """One record per instance id with >= 1 valid pixel, ordered by id.

    Instances whose pixels are all invalid are dropped; the drop count
    lands in ``report`` when one is passed.
    """
    ids_flat = frame.instance_ids.ravel().astype(np.int64)
    uniq, inv = np.unique(ids_flat, return_inverse=True)
    counts, sums, nvalid = kernels.accumulate_instances(
        frame.depth.ravel().astype(np.float64),
        inv.astype(np.int64),
        len(uniq),
        spec.bin_count,
        spec.min_depth,
        spec.max_depth,
    )
    records: list[InstanceRecord] = []
    for slot, iid in enumerate(uniq):
        n = int(nvalid[slot])
        if n == 0:
            if report is not None:
                report.dropped_empty += 1
            continue
        records.append(
            InstanceRecord(
                label=frame.instance_table[int(iid)],
                pixel_count=n,
                mean_depth=float(sums[slot] / n),
                histogram=counts[slot].astype(np.float64) / n,
            )
        )
    if report is not None:
        report.instances += len(records)
    return records


def build_inst_dataset(
    manifest: list, spec: BinningSpec = DEFAULT_BINNING
) -> tuple[list[InstanceRecord], BuildReport]:
    """Concatenate extract_instances over frames, in manifest order."""
    if not manifest:
        raise DepthHintsError("manifest is empty")
    report = BuildReport()
    records: list[InstanceRecord] = []
    for path in manifest:
        try:
            frame = load_frame(path)
        except OSError as exc:
            raise DepthHintsError(f"cannot load frame {path}: {exc}") from exc
        records.extend(extract_instances(frame, spec, report))
        report.frames += 1
    return records, report


def aggregate_loo(
    records: list[InstanceRecord],
    vocabulary: list[str],
    spec: BinningSpec = DEFAULT_BINNING,
    weighting: str = "pixels",
    report: BuildReport | None = None,
) -> list[ClassRecord]:
    """Pool instance records into one ClassRecord per vocabulary label.

    ``weighting="pixels"`` (default) weights each instance by its valid
    pixel count, making the class mean/histogram identical to pooling the
    raw pixels. ``weighting="instances"`` averages instances unweighted;
    it exists as an alternative reading of per-class averaging, with no
    fidelity claim. Vocabulary labels with no instances are skipped and
    listed in ``report.missing_vocab_labels``; instances whose label is
    not in the vocabulary are skipped and counted.
    """
    if not vocabulary:
        raise DepthHintsError("vocabulary is empty")
    if len(set(vocabulary)) != len(vocabulary):
        raise DepthHintsError("vocabulary contains duplicate labels")
    if weighting not in ("pixels", "instances"):
        raise DepthHintsError(f"unknown weighting {weighting!r}")
    by_label: dict[str, list[InstanceRecord]] = {label: [] for label in vocabulary}
    out_of_vocab = 0
    for rec in records:
        if rec.label in by_label:
            by_label[rec.label].append(rec)
        else:
            out_of_vocab += 1
    out: list[ClassRecord] = []
    for label in vocabulary:
        insts = by_label[label]
        if not insts:
            if report is not None:
                report.missing_vocab_labels.append(label)
            continue
        weights = [float(r.pixel_count) if weighting == "pixels" else 1.0 for r in insts]
        total = sum(weights)
        mean = sum(w * r.mean_depth for w, r in zip(weights, insts)) / total
        hist = None
        if all(r.histogram is not None for r in insts):
            acc = np.zeros(spec.bin_count, dtype=np.float64)
            for w, r in zip(weights, insts):
                acc += w * r.histogram
            hist = acc / total
        out.append(
            ClassRecord(
                label=label,
                pixel_count=sum(r.pixel_count for r in insts),
                mean_depth=mean,
                histogram=hist,
            )
        )
    if report is not None:
        report.out_of_vocab_instances += out_of_vocab
    return out


def save_records(records: list[DepthRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            obj = {
                "label": rec.label,
                "pixel_count": rec.pixel_count,
                "mean_depth": rec.mean_depth,
            }
            if rec.histogram is not None:
                obj["histogram"] = rec.histogram.tolist()
            fh.write(json.dumps(obj) + "\n")


def load_records(path, cls=InstanceRecord) -> list[DepthRecord]:
    records: list[DepthRecord] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(
                    cls(
                        label=obj["label"],
                        pixel_count=int(obj["pixel_count"]),
                        mean_depth=float(obj["mean_depth"]),
                        histogram=np.asarray(obj["histogram"], dtype=np.float64)
                        if "histogram" in obj
                        else None,
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
    return records

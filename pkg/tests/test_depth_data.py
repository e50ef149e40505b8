import math

import numpy as np
import pytest

from conftest import make_random_frame
from depthhints.depth_data import (
    BinningSpec,
    ClassRecord,
    DEFAULT_BINNING,
    DepthFrame,
    InstanceRecord,
    BuildReport,
    aggregate_loo,
    build_inst_dataset,
    expected_depth,
    extract_instances,
    histogram,
    load_frame,
    load_records,
    mean_depth,
    save_frame,
    save_records,
)
from depthhints.errors import DepthHintsError, FormatError


class TestBinningSpec:
    def test_defaults(self):
        assert DEFAULT_BINNING.bin_count == 256
        assert DEFAULT_BINNING.min_depth == 0.0
        assert DEFAULT_BINNING.max_depth == 10.0
        assert DEFAULT_BINNING.bin_width == 10.0 / 256

    def test_invalid_rejected(self):
        with pytest.raises(DepthHintsError):
            BinningSpec(min_depth=5.0, max_depth=5.0)
        with pytest.raises(DepthHintsError):
            BinningSpec(bin_count=0)


class TestHistogram:
    def test_two_bin_example(self):
        # width = 10/256; floor(1.0/w) = 25, floor(9.0/w) = 230
        probs = histogram([1.0, 1.0, 9.0, 9.0])
        expected = np.zeros(256)
        expected[25] = 0.5
        expected[230] = 0.5
        assert np.array_equal(probs, expected)

    def test_independent_per_value_loop(self, nprng):
        depths = nprng.uniform(0.01, 12.0, 500)
        probs = histogram(depths)
        width = 10.0 / 256
        ref = np.zeros(256)
        for d in depths:
            ref[min(int(d // width), 255)] += 1
        ref /= len(depths)
        assert np.allclose(probs, ref, atol=1e-12)

    def test_overrange_clamps_to_last_bin(self):
        probs = histogram([15.0])
        assert probs[255] == 1.0
        assert probs.sum() == 1.0

    def test_invalid_depths_skipped(self):
        probs = histogram([0.0, -1.0, 2.0])
        assert np.array_equal(probs, histogram([2.0]))

    def test_all_invalid_rejected(self):
        with pytest.raises(DepthHintsError):
            histogram([0.0, -3.0, float("nan")])

    def test_mass_conserved_and_counts_recoverable(self, nprng):
        depths = nprng.uniform(0.1, 11.0, 333)
        probs = histogram(depths)
        assert abs(probs.sum() - 1.0) <= 1e-6
        counts = probs * 333
        assert np.allclose(counts, np.rint(counts), atol=1e-6)


class TestMeanDepth:
    def test_basic(self):
        assert mean_depth([1.0, 1.0, 9.0, 9.0]) == 5.0

    def test_single(self):
        assert mean_depth([2.5]) == 2.5

    def test_oracle(self, nprng):
        depths = nprng.uniform(0.5, 9.5, 1000)
        acc = 0.0
        for d in depths:
            acc += float(d)
        assert mean_depth(depths) == pytest.approx(acc / 1000, rel=1e-6)

    def test_invalid_skipped(self):
        assert mean_depth([0.0, 4.0, float("inf")]) == 4.0

    def test_all_invalid_rejected(self):
        with pytest.raises(DepthHintsError):
            mean_depth([0.0])


class TestExpectedDepth:
    def test_point_mass_first_bin(self):
        probs = np.zeros(256)
        probs[0] = 1.0
        assert expected_depth(probs) == 0.01953125

    def test_uniform_is_mid_range(self):
        probs = np.full(256, 1.0 / 256)
        assert expected_depth(probs) == pytest.approx(5.0, abs=1e-9)

    def test_hand_value_two_bins(self):
        probs = np.zeros(256)
        probs[25] = 0.5
        probs[230] = 0.5
        # 0.5*(25.5 + 230.5) * (10/256) = 0.5*256*width = 5.0
        assert expected_depth(probs) == pytest.approx(5.0, abs=1e-12)

    def test_constant_depth_hits_bin_center(self):
        probs = histogram([3.3, 3.3, 3.3])
        width = DEFAULT_BINNING.bin_width
        center = (math.floor(3.3 / width) + 0.5) * width
        assert expected_depth(probs) == center


def _frame_one_instance(depths):
    arr = np.array(depths, dtype=np.float32).reshape(2, 2)
    return DepthFrame(arr, np.zeros((2, 2), np.uint16), {0: "chair"})


class TestExtractInstances:
    def test_single_instance_record(self):
        recs = extract_instances(_frame_one_instance([1.0, 1.0, 9.0, 9.0]))
        assert len(recs) == 1
        rec = recs[0]
        assert rec.label == "chair"
        assert rec.pixel_count == 4
        assert rec.mean_depth == 5.0
        assert rec.histogram[25] == 0.5
        assert rec.histogram[230] == 0.5

    def test_all_invalid_instance_dropped_and_counted(self):
        report = BuildReport()
        recs = extract_instances(_frame_one_instance([0.0, 0.0, -1.0, 0.0]), report=report)
        assert recs == []
        assert report.dropped_empty == 1

    def test_shared_label_keeps_instances_distinct(self):
        depth = np.array([[1.0, 1.0], [3.0, 3.0]], dtype=np.float32)
        ids = np.array([[0, 0], [1, 1]], dtype=np.uint16)
        frame = DepthFrame(depth, ids, {0: "chair", 1: "chair"})
        recs = extract_instances(frame)
        assert [r.label for r in recs] == ["chair", "chair"]
        assert [r.mean_depth for r in recs] == [1.0, 3.0]

    def test_matches_brute_force(self, nprng):
        frame = make_random_frame(nprng)
        recs = extract_instances(frame)
        # per-pixel dict reference
        by_id: dict[int, list[float]] = {}
        for r in range(16):
            for c in range(16):
                d = float(frame.depth[r, c])
                if math.isfinite(d) and d > 0.0:
                    by_id.setdefault(int(frame.instance_ids[r, c]), []).append(d)
        assert len(recs) == len(by_id)
        for rec, iid in zip(recs, sorted(by_id)):
            pix = by_id[iid]
            assert rec.label == frame.instance_table[iid]
            assert rec.pixel_count == len(pix)
            assert rec.mean_depth == pytest.approx(sum(pix) / len(pix), rel=1e-12)


class TestFrameIO:
    def test_round_trip(self, tmp_path, nprng):
        frame = make_random_frame(nprng, size=8)
        path = tmp_path / "f.dhf1"
        save_frame(frame, path)
        assert load_frame(path) == frame

    def test_round_trip_bytes_stable(self, tmp_path, nprng):
        frame = make_random_frame(nprng, size=4)
        p1 = tmp_path / "a.dhf1"
        p2 = tmp_path / "b.dhf1"
        save_frame(frame, p1)
        save_frame(load_frame(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dhf1"
        path.write_bytes(b"XXXX" + bytes(20))
        with pytest.raises(FormatError, match="bad magic"):
            load_frame(path)

    def test_truncated(self, tmp_path, nprng):
        frame = make_random_frame(nprng, size=4)
        path = tmp_path / "t.dhf1"
        save_frame(frame, path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(FormatError, match="truncated"):
            load_frame(path)

    def test_missing_table_entry_names_id(self):
        ids = np.full((2, 2), 5, np.uint16)
        with pytest.raises(DepthHintsError, match="5"):
            DepthFrame(np.ones((2, 2), np.float32), ids, {0: "chair"})


class TestBuildInstDataset:
    def test_concatenation_order(self, tmp_path, nprng):
        f1 = make_random_frame(nprng, size=6, n_instances=3)
        f2 = make_random_frame(nprng, size=6, n_instances=2)
        p1, p2 = tmp_path / "1.dhf1", tmp_path / "2.dhf1"
        save_frame(f1, p1)
        save_frame(f2, p2)
        records, report = build_inst_dataset([p1, p2])
        solo1 = extract_instances(f1)
        solo2 = extract_instances(f2)
        assert records == solo1 + solo2
        assert report.frames == 2

    def test_missing_file_names_path(self, tmp_path):
        missing = tmp_path / "nope.dhf1"
        with pytest.raises(DepthHintsError, match="nope"):
            build_inst_dataset([missing])

    def test_recount_oracle(self, tmp_path, nprng):
        paths = []
        expected = 0
        for i in range(10):
            frame = make_random_frame(nprng, size=10, n_instances=4)
            path = tmp_path / f"{i}.dhf1"
            save_frame(frame, path)
            paths.append(path)
            expected += len(extract_instances(frame))
        records, _ = build_inst_dataset(paths)
        assert len(records) == expected

    def test_empty_manifest_rejected(self):
        with pytest.raises(DepthHintsError):
            build_inst_dataset([])


def _inst(label, count, mean, hist=None):
    return InstanceRecord(label=label, pixel_count=count, mean_depth=mean, histogram=hist)


class TestAggregateLoo:
    def test_pixel_weighted_mean(self):
        recs = [_inst("chair", 2, 1.0), _inst("chair", 2, 9.0)]
        out = aggregate_loo(recs, ["chair"])
        assert len(out) == 1
        assert out[0].mean_depth == 5.0
        assert out[0].pixel_count == 4

    def test_pixel_weighting_uses_counts(self):
        recs = [_inst("chair", 1, 1.0), _inst("chair", 3, 9.0)]
        out = aggregate_loo(recs, ["chair"])
        assert out[0].mean_depth == pytest.approx((1.0 + 27.0) / 4.0)

    def test_instance_weighting_option(self):
        recs = [_inst("chair", 1, 1.0), _inst("chair", 3, 9.0)]
        out = aggregate_loo(recs, ["chair"], weighting="instances")
        assert out[0].mean_depth == 5.0

    def test_single_instance_class_identity(self):
        h = histogram([2.0, 2.5])
        recs = [_inst("lamp", 2, 2.25, h)]
        out = aggregate_loo(recs, ["lamp"])
        assert isinstance(out[0], ClassRecord)
        assert out[0].mean_depth == 2.25
        assert out[0].pixel_count == 2
        assert np.array_equal(out[0].histogram, h)

    def test_vocab_of_101_labels(self):
        vocab = [f"c{i}" for i in range(101)]
        recs = [_inst(label, 1, 1.0 + i * 0.05) for i, label in enumerate(vocab)]
        out = aggregate_loo(recs, vocab)
        assert len(out) == 101
        assert [r.label for r in out] == vocab

    def test_missing_vocab_label_reported(self):
        report = BuildReport()
        out = aggregate_loo([_inst("chair", 1, 2.0)], ["chair", "ghost"], report=report)
        assert [r.label for r in out] == ["chair"]
        assert report.missing_vocab_labels == ["ghost"]

    def test_out_of_vocab_instances_counted(self):
        report = BuildReport()
        aggregate_loo([_inst("chair", 1, 2.0), _inst("alien", 1, 3.0)], ["chair"], report=report)
        assert report.out_of_vocab_instances == 1

    def test_pooled_matches_concatenated_pixels(self, nprng):
        groups = [nprng.uniform(0.5, 9.5, nprng.integers(2, 30)) for _ in range(6)]
        recs = [
            _inst("chair", len(g), float(np.mean(g)), histogram(g)) for g in groups
        ]
        out = aggregate_loo(recs, ["chair"])
        all_pix = np.concatenate(groups)
        assert out[0].mean_depth == pytest.approx(mean_depth(all_pix), rel=1e-6)
        assert np.allclose(out[0].histogram, histogram(all_pix), atol=1e-9)

    def test_duplicate_vocab_rejected(self):
        with pytest.raises(DepthHintsError):
            aggregate_loo([], ["a", "a"])

    def test_empty_vocab_rejected(self):
        with pytest.raises(DepthHintsError):
            aggregate_loo([], [])


class TestRecordsIO:
    def test_round_trip_with_histograms(self, tmp_path, nprng):
        frame = make_random_frame(nprng)
        recs = extract_instances(frame)
        path = tmp_path / "d.jsonl"
        save_records(recs, path)
        assert load_records(path) == recs

    def test_round_trip_bytes_stable(self, tmp_path, nprng):
        frame = make_random_frame(nprng)
        recs = extract_instances(frame)
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_records(recs, p1)
        save_records(load_records(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_histogram_field_optional(self, tmp_path):
        recs = [_inst("chair", 3, 1.5)]
        path = tmp_path / "nohist.jsonl"
        save_records(recs, path)
        loaded = load_records(path)
        assert loaded[0].histogram is None
        assert loaded == recs

    def test_malformed_line_names_lineno(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"label": "a", "pixel_count": 1, "mean_depth": 2.0}\n{oops\n')
        with pytest.raises(FormatError, match="line 2"):
            load_records(path)

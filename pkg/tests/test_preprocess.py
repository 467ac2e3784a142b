import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaze_vtnet.gazedata import Recording
from gaze_vtnet.preprocess import (
    ChannelStats,
    apply_normalization,
    build_datapoints,
    cyclic_split,
    fit_channel_stats,
    interleave,
    render_scanpath,
    truncate_head,
    write_pgm,
)


def rows(n):
    return np.arange(n * 6, dtype=float).reshape(n, 6)


class TestCyclicSplit:
    def test_eight_rows_four_streams(self):
        x = rows(8)
        subs = cyclic_split(x, 4)
        np.testing.assert_array_equal(subs[0], x[[0, 4]])
        np.testing.assert_array_equal(subs[1], x[[1, 5]])
        np.testing.assert_array_equal(subs[2], x[[2, 6]])
        np.testing.assert_array_equal(subs[3], x[[3, 7]])

    def test_uneven_lengths(self):
        subs = cyclic_split(rows(6), 4)
        assert [len(s) for s in subs] == [2, 2, 1, 1]

    def test_k_one_is_identity(self):
        x = rows(5)
        (only,) = cyclic_split(x, 1)
        np.testing.assert_array_equal(only, x)

    def test_too_short(self):
        with pytest.raises(ValueError):
            cyclic_split(rows(3), 4)

    def test_row_conservation(self):
        for t in (4, 5, 9, 17, 100):
            subs = cyclic_split(rows(t), 4)
            assert sum(len(s) for s in subs) == t
            assert [len(s) for s in subs] == [(t - j + 3) // 4 for j in range(4)]


class TestInterleave:
    def test_round_trip_example(self):
        x = rows(8)
        np.testing.assert_array_equal(interleave(cyclic_split(x, 4)), x)

    def test_rejects_empty_stream(self):
        with pytest.raises(ValueError, match="incompatible"):
            interleave([rows(1), rows(0), rows(0), rows(0)])

    def test_rejects_large_gap(self):
        with pytest.raises(ValueError, match="incompatible"):
            interleave([rows(3), rows(1)])

    def test_rejects_increasing_lengths(self):
        with pytest.raises(ValueError, match="incompatible"):
            interleave([rows(1), rows(2)])

    @settings(max_examples=200, deadline=None)
    @given(t=st.integers(4, 100), k=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
    def test_round_trip_property(self, t, k, seed):
        if t < k:
            return
        x = np.random.default_rng(seed).normal(size=(t, 6))
        np.testing.assert_array_equal(interleave(cyclic_split(x, k)), x)


class TestTruncateHead:
    def test_truncates(self):
        out = truncate_head(rows(1500), 1000)
        assert out.shape[0] == 1000
        np.testing.assert_array_equal(out, rows(1500)[:1000])

    def test_noop_when_short(self):
        np.testing.assert_array_equal(truncate_head(rows(500), 1000), rows(500))

    def test_idempotent_prefix(self):
        x = rows(50)
        once = truncate_head(x, 20)
        np.testing.assert_array_equal(truncate_head(once, 20), once)
        np.testing.assert_array_equal(once, x[:20])

    def test_never_longer(self):
        for t in (1, 10, 2317):
            assert truncate_head(rows(t), 2000).shape[0] == min(t, 2000)


def seq_at(points):
    """Sequence whose first two channels are the given (gx, gy) points."""
    arr = np.zeros((len(points), 6))
    arr[:, 0] = [p[0] for p in points]
    arr[:, 1] = [p[1] for p in points]
    return arr


class TestRenderScanpath:
    def test_single_center_point(self):
        img = render_scanpath(seq_at([(0.5, 0.5)]), 64, 64)
        # round(0.5 * 63) = 32; 3x3 stamp centered there
        expected = np.zeros((64, 64))
        expected[31:34, 31:34] = 1.0
        np.testing.assert_array_equal(img, expected)

    def test_horizontal_transition(self):
        img = render_scanpath(seq_at([(0.0, 0.0), (1.0, 0.0)]), 64, 64)
        # stamps at both ends (clipped 2x2 corners), a 0.5 line between on row 0
        assert img[0, 0] == 1.0 and img[0, 63] == 1.0
        line = img[0, 2:62]
        assert np.all(line == 0.5)
        assert img[2, 30] == 0.0

    def test_values_restricted(self):
        rng = np.random.default_rng(3)
        img = render_scanpath(rng.uniform(-0.2, 1.2, size=(40, 6)), 32, 32)
        assert set(np.unique(img)) <= {0.0, 0.5, 1.0}

    def test_out_of_range_clamped(self):
        img = render_scanpath(seq_at([(-5.0, 2.0)]), 16, 16)
        assert img[15, 0] == 1.0  # clamped to (x=0, y=1), y axis points down

    def test_deterministic(self):
        seq = np.random.default_rng(0).uniform(0, 1, size=(30, 6))
        a = render_scanpath(seq, 48, 48)
        b = render_scanpath(seq, 48, 48)
        assert a.tobytes() == b.tobytes()

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            render_scanpath(np.zeros((0, 6)), 64, 64)

    def test_line_does_not_overwrite_stamp(self):
        img = render_scanpath(seq_at([(0.0, 0.0), (0.5, 0.5), (0.0, 0.0)]), 64, 64)
        assert img[31, 31] == 1.0

    def test_pgm_export(self, tmp_path):
        img = render_scanpath(seq_at([(0.5, 0.5)]), 16, 16)
        path = tmp_path / "scan.pgm"
        write_pgm(img, path)
        data = path.read_bytes()
        assert data.startswith(b"P5\n16 16\n255\n")
        assert len(data) == len(b"P5\n16 16\n255\n") + 256
        assert max(data[-256:]) == 255


class TestChannelStats:
    def make_dp(self, seq):
        return build_datapoints(
            [Recording("u", "reading", "control", np.arange(seq.shape[0], dtype=float), seq)],
            k=1,
            image_size=(8, 8),
        )[0]

    def test_constant_channel_maps_to_zero(self):
        seq = np.ones((10, 6))
        dp = self.make_dp(seq)
        stats = fit_channel_stats([dp], "f0")
        out = apply_normalization(seq, stats)
        assert np.all(out == 0.0)

    def test_self_normalization_zero_mean_unit_std(self):
        rng = np.random.default_rng(1)
        dps = [self.make_dp(rng.normal(5, 3, size=(40, 6)) + 1) for _ in range(3)]
        stats = fit_channel_stats(dps, "f1")
        pooled = np.concatenate([apply_normalization(dp.seq, stats) for dp in dps])
        assert np.all(np.abs(pooled.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(pooled.std(axis=0) - 1.0) < 1e-9)

    def test_hand_computed(self):
        seq = np.zeros((2, 6))
        seq[:, 0] = [1.0, 3.0]
        stats = ChannelStats(
            mean=np.array([2.0, 0, 0, 0, 0, 0]),
            std=np.array([1.0, 0, 0, 0, 0, 0]),
            fold_id="hand",
        )
        out = apply_normalization(seq, stats)
        np.testing.assert_array_equal(out[:, 0], [-1.0, 1.0])
        assert np.all(out[:, 1:] == 0.0)

    def test_empty_training_set(self):
        with pytest.raises(ValueError):
            fit_channel_stats([], "f")

    def test_carries_fold_identity(self):
        dp = self.make_dp(np.ones((4, 6)))
        assert fit_channel_stats([dp], "run1/fold2").fold_id == "run1/fold2"


def make_recording(user_id, length, label="control"):
    rng = np.random.default_rng(hash(user_id) % 2**32)
    channels = np.column_stack(
        [
            rng.uniform(0, 1, length),
            rng.uniform(0, 1, length),
            rng.uniform(600, 700, length),
            rng.uniform(600, 700, length),
            rng.uniform(2, 5, length),
            rng.uniform(2, 5, length),
        ]
    )
    return Recording(user_id, "reading", label, np.arange(length, dtype=float), channels)


class TestBuildDatapoints:
    def test_four_per_recording(self):
        recs = [make_recording(f"u{i}", 100) for i in range(10)]
        dps = build_datapoints(recs, image_size=(16, 16))
        assert len(dps) == 40
        assert {(dp.user_id, dp.task, dp.split_index) for dp in dps} == {
            (f"u{i}", "reading", j) for i in range(10) for j in range(4)
        }

    def test_cutoff_applied_per_subsequence(self):
        dps = build_datapoints([make_recording("u", 4000)], cutoff=1000, image_size=(16, 16))
        assert all(dp.seq.shape[0] == 1000 for dp in dps)

    def test_no_cutoff_splits_evenly(self):
        dps = build_datapoints([make_recording("u", 4000)], image_size=(16, 16))
        assert all(dp.seq.shape[0] == 1000 for dp in dps)

    def test_scanpath_matches_truncated_seq(self):
        rec = make_recording("u", 64)
        (dp, *_) = build_datapoints([rec], cutoff=10, image_size=(16, 16))
        np.testing.assert_array_equal(dp.scanpath, render_scanpath(dp.seq, 16, 16))

    def test_row_conservation_without_cutoff(self):
        rec = make_recording("u", 403)
        dps = build_datapoints([rec], image_size=(16, 16))
        assert sum(dp.seq.shape[0] for dp in dps) == 403

import io

import numpy as np
import pytest

from gaze_vtnet.gazedata import (
    CSV_HEADER,
    ParseError,
    Recording,
    load_manifest,
    parse_recording,
    remove_length_outliers,
    serialize_recording,
    summarize_lengths,
)


def csv_text(rows):
    return CSV_HEADER + "\n" + "\n".join(rows) + "\n"


WELL_FORMED = csv_text(
    [
        "0.0,0.5,0.5,650.0,652.0,3.5,3.55",
        "8.333,0.51,0.5,650.0,652.0,3.5,3.55",
        "16.667,0.52,0.49,650.1,652.1,3.49,3.54",
    ]
)


class TestParseRecording:
    def test_well_formed(self):
        rec, dropped = parse_recording(WELL_FORMED, "u1", "reading", "control")
        assert len(rec) == 3
        assert dropped == 0
        assert rec.channels[0, 0] == 0.5

    def test_accepts_stream(self):
        rec, _ = parse_recording(io.StringIO(WELL_FORMED), "u1", "reading", "control")
        assert len(rec) == 3

    def test_missing_field_row_dropped(self):
        text = csv_text(
            [
                "0.0,0.5,0.5,650.0,652.0,3.5,3.55",
                "8.333,0.51,0.5,650.0,652.0,,3.55",
                "16.667,0.52,0.49,650.1,652.1,3.49,3.54",
            ]
        )
        rec, dropped = parse_recording(text, "u1", "reading", "control")
        assert len(rec) == 2
        assert dropped == 1

    def test_non_finite_row_dropped(self):
        text = csv_text(
            [
                "0.0,0.5,0.5,650.0,652.0,3.5,3.55",
                "8.333,nan,0.5,650.0,652.0,3.5,3.55",
            ]
        )
        rec, dropped = parse_recording(text, "u1", "reading", "control")
        assert len(rec) == 1
        assert dropped == 1

    def test_nonpositive_pupil_dropped(self):
        text = csv_text(
            [
                "0.0,0.5,0.5,650.0,652.0,3.5,3.55",
                "8.333,0.5,0.5,650.0,652.0,0.0,3.55",
            ]
        )
        rec, dropped = parse_recording(text, "u1", "reading", "control")
        assert len(rec) == 1 and dropped == 1

    def test_non_monotonic_timestamps(self):
        text = csv_text(
            [
                "10.0,0.5,0.5,650.0,652.0,3.5,3.55",
                "10.0,0.5,0.5,650.0,652.0,3.5,3.55",
            ]
        )
        with pytest.raises(ParseError, match="non-monotonic"):
            parse_recording(text, "u1", "reading", "control")

    def test_malformed_header(self):
        with pytest.raises(ParseError, match="header"):
            parse_recording("t,gx\n1,2\n", "u1", "reading", "control")

    def test_non_numeric_field_is_error(self):
        text = csv_text(["0.0,0.5,abc,650.0,652.0,3.5,3.55"])
        with pytest.raises(ParseError, match="non-numeric"):
            parse_recording(text, "u1", "reading", "control")

    def test_zero_rows_retained(self):
        text = csv_text(["0.0,,0.5,650.0,652.0,3.5,3.55"])
        with pytest.raises(ParseError, match="zero rows"):
            parse_recording(text, "u1", "reading", "control")

    def test_parse_serialize_round_trip(self):
        rng = np.random.default_rng(4)
        t = np.cumsum(rng.uniform(1.0, 10.0, 50))
        channels = np.column_stack(
            [
                rng.uniform(0, 1, 50),
                rng.uniform(0, 1, 50),
                rng.uniform(500, 700, 50),
                rng.uniform(500, 700, 50),
                rng.uniform(2, 5, 50),
                rng.uniform(2, 5, 50),
            ]
        )
        rec = Recording("u9", "picture", "patient", t, channels)
        rec2, dropped = parse_recording(serialize_recording(rec), "u9", "picture", "patient")
        assert dropped == 0
        np.testing.assert_array_equal(rec.t, rec2.t)
        np.testing.assert_array_equal(rec.channels, rec2.channels)
        assert serialize_recording(rec2) == serialize_recording(rec)


def make_recording(user_id, length, task="reading", label="control"):
    t = np.arange(length, dtype=float)
    channels = np.ones((length, 6))
    return Recording(user_id, task, label, t, channels)


class TestRemoveLengthOutliers:
    def test_all_equal_keeps_everything(self):
        recs = [make_recording(f"u{i}", 100) for i in range(5)]
        kept, removed = remove_length_outliers(recs, "reading")
        assert len(kept) == 5 and removed == []

    def test_single_extreme_outlier_removed(self):
        # 29 recordings of length 100 plus one of 10000:
        # mean = 430, population var = (29*330^2 + 9570^2)/30 = 3158100,
        # std = 1777.104..., 3 sigma = 5331.3
        # |10000 - 430| = 9570 > 5331 -> removed; |100 - 430| = 330 -> kept
        recs = [make_recording(f"u{i}", 100) for i in range(29)]
        recs.append(make_recording("big", 10000))
        lengths = np.array([len(r) for r in recs], dtype=float)
        assert lengths.mean() == 430.0
        assert abs(lengths.std() - 1777.1044) < 1e-2
        kept, removed = remove_length_outliers(recs, "reading")
        assert [r.user_id for r in removed] == ["big"]
        assert len(kept) == 29

    def test_partition(self):
        rng = np.random.default_rng(0)
        recs = [make_recording(f"u{i}", int(l)) for i, l in enumerate(rng.integers(50, 5000, 40))]
        kept, removed = remove_length_outliers(recs, "reading")
        assert sorted(r.user_id for r in kept + removed) == sorted(r.user_id for r in recs)

    def test_single_pass_statistics(self):
        # one huge outlier whose removal would otherwise shrink sigma enough
        # to flag the next-largest value: single-pass keeps that value
        recs = [make_recording(f"u{i}", 100) for i in range(29)]
        recs.append(make_recording("mid", 140))
        recs.append(make_recording("big", 100000))
        kept, removed = remove_length_outliers(recs, "reading")
        assert [r.user_id for r in removed] == ["big"]
        assert any(r.user_id == "mid" for r in kept)

    def test_too_few(self):
        with pytest.raises(ValueError):
            remove_length_outliers([make_recording("u0", 10)], "reading")

    def test_mixed_task_rejected(self):
        recs = [make_recording("u0", 10), make_recording("u1", 10, task="picture")]
        with pytest.raises(ValueError):
            remove_length_outliers(recs, "reading")


class TestSummarizeLengths:
    def test_odd_count(self):
        recs = [make_recording(f"u{i}", l) for i, l in enumerate([2, 4, 6])]
        (row,) = [r for r in summarize_lengths(recs) if r.group == "total"]
        assert (row.mean, row.median, row.min, row.max) == (4.0, 4.0, 2, 6)

    def test_even_count_median_is_middle_mean(self):
        recs = [make_recording(f"u{i}", l) for i, l in enumerate([1, 2, 3, 4])]
        (row,) = [r for r in summarize_lengths(recs) if r.group == "total"]
        assert row.median == 2.5

    def test_group_rows_and_invariants(self):
        recs = [make_recording(f"c{i}", 100 + i) for i in range(3)]
        recs += [make_recording(f"p{i}", 200 + i, label="patient") for i in range(4)]
        rows = summarize_lengths(recs)
        assert [r.group for r in rows] == ["patient", "control", "total"]
        for r in rows:
            assert r.min <= r.median <= r.max
            assert r.std >= 0
        assert rows[-1].n == 7

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            summarize_lengths([])


class TestManifest:
    def test_round_trip(self, tmp_path):
        (tmp_path / "u1_reading.csv").write_text(WELL_FORMED)
        (tmp_path / "manifest.json").write_text(
            '{"version": 1, "entries": [{"user_id": "u1", "label": "control", '
            '"task": "reading", "path": "u1_reading.csv"}]}'
        )
        manifest = load_manifest(tmp_path / "manifest.json")
        assert len(manifest.entries) == 1

    def test_missing_file(self, tmp_path):
        (tmp_path / "manifest.json").write_text(
            '{"version": 1, "entries": [{"user_id": "u1", "label": "control", '
            '"task": "reading", "path": "absent.csv"}]}'
        )
        with pytest.raises(ParseError, match="does not exist"):
            load_manifest(tmp_path / "manifest.json")

    def test_duplicate_user_task(self, tmp_path):
        (tmp_path / "a.csv").write_text(WELL_FORMED)
        (tmp_path / "manifest.json").write_text(
            '{"version": 1, "entries": ['
            '{"user_id": "u1", "label": "control", "task": "reading", "path": "a.csv"},'
            '{"user_id": "u1", "label": "control", "task": "reading", "path": "a.csv"}]}'
        )
        with pytest.raises(ParseError, match="duplicate"):
            load_manifest(tmp_path / "manifest.json")

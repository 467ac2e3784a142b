import numpy as np
import pytest

from gaze_vtnet.baselines import (
    FEATURE_NAMES,
    GnbSpec,
    LogRegSpec,
    dump_features_csv,
    extract_features,
    gnb_fit,
    gnb_predict,
    logreg_fit,
    logreg_loss,
    logreg_predict,
)
from gaze_vtnet.preprocess import Datapoint


def make_dp(seq, label="control"):
    return Datapoint(
        user_id="u",
        label=label,
        task="reading",
        seq=np.asarray(seq, dtype=float),
        scanpath=np.zeros((8, 8)),
        split_index=0,
    )


class TestExtractFeatures:
    def test_feature_count_and_names(self):
        assert len(FEATURE_NAMES) == 27
        feats = extract_features(make_dp(np.random.default_rng(0).random((10, 6))))
        assert feats.shape == (27,)
        assert np.all(np.isfinite(feats))

    def test_constant_sequence(self):
        feats = dict(zip(FEATURE_NAMES, extract_features(make_dp(np.ones((5, 6))))))
        assert feats["std_gx"] == 0.0
        assert feats["path_length"] == 0.0
        assert feats["saccade_count"] == 0.0
        assert feats["seq_len"] == 5.0

    def test_three_four_five_path(self):
        seq = np.zeros((2, 6))
        seq[1, 0] = 0.3
        seq[1, 1] = 0.4
        feats = dict(zip(FEATURE_NAMES, extract_features(make_dp(seq))))
        assert abs(feats["path_length"] - 0.5) < 1e-12
        assert feats["saccade_count"] == 1.0  # 0.5 > 0.02 threshold

    def test_path_matches_brute_force(self):
        rng = np.random.default_rng(5)
        seq = rng.random((50, 6))
        feats = dict(zip(FEATURE_NAMES, extract_features(make_dp(seq))))
        total = 0.0
        for i in range(49):
            dx = seq[i + 1, 0] - seq[i, 0]
            dy = seq[i + 1, 1] - seq[i, 1]
            total += (dx * dx + dy * dy) ** 0.5
        assert abs(feats["path_length"] - total) < 1e-9


class TestGnb:
    def test_symmetric_boundary_at_zero(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([rng.normal(-1, 1, 400), rng.normal(1, 1, 400)])[:, None]
        y = np.array([0] * 400 + [1] * 400)
        model = gnb_fit(x, y)
        _, p_low = gnb_predict(model, np.array([-3.0]))
        _, p_high = gnb_predict(model, np.array([3.0]))
        assert p_low < 0.5 < p_high
        # likelihood-equidistant midpoint of the fitted gaussians scores ~0.5
        mid = model.means.mean()
        _, p_mid = gnb_predict(model, np.array([mid]))
        assert abs(p_mid - 0.5) < 0.05

    def test_equidistant_point_is_half(self):
        x = np.array([[-1.0], [-1.0], [1.0], [1.0]])
        y = np.array([0, 0, 1, 1])
        model = gnb_fit(x, y)
        _, p = gnb_predict(model, np.array([0.0]))
        assert abs(p - 0.5) < 1e-12

    def test_zero_variance_feature_guarded(self):
        x = np.array([[1.0, 0.0], [1.0, 0.2], [1.0, 1.0], [1.0, 1.2]])
        y = np.array([0, 0, 1, 1])
        model = gnb_fit(x, y)
        classes, p = gnb_predict(model, x)
        assert np.all(np.isfinite(p))
        posteriors = np.column_stack([1 - p, p])
        np.testing.assert_allclose(posteriors.sum(axis=1), 1.0, atol=1e-9)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            gnb_fit(np.ones((3, 2)), np.zeros(3, dtype=int))


class TestLogReg:
    def separable(self, rng, n=60):
        x0 = rng.normal(-2.0, 0.4, size=(n, 3))
        x1 = rng.normal(2.0, 0.4, size=(n, 3))
        x = np.vstack([x0, x1])
        y = np.array([0] * n + [1] * n)
        mean, std = x.mean(axis=0), x.std(axis=0)
        return (x - mean) / std, y

    def test_separable_perfect_training_accuracy(self):
        x, y = self.separable(np.random.default_rng(1))
        model = logreg_fit(x, y)
        classes, _ = logreg_predict(model, x)
        assert np.array_equal(classes, y)

    def test_all_zero_features_give_constant_probability(self):
        x = np.zeros((10, 4))
        y = np.array([0, 1] * 5)
        model = logreg_fit(x, y)
        _, p = logreg_predict(model, x)
        assert np.allclose(p, p[0])

    def test_more_l2_never_bigger_weights(self):
        x, y = self.separable(np.random.default_rng(2))
        small = logreg_fit(x, y, l2=1e-3)
        large = logreg_fit(x, y, l2=2e-3)
        assert np.linalg.norm(large.weights) <= np.linalg.norm(small.weights) + 1e-9

    def test_loss_nonincreasing(self):
        rng = np.random.default_rng(3)
        x, y = self.separable(rng, n=30)
        losses = []
        for iters in (1, 5, 20, 100, 500):
            model = logreg_fit(x, y, max_iters=iters)
            losses.append(logreg_loss(model, x, y))
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            logreg_fit(np.ones((3, 2)), np.ones(3, dtype=int))


class TestHarnessContract:
    def make_cohort(self):
        rng = np.random.default_rng(7)
        dps = []
        for i in range(12):
            label = "patient" if i % 2 else "control"
            scale = 1.5 if label == "patient" else 1.0
            for j in range(4):
                seq = rng.random((30, 6))
                seq[:, 0] *= scale
                dps.append(
                    Datapoint(
                        user_id=f"u{i:02d}",
                        label=label,
                        task="reading",
                        seq=seq,
                        scanpath=np.zeros((8, 8)),
                        split_index=j,
                    )
                )
        return dps

    @pytest.mark.parametrize("spec_cls", [GnbSpec, LogRegSpec])
    def test_specs_plug_into_run_cv(self, spec_cls):
        from gaze_vtnet.evalharness import run_cv

        report = run_cv(self.make_cohort(), spec_cls(), runs=2, k=3, master_seed=1)
        block = report.blocks[0]
        assert block.classifier == spec_cls.name
        assert 0.0 <= block.mean["auc"] <= 1.0
        assert block.mean["auc"] > 0.7  # scaled-channel cohort is separable

    def test_feature_dump_csv(self, tmp_path):
        dps = self.make_cohort()[:8]
        path = tmp_path / "features.csv"
        dump_features_csv(dps, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "user_id,task,label,split_index," + ",".join(FEATURE_NAMES)
        assert len(lines) == 9
        first = lines[1].split(",")
        assert len(first) == 4 + len(FEATURE_NAMES)
        dump_features_csv(dps, tmp_path / "again.csv")
        assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()

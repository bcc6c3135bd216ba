import numpy as np
import pytest

from standbench import baselines, stand
from standbench.checkpoint import load_checkpoint, save_checkpoint
from standbench.exceptions import ConfigError, ContractError
from standbench.metrics import auc_roc
from standbench.ndcore import make_rng, sigmoid


class TestRandom:
    def test_same_seed_identical(self):
        assert np.array_equal(baselines.random_score(100, 7), baselines.random_score(100, 7))

    def test_auc_near_half_on_long_series(self):
        rng = make_rng(0)
        y = (rng.uniform(size=6000) < 0.2).astype(int)
        scores = baselines.random_score(6000, seed=3)
        assert 47.0 <= auc_roc(scores, y) <= 53.0

    def test_mean_near_half(self):
        assert baselines.random_score(10_000, seed=1).mean() == pytest.approx(0.5, abs=0.02)


class TestPca:
    def test_full_rank_reconstructs(self):
        rng = make_rng(1)
        x = rng.standard_normal((200, 4))
        det = baselines.PcaDetector(rank=4).fit(x)
        assert np.allclose(det.score(x), 0.0, atol=1e-18)

    def test_rank_one_flags_off_subspace_point(self):
        rng = make_rng(2)
        direction = np.array([1.0, 2.0, -1.0])
        train = np.outer(rng.standard_normal(100), direction)
        det = baselines.PcaDetector(rank=1).fit(train)
        queries = np.vstack([np.outer(rng.standard_normal(5), direction),
                             [[-2.0, 1.0, 0.0]]])
        scores = det.score(queries)
        assert np.argmax(scores) == 5
        assert scores[5] > 10 * scores[:5].max() + 1e-9

    def test_centering_makes_offset_invariant(self):
        rng = make_rng(3)
        x = rng.standard_normal((150, 3))
        q = rng.standard_normal((20, 3))
        a = baselines.PcaDetector(rank=2).fit(x).score(q)
        b = baselines.PcaDetector(rank=2).fit(x + 5.0).score(q + 5.0)
        assert np.allclose(a, b, atol=1e-9)

    def test_rank_exceeds_channels(self):
        with pytest.raises(ConfigError):
            baselines.PcaDetector(rank=5).fit(np.zeros((10, 3)))


class TestKnnKmeans:
    def test_stored_point_scores_zero(self):
        rng = make_rng(4)
        train = rng.standard_normal((10, 3))
        det = baselines.KnnDetector(k=1).fit(train)
        assert det.score(train[3:4])[0] == pytest.approx(0.0, abs=1e-12)

    def test_knn_brute_force_oracle(self):
        rng = make_rng(5)
        train = rng.standard_normal((10, 3))
        queries = rng.standard_normal((3, 3))
        det = baselines.KnnDetector(k=4).fit(train)
        got = det.score(queries)
        for i, q in enumerate(queries):
            dists = sorted(np.linalg.norm(train - q, axis=1))
            assert got[i] == pytest.approx(np.mean(dists[:4]), rel=1e-12)

    def test_kmeans_single_centroid_is_mean_distance(self):
        rng = make_rng(6)
        train = rng.standard_normal((50, 2))
        det = baselines.KmeansDetector(n_clusters=1, seed=0).fit(train)
        assert np.allclose(det.centroids_[0], train.mean(axis=0), atol=1e-9)
        q = rng.standard_normal((5, 2))
        assert np.allclose(det.score(q), np.linalg.norm(q - train.mean(axis=0), axis=1))

    def test_kmeans_brute_force_nearest_centroid(self):
        rng = make_rng(7)
        train = rng.standard_normal((60, 3))
        det = baselines.KmeansDetector(n_clusters=4, seed=1).fit(train)
        q = rng.standard_normal((10, 3))
        got = det.score(q)
        for i in range(10):
            expect = min(np.linalg.norm(q[i] - c) for c in det.centroids_)
            assert got[i] == pytest.approx(expect, rel=1e-12)

    def test_empty_training_rejected(self):
        with pytest.raises(ConfigError):
            baselines.KnnDetector(k=1).fit(np.zeros((0, 3)))
        with pytest.raises(ConfigError):
            baselines.KmeansDetector(3).fit(np.zeros((0, 3)))

    def test_k_exceeds_training(self):
        with pytest.raises(ConfigError):
            baselines.KnnDetector(k=5).fit(np.zeros((3, 2)))


class TestLogReg:
    def test_separable_toy_reaches_full_accuracy(self):
        x = np.concatenate([np.linspace(-3, -1, 20), np.linspace(1, 3, 20)])[:, None]
        y = np.concatenate([np.zeros(20), np.ones(20)]).astype(int)
        det = baselines.LogRegDetector(learning_rate=0.5, epochs=400).fit(x, y)
        scores = det.score(x)
        pred = (scores > 0).astype(int)
        assert np.array_equal(pred, y)

    def test_first_step_closed_form(self):
        rng = make_rng(8)
        x = rng.standard_normal((30, 4))
        y = (rng.uniform(size=30) < 0.5).astype(int)
        det = baselines.LogRegDetector(learning_rate=0.2, epochs=1).fit(x, y)
        grad_w = x.T @ (sigmoid(np.zeros(30)) - y) / 30
        grad_b = float(np.mean(sigmoid(np.zeros(30)) - y))
        assert np.allclose(det.w_, -0.2 * grad_w, atol=1e-12)
        assert det.b_ == pytest.approx(-0.2 * grad_b, abs=1e-12)

    def test_permutation_invariance(self):
        rng = make_rng(9)
        x = rng.standard_normal((40, 3))
        y = (rng.uniform(size=40) < 0.4).astype(int)
        perm = rng.permutation(40)
        a = baselines.LogRegDetector(epochs=100).fit(x, y)
        b = baselines.LogRegDetector(epochs=100).fit(x[perm], y[perm])
        assert np.allclose(a.w_, b.w_, atol=1e-10)

    def test_requires_labels(self):
        with pytest.raises(ContractError):
            baselines.LogRegDetector().fit(np.zeros((5, 2)))


class TestDetectorContracts:
    def detectors(self, seed=0):
        return [
            baselines.RandomDetector(seed=seed),
            baselines.PcaDetector(rank=2),
            baselines.KnnDetector(k=3),
            baselines.KmeansDetector(n_clusters=4, seed=seed),
        ]

    def test_scores_finite_and_full_length(self):
        rng = make_rng(10)
        train = rng.standard_normal((80, 3))
        test = rng.standard_normal((37, 3))
        y = (rng.uniform(size=80) < 0.3).astype(int)
        for det in self.detectors():
            det.fit(train, y)
            scores = det.score(test)
            assert scores.shape == (37,)
            assert np.all(np.isfinite(scores))
        sup = baselines.LogRegDetector(epochs=50).fit(train, y)
        assert np.all(np.isfinite(sup.score(test)))

    def test_utad_ignores_labels(self):
        rng = make_rng(11)
        train = rng.standard_normal((60, 3))
        y = (rng.uniform(size=60) < 0.3).astype(int)
        test = rng.standard_normal((20, 3))
        for with_labels, without in zip(self.detectors(), self.detectors()):
            with_labels.fit(train, y)
            without.fit(train)
            assert np.array_equal(with_labels.score(test), without.score(test))

    def test_stad_refuses_unlabeled_fit(self):
        cfg = stand.StandConfig(input_channels=3, d_model=4, window=6, epochs=1)
        for det in (baselines.LogRegDetector(),
                    baselines.StandDetector(cfg)):
            with pytest.raises(ContractError):
                det.fit(np.zeros((30, 3)))

    def test_build_detector_kinds(self):
        for kind in baselines.DETECTOR_KINDS:
            if kind == "stand":
                det = baselines.build_detector(kind, input_channels=3, d_model=4,
                                               window=6, epochs=1)
            else:
                det = baselines.build_detector(kind)
            assert det.kind == kind
        with pytest.raises(ConfigError):
            baselines.build_detector("iforest")


class TestSerialization:
    def test_container_round_trip(self, tmp_path):
        rng = make_rng(12)
        tensors = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(5)}
        path = tmp_path / "x.ckpt"
        save_checkpoint(path, "demo", {"alpha": 1.5, "name": "t"}, tensors)
        kind, config, back = load_checkpoint(path)
        assert kind == "demo"
        assert config == {"alpha": 1.5, "name": "t"}
        for key, val in tensors.items():
            assert np.array_equal(back[key], val)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        from standbench.exceptions import IngestError
        with pytest.raises(IngestError):
            load_checkpoint(path)

    @pytest.mark.parametrize("kind", ["random", "pca", "knn", "kmeans", "logreg"])
    def test_detector_round_trip(self, kind, tmp_path):
        rng = make_rng(13)
        train = rng.standard_normal((50, 3))
        y = (rng.uniform(size=50) < 0.4).astype(int)
        det = baselines.build_detector(kind) if kind != "pca" else baselines.PcaDetector(rank=2)
        det.fit(train, y) if det.supervision == baselines.STAD else det.fit(train)
        path = tmp_path / f"{kind}.ckpt"
        baselines.save_detector(det, path)
        loaded = baselines.load_detector(path)
        test = rng.standard_normal((15, 3))
        assert np.allclose(det.score(test), loaded.score(test), atol=1e-15)

    def test_stand_detector_round_trip(self, tmp_path):
        rng = make_rng(14)
        values = rng.standard_normal((60, 3))
        labels = (rng.uniform(size=60) < 0.3).astype(int)
        cfg = stand.StandConfig(input_channels=3, d_model=4, window=6, epochs=2, seed=1)
        det = baselines.StandDetector(cfg, train_stride=3).fit(values, labels)
        path = tmp_path / "stand.ckpt"
        baselines.save_detector(det, path)
        loaded = baselines.load_detector(path)
        test = rng.standard_normal((30, 3))
        assert np.array_equal(det.score(test), loaded.score(test))


class TestCategoryOrdering:
    @pytest.mark.slow
    @pytest.mark.parametrize("seed", [0, 2])
    def test_supervised_beat_unsupervised_on_auc(self, acceptance_runs, seed):
        # the module-level restatement of the labels-beat-models ordering:
        # both supervised detectors rank strictly above every unsupervised one
        utad = {name: acceptance_runs.cell(name, seed).auc_roc
                for name in ("random", "pca", "knn", "kmeans")}
        stand_auc = acceptance_runs.cell("stand", seed).auc_roc
        logreg_auc = acceptance_runs.cell("logreg", seed).auc_roc
        for name, value in utad.items():
            assert stand_auc > value, f"stand {stand_auc:.2f} <= {name} {value:.2f}"
            assert logreg_auc > value, f"logreg {logreg_auc:.2f} <= {name} {value:.2f}"

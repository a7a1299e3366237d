"""Synthetic generator invariants and IDX round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from collabsc.data import (Dataset, SyntheticSpec, generate_synthetic, load_dataset_csv,
                           load_idx, save_dataset_csv, subset, unscale, write_idx_images,
                           write_idx_labels)


class TestSyntheticSpecValidation:
    def test_rejects_small_ambient_dimension(self):
        with pytest.raises(ValueError, match=r"D >= d\*k"):
            SyntheticSpec(k=4, d=3, D=10, n_per=5)

    def test_rejects_too_few_points(self):
        with pytest.raises(ValueError, match=r"n_per >= d\+1"):
            SyntheticSpec(k=2, d=3, D=10, n_per=3)

    def test_rejects_unknown_warp(self):
        with pytest.raises(ValueError, match="nonlinearity"):
            SyntheticSpec(k=2, d=2, D=10, n_per=5, nonlinearity="spiral")

    def test_rejects_negative_noise(self):
        with pytest.raises(ValueError, match="noise_sigma"):
            SyntheticSpec(k=2, d=2, D=10, n_per=5, noise_sigma=-1.0)


class TestGenerateSynthetic:
    def test_deterministic_per_seed(self):
        spec = SyntheticSpec(k=3, d=2, D=12, n_per=10, noise_sigma=0.1,
                             nonlinearity="tanh-warp", seed=42)
        a = generate_synthetic(spec)
        b = generate_synthetic(spec)
        assert (a.features == b.features).all()
        assert (a.labels_for_evaluation() == b.labels_for_evaluation()).all()

    def test_different_seeds_differ(self):
        base = dict(k=2, d=2, D=8, n_per=6)
        a = generate_synthetic(SyntheticSpec(seed=1, **base))
        b = generate_synthetic(SyntheticSpec(seed=2, **base))
        assert not (a.features == b.features).all()

    def test_scaled_to_unit_interval(self):
        ds = generate_synthetic(SyntheticSpec(k=3, d=3, D=30, n_per=20, seed=3))
        assert ds.features.min() >= 0.0
        assert ds.features.max() <= 1.0

    def test_noiseless_points_lie_in_their_subspace(self):
        spec = SyntheticSpec(k=3, d=3, D=24, n_per=12, noise_sigma=0.0,
                             nonlinearity="none", seed=5)
        ds = generate_synthetic(spec)
        raw = unscale(ds)
        bases = ds.provenance["bases"]
        labels = ds.labels_for_evaluation()
        for i in range(len(ds)):
            basis = bases[labels[i]]
            residual = raw[i] - basis @ (basis.T @ raw[i])
            assert float(np.abs(residual).max()) < 1e-10

    def test_noiseless_self_expressiveness_within_cluster(self):
        spec = SyntheticSpec(k=2, d=3, D=15, n_per=10, noise_sigma=0.0,
                             nonlinearity="none", seed=8)
        ds = generate_synthetic(spec)
        raw = unscale(ds)
        labels = ds.labels_for_evaluation()
        for i in range(len(ds)):
            same_idx = np.flatnonzero(labels == labels[i])
            others = raw[same_idx[same_idx != i]]
            coeffs, *_ = np.linalg.lstsq(others.T, raw[i], rcond=None)
            residual = raw[i] - others.T @ coeffs
            assert float(np.sqrt((residual * residual).sum())) < 1e-8

    def test_warp_is_monotone_elementwise(self):
        from collabsc.data import _warp
        x = np.linspace(-3, 3, 101)
        for kind in ("none", "tanh-warp", "square-warp"):
            y = _warp(x, kind)
            assert (np.diff(y) > 0).all()

    def test_labels_match_block_structure(self):
        ds = generate_synthetic(SyntheticSpec(k=3, d=2, D=10, n_per=4, seed=0))
        assert list(ds.labels_for_evaluation()) == [0] * 4 + [1] * 4 + [2] * 4


class TestIdx:
    def test_round_trip(self, tmp_path):
        images = (np.arange(2 * 3 * 4) % 251).reshape(2, 3, 4).astype(np.uint8)
        labels = np.array([7, 2])
        ipath, lpath = tmp_path / "imgs.idx", tmp_path / "labs.idx"
        write_idx_images(ipath, images)
        write_idx_labels(lpath, labels)
        ds = load_idx(ipath, lpath)
        assert len(ds) == 2
        assert ds.feature_shape == (1, 3, 4)
        np.testing.assert_allclose(ds.features.reshape(2, 3, 4) * 255.0, images)
        assert list(ds.labels_for_evaluation()) == [7, 2]
        # write-then-read byte identity
        ipath2 = tmp_path / "imgs2.idx"
        write_idx_images(ipath2, (ds.features.reshape(2, 3, 4) * 255.0).round().astype(np.uint8))
        assert ipath.read_bytes() == ipath2.read_bytes()

    def test_wrong_magic_rejected(self, tmp_path):
        images = np.zeros((2, 2, 2), dtype=np.uint8)
        labels = np.zeros(2, dtype=np.int64)
        ipath, lpath = tmp_path / "i.idx", tmp_path / "l.idx"
        write_idx_images(ipath, images)
        write_idx_labels(lpath, labels)
        with pytest.raises(ValueError, match="bad magic 0x00000803"):
            load_idx(ipath, ipath)  # images file passed as labels
        with pytest.raises(ValueError, match="bad magic 0x00000801"):
            load_idx(lpath, lpath)  # labels file passed as images

    def test_truncated_payload_reports_offset(self, tmp_path):
        ipath = tmp_path / "t.idx"
        write_idx_images(ipath, np.zeros((2, 3, 3), dtype=np.uint8))
        ipath.write_bytes(ipath.read_bytes()[:-5])
        lpath = tmp_path / "l.idx"
        write_idx_labels(lpath, np.zeros(2, dtype=np.int64))
        with pytest.raises(ValueError, match="offset"):
            load_idx(ipath, lpath)

    def test_count_mismatch_rejected(self, tmp_path):
        ipath, lpath = tmp_path / "i.idx", tmp_path / "l.idx"
        write_idx_images(ipath, np.zeros((2, 2, 2), dtype=np.uint8))
        write_idx_labels(lpath, np.zeros(3, dtype=np.int64))
        with pytest.raises(ValueError, match="mismatch"):
            load_idx(ipath, lpath)


class TestSubset:
    @staticmethod
    def _dataset(n=40, k=4):
        features = np.linspace(0, 1, n * 3).reshape(n, 3)
        labels = np.arange(n) % k
        return Dataset(features, labels, (3,), {"source": "test"})

    def test_full_size_subset_is_identity(self):
        ds = self._dataset()
        sub = subset(ds, len(ds), balanced=False, seed=0)
        np.testing.assert_array_equal(sub.features, ds.features)

    def test_same_seed_same_subset(self):
        ds = self._dataset()
        a = subset(ds, 10, balanced=False, seed=9)
        b = subset(ds, 10, balanced=False, seed=9)
        assert (a.features == b.features).all()

    def test_balanced_exact_per_class(self):
        ds = self._dataset(n=100, k=10)
        sub = subset(ds, 50, balanced=True, seed=1)
        sizes = np.bincount(sub.labels_for_evaluation(), minlength=10)
        assert (sizes == 5).all()
        assert sub.provenance["subset"]["label_aware_sampling"] is True

    def test_balanced_infeasible_rejected(self):
        features = np.zeros((10, 3))
        labels = np.array([0] * 8 + [1] * 2)  # class 1 has only 2 samples
        ds = Dataset(features, labels, (3,), {"source": "test"})
        with pytest.raises(ValueError, match="infeasible"):
            subset(ds, 10, balanced=True, seed=0)

    def test_oversized_subset_rejected(self):
        ds = self._dataset()
        with pytest.raises(ValueError, match="requested"):
            subset(ds, len(ds) + 1, balanced=False, seed=0)


class TestCsv:
    def test_round_trip(self, tmp_path):
        ds = generate_synthetic(SyntheticSpec(k=2, d=2, D=6, n_per=5, seed=2))
        fpath, lpath = tmp_path / "f.csv", tmp_path / "l.csv"
        save_dataset_csv(ds, fpath, lpath)
        loaded = load_dataset_csv(fpath, lpath)
        np.testing.assert_array_equal(loaded.features, ds.features)
        np.testing.assert_array_equal(loaded.labels_for_evaluation(),
                                      ds.labels_for_evaluation())

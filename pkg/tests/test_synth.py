"""Synthetic corpus generator tests."""

import numpy as np
import pytest

from posestream.synth import CLASS_NAMES, SyntheticSpec, generate, generate_annotations


class TestSpec:
    def test_rejects_unknown_class(self):
        with pytest.raises(ValueError, match="unknown motion"):
            SyntheticSpec(classes=("moonwalk",))

    def test_rejects_bad_dropout(self):
        with pytest.raises(ValueError, match="dropout"):
            SyntheticSpec(dropout=1.0)

    def test_rejects_negative_sigma(self):
        with pytest.raises(ValueError, match="sigma"):
            SyntheticSpec(noise_sigma=-1.0)


class TestGenerate:
    def test_counts_and_labels(self):
        spec = SyntheticSpec(videos_per_class=3, frames=10, seed=1)
        poses = generate(spec)
        assert len(poses) == 3 * len(CLASS_NAMES)
        labels = sorted({p.label for p in poses})
        assert labels == list(range(len(CLASS_NAMES)))
        assert all(p.num_frames == 10 for p in poses)
        assert len({p.video for p in poses}) == len(poses)

    def test_clean_spec_fully_visible_and_noise_free(self):
        spec = SyntheticSpec(videos_per_class=2, frames=8, noise_sigma=0.0, dropout=0.0, seed=2)
        poses = generate(spec)
        assert all((p.visibility == 1).all() for p in poses)
        # Same seed with noise produces different coordinates.
        noisy = generate(SyntheticSpec(videos_per_class=2, frames=8, noise_sigma=1.0, seed=2))
        assert not np.allclose(poses[0].coords, noisy[0].coords)

    def test_deterministic(self):
        spec = SyntheticSpec(videos_per_class=2, frames=8, noise_sigma=1.0, dropout=0.1, seed=3)
        a, b = generate(spec), generate(spec)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.coords, pb.coords)
            np.testing.assert_array_equal(pa.visibility, pb.visibility)

    def test_dropout_fraction(self):
        # >= 10^4 joint slots; empirical rate within 0.2 +- 0.02.
        spec = SyntheticSpec(videos_per_class=20, frames=20, dropout=0.2, seed=4)
        poses = generate(spec)
        vis = np.concatenate([p.visibility.ravel() for p in poses])
        assert vis.size >= 10_000
        rate = float((vis == 0).mean())
        assert abs(rate - 0.2) <= 0.02

    def test_profiles_supported(self):
        for profile in ("jhmdb_gt", "estimated_14", "penn"):
            poses = generate(SyntheticSpec(videos_per_class=1, frames=5, profile=profile))
            assert poses[0].coords.shape[1] == {"jhmdb_gt": 15, "estimated_14": 14, "penn": 13}[profile]

    def test_classes_move_differently(self):
        spec = SyntheticSpec(videos_per_class=1, frames=20, noise_sigma=0.0, seed=5)
        poses = {p.video.rsplit("_", 1)[0]: p for p in generate(spec)}
        motion = {
            name: np.abs(np.diff(p.coords, axis=0)).mean(axis=(0, 2))
            for name, p in poses.items()
        }
        # The wave class moves its right wrist far more than its ankles;
        # the stride class moves everything.
        wave, stride = motion["wave"], motion["stride"]
        assert wave[11] > 5 * wave[13]  # r_wrist vs r_ankle in jhmdb order
        assert stride.min() > 0.5


class TestAnnotationsFile:
    def test_byte_identical_for_same_seed(self, tmp_path):
        spec = SyntheticSpec(videos_per_class=2, frames=6, noise_sigma=0.5, dropout=0.1, seed=6)
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        generate_annotations(spec, a, meta={"seed": spec.seed})
        generate_annotations(spec, b, meta={"seed": spec.seed})
        assert a.read_bytes() == b.read_bytes()

    def test_readable_by_annotation_reader(self, tmp_path):
        from posestream.preprocess import read_annotations

        spec = SyntheticSpec(videos_per_class=1, frames=5, seed=7)
        path = tmp_path / "ann.jsonl"
        count = generate_annotations(spec, path)
        poses = read_annotations(path, n_expected=15)
        assert len(poses) == count

"""Synthetic data generators and the planted-truth oracle loop."""

from __future__ import annotations

import numpy as np
import pytest

from gapbridge.errors import ValidationError
from gapbridge.gapmap import estimate_setting1
from gapbridge.rng import SeededRng
from gapbridge.synth import (
    SynthSpec,
    gen_bias_truth,
    gen_paired_images,
    gen_text_embeddings,
)


class TestSynthSpec:
    def test_clusters_cannot_exceed_count(self):
        with pytest.raises(ValidationError):
            SynthSpec(dim=4, count=3, clusters=5)

    def test_scales_positive(self):
        with pytest.raises(ValidationError):
            SynthSpec(dim=4, count=10, cluster_spread=0.0)
        with pytest.raises(ValidationError):
            SynthSpec(dim=4, count=10, bias_cov_scale=-1.0)

    def test_defaults(self):
        spec = SynthSpec(dim=8, count=100)
        assert spec.clusters == 8
        assert spec.cluster_spread == 0.1


class TestTextGeneration:
    def test_rows_unit_norm(self):
        spec = SynthSpec(dim=16, count=500, seed=3)
        texts = gen_text_embeddings(spec)
        norms = np.linalg.norm(texts.as_f64(), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-6)
        assert texts.normalized

    def test_deterministic(self):
        spec = SynthSpec(dim=8, count=64, seed=9)
        a = gen_text_embeddings(spec)
        b = gen_text_embeddings(spec)
        assert a.rows.tobytes() == b.rows.tobytes()

    def test_tiny_spread_rows_sit_on_centers(self):
        spec = SynthSpec(dim=8, count=64, clusters=4, cluster_spread=1e-12, seed=2)
        texts = gen_text_embeddings(spec).as_f64()
        # With spread ~0 each cluster collapses to a point, so there are
        # exactly `clusters` distinct rows (up to 1e-9).
        rounded = {tuple(np.round(row, 9)) for row in texts}
        assert len(rounded) == 4

    def test_cluster_labels_recoverable(self):
        """Nearest-center assignment recovers >= 99% of the true labels."""
        spec = SynthSpec(dim=16, count=4096, clusters=8, cluster_spread=0.1, seed=5)
        texts = gen_text_embeddings(spec).as_f64()
        true_labels = np.arange(4096) % 8
        centers = np.stack(
            [texts[true_labels == k].mean(axis=0) for k in range(8)]
        )
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        assigned = np.argmax(texts @ centers.T, axis=1)
        assert float((assigned == true_labels).mean()) >= 0.99


class TestBiasTruth:
    def test_mean_norm_pinned_to_scale(self):
        for seed in range(10):
            truth = gen_bias_truth(9, 0.05, 0.02, seed)
            assert abs(np.linalg.norm(truth.mean) - 0.05 * 3.0) < 1e-9

    def test_chol_reproduces_spd_covariance(self):
        truth = gen_bias_truth(6, 0.1, 0.03, 4)
        cov = truth.covariance()
        residual = np.linalg.norm(truth.chol @ truth.chol.T - cov)
        assert residual < 1e-10
        assert np.linalg.eigvalsh(cov).min() > 0.0

    def test_provenance_and_determinism(self):
        a = gen_bias_truth(4, 0.05, 0.02, 11)
        b = gen_bias_truth(4, 0.05, 0.02, 11)
        assert a.provenance == "synthetic-truth"
        np.testing.assert_array_equal(a.mean, b.mean)
        np.testing.assert_array_equal(a.chol, b.chol)


class TestPairedImages:
    def test_near_zero_noise_images_equal_texts(self):
        spec = SynthSpec(dim=6, count=32, seed=1)
        texts = gen_text_embeddings(spec)
        from gapbridge.gauss import GaussianParams

        truth = GaussianParams(
            mean=np.zeros(6), chol=np.eye(6) * 1e-12, provenance="synthetic-truth"
        )
        images = gen_paired_images(texts, truth, SeededRng(0))
        np.testing.assert_allclose(images.as_f64(), texts.as_f64(), atol=1e-6)

    def test_renormalize_flag(self):
        spec = SynthSpec(dim=6, count=32, seed=1)
        texts = gen_text_embeddings(spec)
        truth = gen_bias_truth(6, 0.05, 0.02, 2)
        images = gen_paired_images(texts, truth, SeededRng(0), renormalize=True)
        np.testing.assert_allclose(
            np.linalg.norm(images.as_f64(), axis=1), 1.0, atol=1e-4
        )

    def test_dim_mismatch(self):
        spec = SynthSpec(dim=6, count=8, clusters=2, seed=1)
        texts = gen_text_embeddings(spec)
        truth = gen_bias_truth(5, 0.05, 0.02, 2)
        with pytest.raises(ValidationError):
            gen_paired_images(texts, truth, SeededRng(0))

    def test_oracle_closure(self):
        """estimate_setting1 on generated pairs recovers the planted truth.

        This is the master property for the whole estimation path.
        """
        spec = SynthSpec(dim=16, count=10000, seed=21)
        texts = gen_text_embeddings(spec)
        truth = gen_bias_truth(16, 0.05, 0.02, 22)
        images = gen_paired_images(texts, truth, SeededRng(23))
        est = estimate_setting1(images, texts)
        mean_err = np.abs(est.mean - truth.mean).max()
        assert mean_err < 0.02 * (1.0 + np.abs(truth.mean).max())
        cov_rel = np.linalg.norm(
            est.covariance() - truth.covariance()
        ) / np.linalg.norm(truth.covariance())
        assert cov_rel < 0.05

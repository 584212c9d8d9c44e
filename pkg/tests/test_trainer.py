"""Optimizer, schedule, config plumbing, and short training-loop checks.

Longer statistical training runs live in test_acceptance; here the loops run
a few hundred steps at most, enough to check determinism, descent, shape
contracts, and serialization.
"""

from __future__ import annotations

import numpy as np
import pytest

from gapbridge.errors import (
    FormatError,
    InsufficientDataError,
    TrainingDivergedError,
    ValidationError,
)
from gapbridge.revmap import revmap_forward
from gapbridge.rng import SeededRng
from gapbridge.synth import SynthSpec, gen_bias_truth, gen_paired_images, gen_text_embeddings
from gapbridge.trainer import (
    TrainConfig,
    adamw_step,
    init_adam_state,
    load_fitted,
    load_train_config,
    lr_at,
    read_history_csv,
    save_fitted,
    train_fixed_mapping,
    train_setting3,
    train_setting4,
    write_history_csv,
)


def adamw_oracle(params, grads, m, v, t, lr, wd, beta1, beta2, eps):
    """Reference decoupled-decay Adam update, one parameter tensor."""
    m = beta1 * m + (1 - beta1) * grads
    v = beta2 * v + (1 - beta2) * grads**2
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    new = params * (1 - lr * wd) - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, m, v


def _config(**kw):
    base = dict(total_steps=100, warmup_steps=10, batch_size=8, seed=0)
    base.update(kw)
    return TrainConfig(**base)


class TestSchedule:
    def test_pinned_values(self):
        config = TrainConfig(total_steps=3000)
        assert lr_at(0, config) == 0.0
        assert lr_at(1250, config) == 5e-4
        assert abs(lr_at(625, config) - 2.5e-4) < 1e-19

    def test_decay_reaches_zero(self):
        config = TrainConfig(total_steps=3000)
        assert lr_at(3000, config) == 0.0
        mid_decay = (1250 + 3000) // 2
        assert abs(lr_at(mid_decay, config) - 2.5e-4) < 1e-9

    def test_peak_is_max(self):
        config = TrainConfig(total_steps=200, warmup_steps=50)
        values = [lr_at(s, config) for s in range(201)]
        assert max(values) == config.peak_lr
        assert values.index(max(values)) == 50

    def test_piecewise_linear(self):
        config = TrainConfig(total_steps=100, warmup_steps=40)
        v = np.array([lr_at(s, config) for s in range(101)])
        ramp = np.diff(v[:41])
        decay = np.diff(v[40:])
        np.testing.assert_allclose(ramp, ramp[0], atol=1e-18)
        np.testing.assert_allclose(decay, decay[0], atol=1e-18)

    def test_zero_warmup_starts_at_peak(self):
        config = TrainConfig(total_steps=10, warmup_steps=0)
        assert lr_at(0, config) == config.peak_lr

    def test_out_of_range(self):
        config = TrainConfig(total_steps=10, warmup_steps=0)
        with pytest.raises(ValidationError):
            lr_at(-1, config)
        with pytest.raises(ValidationError):
            lr_at(11, config)


class TestAdamW:
    def test_zero_grad_zero_decay_is_identity(self):
        config = _config(weight_decay=0.0)
        params = {"p": np.array([1.0, -2.0, 3.0])}
        state = init_adam_state(params)
        new, _ = adamw_step(params, {"p": np.zeros(3)}, state, 1e-3, config)
        np.testing.assert_array_equal(new["p"], params["p"])

    def test_single_step_hand_value(self):
        """param 0, g=1, lr=1e-3, wd=0: the bias-corrected step is
        -lr * 1/(1 + eps) regardless of the betas."""
        config = _config(weight_decay=0.0)
        params = {"p": np.array([0.0])}
        state = init_adam_state(params)
        new, _ = adamw_step(params, {"p": np.array([1.0])}, state, 1e-3, config)
        want = -1e-3 * (1.0 / (1.0 + 1e-8))
        assert abs(new["p"][0] - want) < 1e-18

    def test_decay_only_step(self):
        config = _config(weight_decay=0.1)
        params = {"p": np.array([1.0])}
        state = init_adam_state(params)
        new, _ = adamw_step(params, {"p": np.array([0.0])}, state, 1e-3, config)
        assert abs(new["p"][0] - 0.9999) < 1e-15

    def test_matches_reference_trajectory(self):
        """Ten random steps against the reference update, two tensors."""
        rng = np.random.default_rng(33)
        config = _config(weight_decay=0.07)
        params = {"a": rng.standard_normal((3, 2)), "b": rng.standard_normal(4)}
        state = init_adam_state(params)
        ref = {k: (v.copy(), np.zeros_like(v), np.zeros_like(v)) for k, v in params.items()}
        for t in range(1, 11):
            grads = {k: rng.standard_normal(v.shape) for k, v in params.items()}
            lr = 1e-3 * t
            params, state = adamw_step(params, grads, state, lr, config)
            for k in ref:
                p, m, v = ref[k]
                p, m, v = adamw_oracle(
                    p, grads[k], m, v, t, lr, 0.07, 0.9, 0.999, 1e-8
                )
                ref[k] = (p, m, v)
                np.testing.assert_allclose(params[k], p, atol=1e-14)

    def test_key_mismatch_rejected(self):
        config = _config()
        params = {"a": np.zeros(2)}
        state = init_adam_state(params)
        with pytest.raises(ValidationError):
            adamw_step(params, {"b": np.zeros(2)}, state, 1e-3, config)

    def test_shape_mismatch_rejected(self):
        config = _config()
        params = {"a": np.zeros(2)}
        state = init_adam_state(params)
        with pytest.raises(ValidationError):
            adamw_step(params, {"a": np.zeros(3)}, state, 1e-3, config)

    def test_step_counter_advances(self):
        params = {"a": np.zeros(1)}
        state = init_adam_state(params)
        assert state.t == 0
        _, state = adamw_step(params, {"a": np.ones(1)}, state, 1e-3, _config())
        assert state.t == 1


class TestTrainConfig:
    def test_defaults_match_contract(self):
        config = TrainConfig(total_steps=3000)
        assert config.batch_size == 32
        assert config.peak_lr == 5e-4
        assert config.warmup_steps == 1250
        assert config.weight_decay == 0.1
        assert config.betas == (0.9, 0.999)
        assert config.eps == 1e-8
        assert config.tau == 0.1
        assert config.disti_temp == 1.0
        assert config.loss_weights == {"w_map": 1.0, "w_recons": 1.0, "w_disti": 1.0}

    def test_warmup_cannot_exceed_total(self):
        with pytest.raises(ValidationError):
            TrainConfig(total_steps=100, warmup_steps=101)

    def test_rates_positive(self):
        with pytest.raises(ValidationError):
            TrainConfig(total_steps=10, warmup_steps=0, peak_lr=0.0)
        with pytest.raises(ValidationError):
            TrainConfig(total_steps=10, warmup_steps=0, tau=-0.1)

    def test_unknown_loss_weight_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(
                total_steps=10, warmup_steps=0, loss_weights={"w_style": 2.0}
            )

    def test_partial_loss_weights_filled(self):
        config = TrainConfig(total_steps=10, warmup_steps=0, loss_weights={"w_map": 0.5})
        assert config.loss_weights == {"w_map": 0.5, "w_recons": 1.0, "w_disti": 1.0}

    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"total_steps": 50, "warmup_steps": 5, "peak_lr": 0.001}')
        config = load_train_config(path)
        assert config.total_steps == 50
        assert config.peak_lr == 0.001

    def test_json_unknown_key(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"total_steps": 50, "warmup_steps": 5, "learning_rate": 1}')
        with pytest.raises(ValidationError):
            load_train_config(path)

    def test_json_requires_total_steps(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"batch_size": 16}')
        with pytest.raises(ValidationError):
            load_train_config(path)

    def test_json_not_object(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("[1, 2]")
        with pytest.raises(FormatError):
            load_train_config(path)


def _synthetic_problem(seed=0, dim=8, count=512):
    spec = SynthSpec(dim=dim, count=count, clusters=4, seed=seed)
    texts = gen_text_embeddings(spec)
    truth = gen_bias_truth(dim, 0.05, 0.02, seed + 1)
    return texts, truth


class TestFixedMappingLoop:
    def test_zero_steps_returns_initialized_model(self):
        texts, truth = _synthetic_problem()
        config = _config(total_steps=0, warmup_steps=0)
        model = train_fixed_mapping(texts, truth, config)
        assert model.history == []
        assert model.mapping.trainable is False

    def test_deterministic_for_fixed_seed(self):
        texts, truth = _synthetic_problem()
        config = _config(total_steps=40, warmup_steps=5, batch_size=16, seed=7)
        a = train_fixed_mapping(texts, truth, config)
        b = train_fixed_mapping(texts, truth, config)
        assert a.history == b.history
        assert a.reverse.w1.tobytes() == b.reverse.w1.tobytes()
        assert a.reverse.w2.tobytes() == b.reverse.w2.tobytes()

    def test_reconstruction_loss_descends(self):
        """Mean of the last 50 recorded losses < mean around step 10."""
        texts, truth = _synthetic_problem()
        config = _config(total_steps=300, warmup_steps=30, batch_size=32, seed=3)
        model = train_fixed_mapping(texts, truth, config)
        cos = [row.loss_cosine + row.loss_cl for row in model.history]
        early = float(np.mean(cos[9:59]))
        late = float(np.mean(cos[-50:]))
        assert late < early

    def test_history_finite_and_contiguous(self):
        texts, truth = _synthetic_problem()
        config = _config(total_steps=25, warmup_steps=5, batch_size=16)
        model = train_fixed_mapping(texts, truth, config)
        assert [row.step for row in model.history] == list(range(1, 26))
        for row in model.history:
            assert np.isfinite([row.loss_cosine, row.loss_cl, row.lr]).all()

    def test_batch_larger_than_corpus_rejected(self):
        texts, truth = _synthetic_problem(count=16)
        config = _config(total_steps=10, warmup_steps=0, batch_size=32)
        with pytest.raises(InsufficientDataError):
            train_fixed_mapping(texts, truth, config)


class TestSetting3Loop:
    def test_runs_and_produces_fitted_params(self):
        texts, truth = _synthetic_problem(seed=5)
        rng_images = gen_paired_images(texts, truth, SeededRng(9))
        config = _config(total_steps=60, warmup_steps=10, batch_size=16, seed=2)
        model = train_setting3(texts, rng_images, config)
        assert model.mapping.params.provenance == "fitted"
        assert model.mapping.trainable is True
        assert len(model.history) == 60
        assert "min_chol_diag" in model.diagnostics

    def test_single_image_pool_allowed(self):
        texts, truth = _synthetic_problem(seed=6, count=64)
        image = np.asarray(texts.rows[:1], dtype=np.float64) + truth.mean
        config = _config(total_steps=10, warmup_steps=2, batch_size=8, seed=1)
        model = train_setting3(texts, image, config)
        assert len(model.history) == 10

    def test_empty_image_pool_rejected(self):
        texts, _ = _synthetic_problem(count=64)
        config = _config(total_steps=5, warmup_steps=0, batch_size=8)
        with pytest.raises(InsufficientDataError):
            train_setting3(texts, np.zeros((0, 8)), config)

    def test_deterministic(self):
        texts, truth = _synthetic_problem(seed=8, count=128)
        images = gen_paired_images(texts, truth, SeededRng(4))
        config = _config(total_steps=30, warmup_steps=5, batch_size=16, seed=11)
        a = train_setting3(texts, images, config)
        b = train_setting3(texts, images, config)
        assert a.history == b.history
        np.testing.assert_array_equal(a.mapping.params.mean, b.mapping.params.mean)
        np.testing.assert_array_equal(a.mapping.params.chol, b.mapping.params.chol)


class TestSetting4Loop:
    def test_runs_with_all_losses_recorded(self):
        texts, _ = _synthetic_problem(seed=12, count=256)
        config = _config(total_steps=40, warmup_steps=10, batch_size=32, seed=3)
        model = train_setting4(texts, config)
        assert len(model.history) == 40
        row = model.history[-1]
        assert row.loss_map != 0.0
        assert row.loss_disti >= 0.0
        assert model.diagnostics["min_chol_diag"] > 0.0

    def test_deterministic(self):
        texts, _ = _synthetic_problem(seed=13, count=128)
        config = _config(total_steps=20, warmup_steps=5, batch_size=16, seed=9)
        a = train_setting4(texts, config)
        b = train_setting4(texts, config)
        assert a.history == b.history
        np.testing.assert_array_equal(a.mapping.params.chol, b.mapping.params.chol)

    def test_disti_weight_zero_changes_trajectory(self):
        texts, _ = _synthetic_problem(seed=14, count=128)
        base = _config(total_steps=20, warmup_steps=5, batch_size=16, seed=9)
        ablated = _config(
            total_steps=20, warmup_steps=5, batch_size=16, seed=9,
            loss_weights={"w_disti": 0.0},
        )
        a = train_setting4(texts, base)
        b = train_setting4(texts, ablated)
        assert not np.array_equal(a.mapping.params.mean, b.mapping.params.mean)


class TestDivergenceGuard:
    def test_nan_loss_aborts_with_step_and_term(self):
        from gapbridge.trainer import _check_finite

        with pytest.raises(TrainingDivergedError, match="step 17.*loss_map"):
            _check_finite(17, loss_map=float("nan"), loss_cosine=0.1)

    def test_inf_also_caught(self):
        from gapbridge.trainer import _check_finite

        with pytest.raises(TrainingDivergedError):
            _check_finite(3, loss_disti=float("inf"))


class TestHistoryAndModelSerialization:
    def test_history_csv_round_trip(self, tmp_path):
        texts, truth = _synthetic_problem(count=64)
        config = _config(total_steps=12, warmup_steps=3, batch_size=8)
        model = train_fixed_mapping(texts, truth, config)
        path = tmp_path / "history.csv"
        write_history_csv(model.history, path)
        back = read_history_csv(path)
        assert back == model.history

    def test_history_csv_header(self, tmp_path):
        path = tmp_path / "h.csv"
        write_history_csv([], path)
        header = path.read_text().splitlines()[0]
        assert header == "step,loss_map,loss_cosine,loss_cl,loss_disti,lr"

    def test_fitted_model_round_trip(self, tmp_path):
        texts, _ = _synthetic_problem(seed=20, count=128)
        config = _config(total_steps=15, warmup_steps=3, batch_size=16, seed=5)
        model = train_setting4(texts, config)
        save_fitted(model, tmp_path / "out")
        back = load_fitted(tmp_path / "out")
        assert back.history == model.history
        assert back.mapping.trainable == model.mapping.trainable
        np.testing.assert_allclose(
            back.mapping.params.mean, model.mapping.params.mean, atol=1e-6
        )
        np.testing.assert_allclose(back.reverse.w1, model.reverse.w1, atol=1e-6)
        x = texts.as_f64()[:8]
        np.testing.assert_allclose(
            revmap_forward(x, back.reverse), revmap_forward(x, model.reverse), atol=1e-4
        )

    def test_load_accepts_manifest_path(self, tmp_path):
        texts, truth = _synthetic_problem(count=64)
        config = _config(total_steps=5, warmup_steps=0, batch_size=8)
        model = train_fixed_mapping(texts, truth, config)
        save_fitted(model, tmp_path / "m")
        back = load_fitted(tmp_path / "m" / "model.json")
        assert back.history == model.history

import numpy as np
import pytest

from app.common.errors import TrainingDivergedError
from app.services.gating import GateConfig, GateMode
from app.services.model import AttentionKind, Checkpoint, Transformer
from app.services.tensor_core import Rng, Tensor
from app.services.training import (
    AdamW,
    ParamGroup,
    Phase,
    TrainConfig,
    TrainLog,
    TrainMode,
    TrainRecord,
    evaluate_nll,
    gate_for_phase,
    lr_at,
    phase_of,
    train,
)


def random_source(vocab: int = 32, batch: int = 2, length: int = 12):
    def source(rng: Rng):
        return rng.integers(vocab, (batch, length)), np.ones((batch, length), dtype=bool)

    return source


def test_lr_schedule_warmup_plateau_and_cosine_floor():
    cfg = TrainConfig(total_steps=100, warmup_steps=10, decay_start_step=50, peak_lr=1e-3, final_lr_fraction=0.1)
    assert lr_at(0, cfg) == 0.0
    assert lr_at(5, cfg) == pytest.approx(5e-4)
    assert lr_at(30, cfg) == pytest.approx(1e-3)
    assert lr_at(99, cfg) == pytest.approx(1e-4)
    decay = [lr_at(s, cfg) for s in range(50, 100)]
    assert decay == sorted(decay, reverse=True)


def test_default_decay_start_is_half_of_training():
    assert TrainConfig(total_steps=200, warmup_steps=10).decay_start_step == 100
    with pytest.raises(ValueError):
        TrainConfig(total_steps=100, warmup_steps=60, decay_start_step=50)


def test_two_phase_schedule_boundary_and_annealing():
    cfg = TrainConfig(total_steps=100, warmup_steps=0, decay_start_step=60, phase2_start_fraction=0.5, anneal_steps=10, mode=TrainMode.TAHG)
    assert cfg.phase2_boundary == 80
    assert phase_of(79, cfg) == (Phase.SOFT, 0.0)
    assert phase_of(80, cfg) == (Phase.ANNEALED, 0.0)
    assert phase_of(85, cfg) == (Phase.ANNEALED, pytest.approx(0.5))
    assert phase_of(90, cfg) == (Phase.HARD, 1.0)


def test_anneal_longer_than_decay_shrinks_and_zero_is_abrupt():
    cfg = TrainConfig(total_steps=100, warmup_steps=0, decay_start_step=60, anneal_steps=500, mode=TrainMode.TAHG)
    assert cfg.effective_anneal_steps == 4
    abrupt = cfg.model_copy(update={"anneal_steps": 0})
    assert phase_of(abrupt.phase2_boundary, abrupt) == (Phase.HARD, 1.0)


def test_single_phase_modes():
    assert phase_of(10, TrainConfig(mode=TrainMode.DENSE))[0] is Phase.DENSE
    assert phase_of(10, TrainConfig(mode=TrainMode.SOFT_CPT))[0] is Phase.SOFT
    assert phase_of(999, TrainConfig(mode=TrainMode.FROZEN_LLM))[0] is Phase.SOFT
    assert phase_of(10, TrainConfig(mode=TrainMode.BERNOULLI_STE))[0] is Phase.BERNOULLI
    gate = gate_for_phase(GateConfig(), Phase.ANNEALED, 0.3)
    assert gate.mode is GateMode.ANNEALED and gate.alpha == 0.3


def test_adamw_decays_matrices_only_and_skips_frozen():
    matrix = Tensor(np.ones((2, 2)), requires_grad=True)
    vector = Tensor(np.ones(2), requires_grad=True)
    frozen = Tensor(np.ones(2), requires_grad=False)
    for t in (matrix, vector):
        t.grad = np.zeros_like(t.data)
    frozen.grad = np.ones(2, dtype=np.float32)
    opt = AdamW([ParamGroup([("m", matrix), ("v", vector), ("f", frozen)], weight_decay=0.5)])
    opt.step(0.1)
    np.testing.assert_allclose(matrix.data, np.full((2, 2), 0.95), rtol=1e-6)
    np.testing.assert_array_equal(vector.data, np.ones(2))
    np.testing.assert_array_equal(frozen.data, np.ones(2))


def test_adamw_reports_pre_clip_norm_and_clips():
    p = Tensor(np.zeros(4), requires_grad=True)
    p.grad = np.full(4, 3.0, dtype=np.float32)
    opt = AdamW([ParamGroup([("p", p)])], grad_clip=1.0)
    assert opt.step(0.01) == pytest.approx(6.0)
    # first Adam step moves each coordinate by ~lr regardless of scale
    np.testing.assert_allclose(p.data, np.full(4, -0.01), rtol=1e-4)


def test_soft_cpt_starts_fully_open(tiny_config):
    model = Transformer(tiny_config, GateConfig(window=4, init_bias=5.0), Rng(0))
    cfg = TrainConfig(total_steps=3, warmup_steps=1, mode=TrainMode.SOFT_CPT)
    checkpoint, log = train(model, random_source(), cfg, GateConfig(window=4, init_bias=5.0), Rng(1))
    assert len(log) == 3
    assert log[0].rho == 1.0
    assert log[0].mean_u == pytest.approx(1.0 / (1.0 + np.exp(-5.0)), rel=1e-5)
    assert checkpoint.step == 3 and checkpoint.extra["mode"] == "soft-cpt"


def test_training_is_deterministic(tiny_config, tiny_gate):
    cfg = TrainConfig(total_steps=3, warmup_steps=1, mode=TrainMode.SOFT_CPT)
    digests = []
    for _ in range(2):
        model = Transformer(tiny_config, tiny_gate, Rng(0))
        checkpoint, _ = train(model, random_source(), cfg, tiny_gate, Rng(1))
        digests.append(checkpoint.digest())
    assert digests[0] == digests[1]


def test_frozen_llm_leaves_backbone_weights_unchanged(tiny_config, tiny_gate):
    model = Transformer(tiny_config, tiny_gate, Rng(0))
    before = Checkpoint.from_model(model)
    cfg = TrainConfig(total_steps=3, warmup_steps=1, mode=TrainMode.FROZEN_LLM)
    after, _ = train(model, random_source(), cfg, tiny_gate, Rng(1))
    assert after.digest(include_predictors=False) == before.digest(include_predictors=False)
    assert after.digest() != before.digest()


def test_tahg_freezes_predictors_for_phase_two(tiny_config, tiny_gate):
    model = Transformer(tiny_config, tiny_gate, Rng(0))
    cfg = TrainConfig(
        total_steps=6, warmup_steps=0, decay_start_step=2, phase2_start_fraction=0.5, anneal_steps=1, mode=TrainMode.TAHG
    )
    _, log = train(model, random_source(), cfg, tiny_gate, Rng(1))
    assert [r.phase for r in log] == [Phase.SOFT] * 4 + [Phase.ANNEALED, Phase.HARD]
    assert all(block.predictor.frozen for block in model.blocks)
    assert all(not t.requires_grad for _, t in model.predictor_parameters())


def test_dense_mode_trains_global_attention(tiny_config, tiny_gate):
    model = Transformer(tiny_config, tiny_gate, Rng(0))
    checkpoint, log = train(model, random_source(), TrainConfig(total_steps=2, warmup_steps=1, mode=TrainMode.DENSE), tiny_gate, Rng(1))
    assert all(kind is AttentionKind.GLOBAL for kind in checkpoint.model_config.attention)
    assert log[0].rho is None


def test_bernoulli_mode_samples_gates_every_step(tiny_config):
    gate = GateConfig(window=4, init_bias=2.0, p_min=0.05)
    model = Transformer(tiny_config, gate, Rng(0))
    cfg = TrainConfig(total_steps=2, warmup_steps=1, mode=TrainMode.BERNOULLI_STE)
    _, log = train(model, random_source(), cfg, gate, Rng(1))
    assert all(r.phase is Phase.BERNOULLI for r in log)
    assert all(np.isfinite(r.loss) for r in log)


def test_non_finite_loss_raises_with_record(tiny_config, tiny_gate):
    model = Transformer(tiny_config, tiny_gate, Rng(0))
    model.embed.data[:] = np.nan
    with pytest.raises(TrainingDivergedError) as info:
        train(model, random_source(), TrainConfig(total_steps=2, warmup_steps=1), tiny_gate, Rng(1))
    assert info.value.record.step == 0


def test_evaluate_nll_matches_uniform_model(tiny_config, tiny_gate):
    model = Transformer(tiny_config, tiny_gate, Rng(0))
    model.embed.data[:] = 0.0
    tokens = Rng(3).integers(32, (2, 8))
    nll, _ = evaluate_nll(model, tokens, np.ones_like(tokens, dtype=bool))
    assert nll == pytest.approx(np.log(32), rel=1e-5)


def test_train_log_is_append_only_and_round_trips(tmp_path):
    log = TrainLog()
    log.append(TrainRecord(step=0, lr=0.1, loss=2.0, aux=0.0, phase=Phase.SOFT, alpha=0.0))
    with pytest.raises(ValueError):
        log.append(TrainRecord(step=0, lr=0.1, loss=2.0, aux=0.0, phase=Phase.SOFT, alpha=0.0))
    loaded = TrainLog.load(log.save(tmp_path / "log.jsonl"))
    assert loaded[0] == log[0]
    assert list(loaded.to_frame().columns)[:3] == ["step", "lr", "loss"]

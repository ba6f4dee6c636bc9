"""Longer end-to-end runs; excluded by default, select with `pytest -m slow`."""

import numpy as np
import pytest

from app.services.analysis import sweep_tau
from app.services.baselines import EvictionPolicy, PolicyKind, chunked_prefill_eval
from app.services.gating import GateConfig
from app.services.kvcache import CacheConfig, DecodeState, decode_step, memory_report
from app.services.model import AttentionKind, ModelConfig, Transformer
from app.services.tasks import PalindromeSpec, TaskConfig, chance_nll, eval_set, make_source
from app.services.tensor_core import Rng
from app.services.training import Phase, TrainConfig, TrainMode, evaluate_nll, hard_gate_config, train

pytestmark = pytest.mark.slow

TASK = TaskConfig(palindrome=PalindromeSpec(n_numbers=3, instruction_len=8))


def _model(attention: AttentionKind, gate: GateConfig) -> Transformer:
    config = ModelConfig(
        n_layers=2, d_model=32, n_q_heads=4, n_kv_heads=2, d_head=8, d_ffn=64,
        vocab_size=128, max_seq_len=64, attention=[attention],
    )
    return Transformer(config, gate, Rng(0))


def test_dense_training_learns_the_separator_layout():
    gate = GateConfig(window=4)
    cfg = TrainConfig(total_steps=150, warmup_steps=10, peak_lr=0.01, batch_size=16, mode=TrainMode.DENSE, log_every=50)
    _, log = train(_model(AttentionKind.GLOBAL, gate), make_source(TASK, 16, 128), cfg, gate, Rng(1))
    losses = np.array([r.loss for r in log])
    assert losses[-10:].mean() < losses[:10].mean()
    assert losses[-10:].mean() < np.log(128)
    assert np.isfinite(losses).all()


def _soft_run(aux_weight: float, seed: int = 2):
    gate = GateConfig(window=4, tau=0.5, init_bias=3.0, aux_weight=aux_weight)
    cfg = TrainConfig(
        total_steps=400, warmup_steps=20, peak_lr=0.005, batch_size=16, mode=TrainMode.TAHG, anneal_steps=20, log_every=100
    )
    _, log = train(_model(AttentionKind.SELF_PRUNED, gate), make_source(TASK, 16, 128), cfg, gate, Rng(seed))
    return [r for r in log if r.phase is Phase.SOFT], log


def test_utilities_fall_without_a_density_loss():
    soft, log = _soft_run(aux_weight=0.0)
    assert len(soft) > 200
    assert soft[0].mean_u - soft[-1].mean_u >= 0.05
    assert log[-1].phase is Phase.HARD


def test_density_loss_holds_utilities_up():
    free, _ = _soft_run(aux_weight=0.0)
    held, _ = _soft_run(aux_weight=0.1)
    assert held[0].mean_u == pytest.approx(free[0].mean_u)
    assert held[-1].mean_u >= free[-1].mean_u


LONG_GAP = PalindromeSpec(n_numbers=8, instruction_len=50)


def _palindrome_nll(attention: AttentionKind, mode: TrainMode, seed: int) -> float:
    gate = GateConfig(window=32, tau=0.5, init_bias=5.0)
    config = ModelConfig(
        n_layers=4, d_model=128, n_q_heads=4, n_kv_heads=2, d_head=32, d_ffn=512,
        vocab_size=128, max_seq_len=96, attention=[attention],
    )
    task = TaskConfig(palindrome=LONG_GAP, eval_size=64)
    model = Transformer(config, gate, Rng(seed))
    cfg = TrainConfig(total_steps=3000, warmup_steps=100, peak_lr=0.003, batch_size=32, mode=mode, anneal_steps=150, log_every=500)
    train(model, make_source(task, 32, 128), cfg, gate, Rng(100 + seed))
    tokens, mask = eval_set(task, 128)
    nll, _ = evaluate_nll(model, tokens, mask, hard_gate_config(gate))
    return nll


@pytest.mark.parametrize("seed", range(3))
def test_pruned_cache_reverses_across_the_gap_and_a_window_cannot(seed):
    assert chance_nll(LONG_GAP) * 0.7 == pytest.approx(1.72, abs=0.01)
    assert _palindrome_nll(AttentionKind.SELF_PRUNED, TrainMode.FROM_SCRATCH, seed) < 0.3
    assert _palindrome_nll(AttentionKind.SLIDING_WINDOW, TrainMode.DENSE, seed) > 0.7 * chance_nll(LONG_GAP)


SHORT_GAP = TaskConfig(palindrome=PalindromeSpec(n_numbers=4, instruction_len=24), eval_size=32)


def _output_nll(nll: np.ndarray, mask: np.ndarray) -> float:
    """Mean of per-position NLLs (position i predicts token i + 1) over supervised targets."""
    return float(nll[mask[1:]].mean())


@pytest.mark.parametrize("seed", range(3))
def test_learned_retention_beats_post_hoc_eviction_at_matched_density(seed):
    gate = GateConfig(window=8, tau=0.5, init_bias=5.0)
    config = ModelConfig(
        n_layers=2, d_model=64, n_q_heads=4, n_kv_heads=2, d_head=16, d_ffn=128,
        vocab_size=128, max_seq_len=64, attention=[AttentionKind.SELF_PRUNED],
    )
    dense = Transformer(config, gate, Rng(seed))
    dense_cfg = TrainConfig(total_steps=800, warmup_steps=40, peak_lr=0.003, batch_size=32, mode=TrainMode.DENSE, log_every=200)
    checkpoint, _ = train(dense, make_source(SHORT_GAP, 32, 128), dense_cfg, gate, Rng(10 + seed))

    pruned = checkpoint.to_model()
    pruned.set_attention([AttentionKind.SELF_PRUNED])
    pruned.reset_predictors(gate.init_bias, Rng(20 + seed))
    tahg_cfg = TrainConfig(total_steps=800, warmup_steps=40, peak_lr=0.003, batch_size=32, mode=TrainMode.TAHG, anneal_steps=60, log_every=200)
    train(pruned, make_source(SHORT_GAP, 32, 128), tahg_cfg, gate, Rng(30 + seed))

    tokens, mask = eval_set(SHORT_GAP, 128)
    dense_nll, _ = evaluate_nll(dense, tokens, mask)
    sweep = sweep_tau(pruned, tokens, mask, [i / 20 for i in range(1, 20)], gate)
    matched = sweep.iloc[int(np.argmin(np.abs(sweep["rho"].to_numpy() - 0.2)))]
    pruned_delta = matched["nll"] - dense_nll

    rho = float(matched["rho"])
    policies = {
        "streaming+random": EvictionPolicy(kind=PolicyKind.RANDOM, n_sinks=1, keep_fraction=rho, seed=seed, window=8, chunk_size=8),
        "h2o": EvictionPolicy(kind=PolicyKind.H2O, n_sinks=0, budget_fraction=rho, window=8, chunk_size=8),
        "random": EvictionPolicy(kind=PolicyKind.RANDOM, n_sinks=0, keep_fraction=rho, seed=seed, window=8, chunk_size=8),
    }
    for name, policy in policies.items():
        deltas = []
        for row, row_mask in zip(tokens, mask):
            kept = chunked_prefill_eval(dense, row, policy).nll
            full = chunked_prefill_eval(dense, row, EvictionPolicy(window=8, chunk_size=8)).nll
            deltas.append(_output_nll(kept, row_mask) - _output_nll(full, row_mask))
        assert pruned_delta <= float(np.mean(deltas)), name


def test_long_decode_keeps_pages_conserved():
    config = ModelConfig(
        n_layers=2, d_model=16, n_q_heads=4, n_kv_heads=2, d_head=4, d_ffn=32,
        vocab_size=32, max_seq_len=10_000, attention=[AttentionKind.SELF_PRUNED],
    )
    model = Transformer(config, GateConfig(window=16, init_bias=0.0), Rng(5))
    state = DecodeState(model, CacheConfig(page_size=16, initial_pages=4, index_capacity=4), tau=0.0)
    tokens = Rng(6).integers(32, (10_000,))

    for t, token in enumerate(tokens):
        decode_step(state, int(token))
        if t % 500 == 0 or t == tokens.size - 1:
            pool = state.cache.pool
            streams = list(state.cache.streams())
            used = sum(s.used_pages for s in streams)
            assert pool.n_allocated + pool.n_free == pool.capacity
            assert sum(owner is not None for owner in pool.owners) == pool.n_allocated == used
            for s in streams:
                assert s.used_pages == -(-s.retained_count // 16)

    report = memory_report(state)
    assert report.density == 1.0
    assert report.tokens == 10_000 and report.retained == report.evicted == 4 * (10_000 - 16)
    assert all(s.headroom_grows <= 20 for s in state.cache.streams())
    assert state.cache.pool.grow_count <= 20
    assert state.trace == []

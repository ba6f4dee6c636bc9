import math

import numpy as np
import pytest

from app.common.errors import CapacityError, InputError
from app.services.gating import GateConfig
from app.services.kvcache import (
    CacheConfig,
    DecodeState,
    GateTraceEntry,
    HeadCache,
    PagedKVCache,
    PagePool,
    decode_sequence,
    decode_step,
    export_trace,
    load_trace,
    memory_report,
    replay_trace,
    trace_to_z,
)
from app.services.model import AttentionKind, Transformer
from app.services.tensor_core import Rng, no_grad
from app.services.training import hard_gate_config


def _row(value: float, d: int = 2) -> np.ndarray:
    return np.full(d, value, dtype=np.float32)


def test_page_pool_hands_out_lowest_pages_and_recycles():
    pool = PagePool(page_size=2, d_head=2, n_pages=3, allow_growth=False)
    assert [pool.allocate((0, 0)) for _ in range(2)] == [0, 1]
    pool.release(0)
    assert pool.allocate((0, 1)) == 0
    assert pool.allocate((0, 1)) == 2
    assert pool.n_allocated + pool.n_free == pool.capacity
    with pytest.raises(CapacityError):
        pool.allocate((0, 0))


def test_page_pool_growth_doubles_capacity():
    pool = PagePool(page_size=2, d_head=2, n_pages=2)
    for _ in range(3):
        pool.allocate((0, 0))
    assert pool.capacity == 4 and pool.grow_count == 1
    pool.reserve(5)
    assert pool.capacity == 8


def test_head_cache_moves_only_open_gates_into_long_term_pages():
    pool = PagePool(page_size=2, d_head=2, n_pages=4)
    head = HeadCache(pool, (0, 0), window=2, index_capacity=1)
    for t, z in enumerate([True, False, True, True, False]):
        head.append(t, _row(t), _row(-t), z)
    # positions 0..2 left the window; 0 and 2 were open
    _, _, positions = head.longterm_entries()
    assert positions.tolist() == [0, 2]
    keys, values, window_positions = head.window_entries()
    assert window_positions.tolist() == [3, 4]
    np.testing.assert_array_equal(keys[:, 0], [3.0, 4.0])
    _, _, visible = head.visible()
    assert visible.tolist() == [0, 2, 3, 4]
    assert head.evicted_count == 3 and head.retained_count == 2


def test_head_cache_page_index_grows_with_headroom():
    pool = PagePool(page_size=1, d_head=2, n_pages=8)
    head = HeadCache(pool, (0, 0), window=1, index_capacity=1)
    for t in range(6):
        head.append(t, _row(t), _row(t), True)
    assert head.used_pages == 5
    assert len(head.page_indices) == 8
    assert head.headroom_grows == 3
    keys, _, _ = head.longterm_entries()
    np.testing.assert_array_equal(keys[:, 0], [0, 1, 2, 3, 4])


def test_paged_cache_rechecks_budget_once_per_page():
    cache = PagedKVCache(n_layers=1, n_kv_heads=2, d_head=2, window=2, config=CacheConfig(page_size=4, initial_pages=1))
    for _ in range(9):
        cache.begin_step()
        for head in range(2):
            cache.append(0, head, _row(1), _row(1), True)
        cache.end_step()
    assert cache.budget_checks == 3
    assert cache.pool.capacity >= 2


def test_growth_disabled_surfaces_capacity_error():
    cache = PagedKVCache(1, 2, 2, window=1, config=CacheConfig(page_size=1, initial_pages=1, allow_growth=False))
    with pytest.raises(CapacityError):
        for _ in range(6):
            cache.begin_step()
            for head in range(2):
                cache.append(0, head, _row(1), _row(1), True)
            cache.end_step()


@pytest.mark.parametrize("tau", [0.0, 0.5, 1.0])
def test_decoding_matches_the_hard_gated_full_forward(tiny_model, tau):
    tokens = Rng(8).integers(32, (20,))
    state = DecodeState(tiny_model, CacheConfig(page_size=2, initial_pages=1), tau=tau)
    decoded = decode_sequence(state, tokens)
    with no_grad():
        full, _ = tiny_model.forward(tokens[None, :], hard_gate_config(tiny_model.gate, tau))
    np.testing.assert_allclose(decoded, full.data[0], atol=1e-4, rtol=1e-4)


def test_decode_respects_sinks_and_hybrid_heads(tiny_config):
    config = tiny_config.with_attention(
        AttentionKind.SELF_PRUNED, {"0:0": AttentionKind.GLOBAL, "1:1": AttentionKind.SLIDING_WINDOW}
    )
    gate = GateConfig(window=3, tau=1.0, init_bias=0.0, n_sinks=2)
    model = Transformer(config, gate, Rng(2))
    tokens = Rng(4).integers(32, (12,))
    state = DecodeState(model, record_trace=True)
    decoded = decode_sequence(state, tokens)
    with no_grad():
        full, _ = model.forward(tokens[None, :], hard_gate_config(gate))
    np.testing.assert_allclose(decoded, full.data[0], atol=1e-4, rtol=1e-4)

    z = trace_to_z(state.trace)
    assert z[0, 0].all()
    assert not z[1, 1].any()
    np.testing.assert_array_equal(z[0, 1], np.arange(12) < 2)
    assert state.heads[0][0].retained_count == 12 - 3
    assert state.heads[0][1].retained_positions == [0, 1]


def test_memory_report_density_follows_tau(tiny_config):
    model = Transformer(tiny_config, GateConfig(window=4, init_bias=5.0), Rng(0))
    tokens = Rng(1).integers(32, (16,))
    open_state = DecodeState(model, tau=0.0)
    decode_sequence(open_state, tokens)
    closed_state = DecodeState(model, tau=1.0)
    decode_sequence(closed_state, tokens)

    opened = memory_report(open_state)
    closed = memory_report(closed_state)
    assert opened.density == 1.0 and opened.retained == opened.evicted == 4 * 12
    assert closed.density == 0.0 and closed.bytes_longterm == 0
    assert closed.bytes_window == opened.bytes_window == 4 * 4 * 4 * 2 * 4
    assert opened.tokens == 16 and opened.n_streams == 4


def test_gate_trace_replay_reproduces_the_memory_report(tmp_path, tiny_model):
    config = CacheConfig(page_size=2, initial_pages=2)
    state = DecodeState(tiny_model, config, tau=0.5, record_trace=True)
    decode_sequence(state, Rng(3).integers(32, (14,)))
    entries = load_trace(export_trace(state.trace, tmp_path / "trace.jsonl"))
    assert [(e.layer, e.head, e.position, e.z) for e in entries] == [(e.layer, e.head, e.position, e.z) for e in state.trace]
    np.testing.assert_allclose([e.u for e in entries], [e.u for e in state.trace], rtol=1e-7)

    _, replayed = replay_trace(entries, window=tiny_model.gate.window, d_head=tiny_model.config.d_head, config=config, gated=state.gated_streams())
    assert replayed == memory_report(state)


def test_malformed_trace_line_is_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"layer": 0}\n', encoding="utf-8")
    with pytest.raises(InputError):
        load_trace(path)


def test_decode_input_validation(tiny_model):
    state = DecodeState(tiny_model)
    with pytest.raises(InputError):
        decode_step(state, 99)
    for token in range(tiny_model.config.max_seq_len):
        decode_step(state, token % 32)
    with pytest.raises(InputError):
        decode_step(state, 0)


def test_decode_keeps_no_trace_unless_asked(tiny_model):
    state = DecodeState(tiny_model)
    decode_sequence(state, Rng(5).integers(32, (10,)))
    assert state.trace == []
    assert memory_report(state).tokens == 10


def _alternating_trace(length: int) -> list[GateTraceEntry]:
    return [GateTraceEntry(0, 0, t, None, t % 2 == 0) for t in range(length)]


def test_replay_of_an_alternating_trace():
    config = CacheConfig(page_size=16, initial_pages=1, index_capacity=1)
    cache, report = replay_trace(_alternating_trace(100), window=8, config=config)
    head = cache.heads[0][0]
    # positions 0..91 left the window; the even ones were open
    assert head.retained_positions == list(range(0, 92, 2))
    assert report.retained == 46 and report.evicted == 92
    assert report.density == pytest.approx(0.5)
    assert report.pages_used == 3 and head.used_slots_in_last_page == 46 - 32
    assert report.headroom_grows == 2 and len(head.page_indices) == 4
    assert report.bytes_longterm == 3 * 16 * 1 * 2 * 4
    assert report.bytes_window == 8 * 1 * 2 * 4
    # one reserve every 16 steps, growing at steps 16 and 48
    assert cache.budget_checks == 7
    assert cache.pool.capacity == 4 and cache.pool.grow_count == 2
    assert cache.pool.n_allocated == 3 and cache.pool.n_free == 1


def test_page_index_reallocations_grow_logarithmically():
    pool = PagePool(page_size=1, d_head=1, n_pages=4)
    head = HeadCache(pool, (0, 0), window=8, index_capacity=1)
    length = 2048
    for t in range(length):
        head.append(t, _row(t, 1), _row(t, 1), True)
    pages = length - 8
    assert head.used_pages == pages
    assert head.headroom_grows == math.ceil(math.log2(pages))
    assert head.headroom_grows <= math.log2(length) + 1
    assert sum(owner is not None for owner in pool.owners) == pool.n_allocated == pages

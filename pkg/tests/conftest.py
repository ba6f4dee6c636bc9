from pathlib import Path
from typing import Callable

import numpy as np
import pytest
import yaml

from app.common.logging.logging_config import configure_logging
from app.services.gating import GateConfig
from app.services.model import AttentionKind, ModelConfig, Transformer
from app.services.tensor_core import Rng, Tensor

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(autouse=True)
def _fresh_logging():
    """Rebind structlog to the live stderr so a prior test's closed capture stream is not reused."""
    configure_logging()


@pytest.fixture
def rng() -> Rng:
    return Rng(7)


@pytest.fixture
def tiny_config() -> ModelConfig:
    return ModelConfig(
        n_layers=2,
        d_model=16,
        n_q_heads=4,
        n_kv_heads=2,
        d_head=4,
        d_ffn=32,
        vocab_size=32,
        max_seq_len=64,
        attention=[AttentionKind.SELF_PRUNED],
        init_std=0.2,
    )


@pytest.fixture
def tiny_gate() -> GateConfig:
    return GateConfig(window=4, tau=0.5, init_bias=0.0)


@pytest.fixture
def tiny_model(tiny_config, tiny_gate) -> Transformer:
    model = Transformer(tiny_config, tiny_gate, Rng(3))
    # spread the utilities so hard gates open and close
    for block in model.blocks:
        block.predictor.params["w2"].data = Rng(11 + block.index).normal(block.predictor.params["w2"].shape, std=2.0)
    return model


def finite_difference(fn: Callable[[], float], tensor: Tensor, eps: float = 1e-3, n_points: int = 6) -> tuple[np.ndarray, np.ndarray]:
    """Central differences of `fn` at a few entries of `tensor`; returns (indices, estimates)."""
    flat = tensor.data.reshape(-1)
    indices = np.linspace(0, flat.size - 1, num=min(n_points, flat.size)).astype(int)
    estimates = []
    for i in indices:
        original = flat[i]
        flat[i] = original + eps
        up = fn()
        flat[i] = original - eps
        down = fn()
        flat[i] = original
        estimates.append((up - down) / (2 * eps))
    return indices, np.array(estimates)


def numeric_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-4) -> np.ndarray:
    """Central differences of a float64 reference `fn` at every entry of `x`."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, out = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        up = fn(x)
        flat[i] = original - eps
        down = fn(x)
        flat[i] = original
        out[i] = (up - down) / (2 * eps)
    return grad


def relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(actual, np.float64) - expected) / max(np.linalg.norm(expected), 1e-12))


@pytest.fixture
def write_config(tmp_path) -> Callable[..., Path]:
    """Write a small YAML run configuration, overriding sections as given."""

    def _write(**sections) -> Path:
        config = {
            "app": {"name": "spkv-test", "log_level": "error", "seed": 0},
            "model": {
                "n_layers": 2,
                "d_model": 16,
                "n_q_heads": 4,
                "n_kv_heads": 2,
                "d_head": 4,
                "d_ffn": 32,
                "vocab_size": 128,
                "max_seq_len": 64,
                "attention": ["self_pruned_kv"],
            },
            "gate": {"window": 4, "tau": 0.5, "init_bias": 5.0},
            "train": {"total_steps": 4, "warmup_steps": 1, "batch_size": 2, "log_every": 1},
            "cache": {"page_size": 4, "initial_pages": 2},
            "task": {"kind": "palindrome", "palindrome": {"n_numbers": 3, "instruction_len": 6}, "eval_size": 2},
            "baselines": {"window": 4, "chunk_size": 4, "n_sinks": 1},
        }
        for key, value in sections.items():
            config[key] = {**config.get(key, {}), **value}
        path = tmp_path / "config.yaml"
        path.write_text(yaml.safe_dump(config), encoding="utf-8")
        return path

    return _write

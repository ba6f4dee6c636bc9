import json
from pathlib import Path
from typing import Callable

import numpy as np

from app.common.errors import ConfigurationError, InputError
from app.services.tasks.models import TASK_VOCAB, TaskConfig, TaskKind
from app.services.tasks.palindrome import gen_palindrome_batch
from app.services.tasks.retrieval import gen_copy_batch, gen_needle_batch
from app.services.tensor_core import Rng

Batch = tuple[np.ndarray, np.ndarray]


def make_source(task: TaskConfig, batch: int, vocab_size: int) -> Callable[[Rng], Batch]:
    """Batch generator `rng -> (tokens, loss_mask)` for the configured task."""
    if vocab_size < TASK_VOCAB:
        raise ConfigurationError(f"synthetic tasks need vocab_size >= {TASK_VOCAB}, model has {vocab_size}")
    match task.kind:
        case TaskKind.PALINDROME:
            return lambda rng: gen_palindrome_batch(task.palindrome, batch, rng)
        case TaskKind.COPY:
            return lambda rng: gen_copy_batch(task.copy_task, batch, rng)
        case TaskKind.NEEDLE:
            return lambda rng: gen_needle_batch(task.needle, batch, rng)
    raise ConfigurationError(f"unknown task {task.kind!r}")


def eval_set(task: TaskConfig, vocab_size: int) -> Batch:
    """Held-out batch drawn from its own seed so it never overlaps the training stream."""
    return make_source(task, task.eval_size, vocab_size)(Rng(task.eval_seed))


def dump_examples(tokens: np.ndarray, loss_mask: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row, mask in zip(np.asarray(tokens), np.asarray(loss_mask)):
            fh.write(json.dumps({"tokens": row.tolist(), "loss_mask": mask.astype(int).tolist()}) + "\n")
    return path


def load_examples(path: str | Path) -> Batch:
    rows = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line.strip()]
    if not rows:
        raise InputError(f"{path}: no examples")
    lengths = {len(r["tokens"]) for r in rows}
    if len(lengths) != 1:
        raise InputError(f"{path}: examples must share one length, found {sorted(lengths)}")
    tokens = np.array([r["tokens"] for r in rows], dtype=np.int64)
    mask = np.array([r["loss_mask"] for r in rows], dtype=bool)
    return tokens, mask

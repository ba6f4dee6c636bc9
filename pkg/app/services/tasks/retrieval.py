"""Copy and needle-retrieval generators for checking where gates stay open."""

import numpy as np

from app.services.tasks.models import BOS, N_VALUES, NEEDLE, QUERY, SEP, CopySpec, NeedleSpec
from app.services.tensor_core import Rng


def gen_copy_batch(spec: CopySpec, batch: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """BOS x1..xn SEP x1..xn; the loss covers the second copy."""
    n = spec.n_numbers
    numbers = rng.integers(N_VALUES, (batch, n))
    tokens = np.concatenate(
        (np.full((batch, 1), BOS), numbers, np.full((batch, 1), SEP), numbers), axis=1
    ).astype(np.int64)
    mask = np.zeros_like(tokens, dtype=bool)
    mask[:, n + 2 :] = True
    return tokens, mask


def gen_needle_batch(spec: NeedleSpec, batch: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """
    BOS, a haystack of numbers with NEEDLE v in its first half, then QUERY v.

    Haystack numbers never equal v, so the answer is only recoverable from the needle.
    """
    length = spec.haystack_len
    values = rng.integers(N_VALUES, (batch,))
    hay = rng.integers(N_VALUES - 1, (batch, length))
    hay = hay + (hay >= values[:, None])
    slots = rng.integers(max(length // 2 - 1, 1), (batch,))
    rows = np.arange(batch)
    hay[rows, slots] = NEEDLE
    hay[rows, slots + 1] = values

    tokens = np.concatenate(
        (np.full((batch, 1), BOS), hay, np.full((batch, 1), QUERY), values[:, None]), axis=1
    ).astype(np.int64)
    mask = np.zeros_like(tokens, dtype=bool)
    mask[:, -1] = True
    return tokens, mask

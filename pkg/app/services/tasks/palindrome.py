import math
from dataclasses import dataclass

import numpy as np

from app.common.errors import InputError
from app.services.tasks.models import BOS, FILLER_BASE, N_FILLER, N_VALUES, SEP, PalindromeSpec
from app.services.tensor_core import Rng


@dataclass(frozen=True)
class PalindromeExample:
    numbers: list[int]
    reversed_numbers: list[int]


def _interleave(numbers: np.ndarray) -> np.ndarray:
    out = np.full(2 * len(numbers) - 1, SEP, dtype=np.int64)
    out[::2] = numbers
    return out


def instruction_tokens(spec: PalindromeSpec) -> np.ndarray:
    return FILLER_BASE + np.arange(spec.instruction_len, dtype=np.int64) % N_FILLER


def encode_palindrome(spec: PalindromeSpec, numbers) -> tuple[np.ndarray, np.ndarray]:
    numbers = np.asarray(numbers, dtype=np.int64)
    if numbers.shape != (spec.n_numbers,):
        raise InputError(f"expected {spec.n_numbers} numbers, got shape {numbers.shape}")
    if numbers.min() < 0 or numbers.max() >= N_VALUES:
        raise InputError(f"numbers must lie in [0, {N_VALUES})")
    tokens = np.concatenate(([BOS], _interleave(numbers), instruction_tokens(spec), _interleave(numbers[::-1])))
    mask = np.zeros(spec.length, dtype=bool)
    mask[spec.output_start :] = True
    return tokens, mask


def decode_palindrome(spec: PalindromeSpec, tokens) -> PalindromeExample:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape != (spec.length,) or tokens[0] != BOS:
        raise InputError("token stream does not follow the palindrome layout")
    span = 2 * spec.n_numbers - 1
    numbers = tokens[1 : 1 + span : 2]
    outputs = tokens[spec.output_start :: 2]
    return PalindromeExample(numbers.tolist(), outputs.tolist())


def gen_palindrome_batch(spec: PalindromeSpec, batch: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Fresh uniform numbers per example; tokens [batch, length] and the output-loss mask."""
    numbers = rng.integers(N_VALUES, (batch, spec.n_numbers))
    pairs = [encode_palindrome(spec, row) for row in numbers]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def chance_nll(spec: PalindromeSpec) -> float:
    """Output NLL of a model that guesses numbers uniformly but places separators perfectly."""
    n = spec.n_numbers
    return n * math.log(N_VALUES) / (2 * n - 1)

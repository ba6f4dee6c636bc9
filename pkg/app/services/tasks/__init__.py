"""
Tasks

Synthetic token tasks: palindrome reversal across an instruction gap, copy,
and needle retrieval.
"""

from .models import (
    BOS,
    FILLER_BASE,
    N_FILLER,
    N_VALUES,
    NEEDLE,
    QUERY,
    SEP,
    TASK_VOCAB,
    CopySpec,
    NeedleSpec,
    PalindromeSpec,
    TaskConfig,
    TaskKind,
)
from .palindrome import (
    PalindromeExample,
    chance_nll,
    decode_palindrome,
    encode_palindrome,
    gen_palindrome_batch,
    instruction_tokens,
)
from .retrieval import gen_copy_batch, gen_needle_batch
from .sources import dump_examples, eval_set, load_examples, make_source

__all__ = [
    "BOS",
    "SEP",
    "QUERY",
    "NEEDLE",
    "FILLER_BASE",
    "N_FILLER",
    "N_VALUES",
    "TASK_VOCAB",
    "PalindromeSpec",
    "CopySpec",
    "NeedleSpec",
    "TaskConfig",
    "TaskKind",
    "PalindromeExample",
    "gen_palindrome_batch",
    "encode_palindrome",
    "decode_palindrome",
    "instruction_tokens",
    "chance_nll",
    "gen_copy_batch",
    "gen_needle_batch",
    "make_source",
    "eval_set",
    "dump_examples",
    "load_examples",
]

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field

# token layout shared by every task: number tokens first, then specials
N_VALUES = 100
SEP = 100
BOS = 101
QUERY = 102
NEEDLE = 103
FILLER_BASE = 104
N_FILLER = 8
TASK_VOCAB = FILLER_BASE + N_FILLER


class PalindromeSpec(BaseModel):
    """
    Reversal of N two-digit numbers across a long instruction gap.

    Layout: BOS n1 SEP n2 ... SEP nN <instruction> nN SEP ... SEP n1, with the
    loss on the 2N - 1 output tokens.
    """

    model_config = ConfigDict(extra="forbid")

    n_numbers: int = Field(8, ge=1)
    instruction_len: int = Field(50, ge=0)

    @property
    def length(self) -> int:
        return 1 + 2 * (2 * self.n_numbers - 1) + self.instruction_len

    @property
    def output_start(self) -> int:
        return 1 + (2 * self.n_numbers - 1) + self.instruction_len


class CopySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_numbers: int = Field(16, ge=1)


class NeedleSpec(BaseModel):
    """BOS, a haystack of numbers hiding NEEDLE v in its first half, then QUERY v; loss on the final v."""

    model_config = ConfigDict(extra="forbid")

    haystack_len: int = Field(96, ge=4)

    @property
    def length(self) -> int:
        return 1 + self.haystack_len + 2


class TaskKind(str, Enum):
    PALINDROME = "palindrome"
    COPY = "copy"
    NEEDLE = "needle"


class TaskConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: TaskKind = TaskKind.PALINDROME
    palindrome: PalindromeSpec = Field(default_factory=PalindromeSpec)
    copy_task: CopySpec = Field(default_factory=CopySpec)
    needle: NeedleSpec = Field(default_factory=NeedleSpec)
    eval_size: int = Field(64, ge=1)
    eval_seed: int = 1234

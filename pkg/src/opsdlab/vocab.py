"""Token vocabulary shared by the policy, the task generator, and the analysis."""

from __future__ import annotations

from dataclasses import dataclass, field

# Digit tokens occupy ids 0-9 so that id == digit value.
PLUS = 10
MINUS = 11
TIMES = 12
SEP = 13
SOLVE = 14
ANS = 15
EOS = 16
MOD = 17
WAIT = 18
HMM = 19
MAYBE = 20
CHECK = 21
ACTUALLY = 22
# Teacher-only block. These ids never appear in student-side contexts and are
# masked out of student sampling.
RECALL = 23
CTX = 24
CTX_END = 25
PAD = 26

_NAMES = (
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
    "+", "-", "*", ";", "=", "ans", "eos", "mod",
    "wait", "hmm", "maybe", "check", "actually",
    "recall", "ctx", "/ctx", "pad",
)

MARKER_IDS = frozenset({WAIT, HMM, MAYBE, CHECK, ACTUALLY})
OP_IDS = (PLUS, MINUS, TIMES)


@dataclass(frozen=True)
class Vocabulary:
    """Dense token table with the marker and teacher-only subsets made queryable."""

    names: tuple[str, ...] = _NAMES
    marker_ids: frozenset[int] = MARKER_IDS
    privileged_lo: int = RECALL
    privileged_hi: int = PAD  # inclusive
    _lookup: dict[str, int] = field(default_factory=lambda: {n: i for i, n in enumerate(_NAMES)})

    @property
    def size(self) -> int:
        return len(self.names)

    def is_privileged(self, token_id: int) -> bool:
        return self.privileged_lo <= token_id <= self.privileged_hi

    def privileged_ids(self) -> tuple[int, ...]:
        return tuple(range(self.privileged_lo, self.privileged_hi + 1))

    def is_marker(self, token_id: int) -> bool:
        return token_id in self.marker_ids

    def id_of(self, name: str) -> int:
        return self._lookup[name]

    def render(self, ids) -> str:
        """Human-readable rendering of a token id sequence (for logs and dumps)."""
        return " ".join(self.names[i] for i in ids)


VOCAB = Vocabulary()


def encode_value(value: int) -> tuple[int, int]:
    """Encode an integer in [0, 99] as a fixed-width pair of digit tokens."""
    if not 0 <= value <= 99:
        raise ValueError(f"value {value} outside [0, 99]")
    return value // 10, value % 10


def decode_value(hi: int, lo: int) -> int:
    if not (0 <= hi <= 9 and 0 <= lo <= 9):
        raise ValueError(f"not a digit pair: ({hi}, {lo})")
    return 10 * hi + lo

"""Sequence contexts, sampled rollouts, and teacher-input assembly.

The student only ever conditions on bare prompts plus its own generated
tokens. The teacher conditions on the same tokens wrapped with a privileged
payload, optionally re-injected mid-trace on a fixed period; insertion
shifts teacher positions but the scored token sequence is exactly the
student's generation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import vocab as V
from .errors import DomainError
from .tasks import Outcome, wrap_payload
from .vocab import VOCAB


@dataclass(frozen=True)
class SequenceContext:
    """Token id sequence with a student/teacher role tag.

    Student contexts must never contain ids from the teacher-only range;
    this is checked on construction so the invariant is structural.
    """

    ids: tuple[int, ...]
    teacher: bool = False

    def __post_init__(self):
        if not all(0 <= t < VOCAB.size for t in self.ids):
            raise DomainError("token id outside vocabulary")
        if not self.teacher and any(VOCAB.is_privileged(t) for t in self.ids):
            raise DomainError("student context contains teacher-only tokens")

    def __len__(self) -> int:
        return len(self.ids)

    def extended(self, *tokens: int) -> "SequenceContext":
        return SequenceContext(self.ids + tuple(tokens), teacher=self.teacher)


@dataclass(frozen=True)
class ReinjectionSchedule:
    """Period (in generated tokens) for re-inserting the privileged payload
    into the teacher input; period None disables reinjection."""

    period: int | None = None
    wrapper_tokens: tuple[int, ...] = (V.ACTUALLY, V.RECALL)

    def __post_init__(self):
        if self.period is not None and self.period < 1:
            raise DomainError(f"reinjection period must be positive, got {self.period}")

    @property
    def enabled(self) -> bool:
        return self.period is not None


DISABLED_REINJECTION = ReinjectionSchedule(period=None)


@dataclass
class Rollout:
    """One sampled trajectory plus lazily-filled teacher-side quantities.

    student_log_probs are the log-probabilities of each sampled token under
    the distribution it was actually drawn from (sampling temperature,
    teacher-only ids masked). teacher_log_probs and token_kls are computed
    at scoring time from temperature-1.0 distributions.
    """

    prompt: tuple[int, ...]
    tokens: tuple[int, ...]
    student_log_probs: np.ndarray
    truncated: bool
    outcome: Outcome | None = None
    teacher_log_probs: np.ndarray | None = field(default=None, repr=False)
    teacher_log_rows: np.ndarray | None = field(default=None, repr=False)
    token_kls: np.ndarray | None = field(default=None, repr=False)

    @property
    def length(self) -> int:
        return len(self.tokens)

    def student_ids(self) -> np.ndarray:
        return np.asarray(self.prompt + self.tokens, dtype=np.int64)


def teacher_base_ids(payload_tokens, prompt_tokens) -> tuple[int, ...]:
    """Teacher-side conditioning prefix: wrapped padded payload, then the
    prompt."""
    return (V.CTX,) + wrap_payload(payload_tokens) + (V.CTX_END,) + tuple(prompt_tokens)


def build_teacher_ids(
    payload_tokens,
    prompt_tokens,
    gen_tokens,
    schedule: ReinjectionSchedule = DISABLED_REINJECTION,
) -> tuple[np.ndarray, np.ndarray]:
    """Teacher input ids for scoring a student generation.

    Returns (ids, scored_positions) where scored_positions[t] is the index
    in ids whose next-token distribution scores gen_tokens[t].
    """
    ids = list(teacher_base_ids(payload_tokens, prompt_tokens))
    insert = schedule.wrapper_tokens + wrap_payload(payload_tokens) + (V.CTX_END,)
    scored = []
    for t, tok in enumerate(gen_tokens):
        if schedule.enabled and t > 0 and t % schedule.period == 0:
            ids.extend(insert)
        scored.append(len(ids) - 1)
        ids.append(tok)
    return np.asarray(ids, dtype=np.int64), np.asarray(scored, dtype=np.int64)

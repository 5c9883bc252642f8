"""Verifiable multi-step arithmetic tasks.

A problem is a start value followed by 2-6 chained operations over small
integers, evaluated mod 100, so every intermediate value and the answer fit
in a fixed-width pair of digit tokens. Traces list the intermediate values
then the answer behind an answer-start marker; a redundancy knob interleaves
epistemic markers and value re-statements to create the compressible
substrate that distillation can strip.

Each trace step restates its operation and operand ahead of the resulting
value, and values (including the prompt's start value) are written low
digit first, so every digit of a step is a small local function of nearby
tokens (the carry is determined by digits already emitted). The answer span
behind the marker is standard decimal, high digit first, which is what the
verifier's canonicalization reads.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from . import vocab as V
from .errors import DomainError
from .seeding import spawn_rng
from .vocab import VOCAB, encode_value


def value_block(value: int) -> tuple[int, int]:
    """Low-first digit pair used for start and intermediate values."""
    if not 0 <= value <= 99:
        raise DomainError(f"value {value} outside [0, 99]")
    return value % 10, value // 10

OP_FUNCS = {
    V.PLUS: lambda a, b: a + b,
    V.MINUS: lambda a, b: a - b,
    V.TIMES: lambda a, b: a * b,
}

# Mostly additive chains; multiplication stays rare and small so a tiny
# policy can reach a mid-band accuracy rather than failing everything.
_OP_CHOICES = (V.PLUS, V.MINUS, V.TIMES)
_OP_WEIGHTS = (0.45, 0.40, 0.15)

DEFAULT_DIFFICULTY_WEIGHTS = {2: 0.35, 3: 0.30, 4: 0.20, 5: 0.10, 6: 0.05}

MAX_FILLER_UNITS_PER_SLOT = 3


class Outcome(Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    TRUNCATED = "truncated"


class ContextVariant(Enum):
    ANSWER_ONLY = "answer_only"
    WORKED_SOLUTION = "worked_solution"
    CONCISENESS_DIRECTIVE = "conciseness_directive"
    STRUCTURED_HINT = "structured_hint"


CONCISENESS_PAYLOAD = (V.CHECK, V.SEP)

# Teacher payloads occupy a fixed-width slot so every hinted layout puts the
# prompt at the same position regardless of variant and difficulty.
PAYLOAD_SLOT = 34


def wrap_payload(payload_tokens) -> tuple[int, ...]:
    """Payload padded to the fixed slot width (teacher-side only)."""
    payload = tuple(payload_tokens)
    if len(payload) > PAYLOAD_SLOT:
        raise DomainError(f"payload length {len(payload)} exceeds slot {PAYLOAD_SLOT}")
    return payload + (V.PAD,) * (PAYLOAD_SLOT - len(payload))


@dataclass(frozen=True)
class Problem:
    prompt_tokens: tuple[int, ...]
    difficulty: int
    seed: int
    start: int
    ops: tuple[tuple[int, int], ...]  # (operator token id, operand)


@dataclass(frozen=True)
class GroundTruth:
    answer: int
    minimal_trace: tuple[int, ...]
    intermediates: tuple[int, ...]


@dataclass(frozen=True)
class PrivilegedContext:
    variant: ContextVariant
    payload_tokens: tuple[int, ...]


def evaluate_chain(start: int, ops) -> tuple[int, ...]:
    """Exact integer evaluation of the operation chain, mod 100 per step."""
    value = start % 100
    intermediates = []
    for op_id, operand in ops:
        value = OP_FUNCS[op_id](value, operand) % 100
        intermediates.append(value)
    return tuple(intermediates)


def generate_problem(seed: int, difficulty: int) -> tuple[Problem, GroundTruth]:
    if not 2 <= difficulty <= 6:
        raise DomainError(f"difficulty must be in [2, 6], got {difficulty}")
    rng = spawn_rng(seed, "problem", difficulty)
    start = int(rng.integers(0, 100))
    ops = []
    for _ in range(difficulty):
        op = int(rng.choice(_OP_CHOICES, p=_OP_WEIGHTS))
        operand = int(rng.integers(2, 4)) if op == V.TIMES else int(rng.integers(1, 10))
        ops.append((op, operand))
    ops = tuple(ops)
    intermediates = evaluate_chain(start, ops)
    answer = intermediates[-1]

    prompt = list(value_block(start))
    for op_id, operand in ops:
        prompt.extend((op_id, operand))  # operands are single digits, id == value
    prompt.append(V.SOLVE)

    trace = []
    for (op_id, operand), value in zip(ops, intermediates):
        trace.extend((op_id, operand))
        trace.extend(value_block(value))
        trace.append(V.SEP)
    trace.append(V.ANS)
    trace.extend(encode_value(answer))

    problem = Problem(
        prompt_tokens=tuple(prompt),
        difficulty=difficulty,
        seed=seed,
        start=start,
        ops=ops,
    )
    return problem, GroundTruth(
        answer=answer, minimal_trace=tuple(trace), intermediates=intermediates
    )


def redundant_trace(gt: GroundTruth, redundancy_level: float, seed: int) -> tuple[int, ...]:
    """Minimal trace interleaved with marker + value re-statements.

    After each intermediate value block, up to MAX_FILLER_UNITS_PER_SLOT
    filler units of the form (marker, value digits) are inserted, each with
    probability redundancy_level. The answer span is never touched.
    """
    if not 0.0 <= redundancy_level <= 1.0:
        raise DomainError(f"redundancy_level must be in [0, 1], got {redundancy_level}")
    rng = spawn_rng(seed, "filler")
    markers = sorted(VOCAB.marker_ids)
    out: list[int] = []
    steps = len(gt.intermediates)
    # minimal_trace blocks are (op, operand, lo, hi, SEP); filler goes after SEP
    for k in range(steps):
        out.extend(gt.minimal_trace[5 * k : 5 * (k + 1)])
        value = gt.intermediates[k]
        for _ in range(MAX_FILLER_UNITS_PER_SLOT):
            if rng.random() < redundancy_level:
                out.append(int(rng.choice(markers)))
                out.extend(value_block(value))
    out.extend(gt.minimal_trace[5 * steps :])
    return tuple(out)


def canonicalize_answer(span) -> int | None:
    """Parse an answer token span to its canonical integer value.

    Accepts an optional leading minus, one or more digits (leading zeros
    stripped by integer parsing), and an optional trailing mod marker that
    reduces the value mod 100. Anything else makes the span unparseable.
    """
    toks = list(span)
    if toks and toks[-1] == V.EOS:
        toks = toks[:-1]
    negative = False
    if toks and toks[0] == V.MINUS:
        negative = True
        toks = toks[1:]
    take_mod = False
    if toks and toks[-1] == V.MOD:
        take_mod = True
        toks = toks[:-1]
    if not toks or any(not 0 <= t <= 9 for t in toks):
        return None
    value = 0
    for t in toks:
        value = 10 * value + t
    if negative:
        value = -value
    if take_mod:
        value %= 100
    return value


def canonical_answer_tokens(value: int) -> tuple[int, ...]:
    """Minimal token rendering of a canonical answer value."""
    digits = tuple(int(c) for c in str(abs(value)))
    return ((V.MINUS,) if value < 0 else ()) + digits


def answer_span(tokens) -> tuple[int, ...] | None:
    """Token span after the first answer-start marker, up to EOS or the end."""
    toks = list(tokens)
    if V.ANS not in toks:
        return None
    start = toks.index(V.ANS) + 1
    span = []
    for t in toks[start:]:
        if t == V.EOS:
            break
        span.append(t)
    return tuple(span)


def verify(rollout, gt: GroundTruth) -> Outcome:
    """Rule-based verification. Truncation outranks any parseable answer."""
    if rollout.truncated:
        return Outcome.TRUNCATED
    span = answer_span(rollout.tokens)
    if span is None:
        return Outcome.INCORRECT
    value = canonicalize_answer(span)
    if value is None:
        return Outcome.INCORRECT
    return Outcome.CORRECT if value == gt.answer else Outcome.INCORRECT


def build_privileged_context(
    problem: Problem, gt: GroundTruth, variant: ContextVariant
) -> PrivilegedContext:
    if variant is ContextVariant.ANSWER_ONLY:
        payload = encode_value(gt.answer)
    elif variant is ContextVariant.WORKED_SOLUTION:
        payload = gt.minimal_trace
    elif variant is ContextVariant.CONCISENESS_DIRECTIVE:
        payload = CONCISENESS_PAYLOAD
    elif variant is ContextVariant.STRUCTURED_HINT:
        payload = encode_value(gt.answer) + (V.SEP, problem.difficulty)
    else:
        raise DomainError(f"unknown context variant: {variant}")
    return PrivilegedContext(variant=variant, payload_tokens=tuple(payload))


def _pick_difficulty(rng, weights) -> int:
    levels = sorted(weights)
    probs = [weights[k] for k in levels]
    total = sum(probs)
    return int(rng.choice(levels, p=[p / total for p in probs]))


def build_pretraining_corpus(
    n: int,
    redundancy_level: float,
    answer_noise_rate: float,
    seed: int,
    context_fraction: float = 0.5,
    context_redundancy: float | None = None,
    difficulty_weights: dict[int, float] | None = None,
) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """(prompt, trace) pairs for supervised pretraining.

    A context_fraction of examples carries a privileged-context prefix on the
    prompt (variant drawn uniformly); this is what makes the frozen
    self-teacher able to exploit its context later. Hinted traces draw their
    redundancy uniformly from [0, redundancy_level/2] (or use the fixed
    context_redundancy when given) while bare traces draw from
    [redundancy_level/2, redundancy_level]: a context signals markedly lower
    redundancy, yet both families cover short and long traces so neither the
    teacher nor the student is ever scored on trace shapes it has not seen.
    A fraction answer_noise_rate of traces has the final answer corrupted.
    """
    for name, rate in (("redundancy_level", redundancy_level),
                       ("answer_noise_rate", answer_noise_rate),
                       ("context_fraction", context_fraction)):
        if not 0.0 <= rate <= 1.0:
            raise DomainError(f"{name} must be in [0, 1], got {rate}")
    if context_redundancy is not None and not 0.0 <= context_redundancy <= 1.0:
        raise DomainError(f"context_redundancy must be in [0, 1], got {context_redundancy}")
    weights = difficulty_weights or DEFAULT_DIFFICULTY_WEIGHTS
    rng = spawn_rng(seed, "corpus")
    variants = list(ContextVariant)
    corpus = []
    for i in range(n):
        difficulty = _pick_difficulty(rng, weights)
        problem, gt = generate_problem(int(rng.integers(0, 2**31)), difficulty)
        hinted = rng.random() < context_fraction
        if hinted:
            level = (context_redundancy if context_redundancy is not None
                     else float(rng.random()) * redundancy_level / 2.0)
        else:
            level = redundancy_level * (1.0 + float(rng.random())) / 2.0
        trace = list(redundant_trace(gt, level, int(rng.integers(0, 2**31))))
        written = gt
        if rng.random() < answer_noise_rate:
            wrong = (gt.answer + int(rng.integers(1, 100))) % 100
            trace[-2:] = encode_value(wrong)
            corrupted = list(gt.minimal_trace)
            corrupted[-2:] = encode_value(wrong)
            written = GroundTruth(answer=wrong, minimal_trace=tuple(corrupted),
                                  intermediates=gt.intermediates)
        trace.append(V.EOS)
        prompt = problem.prompt_tokens
        if hinted:
            variant = variants[int(rng.integers(0, len(variants)))]
            ctx = build_privileged_context(problem, written, variant)
            prompt = (V.CTX,) + wrap_payload(ctx.payload_tokens) + (V.CTX_END,) + prompt
        corpus.append((prompt, tuple(trace)))
    return corpus


def make_problem_set(
    n: int, difficulties, seed: int
) -> list[tuple[Problem, GroundTruth]]:
    """n problems with difficulties cycling through the given levels."""
    rng = spawn_rng(seed, "problem-set")
    levels = list(difficulties)
    return [
        generate_problem(int(rng.integers(0, 2**31)), levels[i % len(levels)])
        for i in range(n)
    ]


# ---------------------------------------------------------------------------
# Corpus files: one record per line as "<prompt ids> | <trace ids>" with
# space-separated decimal token ids; '#' lines are comments. Inspectable and
# diffable by design.
# ---------------------------------------------------------------------------


def save_corpus(path, corpus, header: dict | None = None) -> None:
    with open(path, "w") as fh:
        if header:
            for key, value in header.items():
                fh.write(f"# {key}: {value}\n")
        for prompt, trace in corpus:
            fh.write(" ".join(map(str, prompt)) + " | " + " ".join(map(str, trace)) + "\n")


def load_corpus(path) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    corpus = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            left, right = line.split("|")
            corpus.append(
                (tuple(map(int, left.split())), tuple(map(int, right.split())))
            )
    return corpus

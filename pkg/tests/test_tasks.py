"""Task generator, verifier, privileged contexts, corpus files."""

import numpy as np
import pytest

import opsdlab.vocab as V
from opsdlab.errors import DomainError
from opsdlab.rollout import Rollout
from opsdlab.tasks import (
    PAYLOAD_SLOT,
    ContextVariant,
    Outcome,
    answer_span,
    build_pretraining_corpus,
    build_privileged_context,
    canonical_answer_tokens,
    canonicalize_answer,
    evaluate_chain,
    generate_problem,
    load_corpus,
    make_problem_set,
    redundant_trace,
    save_corpus,
    verify,
    wrap_payload,
)


def rollout_of(tokens, truncated=False):
    return Rollout(
        prompt=(1, 2, V.SOLVE),
        tokens=tuple(tokens),
        student_log_probs=np.zeros(len(tokens)),
        truncated=truncated,
    )


class TestChainEvaluator:
    def test_start_3_plus_2_times_4(self):
        # direct integer-chain evaluation: 3 + 2 = 5, 5 * 4 = 20
        assert evaluate_chain(3, ((V.PLUS, 2), (V.TIMES, 4))) == (5, 20)

    def test_mod_100_wraparound(self):
        assert evaluate_chain(97, ((V.PLUS, 5),)) == (2,)
        assert evaluate_chain(3, ((V.MINUS, 7),)) == (96,)


class TestGenerateProblem:
    def test_determinism(self):
        a = generate_problem(99, 3)
        b = generate_problem(99, 3)
        assert a == b

    def test_difficulty_bounds(self):
        with pytest.raises(DomainError):
            generate_problem(1, 1)
        with pytest.raises(DomainError):
            generate_problem(1, 7)

    def test_ground_truth_consistency(self):
        for seed in range(50):
            for difficulty in (2, 4, 6):
                problem, gt = generate_problem(seed, difficulty)
                assert gt.intermediates == evaluate_chain(problem.start, problem.ops)
                assert gt.answer == gt.intermediates[-1]
                assert canonicalize_answer(answer_span(gt.minimal_trace)) == gt.answer
                assert len(problem.ops) == difficulty


class TestRedundantTrace:
    def test_zero_redundancy_is_minimal(self):
        _, gt = generate_problem(5, 3)
        assert redundant_trace(gt, 0.0, 1) == gt.minimal_trace

    def test_full_redundancy_strictly_longer(self):
        _, gt = generate_problem(5, 2)
        assert len(redundant_trace(gt, 1.0, 1)) > len(gt.minimal_trace)

    def test_expected_insertions_monotone(self):
        _, gt = generate_problem(7, 4)
        def mean_len(level):
            return np.mean([len(redundant_trace(gt, level, s)) for s in range(200)])
        assert mean_len(0.2) < mean_len(0.5) < mean_len(0.9)

    def test_verifier_accepts_every_redundant_trace(self):
        for seed in range(100):
            problem, gt = generate_problem(seed, 2 + seed % 5)
            trace = redundant_trace(gt, 0.8, seed)
            assert verify(rollout_of(trace), gt) is Outcome.CORRECT


class TestVerify:
    def test_leading_zeros_canonicalized(self):
        _, gt = generate_problem(3, 2)
        tokens = (V.ANS, 0, 0, gt.answer // 10, gt.answer % 10, V.EOS)
        assert verify(rollout_of(tokens), gt) is Outcome.CORRECT

    def test_missing_answer_marker_incorrect(self):
        _, gt = generate_problem(3, 2)
        assert verify(rollout_of((1, 2, 3)), gt) is Outcome.INCORRECT

    def test_truncation_outranks_correct_answer(self):
        _, gt = generate_problem(3, 2)
        good = (V.ANS, gt.answer // 10, gt.answer % 10)
        assert verify(rollout_of(good, truncated=True), gt) is Outcome.TRUNCATED

    def test_unparseable_span_incorrect(self):
        _, gt = generate_problem(3, 2)
        assert verify(rollout_of((V.ANS, V.WAIT, 5)), gt) is Outcome.INCORRECT

    def test_mod_marker_reduces(self):
        _, gt = generate_problem(3, 2)
        a = gt.answer
        over = 100 + a
        tokens = (V.ANS, over // 100, (over // 10) % 10, over % 10, V.MOD)
        assert verify(rollout_of(tokens), gt) is Outcome.CORRECT
        no_mod = (V.ANS, over // 100, (over // 10) % 10, over % 10)
        assert verify(rollout_of(no_mod), gt) is Outcome.INCORRECT

    def test_negative_with_mod(self):
        _, gt = generate_problem(11, 2)
        want = gt.answer
        # -(100 - answer) mod 100 == answer
        neg = 100 - want
        tokens = (V.ANS, V.MINUS) + tuple(int(c) for c in str(neg)) + (V.MOD,)
        assert verify(rollout_of(tokens), gt) is Outcome.CORRECT

    def test_outcome_partition(self):
        _, gt = generate_problem(3, 2)
        cases = [
            rollout_of((V.ANS, gt.answer // 10, gt.answer % 10)),
            rollout_of((V.ANS, 9, 9, 9)),
            rollout_of((1, 2), truncated=True),
        ]
        outcomes = [verify(r, gt) for r in cases]
        assert len(set(outcomes)) == 3


class TestCanonicalization:
    def test_idempotence(self):
        rng = np.random.default_rng(13)
        spans = [
            (0, 0, 7),
            (V.MINUS, 5),
            (1, 0, 7, V.MOD),
            (V.MINUS, 3, V.MOD),
            tuple(rng.integers(0, 10, size=3)),
        ]
        for span in spans:
            once = canonicalize_answer(span)
            assert once is not None
            again = canonicalize_answer(canonical_answer_tokens(once))
            assert again == once

    def test_unparseable_is_none(self):
        assert canonicalize_answer(()) is None
        assert canonicalize_answer((V.WAIT,)) is None
        assert canonicalize_answer((V.MINUS,)) is None


class TestPrivilegedContexts:
    def test_answer_only_exact(self):
        problem, gt = generate_problem(21, 3)
        ctx = build_privileged_context(problem, gt, ContextVariant.ANSWER_ONLY)
        assert ctx.payload_tokens == (gt.answer // 10, gt.answer % 10)

    def test_worked_solution_is_minimal_trace(self):
        problem, gt = generate_problem(21, 4)
        ctx = build_privileged_context(problem, gt, ContextVariant.WORKED_SOLUTION)
        assert ctx.payload_tokens == gt.minimal_trace

    def test_conciseness_is_constant(self):
        a = build_privileged_context(*generate_problem(1, 2), ContextVariant.CONCISENESS_DIRECTIVE)
        b = build_privileged_context(*generate_problem(2, 5), ContextVariant.CONCISENESS_DIRECTIVE)
        assert a.payload_tokens == b.payload_tokens

    def test_structured_hint_short(self):
        problem, gt = generate_problem(3, 6)
        ctx = build_privileged_context(problem, gt, ContextVariant.STRUCTURED_HINT)
        assert len(ctx.payload_tokens) <= 8

    def test_wrap_payload_fixed_width(self):
        problem, gt = generate_problem(9, 6)
        for variant in ContextVariant:
            payload = build_privileged_context(problem, gt, variant).payload_tokens
            wrapped = wrap_payload(payload)
            assert len(wrapped) == PAYLOAD_SLOT
            assert wrapped[: len(payload)] == payload
        with pytest.raises(DomainError):
            wrap_payload(tuple(range(PAYLOAD_SLOT + 1)))


class TestCorpus:
    def test_zero_noise_fully_correct(self):
        corpus = build_pretraining_corpus(60, 0.5, 0.0, seed=3)
        for prompt, trace in corpus:
            _, gt = _reparse(prompt)
            assert verify(rollout_of(trace), gt) is Outcome.CORRECT

    def test_full_noise_fully_incorrect(self):
        corpus = build_pretraining_corpus(60, 0.5, 1.0, seed=3)
        for prompt, trace in corpus:
            _, gt = _reparse(prompt)
            assert verify(rollout_of(trace), gt) is Outcome.INCORRECT

    def test_empty(self):
        assert build_pretraining_corpus(0, 0.5, 0.0, seed=1) == []

    def test_determinism(self):
        a = build_pretraining_corpus(30, 0.6, 0.1, seed=4)
        b = build_pretraining_corpus(30, 0.6, 0.1, seed=4)
        assert a == b

    def test_file_round_trip(self, tmp_path):
        corpus = build_pretraining_corpus(25, 0.6, 0.1, seed=5)
        path = tmp_path / "corpus.txt"
        save_corpus(path, corpus, header={"n": 25, "seed": 5})
        assert load_corpus(path) == corpus

    def test_context_fraction_layout(self):
        corpus = build_pretraining_corpus(80, 0.6, 0.0, seed=6, context_fraction=0.5)
        hinted = [c for c in corpus if c[0][0] == V.CTX]
        bare = [c for c in corpus if c[0][0] != V.CTX]
        assert hinted and bare
        for prompt, _ in hinted:
            assert prompt[PAYLOAD_SLOT + 1] == V.CTX_END
            assert all(not V.VOCAB.is_privileged(t) for t in prompt[PAYLOAD_SLOT + 2:])


def _reparse(prompt):
    """Recover the (problem, gt) pair from a corpus prompt encoding."""
    toks = list(prompt)
    if toks[0] == V.CTX:
        toks = toks[toks.index(V.CTX_END) + 1 :]
    start = toks[0] + 10 * toks[1]
    ops = []
    i = 2
    while toks[i] != V.SOLVE:
        ops.append((toks[i], toks[i + 1]))
        i += 2
    intermediates = evaluate_chain(start, ops)

    class GT:
        answer = intermediates[-1]

    return None, GT()


class TestProblemSets:
    def test_cycling_difficulties(self):
        problems = make_problem_set(9, (2, 4), seed=1)
        assert [p.difficulty for p, _ in problems] == [2, 4, 2, 4, 2, 4, 2, 4, 2]

    def test_determinism(self):
        assert make_problem_set(5, (3,), seed=2) == make_problem_set(5, (3,), seed=2)

"""Evaluation, bootstrap, marker density, shift matrices, KL profiles."""

import numpy as np
import pytest

import opsdlab.policy
import opsdlab.vocab as V
from opsdlab.analysis import (
    EvalBand,
    EvalReport,
    EvalSuite,
    delta_report,
    evaluate,
    evaluate_suite,
    kl_position_profile,
    marker_density,
    paired_bootstrap,
    pooled_accuracy,
    pooled_per_problem,
    shift_matrix,
    spearman_trend,
)
from opsdlab.errors import (
    DegenerateInputError,
    DimensionMismatchError,
    DomainError,
)
from opsdlab.policy import PolicyConfig, init_policy
from opsdlab.rollout import Rollout
from opsdlab.tasks import Outcome, make_problem_set

SMALL = PolicyConfig(d_model=16, n_heads=2, hidden=24, rel_buckets=8, max_len=128)


def rollout_with(tokens, kls=None, outcome=Outcome.CORRECT):
    r = Rollout(prompt=(1, V.SOLVE), tokens=tuple(tokens),
                student_log_probs=np.zeros(len(tokens)), truncated=False)
    r.outcome = outcome
    if kls is not None:
        r.token_kls = np.asarray(kls, dtype=np.float64)
    return r


class TestEvaluate:
    def test_oracle_policy_accuracy_one(self, monkeypatch):
        problems = make_problem_set(6, (2, 3), seed=4)
        gt_by_prompt = {p.prompt_tokens: g for p, g in problems}

        def perfect(model, prompt, temperature, max_len, seed, blocked_ids=None):
            gt = gt_by_prompt[prompt.ids]
            tokens = gt.minimal_trace + (V.EOS,)
            return Rollout(prompt=prompt.ids, tokens=tokens,
                           student_log_probs=np.zeros(len(tokens)), truncated=False)

        monkeypatch.setattr(opsdlab.policy, "sample_rollout", perfect)
        report = evaluate(object(), problems, k=4, temperature=0.6, max_len=64, seed=0)
        assert report.accuracy == 1.0
        assert report.mean_length >= 1

    def test_half_correct_arithmetic(self):
        report = EvalReport(per_problem_correct=(4, 4, 4), per_problem_length=(10.0,) * 3,
                            k=8, temperature=0.6, marker_density_value=0.0)
        assert report.accuracy == 0.5

    def test_seeded_determinism(self):
        policy = init_policy(SMALL, seed=2)
        problems = make_problem_set(4, (2,), seed=9)
        a = evaluate(policy, problems, k=3, temperature=0.6, max_len=32, seed=5)
        b = evaluate(policy, problems, k=3, temperature=0.6, max_len=32, seed=5)
        assert a == b

    def test_k_must_be_positive(self):
        with pytest.raises(DomainError):
            evaluate(init_policy(SMALL, seed=2), [], k=0, temperature=0.6, max_len=8, seed=1)

    def test_suite_reports_and_pooling(self):
        policy = init_policy(SMALL, seed=3)
        suite = EvalSuite(bands=(EvalBand("a", (2,), 3), EvalBand("b", (3,), 5)),
                          k=2, max_len=24)
        reports = evaluate_suite(policy, suite)
        assert set(reports) == {"a", "b"}
        acc, length = pooled_per_problem(reports)
        assert acc.shape == (8,)
        assert length.shape == (8,)
        pooled = pooled_accuracy(reports)
        assert 0.0 <= pooled <= 1.0

    def test_suite_round_trip(self):
        suite = EvalSuite()
        assert EvalSuite.from_dict(suite.to_dict()) == suite

    def test_report_round_trip(self):
        r = EvalReport(per_problem_correct=(1, 2), per_problem_length=(3.0, 4.0),
                       k=4, temperature=0.6, marker_density_value=1.5)
        assert EvalReport.from_dict(r.to_dict()) == r


class TestDeltaReport:
    def test_relative_length_definition(self):
        base = {"x": EvalReport((8,), (20.0,), 8, 0.6, 0.0)}
        post = {"x": EvalReport((4,), (15.0,), 8, 0.6, 0.0)}
        d = delta_report(base, post)
        assert d.per_band_accuracy_pp["x"] == pytest.approx(-50.0)
        assert d.per_band_length_pct["x"] == pytest.approx(100 * (15 - 20) / 20)

    def test_band_mismatch(self):
        base = {"x": EvalReport((8,), (20.0,), 8, 0.6, 0.0)}
        with pytest.raises(DimensionMismatchError):
            delta_report(base, {})


class TestPairedBootstrap:
    def test_identical_gives_zero_interval(self):
        base = np.array([0.3, 0.5, 0.9, 0.1])
        ci = paired_bootstrap(base, base, resamples=500, seed=1, scale=100.0)
        assert ci.point == ci.lower == ci.upper == 0.0

    def test_constant_shift_gives_degenerate_interval(self):
        base = np.array([0.3, 0.5, 0.9, 0.1])
        ci = paired_bootstrap(base, base + 0.2, resamples=500, seed=1)
        assert ci.point == pytest.approx(0.2)
        assert ci.lower == pytest.approx(0.2)
        assert ci.upper == pytest.approx(0.2)

    def test_seeded_reproducibility(self):
        rng = np.random.default_rng(3)
        base, post = rng.random(30), rng.random(30)
        a = paired_bootstrap(base, post, resamples=2000, seed=9)
        assert a == paired_bootstrap(base, post, resamples=2000, seed=9)

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            paired_bootstrap([1.0, 2.0], [1.0], resamples=10, seed=0)

    def test_ratio_statistic(self):
        base = np.full(10, 20.0)
        post = np.full(10, 15.0)
        ci = paired_bootstrap(base, post, resamples=200, seed=0,
                              statistic="ratio_of_means_pct")
        assert ci.point == pytest.approx(-25.0)
        assert ci.lower == pytest.approx(-25.0)
        assert ci.upper == pytest.approx(-25.0)

    def test_coverage_quick(self):
        # smaller sibling of the acceptance Monte Carlo
        rng = np.random.default_rng(11)
        mu, n, trials = 0.4, 40, 400
        covered = 0
        for t in range(trials):
            base = rng.normal(0.0, 1.0, size=n)
            post = base + rng.normal(mu, 1.0, size=n)
            ci = paired_bootstrap(base, post, resamples=400, seed=t)
            covered += ci.lower <= mu <= ci.upper
        assert 0.88 <= covered / trials <= 0.99


class TestMarkerDensity:
    def test_arithmetic(self):
        markers = [V.WAIT, V.HMM, V.CHECK]
        filler = [1] * 247
        r = rollout_with(markers + filler)
        assert marker_density([r]) == pytest.approx(12.0)

    def test_zero(self):
        assert marker_density([rollout_with([1, 2, 3])]) == 0.0

    def test_duplication_invariance(self):
        rollouts = [rollout_with([V.WAIT, 1, 2, 3]), rollout_with([4, 5])]
        assert marker_density(rollouts) == pytest.approx(marker_density(rollouts * 2))

    def test_empty_error(self):
        with pytest.raises(DegenerateInputError):
            marker_density([])


class TestShiftMatrix:
    def test_hand_example(self):
        m = shift_matrix([1.0, 0.0], [1.0, 1.0])
        assert (m.cc, m.damaged, m.repaired, m.ii) == (1.0, 0.0, 1.0, 0.0)
        assert m.net == pytest.approx(1.0)

    def test_equal_gives_zero_net(self):
        rng = np.random.default_rng(1)
        p = rng.random(50)
        assert shift_matrix(p, p).net == pytest.approx(0.0, abs=1e-12)

    def test_net_is_sum_of_differences(self):
        rng = np.random.default_rng(2)
        p, q = rng.random(80), rng.random(80)
        m = shift_matrix(p, q)
        assert m.net == pytest.approx(float((q - p).sum()), abs=1e-9)
        assert m.cc + m.damaged + m.repaired + m.ii == pytest.approx(80.0, abs=1e-6)
        assert min(m.cc, m.damaged, m.repaired, m.ii) >= 0.0

    def test_domain_validation(self):
        with pytest.raises(DomainError):
            shift_matrix([1.2], [0.5])
        with pytest.raises(DimensionMismatchError):
            shift_matrix([0.5, 0.5], [0.5])


class TestKlProfile:
    def test_single_bin_when_all_short(self):
        rollouts = [rollout_with([1, 2, 3], kls=[0.1, 0.2, 0.3]),
                    rollout_with([4, 5], kls=[0.4, 0.5])]
        profile = kl_position_profile(rollouts, bin_width=8)
        assert profile.n_bins == 1
        assert profile.survival[Outcome.CORRECT.value] == (2,)
        assert profile.mean_kl[Outcome.CORRECT.value][0] == pytest.approx(0.3)

    def test_survival_non_increasing(self):
        rollouts = [
            rollout_with(list(range(1, 10)) * 2, kls=np.linspace(0, 1, 18)),
            rollout_with([1, 2, 3, 4], kls=[0.1] * 4),
            rollout_with([1] * 7, kls=[0.2] * 7, outcome=Outcome.INCORRECT),
        ]
        profile = kl_position_profile(rollouts, bin_width=4)
        for counts in profile.survival.values():
            assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_profile_loss_consistency(self):
        rng = np.random.default_rng(5)
        rollouts = []
        for i in range(12):
            n = int(rng.integers(1, 30))
            outcome = [Outcome.CORRECT, Outcome.INCORRECT, Outcome.TRUNCATED][i % 3]
            rollouts.append(rollout_with([1] * n, kls=rng.random(n), outcome=outcome))
        profile = kl_position_profile(rollouts, bin_width=8)
        weighted = 0.0
        count = 0
        for outcome, means in profile.mean_kl.items():
            for mean, n in zip(means, profile.token_count[outcome]):
                if mean is not None:
                    weighted += mean * n
                    count += n
        batch_mean = float(np.concatenate([r.token_kls for r in rollouts]).mean())
        assert weighted / count == pytest.approx(batch_mean, abs=1e-9)

    def test_errors(self):
        with pytest.raises(DomainError):
            kl_position_profile([rollout_with([1], kls=[0.1])], bin_width=0)
        with pytest.raises(DegenerateInputError):
            kl_position_profile([], bin_width=4)
        with pytest.raises(DomainError):
            kl_position_profile([rollout_with([1])], bin_width=4)

    def test_round_trip(self):
        rollouts = [rollout_with([1, 2, 3], kls=[0.1, 0.2, 0.3])]
        profile = kl_position_profile(rollouts, bin_width=2)
        from opsdlab.analysis import KlProfile
        assert KlProfile.from_dict(profile.to_dict()) == profile


class TestSpearman:
    def test_monotone_up(self):
        result = spearman_trend(np.arange(20), np.arange(20) * 2.0,
                                n_permutations=500, seed=1)
        assert result["rho"] == pytest.approx(1.0)
        assert result["p_positive"] < 0.05

    def test_no_trend(self):
        rng = np.random.default_rng(4)
        result = spearman_trend(np.arange(40), rng.normal(size=40),
                                n_permutations=500, seed=2)
        assert result["p_positive"] > 0.05

    def test_needs_three_points(self):
        with pytest.raises(DegenerateInputError):
            spearman_trend([1, 2], [3, 4])

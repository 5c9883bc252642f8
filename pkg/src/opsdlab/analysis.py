"""Measurement machinery: average@k evaluation, paired bootstrap intervals,
marker density, correctness-shift matrices, and positional KL profiles.

All aggregation is deterministic (fixed summation order, seeded resampling)
so reports are byte-reproducible for a given policy and seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import policy as P
from .errors import DegenerateInputError, DimensionMismatchError, DomainError
from .rollout import Rollout, SequenceContext
from .seeding import spawn_rng
from .tasks import Outcome, make_problem_set, verify
from .vocab import VOCAB


@dataclass(frozen=True)
class EvalReport:
    """average@k accuracy and mean generated length over a problem set."""

    per_problem_correct: tuple[int, ...]
    per_problem_length: tuple[float, ...]
    k: int
    temperature: float
    marker_density_value: float

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.per_problem_correct)) / self.k

    @property
    def mean_length(self) -> float:
        return float(np.mean(self.per_problem_length))

    def per_problem_accuracy(self) -> np.ndarray:
        return np.asarray(self.per_problem_correct, dtype=np.float64) / self.k

    def to_dict(self) -> dict:
        return {
            "per_problem_correct": list(self.per_problem_correct),
            "per_problem_length": list(self.per_problem_length),
            "k": self.k,
            "temperature": self.temperature,
            "marker_density": self.marker_density_value,
            "accuracy": self.accuracy,
            "mean_length": self.mean_length,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            per_problem_correct=tuple(d["per_problem_correct"]),
            per_problem_length=tuple(d["per_problem_length"]),
            k=d["k"],
            temperature=d["temperature"],
            marker_density_value=d["marker_density"],
        )


@dataclass(frozen=True)
class EvalBand:
    """A named slice of the evaluation suite (a difficulty band)."""

    name: str
    difficulties: tuple[int, ...]
    n_problems: int


@dataclass(frozen=True)
class EvalSuite:
    bands: tuple[EvalBand, ...] = (
        EvalBand("easy", (2,), 24),
        EvalBand("medium", (3,), 24),
        EvalBand("hard", (4,), 16),
    )
    k: int = 8
    temperature: float = 0.6
    max_len: int = 64
    problem_seed: int = 1009
    eval_seed: int = 2003

    def problems(self, band: EvalBand):
        return make_problem_set(
            band.n_problems, band.difficulties, (self.problem_seed, band.name)
        )

    def to_dict(self) -> dict:
        return {
            "bands": [
                {"name": b.name, "difficulties": list(b.difficulties), "n_problems": b.n_problems}
                for b in self.bands
            ],
            "k": self.k,
            "temperature": self.temperature,
            "max_len": self.max_len,
            "problem_seed": self.problem_seed,
            "eval_seed": self.eval_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalSuite":
        return cls(
            bands=tuple(
                EvalBand(b["name"], tuple(b["difficulties"]), b["n_problems"])
                for b in d["bands"]
            ),
            k=d["k"],
            temperature=d["temperature"],
            max_len=d["max_len"],
            problem_seed=d["problem_seed"],
            eval_seed=d["eval_seed"],
        )


def evaluate(
    model,
    problems,
    k: int,
    temperature: float,
    max_len: int,
    seed,
    return_rollouts: bool = False,
):
    """k independent rollouts per problem; per-problem correct counts."""
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    correct_counts = []
    mean_lengths = []
    rollouts: list[Rollout] = []
    for i, (problem, gt) in enumerate(problems):
        n_correct = 0
        lengths = []
        for j in range(k):
            r = P.sample_rollout(
                model,
                SequenceContext(problem.prompt_tokens),
                temperature=temperature,
                max_len=max_len,
                seed=("eval", seed, i, j),
            )
            r.outcome = verify(r, gt)
            n_correct += r.outcome is Outcome.CORRECT
            lengths.append(r.length)
            rollouts.append(r)
        correct_counts.append(n_correct)
        mean_lengths.append(float(np.mean(lengths)))
    report = EvalReport(
        per_problem_correct=tuple(correct_counts),
        per_problem_length=tuple(mean_lengths),
        k=k,
        temperature=temperature,
        marker_density_value=marker_density(rollouts),
    )
    return (report, rollouts) if return_rollouts else report


def evaluate_suite(model, suite: EvalSuite, return_rollouts: bool = False):
    """One EvalReport per band, keyed by band name."""
    reports: dict[str, EvalReport] = {}
    all_rollouts: list[Rollout] = []
    for band in suite.bands:
        result = evaluate(
            model,
            suite.problems(band),
            k=suite.k,
            temperature=suite.temperature,
            max_len=suite.max_len,
            seed=(suite.eval_seed, band.name),
            return_rollouts=return_rollouts,
        )
        if return_rollouts:
            reports[band.name], rolls = result
            all_rollouts.extend(rolls)
        else:
            reports[band.name] = result
    return (reports, all_rollouts) if return_rollouts else reports


def pooled_accuracy(reports: dict[str, EvalReport]) -> float:
    """Problem-weighted accuracy over all bands."""
    correct = sum(sum(r.per_problem_correct) for r in reports.values())
    total = sum(len(r.per_problem_correct) * r.k for r in reports.values())
    return correct / total


def pooled_per_problem(reports: dict[str, EvalReport]):
    """Per-problem accuracy and length vectors pooled across bands, in a
    fixed band order (for paired statistics)."""
    acc = np.concatenate([r.per_problem_accuracy() for _, r in sorted(reports.items())])
    length = np.concatenate(
        [np.asarray(r.per_problem_length) for _, r in sorted(reports.items())]
    )
    return acc, length


@dataclass(frozen=True)
class DeltaReport:
    """Per-band and averaged deltas against a baseline report set.

    delta_accuracy_pp averages per-band accuracy changes in percentage
    points; delta_length_pct averages per-band relative length changes,
    each band against its own baseline.
    """

    per_band_accuracy_pp: dict[str, float]
    per_band_length_pct: dict[str, float]

    @property
    def delta_accuracy_pp(self) -> float:
        return float(np.mean(list(self.per_band_accuracy_pp.values())))

    @property
    def delta_length_pct(self) -> float:
        return float(np.mean(list(self.per_band_length_pct.values())))

    def to_dict(self) -> dict:
        return {
            "per_band_accuracy_pp": dict(self.per_band_accuracy_pp),
            "per_band_length_pct": dict(self.per_band_length_pct),
            "delta_accuracy_pp": self.delta_accuracy_pp,
            "delta_length_pct": self.delta_length_pct,
        }


def delta_report(base: dict[str, EvalReport], post: dict[str, EvalReport]) -> DeltaReport:
    if set(base) != set(post):
        raise DimensionMismatchError("baseline and post reports cover different bands")
    acc = {}
    length = {}
    for name in sorted(base):
        acc[name] = 100.0 * (post[name].accuracy - base[name].accuracy)
        length[name] = 100.0 * (
            post[name].mean_length - base[name].mean_length
        ) / base[name].mean_length
    return DeltaReport(per_band_accuracy_pp=acc, per_band_length_pct=length)


# ---------------------------------------------------------------------------
# Paired bootstrap.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapCI:
    point: float
    lower: float
    upper: float
    resamples: int

    def to_dict(self) -> dict:
        return {"point": self.point, "lower": self.lower, "upper": self.upper,
                "resamples": self.resamples}


def paired_bootstrap(
    base,
    post,
    resamples: int = 10_000,
    seed=0,
    statistic: str = "mean_diff",
    scale: float = 1.0,
) -> BootstrapCI:
    """Percentile CI from resampling problems with replacement, paired.

    statistic "mean_diff": mean(post - base) * scale (accuracy deltas in pp
    with scale=100). statistic "ratio_of_means_pct": relative percent change
    of the resampled means (length deltas).
    """
    base = np.asarray(base, dtype=np.float64)
    post = np.asarray(post, dtype=np.float64)
    if base.shape != post.shape or base.ndim != 1:
        raise DimensionMismatchError("paired vectors must be 1-D of equal length")
    if base.size == 0:
        raise DegenerateInputError("empty paired sample")
    rng = spawn_rng("bootstrap", seed)
    idx = rng.integers(0, base.size, size=(resamples, base.size))
    if statistic == "mean_diff":
        point = float((post - base).mean() * scale)
        stats = (post[idx] - base[idx]).mean(axis=1) * scale
    elif statistic == "ratio_of_means_pct":
        point = float(100.0 * (post.mean() / base.mean() - 1.0))
        stats = 100.0 * (post[idx].mean(axis=1) / base[idx].mean(axis=1) - 1.0)
    else:
        raise DomainError(f"unknown statistic {statistic!r}")
    lower, upper = np.percentile(stats, [2.5, 97.5])
    return BootstrapCI(point=point, lower=float(lower), upper=float(upper),
                       resamples=resamples)


# ---------------------------------------------------------------------------
# Marker density.
# ---------------------------------------------------------------------------


def marker_density(rollouts) -> float:
    """Epistemic markers per 1,000 generated tokens over the rollout set."""
    rollouts = list(rollouts)
    if not rollouts:
        raise DegenerateInputError("no rollouts to measure")
    total = sum(r.length for r in rollouts)
    if total == 0:
        raise DegenerateInputError("rollout set contains no tokens")
    markers = sum(sum(t in VOCAB.marker_ids for t in r.tokens) for r in rollouts)
    return 1000.0 * markers / total


# ---------------------------------------------------------------------------
# Correctness-shift matrix.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShiftMatrix:
    """Expected question counts for pre/post correctness transitions under a
    per-question independence model; net = repaired - damaged is exact
    regardless of the joint model."""

    cc: float
    damaged: float  # correct -> incorrect
    repaired: float  # incorrect -> correct
    ii: float
    n_questions: int

    @property
    def net(self) -> float:
        return self.repaired - self.damaged

    def to_dict(self) -> dict:
        return {"cc": self.cc, "damaged": self.damaged, "repaired": self.repaired,
                "ii": self.ii, "net": self.net, "n_questions": self.n_questions}


def shift_matrix(pre_probs, post_probs) -> ShiftMatrix:
    p = np.asarray(pre_probs, dtype=np.float64)
    q = np.asarray(post_probs, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise DimensionMismatchError("probability vectors must be 1-D of equal length")
    if np.any((p < 0) | (p > 1) | (q < 0) | (q > 1)):
        raise DomainError("probabilities must lie in [0, 1]")
    return ShiftMatrix(
        cc=float((p * q).sum()),
        damaged=float((p * (1 - q)).sum()),
        repaired=float(((1 - p) * q).sum()),
        ii=float(((1 - p) * (1 - q)).sum()),
        n_questions=p.size,
    )


# ---------------------------------------------------------------------------
# Positional KL profile.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KlProfile:
    """Per-position-bin mean reverse KL split by rollout outcome, with the
    number of rollouts surviving to each bin."""

    bin_width: int
    n_bins: int
    mean_kl: dict[str, tuple[float | None, ...]]
    survival: dict[str, tuple[int, ...]]
    token_count: dict[str, tuple[int, ...]]

    def to_dict(self) -> dict:
        return {
            "bin_width": self.bin_width,
            "n_bins": self.n_bins,
            "mean_kl": {k: list(v) for k, v in self.mean_kl.items()},
            "survival": {k: list(v) for k, v in self.survival.items()},
            "token_count": {k: list(v) for k, v in self.token_count.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KlProfile":
        return cls(
            bin_width=d["bin_width"],
            n_bins=d["n_bins"],
            mean_kl={k: tuple(v) for k, v in d["mean_kl"].items()},
            survival={k: tuple(v) for k, v in d["survival"].items()},
            token_count={k: tuple(v) for k, v in d["token_count"].items()},
        )


def kl_position_profile(rollouts, bin_width: int = 8) -> KlProfile:
    rollouts = list(rollouts)
    if bin_width <= 0:
        raise DomainError(f"bin_width must be positive, got {bin_width}")
    if not rollouts:
        raise DegenerateInputError("no rollouts to profile")
    for r in rollouts:
        if r.token_kls is None:
            raise DomainError("rollouts must carry teacher scoring (token_kls)")
        if r.outcome is None:
            raise DomainError("rollouts must carry outcomes")
    n_bins = int(np.ceil(max(r.length for r in rollouts) / bin_width))
    mean_kl: dict[str, tuple] = {}
    survival: dict[str, tuple] = {}
    token_count: dict[str, tuple] = {}
    for outcome in Outcome:
        group = [r for r in rollouts if r.outcome is outcome]
        means, surv, counts = [], [], []
        for b in range(n_bins):
            lo, hi = b * bin_width, (b + 1) * bin_width
            values = [r.token_kls[lo : min(hi, r.length)] for r in group if r.length > lo]
            pooled = np.concatenate(values) if values else np.array([])
            means.append(float(pooled.mean()) if pooled.size else None)
            surv.append(sum(r.length > lo for r in group))
            counts.append(int(pooled.size))
        mean_kl[outcome.value] = tuple(means)
        survival[outcome.value] = tuple(surv)
        token_count[outcome.value] = tuple(counts)
    return KlProfile(
        bin_width=bin_width,
        n_bins=n_bins,
        mean_kl=mean_kl,
        survival=survival,
        token_count=token_count,
    )


# ---------------------------------------------------------------------------
# Trend significance (for the extended-training trajectory).
# ---------------------------------------------------------------------------


def _ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_trend(xs, ys, n_permutations: int = 10_000, seed=0) -> dict:
    """Spearman rank correlation with a one-sided permutation p-value for a
    positive trend."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise DimensionMismatchError("trend inputs must be 1-D of equal length")
    if xs.size < 3:
        raise DegenerateInputError("need at least 3 points for a trend")
    rx, ry = _ranks(xs), _ranks(ys)

    def rho_of(a, b):
        a = a - a.mean()
        b = b - b.mean()
        denom = np.sqrt((a * a).sum() * (b * b).sum())
        return float((a * b).sum() / denom) if denom > 0 else 0.0

    rho = rho_of(rx, ry)
    rng = spawn_rng("spearman", seed)
    hits = 0
    for _ in range(n_permutations):
        hits += rho_of(rx, ry[rng.permutation(ys.size)]) >= rho
    return {"rho": rho, "p_positive": (1 + hits) / (1 + n_permutations)}

"""Per-token divergence and advantage math.

Everything here is exact, full-vocabulary arithmetic in nats on log-space
distributions. The sampled-token estimator exists only to demonstrate that
the reverse-KL gradient equals a REINFORCE-style update whose per-token
advantage is the teacher-student log-probability gap.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DegenerateInputError, DimensionMismatchError, DomainError

# Probabilities are floored here before logs are taken, then renormalized,
# so every stored log-probability is finite.
PROB_FLOOR = 1e-12


class DivergenceKind(Enum):
    REVERSE_KL = "reverse_kl"  # KL(student || teacher), mode-seeking
    FORWARD_KL = "forward_kl"  # KL(teacher || student), mode-covering
    JSD = "jsd"


@dataclass(frozen=True)
class TokenDistribution:
    """A normalized next-token distribution kept in log space (nats)."""

    log_probs: np.ndarray

    @property
    def vocab_size(self) -> int:
        return self.log_probs.shape[0]

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @classmethod
    def from_probs(cls, probs) -> "TokenDistribution":
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise DegenerateInputError("probability vector must be 1-D and nonempty")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise DomainError("probabilities must be finite and nonnegative")
        total = p.sum()
        if total <= 0:
            raise DomainError("probability vector sums to zero")
        p = np.maximum(p / total, PROB_FLOOR)
        p /= p.sum()
        return cls(np.log(p))

    @classmethod
    def from_logits(cls, logits, temperature: float = 1.0) -> "TokenDistribution":
        if temperature <= 0:
            raise DomainError(f"temperature must be positive, got {temperature}")
        z = np.asarray(logits, dtype=np.float64) / temperature
        if not np.all(np.isfinite(z)):
            raise DomainError("logits must be finite")
        z = z - z.max()
        p = np.exp(z)
        p /= p.sum()
        p = np.maximum(p, PROB_FLOOR)
        p /= p.sum()
        return cls(np.log(p))

    def validate(self, tol: float = 1e-9) -> None:
        if not np.all(np.isfinite(self.log_probs)):
            raise DomainError("log-probabilities must be finite")
        total = np.exp(self.log_probs).sum()
        if abs(total - 1.0) > tol:
            raise DomainError(f"probabilities sum to {total}, not 1")


@dataclass(frozen=True)
class TokenAdvantage:
    """Teacher-student log-probability gap of the realized token, in nats."""

    value: float
    token_index: int = 0


@dataclass(frozen=True)
class RolloutAdvantage:
    """A single trajectory-level advantage broadcast to every position."""

    value: float


def _check_pair(p: TokenDistribution, q: TokenDistribution) -> None:
    if p.vocab_size != q.vocab_size:
        raise DimensionMismatchError(
            f"vocabulary sizes differ: {p.vocab_size} vs {q.vocab_size}"
        )
    if not (np.all(np.isfinite(p.log_probs)) and np.all(np.isfinite(q.log_probs))):
        raise DomainError("log-probabilities must be finite")


def kl_divergence(p: TokenDistribution, q: TokenDistribution) -> float:
    """KL(p || q) = sum_a p(a) (log p(a) - log q(a)), in nats."""
    _check_pair(p, q)
    return float(np.exp(p.log_probs) @ (p.log_probs - q.log_probs))


def jsd(p: TokenDistribution, q: TokenDistribution) -> float:
    """Jensen-Shannon divergence, symmetric and bounded by ln 2."""
    _check_pair(p, q)
    log_m = np.logaddexp(p.log_probs + np.log(0.5), q.log_probs + np.log(0.5))
    kl_pm = float(np.exp(p.log_probs) @ (p.log_probs - log_m))
    kl_qm = float(np.exp(q.log_probs) @ (q.log_probs - log_m))
    return 0.5 * (kl_pm + kl_qm)


def divergence(p: TokenDistribution, q: TokenDistribution, kind: DivergenceKind) -> float:
    if kind is DivergenceKind.REVERSE_KL:
        return kl_divergence(p, q)
    if kind is DivergenceKind.FORWARD_KL:
        return kl_divergence(q, p)
    return jsd(p, q)


def token_advantage(
    student_log_prob: float, teacher_log_prob: float, token_index: int = 0
) -> TokenAdvantage:
    """Per-token advantage: positive iff the teacher assigns the token more mass."""
    if not (np.isfinite(student_log_prob) and np.isfinite(teacher_log_prob)):
        raise DomainError("log-probabilities must be finite")
    return TokenAdvantage(value=float(teacher_log_prob - student_log_prob), token_index=token_index)


def sequence_loss(per_token_divergences, rollout_length: int) -> float:
    """Mean per-token divergence over one rollout (the 1/|y| normalization)."""
    values = list(per_token_divergences)
    if rollout_length < 1 or not values:
        raise DegenerateInputError("rollout must contain at least one token")
    if len(values) != rollout_length:
        raise DimensionMismatchError(
            f"got {len(values)} divergences for rollout length {rollout_length}"
        )
    return float(np.mean(values))


def batch_loss(per_rollout_losses) -> float:
    """Unweighted mean of per-rollout sequence losses."""
    values = list(per_rollout_losses)
    if not values:
        raise DegenerateInputError("batch contains no rollouts")
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# Gradients with respect to student logits.
#
# With s = softmax(z) and t fixed:
#   d KL(s||t) / dz_j  = s_j * (log s_j - log t_j - KL(s||t))
#   d KL(t||s) / dz_j  = s_j - t_j
#   d JSD(s,t) / dz_j  = 0.5 * s_j * (log(s_j/m_j) - KL(s||m)),  m = (s+t)/2
# ---------------------------------------------------------------------------


def kl_gradient_full(student: TokenDistribution, teacher: TokenDistribution) -> np.ndarray:
    """Exact gradient of KL(student || teacher) w.r.t. the student logits."""
    _check_pair(student, teacher)
    s = np.exp(student.log_probs)
    gap = student.log_probs - teacher.log_probs
    return s * (gap - s @ gap)


def divergence_logit_gradient(
    student: TokenDistribution, teacher: TokenDistribution, kind: DivergenceKind
) -> np.ndarray:
    """Exact gradient of the chosen divergence w.r.t. the student logits."""
    _check_pair(student, teacher)
    s = np.exp(student.log_probs)
    if kind is DivergenceKind.REVERSE_KL:
        gap = student.log_probs - teacher.log_probs
        return s * (gap - s @ gap)
    if kind is DivergenceKind.FORWARD_KL:
        return s - np.exp(teacher.log_probs)
    log_m = np.logaddexp(
        student.log_probs + np.log(0.5), teacher.log_probs + np.log(0.5)
    )
    gap = student.log_probs - log_m
    return 0.5 * s * (gap - s @ gap)


def sampled_policy_gradient_estimate(
    tokens, advantages, student_dists
) -> np.ndarray:
    """REINFORCE-form estimate sum_t A_t * grad log pi_S(y_t) at each prefix.

    Returns one gradient row per position (w.r.t. that position's logits);
    grad log pi_S(a) = e_a - softmax(z). With A_t = teacher - student log-prob
    gap, the expectation of a row over resampled tokens equals the negated
    full-vocabulary reverse-KL gradient at that prefix.

    `advantages` is either a list of TokenAdvantage aligned with `tokens` or a
    single RolloutAdvantage broadcast to every position.
    """
    tokens = list(tokens)
    dists = list(student_dists)
    if len(tokens) != len(dists):
        raise DimensionMismatchError(
            f"{len(tokens)} tokens but {len(dists)} distributions"
        )
    if isinstance(advantages, RolloutAdvantage):
        adv_values = [advantages.value] * len(tokens)
    else:
        adv_list = list(advantages)
        if len(adv_list) != len(tokens):
            raise DimensionMismatchError(
                f"{len(adv_list)} advantages for {len(tokens)} tokens"
            )
        adv_values = [a.value for a in adv_list]
    if not tokens:
        raise DegenerateInputError("empty rollout")
    vocab = dists[0].vocab_size
    out = np.zeros((len(tokens), vocab))
    for t, (tok, dist, adv) in enumerate(zip(tokens, dists, adv_values)):
        if dist.vocab_size != vocab:
            raise DimensionMismatchError("distributions disagree on vocabulary size")
        row = -adv * np.exp(dist.log_probs)
        row[tok] += adv
        out[t] = row
    return out


# ---------------------------------------------------------------------------
# Vectorized row-wise forms used by the training loop and the KL profile.
# Inputs are [L, V] arrays of log-probabilities.
# ---------------------------------------------------------------------------


def log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def reverse_kl_rows(student_logp: np.ndarray, teacher_logp: np.ndarray) -> np.ndarray:
    return np.einsum(
        "ij,ij->i", np.exp(student_logp), student_logp - teacher_logp
    )


def forward_kl_rows(student_logp: np.ndarray, teacher_logp: np.ndarray) -> np.ndarray:
    return np.einsum(
        "ij,ij->i", np.exp(teacher_logp), teacher_logp - student_logp
    )


def jsd_rows(student_logp: np.ndarray, teacher_logp: np.ndarray) -> np.ndarray:
    log_m = np.logaddexp(student_logp + np.log(0.5), teacher_logp + np.log(0.5))
    a = np.einsum("ij,ij->i", np.exp(student_logp), student_logp - log_m)
    b = np.einsum("ij,ij->i", np.exp(teacher_logp), teacher_logp - log_m)
    return 0.5 * (a + b)


def divergence_rows(
    kind: DivergenceKind, student_logp: np.ndarray, teacher_logp: np.ndarray
) -> np.ndarray:
    if kind is DivergenceKind.REVERSE_KL:
        return reverse_kl_rows(student_logp, teacher_logp)
    if kind is DivergenceKind.FORWARD_KL:
        return forward_kl_rows(student_logp, teacher_logp)
    return jsd_rows(student_logp, teacher_logp)


def divergence_logit_gradient_rows(
    kind: DivergenceKind, student_logp: np.ndarray, teacher_logp: np.ndarray
) -> np.ndarray:
    """Row-wise d(divergence)/d(student logits) for a whole sequence."""
    s = np.exp(student_logp)
    if kind is DivergenceKind.REVERSE_KL:
        gap = student_logp - teacher_logp
        inner = np.einsum("ij,ij->i", s, gap)
        return s * (gap - inner[:, None])
    if kind is DivergenceKind.FORWARD_KL:
        return s - np.exp(teacher_logp)
    log_m = np.logaddexp(student_logp + np.log(0.5), teacher_logp + np.log(0.5))
    gap = student_logp - log_m
    inner = np.einsum("ij,ij->i", s, gap)
    return 0.5 * s * (gap - inner[:, None])

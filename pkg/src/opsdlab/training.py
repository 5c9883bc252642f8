"""Self-distillation training loop.

One step: sample rollouts from the student on bare prompts, verify and
label them, score them token-by-token under the frozen privileged-context
teacher, filter by outcome, and descend the chosen per-token divergence
with AdamW under global-norm clipping. Rollout correctness only ever gates
which prefixes enter the loss; the per-prefix value is mode-independent.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from . import policy as P
from .distributions import (
    DivergenceKind,
    divergence_logit_gradient_rows,
    divergence_rows,
    log_softmax_rows,
    reverse_kl_rows,
)
from .errors import (
    DegenerateInputError,
    DimensionMismatchError,
    DomainError,
    NumericalAbort,
)
from .rollout import (
    DISABLED_REINJECTION,
    ReinjectionSchedule,
    Rollout,
    SequenceContext,
    build_teacher_ids,
)
from .seeding import spawn_rng
from .tasks import (
    DEFAULT_DIFFICULTY_WEIGHTS,
    ContextVariant,
    Outcome,
    build_privileged_context,
    generate_problem,
    verify,
)


class FilterMode(Enum):
    ALL_ROLLOUT = "all_rollout"
    CORRECT_ONLY = "correct_only"
    INCORRECT_ONLY = "incorrect_only"
    SPLIT_DIRECTION = "split_direction"


@dataclass(frozen=True)
class TrainingConfig:
    """Desk-scale defaults. The protocol this mirrors ran 7-8B models with
    batch 32, lr 1e-6, clipping 1.0, 100 steps, temperature 0.7; the learning
    rate here is scaled up for a ~30k-parameter policy."""

    batch_size: int = 32
    learning_rate: float = 2e-3
    grad_clip_norm: float = 1.0
    steps: int = 100
    train_temperature: float = 0.7
    max_gen_len: int = 64
    filter_mode: FilterMode = FilterMode.ALL_ROLLOUT
    divergence_kind: DivergenceKind = DivergenceKind.REVERSE_KL
    reinjection: ReinjectionSchedule = DISABLED_REINJECTION
    context_variant: ContextVariant | None = ContextVariant.ANSWER_ONLY
    data_seed: int = 42
    init_seed: int = 7
    eval_every: int = 5
    weight_decay: float = 0.0
    objective: str = "opsd"  # "opsd" | "rft"
    difficulty_weights: tuple[tuple[int, float], ...] = tuple(
        sorted(DEFAULT_DIFFICULTY_WEIGHTS.items())
    )

    def __post_init__(self):
        for name in ("batch_size", "learning_rate", "grad_clip_norm",
                     "train_temperature", "max_gen_len", "eval_every"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive")
        if self.steps < 0 or self.weight_decay < 0:
            raise DomainError("steps and weight_decay must be nonnegative")
        if self.objective not in ("opsd", "rft"):
            raise DomainError(f"unknown objective {self.objective!r}")


# ---------------------------------------------------------------------------
# Optimizer: AdamW with decoupled weight decay and global-norm clipping.
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


def init_optimizer(params: P.PolicyParams, weight_decay: float = 0.0) -> OptimizerState:
    return OptimizerState(
        m={n: np.zeros_like(a) for n, a in params.array_items()},
        v={n: np.zeros_like(a) for n, a in params.array_items()},
        weight_decay=weight_decay,
    )


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[float, float]:
    """In-place clip; returns (pre-clip, post-clip) norms."""
    pre = global_norm(grads)
    if pre > max_norm and pre > 0.0:
        scale = max_norm / pre
        for g in grads.values():
            g *= scale
        return pre, max_norm
    return pre, pre


def adamw_update(
    params: P.PolicyParams, grads: dict[str, np.ndarray],
    state: OptimizerState, learning_rate: float,
) -> None:
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    for name, arr in params.array_items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        if state.weight_decay:
            arr -= learning_rate * state.weight_decay * arr
        arr -= learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)


# ---------------------------------------------------------------------------
# Rollout collection and teacher scoring.
# ---------------------------------------------------------------------------


def training_problems(config: TrainingConfig, step: int):
    """The batch of problems for one step, drawn from the difficulty mix."""
    rng = spawn_rng(config.data_seed, "problems", step)
    levels = [k for k, _ in config.difficulty_weights]
    weights = np.array([w for _, w in config.difficulty_weights])
    weights = weights / weights.sum()
    out = []
    for _ in range(config.batch_size):
        difficulty = int(rng.choice(levels, p=weights))
        out.append(generate_problem(int(rng.integers(0, 2**31)), difficulty))
    return out


def score_rollout(
    rollout: Rollout,
    student,
    teacher,
    payload_tokens,
    schedule: ReinjectionSchedule = DISABLED_REINJECTION,
) -> None:
    """Fill the rollout's lazy teacher-side fields.

    Teacher distributions condition on the wrapped payload (None scores on
    the bare student input); positions are aligned so the scored token
    sequence is exactly the student's generation. All distributions here are
    temperature 1.0. token_kls is always reverse KL, the profile quantity.
    """
    gen = rollout.tokens
    if payload_tokens is None:
        teacher_ids = np.asarray(rollout.prompt + gen, dtype=np.int64)
        scored = np.arange(len(rollout.prompt) - 1, len(rollout.prompt) - 1 + len(gen))
    else:
        teacher_ids, scored = build_teacher_ids(
            payload_tokens, rollout.prompt, gen, schedule
        )
    t_rows = log_softmax_rows(P.sequence_logits(teacher, teacher_ids)[scored])
    s_ids = rollout.student_ids()
    p_len = len(rollout.prompt)
    s_rows = log_softmax_rows(
        P.sequence_logits(student, s_ids)[p_len - 1 : p_len - 1 + len(gen)]
    )
    idx = np.arange(len(gen))
    rollout.teacher_log_rows = t_rows
    rollout.teacher_log_probs = t_rows[idx, list(gen)]
    rollout.token_kls = reverse_kl_rows(s_rows, t_rows)


def collect_batch(
    student,
    teacher_snapshot: P.PolicySnapshot,
    problems,
    config: TrainingConfig,
    step: int = 0,
) -> list[Rollout]:
    """Sample, verify, and teacher-score one batch of rollouts."""
    problems = list(problems)
    if len(problems) != config.batch_size:
        raise DimensionMismatchError(
            f"expected {config.batch_size} problems, got {len(problems)}"
        )
    batch = []
    for i, (problem, gt) in enumerate(problems):
        rollout = P.sample_rollout(
            student,
            SequenceContext(problem.prompt_tokens),
            temperature=config.train_temperature,
            max_len=config.max_gen_len,
            seed=_rollout_seed(config, step, i),
        )
        rollout.outcome = verify(rollout, gt)
        payload = None
        if config.context_variant is not None:
            payload = build_privileged_context(
                problem, gt, config.context_variant
            ).payload_tokens
        score_rollout(rollout, student, teacher_snapshot, payload, config.reinjection)
        batch.append(rollout)
    return batch


def _rollout_seed(config: TrainingConfig, step: int, i: int):
    return ("rollout", config.data_seed, step, i)


def filter_rollouts(
    batch, mode: FilterMode, base_kind: DivergenceKind = DivergenceKind.REVERSE_KL
) -> list[tuple[list[Rollout], DivergenceKind]]:
    """Group admitted rollouts with the divergence each group trains under.

    Truncated rollouts are admitted only by ALL_ROLLOUT; an empty result
    signals a skip-step condition, not an error.
    """
    for r in batch:
        if r.outcome is None:
            raise DomainError("rollout outcomes must be assigned before filtering")
    correct = [r for r in batch if r.outcome is Outcome.CORRECT]
    incorrect = [r for r in batch if r.outcome is Outcome.INCORRECT]
    if mode is FilterMode.ALL_ROLLOUT:
        groups = [(list(batch), base_kind)]
    elif mode is FilterMode.CORRECT_ONLY:
        groups = [(correct, base_kind)]
    elif mode is FilterMode.INCORRECT_ONLY:
        groups = [(incorrect, base_kind)]
    elif mode is FilterMode.SPLIT_DIRECTION:
        groups = [
            (correct, DivergenceKind.REVERSE_KL),
            (incorrect, DivergenceKind.FORWARD_KL),
        ]
    else:
        raise DomainError(f"unknown filter mode {mode}")
    return [(g, kind) for g, kind in groups if g]


# ---------------------------------------------------------------------------
# Training steps.
# ---------------------------------------------------------------------------


def rollout_token_divergences(student, rollout: Rollout, kind: DivergenceKind) -> np.ndarray:
    """Per-token divergence of the student against the stored teacher rows."""
    if rollout.teacher_log_rows is None:
        raise DomainError("rollout has no teacher scoring; call score_rollout first")
    p_len = len(rollout.prompt)
    logits, _ = P.forward_cache(student, rollout.student_ids())
    s_rows = log_softmax_rows(logits[p_len - 1 : p_len - 1 + rollout.length])
    return divergence_rows(kind, s_rows, rollout.teacher_log_rows)


def _pad_batch(id_seqs) -> np.ndarray:
    """Stack variable-length id sequences, padding the tail (padding rows
    receive zero output gradient, so results are exact)."""
    width = max(len(seq) for seq in id_seqs)
    out = np.zeros((len(id_seqs), width), dtype=np.int64)
    for i, seq in enumerate(id_seqs):
        out[i, : len(seq)] = seq
    return out


def _student_rows_batch(student, rollouts, pad_width: int):
    """Batched cached forward over the rollouts' student sequences.

    Returns (cache, rows) where rows[i] is the [T_i, V] log-softmax at the
    prefix positions of rollout i. pad_width fixes the padded length so the
    arithmetic is identical regardless of which rollouts share the batch.
    """
    ids = np.zeros((len(rollouts), pad_width), dtype=np.int64)
    for i, r in enumerate(rollouts):
        seq = r.student_ids()
        ids[i, : seq.size] = seq
    logits, cache = P.forward_cache_batch(student, ids)
    rows = []
    for i, r in enumerate(rollouts):
        p_len = len(r.prompt)
        rows.append(log_softmax_rows(logits[i, p_len - 1 : p_len - 1 + r.length]))
    return logits, cache, rows


def opsd_step(
    student: P.PolicyParams,
    teacher_snapshot: P.PolicySnapshot,
    batch,
    config: TrainingConfig,
    optimizer_state: OptimizerState,
) -> tuple[P.PolicyParams, dict]:
    """One distillation update on an outcome-filtered batch.

    Per admitted rollout: token divergences against the stored teacher rows
    at every prefix, averaged over tokens; rollouts averaged unweighted;
    gradients clipped at the global-norm bound, then AdamW.
    """
    groups = filter_rollouts(batch, config.filter_mode, config.divergence_kind)
    metrics = _batch_metrics(batch, config)
    n_admitted = sum(len(g) for g, _ in groups)
    if n_admitted == 0:
        metrics.update(skipped=True, loss=None)
        return student, metrics

    # The whole batch goes through one padded forward; filtering only zeroes
    # the excluded rollouts' loss weights. The per-prefix divergence value is
    # therefore bit-identical no matter which filter mode admitted it.
    kind_of: dict[int, DivergenceKind] = {}
    for group, kind in groups:
        for rollout in group:
            if rollout.teacher_log_rows is None:
                raise DomainError("rollout has no teacher scoring; call score_rollout first")
            kind_of[id(rollout)] = kind
    pad_width = max(len(r.prompt) + r.length for r in batch)
    logits, cache, rows = _student_rows_batch(student, batch, pad_width)
    d_logits = np.zeros_like(logits)
    per_rollout_loss: dict[int, float] = {}
    total = 0.0
    for i, rollout in enumerate(batch):
        kind = kind_of.get(id(rollout))
        if kind is None:
            continue
        p_len = len(rollout.prompt)
        divs = divergence_rows(kind, rows[i], rollout.teacher_log_rows)
        loss_r = float(divs.mean())
        if not np.isfinite(loss_r):
            raise NumericalAbort(
                "non-finite distillation loss",
                diagnostic={
                    "rollout_tokens": list(rollout.tokens),
                    "prompt": list(rollout.prompt),
                    "outcome": rollout.outcome.value,
                    "divergence": kind.value,
                },
            )
        total += loss_r
        per_rollout_loss[i] = loss_r
        d_logits[i, p_len - 1 : p_len - 1 + rollout.length] = (
            1.0 / (n_admitted * rollout.length)
        ) * divergence_logit_gradient_rows(kind, rows[i], rollout.teacher_log_rows)
    grads = P.backward_batch(student, cache, d_logits)

    pre_norm, post_norm = clip_global_norm(grads, config.grad_clip_norm)
    adamw_update(student, grads, optimizer_state, config.learning_rate)
    metrics.update(
        skipped=False,
        loss=total / n_admitted,
        n_admitted=n_admitted,
        grad_norm_pre_clip=pre_norm,
        grad_norm_post_clip=post_norm,
        per_rollout_loss=per_rollout_loss,
    )
    return student, metrics


def rft_step(
    student: P.PolicyParams,
    correct_rollouts,
    config: TrainingConfig,
    optimizer_state: OptimizerState,
) -> tuple[P.PolicyParams, dict]:
    """Log-likelihood maximization on correct rollouts (the contrast
    objective: the sampled correct token is the update target)."""
    rollouts = list(correct_rollouts)
    if any(r.outcome is not Outcome.CORRECT for r in rollouts):
        raise DomainError("rft_step admits only Correct rollouts")
    if not rollouts:
        return student, {"skipped": True, "loss": None}
    pad_width = max(len(r.prompt) + r.length for r in rollouts)
    logits, cache, rows = _student_rows_batch(student, rollouts, pad_width)
    d_logits = np.zeros_like(logits)
    total = 0.0
    for i, rollout in enumerate(rollouts):
        p_len = len(rollout.prompt)
        T = rollout.length
        idx = np.arange(T)
        targets = np.asarray(rollout.tokens)
        total += float(-rows[i][idx, targets].mean())
        d_rows = np.exp(rows[i])
        d_rows[idx, targets] -= 1.0
        d_logits[i, p_len - 1 : p_len - 1 + T] = d_rows / (T * len(rollouts))
    grads = P.backward_batch(student, cache, d_logits)
    if not np.isfinite(total):
        raise NumericalAbort("non-finite likelihood loss")
    pre_norm, post_norm = clip_global_norm(grads, config.grad_clip_norm)
    adamw_update(student, grads, optimizer_state, config.learning_rate)
    return student, {
        "skipped": False,
        "loss": total / len(rollouts),
        "n_admitted": len(rollouts),
        "grad_norm_pre_clip": pre_norm,
        "grad_norm_post_clip": post_norm,
    }


def _batch_metrics(batch, config: TrainingConfig) -> dict:
    outcomes = [r.outcome for r in batch]
    lengths = [r.length for r in batch]
    scored = [r.token_kls for r in batch if r.token_kls is not None]
    kls = np.concatenate(scored) if scored else np.array([])
    return {
        "n_correct": sum(o is Outcome.CORRECT for o in outcomes),
        "n_incorrect": sum(o is Outcome.INCORRECT for o in outcomes),
        "n_truncated": sum(o is Outcome.TRUNCATED for o in outcomes),
        "mean_rollout_length": float(np.mean(lengths)),
        "mean_token_reverse_kl": float(kls.mean()) if kls.size else None,
    }


# ---------------------------------------------------------------------------
# Supervised pretraining (the pre-distillation baseline substrate).
# ---------------------------------------------------------------------------


def pretrain_supervised(
    student: P.PolicyParams,
    corpus,
    epochs: int,
    config: TrainingConfig,
    log_every: int | None = None,
) -> tuple[P.PolicyParams, list[dict]]:
    """Cross-entropy on (prompt, trace) pairs; loss on trace positions only."""
    if not corpus:
        raise DegenerateInputError("pretraining corpus is empty")
    optimizer = init_optimizer(student, weight_decay=config.weight_decay)
    rng = spawn_rng(config.data_seed, "pretrain-order")
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(corpus))
        losses = []
        for start in range(0, len(order), config.batch_size):
            chunk = order[start : start + config.batch_size]
            seqs = [corpus[j][0] + corpus[j][1] for j in chunk]
            ids = _pad_batch(seqs)
            logits, cache = P.forward_cache_batch(student, ids)
            d_logits = np.zeros_like(logits)
            batch_loss_total = 0.0
            for bi, j in enumerate(chunk):
                prompt, trace = corpus[j]
                p_len, T = len(prompt), len(trace)
                rows = log_softmax_rows(logits[bi, p_len - 1 : p_len - 1 + T])
                idx = np.arange(T)
                targets = np.asarray(trace)
                batch_loss_total += float(-rows[idx, targets].mean())
                d_rows = np.exp(rows)
                d_rows[idx, targets] -= 1.0
                d_logits[bi, p_len - 1 : p_len - 1 + T] = d_rows / (T * len(chunk))
            grads = P.backward_batch(student, cache, d_logits)
            clip_global_norm(grads, config.grad_clip_norm)
            adamw_update(student, grads, optimizer, config.learning_rate)
            losses.append(batch_loss_total / len(chunk))
        entry = {"epoch": epoch, "mean_loss": float(np.mean(losses))}
        history.append(entry)
        if log_every and (epoch % log_every == 0 or epoch == epochs - 1):
            print(f"pretrain epoch {epoch}: loss={entry['mean_loss']:.4f}")
    return student, history


# ---------------------------------------------------------------------------
# Config serialization (JSON-friendly).
# ---------------------------------------------------------------------------


def config_to_dict(config: TrainingConfig) -> dict:
    return {
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "grad_clip_norm": config.grad_clip_norm,
        "steps": config.steps,
        "train_temperature": config.train_temperature,
        "max_gen_len": config.max_gen_len,
        "filter_mode": config.filter_mode.value,
        "divergence_kind": config.divergence_kind.value,
        "reinjection_period": config.reinjection.period,
        "reinjection_wrapper": list(config.reinjection.wrapper_tokens),
        "context_variant": None if config.context_variant is None else config.context_variant.value,
        "data_seed": config.data_seed,
        "init_seed": config.init_seed,
        "eval_every": config.eval_every,
        "weight_decay": config.weight_decay,
        "objective": config.objective,
        "difficulty_weights": [list(pair) for pair in config.difficulty_weights],
    }


def config_from_dict(d: dict) -> TrainingConfig:
    return TrainingConfig(
        batch_size=d["batch_size"],
        learning_rate=d["learning_rate"],
        grad_clip_norm=d["grad_clip_norm"],
        steps=d["steps"],
        train_temperature=d["train_temperature"],
        max_gen_len=d["max_gen_len"],
        filter_mode=FilterMode(d["filter_mode"]),
        divergence_kind=DivergenceKind(d["divergence_kind"]),
        reinjection=ReinjectionSchedule(
            period=d["reinjection_period"],
            wrapper_tokens=tuple(d["reinjection_wrapper"]),
        ),
        context_variant=None if d["context_variant"] is None else ContextVariant(d["context_variant"]),
        data_seed=d["data_seed"],
        init_seed=d["init_seed"],
        eval_every=d["eval_every"],
        weight_decay=d["weight_decay"],
        objective=d["objective"],
        difficulty_weights=tuple((int(k), float(w)) for k, w in d["difficulty_weights"]),
    )


# ---------------------------------------------------------------------------
# Full experiment loop with persistence.
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    run_dir: str
    config_hash: str
    metrics: list
    evals: list
    report: dict


def run_experiment(
    config: TrainingConfig,
    eval_suite,
    run_dir,
    baseline: P.PolicyParams,
    checkpoint_every: int | None = None,
    profile_batch_size: int = 64,
    quiet: bool = True,
) -> RunRecord:
    """Freeze the teacher at the baseline, run collect -> filter -> update
    for config.steps, evaluating on a fixed cadence, and persist everything
    under run_dir."""
    import time as _time

    from . import analysis as A
    from . import runio as io
    from ._kernels import BACKEND

    t_start = _time.time()
    run_dir = Path(run_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    for name in ("metrics.jsonl", "evals.jsonl"):
        stale = run_dir / name
        if stale.exists():
            stale.unlink()

    student = baseline.copy()
    teacher = P.freeze(student)
    cfg_dict = config_to_dict(config)
    cfg_hash = io.config_hash(cfg_dict)
    stamp = {"config_hash": cfg_hash, "data_seed": config.data_seed,
             "init_seed": config.init_seed}
    io.write_json(run_dir / "config.json", {
        **cfg_dict,
        "config_hash": cfg_hash,
        "eval_suite": eval_suite.to_dict(),
        "teacher_checksum": teacher.checksum,
        "kernel_backend": BACKEND,
    })

    def suite_eval(model):
        reports = A.evaluate_suite(model, eval_suite)
        return reports, {name: r.to_dict() for name, r in reports.items()}

    base_reports, base_dict = suite_eval(student)
    evals = [{"step": 0, **stamp, "reports": base_dict,
              "pooled_accuracy": A.pooled_accuracy(base_reports)}]
    io.append_jsonl(run_dir / "evals.jsonl", evals[0])

    optimizer = init_optimizer(student, weight_decay=config.weight_decay)
    metrics_log: list[dict] = []
    final_batch = None
    try:
        for step in range(1, config.steps + 1):
            problems = training_problems(config, step)
            batch = collect_batch(student, teacher, problems, config, step)
            final_batch = batch
            if config.objective == "rft":
                admitted = [r for r in batch if r.outcome is Outcome.CORRECT]
                student, step_metrics = rft_step(student, admitted, config, optimizer)
            else:
                student, step_metrics = opsd_step(student, teacher, batch, config, optimizer)
            step_metrics.pop("per_rollout_loss", None)
            record = {"step": step, **stamp, **step_metrics}
            metrics_log.append(record)
            io.append_jsonl(run_dir / "metrics.jsonl", record)
            if not quiet:
                print(f"step {step}: {step_metrics.get('loss')}")
            if step % config.eval_every == 0 or step == config.steps:
                reports, rep_dict = suite_eval(student)
                entry = {"step": step, **stamp, "reports": rep_dict,
                         "pooled_accuracy": A.pooled_accuracy(reports)}
                evals.append(entry)
                io.append_jsonl(run_dir / "evals.jsonl", entry)
            if checkpoint_every and step % checkpoint_every == 0:
                P.save_checkpoint(student, run_dir / "checkpoints" / f"step_{step:05d}.ckpt")
    finally:
        P.save_checkpoint(student, run_dir / "checkpoints" / "final.ckpt")

    if teacher.checksum != P.params_checksum(teacher.params):
        raise NumericalAbort("teacher snapshot mutated during training")

    post_reports, post_dict = (suite_eval(student) if config.steps == 0
                               else (None, evals[-1]["reports"]))
    if post_reports is None:
        post_reports = {name: A.EvalReport.from_dict(d) for name, d in post_dict.items()}

    delta = A.delta_report(base_reports, post_reports)
    base_acc, base_len = A.pooled_per_problem(base_reports)
    post_acc, post_len = A.pooled_per_problem(post_reports)
    ci_acc = A.paired_bootstrap(base_acc, post_acc, seed=config.data_seed,
                                statistic="mean_diff", scale=100.0)
    ci_len = A.paired_bootstrap(base_len, post_len, seed=config.data_seed,
                                statistic="ratio_of_means_pct")
    shift = A.shift_matrix(base_acc, post_acc)

    profile = None
    if final_batch is not None:
        try:
            profile = A.kl_position_profile(final_batch)
            io.write_json(run_dir / "kl_profile.json", {**stamp, **profile.to_dict()})
        except Exception:
            profile = None

    report = {
        **stamp,
        "baseline": base_dict,
        "post": post_dict,
        "delta": delta.to_dict(),
        "bootstrap_accuracy_pp": ci_acc.to_dict(),
        "bootstrap_length_pct": ci_len.to_dict(),
        "shift_matrix": shift.to_dict(),
        "baseline_pooled_accuracy": A.pooled_accuracy(base_reports),
        "post_pooled_accuracy": A.pooled_accuracy(post_reports),
        "baseline_marker_density": float(np.mean([r.marker_density_value for r in base_reports.values()])),
        "post_marker_density": float(np.mean([r.marker_density_value for r in post_reports.values()])),
        "steps": config.steps,
        "wall_clock_s": _time.time() - t_start,
    }
    io.write_json(run_dir / "report.json", report)
    return RunRecord(run_dir=str(run_dir), config_hash=cfg_hash,
                     metrics=metrics_log, evals=evals, report=report)

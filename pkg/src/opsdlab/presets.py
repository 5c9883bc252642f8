"""Named experiment presets.

Each preset maps one runnable comparison onto a manifest: the main
outcome-filtered rows and divergence variants, the four teacher-context
families, reinjection on/off, the 500-step trajectory, the three-seed
robustness rerun, and the pipeline-ordering demo.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .analysis import EvalSuite
from .distributions import DivergenceKind
from .errors import ConfigError
from .rollout import ReinjectionSchedule
from .tasks import ContextVariant
from .training import FilterMode, TrainingConfig, config_from_dict, config_to_dict


@dataclass(frozen=True)
class PretrainSpec:
    """Corpus and supervised-training settings for the shared baseline."""

    corpus_n: int = 6144
    redundancy_level: float = 0.6
    answer_noise_rate: float = 0.05
    context_fraction: float = 0.5
    corpus_seed: int = 101
    epochs: int = 40
    learning_rate: float = 3e-3
    batch_size: int = 32
    grad_clip_norm: float = 1.0
    init_seed: int = 7
    order_seed: int = 11
    target_band: tuple[float, float] = (0.55, 0.85)
    # Extra epochs on a fresh low-noise corpus: the "stronger baseline"
    # stage of the pipeline-ordering demo.
    extra_low_noise_epochs: int = 0

    def to_dict(self) -> dict:
        return {
            "corpus_n": self.corpus_n,
            "redundancy_level": self.redundancy_level,
            "answer_noise_rate": self.answer_noise_rate,
            "context_fraction": self.context_fraction,
            "corpus_seed": self.corpus_seed,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "grad_clip_norm": self.grad_clip_norm,
            "init_seed": self.init_seed,
            "order_seed": self.order_seed,
            "target_band": list(self.target_band),
            "extra_low_noise_epochs": self.extra_low_noise_epochs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainSpec":
        d = dict(d)
        d["target_band"] = tuple(d["target_band"])
        return cls(**d)


@dataclass(frozen=True)
class ExperimentManifest:
    """A named preset: training config, evaluation suite, and seed list.

    One training run is executed per data seed; all runs share the same
    pretrained baseline.
    """

    name: str
    config: TrainingConfig
    seeds: tuple[int, ...] = (42,)
    eval_suite: EvalSuite = field(default_factory=EvalSuite)
    pretrain: PretrainSpec = field(default_factory=PretrainSpec)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "config": config_to_dict(self.config),
            "seeds": list(self.seeds),
            "eval_suite": self.eval_suite.to_dict(),
            "pretrain": self.pretrain.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentManifest":
        try:
            return cls(
                name=d["name"],
                config=config_from_dict(d["config"]),
                seeds=tuple(d["seeds"]),
                eval_suite=EvalSuite.from_dict(d["eval_suite"]),
                pretrain=PretrainSpec.from_dict(d["pretrain"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed manifest: {exc}") from exc


_BASE = TrainingConfig()


def _manifest(name: str, seeds=(42,), **config_overrides) -> ExperimentManifest:
    return ExperimentManifest(
        name=name,
        config=replace(_BASE, **config_overrides),
        seeds=tuple(seeds),
    )


REINJECT_16 = ReinjectionSchedule(period=16)


def build_presets() -> dict[str, ExperimentManifest]:
    presets = {
        # Outcome-filtered rows and divergence variants.
        "all-rollout": _manifest("all-rollout", filter_mode=FilterMode.ALL_ROLLOUT),
        "correct-only": _manifest("correct-only", filter_mode=FilterMode.CORRECT_ONLY),
        "incorrect-only": _manifest("incorrect-only", filter_mode=FilterMode.INCORRECT_ONLY),
        "split-direction": _manifest("split-direction", filter_mode=FilterMode.SPLIT_DIRECTION),
        "all-rollout-jsd": _manifest(
            "all-rollout-jsd",
            filter_mode=FilterMode.ALL_ROLLOUT,
            divergence_kind=DivergenceKind.JSD,
        ),
        # Teacher-context families (all-rollout loss held fixed).
        "ctx-answer-only": _manifest("ctx-answer-only", context_variant=ContextVariant.ANSWER_ONLY),
        "ctx-worked-solution": _manifest(
            "ctx-worked-solution", context_variant=ContextVariant.WORKED_SOLUTION
        ),
        "ctx-conciseness": _manifest(
            "ctx-conciseness", context_variant=ContextVariant.CONCISENESS_DIRECTIVE
        ),
        "ctx-structured-hint": _manifest(
            "ctx-structured-hint", context_variant=ContextVariant.STRUCTURED_HINT
        ),
        # Mid-trace payload reinjection (paired with the plain rows above).
        "reinject-all-rollout": _manifest(
            "reinject-all-rollout", filter_mode=FilterMode.ALL_ROLLOUT, reinjection=REINJECT_16
        ),
        "reinject-correct-only": _manifest(
            "reinject-correct-only", filter_mode=FilterMode.CORRECT_ONLY, reinjection=REINJECT_16
        ),
        # Extended training trajectory.
        "trajectory-500": _manifest(
            "trajectory-500", filter_mode=FilterMode.SPLIT_DIRECTION, steps=500
        ),
        # Multi-seed robustness of the correct/incorrect contrast.
        "three-seed-correct-only": _manifest(
            "three-seed-correct-only", seeds=(42, 43, 44), filter_mode=FilterMode.CORRECT_ONLY
        ),
        "three-seed-incorrect-only": _manifest(
            "three-seed-incorrect-only", seeds=(42, 43, 44), filter_mode=FilterMode.INCORRECT_ONLY
        ),
    }
    # Pipeline ordering demo: supervised format training, then a stronger
    # verified-accuracy baseline from extra low-noise pretraining, then
    # distillation as the final compaction stage.
    pipeline = _manifest("pipeline-demo", filter_mode=FilterMode.CORRECT_ONLY)
    presets["pipeline-demo"] = replace(
        pipeline, pretrain=replace(pipeline.pretrain, extra_low_noise_epochs=12)
    )
    return presets


PRESETS = build_presets()

# Table-row aliases: each headline row name resolves to exactly one preset.
ROW_ALIASES = {
    "All-rollout": "all-rollout",
    "Correct-only": "correct-only",
    "Incorrect-only": "incorrect-only",
    "Split-direction": "split-direction",
    "All-rollout JSD": "all-rollout-jsd",
}


def get_preset(name: str) -> ExperimentManifest:
    key = ROW_ALIASES.get(name, name)
    if key not in PRESETS:
        raise ConfigError(
            f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}"
        )
    return PRESETS[key]

"""End-to-end experiment execution shared by the CLI and the acceptance suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .archive import load_samples, save_samples
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .evaluation import MetricsRow, anonymize_eval
from .events import EventDataset, LabeledSample
from .synthetic import generate_synthetic_dataset
from .training import (
    Stage,
    StageConfig,
    TrainSettings,
    TrainState,
    build_state,
    posttrain_attack,
    posttrain_inversion_attack,
    pretrain,
    raw_metrics,
    run_noise_baseline,
    set_deterministic,
    train_pipeline,
)

log = logging.getLogger(__name__)


def load_dataset(cfg: ExperimentConfig) -> EventDataset:
    ds = cfg.dataset
    if ds.kind == "archive":
        samples = load_samples(ds.archive)
    else:
        samples = generate_synthetic_dataset(ds.synthetic)
    return EventDataset.from_samples(samples, val_per_pair=ds.val_per_pair, protocol=ds.protocol, seed=cfg.seed)


def make_settings(cfg: ExperimentConfig, run_dir=None) -> TrainSettings:
    run_dir = Path(run_dir) if run_dir else None
    return TrainSettings(
        augmentation=cfg.augmentation,
        triplet=cfg.loss.triplet,
        weights=cfg.loss.weights,
        log_path=run_dir / "train_log.jsonl" if run_dir else None,
        checkpoint_dir=run_dir / "checkpoints" if run_dir else None,
    )


@dataclass
class RunOutcome:
    rows: list[MetricsRow] = field(default_factory=list)
    state: TrainState | None = None
    checkpoints: dict[str, str] = field(default_factory=dict)
    dataset: EventDataset | None = None


def run_stages(cfg: ExperimentConfig, run_dir=None, only: str | None = None, checkpoint=None,
               outcome: RunOutcome | None = None) -> RunOutcome:
    """Execute the configured stages in order; with ``only`` run that single stage from ``checkpoint``."""
    set_deterministic()
    outcome = outcome or RunOutcome()
    dataset = outcome.dataset or load_dataset(cfg)
    outcome.dataset = dataset
    settings = make_settings(cfg, run_dir)
    stages = cfg.resolved_stages()
    if only is not None:
        stages = [s for s in stages if s.stage.value == only]
        if not stages:
            raise ValueError(f"stage {only!r} not in the configured stages")
    if checkpoint is not None:
        resume_cfg = stages[0] if only is not None else None
        state = load_checkpoint(checkpoint, resume_cfg)
    else:
        state = build_state(dataset, cfg.model.anonymizer, cfg.model.classifier, seed=cfg.seed)
    outcome.state = state

    ckpt_dir = settings.checkpoint_dir
    for st in stages:
        log.info("stage %s (%d epochs)", st.stage.value, st.epochs)
        if st.stage is Stage.PRETRAIN:
            for task in ("reid", "target"):
                pretrain(state, task, dataset, st, settings)
            outcome.rows.append(raw_metrics(state, dataset))
        elif st.stage is Stage.PIPELINE:
            train_pipeline(state, dataset, st, settings)
        elif st.stage is Stage.POSTTRAIN:
            if cfg.baseline is not None:
                outcome.rows += run_noise_baseline(state, dataset, st, cfg.baseline.to_config(), settings,
                                                   inversion=cfg.baseline.inversion, denoiser_cfg=cfg.model.denoiser)
            outcome.rows.append(posttrain_attack(state.anon, state, dataset, st, settings).row)
        else:
            outcome.rows.append(posttrain_inversion_attack(state.anon, state, dataset, st, settings,
                                                           denoiser_cfg=cfg.model.denoiser,
                                                           inversion_of="anonymized").row)
        if ckpt_dir is not None:
            path = save_checkpoint(state, Path(ckpt_dir) / f"after_{st.stage.value}.pt", st)
            outcome.checkpoints[st.stage.value] = str(path)
    return outcome


def anonymizer_from_checkpoint(path):
    """The ``anon`` network stored in a checkpoint, plus the full state (for pre-trained priors)."""
    if str(path) == "identity":
        return None, None
    state = load_checkpoint(path)
    if state.anon is None:
        raise ValueError(f"checkpoint {path} holds no anonymizer")
    return state.anon, state


def save_anonymizer(anonymizer, path):
    return save_checkpoint(TrainState(nets={"anon": anonymizer}), path)


@torch.no_grad()
def export_anonymized(anonymizer, samples: list[LabeledSample], path):
    """Write anonymized histograms (keyed evaluation noise) as a sample archive."""
    anonymizer.eval()
    x = anonymize_eval(samples, anonymizer)
    out = [LabeledSample(histogram=x[i].numpy().copy(), subject_id=s.subject_id, target_label=s.target_label,
                         sample_key=s.sample_key) for i, s in enumerate(samples)]
    save_samples(out, path)
    return out


def single_stage(cfg: ExperimentConfig, kind: Stage) -> StageConfig:
    for st in cfg.resolved_stages():
        if st.stage is kind:
            return st
    return StageConfig.defaults(kind, seed=cfg.seed)

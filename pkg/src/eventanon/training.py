"""Pre-training, adversarial pipeline training and post-training attacks."""

from __future__ import annotations

import copy
import enum
import hashlib
import json
import logging
import os
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .evaluation import MetricsRow, anonymize_eval, evaluate_accuracy, evaluate_reid, stack_histograms
from .events import AugmentationConfig, EventDataset, augment
from .losses import LossReport, LossWeights, TripletConfig, anon_loss, cross_entropy, inversion_loss, reid_loss
from .models import (
    Anonymizer,
    AnonymizerConfig,
    Classifier,
    ClassifierConfig,
    Denoiser,
    DenoiserConfig,
    GaussianAnonymizer,
)

log = logging.getLogger(__name__)

DETERMINISM_ENV = "EVENTANON_DETERMINISTIC"


class Stage(str, enum.Enum):
    PRETRAIN = "pretrain"
    PIPELINE = "pipeline"
    POSTTRAIN = "posttrain"
    POSTTRAIN_INVERSION = "posttrain_inversion"


class TrainingAborted(RuntimeError):
    def __init__(self, message, reports=None, checkpoint=None):
        super().__init__(message)
        self.reports = list(reports or [])
        self.checkpoint = checkpoint


@dataclass
class StageConfig:
    stage: Stage = Stage.PRETRAIN
    epochs: int = 200
    batch_size: int = 32
    lr_aux: float = 1e-4
    lr_anon: float = 5e-4
    scheduler_aux: str = "cosine"
    scheduler_anon: str = "cosine"
    step_period: int = 100
    step_gamma: float = 0.5
    weight_decay: float = 1e-2
    seed: int = 0
    ids_per_batch: int = 8
    samples_per_id: int = 4
    lambda_recon: float = 1.0
    checkpoint_every: int = 0
    restart_from: str = "pretrained"

    def __post_init__(self):
        self.stage = Stage(self.stage)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr_aux <= 0 or self.lr_anon <= 0:
            raise ValueError("learning rates must be > 0")
        for name in ("scheduler_aux", "scheduler_anon"):
            if getattr(self, name) not in ("cosine", "step"):
                raise ValueError(f"{name} must be 'cosine' or 'step'")
        if self.restart_from not in ("pretrained", "pipeline"):
            raise ValueError("restart_from must be 'pretrained' or 'pipeline'")

    @classmethod
    def defaults(cls, stage, **overrides):
        """Full-scale schedule: 200 epochs at 1e-4 cosine for pre/post training,
        300 epochs for the pipeline with step-decayed aux nets at 1e-3 and a
        cosine anonymizer at 5e-4."""
        stage = Stage(stage)
        if stage is Stage.PIPELINE:
            base = dict(epochs=300, lr_aux=1e-3, lr_anon=5e-4, scheduler_aux="step", scheduler_anon="cosine")
        else:
            base = dict(epochs=200, lr_aux=1e-4, scheduler_aux="cosine")
        base.update(overrides)
        return cls(stage=stage, **base)


@dataclass
class NoiseBaselineConfig:
    std_values: list[float] = field(default_factory=lambda: [32.0, 64.0, 128.0, 256.0])

    def __post_init__(self):
        if not self.std_values or any(s <= 0 for s in self.std_values):
            raise ValueError("std_values must be a non-empty list of positive values")


@dataclass
class TrainSettings:
    """Objective and bookkeeping options shared by every stage."""

    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    triplet: TripletConfig = field(default_factory=TripletConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    log_path: Path | None = None
    checkpoint_dir: Path | None = None
    device: str = "cpu"


@dataclass
class TrainState:
    nets: dict[str, nn.Module]
    pretrained: dict[str, dict] = field(default_factory=dict)
    optimizers: dict[str, torch.optim.Optimizer] = field(default_factory=dict)
    schedulers: dict[str, object] = field(default_factory=dict)
    stage: str | None = None
    epoch: int = 0
    seed: int = 0
    rng: np.random.Generator | None = None
    history: list[dict] = field(default_factory=list)
    best: dict[str, tuple[float, dict]] = field(default_factory=dict)
    configs: dict[str, dict] = field(default_factory=dict)

    @property
    def anon(self):
        return self.nets.get("anon")

    @property
    def reid(self):
        return self.nets.get("reid")

    @property
    def target(self):
        return self.nets.get("target")

    def begin(self, stage: str, seed: int):
        """Enter ``stage``; a no-op when resuming the same stage."""
        if self.stage == stage and self.rng is not None:
            return False
        self.stage = stage
        self.epoch = 0
        self.seed = seed
        self.optimizers.clear()
        self.schedulers.clear()
        self.best.clear()
        self.rng = np.random.default_rng(seed)
        torch.manual_seed(seed)
        return True


def set_deterministic(enabled: bool | None = None):
    if enabled is None:
        enabled = os.environ.get(DETERMINISM_ENV, "1") not in ("0", "false", "no")
    torch.use_deterministic_algorithms(enabled)
    return enabled


def params_digest(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------- batching


def pk_batches(ids: np.ndarray, P: int, K: int, rng: np.random.Generator):
    """P identities x K samples per batch; one epoch covers ~len(ids) samples."""
    uniq = np.unique(ids)
    P = min(P, len(uniq))
    by_id = {u: np.flatnonzero(ids == u) for u in uniq}
    n_batches = max(1, len(ids) // (P * K))
    for _ in range(n_batches):
        chosen = rng.choice(uniq, size=P, replace=False)
        idx = [rng.choice(by_id[u], size=K, replace=len(by_id[u]) < K) for u in chosen]
        yield np.concatenate(idx)


def random_batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        b = perm[i:i + batch_size]
        if len(b) > 1:  # batch norm needs two samples
            yield b


class _TrainArrays:
    def __init__(self, samples):
        self.samples = samples
        self.x = np.stack([s.histogram for s in samples]).astype(np.float32)
        self.ids = np.array([s.subject_id for s in samples])
        self.labels = np.array([s.target_label for s in samples])

    def batch(self, idx, aug: AugmentationConfig, rng):
        xb = np.stack([augment(self.x[i], aug, rng) for i in idx]) if aug.enabled else self.x[idx]
        return (
            torch.from_numpy(np.ascontiguousarray(xb)),
            torch.from_numpy(self.ids[idx]).long(),
            torch.from_numpy(self.labels[idx]).long(),
        )


def _make_optimizer(params, lr, wd):
    return torch.optim.AdamW(params, lr=lr, weight_decay=wd)


def _make_scheduler(opt, kind, cfg: StageConfig):
    if kind == "step":
        return torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.step_period, gamma=cfg.step_gamma)
    return torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs)


def _check_finite(report, where, recent):
    recent.append({"where": where, **report.as_dict()})
    if not torch.isfinite(report.total):
        raise TrainingAborted(f"non-finite loss in {where}", reports=recent)


class JsonlLog:
    def __init__(self, path):
        self.path = Path(path) if path else None

    def write(self, record):
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")
            f.flush()


def read_jsonl(path) -> list[dict]:
    """Parse a training log, skipping a truncated final line."""
    out = []
    for line in Path(path).read_text().splitlines():
        try:
            out.append(json.loads(line))
        except json.JSONDecodeError:
            break
    return out


def _maybe_checkpoint(state, cfg, settings, final=False):
    if settings.checkpoint_dir is None:
        return None
    if not final and not (cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0):
        return None
    from .checkpoint import save_checkpoint

    path = Path(settings.checkpoint_dir) / f"{state.stage.replace(':', '_')}_epoch{state.epoch:04d}.pt"
    save_checkpoint(state, path, cfg)
    return path


# ---------------------------------------------------------------- classifier stages


def _evaluate_net(task, net, dataset, anonymizer=None, denoiser=None):
    if task == "reid":
        res = evaluate_reid(net, dataset.reid_split, anonymizer, denoiser)
        return {"mAP": 100 * res.mAP, "top1": 100 * res.topk_acc[1]}, 100 * res.mAP
    acc = evaluate_accuracy(net, dataset.val, anonymizer, denoiser)
    return {"acc_T": acc}, acc


def fit_classifier(
    state: TrainState,
    task: str,
    dataset: EventDataset,
    cfg: StageConfig,
    settings: TrainSettings | None = None,
    anonymizer: nn.Module | None = None,
    use_denoiser: bool = False,
):
    """Train ``state.nets[task]`` ("reid" or "target") and keep the best-by-validation weights.

    With ``anonymizer`` the network sees anonymized inputs (fresh noise while
    training, keyed noise for validation) and the anonymizer stays frozen.
    With ``use_denoiser`` a denoiser ``state.nets['denoise_<task>']`` is
    trained jointly on the inversion objective.
    """
    settings = settings or TrainSettings()
    net = state.nets[task]
    den_key = f"denoise_{task}"
    denoiser = state.nets.get(den_key) if use_denoiser else None
    stage_tag = f"{cfg.stage.value}:{task}"
    fresh = state.begin(stage_tag, cfg.seed)
    logger = JsonlLog(settings.log_path)
    arrays = _TrainArrays(dataset.train)

    if anonymizer is not None:
        anonymizer.eval()
        anonymizer.requires_grad_(False)
    anon_digest = params_digest(anonymizer) if isinstance(anonymizer, Anonymizer) else None

    modules = [net] + ([denoiser] if denoiser is not None else [])
    if "main" not in state.optimizers:
        params = [p for m in modules for p in m.parameters()]
        state.optimizers["main"] = _make_optimizer(params, cfg.lr_aux, cfg.weight_decay)
        state.schedulers["main"] = _make_scheduler(state.optimizers["main"], cfg.scheduler_aux, cfg)
    opt, sched = state.optimizers["main"], state.schedulers["main"]

    if fresh:
        metrics, score = _evaluate_net(task, net, dataset, anonymizer, denoiser)
        state.best[task] = (score, _snapshot(modules))
        state.history.append({"stage": stage_tag, "epoch": 0, **metrics})

    recent = deque(maxlen=3)
    while state.epoch < cfg.epochs:
        for m in modules:
            m.train()
        sums: dict[str, float] = {}
        nb = 0
        if task == "reid":
            batches = pk_batches(arrays.ids, cfg.ids_per_batch, cfg.samples_per_id, state.rng)
        else:
            batches = random_batches(len(arrays.ids), cfg.batch_size, state.rng)
        for idx in batches:
            xb, ids, labels = arrays.batch(idx, settings.augmentation, state.rng)
            x_in = xb
            if anonymizer is not None:
                with torch.no_grad():
                    x_in = anonymizer(xb, torch.randn_like(xb) * anonymizer.noise_std)
            recon = None
            if denoiser is not None:
                recon = denoiser(x_in)
                x_in = recon
            emb, logits = net(x_in)
            y = ids if task == "reid" else labels
            if denoiser is not None:
                rep = inversion_loss(recon, xb, logits, y, cfg.lambda_recon,
                                     embeddings=emb if task == "reid" else None, cfg=settings.triplet)
            elif task == "reid":
                rep = reid_loss(logits, y, emb, settings.triplet, settings.weights)
            else:
                ce = cross_entropy(logits, y)
                rep = LossReport(total=ce, components={"ce_target": float(ce.detach())})
            _check_finite(rep, f"{stage_tag} epoch {state.epoch + 1}", recent)
            opt.zero_grad(set_to_none=True)
            rep.total.backward()
            opt.step()
            for k, v in rep.as_dict().items():
                sums[k] = sums.get(k, 0.0) + v
            nb += 1
        sched.step()
        state.epoch += 1

        metrics, score = _evaluate_net(task, net, dataset, anonymizer, denoiser)
        if score > state.best[task][0]:
            state.best[task] = (score, _snapshot(modules))
        record = {
            "stage": stage_tag,
            "epoch": state.epoch,
            "lr_aux": opt.param_groups[0]["lr"],
            "lr_anon": None,
            "loss": {k: v / max(nb, 1) for k, v in sums.items()},
            "val": metrics,
        }
        state.history.append({"stage": stage_tag, "epoch": state.epoch, **metrics})
        logger.write(record)
        _maybe_checkpoint(state, cfg, settings)

    _restore(modules, state.best[task][1])
    if anon_digest is not None and params_digest(anonymizer) != anon_digest:
        raise RuntimeError("anonymizer parameters changed during a frozen stage")
    return state.best[task][0]


def _snapshot(modules):
    return [copy.deepcopy(m.state_dict()) for m in modules]


def _restore(modules, snap):
    for m, sd in zip(modules, snap):
        m.load_state_dict(sd)


def pretrain(state: TrainState, task: str, dataset, cfg: StageConfig, settings=None):
    """Train one auxiliary network on raw histograms; stores its weights as the pre-trained prior."""
    if cfg.stage is not Stage.PRETRAIN:
        cfg = _with_stage(cfg, Stage.PRETRAIN)
    score = fit_classifier(state, task, dataset, cfg, settings)
    state.pretrained[task] = copy.deepcopy(state.nets[task].state_dict())
    _maybe_checkpoint(state, cfg, settings or TrainSettings(), final=True)
    return score


def _adversary_mode(net: nn.Module):
    """Fixed aux net for the anonymizer step: no grads, BN on running stats, dropout kept active.

    Dropout stays on so the anonymizer faces the same stochastic adversary
    that was just trained; with it off a well-separated re-id net drives the
    batch-hard hinge to exactly zero and the identity gradient vanishes.
    Nothing in the net (parameters or buffers) changes.
    """
    net.requires_grad_(False)
    net.train()
    for m in net.modules():
        if isinstance(m, nn.modules.batchnorm._BatchNorm):
            m.eval()


def _with_stage(cfg, stage):
    d = dict(cfg.__dict__)
    d["stage"] = stage
    return StageConfig(**d)


# ---------------------------------------------------------------- min-max pipeline


def train_pipeline(state: TrainState, dataset, cfg: StageConfig, settings=None, hook: Callable | None = None):
    """Alternating per-batch min-max training of the anonymizer against both aux nets.

    Per batch: (1) anonymize with fresh noise, anonymizer fixed; (2) update
    re-id on the identity loss and target on cross-entropy; (3) anonymize again
    with fresh noise and update the anonymizer on the anonymization loss with
    both aux nets fixed. ``hook(event, state, **info)`` observes the sub-steps.
    """
    settings = settings or TrainSettings()
    cfg = cfg if cfg.stage is Stage.PIPELINE else _with_stage(cfg, Stage.PIPELINE)
    anon, reid, target = state.anon, state.reid, state.target
    if anon is None or reid is None or target is None:
        raise ValueError("pipeline training needs anon, reid and target networks")
    stage_tag = Stage.PIPELINE.value
    state.begin(stage_tag, cfg.seed)
    hook = hook or (lambda *a, **k: None)
    logger = JsonlLog(settings.log_path)
    arrays = _TrainArrays(dataset.train)

    if not state.optimizers:
        for name, net in (("reid", reid), ("target", target)):
            state.optimizers[name] = _make_optimizer(net.parameters(), cfg.lr_aux, cfg.weight_decay)
            state.schedulers[name] = _make_scheduler(state.optimizers[name], cfg.scheduler_aux, cfg)
        state.optimizers["anon"] = _make_optimizer(anon.parameters(), cfg.lr_anon, cfg.weight_decay)
        state.schedulers["anon"] = _make_scheduler(state.optimizers["anon"], cfg.scheduler_anon, cfg)
    opt = state.optimizers

    recent = deque(maxlen=3)
    while state.epoch < cfg.epochs:
        sums: dict[str, float] = {}
        nb = 0
        for idx in pk_batches(arrays.ids, cfg.ids_per_batch, cfg.samples_per_id, state.rng):
            xb, ids, labels = arrays.batch(idx, settings.augmentation, state.rng)
            where = f"pipeline epoch {state.epoch + 1} batch {nb + 1}"

            # (1) anonymize with the anonymizer held fixed
            hook("aux_forward", state)
            with torch.no_grad():
                xa = anon(xb, torch.randn_like(xb) * anon.noise_std)

            # (2) adversary and target updates
            reid.train()
            target.train()
            reid.requires_grad_(True)
            target.requires_grad_(True)
            emb, logits = reid(xa)
            rep_id = reid_loss(logits, ids, emb, settings.triplet, settings.weights)
            _check_finite(rep_id, where + " (re-id update)", recent)
            opt["reid"].zero_grad(set_to_none=True)
            rep_id.total.backward()
            opt["reid"].step()
            opt["reid"].zero_grad(set_to_none=True)

            _, logits_t = target(xa)
            ce_t = cross_entropy(logits_t, labels)
            if not torch.isfinite(ce_t):
                raise TrainingAborted(f"non-finite loss in {where} (target update)", reports=recent)
            opt["target"].zero_grad(set_to_none=True)
            ce_t.backward()
            opt["target"].step()
            opt["target"].zero_grad(set_to_none=True)
            hook("aux_updated", state)

            # (3) anonymizer update against the fixed aux nets
            _adversary_mode(reid)
            _adversary_mode(target)
            hook("anon_forward", state)
            xa = anon(xb, torch.randn_like(xb) * anon.noise_std)
            emb, _ = reid(xa)
            _, logits_t = target(xa)
            rep_anon = anon_loss(logits_t, labels, emb, ids, settings.triplet, settings.weights)
            _check_finite(rep_anon, where + " (anonymizer update)", recent)
            opt["anon"].zero_grad(set_to_none=True)
            rep_anon.total.backward()
            hook("anon_backward", state)
            opt["anon"].step()
            opt["anon"].zero_grad(set_to_none=True)
            reid.requires_grad_(True)
            target.requires_grad_(True)
            hook("anon_updated", state)

            for k, v in rep_id.as_dict().items():
                sums["reid_" + k] = sums.get("reid_" + k, 0.0) + v
            sums["target_ce"] = sums.get("target_ce", 0.0) + float(ce_t.detach())
            for k, v in rep_anon.as_dict().items():
                sums["anon_" + k] = sums.get("anon_" + k, 0.0) + v
            nb += 1

        for s in state.schedulers.values():
            s.step()
        state.epoch += 1
        res = evaluate_reid(reid, dataset.reid_split, anon)
        metrics = {
            "acc_T": evaluate_accuracy(target, dataset.val, anon),
            "top1": 100 * res.topk_acc[1],
            "mAP": 100 * res.mAP,
        }
        logger.write({
            "stage": stage_tag,
            "epoch": state.epoch,
            "lr_aux": opt["reid"].param_groups[0]["lr"],
            "lr_anon": opt["anon"].param_groups[0]["lr"],
            "loss": {k: v / max(nb, 1) for k, v in sums.items()},
            "val": metrics,
        })
        state.history.append({"stage": stage_tag, "epoch": state.epoch, **metrics})
        _maybe_checkpoint(state, cfg, settings)
    _maybe_checkpoint(state, cfg, settings, final=True)
    return state


# ---------------------------------------------------------------- attacks


@dataclass
class AttackResult:
    row: MetricsRow
    nets: dict[str, nn.Module]
    extras: dict[str, float] = field(default_factory=dict)


def _attacker(state: TrainState, task: str, restart_from: str) -> nn.Module:
    net = copy.deepcopy(state.nets[task])
    if restart_from == "pretrained":
        if task not in state.pretrained:
            raise ValueError(f"no pre-trained weights for {task}")
        net.load_state_dict(state.pretrained[task])
    return net


def _attack_tasks(state):
    return [t for t in ("reid", "target") if t in state.nets]


def posttrain_attack(anonymizer, state: TrainState, dataset, cfg: StageConfig, settings=None, label="anonymized"):
    """Fine-tune fresh copies of the aux nets on frozen-anonymizer output and score them."""
    if anonymizer is None:
        raise ValueError("posttrain_attack needs an anonymizer")
    cfg = cfg if cfg.stage is Stage.POSTTRAIN else _with_stage(cfg, Stage.POSTTRAIN)
    before = params_digest(anonymizer)
    nets = {}
    acc_t, retrieval = None, None
    for task in _attack_tasks(state):
        sub = TrainState(nets={task: _attacker(state, task, cfg.restart_from)}, pretrained=state.pretrained)
        fit_classifier(sub, task, dataset, cfg, settings, anonymizer=anonymizer)
        nets[task] = sub.nets[task]
        if task == "reid":
            retrieval = evaluate_reid(sub.nets[task], dataset.reid_split, anonymizer)
        else:
            acc_t = evaluate_accuracy(sub.nets[task], dataset.val, anonymizer)
    if params_digest(anonymizer) != before:
        raise RuntimeError("anonymizer parameters changed during the post-training attack")
    return AttackResult(row=MetricsRow.from_results(label, acc_T=acc_t, retrieval=retrieval), nets=nets)


@torch.no_grad()
def reconstruction_mse(denoiser, anonymizer, samples):
    x = stack_histograms(samples)
    anon = anonymize_eval(samples, anonymizer)
    denoiser.eval()
    recon = anonymize_eval(samples, anonymizer, denoiser)
    return float(((recon - x) ** 2).mean()), float(((anon - x) ** 2).mean())


def posttrain_inversion_attack(anonymizer, state: TrainState, dataset, cfg: StageConfig, settings=None,
                               lambda_recon: float | None = None, denoiser_cfg: DenoiserConfig | None = None,
                               label="anonymized+denoise", inversion_of=None):
    """Post-training attack with a fresh denoiser trained jointly in front of each attacker."""
    cfg = cfg if cfg.stage is Stage.POSTTRAIN_INVERSION else _with_stage(cfg, Stage.POSTTRAIN_INVERSION)
    if lambda_recon is not None:
        cfg = StageConfig(**{**cfg.__dict__, "lambda_recon": lambda_recon})
    denoiser_cfg = denoiser_cfg or DenoiserConfig()
    channels = dataset.shape[0]
    before = params_digest(anonymizer)
    nets, mses, base_mses = {}, [], []
    acc_t, retrieval = None, None
    for task in _attack_tasks(state):
        torch.manual_seed(cfg.seed)
        den = Denoiser(denoiser_cfg, channels)
        sub = TrainState(nets={task: _attacker(state, task, cfg.restart_from), f"denoise_{task}": den},
                         pretrained=state.pretrained)
        fit_classifier(sub, task, dataset, cfg, settings, anonymizer=anonymizer, use_denoiser=True)
        nets[task], nets[f"denoise_{task}"] = sub.nets[task], den
        mse, base = reconstruction_mse(den, anonymizer, dataset.val)
        mses.append(mse)
        base_mses.append(base)
        if task == "reid":
            retrieval = evaluate_reid(sub.nets[task], dataset.reid_split, anonymizer, den)
        else:
            acc_t = evaluate_accuracy(sub.nets[task], dataset.val, anonymizer, den)
    if params_digest(anonymizer) != before:
        raise RuntimeError("anonymizer parameters changed during the inversion attack")
    row = MetricsRow.from_results(label, acc_T=acc_t, retrieval=retrieval, recon_mse=float(np.mean(mses)),
                                  inversion_of=inversion_of)
    return AttackResult(row=row, nets=nets, extras={"anonymized_mse": float(np.mean(base_mses))})


def raw_metrics(state: TrainState, dataset, label="raw") -> MetricsRow:
    """Scores of the pre-trained aux nets on clean validation data."""
    acc_t, retrieval = None, None
    for task in _attack_tasks(state):
        net = copy.deepcopy(state.nets[task])
        if task in state.pretrained:
            net.load_state_dict(state.pretrained[task])
        if task == "reid":
            retrieval = evaluate_reid(net, dataset.reid_split)
        else:
            acc_t = evaluate_accuracy(net, dataset.val)
    return MetricsRow.from_results(label, acc_T=acc_t, retrieval=retrieval)


def identity_anonymizer(channels: int, cfg: AnonymizerConfig | None = None) -> Anonymizer:
    return Anonymizer(cfg or AnonymizerConfig(), channels, force_identity=True)


def run_noise_baseline(state: TrainState, dataset, cfg: StageConfig, baseline: NoiseBaselineConfig, settings=None,
                       inversion: bool = False, denoiser_cfg=None):
    """Post-training attack against x + N(0, s^2) for every s; one row per std (two with inversion)."""
    rows = []
    for s in baseline.std_values:
        anon = GaussianAnonymizer(s)
        label = f"noise std={s:g}"
        rows.append(posttrain_attack(anon, state, dataset, cfg, settings, label=label).row)
        if inversion:
            rows.append(posttrain_inversion_attack(anon, state, dataset, cfg, settings, denoiser_cfg=denoiser_cfg,
                                                   label=label + " +denoise", inversion_of=label).row)
    accs = [r.acc_id_top1 for r in rows if r.inversion_of is None]
    log.info("noise baseline re-id top-1 by std: %s (monotone non-increasing: %s)",
             accs, all(a >= b for a, b in zip(accs, accs[1:])))
    return rows


def transfer_frozen_anonymizer(anonymizer, dataset, cfg_pretrain: StageConfig, cfg_attack: StageConfig,
                               classifier_cfg: ClassifierConfig | None = None, settings=None,
                               state: TrainState | None = None):
    """Apply an anonymizer trained elsewhere, unchanged, to another (possibly larger) dataset.

    Pre-trains a re-id network on the new dataset's raw data unless ``state``
    already carries one, then runs the post-training attack. Returns
    (raw row, anonymized row).
    """
    if state is None:
        ccfg = copy.deepcopy(classifier_cfg or ClassifierConfig())
        ccfg.in_channels = dataset.shape[0]
        ccfg.n_classes = dataset.n_subjects
        torch.manual_seed(cfg_pretrain.seed)
        state = TrainState(nets={"reid": Classifier(ccfg)})
        pretrain(state, "reid", dataset, cfg_pretrain, settings)
    state = TrainState(nets={"reid": state.nets["reid"]}, pretrained=state.pretrained)
    raw = raw_metrics(state, dataset, label="no privacy")
    anon = posttrain_attack(anonymizer, state, dataset, cfg_attack, settings, label="anonymized (transfer)").row
    return raw, anon


def build_state(dataset: EventDataset, anon_cfg: AnonymizerConfig | None = None,
                classifier_cfg: ClassifierConfig | None = None, seed: int = 0) -> TrainState:
    """Fresh anonymizer, re-id and target networks sized for ``dataset``."""
    torch.manual_seed(seed)
    channels = dataset.shape[0]
    base = classifier_cfg or ClassifierConfig()
    reid_cfg = copy.deepcopy(base)
    reid_cfg.in_channels, reid_cfg.n_classes = channels, dataset.n_subjects
    tgt_cfg = copy.deepcopy(base)
    tgt_cfg.in_channels, tgt_cfg.n_classes = channels, dataset.n_classes
    anon_cfg = anon_cfg or AnonymizerConfig()
    nets = {"anon": Anonymizer(anon_cfg, channels), "reid": Classifier(reid_cfg), "target": Classifier(tgt_cfg)}
    return TrainState(nets=nets, seed=seed)


def metrics_delta(a: MetricsRow, b: MetricsRow) -> dict[str, float]:
    out = {}
    for k in ("acc_T", "acc_id_top1", "mAP"):
        va, vb = getattr(a, k), getattr(b, k)
        if va is not None and vb is not None:
            out[k] = vb - va
    return out

"""Single-file checkpoints: per-network parameter blobs plus a JSON metadata block."""

from __future__ import annotations

import dataclasses
import enum
import json
import os
from pathlib import Path

import numpy as np
import torch

from .models import (
    Anonymizer,
    AnonymizerConfig,
    Classifier,
    ClassifierConfig,
    Denoiser,
    DenoiserConfig,
    GaussianAnonymizer,
)
from .training import StageConfig, TrainState, _make_optimizer, _make_scheduler

SCHEMA_VERSION = 1


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {k: _plain(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def describe_net(net) -> dict:
    """Metadata needed to rebuild ``net`` before loading its parameters."""
    if isinstance(net, Anonymizer):
        return {"kind": "anonymizer", "config": _plain(net.cfg), "channels": net.net.channels,
                "force_identity": net.force_identity}
    if isinstance(net, GaussianAnonymizer):
        return {"kind": "gaussian", "std": net.std}
    if isinstance(net, Classifier):
        return {"kind": "classifier", "config": _plain(net.cfg)}
    if isinstance(net, Denoiser):
        return {"kind": "denoiser", "config": _plain(net.cfg), "channels": net.body[0].in_channels}
    raise TypeError(f"cannot describe {type(net).__name__}")


def build_net(desc: dict):
    kind = desc["kind"]
    if kind == "anonymizer":
        return Anonymizer(AnonymizerConfig(**desc["config"]), desc["channels"], desc.get("force_identity", False))
    if kind == "gaussian":
        return GaussianAnonymizer(desc["std"])
    if kind == "classifier":
        return Classifier(ClassifierConfig(**desc["config"]))
    if kind == "denoiser":
        return Denoiser(DenoiserConfig(**desc["config"]), desc["channels"])
    raise ValueError(f"unknown network kind {kind!r}")


def save_checkpoint(state: TrainState, path, stage_cfg: StageConfig | None = None, extra: dict | None = None):
    """Atomically write ``state`` (networks, optimizers, schedulers, RNG, history)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {
        "schema_version": SCHEMA_VERSION,
        "stage": state.stage,
        "epoch": state.epoch,
        "seed": state.seed,
        "networks": {name: describe_net(net) for name, net in state.nets.items()},
        "history": state.history,
        "stage_config": _plain(stage_cfg) if stage_cfg is not None else None,
        **(extra or {}),
    }
    payload = {
        "metadata": json.dumps(metadata, sort_keys=True),
        "networks": {name: net.state_dict() for name, net in state.nets.items()},
        "pretrained": state.pretrained,
        "optimizers": {k: o.state_dict() for k, o in state.optimizers.items()},
        "schedulers": {k: s.state_dict() for k, s in state.schedulers.items()},
        "best": state.best,
        "rng": state.rng.bit_generator.state if state.rng is not None else None,
        "torch_rng": torch.get_rng_state(),
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def read_metadata(path) -> dict:
    return json.loads(torch.load(path, map_location="cpu", weights_only=False)["metadata"])


def load_checkpoint(path, stage_cfg: StageConfig | None = None) -> TrainState:
    """Rebuild a TrainState. Pass ``stage_cfg`` to restore optimizer/scheduler state for resuming."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    meta = json.loads(payload["metadata"])
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema {meta.get('schema_version')}")
    nets = {}
    for name, desc in meta["networks"].items():
        net = build_net(desc)
        net.load_state_dict(payload["networks"][name])
        nets[name] = net
    state = TrainState(nets=nets, pretrained=payload["pretrained"], stage=meta["stage"], epoch=meta["epoch"],
                       seed=meta["seed"], history=meta["history"], best=payload["best"])
    if payload["rng"] is not None:
        state.rng = np.random.default_rng()
        state.rng.bit_generator.state = payload["rng"]
    torch.set_rng_state(payload["torch_rng"])
    if stage_cfg is not None and payload["optimizers"]:
        _restore_optimizers(state, payload, stage_cfg)
    return state


def _restore_optimizers(state, payload, cfg: StageConfig):
    groups = {
        "anon": (["anon"], cfg.lr_anon, cfg.scheduler_anon),
        "reid": (["reid"], cfg.lr_aux, cfg.scheduler_aux),
        "target": (["target"], cfg.lr_aux, cfg.scheduler_aux),
    }
    task = (state.stage or "").split(":")[-1]
    groups["main"] = ([task] + ([f"denoise_{task}"] if f"denoise_{task}" in state.nets else []), cfg.lr_aux,
                      cfg.scheduler_aux)
    for key, opt_state in payload["optimizers"].items():
        names, lr, sched = groups[key]
        params = [p for n in names for p in state.nets[n].parameters()]
        opt = _make_optimizer(params, lr, cfg.weight_decay)
        opt.load_state_dict(opt_state)
        sch = _make_scheduler(opt, sched, cfg)
        sch.load_state_dict(payload["schedulers"][key])
        state.optimizers[key], state.schedulers[key] = opt, sch

"""Command-line experiment runner.

    eventanon run --config desk.toml [--set KEY=VALUE ...] [--seed N] [--output-dir DIR]
    eventanon gen-data --output-dir DIR [--set n_subjects=8 ...]
    eventanon attack --anonymizer CKPT|identity --config CFG [--inversion]
    eventanon transfer --anonymizer CKPT --config CFG
    eventanon report --metrics metrics.json --output-dir DIR
    eventanon export-anon --anonymizer CKPT --config CFG --output-dir DIR

Exit codes: 0 success, 2 configuration error, 3 training abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

from .archive import FormatError, save_samples
from .config import ConfigError, apply_override, load_config
from .evaluation import emit_report, rows_from_json
from .experiment import (
    RunOutcome,
    anonymizer_from_checkpoint,
    export_anonymized,
    load_dataset,
    make_settings,
    run_stages,
    single_stage,
)
from .synthetic import SyntheticDatasetSpec, generate_synthetic_dataset
from .training import (
    Stage,
    TrainingAborted,
    identity_anonymizer,
    posttrain_attack,
    posttrain_inversion_attack,
    pretrain,
    raw_metrics,
    set_deterministic,
    transfer_frozen_anonymizer,
)

log = logging.getLogger("eventanon")

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_IO = 0, 2, 3, 4


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def new_run_dir(base, seed) -> Path:
    """``<base>/<UTC timestamp>_seed<N>``; a numeric suffix avoids ever reusing a directory."""
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = Path(base)
    path = base / f"{stamp}_seed{seed}"
    i = 1
    while path.exists():
        path = base / f"{stamp}_seed{seed}_{i}"
        i += 1
    path.mkdir(parents=True)
    return path


def write_manifest(run_dir: Path, payload: dict):
    tmp = run_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True))
    os.replace(tmp, run_dir / "manifest.json")


def _config(args):
    return load_config(args.config, args.set, seed=args.seed, output_dir=args.output_dir)


def cmd_run(args):
    cfg = _config(args)
    run_dir = new_run_dir(cfg.output_dir, cfg.seed)
    started = time.time()
    manifest = {
        "config": cfg.snapshot(),
        "code_version": code_version(),
        "start": datetime.now(timezone.utc).isoformat(),
        "status": "running",
        "checkpoints": {},
        "rows": [],
    }
    write_manifest(run_dir, manifest)
    outcome = RunOutcome()
    try:
        run_stages(cfg, run_dir, only=args.stage, checkpoint=args.checkpoint, outcome=outcome)
    except BaseException as e:
        manifest.update(status="failed", error=f"{type(e).__name__}: {e}", end=datetime.now(timezone.utc).isoformat(),
                        checkpoints=outcome.checkpoints,
                        last_checkpoint=list(outcome.checkpoints.values())[-1] if outcome.checkpoints else None)
        write_manifest(run_dir, manifest)
        raise
    files = emit_report(outcome.rows, run_dir, cfg.snapshot()) if outcome.rows else {}
    manifest.update(
        status="completed",
        end=datetime.now(timezone.utc).isoformat(),
        elapsed_s=time.time() - started,
        checkpoints=outcome.checkpoints,
        rows=[r.to_dict() for r in outcome.rows],
        outputs={k: str(v) for k, v in files.items()},
    )
    write_manifest(run_dir, manifest)
    print(run_dir)
    return EXIT_OK


def cmd_gen_data(args):
    data: dict = {}
    for ov in args.set:
        apply_override(data, ov)
    if args.seed is not None:
        data["seed"] = args.seed
    try:
        spec = SyntheticDatasetSpec(**data)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    out = Path(args.output_dir)
    save_samples(generate_synthetic_dataset(spec), out)
    print(out)
    return EXIT_OK


def _attack_inputs(args):
    cfg = _config(args)
    set_deterministic()
    dataset = load_dataset(cfg)
    anon, state = anonymizer_from_checkpoint(args.anonymizer)
    if anon is None:
        anon = identity_anonymizer(dataset.shape[0], cfg.model.anonymizer)
    return cfg, dataset, anon, state


def _pretrained_state(cfg, dataset, state, run_dir):
    """Aux nets with pre-trained weights: from the checkpoint when present, else trained here."""
    if state is not None and {"reid", "target"} <= set(state.pretrained):
        return state
    from .training import build_state

    fresh = build_state(dataset, cfg.model.anonymizer, cfg.model.classifier, seed=cfg.seed)
    settings = make_settings(cfg, run_dir)
    for task in ("reid", "target"):
        pretrain(fresh, task, dataset, single_stage(cfg, Stage.PRETRAIN), settings)
    return fresh


def cmd_attack(args):
    cfg, dataset, anon, state = _attack_inputs(args)
    run_dir = new_run_dir(cfg.output_dir, cfg.seed)
    state = _pretrained_state(cfg, dataset, state, run_dir)
    settings = make_settings(cfg, run_dir)
    post = single_stage(cfg, Stage.POSTTRAIN)
    rows = [raw_metrics(state, dataset), posttrain_attack(anon, state, dataset, post, settings).row]
    if args.inversion:
        inv = single_stage(cfg, Stage.POSTTRAIN_INVERSION)
        rows.append(posttrain_inversion_attack(anon, state, dataset, inv, settings, denoiser_cfg=cfg.model.denoiser,
                                               inversion_of="anonymized").row)
    emit_report(rows, run_dir, cfg.snapshot())
    print(run_dir)
    return EXIT_OK


def cmd_transfer(args):
    cfg, dataset, anon, _ = _attack_inputs(args)
    run_dir = new_run_dir(cfg.output_dir, cfg.seed)
    settings = make_settings(cfg, run_dir)
    rows = transfer_frozen_anonymizer(anon, dataset, single_stage(cfg, Stage.PRETRAIN),
                                      single_stage(cfg, Stage.POSTTRAIN), cfg.model.classifier, settings)
    emit_report(list(rows), run_dir, cfg.snapshot())
    print(run_dir)
    return EXIT_OK


def cmd_report(args):
    path = Path(args.metrics)
    rows = rows_from_json(path)
    config = json.loads(path.read_text()).get("config", {})
    out = Path(args.output_dir) if args.output_dir else path.parent
    emit_report(rows, out, config)
    print(out)
    return EXIT_OK


def cmd_export_anon(args):
    cfg, dataset, anon, _ = _attack_inputs(args)
    out = Path(args.output_dir)
    export_anonymized(anon, dataset.train + dataset.val, out)
    print(out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="eventanon", description="Learned noise anonymization for event-camera data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", type=Path, help="TOML experiment config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output-dir", type=Path)

    sp = sub.add_parser("run", help="execute the configured stages")
    common(sp)
    sp.add_argument("--stage", choices=[s.value for s in Stage], help="run only this stage")
    sp.add_argument("--checkpoint", type=Path, help="checkpoint to start the stage from")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("gen-data", help="write a synthetic dataset archive")
    common(sp, config=False)
    sp.set_defaults(func=cmd_gen_data)

    for name, func, helptext in (
        ("attack", cmd_attack, "post-training attack against a frozen anonymizer"),
        ("transfer", cmd_transfer, "apply a frozen anonymizer to another dataset"),
        ("export-anon", cmd_export_anon, "write anonymized histograms as a sample archive"),
    ):
        sp = sub.add_parser(name, help=helptext)
        common(sp)
        sp.add_argument("--anonymizer", required=True, help="checkpoint path, or 'identity'")
        if name == "attack":
            sp.add_argument("--inversion", action="store_true", help="also run the denoiser inversion attack")
        sp.set_defaults(func=func)

    sp = sub.add_parser("report", help="re-emit csv/json/plot from metrics.json")
    sp.add_argument("--metrics", required=True, type=Path)
    sp.add_argument("--output-dir", type=Path)
    sp.add_argument("--seed", type=int, help="accepted for interface uniformity; unused")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as e:
        print(f"training aborted: {e}", file=sys.stderr)
        for rep in e.reports:
            print(f"  {json.dumps(rep)}", file=sys.stderr)
        return EXIT_ABORT
    except (OSError, FormatError) as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

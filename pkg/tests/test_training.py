import numpy as np
import pytest
import torch

from conftest import stage
from eventanon.checkpoint import load_checkpoint, read_metadata, save_checkpoint
from eventanon.models import DenoiserConfig, GaussianAnonymizer
from eventanon.training import (
    Stage,
    StageConfig,
    TrainingAborted,
    TrainSettings,
    fit_classifier,
    params_digest,
    pk_batches,
    posttrain_attack,
    posttrain_inversion_attack,
    pretrain,
    raw_metrics,
    read_jsonl,
    run_noise_baseline,
    NoiseBaselineConfig,
    train_pipeline,
    transfer_frozen_anonymizer,
)


def test_pk_batches_structure():
    ids = np.repeat(np.arange(6), 5)
    rng = np.random.default_rng(0)
    batches = list(pk_batches(ids, P=3, K=4, rng=rng))
    assert len(batches) == 30 // 12
    for b in batches:
        counts = np.bincount(ids[b], minlength=6)
        assert sorted(counts[counts > 0]) == [4, 4, 4]


def test_stage_defaults():
    pipe = StageConfig.defaults(Stage.PIPELINE)
    assert (pipe.epochs, pipe.lr_aux, pipe.lr_anon, pipe.scheduler_aux) == (300, 1e-3, 5e-4, "step")
    assert (pipe.step_period, pipe.step_gamma, pipe.weight_decay) == (100, 0.5, 1e-2)
    pre = StageConfig.defaults("pretrain")
    assert (pre.epochs, pre.lr_aux) == (200, 1e-4)
    with pytest.raises(ValueError):
        StageConfig(scheduler_aux="linear")


def test_pretrain_stores_prior_and_logs(tiny_state, tiny_dataset, tmp_path):
    settings = TrainSettings(log_path=tmp_path / "log.jsonl")
    pretrain(tiny_state, "reid", tiny_dataset, stage("pretrain", 2), settings)
    assert "reid" in tiny_state.pretrained
    # history holds the initial evaluation plus one entry per epoch
    assert [h["epoch"] for h in tiny_state.history] == [0, 1, 2]
    records = read_jsonl(tmp_path / "log.jsonl")
    assert [r["epoch"] for r in records] == [1, 2]
    assert {"stage", "lr_aux", "lr_anon", "loss", "val"} <= set(records[0])


def test_read_jsonl_tolerates_truncated_tail(tmp_path):
    p = tmp_path / "log.jsonl"
    p.write_text('{"epoch": 1}\n{"epoch": 2}\n{"epo')
    assert read_jsonl(p) == [{"epoch": 1}, {"epoch": 2}]


def test_pipeline_freeze_contract(tiny_state, tiny_dataset, tiny_settings):
    snaps, checks = {}, []

    def hook(event, state):
        if event == "aux_forward":
            snaps["anon"] = params_digest(state.anon)
        elif event == "aux_updated":
            checks.append(("anon fixed during aux update", params_digest(state.anon) == snaps["anon"]))
        elif event == "anon_forward":
            snaps["reid"], snaps["target"] = params_digest(state.reid), params_digest(state.target)
        elif event == "anon_backward":
            grads = [p.grad for n in ("reid", "target") for p in state.nets[n].parameters()]
            checks.append(("no aux grads", all(g is None for g in grads)))
        elif event == "anon_updated":
            checks.append(("reid fixed", params_digest(state.reid) == snaps["reid"]))
            checks.append(("target fixed", params_digest(state.target) == snaps["target"]))
            checks.append(("anon moved", params_digest(state.anon) != snaps["anon"]))

    train_pipeline(tiny_state, tiny_dataset, stage("pipeline"), tiny_settings, hook=hook)
    assert checks and all(ok for _, ok in checks), [c for c, ok in checks if not ok]


def test_posttrain_leaves_anonymizer_and_state_untouched(tiny_state, tiny_dataset, tiny_settings):
    cfg = stage("pretrain")
    pretrain(tiny_state, "reid", tiny_dataset, cfg, tiny_settings)
    pretrain(tiny_state, "target", tiny_dataset, cfg, tiny_settings)
    before = {k: params_digest(v) for k, v in tiny_state.nets.items()}
    res = posttrain_attack(tiny_state.anon, tiny_state, tiny_dataset, stage("posttrain"), tiny_settings)
    assert {k: params_digest(v) for k, v in tiny_state.nets.items()} == before
    assert res.row.acc_T is not None and res.row.acc_id_top1 is not None
    # the attacker starts from the pre-trained prior, not from the pipeline nets
    assert params_digest(res.nets["reid"]) != before["reid"]


def test_inversion_attack_reports_mse(tiny_state, tiny_dataset, tiny_settings):
    cfg = stage("pretrain")
    pretrain(tiny_state, "reid", tiny_dataset, cfg, tiny_settings)
    pretrain(tiny_state, "target", tiny_dataset, cfg, tiny_settings)
    res = posttrain_inversion_attack(GaussianAnonymizer(2.0), tiny_state, tiny_dataset, stage("posttrain_inversion", 3),
                                     tiny_settings, denoiser_cfg=DenoiserConfig(hidden_width=4), inversion_of="g")
    assert res.row.recon_mse is not None and res.row.inversion_of == "g"
    assert {"reid", "target", "denoise_reid", "denoise_target"} == set(res.nets)
    assert res.extras["anonymized_mse"] == pytest.approx(4.0, rel=0.1)


def test_noise_baseline_rows(tiny_state, tiny_dataset, tiny_settings):
    pretrain(tiny_state, "reid", tiny_dataset, stage("pretrain"), tiny_settings)
    pretrain(tiny_state, "target", tiny_dataset, stage("pretrain"), tiny_settings)
    rows = run_noise_baseline(tiny_state, tiny_dataset, stage("posttrain"), NoiseBaselineConfig([1.0, 3.0]),
                              tiny_settings, inversion=True, denoiser_cfg=DenoiserConfig(hidden_width=4))
    assert [r.config for r in rows] == ["noise std=1", "noise std=1 +denoise", "noise std=3", "noise std=3 +denoise"]
    assert rows[1].inversion_of == "noise std=1"


def test_transfer_runs_cross_resolution(tiny_state, tiny_dataset, tiny_settings):
    from eventanon.events import EventDataset
    from eventanon.synthetic import SyntheticDatasetSpec, generate_synthetic_dataset

    spec = SyntheticDatasetSpec(n_subjects=4, n_target_classes=2, samples_per_pair=6, resolution=(16, 16), seed=2)
    big = EventDataset.from_samples(generate_synthetic_dataset(spec), val_per_pair=2)
    raw, anon = transfer_frozen_anonymizer(tiny_state.anon, big, stage("pretrain"), stage("posttrain"),
                                           tiny_state.reid.cfg, tiny_settings)
    assert raw.acc_id_top1 is not None and anon.acc_id_top1 is not None
    assert anon.acc_T is None


def test_nonfinite_loss_aborts(tiny_state, tiny_dataset, tiny_settings):
    with torch.no_grad():
        for p in tiny_state.anon.parameters():
            p.fill_(float("nan"))
    with pytest.raises(TrainingAborted) as e:
        train_pipeline(tiny_state, tiny_dataset, stage("pipeline"), tiny_settings)
    assert "pipeline epoch 1" in str(e.value)
    assert e.value.reports


def test_pipeline_requires_all_nets(tiny_state, tiny_dataset):
    del tiny_state.nets["target"]
    with pytest.raises(ValueError, match="anon, reid and target"):
        train_pipeline(tiny_state, tiny_dataset, stage("pipeline"))


def _fresh(tiny_dataset):
    from eventanon.models import AnonymizerConfig, ClassifierConfig
    from eventanon.training import build_state

    return build_state(tiny_dataset, AnonymizerConfig(hidden_width=4), ClassifierConfig(width=4), seed=0)


def test_pipeline_resume_matches_uninterrupted(tiny_dataset, tiny_settings, tmp_path):
    cfg = stage("pipeline", 4, checkpoint_every=2)
    full = _fresh(tiny_dataset)
    train_pipeline(full, tiny_dataset, cfg, tiny_settings)

    part = _fresh(tiny_dataset)
    settings = TrainSettings(augmentation=tiny_settings.augmentation, checkpoint_dir=tmp_path)
    train_pipeline(part, tiny_dataset, cfg, settings)
    mid = tmp_path / "pipeline_epoch0002.pt"
    assert read_metadata(mid)["epoch"] == 2
    resumed = load_checkpoint(mid, cfg)
    train_pipeline(resumed, tiny_dataset, cfg, tiny_settings)
    for name in ("anon", "reid", "target"):
        assert params_digest(resumed.nets[name]) == params_digest(full.nets[name]), name
    assert resumed.history == full.history


def test_fit_resume_matches_uninterrupted(tiny_dataset, tiny_settings, tmp_path):
    cfg = stage("pretrain", 3, checkpoint_every=1)
    full = _fresh(tiny_dataset)
    fit_classifier(full, "reid", tiny_dataset, cfg, tiny_settings)
    part = _fresh(tiny_dataset)
    fit_classifier(part, "reid", tiny_dataset, cfg,
                   TrainSettings(augmentation=tiny_settings.augmentation, checkpoint_dir=tmp_path))
    resumed = load_checkpoint(tmp_path / "pretrain_reid_epoch0001.pt", cfg)
    fit_classifier(resumed, "reid", tiny_dataset, cfg, tiny_settings)
    assert params_digest(resumed.reid) == params_digest(full.reid)


def test_checkpoint_roundtrip(tiny_state, tiny_dataset, tmp_path):
    pretrain(tiny_state, "target", tiny_dataset, stage("pretrain"))
    path = save_checkpoint(tiny_state, tmp_path / "c.pt")
    back = load_checkpoint(path)
    for name in tiny_state.nets:
        assert params_digest(back.nets[name]) == params_digest(tiny_state.nets[name])
    assert back.pretrained.keys() == tiny_state.pretrained.keys()
    assert raw_metrics(back, tiny_dataset) == raw_metrics(tiny_state, tiny_dataset)

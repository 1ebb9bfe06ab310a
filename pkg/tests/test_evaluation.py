import json

import numpy as np
import pytest
import torch

from eventanon.evaluation import (
    MetricsRow,
    emit_report,
    evaluate_accuracy,
    evaluate_retrieval,
    keyed_noise,
    read_csv,
    rows_from_json,
)
from eventanon.events import ExclusionRule, LabeledSample, ReIdSplit


def sample(key, sid, label=0):
    return LabeledSample(np.zeros((2, 2, 2), np.float32), sid, label, key)


def test_retrieval_hand_example():
    q = [sample("q0", 0), sample("q1", 1)]
    g = [sample("a", 0), sample("b", 1), sample("c", 0)]
    split = ReIdSplit(q, g, ExclusionRule.NONE)
    emb = {
        "q0": [1.0, 0.0], "q1": [0.0, 1.0],
        "a": [0.0, 1.0], "b": [0.1, 1.0], "c": [1.0, 0.05],
    }
    res = evaluate_retrieval(split, emb)
    assert res.ranked["q0"] == ["c", "b", "a"]
    assert res.ranked["q1"] == ["a", "b", "c"]
    # q0: hits at ranks 1, 3 -> (1/1 + 2/3)/2 ; q1: hit at rank 2 -> 1/2
    assert res.ap["q0"] == pytest.approx((1 + 2 / 3) / 2)
    assert res.ap["q1"] == pytest.approx(0.5)
    assert res.topk_acc[1] == 0.5 and res.topk_acc[5] == 1.0


def test_retrieval_ties_broken_by_key():
    q = [sample("q", 0)]
    g = [sample("z", 1), sample("m", 0), sample("b", 1)]
    res = evaluate_retrieval(ReIdSplit(q, g, ExclusionRule.NONE), {k: [1.0, 0.0] for k in ("q", "z", "m", "b")})
    assert res.ranked["q"] == ["b", "m", "z"]
    assert res.ap["q"] == pytest.approx(0.5)


def test_retrieval_requires_relevant_entry():
    q = [sample("q", 0, label=1)]
    g = [sample("a", 0, label=1), sample("b", 1, label=0)]
    split = ReIdSplit(q, g, ExclusionRule.SAME_SUBJECT_AND_LABEL)
    with pytest.raises(ValueError, match="no relevant"):
        evaluate_retrieval(split, {"q": [1.0], "a": [1.0], "b": [1.0]})


def test_keyed_noise_depends_only_on_key():
    a = [sample("x", 0), sample("y", 0)]
    b = [sample("y", 0), sample("x", 0)]
    na, nb = keyed_noise(a), keyed_noise(b)
    assert torch.equal(na[0], nb[1]) and torch.equal(na[1], nb[0])
    assert not torch.equal(na[0], na[1])
    assert torch.equal(keyed_noise(a, std=2.0), 2.0 * na)


def test_anonymize_eval_salt_selects_draw():
    from eventanon.evaluation import anonymize_eval
    from eventanon.models import GaussianAnonymizer

    a = [sample("x", 0), sample("y", 1)]
    g = GaussianAnonymizer(1.0)
    assert torch.equal(anonymize_eval(a, g), anonymize_eval(a, g, salt=0))
    assert torch.equal(anonymize_eval(a, g, salt=3), keyed_noise(a, salt=3))
    assert not torch.equal(anonymize_eval(a, g, salt=1), anonymize_eval(a, g))


class FixedClassifier(torch.nn.Module):
    def forward(self, x):
        logits = torch.stack([x.sum((1, 2, 3)), -x.sum((1, 2, 3))], 1)
        return x.flatten(1), logits


def test_evaluate_accuracy_percent_and_restores_mode():
    samples = [
        LabeledSample(np.ones((2, 2, 2), np.float32), 0, 0, "a"),
        LabeledSample(-np.ones((2, 2, 2), np.float32), 0, 1, "b"),
        LabeledSample(np.ones((2, 2, 2), np.float32), 0, 1, "c"),
    ]
    clf = FixedClassifier().train()
    assert evaluate_accuracy(clf, samples) == pytest.approx(200 / 3)
    assert clf.training


def test_metrics_row_validation():
    with pytest.raises(ValueError, match="percentage"):
        MetricsRow("x", acc_T=120.0)


def test_emit_report_roundtrip(tmp_path):
    rows = [
        MetricsRow("raw", acc_T=90.0, acc_id_top1=80.0, acc_id_top5=95.0, acc_id_top10=100.0, mAP=70.0),
        MetricsRow("anon", acc_T=85.0, acc_id_top1=20.0, acc_id_top5=50.0, acc_id_top10=70.0, mAP=25.0),
        MetricsRow("anon+denoise", acc_T=86.0, acc_id_top1=22.0, acc_id_top5=52.0, acc_id_top10=71.0, mAP=26.0,
                   recon_mse=0.5, inversion_of="anon"),
    ]
    paths = emit_report(rows, tmp_path, {"seed": 1})
    assert paths["plot"].stat().st_size > 0
    assert read_csv(paths["csv"])[2].recon_mse == 0.5
    assert read_csv(paths["csv"])[0].recon_mse is None
    back = rows_from_json(paths["json"])
    assert back == rows
    assert json.loads(paths["json"].read_text())["config"] == {"seed": 1}
    header = paths["csv"].read_text().splitlines()[0]
    assert header == "config,acc_T,acc_id_top1,acc_id_top5,acc_id_top10,mAP,recon_mse"


def test_emit_report_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        emit_report([], tmp_path)

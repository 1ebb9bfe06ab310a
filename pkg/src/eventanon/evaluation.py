"""Retrieval metrics, classification accuracy and report emission."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from .events import LabeledSample, ReIdSplit, seed_from_key

TOPK = (1, 5, 10)
CSV_COLUMNS = ["config", "acc_T", "acc_id_top1", "acc_id_top5", "acc_id_top10", "mAP", "recon_mse"]


def keyed_noise(samples: list[LabeledSample], std: float = 1.0, salt: int = 0) -> torch.Tensor:
    """Per-sample deterministic N(0, std^2) noise seeded by sample_key."""
    out = []
    for s in samples:
        g = torch.Generator().manual_seed(seed_from_key(s.sample_key, salt) % (2**63))
        out.append(torch.randn(s.histogram.shape, generator=g) * std)
    return torch.stack(out)


def stack_histograms(samples: list[LabeledSample]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.histogram for s in samples]).astype(np.float32))


@torch.no_grad()
def anonymize_eval(samples, anonymizer=None, denoiser=None, batch_size=64, salt=0):
    """Inputs the attacker sees at evaluation: anonymized with keyed noise, optionally denoised.

    ``salt`` selects another deterministic noise draw.
    """
    x = stack_histograms(samples)
    if anonymizer is None and denoiser is None:
        return x
    outs = []
    for i in range(0, len(samples), batch_size):
        xb = x[i:i + batch_size]
        if anonymizer is not None:
            n = keyed_noise(samples[i:i + batch_size], anonymizer.noise_std, salt)
            xb = anonymizer(xb, n)
        if denoiser is not None:
            xb = denoiser(xb)
        outs.append(xb)
    return torch.cat(outs)


@torch.no_grad()
def _forward_all(classifier, samples, anonymizer=None, denoiser=None, batch_size=64, salt=0):
    modules = [m for m in (classifier, anonymizer, denoiser) if m is not None]
    modes = [m.training for m in modules]
    for m in modules:
        m.eval()
    try:
        x = anonymize_eval(samples, anonymizer, denoiser, batch_size, salt)
        embs, logits = [], []
        for i in range(0, len(samples), batch_size):
            e, lg = classifier(x[i:i + batch_size])
            embs.append(e)
            logits.append(lg)
        return torch.cat(embs), torch.cat(logits)
    finally:
        for m, mode in zip(modules, modes):
            m.train(mode)


def extract_embeddings(classifier, samples, anonymizer=None, denoiser=None, salt=0) -> np.ndarray:
    """One 256-d embedding per sample (evaluation mode)."""
    emb, _ = _forward_all(classifier, samples, anonymizer, denoiser, salt=salt)
    return emb.numpy().astype(np.float64)


def evaluate_accuracy(classifier, samples, anonymizer=None, denoiser=None, attribute="target_label") -> float:
    """Top-1 classification accuracy in percent."""
    _, logits = _forward_all(classifier, samples, anonymizer, denoiser)
    labels = torch.tensor([getattr(s, attribute) for s in samples])
    return 100.0 * float((logits.argmax(1) == labels).float().mean())


@dataclass
class RetrievalResult:
    ranked: dict[str, list[str]]
    topk_acc: dict[int, float]
    mAP: float
    ap: dict[str, float] = field(default_factory=dict)


def _normalize(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-12)


def evaluate_retrieval(split: ReIdSplit, embeddings) -> RetrievalResult:
    """Rank eligible gallery entries per query by Euclidean distance of L2-normalised embeddings.

    ``embeddings`` maps sample_key to vector. Distance ties are broken by
    sample_key. top-k values are fractions in [0, 1].
    """
    gallery_keys = np.array([g.sample_key for g in split.gallery])
    gallery_ids = np.array([g.subject_id for g in split.gallery])
    g_emb = _normalize(np.stack([embeddings[k] for k in gallery_keys]))
    key_rank = np.argsort(np.argsort(gallery_keys))

    ranked, ap, hits = {}, {}, {k: 0 for k in TOPK}
    for q in split.query:
        mask = split.candidate_mask(q)
        q_emb = _normalize(embeddings[q.sample_key])
        dist = np.linalg.norm(g_emb - q_emb, axis=1)
        idx = np.flatnonzero(mask)
        order = idx[np.lexsort((key_rank[idx], dist[idx]))]
        relevant = gallery_ids[order] == q.subject_id
        n_rel = int(relevant.sum())
        if n_rel == 0:
            raise ValueError(f"query {q.sample_key} has no relevant gallery entry after exclusion")
        ranked[q.sample_key] = gallery_keys[order].tolist()
        hit_ranks = np.flatnonzero(relevant) + 1
        ap[q.sample_key] = float(np.mean(np.arange(1, n_rel + 1) / hit_ranks))
        for k in TOPK:
            hits[k] += int(hit_ranks[0] <= k)
    nq = len(split.query)
    return RetrievalResult(
        ranked=ranked,
        topk_acc={k: hits[k] / nq for k in TOPK},
        mAP=float(np.mean(list(ap.values()))),
        ap=ap,
    )


def evaluate_reid(classifier, split: ReIdSplit, anonymizer=None, denoiser=None, salt=0) -> RetrievalResult:
    samples = split.query + split.gallery
    emb = extract_embeddings(classifier, samples, anonymizer, denoiser, salt)
    return evaluate_retrieval(split, {s.sample_key: e for s, e in zip(samples, emb)})


@dataclass
class MetricsRow:
    config: str
    acc_T: float | None = None
    acc_id_top1: float | None = None
    acc_id_top5: float | None = None
    acc_id_top10: float | None = None
    mAP: float | None = None
    recon_mse: float | None = None
    # label of the matching row without the denoiser, for inversion-attack rows
    inversion_of: str | None = None

    def __post_init__(self):
        for name in ("acc_T", "acc_id_top1", "acc_id_top5", "acc_id_top10", "mAP"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 100.0:
                raise ValueError(f"{name}={v} is not a percentage")

    @classmethod
    def from_results(cls, config, acc_T=None, retrieval: RetrievalResult | None = None, recon_mse=None, inversion_of=None):
        kw = {}
        if retrieval is not None:
            kw = {
                "acc_id_top1": 100.0 * retrieval.topk_acc[1],
                "acc_id_top5": 100.0 * retrieval.topk_acc[5],
                "acc_id_top10": 100.0 * retrieval.topk_acc[10],
                "mAP": 100.0 * retrieval.mAP,
            }
        return cls(config=config, acc_T=acc_T, recon_mse=recon_mse, inversion_of=inversion_of, **kw)

    def to_dict(self):
        return asdict(self)


def _csv_value(v):
    return "" if v is None else repr(float(v))


def write_csv(rows: list[MetricsRow], path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r.config] + [_csv_value(getattr(r, c)) for c in CSV_COLUMNS[1:]])


def read_csv(path) -> list[MetricsRow]:
    rows = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            kw = {c: (float(rec[c]) if rec[c] != "" else None) for c in CSV_COLUMNS[1:]}
            rows.append(MetricsRow(config=rec["config"], **kw))
    return rows


def rows_from_json(path) -> list[MetricsRow]:
    data = json.loads(Path(path).read_text())
    names = {f.name for f in fields(MetricsRow)}
    return [MetricsRow(**{k: v for k, v in r.items() if k in names}) for r in data["rows"]]


def plot_tradeoff(rows: list[MetricsRow], path) -> int:
    """Scatter of acc_id vs acc_T; arrows point from plain to inversion-attack rows."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pts = {r.config: r for r in rows if r.acc_T is not None and r.acc_id_top1 is not None}
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, r in pts.items():
        ax.scatter(r.acc_id_top1, r.acc_T, marker="^" if r.inversion_of else "o")
        ax.annotate(label, (r.acc_id_top1, r.acc_T), fontsize=7, xytext=(3, 3), textcoords="offset points")
    for r in pts.values():
        src = pts.get(r.inversion_of) if r.inversion_of else None
        if src is not None:
            ax.annotate("", xy=(r.acc_id_top1, r.acc_T), xytext=(src.acc_id_top1, src.acc_T),
                        arrowprops={"arrowstyle": "->", "lw": 0.8})
    ax.set_xlabel("re-id top-1 accuracy [%] (lower is better)")
    ax.set_ylabel("target accuracy [%]")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return len(pts)


def emit_report(rows: list[MetricsRow], out_dir, config: dict | None = None) -> dict[str, Path]:
    if not rows:
        raise ValueError("no metrics rows to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"csv": out / "metrics.csv", "json": out / "metrics.json", "plot": out / "tradeoff.png"}
    write_csv(rows, paths["csv"])
    payload = {"rows": [r.to_dict() for r in rows], "config": config or {}}
    paths["json"].write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False,
                                        default=lambda o: None if isinstance(o, float) and math.isnan(o) else str(o)))
    plot_tradeoff(rows, paths["plot"])
    return paths

"""Classification, metric-learning and anonymization objectives."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import torch
from torch.nn import functional as F

log = logging.getLogger(__name__)


class Mining(str, enum.Enum):
    BATCH_HARD = "batch_hard"
    BATCH_ALL = "batch_all"


class Distance(str, enum.Enum):
    EUCLIDEAN = "euclidean"
    COSINE = "cosine"


@dataclass
class TripletConfig:
    margin: float = 0.3
    mining: Mining = Mining.BATCH_HARD
    distance: Distance = Distance.EUCLIDEAN

    def __post_init__(self):
        self.mining = Mining(self.mining)
        self.distance = Distance(self.distance)
        if self.margin < 0:
            raise ValueError("margin must be >= 0")


@dataclass
class LossWeights:
    ce: float = 1.0
    triplet: float = 1.0
    # cap on the triplet value subtracted in the anonymizer objective; None = uncapped
    neg_triplet_ceiling: float | None = None


@dataclass
class LossReport:
    total: torch.Tensor
    components: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        return {"total": float(self.total.detach()), **self.components}


def cross_entropy(logits, labels):
    n_classes = logits.shape[1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range [{int(labels.min())}, {int(labels.max())}]")
    return F.cross_entropy(logits, labels)


def pairwise_distance(emb, distance=Distance.EUCLIDEAN):
    if Distance(distance) is Distance.COSINE:
        normed = F.normalize(emb, dim=1)
        return 1.0 - normed @ normed.t()
    diff = emb[:, None, :] - emb[None, :, :]
    # clamp keeps the sqrt differentiable on the diagonal and for coincident points
    return (diff * diff).sum(-1).clamp_min(1e-12).sqrt()


def triplet_loss(embeddings, subject_ids, cfg: TripletConfig | None = None):
    cfg = cfg or TripletConfig()
    dist = pairwise_distance(embeddings, cfg.distance)
    same = subject_ids[:, None] == subject_ids[None, :]
    eye = torch.eye(len(subject_ids), dtype=torch.bool, device=embeddings.device)
    pos = same & ~eye
    neg = ~same

    if cfg.mining is Mining.BATCH_HARD:
        valid = pos.any(1) & neg.any(1)
        if not valid.any():
            raise ValueError("batch has no anchor with both a positive and a negative; check the P x K sampler")
        hardest_pos = dist.masked_fill(~pos, float("-inf")).max(1).values
        hardest_neg = dist.masked_fill(~neg, float("inf")).min(1).values
        return F.relu(hardest_pos - hardest_neg + cfg.margin)[valid].mean()

    mask = pos[:, :, None] & neg[:, None, :]
    if not mask.any():
        raise ValueError("batch has no valid (anchor, positive, negative) triplet; check the P x K sampler")
    losses = F.relu(dist[:, :, None] - dist[:, None, :] + cfg.margin)
    return losses[mask].mean()


def reid_loss(logits, labels_id, embeddings, cfg: TripletConfig | None = None, weights: LossWeights | None = None):
    weights = weights or LossWeights()
    ce = cross_entropy(logits, labels_id)
    tri = triplet_loss(embeddings, labels_id, cfg)
    return LossReport(
        total=weights.ce * ce + weights.triplet * tri,
        components={"ce_id": float(ce.detach()), "triplet": float(tri.detach())},
    )


def anon_loss(target_logits, labels_t, embeddings, subject_ids, cfg: TripletConfig | None = None, weights: LossWeights | None = None):
    """Target cross-entropy minus the identity triplet loss."""
    cfg = cfg or TripletConfig()
    weights = weights or LossWeights()
    ce = cross_entropy(target_logits, labels_t)
    tri = triplet_loss(embeddings, subject_ids, cfg)
    value = float(tri.detach())
    if value > 10 * cfg.margin:
        log.info("negated triplet term %.3f exceeds 10x margin", value)
    if weights.neg_triplet_ceiling is not None:
        tri = tri.clamp(max=weights.neg_triplet_ceiling)
    return LossReport(
        total=weights.ce * ce - weights.triplet * tri,
        components={"ce_target": float(ce.detach()), "triplet": value},
    )


def inversion_loss(recon, x, logits, labels, lambda_recon=1.0, embeddings=None, cfg: TripletConfig | None = None):
    """Classification loss plus weighted reconstruction MSE against the clean input.

    When ``embeddings`` are given (re-id attacker) the triplet term on
    ``labels`` is added to the classification part.
    """
    ce = cross_entropy(logits, labels)
    mse = F.mse_loss(recon, x)
    total = ce + lambda_recon * mse
    components = {"ce": float(ce.detach()), "mse_recon": float(mse.detach())}
    if embeddings is not None:
        tri = triplet_loss(embeddings, labels, cfg)
        total = total + tri
        components["triplet"] = float(tri.detach())
    return LossReport(total=total, components=components)

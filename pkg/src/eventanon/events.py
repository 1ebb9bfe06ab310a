"""Event streams, dense event histograms, augmentation and re-id splits."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage


class SplitProtocol(str, enum.Enum):
    DVS_GESTURE = "dvs_gesture"
    SEE = "see"


class ExclusionRule(str, enum.Enum):
    SAME_SUBJECT_AND_LABEL = "same_subject_and_label"
    NONE = "none"


@dataclass
class EventStream:
    """Raw sensor output: parallel arrays of x, y, t (microseconds) and polarity."""

    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    p: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        self.t = np.asarray(self.t, dtype=np.int64).reshape(-1)
        self.p = np.asarray(self.p, dtype=np.int64).reshape(-1)
        n = len(self.x)
        if not (len(self.y) == len(self.t) == len(self.p) == n):
            raise ValueError("event arrays must have equal length")

    def __len__(self):
        return len(self.x)

    @classmethod
    def from_tuples(cls, events: Sequence[tuple[int, int, int, int]], width: int, height: int) -> "EventStream":
        arr = np.asarray(list(events), dtype=np.int64).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], width, height)

    def validate(self):
        """Raise ValueError naming the first offending event index."""
        bad = (self.x < 0) | (self.x >= self.width) | (self.y < 0) | (self.y >= self.height)
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(
                f"event {i} at (x={self.x[i]}, y={self.y[i]}) outside {self.width}x{self.height} sensor"
            )
        bad = (self.p != 0) & (self.p != 1)
        if bad.any():
            i = int(np.argmax(bad))
            raise ValueError(f"event {i} has polarity {self.p[i]}, expected 0 or 1")
        if len(self.t) > 1 and np.any(np.diff(self.t) < 0):
            i = int(np.argmax(np.diff(self.t) < 0)) + 1
            raise ValueError(f"event {i} timestamp {self.t[i]} decreases")


def build_histogram(stream: EventStream, T: int = 5, window_us: int | None = None) -> np.ndarray:
    """Count events into a (2T, H, W) float32 histogram.

    Bins are T equal-width intervals over [t_first, t_last] (last bin closed),
    negative polarity in channels [0, T), positive in [T, 2T). With
    ``window_us`` the bins span [t_first, t_first + window_us] and later
    events are dropped.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    stream.validate()
    hist = np.zeros((2 * T, stream.height, stream.width), dtype=np.float32)
    if len(stream) == 0:
        return hist
    t = stream.t
    t0 = int(t[0])
    keep = np.ones(len(t), dtype=bool)
    if window_us is not None:
        span = int(window_us)
        keep = t <= t0 + window_us
    else:
        span = int(t[-1] - t0)
    if span > 0:
        # integer arithmetic keeps events on bin edges in the right bin
        bins = (t[keep].astype(np.int64) - t0) * T // span
        bins = np.clip(bins, 0, T - 1)
    else:
        bins = np.zeros(int(keep.sum()), dtype=np.int64)
    channel = stream.p[keep] * T + bins
    np.add.at(hist, (channel, stream.y[keep], stream.x[keep]), 1.0)
    return hist


def histogram_from_frames(frames: np.ndarray, T: int = 5) -> np.ndarray:
    """Aggregate pre-framed data of shape (F, 2, H, W) into T temporal groups.

    Frames are partitioned into T contiguous groups (sizes differ by at most
    one) and summed per polarity.
    """
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[1] != 2:
        raise ValueError(f"expected frames of shape (F, 2, H, W), got {frames.shape}")
    if frames.shape[0] < T:
        raise ValueError(f"need at least T={T} frames, got {frames.shape[0]}")
    groups = np.array_split(np.arange(frames.shape[0]), T)
    out = np.zeros((2 * T, frames.shape[2], frames.shape[3]), dtype=np.float32)
    for b, idx in enumerate(groups):
        summed = frames[idx].sum(axis=0)
        out[b] = summed[0]
        out[T + b] = summed[1]
    return out


def resize_nearest(hist: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour spatial resize of a (C, H, W) histogram."""
    c, h, w = hist.shape
    rows = np.minimum((np.arange(size[0]) * h / size[0]).astype(np.int64), h - 1)
    cols = np.minimum((np.arange(size[1]) * w / size[1]).astype(np.int64), w - 1)
    return np.ascontiguousarray(hist[:, rows][:, :, cols])


@dataclass
class AugmentationConfig:
    pad_fraction: float = 1 / 12
    rotation_max_deg: float = 15.0
    horizontal_flip: bool = False
    enabled: bool = True
    interpolation: str = "nearest"

    def __post_init__(self):
        if not 0 <= self.pad_fraction < 1:
            raise ValueError(f"pad_fraction must be in [0, 1), got {self.pad_fraction}")
        if not 0 <= self.rotation_max_deg < 90:
            raise ValueError(f"rotation_max_deg must be in [0, 90), got {self.rotation_max_deg}")
        if self.interpolation not in ("nearest", "bilinear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


def augment(hist: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Pad-and-crop, optional horizontal flip, then rotation of all channels."""
    if not cfg.enabled:
        return hist
    _, h, w = hist.shape
    ph, pw = round(cfg.pad_fraction * h), round(cfg.pad_fraction * w)
    out = hist
    if ph or pw:
        padded = np.pad(hist, ((0, 0), (ph, ph), (pw, pw)))
        oy = int(rng.integers(0, 2 * ph + 1))
        ox = int(rng.integers(0, 2 * pw + 1))
        out = padded[:, oy:oy + h, ox:ox + w]
    if cfg.horizontal_flip and rng.random() < 0.5:
        out = out[:, :, ::-1]
    if cfg.rotation_max_deg > 0:
        angle = float(rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg))
        order = 0 if cfg.interpolation == "nearest" else 1
        out = ndimage.rotate(out, angle, axes=(2, 1), reshape=False, order=order, mode="constant", cval=0.0)
    return np.ascontiguousarray(out, dtype=hist.dtype)


@dataclass
class LabeledSample:
    histogram: np.ndarray
    subject_id: int
    target_label: int
    sample_key: str

    @property
    def T(self) -> int:
        return self.histogram.shape[0] // 2


@dataclass
class ReIdSplit:
    query: list[LabeledSample]
    gallery: list[LabeledSample]
    exclusion_rule: ExclusionRule

    def candidate_mask(self, query: LabeledSample) -> np.ndarray:
        """Boolean mask over the gallery of entries eligible for ``query``."""
        if self.exclusion_rule is ExclusionRule.NONE:
            return np.ones(len(self.gallery), dtype=bool)
        return np.array(
            [not (g.subject_id == query.subject_id and g.target_label == query.target_label) for g in self.gallery],
            dtype=bool,
        )

    def validate(self):
        qkeys = {s.sample_key for s in self.query}
        if qkeys & {s.sample_key for s in self.gallery}:
            raise ValueError("query and gallery share sample keys")
        for q in self.query:
            mask = self.candidate_mask(q)
            if not any(g.subject_id == q.subject_id for g, m in zip(self.gallery, mask) if m):
                raise ValueError(f"query {q.sample_key} has no same-subject gallery entry")


def seed_from_key(key: str, salt: int = 0) -> int:
    digest = hashlib.sha256(f"{salt}:{key}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def build_reid_split(samples: list[LabeledSample], rule: SplitProtocol | str, seed: int = 0) -> ReIdSplit:
    """Query/gallery construction for the two dataset protocols.

    DVS_GESTURE: one random sample per (subject, label) is a query; every other
    sample is gallery, and same-(subject, label) gallery entries are excluded
    at evaluation. SEE: two random samples per subject are queries, the rest
    gallery, no exclusion.
    """
    rule = SplitProtocol(rule)
    rng = np.random.default_rng(seed)
    ordered = sorted(samples, key=lambda s: s.sample_key)
    by_subject: dict[int, list[LabeledSample]] = {}
    for s in ordered:
        by_subject.setdefault(s.subject_id, []).append(s)

    query_keys: set[str] = set()
    if rule is SplitProtocol.DVS_GESTURE:
        lacking = [sid for sid, ss in by_subject.items() if len({s.target_label for s in ss}) < 2]
        if lacking:
            raise ValueError(f"subjects with fewer than 2 target labels (no valid gallery): {sorted(lacking)}")
        groups: dict[tuple[int, int], list[LabeledSample]] = {}
        for s in ordered:
            groups.setdefault((s.subject_id, s.target_label), []).append(s)
        for pair in sorted(groups):
            members = groups[pair]
            query_keys.add(members[int(rng.integers(len(members)))].sample_key)
        exclusion = ExclusionRule.SAME_SUBJECT_AND_LABEL
    else:
        lacking = [sid for sid, ss in by_subject.items() if len(ss) < 3]
        if lacking:
            raise ValueError(f"subjects with fewer than 3 samples (2 queries + 1 gallery): {sorted(lacking)}")
        for sid in sorted(by_subject):
            members = by_subject[sid]
            for i in rng.choice(len(members), size=2, replace=False):
                query_keys.add(members[int(i)].sample_key)
        exclusion = ExclusionRule.NONE

    split = ReIdSplit(
        query=[s for s in ordered if s.sample_key in query_keys],
        gallery=[s for s in ordered if s.sample_key not in query_keys],
        exclusion_rule=exclusion,
    )
    split.validate()
    return split


def train_val_split(samples: list[LabeledSample], val_per_pair: int, seed: int = 0):
    """Hold out ``val_per_pair`` samples from every (subject, label) group."""
    rng = np.random.default_rng(seed)
    groups: dict[tuple[int, int], list[LabeledSample]] = {}
    for s in sorted(samples, key=lambda s: s.sample_key):
        groups.setdefault((s.subject_id, s.target_label), []).append(s)
    train, val = [], []
    for pair in sorted(groups):
        members = groups[pair]
        if len(members) <= val_per_pair:
            raise ValueError(f"group {pair} has {len(members)} samples, cannot hold out {val_per_pair}")
        held = set(rng.choice(len(members), size=val_per_pair, replace=False).tolist())
        for i, s in enumerate(members):
            (val if i in held else train).append(s)
    return train, val


@dataclass
class EventDataset:
    """Train/validation samples plus the label ranges and split protocol."""

    train: list[LabeledSample]
    val: list[LabeledSample]
    n_subjects: int
    n_classes: int
    protocol: SplitProtocol = SplitProtocol.DVS_GESTURE
    split_seed: int = 0
    _split: ReIdSplit | None = field(default=None, repr=False)

    @property
    def reid_split(self) -> ReIdSplit:
        if self._split is None:
            self._split = build_reid_split(self.val, self.protocol, seed=self.split_seed)
        return self._split

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.train[0].histogram.shape)

    @classmethod
    def from_samples(cls, samples, val_per_pair=3, protocol=SplitProtocol.DVS_GESTURE, seed=0, n_subjects=None, n_classes=None):
        train, val = train_val_split(samples, val_per_pair, seed=seed)
        return cls(
            train=train,
            val=val,
            n_subjects=n_subjects or (max(s.subject_id for s in samples) + 1),
            n_classes=n_classes or (max(s.target_label for s in samples) + 1),
            protocol=SplitProtocol(protocol),
            split_seed=seed,
        )

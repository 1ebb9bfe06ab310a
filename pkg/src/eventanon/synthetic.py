"""Desk-scale synthetic event corpus with recoverable identity and motion cues.

Every sample mixes three event populations:

* a static per-subject signature: a few tight spots at fixed pixels, each with
  its own polarity bias, firing uniformly over the whole recording;
* a class-specific moving blob crossing the sensor in one of
  ``n_target_classes`` directions, leading edge positive, trailing edge negative;
* uniform background activity.

The signature carries identity only and the blob carries the class only, so
setting either strength to zero removes that information entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .events import EventStream, LabeledSample, build_histogram

SIGNATURE_SHARE = 0.15
MOTION_SHARE = 0.45
DURATION_US = 1_000_000


@dataclass
class SyntheticDatasetSpec:
    n_subjects: int = 8
    n_target_classes: int = 4
    samples_per_pair: int = 8
    resolution: tuple[int, int] = (16, 16)
    T: int = 5
    events_per_sample: int = 1500
    identity_signature_strength: float = 1.0
    motion_pattern_strength: float = 1.0
    seed: int = 0
    n_signature_spots: int = 8

    def __post_init__(self):
        self.resolution = tuple(int(v) for v in self.resolution)
        for name in ("n_subjects", "n_target_classes", "samples_per_pair", "T", "events_per_sample", "n_signature_spots"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if min(self.resolution) < 4:
            raise ValueError(f"resolution too small: {self.resolution}")
        for name in ("identity_signature_strength", "motion_pattern_strength"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")


def _subject_signatures(spec: SyntheticDatasetSpec, rng: np.random.Generator):
    h, w = spec.resolution
    sigs = []
    for _ in range(spec.n_subjects):
        ys = rng.integers(1, h - 1, size=spec.n_signature_spots)
        xs = rng.integers(1, w - 1, size=spec.n_signature_spots)
        weight = rng.uniform(0.5, 1.5, size=spec.n_signature_spots)
        pos_prob = rng.uniform(0.1, 0.9, size=spec.n_signature_spots)
        sigs.append((ys, xs, weight / weight.sum(), pos_prob))
    return sigs


def _sample_stream(spec, signature, label, rng: np.random.Generator) -> EventStream:
    h, w = spec.resolution
    n_total = int(rng.poisson(spec.events_per_sample))
    share_sig = SIGNATURE_SHARE * spec.identity_signature_strength
    share_mot = MOTION_SHARE * spec.motion_pattern_strength
    n_sig, n_mot, n_bg = rng.multinomial(n_total, [share_sig, share_mot, 1.0 - share_sig - share_mot])

    # identity spots, jittered by one pixel at most
    ys, xs, weight, pos_prob = signature
    spot = rng.choice(len(weight), size=n_sig, p=weight)
    sy = np.clip(ys[spot] + rng.integers(-1, 2, size=n_sig) * (rng.random(n_sig) < 0.2), 0, h - 1)
    sx = np.clip(xs[spot] + rng.integers(-1, 2, size=n_sig) * (rng.random(n_sig) < 0.2), 0, w - 1)
    sp = (rng.random(n_sig) < pos_prob[spot]).astype(np.int64)
    st = rng.random(n_sig)

    # class motion: blob sweeping through the centre along the class direction
    angle = 2 * np.pi * label / spec.n_target_classes
    direction = np.array([np.sin(angle), np.cos(angle)])
    centre = np.array([(h - 1) / 2, (w - 1) / 2]) + rng.normal(0, 0.75, size=2)
    reach = 0.35 * min(h, w)
    mt = rng.random(n_mot)
    offset = rng.normal(0, 0.12 * min(h, w), size=(n_mot, 2))
    pos = centre + (2 * mt[:, None] - 1) * reach * direction + offset
    my = np.clip(np.rint(pos[:, 0]), 0, h - 1).astype(np.int64)
    mx = np.clip(np.rint(pos[:, 1]), 0, w - 1).astype(np.int64)
    mp = (offset @ direction > 0).astype(np.int64)

    by = rng.integers(0, h, size=n_bg)
    bx = rng.integers(0, w, size=n_bg)
    bp = rng.integers(0, 2, size=n_bg)
    bt = rng.random(n_bg)

    t = np.concatenate([st, mt, bt])
    order = np.argsort(t, kind="stable")
    return EventStream(
        x=np.concatenate([sx, mx, bx])[order],
        y=np.concatenate([sy, my, by])[order],
        t=(t[order] * DURATION_US).astype(np.int64),
        p=np.concatenate([sp, mp, bp])[order],
        width=w,
        height=h,
    )


def generate_synthetic_streams(spec: SyntheticDatasetSpec):
    """Yield (subject, label, index, EventStream) in a fixed order."""
    rng = np.random.default_rng(spec.seed)
    signatures = _subject_signatures(spec, rng)
    for subject in range(spec.n_subjects):
        for label in range(spec.n_target_classes):
            for i in range(spec.samples_per_pair):
                yield subject, label, i, _sample_stream(spec, signatures[subject], label, rng)


def generate_synthetic_dataset(spec: SyntheticDatasetSpec) -> list[LabeledSample]:
    return [
        LabeledSample(
            histogram=build_histogram(stream, spec.T),
            subject_id=subject,
            target_label=label,
            sample_key=f"s{subject:03d}_c{label:02d}_{i:04d}",
        )
        for subject, label, i, stream in generate_synthetic_streams(spec)
    ]


def probe_accuracy(samples: list[LabeledSample], attribute: str = "subject_id", seed: int = 0):
    """Held-out accuracy of a nearest-class-mean probe on standardised histograms.

    Half of each class is used to fit the class means, the other half is
    scored. Returns (n_correct, n_scored, n_classes).
    """
    rng = np.random.default_rng(seed)
    labels = np.array([getattr(s, attribute) for s in samples])
    feats = np.stack([s.histogram.reshape(-1) for s in samples]).astype(np.float64)
    classes = np.unique(labels)
    fit_idx, test_idx = [], []
    for c in classes:
        idx = rng.permutation(np.flatnonzero(labels == c))
        half = len(idx) // 2
        fit_idx.extend(idx[:half])
        test_idx.extend(idx[half:])
    fit_idx, test_idx = np.array(fit_idx), np.array(test_idx)
    mean = feats[fit_idx].mean(0)
    std = feats[fit_idx].std(0) + 1e-6
    z = (feats - mean) / std
    centroids = np.stack([z[fit_idx][labels[fit_idx] == c].mean(0) for c in classes])
    d = ((z[test_idx][:, None, :] - centroids[None]) ** 2).sum(-1)
    pred = classes[np.argmin(d, axis=1)]
    return int((pred == labels[test_idx]).sum()), len(test_idx), len(classes)


def probe_pvalue(samples, attribute="subject_id", seed=0) -> float:
    """One-sided binomial p-value of the probe beating chance."""
    k, n, c = probe_accuracy(samples, attribute, seed)
    return float(stats.binomtest(k, n, 1.0 / c, alternative="greater").pvalue)

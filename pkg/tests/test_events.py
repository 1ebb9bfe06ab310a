import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventanon.events import (
    AugmentationConfig,
    EventStream,
    ExclusionRule,
    LabeledSample,
    SplitProtocol,
    augment,
    build_histogram,
    build_reid_split,
    histogram_from_frames,
    resize_nearest,
)


def random_stream(rng, n, w=16, h=16):
    t = np.sort(rng.integers(0, 10_000, size=n))
    return EventStream(rng.integers(0, w, n), rng.integers(0, h, n), t, rng.integers(0, 2, n), w, h)


def test_single_event_placement():
    s = EventStream.from_tuples([(3, 2, 0, 1)], width=4, height=4)
    hist = build_histogram(s, T=5)
    expected = np.zeros((10, 4, 4), dtype=np.float32)
    expected[5, 2, 3] = 1
    np.testing.assert_array_equal(hist, expected)


def test_empty_stream_is_all_zero():
    s = EventStream.from_tuples([], width=8, height=8)
    hist = build_histogram(s, T=5)
    assert hist.shape == (10, 8, 8)
    assert not hist.any()


def test_mass_and_polarity_partition():
    rng = np.random.default_rng(0)
    s = random_stream(rng, 1000)
    hist = build_histogram(s, T=5)
    assert hist.sum() == 1000
    assert hist[:5].sum() == np.sum(s.p == 0)
    assert hist[5:].sum() == np.sum(s.p == 1)


def _loop_histogram(s, T):
    # per-event reference: bin = floor((t - t0) * T / span), last bin closed
    out = np.zeros((2 * T, s.height, s.width))
    t0, span = s.t[0], s.t[-1] - s.t[0]
    for x, y, t, p in zip(s.x, s.y, s.t, s.p):
        b = 0 if span == 0 else min(int((t - t0) * T // span), T - 1)
        out[p * T + b, y, x] += 1
    return out


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 200), T=st.integers(1, 7), seed=st.integers(0, 2**32 - 1))
def test_histogram_matches_event_loop(n, T, seed):
    s = random_stream(np.random.default_rng(seed), n, w=6, h=5)
    np.testing.assert_array_equal(build_histogram(s, T), _loop_histogram(s, T))


def test_last_event_lands_in_last_bin():
    s = EventStream.from_tuples([(0, 0, 0, 0), (1, 1, 100, 0)], width=2, height=2)
    hist = build_histogram(s, T=5)
    assert hist[0, 0, 0] == 1 and hist[4, 1, 1] == 1


def test_single_timestamp_stream_goes_to_bin_zero():
    s = EventStream.from_tuples([(0, 0, 7, 0), (1, 0, 7, 1)], width=2, height=1)
    hist = build_histogram(s, T=3)
    assert hist[0, 0, 0] == 1 and hist[3, 0, 1] == 1


def test_window_option_drops_late_events():
    s = EventStream.from_tuples([(0, 0, 0, 0), (0, 0, 50, 0), (0, 0, 500, 0)], width=1, height=1)
    hist = build_histogram(s, T=2, window_us=100)
    assert hist.sum() == 2
    assert hist[1, 0, 0] == 1


@pytest.mark.parametrize("bad", [(7, 0, 0, 0), (0, 4, 0, 0), (0, 0, 0, 2)])
def test_invalid_events_rejected(bad):
    s = EventStream.from_tuples([(0, 0, 0, 0), bad], width=4, height=4)
    with pytest.raises(ValueError, match="event 1"):
        build_histogram(s)


def test_decreasing_timestamps_rejected():
    s = EventStream.from_tuples([(0, 0, 5, 0), (0, 0, 4, 0)], width=1, height=1)
    with pytest.raises(ValueError, match="decreases"):
        build_histogram(s)


def test_frames_adapter_partitions_into_T_groups():
    frames = np.ones((12, 2, 3, 3), dtype=np.float32)
    frames[:, 1] *= 2
    hist = histogram_from_frames(frames, T=5)
    # 12 frames into 5 groups: sizes 3,3,2,2,2
    np.testing.assert_array_equal(hist[:5, 0, 0], [3, 3, 2, 2, 2])
    np.testing.assert_array_equal(hist[5:, 0, 0], [6, 6, 4, 4, 4])
    assert hist.sum() == frames.sum()


def test_resize_nearest():
    hist = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
    up = resize_nearest(hist, (8, 8))
    assert up.shape == (1, 8, 8)
    np.testing.assert_array_equal(up[0, ::2, ::2], hist[0])
    np.testing.assert_array_equal(resize_nearest(up, (4, 4)), hist)


# ------------------------------------------------------------------ augmentation


class ForcedRng:
    """Stand-in random source returning fixed draws."""

    def __init__(self, offset, flip, angle=0.0):
        self.offset, self.flip, self.angle = offset, flip, angle

    def integers(self, low, high):
        return self.offset

    def random(self):
        return 0.0 if self.flip else 1.0

    def uniform(self, low, high):
        return self.angle


def test_augment_disabled_is_passthrough():
    h = np.random.default_rng(0).random((10, 12, 12)).astype(np.float32)
    out = augment(h, AugmentationConfig(enabled=False), np.random.default_rng(1))
    np.testing.assert_array_equal(out, h)


def test_centered_crop_is_identity():
    h = np.random.default_rng(0).random((10, 12, 12)).astype(np.float32)
    cfg = AugmentationConfig(pad_fraction=1 / 12, rotation_max_deg=0, horizontal_flip=False)
    out = augment(h, cfg, ForcedRng(offset=1, flip=False))
    np.testing.assert_array_equal(out, h)


def test_forced_flip_matches_index_reversal():
    h = np.random.default_rng(0).random((4, 6, 6)).astype(np.float32)
    cfg = AugmentationConfig(pad_fraction=0, rotation_max_deg=0, horizontal_flip=True)
    out = augment(h, cfg, ForcedRng(offset=0, flip=True))
    ref = np.empty_like(h)
    for c in range(4):
        for y in range(6):
            for x in range(6):
                ref[c, y, x] = h[c, y, 5 - x]
    np.testing.assert_array_equal(out, ref)


def test_uniform_hist_flip_unchanged_in_interior():
    h = np.full((2, 6, 6), 3.0, dtype=np.float32)
    cfg = AugmentationConfig(pad_fraction=0, rotation_max_deg=0, horizontal_flip=True)
    np.testing.assert_array_equal(augment(h, cfg, ForcedRng(0, True)), h)


def test_crop_shift_moves_content():
    h = np.zeros((1, 12, 12), dtype=np.float32)
    h[0, 5, 5] = 1
    cfg = AugmentationConfig(pad_fraction=1 / 12, rotation_max_deg=0)
    out = augment(h, cfg, ForcedRng(offset=0, flip=False))  # crop at top-left of padded frame
    assert out[0, 6, 6] == 1 and out.sum() == 1


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), size=st.integers(8, 20))
def test_augment_shape_and_nonnegative(seed, size):
    rng = np.random.default_rng(seed)
    h = rng.poisson(2.0, size=(10, size, size)).astype(np.float32)
    out = augment(h, AugmentationConfig(horizontal_flip=True), rng)
    assert out.shape == h.shape
    assert (out >= 0).all()
    # nearest-neighbour resampling keeps values from the input set (or the zero pad)
    assert set(np.unique(out)) <= set(np.unique(h)) | {0.0}


@pytest.mark.parametrize("kw", [{"pad_fraction": 1.0}, {"pad_fraction": -0.1}, {"rotation_max_deg": 90}])
def test_augmentation_config_validation(kw):
    with pytest.raises(ValueError):
        AugmentationConfig(**kw)


# ------------------------------------------------------------------ splits


def make_samples(n_subjects, n_labels, per_pair):
    out = []
    for s in range(n_subjects):
        for lab in range(n_labels):
            for i in range(per_pair):
                out.append(LabeledSample(np.zeros((2, 1, 1), np.float32), s, lab, f"s{s}_l{lab}_{i}"))
    return out


def test_dvs_gesture_split_by_hand():
    samples = make_samples(2, 2, 3)
    split = build_reid_split(samples, SplitProtocol.DVS_GESTURE, seed=0)
    assert split.exclusion_rule is ExclusionRule.SAME_SUBJECT_AND_LABEL
    assert len(split.query) == 4
    assert {(q.subject_id, q.target_label) for q in split.query} == {(0, 0), (0, 1), (1, 0), (1, 1)}
    assert len(split.gallery) == 8
    for q in split.query:
        mask = split.candidate_mask(q)
        valid = [g for g, m in zip(split.gallery, mask) if m]
        # 8 gallery samples minus the 2 left over from the query's (subject, label) pair
        assert len(valid) == 6
        assert all((g.subject_id, g.target_label) != (q.subject_id, q.target_label) for g in valid)
        # same subject, other label: 3 samples, one of which is a query
        assert sum(g.subject_id == q.subject_id for g in valid) == 2


def test_see_split_sizes():
    split = build_reid_split(make_samples(3, 7, 1), SplitProtocol.SEE, seed=0)
    assert len(split.query) == 6
    assert len(split.gallery) == 15
    assert split.exclusion_rule is ExclusionRule.NONE
    for sid in range(3):
        assert sum(q.subject_id == sid for q in split.query) == 2


@pytest.mark.parametrize("protocol", list(SplitProtocol))
def test_split_deterministic_and_disjoint(protocol):
    samples = make_samples(4, 3, 3)
    a = build_reid_split(samples, protocol, seed=5)
    b = build_reid_split(list(reversed(samples)), protocol, seed=5)
    assert [s.sample_key for s in a.query] == [s.sample_key for s in b.query]
    assert [s.sample_key for s in a.gallery] == [s.sample_key for s in b.gallery]
    assert not {s.sample_key for s in a.query} & {s.sample_key for s in a.gallery}
    assert len(a.query) + len(a.gallery) == len(samples)


def test_split_rejects_insufficient_subjects():
    samples = make_samples(2, 1, 3)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        build_reid_split(samples, SplitProtocol.DVS_GESTURE)
    with pytest.raises(ValueError, match=r"\[0\]"):
        build_reid_split(make_samples(1, 2, 1) + make_samples(2, 3, 1)[3:], SplitProtocol.SEE)

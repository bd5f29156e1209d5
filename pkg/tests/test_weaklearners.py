import numpy as np
import pytest

from beblid.imaging import GrayImage, integral_image, integral_stack, round_half_away
from beblid.weaklearners import (
    DEFAULT_SCALES,
    LabeledPair,
    PixelPairFeature,
    ThresholdedWeakLearner,
    _quantize_ratio,
    best_weak_learner,
    feature_response,
    pair_agreement,
    sample_candidates,
    scale_responses,
    threshold_rate,
    wl_response,
)


def brute_accuracy(v1, v2, labels, weights, threshold):
    """Direct definition: agreement under one threshold vs the labels."""
    h1 = np.where(v1 <= threshold, 1, -1)
    h2 = np.where(v2 <= threshold, 1, -1)
    return float(weights[(h1 * h2) == labels].sum())


def random_patches(rng, n, side=16):
    return rng.integers(0, 256, size=(n, side, side)).astype(np.uint8)


# --------------------------------------------------------------------------
# responses
# --------------------------------------------------------------------------


def test_feature_response_constant_patch():
    ii = integral_image(GrayImage(np.full((16, 16), 99, dtype=np.uint8)))
    assert feature_response(ii, PixelPairFeature((4, 4), (11, 11), 3)) == 0


def test_quantization_rounds_halves_away_from_zero():
    # box features with odd sizes never produce exact halves, so the rule is
    # pinned on the quantizer itself
    assert _quantize_ratio(7, 2) == 4
    assert _quantize_ratio(-7, 2) == -4
    assert _quantize_ratio(5, 2) == 3
    assert round_half_away(3.5) == 4


def test_feature_response_random_oracle(rng):
    from beblid.imaging import avg_box_feature

    for _ in range(200):
        side = 16
        img = GrayImage(random_patches(rng, 1, side)[0])
        ii = integral_image(img)
        s = int(rng.choice([3, 5]))
        half = s // 2
        p1 = tuple(int(v) for v in rng.integers(half, side - half, size=2))
        p2 = tuple(int(v) for v in rng.integers(half, side - half, size=2))
        f = avg_box_feature(ii, p1, p2, s)
        assert feature_response(ii, PixelPairFeature(p1, p2, s)) == int(round_half_away(f))


def test_scale_responses_match_scalar(rng):
    patches = random_patches(rng, 20, 20)
    stack = integral_stack(patches)
    p1, p2 = (7, 8), (12, 6)
    resp = scale_responses(stack, p1, p2, (3, 5, 7))
    for si, s in enumerate((3, 5, 7)):
        feat = PixelPairFeature(p1, p2, s)
        for i in range(20):
            ii = integral_image(GrayImage(patches[i]))
            assert resp[si, i] == feature_response(ii, feat)


def test_scale_responses_rejects_out_of_bounds(rng):
    stack = integral_stack(random_patches(rng, 2, 8))
    with pytest.raises(ValueError, match="out of bounds"):
        scale_responses(stack, (1, 4), (4, 4), (5,))


def test_wl_response_boundary(rng):
    img = GrayImage(random_patches(rng, 1, 16)[0])
    ii = integral_image(img)
    feat = PixelPairFeature((5, 5), (10, 10), 3)
    f = feature_response(ii, feat)
    assert wl_response(ii, ThresholdedWeakLearner(feat, f)) == 1
    assert wl_response(ii, ThresholdedWeakLearner(feat, f - 1)) == -1


def test_wl_response_random_oracle(rng):
    for _ in range(100):
        img = GrayImage(random_patches(rng, 1, 16)[0])
        ii = integral_image(img)
        feat = PixelPairFeature((5, 6), (9, 10), 5)
        t = int(rng.integers(-100, 101))
        expected = 1 if feature_response(ii, feat) <= t else -1
        assert wl_response(ii, ThresholdedWeakLearner(feat, t)) == expected


def test_pair_agreement_identical_patches(rng):
    img = GrayImage(random_patches(rng, 1, 16)[0])
    ii = integral_image(img)
    for t in (-50, 0, 50):
        wl = ThresholdedWeakLearner(PixelPairFeature((4, 4), (11, 11), 3), t)
        assert pair_agreement(wl, ii, ii) == 1


def test_pair_agreement_straddling_threshold(rng):
    # find two patches whose responses differ, then threshold between them
    patches = random_patches(rng, 30, 16)
    feat = PixelPairFeature((4, 4), (11, 11), 5)
    iis = [integral_image(GrayImage(p)) for p in patches]
    vals = [feature_response(ii, feat) for ii in iis]
    i = int(np.argmin(vals))
    j = int(np.argmax(vals))
    assert vals[i] < vals[j]
    wl = ThresholdedWeakLearner(feat, vals[i])
    assert pair_agreement(wl, iis[i], iis[j]) == -1


def test_pair_agreement_is_response_product(rng):
    patches = random_patches(rng, 10, 16)
    iis = [integral_image(GrayImage(p)) for p in patches]
    wl = ThresholdedWeakLearner(PixelPairFeature((5, 5), (9, 9), 3), 2)
    for _ in range(20):
        a, b = rng.integers(0, 10, size=2)
        assert pair_agreement(wl, iis[a], iis[b]) == wl_response(iis[a], wl) * wl_response(
            iis[b], wl
        )


# --------------------------------------------------------------------------
# threshold sweep
# --------------------------------------------------------------------------


def test_threshold_rate_single_positive_pair():
    pairs = [LabeledPair(0, 1, 1)]
    responses = np.array([3, 7])
    result = threshold_rate(pairs, responses, np.array([1.0]))
    assert np.all(np.diff(result.thresholds) > 0)
    for t, acc in zip(result.thresholds, result.accuracies):
        if t < 3 or t >= 7:
            assert acc == 1.0
        else:
            assert acc == 0.0
    # all three bands are represented
    assert (result.thresholds < 3).any()
    assert ((result.thresholds >= 3) & (result.thresholds < 7)).any()
    assert (result.thresholds >= 7).any()


def test_threshold_rate_single_negative_pair():
    pairs = [LabeledPair(0, 1, -1)]
    responses = np.array([3, 7])
    result = threshold_rate(pairs, responses, np.array([1.0]))
    for t, acc in zip(result.thresholds, result.accuracies):
        assert acc == (1.0 if 3 <= t < 7 else 0.0)


def test_threshold_rate_random_vs_brute_force(rng):
    for _ in range(100):
        n_patches = int(rng.integers(4, 40))
        n_pairs = int(rng.integers(1, 60))
        responses = rng.integers(-255, 256, size=n_patches)
        pairs = [
            LabeledPair(int(rng.integers(n_patches)), int(rng.integers(n_patches)),
                        int(rng.choice([-1, 1])))
            for _ in range(n_pairs)
        ]
        weights = rng.uniform(0.0, 1.0, size=n_pairs)
        result = threshold_rate(pairs, responses, weights)
        v1 = responses[[p.x for p in pairs]]
        v2 = responses[[p.y for p in pairs]]
        labels = np.array([p.label for p in pairs])
        assert np.all(np.diff(result.thresholds) > 0)
        for t, acc in zip(result.thresholds, result.accuracies):
            assert acc == pytest.approx(brute_accuracy(v1, v2, labels, weights, t), abs=1e-9)
        # thresholds cover every distinct accuracy band of the exhaustive sweep
        lo, hi = int(responses.min()) - 1, int(responses.max()) + 1
        all_acc = {round(brute_accuracy(v1, v2, labels, weights, t), 9) for t in range(lo, hi + 1)}
        got = {round(float(a), 9) for a in result.accuracies}
        assert got == all_acc


def test_threshold_rate_first_band_is_positive_mass(rng):
    responses = rng.integers(-20, 21, size=10)
    pairs = [LabeledPair(i % 10, (i + 3) % 10, int(rng.choice([-1, 1]))) for i in range(15)]
    weights = rng.uniform(0.1, 1.0, size=15)
    result = threshold_rate(pairs, responses, weights)
    pos_mass = weights[np.array([p.label for p in pairs]) > 0].sum()
    assert result.accuracies[0] == pytest.approx(pos_mass, abs=1e-12)
    assert result.thresholds[0] < responses[[p.x for p in pairs] + [p.y for p in pairs]].min()
    assert np.all(result.accuracies >= -1e-9)
    assert np.all(result.accuracies <= weights.sum() + 1e-9)


def test_threshold_rate_errors():
    with pytest.raises(ValueError, match="empty"):
        threshold_rate([], np.array([1]), np.array([]))
    with pytest.raises(ValueError, match="negative"):
        threshold_rate([LabeledPair(0, 1, 1)], np.array([1, 2]), np.array([-0.5]))


# --------------------------------------------------------------------------
# candidate sampling
# --------------------------------------------------------------------------


def test_sample_candidates_bounds_and_distinct(rng):
    feats = sample_candidates(rng, 500, 32, DEFAULT_SCALES)
    assert len(feats) == 500
    margin = max(DEFAULT_SCALES) // 2
    for f in feats:
        for p in (f.p1, f.p2):
            assert margin <= p[0] <= 31 - margin
            assert margin <= p[1] <= 31 - margin
        assert f.p1 != f.p2


def test_sample_candidates_deterministic():
    a = sample_candidates(np.random.default_rng(5), 100, 32)
    b = sample_candidates(np.random.default_rng(5), 100, 32)
    assert a == b


def test_sample_candidates_patch_too_small():
    with pytest.raises(ValueError, match="too small"):
        sample_candidates(np.random.default_rng(0), 10, 8, (9, 11))


def test_sample_candidates_uniform_chi_square():
    from scipy import stats

    rng = np.random.default_rng(31337)
    feats = sample_candidates(rng, 10_000, 32, DEFAULT_SCALES)
    margin = max(DEFAULT_SCALES) // 2
    span = 32 - 2 * margin  # valid rows/cols per axis
    counts = np.zeros((span, span))
    for f in feats:
        for p in (f.p1, f.p2):
            counts[p[0] - margin, p[1] - margin] += 1
    _, p_value = stats.chisquare(counts.ravel())
    assert p_value > 0.01


# --------------------------------------------------------------------------
# selection
# --------------------------------------------------------------------------


def gradient_patches(n_per_group, side=16, lo=0.0, hi=255.0):
    """Two groups with opposite vertical gradients; separable by a box pair."""
    ramp = np.linspace(lo, hi, side).reshape(side, 1)
    up = np.tile(ramp, (1, side)).astype(np.uint8)
    down = up[::-1].copy()
    return np.stack([up] * n_per_group + [down] * n_per_group)


def test_best_weak_learner_separable():
    patches = gradient_patches(4)
    stack = integral_stack(patches)
    pairs = (
        [LabeledPair(i, j, 1) for i in range(4) for j in range(i + 1, 4)]
        + [LabeledPair(i, j, 1) for i in range(4, 8) for j in range(i + 1, 8)]
        + [LabeledPair(i, j, -1) for i in range(4) for j in range(4, 8)]
    )
    w = np.full(len(pairs), 1.0 / len(pairs))
    candidates = [PixelPairFeature((4, 8), (11, 8), 3)]  # vertical contrast probe
    wl, err = best_weak_learner(candidates, pairs, stack, w, (3, 5))
    assert err == pytest.approx(0.0, abs=1e-12)


def test_best_weak_learner_constant_patches(rng):
    patches = np.full((6, 16, 16), 128, dtype=np.uint8)
    stack = integral_stack(patches)
    pairs = [LabeledPair(0, 1, 1), LabeledPair(2, 3, -1), LabeledPair(4, 5, -1)]
    w = np.array([0.5, 0.25, 0.25])
    candidates = sample_candidates(rng, 5, 16, (3, 5))
    wl, err = best_weak_learner(candidates, pairs, stack, w, (3, 5))
    # everything agrees (+1), so only the positive pair is right
    assert err == pytest.approx(0.5, abs=1e-12)


def test_best_weak_learner_exhaustive_oracle(rng):
    patches = random_patches(rng, 25, 16)
    stack = integral_stack(patches)
    scales = (3, 5)
    pairs = [
        LabeledPair(int(rng.integers(25)), int(rng.integers(25)), int(rng.choice([-1, 1])))
        for _ in range(200)
    ]
    w = rng.uniform(0.0, 1.0, size=200)
    w /= w.sum()
    candidates = sample_candidates(rng, 20, 16, scales)
    wl, err = best_weak_learner(candidates, pairs, stack, w, scales)

    labels = np.array([p.label for p in pairs])
    xi = [p.x for p in pairs]
    yi = [p.y for p in pairs]
    best = None
    for cand in candidates:
        for s in scales:
            resp = scale_responses(stack, cand.p1, cand.p2, (s,))[0]
            v1, v2 = resp[xi], resp[yi]
            for t in range(int(resp.min()) - 1, int(resp.max()) + 1):
                e = 1.0 - brute_accuracy(v1, v2, labels, w, t)
                if best is None or e < best[0] - 1e-12:
                    best = (e, cand.p1, cand.p2, s)
    assert err == pytest.approx(best[0], abs=1e-9)
    assert (wl.feature.p1, wl.feature.p2, wl.feature.s) == (best[1], best[2], best[3])


def test_best_weak_learner_deterministic(rng):
    patches = random_patches(rng, 10, 16)
    stack = integral_stack(patches)
    pairs = [LabeledPair(i, (i + 1) % 10, 1 if i % 2 else -1) for i in range(10)]
    w = np.full(10, 0.1)
    candidates = sample_candidates(np.random.default_rng(3), 15, 16, (3, 5))
    first = best_weak_learner(candidates, pairs, stack, w, (3, 5))
    second = best_weak_learner(candidates, pairs, stack, w, (3, 5))
    assert first == second


def test_best_weak_learner_errors(rng):
    stack = integral_stack(random_patches(rng, 4, 16))
    with pytest.raises(ValueError, match="empty candidate"):
        best_weak_learner([], [LabeledPair(0, 1, 1)], stack, np.array([1.0]), (3,))

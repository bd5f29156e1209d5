import numpy as np
import pytest

from beblid import DescriptorModel, Jitter, TrainedEnsemble, synth_patchset
from beblid.weaklearners import PixelPairFeature, ThresholdedWeakLearner


def random_model(
    k,
    seed=0,
    mode="binary",
    side=32,
    scales=(3, 5, 7, 9, 11, 13, 15),
    scale_multiplier=1.0,
):
    """A structurally valid model with random learners, no training needed."""
    rng = np.random.default_rng(seed)
    margin = max(scales) // 2
    lo, hi = margin, side - 1 - margin
    learners = []
    for _ in range(k):
        s = int(rng.choice(scales))
        p1 = (int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1)))
        p2 = (int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1)))
        learners.append(
            ThresholdedWeakLearner(PixelPairFeature(p1, p2, s), int(rng.integers(-40, 41)))
        )
    alphas = np.ones(k) if mode == "binary" else rng.uniform(0.1, 2.0, k)
    ensemble = TrainedEnsemble(learners, alphas, gamma=1.0, mode=mode, patch_side=side)
    return DescriptorModel(ensemble, side, scale_multiplier)


def moderate_jitter():
    return Jitter(noise_sigma=8.0, shift_range=1.0, rotation_range=10.0, brightness_range=20.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_patchset():
    return synth_patchset(np.random.default_rng(99), 60, 4, moderate_jitter())

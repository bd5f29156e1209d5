"""AdaBoost training of box-pair weak-learner ensembles.

Two modes share one loop.  In "real" mode each selected learner gets the
classic AdaBoost weight derived from its weighted error; in "binary" mode all
learners share a unit weight so the ensemble binarizes cleanly, and training
stops on its own once no candidate beats random guessing.  In both modes the
learning rate scales the exponent of the loss and of the per-round sample
weight update, so smaller rates take more rounds to exhaust the data.

Sample weights can optionally be rebalanced after every update so that the
positive and negative classes each carry half of the total mass.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .imaging import integral_stack
from .weaklearners import (
    DEFAULT_SCALES,
    LabeledPair,
    ThresholdedWeakLearner,
    _pair_arrays,
    best_weak_learner,
    sample_candidates,
    scale_responses,
)

__all__ = [
    "MODE_BINARY",
    "MODE_REAL",
    "RoundRecord",
    "TrainConfig",
    "TrainedEnsemble",
    "TrainingError",
    "TrainingRun",
    "adaboost_train",
    "balance_class_weights",
    "beblid_train",
    "build_unbalanced_set",
    "ensemble_responses",
    "exp_loss",
    "positive_pair_count",
    "recommended_gamma",
]

MODE_REAL = "real"
MODE_BINARY = "binary"

# numeric guards: error clamp for the alpha formula, and the strict margin a
# learner must clear below 0.5 to count as better than random guessing
_ERR_CLAMP = 1e-10
_RANDOM_GUESS_MARGIN = 1e-12


class TrainingError(RuntimeError):
    """Raised when training cannot start or produces no usable learner."""


@dataclass
class TrainConfig:
    """Knobs for one training run."""

    k_max: int
    gamma: float
    n_candidates: int = 500
    scales: tuple[int, ...] = DEFAULT_SCALES
    balanced_priors: bool = False
    seed: int = 0
    mode: str = MODE_BINARY
    resample_candidates: bool = True
    verbose: bool = False

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")
        if self.mode not in (MODE_REAL, MODE_BINARY):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.scales = tuple(sorted(self.scales))


@dataclass(frozen=True)
class RoundRecord:
    """Per-round training log entry."""

    round_index: int
    learner: ThresholdedWeakLearner
    alpha: float
    error: float
    loss: float
    weight_sum: float
    positive_mass: float


@dataclass
class TrainedEnsemble:
    """Ordered weak learners with their combination weights."""

    learners: list[ThresholdedWeakLearner]
    alphas: np.ndarray
    gamma: float
    mode: str
    patch_side: int
    positive_ratio: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        if self.alphas.shape != (len(self.learners),):
            raise ValueError("need one alpha per learner")
        if self.mode == MODE_BINARY and len(self.learners) and not np.all(self.alphas == 1.0):
            raise ValueError("binary mode requires unit alphas")
        if self.mode == MODE_REAL and len(self.learners) and not np.all(self.alphas > 0):
            raise ValueError("real mode requires positive alphas")

    def __len__(self) -> int:
        return len(self.learners)


@dataclass
class TrainingRun:
    """Result of a training run: the ensemble plus its round-by-round log."""

    ensemble: TrainedEnsemble
    rounds: list[RoundRecord] = field(default_factory=list)
    stopped_early: bool = False

    @property
    def final_loss(self) -> float:
        return self.rounds[-1].loss if self.rounds else float("nan")


def balance_class_weights(weights: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Rescale weights so each class carries exactly half the total mass.

    Within-class proportions are preserved.  Raises when either class has no
    weight mass.
    """
    w = np.asarray(weights, dtype=np.float64).copy()
    lab = np.asarray(labels)
    pos = lab > 0
    neg = lab < 0
    mass_pos = float(w[pos].sum())
    mass_neg = float(w[neg].sum())
    if mass_pos <= 0.0 or mass_neg <= 0.0:
        raise ValueError("both classes need positive weight mass")
    w[pos] *= 0.5 / mass_pos
    w[neg] *= 0.5 / mass_neg
    return w


def ensemble_responses(ensemble: TrainedEnsemble, stack: np.ndarray) -> np.ndarray:
    """Signed responses of every learner on every patch, shape (K, n)."""
    n = stack.shape[0]
    out = np.empty((len(ensemble.learners), n), dtype=np.int8)
    for k, wl in enumerate(ensemble.learners):
        resp = scale_responses(stack, wl.feature.p1, wl.feature.p2, (wl.feature.s,))[0]
        out[k] = np.where(resp <= wl.threshold, 1, -1)
    return out


def exp_loss(ensemble: TrainedEnsemble, stack: np.ndarray, pairs: Sequence[LabeledPair]) -> float:
    """Exponential similarity loss of the ensemble over the labeled pairs.

    Each pair contributes exp(-gamma * label * sum_k alpha_k * agreement_k).
    An empty ensemble therefore scores exactly the number of pairs.
    """
    xi, yi, labels = _pair_arrays(pairs)
    if len(ensemble.learners) == 0:
        return float(len(pairs))
    h = ensemble_responses(ensemble, stack)
    margins = (ensemble.alphas[:, None] * (h[:, xi] * h[:, yi]).astype(np.float64)).sum(axis=0)
    return float(np.exp(-ensemble.gamma * labels * margins).sum())


def recommended_gamma(mode: str, positive_ratio: float) -> float:
    """Reference learning rates for 512-component training runs.

    Heavily unbalanced sets (about 5% positives) need a smaller rate than
    mildly unbalanced or balanced ones.
    """
    if mode == MODE_REAL:
        return 0.4 if positive_ratio <= 0.1 else 0.1
    if mode == MODE_BINARY:
        return 0.0025 if positive_ratio <= 0.1 else 0.0055
    raise ValueError(f"unknown mode {mode!r}")


def _train(patch_set, pairs: Sequence[LabeledPair], config: TrainConfig) -> TrainingRun:
    patches = getattr(patch_set, "patches", patch_set)
    stack = integral_stack(patches)
    side = patches.shape[1]
    xi, yi, labels = _pair_arrays(pairs)
    n = len(pairs)
    n_pos = int((labels > 0).sum())
    if n_pos == 0 or n_pos == n:
        raise TrainingError("training needs at least one positive and one negative pair")

    w = np.full(n, 1.0 / n)
    if config.balanced_priors:
        w = balance_class_weights(w, labels)

    rng = np.random.default_rng(config.seed)
    candidates = sample_candidates(rng, config.n_candidates, side, config.scales)

    learners: list[ThresholdedWeakLearner] = []
    alphas: list[float] = []
    rounds: list[RoundRecord] = []
    margins = np.zeros(n)
    stopped_early = False

    for k in range(config.k_max):
        if config.resample_candidates and k > 0:
            candidates = sample_candidates(rng, config.n_candidates, side, config.scales)
        wl, err = best_weak_learner(candidates, pairs, stack, w, config.scales)
        if err >= 0.5 - _RANDOM_GUESS_MARGIN:
            if k == 0:
                raise TrainingError("no usable weak learner")
            stopped_early = True
            break

        if config.mode == MODE_REAL:
            eps = min(max(err, _ERR_CLAMP), 0.5 - _ERR_CLAMP)
            alpha = 0.5 * math.log((1.0 - eps) / eps)
        else:
            alpha = 1.0

        resp = scale_responses(stack, wl.feature.p1, wl.feature.p2, (wl.feature.s,))[0]
        h = np.where(resp <= wl.threshold, 1, -1).astype(np.int64)
        agree = (h[xi] * h[yi]).astype(np.float64)

        w = w * np.exp(-config.gamma * alpha * labels * agree)
        w /= w.sum()
        if config.balanced_priors:
            w = balance_class_weights(w, labels)

        learners.append(wl)
        alphas.append(alpha)
        margins += alpha * agree
        loss = float(np.exp(-config.gamma * labels * margins).sum())
        rounds.append(
            RoundRecord(
                round_index=k + 1,
                learner=wl,
                alpha=alpha,
                error=err,
                loss=loss,
                weight_sum=float(w.sum()),
                positive_mass=float(w[labels > 0].sum()),
            )
        )
        if config.verbose:
            f = wl.feature
            print(
                f"round={k + 1} p1=({f.p1[0]},{f.p1[1]}) p2=({f.p2[0]},{f.p2[1]}) "
                f"s={f.s} T={wl.threshold} err={err:.6f} loss={loss:.6f}",
                file=sys.stderr,
            )

    ensemble = TrainedEnsemble(
        learners=learners,
        alphas=np.asarray(alphas),
        gamma=config.gamma,
        mode=config.mode,
        patch_side=side,
        positive_ratio=n_pos / n,
        seed=config.seed,
    )
    return TrainingRun(ensemble=ensemble, rounds=rounds, stopped_early=stopped_early)


def adaboost_train(patch_set, pairs: Sequence[LabeledPair], config: TrainConfig) -> TrainingRun:
    """Train a real-valued ensemble with per-learner AdaBoost weights."""
    if config.mode != MODE_REAL:
        raise ValueError("adaboost_train expects mode='real'")
    return _train(patch_set, pairs, config)


def beblid_train(patch_set, pairs: Sequence[LabeledPair], config: TrainConfig) -> TrainingRun:
    """Train a common-weight ensemble whose length the stopping rule decides."""
    if config.mode != MODE_BINARY:
        raise ValueError("beblid_train expects mode='binary'")
    return _train(patch_set, pairs, config)


def positive_pair_count(positive_ratio: float, total: int) -> int:
    """Ceiling of ratio * total, guarded against binary-float drift.

    Without the guard, ceil(0.2 * 1e6) lands on 200001.
    """
    if not 0.0 < positive_ratio <= 1.0:
        raise ValueError("positive_ratio must be in (0, 1]")
    if total < 1:
        raise ValueError("total must be >= 1")
    return min(total, int(math.ceil(round(positive_ratio * total, 9))))


def build_unbalanced_set(
    patch_set,
    positive_ratio: float,
    total: int,
    rng: np.random.Generator,
) -> list[LabeledPair]:
    """Draw a pair list with a controlled fraction of positive pairs.

    Positives are sampled without replacement from all unordered
    same-structure patch pairs; negatives are random patch pairs with
    distinct structure ids (repeats possible).  The positive count is the
    ceiling of ratio * total.
    """
    ids = np.asarray(patch_set.structure_ids)
    n_patches = len(ids)
    n_pos = positive_pair_count(positive_ratio, total)
    n_neg = total - n_pos

    by_id: dict[int, list[int]] = {}
    for i, sid in enumerate(ids.tolist()):
        by_id.setdefault(sid, []).append(i)
    pos_all: list[tuple[int, int]] = []
    for members in by_id.values():
        for a in range(len(members)):
            for b in range(a + 1, len(members)):
                pos_all.append((members[a], members[b]))
    if len(pos_all) < n_pos:
        raise ValueError(
            f"insufficient positives: need {n_pos}, only {len(pos_all)} same-structure pairs exist"
        )
    chosen = rng.choice(len(pos_all), size=n_pos, replace=False)
    pairs = [LabeledPair(pos_all[i][0], pos_all[i][1], 1) for i in chosen.tolist()]

    if n_neg > 0:
        if len(by_id) < 2:
            raise ValueError("need at least two structures to generate negatives")
        remaining = n_neg
        while remaining > 0:
            m = max(64, remaining + remaining // 4)
            a = rng.integers(0, n_patches, size=m)
            b = rng.integers(0, n_patches, size=m)
            ok = np.flatnonzero(ids[a] != ids[b])[:remaining]
            pairs.extend(LabeledPair(int(a[i]), int(b[i]), -1) for i in ok.tolist())
            remaining -= len(ok)
    return pairs

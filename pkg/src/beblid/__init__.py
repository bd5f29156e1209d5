"""Boosted binary local image descriptors.

Trains ensembles of thresholded box-difference features over integral images,
extracts binary or real-valued descriptors at keypoints, matches them in
Hamming or Euclidean space, and scores verification / matching / retrieval
protocols.
"""

__version__ = "0.1.0"

from .boosting import (
    MODE_BINARY,
    MODE_REAL,
    RoundRecord,
    TrainConfig,
    TrainedEnsemble,
    TrainingError,
    TrainingRun,
    adaboost_train,
    balance_class_weights,
    beblid_train,
    build_unbalanced_set,
    exp_loss,
    recommended_gamma,
)
from .datasets import (
    Jitter,
    PatchSet,
    downscale_patch,
    load_brown,
    load_pairs,
    load_patchset,
    save_pairs,
    save_patchset,
    synth_patchset,
)
from .descriptor import (
    BinaryDescriptor,
    DescriptorModel,
    Keypoint,
    ModelFormatError,
    RealDescriptor,
    canonical_keypoint,
    describe_binary,
    describe_patches_binary,
    describe_patches_real,
    describe_real,
    deserialize_model,
    map_feature_to_keypoint,
    serialize_model,
    truncate_model,
)
from .evaluation import (
    VerificationResult,
    average_precision,
    eval_matching,
    eval_retrieval,
    eval_verification,
    fpr_at_recall,
    roc_auc,
)
from .imaging import (
    Box,
    GrayImage,
    IntegralImage,
    PgmError,
    avg_box_feature,
    box_sum,
    integral_image,
    integral_stack,
    load_pgm,
    write_pgm,
)
from .matching import MatchResult, hamming, l2_sq, match_nn
from .weaklearners import (
    DEFAULT_SCALES,
    LabeledPair,
    PixelPairFeature,
    ThresholdedWeakLearner,
    best_weak_learner,
    feature_response,
    pair_agreement,
    sample_candidates,
    threshold_rate,
    wl_response,
)

__all__ = [
    "Box",
    "BinaryDescriptor",
    "DEFAULT_SCALES",
    "DescriptorModel",
    "GrayImage",
    "IntegralImage",
    "Jitter",
    "Keypoint",
    "LabeledPair",
    "MODE_BINARY",
    "MODE_REAL",
    "MatchResult",
    "ModelFormatError",
    "PatchSet",
    "PgmError",
    "PixelPairFeature",
    "RealDescriptor",
    "RoundRecord",
    "ThresholdedWeakLearner",
    "TrainConfig",
    "TrainedEnsemble",
    "TrainingError",
    "TrainingRun",
    "VerificationResult",
    "adaboost_train",
    "average_precision",
    "avg_box_feature",
    "balance_class_weights",
    "beblid_train",
    "best_weak_learner",
    "box_sum",
    "build_unbalanced_set",
    "canonical_keypoint",
    "describe_binary",
    "describe_patches_binary",
    "describe_patches_real",
    "describe_real",
    "deserialize_model",
    "downscale_patch",
    "eval_matching",
    "eval_retrieval",
    "eval_verification",
    "exp_loss",
    "feature_response",
    "fpr_at_recall",
    "hamming",
    "integral_image",
    "integral_stack",
    "l2_sq",
    "load_brown",
    "load_pairs",
    "load_patchset",
    "load_pgm",
    "map_feature_to_keypoint",
    "match_nn",
    "pair_agreement",
    "recommended_gamma",
    "roc_auc",
    "sample_candidates",
    "save_pairs",
    "save_patchset",
    "serialize_model",
    "synth_patchset",
    "threshold_rate",
    "truncate_model",
    "wl_response",
    "write_pgm",
]

"""Unsupervised anomaly ranking with self-trained ordinal regression.

Generic detectors (subsample nearest-neighbor distance + isolation forest)
bootstrap pseudo labels; a small scoring network trains on them with a
two-target absolute loss and iteratively relabels its own ranking; the
sequential models are averaged into the final scorer. Conv backbones expose
activation-map localization and an expert feedback loop refines the ranking
interactively.
"""

from .data import (
    Frame,
    FrameSet,
    GroundTruth,
    flatten,
    load_feature_csv,
    load_ground_truth_csv,
    load_image_frames,
    synth_image_scene,
    synth_vector_scene,
)
from .initial import (
    InitConfig,
    IsolationForest,
    PcaModel,
    ScoreVector,
    fuse_scores,
    iforest_fit,
    iforest_score,
    initial_scores,
    pca_fit,
    pca_transform,
    sp_score,
)
from .metrics import RocResult, auc, auc_bruteforce
from .nets import (
    Architecture,
    ScoringModel,
    TrainConfig,
    forward,
    gradient,
    load_checkpoint,
    loss,
    net_init,
    save_checkpoint,
    score_frames,
    sgd_step,
    train,
)
from .pipeline import (
    EnsembleModel,
    PseudoLabelSet,
    RunConfig,
    SelfTrainResult,
    ensemble_score,
    run_self_training,
    select_pseudo_labels,
)
from .saliency import ActivationMap, SaliencyMap, cam, upsample
from .feedback import Feedback, Session, apply_feedback, simulate_expert, start_session

__version__ = "0.1.0"

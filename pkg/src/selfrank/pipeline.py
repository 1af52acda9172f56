"""Self-training orchestration: pseudo labels, retrain-relabel loop, ensemble.

Each iteration selects fresh candidate sets from the previous scores
(replacing, never accumulating, the old ones), trains a freshly initialized
scorer on them, and rescores every frame. The final ranking averages all
sequentially trained models. Ground truth never enters this module.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .data import IMAGE, VECTOR, FrameSet
from .initial import InitConfig, ScoreVector, initial_scores
from .nets import (
    CONV_GAP,
    CONV_GAP_LINEAR,
    MLP,
    Architecture,
    ScoringModel,
    TrainConfig,
    conv_architecture,
    conv_linear_architecture,
    mlp_architecture,
    net_init,
    save_checkpoint,
    score_frames,
    train,
)
from . import runio


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class PseudoLabelSet:
    """Disjoint candidate sets picked from a score ranking.

    `anomalies` holds the top-scored frame ids, `normals` the bottom-scored,
    both in selection order (descending score, ascending id on ties).
    """

    anomalies: np.ndarray
    normals: np.ndarray
    selection_scores: ScoreVector

    def __post_init__(self):
        a = np.asarray(self.anomalies, dtype=np.int64)
        n = np.asarray(self.normals, dtype=np.int64)
        if np.intersect1d(a, n).size:
            raise PipelineError("candidate sets overlap")
        a.setflags(write=False)
        n.setflags(write=False)
        object.__setattr__(self, "anomalies", a)
        object.__setattr__(self, "normals", n)

    @property
    def anomaly_weights(self) -> np.ndarray:
        return self.selection_scores.scores[self.anomalies]


@dataclass
class EnsembleModel:
    """Sequentially trained scorers; the final score is their mean."""

    models: list

    def __post_init__(self):
        if len(self.models) < 1:
            raise PipelineError("ensemble needs at least one model")
        kinds = {m.arch for m in self.models}
        if len(kinds) != 1:
            raise PipelineError("ensemble members must share one architecture")

    @property
    def t(self) -> int:
        return len(self.models)

    @property
    def arch(self) -> Architecture:
        return self.models[0].arch


@dataclass(frozen=True)
class RunConfig:
    iterations: int = 5
    anomaly_fraction: float = 0.10
    normal_fraction: float = 0.20
    train: TrainConfig = field(default_factory=TrainConfig)
    init: InitConfig = field(default_factory=InitConfig)
    backbone: str = "auto"  # auto | mlp | conv-gap | conv-gap-linear
    warm_start: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise PipelineError("need at least one iteration")
        if not (0 < self.anomaly_fraction < 1 and 0 < self.normal_fraction < 1):
            raise PipelineError("fractions must lie in (0, 1)")
        if self.anomaly_fraction + self.normal_fraction > 1:
            raise PipelineError("candidate fractions must sum to at most 1")


def select_pseudo_labels(
    scores: ScoreVector, a_frac: float = 0.10, n_frac: float = 0.20
) -> PseudoLabelSet:
    """Top ceil(a_frac*K) frames become anomaly candidates, bottom
    ceil(n_frac*K) normal candidates; ties broken by smaller frame id."""
    if not (0 < a_frac < 1 and 0 < n_frac < 1) or a_frac + n_frac > 1:
        raise PipelineError("fractions must lie in (0, 1) and sum to at most 1")
    s = scores.scores
    k = s.size
    n_a = math.ceil(a_frac * k)
    n_n = math.ceil(n_frac * k)
    if n_a + n_n > k:
        raise PipelineError(
            f"candidate sets would overlap: {n_a} + {n_n} > {k} frames"
        )
    order = np.lexsort((np.arange(k), -s))  # descending score, ascending id
    return PseudoLabelSet(
        anomalies=order[:n_a], normals=order[k - n_n :], selection_scores=scores
    )


def make_architecture(backbone: str, fs: FrameSet) -> Architecture:
    if backbone == "auto":
        backbone = MLP if fs.mode == VECTOR else CONV_GAP_LINEAR
    if backbone == MLP:
        d = fs.dim if fs.mode == VECTOR else fs.dim[0] * fs.dim[1]
        return mlp_architecture(d)
    if fs.mode != IMAGE:
        raise PipelineError(f"{backbone} backbone needs image-mode frames")
    h, w = fs.dim
    if backbone == CONV_GAP:
        return conv_architecture(h, w)
    if backbone == CONV_GAP_LINEAR:
        return conv_linear_architecture(h, w)
    raise PipelineError(f"unknown backbone {backbone!r}")


def derive_seed(master: int, *tags: int) -> int:
    """Deterministic child seed for a named role within a run."""
    return int(np.random.SeedSequence([master, *tags]).generate_state(1)[0])


@dataclass
class SelfTrainResult:
    ensemble: EnsembleModel
    score_history: list   # t+1 ScoreVectors, index 0 = initial detection
    label_history: list   # t PseudoLabelSets

    def prefix_ensemble_scores(self, upto: int) -> ScoreVector:
        """Mean score of models 1..upto (the run-with-t=upto ranking)."""
        stacked = np.stack([sv.scores for sv in self.score_history[1 : upto + 1]])
        return ScoreVector(stacked.mean(axis=0), provenance="ensemble")


def run_self_training(
    fs: FrameSet, cfg: RunConfig = RunConfig(), run_dir=None, on_event=None
) -> SelfTrainResult:
    """Full loop: initial detection, then `iterations` rounds of
    select -> train -> rescore. Artifacts are written when run_dir is set."""
    logger = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        logger = runio.JsonlLogger(os.path.join(run_dir, "log.jsonl"))

    def emit(**fields):
        if logger is not None:
            logger.event(**fields)
        if on_event is not None:
            on_event(fields)

    arch = make_architecture(cfg.backbone, fs)
    init_cfg = replace(cfg.init, seed=derive_seed(cfg.seed, 0))
    emit(phase="initial-detection")
    scores = initial_scores(fs, init_cfg)
    if run_dir is not None:
        os.makedirs(runio.iter_dir(run_dir, 0), exist_ok=True)
        runio.write_scores_csv(os.path.join(runio.iter_dir(run_dir, 0), "scores.csv"), scores)

    models: list[ScoringModel] = []
    score_history = [scores]
    label_history: list[PseudoLabelSet] = []
    for i in range(1, cfg.iterations + 1):
        labels = select_pseudo_labels(scores, cfg.anomaly_fraction, cfg.normal_fraction)
        label_history.append(labels)
        if cfg.warm_start and models:
            model = models[-1].copy()
        else:
            model = net_init(arch, derive_seed(cfg.seed, 1, i))

        def on_epoch(epoch, mean_loss, _iter=i):
            emit(iteration=_iter, epoch=epoch, mean_loss=mean_loss)

        model = train(
            model,
            fs,
            labels.anomalies,
            labels.normals,
            cfg.train,
            derive_seed(cfg.seed, 2, i),
            anomaly_weights=labels.anomaly_weights,
            on_epoch=on_epoch,
        )
        models.append(model)
        scores = score_frames(model, fs)
        score_history.append(scores)
        if run_dir is not None:
            d = runio.iter_dir(run_dir, i)
            os.makedirs(d, exist_ok=True)
            save_checkpoint(model, os.path.join(d, "model.ckpt"))
            runio.write_scores_csv(os.path.join(d, "scores.csv"), scores)
            runio.write_labels_csv(
                os.path.join(run_dir, f"labels_{i}.csv"), labels.anomalies, labels.normals
            )
        emit(phase="iteration-complete", iteration=i)

    return SelfTrainResult(
        ensemble=EnsembleModel(models),
        score_history=score_history,
        label_history=label_history,
    )


def ensemble_score(em: EnsembleModel, fs: FrameSet) -> ScoreVector:
    """Arithmetic mean of the member models' scores."""
    stacked = np.stack([score_frames(m, fs).scores for m in em.models])
    return ScoreVector(stacked.mean(axis=0), provenance="ensemble")

"""Expert-in-the-loop refinement.

A session presents the top-l ranked frames; the expert tags up to k frames
as anomalies and up to k as normals. The tagged frames (plus temporal
neighbors within a radius, label inherited) fine-tune a copy of the last
ensemble member, which then re-ranks every frame.

Verified tags accumulate across rounds: round r fine-tunes on everything
the expert has confirmed so far, so the labeled pool grows instead of the
model whiplashing between tiny per-round sets. Optionally each batch mixes
in the pseudo-labeled frames from the final self-training iteration
(`replay`), anchoring the scores of frames the expert never touched;
without it a handful of duplicated feedback frames can drag the whole
scoring function around (catastrophic forgetting).

Ground truth is touched only by the simulated expert.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .data import FrameSet, GroundTruth
from .initial import ScoreVector
from .metrics import auc
from .nets import TrainConfig, gradient_arrays, score_frames, sgd_step
from .pipeline import EnsembleModel, PseudoLabelSet, derive_seed, ensemble_score

log = logging.getLogger(__name__)

DEFAULT_NEIGHBOR_RADIUS = 5
DEFAULT_FEEDBACK_EPOCHS = 20
DEFAULT_FEEDBACK_K = 5


class FeedbackError(ValueError):
    pass


@dataclass(frozen=True)
class Feedback:
    """Expert tags drawn from the presented frames."""

    anomalies: tuple
    normals: tuple

    def __post_init__(self):
        a = tuple(int(i) for i in self.anomalies)
        n = tuple(int(i) for i in self.normals)
        if set(a) & set(n):
            raise FeedbackError("a frame cannot be tagged both anomaly and normal")
        if len(set(a)) != len(a) or len(set(n)) != len(n):
            raise FeedbackError("duplicate frame ids in feedback")
        object.__setattr__(self, "anomalies", a)
        object.__setattr__(self, "normals", n)


def _rank_ids(scores: np.ndarray) -> np.ndarray:
    # descending score, ascending frame id on ties
    return np.lexsort((np.arange(scores.size), -scores))


@dataclass
class Session:
    ensemble: EnsembleModel
    fs: FrameSet
    l: int
    working_model: object
    scores: ScoreVector
    ranking: np.ndarray
    round: int = 0
    feedback_log: list = field(default_factory=list)
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    replay_labels: PseudoLabelSet | None = None
    seed: int = 0
    # cumulative verified labels: frame id -> 1/0, split by provenance
    explicit_labels: dict = field(default_factory=dict)
    derived_labels: dict = field(default_factory=dict)

    @property
    def presented(self) -> np.ndarray:
        """Top-l frame ids, best-ranked first."""
        return self.ranking[: self.l]

    def labeled_sets(self) -> tuple[np.ndarray, np.ndarray]:
        """Cumulative fine-tune sets; explicit tags override derived ones."""
        merged = dict(self.derived_labels)
        merged.update(self.explicit_labels)
        anoms = sorted(fid for fid, lab in merged.items() if lab == 1)
        norms = sorted(fid for fid, lab in merged.items() if lab == 0)
        return np.array(anoms, dtype=np.int64), np.array(norms, dtype=np.int64)


def start_session(
    em: EnsembleModel,
    fs: FrameSet,
    l: int | None = None,
    train_cfg: TrainConfig = TrainConfig(),
    replay_labels: PseudoLabelSet | None = None,
    seed: int = 0,
) -> Session:
    """Rank all frames with the ensemble and present the top l = floor(0.1K)."""
    if l is None:
        l = math.floor(0.1 * fs.k)
    if l < 1:
        raise FeedbackError("need l >= 1 presented frames")
    if l > fs.k:
        raise FeedbackError(f"cannot present {l} of {fs.k} frames")
    scores = ensemble_score(em, fs)
    return Session(
        ensemble=em,
        fs=fs,
        l=l,
        working_model=em.models[-1].copy(),
        scores=scores,
        ranking=_rank_ids(scores.scores),
        train_cfg=train_cfg,
        replay_labels=replay_labels,
        seed=seed,
    )


def expand_feedback(fb: Feedback, k_frames: int, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Tagged frames plus temporal neighbors within +-radius, deduplicated.

    Conflicts resolve in favor of the explicitly tagged frame, then anomaly
    over normal. Returns (anomaly ids, normal ids), each sorted.
    """
    label: dict[int, int] = {}
    for fid in fb.anomalies:
        for j in range(max(0, fid - radius), min(k_frames, fid + radius + 1)):
            label[j] = 1  # anomaly wins among neighbor-derived labels
    for fid in fb.normals:
        for j in range(max(0, fid - radius), min(k_frames, fid + radius + 1)):
            label.setdefault(j, 0)
    for fid in fb.anomalies:
        label[fid] = 1
    for fid in fb.normals:
        label[fid] = 0
    anoms = np.array(sorted(j for j, v in label.items() if v == 1), dtype=np.int64)
    norms = np.array(sorted(j for j, v in label.items() if v == 0), dtype=np.int64)
    return anoms, norms


def _absorb_feedback(s: Session, fb: Feedback, radius: int) -> None:
    for fid in fb.anomalies:
        for j in range(max(0, fid - radius), min(s.fs.k, fid + radius + 1)):
            if s.derived_labels.get(j) != 1:
                s.derived_labels[j] = 1
    for fid in fb.normals:
        for j in range(max(0, fid - radius), min(s.fs.k, fid + radius + 1)):
            s.derived_labels.setdefault(j, 0)
    for fid in fb.anomalies:
        s.explicit_labels[fid] = 1
    for fid in fb.normals:
        s.explicit_labels[fid] = 0


def _fine_tune(s: Session, epochs: int, replay: bool, rng: np.random.Generator) -> None:
    anoms, norms = s.labeled_sets()
    xa, xn = s.fs.data[anoms], s.fs.data[norms]
    cfg = s.train_cfg
    use_replay = replay and s.replay_labels is not None
    if use_replay:
        xa_p = s.fs.data[s.replay_labels.anomalies]
        xn_p = s.fs.data[s.replay_labels.normals]
    n_batches = max(1, math.ceil((len(xa) + len(xn)) / cfg.batch_size))
    half = cfg.batch_size // 2
    quarter = half // 2

    def draw(pool_e, pool_p, count, target):
        if use_replay and len(pool_e):
            i1 = rng.choice(len(pool_e), size=quarter, replace=True)
            i2 = rng.choice(len(pool_p), size=count - quarter, replace=True)
            x = np.concatenate([pool_e[i1], pool_p[i2]])
        elif len(pool_e):
            x = pool_e[rng.choice(len(pool_e), size=count, replace=True)]
        elif use_replay:
            x = pool_p[rng.choice(len(pool_p), size=count, replace=True)]
        else:
            return None, None
        return x, np.full(len(x), target)

    for _ in range(epochs):
        for _ in range(n_batches):
            parts = [
                draw(xa, xa_p if use_replay else None, half, cfg.c1),
                draw(xn, xn_p if use_replay else None, cfg.batch_size - half, cfg.c2),
            ]
            parts = [(x, y) for x, y in parts if x is not None]
            if not parts:
                return
            if len(parts) == 1:  # one-sided feedback: fill the batch from it
                x, y = parts[0]
                extra = cfg.batch_size - len(x)
                idx = rng.choice(len(x), size=extra, replace=True)
                xb = np.concatenate([x, x[idx]])
                yb = np.concatenate([y, y[idx]])
            else:
                xb = np.concatenate([p[0] for p in parts])
                yb = np.concatenate([p[1] for p in parts])
            sgd_step(s.working_model, gradient_arrays(s.working_model, xb, yb), cfg.learning_rate)


def apply_feedback(
    s: Session,
    fb: Feedback,
    neighbor_radius: int = DEFAULT_NEIGHBOR_RADIUS,
    epochs: int = DEFAULT_FEEDBACK_EPOCHS,
    replay: bool = False,
) -> Session:
    """Absorb the round's tags, fine-tune the working model on all verified
    labels so far (uniform sampling, no score weighting), and re-rank.

    An empty feedback only advances the round counter.
    """
    presented = set(int(i) for i in s.presented)
    for fid in (*fb.anomalies, *fb.normals):
        if fid not in presented:
            raise FeedbackError(f"frame {fid} was not among the presented top-{s.l}")
    s.feedback_log.append(fb)
    if fb.anomalies or fb.normals:
        _absorb_feedback(s, fb, neighbor_radius)
        rng = np.random.default_rng(derive_seed(s.seed, 3, s.round))
        _fine_tune(s, epochs, replay, rng)
        s.scores = score_frames(s.working_model, s.fs)
        s.ranking = _rank_ids(s.scores.scores)
    s.round += 1
    return s


def simulate_expert(
    s: Session,
    gt: GroundTruth,
    k: int = DEFAULT_FEEDBACK_K,
    rounds: int = 5,
    neighbor_radius: int = DEFAULT_NEIGHBOR_RADIUS,
    epochs: int = DEFAULT_FEEDBACK_EPOCHS,
    replay: bool = False,
) -> list[float]:
    """Scripted expert: per round, scan the presented frames in rank order,
    tag the first k true anomalies and first k true normals, apply the
    feedback. Returns the AUC trajectory (round 0 included)."""
    if len(gt) != s.fs.k:
        raise FeedbackError("ground truth does not align with the frame set")
    if k > s.l:
        raise FeedbackError(f"cannot tag {k} frames out of {s.l} presented")
    trajectory = [auc(s.scores, gt).auc]
    for _ in range(rounds):
        anoms, norms = [], []
        for fid in s.presented:
            if gt.labels[fid] == 1 and len(anoms) < k:
                anoms.append(int(fid))
            elif gt.labels[fid] == 0 and len(norms) < k:
                norms.append(int(fid))
            if len(anoms) == k and len(norms) == k:
                break
        if len(anoms) < k or len(norms) < k:
            log.info(
                "round %d: only %d anomalies / %d normals among top-%d",
                s.round, len(anoms), len(norms), s.l,
            )
        apply_feedback(
            s, Feedback(tuple(anoms), tuple(norms)),
            neighbor_radius=neighbor_radius, epochs=epochs, replay=replay,
        )
        trajectory.append(auc(s.scores, gt).auc)
    return trajectory

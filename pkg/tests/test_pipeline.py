import json
import os

import numpy as np
import pytest

from selfrank.data import synth_vector_scene
from selfrank.initial import ScoreVector
from selfrank.metrics import auc
from selfrank.nets import mlp_architecture, net_init, score_frames
from selfrank.pipeline import (
    EnsembleModel,
    PipelineError,
    PseudoLabelSet,
    RunConfig,
    ensemble_score,
    run_self_training,
    select_pseudo_labels,
)
from gradcheck import randomize_params


def test_select_pseudo_labels_paper_fractions():
    rng = np.random.default_rng(0)
    scores = ScoreVector(rng.random(1000))
    pls = select_pseudo_labels(scores, 0.10, 0.20)
    assert len(pls.anomalies) == 100
    assert len(pls.normals) == 200
    assert np.intersect1d(pls.anomalies, pls.normals).size == 0
    order = np.argsort(-scores.scores)
    assert set(pls.anomalies) == set(order[:100])
    assert set(pls.normals) == set(order[-200:])


def test_select_pseudo_labels_tie_rule():
    scores = ScoreVector(np.full(50, 0.7))
    pls = select_pseudo_labels(scores, 0.10, 0.20)
    assert list(pls.anomalies) == list(range(5))
    assert list(pls.normals) == list(range(40, 50))


def test_select_pseudo_labels_overlap_error():
    scores = ScoreVector(np.arange(10.0))
    with pytest.raises(PipelineError):
        select_pseudo_labels(scores, 0.5, 0.6)  # fractions sum past 1
    with pytest.raises(PipelineError, match="overlap"):
        select_pseudo_labels(scores, 0.45, 0.55)  # ceil(4.5)+ceil(5.5) > 10
    with pytest.raises(PipelineError):
        select_pseudo_labels(scores, 0.0, 0.2)


def test_pseudo_label_set_disjointness_enforced():
    with pytest.raises(PipelineError):
        PseudoLabelSet(np.array([1, 2]), np.array([2, 3]), ScoreVector(np.arange(5.0)))


def test_run_config_validation():
    with pytest.raises(PipelineError):
        RunConfig(iterations=0)
    with pytest.raises(PipelineError):
        RunConfig(anomaly_fraction=0.6, normal_fraction=0.6)


@pytest.fixture(scope="module")
def small_scene():
    return synth_vector_scene(80, 8, 8, 6.0, seed=4)


def _fast_cfg(seed=4, **kw):
    from selfrank.nets import TrainConfig

    return RunConfig(seed=seed, train=TrainConfig(epochs=4), **kw)


def test_single_iteration_ensemble(small_scene):
    fs, _ = small_scene
    res = run_self_training(fs, _fast_cfg(iterations=1))
    assert res.ensemble.t == 1
    ens = ensemble_score(res.ensemble, fs)
    single = score_frames(res.ensemble.models[0], fs)
    assert np.allclose(ens.scores, single.scores, atol=1e-15)
    assert ens.provenance == "ensemble"


def test_artifact_counts_and_run_dir(small_scene, tmp_path):
    fs, _ = small_scene
    res = run_self_training(fs, _fast_cfg(iterations=3), run_dir=tmp_path)
    assert len(res.score_history) == 4  # t + 1 including the initial scores
    assert len(res.label_history) == 3
    assert res.ensemble.t == 3
    assert (tmp_path / "iter_0" / "scores.csv").exists()
    for i in (1, 2, 3):
        assert (tmp_path / f"iter_{i}" / "model.ckpt").exists()
        assert (tmp_path / f"iter_{i}" / "scores.csv").exists()
        assert (tmp_path / f"labels_{i}.csv").exists()
    events = [json.loads(l) for l in (tmp_path / "log.jsonl").read_text().splitlines()]
    train_events = [e for e in events if "mean_loss" in e]
    assert len(train_events) == 3 * 4  # iterations * epochs
    assert {"iteration", "epoch", "mean_loss", "wall_time"} <= set(train_events[0])


def test_run_deterministic(small_scene):
    fs, _ = small_scene
    r1 = run_self_training(fs, _fast_cfg(iterations=2))
    r2 = run_self_training(fs, _fast_cfg(iterations=2))
    for a, b in zip(r1.score_history, r2.score_history):
        assert np.array_equal(a.scores, b.scores)


def test_relabeling_uses_previous_scores_only(small_scene):
    fs, _ = small_scene
    res = run_self_training(fs, _fast_cfg(iterations=2))
    for i, pls in enumerate(res.label_history):
        expected = select_pseudo_labels(res.score_history[i], 0.10, 0.20)
        assert np.array_equal(pls.anomalies, expected.anomalies)
        assert np.array_equal(pls.normals, expected.normals)


def test_warm_start_differs_from_fresh(small_scene):
    fs, _ = small_scene
    fresh = run_self_training(fs, _fast_cfg(iterations=2))
    warm = run_self_training(fs, _fast_cfg(iterations=2, warm_start=True))
    assert not np.array_equal(fresh.score_history[-1].scores, warm.score_history[-1].scores)


def test_ensemble_of_identical_models(small_scene):
    fs, _ = small_scene
    model = randomize_params(net_init(mlp_architecture(8), 0), 1)
    em = EnsembleModel([model.copy() for _ in range(4)])
    ens = ensemble_score(em, fs).scores
    one = score_frames(model, fs).scores
    assert np.max(np.abs(ens - one)) < 1e-12


def test_ensemble_of_constant_models(small_scene):
    fs, _ = small_scene
    zero = net_init(mlp_architecture(8), 0)   # fresh model scores 0 everywhere
    one = net_init(mlp_architecture(8), 0)
    one.params[-1][0] = 1.0                   # output bias 1 -> constant 1
    ens = ensemble_score(EnsembleModel([zero, one]), fs).scores
    assert np.allclose(ens, 0.5, atol=1e-15)


def test_ensemble_requires_members_and_shared_arch():
    with pytest.raises(PipelineError):
        EnsembleModel([])
    with pytest.raises(PipelineError):
        EnsembleModel([net_init(mlp_architecture(8), 0), net_init(mlp_architecture(9), 0)])


def test_prefix_ensemble_scores(small_scene):
    fs, _ = small_scene
    res = run_self_training(fs, _fast_cfg(iterations=3))
    stacked = np.stack([sv.scores for sv in res.score_history[1:3]])
    assert np.allclose(res.prefix_ensemble_scores(2).scores, stacked.mean(axis=0))


def test_self_training_improves_on_known_seed():
    fs, gt = synth_vector_scene(400, 40, 16, 5.0, seed=3)
    res = run_self_training(fs, RunConfig(seed=3))
    initial = auc(res.score_history[0], gt).auc
    final = auc(res.prefix_ensemble_scores(5), gt).auc
    assert final > initial


def test_ensemble_at_least_worst_member_median_over_seeds():
    from selfrank.metrics import auc as compute_auc

    margins = []
    for seed in range(5):
        fs, gt = synth_vector_scene(200, 20, 12, 5.0, seed=seed)
        res = run_self_training(fs, RunConfig(seed=seed, iterations=3))
        member_aucs = [
            compute_auc(sv, gt).auc for sv in res.score_history[1:]
        ]
        ens = compute_auc(ensemble_score(res.ensemble, fs), gt).auc
        margins.append(ens - min(member_aucs))
    assert np.median(margins) >= 0.0

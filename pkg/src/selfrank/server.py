"""HTTP/JSON facade over a run directory.

Long-running work (self-training, feedback fine-tuning) executes on a
background thread while clients poll GET /status; mutations are journaled
into the run directory so a restarted service resumes from the last
completed phase. One mutating job at a time; concurrent mutation attempts
get a 409.
"""

from __future__ import annotations

import base64
import json
import os
import shutil
import threading
from dataclasses import replace

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from . import runio
from .cli import run_config_to_flat, _KNOBS, _parse_bool
from .data import (
    FrameSet,
    GroundTruth,
    load_feature_csv,
    load_ground_truth_csv,
    load_image_frames,
    synth_image_scene,
    synth_vector_scene,
)
from .feedback import (
    DEFAULT_NEIGHBOR_RADIUS,
    Feedback,
    _absorb_feedback,
    apply_feedback,
    start_session,
)
from .initial import InitConfig, ScoreVector
from .metrics import auc
from .nets import CheckpointError, TrainConfig, load_checkpoint, save_checkpoint
from .pgm import pgm_bytes
from .pipeline import (
    EnsembleModel,
    RunConfig,
    SelfTrainResult,
    ensemble_score,
    run_self_training,
    select_pseudo_labels,
)
from .saliency import cam, upsample, saliency_pgm_bytes


class CorruptRunError(RuntimeError):
    pass


def _load_dataset_spec(spec: dict, base_dir: str):
    kind = spec.get("kind")
    if kind == "feature-csv":
        fs = load_feature_csv(os.path.join(base_dir, spec["path"]))
    elif kind == "image-manifest":
        fs = load_image_frames(os.path.join(base_dir, spec["path"]))
    elif kind == "synth-vector":
        fs, gt = synth_vector_scene(
            int(spec["k_normal"]), int(spec["k_anomaly"]),
            int(spec.get("d", 16)), float(spec.get("separation", 5.0)),
            int(spec["seed"]),
        )
        return fs, gt if spec.get("use_gt", True) else None
    elif kind == "synth-image":
        fs, gt = synth_image_scene(
            int(spec["k_normal"]), int(spec["k_anomaly"]),
            int(spec.get("height", 32)), int(spec.get("width", 32)),
            int(spec["seed"]),
        )
        return fs, gt if spec.get("use_gt", True) else None
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    gt = None
    if spec.get("gt_path"):
        gt = load_ground_truth_csv(os.path.join(base_dir, spec["gt_path"]))
    return fs, gt


def _config_from_map(raw: dict) -> RunConfig:
    values = {}
    for key, val in raw.items():
        if key == "seed":
            values[key] = int(val)
            continue
        if key not in _KNOBS:
            raise ValueError(f"unknown config key {key!r}")
        _, typ = _KNOBS[key]
        values[key] = _parse_bool(val) if typ is bool else typ(val)
    if "seed" not in values:
        raise ValueError("config needs a seed")
    run_kw = {k: v for k, v in values.items() if _KNOBS.get(k, ("", 0))[0] == "run"}
    train_kw = {k: v for k, v in values.items() if _KNOBS.get(k, ("", 0))[0] == "train"}
    init_kw = {k: v for k, v in values.items() if _KNOBS.get(k, ("", 0))[0] == "init"}
    return RunConfig(
        seed=values["seed"], train=TrainConfig(**train_kw), init=InitConfig(**init_kw), **run_kw
    )


class RunState:
    """All mutable service state plus its on-disk journal."""

    def __init__(self, run_dir: str):
        self.run_dir = run_dir
        self.lock = threading.Lock()
        self.phase = "idle"
        self.error = None
        self.progress = 0.0
        self.iteration = 0
        self.epoch = 0
        self.job_id = 0
        self.dataset_spec = None
        self.config: RunConfig | None = None
        self.fs: FrameSet | None = None
        self.gt: GroundTruth | None = None
        self.result: SelfTrainResult | None = None
        self.session = None
        self.round_scores: list[ScoreVector] = []
        os.makedirs(run_dir, exist_ok=True)

    # ------------------------------------------------------------- journal
    @property
    def state_path(self) -> str:
        return os.path.join(self.run_dir, "state.json")

    def journal(self) -> None:
        payload = {
            "dataset": self.dataset_spec,
            "config": {k: str(v) for k, v in run_config_to_flat(self.config).items()}
            if self.config
            else None,
            "phase": "ready" if self.phase in ("fine-tuning",) else self.phase,
            "rounds_done": self.session.round if self.session else 0,
        }
        tmp = self.state_path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
        os.replace(tmp, self.state_path)

    def resume(self) -> None:
        """Rebuild state from the journal; raise naming the corrupt file."""
        if not os.path.exists(self.state_path):
            return
        try:
            with open(self.state_path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except (OSError, ValueError) as exc:
            raise CorruptRunError(f"corrupt run directory: {self.state_path} ({exc})") from exc
        if payload.get("phase") not in ("ready",):
            return  # nothing completed yet; start fresh
        try:
            self.dataset_spec = payload["dataset"]
            self.config = _config_from_map(payload["config"])
            self.fs, self.gt = _load_dataset_spec(self.dataset_spec, self.run_dir)
        except Exception as exc:
            raise CorruptRunError(f"corrupt run directory: {self.state_path} ({exc})") from exc
        models, scores = [], []
        init_path = os.path.join(runio.iter_dir(self.run_dir, 0), "scores.csv")
        try:
            scores.append(runio.read_scores_csv(init_path, provenance="fused"))
        except (OSError, runio.RunDirError) as exc:
            raise CorruptRunError(f"corrupt run directory: {init_path} ({exc})") from exc
        for i in range(1, self.config.iterations + 1):
            ckpt = os.path.join(runio.iter_dir(self.run_dir, i), "model.ckpt")
            sc = os.path.join(runio.iter_dir(self.run_dir, i), "scores.csv")
            try:
                models.append(load_checkpoint(ckpt))
            except (OSError, CheckpointError) as exc:
                raise CorruptRunError(f"corrupt run directory: {ckpt} ({exc})") from exc
            try:
                scores.append(runio.read_scores_csv(sc, provenance="learner"))
            except (OSError, runio.RunDirError) as exc:
                raise CorruptRunError(f"corrupt run directory: {sc} ({exc})") from exc
        labels = [
            select_pseudo_labels(scores[i], self.config.anomaly_fraction, self.config.normal_fraction)
            for i in range(self.config.iterations)
        ]
        self.result = SelfTrainResult(
            ensemble=EnsembleModel(models), score_history=scores, label_history=labels
        )
        self._fresh_session()
        # replay persisted feedback rounds
        fb_path = os.path.join(runio.session_dir(self.run_dir), "feedback.jsonl")
        rounds_done = int(payload.get("rounds_done", 0))
        if rounds_done and os.path.exists(fb_path):
            events = runio.read_jsonl(fb_path)[:rounds_done]
            last = len(events)
            ckpt = os.path.join(runio.round_dir(self.run_dir, last), "model.ckpt")
            try:
                self.session.working_model = load_checkpoint(ckpt)
            except (OSError, CheckpointError) as exc:
                raise CorruptRunError(f"corrupt run directory: {ckpt} ({exc})") from exc
            for rnd, ev in enumerate(events, start=1):
                fb = Feedback(tuple(ev["anomalies"]), tuple(ev["normals"]))
                self.session.feedback_log.append(fb)
                _absorb_feedback(self.session, fb, DEFAULT_NEIGHBOR_RADIUS)
                sc_path = os.path.join(runio.round_dir(self.run_dir, rnd), "scores.csv")
                try:
                    sv = runio.read_scores_csv(sc_path, provenance="learner")
                except (OSError, runio.RunDirError) as exc:
                    raise CorruptRunError(f"corrupt run directory: {sc_path} ({exc})") from exc
                self.round_scores.append(sv)
            self.session.scores = self.round_scores[-1]
            self.session.ranking = np.lexsort(
                (np.arange(self.fs.k), -self.session.scores.scores)
            )
            self.session.round = last
        self.phase = "ready"
        self.progress = 1.0

    def _fresh_session(self) -> None:
        self.session = start_session(
            self.result.ensemble,
            self.fs,
            train_cfg=self.config.train,
            replay_labels=self.result.label_history[-1],
            seed=self.config.seed,
        )
        self.round_scores = []

    # ---------------------------------------------------------------- jobs
    def start_run(self, dataset_spec: dict, config_map: dict) -> int:
        with self.lock:
            if self.phase in ("initial-detection", "training", "fine-tuning"):
                raise HTTPException(409, "a job is already running")
            config = _config_from_map(config_map)
            fs, gt = _load_dataset_spec(dataset_spec, self.run_dir)
            self.dataset_spec = dataset_spec
            self.config = config
            self.fs, self.gt = fs, gt
            self.result = None
            self.session = None
            self.round_scores = []
            self.error = None
            self.phase = "initial-detection"
            self.progress = 0.0
            self.job_id += 1
            job = self.job_id
        runio.write_flat_config(
            os.path.join(self.run_dir, "config.txt"), run_config_to_flat(config)
        )
        threading.Thread(target=self._run_job, name=f"selfrank-run-{job}", daemon=True).start()
        return job

    def _on_event(self, fields: dict) -> None:
        with self.lock:
            if "iteration" in fields and "epoch" in fields:
                self.phase = "training"
                self.iteration = fields["iteration"]
                self.epoch = fields["epoch"]
                t = self.config.iterations
                self.progress = min(
                    1.0,
                    (self.iteration - 1 + (self.epoch + 1) / self.config.train.epochs) / t,
                )

    def _run_job(self) -> None:
        try:
            result = run_self_training(
                self.fs, self.config, run_dir=self.run_dir, on_event=self._on_event
            )
            with self.lock:
                self.result = result
                self._fresh_session()
                self.phase = "ready"
                self.progress = 1.0
            self.journal()
        except Exception as exc:  # surfaced through /status
            with self.lock:
                self.phase = "error"
                self.error = str(exc)

    def start_feedback(self, anomalies: list, normals: list) -> int:
        with self.lock:
            if self.phase == "fine-tuning":
                raise HTTPException(409, "a feedback round is already being applied")
            if self.phase != "ready":
                raise HTTPException(409, f"run is not ready (phase {self.phase})")
            try:
                fb = Feedback(tuple(anomalies), tuple(normals))
            except ValueError as exc:
                raise HTTPException(400, str(exc))
            presented = set(int(i) for i in self.session.presented)
            bad = [f for f in (*fb.anomalies, *fb.normals) if f not in presented]
            if bad:
                raise HTTPException(400, f"frames not in the presented top-{self.session.l}: {bad}")
            self.phase = "fine-tuning"
            new_round = self.session.round + 1
        threading.Thread(
            target=self._feedback_job, args=(fb,), name="selfrank-feedback", daemon=True
        ).start()
        return new_round

    def _feedback_job(self, fb: Feedback) -> None:
        try:
            apply_feedback(self.session, fb, replay=self.session.replay_labels is not None)
            rnd = self.session.round
            rdir = runio.round_dir(self.run_dir, rnd)
            os.makedirs(rdir, exist_ok=True)
            save_checkpoint(self.session.working_model, os.path.join(rdir, "model.ckpt"))
            runio.write_scores_csv(os.path.join(rdir, "scores.csv"), self.session.scores)
            runio.append_jsonl(
                os.path.join(runio.session_dir(self.run_dir), "feedback.jsonl"),
                {"round": rnd, "anomalies": list(fb.anomalies), "normals": list(fb.normals)},
            )
            with self.lock:
                self.round_scores.append(self.session.scores)
                self.phase = "ready"
            self.journal()
        except Exception as exc:
            with self.lock:
                self.phase = "error"
                self.error = str(exc)

    def reset_session(self) -> None:
        with self.lock:
            if self.phase not in ("ready",):
                raise HTTPException(409, f"cannot reset during phase {self.phase}")
            sdir = runio.session_dir(self.run_dir)
            if os.path.isdir(sdir):
                shutil.rmtree(sdir)
            self._fresh_session()
        self.journal()


def create_app(run_dir: str) -> FastAPI:
    state = RunState(run_dir)
    state.resume()
    app = FastAPI(title="selfrank service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.run = state

    @app.get("/status")
    def status():
        with state.lock:
            payload = {
                "phase": state.phase,
                "progress": state.progress,
                "round": state.session.round if state.session else 0,
                "job_id": state.job_id,
            }
            if state.phase == "training":
                payload["iteration"] = state.iteration
                payload["epoch"] = state.epoch
            if state.error:
                payload["error"] = state.error
            return payload

    @app.post("/run")
    def post_run(body: dict):
        dataset = body.get("dataset")
        config = body.get("config", {})
        if not dataset:
            raise HTTPException(400, "body needs a dataset spec")
        try:
            job = state.start_run(dataset, config)
        except HTTPException:
            raise
        except Exception as exc:
            raise HTTPException(400, str(exc))
        return {"job_id": job}

    def _require_ready():
        if state.phase not in ("ready", "fine-tuning"):
            raise HTTPException(409, f"no completed run (phase {state.phase})")

    @app.get("/ranking")
    def ranking(top: int = 0):
        _require_ready()
        with state.lock:
            session = state.session
            ids = session.ranking if top <= 0 else session.ranking[:top]
            scores = session.scores.scores
            return [
                {"frame_id": int(f), "score": float(scores[f]), "rank": r}
                for r, f in enumerate(ids)
            ]

    @app.get("/frame/{frame_id}")
    def frame(frame_id: int):
        if state.fs is None:
            raise HTTPException(409, "no dataset loaded")
        if not 0 <= frame_id < state.fs.k:
            raise HTTPException(404, f"frame {frame_id} out of range")
        if state.fs.mode == "image":
            raw = pgm_bytes(state.fs.data[frame_id])
            return {
                "frame_id": frame_id,
                "mode": "image",
                "pgm_base64": base64.b64encode(raw).decode("ascii"),
            }
        return {
            "frame_id": frame_id,
            "mode": "vector",
            "values": [float(v) for v in state.fs.data[frame_id]],
        }

    @app.get("/frame/{frame_id}/saliency")
    def frame_saliency(frame_id: int):
        _require_ready()
        if state.fs is None or state.fs.mode != "image":
            raise HTTPException(400, "saliency needs an image-mode dataset")
        if not 0 <= frame_id < state.fs.k:
            raise HTTPException(404, f"frame {frame_id} out of range")
        model = state.session.working_model
        if model.arch.kind != "conv-gap-linear":
            raise HTTPException(400, f"saliency needs the conv-gap-linear backbone, run used {model.arch.kind}")
        amap = cam(model, state.fs.frame(frame_id))
        smap = upsample(amap, *state.fs.dim)
        return {
            "frame_id": frame_id,
            "pgm_base64": base64.b64encode(saliency_pgm_bytes(smap)).decode("ascii"),
            "grid": [[float(v) for v in row] for row in amap.grid],
        }

    @app.post("/feedback")
    def post_feedback(body: dict):
        new_round = state.start_feedback(body.get("anomalies", []), body.get("normals", []))
        return {"round": new_round}

    @app.get("/history")
    def history():
        _require_ready()
        with state.lock:
            session = state.session
            if state.gt is not None:
                rounds = [{"round": 0, "auc": auc(ensemble_score(state.result.ensemble, state.fs), state.gt).auc}]
                for i, sv in enumerate(state.round_scores, start=1):
                    rounds.append({"round": i, "auc": auc(sv, state.gt).auc})
                return {"metric": "auc", "rounds": rounds}
            summary = []
            prev = set(int(i) for i in np.lexsort(
                (np.arange(state.fs.k), -ensemble_score(state.result.ensemble, state.fs).scores)
            )[: session.l])
            for i, sv in enumerate(state.round_scores, start=1):
                cur = set(int(i) for i in np.lexsort((np.arange(state.fs.k), -sv.scores))[: session.l])
                summary.append({"round": i, "top_changed": len(cur ^ prev) // 2})
                prev = cur
            return {"metric": "ranking-change", "rounds": summary}

    @app.post("/reset")
    def post_reset():
        state.reset_session()
        return {"round": 0}

    return app


def serve(run_dir: str, port: int = 8008, host: str = "127.0.0.1") -> None:
    import uvicorn

    app = create_app(run_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")

"""Run-directory persistence: scores/labels CSV, flat config files, JSONL logs.

Layout produced by a self-training run:

    run/config.txt          flat key=value
    run/log.jsonl           one JSON object per event
    run/iter_0/scores.csv   initial fused detector scores
    run/iter_i/scores.csv   scores of the i-th trained model (i >= 1)
    run/iter_i/model.ckpt
    run/labels_i.csv        pseudo labels consumed by iteration i
    run/session/...         feedback rounds (round_i/model.ckpt, feedback.jsonl)
"""

from __future__ import annotations

import json
import os
import time

import numpy as np

from .initial import ScoreVector


class RunDirError(ValueError):
    pass


def iter_dir(run_dir, i: int) -> str:
    return os.path.join(run_dir, f"iter_{i}")


def session_dir(run_dir) -> str:
    return os.path.join(run_dir, "session")


def round_dir(run_dir, i: int) -> str:
    return os.path.join(session_dir(run_dir), f"round_{i}")


def write_scores_csv(path, scores) -> None:
    values = np.asarray(getattr(scores, "scores", scores), dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame_id,score\n")
        for i, v in enumerate(values):
            fh.write(f"{i},{float(v)!r}\n")


def read_scores_csv(path, provenance: str = "unknown") -> ScoreVector:
    values = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "frame_id,score":
            raise RunDirError(f"{path}: unexpected scores header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                fid, val = line.split(",")
                if int(fid) != len(values):
                    raise ValueError(f"frame ids out of order at {fid}")
                values.append(float(val))
            except ValueError as exc:
                raise RunDirError(f"{path}: line {lineno}: {exc}") from exc
    if not values:
        raise RunDirError(f"{path}: no scores")
    return ScoreVector(np.array(values), provenance=provenance)


def write_labels_csv(path, anomaly_ids, normal_ids) -> None:
    """One `frame_id,label` row per pseudo-labeled frame (1 anomaly, 0 normal)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("frame_id,label\n")
        for fid in anomaly_ids:
            fh.write(f"{int(fid)},1\n")
        for fid in normal_ids:
            fh.write(f"{int(fid)},0\n")


def write_flat_config(path, values: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, val in values.items():
            fh.write(f"{key}={val}\n")


def read_flat_config(path) -> dict:
    """Parse a flat key=value file; blank lines and # comments are skipped."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise RunDirError(f"{path}: line {lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


class JsonlLogger:
    """Appends one JSON object per event; wall_time is seconds since epoch."""

    def __init__(self, path):
        self.path = path

    def event(self, **fields) -> None:
        fields.setdefault("wall_time", time.time())
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(fields, sort_keys=True) + "\n")


def append_jsonl(path, obj: dict) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True) + "\n")


def read_jsonl(path) -> list:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out

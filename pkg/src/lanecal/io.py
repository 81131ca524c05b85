"""Readers and writers for observations, intrinsics, traces, homographies and reports.

All angles in files are degrees; heights are meters (cm in RMSE reports).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import FormatError
from .geometry import CameraIntrinsics, SegmentSet
from .synth import ExtrinsicEstimate, FrameObservation

TRACE_HEADER = ["frame", "pitch_deg", "yaw_deg", "roll_deg", "height_m", "inliers", "flags"]
FLAG_SEP = "|"


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


# --- observations (JSON Lines) --------------------------------------------------

def observation_to_dict(obs: FrameObservation) -> dict:
    segs = obs.segments
    return {
        "frame": int(obs.frame_index),
        "segments": [
            {
                "p1": [float(segs.p1[i, 0]), float(segs.p1[i, 1])],
                "p2": [float(segs.p2[i, 0]), float(segs.p2[i, 1])],
                "boundary_id": None if segs.boundary_id[i] < 0 else int(segs.boundary_id[i]),
            }
            for i in range(len(segs))
        ],
        "gt": None if obs.gt is None else obs.gt.to_dict(),
    }


def observation_from_dict(d: dict) -> FrameObservation:
    try:
        segs = d["segments"]
        p1 = np.array([s["p1"] for s in segs], dtype=float).reshape(-1, 2)
        p2 = np.array([s["p2"] for s in segs], dtype=float).reshape(-1, 2)
        bid = np.array([-1 if s.get("boundary_id") is None else int(s["boundary_id"]) for s in segs], dtype=int)
        gt = None if d.get("gt") is None else ExtrinsicEstimate.from_dict(d["gt"])
        return FrameObservation(int(d["frame"]), SegmentSet(p1, p2, bid), gt)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad observation record: {exc}") from None


def write_observations(path, frames: Iterable[FrameObservation]) -> None:
    with open(path, "w") as fh:
        for obs in frames:
            fh.write(_dumps(observation_to_dict(obs)) + "\n")


def iter_observations(path) -> Iterator[FrameObservation]:
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            yield observation_from_dict(d)


def read_observations(path) -> list[FrameObservation]:
    return list(iter_observations(path))


# --- intrinsics -----------------------------------------------------------------

def write_intrinsics(path, k: CameraIntrinsics) -> None:
    Path(path).write_text(_dumps(k.to_dict()) + "\n")


def read_intrinsics(path) -> CameraIntrinsics:
    try:
        return CameraIntrinsics.from_dict(json.loads(Path(path).read_text()))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: bad intrinsics: {exc}") from None


# --- trace (CSV) ----------------------------------------------------------------

def format_trace_row(result) -> list[str]:
    e = result.estimate
    return [
        str(int(result.frame_index)),
        f"{np.degrees(e.theta):.6f}",
        f"{np.degrees(e.phi):.6f}",
        f"{np.degrees(e.psi):.6f}",
        f"{e.h:.5f}",
        str(int(result.inliers)),
        FLAG_SEP.join(result.flags),
    ]


def parse_trace_row(row: list[str]) -> dict:
    if len(row) != len(TRACE_HEADER):
        raise FormatError(f"trace row has {len(row)} fields, expected {len(TRACE_HEADER)}")
    try:
        return {
            "frame": int(row[0]),
            "pitch_deg": float(row[1]),
            "yaw_deg": float(row[2]),
            "roll_deg": float(row[3]),
            "height_m": float(row[4]),
            "inliers": int(row[5]),
            "flags": tuple(f for f in row[6].split(FLAG_SEP) if f),
        }
    except ValueError as exc:
        raise FormatError(f"bad trace row {row}: {exc}") from None


def write_trace(path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in results:
            w.writerow(format_trace_row(r))


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise FormatError(f"{path}: unexpected trace header {header}")
        return [parse_trace_row(row) for row in reader]


# --- homography / reports -------------------------------------------------------

def write_homography(path, hom: np.ndarray) -> None:
    Path(path).write_text(_dumps([[float(v) for v in row] for row in np.asarray(hom)]) + "\n")


def read_homography(path) -> np.ndarray:
    hom = np.array(json.loads(Path(path).read_text()), dtype=float)
    if hom.shape != (3, 3):
        raise FormatError(f"{path}: homography must be 3x3, got {hom.shape}")
    return hom


def write_rmse(path, report: dict) -> None:
    keys = ["pitch_deg", "yaw_deg", "roll_deg", "height_cm", "runs", "burn_in"]
    Path(path).write_text(_dumps({k: report[k] for k in keys}) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())

"""Search-window tracker: detect on the full frame once, then per frame
predict, crop around the prediction, detect inside the crop and correct.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import kalman
from .imaging import (DEFAULT_MEDIAN_RADIUS, DEFAULT_THRESHOLD, BoundingBox, Detection, Frame,
                      detect_object)

Point = tuple[float, float]


class InitializationError(RuntimeError):
    pass


@dataclass(frozen=True)
class KalmanConfig:
    q: float = kalman.DEFAULT_Q
    r: float = kalman.DEFAULT_R
    p0: tuple[float, float, float, float] = kalman.DEFAULT_P0


@dataclass(frozen=True)
class TrackerConfig:
    window_multiple: float = 2.0
    detect_threshold: float = DEFAULT_THRESHOLD
    median_radius: int = DEFAULT_MEDIAN_RADIUS
    kalman: KalmanConfig = field(default_factory=KalmanConfig)
    max_init_frames: int = 50
    # search the whole frame every step (window covers the frame)
    full_frame: bool = False
    # reject detections farther than this from the prediction; None disables
    gate: Optional[float] = None
    timing: bool = True

    def __post_init__(self):
        if not self.window_multiple > 0:
            raise ValueError(f"window_multiple must be > 0, got {self.window_multiple}")
        if self.max_init_frames < 1:
            raise ValueError(f"max_init_frames must be >= 1, got {self.max_init_frames}")
        if self.median_radius < 1:
            raise ValueError(f"median_radius must be >= 1, got {self.median_radius}")
        if not 0.0 <= self.detect_threshold <= 1.0:
            raise ValueError(f"detect_threshold must lie in [0, 1], got {self.detect_threshold}")

    def model(self) -> kalman.KalmanModel:
        return kalman.constant_velocity_model(self.kalman.q, self.kalman.r)


@dataclass(frozen=True)
class TrackRecord:
    frame_index: int
    predicted_center: Point
    crop_window: BoundingBox
    detected_center: Optional[Point]
    corrected_center: Point
    pixels_processed: int
    elapsed: float
    error: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "predicted_center": list(self.predicted_center),
            "crop_window": list(self.crop_window.as_tuple()),
            "detected_center": None if self.detected_center is None else list(self.detected_center),
            "corrected_center": list(self.corrected_center),
            "pixels_processed": self.pixels_processed,
            "elapsed": self.elapsed,
            "error": self.error,
        }


@dataclass(frozen=True)
class Initialization:
    state: kalman.KalmanState
    window_side: int
    start_index: int
    detection: Detection


@dataclass(frozen=True)
class TrackResult:
    records: list[TrackRecord]
    window_side: int
    start_index: int
    success_rate: float
    mean_elapsed: float
    total_pixels: int
    frame_size: tuple[int, int]
    window_multiple: float
    errors: Optional[list[float]] = None

    @property
    def mean_pixels(self) -> float:
        return self.total_pixels / len(self.records) if self.records else 0.0

    @property
    def mean_error(self) -> Optional[float]:
        if not self.errors:
            return None
        return float(np.mean(self.errors))

    def to_dict(self) -> dict:
        return {
            "window_multiple": self.window_multiple,
            "window_side": self.window_side,
            "start_index": self.start_index,
            "frame_size": list(self.frame_size),
            "success_rate": self.success_rate,
            "mean_elapsed": self.mean_elapsed,
            "total_pixels": self.total_pixels,
            "mean_pixels": self.mean_pixels,
            "mean_error": self.mean_error,
            "records": [r.to_dict() for r in self.records],
        }


def round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def window_side_for(bbox: BoundingBox, multiple: float) -> int:
    return max(1, round_half_away(multiple * bbox.largest_dimension))


def initialize(frames: Sequence[Frame], cfg: TrackerConfig) -> Initialization:
    """Full-frame detection on successive frames until the object is found."""
    if len(frames) == 0:
        raise InitializationError("no frames to initialize from")
    tried = 0
    for i, frame in enumerate(frames[:cfg.max_init_frames]):
        tried += 1
        det = detect_object(frame, cfg.detect_threshold, cfg.median_radius)
        if det is None:
            continue
        if cfg.full_frame:
            side = max(frame.width, frame.height)
        else:
            side = window_side_for(det.bbox, cfg.window_multiple)
        state = kalman.initial_state(det.centroid, cfg.kalman.p0)
        return Initialization(state=state, window_side=side, start_index=i, detection=det)
    raise InitializationError(f"object not detected in the first {tried} frame(s)")


def crop(frame: Frame, center: Point, side: int) -> tuple[Frame, tuple[int, int]]:
    """Square ``side`` window centered on ``round(center)``, shifted to stay inside the frame.

    A dimension smaller than ``side`` is covered in full.
    """
    if side < 1:
        raise ValueError(f"window side must be >= 1, got {side}")
    box = crop_box(frame.width, frame.height, center, side)
    return frame.region(*box.as_tuple()), (box.x, box.y)


def crop_box(width: int, height: int, center: Point, side: int) -> BoundingBox:
    w = min(side, width)
    h = min(side, height)
    x0 = round_half_away(center[0]) - side // 2
    y0 = round_half_away(center[1]) - side // 2
    x0 = min(max(x0, 0), width - w)
    y0 = min(max(y0, 0), height - h)
    return BoundingBox(x0, y0, w, h)


def track_step(state: kalman.KalmanState, frame: Frame, window_side: int, cfg: TrackerConfig,
               frame_index: int = 0, model: Optional[kalman.KalmanModel] = None,
               ) -> tuple[kalman.KalmanState, TrackRecord]:
    model = model or cfg.model()
    t0 = time.perf_counter()
    prior = kalman.predict(state, model)
    predicted = prior.position
    sub, (ox, oy) = crop(frame, predicted, window_side)
    det = detect_object(sub, cfg.detect_threshold, cfg.median_radius)
    detected = None
    if det is not None:
        detected = (det.centroid[0] + ox, det.centroid[1] + oy)
        if cfg.gate is not None and math.dist(detected, predicted) > cfg.gate:
            detected = None
    if detected is not None:
        post = kalman.correct(prior, model, detected)
    else:
        # miss: carry the prediction forward without correction
        post = prior
    elapsed = time.perf_counter() - t0 if cfg.timing else 0.0
    record = TrackRecord(
        frame_index=frame_index,
        predicted_center=predicted,
        crop_window=BoundingBox(ox, oy, sub.width, sub.height),
        detected_center=detected,
        corrected_center=post.position,
        pixels_processed=sub.width * sub.height,
        elapsed=elapsed,
    )
    return post, record


def track_video(frames: Sequence[Frame], cfg: TrackerConfig,
                ground_truth: Optional[Sequence[Point]] = None) -> TrackResult:
    if ground_truth is not None and len(ground_truth) != len(frames):
        raise ValueError(f"{len(ground_truth)} truth points for {len(frames)} frames")
    init = initialize(frames, cfg)
    model = cfg.model()
    state = init.state
    records = []
    errors = [] if ground_truth is not None else None
    for k in range(init.start_index + 1, len(frames)):
        state, rec = track_step(state, frames[k], init.window_side, cfg, k, model)
        if ground_truth is not None:
            err = math.dist(rec.corrected_center, ground_truth[k])
            rec = replace(rec, error=err)
            errors.append(err)
        records.append(rec)
    detected = sum(r.detected_center is not None for r in records)
    n = len(records)
    return TrackResult(
        records=records,
        window_side=init.window_side,
        start_index=init.start_index,
        success_rate=detected / n if n else 1.0,
        mean_elapsed=float(np.mean([r.elapsed for r in records])) if n else 0.0,
        total_pixels=sum(r.pixels_processed for r in records),
        frame_size=(frames[0].width, frames[0].height),
        window_multiple=cfg.window_multiple,
        errors=errors,
    )


# --- serialization ---------------------------------------------------------

CSV_COLUMNS = ["frame_index", "pred_x", "pred_y", "det_x", "det_y", "corr_x", "corr_y",
               "pixels", "elapsed_s"]


def _g(v):
    return "" if v is None else f"{v:.6g}"


def _round6(obj):
    if isinstance(obj, float):
        return float(f"{obj:.6g}")
    if isinstance(obj, dict):
        return {k: _round6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round6(v) for v in obj]
    return obj


def write_track_json(result: TrackResult, path) -> None:
    with open(path, "w") as fh:
        json.dump(_round6(result.to_dict()), fh, indent=1)
        fh.write("\n")


def write_track_csv(result: TrackResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in result.records:
            det = r.detected_center or (None, None)
            w.writerow([r.frame_index, _g(r.predicted_center[0]), _g(r.predicted_center[1]),
                        _g(det[0]), _g(det[1]), _g(r.corrected_center[0]),
                        _g(r.corrected_center[1]), r.pixels_processed, _g(r.elapsed)])

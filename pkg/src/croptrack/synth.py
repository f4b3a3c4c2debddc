"""Deterministic synthetic scenes: one red object moving over a cluttered
background, with its true center recorded every frame.
"""

from __future__ import annotations

import csv
import glob
import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .imaging import DEFAULT_THRESHOLD, Frame, read_frame, red_difference, write_frame

DEFAULT_OBJECT_COLOR = (200, 30, 30)
DEFAULT_DISTRACTOR_COLORS = ((150, 150, 150), (50, 60, 200), (40, 160, 50))
DEFAULT_BACKGROUND = (90, 90, 90)


class SceneSpecError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ObjectSpec:
    shape: str = "rect"  # rect | ellipse
    size: tuple[int, int] = (40, 40)
    color: tuple[int, int, int] = DEFAULT_OBJECT_COLOR


@dataclass(frozen=True)
class MotionSpec:
    start: tuple[float, float] = (100.0, 100.0)
    velocity: tuple[float, float] = (4.0, 3.0)
    jitter_sigma: float = 0.0
    bounce: bool = True


@dataclass(frozen=True)
class ClutterSpec:
    n_distractors: int = 0
    distractor_colors: tuple[tuple[int, int, int], ...] = DEFAULT_DISTRACTOR_COLORS
    size_range: tuple[int, int] = (20, 60)


@dataclass(frozen=True)
class SceneSpec:
    frame_size: tuple[int, int] = (640, 480)
    n_frames: int = 300
    object: ObjectSpec = field(default_factory=ObjectSpec)
    motion: MotionSpec = field(default_factory=MotionSpec)
    clutter: ClutterSpec = field(default_factory=ClutterSpec)
    noise_sigma: float = 0.0
    seed: int = 0
    background: tuple[int, int, int] = DEFAULT_BACKGROUND
    name: str = "scene"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        obj = d.pop("object", {}) or {}
        motion = d.pop("motion", {}) or {}
        clutter = d.pop("clutter", {}) or {}
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise SceneSpecError(sorted(unknown)[0], "unknown field")
        if "distractor_colors" in clutter:
            clutter["distractor_colors"] = tuple(tuple(c) for c in clutter["distractor_colors"])
        tuples = {k: tuple(v) for k, v in d.items() if isinstance(v, list)}
        d.update(tuples)
        return cls(object=ObjectSpec(**_tupled(obj)), motion=MotionSpec(**_tupled(motion)),
                   clutter=ClutterSpec(**_tupled(clutter)), **d)


def _tupled(d):
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


@dataclass
class Scene:
    frames: list[Frame]
    truth: list[tuple[float, float]]
    velocities: list[tuple[float, float]] = field(default_factory=list)
    spec: Optional[SceneSpec] = None

    def __len__(self):
        return len(self.frames)


def _color_red_level(color):
    px = Frame(np.array([[color]], dtype=np.uint8))
    return float(red_difference(px).data[0, 0])


def validate_spec(spec: SceneSpec, threshold: float = DEFAULT_THRESHOLD) -> None:
    fw, fh = spec.frame_size
    if fw < 1 or fh < 1:
        raise SceneSpecError("frame_size", "must be positive")
    if spec.n_frames < 1:
        raise SceneSpecError("n_frames", "must be >= 1")
    if spec.object.shape not in ("rect", "ellipse"):
        raise SceneSpecError("object.shape", f"expected rect or ellipse, got {spec.object.shape!r}")
    ow, oh = spec.object.size
    if ow < 1 or oh < 1 or ow > fw or oh > fh:
        raise SceneSpecError("object.size", "object must fit inside the frame")
    lo_x, hi_x, lo_y, hi_y = _center_limits(spec)
    sx, sy = spec.motion.start
    if not (lo_x <= sx <= hi_x and lo_y <= sy <= hi_y):
        raise SceneSpecError("motion.start", "object does not fit inside the frame at start")
    if spec.motion.jitter_sigma < 0:
        raise SceneSpecError("motion.jitter_sigma", "must be >= 0")
    if spec.noise_sigma < 0:
        raise SceneSpecError("noise_sigma", "must be >= 0")
    if not _color_red_level(spec.object.color) > threshold:
        raise SceneSpecError("object.color", f"not red enough for threshold {threshold}")
    if spec.clutter.n_distractors < 0:
        raise SceneSpecError("clutter.n_distractors", "must be >= 0")
    if spec.clutter.n_distractors and not spec.clutter.distractor_colors:
        raise SceneSpecError("clutter.distractor_colors", "empty")
    for c in spec.clutter.distractor_colors:
        if _color_red_level(c) > threshold:
            raise SceneSpecError("clutter.distractor_colors", f"{tuple(c)} would pass the red threshold")
    if _color_red_level(spec.background) > threshold:
        raise SceneSpecError("background", "would pass the red threshold")
    smin, smax = spec.clutter.size_range
    if not 1 <= smin <= smax:
        raise SceneSpecError("clutter.size_range", "need 1 <= min <= max")


def _center_limits(spec):
    # object pixels x0..x0+w-1 must stay inside 0..W-1
    fw, fh = spec.frame_size
    ow, oh = spec.object.size
    return (ow - 1) / 2.0, fw - 1 - (ow - 1) / 2.0, (oh - 1) / 2.0, fh - 1 - (oh - 1) / 2.0


def _round_half_away(v):
    return int(np.sign(v) * np.floor(abs(v) + 0.5))


def object_mask(shape: str, size: tuple[int, int]) -> np.ndarray:
    w, h = size
    if shape == "rect":
        return np.ones((h, w), dtype=bool)
    yy, xx = np.mgrid[0:h, 0:w]
    u = (xx - (w - 1) / 2.0) / (w / 2.0)
    v = (yy - (h - 1) / 2.0) / (h / 2.0)
    return u * u + v * v <= 1.0


def render_object(canvas: np.ndarray, center, shape, size, color) -> tuple[int, int]:
    """Paint the object so its raster center is within 0.5 px of ``center``.

    Returns the top-left pixel of the object's box.
    """
    w, h = size
    x0 = _round_half_away(center[0] - (w - 1) / 2.0)
    y0 = _round_half_away(center[1] - (h - 1) / 2.0)
    mask = object_mask(shape, size)
    H, W = canvas.shape[:2]
    cx0, cy0 = max(x0, 0), max(y0, 0)
    cx1, cy1 = min(x0 + w, W), min(y0 + h, H)
    if cx0 >= cx1 or cy0 >= cy1:
        return x0, y0
    sub = mask[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0]
    canvas[cy0:cy1, cx0:cx1][sub] = color
    return x0, y0


def _trajectory(spec, rng):
    lo_x, hi_x, lo_y, hi_y = _center_limits(spec)
    lo = np.array([lo_x, lo_y])
    hi = np.array([hi_x, hi_y])
    pos = np.array(spec.motion.start, dtype=np.float64)
    vel = np.array(spec.motion.velocity, dtype=np.float64)
    truth, vels = [], []
    for k in range(spec.n_frames):
        truth.append((float(pos[0]), float(pos[1])))
        vels.append((float(vel[0]), float(vel[1])))
        step = vel.copy()
        if spec.motion.jitter_sigma > 0:
            step += rng.normal(0.0, spec.motion.jitter_sigma, size=2)
        pos = pos + step
        for i in range(2):
            if spec.motion.bounce:
                # reflect off the wall; repeat in case of a tiny free range
                for _ in range(4):
                    if pos[i] < lo[i]:
                        pos[i] = 2 * lo[i] - pos[i]
                        vel[i] = -vel[i]
                    elif pos[i] > hi[i]:
                        pos[i] = 2 * hi[i] - pos[i]
                        vel[i] = -vel[i]
                    else:
                        break
            pos[i] = min(max(pos[i], lo[i]), hi[i])
    return truth, vels


def _background(spec, rng):
    fw, fh = spec.frame_size
    canvas = np.empty((fh, fw, 3), dtype=np.uint8)
    canvas[:] = spec.background
    colors = spec.clutter.distractor_colors
    smin, smax = spec.clutter.size_range
    for i in range(spec.clutter.n_distractors):
        w = int(rng.integers(smin, smax + 1))
        h = int(rng.integers(smin, smax + 1))
        x = int(rng.integers(0, max(fw - w, 0) + 1))
        y = int(rng.integers(0, max(fh - h, 0) + 1))
        canvas[y:y + h, x:x + w] = colors[i % len(colors)]
    return canvas


def generate_scene(spec: SceneSpec, threshold: float = DEFAULT_THRESHOLD) -> Scene:
    """Render ``spec`` into frames. Identical specs give bit-identical scenes."""
    validate_spec(spec, threshold)
    # PCG64, seeded explicitly
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    background = _background(spec, rng)
    truth, vels = _trajectory(spec, rng)
    frames = []
    noise = np.empty(background.shape, dtype=np.float32)
    for center in truth:
        canvas = background.copy()
        render_object(canvas, center, spec.object.shape, spec.object.size, spec.object.color)
        if spec.noise_sigma > 0:
            rng.standard_normal(dtype=np.float32, out=noise)
            noise *= np.float32(spec.noise_sigma)
            noise += canvas
            np.rint(noise, out=noise)
            np.clip(noise, 0, 255, out=noise)
            canvas = noise.astype(np.uint8)
        frames.append(Frame(canvas))
    return Scene(frames=frames, truth=truth, velocities=vels, spec=spec)


def _ellipse_size_for_area(area):
    d = int(round(np.sqrt(4 * area / np.pi)))
    return (d, d)


def standard_objects(n_frames: int = 300) -> list[SceneSpec]:
    """Three 640x480 presets covering 2.3%, 3.8% and 0.7% of the frame.

    The second object is a 2:1 rectangle; the others are discs.
    """
    frame = (640, 480)
    area = frame[0] * frame[1]
    clutter = ClutterSpec(n_distractors=4)
    return [
        SceneSpec(name="object1", frame_size=frame, n_frames=n_frames,
                  object=ObjectSpec("ellipse", _ellipse_size_for_area(0.023 * area)),
                  motion=MotionSpec(start=(160.0, 140.0), velocity=(5.0, 3.0), jitter_sigma=0.5),
                  clutter=clutter, noise_sigma=3.0, seed=101),
        SceneSpec(name="object2", frame_size=frame, n_frames=n_frames,
                  object=ObjectSpec("rect", (153, 76)),
                  motion=MotionSpec(start=(330.0, 300.0), velocity=(-4.0, 3.0), jitter_sigma=0.5),
                  clutter=clutter, noise_sigma=3.0, seed=202),
        SceneSpec(name="object3", frame_size=frame, n_frames=n_frames,
                  object=ObjectSpec("ellipse", _ellipse_size_for_area(0.007 * area)),
                  motion=MotionSpec(start=(420.0, 200.0), velocity=(6.0, -5.0), jitter_sigma=0.5),
                  clutter=clutter, noise_sigma=3.0, seed=303),
    ]


def presets(n_frames: int = 300) -> dict[str, SceneSpec]:
    return {s.name: s for s in standard_objects(n_frames)}


def with_seed(spec: SceneSpec, seed: int) -> SceneSpec:
    return replace(spec, seed=seed)


# --- scene directories -----------------------------------------------------

def write_scene(scene: Scene, out_dir, fmt: str = "ppm") -> None:
    os.makedirs(out_dir, exist_ok=True)
    for i, frame in enumerate(scene.frames):
        write_frame(os.path.join(out_dir, f"frame_{i:04d}.{fmt}"), frame)
    with open(os.path.join(out_dir, "truth.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "x", "y"])
        for i, (x, y) in enumerate(scene.truth):
            w.writerow([i, f"{x:.6g}", f"{y:.6g}"])
    if scene.spec is not None:
        with open(os.path.join(out_dir, "scene.json"), "w") as fh:
            json.dump(scene.spec.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def read_scene(scene_dir) -> Scene:
    """Load ``frame_*.ppm``/``frame_*.png`` plus an optional ``truth.csv``."""
    paths = sorted(glob.glob(os.path.join(scene_dir, "frame_*.ppm")))
    if not paths:
        paths = sorted(glob.glob(os.path.join(scene_dir, "frame_*.png")))
    if not paths:
        raise FileNotFoundError(f"no frame_*.ppm or frame_*.png files in {scene_dir}")
    frames = [read_frame(p) for p in paths]
    truth = []
    truth_path = os.path.join(scene_dir, "truth.csv")
    if os.path.exists(truth_path):
        with open(truth_path, newline="") as fh:
            rows = sorted(csv.DictReader(fh), key=lambda r: int(r["frame_index"]))
        truth = [(float(r["x"]), float(r["y"])) for r in rows]
        if len(truth) != len(frames):
            raise ValueError(f"{truth_path}: {len(truth)} rows for {len(frames)} frames")
    spec = None
    spec_path = os.path.join(scene_dir, "scene.json")
    if os.path.exists(spec_path):
        with open(spec_path) as fh:
            spec = SceneSpec.from_dict(json.load(fh))
    return Scene(frames=frames, truth=truth, spec=spec)

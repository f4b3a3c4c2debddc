"""Raster containers and the red color-segmentation detector.

Pixel origin is top-left, ``x`` grows right and ``y`` grows down. Arrays are
stored row-major as ``(height, width[, 3])``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
DEFAULT_THRESHOLD = 0.25
DEFAULT_MEDIAN_RADIUS = 1

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def _frozen(arr):
    # read-only views (e.g. crops of a frozen frame) are shared, not copied
    if arr.flags.writeable:
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Frame:
    """An 8-bit RGB image, ``data.shape == (height, width, 3)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.dtype != np.uint8:
            raise TypeError(f"Frame data must be uint8, got {data.dtype}")
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"Frame data must have shape (h, w, 3), got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("Frame must be at least 1x1")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def area(self) -> int:
        return self.width * self.height

    def region(self, x: int, y: int, w: int, h: int) -> "Frame":
        return Frame(self.data[y:y + h, x:x + w])


@dataclass(frozen=True)
class GrayImage:
    """Single-channel intensities in ``[0, 1]``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.size == 0:
            raise ValueError(f"GrayImage data must be a non-empty 2-D array, got {data.shape}")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("GrayImage values must lie in [0, 1]")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class BinaryImage:
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=bool)
        if data.ndim != 2 or data.size == 0:
            raise ValueError(f"BinaryImage data must be a non-empty 2-D array, got {data.shape}")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class BoundingBox:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 1 or self.h < 1:
            raise ValueError(f"BoundingBox needs w, h >= 1, got {self.w}x{self.h}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + (self.w - 1) / 2.0, self.y + (self.h - 1) / 2.0)

    @property
    def largest_dimension(self) -> int:
        return max(self.w, self.h)

    def contains(self, px: float, py: float) -> bool:
        return (self.x <= px <= self.x + self.w - 1) and (self.y <= py <= self.y + self.h - 1)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True)
class Blob:
    area: int
    bbox: BoundingBox
    centroid: tuple[float, float]


@dataclass(frozen=True)
class Detection:
    """Largest red blob in a frame.

    ``centroid`` is the detection center used by the tracker; ``bbox_center``
    is kept so the bounding-box convention can be compared against it.
    """

    bbox: BoundingBox
    centroid: tuple[float, float]
    area: int
    bbox_center: tuple[float, float] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "bbox_center", self.bbox.center)


def red_difference(frame: Frame) -> GrayImage:
    """Red channel minus luma, clamped to ``[0, 1]``."""
    return GrayImage(_red_difference_array(frame.data))


_RED_WEIGHTS_MILLI = np.array([701, -587, -114], dtype=np.float32)
_RED_SCALE = 255000.0


def _red_difference_milli(rgb):
    """``1000 * 255 * (R/255 - luma)`` before clamping, as exact integers.

    Every term is an integer well below 2**24, so float32 arithmetic is exact.
    """
    h, w = rgb.shape[:2]
    return (rgb.reshape(-1, 3).astype(np.float32) @ _RED_WEIGHTS_MILLI).reshape(h, w)


def _red_difference_array(rgb):
    diff = _red_difference_milli(rgb).astype(np.float64)
    np.maximum(diff, 0.0, out=diff)
    return diff / _RED_SCALE


def _integer_cutoff(t):
    # smallest integer k with k / 255000 > t, matching the float comparison exactly
    k = int(np.floor(t * _RED_SCALE))
    while k / _RED_SCALE <= t:
        k += 1
    while (k - 1) / _RED_SCALE > t:
        k -= 1
    return max(k, 1)


def median_filter(img: GrayImage, radius: int = DEFAULT_MEDIAN_RADIUS) -> GrayImage:
    """Square ``(2r+1)^2`` median with edge replication at the borders."""
    if radius < 1:
        raise ValueError(f"median radius must be >= 1, got {radius}")
    size = 2 * radius + 1
    return GrayImage(ndimage.median_filter(img.data, size=size, mode="nearest"))


def threshold(img: GrayImage, t: float = DEFAULT_THRESHOLD) -> BinaryImage:
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    return BinaryImage(img.data > t)


def median_threshold(img: GrayImage, radius: int = DEFAULT_MEDIAN_RADIUS,
                     t: float = DEFAULT_THRESHOLD) -> BinaryImage:
    """Equivalent to ``threshold(median_filter(img, radius), t)``, but faster.

    The median of an odd-sized window exceeds ``t`` exactly when a strict
    majority of the window exceeds ``t``, so the median is replaced by a
    box count over the thresholded image.
    """
    if radius < 1:
        raise ValueError(f"median radius must be >= 1, got {radius}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    return BinaryImage(_majority_mask(img.data > t, radius))


def _majority_mask(mask, radius):
    size = 2 * radius + 1
    h, w = mask.shape
    padded = np.pad(mask, radius, mode="edge").astype(np.uint16)
    rows = padded[:, 0:w].copy()
    for dx in range(1, size):
        rows += padded[:, dx:dx + w]
    counts = rows[0:h].copy()
    for dy in range(1, size):
        counts += rows[dy:dy + h]
    return counts > (size * size) // 2


def connected_components(img: BinaryImage) -> list[Blob]:
    """8-connected blobs of ``True`` pixels, in raster order of first pixel."""
    labels, n = ndimage.label(img.data, structure=_EIGHT_CONNECTED)
    if n == 0:
        return []
    return _blobs_from_labels(labels, n)


def _blobs_from_labels(labels, n):
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    return [_blob_stats(labels, i, sl, int(areas[i]))
            for i, sl in enumerate(ndimage.find_objects(labels), start=1)]


def _blob_stats(labels, i, sl, area):
    rows, cols = sl
    ys, xs = np.nonzero(labels[sl] == i)
    bbox = BoundingBox(int(cols.start), int(rows.start),
                       int(cols.stop - cols.start), int(rows.stop - rows.start))
    return Blob(area, bbox, (cols.start + xs.mean(), rows.start + ys.mean()))


def largest_blob(blobs: list[Blob]) -> Optional[Blob]:
    """Largest area wins; ties go to the smallest ``(y, x)`` bbox corner."""
    if not blobs:
        return None
    return min(blobs, key=lambda b: (-b.area, b.bbox.y, b.bbox.x))


def detect_object(frame: Frame, t: float = DEFAULT_THRESHOLD,
                  radius: int = DEFAULT_MEDIAN_RADIUS) -> Optional[Detection]:
    """Largest red blob, or ``None`` when nothing passes the threshold.

    Same result as red_difference -> median_filter -> threshold ->
    connected_components -> largest_blob, computed without the intermediate
    float images.
    """
    if radius < 1:
        raise ValueError(f"median radius must be >= 1, got {radius}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t}")
    above = _red_difference_milli(frame.data) >= _integer_cutoff(t)
    mask = _majority_mask(above, radius)
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if n == 0:
        return None
    best = None
    best_key = None
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        area = int(np.count_nonzero(labels[sl] == i))
        key = (-area, sl[0].start, sl[1].start)
        if best_key is None or key < best_key:
            best, best_key = (i, sl, area), key
    blob = _blob_stats(labels, *best)
    return Detection(bbox=blob.bbox, centroid=blob.centroid, area=blob.area)


# --- frame I/O -------------------------------------------------------------

def write_ppm(path, frame: Frame) -> None:
    header = f"P6\n{frame.width} {frame.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frame.data.tobytes())


def _ppm_tokens(buf):
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def read_ppm(path) -> Frame:
    with open(path, "rb") as fh:
        buf = fh.read()
    tokens, offset = _ppm_tokens(buf)
    if tokens[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = (int(tok) for tok in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    raster = np.frombuffer(buf, dtype=np.uint8, count=w * h * 3, offset=offset)
    return Frame(raster.reshape(h, w, 3))


def write_png(path, frame: Frame) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(frame.data), mode="RGB").save(path)


def read_png(path) -> Frame:
    from PIL import Image

    with Image.open(path) as im:
        return Frame(np.asarray(im.convert("RGB"), dtype=np.uint8))


def read_frame(path) -> Frame:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ppm":
        return read_ppm(path)
    if ext == ".png":
        return read_png(path)
    raise ValueError(f"unsupported frame format: {path}")


def write_frame(path, frame: Frame) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ppm":
        write_ppm(path, frame)
    elif ext == ".png":
        write_png(path, frame)
    else:
        raise ValueError(f"unsupported frame format: {path}")

"""Turn a keypoint clip into the two 128x128 grayscale pattern images.

* coordinate pattern: the 124 x 58 feature matrix min-max scaled to 0..255,
  centred in a 128 x 64 canvas and tiled twice side by side;
* trajectory: hip, knee and ankle of one leg over all frames, plotted as
  single pixels inside a 4-pixel margin.

Both images carry three identical channels.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .skeleton_io import CLIP_LENGTH, LEG_LANDMARKS, N_FEATURES, KeypointClip, check_side

IMAGE_SIDE = 128
CANVAS_WIDTH = 64
ROW_OFFSET = (IMAGE_SIDE - CLIP_LENGTH) // 2  # 2
COL_OFFSET = (CANVAS_WIDTH - N_FEATURES) // 2  # 3
MARGIN = 4
# hip, knee, ankle; drawn in this order so the ankle wins collisions
JOINT_INTENSITY = (85, 170, 255)


@dataclass
class PatternImage:
    pixels: np.ndarray  # (128, 128, 3) uint8
    degenerate: bool = False

    def __post_init__(self):
        if self.pixels.shape != (IMAGE_SIDE, IMAGE_SIDE, 3) or self.pixels.dtype != np.uint8:
            raise ValueError("pattern image must be a 128x128x3 uint8 array")

    @property
    def gray(self) -> np.ndarray:
        return self.pixels[:, :, 0]

    @classmethod
    def from_gray(cls, gray: np.ndarray, degenerate: bool = False) -> PatternImage:
        gray = np.asarray(gray, dtype=np.uint8)
        return cls(np.repeat(gray[:, :, None], 3, axis=2), degenerate)


@dataclass
class PatternPair:
    coord_pattern: PatternImage
    trajectory: PatternImage
    video_id: str
    start_frame: int
    side: str

    def file_stem(self) -> str:
        return f"{self.video_id}_{self.start_frame}_{self.side}"


def round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def normalize_to_gray(matrix: np.ndarray) -> np.ndarray:
    """Global min-max scaling to integers 0..255; a constant matrix maps to 0."""
    matrix = np.asarray(matrix, dtype=np.float64)
    lo, hi = matrix.min(), matrix.max()
    if hi == lo:
        return np.zeros(matrix.shape, dtype=np.uint8)
    scaled = 255.0 * (matrix - lo) / (hi - lo)
    return np.clip(round_half_away(scaled), 0, 255).astype(np.uint8)


def encode_coord_pattern(clip: KeypointClip) -> PatternImage:
    block = normalize_to_gray(clip.feature_matrix())
    canvas = np.zeros((IMAGE_SIDE, CANVAS_WIDTH), dtype=np.uint8)
    canvas[ROW_OFFSET:ROW_OFFSET + CLIP_LENGTH, COL_OFFSET:COL_OFFSET + N_FEATURES] = block
    return PatternImage.from_gray(np.hstack([canvas, canvas]))


def trajectory_pixels(points: np.ndarray) -> np.ndarray:
    """Map (..., 2) image-space points to integer (row, col) pixel indices.

    The joint bounding box is scaled by its larger extent into the
    120-pixel interior, the shorter axis centred. A zero-extent axis lands
    on the canvas centre.
    """
    points = np.asarray(points, dtype=np.float64)
    flat = points.reshape(-1, 2)
    lo = flat.min(axis=0)
    extent = flat.max(axis=0) - lo
    span = IMAGE_SIDE - 2 * MARGIN - 1  # 119: first to last interior pixel
    size = extent.max()
    if size == 0:
        mapped = np.full(flat.shape, MARGIN + span / 2.0)
    else:
        scale = span / size
        offset = (span - extent * scale) / 2.0
        mapped = MARGIN + (flat - lo) * scale + offset
    idx = round_half_away(mapped).astype(np.int64)
    # x -> column, y -> row (y grows downward as in the source frames)
    return idx[:, ::-1].reshape(points.shape)


def encode_trajectory(clip: KeypointClip, side: str) -> PatternImage:
    joints = LEG_LANDMARKS[check_side(side)]
    points = clip.landmarks[:, joints, :].transpose(1, 0, 2)  # (3, 124, 2)
    rc = trajectory_pixels(points)
    gray = np.zeros((IMAGE_SIDE, IMAGE_SIDE), dtype=np.uint8)
    for joint_rc, level in zip(rc, JOINT_INTENSITY):
        gray[joint_rc[:, 0], joint_rc[:, 1]] = level
    degenerate = any(j in clip.missing_landmarks for j in joints)
    return PatternImage.from_gray(gray, degenerate)


def encode_pair(clip: KeypointClip, side: str) -> PatternPair:
    return PatternPair(encode_coord_pattern(clip), encode_trajectory(clip, side),
                       clip.video_id, clip.start_frame, side)


def stack_pairs(pairs) -> tuple[np.ndarray, np.ndarray]:
    """Batch pattern pairs into two (N, 128, 128, 3) uint8 arrays."""
    pairs = list(pairs)
    coord = np.stack([p.coord_pattern.pixels for p in pairs])
    traj = np.stack([p.trajectory.pixels for p in pairs])
    return coord, traj


# ---------------------------------------------------------------------------
# on-disk images

def write_png(image: PatternImage, path) -> None:
    Image.fromarray(image.pixels).save(Path(path), format="PNG")


def read_png(path) -> PatternImage:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return PatternImage(arr.copy())


def write_raw(image: PatternImage, path) -> None:
    """Single-channel 128*128 bytes, row-major."""
    Path(path).write_bytes(np.ascontiguousarray(image.gray).tobytes())


def read_raw(path) -> PatternImage:
    data = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    if data.size != IMAGE_SIDE * IMAGE_SIDE:
        raise ValueError(f"{path}: expected {IMAGE_SIDE * IMAGE_SIDE} bytes, got {data.size}")
    return PatternImage.from_gray(data.reshape(IMAGE_SIDE, IMAGE_SIDE))


def write_pair(pair: PatternPair, out_dir, fmt: str = "png") -> list[Path]:
    out_dir = Path(out_dir)
    writer, ext = {"png": (write_png, ".png"), "raw": (write_raw, ".raw")}[fmt]
    paths = []
    for kind, image in (("coord", pair.coord_pattern), ("traj", pair.trajectory)):
        p = out_dir / f"{pair.file_stem()}_{kind}{ext}"
        writer(image, p)
        paths.append(p)
    return paths

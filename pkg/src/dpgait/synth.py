"""Synthetic walking videos with labels that are exact by construction.

Each video is a side-view skeleton whose legs swing sinusoidally. Per video:
amplitude ``A`` (pixels of thigh swing at unit leg length, 20..60), stride
frequency ``f`` (Hz), a constant image translation and a left/right
amplitude asymmetry. Labels per side ``s``:

    Cadence_s  = 2 f                      (two steps per stride cycle)
    StepLen_s  = STEP_LENGTH_PER_PIXEL * A_s
    KneeFlex_s = degrees(KNEE_GAIN * A_s / 100)   (peak knee flexion)
    GDI_s      = 100 - 0.5 * |A_s - 40|

These functional forms only exist so that learning can be checked at desk
scale; they carry no clinical meaning.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .skeleton_io import (N_LANDMARKS, N_SIDE_PARAMS, DatasetManifest, ManifestEntry,
                          label_key, slice_windows, write_clip_csv)

FPS = 30.0
STEP_LENGTH_PER_PIXEL = 0.01
KNEE_GAIN = 0.8
THIGH = 90.0
SHANK = 85.0
# coordinates are stored on a 1/16 pixel grid, like fixed-precision detector output
GRID = 16.0

# upper-body landmark offsets from the mid-hip (x forward, y down)
_UPPER = {
    0: (8.0, -165.0), 1: (0.0, -130.0), 2: (-2.0, -128.0), 5: (2.0, -132.0),
    15: (10.0, -170.0), 16: (10.0, -171.0), 17: (0.0, -168.0), 18: (0.0, -169.0),
}


@dataclass
class VideoParams:
    amplitude: float
    frequency: float
    translation: tuple[float, float]
    asymmetry: float = 0.0
    phase: float = 0.0

    def side_amplitude(self, side: str) -> float:
        return self.amplitude * (1.0 + self.asymmetry) if side == "L" else self.amplitude

    def labels(self) -> dict[str, float]:
        out = {}
        for side in "LR":
            a = self.side_amplitude(side)
            out[label_key("Cadence", side)] = 2.0 * self.frequency
            out[label_key("StepLen", side)] = STEP_LENGTH_PER_PIXEL * a
            out[label_key("KneeFlex", side)] = math.degrees(KNEE_GAIN * a / 100.0)
            out[label_key("GDI", side)] = 100.0 - 0.5 * abs(a - 40.0)
        return out


def random_params(rng: np.random.Generator) -> VideoParams:
    return VideoParams(
        amplitude=float(rng.uniform(20.0, 60.0)),
        frequency=float(rng.uniform(0.7, 1.3)),
        translation=(float(rng.uniform(150.0, 450.0)), float(rng.uniform(150.0, 250.0))),
        asymmetry=float(rng.uniform(-0.15, 0.15)),
        phase=float(rng.uniform(0.0, 2.0 * math.pi)),
    )


def _leg(hip: np.ndarray, swing: np.ndarray, phase: np.ndarray):
    knee_flex = swing * KNEE_GAIN * 0.5 * (1.0 - np.cos(phase + math.pi / 3))
    thigh = np.stack([np.sin(swing * np.sin(phase)), np.cos(swing * np.sin(phase))], axis=-1)
    knee = hip + THIGH * thigh
    shank_angle = swing * np.sin(phase) - knee_flex
    ankle = knee + SHANK * np.stack([np.sin(shank_angle), np.cos(shank_angle)], axis=-1)
    return knee, ankle


def render_video(params: VideoParams, n_frames: int):
    """Return (landmarks (n, 25, 2), confidences (n, 25), side_params (n, 8))."""
    t = np.arange(n_frames) / FPS
    omega = 2.0 * math.pi * params.frequency
    tx, ty = params.translation
    mid = np.stack([np.full(n_frames, tx), ty + 3.0 * np.sin(2 * omega * t)], axis=-1)
    lm = np.zeros((n_frames, N_LANDMARKS, 2))
    lm[:, 8] = mid
    for j, (dx, dy) in _UPPER.items():
        lm[:, j] = mid + (dx, dy)
    legs = {"R": (9, 10, 11, 0.0), "L": (12, 13, 14, math.pi)}
    for side, (hj, kj, aj, shift) in legs.items():
        swing = params.side_amplitude(side) / 100.0
        phase = omega * t + params.phase + shift
        hip = mid + (0.0, 2.0 if side == "R" else -2.0)
        knee, ankle = _leg(hip, swing, phase)
        lm[:, hj], lm[:, kj], lm[:, aj] = hip, knee, ankle
        # arm swings opposite to the leg on the same side
        shoulder = 2 if side == "R" else 5
        arm = -0.6 * swing * np.sin(phase)
        elbow = lm[:, shoulder] + 32.0 * np.stack([np.sin(arm), np.cos(arm)], axis=-1)
        lm[:, shoulder + 1] = elbow
        lm[:, shoulder + 2] = elbow + 30.0 * np.stack([np.sin(arm * 1.3), np.cos(arm * 1.3)], axis=-1)
        heel, big, small = (24, 22, 23) if side == "R" else (21, 19, 20)
        lm[:, heel] = ankle + (-6.0, 6.0)
        lm[:, big] = ankle + (18.0, 8.0)
        lm[:, small] = ankle + (15.0, 9.0)
    lm = np.round(lm * GRID) / GRID
    conf = np.ones((n_frames, N_LANDMARKS))
    aux = np.zeros((n_frames, N_SIDE_PARAMS))
    return lm, conf, aux


def video_ids(n_videos: int) -> list[str]:
    return [f"vid{v:04d}" for v in range(n_videos)]


def generate(n_videos: int, frames_per_video: int, seed: int = 0, videos_per_patient: int = 1):
    """Yield (video_id, patient_id, VideoParams, rendered arrays) per video."""
    if n_videos < 1:
        raise ValueError("n_videos must be >= 1")
    for v, vid in enumerate(video_ids(n_videos)):
        params = random_params(np.random.default_rng([seed, v]))
        pid = f"pat{v // max(videos_per_patient, 1):04d}"
        yield vid, pid, params, render_video(params, frames_per_video)


def write_pose_json(frames, directory: Path) -> None:
    """Write frames in the common per-frame ``people[0].pose_keypoints_2d`` layout."""
    lm, conf, _ = frames
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(len(lm)):
        flat = np.concatenate([lm[i], conf[i][:, None]], axis=1).reshape(-1).tolist()
        doc = {"version": 1.3, "people": [{"pose_keypoints_2d": flat}]}
        (directory / f"frame_{i:06d}.json").write_text(json.dumps(doc))


def write_synthetic(out_dir, n_videos: int, frames_per_video: int, seed: int = 0,
                    videos_per_patient: int = 1, pose_json: bool = False) -> DatasetManifest:
    """Render videos, cut them into clips and write ``clips/*.csv`` plus ``manifest.csv``."""
    out_dir = Path(out_dir)
    clip_dir = out_dir / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for vid, pid, params, frames in generate(n_videos, frames_per_video, seed, videos_per_patient):
        if pose_json:
            write_pose_json(frames, out_dir / "pose" / vid)
        labels = params.labels()
        for clip in slice_windows(frames, vid, pid):
            rel = f"clips/{vid}_{clip.start_frame}.csv"
            write_clip_csv(clip, out_dir / rel)
            entries.append(ManifestEntry(rel, vid, pid, None, dict(labels)))
    manifest = DatasetManifest(entries, out_dir)
    manifest.write_csv(out_dir / "manifest.csv")
    return manifest

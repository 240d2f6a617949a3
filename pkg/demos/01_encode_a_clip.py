"""Encode one synthetic walking clip into its two pattern images.

Renders a short side-view walk, cuts it into 124-frame windows and writes the
coordinate pattern and the right-leg trajectory of the first window as PNGs.

    python3 demos/01_encode_a_clip.py [out_dir]
"""
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from dpgait.pattern_encoder import encode_pair, write_pair
from dpgait.skeleton_io import slice_windows
from dpgait.synth import VideoParams, render_video

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/encode")
out_dir.mkdir(parents=True, exist_ok=True)

params = VideoParams(amplitude=45.0, frequency=1.0, translation=(320.0, 200.0), asymmetry=0.1)
frames = render_video(params, 310)
clips = slice_windows(frames, "walk01", "patient01")
print(f"310 frames -> {len(clips)} clips starting at {[c.start_frame for c in clips]}")

pair = encode_pair(clips[0], "R")
coord, traj = pair.coord_pattern.gray, pair.trajectory.gray
print(f"coordinate pattern: range {coord.min()}..{coord.max()}, "
      f"halves identical: {np.array_equal(coord[:, :64], coord[:, 64:])}")
for level, joint in zip((85, 170, 255), ("hip", "knee", "ankle")):
    print(f"trajectory {joint:<5} pixels lit: {np.count_nonzero(traj == level)}")

# moving the whole walker leaves the trajectory image unchanged
shifted = replace(clips[0], landmarks=clips[0].landmarks + np.array([57.0, -13.0]))
print("trajectory unchanged after a 57 px / -13 px shift:",
      np.array_equal(encode_pair(shifted, "R").trajectory.gray, traj))

for path in write_pair(pair, out_dir):
    print("wrote", path)

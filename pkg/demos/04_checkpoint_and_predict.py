"""Save a model, reload it, and show that predictions survive bit for bit.

Also shows what the loader reports for a damaged file.

    python3 demos/04_checkpoint_and_predict.py [work_dir]
"""
import sys
from pathlib import Path

from dpgait.dpg_model import DpgConfig, init_model, load_checkpoint, save_checkpoint
from dpgait.errors import CheckpointError
from dpgait.skeleton_io import slice_windows
from dpgait.synth import generate
from dpgait.trainer import predict_batch

work = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/checkpoint")
work.mkdir(parents=True, exist_ok=True)

model = init_model(DpgConfig(target="GDI", side="L", seed=1))
print(f"default architecture: {model.num_parameters:,} parameters")
path = work / "gdi_left.dpgc"
save_checkpoint(model, path, {"note": "untrained"})
print(f"checkpoint size: {path.stat().st_size / 2**20:.1f} MiB")

clips = [c for vid, pid, _, frames in generate(2, 310, seed=4) for c in slice_windows(frames, vid, pid)]
before = predict_batch(model, clips, "L")
after = predict_batch(load_checkpoint(path), clips, "L")
print("predictions identical after reload:", before.tobytes() == after.tobytes())

damaged = work / "damaged.dpgc"
damaged.write_bytes(path.read_bytes()[:-1000])
try:
    load_checkpoint(damaged)
except CheckpointError as exc:
    print(f"{type(exc).__name__}: {exc}")

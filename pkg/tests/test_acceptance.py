"""End-to-end acceptance checks, one test per criterion.

Each test enforces its own tolerance and runtime budget; the terminal
summary (see conftest.py) prints one PASS/FAIL line per criterion.
"""
import json
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import constant_clip
from dpgait.cli import main
from dpgait.diagnostics import OP_CASES, check_op, model_grad_check
from dpgait.dpg_model import (DpgConfig, forward, init_model, load_checkpoint, loss_and_grads,
                              predict, save_checkpoint)
from dpgait.errors import CheckpointCorruptError, CheckpointFormatError, CheckpointIntegrityError
from dpgait.evaluator import build_report
from dpgait.pattern_encoder import encode_coord_pattern, encode_pair, encode_trajectory, stack_pairs
from dpgait.skeleton_io import slice_windows
from dpgait.synth import generate
from dpgait.trainer import AdamState, adam_step, predict_batch


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        print(f"elapsed {self.elapsed:.1f}s (budget {self.seconds}s)")
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.1f}s, budget {self.seconds}s"


def synthetic_clips(n, seed=0):
    clips = []
    for vid, pid, params, frames in generate(n // 3 + 1, 310, seed=seed):
        for c in slice_windows(frames, vid, pid):
            clips.append((c, params.labels()))
    return clips[:n]


def test_criterion_1_shape_conformance(rng):
    with Budget(10):
        model = init_model(DpgConfig())
        pair = rng.integers(0, 256, (2, 1, 128, 128, 3), dtype=np.uint8)
        trace = []
        out = forward(model, pair[0], pair[1], trace=trace)
    shapes = dict(trace)
    convs = [s for k, s in trace if k == "coord.conv"]
    pools = [s for k, s in trace if k == "coord.pool"]
    assert convs == [(1, 128, 128, 32), (1, 64, 64, 64), (1, 32, 32, 128)]
    assert pools == [(1, 64, 64, 32), (1, 32, 32, 64), (1, 16, 16, 128)]
    assert shapes["traj.pool"] == (1, 16, 16, 128)
    assert shapes["coord.flatten"] == shapes["traj.flatten"] == (1, 32768)
    assert shapes["concat"] == (1, 65536)
    assert [shapes[f"fc{i}"] for i in range(1, 5)] == [(1, 512), (1, 256), (1, 128), (1, 64)]
    assert shapes["out"] == (1, 1) and out.shape == (1,)


def test_criterion_2_gradient_correctness():
    with Budget(120):
        worst = {name: max(check_op(name, s).max_rel_error for s in range(20)) for name in OP_CASES}
        model_err = max(model_grad_check(s).max_rel_error for s in range(3))
    print("worst relative error per op:", {k: f"{v:.1e}" for k, v in worst.items()})
    print(f"reduced model: {model_err:.1e}")
    assert max(worst.values()) <= 1e-4
    assert model_err <= 1e-3


def test_criterion_3_encoder_properties(rng):
    violations = []
    with Budget(30):
        for i, (clip, _) in enumerate(synthetic_clips(100, seed=1)):
            g = encode_coord_pattern(clip).gray
            if not np.array_equal(g[:, :64], g[:, 64:]):
                violations.append((i, "duplication"))
            half = g[:, :64]
            if half[:2].any() or half[126:].any() or half[:, :3].any() or half[:, 61:].any():
                violations.append((i, "padding"))
            block = half[2:126, 3:61]
            if block.min() != 0 or block.max() != 255:
                violations.append((i, "range"))
            for side in "LR":
                t = encode_trajectory(clip, side).gray
                rows, cols = np.nonzero(t)
                if len(rows) > 3 * 124 or rows.min() < 4 or rows.max() > 123 \
                        or cols.min() < 4 or cols.max() > 123:
                    violations.append((i, "trajectory bounds"))
                shift = rng.integers(-300, 300, 2).astype(float)
                moved = replace(clip, landmarks=clip.landmarks + shift)
                if not np.array_equal(encode_trajectory(moved, side).gray, t):
                    violations.append((i, "translation"))
        if encode_coord_pattern(constant_clip(7.0)).gray.any():
            violations.append(("constant", "nonzero"))
    assert violations == []


def test_criterion_4_windowing_oracle():
    with Budget(5):
        for n in range(124, 1001):
            lm = np.zeros((n, 25, 2))
            starts = [c.start_frame for c in slice_windows((lm, np.ones((n, 25)), np.zeros((n, 8))))]
            assert len(starts) == (n - 124) // 93 + 1, n
            assert starts[0] == 0 and all(b - a == 93 for a, b in zip(starts, starts[1:])), n


def test_criterion_5_overfit_sanity():
    clips = synthetic_clips(8, seed=3)
    cfg = DpgConfig(conv_channels=(4, 8, 8), fc_widths=(32, 16, 16, 8), dropout_p=0.0, seed=0)
    model = init_model(cfg)
    coord, traj = stack_pairs(encode_pair(c, "R") for c, _ in clips)
    y = np.array([labels["StepLen_R"] for _, labels in clips])
    params = {k: t.data for k, t in model.params.items()}

    def train_mse():
        return float(np.mean((predict(model, coord, traj).astype(np.float64) - y) ** 2))

    with Budget(300):
        initial = train_mse()
        state, best = AdamState(), initial
        for step in range(1, 301):
            _, grads, _ = loss_and_grads(model, coord, traj, y, "train", step)
            adam_step(params, grads, state, 1e-3)
            if step % 25 == 0:
                best = min(best, train_mse())
                if best < 0.01 * initial:
                    break
    print(f"initial MSE {initial:.4g}, reached {best:.4g} after {step} steps "
          f"(ratio {best / initial:.2e})")
    assert best < 0.01 * initial


def _pipeline(root):
    data, runs = root / "data", root / "runs"
    steps = [
        ["synth", "--n-videos", "6", "--seed", "5", "--out-dir", data],
        ["encode", "--input", data / "manifest.csv", "--out-dir", root / "encoded"],
        ["split", "--manifest", data / "manifest.csv", "--seed", "5"],
        ["train", "--manifest", data / "manifest.csv", "--target", "KneeFlex", "--side", "R",
         "--epochs", "2", "--seed", "5", "--run-dir", runs],
        ["eval", "--checkpoint", runs / "KneeFlex_R" / "best.dpgc", "--manifest", data / "manifest.csv"],
    ]
    for argv in steps:
        assert main([str(a) for a in argv]) == 0, argv
    return runs / "KneeFlex_R"


def test_criterion_6_determinism(tmp_path):
    with Budget(300):
        a = _pipeline(tmp_path / "a")
        b = _pipeline(tmp_path / "b")
    for name in ("best.dpgc", "last.dpgc"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    assert json.loads((a / "report.json").read_text()) == json.loads((b / "report.json").read_text())
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
    images_a = sorted((tmp_path / "a" / "encoded" / "images").iterdir())
    assert [p.read_bytes() for p in images_a] == \
        [(tmp_path / "b" / "encoded" / "images" / p.name).read_bytes() for p in images_a]


def test_criterion_7_checkpoint_integrity(tmp_path):
    clips = [c for c, _ in synthetic_clips(4, seed=9)]
    with Budget(10):
        model = init_model(DpgConfig(target="Cadence", side="L", seed=8))
        path = tmp_path / "m.dpgc"
        save_checkpoint(model, path)
        back = load_checkpoint(path)
        for name, t in model.params.items():
            assert back[name].data.tobytes() == t.data.tobytes(), name
        assert predict_batch(back, clips, "L").tobytes() == predict_batch(model, clips, "L").tobytes()

        small = init_model(DpgConfig(input_side=16, conv_channels=(2, 3, 4), fc_widths=(8, 4, 2, 2)))
        good = tmp_path / "s.dpgc"
        save_checkpoint(small, good)
        raw = good.read_bytes()
        last_block = small["out.bias"].size * 4
        n = len(small.params)
        cases = [
            (b"XXXX" + raw[4:], CheckpointFormatError, "magic"),
            (raw[:4] + (7).to_bytes(4, "little") + raw[8:], CheckpointFormatError, "version"),
            (raw[:-2], CheckpointCorruptError, "truncated"),
            (raw[:-9] + bytes([raw[-9] ^ 1]) + raw[-8:], CheckpointCorruptError, "checksum"),
            (raw[:-last_block], CheckpointIntegrityError, f"declares {n} blocks but file contains {n - 1}"),
            (raw + b"\0\0\0\0", CheckpointIntegrityError, "trailing"),
        ]
        for i, (data, err, match) in enumerate(cases):
            bad = tmp_path / f"bad{i}.dpgc"
            bad.write_bytes(data)
            with pytest.raises(err, match=match):
                load_checkpoint(bad)


def test_criterion_8_parameter_count():
    k, c_in = 3 * 3, 3
    conv = 0
    for c_out in (32, 64, 128):
        conv += k * c_in * c_out + c_out
        c_in = c_out
    side = 128 // 2 ** 3
    widths = [2 * side * side * 128, 512, 256, 128, 64, 1]
    fc = sum(n_in * n_out + n_out for n_in, n_out in zip(widths, widths[1:]))
    expected = 2 * conv + fc
    actual = init_model(DpgConfig()).num_parameters
    print(f"parameters: {actual} (expected {expected})")
    assert actual == expected


def test_criterion_9_mae_oracle(rng):
    p = rng.normal(50.0, 20.0, 1000)
    t = rng.normal(50.0, 20.0, 1000)
    vids = [f"v{i // 4}" for i in range(1000)]
    rep = build_report(p, t, vids, [f"c{i}" for i in range(1000)], "GDI", "L")
    recomputed = sum(abs(r.residual) for r in rep.residuals) / len(rep.residuals)
    assert abs(rep.mae_clip_level - recomputed) <= 1e-9
    assert abs(rep.mae_clip_level - sum(abs(a - b) for a, b in zip(p, t)) / 1000) <= 1e-9

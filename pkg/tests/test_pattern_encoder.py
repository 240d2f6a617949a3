from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import constant_clip, random_clip
from dpgait.pattern_encoder import (PatternImage, encode_coord_pattern, encode_pair,
                                    encode_trajectory, normalize_to_gray, read_png, read_raw,
                                    round_half_away, stack_pairs, trajectory_pixels, write_pair,
                                    write_png, write_raw)
from dpgait.skeleton_io import KeypointClip


def test_round_half_away():
    assert round_half_away(np.array([0.5, 1.5, 2.5, -0.5, 127.5])).tolist() == [1, 2, 3, -1, 128]


def test_constant_clip_gives_black_coord_pattern():
    img = encode_coord_pattern(constant_clip(3.0))
    assert img.pixels.shape == (128, 128, 3) and img.pixels.dtype == np.uint8
    assert img.pixels.max() == 0


def test_coord_pattern_mid_value_is_128():
    m = np.zeros((124, 58))
    m[0, 0] = 10.0
    m[5, 7] = 5.0
    img = encode_coord_pattern(KeypointClip.from_feature_matrix(m))
    # 255 * 5 / 10 = 127.5 rounds up
    assert img.gray[2 + 5, 3 + 7] == 128
    assert img.gray[2, 3] == 255


def test_coord_pattern_layout(rng):
    clip = random_clip(rng)
    g = encode_coord_pattern(clip).gray
    assert np.array_equal(g[:, :64], g[:, 64:])
    assert np.array_equal(g[2:126, 3:61], normalize_to_gray(clip.feature_matrix()))
    pad = np.ones((128, 64), bool)
    pad[2:126, 3:61] = False
    assert not g[:, :64][pad].any()
    p = encode_coord_pattern(clip).pixels
    assert np.array_equal(p[..., 0], p[..., 1]) and np.array_equal(p[..., 0], p[..., 2])


def test_coord_pattern_changes_under_translation(rng):
    clip = random_clip(rng)
    moved = replace(clip, landmarks=clip.landmarks + np.array([40.0, 0.0]))
    assert not np.array_equal(encode_coord_pattern(clip).gray, encode_coord_pattern(moved).gray)


def test_single_point_trajectory_hits_center():
    lm = np.full((124, 25, 2), 100.0)
    clip = KeypointClip(lm, np.ones((124, 25)), np.zeros((124, 8)))
    g = encode_trajectory(clip, "R").gray
    assert np.count_nonzero(g) == 1
    # 4 + 119/2 = 63.5 rounds to 64; the ankle is drawn last
    assert g[64, 64] == 255


def test_right_angle_geometry():
    # hip at the origin, knee 10 px to the right, ankle 10 px below the knee
    lm = np.zeros((124, 25, 2))
    lm[:, 9] = (0.0, 0.0)
    lm[:, 10] = (10.0, 0.0)
    lm[:, 11] = (10.0, 10.0)
    g = encode_trajectory(KeypointClip(lm, np.ones((124, 25)), np.zeros((124, 8))), "R").gray
    assert g[4, 4] == 85
    assert g[4, 123] == 170
    assert g[123, 123] == 255
    assert np.count_nonzero(g) == 3


def test_trajectory_uses_requested_side(rng):
    clip = random_clip(rng)
    r, l = encode_trajectory(clip, "R").gray, encode_trajectory(clip, "L").gray
    assert not np.array_equal(r, l)
    swapped = replace(clip, landmarks=clip.landmarks.copy())
    swapped.landmarks[:, [9, 10, 11]] = clip.landmarks[:, [12, 13, 14]]
    assert np.array_equal(encode_trajectory(swapped, "R").gray, l)


def test_trajectory_pixels_inside_margin(rng):
    rc = trajectory_pixels(rng.uniform(-1e3, 1e3, (3, 124, 2)))
    assert rc.min() >= 4 and rc.max() <= 123


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(-500, 500), st.integers(-500, 500),
       st.sampled_from([0.25, 0.5, 2.0, 4.0, 8.0]))
def test_trajectory_invariant_to_shift_and_scale(seed, dx, dy, scale):
    clip = random_clip(np.random.default_rng(seed))
    ref = encode_trajectory(clip, "L").gray
    moved = replace(clip, landmarks=clip.landmarks + np.array([dx, dy], dtype=float))
    assert np.array_equal(encode_trajectory(moved, "L").gray, ref)
    scaled = replace(clip, landmarks=clip.landmarks * scale)
    assert np.array_equal(encode_trajectory(scaled, "L").gray, ref)


def test_degenerate_flag_follows_missing_leg_joint(rng):
    clip = random_clip(rng)
    clip.missing_landmarks = (13,)
    assert encode_trajectory(clip, "L").degenerate
    assert not encode_trajectory(clip, "R").degenerate


def test_png_and_raw_round_trip(tmp_path, rng):
    pair = encode_pair(random_clip(rng), "R")
    write_png(pair.coord_pattern, tmp_path / "a.png")
    assert np.array_equal(read_png(tmp_path / "a.png").pixels, pair.coord_pattern.pixels)
    write_raw(pair.trajectory, tmp_path / "a.raw")
    assert (tmp_path / "a.raw").stat().st_size == 16384
    assert np.array_equal(read_raw(tmp_path / "a.raw").pixels, pair.trajectory.pixels)


def test_write_pair_names(tmp_path, rng):
    clip = random_clip(rng, video_id="vid7")
    clip.start_frame = 93
    paths = write_pair(encode_pair(clip, "L"), tmp_path)
    assert [p.name for p in paths] == ["vid7_93_L_coord.png", "vid7_93_L_traj.png"]


def test_unwritable_path(tmp_path, rng):
    img = encode_coord_pattern(random_clip(rng))
    with pytest.raises(OSError):
        write_png(img, tmp_path / "missing" / "dir" / "a.png")


def test_stack_pairs(rng):
    pairs = [encode_pair(random_clip(rng), "R") for _ in range(3)]
    coord, traj = stack_pairs(pairs)
    assert coord.shape == traj.shape == (3, 128, 128, 3)


def test_pattern_image_rejects_bad_shape():
    with pytest.raises(ValueError):
        PatternImage(np.zeros((128, 128), np.uint8))

import numpy as np
import pytest

from dpgait.skeleton_io import CLIP_LENGTH, N_LANDMARKS, N_SIDE_PARAMS, KeypointClip


def random_clip(rng, video_id="v0", patient_id="p0", grid=16, side_params=True):
    """Clip with coordinates on a 1/grid pixel lattice so shifts stay exact."""
    lm = rng.integers(0, 640 * grid, size=(CLIP_LENGTH, N_LANDMARKS, 2)) / grid
    aux = (rng.integers(-64, 64, size=(CLIP_LENGTH, N_SIDE_PARAMS)) / 8
           if side_params else np.zeros((CLIP_LENGTH, N_SIDE_PARAMS)))
    return KeypointClip(lm, np.ones((CLIP_LENGTH, N_LANDMARKS)), aux,
                        video_id=video_id, patient_id=patient_id)


def constant_clip(value=3.0):
    return KeypointClip(np.full((CLIP_LENGTH, N_LANDMARKS, 2), value),
                        np.ones((CLIP_LENGTH, N_LANDMARKS)),
                        np.full((CLIP_LENGTH, N_SIDE_PARAMS), value))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    reports = [r for key in ("passed", "failed") for r in terminalreporter.stats.get(key, [])
               if r.when == "call" and "test_acceptance.py" in r.nodeid]
    if not reports:
        return
    terminalreporter.section("acceptance criteria")
    for r in sorted(reports, key=lambda r: r.nodeid):
        name = r.nodeid.split("::")[-1]
        terminalreporter.write_line(f"{'PASS' if r.passed else 'FAIL'}  {name}  ({r.duration:.1f}s)")


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    """Six patients, three clips each, split 4/1/1 by patient."""
    from dpgait.skeleton_io import split_by_patient
    from dpgait.synth import write_synthetic

    root = tmp_path_factory.mktemp("synth")
    manifest = split_by_patient(write_synthetic(root, 6, 310, seed=11), (0.7, 0.15, 0.15), seed=0)
    manifest.write_csv(root / "manifest.csv")
    return manifest


TINY_MODEL = dict(conv_channels=(2, 2, 2), fc_widths=(8, 4, 4, 4), dropout_p=0.2)

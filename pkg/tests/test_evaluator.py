import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import TINY_MODEL
from dpgait.dpg_model import DpgConfig, init_model
from dpgait.errors import UsageError
from dpgait.evaluator import PUBLISHED_MAE, build_report, evaluate, mae, video_level_mae
from dpgait.skeleton_io import DatasetManifest, label_key


def test_mae_examples():
    assert mae([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0
    assert mae([0.0, 0.0], [1.0, -3.0]) == 2.0


def test_mae_errors():
    with pytest.raises(UsageError):
        mae([1.0], [1.0, 2.0])
    with pytest.raises(UsageError):
        mae([], [])


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=50), st.randoms())
def test_mae_symmetric_and_order_free(pairs, rnd):
    p, t = map(list, zip(*pairs))
    ref = sum(abs(a - b) for a, b in pairs) / len(pairs)
    assert mae(p, t) == pytest.approx(ref, rel=1e-12, abs=1e-9)
    assert mae(t, p) == mae(p, t)
    rnd.shuffle(pairs)
    q, u = map(list, zip(*pairs))
    assert mae(q, u) == pytest.approx(mae(p, t), rel=1e-12, abs=1e-9)


def test_video_level_example():
    # two clips of one video predicted 10 and 14 against label 10
    assert mae([10.0, 14.0], [10.0, 10.0]) == 2.0
    assert video_level_mae([10.0, 14.0], [10.0, 10.0], ["v", "v"]) == 2.0


def test_video_level_differs_from_clip_level():
    # residuals +2 and -2 cancel inside one video
    p, t, v = [12.0, 8.0, 5.0], [10.0, 10.0, 4.0], ["a", "a", "b"]
    assert mae(p, t) == pytest.approx(5 / 3)
    assert video_level_mae(p, t, v) == pytest.approx(0.5)


def test_published_reference_values():
    assert PUBLISHED_MAE["GDI"] == {"1D-CNN": 6.5469, "STT": 6.3137, "DPG": 5.6450}
    assert PUBLISHED_MAE["KneeFlex"] == {"1D-CNN": 5.9129, "STT": 5.8220, "DPG": 5.1203}
    assert PUBLISHED_MAE["Cadence"] == {"1D-CNN": 0.1035, "STT": 0.1078, "DPG": 0.1418}


def test_report_contents_and_files(tmp_path):
    rep = build_report([1.0, 3.0], [2.0, 2.0], ["v1", "v2"], ["a.csv", "b.csv"], "KneeFlex", "L")
    rep.write(tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["mae_clip_level"] == 1.0 and doc["clip_count"] == 2 and doc["video_count"] == 2
    assert [r["residual"] for r in doc["residuals"]] == [-1.0, 1.0]
    table = (tmp_path / "report.txt").read_text()
    assert "5.1203" in table and "1.0000" in table
    assert build_report([1.0], [1.0], ["v"], ["c"], "StepLen", "R").baselines == {}


def test_evaluate_with_oracle_stub(synthetic_dataset):
    key = label_key("GDI", "L")

    def oracle(clips, side):
        # look labels back up by (video, start) and add a known offset
        lookup = {(e.video_id, synthetic_dataset.load_clip(e).start_frame): e.labels[key]
                  for e in synthetic_dataset.partition("test")}
        return [lookup[(c.video_id, c.start_frame)] + 0.5 for c in clips]

    rep = evaluate(None, synthetic_dataset, "test", predictor=oracle, target="GDI", side="L")
    assert rep.mae_clip_level == pytest.approx(0.5)
    assert rep.mae_video_level == pytest.approx(0.5)


def test_evaluate_skips_unlabelled(synthetic_dataset, caplog):
    entries = [e for e in synthetic_dataset]
    stripped = DatasetManifest([type(e)(e.clip_path, e.video_id, e.patient_id, e.split,
                                        {} if i == 0 else dict(e.labels))
                                for i, e in enumerate(synthetic_dataset.partition("test"))]
                               + [e for e in entries if e.split != "test"], synthetic_dataset.root)
    rep = evaluate(None, stripped, "test", predictor=lambda c, s: np.zeros(len(c)),
                   target="Cadence", side="R")
    assert rep.skipped_missing_labels == 1
    assert rep.clip_count == len(synthetic_dataset.partition("test")) - 1


def test_evaluate_checkpoint_model(synthetic_dataset):
    model = init_model(DpgConfig(**TINY_MODEL, target="StepLen", side="R"))
    rep = evaluate(model, synthetic_dataset, "val")
    assert rep.target == "StepLen" and rep.side == "R" and rep.partition == "val"
    assert np.isfinite(rep.mae_clip_level)


def test_evaluate_bad_partition(synthetic_dataset):
    with pytest.raises(UsageError):
        evaluate(None, synthetic_dataset, "train", predictor=lambda c, s: [], target="GDI", side="L")

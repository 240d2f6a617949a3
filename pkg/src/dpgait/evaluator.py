"""Test-set scoring: clip- and video-level MAE plus a table of published references."""
from __future__ import annotations

import json
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import UsageError
from .skeleton_io import DatasetManifest, Target, check_side, label_key
from .trainer import _as_model, predict_batch

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

# Reference test-set MAEs as published (1D-CNN, STT, dual-pattern model).
PUBLISHED_MAE = {
    "GDI": {"1D-CNN": 6.5469, "STT": 6.3137, "DPG": 5.6450},
    "KneeFlex": {"1D-CNN": 5.9129, "STT": 5.8220, "DPG": 5.1203},
    "Cadence": {"1D-CNN": 0.1035, "STT": 0.1078, "DPG": 0.1418},
}


def mae(predictions: Sequence[float], targets: Sequence[float]) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise UsageError(f"mae needs two equal-length vectors, got {p.shape} and {t.shape}")
    if p.size == 0:
        raise UsageError("mae of an empty set is undefined")
    return float(np.mean(np.abs(p - t)))


@dataclass
class ClipResidual:
    video_id: str
    clip_path: str
    prediction: float
    label: float

    @property
    def residual(self) -> float:
        return self.prediction - self.label


@dataclass
class EvalReport:
    target: str
    side: str
    partition: str
    clip_count: int
    mae_clip_level: float
    mae_video_level: float
    video_count: int
    skipped_missing_labels: int = 0
    residuals: list[ClipResidual] = field(default_factory=list)
    baselines: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schema_version"] = REPORT_SCHEMA_VERSION
        d["residuals"] = [dict(asdict(r), residual=r.residual) for r in self.residuals]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def render_table(self) -> str:
        name = f"{self.target}_{self.side}"
        lines = [
            f"Test MAE for {name} ({self.partition}, {self.clip_count} clips, {self.video_count} videos)",
            "",
            f"{'model':<28}{'MAE':>12}",
            "-" * 40,
            f"{'this run (clip level)':<28}{self.mae_clip_level:>12.4f}",
            f"{'this run (video level)':<28}{self.mae_video_level:>12.4f}",
        ]
        for model, value in self.baselines.items():
            lines.append(f"{model + ' (published)':<28}{value:>12.4f}")
        if self.skipped_missing_labels:
            lines.append(f"\n{self.skipped_missing_labels} clips skipped: label unavailable")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(self.to_json())
        (out_dir / "report.txt").write_text(self.render_table())


def video_level_mae(predictions, labels, video_ids) -> float:
    """Average the clip predictions (and labels) of each video, then take the MAE."""
    groups: OrderedDict[str, list[int]] = OrderedDict()
    for i, vid in enumerate(video_ids):
        groups.setdefault(vid, []).append(i)
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(labels, dtype=np.float64)
    return mae([p[ix].mean() for ix in groups.values()], [t[ix].mean() for ix in groups.values()])


def build_report(predictions, labels, video_ids, clip_paths, target, side, partition="test",
                 skipped: int = 0) -> EvalReport:
    target = Target.parse(target)
    residuals = [ClipResidual(v, c, float(p), float(t))
                 for p, t, v, c in zip(predictions, labels, video_ids, clip_paths)]
    return EvalReport(
        target=target.value, side=side, partition=partition, clip_count=len(residuals),
        mae_clip_level=mae(predictions, labels),
        mae_video_level=video_level_mae(predictions, labels, video_ids),
        video_count=len(set(video_ids)), skipped_missing_labels=skipped, residuals=residuals,
        baselines=dict(PUBLISHED_MAE.get(target.value, {})),
    )


def evaluate(checkpoint, manifest: DatasetManifest, partition: str = "test",
             predictor: Callable | None = None, target=None, side: str | None = None) -> EvalReport:
    """Score a checkpoint (path or model) on one manifest partition.

    ``predictor(clips, side) -> predictions`` replaces the model for stubs;
    then ``target`` and ``side`` must be given explicitly.
    """
    if partition not in ("test", "val"):
        raise UsageError(f"partition must be 'test' or 'val', got {partition!r}")
    if predictor is None:
        model = _as_model(checkpoint)
        target = target or model.config.target
        side = side or model.config.side

        def predictor(clips, side_):
            return predict_batch(model, clips, side_)
    if target is None or side is None:
        raise UsageError("target and side are required with a custom predictor")
    target, side = Target.parse(target), check_side(side)
    key = label_key(target, side)
    entries = manifest.partition(partition)
    if not entries:
        raise UsageError(f"partition {partition!r} is empty")
    labelled = [e for e in entries if key in e.labels]
    skipped = len(entries) - len(labelled)
    if not labelled:
        raise UsageError(f"no clip in {partition!r} has a {key} label")
    if skipped:
        log.warning("%d clips in %s lack a %s label and were skipped", skipped, partition, key)
    clips = [manifest.load_clip(e) for e in labelled]
    preds = np.asarray(predictor(clips, side), dtype=np.float64)
    return build_report(preds, [e.labels[key] for e in labelled], [e.video_id for e in labelled],
                        [e.clip_path for e in labelled], target, side, partition, skipped)

"""Keypoint ingestion, clip windowing, gap filling and patient-level splits.

Landmark indices follow the 25-point body layout used by common pose
estimators (0 = nose, 9/10/11 = right hip/knee/ankle, 12/13/14 = left
hip/knee/ankle). A clip row is the 58-vector ``x0,y0,...,x24,y24,s0,...,s7``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ClipLengthError, IngestionError, ParseError, SchemaError, SplitError

log = logging.getLogger(__name__)

N_LANDMARKS = 25
N_SIDE_PARAMS = 8
CLIP_LENGTH = 124
WINDOW_OVERLAP = 31
WINDOW_STRIDE = CLIP_LENGTH - WINDOW_OVERLAP
N_FEATURES = 2 * N_LANDMARKS + N_SIDE_PARAMS
DEFAULT_CONFIDENCE_FLOOR = 0.05

CLIP_COLUMNS = [f"{axis}{i}" for i in range(N_LANDMARKS) for axis in "xy"] + [
    f"s{i}" for i in range(N_SIDE_PARAMS)
]

SIDES = ("L", "R")
# hip, knee, ankle
LEG_LANDMARKS = {"R": (9, 10, 11), "L": (12, 13, 14)}

SPLITS = ("train", "val", "test")


class Target(str, Enum):
    GDI = "GDI"
    KNEE_FLEX = "KneeFlex"
    CADENCE = "Cadence"
    STEP_LEN = "StepLen"

    @classmethod
    def parse(cls, name: str | Target) -> Target:
        if isinstance(name, Target):
            return name
        aliases = {
            "gdi": cls.GDI,
            "kneeflex": cls.KNEE_FLEX,
            "kneeflexmaxextension": cls.KNEE_FLEX,
            "kneeflex_maxextension": cls.KNEE_FLEX,
            "cadence": cls.CADENCE,
            "steplen": cls.STEP_LEN,
        }
        try:
            return aliases[name.replace(" ", "").lower()]
        except KeyError:
            raise ValueError(f"unknown target {name!r}; expected one of "
                             f"{[t.value for t in cls]}") from None


def check_side(side: str) -> str:
    if side not in SIDES:
        raise ValueError(f"side must be 'L' or 'R', got {side!r}")
    return side


def label_key(target: Target | str, side: str) -> str:
    return f"{Target.parse(target).value}_{check_side(side)}"


LABEL_COLUMNS = [label_key(t, s) for t in Target for s in SIDES]
MANIFEST_COLUMNS = ["clip_path", "video_id", "patient_id", "split"] + LABEL_COLUMNS


@dataclass
class SkeletonFrame:
    landmarks: np.ndarray  # (25, 2) pixels
    confidences: np.ndarray  # (25,)
    side_params: np.ndarray = field(default_factory=lambda: np.zeros(N_SIDE_PARAMS))

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        self.side_params = np.asarray(self.side_params, dtype=np.float64)
        if self.landmarks.shape != (N_LANDMARKS, 2) or self.confidences.shape != (N_LANDMARKS,):
            raise SchemaError(f"frame must hold {N_LANDMARKS} landmarks, got "
                              f"{self.landmarks.shape[0] if self.landmarks.ndim else 0}")
        if self.side_params.shape != (N_SIDE_PARAMS,):
            raise SchemaError(f"frame must hold {N_SIDE_PARAMS} side parameters")
        if not np.all(np.isfinite(self.landmarks)):
            raise SchemaError("landmark coordinates must be finite")


@dataclass
class KeypointClip:
    """One fixed-length window of a walking video."""

    landmarks: np.ndarray  # (124, 25, 2)
    confidences: np.ndarray  # (124, 25)
    side_params: np.ndarray  # (124, 8)
    video_id: str = ""
    patient_id: str = ""
    start_frame: int = 0
    side: str | None = None
    # landmarks that were never observed above the confidence floor
    missing_landmarks: tuple[int, ...] = ()

    def __post_init__(self):
        self.landmarks = np.asarray(self.landmarks, dtype=np.float64)
        self.confidences = np.asarray(self.confidences, dtype=np.float64)
        self.side_params = np.asarray(self.side_params, dtype=np.float64)
        if self.landmarks.shape[0] != CLIP_LENGTH:
            raise ClipLengthError(f"clip must have {CLIP_LENGTH} frames, got {self.landmarks.shape[0]}")
        if (self.landmarks.shape[1:] != (N_LANDMARKS, 2)
                or self.confidences.shape != (CLIP_LENGTH, N_LANDMARKS)
                or self.side_params.shape != (CLIP_LENGTH, N_SIDE_PARAMS)):
            raise SchemaError("clip arrays have inconsistent shapes")
        if self.start_frame < 0:
            raise ValueError("start_frame must be >= 0")

    @property
    def flagged(self) -> bool:
        return bool(self.missing_landmarks)

    def __len__(self):
        return CLIP_LENGTH

    def frame(self, i: int) -> SkeletonFrame:
        return SkeletonFrame(self.landmarks[i], self.confidences[i], self.side_params[i])

    @property
    def frames(self) -> list[SkeletonFrame]:
        return [self.frame(i) for i in range(CLIP_LENGTH)]

    def feature_matrix(self) -> np.ndarray:
        """The 124 x 58 matrix of coordinates followed by side parameters."""
        return np.concatenate(
            [self.landmarks.reshape(CLIP_LENGTH, 2 * N_LANDMARKS), self.side_params], axis=1
        )

    @classmethod
    def from_feature_matrix(cls, matrix: np.ndarray, **meta) -> KeypointClip:
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != N_FEATURES:
            raise SchemaError(f"feature matrix must have {N_FEATURES} columns")
        if matrix.shape[0] != CLIP_LENGTH:
            raise ClipLengthError(f"clip must have {CLIP_LENGTH} rows, got {matrix.shape[0]}")
        landmarks = matrix[:, : 2 * N_LANDMARKS].reshape(CLIP_LENGTH, N_LANDMARKS, 2)
        conf = meta.pop("confidences", np.ones((CLIP_LENGTH, N_LANDMARKS)))
        return cls(landmarks, conf, matrix[:, 2 * N_LANDMARKS:], **meta)

    def equals(self, other: KeypointClip) -> bool:
        return (
            np.array_equal(self.landmarks, other.landmarks)
            and np.array_equal(self.confidences, other.confidences)
            and np.array_equal(self.side_params, other.side_params)
            and self.missing_landmarks == other.missing_landmarks
        )


def stack_frames(frames: Sequence[SkeletonFrame]):
    if not frames:
        return (np.zeros((0, N_LANDMARKS, 2)), np.zeros((0, N_LANDMARKS)),
                np.zeros((0, N_SIDE_PARAMS)))
    return (
        np.stack([f.landmarks for f in frames]),
        np.stack([f.confidences for f in frames]),
        np.stack([f.side_params for f in frames]),
    )


# ---------------------------------------------------------------------------
# Pose JSON

def _keypoint_array(doc, path: Path) -> list:
    if isinstance(doc, list):
        return doc
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a JSON object or array")
    if "people" in doc:
        people = doc["people"]
        if not people:
            return []
        return people[0].get("pose_keypoints_2d", [])
    for key in ("pose_keypoints_2d", "keypoints"):
        if key in doc:
            return doc[key]
    raise SchemaError(f"{path}: no keypoint array found")


def read_pose_frame(path: Path, side_params: Sequence[float] | None = None) -> SkeletonFrame:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IngestionError(f"{path}: malformed JSON ({exc})") from exc
    values = _keypoint_array(doc, path)
    aux = np.zeros(N_SIDE_PARAMS) if side_params is None else np.asarray(side_params, float)
    if len(values) == 0:
        # nobody detected in this frame
        return SkeletonFrame(np.zeros((N_LANDMARKS, 2)), np.zeros(N_LANDMARKS), aux)
    if len(values) % 3 != 0 or len(values) // 3 != N_LANDMARKS:
        raise SchemaError(f"{path}: expected {N_LANDMARKS} landmarks "
                          f"({3 * N_LANDMARKS} numbers), got {len(values) / 3:g}")
    try:
        arr = np.asarray(values, dtype=np.float64).reshape(N_LANDMARKS, 3)
    except (TypeError, ValueError) as exc:
        raise IngestionError(f"{path}: non-numeric keypoint value") from exc
    xy, conf = arr[:, :2].copy(), arr[:, 2].copy()
    bad = ~np.all(np.isfinite(xy), axis=1) | ~np.isfinite(conf)
    xy[bad] = 0.0
    conf[bad] = 0.0
    return SkeletonFrame(xy, np.clip(conf, 0.0, 1.0), aux)


def ingest_pose_json(directory, video_id: str = "",
                     side_params: Sequence[float] | None = None) -> list[SkeletonFrame]:
    """Read one pose JSON per frame from ``directory`` in filename order.

    Low-confidence landmarks are kept as they are; see :func:`impute_missing`.
    """
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".json")
    if not files:
        log.warning("no pose JSON files in %s (video %s)", directory, video_id or "?")
        return []
    return [read_pose_frame(p, side_params) for p in files]


# ---------------------------------------------------------------------------
# Clip CSV

def write_clip_csv(clip: KeypointClip, path) -> None:
    matrix = clip.feature_matrix()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(CLIP_COLUMNS) + "\n")
        for row in matrix.tolist():
            fh.write(",".join(repr(v) for v in row) + "\n")


def ingest_clip_csv(path, video_id: str | None = None, patient_id: str | None = None,
                    start_frame: int = 0) -> KeypointClip:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty file, missing header")
    header = [h.strip() for h in rows[0]]
    if len(header) != N_FEATURES:
        raise SchemaError(f"{path}: expected {N_FEATURES} columns, got {len(header)}")
    if header != CLIP_COLUMNS:
        wrong = next(h for h, want in zip(header, CLIP_COLUMNS) if h != want)
        raise SchemaError(f"{path}: unexpected column {wrong!r} in header")
    data = [r for r in rows[1:] if r]
    if len(data) != CLIP_LENGTH:
        raise ClipLengthError(f"{path}: expected {CLIP_LENGTH} data rows, got {len(data)}")
    matrix = np.empty((CLIP_LENGTH, N_FEATURES))
    for r, row in enumerate(data):
        if len(row) != N_FEATURES:
            raise SchemaError(f"{path}: row {r + 1} has {len(row)} cells, expected {N_FEATURES}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {r + 1}, column {CLIP_COLUMNS[c]}: "
                                 f"not a number {cell!r}") from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: row {r + 1}, column {CLIP_COLUMNS[c]}: non-finite value")
            matrix[r, c] = v
    stem = path.stem
    return KeypointClip.from_feature_matrix(
        matrix,
        video_id=video_id if video_id is not None else stem,
        patient_id=patient_id if patient_id is not None else (video_id or stem),
        start_frame=start_frame,
    )


# ---------------------------------------------------------------------------
# windowing and gap filling

def window_starts(n_frames: int) -> list[int]:
    if n_frames < CLIP_LENGTH:
        return []
    return list(range(0, n_frames - CLIP_LENGTH + 1, WINDOW_STRIDE))


def slice_windows(frames, video_id: str = "", patient_id: str = "") -> list[KeypointClip]:
    """Cut 124-frame clips every 93 frames; a trailing partial window is dropped.

    ``frames`` is a sequence of :class:`SkeletonFrame` or a tuple of stacked
    ``(landmarks, confidences, side_params)`` arrays.
    """
    if isinstance(frames, tuple) and len(frames) == 3 and isinstance(frames[0], np.ndarray):
        lm, conf, aux = frames
    else:
        lm, conf, aux = stack_frames(list(frames))
    starts = window_starts(len(lm))
    if not starts:
        log.warning("video %s has %d frames, fewer than %d: no clips", video_id, len(lm), CLIP_LENGTH)
    return [
        KeypointClip(lm[s:s + CLIP_LENGTH].copy(), conf[s:s + CLIP_LENGTH].copy(),
                     aux[s:s + CLIP_LENGTH].copy(), video_id=video_id,
                     patient_id=patient_id, start_frame=s)
        for s in starts
    ]


def impute_missing(clip: KeypointClip,
                   confidence_floor: float = DEFAULT_CONFIDENCE_FLOOR) -> KeypointClip:
    """Fill landmarks below ``confidence_floor`` by linear interpolation in time.

    Gaps at either end take the nearest valid value. A landmark never seen
    above the floor is pinned to (0, 0) and listed in ``missing_landmarks``.
    Confidences are left untouched, which makes the operation idempotent.
    """
    if not 0.0 <= confidence_floor <= 1.0:
        raise ValueError("confidence_floor must lie in [0, 1]")
    landmarks = clip.landmarks.copy()
    valid = clip.confidences >= confidence_floor
    t = np.arange(CLIP_LENGTH, dtype=np.float64)
    missing = []
    for j in range(N_LANDMARKS):
        ok = valid[:, j]
        if ok.all():
            continue
        if not ok.any():
            landmarks[:, j] = 0.0
            missing.append(j)
            continue
        for axis in range(2):
            landmarks[:, j, axis] = np.interp(t, t[ok], clip.landmarks[ok, j, axis])
    if missing:
        log.debug("clip %s@%d: landmarks %s never valid", clip.video_id, clip.start_frame, missing)
    return replace(clip, landmarks=landmarks,
                   missing_landmarks=tuple(sorted(set(clip.missing_landmarks) | set(missing))))


# ---------------------------------------------------------------------------
# manifest and splits

@dataclass
class ManifestEntry:
    clip_path: str
    video_id: str
    patient_id: str
    split: str | None = None
    labels: dict[str, float] = field(default_factory=dict)

    def label(self, target: Target | str, side: str) -> float | None:
        return self.labels.get(label_key(target, side))


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    root: Path = Path(".")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.clip_path)
        return p if p.is_absolute() else self.root / p

    def load_clip(self, entry: ManifestEntry) -> KeypointClip:
        return ingest_clip_csv(self.resolve(entry), video_id=entry.video_id,
                               patient_id=entry.patient_id,
                               start_frame=_start_from_name(entry.clip_path))

    def patients(self) -> list[str]:
        return sorted({e.patient_id for e in self.entries})

    def partition(self, split: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def split_of(self) -> dict[str, str | None]:
        return {e.clip_path: e.split for e in self.entries}

    @classmethod
    def read_csv(cls, path) -> DatasetManifest:
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise SchemaError(f"{path}: empty manifest")
            missing = [c for c in MANIFEST_COLUMNS[:3] if c not in reader.fieldnames]
            if missing:
                raise SchemaError(f"{path}: manifest lacks columns {missing}")
            entries = []
            for lineno, row in enumerate(reader, start=2):
                labels = {}
                for key in LABEL_COLUMNS:
                    cell = (row.get(key) or "").strip()
                    if not cell:
                        continue
                    try:
                        labels[key] = float(cell)
                    except ValueError:
                        raise ParseError(f"{path}: line {lineno}, column {key}: "
                                         f"not a number {cell!r}") from None
                    if not math.isfinite(labels[key]):
                        raise ParseError(f"{path}: line {lineno}, column {key}: non-finite label")
                split = (row.get("split") or "").strip() or None
                if split is not None and split not in SPLITS:
                    raise ParseError(f"{path}: line {lineno}: unknown split {split!r}")
                entries.append(ManifestEntry(row["clip_path"], row["video_id"],
                                             row["patient_id"], split, labels))
        return cls(entries, path.parent)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(MANIFEST_COLUMNS)
            for e in self.entries:
                writer.writerow([e.clip_path, e.video_id, e.patient_id, e.split or ""]
                                + [repr(e.labels[k]) if k in e.labels else "" for k in LABEL_COLUMNS])


def _start_from_name(clip_path: str) -> int:
    # clips written by this package are named <video_id>_<start_frame>.csv
    tail = Path(clip_path).stem.rsplit("_", 1)[-1]
    return int(tail) if tail.isdigit() else 0


def split_counts(n: int, ratios: Sequence[float] = (8, 1, 1)) -> list[int]:
    """Largest-remainder apportionment of ``n`` patients; ties go to the earlier partition.

    Every partition receives at least one patient when ``n >= len(ratios)``.
    """
    total = float(sum(ratios))
    quotas = [n * r / total for r in ratios]
    counts = [math.floor(q) for q in quotas]
    order = sorted(range(len(ratios)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    for i in range(len(counts)):
        if counts[i] == 0:
            donor = max(range(len(counts)), key=lambda k: (counts[k], -k))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_by_patient(manifest: DatasetManifest, ratios: Sequence[float] = (8, 1, 1),
                     seed: int = 0) -> DatasetManifest:
    """Assign each patient (and all its clips) to exactly one of train/val/test."""
    patients = manifest.patients()
    if len(patients) < len(SPLITS):
        raise SplitError(f"need at least {len(SPLITS)} distinct patients to split, got {len(patients)}")
    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(len(patients))]
    counts = split_counts(len(order), ratios)
    assignment = {}
    pos = 0
    for name, count in zip(SPLITS, counts):
        for pid in order[pos:pos + count]:
            assignment[pid] = name
        pos += count
    entries = [replace(e, split=assignment[e.patient_id], labels=dict(e.labels))
               for e in manifest.entries]
    return DatasetManifest(entries, manifest.root)


def iter_labelled(entries: Iterable[ManifestEntry], target, side):
    key = label_key(target, side)
    for e in entries:
        if key in e.labels:
            yield e, e.labels[key]

"""Gait-parameter regression from 2D keypoint clips encoded as pattern-image pairs."""

__version__ = "0.1.0"

from .dpg_model import DpgConfig, DpgModel, forward, init_model, load_checkpoint, save_checkpoint
from .evaluator import EvalReport, evaluate, mae
from .pattern_encoder import (PatternImage, PatternPair, encode_coord_pattern, encode_pair,
                              encode_trajectory)
from .skeleton_io import (DatasetManifest, KeypointClip, SkeletonFrame, Target, impute_missing,
                          ingest_clip_csv, ingest_pose_json, slice_windows, split_by_patient,
                          write_clip_csv)
from .trainer import TrainConfig, predict, predict_batch, train

__all__ = [
    "DatasetManifest", "DpgConfig", "DpgModel", "EvalReport", "KeypointClip", "PatternImage",
    "PatternPair", "SkeletonFrame", "Target", "TrainConfig", "encode_coord_pattern", "encode_pair",
    "encode_trajectory", "evaluate", "forward", "impute_missing", "ingest_clip_csv",
    "ingest_pose_json", "init_model", "load_checkpoint", "mae", "predict", "predict_batch",
    "save_checkpoint", "slice_windows", "split_by_patient", "train", "write_clip_csv",
]

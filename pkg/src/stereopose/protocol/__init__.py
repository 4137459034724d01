"""Augmentation policy, two-stage training, evaluation protocols and benchmarking."""

from .augment import POLICY_TABLE, AugPolicy, augment
from .bench import BenchRow, MacCount, bench_fps, count_macs, format_fps, format_macs
from .evaluation import (EvalReport, NetworkPredictor, OraclePredictor, eval_frame, eval_track,
                         jitter_init)
from .training import TrainConfig, Trainer, TrainResult, train_joint, train_stage_2d, train_stage_3d

__all__ = [
    "POLICY_TABLE", "AugPolicy", "BenchRow", "EvalReport", "MacCount", "NetworkPredictor",
    "OraclePredictor", "TrainConfig", "TrainResult", "Trainer", "augment", "bench_fps",
    "count_macs", "eval_frame", "eval_track", "format_fps", "format_macs", "jitter_init",
    "train_joint", "train_stage_2d", "train_stage_3d",
]

"""Synthetic rectified stereo hand dataset."""

from .dataset import (accepted_scene, generate_dataset, generate_sequence, load_backgrounds,
                      read_dataset, read_ppm, read_tracks, render_sample, write_dataset, write_ppm)
from .hand import (JOINT_NAMES, NUM_JOINTS, HandSkeleton, SceneLimits, SceneParams,
                   SphereSkeleton, default_skeleton, pose_joints, sample_scene)
from .render import StereoSample, background_pair, frustum_labels, render_pair

__all__ = [
    "HandSkeleton", "JOINT_NAMES", "NUM_JOINTS", "SceneLimits", "SceneParams", "SphereSkeleton",
    "StereoSample", "accepted_scene", "background_pair", "default_skeleton", "generate_dataset",
    "frustum_labels", "generate_sequence", "load_backgrounds", "pose_joints", "read_dataset", "read_ppm", "read_tracks",
    "render_pair", "render_sample", "sample_scene", "write_dataset", "write_ppm",
]

"""End-to-end 3D hand pose estimation from rectified stereo pairs."""

__version__ = "0.1.0"

"""Arbitrary keypoints on jump athletes: ground truth, encodings, tokens and metrics."""

__version__ = "0.1.0"

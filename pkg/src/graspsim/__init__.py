"""Deterministic desk-scale simulator for a segmentation-driven mobile
grasping pipeline: promptable target selection, depth positioning, IK
motion planning with platform relocation, closed-loop eye-in-hand
tracking, and PID-regulated grasping."""

__version__ = "0.1.0"

"""Deterministic cloth-manipulation simulator and benchmark harness for a
gripper whose two fingers are variable-friction grippers on a width-control
mechanism."""

__version__ = "0.1.0"

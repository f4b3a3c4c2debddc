"""Kalman-predicted search-window object tracking and window-size analysis."""

__version__ = "0.1.0"

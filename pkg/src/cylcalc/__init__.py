"""Numerical pseudodifferential calculus on a flat cylinder with two ends."""
from ._accel import apply_thread_limit

__version__ = "0.1.0"

apply_thread_limit()

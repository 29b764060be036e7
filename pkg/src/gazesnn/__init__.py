"""Gaze-guided spiking neural network classifier, trainer, and energy profiler."""

__version__ = "0.1.0"

"""Fixed class colour palette shared by scene generation and mesh export."""

import numpy as np

# 16 visually distinct base colours; class ids beyond that wrap around.
_BASE = np.array([
    [0.75, 0.75, 0.75],  # class 0: background walls
    [0.85, 0.25, 0.20],
    [0.20, 0.55, 0.85],
    [0.25, 0.75, 0.30],
    [0.90, 0.75, 0.15],
    [0.60, 0.30, 0.75],
    [0.90, 0.45, 0.65],
    [0.25, 0.75, 0.70],
    [0.95, 0.55, 0.15],
    [0.45, 0.45, 0.90],
    [0.55, 0.70, 0.20],
    [0.70, 0.40, 0.25],
    [0.35, 0.60, 0.50],
    [0.80, 0.60, 0.45],
    [0.50, 0.25, 0.40],
    [0.30, 0.35, 0.60],
])


def class_palette(num_classes: int) -> np.ndarray:
    """(num_classes, 3) float albedo/colour table in [0, 1]."""
    idx = np.arange(num_classes) % len(_BASE)
    return _BASE[idx].copy()

"""Prompted night tracker: synthetic scenes, training, tracking and metrics.

Thin re-export of the compiled core. Images are float32 arrays in [C,H,W]
(or [T,C,H,W] stacks), boxes are float64 x,y,w,h rows.
"""

from ._core import (
    SceneConfig,
    Tracker,
    TrackerConfig,
    build_pyramid,
    cle,
    evaluate_trajectory,
    gen_sequence,
    gradcheck,
    iou,
    train_tracker,
)

__all__ = [
    "SceneConfig",
    "Tracker",
    "TrackerConfig",
    "build_pyramid",
    "cle",
    "evaluate_trajectory",
    "gen_sequence",
    "gradcheck",
    "iou",
    "train_tracker",
]

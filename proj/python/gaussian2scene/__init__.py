"""Two-stage point/image pre-training with Gaussian splatting supervision."""

from ._core import (
    Checkpoint,
    FormatError,
    Scene,
    ShapeError,
    TrainingDiverged,
    chamfer,
    evaluate,
    farthest_point_sample,
    gradcheck,
    gradcheck_modules,
    knn,
    load_dataset,
    load_scene,
    pretrain,
    reconstruct,
    synthesize_scene,
)

__all__ = [
    "Checkpoint",
    "FormatError",
    "Scene",
    "ShapeError",
    "TrainingDiverged",
    "chamfer",
    "evaluate",
    "farthest_point_sample",
    "gradcheck",
    "gradcheck_modules",
    "knn",
    "load_dataset",
    "load_scene",
    "pretrain",
    "reconstruct",
    "synthesize_scene",
]

"""Weakly supervised text instance segmentation with two-stage attention refinement."""

from .pipeline import run_pipeline
from .synth import fiou, generate_scene, run_bench, run_eval
from .tar import RefineConfig, binarize, refine, tar_step, two_stage_refine
from .weights import ModelWeights

__all__ = [
    "ModelWeights",
    "RefineConfig",
    "binarize",
    "fiou",
    "generate_scene",
    "refine",
    "run_bench",
    "run_eval",
    "run_pipeline",
    "tar_step",
    "two_stage_refine",
]
__version__ = "0.1.0"

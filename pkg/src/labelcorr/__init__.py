"""Correct misaligned vector annotations of line features on scanned maps."""
from .chanvese import CvOptions, cv_segment
from .lca import AffineParams, CorrectionResult, LcaOptions, lca_run
from .pipeline import PipelineConfig, correct_map
from .vectorize import LineGraph, vectorize_mask

__version__ = "0.1.0"

__all__ = [
    "AffineParams", "CorrectionResult", "CvOptions", "LcaOptions", "LineGraph", "PipelineConfig",
    "correct_map", "cv_segment", "lca_run", "vectorize_mask",
]

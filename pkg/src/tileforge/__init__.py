"""tileforge: slicing-aided inference, detection fusion and small-object evaluation."""

from ._accel import backend_name
from .detect import Detection, DetectorConfig, OracleDetector, OracleParams
from .evaluation import EvalParams, EvalReport, evaluate
from .fusion import MergeParams, merge
from .geometry import Box, intersect, ios, iou
from .pipelines import CascadeParams, PipelineSpec, cascaded_inference, run_pipeline, sliced_inference
from .scene import Annotation, SceneRecord
from .slicing import SliceParams, compute_grid, slice_dataset
from .synth import SynthParams, generate_dataset, generate_scene

__version__ = "0.1.0"

__all__ = [
    "Annotation", "Box", "CascadeParams", "Detection", "DetectorConfig", "EvalParams", "EvalReport",
    "MergeParams", "OracleDetector", "OracleParams", "PipelineSpec", "SceneRecord", "SliceParams",
    "SynthParams", "backend_name", "cascaded_inference", "compute_grid", "evaluate", "generate_dataset",
    "generate_scene", "intersect", "ios", "iou", "merge", "run_pipeline", "slice_dataset", "sliced_inference",
]

"""Raw-waveform voice anti-spoofing: model, training, metrics, profiling.

The package is self-contained: a minimal reverse-mode autodiff tensor, the
aggregated-residual/SE network over raw audio, WAV ingestion with
augmentation, the train/eval loop, countermeasure metrics (EER, min t-DCF,
AUC, DET), and an edge-cost profiler, all behind one CLI (`psanet`).
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .audio import AudioClip, load_wav, save_wav
from .errors import (CheckpointError, ConfigError, DataError, MetricError,
                     NumericsError, PsanetError, ShapeError, UsageError)
from .metrics import ScoreRecord, TdcfParams, compute_auc, compute_eer, compute_min_tdcf, det_points
from .model import PSAConfig, PSANet, StemConfig, build_model, forward_scores
from .tensor import Tensor, backward
from .train import TrainRunConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND", "AudioClip", "load_wav", "save_wav",
    "CheckpointError", "ConfigError", "DataError", "MetricError",
    "NumericsError", "PsanetError", "ShapeError", "UsageError",
    "ScoreRecord", "TdcfParams", "compute_auc", "compute_eer",
    "compute_min_tdcf", "det_points",
    "PSAConfig", "PSANet", "StemConfig", "build_model", "forward_scores",
    "Tensor", "backward", "TrainRunConfig", "evaluate", "train",
    "__version__",
]

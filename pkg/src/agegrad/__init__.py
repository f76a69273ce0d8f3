"""agegrad: hybrid ConvNeXt-Transformer age regression, from scratch.

The package is a small autodiff engine (tensor), the three model variants
(model), regression losses and evaluation metrics, AdamW with LR schedules,
a deterministic data/augmentation pipeline with a synthetic age corpus, and
a CLI harness for training, evaluation, ablations, and verification.
"""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import (
    AugmentationSpec,
    SampleManifest,
    SampleRecord,
    augment,
    batch_iter,
    gen_synthetic,
    load_manifest,
    split_dataset,
)
from .errors import (
    AgegradError,
    CheckpointError,
    ConfigError,
    ContractError,
    ManifestError,
    ShapeError,
)
from .gradcheck import GradCheckReport, grad_check
from .losses import LossSpec, adaptive_loss, standard_loss
from .metrics import MetricsReport, cs_metric, error_cdf, full_report, mae_metric
from .model import (
    ModelSpec,
    ParamStore,
    count_parameters,
    init_params,
    model_forward,
    parameter_shapes,
)
from .optim import (
    EarlyStopState,
    OptimState,
    ScheduleSpec,
    adamw_step,
    early_stop_update,
    lr_at,
)
from .tensor import Graph, Tensor, backward, tape

__version__ = "0.1.0"

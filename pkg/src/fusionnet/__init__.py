"""Fully residual encoder-decoder segmentation, end to end on the CPU.

The package bundles a small reverse-mode tensor engine, the summation-skip
encoder-decoder network built on it, the orientation/elastic/noise
augmentation pipeline, partition-based segmentation scores, and training /
prediction / evaluation workflows with a CLI.
"""

from .augment import (
    ORIENTATIONS,
    ElasticField,
    Orientation,
    SamplePair,
    add_gaussian_noise,
    crop_center,
    d4_apply,
    elastic_warp,
    enrich,
    mirror_pad,
    sample_elastic_field,
    tta_predict,
)
from .metrics import (
    EvalConfig,
    ScoreReport,
    border_thin,
    connected_components,
    dice,
    evaluate,
    info_fscore,
    median_filter,
    rand_fscore,
    threshold,
)
from .network import FusionNet, NetworkSpec
from .pipeline import (
    Checkpoint,
    CheckpointError,
    TrainConfig,
    TrainingDiverged,
    cross_validate,
    load_checkpoint,
    net_from_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .tensor import (
    Adam,
    Parameter,
    Tensor,
    add,
    backward,
    batch_norm,
    conv2d,
    conv2d_transpose,
    he_init,
    maxpool2x2,
    mse_loss,
    no_grad,
    relu,
    sigmoid,
    zero_grad,
)

__version__ = "0.1.0"

"""Early incident anticipation at desk scale.

Synthetic incident-sequence generation, a QRNN/LSTM risk-rate model with
per-frame soft attention, the EL/LEA/AdaLEA anticipation loss family,
and the threshold-sweep mAP/ATTC evaluation protocol.
"""

from .data import (
    RISK_CLASSES,
    Clip,
    ClipAnnotation,
    Dataset,
    DatasetMeta,
    FeatureSequence,
    SyntheticConfig,
    generate_synthetic,
    split_dataset,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    EarlyRiskError,
    EvalError,
    ShapeError,
)
from .evaluation import (
    CurvePoint,
    EvalConfig,
    EvalReport,
    attc,
    average_precision,
    clip_outcome,
    crossing_time,
    per_class_report,
    pr_ttc_curve,
)
from .losses import (
    EpochContext,
    LossConfig,
    adalea_weight,
    batch_loss,
    dump_schedule,
    el_weight,
    lea_weight,
    negative_clip_loss,
    positive_clip_loss,
)
from .model import (
    Model,
    ModelConfig,
    RiskTrajectory,
    attend_locals,
    init_params,
    lstm_forward,
    model_forward,
    qrnn_forward,
)
from .oracle import brute_force_oracle
from .training import (
    Checkpoint,
    OptimizerConfig,
    TrainConfig,
    compare,
    load_checkpoint,
    model_from_checkpoint,
    optimizer_step,
    save_checkpoint,
    train,
    validate_epoch,
)

__version__ = "0.1.0"

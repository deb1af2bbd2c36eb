"""Long-tailed semi-supervised training over frozen embeddings.

Submodules: embedstore (data model, bundle files, splits), zeroshot (prototype
classifier and pre-filter), head (classifier and optimizer), losses (training
objective), trainer (loop and checkpoints), evalkit (metrics), cli.
"""

from .embedstore import (
    OOD_TRUTH,
    UNLABELED,
    ClassPrior,
    DatasetBundle,
    EmbeddingRecord,
    SealedTruth,
    Split,
    SplitSpec,
    class_prior,
    labeled_class_counts,
    longtail_profile,
    make_longtail_split,
    mix_ood,
    read_bundle,
    read_split,
    synth_dataset,
    write_bundle,
    write_split,
)
from .errors import (
    CapacityError,
    CheckpointVersionError,
    ContractError,
    DegenerateInputError,
    DegeneratePriorError,
    FormatError,
    LoftError,
    ParameterError,
    TrainingDivergenceError,
)
from .evalkit import EvalReport, GroupAccuracy, OODMetrics, ReliabilityBins, ece, evaluate, group_accuracy, ood_metrics
from .head import (
    Adapter,
    ClassifierHead,
    OptimizerState,
    apply_gradients,
    forward,
    init_head,
    init_optimizer,
    msp,
    softmax,
)
from .losses import LossConfig, UnlabeledBatchStats, confidence_mask, ood_mask, supervised_loss, total_loss, unlabeled_loss
from .trainer import TrainConfig, TrainLog, TrainerState, load_checkpoint, save_checkpoint, train
from .zeroshot import (
    PrototypeBank,
    Stage1Result,
    class_mean_prototypes,
    read_prototypes,
    stage1_filter,
    write_prototypes,
    zero_shot_predict,
)

__version__ = "0.1.0"

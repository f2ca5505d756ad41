"""Randomized brain-patch functional connectivity representations feeding
KAN-augmented transformer classifiers, with a synthetic-cohort test bench.
"""

from .anchors import (
    AnchorSet,
    NoValidPlacementError,
    PatchSpec,
    grid_anchor_selection,
    patch_overlap,
    random_anchor_selection,
)
from .autodiff import AdamState, Tensor, adam_step, backward, cross_entropy
from .embedding import TokenEmbedding, embed_tokens
from .features import (
    EmptyPatchError,
    FunctionRepresentation,
    PatchSample,
    build_fc_matrix,
    iterative_sampling_representation,
    pearson,
    random_sampling_representation,
)
from .kan import (
    KanBlockParams,
    KanHead,
    RswafEdgeBank,
    drop_path,
    kan_block_forward,
    kan_head_forward,
    kan_layer_forward,
    rswaf_basis,
)
from .metrics import MetricsReport, auc, compute_metrics, export_roc, roc_curve
from .model import (
    ClassifierModel,
    ModelConfig,
    build_model,
    count_parameters,
    forward,
    model_loss,
)
from .stats import dunn_test, kruskal_wallis, stats_report
from .training import (
    ExtractionSpec,
    FoldResult,
    TrainSpec,
    cross_cohort_protocol,
    cross_validate,
    extract_features,
    run_experiment_grid,
    stratified_folds,
    train_one,
)
from .volume import (
    FmriVolume,
    GrayMatterMask,
    SyntheticCohort,
    generate_synthetic_cohort,
    read_volume,
    write_volume,
)

__version__ = "0.1.0"

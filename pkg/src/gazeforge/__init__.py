"""gazeforge: gaze-trajectory analytics for gender prediction experiments.

Pipeline stages: cohort ingestion and synthesis, Savitzky-Golay smoothing
with angular kinematics, I-VT fixation/saccade segmentation, statistical
feature extraction with ANOVA ranking, dual-channel classifiers fused with
Nelder-Mead-optimized weights, and a repeated-run evaluation harness.
"""

__version__ = "0.1.0"

from .ingest import (
    CohortSpec,
    DataError,
    GazeSample,
    GazeTrajectory,
    GOF_GEOMETRY,
    ScreenGeometry,
    concat_trials,
    generate_synthetic_cohort,
    load_cohort,
    load_geometry,
    save_cohort,
)
from .signal import KinematicSeries, SmoothingConfig, deg_per_px, kinematics, savgol_smooth, smooth_trajectory
from .segmentation import FIXATION, SACCADE, IvtParams, Segment, ivt_segment, segments_of_kind, select_vt
from .features import (
    EmptyChannelError,
    FIXATION_FEATURES,
    SACCADE_FEATURES,
    SOTA_FEATURES,
    FeatureTable,
    SpatialGrid,
    anova_f,
    anova_rank,
    extract_channel_features,
    extract_sota_features,
    select_top_k,
)
from .classifiers import (
    DEFAULT_RF_GRID,
    LogRegModel,
    RfModel,
    encode_labels,
    load_model,
    logreg_loss_grad,
    predict_proba,
    save_model,
    train_classifier,
    train_logreg,
    train_rf,
)
from .ensemble import (
    EnsembleWeights,
    EQUAL_WEIGHTS,
    NmConfig,
    NmResult,
    fuse,
    fused_accuracy,
    nelder_mead,
    optimize_weights,
    optimize_weights_for_probs,
)
from .evaluation import (
    AoiSpec,
    CohortStats,
    EvalReport,
    ExperimentConfig,
    PipelineConfig,
    balanced_split,
    cohort_stats,
    prepare_channel_tables,
    prepare_sota_table,
    run_experiment,
    run_experiment_on_tables,
    sd_curve,
    sd_vs_users,
    sem,
    sota_protocol,
    sweep_feature_counts,
)

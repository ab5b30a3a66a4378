"""Frame-level localization of spliced synthetic speech.

The package takes precomputed front-end feature matrices (one column
per time frame), learns an embedding space that separates genuine from
spoofed frames with cosine hinge losses, modulates a temporal
convolution stack with local neighbor similarities, and scores every
160 ms label frame as real or fake. Evaluation pools frame scores over
a corpus and reports EER, precision, recall, and F1 with padding
excluded.
"""

from .data import (
    DatasetStats,
    FeatureSequence,
    FrameLabels,
    Segment,
    SegmentAnnotation,
    SynthSpec,
    compile_frame_labels,
    dataset_stats,
    desk_benchmark_spec,
    load_dataset,
    load_feature_file,
    pad_features,
    synth_dataset,
    write_dataset,
    write_feature_file,
)
from .errors import (
    AnnotationError,
    ConfigError,
    DivergenceError,
    FormatError,
    MetricError,
    NumericError,
    ShapeError,
    TdlError,
    ValidationError,
)
from .esm import (
    EmbeddingSequence,
    EsmConfig,
    EsmLoss,
    align_labels_to_embedding,
    cosine_similarity,
    esm_diff_loss,
    esm_fake_loss,
    esm_loss,
    esm_real_loss,
)
from .metrics import (
    EvalPool,
    MetricsReport,
    compute_report,
    eer,
    pool_predictions,
    precision_recall_f1,
    render_report,
)
from .model import (
    OptimizerConfig,
    TdlConfig,
    TdlModel,
    TrainRecord,
    TrainResult,
    build_model,
    desk_config,
    forward,
    gradcheck_battery,
    load_checkpoint,
    full_scale_config,
    param_count_table,
    predict,
    save_checkpoint,
    total_loss,
    train,
)
from .nn import AdamState, Conv1dLayer, FcLayer, adam_step, bce_loss, count_params, grad_check
from .tconv import (
    SimilarityMatrix,
    TconvLayer,
    neighbor_similarity,
    tconv_backward,
    tconv_forward,
)

__version__ = "0.1.0"

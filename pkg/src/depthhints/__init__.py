"""depthhints: extract object-name depth bias from word embeddings,
evaluate it leave-one-out against random controls, and render per-pixel
depth-hint planes for downstream monocular depth estimators."""

__version__ = "0.1.0"

from .depth_data import (
    BinningSpec,
    ClassRecord,
    DepthFrame,
    InstanceRecord,
    aggregate_loo,
    build_inst_dataset,
    expected_depth,
    extract_instances,
    histogram,
    load_frame,
    mean_depth,
    save_frame,
)
from .embedding_store import (
    EmbeddingStore,
    average_variants,
    load_store,
    random_store,
    save_store,
)
from .errors import DepthHintsError, FormatError, NumericalError
from .harness import (
    LookupTable,
    LooReport,
    TrainSpec,
    export_lookup,
    gen_synthetic,
    pretrain,
    run_loo,
)
from .hint_planes import HintPlane, load_plane, render_features, render_scalar, save_plane
from .l2d import (
    L2DConfig,
    MlpParameters,
    adam_step,
    backward,
    forward_classification,
    forward_logmean,
    init_model,
    load_model,
    save_model,
)
from .losses import EigenMetrics, eigen_metrics, kldiv, silog

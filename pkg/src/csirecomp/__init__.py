"""Workbench for recompositing WiFi CSI amplitude from beamforming
feedback matrices and camera images: synthetic scene/channel simulation,
SVD-based feedback emulation, preprocessing, multimodal and single-modal
models, and a seeded training/evaluation harness."""

__version__ = "0.1.0"

from .sim_scene import (  # noqa: F401
    CsiSample,
    SceneConfig,
    SceneState,
    generate_dataset,
    multipath_channel,
    pedestrian_position,
    render_image,
    synthesize_csi,
)
from .bfm_core import BfmSample, SvdFactors, canonicalize, emulate_bfm, svd_per_subcarrier  # noqa: F401
from .preprocess import (  # noqa: F401
    NormStats,
    PreprocessedRecord,
    downsample_image,
    fit_norm_stats,
    flatten_bfm,
    flatten_csi_amplitude,
    normalize,
)
from .model_zoo import ModelParams, ModelSpec, build_model, count_params, forward, init_params  # noqa: F401
from .train_loop import (  # noqa: F401
    PreparedData,
    RunRecord,
    TrainConfig,
    early_stop_epoch,
    prepare_dataset,
    run_protocol,
    split_dataset,
    train,
)
from .eval_metrics import RunMetrics, mean_baseline_rmse, rmse, summarize  # noqa: F401
from .dataset_store import (  # noqa: F401
    DatasetBundle,
    DatasetError,
    import_external_csi,
    read_dataset,
    write_dataset,
)

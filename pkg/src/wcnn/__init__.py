"""Wavelet convolutional neural networks, CPU-scale.

Convolution and pooling unified as filtering-plus-downsampling, with a
fixed Haar multiresolution pyramid injected into the convolutional trunk
at matching resolutions. Includes a tiny reverse-mode autodiff core, the
2D wavelet transform machinery, training (Adam, He init, augmentation),
a Netpbm codec with dataset split protocols, and a CLI.
"""

import os as _os

# Cap BLAS threads before numpy first loads; explicit user env vars win.
if "WCNN_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["WCNN_THREADS"])

from .config import RunConfig, config_to_text, load_config, parse_config_text
from .data import (
    Dataset,
    GratingClass,
    Item,
    SplitPlan,
    SyntheticSpec,
    gen_synthetic,
    holdout_split,
    ingest_directory,
    kth_style_splits,
    rescale_nearest,
    split_from_lists,
    synthetic_preset,
)
from .netpbm import load_image, load_pgm, load_ppm, save_pgm
from .network import (
    Network,
    NetworkSpec,
    ParamsTable,
    build,
    count_params,
    energy_layer,
    load,
    save,
    spec_with,
)
from .tensor import (
    Graph,
    Tensor,
    add,
    avg_pool,
    backward,
    batchnorm,
    concat,
    conv2d,
    downsample,
    linear,
    mul,
    relu,
    softmax_cross_entropy,
    spatial_mean,
    tsum,
)
from .training import (
    EpochMetrics,
    EvalResult,
    OptimizerState,
    TrainConfig,
    TrainResult,
    adam_step,
    augment,
    center_crop,
    evaluate,
    gcn,
    he_init,
    metrics_csv,
    train,
)
from .wavelet import (
    MraDecomposition,
    MraLevel,
    QmfReport,
    WaveletFilterPair,
    decompose,
    dwt1d,
    dwt2d,
    haar,
    idwt1d,
    idwt2d,
    qmf_check,
    reconstruct,
)

__version__ = "0.1.0"

"""Fast-scan non-line-of-sight videography toolkit.

Simulates confocal transient measurements of hidden scenes, models the
galvanometer sweep distortion of fast raster scans, reconstructs frames
classically (backprojection, light-cone-transform deconvolution) or with a
small from-scratch transformer, and evaluates everything with the usual
image metrics.  See README.md for the tour and demos/ for worked examples.
"""

from .dataset import (
    MotionSpec,
    NoiseConfig,
    SequenceSample,
    ShapeSpec,
    animate,
    generate_sequence,
    make_shape,
    render_gt_image,
    serpentine_pattern,
    training_pairs,
)
from .distortion import (
    PathSampling,
    ScanPattern,
    distort_cube,
    distort_histogram,
    distortion_terms,
    shifted_point,
    subsample_cube,
)
from .errors import (
    ConfigurationError,
    DegenerateGeometryError,
    DivergenceError,
    FormatError,
    OutOfExtentError,
)
from .metrics import MetricReport, cosine, euclidean, evaluate_sequence, psnr, ssim
from .network import ModelConfig, TransitParams, forward, infer
from .recon import VolumeGrid, backproject, lct_reconstruct, max_project, upsample_cube
from .training import (
    AdamState,
    TrainConfig,
    adamw_step,
    imaging_loss,
    lr_at,
    mmd_loss,
    total_loss,
    train_stage1,
    train_stage2,
)
from .transients import (
    C_LIGHT,
    CubeKind,
    HiddenScene,
    TimeAxis,
    TransientCube,
    WallGeometry,
    apply_noise,
    render_cube,
    render_histogram,
    to_measured,
)

__version__ = "0.1.0"

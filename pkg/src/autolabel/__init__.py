"""Vehicle auto-labeling from co-registered optical (VIS) and surface-height (DSM) rasters.

Three cooperating branches: boxes from an external detector, candidate
regions from superpixel segmentation of a VIS/DSM fusion, and a patch
classifier that keeps only confident candidates.  See :mod:`autolabel.pipeline`.
"""

__version__ = "0.1.0"

from .boxes import Hbb, collapse_duplicates, iou
from .classify import (
    BaselineLinear,
    Candidate,
    ExternalScores,
    LabeledSample,
    Patch,
    SelectionResult,
    extract_patch,
    featurize,
    select_high_quality,
    train_baseline,
    update_training_set,
)
from .evaluation import (
    average_precision,
    evaluate,
    load_detections,
    load_ground_truth,
    match,
    merge_branches,
    pr_curve,
    prf1,
    stitch,
    tile,
)
from .fusion import FusionConfig, fuse, normalize_dsm
from .pipeline import ConfigError, PipelineConfig, resolution_study, run_pipeline, run_scene
from .raster_io import HeightRaster, RasterFormatError, RgbRaster, load_dsm, load_vis, resample, save_dsm, save_vis
from .regions import Mask, Region, SelectionParams
from .segmentation import NOISE, ClusterAssignment, SlicParams, SuperpixelMap, dbscan, merge_similar, slic
from .synthetic import SyntheticScene, generate_synthetic, stub_detect

"""quadsci: quad-Bayer color video snapshot compressive imaging at desk scale.

Sensing model, selective-scan state-space reconstruction network, reverse-mode
gradient engine, training-free GAP-TV-like baseline, quality metrics and a CLI.
"""

__version__ = "0.1.0"

from .cube import PSNR_CAP_DB, QualityReport, VideoCube, load_cube, psnr, save_cube, ssim
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    NumericError,
    QuadsciError,
    ResourceError,
    ShapeError,
    TrainingError,
    TruncationError,
)
from .model import NetworkConfig, attention_complexity, build, count_flops, count_params, forward
from .sensing import CfaPattern, MaskSet, Measurement, encode, gen_masks, initialize, mosaic
from .ssm import ScanDirection, SsmParams, dense_oracle, discretize, selective_scan

__all__ = [
    "PSNR_CAP_DB",
    "CfaPattern",
    "ConfigError",
    "DataError",
    "FormatError",
    "MaskSet",
    "Measurement",
    "NetworkConfig",
    "NumericError",
    "QuadsciError",
    "QualityReport",
    "ResourceError",
    "ScanDirection",
    "ShapeError",
    "SsmParams",
    "TrainingError",
    "TruncationError",
    "VideoCube",
    "attention_complexity",
    "build",
    "count_flops",
    "count_params",
    "dense_oracle",
    "discretize",
    "encode",
    "forward",
    "gen_masks",
    "initialize",
    "load_cube",
    "mosaic",
    "psnr",
    "save_cube",
    "selective_scan",
    "ssim",
]

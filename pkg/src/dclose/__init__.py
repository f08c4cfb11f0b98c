"""Black-box saliency explanations for object detectors.

The main entry points are :func:`explain` (multi-level superpixel
perturbation with density normalization and cascade fusion),
:func:`drise_explain` (the grid-mask baseline), and the metric suite in
:mod:`dclose.metrics`.
"""

from .core import (
    BBox,
    DetectionVector,
    ExplainConfig,
    SaliencyMap,
    TargetSpec,
    cosine,
    iou,
    minmax_normalize,
    validate_image,
)
from .detector import (
    BackendError,
    BlobDetector,
    BlobSpec,
    CountingDetector,
    DetectorHandle,
    FunctionDetector,
    ProposalSet,
    SubprocessDetector,
    TcpDetector,
    create_detector,
    make_blob_detector,
    make_randomized_detector,
)
from .drise import GridMaskConfig, drise_explain, generate_grid_masks
from .maskgen import MaskBatch, apply_mask, bilinear_resize, generate_masks
from .saliency import (
    LevelAccumulator,
    FusionStack,
    explain,
    explain_ablations,
    finalize_level,
    fuse,
    fusion_cascade,
    mask_weight,
    read_dcls,
    similarity,
    write_dcls,
)
from .segmentation import SegmentationMap, slic_segment

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "DetectionVector",
    "ExplainConfig",
    "SaliencyMap",
    "TargetSpec",
    "cosine",
    "iou",
    "minmax_normalize",
    "validate_image",
    "BackendError",
    "BlobDetector",
    "BlobSpec",
    "CountingDetector",
    "DetectorHandle",
    "FunctionDetector",
    "ProposalSet",
    "SubprocessDetector",
    "TcpDetector",
    "create_detector",
    "make_blob_detector",
    "make_randomized_detector",
    "GridMaskConfig",
    "drise_explain",
    "generate_grid_masks",
    "MaskBatch",
    "apply_mask",
    "bilinear_resize",
    "generate_masks",
    "LevelAccumulator",
    "FusionStack",
    "explain",
    "explain_ablations",
    "finalize_level",
    "fuse",
    "fusion_cascade",
    "mask_weight",
    "read_dcls",
    "similarity",
    "write_dcls",
    "SegmentationMap",
    "slic_segment",
    "__version__",
]

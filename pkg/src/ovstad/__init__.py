"""Open-vocabulary spatio-temporal action detection on a from-scratch numpy autograd."""

from .encoders import DualEncoder, EncoderConfig, VideoClip, Vocabulary
from .evaluation import DetectionInstance, EvalReport, GroundTruthInstance, evaluate, iou
from .objectives import focal_align_loss, focal_cls_loss, info_nce_loss, score
from .regions import BoundingBox, fuse, region_feature, roi_align
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "DetectionInstance", "DualEncoder", "EncoderConfig", "EvalReport", "GroundTruthInstance",
    "Tensor", "VideoClip", "Vocabulary", "evaluate", "focal_align_loss", "focal_cls_loss", "fuse",
    "info_nce_loss", "iou", "region_feature", "roi_align", "score",
]

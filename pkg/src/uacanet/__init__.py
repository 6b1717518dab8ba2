"""UACANet: uncertainty-augmented context attention for binary polyp segmentation."""
from .data import AugmentConfig, Sample, load_dataset, read_image, read_mask, synth_blobs
from .estimator import UACANetSegmenter
from .losses import total_loss
from .metrics import EvalReport, dice_score, evaluate_dataset, iou_score, mae
from .model import ModelConfig, UACANet
from .training import TrainConfig, load_checkpoint, poly_lr, save_checkpoint, train
from .uaca import UACA, area_maps

__all__ = [
    "AugmentConfig", "EvalReport", "ModelConfig", "Sample", "TrainConfig", "UACA", "UACANet",
    "UACANetSegmenter", "area_maps", "dice_score", "evaluate_dataset", "iou_score",
    "load_checkpoint", "load_dataset", "mae", "poly_lr", "read_image", "read_mask",
    "save_checkpoint", "synth_blobs", "total_loss", "train",
]

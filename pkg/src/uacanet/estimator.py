"""scikit-learn style wrapper around UACANet training and inference."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import Sample
from .metrics import dice_score, predict_image
from .model import ModelConfig, UACANet
from .training import TrainConfig, train
from .validation import check_images, check_masks, check_side


class UACANetSegmenter(BaseEstimator):
    """Binary polyp segmenter with ``fit`` / ``predict_proba`` / ``predict`` / ``score``.

    Images are ``H x W x 3`` arrays (uint8, or float in [0, 1]) and may differ
    in size; masks are ``H x W`` binary arrays. Predictions come back at each
    image's own resolution.

    Parameters
    ----------
    width : int
        Channel width outside the backbone (32 small, 256 large).
    side : int
        Working resolution; must be a multiple of 32.
    epochs, n_iter : int
        Training length. ``n_iter > 0`` takes precedence over ``epochs``.
    learning_rate : float
        Base rate of the polynomial decay schedule.
    schedule : {"literal", "conventional"}
        Decay form, see :class:`uacanet.training.PolySchedule`.
    """

    def __init__(self, width=32, side=352, backbone_widths=(16, 32, 64, 128),
                 disable_paa=False, disable_uncertainty=False, epochs=240, n_iter=0,
                 batch_size=8, learning_rate=1e-4, schedule="literal", augment=True,
                 threshold=0.5, random_state=0):
        self.width = width
        self.side = side
        self.backbone_widths = backbone_widths
        self.disable_paa = disable_paa
        self.disable_uncertainty = disable_uncertainty
        self.epochs = epochs
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.schedule = schedule
        self.augment = augment
        self.threshold = threshold
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        return ModelConfig(width=self.width, side=check_side(self.side),
                           backbone_widths=tuple(self.backbone_widths),
                           disable_paa=self.disable_paa,
                           disable_uncertainty=self.disable_uncertainty,
                           seed=int(self.random_state or 0))

    def fit(self, X, y):
        images = check_images(X)
        masks = check_masks(y, images)
        samples = [Sample(img, m, f"X[{i}]") for i, (img, m) in enumerate(zip(images, masks))]
        self.model_ = UACANet(self._model_config())
        cfg = TrainConfig(epochs=self.epochs, iters=self.n_iter, batch_size=self.batch_size,
                          lr=self.learning_rate, schedule=self.schedule,
                          seed=int(self.random_state or 0), augment=self.augment)
        self.loss_curve_ = []
        self.optimizer_state_ = train(self.model_, samples, cfg,
                                      on_step=lambda r: self.loss_curve_.append(r["loss"]))
        self.n_iter_ = len(self.loss_curve_)
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        """Foreground probability map per image, at the image's resolution."""
        check_is_fitted(self, "model_")
        return [predict_image(self.model_, img, self.side) for img in check_images(X)]

    def predict(self, X) -> list[np.ndarray]:
        return [(p >= self.threshold).astype(np.uint8) for p in self.predict_proba(X)]

    def score(self, X, y) -> float:
        """Mean Dice over the images."""
        images = check_images(X)
        masks = check_masks(y, images)
        probs = self.predict_proba(X)
        return float(np.mean([dice_score(p, m[0], self.threshold) for p, m in zip(probs, masks)]))

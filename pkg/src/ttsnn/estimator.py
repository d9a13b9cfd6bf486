"""Scikit-learn-style front end for the spiking classifier.

Wraps spec construction, rank assignment, TT initialization, training,
and merged inference behind fit/predict so the pipeline composes with
the usual model-selection tooling.
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .models import build_arch
from .train import TrainConfig, evaluate, finalize_merge, init_ttsnn
from .train import train as train_loop


class TTSNNClassifier(BaseEstimator, ClassifierMixin):
    """Spiking image classifier with tensor-train-decomposed conv layers.

    Parameters mirror the training pipeline: `mode` selects the layer
    execution style ("baseline" keeps dense convs), `rank_source` picks
    how per-layer TT-ranks are chosen, and `merge_after_fit` folds the
    trained cores back into dense kernels for inference.
    """

    def __init__(self, arch: str = "tiny6", mode: str = "ptt", t_steps: int = 4,
                 rank_source: str = "energy-threshold",
                 rank_list: list[int] | None = None,
                 energy_threshold: float = 0.95,
                 htt_n_half: int | None = None, htt_placement: str = "early-full",
                 epochs: int = 5, batch_size: int = 100, lr: float = 0.1,
                 momentum: float = 0.9, weight_decay: float = 1e-4,
                 lr_schedule: str = "cosine", seed: int = 0,
                 merge_after_fit: bool = True):
        self.arch = arch
        self.mode = mode
        self.t_steps = t_steps
        self.rank_source = rank_source
        self.rank_list = rank_list
        self.energy_threshold = energy_threshold
        self.htt_n_half = htt_n_half
        self.htt_placement = htt_placement
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_schedule = lr_schedule
        self.seed = seed
        self.merge_after_fit = merge_after_fit

    def _check_X(self, X) -> torch.Tensor:
        X = np.asarray(X, dtype=np.float32)
        if X.ndim != 4:
            raise ValueError(f"X must be (n, channels, H, W); got shape {X.shape}")
        return torch.from_numpy(X)

    def fit(self, X, y):
        X = self._check_X(X)
        y = np.asarray(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        htt = ({"htt_n_half": self.htt_n_half, "htt_placement": self.htt_placement}
               if self.mode == "htt" else {})
        spec = build_arch(
            self.arch,
            in_channels=X.shape[1],
            num_classes=len(self.classes_),
            input_hw=X.shape[2],
            t_steps=self.t_steps,
            mode=self.mode,
            **htt,
        )
        torch.manual_seed(self.seed)
        model, ranks = init_ttsnn(
            spec, self.rank_source, rank_list=self.rank_list,
            energy_threshold=self.energy_threshold, seed=self.seed,
        )
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                          lr=self.lr, momentum=self.momentum,
                          weight_decay=self.weight_decay,
                          schedule=self.lr_schedule, seed=self.seed)
        self.history_ = train_loop(model, (X, torch.from_numpy(y_idx)), cfg)
        if self.merge_after_fit:
            model = finalize_merge(model)
        model.eval()
        self.model_ = model
        self.ranks_ = ranks
        return self

    @torch.no_grad()
    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = self._check_X(X)
        out = []
        for start in range(0, len(X), 256):
            out.append(self.model_(X[start : start + 256]).sum(dim=0).numpy())
        return np.concatenate(out)

    def predict(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        return self.classes_[scores.argmax(axis=1)]

    def score(self, X, y) -> float:
        check_is_fitted(self, "model_")
        y = np.asarray(y)
        y_idx = np.searchsorted(self.classes_, y)
        return evaluate(self.model_, (self._check_X(X), torch.from_numpy(y_idx)))

"""Scikit-learn style facade over the feature extractor and the metric
network.

These wrappers exist so the pipeline composes with the usual estimator
machinery (``get_params`` / ``set_params``, ``clone``, grid search over
constructor arguments). Constructor arguments are stored verbatim and
validated at ``fit`` time, as sklearn expects. The native interfaces in
``dsp`` / ``trainer`` / ``evaluation`` remain the primary API; nothing here
adds behavior beyond input adaptation.

Note the data shapes are not sklearn's flat (n_samples, n_features):
the transformer maps raw clips to (n, frames, bands) spectrograms, and the
detector consumes paired stacks shaped (n, 2, frames, bands) with the
audio plane first. ``sklearn.utils.estimator_checks`` therefore does not
apply wholesale; the contract tests live in tests/test_estimators.py.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .dsp import (
    MODALITY_RATES,
    FeatureConfig,
    MelConfig,
    StftConfig,
    Waveform,
    extract_features,
)
from .errors import InvalidInput
from .trainer import ArrayFeatureStore, TrainConfig, fit as train_fit


class LogMelExtractor(BaseEstimator, TransformerMixin):
    """Log-mel spectrograms for one modality's raw clips.

    ``transform`` takes a 2-D array of waveforms, one clip per row, sampled
    at the modality's pinned rate. Clips are padded or truncated to the
    standard duration, so rows may be any length as long as they share one.
    Output is (n, frames, bands) float64.
    """

    def __init__(
        self,
        modality: str = "audio",
        n_bands: int = 50,
        window_ms: float = 20.0,
        overlap: float = 0.5,
        fft_bins: int = 256,
        f_min: float = 0.0,
        f_max: float | None = None,
        normalize: bool = False,
    ):
        self.modality = modality
        self.n_bands = n_bands
        self.window_ms = window_ms
        self.overlap = overlap
        self.fft_bins = fft_bins
        self.f_min = f_min
        self.f_max = f_max
        self.normalize = normalize

    def _config(self) -> FeatureConfig:
        return FeatureConfig(
            stft=StftConfig(
                window_ms=self.window_ms, overlap=self.overlap, fft_bins=self.fft_bins
            ),
            mel=MelConfig(n_bands=self.n_bands, f_min=self.f_min, f_max=self.f_max),
            normalize=self.normalize,
        )

    def fit(self, X=None, y=None):
        if self.modality not in MODALITY_RATES:
            raise InvalidInput(
                f"modality must be one of {sorted(MODALITY_RATES)}, got {self.modality!r}"
            )
        self._config()  # surfaces bad parameter combinations now, not per-row
        self.rate_ = MODALITY_RATES[self.modality]
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "rate_"):
            self.fit()
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2:
            raise InvalidInput(f"expected (n_clips, n_samples) waveforms, got shape {X.shape}")
        cfg = self._config()
        out = []
        for row in X:
            wave = Waveform(row, self.rate_, self.modality)
            out.append(extract_features(wave, cfg).values)
        return np.stack(out)


class SiameseFootstepDetector(BaseEstimator, ClassifierMixin):
    """Footstep presence classifier built on the pairwise metric network.

    ``fit`` trains the twin encoders on pair combinations drawn from the
    training rows and banks embeddings of up to ``n_anchors`` positive
    training examples. ``predict`` embeds each query and reports class 1
    when a strict majority of its anchor distances fall under the decision
    threshold; ties go to class 0.

    X is either a 4-D stack shaped (n, 2, frames, bands) with the audio
    plane at index 0, or a two-tuple of (audio, geophone) stacks shaped
    (n, frames, bands) each.
    """

    def __init__(
        self,
        variant: str = "cnn",
        batch_size: int = 32,
        max_epochs: int = 30,
        lr: float = 1e-3,
        margin: float = 1.0,
        threshold: float = 0.5,
        patience: int = 5,
        seed: int = 0,
        epoch_combos: int = 10_000,
        val_fraction: float = 0.2,
        n_anchors: int = 5,
    ):
        self.variant = variant
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.lr = lr
        self.margin = margin
        self.threshold = threshold
        self.patience = patience
        self.seed = seed
        self.epoch_combos = epoch_combos
        self.val_fraction = val_fraction
        self.n_anchors = n_anchors

    @staticmethod
    def _split_modalities(X):
        if isinstance(X, (tuple, list)) and len(X) == 2:
            audio = np.asarray(X[0], dtype=np.float32)
            geo = np.asarray(X[1], dtype=np.float32)
        else:
            X = np.asarray(X, dtype=np.float32)
            if X.ndim != 4 or X.shape[1] != 2:
                raise InvalidInput(
                    f"expected (n, 2, frames, bands) or an (audio, geo) pair, got shape {X.shape}"
                )
            audio, geo = X[:, 0], X[:, 1]
        if audio.ndim != 3 or audio.shape != geo.shape:
            raise InvalidInput(
                f"modality stacks must match as (n, frames, bands), got {audio.shape} vs {geo.shape}"
            )
        return audio, geo

    def fit(self, X, y):
        audio, geo = self._split_modalities(X)
        y = np.asarray(y)
        store = ArrayFeatureStore(audio, geo, y)
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidInput(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.n_anchors < 1:
            raise InvalidInput(f"n_anchors must be >= 1, got {self.n_anchors}")

        rng = np.random.default_rng(self.seed)
        train_parts, val_parts = [], []
        for label in (1, 0):
            rows = np.flatnonzero(store.labels == label)
            if len(rows) < 2:
                raise InvalidInput(
                    f"need at least two examples of class {label} to hold out validation"
                )
            rows = rng.permutation(rows)
            n_val = min(len(rows) - 1, max(1, round(self.val_fraction * len(rows))))
            val_parts.append(rows[:n_val])
            train_parts.append(rows[n_val:])
        train_idx = np.concatenate(train_parts)
        val_idx = np.concatenate(val_parts)

        cfg = TrainConfig(
            variant=self.variant,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            lr=self.lr,
            margin=self.margin,
            threshold=self.threshold,
            patience=self.patience,
            seed=self.seed,
            epoch_combos=self.epoch_combos,
            frames=audio.shape[1],
            bands=audio.shape[2],
        )
        result = train_fit(cfg, store, train_idx, val_idx)

        self.model_ = result.model
        self.metrics_ = result.metrics
        self.best_epoch_ = result.best_epoch
        self.classes_ = np.array([0, 1])
        self.frames_ = audio.shape[1]
        self.bands_ = audio.shape[2]

        pos_train = train_idx[store.labels[train_idx] == 1]
        self.n_anchors_ = min(self.n_anchors, len(pos_train))
        anchor_rows = np.sort(pos_train)[: self.n_anchors_]
        a, g = store.take(anchor_rows)
        self.anchor_embeddings_ = (
            self.model_.embed(a, g, mode="infer").data.astype(np.float64)
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise InvalidInput("this detector is not fitted yet; call fit first")

    def _anchor_distances(self, X) -> np.ndarray:
        self._check_fitted()
        audio, geo = self._split_modalities(X)
        if audio.shape[1:] != (self.frames_, self.bands_):
            raise InvalidInput(
                f"fitted for (frames, bands)=({self.frames_}, {self.bands_}), "
                f"got {audio.shape[1:]}"
            )
        emb = self.model_.embed(audio, geo, mode="infer").data.astype(np.float64)
        return np.linalg.norm(emb[:, None, :] - self.anchor_embeddings_[None], axis=2)

    def decision_function(self, X) -> np.ndarray:
        """Signed margin: positive when the median anchor distance is under
        the threshold. For an odd anchor count the sign agrees with the
        majority vote used by predict."""
        d = self._anchor_distances(X)
        return self.threshold - np.median(d, axis=1)

    def predict(self, X) -> np.ndarray:
        d = self._anchor_distances(X)
        votes = np.sum(d < self.threshold, axis=1)
        return (votes * 2 > d.shape[1]).astype(np.int64)

    def embed(self, X) -> np.ndarray:
        """Joint embeddings of the given pairs, shaped (n, embedding_dim)."""
        self._check_fitted()
        audio, geo = self._split_modalities(X)
        return self.model_.embed(audio, geo, mode="infer").data.astype(np.float64)

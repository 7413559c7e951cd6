"""scikit-learn style wrappers around HorNet and a standalone gnConv layer."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import tensor as T
from .gnconv import GnConvConfig, gnconv_forward, init_gnconv
from .harness.config import RunConfig
from .harness.train import fit_model
from .hornet import HorNet, get_preset


def _images(X) -> np.ndarray:
    X = check_array(X, allow_nd=True, dtype=[np.float64, np.float32], ensure_2d=False)
    if X.ndim == 3:
        X = X[:, None]
    if X.ndim != 4:
        raise ValueError(f"expected images shaped (N, C, H, W) or (N, H, W), got {X.shape}")
    return X


class HorNetClassifier(ClassifierMixin, BaseEstimator):
    """Image classifier trained from scratch with the toy-scale harness.

    ``X`` is (N, C, H, W) or (N, H, W); the model's input channels, image size
    and number of classes are taken from the data at :meth:`fit` time.
    """

    def __init__(self, preset: str = "micro-iso", steps: int = 200, batch_size: int = 64,
                 lr: float = 2e-3, weight_decay: float = 0.05, optimizer: str = "adamw",
                 grad_clip_norm: float | None = None, random_state: int = 0):
        self.preset = preset
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.optimizer = optimizer
        self.grad_clip_norm = grad_clip_norm
        self.random_state = random_state

    def fit(self, X, y):
        X = _images(X)
        _, y = check_X_y(X.reshape(len(X), -1), y)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        _, C, H, W = X.shape
        if H != W:
            raise ValueError(f"square images required, got {H}x{W}")
        spec = get_preset(self.preset).replace(in_chans=C, image_size=H, num_classes=len(self.classes_))
        cfg = RunConfig(model=spec, optimizer=self.optimizer, lr=self.lr,
                        weight_decay=self.weight_decay, steps=self.steps,
                        batch_size=self.batch_size, grad_clip_norm=self.grad_clip_norm,
                        seed=self.random_state, preset=self.preset)
        self.model_ = HorNet(spec, seed=self.random_state)
        result = fit_model(self.model_, X.astype(np.float32), codes.astype(np.int64), cfg)
        self.loss_curve_ = list(result.losses)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        self.input_shape_ = X.shape[1:]
        return self

    def _logits(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = _images(X)
        if X.shape[1:] != self.input_shape_:
            raise ValueError(f"expected images of shape {self.input_shape_}, got {X.shape[1:]}")
        out = []
        with T.no_grad():
            for a in range(0, len(X), 256):
                out.append(self.model_(X[a:a + 256].astype(np.float32)).data)
        return np.concatenate(out).astype(np.float64)

    def predict_proba(self, X) -> np.ndarray:
        z = self._logits(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        codes = self._logits(X).argmax(axis=1)
        return self.classes_[codes]


class GnConvTransformer(TransformerMixin, BaseEstimator):
    """Applies one randomly initialized gnConv to (N, C, H, W) feature maps."""

    def __init__(self, order: int = 2, mixer_kind: str = "dwconv7", alpha: float = 3.0,
                 padding_mode: str = "zero", random_state: int = 0):
        self.order = order
        self.mixer_kind = mixer_kind
        self.alpha = alpha
        self.padding_mode = padding_mode
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _images(X)
        spatial = tuple(X.shape[2:]) if self.mixer_kind in ("global_filter", "mixed_gf") else None
        self.config_ = GnConvConfig(self.order, X.shape[1], self.mixer_kind, self.alpha,
                                    padding_mode=self.padding_mode, spatial_size=spatial)
        self.params_ = init_gnconv(self.config_, seed=self.random_state)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = _images(X)
        with T.no_grad():
            return gnconv_forward(T.Tensor(X.astype(np.float64)), self.config_, self.params_).data

"""scikit-learn compatible wrappers around the SA module and the toy network."""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from ._validation import check_is_fitted, check_tensor4
from .attention import SaConfig, SaParams, sa_forward
from .exceptions import ConfigError
from .tensor import Rng
from .toy.train import ToyNetConfig, TrainConfig, build, train


class ShuffleAttention(TransformerMixin, BaseEstimator):
    """Shuffle Attention as a stateless-after-fit transformer on NCHW arrays.

    ``fit`` only validates the channel layout and initializes the module
    parameters (or adopts ``params``); there is nothing to learn from X
    without a downstream loss.

    Parameters
    ----------
    groups : int, default=64
        Number of feature groups G; C must be divisible by 2*G.
    shuffle_groups : int, default=2
        Grid height of the final channel shuffle.
    gn_epsilon : float, default=1e-5
    enable_gn, enable_shuffle, enable_fc : bool, default=True
        Ablation toggles.
    fc_variant : {"affine", "conv"}, default="affine"
        Per-channel scale/shift gate or a full 1x1 channel-mixing gate.
    params : SaParams or None
        Use these parameters instead of the zero-weight/unit-bias initialization.

    Attributes
    ----------
    params_ : SaParams
    config_ : SaConfig
    n_channels_ : int
    """

    def __init__(self, groups=64, shuffle_groups=2, gn_epsilon=1e-5, enable_gn=True,
                 enable_shuffle=True, enable_fc=True, fc_variant="affine", params=None):
        self.groups = groups
        self.shuffle_groups = shuffle_groups
        self.gn_epsilon = gn_epsilon
        self.enable_gn = enable_gn
        self.enable_shuffle = enable_shuffle
        self.enable_fc = enable_fc
        self.fc_variant = fc_variant
        self.params = params

    def _make_config(self):
        return SaConfig(
            groups=self.groups, shuffle_groups=self.shuffle_groups, gn_epsilon=self.gn_epsilon,
            enable_gn=self.enable_gn, enable_shuffle=self.enable_shuffle, enable_fc=self.enable_fc,
            fc_variant=self.fc_variant,
        )

    def fit(self, X, y=None):
        X = check_tensor4(X, name="X")
        cfg = self._make_config()
        c = X.shape[1]
        cfg.validate(c)
        if self.params is not None:
            if (self.params.channels, self.params.groups) != (c, cfg.groups):
                raise ConfigError(
                    f"params are for C={self.params.channels}, G={self.params.groups}; data has C={c}, G={cfg.groups}"
                )
            self.params_ = self.params.copy()
        else:
            self.params_ = SaParams.init(c, cfg.groups, cfg.fc_variant)
        self.config_ = cfg
        self.n_channels_ = c
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_tensor4(X, name="X")
        if X.shape[1] != self.n_channels_:
            raise ConfigError(f"X has C={X.shape[1]} channels, estimator was fitted with C={self.n_channels_}")
        return sa_forward(X, self.params_, self.config_)

    def n_parameters(self):
        check_is_fitted(self, "params_")
        return self.params_.count()


class ToyResNetClassifier(ClassifierMixin, BaseEstimator):
    """Small residual CNN with optional SA/SE attention, trained by SGD with momentum.

    ``fit`` accepts (n, 1, h, w) float images and integer or string labels;
    ``X_val``/``y_val`` are only used to fill ``history_``.
    """

    def __init__(self, channels=(16, 32, 64), blocks=2, attention="none", groups=8, reduction=8,
                 variant="origin", epochs=10, batch_size=16, lr=0.1, momentum=0.9,
                 weight_decay=1e-4, warmup_epochs=0, random_state=0):
        self.channels = channels
        self.blocks = blocks
        self.attention = attention
        self.groups = groups
        self.reduction = reduction
        self.variant = variant
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.warmup_epochs = warmup_epochs
        self.random_state = random_state

    def _configs(self, n_classes, size):
        net = ToyNetConfig(
            channels=tuple(self.channels), blocks=self.blocks, attention=self.attention,
            groups=self.groups, reduction=self.reduction, variant=self.variant,
            classes=n_classes, input_size=size,
        )
        tc = TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, momentum=self.momentum,
            weight_decay=self.weight_decay, warmup_epochs=self.warmup_epochs, seed=self.random_state,
        )
        return net, tc

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_tensor4(X, dtype=np.float32, name="X")
        if X.shape[1] != 1:
            raise ConfigError(f"expected single-channel images, got C={X.shape[1]}")
        y = np.asarray(y)
        if len(y) != len(X):
            raise ConfigError(f"{len(X)} samples but {len(y)} labels")
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ConfigError("need at least two classes")
        net_cfg, tc = self._configs(len(self.classes_), X.shape[2])
        self.model_ = build(net_cfg, Rng(self.random_state))
        val = (None, None)
        if X_val is not None:
            lookup = {c: i for i, c in enumerate(self.classes_)}
            val = (check_tensor4(X_val, dtype=np.float32, name="X_val"), np.array([lookup[v] for v in y_val]))
        self.history_ = train(self.model_, (X, codes), tc, *val)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        logits = self.model_.predict_logits(check_tensor4(X, dtype=np.float32, name="X")).astype(np.float64)
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[proba.argmax(axis=1)]

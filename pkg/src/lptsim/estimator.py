"""scikit-learn style wrapper: a fixed hidden network as a feature transformer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .alsim import simulate
from .hnn import WeightGenConfig, materialize, random_supermask
from .lpt import plan_lpt
from .netspec import CoreGeometry, NetworkSpec, QTensor, builtin_network
from .refconv import run_tiled


class HiddenNetworkTransformer(TransformerMixin, BaseEstimator):
    """Map (n, H, W, C) uint8 images to the network's integer outputs.

    ``fit`` only builds the network, the tiling plan and the supermask from
    ``seed``; nothing is learned from ``X``. ``backend="simulator"`` runs the
    architectural simulator, ``"reference"`` the golden tiled model.
    """

    def __init__(
        self,
        network="toy_vgg",
        input_side=16,
        seed=0,
        sparsity=0.5,
        weight_bits=4,
        backend="simulator",
        geometry=None,
    ):
        self.network = network
        self.input_side = input_side
        self.seed = seed
        self.sparsity = sparsity
        self.weight_bits = weight_bits
        self.backend = backend
        self.geometry = geometry

    def fit(self, X=None, y=None):
        if self.backend not in ("simulator", "reference"):
            raise ValueError(f"backend must be 'simulator' or 'reference', got {self.backend!r}")
        if isinstance(self.network, NetworkSpec):
            net = self.network
        else:
            net = builtin_network(self.network, self.input_side)
        geom = self.geometry or CoreGeometry()
        self.net_ = net
        self.geometry_ = geom
        self.plan_ = plan_lpt(net, geom)
        self.weight_cfg_ = WeightGenConfig(self.seed, self.weight_bits)
        self.mask_ = random_supermask(self.seed, net, self.sparsity)
        self.n_features_in_ = int(np.prod(net.input_shape))
        if X is not None:
            self._check_input(X)
        return self

    def _check_input(self, X) -> np.ndarray:
        X = np.asarray(X)
        if X.ndim != 4 or tuple(X.shape[1:]) != tuple(self.net_.input_shape):
            raise ValueError(f"expected (n, {', '.join(map(str, self.net_.input_shape))}) input, got {X.shape}")
        if not np.issubdtype(X.dtype, np.integer):
            raise TypeError("inputs must be integer activations")
        return X

    def transform(self, X):
        check_is_fitted(self, "plan_")
        X = self._check_input(X)
        weights = None
        if self.backend == "reference":
            weights = materialize(self.weight_cfg_, self.mask_, self.net_)
        outs = []
        for img in X:
            x = QTensor(img.astype(np.int64))
            if self.backend == "simulator":
                y = simulate(self.net_, self.plan_, self.weight_cfg_, self.mask_, x, geom=self.geometry_).output
            else:
                y = run_tiled(self.net_, weights, x, self.plan_)
            outs.append(y.values)
        return np.stack(outs)

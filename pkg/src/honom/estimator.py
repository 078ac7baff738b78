"""Estimator-style front-end to the nonlocal derivative operators."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .operators import build_operators
from .point_cloud import WEIGHTS, PointCloud, build_supports, default_neighbor_count


class NonlocalOperator(TransformerMixin, BaseEstimator):
    """All partial derivatives up to ``order`` of nodal fields on a point cloud.

    ``fit`` takes particle positions and builds supports and operator
    matrices; ``transform`` maps nodal values at those particles to the
    derivative vector at every particle.

    Parameters
    ----------
    order : int, default=2
        Highest derivative order.
    n_neighbors : int, optional
        Support size; ``5 * order + n_p`` when omitted.
    weight : {"const", "invvol", "gauss"}, default="const"
    gauss_shape : float, default=2.0
        Decay factor of the Gaussian weight.

    Attributes
    ----------
    bundle_ : OperatorBundle
    index_set_ : MultiIndexSet
    n_features_in_ : int
        Spatial dimension.

    Examples
    --------
    >>> import numpy as np
    >>> x = np.linspace(0, 1, 11)[:, None]
    >>> op = NonlocalOperator(order=2).fit(x)
    >>> op.transform(x[:, 0] ** 2)[5].round(8)
    array([1., 2.])
    """

    def __init__(self, order=2, n_neighbors=None, weight="const", gauss_shape=2.0):
        self.order = order
        self.n_neighbors = n_neighbors
        self.weight = weight
        self.gauss_shape = gauss_shape

    def fit(self, X, y=None, volumes=None):
        """Build supports and operators on positions ``X`` of shape ``(N, d)``."""
        X = check_array(X, dtype=float, ensure_min_samples=2)
        if not isinstance(self.order, (int, np.integer)) or self.order < 1:
            raise ValueError(f"order must be a positive integer, got {self.order!r}")
        if self.weight not in WEIGHTS:
            raise ValueError(f"weight must be one of {WEIGHTS}, got {self.weight!r}")
        n, d = X.shape
        vol = np.ones(n) if volumes is None else np.asarray(volumes, dtype=float)
        k = self.n_neighbors or min(default_neighbor_count(d, self.order), n - 1)
        cloud = PointCloud(X, vol)
        supports = build_supports(cloud, k, self.weight, self.gauss_shape)
        self.bundle_ = build_operators(cloud, supports, self.order, stabilization=False)
        self.index_set_ = self.bundle_.index_set
        self.positions_ = X
        self.n_features_in_ = d
        return self

    def transform(self, U):
        """Derivatives of nodal values ``U``.

        ``U`` of shape ``(N,)`` gives ``(N, n_p)``; ``(N, c)`` gives
        ``(N, c * n_p)`` with component-major columns.
        """
        check_is_fitted(self, "bundle_")
        U = check_array(U, dtype=float, ensure_2d=False)
        n = self.positions_.shape[0]
        if U.shape[0] != n:
            raise ValueError(f"expected values at the {n} fitted points, got {U.shape[0]}")
        d = self.bundle_.derivatives(U)
        return d if U.ndim == 1 else d.reshape(n, -1)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "bundle_")
        return np.array(["d" + "".join(map(str, ix)) for ix in self.index_set_], dtype=object)

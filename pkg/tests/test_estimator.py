import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from honom.estimator import NonlocalOperator


def cloud(n=200, d=2, seed=0):
    return np.random.default_rng(seed).random((n, d))


def test_params_round_trip_and_clone():
    op = NonlocalOperator(order=3, weight="gauss", gauss_shape=1.5)
    assert op.get_params() == {"order": 3, "n_neighbors": None, "weight": "gauss",
                               "gauss_shape": 1.5}
    c = clone(op)
    assert c.get_params() == op.get_params() and c is not op


def test_quadratic_reproduced_exactly():
    X = cloud()
    u = 1 + X[:, 0] - 2 * X[:, 1] + 3 * X[:, 0] ** 2 + X[:, 0] * X[:, 1]
    op = NonlocalOperator(order=2)
    D = op.fit(X).transform(u)
    names = list(op.get_feature_names_out())
    assert names == ["d01", "d02", "d10", "d11", "d20"]
    want = {"d10": 1 + 6 * X[:, 0] + X[:, 1], "d01": -2 + X[:, 0], "d20": 6.0, "d02": 0.0,
            "d11": 1.0}
    for j, name in enumerate(names):
        assert np.allclose(D[:, j], want[name], atol=1e-8)


def test_vector_field_columns_are_component_major():
    X = cloud(60)
    op = NonlocalOperator(order=1).fit(X)
    U = np.c_[X[:, 0], 2 * X[:, 1]]
    D = op.transform(U)
    # (0,1) then (1,0) per component
    assert D.shape == (60, 4)
    assert np.allclose(D, np.tile([0.0, 1.0, 2.0, 0.0], (60, 1)), atol=1e-10)


def test_errors():
    with pytest.raises(NotFittedError):
        NonlocalOperator().transform(np.ones(3))
    with pytest.raises(ValueError):
        NonlocalOperator(order=0).fit(cloud())
    with pytest.raises(ValueError):
        NonlocalOperator(weight="tent").fit(cloud())
    op = NonlocalOperator().fit(cloud(50))
    with pytest.raises(ValueError):
        op.transform(np.ones(49))


def test_volumes_and_neighbors():
    X = cloud(80)
    op = NonlocalOperator(order=1, n_neighbors=12, weight="invvol").fit(X, volumes=np.full(80, 2.0))
    assert op.bundle_.supports.k == 12 and op.n_features_in_ == 2

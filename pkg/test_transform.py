"""
Standardization between original and model coordinates.
"""

import numpy as np
import pytest

from data import Dataset, split
from errors import DataError
from transform import (
    Standardization,
    destandardize_std,
    destandardize_y,
    fit_standardization,
    inverse_transform_inputs,
    standardize,
    standardize_dataset,
    transform_gradients,
    transform_inputs,
    transform_y,
)


def _dataset(n=20, d=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2.0, 5.0, size=(n, d)) * [1.0, 10.0, 0.1][:d]
    y = 3.0 + X @ np.arange(1.0, d + 1.0) + rng.standard_normal(n)
    return Dataset(X=X, y=y, gradients=np.tile(np.arange(1.0, d + 1.0), (n, 1)), name="affine")


def test_response_is_centered_before_scaling():
    std = fit_standardization(np.array([[0.0], [1.0], [2.0]]), np.array([1.0, 2.0, 3.0]))
    assert std.y_mean == 2.0
    np.testing.assert_allclose(transform_y(std, [1.0, 2.0, 3.0]) * std.y_scale, [-1.0, 0.0, 1.0])


def test_training_columns_have_zero_mean_and_unit_scale():
    ds = _dataset()
    std = fit_standardization(ds.X, ds.y)
    Z = transform_inputs(std, ds.X)
    np.testing.assert_allclose(Z.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(Z.std(axis=0), 1.0, atol=1e-12)


def test_round_trips():
    ds = _dataset(seed=1)
    std = fit_standardization(ds.X, ds.y)
    np.testing.assert_allclose(inverse_transform_inputs(std, transform_inputs(std, ds.X)), ds.X, atol=1e-12)
    np.testing.assert_allclose(destandardize_y(std, transform_y(std, ds.y)), ds.y, atol=1e-12)
    y_std = transform_y(std, ds.y)
    np.testing.assert_allclose(transform_y(std, destandardize_y(std, y_std)), y_std, atol=1e-12)
    np.testing.assert_allclose(destandardize_std(std, np.ones(2)), [std.y_scale] * 2)


def test_zero_variance_column_is_named():
    X = np.column_stack([np.arange(5.0), np.full(5, 2.0)])
    with pytest.raises(DataError) as err:
        fit_standardization(X, np.arange(5.0), ["x0", "x1"])
    assert err.value.column == "x1"


def test_constant_response_is_only_centered():
    std = fit_standardization(np.arange(4.0).reshape(-1, 1), np.full(4, 7.0))
    assert std.y_scale == 1.0
    np.testing.assert_allclose(transform_y(std, np.full(4, 7.0)), 0.0)


def test_column_count_checked():
    std = Standardization.identity(2)
    with pytest.raises(DataError):
        transform_inputs(std, np.zeros((3, 3)))


def test_standardize_split_uses_training_statistics_only():
    ds = _dataset(n=30, seed=2)
    parts = split(ds, 20, seed=0)
    standardized, std = standardize(parts)
    np.testing.assert_allclose(std.x_mean, parts.train.X.mean(axis=0))
    np.testing.assert_allclose(standardized.validation.X, transform_inputs(std, parts.validation.X))
    np.testing.assert_allclose(standardized.train.y.mean(), 0.0, atol=1e-12)
    np.testing.assert_array_equal(standardized.validation_index, parts.validation_index)


def test_standardize_dataset_matches_fit():
    ds = _dataset(seed=3)
    out, std = standardize_dataset(ds)
    np.testing.assert_allclose(out.X, transform_inputs(std, ds.X))
    np.testing.assert_allclose(out.y, transform_y(std, ds.y))


def test_gradients_follow_the_chain_rule():
    # y = 3 + x . a  =>  dy_std / dx_std = a * x_scale / y_scale
    ds = _dataset(seed=4)
    std = fit_standardization(ds.X, ds.y)
    G = transform_gradients(std, ds.gradients)
    np.testing.assert_allclose(G[0], np.arange(1.0, 4.0) * std.x_scale / std.y_scale)


def test_identity_and_dict():
    std = Standardization.identity(3)
    np.testing.assert_array_equal(transform_inputs(std, np.eye(3)), np.eye(3))
    restored = Standardization(**std.to_dict())
    np.testing.assert_array_equal(restored.x_scale, std.x_scale)
    assert restored.d == 3

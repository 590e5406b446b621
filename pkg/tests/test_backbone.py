"""Hierarchical feature extraction contract."""

import numpy as np
import pytest

from shnet import tensor as T
from shnet.backbone import VisualBackbone
from shnet.errors import ShapeError
from shnet.gradcheck import check_in_place


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def test_desk_geometry_shapes(rng):
    bb = VisualBackbone(channels=64, feature_size=8, rng=rng)
    levels = bb(T.tensor(rng.uniform(size=(3, 64, 64))))
    assert len(levels) == 3
    for v in levels:
        assert v.shape == (64, 8, 8)


def test_paper_geometry_supported(rng):
    bb = VisualBackbone(channels=8, feature_size=18, rng=rng)
    levels = bb(T.tensor(rng.uniform(size=(3, 320, 320))))
    for v in levels:
        assert v.shape == (8, 18, 18)


def test_zero_image_zero_biases_gives_zero_features(rng):
    bb = VisualBackbone(channels=16, feature_size=8, rng=rng)
    out = bb(T.tensor(np.zeros((3, 64, 64))))
    for v in out:
        assert np.all(v.data == 0.0)


def test_resolution_must_divide_16(rng):
    bb = VisualBackbone(channels=8, feature_size=4, rng=rng)
    with pytest.raises(ShapeError, match="multiple of 16"):
        bb(T.tensor(np.zeros((3, 60, 60))))


def test_levels_have_distinct_parameters(rng):
    bb = VisualBackbone(channels=8, feature_size=4, rng=rng)
    img = T.tensor(rng.uniform(size=(3, 64, 64)))
    before = [v.data.copy() for v in bb(img)]
    bb.projections[2].w.data += 0.5
    after = [v.data.copy() for v in bb(img)]
    assert np.array_equal(before[0], after[0])
    assert np.array_equal(before[1], after[1])
    assert not np.array_equal(before[2], after[2])


def test_composite_gradient_check(rng):
    bb = VisualBackbone(channels=3, feature_size=2, rng=rng)
    img = T.tensor(rng.uniform(size=(3, 16, 16)), requires_grad=True)
    weights = [T.tensor(rng.normal(size=(3, 2, 2))) for _ in range(3)]

    def loss():
        total = None
        for v, w in zip(bb(img), weights):
            term = T.reshape(T.sum_all(T.mul(v, w)), (1,))
            total = term if total is None else T.add(total, term)
        return T.sum_all(total)

    err = check_in_place(loss, [p for p in bb.parameters()] + [img],
                         sample=10, rng=rng)
    assert err <= 1e-4

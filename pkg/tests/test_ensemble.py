import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from histotnet.core.types import LabelMask, ProbMap
from histotnet.ensemble import (
    BlendConfig,
    average_predictions,
    binary_from_blend,
    blend_binary,
    compose_multiclass,
    shifted_blend,
    stitch,
)
from histotnet.errors import ValidationError
from histotnet.postprocess import PostprocessConfig
from histotnet.tiling import PatchSpec, grid_origins


def test_compose_truth_table():
    pairs = list(itertools.product([0, 1], range(4)))
    binary = LabelMask(np.array([[b for b, _ in pairs]]))
    tnet3 = LabelMask(np.array([[t for _, t in pairs]]))
    result = compose_multiclass(binary, tnet3).labels[0]
    for (b, t), value in zip(pairs, result):
        assert value == 3 * b + t * (1 - b)


def test_shifted_blend_maps_to_benign_and_invasive():
    binary = LabelMask(np.array([[0, 1], [1, 0]]))
    result = shifted_blend(binary)
    assert result.labels.tolist() == [[1, 3], [3, 1]]
    assert set(np.unique(result.labels)) <= {1, 3}


def test_blending_requires_binary_masks():
    with pytest.raises(ValidationError):
        shifted_blend(LabelMask(np.array([[2]])))
    with pytest.raises(ValidationError):
        compose_multiclass(LabelMask(np.array([[1, 0]])), LabelMask(np.array([[1]])))


def test_blend_binary_weights():
    a = ProbMap(np.full((1, 2, 2), 0.8))
    b = ProbMap(np.full((1, 2, 2), 0.2))
    assert np.allclose(blend_binary(a, b).values, 0.5)
    assert np.allclose(blend_binary(a, b, weight=1.0).values, 0.8)
    assert BlendConfig().weight == 0.5
    with pytest.raises(ValidationError):
        blend_binary(a, b, weight=1.5)
    with pytest.raises(ValidationError):
        blend_binary(a, ProbMap(np.zeros((1, 3, 2))))


def test_average_predictions():
    first = np.array([[0.2, 0.8], [1.0, 0.0]])
    second = np.array([[0.4, 0.6], [0.0, 1.0]])
    assert np.allclose(average_predictions([first, second]), [[0.3, 0.7], [0.5, 0.5]])
    with pytest.raises(ValidationError):
        average_predictions([first, second[:1]])
    with pytest.raises(ValidationError):
        average_predictions([])


@st.composite
def stochastic_matrices(draw):
    """A few row-stochastic PredMatrices of one shape plus a reordering of them."""
    count = draw(st.integers(1, 6))
    shape = (count, draw(st.integers(1, 8)), draw(st.integers(2, 4)))
    raw = draw(arrays(np.float64, shape, elements=st.floats(0.01, 1.0)))
    order = draw(st.permutations(range(count)))
    return list(raw / raw.sum(axis=2, keepdims=True)), order


@settings(max_examples=60, deadline=None)
@given(stochastic_matrices())
def test_average_predictions_is_order_free_and_row_stochastic(case):
    matrices, order = case
    mean = average_predictions(matrices)
    np.testing.assert_allclose(average_predictions([matrices[i] for i in order]), mean, atol=1e-12)
    np.testing.assert_allclose(mean.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(average_predictions(matrices[:1]), matrices[0], atol=1e-12)


def test_stitch_scalar_scores_by_coverage():
    grid = grid_origins(4, 6, PatchSpec(4, 4, 2))
    assert list(grid) == [(0, 0), (0, 2)]
    pmap = stitch(np.array([0.2, 0.6]), grid)
    row = pmap.values[0, 0]
    assert row[:2].tolist() == pytest.approx([0.2, 0.2])
    assert row[2:4].tolist() == pytest.approx([0.4, 0.4])
    assert row[4:].tolist() == pytest.approx([0.6, 0.6])


def test_stitch_leaves_uncovered_pixels_at_zero():
    grid = grid_origins(5, 5, PatchSpec(2, 2, 2))
    pmap = stitch(np.ones((len(grid), 1)), grid)
    assert pmap.values[0, :4, :4].min() == 1.0
    assert pmap.values[0, 4].max() == 0.0 and pmap.values[0, :, 4].max() == 0.0


def test_stitch_patch_maps():
    grid = grid_origins(3, 4, PatchSpec(3, 3, 1))
    maps = np.stack([np.full((3, 3), 0.0), np.full((3, 3), 1.0)])
    pmap = stitch(maps, grid)
    assert pmap.values[0, 0].tolist() == pytest.approx([0.0, 0.5, 0.5, 1.0])
    with pytest.raises(ValidationError):
        stitch(np.ones(3), grid)


def test_binary_from_blend():
    values = np.zeros((1, 20, 20))
    values[0, 5:15, 5:15] = 1.0
    mask = binary_from_blend(ProbMap(values), ProbMap(values), 0.5, PostprocessConfig(blur_kernel=3, closing_size=3))
    assert mask.is_binary()
    assert mask.labels[10, 10] == 1 and mask.labels[0, 0] == 0

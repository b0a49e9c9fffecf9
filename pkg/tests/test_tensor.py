import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sparsegain.tensor import (
    CellValue, LearnerMatrix, PerfTensor, clamp01, mask_of, merge_imputed, slice_learner,
    sparsity_level, stack_learners, truncate_attempts,
)

dims = st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4))


@st.composite
def tensors(draw):
    shape = draw(dims)
    vals = draw(arrays(float, shape, elements=st.sampled_from([0.0, 1.0, np.nan])))
    return PerfTensor(vals)


def test_hand_example(small_tensor):
    t = small_tensor
    assert t.shape == (2, 2, 3)
    assert t.n_observed == 7
    assert sparsity_level(t) == 5 / 12
    assert t.cell(0, 0, 0) is CellValue.CORRECT
    assert t.cell(0, 0, 1) is CellValue.INCORRECT
    assert t.cell(0, 0, 2) is CellValue.MISSING
    assert mask_of(t)[1].tolist() == [[1, 0, 0], [1, 1, 0]]


def test_missing_is_not_zero(small_tensor):
    assert np.isnan(small_tensor.values[0, 0, 2])
    assert small_tensor.filled(-1.0)[0, 0, 2] == -1.0


def test_values_are_read_only(small_tensor):
    with pytest.raises(ValueError):
        small_tensor.values[0, 0, 0] = 0.5


@pytest.mark.parametrize("bad", [np.zeros((2, 2)), np.full((1, 1, 1), 1.5), np.full((1, 1, 1), -0.1), np.full((1, 1, 1), np.inf)])
def test_rejects_bad_values(bad):
    with pytest.raises(ValueError):
        PerfTensor(bad)


def test_rejects_bad_labels():
    with pytest.raises(ValueError):
        PerfTensor(np.zeros((2, 1, 1)), ("a", "a"))
    with pytest.raises(ValueError):
        PerfTensor(np.zeros((2, 1, 1)), ("a",))


def test_default_labels():
    t = PerfTensor(np.zeros((3, 2, 1)))
    assert t.learner_ids == ("0", "1", "2") and t.question_ids == ("0", "1")


def test_slice_out_of_range(small_tensor):
    with pytest.raises(IndexError):
        slice_learner(small_tensor, 2)
    with pytest.raises(IndexError):
        slice_learner(small_tensor, -1)


@given(tensors())
def test_mask_matches_nan(t):
    assert np.array_equal(mask_of(t) == 0, np.isnan(t.values))
    assert sparsity_level(t) == np.isnan(t.values).mean()


@given(tensors())
def test_slice_stack_round_trip(t):
    slices = [slice_learner(t, u) for u in range(t.shape[0])][::-1]
    assert stack_learners(slices, t.learner_ids, t.question_ids) == t


@given(tensors(), st.data())
def test_truncation(t, data):
    m = data.draw(st.integers(1, t.shape[2]))
    tr = truncate_attempts(t, m)
    assert tr.shape == t.shape[:2] + (m,)
    assert np.array_equal(tr.values, t.values[:, :, :m], equal_nan=True)


def test_truncation_bounds(small_tensor):
    for m in (0, 4):
        with pytest.raises(ValueError):
            truncate_attempts(small_tensor, m)


@given(tensors(), st.data())
def test_merge_preserves_observed(t, data):
    gen = data.draw(arrays(float, t.shape, elements=st.floats(0, 1)))
    out = merge_imputed(t.values, gen)
    obs = ~np.isnan(t.values)
    assert np.array_equal(out[obs], t.values[obs])
    assert np.array_equal(out[~obs], gen[~obs])


def test_merge_learner_matrix(small_tensor):
    lm = slice_learner(small_tensor, 1)
    out = merge_imputed(lm, np.full((2, 3), 0.25))
    assert out.tolist() == [[0.0, 0.25, 0.25], [1.0, 1.0, 0.25]]


def test_merge_errors():
    v = np.array([[1.0, np.nan]])
    with pytest.raises(ValueError):
        merge_imputed(v, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        merge_imputed(v, np.array([[0.0, np.nan]]))
    lm = LearnerMatrix(0, v, ~np.isnan(v))
    assert merge_imputed(lm, np.array([[0.0, 0.5]])).tolist() == [[1.0, 0.5]]


def test_clamp():
    assert clamp01(np.array([-1.0, 0.3, 2.0])).tolist() == [0.0, 0.3, 1.0]
    with pytest.raises(ValueError):
        clamp01(np.array([np.nan]))

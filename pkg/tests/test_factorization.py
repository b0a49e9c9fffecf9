import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import rank2_tensor
from sparsegain import factorization as fz
from sparsegain.ingest import holdout_mask
from sparsegain.tensor import PerfTensor


def _held_rmse(pred, t, held):
    idx = tuple(np.array(held).T)
    return float(np.sqrt(np.mean((pred[idx] - t.values[idx]) ** 2)))


def test_monotonicity_penalty():
    p = np.array([[[0.2, 0.5, 0.4, 0.9]]])
    assert fz.monotonicity_penalty(p) == pytest.approx(0.01)
    assert fz.monotonicity_penalty(np.sort(np.random.default_rng(0).random((3, 2, 5)), axis=2)) == 0


def test_penalised_loss_gradient():
    rng = np.random.default_rng(1)
    pred = rng.random((3, 2, 4))
    tau = rng.random(pred.shape)
    mask = (rng.random(pred.shape) < 0.7).astype(float)
    _, g = fz._penalised_loss(pred, tau, mask, 0.7)
    fd = np.zeros_like(pred)
    for idx in np.ndindex(pred.shape):
        a, b = pred.copy(), pred.copy()
        a[idx] += 1e-6
        b[idx] -= 1e-6
        fd[idx] = (fz._penalised_loss(a, tau, mask, 0.7)[0] - fz._penalised_loss(b, tau, mask, 0.7)[0]) / 2e-6
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-9)


def test_tf_rank1_recovery():
    rng = np.random.default_rng(0)
    X = np.einsum("u,im->uim", rng.uniform(0.3, 1, 30), rng.uniform(0.3, 1, (6, 4)))
    t, held = holdout_mask(PerfTensor(X), 0.2, seed=1)
    m = fz.tf_fit(t, rank=1, mono_weight=0.0, iters=1000)
    assert _held_rmse(fz.predict(m, t), PerfTensor(X), held) < 0.05


@given(st.integers(0, 1000))
def test_loss_never_increases(seed):
    X = np.random.default_rng(seed).random((6, 3, 4))
    X[X < 0.3] = np.nan
    for fit in (fz.tf_fit, fz.cpd_fit):
        m = fit(PerfTensor(X), rank=2, mono_weight=0.5, iters=30, seed=seed)
        assert np.all(np.diff(m.losses) <= 0)


def test_large_penalty_gives_monotone_predictions():
    rng = np.random.default_rng(2)
    X = rng.random((20, 4, 5))  # no learning trend at all
    m = fz.tf_fit(PerfTensor(X), rank=2, mono_weight=1e4, iters=500)
    drops = np.maximum(0, -np.diff(m.reconstruct(), axis=2))
    assert (drops <= 1e-3).mean() >= 0.99
    free = fz.tf_fit(PerfTensor(X), rank=2, mono_weight=0.0, iters=500)
    assert fz.monotonicity_penalty(free.reconstruct()) > 10 * fz.monotonicity_penalty(m.reconstruct())


@pytest.mark.parametrize("fit", [fz.tf_fit, fz.cpd_fit, fz.bptf_fit])
def test_rank_zero_rejected(fit):
    with pytest.raises(ValueError):
        fit(PerfTensor(np.ones((2, 2, 2))), rank=0)


def test_cpd_all_ones():
    m = fz.cpd_fit(PerfTensor(np.ones((5, 4, 3))), rank=1, mono_weight=0.0, iters=2000)
    assert np.abs(m.reconstruct() - 1).max() < 1e-6


def test_cpd_weights_and_unit_columns():
    m = fz.cpd_fit(PerfTensor(rank2_tensor(10, 4, 3)), rank=2, mono_weight=0.0, iters=50)
    for X in (m.A, m.B, m.C):
        np.testing.assert_allclose(np.linalg.norm(X, axis=0), 1.0)
    assert m.weights.shape == (2,) and m.rank == 2


@pytest.mark.parametrize("rank", [1, 2])
def test_cpd_on_single_attempt_reaches_svd_optimum(rank):
    # with M = 1 CPD is a rank-d matrix factorisation of a fully observed matrix,
    # whose optimal squared error is the tail of the singular spectrum
    Y = np.random.default_rng(3).uniform(0, 1, (15, 8))
    s = np.linalg.svd(Y, compute_uv=False)
    best = (s[rank:] ** 2).sum()
    m = fz.cpd_fit(PerfTensor(Y[:, :, None]), rank=rank, mono_weight=0.0, iters=2000)
    err = ((m.reconstruct()[:, :, 0] - Y) ** 2).sum()
    assert err >= best * (1 - 1e-12)
    assert (err - best) / best < 1e-6


def test_cpd_oracle_rank2():
    X = rank2_tensor(30, 8, 4, seed=5)
    t, held = holdout_mask(PerfTensor(X), 0.3, seed=0)
    m = fz.cpd_fit(t, rank=2, mono_weight=0.0, iters=3000)
    assert _held_rmse(fz.predict(m, t), PerfTensor(X), held) < 0.05


def test_bptf_oracle_rank2():
    X = rank2_tensor(30, 8, 4, seed=5)
    t, held = holdout_mask(PerfTensor(X), 0.3, seed=0)
    m = fz.bptf_fit(t, rank=2, burn_in=30, samples=30, seed=1)
    assert _held_rmse(fz.predict(m, t), PerfTensor(X), held) < 0.1
    assert np.all(m.predictive_variance() >= 0)
    assert len(m.samples) == 30 and all(a > 0 for a in m.precisions)


def test_bptf_single_sample_is_that_sample():
    m = fz.bptf_fit(PerfTensor(rank2_tensor(6, 3, 2)), rank=2, burn_in=2, samples=1, seed=0)
    L, Q, A = m.samples[0]
    np.testing.assert_array_equal(m.reconstruct(), np.einsum("ku,ki,km->uim", L, Q, A))


def test_bptf_seeded():
    t = PerfTensor(rank2_tensor(6, 3, 2))
    a = fz.bptf_fit(t, rank=2, burn_in=3, samples=3, seed=4)
    b = fz.bptf_fit(t, rank=2, burn_in=3, samples=3, seed=4)
    np.testing.assert_array_equal(a.reconstruct(), b.reconstruct())


def test_predict_checks_dims_and_clamps():
    m = fz.tf_fit(PerfTensor(np.ones((3, 2, 2))), rank=1, iters=5)
    with pytest.raises(ValueError):
        fz.predict(m, PerfTensor(np.ones((3, 2, 3))))
    p = fz.predict(m)
    assert p.min() >= 0 and p.max() <= 1


def test_no_observed_cells():
    with pytest.raises(ValueError):
        fz.tf_fit(PerfTensor(np.full((2, 2, 2), np.nan)))


def test_factor_round_trip():
    F = np.random.default_rng(0).normal(size=(4, 3))
    buf = io.StringIO()
    fz.write_factor(F, buf, "learners")
    assert buf.getvalue().startswith("# learners 4 3\n")
    buf.seek(0)
    np.testing.assert_array_equal(fz.read_factor(buf), F)


def test_bptf_rank1_held_out():
    rng = np.random.default_rng(6)
    X = np.einsum("u,i,m->uim", rng.uniform(0.3, 1, 40), rng.uniform(0.3, 1, 8), rng.uniform(0.3, 1, 4))
    t, held = holdout_mask(PerfTensor(X), 0.3, seed=2)
    m = fz.bptf_fit(t, rank=1, burn_in=20, samples=20, seed=0)
    assert _held_rmse(fz.predict(m, t), PerfTensor(X), held) < 0.1


def test_bptf_no_burn_in_and_seed_dependence():
    t = PerfTensor(rank2_tensor(6, 3, 2))
    m = fz.bptf_fit(t, rank=2, burn_in=0, samples=1, seed=0)
    np.testing.assert_array_equal(m.reconstruct(), m._rec(m.samples[0]))
    other = fz.bptf_fit(t, rank=2, burn_in=0, samples=1, seed=1)
    assert not np.array_equal(m.reconstruct(), other.reconstruct())


def test_predict_clamps_raw_values():
    m = fz.CpdModel(np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0], [1.0]]), np.array([1.3]))
    assert fz.predict(m).ravel().tolist() == [1.0, 1.0]

"""Tensor-completion baselines: rank-constrained TF, CPD and BPTF.

TF and CPD minimise squared error on observed cells plus a squared-hinge
penalty on predicted decreases between consecutive attempts::

    L = (sum_obs (T_hat - tau)^2 + lam * sum max(0, T_hat[..., m] - T_hat[..., m+1])^2) / n_obs

by gradient descent with a bold-driver step size: a step is accepted only if it
does not increase L (then the step grows by 5%), otherwise the step is halved
and retried. L is therefore non-increasing.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import wishart

from .tensor import PerfTensor, clamp01

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    pass


def _observed(t):
    values = t.values if isinstance(t, PerfTensor) else np.asarray(t, dtype=float)
    mask = ~np.isnan(values)
    if not mask.any():
        raise ValueError("tensor has no observed cells")
    return np.nan_to_num(values), mask.astype(float)


def monotonicity_penalty(pred: np.ndarray) -> float:
    """Sum of squared decreases along the attempt axis; zero iff non-decreasing."""
    drop = np.maximum(0.0, pred[:, :, :-1] - pred[:, :, 1:])
    return float((drop ** 2).sum())


def _penalised_loss(pred, tau, mask, lam):
    n = mask.sum()
    r = mask * (pred - tau)
    drop = np.maximum(0.0, pred[:, :, :-1] - pred[:, :, 1:])
    loss = ((r ** 2).sum() + lam * (drop ** 2).sum()) / n
    grad = 2 * r
    if lam:
        grad[:, :, :-1] += 2 * lam * drop
        grad[:, :, 1:] -= 2 * lam * drop
    return loss, grad / n


def _descend(params: list[np.ndarray], reconstruct: Callable, grads_of: Callable, tau, mask, lam, lr, iters):
    """Safeguarded gradient descent shared by TF and CPD."""
    if lr <= 0 or iters < 0 or lam < 0:
        raise ValueError(f"need lr > 0, iters >= 0 and mono_weight >= 0 (got {lr}, {iters}, {lam})")
    pred = reconstruct(params)
    loss, gpred = _penalised_loss(pred, tau, mask, lam)
    if not np.isfinite(loss):
        raise DivergenceError("initial loss is not finite")
    losses, curve = [loss], []
    for _ in range(iters):
        grads = grads_of(params, gpred)
        for _ in range(60):
            trial = [p - lr * g for p, g in zip(params, grads)]
            tpred = reconstruct(trial)
            tloss, tg = _penalised_loss(tpred, tau, mask, lam)
            if np.isfinite(tloss) and tloss <= loss:
                params, pred, loss, gpred = trial, tpred, tloss, tg
                lr *= 1.05
                break
            lr *= 0.5
        else:
            log.debug("step size underflow; stopping early")
        losses.append(loss)
        curve.append(float(np.sqrt(((mask * (pred - tau)) ** 2).sum() / mask.sum())))
    return params, losses, curve


@dataclass(eq=False)
class TfModel:
    learner_factors: np.ndarray  # U x d
    knowledge: np.ndarray  # d x N x M
    mono_weight: float
    losses: list[float] = field(default_factory=list)
    training_curve: list[float] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.learner_factors.shape[1]

    def reconstruct(self) -> np.ndarray:
        return np.einsum("uk,kim->uim", self.learner_factors, self.knowledge)


@dataclass(eq=False)
class CpdModel:
    A: np.ndarray  # learners x d
    B: np.ndarray  # questions x d
    C: np.ndarray  # attempts x d
    weights: np.ndarray
    mono_weight: float = 0.0
    losses: list[float] = field(default_factory=list)
    training_curve: list[float] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return len(self.weights)

    def reconstruct(self) -> np.ndarray:
        return np.einsum("k,uk,ik,mk->uim", self.weights, self.A, self.B, self.C)


def _check_rank(d):
    if d < 1:
        raise ValueError(f"rank must be >= 1, got {d}")


def tf_fit(t, rank: int = 3, mono_weight: float = 0.1, lr: float = 0.1, iters: int = 100, seed=0) -> TfModel:
    """Learner matrix times knowledge tensor, fitted by safeguarded gradient descent."""
    _check_rank(rank)
    tau, mask = _observed(t)
    U, N, M = tau.shape
    rng = np.random.default_rng(seed)
    scale = 1 / np.sqrt(rank)
    S, K = rng.normal(0, scale, (U, rank)), rng.normal(0, scale, (rank, N, M))

    def reconstruct(p):
        return np.einsum("uk,kim->uim", p[0], p[1])

    def grads_of(p, g):
        return [np.einsum("uim,kim->uk", g, p[1]), np.einsum("uk,uim->kim", p[0], g)]

    (S, K), losses, curve = _descend([S, K], reconstruct, grads_of, tau, mask, mono_weight, lr, iters)
    return TfModel(S, K, mono_weight, losses, curve)


def cpd_fit(t, rank: int = 3, mono_weight: float = 0.1, lr: float = 0.1, iters: int = 100, seed=0) -> CpdModel:
    """CANDECOMP/PARAFAC by safeguarded gradient descent on observed cells.

    Component weights are the products of the factor column norms, extracted
    after fitting (factor columns are then unit norm).
    """
    _check_rank(rank)
    tau, mask = _observed(t)
    U, N, M = tau.shape
    rng = np.random.default_rng(seed)
    scale = 1 / np.sqrt(rank)
    A, B, C = (rng.normal(0, scale, (n, rank)) for n in (U, N, M))

    def reconstruct(p):
        return np.einsum("uk,ik,mk->uim", *p)

    def grads_of(p, g):
        a, b, c = p
        return [
            np.einsum("uim,ik,mk->uk", g, b, c),
            np.einsum("uim,uk,mk->ik", g, a, c),
            np.einsum("uim,uk,ik->mk", g, a, b),
        ]

    (A, B, C), losses, curve = _descend([A, B, C], reconstruct, grads_of, tau, mask, mono_weight, lr, iters)
    norms = [np.linalg.norm(X, axis=0) for X in (A, B, C)]
    safe = [np.where(n > 0, n, 1.0) for n in norms]
    weights = norms[0] * norms[1] * norms[2]
    return CpdModel(A / safe[0], B / safe[1], C / safe[2], weights, mono_weight, losses, curve)


@dataclass(frozen=True)
class BptfPriors:
    beta0: float = 1.0
    wishart_scale: float = 1.0  # W0 = scale * I
    extra_dof: int = 1  # nu0 = rank + extra_dof
    precision_shape: float = 2.0


@dataclass(eq=False)
class BptfModel:
    samples: list[tuple[np.ndarray, np.ndarray, np.ndarray]]  # (learner d x U, question d x N, attempt d x M)
    precisions: list[float]
    burn_in: int
    priors: BptfPriors = field(default_factory=BptfPriors)

    @property
    def rank(self) -> int:
        return self.samples[0][0].shape[0]

    @staticmethod
    def _rec(sample):
        L, Q, A = sample
        return np.einsum("ku,ki,km->uim", L, Q, A)

    def reconstruct(self) -> np.ndarray:
        return np.mean([self._rec(s) for s in self.samples], axis=0)

    def predictive_variance(self) -> np.ndarray:
        """Across-sample variance of the reconstruction plus mean observation noise."""
        recs = np.stack([self._rec(s) for s in self.samples])
        return recs.var(axis=0) + np.mean([1 / a for a in self.precisions])


def _sample_hyper(X, pri: BptfPriors, rng):
    n, d = X.shape
    xbar = X.mean(axis=0)
    S = np.cov(X, rowvar=False, bias=True).reshape(d, d)
    beta = pri.beta0 + n
    nu = d + pri.extra_dof + n
    mu_star = n * xbar / beta
    W_inv = np.eye(d) / pri.wishart_scale + n * S + pri.beta0 * n / beta * np.outer(xbar, xbar)
    W = np.linalg.inv(W_inv)
    W = (W + W.T) / 2
    Lam = np.atleast_2d(wishart.rvs(df=nu, scale=W, random_state=rng))
    cov = np.linalg.inv(beta * Lam)
    mu = rng.multivariate_normal(mu_star, (cov + cov.T) / 2)
    return mu, Lam


def _sample_rows(n, idx, Q, tau, alpha, mu, Lam, rng):
    """Draw every entity's factor vector from its Gaussian conditional."""
    d = Q.shape[1]
    outer = (Q[:, :, None] * Q[:, None, :]).reshape(len(Q), d * d)
    P = np.stack([np.bincount(idx, weights=outer[:, c], minlength=n) for c in range(d * d)], axis=1).reshape(n, d, d)
    b = np.stack([np.bincount(idx, weights=tau * Q[:, c], minlength=n) for c in range(d)], axis=1)
    prec = Lam[None] + alpha * P
    rhs = (Lam @ mu)[None] + alpha * b
    try:
        L = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        log.warning("conditional precision not positive definite; adding 1e-6 I")
        prec = prec + 1e-6 * np.eye(d)
        L = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, rhs[..., None])[..., 0]
    z = rng.standard_normal((n, d))
    return mean + np.linalg.solve(np.swapaxes(L, 1, 2), z[..., None])[..., 0]


def bptf_fit(t, rank: int = 3, burn_in: int = 50, samples: int = 50, seed=0, priors: BptfPriors | None = None) -> BptfModel:
    """Gibbs sampler for Bayesian CP factorisation with Gaussian-Wishart hyperpriors.

    Each sweep draws learner, question and attempt factors from their Gaussian
    conditionals given observed cells, the per-mode (mean, precision) from their
    Gaussian-Wishart conditionals, and the observation precision from its Gamma
    conditional. The `samples` sweeps after `burn_in` are retained.
    """
    _check_rank(rank)
    if samples < 1 or burn_in < 0:
        raise ValueError("need samples >= 1 and burn_in >= 0")
    pri = priors or BptfPriors()
    tau_full, mask = _observed(t)
    U, N, M = tau_full.shape
    obs = np.argwhere(mask > 0)
    iu, ii, im = obs.T
    tau = tau_full[iu, ii, im]
    rng = np.random.default_rng(seed)
    scale = 1 / np.sqrt(rank)
    X = [rng.normal(0, scale, (n, rank)) for n in (U, N, M)]
    var = float(np.var(tau)) if len(tau) > 1 else 1.0
    a0, b0 = pri.precision_shape, 2.0 * max(var, 1e-6)
    alpha = a0 / b0
    kept, precs = [], []
    for sweep in range(burn_in + samples):
        for mode, (n, idx) in enumerate(((U, iu), (N, ii), (M, im))):
            others = [X[k][(iu, ii, im)[k]] for k in range(3) if k != mode]
            Q = others[0] * others[1]
            mu, Lam = _sample_hyper(X[mode], pri, rng)
            X[mode] = _sample_rows(n, idx, Q, tau, alpha, mu, Lam, rng)
        resid = tau - np.einsum("nk,nk,nk->n", X[0][iu], X[1][ii], X[2][im])
        alpha = rng.gamma(a0 + len(tau) / 2, 1.0 / (b0 + 0.5 * resid @ resid))
        if sweep >= burn_in:
            kept.append(tuple(x.T.copy() for x in X))
            precs.append(float(alpha))
    return BptfModel(kept, precs, burn_in, pri)


def predict(model: TfModel | CpdModel | BptfModel, t=None) -> np.ndarray:
    """Dense reconstruction clamped to [0, 1]."""
    pred = model.reconstruct()
    if t is not None:
        shape = t.shape if isinstance(t, PerfTensor) else np.shape(t)
        if tuple(shape) != pred.shape:
            raise ValueError(f"model dims {pred.shape} do not match tensor {tuple(shape)}")
    return clamp01(pred)


def write_factor(matrix: np.ndarray, stream, name: str = "factor") -> None:
    """Delimited text with a ``# name rows cols`` shape header."""
    rows, cols = matrix.shape
    stream.write(f"# {name} {rows} {cols}\n")
    for row in matrix:
        stream.write(",".join(repr(float(v)) for v in row) + "\n")


def read_factor(stream) -> np.ndarray:
    header = stream.readline().split()
    rows, cols = int(header[2]), int(header[3])
    data = np.array([[float(v) for v in stream.readline().split(",")] for _ in range(rows)])
    return data.reshape(rows, cols)

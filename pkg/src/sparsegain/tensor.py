"""3D learner x question x attempt performance tensors.

Missing cells are NaN in the value array and 0 in the mask; they are never
stored as 0.0. Observed cells are 0.0 (incorrect) or 1.0 (correct) for real
tutoring logs, and any value in [0, 1] for synthetic real-valued tensors.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class CellValue(enum.Enum):
    INCORRECT = 0.0
    CORRECT = 1.0
    MISSING = None

    @classmethod
    def of(cls, v: float) -> "CellValue":
        if np.isnan(v):
            return cls.MISSING
        return cls.CORRECT if v == 1.0 else cls.INCORRECT


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PerfTensor:
    """Sparse performance tensor of shape (U, N, M).

    Parameters
    ----------
    values : ndarray, shape (U, N, M)
        Observed values in [0, 1]; NaN marks a missing cell.
    learner_ids, question_ids : sequence of str, optional
        Row labels. Default to ``"0", "1", ...``.
    """

    values: np.ndarray
    learner_ids: tuple = field(default=None)
    question_ids: tuple = field(default=None)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"expected a non-empty 3D array, got shape {v.shape}")
        obs = v[~np.isnan(v)]
        if obs.size and (not np.all(np.isfinite(obs)) or obs.min() < 0 or obs.max() > 1):
            raise ValueError("observed values must lie in [0, 1]")
        object.__setattr__(self, "values", v)
        U, N, _ = v.shape
        for name, n in (("learner_ids", U), ("question_ids", N)):
            ids = getattr(self, name)
            ids = tuple(str(k) for k in range(n)) if ids is None else tuple(ids)
            if len(ids) != n:
                raise ValueError(f"{name} has {len(ids)} labels for {n} rows")
            if len(set(ids)) != n:
                raise ValueError(f"{name} contains duplicates")
            object.__setattr__(self, name, ids)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def mask(self) -> np.ndarray:
        return mask_of(self)

    @property
    def n_observed(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.values)))

    def cell(self, u: int, i: int, m: int) -> CellValue:
        return CellValue.of(self.values[u, i, m])

    def with_values(self, values: np.ndarray) -> "PerfTensor":
        return PerfTensor(values, self.learner_ids, self.question_ids)

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Numeric export with missing cells replaced by `fill`."""
        return np.where(np.isnan(self.values), fill, self.values)

    def __eq__(self, other):
        if not isinstance(other, PerfTensor):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.values, other.values, equal_nan=True)
            and self.learner_ids == other.learner_ids
            and self.question_ids == other.question_ids
        )


@dataclass(frozen=True, eq=False)
class LearnerMatrix:
    """One learner's N x M question-by-attempt slice (the "learner image")."""

    learner_index: int
    values: np.ndarray
    mask: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def mask_of(t: PerfTensor) -> np.ndarray:
    """Return the observed-cell indicator (1.0 observed, 0.0 missing)."""
    m = (~np.isnan(t.values)).astype(float)
    m.setflags(write=False)
    return m


def sparsity_level(t: PerfTensor) -> float:
    """Fraction of missing cells over all U*N*M cells."""
    return float(np.count_nonzero(np.isnan(t.values))) / t.values.size


def slice_learner(t: PerfTensor, u: int) -> LearnerMatrix:
    U = t.shape[0]
    if not 0 <= u < U:
        raise IndexError(f"learner index {u} out of range [0, {U})")
    vals = t.values[u]
    return LearnerMatrix(u, _frozen(vals), _frozen(~np.isnan(vals)))


def stack_learners(slices: Sequence[LearnerMatrix], learner_ids=None, question_ids=None) -> PerfTensor:
    """Inverse of slicing every learner: rebuild the tensor from its layers."""
    ordered = sorted(slices, key=lambda s: s.learner_index)
    return PerfTensor(np.stack([s.values for s in ordered]), learner_ids, question_ids)


def truncate_attempts(t: PerfTensor, m_max: int) -> PerfTensor:
    """Keep only attempts ``0 .. m_max-1``."""
    M = t.shape[2]
    if not 1 <= m_max <= M:
        raise ValueError(f"m_max={m_max} outside [1, {M}]")
    return t.with_values(t.values[:, :, :m_max])


def merge_imputed(observed: LearnerMatrix | np.ndarray, generated: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Keep observed cells verbatim and take generated values elsewhere.

    Works on a single learner matrix or on any stack of them when `observed`
    is a raw array with NaN for missing cells and `mask` is given or derived.
    """
    if isinstance(observed, LearnerMatrix):
        values, mask = observed.values, observed.mask
    else:
        values = np.asarray(observed, dtype=float)
        if mask is None:
            mask = ~np.isnan(values)
    generated = np.asarray(generated, dtype=float)
    if generated.shape != values.shape or np.shape(mask) != values.shape:
        raise ValueError(f"shape mismatch: observed {values.shape}, generated {generated.shape}")
    if not np.all(np.isfinite(generated)):
        raise ValueError("generated values must be finite")
    return np.where(np.asarray(mask, dtype=bool), values, generated)


def clamp01(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("clamp01 received non-finite values")
    return np.clip(x, 0.0, 1.0)

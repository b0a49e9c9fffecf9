"""Imputation of sparse learner x question x attempt performance tensors."""
from .tensor import (
    CellValue,
    LearnerMatrix,
    PerfTensor,
    clamp01,
    mask_of,
    merge_imputed,
    slice_learner,
    sparsity_level,
    stack_learners,
    truncate_attempts,
)

__all__ = [
    "CellValue",
    "LearnerMatrix",
    "PerfTensor",
    "clamp01",
    "mask_of",
    "merge_imputed",
    "slice_learner",
    "sparsity_level",
    "stack_learners",
    "truncate_attempts",
]

__version__ = "0.1.0"

"""Interaction-log parsing, tensor assembly and synthetic datasets."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, TextIO

import numpy as np
from scipy.special import expit

from .tensor import PerfTensor

log = logging.getLogger(__name__)

HEADER = ("learner_id", "question_id", "attempt", "outcome")


class ParseError(ValueError):
    def __init__(self, line: int, msg: str):
        super().__init__(f"line {line}: {msg}")
        self.line = line


class InteractionRecord(NamedTuple):
    learner_id: str
    question_id: str
    attempt: int  # 1-based, as in tutoring-system logs
    outcome: int


def parse_records(stream: TextIO | bytes | str, delimiter: str = ",") -> list[InteractionRecord]:
    """Parse a delimited log with a ``learner_id,question_id,attempt,outcome`` header.

    Errors carry the 1-based line number of the offending row (header is line 1).
    """
    if isinstance(stream, bytes):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    reader = csv.reader(stream, delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(1, "missing header row") from None
    if tuple(h.strip() for h in header) != HEADER:
        raise ParseError(1, f"expected header {','.join(HEADER)}, got {delimiter.join(header)}")
    records = []
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != 4:
            raise ParseError(line, f"expected 4 columns, got {len(row)}")
        lid, qid, attempt, outcome = (c.strip() for c in row)
        try:
            attempt = int(attempt)
        except ValueError:
            raise ParseError(line, f"attempt {attempt!r} is not an integer") from None
        if attempt < 1:
            raise ParseError(line, f"attempt must be >= 1, got {attempt}")
        if outcome not in ("0", "1"):
            raise ParseError(line, f"outcome must be 0 or 1, got {outcome!r}")
        records.append(InteractionRecord(lid, qid, attempt, int(outcome)))
    return records


def build_tensor(records: Iterable[InteractionRecord], stats: dict | None = None) -> PerfTensor:
    """Assemble records into a tensor; ids are ordered by first appearance.

    Duplicate cells with the same outcome collapse. Conflicting duplicates keep
    the first outcome; their count is logged and, if `stats` is given, stored
    under ``stats["conflicts"]``.
    """
    records = list(records)
    if not records:
        raise ValueError("cannot build a tensor from an empty record list")
    learners = {r.learner_id: None for r in records}
    questions = {r.question_id: None for r in records}
    lidx = {k: n for n, k in enumerate(learners)}
    qidx = {k: n for n, k in enumerate(questions)}
    M = max(r.attempt for r in records)
    values = np.full((len(lidx), len(qidx), M), np.nan)
    conflicts = 0
    for r in records:
        u, i, m = lidx[r.learner_id], qidx[r.question_id], r.attempt - 1
        cur = values[u, i, m]
        if np.isnan(cur):
            values[u, i, m] = r.outcome
        elif cur != r.outcome:
            conflicts += 1
    if conflicts:
        log.warning("%d conflicting duplicate records; kept first outcome", conflicts)
    if stats is not None:
        stats["conflicts"] = conflicts
    return PerfTensor(values, tuple(lidx), tuple(qidx))


def tensor_to_records(t: PerfTensor) -> list[InteractionRecord]:
    """Observed cells as records, in (learner, question, attempt) order."""
    out = []
    for u, i, m in np.argwhere(~np.isnan(t.values)):
        out.append(InteractionRecord(t.learner_ids[u], t.question_ids[i], int(m) + 1, int(round(t.values[u, i, m]))))
    return out


def write_records(records: Iterable[InteractionRecord], stream: TextIO, delimiter: str = ",") -> None:
    w = csv.writer(stream, delimiter=delimiter, lineterminator="\n")
    w.writerow(HEADER)
    for r in records:
        w.writerow(r)


def write_cells(values: np.ndarray, stream: TextIO, name: str = "value") -> None:
    """Cell-per-row dump ``u,i,m,<name>`` with 0-based indices."""
    stream.write(f"u,i,m,{name}\n")
    for (u, i, m), v in np.ndenumerate(values):
        stream.write(f"{u},{i},{m},{float(v)!r}\n")


def read_cells(stream: TextIO) -> np.ndarray:
    rows = list(csv.reader(stream))[1:]
    idx = np.array([[int(r[0]), int(r[1]), int(r[2])] for r in rows])
    out = np.full(tuple(idx.max(axis=0) + 1), np.nan)
    out[idx[:, 0], idx[:, 1], idx[:, 2]] = [float(r[3]) for r in rows]
    return out


@dataclass(frozen=True)
class SynthConfig:
    u_count: int = 200
    n_count: int = 12
    m_count: int = 5
    ability_spread: float = 1.0
    difficulty_spread: float = 1.0
    learning_rate_mean: float = 0.3
    base_dropout: float = 0.2
    dropout_growth: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        for name in ("u_count", "n_count", "m_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.base_dropout < 1:
            raise ValueError("base_dropout must lie in [0, 1)")
        if self.dropout_growth < 0:
            raise ValueError("dropout_growth must be >= 0")
        if min(self.ability_spread, self.difficulty_spread) < 0:
            raise ValueError("spreads must be >= 0")


@dataclass(frozen=True, eq=False)
class SynthDataset:
    truth_prob: np.ndarray
    truth_binary: PerfTensor
    observed: PerfTensor
    config: SynthConfig


def dropout_probability(cfg: SynthConfig, m: int) -> float:
    return min(0.95, cfg.base_dropout + cfg.dropout_growth * m)


def synth_generate(cfg: SynthConfig) -> SynthDataset:
    """Two-parameter IRT with a per-learner linear practice effect.

    ``p[u,i,m] = logistic(ability[u] - difficulty[i] + gain[u] * m)``; each cell
    of attempt ``m`` is then hidden independently with probability
    ``min(0.95, base_dropout + dropout_growth * m)``.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    U, N, M = cfg.u_count, cfg.n_count, cfg.m_count
    ability = rng.normal(0.0, 1.0, U) * cfg.ability_spread
    difficulty = rng.normal(0.0, 1.0, N) * cfg.difficulty_spread
    gain = rng.normal(cfg.learning_rate_mean, 0.5 * abs(cfg.learning_rate_mean), U)
    m = np.arange(M)
    logit = ability[:, None, None] - difficulty[None, :, None] + gain[:, None, None] * m[None, None, :]
    prob = expit(logit)
    binary = (rng.random(prob.shape) < prob).astype(float)
    drop = np.minimum(0.95, cfg.base_dropout + cfg.dropout_growth * m)
    hidden = rng.random(prob.shape) < drop[None, None, :]
    observed = np.where(hidden, np.nan, binary)
    lids = tuple(f"L{u + 1}" for u in range(U))
    qids = tuple(f"Q{i + 1}" for i in range(N))
    prob.setflags(write=False)
    return SynthDataset(prob, PerfTensor(binary, lids, qids), PerfTensor(observed, lids, qids), cfg)


def holdout_mask(t: PerfTensor, fraction: float, seed) -> tuple[PerfTensor, list[tuple[int, int, int]]]:
    """Hide a uniform random `fraction` of observed cells.

    Returns the training tensor (held-out cells set missing) and the held-out
    coordinates.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction {fraction} outside (0, 1)")
    coords = np.argwhere(~np.isnan(t.values))
    k = round(fraction * len(coords))
    if len(coords) < math.ceil(fraction * len(coords)) or k < 1:
        raise ValueError(f"too few observed cells ({len(coords)}) for fraction {fraction}")
    rng = np.random.default_rng(seed)
    pick = coords[rng.choice(len(coords), size=k, replace=False)]
    vals = t.values.copy()
    vals[pick[:, 0], pick[:, 1], pick[:, 2]] = np.nan
    return t.with_values(vals), [tuple(int(x) for x in c) for c in pick]

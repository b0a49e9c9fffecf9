"""Cross-validated imputation benchmark: folds, RMSE, Spearman and reports."""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np
from scipy.stats import rankdata

from . import factorization, gain, gan
from .tensor import PerfTensor, sparsity_level, truncate_attempts

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CvPlan:
    cycles: int = 5
    folds: int = 5
    base_seed: int = 0

    def cycle_seed(self, cycle: int) -> int:
        return self.base_seed + cycle

    def run_seed(self, cycle: int, fold: int) -> int:
        """Distinct seed for each (cycle, fold) pair."""
        return int(np.random.SeedSequence([self.base_seed, cycle, fold]).generate_state(1)[0])


@dataclass(frozen=True, eq=False)
class FoldAssignment:
    coords: np.ndarray  # K x 3 observed coordinates
    fold: np.ndarray  # K fold indices
    folds: int

    def cells(self, k: int) -> np.ndarray:
        return self.coords[self.fold == k]

    def sizes(self) -> list[int]:
        return np.bincount(self.fold, minlength=self.folds).tolist()


def make_folds(mask: np.ndarray, folds: int, seed) -> FoldAssignment:
    """Shuffle observed coordinates and deal them round-robin into `folds` folds."""
    coords = np.argwhere(np.asarray(mask) > 0)
    if folds < 1 or len(coords) < folds:
        raise ValueError(f"{len(coords)} observed cells cannot fill {folds} folds")
    order = np.random.default_rng(seed).permutation(len(coords))
    fold = np.empty(len(coords), dtype=int)
    fold[order] = np.arange(len(coords)) % folds
    return FoldAssignment(coords, fold, folds)


def rmse(pred: np.ndarray, cells) -> float:
    """RMSE over ``[((u, i, m), truth), ...]`` or a pair ``(coords, truths)``."""
    if isinstance(cells, tuple) and len(cells) == 2 and isinstance(cells[0], np.ndarray):
        coords, truth = cells
    else:
        cells = list(cells)
        if not cells:
            raise ValueError("rmse needs at least one cell")
        coords = np.array([c for c, _ in cells], dtype=int)
        truth = np.array([v for _, v in cells], dtype=float)
    if len(coords) == 0:
        raise ValueError("rmse needs at least one cell")
    p = pred[coords[:, 0], coords[:, 1], coords[:, 2]]
    return float(np.sqrt(np.mean((p - truth) ** 2)))


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Spearman's rho: Pearson correlation of average ranks."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("spearman needs two equal-length 1D sequences")
    if len(xs) < 2:
        raise ValueError("spearman needs at least two points")
    rx, ry = rankdata(xs) - (len(xs) + 1) / 2, rankdata(ys) - (len(ys) + 1) / 2
    sxx, syy = rx @ rx, ry @ ry
    if sxx == 0 or syy == 0:
        raise ValueError("spearman is undefined for constant input")
    return float(np.clip((rx @ ry) / np.sqrt(sxx * syy), -1.0, 1.0))


class Imputer(Protocol):
    name: str

    def fit_impute(self, t: PerfTensor, seed: int) -> tuple[np.ndarray, list]:
        """Return a dense (U, N, M) prediction and a (possibly empty) training curve."""


@dataclass(frozen=True)
class MeanImputer:
    name: str = "mean"

    def fit_impute(self, t, seed):
        return np.where(np.isnan(t.values), np.nanmean(t.values), t.values), []


@dataclass(frozen=True)
class ConstantImputer:
    value: float = 0.5
    name: str = "constant"

    def fit_impute(self, t, seed):
        return np.full(t.shape, self.value), []


@dataclass(frozen=True, eq=False)
class TruthImputer:
    """Returns a known ground-truth tensor; checks the scoring plumbing."""

    truth: np.ndarray
    name: str = "truth"

    def fit_impute(self, t, seed):
        return np.asarray(self.truth, dtype=float), []


@dataclass(frozen=True)
class GainImputer:
    config: gain.GainConfig = field(default_factory=gain.GainConfig)
    name: str = "gain"

    def fit_impute(self, t, seed):
        model = gain.train(t, _reseed(self.config, seed))
        return gain.impute(model, t), list(model.training_curve)


@dataclass(frozen=True)
class GanImputer:
    config: gan.GanConfig = field(default_factory=gan.GanConfig)
    name: str = "gan"

    def fit_impute(self, t, seed):
        model = gan.gan_train(t, _reseed(self.config, seed))
        return gan.gan_impute(model, t), list(model.training_curve)


@dataclass(frozen=True)
class TfImputer:
    rank: int = 3
    mono_weight: float = 0.1
    lr: float = 0.1
    iters: int = 100
    name: str = "tf"

    def __post_init__(self):
        if self.rank < 1 or self.lr <= 0 or self.iters < 0 or self.mono_weight < 0:
            raise ValueError("need rank >= 1, lr > 0, iters >= 0 and mono_weight >= 0")

    def fit_impute(self, t, seed):
        m = factorization.tf_fit(t, self.rank, self.mono_weight, self.lr, self.iters, seed)
        return factorization.predict(m, t), list(enumerate(m.training_curve, 1))


@dataclass(frozen=True)
class CpdImputer:
    rank: int = 3
    mono_weight: float = 0.1
    lr: float = 0.1
    iters: int = 100
    name: str = "cpd"

    def __post_init__(self):
        if self.rank < 1 or self.lr <= 0 or self.iters < 0 or self.mono_weight < 0:
            raise ValueError("need rank >= 1, lr > 0, iters >= 0 and mono_weight >= 0")

    def fit_impute(self, t, seed):
        m = factorization.cpd_fit(t, self.rank, self.mono_weight, self.lr, self.iters, seed)
        return factorization.predict(m, t), list(enumerate(m.training_curve, 1))


@dataclass(frozen=True)
class BptfImputer:
    rank: int = 3
    burn_in: int = 50
    samples: int = 50
    name: str = "bptf"

    def __post_init__(self):
        if self.rank < 1 or self.burn_in < 0 or self.samples < 1:
            raise ValueError("need rank >= 1, burn_in >= 0 and samples >= 1")

    def fit_impute(self, t, seed):
        m = factorization.bptf_fit(t, self.rank, self.burn_in, self.samples, seed)
        return factorization.predict(m, t), []


def _reseed(cfg, seed):
    d = asdict(cfg)
    d["seed"] = seed
    return type(cfg)(**d)


class MethodError(RuntimeError):
    def __init__(self, msg, context: dict):
        super().__init__(f"{msg} [{', '.join(f'{k}={v}' for k, v in context.items())}]")
        self.context = context


def hide_cells(t: PerfTensor, coords: np.ndarray) -> PerfTensor:
    vals = t.values.copy()
    vals[coords[:, 0], coords[:, 1], coords[:, 2]] = np.nan
    return t.with_values(vals)


def _run_fold(t, method, plan, cycle, fold, assignment=None):
    if assignment is None:
        assignment = make_folds(t.mask, plan.folds, plan.cycle_seed(cycle))
    held = assignment.cells(fold)
    train = hide_cells(t, held)
    try:
        pred, curve = method.fit_impute(train, plan.run_seed(cycle, fold))
    except Exception as exc:
        raise MethodError(f"{getattr(method, 'name', method)} failed: {exc}", {"cycle": cycle, "fold": fold}) from exc
    truth = t.values[held[:, 0], held[:, 1], held[:, 2]]
    return rmse(pred, (held, truth)), curve


def run_cv(t: PerfTensor, method: Imputer, plan: CvPlan | None = None, return_curves: bool = False):
    """Cycles x folds cross-validation over observed cells.

    Each cycle draws its own fold partition; each fold is hidden in turn, the
    method is fit on the rest and scored by RMSE on the hidden cells.
    """
    plan = plan or CvPlan()
    scores, curves = [], []
    for cycle in range(plan.cycles):
        assignment = make_folds(t.mask, plan.folds, plan.cycle_seed(cycle))
        for fold in range(plan.folds):
            score, curve = _run_fold(t, method, plan, cycle, fold, assignment)
            scores.append(score)
            curves.append(curve)
    return (scores, curves) if return_curves else scores


@dataclass
class BenchmarkReport:
    rmse: dict = field(default_factory=dict)  # (dataset, method, max_attempts) -> (mean, std)
    spearman: dict = field(default_factory=dict)  # (dataset, method) -> rho or None
    sparsity: dict = field(default_factory=dict)  # (dataset, max_attempts) -> fraction
    curves: dict = field(default_factory=dict)  # (dataset, method) -> [(iteration, rmse)]
    runs: dict = field(default_factory=dict)  # (dataset, method, max_attempts) -> [rmse per run]
    failures: list = field(default_factory=list)
    curves_attempts: dict = field(default_factory=dict)

    def rmse_rows(self):
        return [(d, m, a, mu, sd) for (d, m, a), (mu, sd) in sorted(self.rmse.items())]

    def spearman_rows(self):
        return [(d, m, rho) for (d, m), rho in sorted(self.spearman.items())]

    def sparsity_rows(self):
        return [(d, a, s) for (d, a), s in sorted(self.sparsity.items())]

    def curve_rows(self):
        return [(d, m, i, r) for (d, m), c in sorted(self.curves.items()) for i, r in c]

    def csv_tables(self) -> dict[str, str]:
        tables = {
            "rmse.csv": (("dataset", "method", "max_attempts", "rmse_mean", "rmse_std"), self.rmse_rows()),
            "spearman.csv": (("dataset", "method", "spearman_rho"), self.spearman_rows()),
            "sparsity.csv": (("dataset", "max_attempts", "sparsity"), self.sparsity_rows()),
            "curves.csv": (("dataset", "method", "iteration", "rmse"), self.curve_rows()),
        }
        out = {}
        for name, (header, rows) in tables.items():
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
            out[name] = buf.getvalue()
        return out

    def to_dict(self) -> dict:
        doc: dict = {}
        for (d, m, a), (mu, sd) in sorted(self.rmse.items()):
            doc.setdefault(d, {}).setdefault("methods", {}).setdefault(m, {}).setdefault("rmse", {})[str(a)] = {
                "mean": mu, "std": sd, "runs": self.runs.get((d, m, a), [])}
        for (d, m), rho in sorted(self.spearman.items()):
            doc.setdefault(d, {}).setdefault("methods", {}).setdefault(m, {})["spearman_rho"] = rho
        for (d, a), s in sorted(self.sparsity.items()):
            doc.setdefault(d, {}).setdefault("sparsity", {})[str(a)] = s
        return {"datasets": doc, "rmse_std_over": "all cycles x folds runs", "failures": self.failures}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _grid_cell(args):
    dataset, method_name, attempts, t, method, plan, cycle, fold = args
    try:
        score, curve = _run_fold(t, method, plan, cycle, fold)
        return (dataset, method_name, attempts, cycle, fold), score, curve, None
    except Exception as exc:  # recorded per cell
        return (dataset, method_name, attempts, cycle, fold), None, None, str(exc)


def run_benchmark(
    datasets: Mapping[str, PerfTensor],
    methods: Mapping[str, Imputer],
    attempts_range: Sequence[int] | None = None,
    plan: CvPlan | None = None,
    jobs: int = 1,
    strict: bool = True,
) -> BenchmarkReport:
    """Run `run_cv` for every dataset x max-attempts truncation x method.

    Grid cells are independent and may run in a process pool (`jobs` > 1); the
    report does not depend on completion order. With ``strict=False`` failing
    cells are listed in ``report.failures`` instead of raising.
    """
    plan = plan or CvPlan()
    report = BenchmarkReport()
    tasks = []
    for dname, t in datasets.items():
        M = t.shape[2]
        rng_attempts = list(attempts_range) if attempts_range is not None else list(range(1, M + 1))
        bad = [a for a in rng_attempts if not 1 <= a <= M]
        if bad:
            raise ValueError(f"max attempts {bad} outside [1, {M}] for dataset {dname}")
        for a in rng_attempts:
            ta = truncate_attempts(t, a)
            report.sparsity[(dname, a)] = sparsity_level(ta)
            for mname, method in methods.items():
                for cycle in range(plan.cycles):
                    for fold in range(plan.folds):
                        tasks.append((dname, mname, a, ta, method, plan, cycle, fold))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_grid_cell, tasks))
    else:
        results = [_grid_cell(task) for task in tasks]

    scores: dict = {}
    for (d, m, a, c, f), score, curve, err in sorted(results, key=lambda r: r[0]):
        if err is not None:
            report.failures.append({"dataset": d, "method": m, "max_attempts": a, "cycle": c, "fold": f, "error": err})
            continue
        scores.setdefault((d, m, a), []).append(score)
        # keep the first run's curve at the largest truncation
        if c == 0 and f == 0 and curve:
            if a >= report.curves_attempts.get((d, m), 0):
                report.curves[(d, m)] = [(int(i), float(r)) for i, r in curve]
                report.curves_attempts[(d, m)] = a
    if report.failures and strict:
        f = report.failures[0]
        raise MethodError(f["error"], {k: f[k] for k in ("dataset", "method", "max_attempts", "cycle", "fold")})
    for key, vals in scores.items():
        report.runs[key] = vals
        report.rmse[key] = (float(np.mean(vals)), float(np.std(vals)))
    for dname in datasets:
        for mname in methods:
            pts = sorted((a, report.rmse[(d, m, a)][0]) for (d, m, a) in report.rmse if d == dname and m == mname)
            try:
                report.spearman[(dname, mname)] = spearman([p[0] for p in pts], [p[1] for p in pts])
            except ValueError:
                report.spearman[(dname, mname)] = None
    return report

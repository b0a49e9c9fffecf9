"""Command-line front end: ``sparsegain {synth,sparsity,impute,benchmark}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import config as cfgmod
from . import factorization, gain, gan
from .evaluation import MethodError, run_benchmark
from .ingest import ParseError, SynthConfig, build_tensor, parse_records, synth_generate, tensor_to_records, write_cells, write_records
from .neural import NonFiniteError
from .tensor import PerfTensor, sparsity_level, truncate_attempts

log = logging.getLogger("sparsegain")

OUTPUT_ENV = "SPARSEGAIN_OUTPUT_DIR"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class DataError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_dataset(path, delimiter=",") -> PerfTensor:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            records = parse_records(fh, delimiter)
        return build_tensor(records)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except (ParseError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from exc


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _attempts_for(t: PerfTensor, spec) -> list[int]:
    M = t.shape[2]
    attempts = cfgmod.parse_attempts(spec) or list(range(1, M + 1))
    bad = [a for a in attempts if not 1 <= a <= M]
    if bad:
        raise cfgmod.ConfigError(f"max attempts {bad} outside [1, {M}]")
    return attempts


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="global seed")
    p.add_argument("--jobs", type=int, default=None, help="worker processes (default: available CPUs)")
    p.add_argument("--max-iters", type=int, default=None, help="iteration cap for iterative methods")
    p.add_argument("--lr", type=float, default=None, help="learning rate override")
    p.add_argument("-v", "--verbose", action="store_true")


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        u_count=args.learners, n_count=args.questions, m_count=args.attempts,
        ability_spread=args.ability_spread, difficulty_spread=args.difficulty_spread,
        learning_rate_mean=args.learning_rate_mean, base_dropout=args.base_dropout,
        dropout_growth=args.dropout_growth, seed=args.seed if args.seed is not None else 0,
    )
    try:
        ds = synth_generate(cfg)
    except ValueError as exc:
        raise cfgmod.ConfigError(str(exc)) from exc
    out = Path(args.out)
    buf = io.StringIO()
    write_records(tensor_to_records(ds.observed), buf)
    _write_text(out, buf.getvalue())
    buf = io.StringIO()
    write_cells(ds.truth_prob, buf, "prob")
    truth_path = out.with_suffix(".truth.csv")
    _write_text(truth_path, buf.getvalue())
    # re-read so the printed value describes exactly what was written
    t = load_dataset(out)
    print(f"wrote {out} ({t.shape[0]}x{t.shape[1]}x{t.shape[2]}) and {truth_path}")
    print(f"sparsity {sparsity_level(t)!r}")
    return EXIT_OK


def cmd_sparsity(args) -> int:
    t = load_dataset(args.dataset, args.delimiter)
    attempts = _attempts_for(t, args.attempts)
    rows = [(a, sparsity_level(truncate_attempts(t, a))) for a in attempts]
    print("max_attempts  sparsity_%")
    for a, s in rows:
        print(f"{a:>12}  {100 * s:10.2f}")
    if args.csv:
        name = args.name or Path(args.dataset).stem
        text = "dataset,max_attempts,sparsity\n" + "".join(f"{name},{a},{s!r}\n" for a, s in rows)
        _write_text(Path(args.csv), text)
    return EXIT_OK


def _parse_params(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise cfgmod.ConfigError(f"--param expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = yaml.safe_load(v)
    return out


def cmd_impute(args) -> int:
    t = load_dataset(args.dataset, args.delimiter)
    params = cfgmod.method_params(args.method, _parse_params(args.param), args.max_iters, args.lr, args.seed)
    seed = args.seed if args.seed is not None else 0
    if args.method == "gain":
        model = gain.train(t, gain.GainConfig(**params))
        dense = gain.impute(model, t)
        curve = model.training_curve
        if args.save_model:
            gain.save_model(args.save_model, model)
    elif args.method == "gan":
        model = gan.gan_train(t, gan.GanConfig(**params))
        dense = gan.gan_impute(model, t)
        curve = model.training_curve
        if args.save_model:
            gan.save_model(args.save_model, model)
    else:
        fit = {"tf": factorization.tf_fit, "cpd": factorization.cpd_fit, "bptf": factorization.bptf_fit}[args.method]
        model = fit(t, seed=seed, **params)
        dense = factorization.predict(model, t)
        curve = list(enumerate(getattr(model, "training_curve", []), 1))
        if args.method == "bptf":
            obs = ~np.isnan(t.values)
            curve = [(len(model.samples) + model.burn_in, float(np.sqrt(np.mean((dense[obs] - t.values[obs]) ** 2))))]
    buf = io.StringIO()
    write_cells(dense, buf, "value")
    _write_text(Path(args.out), buf.getvalue())
    if args.curve and curve:
        buf = io.StringIO()
        gain.write_curve(curve, buf)
        _write_text(Path(args.curve), buf.getvalue())
    it, r = curve[-1] if curve else (0, float("nan"))
    print(f"{args.method}: final observed-reconstruction RMSE {r:.6f} after {it} iterations; wrote {args.out}")
    return EXIT_OK


def _load_datasets(cfg: cfgmod.RunConfig, base: Path) -> dict[str, PerfTensor]:
    out = {}
    for d in cfg.datasets:
        if d.path is not None:
            p = Path(d.path)
            out[d.name] = load_dataset(p if p.is_absolute() else base / p, d.delimiter)
        else:
            out[d.name] = synth_generate(SynthConfig(**d.synth)).observed
    return out


def cmd_benchmark(args) -> int:
    overrides = {"seed": args.seed, "jobs": args.jobs, "output_dir": args.output_dir, "attempts": args.attempts}
    cfg = cfgmod.load_config(args.config, overrides, args.max_iters, args.lr)
    out = Path(cfg.output_dir or os.environ.get(OUTPUT_ENV) or "benchmark_out")
    jobs = cfg.jobs or os.cpu_count() or 1
    datasets = _load_datasets(cfg, Path(args.config).resolve().parent)
    methods = {m: cfgmod.make_imputer(m, p) for m, p in cfg.methods.items()}
    attempts_by_ds = {n: _attempts_for(t, cfg.attempts) for n, t in datasets.items()}
    report = None
    for name, t in datasets.items():
        part = run_benchmark({name: t}, methods, attempts_by_ds[name], cfg.plan, jobs=jobs, strict=False)
        if report is None:
            report = part
        else:
            for f in ("rmse", "spearman", "sparsity", "curves", "runs", "curves_attempts"):
                getattr(report, f).update(getattr(part, f))
            report.failures.extend(part.failures)
    effective = cfg.to_dict() | {"output_dir": str(out), "jobs": jobs}
    effective["attempts"] = attempts_by_ds
    _write_text(out / "effective_config.json", json.dumps(effective, indent=2, sort_keys=True) + "\n")
    for name, text in report.csv_tables().items():
        _write_text(out / name, text)
    _write_text(out / "report.json", report.to_json() + "\n")
    for dname in datasets:
        means = {}
        for (d, m, a), (mu, _) in report.rmse.items():
            if d == dname:
                means.setdefault(m, []).append(mu)
        ranked = sorted(means.items(), key=lambda kv: np.mean(kv[1]))
        print(f"{dname}: " + "  ".join(f"{k + 1}. {m} {np.mean(v):.4f}" for k, (m, v) in enumerate(ranked)))
    if report.failures:
        for f in report.failures:
            print(f"FAILED {f['dataset']}/{f['method']}/m={f['max_attempts']} cycle {f['cycle']} fold {f['fold']}: {f['error']}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"wrote report to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sparsegain", description="Impute sparse learner x question x attempt performance tensors.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset with known truth")
    s.add_argument("--learners", type=int, default=200)
    s.add_argument("--questions", type=int, default=12)
    s.add_argument("--attempts", type=int, default=5)
    s.add_argument("--ability-spread", type=float, default=1.0)
    s.add_argument("--difficulty-spread", type=float, default=1.0)
    s.add_argument("--learning-rate-mean", type=float, default=0.3)
    s.add_argument("--base-dropout", type=float, default=0.2)
    s.add_argument("--dropout-growth", type=float, default=0.1)
    s.add_argument("--out", required=True)
    _common(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("sparsity", help="sparsity per max-attempt truncation")
    s.add_argument("dataset")
    s.add_argument("--attempts", default=None, help='e.g. "1-5" or "1,3,5"')
    s.add_argument("--delimiter", default=",")
    s.add_argument("--csv", default=None)
    s.add_argument("--name", default=None, help="dataset label in the CSV")
    _common(s)
    s.set_defaults(func=cmd_sparsity)

    s = sub.add_parser("impute", help="complete a dataset with one method")
    s.add_argument("dataset")
    s.add_argument("--method", choices=cfgmod.METHODS, default="gain")
    s.add_argument("--param", action="append", metavar="KEY=VALUE", help="method hyperparameter")
    s.add_argument("--out", required=True)
    s.add_argument("--curve", default=None, help="write the training curve CSV here")
    s.add_argument("--save-model", default=None)
    s.add_argument("--delimiter", default=",")
    _common(s)
    s.set_defaults(func=cmd_impute)

    s = sub.add_parser("benchmark", help="cross-validated benchmark from a YAML config")
    s.add_argument("config")
    s.add_argument("--output-dir", default=None)
    s.add_argument("--attempts", default=None)
    _common(s)
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, factorization.DivergenceError, FloatingPointError, MethodError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance criteria, one check per criterion.

Each check returns ``(ok, detail)``; the pytest wrappers print a single
``PASS``/``FAIL`` line per criterion and then assert. Run standalone with
``python3 tests/test_acceptance.py`` for the verdict lines only.
"""
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import rank2_tensor  # noqa: E402
from gradcheck import KINDS, layer_instance, max_rel_error  # noqa: E402
from sparsegain import evaluation as ev  # noqa: E402
from sparsegain import factorization as fz  # noqa: E402
from sparsegain import gain, gan  # noqa: E402
from sparsegain.ingest import SynthConfig, holdout_mask, synth_generate  # noqa: E402
from sparsegain.tensor import PerfTensor, sparsity_level, truncate_attempts  # noqa: E402

TABLE1_SHAPES = [(118, 9, 9), (392, 20, 4), (500, 6, 4)]


def check_1_gradients():
    t0 = time.perf_counter()
    worst = {}
    for kind in KINDS:
        rng = np.random.default_rng(1000 + KINDS.index(kind))
        worst[kind] = max(max_rel_error(*layer_instance(kind, rng), h=1e-3) for _ in range(20))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and dt < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    return ok, f"worst relative error per layer kind over 20 instances: {detail}; {dt:.1f} s"


def check_2_preservation():
    bad = []
    for U, N, M in TABLE1_SHAPES:
        t = synth_generate(SynthConfig(U, N, M, base_dropout=0.3, seed=U)).observed
        obs = ~np.isnan(t.values)
        g = gain.impute(gain.train(t, gain.GainConfig(max_iterations=1)), t)
        a = gan.gan_impute(gan.gan_train(t, gan.GanConfig(max_iterations=1)), t)
        for name, out in (("gain", g), ("gan", a)):
            if not np.array_equal(out[obs], t.values[obs]):
                bad.append(f"{name} {U}x{N}x{M}")
    shapes = ", ".join("x".join(map(str, s)) for s in TABLE1_SHAPES)
    return not bad, f"observed cells preserved exactly on {shapes}" if not bad else f"altered cells: {bad}"


def check_3_factorization_oracle():
    X = PerfTensor(rank2_tensor(50, 10, 5, seed=0))
    t, held = holdout_mask(X, 0.3, seed=0)
    idx = tuple(np.array(held).T)
    out = {}
    for name, fit in (("cpd", lambda: fz.cpd_fit(t, rank=2, mono_weight=0.0, iters=3000, seed=0)),
                      ("bptf", lambda: fz.bptf_fit(t, rank=2, seed=0))):
        t0 = time.perf_counter()
        pred = fz.predict(fit(), t)
        out[name] = (float(np.sqrt(np.mean((pred[idx] - X.values[idx]) ** 2))), time.perf_counter() - t0)
    ok = out["cpd"][0] < 0.05 and out["bptf"][0] < 0.1 and all(dt < 60 for _, dt in out.values())
    return ok, "; ".join(f"{k} held-out RMSE {r:.2e} in {dt:.1f} s" for k, (r, dt) in out.items())


def check_4_gain_beats_mean():
    t0 = time.perf_counter()
    ds = synth_generate(SynthConfig(200, 12, 5, ability_spread=1.5, base_dropout=0.3, dropout_growth=0.1, seed=1))
    plan = ev.CvPlan(cycles=1, folds=5, base_seed=0)
    mean = float(np.mean(ev.run_cv(ds.observed, ev.MeanImputer(), plan)))
    g = float(np.mean(ev.run_cv(ds.observed, ev.GainImputer(gain.GainConfig()), plan)))
    dt = time.perf_counter() - t0
    gap = 1 - g / mean
    ok = gap >= 0.05 and dt < 600
    return ok, (f"sparsity {sparsity_level(ds.observed):.3f}; 5-fold RMSE gain {g:.4f} vs global mean {mean:.4f} "
                f"({100 * gap:.1f}% lower); {dt:.0f} s")


def check_5_protocol_shape():
    ds = synth_generate(SynthConfig(60, 6, 4, seed=2))
    t = ds.observed
    scores = ev.run_cv(t, ev.TruthImputer(ds.truth_binary.values))
    plan = ev.CvPlan()
    spreads, partitions = [], []
    for c in range(plan.cycles):
        fa = ev.make_folds(t.mask, plan.folds, plan.cycle_seed(c))
        cells = np.concatenate([fa.cells(k) for k in range(plan.folds)])
        partitions.append(len(cells) == t.n_observed == len({tuple(x) for x in cells}))
        spreads.append(max(fa.sizes()) - min(fa.sizes()))
    ok = len(scores) == 25 and all(s == 0 for s in scores) and all(partitions) and max(spreads) <= 1
    return ok, f"{len(scores)} RMSE values, oracle max {max(scores)}, folds partition {all(partitions)}, max size spread {max(spreads)}"


def check_6_cap_and_early_stop():
    t = synth_generate(SynthConfig(32, 4, 3, seed=3)).observed
    never = gain.train(t, gain.GainConfig(early_stop_rmse=1e-9, batch_size=32))
    never_gan = gan.gan_train(t, gan.GanConfig(early_stop_rmse=1e-9, batch_size=32))
    v = np.ones((64, 4, 3))
    v[::3, 0, 1] = np.nan
    stop = gain.train(PerfTensor(v), gain.GainConfig(batch_size=8))
    r = [x for _, x in stop.training_curve]
    halts = r[-1] <= 0.1 and all(x > 0.1 for x in r[:-1]) and len(r) < 100
    ok = len(never.training_curve) <= 100 and len(never_gan.training_curve) <= 100 and halts
    return ok, (f"uncapped runs stop at {len(never.training_curve)} (gain) and {len(never_gan.training_curve)} (gan) "
                f"entries; early-stop run halts at iteration {len(r)} with RMSE {r[-1]:.4f}, previous {r[-2]:.4f}")


def check_7_sparsity_trend():
    rows = []
    for seed in range(5):
        for M in (5, 10):
            t = synth_generate(SynthConfig(200, 12, M, base_dropout=0.2, dropout_growth=0.08, seed=seed)).observed
            levels = [sparsity_level(truncate_attempts(t, m)) for m in range(1, M + 1)]
            rows.append(all(b >= a for a, b in zip(levels, levels[1:])))
    return all(rows), f"non-decreasing sparsity over max_attempts on {sum(rows)}/{len(rows)} seeded datasets"


def _brute_spearman(x, y):
    def ranks(v):
        return np.array([np.sum(v < a) + (np.sum(v == a) + 1) / 2 for a in v])
    rx, ry = ranks(x), ranks(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    return (rx @ ry) / np.sqrt((rx @ rx) * (ry @ ry))


def check_8_spearman():
    rng = np.random.default_rng(8)
    worst, n = 0.0, 0
    while n < 200:
        k = rng.integers(3, 60)
        x, y = rng.integers(0, 8, k).astype(float), rng.integers(0, 8, k).astype(float)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        worst = max(worst, abs(ev.spearman(x, y) - _brute_spearman(x, y)))
        n += 1
    exact = []
    for _ in range(50):
        x = rng.normal(size=rng.integers(2, 100))
        exact.append(ev.spearman(x, np.exp(x)) == 1.0 and ev.spearman(x, -x ** 3) == -1.0)
    ok = worst <= 1e-12 and all(exact)
    return ok, f"max deviation from brute-force oracle {worst:.1e} on 200 tied vectors; exact +-1 on {sum(exact)}/50 monotone pairs"


BENCH_CONFIG = """\
datasets:
  - name: synth
    synth: {u_count: 24, n_count: 4, m_count: 3, seed: 11}
methods:
  gain: {channels: [4, 4], max_iterations: 3, batch_size: 8}
  gan: {channels: [4, 4], max_iterations: 3, batch_size: 8}
  tf: {rank: 2, iters: 30}
  cpd: {rank: 2, iters: 30}
  bptf: {rank: 2, burn_in: 5, samples: 5}
cv: {cycles: 2, folds: 3}
seed: 4
"""


def check_9_determinism(tmp_dir):
    tmp_dir = Path(tmp_dir)
    cfg = tmp_dir / "bench.yaml"
    cfg.write_text(BENCH_CONFIG)
    outs = []
    for k, jobs in enumerate(("1", "2")):
        out = tmp_dir / f"run{k}"
        r = subprocess.run([sys.executable, "-m", "sparsegain.cli", "benchmark", str(cfg), "--output-dir", str(out), "--jobs", jobs],
                           capture_output=True, text=True)
        if r.returncode != 0:
            return False, f"benchmark exited {r.returncode}: {r.stderr.strip()[-300:]}"
        outs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    same = outs[0] == outs[1] and len(outs[0]) == 4
    return same, f"{len(outs[0])} CSVs byte-identical across two runs (jobs 1 and 2): {same}"


def check_10_constant_half():
    ds = synth_generate(SynthConfig(200, 12, 5, ability_spread=0.0, difficulty_spread=0.0, learning_rate_mean=0.0, seed=10))
    c = float(np.mean(ev.run_cv(ds.observed, ev.ConstantImputer(0.5))))
    m = float(np.mean(ev.run_cv(ds.observed, ev.MeanImputer())))
    ok = abs(c - 0.5) <= 0.05 and abs(m - 0.5) <= 0.05
    return ok, f"constant-0.5 CV RMSE {c:.4f}, global-mean CV RMSE {m:.4f} (analytic 0.5)"


CHECKS = {
    1: check_1_gradients, 2: check_2_preservation, 3: check_3_factorization_oracle, 4: check_4_gain_beats_mean,
    5: check_5_protocol_shape, 6: check_6_cap_and_early_stop, 7: check_7_sparsity_trend, 8: check_8_spearman,
    9: check_9_determinism, 10: check_10_constant_half,
}


def _line(n, ok, detail):
    return f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"


@pytest.mark.parametrize("n", [pytest.param(n, marks=pytest.mark.slow) if n == 4 else n for n in sorted(CHECKS)])
def test_criterion(n, capsys, tmp_path):
    fn = CHECKS[n]
    ok, detail = fn(tmp_path) if n == 9 else fn()
    with capsys.disabled():
        print("\n" + _line(n, ok, detail))
    assert ok, detail


if __name__ == "__main__":
    import tempfile

    failed = 0
    for n, fn in CHECKS.items():
        if n == 9:
            with tempfile.TemporaryDirectory() as d:
                ok, detail = fn(d)
        else:
            ok, detail = fn()
        failed += not ok
        print(_line(n, ok, detail), flush=True)
    sys.exit(1 if failed else 0)

"""Sum-rate comparisons, CDFs, timing and generalization experiments."""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .channels import gd_toy_dataset, generate_imac
from .dataset import Dataset
from .instance import IC, IMAC, effective_channels
from .neural import MlpModel, TrainConfig, binarize, forward, init_model, train
from .wmmse import WmmseConfig, sum_rate_batch, wmmse_batch

POLICIES = ("dnn", "wmmse", "random", "max_power")


@dataclass
class EvalReport:
    avg_rate: dict
    ratio_pct: float
    cdf: dict
    histogram: dict
    timing: dict
    n_samples: int
    rates: dict = field(repr=False, default_factory=dict)
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = asdict(self)
        out.pop("rates")
        return out


def empirical_cdf(values) -> list[tuple[float, float]]:
    """Points ``(x_(i), i/n)`` of the empirical CDF."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    if x.size == 0:
        return []
    return list(zip(x.tolist(), (np.arange(1, x.size + 1) / x.size).tolist()))


def histogram(rates: dict, bins=30) -> dict:
    lo = min(float(np.min(r)) for r in rates.values())
    hi = max(float(np.max(r)) for r in rates.values())
    edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
    return {"edges": edges.tolist(),
            **{name: np.histogram(r, edges)[0].tolist() for name, r in rates.items()}}


def _timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


def _check_model(model: MlpModel, n_features, K):
    if model.layer_sizes[0] != n_features:
        raise ValueError(f"model expects {model.layer_sizes[0]} inputs, data has {n_features}")
    if model.layer_sizes[-1] < K:
        raise ValueError(f"model emits {model.layer_sizes[-1]} powers, data needs {K}")


def compare_policies(H, features, noise, weights, p_max, model, binarize_flag=False, seed=0,
                     wmmse_config=None, users=None, meta=None) -> EvalReport:
    """Score the network against WMMSE and the two heuristics on channels ``H``.

    ``features`` is what the network sees; its first ``users`` outputs are
    the powers of the ``users`` users present in ``H``.
    """
    n, K = H.shape[0], H.shape[-1]
    if n == 0:
        raise ValueError("no samples to evaluate")
    users = K if users is None else users
    pred, t_dnn = _timed(lambda: forward(model, features))
    pred = pred[:, :users]
    if binarize_flag:
        pred = binarize(pred, p_max)
    res, t_wmmse = _timed(lambda: wmmse_batch(H, noise, weights, p_max, wmmse_config or WmmseConfig()))
    rng = np.random.default_rng(seed)
    allocations = {
        "dnn": pred,
        "wmmse": res.p,
        "random": rng.uniform(0.0, p_max, size=(n, K)),
        "max_power": np.full((n, K), p_max),
    }
    rates = {name: sum_rate_batch(H, p, noise, weights) for name, p in allocations.items()}
    avg = {name: float(np.mean(r)) for name, r in rates.items()}
    return EvalReport(
        avg_rate=avg,
        ratio_pct=100.0 * avg["dnn"] / avg["wmmse"],
        cdf={name: empirical_cdf(r) for name, r in rates.items()},
        histogram=histogram(rates),
        timing={"dnn": t_dnn, "wmmse": t_wmmse},
        n_samples=n,
        rates=rates,
        meta={"binarize": bool(binarize_flag), "seed": seed, **(meta or {})},
    )


def evaluate(test_set: Dataset, model: MlpModel, binarize_flag=False, seed=0, wmmse_config=None) -> EvalReport:
    """Network versus WMMSE (re-solved, not read from labels), random and full power."""
    _check_model(model, test_set.features().shape[1], test_set.num_users)
    return compare_policies(
        test_set.channels(), test_set.features(), test_set.noise_power, test_set.weights,
        test_set.p_max, model, binarize_flag, seed, wmmse_config,
        meta={"scenario": test_set.meta.get("generator", test_set.kind)},
    )


def bench_timing(test_set: Dataset, model: MlpModel, repetitions=5, wmmse_config=None) -> dict:
    """Median wall-clock of one batched forward pass versus per-sample WMMSE.

    Only computation is timed; data is already in memory and both paths are
    warmed up once before measuring.
    """
    if len(test_set) == 0:
        raise ValueError("zero samples to benchmark")
    _check_model(model, test_set.features().shape[1], test_set.num_users)
    cfg = wmmse_config or WmmseConfig()
    X = test_set.features()
    H = test_set.channels()
    noise, weights, p_max = test_set.noise_power, test_set.weights, test_set.p_max

    def run_dnn():
        forward(model, X)

    def run_wmmse():
        for i in range(len(H)):
            wmmse_batch(H[i:i + 1], noise[i:i + 1], weights[i:i + 1], p_max, cfg)

    run_dnn()
    wmmse_batch(H[:1], noise[:1], weights[:1], p_max, cfg)
    dnn_t = statistics.median(_timed(run_dnn)[1] for _ in range(repetitions))
    wmmse_t = statistics.median(_timed(run_wmmse)[1] for _ in range(repetitions))
    return {"n_samples": len(test_set), "repetitions": repetitions, "dnn_s": dnn_t,
            "wmmse_s": wmmse_t, "ratio_pct": 100.0 * dnn_t / wmmse_t, "speedup": wmmse_t / dnn_t}


def pad_half_user(gains, K) -> np.ndarray:
    """Embed ``(n, K/2, K/2)`` IC gains into ``(n, K, K)``; absent users take the top indices."""
    gains = np.asarray(gains, dtype=np.float64)
    half = gains.shape[-1]
    if K % 2 or half != K // 2:
        raise ValueError(f"half-user padding needs an even K and K/2 users, got K={K}, users={half}")
    out = np.zeros(gains.shape[:-2] + (K, K))
    out[..., :half, :half] = gains
    return out


def half_user_eval(model: MlpModel, test_set: Dataset, K, binarize_flag=False, seed=0) -> EvalReport:
    """Run a K-user network on K/2-user instances by zero-padding its input."""
    if K % 2:
        raise ValueError("half-user evaluation needs an even K")
    if test_set.kind != IC or test_set.num_users != K // 2:
        raise ValueError(f"expected a {K // 2}-user IC test set")
    features = pad_half_user(test_set.gains, K).reshape(len(test_set), -1)
    _check_model(model, features.shape[1], K)
    return compare_policies(
        test_set.channels(), features, test_set.noise_power, test_set.weights, test_set.p_max,
        model, binarize_flag, seed, users=K // 2, meta={"scenario": f"half-user {K}->{K // 2}"},
    )


def geometry_shift_eval(model: MlpModel, N, K, geometries, n=1000, seed=0, binarize_flag=False,
                        noise_power=1.0, p_max=1.0) -> dict:
    """Evaluate one IMAC network on test sets drawn with other ``(R, r)`` values."""
    if model.layer_sizes[0] != N * K or model.layer_sizes[-1] != K:
        raise ValueError(f"model shape {model.layer_sizes} does not fit (N, K) = ({N}, {K})")
    reports = {}
    for R, r in geometries:
        insts = generate_imac(N, K, R, r, n, seed, noise_power, p_max)
        gains = np.stack([i.gains for i in insts])
        H = effective_channels(IMAC, gains)
        reports[(R, r)] = compare_policies(
            H, gains.reshape(n, -1), noise_power, 1.0, p_max, model, binarize_flag, seed,
            meta={"scenario": f"imac N={N} K={K} R={R} r={r}"},
        )
    return reports


def write_report(report: EvalReport, outdir, prefix="report") -> dict:
    """CSV summary, CDF and histogram CSVs, and a JSON mirror."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    wm = report.avg_rate["wmmse"]
    rows = ["policy,avg_rate,ratio_pct,total_time_s"]
    for name, avg in report.avg_rate.items():
        t = report.timing.get(name)
        rows.append(f"{name},{avg!r},{100.0 * avg / wm!r},{'' if t is None else repr(t)}")
    paths = {"summary": outdir / f"{prefix}.csv", "cdf": outdir / f"{prefix}_cdf.csv",
             "histogram": outdir / f"{prefix}_hist.csv", "json": outdir / f"{prefix}.json"}
    paths["summary"].write_text("\n".join(rows) + "\n", encoding="utf-8")

    cdf_rows = ["policy,rate,probability"]
    for name, pts in report.cdf.items():
        cdf_rows += [f"{name},{x!r},{p!r}" for x, p in pts]
    paths["cdf"].write_text("\n".join(cdf_rows) + "\n", encoding="utf-8")

    hist = report.histogram
    names = [k for k in hist if k != "edges"]
    hist_rows = ["bin_lo,bin_hi," + ",".join(names)]
    for i in range(len(hist["edges"]) - 1):
        counts = ",".join(str(hist[k][i]) for k in names)
        hist_rows.append(f"{hist['edges'][i]!r},{hist['edges'][i + 1]!r},{counts}")
    paths["histogram"].write_text("\n".join(hist_rows) + "\n", encoding="utf-8")

    paths["json"].write_text(json.dumps(report.summary(), indent=2), encoding="utf-8")
    return paths


def gd_toy_experiment(n=20000, T=3000, alpha=0.01, epochs=60, batch=100, seed=0, hidden=(200, 200, 200)):
    """Fit ``(x0, z) -> x^T`` and ``z -> x^T`` with the same architecture.

    Returns test MSEs: ``x0_z`` on ``z`` in [0, 2] and ``z_only`` on ``z`` in
    [0.5, 2], where the two stationary points are far apart.
    """
    X, y = gd_toy_dataset(n, T, alpha, seed)
    Xv, yv = gd_toy_dataset(max(1, n // 10), T, alpha, seed + 1)
    tests = {"x0_z": gd_toy_dataset(2000, T, alpha, seed + 2, z_range=(0.0, 2.0)),
             "z_only": gd_toy_dataset(2000, T, alpha, seed + 3, z_range=(0.5, 2.0))}
    cfg = TrainConfig(batch_size=batch, max_epochs=epochs, seed=seed)
    out = {}
    for name, cols in (("x0_z", slice(0, 2)), ("z_only", slice(1, 2))):
        model = init_model([cols.stop - cols.start, *hidden, 1], seed, output_activation="linear")
        best, _ = train(model, (X[:, cols], y[:, None]), (Xv[:, cols], yv[:, None]), cfg)
        Xt, yt = tests[name]
        out[name] = float(np.mean(np.square(forward(best, Xt[:, cols])[:, 0] - yt)))
    return out

import json

import numpy as np
import pytest

from wmmse_learn.channels import generate_gaussian_ic, generate_imac, label_dataset
from wmmse_learn.harness import (
    bench_timing, compare_policies, empirical_cdf, evaluate, geometry_shift_eval, half_user_eval,
    pad_half_user, write_report,
)
from wmmse_learn.neural import binarize, forward, init_model
from wmmse_learn.wmmse import sum_rate_batch, wmmse_batch


@pytest.fixture(scope="module")
def small_set():
    return label_dataset(generate_gaussian_ic(4, 300, 5), generator="gaussian_ic", seed=5)


def test_cdf_definition():
    assert empirical_cdf([3.0, 1.0]) == [(1.0, 0.5), (3.0, 1.0)]
    pts = empirical_cdf(np.random.default_rng(0).standard_normal(100))
    xs, ps = zip(*pts)
    assert all(np.diff(xs) >= 0) and all(np.diff(ps) > 0) and ps[-1] == 1.0
    assert empirical_cdf([]) == []


def test_exact_labels_give_full_ratio(small_set):
    # a linear network with identity weights on one-hot inputs reproduces labels exactly
    n, K = small_set.labels.shape
    m = init_model([n, K], 0)
    m.weights[0][:] = small_set.labels
    H = small_set.channels()
    rep = compare_policies(H, np.eye(n), small_set.noise_power, small_set.weights, 1.0, m)
    assert rep.ratio_pct == pytest.approx(100.0)


def test_report_fields_and_consistency(small_set, tmp_path):
    m = init_model([16, 20, 4], 1)
    rep = evaluate(small_set, m, binarize_flag=True, seed=3)
    assert rep.n_samples == 300
    assert rep.ratio_pct == pytest.approx(100 * rep.avg_rate["dnn"] / rep.avg_rate["wmmse"])
    # wmmse column is re-solved, not read from labels
    p = wmmse_batch(small_set.channels(), 1.0, 1.0, 1.0).p
    assert rep.avg_rate["wmmse"] == pytest.approx(sum_rate_batch(small_set.channels(), p, 1.0).mean())
    assert rep.avg_rate["max_power"] == pytest.approx(
        sum_rate_batch(small_set.channels(), np.ones((300, 4)), 1.0).mean())
    paths = write_report(rep, tmp_path, "r")
    rows = [line.split(",") for line in paths["summary"].read_text().splitlines()[1:]]
    table = {r[0]: (float(r[1]), float(r[2])) for r in rows}
    assert table["dnn"][1] == pytest.approx(100 * table["dnn"][0] / table["wmmse"][0])
    assert json.loads(paths["json"].read_text())["n_samples"] == 300
    assert paths["cdf"].read_text().startswith("policy,rate,probability")


def test_evaluate_deterministic(small_set):
    m = init_model([16, 8, 4], 2)
    a, b = evaluate(small_set, m, seed=1), evaluate(small_set, m, seed=1)
    assert a.avg_rate == b.avg_rate


def test_binarized_outputs_are_binary(small_set):
    m = init_model([16, 8, 4], 2)
    m.biases[-1][:] = 0.4
    rep = evaluate(small_set, m, binarize_flag=True)
    assert rep.meta["binarize"] is True
    p = binarize(forward(m, small_set.features()), 1.0)
    assert set(np.unique(p)) <= {0.0, 1.0}
    assert rep.rates["dnn"] == pytest.approx(sum_rate_batch(small_set.channels(), p, 1.0))


def test_shape_mismatch(small_set):
    with pytest.raises(ValueError):
        evaluate(small_set, init_model([9, 4, 3], 0), False)


def test_bench_empty_and_basic(small_set):
    m = init_model([16, 8, 4], 0)
    empty = small_set.subset(np.arange(0))
    with pytest.raises(ValueError):
        bench_timing(empty, m)
    res = bench_timing(small_set.subset(np.arange(20)), m, repetitions=2)
    assert res["n_samples"] == 20 and res["dnn_s"] > 0 and res["wmmse_s"] > 0


def test_half_user_padding():
    g = np.arange(4.0).reshape(1, 2, 2) + 1
    out = pad_half_user(g, 4)
    assert out.shape == (1, 4, 4)
    assert np.array_equal(out[0, :2, :2], g[0]) and np.all(out[0, 2:] == 0) and np.all(out[0, :, 2:] == 0)
    with pytest.raises(ValueError):
        pad_half_user(g, 5)


def test_half_user_eval_uses_first_outputs():
    test = label_dataset(generate_gaussian_ic(2, 50, 1))
    m = init_model([16, 8, 4], 0)
    rep = half_user_eval(m, test, 4)
    assert rep.n_samples == 50 and rep.avg_rate["wmmse"] > 0
    with pytest.raises(ValueError):
        half_user_eval(m, label_dataset(generate_gaussian_ic(3, 5, 1)), 4)


def test_geometry_shift_same_geometry_equals_plain():
    N, K = 2, 4
    m = init_model([N * K, 8, K], 0)
    reps = geometry_shift_eval(m, N, K, [(100.0, 0.0)], n=40, seed=3)
    ds = label_dataset(generate_imac(N, K, 100.0, 0.0, 40, 3))
    plain = evaluate(ds, m, seed=3)
    assert reps[(100.0, 0.0)].avg_rate == pytest.approx(plain.avg_rate)
    with pytest.raises(ValueError):
        geometry_shift_eval(m, 3, 6, [(100.0, 0.0)], n=2)

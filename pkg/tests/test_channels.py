import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import gd_scalar, grid_optimum_2user
from wmmse_learn.channels import (
    channel_stats, gaussian_ic_gains, gd_run, gd_toy_dataset, generate_from_stats,
    generate_gaussian_ic, generate_imac, hex_layout, imac_gains, in_hexagon, label_dataset,
    pathloss_variance, sample_imac_geometry,
)
from wmmse_learn.dataset import Dataset, load_dataset, read_meta, save_dataset
from wmmse_learn.instance import ic_instance
from wmmse_learn.wmmse import WmmseConfig


def test_single_user_single_sample():
    (inst,) = generate_gaussian_ic(1, 1, seed=3)
    assert inst.gains.shape == (1, 1) and inst.gains[0, 0] >= 0


def test_half_normal_mean():
    g = gaussian_ic_gains(10, 10_000, seed=1)
    # Monte-Carlo reference from an unrelated generator
    ref = np.abs(np.random.default_rng(12345).standard_normal(100_000)).mean()
    assert abs(ref - math.sqrt(2 / math.pi)) < 0.01
    assert g.mean() == pytest.approx(ref, abs=0.01)


def test_seeded_output_independent_of_threads():
    a = gaussian_ic_gains(4, 3000, seed=9, threads=1)
    b = gaussian_ic_gains(4, 3000, seed=9, threads=4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, gaussian_ic_gains(4, 3000, seed=10))


def test_prefix_stability():
    # samples do not depend on how many are requested after them
    assert np.array_equal(gaussian_ic_gains(3, 100, 5), gaussian_ic_gains(3, 2000, 5)[:100])


@pytest.mark.parametrize("bad", [0, -1, 2.5])
def test_bad_counts_rejected(bad):
    with pytest.raises(ValueError):
        gaussian_ic_gains(bad, 10, 0)
    with pytest.raises(ValueError):
        gaussian_ic_gains(3, bad, 0)


# IMAC geometry

@pytest.mark.parametrize("N", [1, 2, 3, 5, 7, 20])
def test_hex_neighbours_exactly_two_radii_apart(N):
    R = 100.0
    pos = hex_layout(N, R)
    d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
    off = d[~np.eye(N, dtype=bool)]
    if N > 1:
        assert off.min() == pytest.approx(2 * R)
        # every cell touches at least one other cell
        assert np.all(np.isclose(np.where(np.eye(N, dtype=bool), np.inf, d).min(axis=1), 2 * R))


def test_seven_cells_centre_and_ring():
    pos = hex_layout(7, 50.0)
    assert np.allclose(pos[0], 0)
    assert np.allclose(np.linalg.norm(pos[1:], axis=1), 100.0)


def test_user_distances_within_cell():
    rng = np.random.default_rng(0)
    R, r = 100.0, 50.0
    circ = R * 2 / math.sqrt(3)
    for _ in range(20):
        geo = sample_imac_geometry(rng, 7, 28, R, r)
        d = geo.home_distances()
        assert np.all(d >= r) and np.all(d <= circ + 1e-9)


def test_hexagon_membership_oracle():
    # brute-force oracle: a point is inside the hexagon with inradius R iff it
    # is closer to the origin than to any of the six neighbouring centres
    R = 1.0
    pts = np.random.default_rng(1).uniform(-1.3, 1.3, size=(10_000, 2))
    ang = np.arange(6) * np.pi / 3
    nbrs = 2 * R * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    closer = np.all(np.linalg.norm(pts, axis=1)[:, None]
                    <= np.linalg.norm(pts[:, None] - nbrs[None], axis=-1), axis=1)
    assert np.array_equal(in_hexagon(pts, R), closer)


def test_distance_floor_applies_when_inner_radius_zero():
    geo = sample_imac_geometry(np.random.default_rng(2), 3, 300, 100.0, 0.0)
    assert geo.home_distances().min() >= 1.0


def test_pathloss_reference_distance():
    assert pathloss_variance(200.0, 1.0) == 1.0
    assert pathloss_variance(100.0) == pytest.approx(8.0)


def test_imac_shapes_and_validation():
    insts = generate_imac(3, 24, 100.0, 0.0, 4, seed=1)
    assert len(insts) == 4 and insts[0].gains.shape == (24, 3)
    assert insts[0].channel_matrix().shape == (24, 24)
    with pytest.raises(ValueError):
        imac_gains(3, 25, 100.0, 0.0, 1, 0)
    with pytest.raises(ValueError):
        imac_gains(3, 24, 100.0, 100.0, 1, 0)


def test_imac_shadowing_statistics():
    # log-gain spread at a fixed geometry equals shadowing plus Rayleigh spread
    g = imac_gains(1, 1, 100.0, 99.0, 4000, seed=4)[:, 0, 0]
    db = 20 * np.log10(g)
    # Rayleigh power in dB has std 5.57 dB; combined with 8 dB shadowing
    assert np.std(db) == pytest.approx(math.hypot(8.0, 5.57), rel=0.08)


# statistics-matched regeneration

def test_constant_reference_reproduces_constant():
    ref = [ic_instance(np.full((3, 3), 0.7)) for _ in range(5)]
    out = generate_from_stats(ref, 50, seed=0)
    assert all(np.allclose(i.gains, 0.7) for i in out)
    assert out[0].noise_power[0] == pytest.approx(1e-3)


def test_regenerated_diagonal_mean():
    ref = generate_gaussian_ic(4, 2000, seed=3)
    m_d, v_d, _, _ = channel_stats(ref)
    n = 20_000
    gen = generate_from_stats(ref, n, seed=8)
    diag = np.stack([np.diag(i.gains) for i in gen])
    # clipping at zero only raises the mean; reference sits well above zero
    assert abs(diag.mean() - m_d) <= 3 * math.sqrt(v_d) / math.sqrt(n) + 0.02


# labeling

def test_label_single_user_full_power():
    ds = label_dataset([ic_instance([[0.3]], p_max=2.0)])
    assert ds.labels[0] == pytest.approx([2.0])


def test_label_weak_interference_matches_grid():
    H = np.array([[2.0, 0.1], [0.1, 2.0]])
    ds = label_dataset([ic_instance(H)])
    _, arg = grid_optimum_2user(H)
    assert ds.labels[0] == pytest.approx(arg, abs=1e-6)


def test_label_box_and_meta():
    ds = label_dataset(generate_gaussian_ic(5, 200, 0), WmmseConfig(), "gaussian_ic", 0)
    assert len(ds) == 200
    assert np.all(ds.labels >= 0) and np.all(ds.labels <= 1)
    assert ds.meta["obj_tol"] == 1e-5 and ds.meta["max_iter"] == 500


def test_dataset_round_trip(tmp_path):
    ds = label_dataset(generate_imac(2, 4, 100.0, 10.0, 30, 1), generator="imac", seed=1)
    path = save_dataset(ds, tmp_path / "d.csv")
    back = load_dataset(path)
    assert back.kind == "IMAC" and back.gains.shape == (30, 4, 2)
    assert np.array_equal(back.gains, ds.gains) and np.array_equal(back.labels, ds.labels)
    assert read_meta(str(path) + ".meta")["generator"] == "imac"


def test_dataset_rejects_infeasible_labels():
    with pytest.raises(ValueError):
        Dataset("IC", np.ones((1, 2, 2)), np.array([[0.5, 1.5]]), np.ones((1, 2)), np.ones((1, 2)), 1.0)


# gradient-descent toy

def test_gd_negative_target_goes_to_zero():
    x = gd_run(np.linspace(-0.9, 0.9, 7), -1.0, 3000, 0.01)
    assert np.allclose(x, 0.0, atol=1e-6)


def test_gd_positive_target_reaches_root():
    assert gd_run(0.5, 1.0, 3000, 0.01) == pytest.approx(1.0, abs=1e-3)
    assert gd_scalar(0.5, 1.0, 3000, 0.01) == pytest.approx(1.0, abs=1e-3)


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_gd_matches_scalar_oracle(x0, z):
    assert gd_run(x0, z, 200, 0.01) == pytest.approx(gd_scalar(x0, z, 200, 0.01), rel=1e-9, abs=1e-12)


def test_gd_dataset_shape_and_sign_symmetry():
    X, y = gd_toy_dataset(500, T=3000, seed=2)
    assert X.shape == (500, 2) and y.shape == (500,)
    pos = (X[:, 1] > 0.05) & (np.abs(X[:, 0]) > 0.2)
    assert np.allclose(np.abs(y[pos]), np.sqrt(X[pos, 1]), atol=1e-3)
    assert np.all(np.sign(y[pos]) == np.sign(X[pos, 0]))

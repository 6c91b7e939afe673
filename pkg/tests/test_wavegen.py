from __future__ import annotations

import dataclasses
import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given
from hypothesis import strategies as st

from meshft.errors import NonCommensurate
from meshft.mesher import make_rng, periodic_grid
from meshft.phcore import energy, theory_hodge
from meshft.wavegen import (TEST_STREAM, TRAIN_STREAM, VAL_STREAM, PairDataset, SamplerConfig, WaveSample,
                            exact_trajectory, make_dataset, plane_wave_state,
                            sample_conservative, sample_damped)


def test_phase_shift_identity(grid32):
    s = WaveSample(1, 0, 1.0, 1.0, 1.0, math.pi / 2, 0.0)
    st_ = plane_wave_state(grid32, s, 0.0)
    np.testing.assert_allclose(st_.q, np.cos(2 * np.pi * grid32.positions[:, 0]), atol=1e-14)


def test_temporal_periodicity(grid32):
    s = WaveSample(2, -3, 1.0, 1.3, 0.8, 0.4, 0.0)
    period = 2 * math.pi / s.omega
    a, b = plane_wave_state(grid32, s, 0.7), plane_wave_state(grid32, s, 0.7 + period)
    np.testing.assert_allclose(a.q, b.q, atol=1e-12)
    np.testing.assert_allclose(a.p, b.p, atol=1e-12)


def test_momentum_matches_symbolic_derivative(delaunay64):
    s = WaveSample(3, 1, 1.0, 0.9, 1.2, 1.1, 0.0)
    t = 0.37
    z = plane_wave_state(delaunay64, s, t)
    theta = delaunay64.positions @ (2 * np.pi * np.array([3.0, 1.0])) - s.omega * t + s.phi
    np.testing.assert_allclose(z.p, -s.a * s.omega * delaunay64.V0 * np.cos(theta), rtol=1e-12, atol=1e-15)


def test_damped_momentum_includes_envelope(grid8):
    s = WaveSample(1, 1, 1.0, 1.0, 1.0, 0.2, 0.0, gamma=0.05)
    t, h = 0.3, 1e-6
    z = plane_wave_state(grid8, s, t)
    fd = (plane_wave_state(grid8, s, t + h).q - plane_wave_state(grid8, s, t - h).q) / (2 * h)
    np.testing.assert_allclose(z.p, grid8.V0 * fd, rtol=1e-6, atol=1e-12)


def test_non_commensurate_box(grid8):
    with pytest.raises(NonCommensurate):
        plane_wave_state(grid8, WaveSample(1, 0, 2.0, 1.0, 1.0, 0.0, 0.0), 0.0)


def test_sampler_determinism(grid8):
    a = sample_conservative(make_rng(7, TRAIN_STREAM, 3), grid8, 0.002)
    b = sample_conservative(make_rng(7, TRAIN_STREAM, 3), grid8, 0.002)
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1][1].q, b[1][1].q)


def test_kx_marginal_uniform(grid8):
    rng = np.random.default_rng(12345)
    mx = np.array([sample_conservative(rng, grid8, 0.002)[0].mx for _ in range(10_000)])
    values = [-4, -3, -2, -1, 1, 2, 3, 4]
    counts = np.array([(mx == v).sum() for v in values])
    assert counts.sum() == 10_000
    assert scipy.stats.chisquare(counts).pvalue > 0.01


def test_no_zero_mode(grid8):
    for cfg in (SamplerConfig(), SamplerConfig(symmetric=True), SamplerConfig(1, 0)):
        ds = make_dataset(grid8, 2000, 0.002, 1, cfg=cfg)
        assert all((s.mx, s.my) != (0, 0) for s in ds.samples)
        assert all(1 <= abs(s.mx) <= cfg.kmax_x and abs(s.my) <= cfg.kmax_y for s in ds.samples if not cfg.symmetric)


def test_sample_ranges(grid8):
    ds = make_dataset(grid8, 500, 0.002, 0, cfg=SamplerConfig(gamma_min=0.01, gamma_max=0.1))
    for s in ds.samples:
        assert 0.5 <= s.a <= 1.5 and 0 <= s.phi < 2 * math.pi and 0 <= s.t0 < 2 * math.pi
        assert 0.01 <= s.gamma <= 0.1
        assert math.isclose(s.omega, s.c * np.linalg.norm(s.k))


def test_forced_zero_gamma_reduces_to_conservative(grid8):
    a, pa = sample_damped(make_rng(3, 0, 0), grid8, 0.002, SamplerConfig())
    b, pb = sample_conservative(make_rng(3, 0, 0), grid8, 0.002)
    assert a == b and a.gamma == 0.0
    np.testing.assert_array_equal(pa[1].p, pb[1].p)


def test_damped_pairs_lose_energy(grid32):
    th = theory_hodge(grid32)
    rng = np.random.default_rng(0)
    for _ in range(200):
        s, (z0, z1) = sample_damped(rng, grid32, 0.002)
        assert energy(grid32, th, z1) < energy(grid32, th, z0)


def test_damped_envelope(grid8):
    s = WaveSample(1, 2, 1.0, 1.0, 1.0, 0.3, 1.5, gamma=0.08)
    tr = exact_trajectory(grid8, s, 0.01, 300)
    env = np.exp(-0.08 * (1.5 + 0.01 * np.arange(301)))
    undamped = exact_trajectory(grid8, dataclasses.replace(s, gamma=0.0), 0.01, 300)
    np.testing.assert_allclose(tr.q, env[:, None] * undamped.q, rtol=1e-12, atol=1e-15)


def test_exact_trajectory_frames(grid8):
    s = WaveSample(2, 0, 1.0, 1.0, 1.0, 0.0, 0.4)
    assert exact_trajectory(grid8, s, 0.01, 0).q.shape == (1, 64)
    tr = exact_trajectory(grid8, s, 0.01, 100)
    E = energy(grid8, theory_hodge(grid8), tr.frame(slice(None)))
    assert np.max(np.abs(E - E[0])) <= 1e-12 * E[0]


@given(st.integers(0, 2**31), st.integers(0, 30))
def test_pair_consistency_bitwise(seed, index):
    """The stored target is the exact solution at t0 + dt via the same code path."""
    g = periodic_grid(6, 5)
    ds = make_dataset(g, index + 1, 0.002, seed)
    s = ds.samples[index]
    z1 = plane_wave_state(g, s, s.t0 + 0.002)
    np.testing.assert_array_equal(ds.q1[index], z1.q)
    np.testing.assert_array_equal(ds.p1[index], z1.p)
    np.testing.assert_allclose(s.k * g.box_length / (2 * np.pi), [s.mx, s.my], atol=1e-12)


def test_splits_are_functions_of_seed_and_index(grid8):
    full = make_dataset(grid8, 50, 0.002, 4)
    part = make_dataset(grid8, 20, 0.002, 4)
    assert full.samples[:20] == part.samples
    val = make_dataset(grid8, 50, 0.002, 4, VAL_STREAM)
    test = make_dataset(grid8, 50, 0.002, 4, TEST_STREAM)
    assert not set(full.samples) & set(val.samples)
    assert not set(val.samples) & set(test.samples)
    assert make_dataset(grid8, 5, 0.002, 5).samples != part.samples[:5]


def test_save_load_roundtrip(tmp_path, grid8):
    ds = make_dataset(grid8, 12, 0.002, 2, cfg=SamplerConfig(gamma_min=0.01, gamma_max=0.1))
    ds.save(tmp_path / "train")
    back = PairDataset.load(tmp_path / "train")
    assert back.samples == ds.samples and back.mesh_id == ds.mesh_id and back.dt == ds.dt
    for name in ("q0", "p0", "q1", "p1"):
        np.testing.assert_array_equal(getattr(back, name), getattr(ds, name))
    assert back.subset(5).q0.shape == (5, 64)

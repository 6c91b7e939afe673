from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshft.errors import DimensionMismatch, NonPositiveMass
from meshft.mesher import periodic_grid
from meshft.maxwell2d import (MaxwellState, MaxwellStars, charge, charge_invariant, interconnection_power,
                              maxwell_demo, maxwell_energy, maxwell_rollout, maxwell_step, omega_max,
                              te_mode, unsigned_curl_t)
from meshft.phcore import CanonicalState, ForceOperator, HodgeStar
from meshft.stepper import kdk_step


@pytest.fixture(scope="module")
def g16():
    return periodic_grid(16, 16)


@pytest.fixture(scope="module")
def g32():
    # the leapfrog energy ripple of the (1, 0) mode shrinks 4x per refinement; 16^2 sits near 3e-3
    return periodic_grid(32, 32)


def test_zero_fields_stay_zero(g16):
    stars = MaxwellStars.random(g16, 0)
    z = MaxwellState(np.zeros(256), np.zeros(512))
    out = maxwell_step(g16, stars, z, 0.01)
    assert not out.B.any() and not out.Dflux.any()


def test_shape_and_positivity_errors(g16):
    with pytest.raises(DimensionMismatch):
        maxwell_step(g16, MaxwellStars.uniform(g16), MaxwellState(np.zeros(3), np.zeros(512)), 0.1)
    with pytest.raises(NonPositiveMass):
        MaxwellStars(np.zeros(256), np.ones(512))


def rk4_maxwell(geom, stars, s, t_end, n):
    D1 = geom.D1
    h = t_end / n

    def f(B, D):
        return -D1.apply(stars.star_eps_inv * D), D1.apply_transpose(stars.star_mu_inv * B)

    B, D = s.B.copy(), s.Dflux.copy()
    for _ in range(n):
        k1 = f(B, D)
        k2 = f(B + h / 2 * k1[0], D + h / 2 * k1[1])
        k3 = f(B + h / 2 * k2[0], D + h / 2 * k2[1])
        k4 = f(B + h * k3[0], D + h * k3[1])
        B = B + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        D = D + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return MaxwellState(B, D)


def test_te_mode_energy_and_rk4_reference(g32):
    stars = MaxwellStars.smooth_random(g32, 1)
    dt = 1.0 / omega_max(g32, stars)   # CFL 0.5
    s0 = te_mode(g32)
    traj = maxwell_rollout(g32, stars, s0, dt, 500)
    E = np.array([maxwell_energy(stars, s) for s in traj])
    assert np.max(np.abs(E - E[0])) / E[0] <= 1e-3
    ref = rk4_maxwell(g32, stars, s0, 500 * dt, 20000)
    assert abs(maxwell_energy(stars, ref) - E[0]) / E[0] < 1e-9
    assert np.linalg.norm(traj[-1].B - ref.B) / np.linalg.norm(ref.B) < 5e-2


def test_uniform_stars_reduce_to_scalar_kdk():
    """With mu^-1 = 1/mu0 the face field obeys mu0 B'' = -D1 eps^-1 D1^T B, stepped by the same KDK."""
    g = periodic_grid(4, 4)
    rng = np.random.default_rng(0)
    mu0 = 1.7
    eps_inv = rng.uniform(0.5, 2.0, g.n_edges)
    stars = MaxwellStars(np.full(g.complex.n[2], 1 / mu0), eps_inv)
    s = MaxwellState(rng.standard_normal(16), rng.standard_normal(32))
    op = ForceOperator(g.D1.transpose())
    hodge = HodgeStar(np.full(16, mu0), eps_inv)
    z = CanonicalState(s.B, -mu0 * g.D1.apply(eps_inv * s.Dflux))
    for _ in range(10):
        s = maxwell_step(g, stars, s, 0.05)
        z = kdk_step(op, hodge, None, z, 0.05)
    np.testing.assert_allclose(z.q, s.B, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(z.p, -mu0 * g.D1.apply(eps_inv * s.Dflux), rtol=1e-12, atol=1e-13)


@given(st.integers(0, 2**31))
def test_charge_invariant_random_stars(seed):
    g = periodic_grid(8, 8)
    stars = MaxwellStars.random(g, seed)
    rng = np.random.default_rng(seed)
    s0 = MaxwellState(rng.standard_normal(64), rng.standard_normal(128))
    dt = 0.9 * 2 / omega_max(g, stars)
    traj = maxwell_rollout(g, stars, s0, dt, 500)
    assert charge_invariant(traj, g.D0) <= 1e-12
    assert np.abs(charge(g, s0)).max() > 0


def test_unsigned_control_breaks_charge(g16):
    stars = MaxwellStars.smooth_random(g16, 0)
    dt = 1.0 / omega_max(g16, stars)
    bad = maxwell_rollout(g16, stars, te_mode(g16), dt, 50, curl_t=unsigned_curl_t(g16))
    assert charge_invariant(bad, g16.D0) > 1e-3


@given(st.integers(0, 2**31))
def test_interconnection_power_vanishes(seed):
    g = periodic_grid(6, 5)
    rng = np.random.default_rng(seed)
    H, E = rng.standard_normal(30), rng.standard_normal(60)
    scale = np.linalg.norm(H) * np.linalg.norm(g.D1.apply(E))
    assert abs(interconnection_power(g, H, E)) <= 1e-10 * scale


def test_demo_report(g16, g32):
    assert maxwell_demo(g32, seed=0, steps=500).energy_drift <= 1e-3
    rep = maxwell_demo(g16, seed=0, steps=100)
    assert rep.charge_invariant <= 1e-12 and rep.control_charge > 1e-3
    assert rep.csv.splitlines()[0] == "t,energy,charge_invariant"
    assert len(rep.csv.splitlines()) == 102
    with pytest.raises(ValueError):
        maxwell_demo(g16, stars="plaid")

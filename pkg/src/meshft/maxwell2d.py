"""Source-free 2D TE Maxwell on the edge-face part of a periodic grid complex.

    B (faces, 2-cochain), D (edges, 1-cochain), H = mu^-1 B, E = eps^-1 D
    dB/dt = -D1 E        dD/dt = D1^T H

Stepped with the same kick-drift-kick splitting as the scalar wave. The charge
D0^T D is conserved by topology alone: D0^T D1^T = (D1 D0)^T = 0.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .complex import SignedIncidence
from .errors import DimensionMismatch, NonPositiveMass
from .mesher import make_rng


@dataclass
class MaxwellState:
    B: np.ndarray
    Dflux: np.ndarray

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=np.float64)
        self.Dflux = np.asarray(self.Dflux, dtype=np.float64)


@dataclass(frozen=True)
class MaxwellStars:
    star_mu_inv: np.ndarray   # per face
    star_eps_inv: np.ndarray  # per edge

    def __post_init__(self):
        for name in ("star_mu_inv", "star_eps_inv"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if np.any(~(a > 0)):
                raise NonPositiveMass(f"{name} must be strictly positive")
            object.__setattr__(self, name, a)

    @classmethod
    def uniform(cls, geom, mu_inv=1.0, eps_inv=1.0):
        return cls(np.full(geom.complex.n[2], mu_inv), np.full(geom.n_edges, eps_inv))

    @classmethod
    def random(cls, geom, seed, low=0.5, high=2.0):
        """Independent uniform values per cell (white noise)."""
        rng = make_rng(seed, 0x3A7E)
        return cls(rng.uniform(low, high, geom.complex.n[2]), rng.uniform(low, high, geom.n_edges))

    @classmethod
    def smooth_random(cls, geom, seed, contrast=0.5, kmax=2):
        """exp(contrast * f) for a random band-limited field f scaled to max|f| = 1.

        Cell-to-cell noise would pump energy into grid-scale modes, where the
        leapfrog energy ripple is of order (dt omega)^2 / 4.
        """
        rng = make_rng(seed, 0x3A7F)
        L = geom.box_length
        h = np.array([L / geom.meta["nx"], L / geom.meta["ny"]])
        faces = geom.positions + 0.5 * h
        edges = geom.positions[geom.edges[:, 0]] + 0.5 * geom.edge_delta
        return cls(_smooth_field(rng, faces, L, kmax, contrast), _smooth_field(rng, edges, L, kmax, contrast))


def _smooth_field(rng, pts, L, kmax, contrast):
    f = np.zeros(len(pts))
    for mx in range(-kmax, kmax + 1):
        for my in range(0, kmax + 1):
            if my == 0 and mx <= 0:
                continue
            th = 2 * np.pi / L * (pts @ np.array([mx, my], dtype=np.float64))
            f += rng.standard_normal() * np.cos(th) + rng.standard_normal() * np.sin(th)
    return np.exp(contrast * f / np.max(np.abs(f)))


def _check(geom, stars, state):
    n1, n2 = geom.n_edges, geom.complex.n[2]
    if state.B.shape[-1] != n2 or state.Dflux.shape[-1] != n1:
        raise DimensionMismatch("state does not match the complex")
    if stars.star_mu_inv.shape != (n2,) or stars.star_eps_inv.shape != (n1,):
        raise DimensionMismatch("stars do not match the complex")


def maxwell_step(geom, stars: MaxwellStars, state: MaxwellState, dt: float, curl_t=None) -> MaxwellState:
    """Half-kick D, full B update, half-kick D. ``curl_t`` overrides D1^T (negative controls)."""
    _check(geom, stars, state)
    D1 = geom.D1
    ampere = D1.apply_transpose if curl_t is None else curl_t
    D = state.Dflux + 0.5 * dt * ampere(stars.star_mu_inv * state.B)
    B = state.B - dt * D1.apply(stars.star_eps_inv * D)
    D = D + 0.5 * dt * ampere(stars.star_mu_inv * B)
    return MaxwellState(B, D)


def maxwell_energy(stars: MaxwellStars, state: MaxwellState) -> float:
    return float(0.5 * state.B @ (stars.star_mu_inv * state.B)
                 + 0.5 * state.Dflux @ (stars.star_eps_inv * state.Dflux))


def charge(geom, state: MaxwellState):
    return geom.D0.apply_transpose(state.Dflux)


def charge_invariant(traj, D0: SignedIncidence) -> float:
    """max_t || D0^T D_t - D0^T D_0 ||_inf."""
    rho0 = D0.apply_transpose(traj[0].Dflux)
    with np.errstate(over="ignore", invalid="ignore"):
        worst = max(float(np.max(np.abs(D0.apply_transpose(s.Dflux) - rho0))) for s in traj)
    return worst if math.isfinite(worst) else float("inf")


def interconnection_power(geom, H, E) -> float:
    """e^T J e for e = (H, E), J = [[0, -D1], [D1^T, 0]]; zero by skewness."""
    D1 = geom.D1
    return float(H @ (-D1.apply(E)) + E @ D1.apply_transpose(H))


def omega_max(geom, stars: MaxwellStars) -> float:
    """Top frequency of B'' = -D1 eps^-1 D1^T mu^-1 B (symmetrized)."""
    D1 = geom.D1
    s = np.sqrt(stars.star_mu_inv)
    n2 = len(s)

    def mv(v):
        return s * D1.apply(stars.star_eps_inv * D1.apply_transpose(s * v))

    op = spla.LinearOperator((n2, n2), matvec=mv, dtype=np.float64)
    v0 = make_rng(0, 0x0E17).standard_normal(n2)
    lam = spla.eigsh(op, k=1, which="LA", v0=v0, tol=1e-10, return_eigenvectors=False)
    return float(math.sqrt(max(lam[0], 0.0)))


def te_mode(geom, mx=1, my=0, amplitude=1.0) -> MaxwellState:
    """B = a sin(k.x_face) on face centers, D = 0."""
    L = geom.box_length
    nx, ny = geom.meta["nx"], geom.meta["ny"]
    centers = geom.positions + np.array([0.5 * L / nx, 0.5 * L / ny])
    k = 2 * np.pi / L * np.array([mx, my], dtype=np.float64)
    return MaxwellState(amplitude * np.sin(centers @ k), np.zeros(geom.n_edges))


def maxwell_rollout(geom, stars, state0, dt, steps, curl_t=None):
    traj = [state0]
    s = state0
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            s = maxwell_step(geom, stars, s, dt, curl_t)
            traj.append(s)
    return traj


def unsigned_curl_t(geom):
    """|D1|^T: the orientation-blind Ampere map used as a negative control."""
    return geom.D1.unsigned().apply_transpose


@dataclass
class MaxwellReport:
    steps: int
    dt: float
    energy_drift: float
    charge_invariant: float
    control_charge: float
    csv: str


def maxwell_demo(geom, seed=0, steps=500, cfl=0.5, stars="smooth") -> MaxwellReport:
    """TE mode (1, 0) over a static charged background; ``stars`` is smooth | white | uniform."""
    if stars == "smooth":
        stars = MaxwellStars.smooth_random(geom, seed)
    elif stars == "white":
        stars = MaxwellStars.random(geom, seed)
    elif stars == "uniform":
        stars = MaxwellStars.uniform(geom)
    else:
        raise ValueError(f"unknown star model {stars!r}")
    dt = 2.0 * cfl / omega_max(geom, stars)
    s0 = te_mode(geom)
    # static charged background: E = D0 phi is curl-free, so it never drives B
    phi = make_rng(seed, 0xC4A6).standard_normal(geom.n_nodes)
    s0 = MaxwellState(s0.B, 0.1 * geom.D0.apply(phi) / stars.star_eps_inv)
    traj = maxwell_rollout(geom, stars, s0, dt, steps)
    E = np.array([maxwell_energy(stars, s) for s in traj])
    drift = float(np.max(np.abs(E - E[0])) / abs(E[0]))
    inv = charge_invariant(traj, geom.D0)
    bad = maxwell_rollout(geom, stars, s0, dt, steps, curl_t=unsigned_curl_t(geom))
    ctrl = charge_invariant(bad, geom.D0)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "energy", "charge_invariant"])
    rho0 = charge(geom, traj[0])
    for i, (s, e) in enumerate(zip(traj, E)):
        w.writerow([repr(i * dt), repr(float(e)), repr(float(np.max(np.abs(charge(geom, s) - rho0))))])
    return MaxwellReport(steps, dt, drift, inv, ctrl, buf.getvalue())

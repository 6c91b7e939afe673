"""Analytic traveling plane waves and one-step training pairs.

    q(x, t) = a exp(-gamma t) sin(k.x - omega t + phi),  omega = c |k|,  p = V0 dq/dt

Every sample is drawn from its own counter-based stream keyed by
(seed, split stream, index), so a split is a pure function of its seed.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import NonCommensurate
from .mesher import RNG_ALGORITHM, MeshGeometry, WaveNumber, make_rng
from .phcore import CanonicalState, Trajectory

TRAIN_STREAM = 0
VAL_STREAM = 0x5EED  # validation draws never overlap training draws
TEST_STREAM = 0x7E57


@dataclass(frozen=True)
class WaveSample:
    mx: int
    my: int
    L: float
    c: float
    a: float
    phi: float
    t0: float
    gamma: float = 0.0

    @property
    def wavenumber(self) -> WaveNumber:
        return WaveNumber(self.mx, self.my, self.L)

    @property
    def k(self):
        return self.wavenumber.vector

    @property
    def omega(self):
        return self.c * self.wavenumber.norm


@dataclass(frozen=True)
class SamplerConfig:
    kmax_x: int = 4
    kmax_y: int = 4
    c: float = 1.0
    gamma_min: float = 0.0
    gamma_max: float = 0.0
    symmetric: bool = False

    @property
    def damped(self):
        return self.gamma_max > 0


def _wave_frames(geom, sample: WaveSample, t):
    """q, p at the times in ``t`` (scalar or 1-D); same arithmetic on every path."""
    if not np.isclose(sample.L, geom.box_length):
        raise NonCommensurate("sample box length differs from the mesh")
    t = np.asarray(t, dtype=np.float64)[..., None]
    theta = geom.positions @ sample.k - sample.omega * t + sample.phi
    env = sample.a * np.exp(-sample.gamma * t)
    s, c = np.sin(theta), np.cos(theta)
    q = env * s
    qdot = env * (-sample.gamma * s - sample.omega * c)
    return q, geom.V0 * qdot


def plane_wave_state(geom: MeshGeometry, sample: WaveSample, t: float) -> CanonicalState:
    q, p = _wave_frames(geom, sample, t)
    return CanonicalState(q, p)


def _draw_mode(rng, cfg: SamplerConfig):
    if cfg.symmetric:
        while True:
            ux = int(rng.integers(0, cfg.kmax_x + 1))
            uy = int(rng.integers(0, cfg.kmax_y + 1))
            if (ux, uy) != (0, 0):
                break
    else:
        ux = int(rng.integers(1, cfg.kmax_x + 1))
        uy = int(rng.integers(0, cfg.kmax_y + 1))
    sx = 1 if rng.random() < 0.5 else -1
    sy = 1 if rng.random() < 0.5 else -1
    return sx * ux, sy * uy


def draw_sample(rng, geom: MeshGeometry, cfg: SamplerConfig) -> WaveSample:
    mx, my = _draw_mode(rng, cfg)
    phi = float(rng.uniform(0.0, 2 * np.pi))
    a = float(rng.uniform(0.5, 1.5))
    t0 = float(rng.uniform(0.0, 2 * np.pi))
    gamma = float(rng.uniform(cfg.gamma_min, cfg.gamma_max)) if cfg.damped else 0.0
    return WaveSample(mx, my, geom.box_length, cfg.c, a, phi, t0, gamma)


def pair_for(geom, sample: WaveSample, dt):
    return plane_wave_state(geom, sample, sample.t0), plane_wave_state(geom, sample, sample.t0 + dt)


def sample_conservative(rng, geom, dt, kmax_x=4, kmax_y=4, c=1.0, symmetric=False):
    s = draw_sample(rng, geom, SamplerConfig(kmax_x, kmax_y, c, symmetric=symmetric))
    return s, pair_for(geom, s, dt)


def sample_damped(rng, geom, dt, config: SamplerConfig | None = None):
    cfg = config or SamplerConfig(gamma_min=0.01, gamma_max=0.1)
    s = draw_sample(rng, geom, cfg)
    return s, pair_for(geom, s, dt)


def exact_trajectory(geom, sample: WaveSample, dt: float, T: int) -> Trajectory:
    q, p = _wave_frames(geom, sample, sample.t0 + np.arange(T + 1) * dt)
    return Trajectory(dt, q, p, {"t0": sample.t0, "sample": asdict(sample), "source": "analytic"})


@dataclass
class PairDataset:
    mesh_id: str
    dt: float
    samples: list
    q0: np.ndarray
    p0: np.ndarray
    q1: np.ndarray
    p1: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def batch(self, idx):
        idx = np.asarray(idx)
        return (CanonicalState(self.q0[idx], self.p0[idx]),
                CanonicalState(self.q1[idx], self.p1[idx]))

    def subset(self, n):
        return PairDataset(self.mesh_id, self.dt, self.samples[:n], self.q0[:n], self.p0[:n],
                           self.q1[:n], self.p1[:n], dict(self.meta, size=n))

    def header(self):
        return {"mesh_id": self.mesh_id, "dt": self.dt, "size": len(self),
                "samples": [asdict(s) for s in self.samples], "meta": self.meta}

    def save(self, stem):
        """Write ``stem.json`` (header) and ``stem.csv`` (one pair per row: q0, p0, q1, p1)."""
        stem = Path(stem)
        stem.with_suffix(".json").write_text(json.dumps(self.header(), indent=1))
        flat = np.concatenate([self.q0, self.p0, self.q1, self.p1], axis=1)
        n = self.q0.shape[1]
        cols = [f"{name}[{i}]" for name in ("q0", "p0", "q1", "p1") for i in range(n)]
        with open(stem.with_suffix(".csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["pair"] + cols)
            for i, row in enumerate(flat):
                w.writerow([i] + [repr(float(v)) for v in row])

    @classmethod
    def load(cls, stem):
        stem = Path(stem)
        head = json.loads(stem.with_suffix(".json").read_text())
        data = np.loadtxt(stem.with_suffix(".csv"), delimiter=",", skiprows=1, ndmin=2)[:, 1:]
        n = data.shape[1] // 4
        parts = [data[:, i * n:(i + 1) * n] for i in range(4)]
        samples = [WaveSample(**s) for s in head["samples"]]
        return cls(head["mesh_id"], head["dt"], samples, *parts, meta=head.get("meta", {}))


def make_dataset(geom: MeshGeometry, n: int, dt: float, seed: int, stream: int = TRAIN_STREAM,
                 cfg: SamplerConfig | None = None) -> PairDataset:
    cfg = cfg or SamplerConfig()
    samples = [draw_sample(make_rng(seed, stream, i), geom, cfg) for i in range(n)]
    n0 = geom.n_nodes
    q0, p0, q1, p1 = (np.empty((n, n0)) for _ in range(4))
    for i, s in enumerate(samples):
        a, b = pair_for(geom, s, dt)
        q0[i], p0[i], q1[i], p1[i] = a.q, a.p, b.q, b.p
    meta = {"seed": int(seed), "stream": int(stream), "sampler": asdict(cfg), "rng": RNG_ALGORITHM,
            "size": n}
    return PairDataset(geom.mesh_id, float(dt), samples, q0, p0, q1, p1, meta)


def batch_initial_states(geom, samples):
    states = [plane_wave_state(geom, s, s.t0) for s in samples]
    return CanonicalState(np.stack([s.q for s in states]), np.stack([s.p for s in states]))


def batch_exact_trajectory(geom, samples, dt, T) -> Trajectory:
    """Exact reference for many samples at once; arrays of shape (T+1, B, n0)."""
    qs = np.empty((T + 1, len(samples), geom.n_nodes))
    ps = np.empty_like(qs)
    for b, s in enumerate(samples):
        qs[:, b], ps[:, b] = _wave_frames(geom, s, s.t0 + np.arange(T + 1) * dt)
    return Trajectory(dt, qs, ps, {"source": "analytic"})

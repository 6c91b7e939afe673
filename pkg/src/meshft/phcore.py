"""Port-Hamiltonian state model in canonical packing z = (q, p), p = M qdot.

    H(q, p) = 1/2 q^T K q + 1/2 p^T M^{-1} p,   K = D0^T W D0

K is never assembled; every use goes through two incidence matvecs and a
diagonal scale. States may carry a leading batch axis: q, p of shape (B, n0).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, NonPositiveMass


@dataclass(frozen=True)
class HodgeStar:
    M: np.ndarray   # per node
    W: np.ndarray   # per edge

    def __post_init__(self):
        object.__setattr__(self, "M", np.asarray(self.M, dtype=np.float64))
        object.__setattr__(self, "W", np.asarray(self.W, dtype=np.float64))

    def check_positive(self):
        if np.any(~(self.M > 0)):
            raise NonPositiveMass("mass Hodge must be strictly positive")
        return self


@dataclass(frozen=True)
class DampingField:
    r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        object.__setattr__(self, "r", r)


@dataclass
class CanonicalState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64)
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.q.shape != self.p.shape:
            raise DimensionMismatch(f"q{self.q.shape} and p{self.p.shape} differ")

    def copy(self):
        return CanonicalState(self.q.copy(), self.p.copy())

    def stacked(self):
        return np.concatenate([self.q, self.p], axis=-1)

    @property
    def batched(self):
        return self.q.ndim == 2


@dataclass
class Trajectory:
    """Frames t = 0..T with uniform spacing dt; q, p have shape (T+1, [B,] n0)."""
    dt: float
    q: np.ndarray
    p: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.q)

    @property
    def T(self):
        return len(self.q) - 1

    @property
    def times(self):
        return self.meta.get("t0", 0.0) + self.dt * np.arange(len(self.q))

    def frame(self, t) -> CanonicalState:
        return CanonicalState(self.q[t], self.p[t])

    def sample(self, b) -> "Trajectory":
        """Unbatch one rollout from a batched trajectory."""
        return Trajectory(self.dt, self.q[:, b], self.p[:, b], dict(self.meta))

    def summary_csv(self, geom, hodge) -> str:
        E = energy(geom, hodge, CanonicalState(self.q, self.p))
        m = self.p.sum(axis=-1)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "H", "p_total"])
        for t, e, mt in zip(self.times, E, m):
            w.writerow([repr(float(t)), repr(float(e)), repr(float(mt))])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"dt": self.dt, "meta": self.meta,
                           "q": self.q.tolist(), "p": self.p.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["dt"], np.array(d["q"]), np.array(d["p"]), d.get("meta", {}))


class EdgeMap:
    """Real-valued edge-by-node map on a fixed sparsity pattern.

    Same matvec interface as ``SignedIncidence``; ablations use it for
    orientation-even, re-paired, or learned incidences.
    """

    def __init__(self, rows, cols, row_idx, col_idx, values):
        self.rows, self.cols = int(rows), int(cols)
        self.row_idx = np.asarray(row_idx, dtype=np.int64)
        self.col_idx = np.asarray(col_idx, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64).copy()
        if not (self.row_idx.shape == self.col_idx.shape == self.values.shape):
            raise DimensionMismatch("pattern and values differ in length")
        self._build()

    @classmethod
    def from_incidence(cls, d, values=None):
        v = d.signs.astype(np.float64) if values is None else values
        return cls(d.rows, d.cols, d.row_idx, d.col_idx, v)

    def _build(self):
        shape = (self.rows, self.cols)
        self._fwd = sp.csr_matrix((self.values, (self.row_idx, self.col_idx)), shape=shape)
        self._bwd = self._fwd.T.tocsr()

    def set_values(self, values):
        self.values = np.asarray(values, dtype=np.float64).copy()
        self._build()

    @property
    def shape(self):
        return (self.rows, self.cols)

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self._fwd @ x if x.ndim == 1 else np.ascontiguousarray((self._fwd @ x.T).T)

    def apply_transpose(self, y):
        y = np.asarray(y, dtype=np.float64)
        return self._bwd @ y if y.ndim == 1 else np.ascontiguousarray((self._bwd @ y.T).T)

    def dense(self):
        out = np.zeros(self.shape)
        np.add.at(out, (self.row_idx, self.col_idx), self.values)
        return out

    def value_grad(self, u_rows, v_cols):
        """d/d values of sum u^T (E v): u on rows, v on columns, batch axes summed."""
        u = np.asarray(u_rows).reshape(-1, self.rows)
        v = np.asarray(v_cols).reshape(-1, self.cols)
        return np.sum(u[:, self.row_idx] * v[:, self.col_idx], axis=0)


class ForceOperator:
    """q -> B^T (W * mask * (A q)); the structured case is A = B = D0.

    ``A`` and ``B`` expose ``apply`` / ``apply_transpose``. Ablation variants swap
    in unsigned, re-paired, or learned edge maps and sign masks here.
    """

    def __init__(self, A, B=None, mask=None, tag="structured"):
        self.A = A
        self.B = A if B is None else B
        self.mask = None if mask is None else np.asarray(mask, dtype=np.float64)
        self.tag = tag
        if self.A.shape != self.B.shape:
            raise DimensionMismatch("edge maps must share a shape")

    @property
    def n_nodes(self):
        return self.A.shape[1]

    @property
    def n_edges(self):
        return self.A.shape[0]

    @property
    def symmetric(self):
        return self.A is self.B

    def edge_weights(self, W):
        return W if self.mask is None else W * self.mask

    def strain(self, q):
        return self.A.apply(q)

    def apply(self, q, W):
        return self.B.apply_transpose(self.edge_weights(W) * self.A.apply(q))

    def vjp(self, q, W, fbar):
        """Cotangents (qbar, Wbar) of f = apply(q, W) for output cotangent fbar."""
        Wm = self.edge_weights(W)
        Aq = self.A.apply(q)
        Bf = self.B.apply(fbar)
        qbar = self.A.apply_transpose(Wm * Bf)
        Wbar = Aq * Bf
        if self.mask is not None:
            Wbar = Wbar * self.mask
        return qbar, Wbar

    def vjp_maps(self, q, W, fbar):
        """Cotangents of the map values (for ``EdgeMap`` A, B); shared maps are summed."""
        Wm = self.edge_weights(W)
        gA = self.A.value_grad(Wm * self.B.apply(fbar), q)
        if self.symmetric:
            return gA + self.A.value_grad(Wm * self.A.apply(q), fbar), None
        return gA, self.B.value_grad(Wm * self.A.apply(q), fbar)


def as_operator(system) -> ForceOperator:
    if isinstance(system, ForceOperator):
        return system
    if hasattr(system, "operator"):
        return system.operator()
    if hasattr(system, "D0"):
        return ForceOperator(system.D0)
    raise TypeError(f"cannot build a force operator from {type(system).__name__}")


def _check(op, hodge, q):
    if q.shape[-1] != op.n_nodes:
        raise DimensionMismatch(f"state has {q.shape[-1]} nodes, mesh has {op.n_nodes}")
    if hodge.M.shape != (op.n_nodes,) or hodge.W.shape != (op.n_edges,):
        raise DimensionMismatch("Hodge star does not match the mesh")


def stiffness_apply(geom, hodge: HodgeStar, q):
    op = as_operator(geom)
    q = np.asarray(q, dtype=np.float64)
    _check(op, hodge, q)
    return op.apply(q, hodge.W)


def energy(geom, hodge: HodgeStar, state: CanonicalState):
    """H per state (scalar, or one value per leading index)."""
    op = as_operator(geom)
    hodge.check_positive()
    _check(op, hodge, state.q)
    Dq = op.strain(state.q)
    pot = 0.5 * np.sum(op.edge_weights(hodge.W) * Dq * Dq, axis=-1)
    kin = 0.5 * np.sum(state.p * state.p / hodge.M, axis=-1)
    return pot + kin


def kinetic_potential(geom, hodge, state):
    op = as_operator(geom)
    Dq = op.strain(state.q)
    return (0.5 * np.sum(state.p * state.p / hodge.M, axis=-1),
            0.5 * np.sum(op.edge_weights(hodge.W) * Dq * Dq, axis=-1))


def grad_energy(geom, hodge, state):
    """Co-energy e = (Kq, M^{-1} p)."""
    return stiffness_apply(geom, hodge, state.q), state.p / hodge.M


def conservative_field(geom, hodge: HodgeStar, state: CanonicalState):
    """(qdot, pdot) = (M^{-1} p, -K q), i.e. J grad H with the canonical J."""
    Kq = stiffness_apply(geom, hodge, state.q)
    return state.p / hodge.M, -Kq


def total_momentum(state: CanonicalState):
    return np.sum(state.p, axis=-1)


def theory_hodge(geom, c: float = 1.0) -> HodgeStar:
    if not c > 0:
        raise ValueError("wave speed must be positive")
    return HodgeStar(np.array(geom.V0), c * c * np.array(geom.V1inv))

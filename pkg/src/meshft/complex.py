"""Oriented cell complexes and their signed incidence (coboundary) matrices.

Signs are stored as int8 so the chain identity ``D[k+1] @ D[k] == 0`` can be
checked exactly; float64 CSR copies (forward and transposed) are built once for
matvecs. Entries inside a row keep their construction order, which fixes the
summation order of every matvec.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    BadReference,
    ChainViolation,
    DegenerateCell,
    DimensionMismatch,
    NotAPermutation,
)


def _csr(order, major, minor, values, shape):
    major = major[order]
    indptr = np.zeros(shape[0] + 1, dtype=np.int64)
    np.add.at(indptr, major + 1, 1)
    np.cumsum(indptr, out=indptr)
    mat = sp.csr_matrix(
        (values[order].astype(np.float64), minor[order].astype(np.int64), indptr),
        shape=shape,
    )
    # keep the construction order inside each row; scipy must not re-sort it
    mat.has_sorted_indices = False
    return mat


class SignedIncidence:
    """Sparse ±1 matrix mapping k-cochains to (k+1)-cochains."""

    def __init__(self, rows: int, cols: int, entries):
        entries = np.asarray(entries, dtype=np.int64).reshape(-1, 3)
        r, c, s = entries[:, 0], entries[:, 1], entries[:, 2]
        if rows < 0 or cols < 0:
            raise DimensionMismatch("negative matrix dimension")
        if np.any((s != 1) & (s != -1)):
            raise ValueError("incidence signs must be exactly -1 or +1")
        if len(r) and (r.min() < 0 or r.max() >= rows or c.min() < 0 or c.max() >= cols):
            raise BadReference("incidence entry outside matrix bounds")
        keys = r * max(cols, 1) + c
        if len(np.unique(keys)) != len(keys):
            raise ValueError("duplicate (row, col) incidence entries")

        self.rows = int(rows)
        self.cols = int(cols)
        self.row_idx = r.copy()
        self.col_idx = c.copy()
        self.signs = s.astype(np.int8)
        for a in (self.row_idx, self.col_idx, self.signs):
            a.setflags(write=False)

        by_row = np.argsort(r, kind="stable")
        by_col = np.argsort(c, kind="stable")
        self._fwd = _csr(by_row, r, c, self.signs, (self.rows, self.cols))
        self._bwd = _csr(by_col, c, r, self.signs, (self.cols, self.rows))

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self):
        return len(self.signs)

    @property
    def entries(self):
        return np.stack([self.row_idx, self.col_idx, self.signs.astype(np.int64)], axis=1)

    @property
    def matrix(self) -> sp.csr_matrix:
        return self._fwd

    @property
    def matrix_t(self) -> sp.csr_matrix:
        return self._bwd

    def apply(self, x):
        """y[r] = sum_c sign(r, c) x[c]; ``x`` may carry a leading batch axis."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.cols:
            raise DimensionMismatch(f"cochain has length {x.shape[-1]}, expected {self.cols}")
        if x.ndim == 1:
            return self._fwd @ x
        return np.ascontiguousarray((self._fwd @ x.T).T)

    def apply_transpose(self, y):
        y = np.asarray(y, dtype=np.float64)
        if y.shape[-1] != self.rows:
            raise DimensionMismatch(f"cochain has length {y.shape[-1]}, expected {self.rows}")
        if y.ndim == 1:
            return self._bwd @ y
        return np.ascontiguousarray((self._bwd @ y.T).T)

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.int64)
        out[self.row_idx, self.col_idx] = self.signs
        return out

    def unsigned(self) -> "SignedIncidence":
        """Orientation-even copy |D| (all entries +1)."""
        return SignedIncidence(self.rows, self.cols, np.stack(
            [self.row_idx, self.col_idx, np.ones(self.nnz, dtype=np.int64)], axis=1))

    def transpose(self) -> "SignedIncidence":
        """D^T as an incidence in its own right (rows and columns swapped)."""
        return SignedIncidence(self.cols, self.rows, np.stack(
            [self.col_idx, self.row_idx, self.signs.astype(np.int64)], axis=1))

    def __eq__(self, other):
        if not isinstance(other, SignedIncidence):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.row_idx, other.row_idx)
                and np.array_equal(self.col_idx, other.col_idx)
                and np.array_equal(self.signs, other.signs))

    def __repr__(self):
        return f"SignedIncidence(rows={self.rows}, cols={self.cols}, nnz={self.nnz})"

    def to_dict(self):
        return {"rows": self.rows, "cols": self.cols, "entries": self.entries.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["rows"], d["cols"], d["entries"])


def _int_matrix(d: SignedIncidence) -> sp.csr_matrix:
    return sp.csr_matrix((d.signs.astype(np.int64), (d.row_idx, d.col_idx)), shape=d.shape)


def compose_is_zero(upper: SignedIncidence, lower: SignedIncidence) -> bool:
    """Exact integer test of ``upper @ lower == 0``."""
    if upper.cols != lower.rows:
        raise DimensionMismatch("incidence dimensions do not chain")
    prod = (_int_matrix(upper) @ _int_matrix(lower)).tocoo()
    return not np.any(prod.data != 0)


@dataclass(frozen=True)
class OrientationGauge:
    degree: int
    signs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.signs, dtype=np.int64)
        if np.any((s != 1) & (s != -1)):
            raise ValueError("gauge entries must be -1 or +1")
        object.__setattr__(self, "signs", s)


class CellComplex:
    """Immutable oriented complex: cell counts n_k and incidences D_0..D_{d-1}."""

    def __init__(self, counts: Sequence[int], incidences: Sequence[SignedIncidence], check=True):
        self.n = tuple(int(c) for c in counts)
        self.D = tuple(incidences)
        if len(self.D) != len(self.n) - 1:
            raise DimensionMismatch("need exactly one incidence per consecutive degree pair")
        for k, d in enumerate(self.D):
            if d.shape != (self.n[k + 1], self.n[k]):
                raise DimensionMismatch(f"D{k} has shape {d.shape}, expected {(self.n[k + 1], self.n[k])}")
        if check:
            for k in range(len(self.D) - 1):
                if not compose_is_zero(self.D[k + 1], self.D[k]):
                    raise ChainViolation(f"D{k + 1} D{k} != 0")

    @property
    def dim(self):
        return len(self.n) - 1

    def chain_defect(self) -> int:
        """max |D_{k+1} D_k| over all k, in exact integer arithmetic."""
        worst = 0
        for k in range(len(self.D) - 1):
            prod = _int_matrix(self.D[k + 1]) @ _int_matrix(self.D[k])
            worst = max(worst, int(np.abs(prod.tocoo().data).max(initial=0)))
        return worst

    def euler_characteristic(self) -> int:
        return sum((-1) ** k * nk for k, nk in enumerate(self.n))

    def __eq__(self, other):
        if not isinstance(other, CellComplex):
            return NotImplemented
        return self.n == other.n and all(a == b for a, b in zip(self.D, other.D))

    def __repr__(self):
        return f"CellComplex(n={self.n})"

    def to_dict(self):
        return {"n": list(self.n), "D": [d.to_dict() for d in self.D]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["n"], [SignedIncidence.from_dict(x) for x in d["D"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "CellComplex":
        return cls.from_dict(json.loads(text))


def build_complex(cells_by_degree: Sequence) -> CellComplex:
    """Assemble a complex from oriented boundary lists.

    ``cells_by_degree[0]`` is the node count, ``cells_by_degree[1]`` a list of
    ``(tail, head)`` edges, and each higher entry a list of cells given as
    ``[(lower_index, sign), ...]``.
    """
    if len(cells_by_degree) == 0:
        raise ValueError("need at least the node count")
    n0 = int(cells_by_degree[0])
    counts = [n0]
    incidences = []
    if len(cells_by_degree) > 1:
        edges = np.asarray(cells_by_degree[1], dtype=np.int64).reshape(-1, 2)
        if len(edges) and (edges.min() < 0 or edges.max() >= n0):
            raise BadReference("edge references a node outside 0..n0-1")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise DegenerateCell("edge tail equals head")
        m = len(edges)
        rows = np.repeat(np.arange(m), 2)
        cols = edges.reshape(-1)
        signs = np.tile([-1, 1], m)
        incidences.append(SignedIncidence(m, n0, np.stack([rows, cols, signs], axis=1)))
        counts.append(m)
    for k in range(2, len(cells_by_degree)):
        lower = counts[-1]
        ents = []
        for r, cell in enumerate(cells_by_degree[k]):
            for idx, s in cell:
                if not 0 <= idx < lower:
                    raise BadReference(f"degree-{k} cell {r} references missing cell {idx}")
                ents.append((r, int(idx), int(s)))
        incidences.append(SignedIncidence(len(cells_by_degree[k]), lower, np.array(ents, dtype=np.int64).reshape(-1, 3)))
        counts.append(len(cells_by_degree[k]))
    return CellComplex(counts, incidences)


def faces_from_loops(edges, loops):
    """Signed edge boundaries for faces given as closed vertex loops."""
    lookup = {}
    for e, (t, h) in enumerate(np.asarray(edges, dtype=np.int64)):
        lookup[(int(t), int(h))] = (e, 1)
        lookup[(int(h), int(t))] = (e, -1)
    faces = []
    for loop in loops:
        cell = []
        for a, b in zip(loop, list(loop[1:]) + [loop[0]]):
            try:
                cell.append(lookup[(int(a), int(b))])
            except KeyError:
                raise BadReference(f"face loop uses missing edge {a}->{b}") from None
        faces.append(cell)
    return faces


def triangle_complex() -> CellComplex:
    """Single oriented triangle with every edge agreeing with the face."""
    edges = [(0, 1), (1, 2), (2, 0)]
    return build_complex([3, edges, faces_from_loops(edges, [[0, 1, 2]])])


def flip_orientation(C: CellComplex, g: OrientationGauge) -> CellComplex:
    k = g.degree
    if not 0 <= k <= C.dim:
        raise DimensionMismatch(f"gauge degree {k} outside 0..{C.dim}")
    if len(g.signs) != C.n[k]:
        raise DimensionMismatch(f"gauge has {len(g.signs)} signs for {C.n[k]} cells")
    new = list(C.D)
    if k < C.dim:
        d = new[k]
        s = d.signs.astype(np.int64) * g.signs[d.col_idx]
        new[k] = SignedIncidence(d.rows, d.cols, np.stack([d.row_idx, d.col_idx, s], axis=1))
    if k > 0:
        d = new[k - 1]
        s = d.signs.astype(np.int64) * g.signs[d.row_idx]
        new[k - 1] = SignedIncidence(d.rows, d.cols, np.stack([d.row_idx, d.col_idx, s], axis=1))
    return CellComplex(C.n, new)


def permute_cells(C: CellComplex, degree: int, perm) -> CellComplex:
    """Relabel degree-``degree`` cells: old cell i becomes cell ``perm[i]``."""
    perm = np.asarray(perm, dtype=np.int64)
    if not 0 <= degree <= C.dim:
        raise DimensionMismatch(f"degree {degree} outside 0..{C.dim}")
    n = C.n[degree]
    if perm.shape != (n,) or not np.array_equal(np.sort(perm), np.arange(n)):
        raise NotAPermutation(f"not a permutation of 0..{n - 1}")
    new = list(C.D)
    if degree < C.dim:
        d = new[degree]
        new[degree] = SignedIncidence(d.rows, d.cols, np.stack(
            [d.row_idx, perm[d.col_idx], d.signs.astype(np.int64)], axis=1))
    if degree > 0:
        d = new[degree - 1]
        r = perm[d.row_idx]
        order = np.argsort(r, kind="stable")
        new[degree - 1] = SignedIncidence(d.rows, d.cols, np.stack(
            [r[order], d.col_idx[order], d.signs.astype(np.int64)[order]], axis=1))
    return CellComplex(C.n, new)

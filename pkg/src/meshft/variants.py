"""Force-path constructors for the structural ablations.

Each builder returns the edge maps (A, B) for ``q -> B^T (W * A q)``:

  structured          A = B = D0
  no_orientation      A = B = |D0|      (orientation-even in both slots)
  scrambled_topology  A = B = D0 with endpoints re-paired at random (rows keep -1/+1)
  indefinite_metric   A = B = D0, edge weights times a seeded +-1 mask
  learned_J_*         A = B = learned per-edge (b_tail, b_head) on the D0 pattern
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .complex import SignedIncidence
from .errors import MeshingFailure, UnknownVariant
from .mesher import make_rng
from .phcore import EdgeMap

VARIANTS = ("structured", "no_orientation", "scrambled_topology", "indefinite_metric",
            "learned_J_psd", "learned_J_free")

SCRAMBLE_STREAM = 0x5C4A
MASK_STREAM = 0x3A5C
LEARNED_J_STREAM = 0x1EA4


@dataclass(frozen=True)
class VariantSpec:
    tag: str = "structured"
    seed: int = 0
    negative_fraction: float = 0.1   # indefinite_metric only

    def __post_init__(self):
        if self.tag not in VARIANTS:
            raise UnknownVariant(f"unknown variant {self.tag!r}; expected one of {', '.join(VARIANTS)}")
        if not 0 <= self.negative_fraction <= 1:
            raise ValueError("negative_fraction must lie in [0, 1]")

    @property
    def learned_j(self):
        return self.tag.startswith("learned_J")


def scrambled_incidence(D0: SignedIncidence, seed: int) -> SignedIncidence:
    """Shuffle all edge endpoints; each row keeps one -1 and one +1, no self-loops."""
    rng = make_rng(seed, SCRAMBLE_STREAM)
    m = D0.rows
    slots = np.empty((m, 2), dtype=np.int64)
    tails = D0.signs < 0
    slots[D0.row_idx[tails], 0] = D0.col_idx[tails]
    slots[D0.row_idx[~tails], 1] = D0.col_idx[~tails]
    flat = rng.permutation(slots.reshape(-1))
    pairs = flat.reshape(m, 2)
    for _ in range(100):
        bad = np.flatnonzero(pairs[:, 0] == pairs[:, 1])
        if len(bad) == 0:
            break
        # swap each self-loop's head with a random other edge's head
        for e in bad:
            j = int(rng.integers(m))
            pairs[[e, j], 1] = pairs[[j, e], 1]
    else:
        raise MeshingFailure("could not remove self-loops while scrambling")
    rows = np.repeat(np.arange(m), 2)
    signs = np.tile([-1, 1], m)
    return SignedIncidence(m, D0.cols, np.stack([rows, pairs.reshape(-1), signs], axis=1))


def sign_mask(n_edges: int, seed: int, fraction: float) -> np.ndarray:
    """+-1 per edge with exactly round(fraction * n) negative entries."""
    rng = make_rng(seed, MASK_STREAM)
    mask = np.ones(n_edges)
    k = int(round(fraction * n_edges))
    mask[rng.permutation(n_edges)[:k]] = -1.0
    return mask


def init_learned_j(D0: SignedIncidence, seed: int):
    """Raw parameters for a learned edge map: entries on the D0 pattern plus per-edge gains.

    Entries start as independent standard normals, so nothing of the incidence
    signs survives initialization; only the 1-hop sparsity is kept.
    """
    rng = make_rng(seed, LEARNED_J_STREAM)
    values = rng.standard_normal(D0.nnz)
    gains = rng.standard_normal(D0.rows)
    return values, gains


def edge_maps(spec: VariantSpec, D0: SignedIncidence, j_values=None):
    if spec.tag in ("structured", "indefinite_metric"):
        return D0
    if spec.tag == "no_orientation":
        return D0.unsigned()
    if spec.tag == "scrambled_topology":
        return scrambled_incidence(D0, spec.seed)
    if j_values is None:
        raise ValueError("learned_J needs its map values")
    return EdgeMap(D0.rows, D0.cols, D0.row_idx, D0.col_idx, j_values)

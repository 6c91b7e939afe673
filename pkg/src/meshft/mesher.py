"""Periodic 2D meshes on the torus [0, L)^2 with their metric raw material.

Grids are quad complexes oriented +x/+y with counterclockwise faces. Random
meshes are Delaunay triangulations of the 3x3 periodic tiling, folded back onto
the torus. Node dual areas use barycentric lumping; edge weights are cotangent
weights with a low-quantile floor.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

from .complex import CellComplex, SignedIncidence, build_complex
from .errors import BadDimension, DegenerateTriangle, MeshingFailure, NonCommensurate

RNG_ALGORITHM = "numpy.Philox4x64-10/SeedSequence"
WEIGHT_FLOOR_QUANTILE = 0.01
WEIGHT_FLOOR_ABS = 1e-8
AREA_FLOOR_QUANTILE = 0.01


def min_image(d, L):
    """Wrap displacements into [-L/2, L/2)."""
    return d - L * np.floor(d / L + 0.5)


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, *stream); identical on every machine."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True, eq=False)
class MeshGeometry:
    complex: CellComplex
    positions: np.ndarray            # (n0, 2)
    box_length: float
    V0: np.ndarray                   # (n0,)
    V1inv: np.ndarray                # (n1,)
    edge_delta: np.ndarray           # (n1, 2) min-image head - tail
    triangles: np.ndarray | None = None  # (nt, 3) node ids, counterclockwise
    tri_offsets: np.ndarray | None = None  # (nt, 3, 2) unwrapped corner positions
    periodic: bool = True
    kind: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("positions", "V0", "V1inv", "edge_delta"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def D0(self) -> SignedIncidence:
        return self.complex.D[0]

    @property
    def D1(self) -> SignedIncidence:
        return self.complex.D[1]

    @property
    def n_nodes(self):
        return self.complex.n[0]

    @property
    def n_edges(self):
        return self.complex.n[1]

    @property
    def edges(self) -> np.ndarray:
        """(n1, 2) array of (tail, head) node ids."""
        d = self.D0
        out = np.empty((d.rows, 2), dtype=np.int64)
        out[d.row_idx[d.signs < 0], 0] = d.col_idx[d.signs < 0]
        out[d.row_idx[d.signs > 0], 1] = d.col_idx[d.signs > 0]
        return out

    @property
    def edge_length(self):
        return np.sqrt(self.edge_delta[:, 0] ** 2 + self.edge_delta[:, 1] ** 2)

    @property
    def node_features(self):
        return np.column_stack([self.positions, self.V0])

    @property
    def edge_features(self):
        return np.column_stack([self.edge_delta, self.edge_length])

    @property
    def mesh_id(self) -> str:
        return self.meta.get("mesh_id", self.kind)

    def with_complex(self, C: CellComplex, positions=None, V0=None, V1inv=None, edge_delta=None):
        """Copy with a relabeled/re-gauged complex and matching per-cell arrays."""
        return MeshGeometry(
            complex=C,
            positions=self.positions if positions is None else positions,
            box_length=self.box_length,
            V0=self.V0 if V0 is None else V0,
            V1inv=self.V1inv if V1inv is None else V1inv,
            edge_delta=self.edge_delta if edge_delta is None else edge_delta,
            triangles=None, tri_offsets=None,
            periodic=self.periodic, kind=self.kind, meta=dict(self.meta),
        )

    def to_dict(self):
        return {
            "kind": self.kind,
            "box_length": self.box_length,
            "periodic": self.periodic,
            "complex": self.complex.to_dict(),
            "positions": self.positions.tolist(),
            "V0": self.V0.tolist(),
            "V1inv": self.V1inv.tolist(),
            "edge_delta": self.edge_delta.tolist(),
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(
            complex=CellComplex.from_dict(d["complex"]),
            positions=np.array(d["positions"]),
            box_length=float(d["box_length"]),
            V0=np.array(d["V0"]),
            V1inv=np.array(d["V1inv"]),
            edge_delta=np.array(d["edge_delta"]),
            periodic=bool(d.get("periodic", True)),
            kind=d.get("kind", "custom"),
            meta=d.get("meta", {}),
        )


@dataclass(frozen=True)
class WaveNumber:
    """Integer mode (mx, my); the physical wavenumber is 2*pi/L * (mx, my)."""
    mx: int
    my: int
    L: float = 1.0

    def __post_init__(self):
        if (self.mx, self.my) == (0, 0):
            raise NonCommensurate("zero mode is not a wave")

    @property
    def vector(self):
        return 2 * np.pi / self.L * np.array([self.mx, self.my], dtype=np.float64)

    @property
    def norm(self):
        return float(np.hypot(*self.vector))

    @classmethod
    def from_vector(cls, k, L):
        m = np.asarray(k, dtype=np.float64) * L / (2 * np.pi)
        r = np.rint(m)
        if not np.allclose(m, r, rtol=0, atol=1e-9):
            raise NonCommensurate(f"k={k} is not a multiple of 2pi/L")
        return cls(int(r[0]), int(r[1]), L)


def periodic_grid(nx: int, ny: int, L: float = 1.0) -> MeshGeometry:
    if nx < 2 or ny < 2 or not L > 0:
        raise BadDimension(f"need nx, ny >= 2 and L > 0 (got {nx}, {ny}, {L})")
    hx, hy = L / nx, L / ny
    idx = lambda ix, iy: (ix % nx) + nx * (iy % ny)
    edges, delta, weight = [], [], []
    for iy in range(ny):
        for ix in range(nx):
            i = idx(ix, iy)
            edges.append((i, idx(ix + 1, iy)))
            delta.append((hx, 0.0))
            weight.append(hy / hx)
            edges.append((i, idx(ix, iy + 1)))
            delta.append((0.0, hy))
            weight.append(hx / hy)
    # edge ids: right = 2i, up = 2i + 1
    faces = []
    for iy in range(ny):
        for ix in range(nx):
            i = idx(ix, iy)
            faces.append([(2 * i, 1), (2 * idx(ix + 1, iy) + 1, 1),
                          (2 * idx(ix, iy + 1), -1), (2 * i + 1, -1)])
    C = build_complex([nx * ny, edges, faces])
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    pos = np.column_stack([ix.ravel() * hx, iy.ravel() * hy])
    return MeshGeometry(
        complex=C, positions=pos, box_length=float(L),
        V0=np.full(nx * ny, hx * hy), V1inv=np.array(weight),
        edge_delta=np.array(delta), kind="grid",
        meta={"mesh_id": f"grid:{nx},{ny}", "nx": nx, "ny": ny, "L": float(L),
              "dual": "cell area", "edge_weight": "rectangular cotangent (hy/hx, hx/hy)"},
    )


def _tri_area2(p):
    """Twice the signed area of triangles given as (nt, 3, 2) corner arrays."""
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


def raw_cotangent_weights(tri_pos, tri_edges, n_edges):
    """Unfloored 1/2 (cot a + cot b) per edge.

    ``tri_pos`` are unwrapped corners (nt, 3, 2); ``tri_edges[t, j]`` is the edge
    opposite corner j.
    """
    w = np.zeros(n_edges)
    for j in range(3):
        o = tri_pos[:, j]
        u = tri_pos[:, (j + 1) % 3] - o
        v = tri_pos[:, (j + 2) % 3] - o
        cross = np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
        cot = (u[:, 0] * v[:, 0] + u[:, 1] * v[:, 1]) / cross
        np.add.at(w, tri_edges[:, j], 0.5 * cot)
    return w


def floor_weights(raw, q=WEIGHT_FLOOR_QUANTILE, eps=WEIGHT_FLOOR_ABS):
    pos = raw[raw > 0]
    floor = max(float(np.quantile(pos, q)) if len(pos) else 0.0, eps)
    return np.maximum(raw, floor), floor


def raw_dual_areas(tri_pos, tris, n_nodes):
    area = 0.5 * np.abs(_tri_area2(tri_pos))
    V0 = np.zeros(n_nodes)
    for j in range(3):
        np.add.at(V0, tris[:, j], area / 3.0)
    return V0


def _check_triangles(tri_pos, L):
    area = 0.5 * np.abs(_tri_area2(tri_pos))
    if np.any(area < 1e-14 * L * L):
        raise DegenerateTriangle(f"triangle with area {area.min():.3e} below 1e-14 L^2")


def cotangent_weights(geom: MeshGeometry):
    """Floored cotangent weights for a triangulated geometry."""
    if geom.triangles is None:
        raise DegenerateTriangle("geometry has no triangles")
    _check_triangles(geom.tri_offsets, geom.box_length)
    tri_edges = _triangle_edge_ids(geom)
    raw = raw_cotangent_weights(geom.tri_offsets, tri_edges, geom.n_edges)
    return floor_weights(raw)[0]


def dual_areas(geom: MeshGeometry, floor=True):
    """Barycentric node areas; flooring keeps the total area (see ``_floor_areas``)."""
    if geom.triangles is None:
        raise DegenerateTriangle("geometry has no triangles")
    _check_triangles(geom.tri_offsets, geom.box_length)
    V0 = raw_dual_areas(geom.tri_offsets, geom.triangles, geom.n_nodes)
    return _floor_areas(V0) if floor else V0


def _floor_areas(V0):
    total = V0.sum()
    floored = np.maximum(V0, np.quantile(V0, AREA_FLOOR_QUANTILE))
    # rescale so the floor does not change the tiled area
    return floored * (total / floored.sum())


def _triangle_edge_ids(geom):
    """Edge id opposite each triangle corner, keyed on node pair plus lattice shift."""
    lookup = _edge_lookup(geom.edges, geom.positions, geom.edge_delta, geom.box_length)
    out = np.empty(geom.triangles.shape, dtype=np.int64)
    for t, (tri, corners) in enumerate(zip(geom.triangles, geom.tri_offsets)):
        for j in range(3):
            a, b = (j + 1) % 3, (j + 2) % 3
            out[t, j] = lookup[_edge_key(tri[a], tri[b], corners[a], corners[b], geom.positions, geom.box_length)][0]
    return out


def _edge_key(a, b, pa, pb, positions, L):
    # lattice shift of the copy of b relative to the copy of a
    shift = np.rint(((pb - positions[b]) - (pa - positions[a])) / L).astype(int)
    if a < b:
        return (int(a), int(b), int(shift[0]), int(shift[1]))
    return (int(b), int(a), int(-shift[0]), int(-shift[1]))


def _edge_lookup(edges, positions, delta, L):
    out = {}
    for e, (t, h) in enumerate(edges):
        pt = positions[t]
        ph = pt + delta[e]
        out[_edge_key(t, h, pt, ph, positions, L)] = (e, 1)
    return out


def periodic_delaunay(n_points: int, L: float = 1.0, seed: int = 0) -> MeshGeometry:
    if n_points < 8:
        raise BadDimension("periodic Delaunay needs at least 8 points")
    if not L > 0:
        raise BadDimension("box length must be positive")
    rng = make_rng(seed, 0xDE1A)
    pts = rng.uniform(0.0, L, size=(n_points, 2))
    shifts = np.array([(sx, sy) for sy in (-1, 0, 1) for sx in (-1, 0, 1)], dtype=np.float64)
    tiled = (pts[None, :, :] + L * shifts[:, None, :]).reshape(-1, 2)
    owner = np.tile(np.arange(n_points), 9)
    tri = Delaunay(tiled).simplices

    ids = owner[tri]
    central = (tri // n_points) == 4
    # each torus triangle is kept once: the copy whose smallest-id corner sits in the central tile
    lead = np.argmin(ids, axis=1)
    keep = central[np.arange(len(tri)), lead]
    tri, ids = tri[keep], ids[keep]
    if np.any((ids[:, 0] == ids[:, 1]) | (ids[:, 1] == ids[:, 2]) | (ids[:, 0] == ids[:, 2])):
        raise MeshingFailure("triangle touches two copies of one point; too few points")
    corners = tiled[tri]
    # counterclockwise corner order, then a canonical rotation (smallest id first)
    cw = _tri_area2(corners) < 0
    tri[cw] = tri[cw][:, [0, 2, 1]]
    ids[cw] = ids[cw][:, [0, 2, 1]]
    corners = tiled[tri]
    rot = np.argmin(ids, axis=1)
    order = (rot[:, None] + np.arange(3)[None, :]) % 3
    ids = np.take_along_axis(ids, order, axis=1)
    corners = np.take_along_axis(corners, order[:, :, None], axis=1)
    srt = np.lexsort((ids[:, 2], ids[:, 1], ids[:, 0]))
    ids, corners = ids[srt], corners[srt]
    _check_triangles(corners, L)

    # edges: node pair + lattice shift identifies a torus edge; oriented tail < head
    edge_ids: dict = {}
    edge_list, edge_delta, incident = [], [], []
    faces = []
    for t in range(len(ids)):
        cell = []
        for j in range(3):
            a, b = (j + 1) % 3, (j + 2) % 3
            key = _edge_key(ids[t, a], ids[t, b], corners[t, a], corners[t, b], pts, L)
            if key not in edge_ids:
                edge_ids[key] = len(edge_list)
                tail, head = key[0], key[1]
                d = pts[head] + L * np.array(key[2:]) - pts[tail]
                edge_list.append((tail, head))
                edge_delta.append(d)
                incident.append(0)
            e = edge_ids[key]
            incident[e] += 1
            sign = 1 if ids[t, a] == edge_list[e][0] and ids[t, a] < ids[t, b] else -1
            if ids[t, a] == ids[t, b]:
                raise MeshingFailure("self-loop edge")
            cell.append((e, sign))
        faces.append(cell)
    if any(c != 2 for c in incident):
        raise MeshingFailure("identification left edges without exactly two faces")
    # edge of face t opposite corner j is cell[j]; reorder so faces walk the boundary
    faces = [[cell[2], cell[0], cell[1]] for cell in faces]

    edge_delta = np.array(edge_delta)
    if np.any(np.abs(edge_delta) > L / 2):
        raise MeshingFailure("edge longer than half the box; minimum-image convention violated")
    C = build_complex([n_points, edge_list, faces])
    if C.euler_characteristic() != 0:
        raise MeshingFailure(f"Euler characteristic {C.euler_characteristic()} != 0 for a torus")

    tri_edges = np.array([[c[1][0], c[2][0], c[0][0]] for c in faces], dtype=np.int64)
    raw_w = raw_cotangent_weights(corners, tri_edges, len(edge_list))
    V1inv, wfloor = floor_weights(raw_w)
    V0 = _floor_areas(raw_dual_areas(corners, ids, n_points))
    return MeshGeometry(
        complex=C, positions=pts, box_length=float(L), V0=V0, V1inv=V1inv,
        edge_delta=edge_delta, triangles=ids, tri_offsets=corners, kind="delaunay",
        meta={"mesh_id": f"delaunay:{n_points},{seed}", "n_points": n_points, "seed": int(seed),
              "L": float(L), "rng": RNG_ALGORITHM, "dual": "barycentric",
              "area_floor_quantile": AREA_FLOOR_QUANTILE,
              "weight_floor_quantile": WEIGHT_FLOOR_QUANTILE, "weight_floor_abs": WEIGHT_FLOOR_ABS,
              "weight_floor": wfloor},
    )


def triangulated_grid(nx: int, ny: int, L: float = 1.0) -> MeshGeometry:
    """Grid with each cell cut along its (i, i+x+y) diagonal; weights via cotangents."""
    if nx < 2 or ny < 2 or not L > 0:
        raise BadDimension("need nx, ny >= 2 and L > 0")
    hx, hy = L / nx, L / ny
    idx = lambda ix, iy: (ix % nx) + nx * (iy % ny)
    ix, iy = np.meshgrid(np.arange(nx), np.arange(ny))
    pts = np.column_stack([ix.ravel() * hx, iy.ravel() * hy])
    edges, delta = [], []
    for j in range(ny):
        for i in range(nx):
            a = idx(i, j)
            edges += [(a, idx(i + 1, j)), (a, idx(i, j + 1)), (a, idx(i + 1, j + 1))]
            delta += [(hx, 0.0), (0.0, hy), (hx, hy)]
    # edge ids: right 3a, up 3a+1, diagonal 3a+2
    faces, tris, corners = [], [], []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            p = pts[a]
            faces.append([(3 * a, 1), (3 * b + 1, 1), (3 * a + 2, -1)])
            tris.append((a, b, c))
            corners.append((p, p + (hx, 0), p + (hx, hy)))
            faces.append([(3 * a + 2, 1), (3 * d, -1), (3 * a + 1, -1)])
            tris.append((a, c, d))
            corners.append((p, p + (hx, hy), p + (0, hy)))
    C = build_complex([nx * ny, edges, faces])
    corners = np.array(corners, dtype=np.float64)
    tris = np.array(tris, dtype=np.int64)
    tri_edges = np.array([[f[1][0], f[2][0], f[0][0]] for f in faces], dtype=np.int64)
    V1inv, _ = floor_weights(raw_cotangent_weights(corners, tri_edges, len(edges)))
    V0 = _floor_areas(raw_dual_areas(corners, tris, nx * ny))
    return MeshGeometry(
        complex=C, positions=pts, box_length=float(L), V0=V0, V1inv=V1inv,
        edge_delta=np.array(delta), triangles=tris, tri_offsets=corners, kind="trigrid",
        meta={"mesh_id": f"trigrid:{nx},{ny}", "nx": nx, "ny": ny, "L": float(L), "dual": "barycentric"},
    )


def parse_mesh_spec(spec: str, L: float = 1.0) -> MeshGeometry:
    """``grid:NX,NY`` or ``delaunay:N,SEED``."""
    kind, _, args = spec.partition(":")
    try:
        nums = [int(x) for x in args.split(",")]
    except ValueError:
        raise BadDimension(f"bad mesh spec {spec!r}") from None
    if kind == "grid" and len(nums) == 2:
        return periodic_grid(nums[0], nums[1], L)
    if kind == "delaunay" and len(nums) == 2:
        return periodic_delaunay(nums[0], L, nums[1])
    raise BadDimension(f"bad mesh spec {spec!r}; expected grid:NX,NY or delaunay:N,SEED")


def flip_edges(geom: MeshGeometry, rho) -> MeshGeometry:
    """Re-gauge edge orientations; edge displacements flip with their edges."""
    from .complex import OrientationGauge, flip_orientation

    rho = np.asarray(rho, dtype=np.int64)
    C = flip_orientation(geom.complex, OrientationGauge(1, rho))
    return geom.with_complex(C, edge_delta=geom.edge_delta * rho[:, None])


def permute_nodes(geom: MeshGeometry, perm) -> MeshGeometry:
    """Relabel nodes: old node i becomes node ``perm[i]``."""
    from .complex import permute_cells

    perm = np.asarray(perm, dtype=np.int64)
    C = permute_cells(geom.complex, 0, perm)
    pos = np.empty_like(geom.positions)
    pos[perm] = geom.positions
    V0 = np.empty_like(geom.V0)
    V0[perm] = geom.V0
    return geom.with_complex(C, positions=pos, V0=V0)

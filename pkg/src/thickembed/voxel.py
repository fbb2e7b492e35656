"""Voxel domains, their grid graphs, and lattice-ball (G-ball) geometry.

A domain is a finite union of closed unit n-cells on the integer lattice,
stored as a dense occupancy mask over its bounding box. All areas are exact
face counts times powers of the cell scale; ball membership tests use only
dyadic rationals, so every comparison below is exact in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .errors import BadDimension, EmptyDomain

Cell = tuple[int, ...]

_ADJACENCY = {n: ndimage.generate_binary_structure(n, 1) for n in (2, 3, 4)}


def _as_int_array(cells, dim):
    arr = np.asarray(sorted(tuple(int(x) for x in c) for c in cells), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise BadDimension(f"cells must be {dim}-tuples")
    return arr


class VoxelDomain:
    """Union of closed unit cells, each named by its integer min-corner.

    Parameters
    ----------
    dim : lattice dimension, 2 <= dim <= 4.
    mask : boolean occupancy array over the bounding box.
    origin : integer coordinates of mask index (0, ..., 0).
    scale : physical edge length of one cell.
    """

    def __init__(self, dim: int, mask: np.ndarray, origin, scale: float = 1.0):
        if dim < 2:
            raise BadDimension(f"dim must be >= 2, got {dim}")
        if dim > 4:
            raise BadDimension(f"dim must be <= 4 for this toolkit, got {dim}")
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != dim:
            raise BadDimension("mask rank does not match dim")
        if not mask.any():
            raise EmptyDomain("domain has no cells")
        self.dim = dim
        self.scale = float(scale)
        # trim to the tight bounding box so representations are canonical
        idx = np.nonzero(mask)
        lo = [int(ax.min()) for ax in idx]
        hi = [int(ax.max()) + 1 for ax in idx]
        self.mask = np.ascontiguousarray(mask[tuple(slice(a, b) for a, b in zip(lo, hi))])
        self.origin = np.asarray(origin, dtype=np.int64) + np.asarray(lo, dtype=np.int64)

    @classmethod
    def from_cells(cls, dim: int, cells, scale: float = 1.0) -> "VoxelDomain":
        if dim < 2:
            raise BadDimension(f"dim must be >= 2, got {dim}")
        cells = list(cells)
        if not cells:
            raise EmptyDomain("empty cell set")
        arr = _as_int_array(cells, dim)
        lo = arr.min(axis=0)
        shape = tuple((arr.max(axis=0) - lo + 1).tolist())
        mask = np.zeros(shape, dtype=bool)
        mask[tuple((arr - lo).T)] = True
        return cls(dim, mask, lo, scale)

    # basic measures -------------------------------------------------------

    @property
    def n_cells(self) -> int:
        return int(self.mask.sum())

    def cell_array(self) -> np.ndarray:
        """All cells as a lexicographically sorted (K, dim) integer array."""
        return np.argwhere(self.mask) + self.origin

    @cached_property
    def cells(self) -> frozenset:
        """Cells as a frozenset of tuples. Meant for desk-scale domains."""
        return frozenset(map(tuple, self.cell_array().tolist()))

    def contains(self, cell) -> bool:
        idx = np.asarray(cell, dtype=np.int64) - self.origin
        if np.any(idx < 0) or np.any(idx >= self.mask.shape):
            return False
        return bool(self.mask[tuple(idx)])

    def contains_many(self, arr: np.ndarray) -> np.ndarray:
        idx = np.asarray(arr, dtype=np.int64) - self.origin
        ok = np.all((idx >= 0) & (idx < np.array(self.mask.shape)), axis=1)
        out = np.zeros(len(idx), dtype=bool)
        if ok.any():
            out[ok] = self.mask[tuple(idx[ok].T)]
        return out

    # boundary faces -------------------------------------------------------

    @cached_property
    def _face_layers(self):
        """Per axis, boolean arrays of boundary faces over a padded box.

        Layer `a` has shape mask.shape + e_a; entry f is True when the face
        in the plane x_a = origin_a + f_a (spanning the unit square at the
        remaining coordinates) is shared by exactly one cell of the domain.
        """
        layers = []
        for a in range(self.dim):
            pad = [(1, 1) if ax == a else (0, 0) for ax in range(self.dim)]
            p = np.pad(self.mask, pad)
            sl_lo = [slice(None)] * self.dim
            sl_hi = [slice(None)] * self.dim
            sl_lo[a] = slice(0, -1)
            sl_hi[a] = slice(1, None)
            layers.append(p[tuple(sl_lo)] ^ p[tuple(sl_hi)])
        return layers

    @property
    def boundary_face_count(self) -> int:
        return int(sum(int(l.sum()) for l in self._face_layers))

    def boundary_faces(self):
        """Boundary faces as sorted (axis, corner-tuple) pairs.

        The face (a, f) lies in the plane x_a = f[a] and spans
        [f[i], f[i] + 1] on every other axis.
        """
        out = []
        for a, layer in enumerate(self._face_layers):
            coords = np.argwhere(layer) + self.origin
            out.extend((a, tuple(int(x) for x in c)) for c in coords)
        out.sort()
        return out

    @cached_property
    def exposed_counts(self) -> np.ndarray:
        """Per cell (mask-shaped int8): number of its faces lying on the
        domain boundary. Every boundary face has exactly one domain-side
        cell, so these counts sum to the boundary face count."""
        ex = np.zeros(self.mask.shape, dtype=np.int16)
        for a in range(self.dim):
            pad = [(1, 1) if ax == a else (0, 0) for ax in range(self.dim)]
            p = np.pad(self.mask, pad)
            lo = [slice(None)] * self.dim
            hi = [slice(None)] * self.dim
            lo[a] = slice(0, -2)
            hi[a] = slice(2, None)
            ex += self.mask & ~p[tuple(lo)]
            ex += self.mask & ~p[tuple(hi)]
        return ex

    # geometry -------------------------------------------------------------

    def components(self):
        """Face-connected components, largest first (ties: lexicographic)."""
        labels, k = ndimage.label(self.mask, structure=_ADJACENCY[self.dim])
        comps = []
        for i in range(1, k + 1):
            m = labels == i
            comps.append(VoxelDomain(self.dim, m, self.origin, self.scale))
        comps.sort(key=lambda d: (-d.n_cells, tuple(d.origin.tolist()),
                                  tuple(int(x) for x in d.cell_array()[0])))
        return comps

    def volume(self) -> float:
        return self.n_cells * self.scale ** self.dim

    def __eq__(self, other):
        if not isinstance(other, VoxelDomain):
            return NotImplemented
        return (self.dim == other.dim and self.scale == other.scale
                and np.array_equal(self.origin, other.origin)
                and np.array_equal(self.mask, other.mask))

    def __hash__(self):
        return hash((self.dim, self.scale, tuple(self.origin.tolist()),
                     self.mask.shape, self.mask.tobytes()))

    def __repr__(self):
        return (f"VoxelDomain(dim={self.dim}, cells={self.n_cells}, "
                f"bbox={self.mask.shape}, scale={self.scale})")


def from_cells(dim: int, cells, scale: float = 1.0) -> VoxelDomain:
    """Validated domain from a set of lattice min-corner coordinates."""
    return VoxelDomain.from_cells(dim, cells, scale)


def boundary_area(domain: VoxelDomain) -> float:
    """(n-1)-volume of the domain boundary: face count times scale^(n-1)."""
    return domain.boundary_face_count * domain.scale ** (domain.dim - 1)


# ---------------------------------------------------------------------------
# aligned mask algebra


def _common_box(dom_a: VoxelDomain, dom_b: VoxelDomain):
    lo = np.minimum(dom_a.origin, dom_b.origin)
    hi = np.maximum(dom_a.origin + dom_a.mask.shape, dom_b.origin + dom_b.mask.shape)
    return lo, hi


def _embed(dom: VoxelDomain, lo, hi) -> np.ndarray:
    out = np.zeros(tuple((hi - lo).tolist()), dtype=bool)
    sl = tuple(slice(int(o - l), int(o - l + s))
               for o, l, s in zip(dom.origin, lo, dom.mask.shape))
    out[sl] = dom.mask
    return out


def intersect(dom_a: VoxelDomain, dom_b: VoxelDomain) -> VoxelDomain | None:
    lo, hi = _common_box(dom_a, dom_b)
    m = _embed(dom_a, lo, hi) & _embed(dom_b, lo, hi)
    if not m.any():
        return None
    return VoxelDomain(dom_a.dim, m, lo, dom_a.scale)


def subtract(dom_a: VoxelDomain, dom_b: VoxelDomain) -> VoxelDomain | None:
    lo, hi = _common_box(dom_a, dom_b)
    m = _embed(dom_a, lo, hi) & ~_embed(dom_b, lo, hi)
    if not m.any():
        return None
    return VoxelDomain(dom_a.dim, m, lo, dom_a.scale)


# ---------------------------------------------------------------------------
# G-balls


def _cell_gap_sq(center: np.ndarray, lo: np.ndarray, shape) -> np.ndarray:
    """Squared distance from `center` to every closed cell in the box
    starting at `lo` with the given shape. Exact for dyadic centers."""
    dim = len(lo)
    total = np.zeros(shape, dtype=np.float64)
    for a in range(dim):
        k = lo[a] + np.arange(shape[a], dtype=np.float64)
        gap = np.maximum(0.0, np.maximum(k - center[a], center[a] - (k + 1.0)))
        view = [None] * dim
        view[a] = slice(None)
        total = total + (gap * gap)[tuple(view)]
    return total


@dataclass(frozen=True)
class GBall:
    """Lattice ball: all closed unit cells meeting the closed Euclidean ball
    of the given radius about the center."""

    dim: int
    center: tuple
    radius: float
    region: VoxelDomain

    @property
    def cells(self) -> frozenset:
        return self.region.cells

    def cell_array(self) -> np.ndarray:
        return self.region.cell_array()

    @property
    def boundary_face_count(self) -> int:
        return self.region.boundary_face_count

    def contains_domain(self, dom: VoxelDomain) -> bool:
        return bool(self.region.contains_many(dom.cell_array()).all())

    def boundary_area_within(self, dom: VoxelDomain) -> float:
        """Area of the domain boundary carried by cells of this ball.

        Counts boundary faces of `dom` whose domain-side cell lies in the
        ball; this is exactly the boundary area removed when the piece
        dom & ball is cut out of dom.
        """
        lo, hi = _common_box(dom, self.region)
        dm = _embed(dom, lo, hi)
        bm = _embed(self.region, lo, hi)
        ex = np.zeros(dm.shape, dtype=np.int16)
        sl = tuple(slice(int(o - l), int(o - l + s))
                   for o, l, s in zip(dom.origin, lo, dom.mask.shape))
        ex[sl] = dom.exposed_counts
        return float(ex[dm & bm].sum()) * dom.scale ** (dom.dim - 1)

    def cut_area(self, dom: VoxelDomain) -> float:
        """Area of this ball's boundary running through the open domain:
        faces shared by two domain cells with exactly one of them in the
        ball. This is the new boundary created by cutting dom along the
        ball."""
        lo, hi = _common_box(dom, self.region)
        dm = _embed(dom, lo, hi)
        bm = _embed(self.region, lo, hi)
        inside = dm & bm
        outside = dm & ~bm
        count = 0
        for a in range(dom.dim):
            lo_sl = [slice(None)] * dom.dim
            hi_sl = [slice(None)] * dom.dim
            lo_sl[a] = slice(0, -1)
            hi_sl[a] = slice(1, None)
            count += int((inside[tuple(lo_sl)] & outside[tuple(hi_sl)]).sum())
            count += int((outside[tuple(lo_sl)] & inside[tuple(hi_sl)]).sum())
        return count * dom.scale ** (dom.dim - 1)


def g_ball(dim: int, center, radius: float, relative_to: VoxelDomain | None = None):
    """The G-ball of the given radius about a point.

    Membership is `dist(center, closed cell) <= radius`, evaluated exactly
    for half-integer centers and radii. When `relative_to` is given, returns
    (ball, boundary_area_within, cut_area) against that domain.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    if center.shape != (dim,):
        raise BadDimension("center does not match dim")
    lo = np.floor(center - radius).astype(np.int64) - 1
    hi = np.ceil(center + radius).astype(np.int64) + 1
    shape = tuple((hi - lo).tolist())
    d2 = _cell_gap_sq(center, lo, shape)
    mask = d2 <= radius * radius
    region = VoxelDomain(dim, mask, lo, 1.0)
    ball = GBall(dim, tuple(float(x) for x in center), float(radius), region)
    if relative_to is None:
        return ball
    return ball, ball.boundary_area_within(relative_to), ball.cut_area(relative_to)


# ---------------------------------------------------------------------------
# grid graphs


class GridGraph:
    """The graph cut out of a domain by the offset axis grid.

    The grid is the cell lattice shifted by half a cell per axis, so its
    lines run through cell centers and cross the domain boundary
    transversely through face interiors. Interior vertices are cell
    centers; boundary vertices are boundary-face centers; edges join
    face-adjacent cell centers (length scale) and cell centers to their own
    boundary faces (length scale/2).
    """

    def __init__(self, domain: VoxelDomain):
        self.domain = domain
        n = domain.dim
        w = domain.scale
        cells = domain.cell_array()
        self._cells = cells
        self.n_interior = len(cells)
        # packed ids for cell -> interior vertex index
        self._pack_base = domain.origin
        self._pack_shape = np.array(domain.mask.shape, dtype=np.int64)
        packed = self._pack(cells)
        order = np.argsort(packed)
        self._packed_sorted = packed[order]
        self._vertex_of_packed = order.astype(np.int64)

        faces = domain.boundary_faces()
        self.boundary_face_list = faces
        self.n_boundary = len(faces)

        pos = np.empty((self.n_interior + self.n_boundary, n), dtype=np.float64)
        pos[: self.n_interior] = (cells + 0.5) * w
        for i, (a, f) in enumerate(faces):
            p = np.asarray(f, dtype=np.float64) + 0.5
            p[a] = f[a]
            pos[self.n_interior + i] = p * w
        self.positions = pos
        self.is_boundary = np.zeros(len(pos), dtype=bool)
        self.is_boundary[self.n_interior:] = True

        edges = []
        for a in range(n):
            nb = cells.copy()
            nb[:, a] += 1
            has = domain.contains_many(nb)
            src = np.nonzero(has)[0]
            dst = self._vertex_ids(nb[has])
            edges.extend(zip(src.tolist(), dst.tolist()))
        interior_edges = sorted((min(u, v), max(u, v)) for u, v in edges)
        boundary_edges = []
        for i, (a, f) in enumerate(faces):
            # domain-side cell of the face: f itself or f - e_a
            c = np.asarray(f, dtype=np.int64)
            if not domain.contains(c):
                c = c.copy()
                c[a] -= 1
            u = int(self._vertex_ids(c[None, :])[0])
            boundary_edges.append((u, self.n_interior + i))
        self.edges = np.asarray(interior_edges + boundary_edges, dtype=np.int64)
        self.n_interior_edges = len(interior_edges)

    def _pack(self, cells: np.ndarray) -> np.ndarray:
        idx = np.asarray(cells, dtype=np.int64) - self._pack_base
        return np.ravel_multi_index(tuple(idx.T), tuple(self._pack_shape))

    def _vertex_ids(self, cells: np.ndarray) -> np.ndarray:
        packed = self._pack(cells)
        pos = np.searchsorted(self._packed_sorted, packed)
        return self._vertex_of_packed[pos]

    def vertex_of_cell(self, cell) -> int:
        return int(self._vertex_ids(np.asarray([cell], dtype=np.int64))[0])

    @property
    def n_vertices(self) -> int:
        return self.n_interior + self.n_boundary

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_vertices, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def __repr__(self):
        return (f"GridGraph(interior={self.n_interior}, boundary={self.n_boundary}, "
                f"edges={len(self.edges)})")


def grid_graph(domain: VoxelDomain) -> GridGraph:
    """Build the offset-grid graph of a domain (see GridGraph)."""
    return GridGraph(domain)

"""Capacity networks on half-grid balls, integral max-flow, and boundary
routing.

The network lives on the half-pitch grid of a round ball: every grid edge
becomes two opposing arcs. Sources are placed vertices whose total
out-capacity equals their demand, arcs into sources and out of sinks carry
zero, and every other arc carries the constant M. An integral max-flow
equal to the total demand decomposes into paths that connect each placement
to a distinct exit on the bounding sphere with at most M paths per edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, maximum_flow

from .errors import (DensityViolation, InfeasibleDecomposition,
                     PlacementOutsideBall, RoutingInfeasible)


@dataclass
class FlowNetwork:
    """Directed network with integer capacities.

    `sources` maps vertex id to demand. Arc direction is (tail, head);
    parallel arcs are merged at construction. For cut accounting the
    effective demand of a source is the sum of its out-capacities, which
    rule 1 of the grid construction makes equal to the placed multiplicity.
    """

    n_vertices: int
    arcs: np.ndarray
    capacity: np.ndarray
    sources: dict
    sinks: frozenset
    coords: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        arcs = np.asarray(self.arcs, dtype=np.int64).reshape(-1, 2)
        cap = np.asarray(self.capacity, dtype=np.int64)
        keep = arcs[:, 0] != arcs[:, 1]
        arcs, cap = arcs[keep], cap[keep]
        # merge parallel arcs; keep a deterministic lexicographic order
        order = np.lexsort((arcs[:, 1], arcs[:, 0]))
        arcs, cap = arcs[order], cap[order]
        if len(arcs):
            new_group = np.ones(len(arcs), dtype=bool)
            new_group[1:] = np.any(arcs[1:] != arcs[:-1], axis=1)
            idx = np.cumsum(new_group) - 1
            merged = np.zeros(idx[-1] + 1, dtype=np.int64)
            np.add.at(merged, idx, cap)
            arcs = arcs[new_group]
            cap = merged
        self.arcs = arcs
        self.capacity = cap
        self.sources = {int(v): int(d) for v, d in self.sources.items()}
        self.sinks = frozenset(int(v) for v in self.sinks)

    @property
    def total_demand(self) -> int:
        return sum(self.sources.values())

    def out_capacity(self, v: int) -> int:
        m = self.arcs[:, 0] == v
        return int(self.capacity[m].sum())

    def out_capacities(self, vertices) -> dict:
        """Out-capacity per requested vertex in one pass."""
        sums = np.bincount(self.arcs[:, 0], weights=self.capacity,
                           minlength=self.n_vertices)
        return {int(v): int(round(sums[v])) for v in vertices}

    def validate_rules(self, M: int) -> None:
        """Assert the four capacity rules of the grid construction."""
        src = np.zeros(self.n_vertices, dtype=bool)
        for v in self.sources:
            src[v] = True
        snk = np.zeros(self.n_vertices, dtype=bool)
        for v in self.sinks:
            snk[v] = True
        tails, heads = self.arcs[:, 0], self.arcs[:, 1]
        if np.any(self.capacity[src[heads]] != 0):
            raise AssertionError("arc into a source with nonzero capacity")
        if np.any(self.capacity[snk[tails]] != 0):
            raise AssertionError("arc out of a sink with nonzero capacity")
        plain = ~src[tails] & ~snk[tails] & ~src[heads]
        if np.any(self.capacity[plain] != M):
            raise AssertionError("interior arc capacity differs from M")
        for v, d in self.sources.items():
            if self.out_capacity(v) != d:
                raise AssertionError(f"source {v} out-capacity != demand {d}")


@dataclass
class FlowResult:
    flow: np.ndarray       # per arc of the network, aligned with net.arcs
    value: int
    min_cut: list          # list of (tail, head) arc pairs

    def cut_capacity(self, net: FlowNetwork) -> int:
        caps = {tuple(a): int(c) for a, c in zip(net.arcs.tolist(), net.capacity)}
        return sum(caps[arc] for arc in self.min_cut)


def build_network(R: float, placements, M: int, dim: int = 3) -> FlowNetwork:
    """The bidirected half-grid network of the ball of radius R.

    Vertices are half-grid points within R of the origin; the sink shell is
    every vertex nearer than 1/2 to the sphere. `placements` is a multiset
    of half-grid points (rows may repeat; the multiplicity is the demand).
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    placements = np.asarray(placements, dtype=np.float64).reshape(-1, dim)
    if len(placements) and np.max(np.sqrt((placements ** 2).sum(axis=1))) > R + 1e-9:
        raise PlacementOutsideBall("a placement lies outside the ball")

    H = int(np.floor(2 * R))
    axes = [np.arange(-H, H + 1, dtype=np.int64)] * dim
    grids = np.meshgrid(*axes, indexing="ij")
    h2 = sum(g.astype(np.int64) ** 2 for g in grids)
    inside = h2 <= (2 * R) ** 2
    hcoords = np.stack([g[inside] for g in grids], axis=1)  # doubled ints
    order = np.lexsort(tuple(hcoords[:, a] for a in range(dim - 1, -1, -1)))
    hcoords = hcoords[order]
    n_v = len(hcoords)
    coords = hcoords / 2.0

    # id lookup by packed doubled coordinates
    base = hcoords.min(axis=0)
    span = hcoords.max(axis=0) - base + 1
    packed = np.ravel_multi_index(tuple((hcoords - base).T), tuple(span))
    psort = np.argsort(packed)
    packed_sorted = packed[psort]

    def vid(h):
        h = np.asarray(h, dtype=np.int64).reshape(-1, dim)
        okbox = np.all((h >= base) & (h - base < span), axis=1)
        out = np.full(len(h), -1, dtype=np.int64)
        if okbox.any():
            p = np.ravel_multi_index(tuple((h[okbox] - base).T), tuple(span))
            pos = np.searchsorted(packed_sorted, p)
            pos = np.clip(pos, 0, len(packed_sorted) - 1)
            hit = packed_sorted[pos] == p
            res = np.full(okbox.sum(), -1, dtype=np.int64)
            res[hit] = psort[pos[hit]]
            out[okbox] = res
        return out

    arcs = []
    for a in range(dim):
        nb = hcoords.copy()
        nb[:, a] += 1
        ids = vid(nb)
        ok = ids >= 0
        u = np.nonzero(ok)[0]
        v = ids[ok]
        arcs.append(np.stack([u, v], axis=1))
        arcs.append(np.stack([v, u], axis=1))
    arcs = np.concatenate(arcs, axis=0) if arcs else np.empty((0, 2), np.int64)

    shell = (hcoords.astype(np.int64) ** 2).sum(axis=1) > (2 * R - 1) ** 2

    src_ids = vid(np.rint(2 * placements).astype(np.int64)) if len(placements) else \
        np.empty(0, dtype=np.int64)
    if len(src_ids) and np.any(src_ids < 0):
        raise PlacementOutsideBall("a placement is not a half-grid vertex of the ball")
    demands: dict = {}
    for v in src_ids.tolist():
        demands[v] = demands.get(v, 0) + 1
    is_src = np.zeros(n_v, dtype=bool)
    for v in demands:
        is_src[v] = True
    sinks = frozenset(np.nonzero(shell & ~is_src)[0].tolist())
    is_snk = np.zeros(n_v, dtype=bool)
    for v in sinks:
        is_snk[v] = True

    cap = np.full(len(arcs), M, dtype=np.int64)
    cap[is_src[arcs[:, 1]]] = 0          # rule 2: nothing enters a source
    cap[is_snk[arcs[:, 0]]] = 0          # rule 3: nothing leaves a sink
    # rule 1: split each demand over the eligible out-arcs
    order = np.lexsort((arcs[:, 1], arcs[:, 0]))
    for v, d in sorted(demands.items()):
        out = order[(arcs[order, 0] == v) & ~is_src[arcs[order, 1]]]
        if len(out) == 0:
            raise RoutingInfeasible(f"source {v} has no eligible out-arcs")
        q, r = divmod(d, len(out))
        split = np.full(len(out), q, dtype=np.int64)
        split[:r] += 1
        cap[out] = split

    return FlowNetwork(n_v, arcs, cap, demands, sinks, coords=coords, radius=float(R))


def max_flow(net: FlowNetwork) -> FlowResult:
    """Integral maximum flow with a certifying minimum cut.

    Solved by shortest-augmenting-path blocking flows (scipy's Dinic
    kernel) on the network augmented with a super source and super sink;
    the reported cut is mapped back to network arcs and its capacity always
    equals the flow value.
    """
    if not net.sources or not net.sinks:
        return FlowResult(np.zeros(len(net.arcs), dtype=np.int64), 0, [])
    V = net.n_vertices
    s_star, t_star = V, V + 1
    out_caps = net.out_capacities(net.sources)
    big = max(1, sum(out_caps.values()) + 1)

    rows = [net.arcs[:, 0]]
    cols = [net.arcs[:, 1]]
    caps = [net.capacity]
    rows.append(np.full(len(net.sources), s_star, dtype=np.int64))
    cols.append(np.fromiter(sorted(net.sources), dtype=np.int64))
    caps.append(np.asarray([out_caps[v] for v in sorted(net.sources)], dtype=np.int64))
    snk = np.fromiter(sorted(net.sinks), dtype=np.int64)
    rows.append(snk)
    cols.append(np.full(len(snk), t_star, dtype=np.int64))
    caps.append(np.full(len(snk), big, dtype=np.int64))

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    caps = np.concatenate(caps)
    keep = caps > 0
    if caps[keep].max(initial=0) > np.iinfo(np.int32).max:
        raise ValueError("capacities exceed int32")
    graph = csr_matrix((caps[keep].astype(np.int32),
                        (rows[keep], cols[keep])), shape=(V + 2, V + 2))
    res = maximum_flow(graph, s_star, t_star)
    value = int(res.flow_value)
    fmat = res.flow  # antisymmetric net flow

    flow = np.zeros(len(net.arcs), dtype=np.int64)
    if len(net.arcs):
        raw = np.asarray(fmat[net.arcs[:, 0], net.arcs[:, 1]]).ravel()
        flow = np.maximum(0, raw).astype(np.int64)

    # residual reachability from the super source gives the cut
    fw = np.asarray(fmat[rows[keep], cols[keep]]).ravel()
    has_fwd = fw < caps[keep]
    has_bwd = fw > 0
    r_rows = np.concatenate([rows[keep][has_fwd], cols[keep][has_bwd]])
    r_cols = np.concatenate([cols[keep][has_fwd], rows[keep][has_bwd]])
    residual = csr_matrix((np.ones(len(r_rows), dtype=np.int8),
                           (r_rows, r_cols)), shape=(V + 2, V + 2))
    order = breadth_first_order(residual, s_star, directed=True,
                                return_predecessors=False)
    reach = np.zeros(V + 2, dtype=bool)
    reach[order] = True

    cut = []
    tails, heads = net.arcs[:, 0], net.arcs[:, 1]
    crossing = reach[tails] & ~reach[heads] & (net.capacity > 0)
    cut.extend(map(tuple, net.arcs[crossing].tolist()))
    for v in sorted(net.sources):
        if not reach[v]:
            m = (tails == v) & (net.capacity > 0)
            cut.extend(map(tuple, net.arcs[m].tolist()))
    cut = sorted(set(cut))
    caps_by_arc = {tuple(a): int(c) for a, c in zip(net.arcs.tolist(), net.capacity)}
    if sum(caps_by_arc[a] for a in cut) != value:
        raise AssertionError("min-cut certificate does not match the flow value")
    return FlowResult(flow, value, cut)


def decompose_paths(net: FlowNetwork, result: FlowResult) -> list:
    """Turn an integral flow into `value` simple vertex paths, each from a
    source to a sink, loading every arc at most its flow."""
    demand = net.total_demand
    if result.value < demand:
        raise InfeasibleDecomposition(
            f"flow value {result.value} below demand {demand}")
    rem = {}
    for (u, v), f in zip(net.arcs.tolist(), result.flow.tolist()):
        if f > 0:
            rem.setdefault(u, []).append([v, f])
    for u in rem:
        rem[u].sort()
    sinks = net.sinks
    paths = []
    for s in sorted(net.sources):
        for _ in range(net.sources[s]):
            path = [s]
            seen = {s: 0}
            u = s
            while u not in sinks:
                nxt = None
                for slot in rem.get(u, ()):
                    if slot[1] > 0:
                        nxt = slot
                        break
                if nxt is None:
                    raise InfeasibleDecomposition(
                        f"flow conservation broke at vertex {u}")
                nxt[1] -= 1
                v = nxt[0]
                if v in seen:
                    # drop the cycle; the discarded flow was a circulation
                    cut_at = seen[v]
                    for w in path[cut_at + 1:]:
                        del seen[w]
                    path = path[: cut_at + 1]
                else:
                    path.append(v)
                    seen[v] = len(path) - 1
                u = v
            paths.append(path)
    if len(paths) != result.value:
        raise InfeasibleDecomposition("path count does not match flow value")
    return paths


# ---------------------------------------------------------------------------
# density of placements


@dataclass
class DensityReport:
    ok: bool
    bound: float
    worst_center: tuple | None
    worst_radius: float | None
    worst_count: int
    worst_ratio: float


def check_ball_density(points, C: float, dim: int = 3) -> DensityReport:
    """Check |points & B_r| <= C * r^(n-1) over every witness ball with
    half-grid center and half-step radius r > 1/2, up to the diameter of
    the point set. Returns the ratio-maximizing ball."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, dim)
    if len(points) == 0:
        return DensityReport(True, C, None, None, 0, 0.0)
    lo = np.floor(2 * points.min(axis=0)).astype(np.int64) - 1
    hi = np.ceil(2 * points.max(axis=0)).astype(np.int64) + 1
    diam = float(np.sqrt(((points.max(0) - points.min(0)) ** 2).sum()))
    ks = np.arange(2, int(np.ceil(2 * diam)) + 3)   # doubled radii, r > 1/2
    radii = ks / 2.0
    thresholds = C * radii ** (dim - 1)

    axes = [np.arange(lo[a], hi[a] + 1, dtype=np.int64) for a in range(dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([m.ravel() for m in mesh], axis=1) / 2.0

    best = (-1.0, None, None, 0)
    ok = True
    chunk = 2048
    p2 = points * 2.0
    for i in range(0, len(centers), chunk):
        cs = centers[i: i + chunk]
        d2 = ((cs[:, None, :] * 2 - p2[None, :, :]) ** 2).sum(axis=2)  # doubled
        d2.sort(axis=1)
        # counts[c, j] = number of points with doubled distance <= ks[j]
        counts = np.stack([np.searchsorted(row, ks * ks, side="right")
                           for row in d2])
        ratios = counts / (radii ** (dim - 1))[None, :]
        if np.any(counts > thresholds[None, :]):
            ok = False
        j = np.unravel_index(np.argmax(ratios), ratios.shape)
        if ratios[j] > best[0]:
            best = (float(ratios[j]), tuple(cs[j[0]].tolist()),
                    float(radii[j[1]]), int(counts[j]))
    return DensityReport(ok, C, best[1], best[2], best[3], best[0])


# ---------------------------------------------------------------------------
# routing to the sphere


@dataclass(frozen=True)
class RouterConfig:
    dim: int = 3
    C_S: float = 8.0
    M: int | None = None
    density_check: bool = True

    def resolved_M(self) -> int:
        return int(self.M) if self.M is not None else int(8 * self.C_S)


@dataclass
class BallRouting:
    """Thick-map fragment: one polyline per unit of demand, from a placement
    to a distinct exit point on the sphere, with per-edge loads <= M."""

    center: tuple
    radius: float
    polylines: list            # np arrays of points, global coordinates
    source_vertices: list      # start half-grid vertex (local) per polyline
    exits: list                # exit points on the sphere, global
    edge_load_max: int
    load_histogram: dict
    flow_value: int


def route_to_boundary(ball, placements, cfg: RouterConfig | None = None) -> BallRouting:
    """Extend a placement of points inside a ball to paths reaching the
    bounding sphere along the half-grid, at most M per grid edge and one
    per exit vertex."""
    if cfg is None:
        cfg = RouterConfig()
    center, R = ball
    dim = cfg.dim
    center = np.asarray(center, dtype=np.float64).reshape(dim)
    placements = np.asarray(placements, dtype=np.float64).reshape(-1, dim)
    local = placements - center[None, :]
    snapped = np.rint(2 * local) / 2.0
    if len(local) and np.max(np.abs(snapped - local)) > 0.25 + 1e-9:
        raise ValueError("placements are farther than 1/4 from the half-grid")

    if cfg.density_check:
        rep = check_ball_density(snapped, cfg.C_S, dim=dim)
        if not rep.ok:
            raise DensityViolation(
                f"density {rep.worst_count} > {rep.bound} * "
                f"{rep.worst_radius}^{dim - 1} at {rep.worst_center}")

    M = cfg.resolved_M()
    net = build_network(R, snapped, M, dim=dim)

    # unit-capacity exit arcs force pairwise distinct exits
    V = net.n_vertices
    exit_id = V
    shell = sorted(net.sinks)
    arcs = np.concatenate([net.arcs,
                           np.stack([np.asarray(shell, dtype=np.int64),
                                     np.full(len(shell), exit_id, np.int64)], axis=1)])
    caps = np.concatenate([net.capacity, np.ones(len(shell), dtype=np.int64)])
    net2 = FlowNetwork(V + 1, arcs, caps, net.sources, frozenset([exit_id]),
                       coords=None, radius=net.radius)

    result = max_flow(net2)
    demand = net.total_demand
    if result.value < demand:
        raise RoutingInfeasible(
            f"max-flow {result.value} below demand {demand}; raise M or C_S")
    paths = decompose_paths(net2, result)

    loads: dict = {}
    polylines = []
    sources = []
    exits = []
    for path in paths:
        assert path[-1] == exit_id
        vpath = path[:-1]
        for u, v in zip(vpath[:-1], vpath[1:]):
            key = (min(u, v), max(u, v))
            loads[key] = loads.get(key, 0) + 1
        pts = net.coords[vpath]
        w = pts[-1]
        norm = float(np.sqrt((w ** 2).sum()))
        if norm < R - 1e-12:
            pts = np.concatenate([pts, (w * (R / norm))[None, :]])
        exits.append(tuple((pts[-1] + center).tolist()))
        polylines.append(pts + center[None, :])
        sources.append(int(vpath[0]))
    if len(set(exits)) != len(exits):
        raise AssertionError("exit points are not pairwise distinct")
    max_load = max(loads.values(), default=0)
    if max_load > M:
        raise AssertionError("per-edge load exceeded M after decomposition")
    hist: dict = {}
    for v in loads.values():
        hist[v] = hist.get(v, 0) + 1
    return BallRouting(tuple(center.tolist()), float(R), polylines, sources,
                       exits, max_load, hist, result.value)

"""End-to-end assembly of thick embeddings into a round ball.

The pipeline places each partition piece isometrically inside its own
doubled ball packed near the target sphere, routes every cut edge to the
sphere through a capacity network, reconnects severed edge pairs through
the interior with randomized waypoints, and finally lifts the congested map
onto parallel tracks so that distinct edges become honestly disjoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kb as kbmod
from .errors import PackingFailed, TrackOverflow
from .flow import RouterConfig, route_to_boundary
from .goodballs import GoodBallPartition
from .kb import KBConfig, Matching, congestion, kb_route
from .voxel import GridGraph, VoxelDomain, boundary_area, grid_graph

STAGE_INTERIOR = 0   # edges inside one piece, placed isometrically
STAGE_BOUNDARY = 1   # edges adjacent to the domain boundary
STAGE_CROSSING = 2   # edges cut between two pieces, closed up through the ball


@dataclass
class PackingResult:
    radius: float          # R of the target ball
    centers: np.ndarray    # (k, n) ball centers, aligned with input radii
    C_used: float


@dataclass
class CongestionLedger:
    max: int
    cap: int
    per_stage: dict
    flow_edge_load_max: int
    kb_ball_max: int
    histogram: dict


@dataclass
class ThickMap:
    dim: int
    source: GridGraph
    target_radius: float
    vertex_images: np.ndarray
    edge_paths: list
    edge_stage: np.ndarray
    piece_of_vertex: np.ndarray
    congestion_ledger: CongestionLedger
    packing: PackingResult
    provenance: dict

    def path_of_edge(self, index: int) -> np.ndarray:
        return self.edge_paths[index]

    def to_json_dict(self) -> dict:
        verts = {str(i): [float(x) for x in p]
                 for i, p in enumerate(self.vertex_images)}
        edges = [{"src": [int(u), int(v)],
                  "stage": int(s),
                  "path": [[float(x) for x in p] for p in path]}
                 for (u, v), s, path in zip(self.source.edges.tolist(),
                                            self.edge_stage.tolist(),
                                            self.edge_paths)]
        ledger = {
            "max": self.congestion_ledger.max,
            "cap": self.congestion_ledger.cap,
            "per_stage": {str(k): int(v)
                          for k, v in sorted(self.congestion_ledger.per_stage.items())},
            "flow_edge_load_max": self.congestion_ledger.flow_edge_load_max,
            "kb_ball_max": self.congestion_ledger.kb_ball_max,
        }
        return {"R": float(self.target_radius), "vertices": verts,
                "edges": edges, "ledger": ledger}

    def to_obj(self) -> str:
        """One polyline object per edge, for external viewers."""
        lines = []
        offset = 1
        for i, path in enumerate(self.edge_paths):
            lines.append(f"o edge_{i}")
            for p in path:
                coords = " ".join(f"{float(x):.9g}" for p_ in [p] for x in p_)
                lines.append("v " + coords)
            for j in range(len(path) - 1):
                lines.append(f"l {offset + j} {offset + j + 1}")
            offset += len(path)
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# ball packing


def _fibonacci_sphere(count: int) -> np.ndarray:
    i = np.arange(count) + 0.5
    phi = np.arccos(1 - 2 * i / count)
    theta = np.pi * (1 + np.sqrt(5.0)) * i
    return np.stack([np.sin(phi) * np.cos(theta),
                     np.sin(phi) * np.sin(theta),
                     np.cos(phi)], axis=1)


def pack_balls(radii, C: float, dim: int = 3) -> PackingResult:
    """Centers for doubled balls of the given radii inside the ball of
    radius R = C * (sum r^(n-1))^(1/(n-1)), pairwise disjoint and with
    pairwise disjoint radial shadows on the target sphere.

    All centers go on the shell |p| = R - 2*max(r); candidates are walked
    greedily largest ball first and every placement is checked exactly
    against both predicates."""
    radii = np.asarray(radii, dtype=np.float64)
    if len(radii) == 0 or np.any(radii <= 0):
        raise ValueError("radii must be positive and nonempty")
    n = dim
    R = C * float((radii ** (n - 1)).sum()) ** (1.0 / (n - 1))
    rmax = float(radii.max())
    rho = R - 2 * rmax
    if rho < R / 2 or (len(radii) > 1 and rho <= 2 * rmax):
        raise PackingFailed(f"C={C} leaves no shell room for balls up to {rmax}")

    order = np.argsort(-radii, kind="stable")
    half_angles = np.arcsin(np.clip(2 * radii / rho, 0.0, 1.0))
    if dim == 2:
        angles = np.linspace(0, 2 * np.pi, max(64, 16 * len(radii)), endpoint=False)
        dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    elif dim == 3:
        dirs = _fibonacci_sphere(max(128, 24 * len(radii)))
    else:
        rng = np.random.default_rng(0)
        dirs = rng.normal(size=(max(256, 64 * len(radii)), dim))
        dirs /= np.sqrt((dirs ** 2).sum(axis=1))[:, None]

    centers = np.zeros((len(radii), n))
    placed: list[int] = []
    for i in order:
        ok_dir = None
        for dcand in dirs:
            p = rho * dcand
            good = True
            for j in placed:
                if np.linalg.norm(p - centers[j]) <= 2 * (radii[i] + radii[j]) + 1e-9:
                    good = False
                    break
                cosang = float(np.dot(p, centers[j]) /
                               (np.linalg.norm(p) * np.linalg.norm(centers[j])))
                ang = math.acos(max(-1.0, min(1.0, cosang)))
                if ang <= half_angles[i] + half_angles[j] + 1e-9:
                    good = False
                    break
            if good:
                ok_dir = p
                break
        if ok_dir is None:
            raise PackingFailed(
                f"no direction fits ball {i} (r={radii[i]}) at C={C}")
        centers[i] = ok_dir
        placed.append(i)
    return PackingResult(R, centers, C)


# ---------------------------------------------------------------------------
# assembly


@dataclass(frozen=True)
class EmbedConfig:
    dim: int = 3
    C: float = 4.0
    C_max: float = 32.0
    M: int = 64
    C_S: float | None = None          # None: derived from the partition constants
    congestion_cap: int = 512
    kb: KBConfig = field(default_factory=lambda: KBConfig(min_separation=0.4))
    witness_resolution: float = 0.5


def _pack_with_retries(radii, cfg: EmbedConfig) -> PackingResult:
    C = cfg.C
    last = None
    while C <= cfg.C_max * (1 + 1e-9):
        try:
            return pack_balls(radii, C, dim=cfg.dim)
        except PackingFailed as exc:
            last = exc
            C *= 1.5
    raise PackingFailed(f"no packing constant up to {cfg.C_max} worked: {last}")


def assemble(U: VoxelDomain, partition: GoodBallPartition,
             cfg: EmbedConfig | None = None) -> ThickMap:
    """Assemble the thick map of the domain's grid graph into the ball.

    Stage 1 translates each piece's internal edges isometrically into its
    packed ball. Stage 2 routes the pieces' cut and boundary endpoints to
    the piece ball's sphere through the half-grid flow network and extends
    them radially to the target sphere. Stage 3 reconnects cut edge pairs
    through the interior with the randomized router.
    """
    if cfg is None:
        cfg = EmbedConfig(dim=U.dim)
    if U.scale != 1.0:
        raise ValueError("assemble expects a unit-scale domain")
    if U.dim != cfg.dim:
        raise ValueError("config dimension mismatch")
    n = U.dim
    graph = grid_graph(U)
    records = partition.records
    radii = np.asarray([rec.ball.radius for rec in records])
    if radii.min() < 1.5:
        raise PackingFailed("a piece ball has radius below 1.5; routing "
                            "inside its doubled ball would have no shell room")

    packing = _pack_with_retries(radii, cfg)
    R = packing.radius

    # piece index per interior vertex
    piece_of_vertex = np.full(graph.n_vertices, -1, dtype=np.int64)
    for idx, rec in enumerate(records):
        cells = rec.piece.cell_array()
        piece_of_vertex[graph._vertex_ids(cells)] = idx

    # vertex images: translate each piece ball center onto its packed center
    ball_centers = np.asarray([rec.ball.center for rec in records])
    shifts = packing.centers - ball_centers
    vertex_images = np.zeros((graph.n_vertices, n))
    interior = ~graph.is_boundary
    vertex_images[interior] = (graph.positions[interior]
                               + shifts[piece_of_vertex[interior]])

    # edge staging
    edges = graph.edges
    stage = np.empty(len(edges), dtype=np.int64)
    u_piece = piece_of_vertex[edges[:, 0]]
    v_bound = graph.is_boundary[edges[:, 1]]
    v_piece = piece_of_vertex[edges[:, 1]]
    stage[v_bound] = STAGE_BOUNDARY
    same = ~v_bound & (u_piece == v_piece)
    stage[same] = STAGE_INTERIOR
    stage[~v_bound & (u_piece != v_piece)] = STAGE_CROSSING

    # per-piece routing demands: one placement per cut/boundary edge endpoint
    need = [[] for _ in records]       # (edge index, side) per piece
    for ei in np.nonzero(stage != STAGE_INTERIOR)[0]:
        u, v = edges[ei]
        need[u_piece[ei]].append((int(ei), 0))
        if stage[ei] == STAGE_CROSSING:
            need[v_piece[ei]].append((int(ei), 1))

    if cfg.C_S is not None:
        c_s = cfg.C_S
    else:
        pcfg = partition.config
        c_s = 4.0 * n * pcfg.A_tilde * pcfg.A if pcfg is not None else 8.0

    router_cfg = RouterConfig(dim=n, C_S=c_s, M=cfg.M)
    edge_paths: list = [None] * len(edges)
    side_paths: dict = {}
    flow_load_max = 0
    ball_stats = []
    for idx, rec in enumerate(records):
        wants = sorted(need[idx])
        if not wants:
            ball_stats.append({"piece": idx, "demand": 0})
            continue
        q = packing.centers[idx]
        r2 = 2 * radii[idx]
        placements = np.asarray([vertex_images[edges[ei][side]]
                                 for ei, side in wants])
        routing = route_to_boundary((tuple(q.tolist()), r2), placements,
                                    router_cfg)
        flow_load_max = max(flow_load_max, routing.edge_load_max)
        # group returned paths by start placement and hand them out in
        # deterministic edge order
        by_start: dict = {}
        for j, poly in enumerate(routing.polylines):
            key = tuple(np.rint(2 * (poly[0] - q)).astype(np.int64).tolist())
            by_start.setdefault(key, []).append(j)
        for ei, side in wants:
            key = tuple(np.rint(2 * (vertex_images[edges[ei][side]] - q))
                        .astype(np.int64).tolist())
            j = by_start[key].pop(0)
            poly = routing.polylines[j]
            # extend radially from the piece sphere to the target sphere
            tipn = float(np.linalg.norm(poly[-1]))
            if tipn < R - 1e-9:
                poly = np.concatenate([poly, (poly[-1] * (R / tipn))[None, :]])
            side_paths[(ei, side)] = poly
        ball_stats.append({"piece": idx, "demand": len(wants),
                           "flow_value": routing.flow_value,
                           "edge_load_max": routing.edge_load_max})

    # stage 1 and 2 paths
    for ei in range(len(edges)):
        u, v = edges[ei]
        if stage[ei] == STAGE_INTERIOR:
            edge_paths[ei] = np.stack([vertex_images[u], vertex_images[v]])
        elif stage[ei] == STAGE_BOUNDARY:
            poly = side_paths[(ei, 0)]
            edge_paths[ei] = poly
            vertex_images[v] = poly[-1]

    # stage 3: close up the crossing edges through the ball
    kb_rounds = 0
    kb_max = 0
    crossing = np.nonzero(stage == STAGE_CROSSING)[0]
    if len(crossing):
        placements = {}
        pairs = []
        for ei in crossing:
            pa = side_paths[(int(ei), 0)][-1]
            pb = side_paths[(int(ei), 1)][-1]
            placements[(int(ei), 0)] = tuple(pa.tolist())
            placements[(int(ei), 1)] = tuple(pb.tolist())
            pairs.append(((int(ei), 0), (int(ei), 1)))
        matching = Matching(pairs, placements)
        routing = kb_route(matching, R, cfg.kb)
        kb_rounds = routing.rounds
        kb_max = routing.congestion_max
        for k, ei in enumerate(crossing):
            mid = routing.polylines[k]
            left = side_paths[(int(ei), 0)]
            right = side_paths[(int(ei), 1)]
            edge_paths[int(ei)] = np.concatenate(
                [left, mid[1:-1], right[::-1]])

    # congestion ledger over the whole map, split by stage
    cmax, hist, keys, counts, (pkey, pid) = kbmod._congestion_detail(
        edge_paths, cfg.witness_resolution)
    per_stage = {}
    for s, name in ((STAGE_INTERIOR, "interior"), (STAGE_BOUNDARY, "boundary"),
                    (STAGE_CROSSING, "crossing")):
        sel = np.isin(pid, np.nonzero(stage == s)[0])
        if sel.any():
            sub = pkey[sel]
            _, c = np.unique(sub, return_counts=True)
            per_stage[name] = int(c.max())
        else:
            per_stage[name] = 0
    ledger = CongestionLedger(cmax, cfg.congestion_cap, per_stage,
                              flow_load_max, kb_max, hist)
    if cmax > cfg.congestion_cap:
        raise TrackOverflow(f"overall congestion {cmax} exceeds the cap "
                            f"{cfg.congestion_cap}")

    provenance = {"C_used": packing.C_used, "R": R,
                  "boundary_area": boundary_area(U),
                  "balls": ball_stats, "kb_rounds": kb_rounds}
    return ThickMap(n, graph, R, vertex_images, edge_paths, stage,
                    piece_of_vertex, ledger, packing, provenance)


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    ok: bool
    checks: list
    stats: dict

    @property
    def first_failure(self):
        for name, ok, detail in self.checks:
            if not ok:
                return name, detail
        return None


def validate_thick_map(tm: ThickMap, against: GridGraph | None = None,
                       tol: float = 1e-6,
                       recompute_congestion: bool = True) -> ValidationReport:
    """Check every thick-map invariant and report the first witness of any
    violation; never raises."""
    graph = against if against is not None else tm.source
    R = tm.target_radius
    checks = []

    ok = len(tm.edge_paths) == len(graph.edges)
    checks.append(("edge_count", ok,
                   (len(tm.edge_paths), len(graph.edges)) if not ok else None))

    bad = None
    for i, p in enumerate(tm.edge_paths):
        if p is None or len(p) < 2 or not np.any(np.diff(p, axis=0)):
            bad = i
            break
    checks.append(("nontrivial_paths", bad is None, bad))

    bad = None
    for i, p in enumerate(tm.edge_paths):
        u, v = graph.edges[i]
        if (np.max(np.abs(p[0] - tm.vertex_images[u])) > 1e-9
                or np.max(np.abs(p[-1] - tm.vertex_images[v])) > 1e-9):
            bad = (i, int(u), int(v))
            break
    checks.append(("endpoint_continuity", bad is None, bad))

    bnd = np.nonzero(graph.is_boundary)[0]
    norms = np.sqrt((tm.vertex_images[bnd] ** 2).sum(axis=1))
    off = np.abs(norms - R)
    ok = bool((off <= tol).all()) if len(bnd) else True
    checks.append(("boundary_on_sphere", ok,
                   int(bnd[int(np.argmax(off))]) if not ok else None))

    bad = None
    for idx in range(int(tm.piece_of_vertex.max()) + 1):
        sel = tm.piece_of_vertex == idx
        if not sel.any():
            continue
        disp = tm.vertex_images[sel] - graph.positions[sel]
        if np.max(np.abs(disp - disp[0])) > 1e-9:
            bad = idx
            break
    checks.append(("piece_isometry", bad is None, bad))

    bad = None
    for i, p in enumerate(tm.edge_paths):
        if np.max(np.sqrt((np.asarray(p) ** 2).sum(axis=1))) > R + tol:
            bad = i
            break
    checks.append(("interior_containment", bad is None, bad))

    touches = np.array([bool((np.sqrt((np.asarray(p) ** 2).sum(axis=1))
                              >= R - tol).any()) for p in tm.edge_paths])
    expected = tm.edge_stage != STAGE_INTERIOR
    ok = bool((touches == expected).all())
    checks.append(("boundary_completeness", ok,
                   int(np.nonzero(touches != expected)[0][0]) if not ok else None))

    ledger = tm.congestion_ledger
    checks.append(("congestion_cap", ledger.max <= ledger.cap,
                   (ledger.max, ledger.cap)))

    recomputed = None
    if recompute_congestion:
        recomputed, _ = congestion(tm.edge_paths, 0.5)
        checks.append(("congestion_recomputed", recomputed <= ledger.cap,
                       (recomputed, ledger.cap)))

    barea = boundary_area(graph.domain)
    stats = {
        "R": R,
        "boundary_area": barea,
        "radius_ratio": R / barea ** (1.0 / (tm.dim - 1)),
        "congestion_max": ledger.max,
        "congestion_recomputed": recomputed,
        "per_stage": dict(ledger.per_stage),
        "flow_edge_load_max": ledger.flow_edge_load_max,
        "kb_ball_max": ledger.kb_ball_max,
    }
    return ValidationReport(all(ok for _, ok, _ in checks), checks, stats)


# ---------------------------------------------------------------------------
# track lifting


def _subdivide(path: np.ndarray, pitch: float = 0.5) -> np.ndarray:
    pts = [path[0]]
    for a, b in zip(path[:-1], path[1:]):
        seg = b - a
        length = float(np.linalg.norm(seg))
        if length == 0.0:
            continue
        k = max(1, int(math.ceil(length / pitch)))
        for j in range(1, k + 1):
            pts.append(a + seg * (j / k))
    return np.asarray(pts)


def _segment_table(paths):
    """Flattened segments of all paths plus path endpoints for the
    shared-contact exemption."""
    p0, p1, owner = [], [], []
    for i, path in enumerate(paths):
        a, b = path[:-1], path[1:]
        keep = np.any(a != b, axis=1)
        p0.append(a[keep])
        p1.append(b[keep])
        owner.append(np.full(int(keep.sum()), i, dtype=np.int64))
    p0 = np.concatenate(p0)
    p1 = np.concatenate(p1)
    owner = np.concatenate(owner)
    ends = np.stack([np.stack([p[0], p[-1]]) for p in paths])
    return p0, p1, owner, ends


def _cell_candidate_pairs(p0, p1, owner, cell: float = 1.0):
    """Candidate segment pairs from a uniform cell hash: two touching
    segments always share a covering cell, so testing same-cell pairs with
    different owners catches every contact."""
    dim = p0.shape[1]
    lo = np.floor(np.minimum(p0, p1) / cell - 1e-9).astype(np.int64)
    hi = np.floor(np.maximum(p0, p1) / cell + 1e-9).astype(np.int64)
    spans = hi - lo + 1
    reps = np.prod(spans, axis=1)
    seg_ids = np.repeat(np.arange(len(p0), dtype=np.int64), reps)
    # enumerate each segment's covering cells
    offs_idx = np.arange(int(reps.sum()), dtype=np.int64) - np.repeat(
        np.concatenate([[0], np.cumsum(reps)[:-1]]), reps)
    cells = np.empty((len(seg_ids), dim), dtype=np.int64)
    rem = offs_idx
    for a in range(dim - 1, -1, -1):
        cells[:, a] = lo[seg_ids, a] + rem % spans[seg_ids, a]
        rem = rem // spans[seg_ids, a]
    key = np.zeros(len(cells), dtype=np.int64)
    for a in range(dim):
        key = key * 4_194_304 + (cells[:, a] + 2_097_152)
    order = np.lexsort((seg_ids, key))
    key, seg_ids = key[order], seg_ids[order]
    starts = np.nonzero(np.concatenate([[True], key[1:] != key[:-1]]))[0]
    bounds = np.concatenate([starts, [len(key)]])
    pairs = set()
    for s, e in zip(bounds[:-1], bounds[1:]):
        group = seg_ids[s:e]
        if len(group) < 2:
            continue
        for x in range(len(group)):
            gx = group[x]
            ox = owner[gx]
            for y in range(x + 1, len(group)):
                gy = group[y]
                if owner[gy] != ox:
                    pairs.add((int(gx), int(gy)) if gx < gy else (int(gy), int(gx)))
    if not pairs:
        return np.empty((0, 2), dtype=np.int64)
    return np.asarray(sorted(pairs), dtype=np.int64)


def _segment_pair_dist(p0a, p1a, p0b, p1b):
    """Closest distance and points between segment batches (Ericson)."""
    d1 = p1a - p0a
    d2 = p1b - p0b
    r = p0a - p0b
    a = (d1 * d1).sum(axis=1)
    e = (d2 * d2).sum(axis=1)
    f = (d2 * r).sum(axis=1)
    c = (d1 * r).sum(axis=1)
    b = (d1 * d2).sum(axis=1)
    denom = a * e - b * b
    s = np.where(denom > 1e-30, np.clip((b * f - c * e) / np.where(
        denom > 1e-30, denom, 1.0), 0.0, 1.0), 0.0)
    t = np.where(e > 1e-30, (b * s + f) / np.where(e > 1e-30, e, 1.0), 0.0)
    s = np.where(t < 0, np.clip(-c / np.where(a > 1e-30, a, 1.0), 0.0, 1.0), s)
    s = np.where(t > 1, np.clip((b - c) / np.where(a > 1e-30, a, 1.0), 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    ca = p0a + s[:, None] * d1
    cb = p0b + t[:, None] * d2
    dist = np.sqrt(((ca - cb) ** 2).sum(axis=1))
    return dist, ca, cb


def _collinear_overlap(p0a, p1a, p0b, p1b, tol=1e-9):
    """True where the two segments lie on one line and share more than a
    point."""
    d1 = p1a - p0a
    d2 = p1b - p0b
    n1 = np.linalg.norm(d1, axis=1)
    n2 = np.linalg.norm(d2, axis=1)
    u = d1 / np.maximum(n1, 1e-30)[:, None]
    cross_ab = np.linalg.norm(np.cross(u, d2), axis=1)
    cross_r = np.linalg.norm(np.cross(u, p0b - p0a), axis=1)
    colinear = (cross_ab <= tol * np.maximum(n2, 1.0)) & (cross_r <= tol)
    ta0 = np.zeros(len(p0a))
    ta1 = n1
    tb0 = ((p0b - p0a) * u).sum(axis=1)
    tb1 = ((p1b - p0a) * u).sum(axis=1)
    lo = np.maximum(np.minimum(ta0, ta1), np.minimum(tb0, tb1))
    hi = np.minimum(np.maximum(ta0, ta1), np.maximum(tb0, tb1))
    return colinear & (hi - lo > tol)


def find_contacts(paths, tol: float = 1e-9):
    """All pairs of distinct paths that touch: returns a list of
    (path_i, path_j, point, allowed) where `allowed` means a point contact
    at a shared endpoint of both paths."""
    p0, p1, owner, ends = _segment_table(paths)
    pairs = _cell_candidate_pairs(p0, p1, owner)
    out = []
    if len(pairs) == 0:
        return out
    chunk = 500_000
    for lo in range(0, len(pairs), chunk):
        pp = pairs[lo: lo + chunk]
        dist, ca, cb = _segment_pair_dist(p0[pp[:, 0]], p1[pp[:, 0]],
                                          p0[pp[:, 1]], p1[pp[:, 1]])
        touching = np.nonzero(dist <= tol)[0]
        if len(touching) == 0:
            continue
        overlap = _collinear_overlap(p0[pp[touching, 0]], p1[pp[touching, 0]],
                                     p0[pp[touching, 1]], p1[pp[touching, 1]])
        for k, t_idx in enumerate(touching):
            i = int(owner[pp[t_idx, 0]])
            j = int(owner[pp[t_idx, 1]])
            x = 0.5 * (ca[t_idx] + cb[t_idx])
            allowed = False
            if not overlap[k]:
                shared = [e for e in ends[i]
                          if min(np.linalg.norm(e - f) for f in ends[j]) <= 1e-7]
                allowed = any(np.linalg.norm(x - e) <= 1e-7 for e in shared)
            out.append((i, j, x, bool(allowed)))
    return out


_LIFT_DIRECTIONS = [
    np.array([0.6415002990995843, 0.5636636936179574, 0.5205262364200975]),
    np.array([0.2672612419124244, -0.5345224838248488, 0.8017837257372732]),
    np.array([-0.7427813527082074, 0.5570860145311556, 0.3713906763541037]),
]


def lift_to_tracks(tm: ThickMap, m: int) -> ThickMap:
    """Offset paths sharing geometry onto parallel tracks spaced 1/(2m) so
    that distinct edges' polylines become pairwise disjoint except at
    shared vertex images. Dimension 3 only; verified exhaustively."""
    if tm.dim != 3:
        raise ValueError("track lifting works in dimension 3")
    if tm.congestion_ledger.max > m:
        raise TrackOverflow(
            f"congestion {tm.congestion_ledger.max} exceeds track count {m}")
    paths = [_subdivide(np.asarray(p, dtype=np.float64)) for p in tm.edge_paths]

    contacts = find_contacts(paths)
    conflicts: dict = {i: set() for i in range(len(paths))}
    for i, j, _x, allowed in contacts:
        if not allowed:
            conflicts[i].add(j)
            conflicts[j].add(i)

    # greedy coloring, most-constrained paths first
    order = sorted(range(len(paths)), key=lambda i: (-len(conflicts[i]), i))
    color = np.full(len(paths), -1, dtype=np.int64)
    for i in order:
        used = {int(color[j]) for j in conflicts[i] if color[j] >= 0}
        c = 0
        while c in used:
            c += 1
        if c >= m:
            raise TrackOverflow(
                f"local congestion needs {c + 1} tracks but only {m} allowed")
        color[i] = c

    for u in _LIFT_DIRECTIONS:
        u = u / np.linalg.norm(u)
        lifted = []
        for i, p in enumerate(paths):
            q = p.copy()
            if len(q) > 2 and color[i] > 0:
                q[1:-1] += (color[i] / (2.0 * m)) * u
            lifted.append(q)
        leftover = [c for c in find_contacts(lifted) if not c[3]]
        if not leftover:
            new_ledger = replace(tm.congestion_ledger)
            prov = dict(tm.provenance)
            prov["lift"] = {"tracks": int(m), "colors_used": int(color.max()) + 1,
                            "conflict_pairs": sum(len(v) for v in conflicts.values()) // 2}
            return ThickMap(tm.dim, tm.source, tm.target_radius,
                            tm.vertex_images, lifted, tm.edge_stage,
                            tm.piece_of_vertex, new_ledger, tm.packing, prov)
    raise TrackOverflow("no offset direction realized disjoint tracks")

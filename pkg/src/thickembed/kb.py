"""Randomized reconnection of matching edges through a ball.

Each matching edge with endpoints placed on the sphere becomes a three
segment polyline through two waypoints drawn uniformly from the half-radius
ball. A routing is accepted when no witness unit ball meets more than the
configured number of polylines; otherwise only the edges through overloaded
balls are redrawn, for a bounded number of rounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CongestionUnachievable


@dataclass
class Matching:
    """Disjoint edges with endpoints placed on a sphere.

    `edges` pairs endpoint ids; `placements` maps each id to its point.
    Every endpoint id appears in exactly one edge.
    """

    edges: list
    placements: dict

    def validate(self, min_separation: float = 1.0, radius: float | None = None):
        ids = [e for pair in self.edges for e in pair]
        if len(ids) != len(set(ids)):
            raise ValueError("an endpoint appears in more than one edge")
        if set(ids) != set(self.placements):
            raise ValueError("edge endpoints and placements disagree")
        pts = np.asarray([self.placements[i] for i in sorted(self.placements)],
                         dtype=np.float64)
        if radius is not None and len(pts):
            norms = np.sqrt((pts ** 2).sum(axis=1))
            if np.max(np.abs(norms - radius)) > 1e-6 * max(1.0, radius):
                raise ValueError("placements do not lie on the sphere")
        if len(pts) > 1 and min_separation > 0:
            from scipy.spatial import cKDTree
            tree = cKDTree(pts)
            pairs = tree.query_pairs(min_separation * (1 - 1e-12))
            if pairs:
                raise ValueError(
                    f"placements closer than {min_separation}: {sorted(pairs)[0]}")


@dataclass(frozen=True)
class KBConfig:
    congestion_cap: int = 64
    max_retries: int = 5
    seed: int = 0
    capacity_coeff: float = 1.0
    witness_resolution: float = 0.5
    min_separation: float = 1.0


@dataclass
class KBRouting:
    polylines: list
    congestion_max: int
    histogram: dict
    rounds: int
    witness_resolution: float


# ---------------------------------------------------------------------------
# congestion counting


def _segment_point_dist_sq(p0, p1, q):
    """Squared distances from points q (M, n) to the segment p0-p1."""
    d = p1 - p0
    dd = float(d @ d)
    if dd == 0.0:
        r = q - p0
        return (r * r).sum(axis=1)
    t = np.clip((q - p0) @ d / dd, 0.0, 1.0)
    r = q - p0 - t[:, None] * d
    return (r * r).sum(axis=1)


def _segments_of(paths):
    p0, p1, owner = [], [], []
    for i, path in enumerate(paths):
        pts = np.asarray(path, dtype=np.float64)
        if len(pts) < 2:
            continue
        a, b = pts[:-1], pts[1:]
        keep = np.any(a != b, axis=1)
        k = int(keep.sum())
        if k == 0:
            continue
        p0.append(a[keep])
        p1.append(b[keep])
        owner.append(np.full(k, i, dtype=np.int64))
    if not p0:
        return (np.empty((0, 0)), np.empty((0, 0)), np.empty(0, dtype=np.int64))
    return np.concatenate(p0), np.concatenate(p1), np.concatenate(owner)


_PACK_HALF = 1 << 12


def _pack_centers(cc: np.ndarray) -> np.ndarray:
    """Pack integer grid coordinates into one int64 key per row."""
    if len(cc) and int(np.abs(cc).max()) >= _PACK_HALF:
        raise ValueError("witness center coordinates exceed the packing range")
    key = np.zeros(len(cc), dtype=np.int64)
    for a in range(cc.shape[1]):
        key = key * (2 * _PACK_HALF) + (cc[:, a] + _PACK_HALF)
    return key


def _congestion_detail(paths, resolution=0.5):
    """(max, histogram, packed ball keys, counts, incidences) over witness
    unit balls on the resolution grid. An incidence is a (packed center
    key, path id) pair with the closed unit ball about the center meeting
    the path; unpack keys with _unpack_centers.

    Candidates come from samples spaced 2*resolution along each segment:
    any center within 1 of the segment is within sqrt(1 + resolution^2) of
    some sample, so dilating the snapped samples by a grid ball of that
    radius plus the snap error covers everything; an exact point-to-segment
    test then filters, making the counts exact for the witness family."""
    p0, p1, owner = _segments_of(paths)
    if len(owner) == 0:
        return 0, {}, np.empty(0, np.int64), np.empty(0, np.int64), \
            (np.empty(0, np.int64), np.empty(0, np.int64))
    dim = p0.shape[1]
    res = float(resolution)

    h = 2.0 * res                      # sample pitch along segments
    rho_cov = np.sqrt(1.0 + (h / 2.0) ** 2) + 1e-9
    reach = rho_cov + res * np.sqrt(dim) / 2.0 + 1e-9
    m = int(np.ceil(reach / res))
    ax = np.arange(-m, m + 1, dtype=np.int64)
    mesh = np.meshgrid(*([ax] * dim), indexing="ij")
    offs = np.stack([g.ravel() for g in mesh], axis=1).astype(np.int32)
    offs = offs[(offs.astype(np.float64) ** 2).sum(axis=1) * res * res <= reach ** 2]

    lens = np.sqrt(((p1 - p0) ** 2).sum(axis=1))
    nsamp = np.maximum(1, np.ceil(lens / h).astype(np.int64))

    # one sample row per (segment, t) with t = 0 .. 1 in nsamp steps;
    # every candidate is exact-tested against its own generating segment
    counts_all = nsamp + 1
    seg_of_sample = np.repeat(np.arange(len(p0), dtype=np.int64), counts_all)
    pos = np.arange(len(seg_of_sample)) - np.repeat(
        np.concatenate([[0], np.cumsum(counts_all)[:-1]]), counts_all)
    t_all = pos / nsamp[seg_of_sample]

    offs_phys = offs.astype(np.float32) * np.float32(res)
    offs_sq = (offs_phys ** 2).sum(axis=1)
    n_paths = int(owner.max()) + 1
    if n_paths >= 1 << 20:
        raise ValueError("too many paths for key packing")
    key_off = np.zeros(len(offs), dtype=np.int64)
    base = np.int64(2 * _PACK_HALF)
    for a in range(dim):
        key_off = key_off * base + offs[:, a]

    # per-segment data in float32 for the bulk distance test
    p0f = p0.astype(np.float32)
    df = (p1 - p0).astype(np.float32)
    ddf = (df * df).sum(axis=1)
    inv_ddf = np.where(ddf > 0, 1.0 / np.maximum(ddf, 1e-30), 0.0).astype(np.float32)
    one_lo = np.float32(1.0 - 1e-3)
    one_hi = np.float32(1.0 + 1e-3)
    near_cut = np.float32((rho_cov + 1e-3) ** 2)

    combo_parts = []
    samp_chunk = max(256, int(8e6) // max(1, len(offs)))
    for lo in range(0, len(seg_of_sample), samp_chunk):
        hi = min(len(seg_of_sample), lo + samp_chunk)
        sid = seg_of_sample[lo:hi]
        t = t_all[lo:hi]
        samples = p0[sid] + t[:, None] * (p1[sid] - p0[sid])
        snapped = np.rint(samples / res)
        snapped_i = snapped.astype(np.int64)
        if len(snapped_i) and int(np.abs(snapped_i).max()) + len(offs) >= _PACK_HALF:
            raise ValueError("witness center coordinates exceed the packing range")
        key_samp = np.zeros(len(snapped_i), dtype=np.int64)
        for a in range(dim):
            key_samp = key_samp * base + (snapped_i[:, a] + _PACK_HALF)
        snap_phys = (snapped * res).astype(np.float32)
        # |snapped*res + off*res - sample|^2 expanded so the cross term is
        # one matmul; float32 with a conservative slack
        fr = snap_phys - samples.astype(np.float32)
        near_sq = ((fr ** 2).sum(axis=1)[:, None]
                   + 2.0 * fr @ offs_phys.T + offs_sq[None, :])
        si, oi = np.nonzero(near_sq <= near_cut)
        near_val = near_sq[si, oi]
        # a center within 1 of its sample meets the segment outright; only
        # the shell between 1 and rho_cov needs the segment distance
        sure = near_val <= one_lo
        unc = np.nonzero(~sure)[0]
        siu, oiu = si[unc], oi[unc]
        ssu = sid[siu]
        w = snap_phys[siu] + offs_phys[oiu] - p0f[ssu]
        tt = np.clip((w * df[ssu]).sum(axis=1) * inv_ddf[ssu], 0.0, 1.0)
        rvec = w - tt[:, None] * df[ssu]
        d_sq = (rvec * rvec).sum(axis=1)
        hit_u = d_sq <= one_lo
        band = (~hit_u) & (d_sq <= one_hi)
        if band.any():
            # float64 re-check on the uncertainty band keeps boundary
            # cases exact
            ssb = ssu[band]
            d64 = p1[ssb] - p0[ssb]
            dd64 = (d64 * d64).sum(axis=1)
            cc_band = snapped_i[siu[band]] + offs[oiu[band]]
            w64 = cc_band.astype(np.float64) * res - p0[ssb]
            t64 = np.zeros(len(ssb))
            nz = dd64 > 0
            t64[nz] = np.clip((w64[nz] * d64[nz]).sum(axis=1) / dd64[nz], 0.0, 1.0)
            r64 = w64 - t64[:, None] * d64
            exact = (r64 * r64).sum(axis=1) <= 1.0
            hit_u[np.nonzero(band)[0][exact]] = True
        keep = np.concatenate([np.nonzero(sure)[0], unc[hit_u]])
        keys = key_samp[si[keep]] + key_off[oi[keep]]
        combo_parts.append(keys * n_paths + owner[sid[si[keep]]])

    combo = np.unique(np.concatenate(combo_parts))
    pkey = combo // n_paths
    pid = combo % n_paths
    # combo sorted implies pkey sorted; run lengths are the ball counts
    if len(pkey) == 0:
        return 0, {}, np.empty(0, np.int64), np.empty(0, np.int64), (pkey, pid)
    boundary = np.concatenate([[True], pkey[1:] != pkey[:-1]])
    starts = np.nonzero(boundary)[0]
    counts = np.diff(np.concatenate([starts, [len(pkey)]]))
    vals, freqs = np.unique(counts, return_counts=True)
    hist = {int(v): int(f) for v, f in zip(vals, freqs)}
    cmax = int(counts.max()) if len(counts) else 0
    return cmax, hist, pkey[starts], counts.astype(np.int64), (pkey, pid)


def _unpack_centers(keys: np.ndarray, dim: int) -> np.ndarray:
    out = np.empty((len(keys), dim), dtype=np.int64)
    k = keys.copy()
    for a in range(dim - 1, -1, -1):
        out[:, a] = k % (2 * _PACK_HALF) - _PACK_HALF
        k //= 2 * _PACK_HALF
    return out


def congestion(paths, resolution: float = 0.5):
    """Maximum number of distinct polylines meeting any witness unit ball
    (centers on the resolution grid), plus the full histogram."""
    cmax, hist, _, _, _ = _congestion_detail(paths, resolution)
    return cmax, hist


# ---------------------------------------------------------------------------
# routing


def _uniform_ball(rng, count, dim, radius):
    out = np.empty((count, dim))
    filled = 0
    while filled < count:
        draw = rng.uniform(-radius, radius, size=(2 * (count - filled) + 8, dim))
        good = draw[(draw ** 2).sum(axis=1) <= radius * radius]
        take = min(len(good), count - filled)
        out[filled: filled + take] = good[:take]
        filled += take
    return out


def kb_route(m: Matching, R: float, cfg: KBConfig | None = None) -> KBRouting:
    """Extend a sphere placement of matching endpoints to polylines through
    the ball, each with two uniform waypoints in the half-radius ball,
    accepted under the witness-ball congestion cap."""
    if cfg is None:
        cfg = KBConfig()
    if not m.edges:
        return KBRouting([], 0, {}, 0, cfg.witness_resolution)
    pts = np.asarray(next(iter(m.placements.values())), dtype=np.float64)
    dim = pts.shape[0]
    if R ** (dim - 1) < cfg.capacity_coeff * len(m.edges):
        raise ValueError(
            f"R^(n-1) = {R ** (dim - 1):.1f} below {cfg.capacity_coeff} * "
            f"{len(m.edges)} edges")
    m.validate(min_separation=cfg.min_separation, radius=R)

    rng = np.random.default_rng(cfg.seed)
    n_e = len(m.edges)
    a = np.asarray([m.placements[e[0]] for e in m.edges], dtype=np.float64)
    b = np.asarray([m.placements[e[1]] for e in m.edges], dtype=np.float64)
    wp = _uniform_ball(rng, 2 * n_e, dim, R / 2.0).reshape(n_e, 2, dim)

    def lines():
        return [np.stack([a[i], wp[i, 0], wp[i, 1], b[i]]) for i in range(n_e)]

    rounds = 0
    while True:
        paths = lines()
        cmax, hist, ball_keys, counts, (ckey, pid) = _congestion_detail(
            paths, cfg.witness_resolution)
        if cmax <= cfg.congestion_cap:
            return KBRouting(paths, cmax, hist, rounds, cfg.witness_resolution)
        if rounds >= cfg.max_retries:
            worst_key = ball_keys[int(np.argmax(counts))]
            worst = _unpack_centers(np.asarray([worst_key]), dim)[0] \
                * cfg.witness_resolution
            raise CongestionUnachievable(
                f"congestion {cmax} > cap {cfg.congestion_cap} after "
                f"{rounds} retries; witness ball at {tuple(worst.tolist())}")
        # redraw only the edges meeting an overloaded ball
        bad_keys = ball_keys[counts > cfg.congestion_cap]
        bad = np.zeros(n_e, dtype=bool)
        mask = np.isin(ckey, bad_keys)
        bad[np.unique(pid[mask])] = True
        idx = np.nonzero(bad)[0]
        wp[idx] = _uniform_ball(rng, 2 * len(idx), dim, R / 2.0).reshape(len(idx), 2, dim)
        rounds += 1

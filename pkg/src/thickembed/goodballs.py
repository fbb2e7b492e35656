"""Good-ball certification and the recursive boundary partition.

A lattice ball B is good for a residual domain W when

  (1) the boundary area of W carried by B exceeds A times the cut area
      created by removing W & B,
  (2) that carried boundary area exceeds delta * r^(n-1), and
  (3) no witness sub-ball of B concentrates more than A_tilde * A * s^(n-1)
      of the boundary of W.

All areas are exact face counts (scale 1); radii run over half-integers, so
every threshold comparison below is a dyadic-rational comparison and exact.

The search works on a doubled lattice: a cell with min-corner c sits at
doubled coordinate 2c+1, witness centers are the doubled-lattice points with
all-even (lattice vertices) or all-odd (cell centers) coordinates, and the
squared distance from a center to a closed cell is sum(max(0, |u_i|-1)^2)/4
for the doubled offset u. Boundary-concentration maxima over all witness
centers are then plain convolutions with radius stencils.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from . import voxel
from .errors import CostBoundViolated, NoGoodBall
from .voxel import GBall, VoxelDomain, boundary_area, g_ball


@dataclass(frozen=True)
class PartitionConfig:
    """Constants of the partition. Defaults resolve to the largest delta
    with (A*delta)^(n/(n-1)) <= delta and to A' = 2/((1-1/A)*delta)."""

    dim: int = 3
    A: float = 8.0
    A_tilde: float = 32.0
    delta: float | None = None
    A_prime: float | None = None
    M_cap: int = 64
    margin: float = 0.5

    def __post_init__(self):
        if self.A <= 1 or self.A_tilde <= 1:
            raise ValueError("A and A_tilde must exceed 1")
        n = self.dim
        if self.delta is None:
            object.__setattr__(self, "delta", min(0.01, self.A ** (-n)))
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.A_prime is None:
            object.__setattr__(self, "A_prime", 2.0 / ((1 - 1 / self.A) * self.delta))
        # contradiction requirement of the radius-growth case
        if (self.A * self.delta) ** (n / (n - 1)) > self.delta * (1 + 1e-12):
            raise ValueError(
                f"(A*delta)^(n/(n-1)) <= delta fails for A={self.A}, delta={self.delta}")
        # final inductive inequality needs slack
        if self.A_prime * (1 - 1 / self.A) * self.delta < 1 + self.margin:
            raise ValueError("A'*(1-1/A)*delta must be at least 1 + margin")

    @classmethod
    def embedding_profile(cls, dim: int = 3) -> "PartitionConfig":
        """Constants tuned for end-to-end embedding runs: the smaller A
        permits delta = A^-n = 1/64, so the growth-case radius floor
        delta^(-1/(n-1)) drops to 8 and the routing balls stay small."""
        return cls(dim=dim, A=4.0, A_tilde=32.0)

    @property
    def radius_floor(self) -> float:
        """delta^(-1/(n-1)), the minimum radius of a growth-case ball."""
        return self.delta ** (-1.0 / (self.dim - 1))


@dataclass
class ConditionReport:
    cond1: bool
    cond2: bool
    cond3: bool
    boundary_in_ball: float
    cut_area: float
    cond2_threshold: float
    cond3_witness: GBall | None = None
    cond3_witness_count: float | None = None

    @property
    def all_pass(self) -> bool:
        return self.cond1 and self.cond2 and self.cond3


@dataclass
class PieceRecord:
    """Provenance of one partition step: which case produced the ball and
    the residual it was certified against."""

    piece: VoxelDomain
    ball: GBall
    case: str
    residual: VoxelDomain
    report: ConditionReport
    boundary_before: float
    boundary_after: float
    removed_area: float
    added_area: float


@dataclass
class GoodBallPartition:
    domain: VoxelDomain
    records: list[PieceRecord]
    cost: float
    config: PartitionConfig | None = None

    @property
    def pieces(self):
        return [(rec.piece, rec.ball) for rec in self.records]

    @property
    def cost_ratio(self) -> float:
        return self.cost / boundary_area(self.domain)

    def radii(self):
        return [rec.ball.radius for rec in self.records]


# ---------------------------------------------------------------------------
# doubled-lattice machinery


def _doubled_field(W: VoxelDomain) -> np.ndarray:
    """Exposed-face counts placed at the odd positions of the doubled box."""
    shape = tuple(2 * s + 1 for s in W.mask.shape)
    out = np.zeros(shape, dtype=np.float64)
    out[tuple(slice(1, None, 2) for _ in range(W.dim))] = W.exposed_counts
    return out


_STENCILS: dict = {}


def _ball_stencil(dim: int, k: int) -> np.ndarray:
    """Indicator of doubled offsets u with sum(max(0,|u_i|-1)^2) <= k^2,
    i.e. cells within half-radius k/2 of a doubled-lattice center."""
    key = (dim, k)
    st = _STENCILS.get(key)
    if st is None:
        ax = np.abs(np.arange(-(k + 1), k + 2, dtype=np.int64))
        g = np.maximum(0, ax - 1) ** 2
        total = np.zeros((len(ax),) * dim, dtype=np.int64)
        for a in range(dim):
            view = [None] * dim
            view[a] = slice(None)
            total = total + g[tuple(view)]
        st = (total <= k * k).astype(np.float64)
        _STENCILS[key] = st
    return st


def _witness_parity_mask(shape) -> np.ndarray:
    """True at doubled positions that are lattice vertices (all even) or
    cell centers (all odd); mixed-parity points are not witness centers."""
    dim = len(shape)
    even = np.ones((), dtype=bool)
    odd = np.ones((), dtype=bool)
    for a in range(dim):
        par = (np.arange(shape[a]) % 2 == 0)
        view = [None] * dim
        view[a] = slice(None)
        even = even & par[tuple(view)]
        odd = odd & ~par[tuple(view)]
    return even | odd


class _Sweeper:
    """Counts, for every witness center of W's bounding box at once, the
    boundary area of W inside the ball of a given half-radius."""

    def __init__(self, W: VoxelDomain):
        self.W = W
        self.field = _doubled_field(W)
        self.parity = _witness_parity_mask(self.field.shape)
        self._field_fft = None
        self._fshape = None

    def counts(self, k: int) -> np.ndarray:
        # linear convolution, cropped so index d is the count at center d
        st = _ball_stencil(self.W.dim, k)
        fshape = tuple(sfft.next_fast_len(a + b - 1)
                       for a, b in zip(self.field.shape, st.shape))
        if self._fshape != fshape:
            self._fshape = fshape
            self._field_fft = sfft.rfftn(self.field, fshape)
        conv = sfft.irfftn(self._field_fft * sfft.rfftn(st, fshape), fshape)
        crop = tuple(slice((b - 1) // 2, (b - 1) // 2 + a)
                     for a, b in zip(self.field.shape, st.shape))
        conv = conv[crop]
        out = np.rint(conv)
        if np.abs(conv - out).max() > 0.25:
            raise AssertionError("FFT rounding exceeded the exactness margin")
        return out

    def center_at(self, index) -> tuple:
        q2 = 2 * self.W.origin + np.asarray(index, dtype=np.int64)
        return tuple(float(x) / 2.0 for x in q2)


def _first_concentration_violation(sweep: _Sweeper, cfg: PartitionConfig,
                                   f_total: float):
    """Smallest half-integer radius (as doubled k >= 2) and witness center
    with boundary concentration >= A_tilde*A*(k/2)^(n-1), or None."""
    n = cfg.dim
    aa = cfg.A_tilde * cfg.A
    k = 2
    while aa * (k / 2.0) ** (n - 1) <= f_total:
        thresh = aa * (k / 2.0) ** (n - 1)
        counts = sweep.counts(k)
        vio = (counts >= thresh) & sweep.parity
        if vio.any():
            pos = np.argwhere(vio)[0]
            return k, tuple(int(x) for x in pos)
        k += 1
    return None


def _condition3(W: VoxelDomain, B: GBall, cfg: PartitionConfig,
                boundary_in_ball: float, sweep: _Sweeper | None = None):
    """Scan every witness sub-ball of B with s > 1/2. A sub-ball violates
    when it is contained in B cell-wise and concentrates >= A_tilde*A*s^(n-1)
    boundary area. Radii above (F/(A_tilde*A))^(1/(n-1)) cannot violate
    because a sub-ball of B never holds more than F = vol(dW & B)."""
    n = cfg.dim
    aa = cfg.A_tilde * cfg.A
    if sweep is None:
        sweep = _Sweeper(W)
    k = 2
    while aa * (k / 2.0) ** (n - 1) <= boundary_in_ball:
        thresh = aa * (k / 2.0) ** (n - 1)
        counts = sweep.counts(k)
        vio = (counts >= thresh) & sweep.parity
        for pos in np.argwhere(vio):
            center = sweep.center_at(pos)
            sub = g_ball(n, center, k / 2.0)
            if B.region.contains_many(sub.cell_array()).all():
                cnt = float(counts[tuple(pos)])
                return False, sub, cnt
        k += 1
    return True, None, None


def check_conditions(W: VoxelDomain, B: GBall, cfg: PartitionConfig,
                     _sweep: _Sweeper | None = None) -> ConditionReport:
    """Evaluate the three good-ball conditions of B against W."""
    n = cfg.dim
    lhs = B.boundary_area_within(W)
    cut = B.cut_area(W)
    cond2_thresh = cfg.delta * B.radius ** (n - 1)
    cond1 = lhs > cfg.A * cut
    cond2 = lhs > cond2_thresh
    cond3, witness, wcount = _condition3(W, B, cfg, lhs, _sweep)
    return ConditionReport(cond1, cond2, cond3, lhs, cut, cond2_thresh,
                           witness, wcount)


# ---------------------------------------------------------------------------
# per-center radius profiles


def _deepest_cell(W: VoxelDomain) -> np.ndarray:
    """Mask index of a cell maximizing taxicab distance to the boundary,
    ties broken lexicographically."""
    padded = np.pad(W.mask, 1)
    dist = ndimage.distance_transform_cdt(padded, metric="taxicab")
    dist = dist[tuple(slice(1, -1) for _ in range(W.dim))]
    best = np.argwhere(dist == dist.max())[0]
    return best


def _entry_radii(W: VoxelDomain, ip: np.ndarray) -> np.ndarray:
    """Per cell, the smallest doubled radius k at which the cell joins the
    ball about the center of cell ip: k = ceil(sqrt(sum(max(0,|u|-1)^2)))."""
    dim = W.dim
    d4 = np.zeros(W.mask.shape, dtype=np.int64)
    for a in range(dim):
        u = 2 * (np.arange(W.mask.shape[a], dtype=np.int64) - int(ip[a]))
        g = np.maximum(0, np.abs(u) - 1) ** 2
        view = [None] * dim
        view[a] = slice(None)
        d4 = d4 + g[tuple(view)]
    k = np.floor(np.sqrt(d4.astype(np.float64))).astype(np.int64)
    k[k * k < d4] += 1
    return k


def _center_profiles(W: VoxelDomain, ip: np.ndarray):
    """Arrays indexed by doubled radius k:
    bound[k]   = boundary area of W inside the ball of radius k/2,
    straddle[k] = faces between two W-cells with exactly one inside,
    plus the covering radius (doubled) at which the ball holds all of W."""
    entry = _entry_radii(W, ip)
    cells = W.mask
    cover = int(entry[cells].max())
    kmax = max(cover, 6) + 2
    bound = np.zeros(kmax + 1, dtype=np.int64)
    ke = np.minimum(entry[cells], kmax)
    np.add.at(bound, ke, W.exposed_counts[cells])
    bound = np.cumsum(bound)
    diff = np.zeros(kmax + 2, dtype=np.int64)
    for a in range(W.dim):
        lo_sl = [slice(None)] * W.dim
        hi_sl = [slice(None)] * W.dim
        lo_sl[a] = slice(0, -1)
        hi_sl[a] = slice(1, None)
        pair = cells[tuple(lo_sl)] & cells[tuple(hi_sl)]
        e1 = entry[tuple(lo_sl)][pair]
        e2 = entry[tuple(hi_sl)][pair]
        lo = np.minimum(e1, e2)
        hi = np.maximum(e1, e2)
        np.add.at(diff, np.minimum(lo, kmax + 1), 1)
        np.add.at(diff, np.minimum(hi, kmax + 1), -1)
    straddle = np.cumsum(diff)[: kmax + 1]
    return bound, straddle, cover


# ---------------------------------------------------------------------------
# good-ball search


def _verified(W, ball, case, cfg, sweep, sweep_clean):
    """Final certification of a candidate. A clean global concentration
    sweep already certifies condition (3) for every ball, so only the two
    direct conditions are re-evaluated in that path."""
    n = cfg.dim
    lhs = ball.boundary_area_within(W)
    cut = ball.cut_area(W)
    cond1 = lhs > cfg.A * cut
    cond2 = lhs > cfg.delta * ball.radius ** (n - 1)
    if sweep_clean:
        report = ConditionReport(cond1, cond2, True, lhs, cut,
                                 cfg.delta * ball.radius ** (n - 1))
    else:
        report = check_conditions(W, ball, cfg, _sweep=sweep)
    if not report.all_pass:
        raise NoGoodBall(
            f"{case} ball r={ball.radius} failed certification "
            f"(cond1={report.cond1}, cond2={report.cond2}, cond3={report.cond3}); "
            "partition constants are inconsistent")
    return ball, case, report


def _find_good_ball(W: VoxelDomain, cfg: PartitionConfig):
    if cfg.dim != W.dim:
        raise ValueError("config dimension does not match the domain")
    n = W.dim
    sweep = _Sweeper(W)

    if W.n_cells == 1:
        # volume-1 base case: the ball of radius 2 about the cell center
        center = tuple(float(c) + 0.5 for c in W.cell_array()[0])
        ball = g_ball(n, center, 2.0)
        return _verified(W, ball, "base", cfg, sweep, sweep_clean=False)

    f_total = float(W.boundary_face_count)
    violation = _first_concentration_violation(sweep, cfg, f_total)

    if violation is not None:
        # Case 1: some ball over-concentrates the boundary. Shrink a minimal
        # violating ball by n; re-descend through condition-3 witnesses when
        # the shrunk ball still contains a violating sub-ball.
        k, pos = violation
        center = sweep.center_at(pos)
        for _ in range(64):
            t = k / 2.0
            if t <= n:
                raise NoGoodBall(
                    f"over-concentrated ball of radius {t} leaves no room to "
                    "shrink by n; A_tilde is too small for this domain")
            ball = g_ball(n, center, t - n)
            report = check_conditions(W, ball, cfg, _sweep=sweep)
            if report.all_pass:
                return ball, "case1", report
            if report.cond3_witness is None:
                raise NoGoodBall(
                    "shrunk over-concentrated ball failed conditions (1)/(2); "
                    "partition constants are inconsistent")
            k = int(round(2 * report.cond3_witness.radius))
            center = report.cond3_witness.center
        raise NoGoodBall("no minimal over-concentrated ball found")

    # Every witness ball now satisfies condition (3) outright.
    ip = _deepest_cell(W)
    center = tuple(float(W.origin[a] + ip[a]) + 0.5 for a in range(n))
    bound, straddle, cover = _center_profiles(W, ip)

    # Case 2: a free radius below the growth floor cuts nothing. Radii
    # start at 2 like the base case, which also keeps the doubled routing
    # ball around every piece big enough for its shell.
    floor = cfg.radius_floor
    for k in range(4, len(straddle)):
        if k / 2.0 >= floor:
            break
        if straddle[k] == 0:
            ball = g_ball(n, center, k / 2.0)
            return _verified(W, ball, "case2", cfg, sweep, sweep_clean=True)

    # Case 3: grow past the floor until the cut drops below delta * r^(n-1).
    k = int(math.ceil(2 * floor))
    if (k / 2.0) < floor:
        k += 1
    while True:
        s = straddle[k] if k < len(straddle) else 0
        if s < cfg.delta * (k / 2.0) ** (n - 1):
            ball = g_ball(n, center, k / 2.0)
            return _verified(W, ball, "case3", cfg, sweep, sweep_clean=True)
        k += 1

def find_good_ball(W: VoxelDomain, cfg: PartitionConfig) -> GBall:
    """A ball certified good for W, searched in case order: shrink an
    over-concentrated ball if one exists, otherwise try a cut-free radius
    below the growth floor at the deepest cell, otherwise grow from the
    floor until the cut is small."""
    ball, _case, _report = _find_good_ball(W, cfg)
    return ball


def partition(U: VoxelDomain, cfg: PartitionConfig | None = None) -> GoodBallPartition:
    """Cut U into pieces, each inside a certified good ball, with total
    cost sum(r_i^(n-1)) below A' * vol(boundary of U).

    Residual components are processed independently; every cut strictly
    shrinks the residual, and the per-step boundary ledger
    b_new <= b_old - (1 - 1/A) * removed is asserted exactly.
    """
    if cfg is None:
        cfg = PartitionConfig(dim=U.dim)
    if U.scale != 1.0:
        raise ValueError("partition expects a unit-scale domain; renormalize first")
    from collections import deque

    queue = deque(U.components())
    records: list[PieceRecord] = []
    while queue:
        W = queue.popleft()
        ball, case, report = _find_good_ball(W, cfg)
        piece = voxel.intersect(W, ball.region)
        if piece is None:
            raise NoGoodBall("certified ball misses the residual entirely")
        removed = report.boundary_in_ball
        added = report.cut_area
        b_old = boundary_area(W)
        residual = voxel.subtract(W, ball.region)
        b_new = boundary_area(residual) if residual is not None else 0.0
        # exact identity: cutting removes `removed` and adds `added`
        if abs(b_new - (b_old - removed + added)) > 1e-6:
            raise AssertionError("boundary ledger identity failed")
        if b_new > b_old - (1 - 1 / cfg.A) * removed + 1e-9:
            raise AssertionError("boundary decrease ledger violated")
        records.append(PieceRecord(piece, ball, case, W, report,
                                   b_old, b_new, removed, added))
        if residual is not None:
            queue.extend(residual.components())

    cost = float(sum(rec.ball.radius ** (U.dim - 1) for rec in records))
    bound = cfg.A_prime * boundary_area(U)
    if not cost < bound:
        raise CostBoundViolated(f"partition cost {cost} >= A' * area = {bound}")

    # pieces must tile the domain
    lo = U.origin
    acc = np.zeros(U.mask.shape, dtype=np.int16)
    for rec in records:
        sl = tuple(slice(int(o - l), int(o - l + s))
                   for o, l, s in zip(rec.piece.origin, lo, rec.piece.mask.shape))
        acc[sl] += rec.piece.mask
    if not np.array_equal(acc > 0, U.mask) or acc.max() > 1:
        raise AssertionError("partition pieces do not tile the domain")

    return GoodBallPartition(U, records, cost, cfg)

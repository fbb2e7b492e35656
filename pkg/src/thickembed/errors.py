"""Exception types raised across the toolkit."""


class ThickEmbedError(Exception):
    """Base class for all toolkit errors."""


# voxel domains

class EmptyDomain(ThickEmbedError):
    """Domain construction received an empty cell set."""


class BadDimension(ThickEmbedError):
    """Dimension outside the supported range."""


class DegenerateIntersection(ThickEmbedError):
    """A grid segment lies inside a boundary face (cannot happen with the
    half-offset grid convention; kept for misconfigured scales)."""


# good-ball partition

class NoGoodBall(ThickEmbedError):
    """No good ball could be certified for the residual domain. Indicates
    partition constants violating their mutual constraints."""


class CostBoundViolated(ThickEmbedError):
    """Partition finished but the cost bound against A' * vol(boundary) failed."""


# flow routing

class PlacementOutsideBall(ThickEmbedError):
    """A placement point lies outside the routing ball."""


class InfeasibleDecomposition(ThickEmbedError):
    """Flow value below total demand; no full path decomposition exists."""


class DensityViolation(ThickEmbedError):
    """Placements exceed the per-ball density bound required for routing."""


class RoutingInfeasible(ThickEmbedError):
    """Max-flow below demand; routing constants are too small."""


# randomized reconnection

class CongestionUnachievable(ThickEmbedError):
    """Rerouting retries exhausted without meeting the congestion cap."""


# embedding assembly

class PackingFailed(ThickEmbedError):
    """Disjoint ball packing with disjoint radial shadows not found at the
    configured radius constant."""


class TrackOverflow(ThickEmbedError):
    """Local congestion exceeds the number of parallel tracks available."""


# analysis

class BadK(ThickEmbedError):
    """k outside 1..n for a k-dilation computation."""


class PointOnCurve(ThickEmbedError):
    """Winding number requested at a point lying on the curve."""


class ResolutionTooCoarse(ThickEmbedError):
    """Voxel pitch too coarse: the carved tube merged or disconnected."""


class NotBoundaryRespecting(ThickEmbedError):
    """Candidate map does not send the boundary sphere into the target boundary."""


class NoRegularValue(ThickEmbedError):
    """No usable fiber found over the sampled regular values."""


class EmptyResult(ThickEmbedError):
    """Implicit voxelization produced no cells."""

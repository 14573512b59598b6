"""Vertex-representation polytope arithmetic.

Every set here is a convex polytope carried as an explicit vertex matrix
(rows are points).  Point membership is decided by LP feasibility over
convex-combination weights; a cheap NNLS pass supplies a verified
certificate (or a rigorous infeasibility bound) first, so the LP only runs
in the narrow ambiguous band.  Single-point decisions never convert to a
halfspace description; only the batched `HullMembership` tester builds
facet equations, and it falls back to the LP on degenerate geometry.

The exact ReLU image (`exact_relu`) keeps both branches of every
coordinate split and is meant for desk-scale oracle checks, not for
propagation through real networks.
"""

import itertools
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog, nnls
from scipy.spatial import ConvexHull, QhullError

from .errors import BudgetExceeded, ConfigError, DegenerateSegment, NumericalError

# Coordinates within EPS_SIGN of zero count as lying on the splitting plane;
# the branch test classifies exact zeros as positive.
EPS_SIGN = 1e-9
# L-inf tolerance below which two vertices are merged as duplicates.
EPS_DUP = 1e-9
# Default tolerance for LP membership decisions.
LP_TOL = 1e-6
# Guard added to strict inequalities so returned witnesses stay robust
# under the plain tolerance check.
STRICT_EPS = 1e-9
# exact_relu refuses to grow past this many polytopes.
DEFAULT_MEMBER_CAP = 4096


def dedup_rows(points: np.ndarray, eps: float = EPS_DUP) -> np.ndarray:
    """Drop rows that lie within L-inf eps of an earlier row.

    Near-duplicate merging is quadratic and only applied to the small sets
    the propagation touches; very large stacks get exact-duplicate removal.
    """
    m = len(points)
    if m <= 1:
        return points
    if m <= 2048:
        close = np.abs(points[:, None, :] - points[None, :, :]).max(axis=2) <= eps
        drop = np.tril(close, -1).any(axis=1)
        return points if not drop.any() else points[~drop]
    _, idx = np.unique(points, axis=0, return_index=True)
    if len(idx) == m:
        return points
    return points[np.sort(idx)]


@dataclass(frozen=True)
class VPolytope:
    """Convex polytope given by its vertex matrix (M points x D dims)."""

    vertices: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.vertices, dtype=float)
        if arr.ndim != 2:
            raise ConfigError(f"vertex matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ConfigError(f"vertex matrix must be at least 1x1, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericalError("vertex matrix contains non-finite entries")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "vertices", arr)
        object.__setattr__(self, "_bbox", (arr.min(axis=0), arr.max(axis=0)))

    @classmethod
    def from_points(cls, points, dedup: bool = True) -> "VPolytope":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(1, -1)
        if dedup:
            pts = dedup_rows(pts)
        return cls(pts)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        return self._bbox

    def __repr__(self):
        return f"VPolytope({self.num_vertices} vertices, dim={self.dim})"


@dataclass(frozen=True)
class PolytopeSet:
    """Ordered union of polytopes sharing one ambient dimension."""

    members: Tuple[VPolytope, ...]

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ConfigError("PolytopeSet must contain at least one polytope")
        dim = members[0].dim
        if any(m.dim != dim for m in members):
            raise ConfigError("PolytopeSet members disagree on dimension")
        object.__setattr__(self, "members", members)

    @property
    def dim(self) -> int:
        return self.members[0].dim

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def stacked_vertices(self) -> np.ndarray:
        return np.vstack([m.vertices for m in self.members])


@dataclass(frozen=True)
class SplitResult:
    """Outcome of applying ReLU to one coordinate of a polytope.

    `top` is the part with the coordinate clamped at >= 0; `bottom` is the
    projection of the non-positive part onto the coordinate plane.
    """

    top: Optional[VPolytope]
    bottom: Optional[VPolytope]

    def __post_init__(self):
        if self.top is None and self.bottom is None:
            raise ConfigError("SplitResult needs at least one of top/bottom")

    def parts(self) -> List[VPolytope]:
        return [p for p in (self.top, self.bottom) if p is not None]


def affine_map(p: VPolytope, weights, bias) -> VPolytope:
    """Apply x -> W x + b to every vertex; row count is preserved."""
    W = np.asarray(weights, dtype=float)
    b = np.asarray(bias, dtype=float)
    if W.ndim != 2:
        raise ConfigError(f"weight matrix must be 2-D, got shape {W.shape}")
    if W.shape[1] != p.dim:
        raise ConfigError(
            f"weight matrix expects dim {W.shape[1]}, polytope has dim {p.dim}"
        )
    if b.shape != (W.shape[0],):
        raise ConfigError(
            f"bias length {b.shape} does not match weight rows {W.shape[0]}"
        )
    return VPolytope(p.vertices @ W.T + b)


def proj_d(point, d: int) -> np.ndarray:
    """Copy of `point` with coordinate d set to zero."""
    x = np.asarray(point, dtype=float).copy()
    if x.ndim != 1:
        raise ConfigError("proj_d expects a 1-D point")
    if not 0 <= d < x.shape[0]:
        raise ConfigError(f"dimension index {d} out of range for dim {x.shape[0]}")
    x[d] = 0.0
    return x


def segment_hyperplane_intersection(s, t, d: int) -> np.ndarray:
    """Intersection of segment [s, t] with the plane {x_d = 0}.

    Requires the endpoints to lie strictly on opposite sides of the plane;
    the returned point has coordinate d set to exactly zero.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if s.shape != t.shape or s.ndim != 1:
        raise ConfigError("segment endpoints must be 1-D points of equal dim")
    if not 0 <= d < s.shape[0]:
        raise ConfigError(f"dimension index {d} out of range for dim {s.shape[0]}")
    sd, td = s[d], t[d]
    opposite = (sd < -EPS_SIGN and td > EPS_SIGN) or (sd > EPS_SIGN and td < -EPS_SIGN)
    if not opposite:
        raise DegenerateSegment(
            f"endpoint coordinates {sd} and {td} do not straddle the plane x_{d}=0"
        )
    lam = sd / (sd - td)
    point = s + lam * (t - s)
    point[d] = 0.0
    return point


def _lp_membership(vertices: np.ndarray, x: np.ndarray, tol: float) -> bool:
    """LP feasibility: exists lambda >= 0, sum = 1, |V^T lambda - x| <= tol."""
    m = vertices.shape[0]
    A_ub = np.vstack([vertices.T, -vertices.T])
    b_ub = np.concatenate([x + tol, -(x - tol)])
    A_eq = np.ones((1, m))
    res = linprog(
        np.zeros(m),
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=[1.0],
        bounds=(0, None),
        method="highs",
    )
    if res.status == 0:
        return True
    if res.status == 2:
        return False
    raise NumericalError(f"membership LP failed with status {res.status}: {res.message}")


def _nnls_membership(vertices: np.ndarray, x: np.ndarray, tol: float) -> Optional[bool]:
    """Fast certificate pass for convex-hull membership.

    Returns True when an explicit convex combination within tol is found,
    False when a separating direction proves no tol-close hull point can
    exist, and None when the LP has to decide.  Both answers are verified
    certificates, so solver optimality is never trusted.
    """
    m, d = vertices.shape
    A = np.vstack([vertices.T, np.ones((1, m))])
    b = np.concatenate([x, [1.0]])
    try:
        lam, _ = nnls(A, b)
    except Exception:
        return None
    total = lam.sum()
    if total <= 0:
        return None
    y = vertices.T @ (lam / total)
    if np.max(np.abs(y - x)) <= tol:
        return True
    # x - y points away from the hull near the projection of x; if it
    # separates x from every vertex by more than sqrt(d)*tol*|u|, then no
    # hull point is within L-inf tol of x.
    u = x - y
    norm_u = np.linalg.norm(u)
    if norm_u > 0:
        gap = u @ x - (vertices @ u).max()
        if gap > np.sqrt(d) * tol * norm_u * (1.0 + 1e-9):
            return False
    return None


def _matrix_contains(vertices: np.ndarray, x: np.ndarray, tol: float) -> bool:
    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        return False
    if vertices.shape[0] == 1:
        return bool(np.max(np.abs(vertices[0] - x)) <= tol)
    cert = _nnls_membership(vertices, x, tol)
    if cert is not None:
        return cert
    return _lp_membership(vertices, x, tol)


def contains_point(p: VPolytope, x, tol: float = LP_TOL) -> bool:
    """True iff x is within tol of a convex combination of p's vertices."""
    x = np.asarray(x, dtype=float)
    if x.shape != (p.dim,):
        raise ConfigError(f"point dim {x.shape} does not match polytope dim {p.dim}")
    return _matrix_contains(p.vertices, x, tol)


_SUPPORT_DIR_CACHE = {}


def _support_directions(d: int) -> np.ndarray:
    cached = _SUPPORT_DIR_CACHE.get(d)
    if cached is None:
        rng = np.random.default_rng(0x5EED + d)
        extra = rng.normal(size=(2 * d + 6, d))
        norms = np.linalg.norm(extra, axis=1, keepdims=True)
        cached = np.vstack([np.eye(d), -np.eye(d), extra / np.maximum(norms, 1e-300)])
        _SUPPORT_DIR_CACHE[d] = cached
    return cached


def _support_keepers(points: np.ndarray) -> np.ndarray:
    """Mark points that are provably hull vertices via strict support maxima."""
    m, _ = points.shape
    directions = _support_directions(points.shape[1])
    scores = points @ directions.T
    keep = np.zeros(m, dtype=bool)
    for j in range(directions.shape[0]):
        col = scores[:, j]
        best = np.argmax(col)
        others = np.delete(col, best)
        # Only a strict maximizer is guaranteed extreme.
        if others.size == 0 or col[best] - others.max() > 1e-9 * (1.0 + abs(col[best])):
            keep[best] = True
    return keep


def _batch_hull_certificates(anchors: np.ndarray, queries: np.ndarray, tol: float) -> np.ndarray:
    """Mask of query points with a verified convex combination over anchors.

    One multi-RHS least squares gives candidate barycentric weights for all
    queries at once; only weight vectors that are nonnegative and reproduce
    the query within tol count.  A False entry proves nothing.
    """
    k = anchors.shape[0]
    A = np.vstack([anchors.T, np.ones((1, k))])
    B = np.vstack([queries.T, np.ones((1, queries.shape[0]))])
    try:
        lam, *_ = np.linalg.lstsq(A, B, rcond=None)
    except np.linalg.LinAlgError:
        return np.zeros(queries.shape[0], dtype=bool)
    lam = np.clip(lam, 0.0, None)
    totals = lam.sum(axis=0)
    ok = totals > 0
    lam[:, ok] /= totals[ok]
    recon = anchors.T @ lam
    err = np.abs(recon - queries.T).max(axis=0)
    return ok & (err <= tol)


def _reduce_points(pts: np.ndarray, tol: float) -> np.ndarray:
    """Minimal row subset with the same convex hull (within tol).

    Provable hull vertices (strict support maxima) are kept outright; a
    vectorized barycentric pass drops the bulk of the interior points, and
    the leftovers are settled one by one against the surviving set.
    """
    pts = dedup_rows(pts)
    m = pts.shape[0]
    if m <= 2:
        return pts
    keepers = _support_keepers(pts)
    pending = np.flatnonzero(~keepers)
    dropped = np.zeros(m, dtype=bool)
    if pending.size and keepers.any():
        verified = _batch_hull_certificates(pts[keepers], pts[pending], tol)
        dropped[pending[verified]] = True
    active = [i for i in range(m) if not dropped[i]]
    for i in [i for i in active if not keepers[i]]:
        if len(active) <= 2:
            break
        rest = pts[[j for j in active if j != i]]
        if _matrix_contains(rest, pts[i], tol):
            active.remove(i)
    return pts[active]


def remove_redundant_vertices(p: VPolytope, tol: float = LP_TOL) -> VPolytope:
    """Drop every vertex that is a convex combination of the remaining ones.

    The surviving rows are a subset of the input rows and define the same
    convex hull; each removal is justified by an LP-verified certificate.
    """
    return VPolytope(_reduce_points(p.vertices, tol))


def _relu_one_dim(vertices: np.ndarray, d: int) -> np.ndarray:
    out = vertices.copy()
    out[:, d] = np.maximum(out[:, d], 0.0)
    return out


def _mixed_split_groups(V: np.ndarray, d: int):
    """Vertex groups of a sign-mixed coordinate: strict positives, projected
    strict negatives, and the on-plane points (originals plus all crossing
    intersections), the latter with coordinate d forced to exactly zero."""
    col = V[:, d]
    pos = V[col > EPS_SIGN]
    neg = V[col < -EPS_SIGN]
    on_plane = V[np.abs(col) <= EPS_SIGN].copy()
    if on_plane.size:
        on_plane[:, d] = 0.0
    cross = np.array(
        [segment_hyperplane_intersection(n, q, d) for n in neg for q in pos]
    )
    neg_proj = neg.copy()
    neg_proj[:, d] = 0.0
    plane = np.vstack([on_plane, cross]) if on_plane.size else cross
    return pos, neg_proj, dedup_rows(plane)


def exact_relu_split_d(p: VPolytope, d: int, tol: float = LP_TOL) -> SplitResult:
    """Exact image of ReLU applied to coordinate d of p, as at most two parts.

    The top part is p intersected with {x_d >= 0}; the bottom part is the
    projection of p intersected with {x_d <= 0} onto the plane {x_d = 0}.
    Every vertex of either part is a vertex of p, an on-plane vertex, or an
    intersection of a sign-crossing edge with the plane, so the pairwise
    positive-negative segment intersections cover all of them.
    """
    if not 0 <= d < p.dim:
        raise ConfigError(f"dimension index {d} out of range for dim {p.dim}")
    V = p.vertices
    col = V[:, d]
    if col.min() >= -EPS_SIGN:
        return SplitResult(top=VPolytope.from_points(_relu_one_dim(V, d)), bottom=None)
    if col.max() <= EPS_SIGN:
        proj = V.copy()
        proj[:, d] = 0.0
        return SplitResult(top=None, bottom=VPolytope.from_points(proj))
    pos, neg_proj, plane = _mixed_split_groups(V, d)
    top = remove_redundant_vertices(VPolytope.from_points(np.vstack([pos, plane])), tol)
    bottom = remove_redundant_vertices(VPolytope.from_points(np.vstack([neg_proj, plane])), tol)
    return SplitResult(top=top, bottom=bottom)


def _split_parts_minimal(V: np.ndarray, d: int, tol: float):
    """Split for the exact-image fold; assumes V's rows are hull vertices.

    A strict-positive vertex of a minimal polytope stays extreme in the top
    part, and an on-plane point can only be redundant through other
    on-plane points (any combination touching a strict positive leaves the
    plane), so only the plane group needs redundancy elimination.
    """
    col = V[:, d]
    if col.min() >= -EPS_SIGN:
        return dedup_rows(_relu_one_dim(V, d)), None
    if col.max() <= EPS_SIGN:
        proj = V.copy()
        proj[:, d] = 0.0
        return None, _reduce_points(proj, tol)
    pos, neg_proj, plane = _mixed_split_groups(V, d)
    plane_kept = _reduce_points(plane, tol)
    top_pts = np.vstack([pos, plane_kept])
    bottom_pts = _reduce_points(dedup_rows(np.vstack([neg_proj, plane_kept])), tol)
    return top_pts, bottom_pts


def _canonical_key(vertices: np.ndarray) -> bytes:
    rounded = np.round(vertices, 9) + 0.0  # the +0.0 normalizes -0.0
    order = np.lexsort(rounded.T[::-1])
    return rounded[order].tobytes()


def exact_relu(
    p: VPolytope, member_cap: int = DEFAULT_MEMBER_CAP, tol: float = LP_TOL
) -> PolytopeSet:
    """Exact image of ReLU over all coordinates, as a deduplicated union.

    Both branches of every coordinate split are kept, so the member count
    can double per dimension; the cap aborts loudly rather than truncate.
    Members come out with redundancy-free vertex sets.
    """
    current: List[np.ndarray] = [_reduce_points(p.vertices, tol)]
    for d in range(p.dim):
        seen = {}
        for V in current:
            for part in _split_parts_minimal(V, d, tol):
                if part is not None:
                    seen.setdefault(_canonical_key(part), part)
        current = list(seen.values())
        if len(current) > member_cap:
            raise BudgetExceeded(
                f"exact ReLU image exceeded {member_cap} polytopes at dimension {d}"
            )
    return PolytopeSet(tuple(VPolytope(V) for V in current))


def intersect_nonpositive_halfspace(p: VPolytope, d: int, tol: float = LP_TOL) -> Optional[VPolytope]:
    """p intersected with {x_d <= 0}, without projecting onto the plane.

    Returns None when p lies strictly above the plane.  Used by test
    oracles to reconstruct ReLU preimages; the verification path never
    calls it.
    """
    if not 0 <= d < p.dim:
        raise ConfigError(f"dimension index {d} out of range for dim {p.dim}")
    V = p.vertices
    col = V[:, d]
    if col.min() > EPS_SIGN:
        return None
    if col.max() <= EPS_SIGN:
        return p
    pos = V[col > EPS_SIGN]
    neg = V[col < -EPS_SIGN]
    on_plane = V[np.abs(col) <= EPS_SIGN].copy()
    if on_plane.size:
        on_plane[:, d] = 0.0
    cross = np.array(
        [segment_hyperplane_intersection(n, q, d) for n in neg for q in pos]
    )
    pieces = [neg, cross] + ([on_plane] if on_plane.size else [])
    pts = np.vstack(pieces)
    return remove_redundant_vertices(VPolytope.from_points(pts), tol)


def convex_union_contains(members, x, tol: float = LP_TOL) -> bool:
    """True iff x lies in the convex hull of the union of all member vertices."""
    x = np.asarray(x, dtype=float)
    if isinstance(members, PolytopeSet):
        stacked = members.stacked_vertices()
    else:
        members = list(members)
        if not members:
            raise ConfigError("convex_union_contains needs at least one polytope")
        stacked = np.vstack([m.vertices for m in members])
    if x.shape != (stacked.shape[1],):
        raise ConfigError(
            f"point dim {x.shape} does not match polytope dim {stacked.shape[1]}"
        )
    return _matrix_contains(stacked, x, tol)


class HullMembership:
    """Batch membership tester for the convex hull of a fixed point set.

    Builds a facet description (after projecting away degenerate
    directions) once, then answers large query batches vectorized.  Falls
    back to per-point LP membership whenever qhull cannot handle the
    geometry, so answers always agree with `contains_point` up to tol.
    """

    def __init__(self, points, tol: float = LP_TOL):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ConfigError("HullMembership needs a non-empty 2-D point set")
        self.tol = float(tol)
        self.points = dedup_rows(pts)
        self.center = self.points.mean(axis=0)
        centered = self.points - self.center
        if self.points.shape[0] == 1:
            self.rank = 0
            self.basis = np.zeros((pts.shape[1], 0))
        else:
            _, svals, vt = np.linalg.svd(centered, full_matrices=False)
            smax = svals[0] if svals.size else 0.0
            self.rank = int(np.sum(svals > smax * 1e-9)) if smax > 0 else 0
            self.basis = vt[: self.rank].T
        self.mode = "point"
        self._lo = self._hi = None
        self._equations = None
        if self.rank == 1:
            coords = centered @ self.basis
            self._lo, self._hi = coords.min(), coords.max()
            self.mode = "interval"
        elif self.rank >= 2:
            coords = centered @ self.basis
            try:
                hull = ConvexHull(coords)
                self._equations = hull.equations
                self.mode = "hull"
            except QhullError:
                self.mode = "lp"

    def contains(self, queries) -> np.ndarray:
        """Boolean mask of which query points lie in the hull (within tol)."""
        Q = np.asarray(queries, dtype=float)
        single = Q.ndim == 1
        if single:
            Q = Q.reshape(1, -1)
        if Q.shape[1] != self.points.shape[1]:
            raise ConfigError(
                f"query dim {Q.shape[1]} does not match point dim {self.points.shape[1]}"
            )
        if self.mode == "lp":
            out = np.array([_matrix_contains(self.points, q, self.tol) for q in Q])
            return out[0] if single else out
        centered = Q - self.center
        if self.rank == 0:
            ok = np.max(np.abs(centered), axis=1) <= self.tol
            return ok[0] if single else ok
        coords = centered @ self.basis
        resid = centered - coords @ self.basis.T
        ok = np.max(np.abs(resid), axis=1) <= self.tol
        if self.mode == "interval":
            c = coords[:, 0]
            ok &= (c >= self._lo - self.tol) & (c <= self._hi + self.tol)
        else:
            normals = self._equations[:, :-1]
            offsets = self._equations[:, -1]
            # Chunk the facet products to bound peak memory on big hulls.
            chunk = max(1, int(4_000_000 // max(1, len(offsets))))
            for start in range(0, coords.shape[0], chunk):
                block = coords[start : start + chunk]
                dist = block @ normals.T + offsets
                ok[start : start + chunk] &= dist.max(axis=1) <= self.tol
        return ok[0] if single else ok


def corner_vertices(lower, upper) -> VPolytope:
    """All corners of an axis-aligned box as a (deduplicated) polytope."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if lo.shape != hi.shape or lo.ndim != 1:
        raise ConfigError("box bounds must be 1-D vectors of equal length")
    n = lo.shape[0]
    if n > 20:
        raise ConfigError(f"box dimension {n} exceeds the 2^20 corner-enumeration limit")
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
        raise ConfigError("box bounds must be finite to enumerate corners")
    if np.any(lo > hi):
        raise ConfigError("box lower bounds exceed upper bounds")
    bits = np.array(list(itertools.product((0.0, 1.0), repeat=n)))
    corners = lo + bits * (hi - lo)
    return VPolytope.from_points(corners)

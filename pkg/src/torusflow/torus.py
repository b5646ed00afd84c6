"""Torus geometry: wrapping, distances, commensurability and convex hulls."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import InvalidInputError

ZERO_TOL = 1e-12
COMMENSURABLE_TOL = 1e-9
MAX_DENOMINATOR = 10**6
AFFINE_TOL = 1e-8
COPLANAR_TOL = 1e-10


def _as_points(p, name="point"):
    arr = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} has non-finite coordinates")
    return arr


def wrap(p):
    """Project lift coordinates onto the fundamental cell [0, 1)^d.

    Works on a single point or on any array whose last axis holds coordinates.
    """
    arr = _as_points(p)
    out = arr - np.floor(arr)
    # x - floor(x) can round up to exactly 1.0 for tiny negative x
    out[out >= 1.0] = 0.0
    return out


def torus_distance(p, q):
    """Distance on R^d / Z^d, minimised over integer translates.

    Broadcasts over leading axes.
    """
    diff = _as_points(p) - _as_points(q)
    diff = diff - np.round(diff)
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True)
class CommensurabilityVerdict:
    kind: str  # "zero" | "commensurable" | "suspected_incommensurable"
    residual: float
    witness_k: tuple | None = None
    witness_T: float | None = None

    @property
    def commensurable(self):
        return self.kind == "commensurable"

    def to_dict(self):
        return {
            "kind": self.kind,
            "residual": self.residual,
            "k": list(self.witness_k) if self.witness_k is not None else None,
            "T": self.witness_T,
        }


def _convergents(x, max_denominator):
    """Continued-fraction convergents p/q of x with q <= max_denominator."""
    a0 = math.floor(x)
    p_prev, q_prev = 1, 0
    p, q = a0, 1
    yield p, q
    frac = x - a0
    while frac > 0:
        x = 1.0 / frac
        a = math.floor(x)
        frac = x - a
        p, p_prev = a * p + p_prev, p
        q, q_prev = a * q + q_prev, q
        if q > max_denominator:
            return
        yield p, q


def classify_commensurability(v, tolerance=COMMENSURABLE_TOL, max_denominator=MAX_DENOMINATOR):
    """Decide whether ``v`` is a real multiple of an integer vector.

    Ratios of the components to the largest one are expanded in continued
    fractions; the first convergent whose residual drops below ``tolerance``
    gives the minimal denominator for that ratio, and denominators are then
    combined by lcm. Failing that, the vector is only *suspected* to be
    incommensurable: finite precision cannot decide irrationality.
    """
    if tolerance <= 0 or max_denominator < 1:
        raise InvalidInputError("tolerance must be > 0 and max_denominator >= 1")
    v = _as_points(v, "vector").ravel()
    norm = float(np.linalg.norm(v))
    if norm < ZERO_TOL:
        return CommensurabilityVerdict("zero", norm)

    i = int(np.argmax(np.abs(v)))
    vi = v[i]
    dens = []
    for j, vj in enumerate(v):
        if j == i:
            continue
        r = vj / vi
        found = None
        for p, q in _convergents(r, max_denominator):
            if abs(q * r - p) <= tolerance:
                found = q
                break
        if found is None:
            return _suspected(v, i, max_denominator)
        dens.append(found)

    q = reduce(lambda a, b: a * b // math.gcd(a, b), dens, 1)
    if q > max_denominator:
        return _suspected(v, i, max_denominator)
    T = q / abs(vi)
    k = np.round(T * v).astype(np.int64)
    g = reduce(math.gcd, (abs(int(c)) for c in k))
    if g > 1:
        k //= g
        T /= g
    residual = float(np.linalg.norm(T * v - k))
    if residual > tolerance:
        return _suspected(v, i, max_denominator)
    return CommensurabilityVerdict("commensurable", residual, tuple(int(c) for c in k), float(T))


def _suspected(v, i, max_denominator):
    # best residual reachable within the denominator budget, for diagnostics
    best = math.inf
    vi = v[i]
    for j, vj in enumerate(v):
        if j == i:
            continue
        r = vj / vi
        for p, q in _convergents(r, max_denominator):
            best = min(best, abs(q * r - p))
    return CommensurabilityVerdict("suspected_incommensurable", float(best))


def rational_period(direction):
    """Smallest T > 0 with T * direction integral, for exact rational input.

    ``direction`` is a sequence of Fractions (or ints / rational strings).
    Returns ``(T, integer_vector)`` with T a Fraction.
    """
    fr = [Fraction(c) for c in direction]
    if all(c == 0 for c in fr):
        raise InvalidInputError("zero direction has no period")
    den = reduce(lambda a, b: a * b // math.gcd(a, b), (c.denominator for c in fr), 1)
    ints = [int(c * den) for c in fr]
    g = reduce(math.gcd, (abs(c) for c in ints))
    T = Fraction(den, g)
    return T, tuple(c // g for c in ints)


# --------------------------------------------------------------------------
# convex hulls


@dataclass(frozen=True)
class HullPolytope:
    """Convex hull of a point cloud in R^2 or R^3.

    ``dimension`` is the affine dimension of the cloud. ``equations`` holds
    outward facet inequalities ``n . x + c <= 0`` (unit normals) when the hull
    is full-dimensional; lower-dimensional hulls are handled through
    ``origin`` and the orthonormal ``basis`` of their affine span.
    """

    vertices: np.ndarray
    dimension: int
    ambient_dim: int
    origin: np.ndarray
    basis: np.ndarray
    equations: np.ndarray | None = field(default=None, repr=False)

    def diameter(self):
        v = self.vertices
        if len(v) < 2:
            return 0.0
        diff = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((diff**2).sum(-1)).max())

    def distance(self, points):
        """Euclidean distance from each point to the hull (0 inside).

        For full-dimensional 3D hulls outside points get the largest facet
        violation, a lower bound that is exact near facets.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.dimension == 0:
            return np.linalg.norm(pts - self.vertices[0], axis=1)
        rel = pts - self.origin
        local = rel @ self.basis.T
        off_span = rel - local @ self.basis
        off = np.linalg.norm(off_span, axis=1)
        if self.dimension == 1:
            s = local[:, 0]
            ends = (self.vertices - self.origin) @ self.basis.T
            lo, hi = ends[:, 0].min(), ends[:, 0].max()
            along = np.maximum(0.0, np.maximum(lo - s, s - hi))
            return np.hypot(along, off)
        if self.dimension == 2:
            poly = (self.vertices - self.origin) @ self.basis.T
            return np.hypot(_polygon_distance(poly, local), off)
        viol = pts @ self.equations[:, :-1].T + self.equations[:, -1]
        return np.maximum(0.0, viol.max(axis=1))

    def contains(self, points, tol=1e-9):
        return self.distance(points) <= tol


def _polygon_distance(poly, pts):
    """Distance from 2D points to a convex polygon (counter-clockwise)."""
    n = len(poly)
    a = poly
    b = np.roll(poly, -1, axis=0)
    edge = b - a
    # inside test: left of every edge
    rel = pts[:, None, :] - a[None, :, :]
    cross = edge[None, :, 0] * rel[..., 1] - edge[None, :, 1] * rel[..., 0]
    inside = np.all(cross >= -1e-15, axis=1)
    t = np.clip((rel * edge[None]).sum(-1) / (edge**2).sum(-1)[None], 0.0, 1.0)
    proj = a[None] + t[..., None] * edge[None]
    d = np.linalg.norm(pts[:, None, :] - proj, axis=-1).min(axis=1)
    if n < 3:
        return d
    return np.where(inside, 0.0, d)


def _monotone_chain(pts):
    """Andrew's monotone chain; returns indices of the hull, counter-clockwise."""
    order = sorted(range(len(pts)), key=lambda i: (pts[i][0], pts[i][1]))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for i in order:
        while len(lower) >= 2 and cross(pts[lower[-2]], pts[lower[-1]], pts[i]) <= 1e-14:
            lower.pop()
        lower.append(i)
    for i in reversed(order):
        while len(upper) >= 2 and cross(pts[upper[-2]], pts[upper[-1]], pts[i]) <= 1e-14:
            upper.pop()
        upper.append(i)
    return lower[:-1] + upper[:-1]


def affine_dimension(points, tol=AFFINE_TOL):
    """Affine dimension of a cloud by singular-value thresholding."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) < 2:
        return 0, pts.mean(axis=0), np.zeros((0, pts.shape[1]))
    centre = pts.mean(axis=0)
    _, s, vt = np.linalg.svd(pts - centre, full_matrices=False)
    dim = int(np.sum(s > tol))
    return dim, centre, vt[:dim]


def convex_hull(points, d=None, tol=AFFINE_TOL):
    """Convex hull of a cloud in R^2 or R^3 with degeneracy detection."""
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise InvalidInputError("convex hull of an empty point set")
    pts = np.atleast_2d(pts)
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("non-finite point in hull input")
    ambient = pts.shape[1]
    if d is not None and d != ambient:
        raise InvalidInputError(f"points have dimension {ambient}, expected {d}")
    if ambient not in (2, 3):
        raise InvalidInputError("convex hulls are supported in dimensions 2 and 3 only")

    dim, centre, basis = affine_dimension(pts, tol)
    if dim == 0:
        # centroid keeps every input within ``tol`` of the collapsed hull
        v = centre[None, :].copy()
        return HullPolytope(v, 0, ambient, centre, np.zeros((0, ambient)))
    if dim == 1:
        s = (pts - centre) @ basis[0]
        v = pts[[int(np.argmin(s)), int(np.argmax(s))]]
        return HullPolytope(v, 1, ambient, centre, basis)
    if dim == 2:
        local = pts if ambient == 2 else (pts - centre) @ basis.T
        idx = _monotone_chain([tuple(p) for p in local])
        v = pts[idx]
        eq = None
        if ambient == 2:
            basis = np.eye(2)
            centre = np.zeros(2)
            a = v
            b = np.roll(v, -1, axis=0)
            e = b - a
            n = np.stack([e[:, 1], -e[:, 0]], axis=1)
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            eq = np.hstack([n, -(n * a).sum(1, keepdims=True)])
        return HullPolytope(v, 2, ambient, centre, basis, eq)
    try:
        qh = ConvexHull(pts)
    except QhullError as exc:  # pragma: no cover - dimension already checked
        raise InvalidInputError(f"qhull failed: {exc}") from exc
    v = pts[np.sort(qh.vertices)]
    return HullPolytope(v, 3, ambient, centre, np.eye(3), qh.equations.copy())

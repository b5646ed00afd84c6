"""Three-dimensional fields whose rotation set is a prescribed rational polytope.

Each vertex ``xi^i`` gets a thin solid cylinder around a closed straight
orbit ``x^i + R xi^i`` on Y_3. The field equals ``xi^i`` on cylinder ``i``
and the last vertex elsewhere, blended across collars by a C^1 smoothstep,
so pointwise values stay in the convex hull of the vertices.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from itertools import product

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernels as K
from .errors import GeometryError, InvalidInputError
from .fields import FieldInstance
from .torus import rational_period

SEED = 0x5EED
SEPARATION_FLOOR = 0.05
MAX_RETRIES = 100
SCAN_SAMPLES = 2048


def parse_rational_vector(v):
    """Exact rational 3-vector from ints, Fractions or strings like ``"1/2"``."""
    if isinstance(v, str):
        v = v.replace(" ", "").split(",")
    try:
        out = tuple(Fraction(str(c)) if not isinstance(c, Fraction) else c for c in v)
    except (ValueError, ZeroDivisionError) as exc:
        raise InvalidInputError(f"vertex {v!r} is not rational") from exc
    if len(out) != 3:
        raise InvalidInputError("vertices must be 3-vectors")
    return out


@dataclass(frozen=True, eq=False)
class CylinderSpec:
    """Axis point, rational direction and radius of one cylinder.

    A zero direction denotes the ball around the point ``x^i`` (used for the
    zero vertex, centred at the origin of Y_3).
    """

    point: np.ndarray
    direction: tuple
    radius: float | None = None
    collar: float | None = None

    @property
    def vertex(self):
        return np.array([float(c) for c in self.direction])

    @property
    def is_point(self):
        return all(c == 0 for c in self.direction)

    @property
    def period(self):
        """``(T, n)``: smallest ``T > 0`` with ``T xi`` integral, and ``n = T xi``."""
        if self.is_point:
            return Fraction(0), (0, 0, 0)
        return rational_period(self.direction)

    @property
    def unit(self):
        if self.is_point:
            return np.zeros(3)
        n = np.array(self.period[1], dtype=float)
        return n / np.linalg.norm(n)

    def curve(self, s):
        """Lift of the closed axis curve, parameter ``s`` in [0, 1)."""
        n = np.array(self.period[1], dtype=float)
        return self.point + np.asarray(s, dtype=float)[..., None] * n

    def projector(self):
        u = self.unit
        return np.eye(3) - np.outer(u, u)

    def shifts(self, reach):
        """Integer shifts ``k`` giving the distinct translated axes with ``|P k| < reach``."""
        n = np.array(self.period[1], dtype=float)
        B = int(math.ceil(np.linalg.norm(n) + reach)) + 1
        P = self.projector()
        seen = {}
        for k in product(range(-B, B + 1), repeat=3):
            kk = np.array(k, dtype=float)
            pk = P @ kk
            if np.linalg.norm(pk) >= reach:
                continue
            key = tuple(np.round(pk, 9))
            if key not in seen or np.abs(kk).sum() < np.abs(seen[key]).sum():
                seen[key] = kk
        out = np.array(sorted(seen.values(), key=lambda k: (np.linalg.norm(P @ k), tuple(k))))
        return out.reshape(-1, 3)

    def to_json(self):
        return {
            "point": self.point.tolist(),
            "direction": [str(c) for c in self.direction],
            "radius": self.radius,
            "collar": self.collar,
        }


def distances_to_axes(points, cyl: CylinderSpec, shifts):
    """Distances from ``points`` (m, 3) to every translated axis, shape (m, nshift)."""
    w = np.asarray(points, dtype=float)[:, None, :] - cyl.point - shifts[None, :, :]
    u = cyl.unit
    r = w - (w @ u)[..., None] * u
    return np.linalg.norm(r, axis=-1)


def _reach(cyl, extra=0.0):
    # points of [0,1)^3 lie within sqrt(3) of the wrapped axis point
    return math.sqrt(3.0) + extra + 0.1


def _axis_distance(points, cyl, shifts, chunk=1 << 15):
    pts = np.atleast_2d(points) - np.floor(np.atleast_2d(points))
    out = np.empty(len(pts))
    for i in range(0, len(pts), chunk):
        out[i : i + chunk] = distances_to_axes(pts[i : i + chunk], cyl, shifts).min(axis=1)
    return out


def _curve_distance(ci: CylinderSpec, cj: CylinderSpec, samples=SCAN_SAMPLES):
    """Torus distance between the closed curves (or points) of two cylinders."""
    if ci.is_point and not cj.is_point:
        ci, cj = cj, ci
    shifts = cj.shifts(_reach(cj, 2.0))
    if ci.is_point:
        return float(_axis_distance(ci.point, cj, shifts)[0])
    s = (np.arange(samples) + 0.5) / samples
    d = _axis_distance(ci.curve(s), cj, shifts)
    best = float(d.min())
    h = 1.0 / samples
    for i in np.argsort(d)[:3]:
        r = minimize_scalar(
            lambda t: float(_axis_distance(ci.curve(np.array([t])), cj, shifts)[0]),
            bounds=(s[i] - h, s[i] + h),
            method="bounded",
            options={"xatol": 1e-12},
        )
        best = min(best, float(r.fun))
    return best


def self_distance(cyl: CylinderSpec):
    """Distance from an axis curve to its nearest non-axial integer translate."""
    P = cyl.projector()
    T, n = cyl.period
    B = int(math.ceil(float(T) * np.linalg.norm(cyl.vertex))) + 1
    best = math.inf
    for k in product(range(-B, B + 1), repeat=3):
        pk = np.linalg.norm(P @ np.array(k, dtype=float))
        if pk > 1e-9:
            best = min(best, pk)
    return best


def compute_separation(cyls):
    """Minimum over pairwise curve distances and self distances; ``R = min / 4``.

    Returns ``(min_distance, R, details)``.
    """
    pair = {}
    for i in range(len(cyls)):
        for j in range(i + 1, len(cyls)):
            pair[(i, j)] = _curve_distance(cyls[i], cyls[j])
    selfd = [self_distance(c) for c in cyls]
    vals = list(pair.values()) + selfd
    m = float(min(vals))
    details = {"pairwise": {f"{i},{j}": v for (i, j), v in pair.items()}, "self": selfd}
    return m, m / 4.0, details


def _pairwise_min(cyls):
    vals = [_curve_distance(cyls[i], cyls[j]) for i in range(len(cyls)) for j in range(i + 1, len(cyls))]
    return min(vals) if vals else math.inf


def select_axis_points(directions, seed=SEED, floor=SEPARATION_FLOOR, max_retries=MAX_RETRIES):
    """Random axis points whose closed curves stay ``floor`` apart on Y_3.

    The zero direction (allowed only last) is pinned to the origin, so the
    check also keeps every other curve away from 0.

    Raises
    ------
    GeometryError
        After ``max_retries`` failed draws; carries the best separation found.
    """
    dirs = [parse_rational_vector(v) for v in directions]
    if not dirs:
        raise InvalidInputError("at least one direction is required")
    zeros = [i for i, v in enumerate(dirs) if all(c == 0 for c in v)]
    if len(zeros) > 1 or (zeros and zeros[0] != len(dirs) - 1):
        raise InvalidInputError("only the last direction may be zero")
    rng = np.random.default_rng(seed)
    best, best_cyls = -math.inf, None
    for _ in range(max_retries):
        cyls = []
        for v in dirs:
            p = np.zeros(3) if all(c == 0 for c in v) else rng.random(3)
            cyls.append(CylinderSpec(p, v))
        sep = _pairwise_min(cyls)
        if sep > best:
            best, best_cyls = sep, cyls
        if sep >= floor:
            return cyls
    raise GeometryError(f"no axis configuration with separation >= {floor} (best {best:.4f})", best)


def _order_vertices(vertices):
    verts = [parse_rational_vector(v) for v in vertices]
    zeros = [v for v in verts if all(c == 0 for c in v)]
    rest = [v for v in verts if any(c != 0 for c in v)]
    # the zero vertex, if any, becomes the background value
    return rest + zeros[:1]


def build_partition_field(cyls, collar=None):
    """Field ``b = sum_i phi_i xi^i`` over cylinders with radii already set.

    ``collar`` defaults to ``R / 2``.
    """
    if not cyls:
        raise InvalidInputError("no cylinders")
    R = cyls[0].radius
    if R is None or R <= 0:
        raise InvalidInputError("cylinders need a positive radius")
    delta = R / 2.0 if collar is None else float(collar)
    if not 0 < delta <= R:
        raise GeometryError(f"collar {delta} must lie in (0, R = {R}]")
    cyls = [replace(c, radius=R, collar=delta) for c in cyls]
    base = cyls[-1].vertex
    ints = []
    blocks = []
    shift_sets = []
    for c in cyls[:-1]:
        sh = c.shifts(_reach(c, R + delta))
        shift_sets.append(sh)
        ints.append(len(sh))
        blocks.append(np.concatenate([c.point, c.unit, c.vertex, [R, delta], sh.ravel()]))
    ip = np.array([K.POLY3D, 3, len(cyls) - 1] + ints, dtype=np.int64)
    fp = np.concatenate([[1.0], base] + blocks)
    params = {"cylinders": cyls, "R": R, "delta": delta, "shifts": shift_sets}
    return FieldInstance(3, "polyhedral3d", params, ip, fp)


def partition_values(f: FieldInstance, points):
    """``phi_i`` at ``points`` (m, 3) for every cylinder, shape (n, m)."""
    cyls = f.params["cylinders"]
    R, delta = f.params["R"], f.params["delta"]
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    g = []
    for c, sh in zip(cyls[:-1], f.params["shifts"]):
        d = _axis_distance(pts, c, sh)
        q = np.clip((d - R) / delta, 0.0, 1.0)
        g.append(1.0 - (3 * q**2 - 2 * q**3))
    g = np.array(g).reshape(len(cyls) - 1, len(pts))
    return np.vstack([g, 1.0 - g.sum(axis=0, keepdims=True)])


def ambiguity_gap(f: FieldInstance, points):
    """Gap between nearest and second-nearest translated axis, per cylinder (n-1, m)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pts = pts - np.floor(pts)
    out = []
    for c, sh in zip(f.params["cylinders"][:-1], f.params["shifts"]):
        d = np.sort(distances_to_axes(pts, c, sh), axis=1)
        out.append(d[:, 1] - d[:, 0] if d.shape[1] > 1 else np.full(len(pts), np.inf))
    return np.array(out)


def cylinder_measure_mass(cyl: CylinderSpec, f: FieldInstance, n_axial=64, n_radial=8, n_angle=16):
    """Average of ``b`` over the solid cylinder (ball for a point) of radius R.

    Stratified midpoint quadrature: axial parameter times equal-area rings
    times angles.
    """
    R = cyl.radius if cyl.radius is not None else f.params["R"]
    if cyl.is_point:
        # uniform ball: radius by cube-root stratification, directions by a Fibonacci sphere
        m = n_radial * n_angle * 4
        i = np.arange(m) + 0.5
        z = 1 - 2 * i / m
        phi = np.pi * (1 + 5**0.5) * i
        dirs = np.stack([np.sqrt(1 - z * z) * np.cos(phi), np.sqrt(1 - z * z) * np.sin(phi), z], axis=1)
        rr = R * ((np.arange(n_radial) + 0.5) / n_radial) ** (1 / 3)
        pts = (cyl.point + rr[:, None, None] * dirs[None]).reshape(-1, 3)
        return f.eval(pts).mean(axis=0)
    u = cyl.unit
    e1 = np.cross(u, [1.0, 0.0, 0.0])
    if np.linalg.norm(e1) < 0.5:
        e1 = np.cross(u, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(u, e1)
    s = (np.arange(n_axial) + 0.5) / n_axial
    r = R * np.sqrt((np.arange(n_radial) + 0.5) / n_radial)
    th = 2 * np.pi * (np.arange(n_angle) + 0.5) / n_angle
    disk = (r[:, None, None] * (np.cos(th)[None, :, None] * e1 + np.sin(th)[None, :, None] * e2)).reshape(-1, 3)
    pts = (cyl.curve(s)[:, None, :] + disk[None]).reshape(-1, 3)
    return f.eval(pts).mean(axis=0)


@dataclass
class Construction:
    field: FieldInstance
    cylinders: list
    separation: float
    R: float
    delta: float
    details: dict
    seed: int

    def report(self):
        return {
            "schema": "poly3d_construction",
            "version": 1,
            "seed": self.seed,
            "separation": self.separation,
            "R": self.R,
            "delta": self.delta,
            "cylinders": [c.to_json() for c in self.cylinders],
            "distances": self.details,
        }


def build_polyhedral_field(vertices, seed=SEED, floor=SEPARATION_FLOOR):
    """Full construction from rational vertices: axes, radius, collar, field."""
    dirs = _order_vertices(vertices)
    cyls = select_axis_points(dirs, seed, floor)
    sep, R, details = compute_separation(cyls)
    if sep <= 0:
        raise GeometryError("coincident axis curves", sep)
    cyls = [replace(c, radius=R, collar=R / 2) for c in cyls]
    f = build_partition_field(cyls)
    spec = {"vertices": [[str(c) for c in v] for v in dirs], "seed": int(seed)}
    params = dict(f.params, _spec=spec, vertices=dirs)
    f = FieldInstance(3, "polyhedral3d", params, f.ip, f.fp, {"separation": sep})
    return Construction(f, cyls, sep, R, R / 2, details, int(seed))


def field_from_construction(spec):
    """Rebuild a polyhedral field from ``{"vertices": [...], "seed": s}``."""
    try:
        verts = spec["vertices"]
    except (KeyError, TypeError) as exc:
        raise InvalidInputError("polyhedral spec needs 'vertices'") from exc
    return build_polyhedral_field(verts, int(spec.get("seed", SEED))).field


def load_vertices(path):
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(obj, list):
        return obj, SEED
    return obj["vertices"], int(obj.get("seed", SEED))

"""Oscillating transport equations solved by characteristics, and their weak limit.

The equation ``du/dt - b(x/eps) . grad u = 0`` with ``u(0, x) = u0(x, x/eps)``
has the exact solution ``u0(eps X(t/eps, x/eps), X(t/eps, x/eps))``. When
``sigma`` is an invariant density of ``b`` and the rotation set is the
single vector ``zeta = mean(sigma b)``, ``sigma(x/eps) u_eps`` converges weakly
to ``v(t, x) = v0(x + t zeta)`` with ``v0(x) = mean_y sigma(y) u0(x, y)``.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ConsistencyError, IntegrationError, InvalidInputError, ResolutionError
from .fields import FieldInstance, ReciprocalScalar, TrigScalar, build_stepanoff, sample_grid
from .flow import IntegratorSettings, _thread_count
from .measures import DensityMeasure, check_invariance, mass
from .rotation import harmonic_mean


def bump(x, centre, radius):
    """C^infinity bump ``exp(1 - 1/(1 - r^2))`` of the scaled distance, 1 at the centre."""
    r2 = np.sum((np.asarray(x, dtype=float) - centre) ** 2, axis=-1) / radius**2
    out = np.zeros(r2.shape)
    inside = r2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
    return out


@dataclass(frozen=True)
class Bump:
    centre: tuple
    radius: float

    def __call__(self, x):
        return bump(x, np.asarray(self.centre, dtype=float), self.radius)

    def box(self):
        c = np.asarray(self.centre, dtype=float)
        return c - self.radius, c + self.radius

    def shifted(self, v):
        return Bump(tuple(np.asarray(self.centre) + np.asarray(v)), self.radius)


@dataclass(frozen=True)
class InitialDatum:
    """``u0(x, y) = g(x) p(y)`` with a bump ``g`` and a trig profile ``p`` on Y_2."""

    g: Bump
    profile: TrigScalar

    def __call__(self, x, y):
        return self.g(x) * self.profile(y)


class ScaledScalar:
    """``c * s(x)`` for a scalar evaluator ``s``."""

    def __init__(self, base, c):
        self.base = base
        self.c = float(c)
        self.dim = base.dim

    def __call__(self, x):
        return self.c * self.base(x)


@dataclass(eq=False)
class HomogenizationRun:
    f: FieldInstance
    sigma: object
    u0: InitialDatum
    eps: tuple = (1 / 10, 1 / 20, 1 / 40)
    t: float = 1.0
    tests: tuple = ()
    settings: IntegratorSettings = field(default_factory=lambda: IntegratorSettings(rtol=1e-9, atol=1e-9))
    N: int = 256
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.f.dim != 2:
            raise InvalidInputError("homogenization runs are two-dimensional")
        if any(e <= 0 for e in self.eps):
            raise InvalidInputError("eps must be positive")
        meas = DensityMeasure.from_function(self.sigma, 2, self.N)
        raw_mean = float(np.mean(self.sigma(sample_grid(2, self.N).reshape(-1, 2))))
        if abs(raw_mean - 1.0) > 1e-9:
            raise InvalidInputError(f"sigma must have unit mean (got {raw_mean:.12f})")
        rep = check_invariance(meas, self.f)
        if not rep.passed:
            raise ConsistencyError(f"div(sigma b) != 0 (spectral residual {rep.residual:.3e})")
        self.zeta = np.real(mass(meas, self.f))
        if np.linalg.norm(self.zeta) < 1e-12:
            raise ConsistencyError("effective drift mean(sigma b) vanishes")
        pts = sample_grid(2, self.N).reshape(-1, 2)
        self.profile_mean = float(np.mean(self.sigma(pts) * self.u0.profile(pts)))
        self.metadata.setdefault("assumption", "rotation set is the single vector zeta")
        if not self.tests:
            c = np.asarray(self.u0.g.centre, dtype=float) - self.t * self.zeta
            r = self.u0.g.radius
            self.tests = (
                Bump(tuple(c), 0.6 * r),
                Bump(tuple(c + [0.0, 0.3 * r]), 0.5 * r),
                Bump(tuple(c + [0.3 * r, 0.0]), 0.4 * r),
            )

    def manifest(self):
        return {
            "schema": "homogenization_run",
            "version": 1,
            "family": self.f.family,
            "field": self.f.to_spec(),
            "eps": list(self.eps),
            "t": self.t,
            "zeta": self.zeta.tolist(),
            "u0": {"centre": list(self.u0.g.centre), "radius": self.u0.g.radius, "profile": self.u0.profile.to_json()},
            "tests": [{"centre": list(b.centre), "radius": b.radius} for b in self.tests],
            "metadata": self.metadata,
        }


def default_run(eps=(1 / 10, 1 / 20, 1 / 40), t=1.0):
    """Stepanoff scenario ``a = 2 + 0.5 sin(2 pi (x1 + x2))``, ``zeta0 = (1, sqrt 2)/sqrt 3``."""
    a = TrigScalar(2, 2.0, [((1, 1), 0.0, 0.5)])
    zeta0 = np.array([1.0, np.sqrt(2.0)]) / np.sqrt(3.0)
    f = build_stepanoff(a, zeta0)
    abar = harmonic_mean(a).value
    sigma = ScaledScalar(ReciprocalScalar(a), abar)
    profile = TrigScalar(2, 1.0, [((1, 0), 0.5, 0.0)])
    u0 = InitialDatum(Bump((0.0, 0.0), 0.3), profile)
    return HomogenizationRun(f, sigma, u0, tuple(eps), t, metadata={"harmonic_mean": abar})


def _flow_points(f, Y0, tau, s):
    """Endpoints of the flow from rows of ``Y0`` over time ``tau`` (either sign)."""
    g = f if tau >= 0 else f.reversed()
    Y0 = np.ascontiguousarray(Y0)
    if tau == 0 or len(Y0) == 0:
        return Y0.copy(), np.zeros(len(Y0), dtype=np.int64)
    chunks = np.array_split(np.arange(len(Y0)), min(_thread_count(), max(1, len(Y0) // 64)))

    def work(idx):
        return K.endpoints(g.ip, g.fp, Y0[idx], abs(float(tau)), s.rtol, s.atol, s.hmax, s.hmin, s.max_steps)

    out = np.empty_like(Y0)
    st = np.empty(len(Y0), dtype=np.int64)
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        for idx, (o, status) in zip(chunks, pool.map(work, chunks)):
            out[idx] = o
            st[idx] = status
    return out, st


def solve_transport_exact(run: HomogenizationRun, eps, t, x):
    """``u_eps(t, x)`` by characteristics; failed points are NaN.

    Points whose backward characteristic cannot reach the initial support
    still need the flow, so every point is integrated.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if t == 0:
        return run.u0(x, x / eps)
    Xl, st = _flow_points(run.f, x / eps, t / eps, run.settings)
    vals = run.u0(eps * Xl, Xl)
    vals[st != K.STATUS_OK] = np.nan
    return vals


def homogenized_solution(run: HomogenizationRun, t, x):
    """``v(t, x) = v0(x + t zeta)`` with ``v0 = g * mean(sigma p)``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return run.u0.g(x + t * run.zeta) * run.profile_mean


def _spacing(eps, grid):
    h = min(eps / 8.0, 1.0 / 64.0)
    if grid is not None:
        if eps < 8.0 / grid:
            raise ResolutionError(f"grid of {grid} points per unit cannot resolve eps = {eps} (needs eps >= {8.0 / grid})")
        h = min(h, 1.0 / grid)
    return h


def _box_grid(lo, hi, h):
    n = np.ceil((hi - lo) / h).astype(int) + 1
    axes = [lo[i] + h * np.arange(n[i]) for i in range(2)]
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2)
    return X


def _l2(func_vals, h):
    return float(np.sqrt(np.sum(func_vals**2) * h * h))


@dataclass
class ErrorTable:
    rows: list  # dicts: eps, phi_index, error, relative

    def errors(self, m):
        return [r["relative"] for r in self.rows if r["phi_index"] == m]

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epsilon", "phi_index", "error"])
            for r in self.rows:
                w.writerow([repr(r["eps"]), r["phi_index"], repr(r["error"])])

    def to_dict(self):
        return {"schema": "homogenization_errors", "version": 1, "rows": self.rows}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def weak_error(run: HomogenizationRun, t=None, eps=None, grid=None):
    """Table of ``|int phi_m (sigma(x/eps) u_eps(t) - v(t))| / (|phi_m|_2 |v(t)|_2)``."""
    t = run.t if t is None else t
    eps_list = run.eps if eps is None else eps
    lo = np.min([b.box()[0] for b in run.tests], axis=0)
    hi = np.max([b.box()[1] for b in run.tests], axis=0)
    # |v(t)|_2 = |v0|_2 since v is a translate
    g0 = run.u0.g
    hv = g0.radius / 200
    vnorm = _l2(g0(_box_grid(*g0.box(), hv)) * run.profile_mean, hv)
    rows = []
    for e in eps_list:
        h = _spacing(e, grid)
        X = _box_grid(lo, hi, h)
        keep = np.zeros(len(X), dtype=bool)
        for b in run.tests:
            keep |= b(X) > 0
        X = X[keep]
        u = solve_transport_exact(run, e, t, X)
        if np.any(np.isnan(u)):
            raise IntegrationError(f"{int(np.isnan(u).sum())} characteristic(s) failed at eps = {e}")
        w = run.sigma(X / e) * u - homogenized_solution(run, t, X)
        for m, b in enumerate(run.tests):
            phi = b(X)
            E = abs(float(np.sum(phi * w)) * h * h)
            rel = E / (_l2(phi, h) * vnorm)
            rows.append({"eps": float(e), "phi_index": m, "error": E, "relative": rel, "points": int(len(X))})
    return ErrorTable(rows)


def support_box(run: HomogenizationRun, eps, t, n_boundary=256, margin=None):
    """Bounding box of the support of ``u_eps(t, .)`` from backward-flowed boundary points."""
    g = run.u0.g
    th = 2 * np.pi * np.arange(n_boundary) / n_boundary
    Y = np.asarray(g.centre) + g.radius * np.stack([np.cos(th), np.sin(th)], axis=1)
    Xl, st = _flow_points(run.f, Y / eps, -t / eps, run.settings)
    if np.any(st != K.STATUS_OK):
        raise IntegrationError("backward characteristics failed")
    pts = eps * Xl
    # boundary arcs between samples can bulge by the flow's O(eps) wiggle
    m = 2 * eps + 2 * np.pi * g.radius / n_boundary * 4 if margin is None else margin
    return pts.min(axis=0) - m, pts.max(axis=0) + m


def conserved_integral(run: HomogenizationRun, eps, t, s=2, grid=None, refine=2):
    """``int sigma(x/eps) |u_eps(t, x)|^s dx`` over the support box of ``u_eps(t)``."""
    h = _spacing(eps, grid) / refine
    lo, hi = support_box(run, eps, t)
    X = _box_grid(lo, hi, h)
    u = solve_transport_exact(run, eps, t, X)
    if np.any(np.isnan(u)):
        raise IntegrationError("characteristic failed in conservation check")
    return float(np.sum(run.sigma(X / eps) * np.abs(u) ** s) * h * h)


def support_violation(run: HomogenizationRun, eps, t, n=4000, seed=0):
    """Max ``|u_eps(t, x)|`` over random points outside the support fattened by ``t |b|_inf``."""
    rng = np.random.default_rng(seed)
    g = run.u0.g
    reach = g.radius + t * run.f.sup_norm()
    ang = rng.random(n) * 2 * np.pi
    rad = reach * (1.0 + 0.5 * rng.random(n)) + 1e-9
    X = np.asarray(g.centre) + rad[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    return float(np.nanmax(np.abs(solve_transport_exact(run, eps, t, X))))

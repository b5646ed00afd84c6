"""Rotation-set estimation, case classification and Stepanoff predictions."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from . import _kernels as K
from .errors import InvalidInputError, SignError
from .fields import FieldInstance, sample_grid
from .flow import _settings, _thread_count
from .torus import CommensurabilityVerdict, affine_dimension, classify_commensurability, convex_hull

SEED = 0x5EED
POINT_TOL = 5e-3
COLLINEAR_TOL = 1e-4
ZERO_BAND = 1e-10
SIGN_GRID = 512
TRANSVERSAL_POINTS = 1024
# floor / cap of the relation search for estimated (noisy) vectors
ESTIMATE_TOL = 1e-6
ESTIMATE_MAX_DENOMINATOR = 1000

CASES = ("I", "II", "III", "IV_zero", "IV_segment", "unresolved", "3d_polytope")


def default_seeds(d=2, n_grid=5, n_random=7, seed=SEED):
    """Uniform ``n_grid``-per-axis grid plus ``n_random`` fixed pseudo-random points."""
    grid = sample_grid(d, n_grid).reshape(-1, d)
    rng = np.random.default_rng(seed)
    return np.vstack([grid, rng.random((n_random, d))])


@dataclass(eq=False)
class RotationEstimate:
    """Finite-time rotation vectors ``X(T, x)/T`` for a sweep of seeds."""

    seeds: np.ndarray
    horizons: np.ndarray
    lifts: np.ndarray  # (n_seeds, n_horizons, d), NaN where integration failed
    status: np.ndarray
    hull: object = None
    direction: np.ndarray | None = None
    case_label: str = "unresolved"
    verdict: CommensurabilityVerdict | None = None
    diagnostics: list = field(default_factory=list)

    @property
    def dim(self):
        return self.seeds.shape[1]

    @property
    def ok(self):
        return self.status == K.STATUS_OK

    @property
    def vectors(self):
        """Rotation vectors at the largest horizon (successful seeds only)."""
        return self.lifts[self.ok, -1, :] / self.horizons[-1]

    @property
    def displacement_vectors(self):
        """``(X(T, x) - x)/T`` at the largest horizon; same limit, no ``x/T`` bias."""
        return (self.lifts[self.ok, -1, :] - self.seeds[self.ok]) / self.horizons[-1]

    def quotients(self):
        """``X(T_i, x)/T_i`` for every seed and horizon."""
        return self.lifts / self.horizons[None, :, None]

    def cauchy_residuals(self):
        q = self.quotients()
        return np.linalg.norm(np.diff(q, axis=1), axis=2)

    def to_dict(self):
        hull = self.hull
        return {
            "schema": "rotation_set",
            "version": 1,
            "horizons": self.horizons.tolist(),
            "samples": [
                {
                    "seed": s.tolist(),
                    "status": int(st),
                    "rotation_vectors": (l / self.horizons[:, None]).tolist() if st == 0 else None,
                }
                for s, l, st in zip(self.seeds, self.lifts, self.status)
            ],
            "hull": None
            if hull is None
            else {"vertices": hull.vertices.tolist(), "dimension": hull.dimension, "diameter": hull.diameter()},
            "direction": None if self.direction is None else self.direction.tolist(),
            "case": self.case_label,
            "commensurability": None if self.verdict is None else self.verdict.to_dict(),
            "cauchy_residuals": np.nan_to_num(self.cauchy_residuals(), nan=-1.0).tolist(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _sweep(f, seeds, horizons, settings):
    s = _settings(settings)
    n, d = seeds.shape
    lifts = np.full((n, len(horizons), d), np.nan)
    status = np.zeros(n, dtype=np.int64)
    ts = np.concatenate([[0.0], horizons])

    def work(i):
        Y, st, *_ = K.dp45(f.ip, f.fp, seeds[i].copy(), ts, s.rtol, s.atol, s.hmax, s.hmin, s.max_steps, False)
        return Y[1:], st

    with ThreadPoolExecutor(max_workers=min(_thread_count(), n)) as pool:
        for i, (Y, st) in enumerate(pool.map(work, range(n))):
            status[i] = st
            if st == K.STATUS_OK:
                lifts[i] = Y
    return lifts, status


def estimate_rotation_set(
    f: FieldInstance,
    seeds=None,
    horizons=(1e2, 1e3, 1e4),
    settings=None,
    min_horizon=1e3,
    point_tol=POINT_TOL,
):
    """Integrate every seed to every horizon and summarise the cloud.

    The hull uses the largest horizon only; per-seed failures are recorded
    in ``status`` and do not abort the sweep.
    """
    seeds = default_seeds(f.dim) if seeds is None else np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.shape[1] != f.dim:
        raise InvalidInputError("seed dimension does not match the field")
    if len(seeds) < 4:
        raise InvalidInputError("at least 4 seeds are required")
    horizons = np.asarray(sorted(float(h) for h in horizons))
    if horizons[0] <= 0 or horizons[-1] < min_horizon:
        raise InvalidInputError(f"largest horizon must be >= {min_horizon:g}")
    lifts, status = _sweep(f, seeds, horizons, settings)
    est = RotationEstimate(seeds, horizons, lifts, status)
    n_fail = int(np.sum(status != K.STATUS_OK))
    if n_fail:
        est.diagnostics.append(f"{n_fail} seed(s) failed to integrate")
    if not np.any(est.ok):
        est.case_label = "unresolved"
        est.diagnostics.append("no successful seeds")
        return est
    est.hull = convex_hull(est.vectors)
    hint = f.params.get("zeta") if f.family == "stepanoff" else None
    classify_case(est, point_tol=point_tol, direction_hint=hint)
    return est


def _principal_direction(vectors):
    dim, centre, basis = affine_dimension(vectors, tol=0.0)
    if len(basis) == 0:
        return None
    u = basis[0]
    # orient towards the cloud's mean so segments from 0 point outward
    if centre @ u < 0:
        u = -u
    return u


def classify_case(est: RotationEstimate, point_tol=POINT_TOL, collinear_tol=COLLINEAR_TOL, direction_hint=None):
    """Assign one of the case labels to an estimate (in place) and return it.

    ``direction_hint`` is an exactly known drift direction (the Stepanoff
    ``zeta``); its commensurability is then decided at the strict defaults.
    Estimated directions are tested at a tolerance scaled to their own
    uncertainty (never below ``ESTIMATE_TOL``) with the denominator bound
    shrunk accordingly (never above ``ESTIMATE_MAX_DENOMINATOR``).
    """
    if est.dim != 2:
        est.case_label = "3d_polytope"
        return est.case_label
    v = est.vectors
    hull = est.hull if est.hull is not None else convex_hull(v)
    diam = hull.diameter()
    centre = v.mean(axis=0)

    def verdict_of(vec, spread):
        if direction_hint is not None:
            return classify_commensurability(direction_hint)
        # relative direction error: cloud spread plus the x/T bias of the quotients
        unc = (spread + np.sqrt(est.dim) / est.horizons[-1]) / max(np.abs(v).max(), 1e-300)
        tol = max(ESTIMATE_TOL, 10.0 * unc)
        # keep q * tol small so that a relation found is not forced by the tolerance
        max_den = int(max(1, min(ESTIMATE_MAX_DENOMINATOR, 0.1 / tol)))
        return classify_commensurability(vec, tol, max_den)

    if diam < point_tol:
        if np.linalg.norm(centre) < point_tol:
            est.case_label = "IV_zero"
            est.verdict = CommensurabilityVerdict("zero", float(np.linalg.norm(centre)))
            return est.case_label
        est.direction = centre / np.linalg.norm(centre)
        est.verdict = verdict_of(est.direction, diam)
        est.case_label = "II" if est.verdict.commensurable else "III"
        return est.case_label

    u = _principal_direction(v)
    spread = np.abs((v - centre) @ np.array([-u[1], u[0]])).max()
    if spread > collinear_tol * max(1.0, np.abs(v).max()):
        est.case_label = "unresolved"
        est.direction = None
        est.diagnostics.append(
            f"rotation vectors are not collinear (transversal spread {spread:.3e}); "
            "a planar cloud signals numerical error in dimension two"
        )
        return est.case_label
    est.direction = u
    est.verdict = verdict_of(u, spread)
    if est.verdict.commensurable:
        est.case_label = "I"
    else:
        est.case_label = "IV_segment"
        s = v @ u
        near0 = min(abs(s.min()), abs(s.max()))
        est.diagnostics.append(f"nearest segment end to the origin at |t| = {near0:.3e} (0 expected as an end point)")
    return est.case_label


# --------------------------------------------------------------------------
# harmonic means


@dataclass(frozen=True)
class HarmonicMean:
    """Harmonic mean ``(int 1/a)^-1`` with convergence bookkeeping."""

    value: float
    divergent: bool
    error: float
    method: str
    exponent: float | None = None

    def __float__(self):
        return self.value


def _midpoint_integral(f, d, n, chunk=1 << 20):
    # cell-centred grid: never touches lattice points, spectral for smooth data
    axes = (np.arange(n) + 0.5) / n
    if d == 1:
        return float(np.mean(1.0 / f(axes[:, None])))
    total = 0.0
    rows = max(1, chunk // n ** (d - 1))
    rest = sample_grid(d - 1, n).reshape(-1, d - 1) + 0.5 / n
    for i0 in range(0, n, rows):
        xs = axes[i0 : i0 + rows]
        pts = np.concatenate(
            [np.repeat(xs, len(rest))[:, None], np.tile(rest, (len(xs), 1))],
            axis=1,
        )
        vals = f(pts)
        with np.errstate(divide="ignore"):
            total += float(np.sum(1.0 / vals))
    return total / n**d


def _grid_sizes(d):
    top = {1: 1 << 20, 2: 2048, 3: 128}.get(d, 32)
    sizes = []
    n = {1: 1024, 2: 64, 3: 16}.get(d, 8)
    while n <= top:
        sizes.append(n)
        n *= 2
    return sizes


def harmonic_mean(a, grid_check=256, divergence_exponent=0.1):
    """Harmonic mean of a nonnegative scalar on the torus.

    Smooth positive data converges spectrally under cell-centred quadrature.
    Vanishing data has integrable point singularities in ``1/a``; the
    integrals on successive grids then behave like ``I + C h**p`` and are
    extrapolated with the exponent ``p`` estimated from three grids. An
    estimated ``p`` below ``divergence_exponent`` (logarithmic growth)
    flags the reciprocal integral as divergent and returns 0.

    Raises
    ------
    SignError
        If ``a`` has a negative sample.
    """
    d = a.dim
    pts = sample_grid(d, grid_check if d <= 2 else 64).reshape(-1, d)
    if float(np.min(a(pts))) < -1e-12:
        raise SignError("harmonic mean needs a nonnegative function")
    integrals = []
    sizes = _grid_sizes(d)
    for n in sizes:
        integrals.append(_midpoint_integral(a, d, n))
        I = integrals[-1]
        if not np.isfinite(I):
            return HarmonicMean(0.0, True, 0.0, "midpoint", None)
        if len(integrals) >= 2 and abs(I - integrals[-2]) <= 1e-13 * abs(I):
            return HarmonicMean(1.0 / I, False, abs(I - integrals[-2]) / I**2, "midpoint")
    I1, I2, I3 = integrals[-3:]
    d1, d2 = I2 - I1, I3 - I2
    if d1 <= 0 or d2 <= 0:
        # non-monotone sequence: report the finest grid with its spread
        I = I3
        return HarmonicMean(1.0 / I, False, abs(d2) / I**2, "midpoint")
    q = d1 / d2
    p = math.log2(q) if q > 0 else 0.0
    if p < divergence_exponent:
        return HarmonicMean(0.0, True, float("inf"), "extrapolated", p)
    I = I3 + d2 / (q - 1.0)
    # compare with the extrapolation from the previous triple
    err = abs(d2 / (q - 1.0)) * 1e-2
    if len(integrals) >= 4:
        J1, J2, J3 = integrals[-4:-1]
        e1, e2 = J2 - J1, J3 - J2
        if e1 > 0 and e2 > 0 and e1 != e2:
            err = abs(I - (J3 + e2 / (e1 / e2 - 1.0)))
    return HarmonicMean(1.0 / I, False, err / I**2, "extrapolated", p)


# --------------------------------------------------------------------------
# line averages along closed orbits


def _witness(zeta, witness):
    if witness is not None:
        k, T = witness
        return np.asarray(k, dtype=float), float(T)
    v = classify_commensurability(zeta)
    if not v.commensurable:
        raise InvalidInputError("line averages need a commensurable direction")
    return np.asarray(v.witness_k, dtype=float), float(v.witness_T)


def _line_min(a, zeta, x, T, n=4096):
    t = np.arange(n) / n * T
    vals = a(x + t[:, None] * zeta)
    i = int(np.argmin(np.abs(vals)))
    if np.any(vals > 0) and np.any(vals < 0):
        return 0.0
    h = T / n
    res = minimize_scalar(
        lambda s: abs(float(a(x + s * zeta))), bounds=(t[i] - h, t[i] + h), method="bounded", options={"xatol": 1e-12}
    )
    return min(abs(float(vals[i])), float(res.fun))


def line_average_m(a, zeta, x, witness=None, tol=1e-13, root_tol=1e-12):
    """``m(x) = ((1/T) int_0^T dt / a(t zeta + x))^-1`` along a closed orbit.

    Returns 0 when ``a`` vanishes on the line. The integrand is smooth and
    periodic, so the trapezoid rule converges geometrically; failure to
    converge is treated as an undetected root.
    """
    zeta = np.asarray(zeta, dtype=float)
    x = np.asarray(x, dtype=float)
    _, T = _witness(zeta, witness)
    if _line_min(a, zeta, x, T) <= root_tol:
        return 0.0
    prev = None
    n = 64
    while n <= 1 << 18:
        t = np.arange(n) / n * T
        I = float(np.mean(1.0 / a(x + t[:, None] * zeta)))
        if prev is not None and abs(I - prev) <= tol * abs(I):
            return 1.0 / I
        prev = I
        n *= 2
    return 0.0


# --------------------------------------------------------------------------
# Stepanoff predictions


@dataclass
class StepanoffPrediction:
    kind: str  # "point" | "segment" | "zero"
    endpoints: np.ndarray  # (2, d); equal rows for a point
    sign_pattern: str  # "positive" | "negative" | "vanishing" | "changes_sign"
    verdict: CommensurabilityVerdict
    case: str
    harmonic: HarmonicMean | None = None
    m_range: tuple | None = None

    def to_dict(self):
        return {
            "kind": self.kind,
            "endpoints": self.endpoints.tolist(),
            "sign_pattern": self.sign_pattern,
            "commensurability": self.verdict.to_dict(),
            "case": self.case,
            "harmonic_mean": None if self.harmonic is None else self.harmonic.value,
            "m_range": None if self.m_range is None else list(self.m_range),
        }


def sign_pattern(a, n=SIGN_GRID, band=ZERO_BAND):
    """Classify the sign of ``a`` on a dense grid plus local minimisation."""
    pts = sample_grid(a.dim, n).reshape(-1, a.dim)
    vals = a(pts)
    if np.any(vals > band) and np.any(vals < -band):
        return "changes_sign"
    neg = not np.any(vals > band)
    g = -vals if neg else vals
    lo = float(g.min())
    if lo <= band:
        return "vanishing"
    if hasattr(a, "grad"):
        sgn = -1.0 if neg else 1.0
        for x0 in pts[np.argsort(g)[:8]]:
            r = minimize(lambda z: sgn * float(a(z)), x0, jac=lambda z: sgn * np.asarray(a.grad(z)), method="BFGS")
            if r.fun <= band:
                return "vanishing"
    return "negative" if neg else "positive"


def _golden_extremum(fun, lo, hi, maximize):
    sgn = -1.0 if maximize else 1.0
    r = minimize_scalar(lambda s: sgn * fun(s), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    return float(fun(r.x))


def m_transversal(a, zeta, witness=None, n=TRANSVERSAL_POINTS):
    """Samples of ``m`` on the transversal ``x(s) = s R_perp k / |k|^2``."""
    k, T = _witness(zeta, witness)
    perp = np.array([k[1], -k[0]]) / (k @ k)
    s = np.arange(n) / n
    m = np.array([line_average_m(a, zeta, si * perp, (k, T)) for si in s])
    return s, m, perp, (k, T)


def stepanoff_predict(a, zeta=None):
    """Predicted rotation set of the Stepanoff field ``a zeta``.

    ``a`` may be a :class:`FieldInstance` of the Stepanoff family, in which
    case ``zeta`` is taken from it.
    """
    if isinstance(a, FieldInstance):
        if a.family != "stepanoff":
            raise InvalidInputError("stepanoff_predict needs a Stepanoff field")
        zeta = a.params["zeta"] * a.scale
        a = a.params["a"]
    zeta = np.asarray(zeta, dtype=float)
    pattern = sign_pattern(a)
    verdict = classify_commensurability(zeta)
    zero = np.zeros((2, len(zeta)))
    if verdict.commensurable:
        s, m, perp, wit = m_transversal(a, zeta)
        n = len(s)
        h = 1.0 / n
        ext = []
        for maximize in (False, True):
            order = np.argsort(-m if maximize else m)[:3]
            cands = [m[i] for i in order]
            for i in order:
                cands.append(
                    _golden_extremum(lambda t: line_average_m(a, zeta, t * perp, wit), s[i] - h, s[i] + h, maximize)
                )
            ext.append(max(cands) if maximize else min(cands))
        lo, hi = ext
        ends = np.array([lo * zeta, hi * zeta])
        if hi - lo <= 1e-12 * max(1.0, abs(hi)):
            kind = "zero" if abs(hi) <= 1e-14 else "point"
            case = "IV_zero" if kind == "zero" else "II"
        else:
            kind, case = "segment", "I"
        return StepanoffPrediction(kind, ends, pattern, verdict, case, None, (lo, hi))
    if pattern == "changes_sign":
        return StepanoffPrediction("zero", zero, pattern, verdict, "IV_zero")
    if pattern == "negative":
        neg = _Negated(a)
        hm = harmonic_mean(neg)
        v = -hm.value * zeta
        return StepanoffPrediction("point", np.array([v, v]), pattern, verdict, "III", hm)
    hm = harmonic_mean(a)
    if pattern == "positive":
        v = hm.value * zeta
        return StepanoffPrediction("point", np.array([v, v]), pattern, verdict, "III", hm)
    if hm.divergent or hm.value == 0.0:
        return StepanoffPrediction("zero", zero, pattern, verdict, "IV_zero", hm)
    return StepanoffPrediction("segment", np.array([0 * zeta, hm.value * zeta]), pattern, verdict, "IV_segment", hm)


class _Negated:
    def __init__(self, a):
        self.a = a
        self.dim = a.dim

    def __call__(self, x):
        return -self.a(x)

    def grad(self, x):
        return -self.a.grad(x)


def segment_distance(points, p0, p1):
    """Euclidean distance from points to the segment ``[p0, p1]``."""
    points = np.atleast_2d(points)
    p0 = np.asarray(p0, dtype=float)
    e = np.asarray(p1, dtype=float) - p0
    L = e @ e
    t = np.zeros(len(points)) if L == 0 else np.clip((points - p0) @ e / L, 0.0, 1.0)
    return np.linalg.norm(points - p0 - t[:, None] * e, axis=1)

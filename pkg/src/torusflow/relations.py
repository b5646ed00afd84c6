"""Determinant identities between Fourier coefficients of invariant measures."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, InvalidInputError
from .fields import FieldInstance, TrigScalar
from .measures import (
    DiracMeasure,
    StreamFunction,
    check_invariance,
    mass,
    solve_stream,
    wavevectors,
    weighted_table,
)

FOUR_PI2 = 4.0 * np.pi**2
INVARIANCE_GATE = 1e-8


def _det2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _require_invariant(measure, f, K, tol):
    rep = check_invariance(measure, f, K, tol)
    if not rep.passed:
        raise ConsistencyError(f"measure is not invariant (spectral divergence {rep.residual:.3e})")


def _stream(measure, f, K, given):
    if given is not None:
        return given
    if isinstance(measure, DiracMeasure):
        # an invariant Dirac has b mu = 0, hence a vanishing stream function
        return StreamFunction(np.zeros((2 * K + 1, 2 * K + 1), complex), K, mass(measure, f))
    return solve_stream(measure, f, K)


@dataclass(eq=False)
class RelationReport:
    """Residuals of ``det(c_mu(j), c_nu(k)) = -4 pi^2 det(j, k) u(j) v(k)``.

    ``lhs`` and ``rhs`` are complex arrays indexed ``[j1+K, j2+K, k1+K, k2+K]``;
    ``residual`` is ``|lhs - rhs| / max(1, 4 pi^2 |det(j, k)|)`` restricted to
    ``j, k != 0`` plus the ``(0, 0)`` entry.
    """

    K: int
    lhs: np.ndarray = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    residual: np.ndarray = field(repr=False)
    collinearity: float
    mass_mu: np.ndarray
    mass_nu: np.ndarray
    u: StreamFunction = field(repr=False)
    v: StreamFunction = field(repr=False)

    @property
    def max_residual(self):
        return float(np.nanmax(self.residual))

    def worst(self):
        i = np.unravel_index(int(np.nanargmax(self.residual)), self.residual.shape)
        return [int(c) - self.K for c in i]

    def parseval(self):
        """``(sum |lhs/det(j,k)|^2, 16 pi^4 |u|^2 |v|^2)`` over ``det(j,k) != 0``."""
        dets = _index_dets(self.K)
        mask = dets != 0
        lhs = float(np.sum(np.abs(self.lhs[mask] / dets[mask]) ** 2))
        return lhs, 16 * np.pi**4 * self.u.norm2() * self.v.norm2()

    def to_dict(self, tol=1e-8):
        lhs, bound = self.parseval()
        return {
            "schema": "relations",
            "version": 1,
            "K": self.K,
            "max_residual": self.max_residual,
            "worst_index": self.worst(),
            "collinearity": self.collinearity,
            "mass_mu": self.mass_mu.tolist(),
            "mass_nu": self.mass_nu.tolist(),
            "parseval_sum": lhs,
            "parseval_bound": bound,
            "passed": self.max_residual <= tol,
        }

    def to_json(self, tol=1e-8):
        return json.dumps(self.to_dict(tol), indent=2, sort_keys=True)

    def write_csv(self, path):
        idx = np.argwhere(np.isfinite(self.residual))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["j1", "j2", "k1", "k2", "residual"])
            for i in idx:
                j1, j2, k1, k2 = (int(c) - self.K for c in i)
                w.writerow([j1, j2, k1, k2, repr(float(self.residual[tuple(i)]))])


def _index_dets(K):
    ks = wavevectors(K).astype(float)
    return ks[:, :, None, None, 0] * ks[None, None, :, :, 1] - ks[:, :, None, None, 1] * ks[None, None, :, :, 0]


def verify_pairwise_relations(mu, nu, f: FieldInstance, K=16, u=None, v=None, gate=INVARIANCE_GATE):
    """Residual table of the pairwise Fourier relations for ``|j|, |k| <= K``.

    ``u`` / ``v`` may supply stream functions obtained independently;
    otherwise they are solved spectrally from each measure.
    """
    if f.dim != 2:
        raise InvalidInputError("pairwise relations are two-dimensional")
    _require_invariant(mu, f, K, gate)
    _require_invariant(nu, f, K, gate)
    cm = weighted_table(mu, f, K)
    cn = weighted_table(nu, f, K)
    u = _stream(mu, f, K, u)
    v = _stream(nu, f, K, v)
    lhs = (
        cm[:, :, None, None, 0] * cn[None, None, :, :, 1] - cm[:, :, None, None, 1] * cn[None, None, :, :, 0]
    )
    dets = _index_dets(K)
    rhs = -FOUR_PI2 * dets * u.coeffs[:, :, None, None] * v.coeffs[None, None, :, :]
    mm = np.real(cm[K, K])
    mn = np.real(cn[K, K])
    collin = float(_det2(mm, mn))
    # the (0,0) identity reads det(mu(b), nu(b)) = 0
    rhs[K, K, K, K] = 0.0
    res = np.abs(lhs - rhs) / np.maximum(1.0, FOUR_PI2 * np.abs(dets))
    # mixed pairs (j,0) / (0,k) lie outside the validated index set
    res[K, K, :, :] = np.nan
    res[:, :, K, K] = np.nan
    res[K, K, K, K] = abs(collin)
    return RelationReport(K, lhs, rhs, res, collin, mm, mn, u, v)


def extension_residuals(mu, nu, f: FieldInstance, K=16):
    """``|det(c_mu(j), nu(b))|`` and ``|det(mu(b), c_nu(k))|`` for nonzero indices.

    Returns ``(table_j, table_k)``, each ``(2K+1, 2K+1)`` with the centre
    (zero index) set to 0.
    """
    cm = weighted_table(mu, f, K)
    cn = weighted_table(nu, f, K)
    mm = cm[K, K]
    mn = cn[K, K]
    tj = np.abs(_det2(cm, np.broadcast_to(mn, cm.shape)))
    tk = np.abs(_det2(np.broadcast_to(mm, cn.shape), cn))
    tj[K, K] = 0.0
    tk[K, K] = 0.0
    return tj, tk


def orthogonality_check(measure, f: FieldInstance, K=16):
    """``max_{0<|k|<=K} |c(k).k|`` for the coefficients of ``sigma b``."""
    return check_invariance(measure, f, K).orthogonality


# --------------------------------------------------------------------------
# integral relation with a test function rho(x, y) on Y_2 x Y_2


def _split_terms(rho: TrigScalar):
    """Complex coefficients ``{(p, q): c}`` with ``rho = sum c exp(2 i pi (p.x + q.y))``."""
    if rho.dim != 4:
        raise InvalidInputError("rho must be a trigonometric polynomial on Y_2 x Y_2 (dimension 4)")
    return {(k[:2], k[2:]): c for k, c in rho.complex_coefficients().items()}


def _moment(measure, f, p, cache):
    """``int exp(2 i pi p.x) b(x) dmu(x)`` by direct grid summation."""
    key = (id(measure), p)
    if key in cache:
        return cache[key]
    if isinstance(measure, DiracMeasure):
        x = np.asarray(measure.x, dtype=float)
        val = np.exp(2j * np.pi * (np.asarray(p) @ x)) * f.eval(x)
    else:
        w = cache.setdefault((id(measure), "sb"), measure.weighted(f))
        pts = measure.points()
        ph = np.exp(2j * np.pi * (pts @ np.asarray(p, dtype=float)))
        val = np.tensordot(ph, w, axes=([0, 1], [0, 1])) / measure.values.size
    cache[key] = val
    return val


def _partial_mean_moment(measure, f, rho_part, cache):
    """``int r(x) b(x) dmu(x)`` for a trig scalar ``r`` on Y_2."""
    if isinstance(measure, DiracMeasure):
        x = np.asarray(measure.x, dtype=float)
        return rho_part(x) * f.eval(x)
    w = cache.setdefault((id(measure), "sb"), measure.weighted(f))
    r = rho_part(measure.points().reshape(-1, 2)).reshape(w.shape[:-1])
    return np.tensordot(r, w, axes=([0, 1], [0, 1])) / measure.values.size


@dataclass
class IntegralRelation:
    left: float
    right: float
    terms: dict

    @property
    def gap(self):
        return abs(self.left - self.right)

    def to_dict(self):
        return {"left": self.left, "right": self.right, "gap": self.gap, "terms": self.terms}


def integral_relation(mu, nu, f: FieldInstance, rho: TrigScalar, u=None, v=None):
    """Both sides of the integral determinant relation for a trig ``rho(x, y)``.

    The left side is the tensor-grid quadrature of
    ``rho(x, y) det(b(x), b(y)) dmu(x) dnu(y)``; for trigonometric ``rho``
    it factorises exactly into products of one-point grid sums. The right
    side combines the partial means of ``rho`` against ``b mu`` and ``b nu``
    with the mixed-derivative term paired with the stream functions.
    """
    coeffs = _split_terms(rho)
    cache = {}
    left = 0j
    for (p, q), c in coeffs.items():
        left += c * _det2(_moment(mu, f, p, cache), _moment(nu, f, q, cache))

    rx = TrigScalar.from_complex(2, {p: c for (p, q), c in coeffs.items() if not any(q)})
    ry = TrigScalar.from_complex(2, {q: c for (p, q), c in coeffs.items() if not any(p)})
    mm = np.real(mass(mu, f))
    mn = np.real(mass(nu, f))
    Bx = np.real(_partial_mean_moment(mu, f, rx, cache))
    By = np.real(_partial_mean_moment(nu, f, ry, cache))
    # R_perp w . z = det(z, w)
    t1 = float(_det2(Bx, mn))
    t2 = -float(_det2(By, mm))

    K = max(1, max((max(abs(c) for c in p + q) for (p, q) in coeffs), default=1))
    us = _stream(mu, f, K, u)
    vs = _stream(nu, f, K, v)
    t3 = 0j
    for (p, q), c in coeffs.items():
        dpq = p[0] * q[1] - p[1] * q[0]
        if dpq == 0:
            continue
        # mixed derivative of exp(2 i pi (p.x + q.y)) is -4 pi^2 det(p, q) times it
        up = us.coef((-p[0], -p[1])) if max(abs(p[0]), abs(p[1])) <= us.K else 0.0
        vq = vs.coef((-q[0], -q[1])) if max(abs(q[0]), abs(q[1])) <= vs.K else 0.0
        t3 += c * (-FOUR_PI2 * dpq) * up * vq
    right = t1 + t2 + float(np.real(t3))
    return IntegralRelation(
        float(np.real(left)),
        right,
        {"partial_x": t1, "partial_y": t2, "mixed": float(np.real(t3)), "imag_left": float(np.imag(left))},
    )

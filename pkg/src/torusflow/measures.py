"""Density invariant measures, vector masses and spectral stream functions."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, InvalidInputError, PositivityError
from .fields import FieldInstance, TrigScalar, certify_positive, sample_grid, stream_potential
from .torus import wrap

TWO_PI = 2.0 * np.pi
DEFAULT_N = 256
INVARIANCE_TOL = 1e-10
DIRAC_TOL = 1e-10


def _is_pow2(n):
    return n >= 2 and (n & (n - 1)) == 0


def fourier_coefficients(values):
    """Coefficients ``int f(x) exp(-2 i pi k.x) dx`` of grid samples (full FFT layout)."""
    return np.fft.fftn(values) / values.size


def centred_block(coeffs, K, axes=None):
    """Restrict a full FFT table to ``|k|_inf <= K``; index ``k + K`` along each axis."""
    d = coeffs.ndim if axes is None else axes
    idx = np.arange(-K, K + 1)
    out = coeffs
    for ax in range(d):
        out = np.take(out, idx % coeffs.shape[ax], axis=ax)
    return out


def wavevectors(K, d=2):
    """Integer grid ``|k|_inf <= K`` shaped ``(2K+1,)*d + (d,)``, matching :func:`centred_block`."""
    r = np.arange(-K, K + 1)
    return np.stack(np.meshgrid(*([r] * d), indexing="ij"), axis=-1)


@dataclass(eq=False)
class DensityMeasure:
    """Density ``sigma`` of a probability measure sampled on an ``N^d`` grid.

    ``values[i1, ..., id]`` is sigma at ``(i1, ..., id) / N``; the mean is 1.
    """

    values: np.ndarray
    K: int | None = None
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        d = v.ndim
        N = v.shape[0]
        if any(s != N for s in v.shape) or not _is_pow2(N):
            raise InvalidInputError("density grid must be N^d with N a power of two")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("density has non-finite samples")
        if v.min() < -1e-12:
            raise PositivityError(f"density has a negative sample ({v.min():.3e})")
        m = v.mean()
        if m <= 0:
            raise PositivityError("density has nonpositive mean")
        self.values = v / m
        if self.K is None:
            self.K = N // 8
        self._fft = None

    @classmethod
    def from_function(cls, sigma, d=2, N=DEFAULT_N, K=None, label=""):
        pts = sample_grid(d, N)
        return cls(np.asarray(sigma(pts.reshape(-1, d)), dtype=float).reshape((N,) * d), K, label)

    @classmethod
    def uniform(cls, d=2, N=DEFAULT_N):
        return cls(np.ones((N,) * d), None, "lebesgue")

    @property
    def d(self):
        return self.values.ndim

    @property
    def N(self):
        return self.values.shape[0]

    def points(self):
        return sample_grid(self.d, self.N)

    @property
    def fourier(self):
        if self._fft is None:
            self._fft = np.fft.fftn(self.values) / self.values.size
        return self._fft

    def table(self, K=None):
        return centred_block(self.fourier, self.K if K is None else K)

    def roundtrip_error(self):
        back = np.fft.ifftn(self.fourier * self.values.size).real
        return float(np.abs(back - self.values).max())

    def weighted(self, f: FieldInstance):
        """Samples of ``sigma * b`` on the grid, shape ``(N,)*d + (d,)``."""
        if f.dim != self.d:
            raise InvalidInputError(f"measure lives on Y_{self.d}, field on Y_{f.dim}")
        b = f.eval(self.points().reshape(-1, self.d)).reshape(self.values.shape + (self.d,))
        return self.values[..., None] * b

    def weighted_coefficients(self, f: FieldInstance):
        """Full FFT tables of ``sigma b`` with the component on the last axis."""
        sb = self.weighted(f)
        axes = tuple(range(self.d))
        return np.fft.fftn(sb, axes=axes) / self.values.size

    # serialization ------------------------------------------------------
    def save(self, path):
        """Row-major float64 samples at ``path`` plus ``path + '.json'`` sidecar."""
        self.values.astype("<f8").tofile(path)
        with open(str(path) + ".json", "w", encoding="utf-8") as fh:
            json.dump({"schema": "density", "version": 1, "N": self.N, "d": self.d, "K": self.K}, fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(str(path) + ".json", encoding="utf-8") as fh:
            meta = json.load(fh)
        v = np.fromfile(path, dtype="<f8").reshape((meta["N"],) * meta["d"])
        return cls(v, meta["K"])

    def fourier_json(self, K=None):
        K = self.K if K is None else K
        tab = self.table(K)
        ks = wavevectors(K, self.d).reshape(-1, self.d)
        return [
            {"k": [int(c) for c in k], "re": float(z.real), "im": float(z.imag)} for k, z in zip(ks, tab.ravel())
        ]


@dataclass(frozen=True)
class DiracMeasure:
    """Point mass at ``x`` on the torus."""

    x: tuple

    @property
    def d(self):
        return len(self.x)

    def weighted_table(self, f: FieldInstance, K):
        bx = f.eval(np.asarray(self.x))
        ks = wavevectors(K, self.d)
        phase = np.exp(-2j * np.pi * (ks @ np.asarray(self.x, dtype=float)))
        return phase[..., None] * bx


def weighted_table(measure, f: FieldInstance, K):
    """``(sigma b)^(k)`` for ``|k|_inf <= K``, shape ``(2K+1,)*d + (d,)``."""
    if isinstance(measure, DiracMeasure):
        return measure.weighted_table(f, K)
    full = measure.weighted_coefficients(f)
    return centred_block(full, K, axes=measure.d)


def mass(measure, f: FieldInstance):
    """Vector mass ``mu(b) = int b dmu``."""
    if isinstance(measure, DiracMeasure):
        return f.eval(np.asarray(measure.x, dtype=float))
    return measure.weighted(f).reshape(-1, measure.d).mean(axis=0)


@dataclass
class InvarianceReport:
    residual: float
    orthogonality: float
    K: int
    tolerance: float
    worst_k: list

    @property
    def passed(self):
        return self.residual <= self.tolerance

    def to_dict(self):
        return {
            "schema": "invariance",
            "version": 1,
            "residual": self.residual,
            "orthogonality": self.orthogonality,
            "K": self.K,
            "tolerance": self.tolerance,
            "worst_k": self.worst_k,
            "passed": self.passed,
        }


def _orthogonality(table, K, d):
    ks = wavevectors(K, d)
    dots = np.abs(np.sum(table * ks, axis=-1))
    dots[(K,) * d] = 0.0
    i = np.unravel_index(int(np.argmax(dots)), dots.shape)
    return float(dots[i]), [int(c) for c in ks[i]]


def check_invariance(measure, f: FieldInstance, K=None, tolerance=INVARIANCE_TOL):
    """Spectral divergence ``max_k |2 pi k . (sigma b)^(k)|`` over ``0 < |k|_inf <= K``."""
    if measure.d not in (2, 3):
        raise InvalidInputError("invariance checks are implemented for d in {2, 3}")
    K = getattr(measure, "K", 16) if K is None else K
    tab = weighted_table(measure, f, K)
    orth, worst = _orthogonality(tab, K, measure.d)
    return InvarianceReport(TWO_PI * orth, orth, K, tolerance, worst)


def dirac_invariance(x, f: FieldInstance, tol=DIRAC_TOL):
    """A Dirac mass at ``x`` is invariant iff ``b(x) = 0``.

    Returns ``(invariant, |b(x)|, mass)`` with ``mass = b(x)``.
    """
    bx = f.eval(np.asarray(x, dtype=float))
    nb = float(np.linalg.norm(bx))
    return nb <= tol, nb, bx


def min_speed_scan(f: FieldInstance, n=128):
    """Minimum of ``|b|`` over an ``n^d`` grid and where it occurs."""
    pts = sample_grid(f.dim, n).reshape(-1, f.dim)
    sp = np.linalg.norm(f.eval(pts), axis=1)
    i = int(np.argmin(sp))
    return float(sp[i]), pts[i]


# --------------------------------------------------------------------------
# the mu_theta family of a stream field


def _as_theta(theta):
    if isinstance(theta, TrigScalar):
        if theta.dim != 1:
            raise InvalidInputError("theta must be a trigonometric polynomial on Y_1")
        return theta
    raise InvalidInputError("theta must be a TrigScalar on Y_1")


def build_mu_theta(f: FieldInstance, theta, N=DEFAULT_N, K=None):
    """Invariant density ``sigma theta(u) / mean(sigma theta(u))`` of a stream field."""
    if f.family != "stream":
        raise InvalidInputError("mu_theta needs a stream field")
    theta = _as_theta(theta)
    certify_positive(theta, 4096, "theta")
    pts = sample_grid(2, N).reshape(-1, 2)
    u = stream_potential(f, pts)
    vals = f.params["sigma"](pts) * theta(u[:, None])
    return DensityMeasure(vals.reshape(N, N), K, label="mu_theta")


def mu_theta_normaliser(f: FieldInstance, theta, N=DEFAULT_N):
    """``mean(sigma theta(u))`` by grid quadrature."""
    pts = sample_grid(2, N).reshape(-1, 2)
    return float(np.mean(f.params["sigma"](pts) * _as_theta(theta)(stream_potential(f, pts)[:, None])))


def mu_theta_mass(f: FieldInstance, theta, N=DEFAULT_N):
    """Closed-form mass ``theta_bar / mean(sigma theta(u)) * R_perp(mean grad u)``."""
    xi = f.params["grad_u_mean"]
    return _as_theta(theta).mean / mu_theta_normaliser(f, theta, N) * np.array([xi[1], -xi[0]]) * f.scale


# --------------------------------------------------------------------------
# stream functions


@dataclass(eq=False)
class StreamFunction:
    """Fourier coefficients of the periodic stream function, ``|k|_inf <= K``.

    ``coeffs[k1 + K, k2 + K]`` is the coefficient of ``exp(2 i pi k.x)``;
    the mean coefficient is 0.
    """

    coeffs: np.ndarray
    K: int
    mass: np.ndarray
    orthogonality: float = 0.0
    reconstruction: float = 0.0
    meta: dict = field(default_factory=dict)

    def coef(self, k):
        return self.coeffs[k[0] + self.K, k[1] + self.K]

    def hermitian_defect(self):
        return float(np.abs(self.coeffs - np.conj(self.coeffs[::-1, ::-1])).max())

    def norm2(self):
        return float(np.sum(np.abs(self.coeffs) ** 2))

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ks = wavevectors(self.K).reshape(-1, 2)
        ph = np.exp(2j * np.pi * (wrap(x) @ ks.T))
        return (ph @ self.coeffs.ravel()).real

    def to_json(self):
        ks = wavevectors(self.K).reshape(-1, 2)
        return [
            {"k": [int(a), int(b)], "re": float(z.real), "im": float(z.imag)}
            for (a, b), z in zip(ks, self.coeffs.ravel())
            if z != 0
        ]


def stream_from_table(table, K, mass_vec, tolerance=1e-8):
    """Stream coefficients from a table of ``(sigma b)^(k)``.

    ``u(k) = c(k).(k2, -k1) / (2 i pi |k|^2)``; raises ConsistencyError when
    the orthogonality residual exceeds ``tolerance``.
    """
    ks = wavevectors(K)
    orth, worst = _orthogonality(table, K, 2)
    if orth > tolerance:
        raise ConsistencyError(f"measure is not invariant: |c(k).k| = {orth:.3e} at k = {worst}")
    perp = np.stack([ks[..., 1], -ks[..., 0]], axis=-1).astype(float)
    k2 = np.sum(ks * ks, axis=-1).astype(float)
    k2[K, K] = 1.0
    u = np.sum(table * perp, axis=-1) / (2j * np.pi * k2)
    u[K, K] = 0.0
    recon = 2j * np.pi * perp * u[..., None]
    diff = np.abs(table - recon)
    diff[K, K] = 0.0
    return StreamFunction(u, K, np.asarray(mass_vec, dtype=float), orth, float(diff.max()))


def solve_stream(measure, f: FieldInstance, K=None, tolerance=1e-8):
    """Stream function of ``b mu = mu(b) + R_perp grad u`` on Y_2.

    Raises
    ------
    ConsistencyError
        If ``(sigma b)^(k) . k`` exceeds ``tolerance`` (measure not invariant)
        or the zero mode disagrees with :func:`mass`.
    """
    if measure.d != 2 or f.dim != 2:
        raise InvalidInputError("stream functions are defined in dimension two")
    K = getattr(measure, "K", 16) if K is None else K
    tab = weighted_table(measure, f, K)
    mv = mass(measure, f)
    if np.abs(tab[K, K] - mv).max() > 1e-10 * max(1.0, np.abs(mv).max()):
        raise ConsistencyError("zero Fourier mode does not match the vector mass")  # pragma: no cover
    return stream_from_table(tab, K, mv.real if np.iscomplexobj(mv) else mv, tolerance)

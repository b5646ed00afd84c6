"""Flow integration on the universal cover, time-one maps and the lift test."""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import root

from . import _kernels as K
from .errors import IntegrationError, InvalidInputError
from .fields import FieldInstance
from .torus import torus_distance, wrap

STALL_DISPLACEMENT = 1e-8
STALL_FRACTION = 0.1


@dataclass(frozen=True)
class IntegratorSettings:
    rtol: float = 1e-10
    atol: float = 1e-10
    hmax: float = np.inf
    hmin: float = 1e-12
    max_steps: int = 50_000_000

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.hmax > 0 and self.hmin >= 0):
            raise InvalidInputError("tolerances and step bounds must be positive")


DEFAULT_SETTINGS = IntegratorSettings()


def _settings(settings):
    if settings is None:
        return DEFAULT_SETTINGS
    if isinstance(settings, dict):
        return IntegratorSettings(**settings)
    return settings


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Lift positions of one orbit at increasing sample times."""

    times: np.ndarray
    lifts: np.ndarray
    field_family: str
    steps: int
    rejected: int
    max_error: float
    stalled: bool = False

    @property
    def x0(self):
        return self.lifts[0]

    @property
    def end(self):
        return self.lifts[-1]

    @property
    def rotation_vector(self):
        return self.lifts[-1] / self.times[-1]

    def to_csv(self, path):
        d = self.lifts.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(d)])
            for t, x in zip(self.times, self.lifts):
                w.writerow([repr(float(t))] + [repr(float(c)) for c in x])


_STATUS_TEXT = {
    K.STATUS_UNDERFLOW: "step size underflow",
    K.STATUS_MAXSTEPS: "step budget exhausted",
    K.STATUS_NONFINITE: "non-finite state",
}


def _check_x0(f, x0):
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (f.dim,):
        raise InvalidInputError(f"initial point must have shape ({f.dim},)")
    if not np.all(np.isfinite(x0)):
        raise InvalidInputError("non-finite initial point")
    return x0


def _stalled(times, lifts, T):
    late = times >= (1.0 - STALL_FRACTION) * T
    if late.sum() < 2:
        return False
    seg = lifts[late]
    return bool(np.linalg.norm(seg[-1] - seg[0]) < STALL_DISPLACEMENT)


def integrate(f: FieldInstance, x0, T, settings=None, samples=None, n_samples=101):
    """Integrate ``x' = b(x)`` on the lift from ``x0`` up to time ``T``.

    Parameters
    ----------
    f : FieldInstance
    x0 : array_like
        Initial lift point.
    T : float
        Horizon, ``T > 0``.
    settings : IntegratorSettings or dict, optional
    samples : array_like, optional
        Sample times in ``[0, T]``; defaults to ``n_samples`` uniform times.

    Returns
    -------
    Trajectory

    Raises
    ------
    IntegrationError
        When the step size underflows or the state blows up; carries the
        time reached.
    """
    s = _settings(settings)
    x0 = _check_x0(f, x0)
    T = float(T)
    if not (T > 0 and np.isfinite(T)):
        raise InvalidInputError("horizon T must be positive and finite")
    if samples is None:
        ts = np.linspace(0.0, T, n_samples)
    else:
        ts = np.unique(np.concatenate([[0.0], np.asarray(samples, dtype=float), [T]]))
        if ts[0] < 0 or ts[-1] > T:
            raise InvalidInputError("sample times must lie in [0, T]")
    Y, status, t_reached, n_acc, n_rej, max_err = K.dp45(
        f.ip, f.fp, x0.copy(), ts, s.rtol, s.atol, s.hmax, s.hmin, s.max_steps, False
    )
    if status != K.STATUS_OK:
        raise IntegrationError(f"integration stopped at t={t_reached:.6g}: {_STATUS_TEXT[status]}", t_reached)
    Y[0] = x0
    return Trajectory(ts, Y, f.family, int(n_acc), int(n_rej), float(max_err), _stalled(ts, Y, T))


def flow(f: FieldInstance, x0, t, settings=None):
    """Endpoint ``X(t, x0)`` for one or many initial points (rows)."""
    s = _settings(settings)
    X0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if X0.shape[1] != f.dim or not np.all(np.isfinite(X0)):
        raise InvalidInputError("initial points must be finite with the field dimension")
    if t == 0:
        return X0.copy() if np.ndim(x0) == 2 else X0[0].copy()
    g = f if t > 0 else f.reversed()
    out, status = K.endpoints(g.ip, g.fp, np.ascontiguousarray(X0), abs(float(t)), s.rtol, s.atol, s.hmax, s.hmin, s.max_steps)
    bad = np.flatnonzero(status != K.STATUS_OK)
    if len(bad):
        raise IntegrationError(f"{len(bad)} orbit(s) failed: {_STATUS_TEXT[int(status[bad[0]])]}")
    return out if np.ndim(x0) == 2 else out[0]


def _thread_count():
    try:
        n = int(os.environ.get("TORUSFLOW_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else min(8, os.cpu_count() or 1)


def endpoints_parallel(f: FieldInstance, X0, T, settings=None):
    """Flow many seeds to time ``T`` concurrently.

    Returns ``(lifts, status)``; failed rows hold NaN and a nonzero status.
    The compiled integrator releases the GIL, so threads scale.
    """
    s = _settings(settings)
    X0 = np.ascontiguousarray(np.atleast_2d(np.asarray(X0, dtype=float)))
    chunks = np.array_split(np.arange(len(X0)), min(_thread_count(), len(X0)))

    def work(idx):
        return K.endpoints(f.ip, f.fp, X0[idx], float(T), s.rtol, s.atol, s.hmax, s.hmin, s.max_steps)

    out = np.full(X0.shape, np.nan)
    status = np.zeros(len(X0), dtype=np.int64)
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        for idx, (o, st) in zip(chunks, pool.map(work, chunks)):
            out[idx] = o
            status[idx] = st
    return out, status


# --------------------------------------------------------------------------
# time-one maps


@dataclass(frozen=True, eq=False)
class LiftMapSample:
    """Samples of a lift ``F`` on a grid, with Jacobians when available.

    ``func`` / ``jac_func`` are optional closures for analytic maps; they
    enable the fixed-point scan of :func:`check_lift_condition`.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    jacobians: np.ndarray | None = None
    errors: np.ndarray | None = None
    func: object = field(default=None, repr=False)
    jac_func: object = field(default=None, repr=False)
    label: str = "sampled"

    def lift_residual(self, shifts=None, rng=None):
        """max |F(x+k) - F(x) - k| over sampled integer shifts (needs ``func``)."""
        if self.func is None:
            raise InvalidInputError("lift residual requires an evaluable map")
        rng = np.random.default_rng(0 if rng is None else rng)
        d = self.inputs.shape[1]
        if shifts is None:
            shifts = rng.integers(-3, 4, size=(len(self.inputs), d))
        shifts = np.asarray(shifts, dtype=float)
        lhs = self.func(self.inputs + shifts) - self.func(self.inputs) - shifts
        return float(np.abs(lhs).max())


def _variational_one(f, x, s, T=1.0):
    d = f.dim
    y0 = np.concatenate([x, np.eye(d).ravel()])
    Y, status, t_reached, *_rest, max_err = K.dp45(
        f.ip, f.fp, y0, np.array([0.0, T]), s.rtol, s.atol, s.hmax, s.hmin, s.max_steps, True
    )
    if status != K.STATUS_OK:
        raise IntegrationError(f"variational integration failed: {_STATUS_TEXT[status]}", t_reached)
    return Y[1, :d], Y[1, d:].reshape(d, d), max_err


def time_one_map(f: FieldInstance, grid, settings=None, T=1.0):
    """Sample ``F = X(T, .)`` with Jacobians from the variational equation."""
    s = _settings(settings)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[1] != f.dim:
        raise InvalidInputError("grid dimension does not match the field")
    d = f.dim
    out = np.empty_like(grid)
    jac = np.empty((len(grid), d, d))
    err = np.empty(len(grid))

    def work(i):
        return _variational_one(f, grid[i], s, T)

    with ThreadPoolExecutor(max_workers=_thread_count()) as pool:
        for i, (y, J, e) in enumerate(pool.map(work, range(len(grid)))):
            out[i] = y
            jac[i] = J
            # scaled error estimate back to an absolute per-step bound
            err[i] = e * (s.atol + s.rtol * np.abs(y).max())

    def func(x):
        return flow(f, x, T, s)

    def jac_func(x):
        x = np.atleast_2d(x)
        return np.stack([_variational_one(f, xi, s, T)[1] for xi in x])

    return LiftMapSample(grid, out, jac, err, func, jac_func, label=f"X({T:g}, .) of {f.family} field")


def uniform_grid(n, d=2):
    axes = np.arange(n) / n
    return np.stack(np.meshgrid(*([axes] * d), indexing="ij"), axis=-1).reshape(-1, d)


def _phi(s, c):
    return (1.0 - np.cos(2 * np.pi * s)) / 2 + c * np.sin(2 * np.pi * s)


def _dphi(s, c):
    return np.pi * np.sin(2 * np.pi * s) + 2 * np.pi * c * np.cos(2 * np.pi * s)


def build_llibre_mackay(c1, c2, grid=None):
    """Analytic lift ``F(x) = x + (phi2(x2 + phi1(x1)), phi1(x1))``.

    ``phi_i(s) = (1 - cos 2 pi s)/2 + c_i sin 2 pi s``. ``grid`` defaults to
    a 64 x 64 uniform grid of the unit cell.
    """
    c1, c2 = float(c1), float(c2)
    if c1 == 0.0 or c2 == 0.0:
        raise InvalidInputError("c1 and c2 must be nonzero")
    checks = {
        "phi1(0)": _phi(0.0, c1),
        "phi1(1/2)": _phi(0.5, c1),
        "phi2(0)": _phi(0.0, c2),
        "phi2(1/2)": _phi(0.5, c2),
        "phi1'(0)": _dphi(0.0, c1),
        "phi2'(1/2)": _dphi(0.5, c2),
    }
    if not (abs(checks["phi1(0)"]) < 1e-15 and abs(checks["phi1(1/2)"] - 1) < 1e-15):
        raise InvalidInputError("phi does not satisfy its boundary conditions")  # pragma: no cover

    def func(x):
        x = np.asarray(x, dtype=float)
        p1 = _phi(x[..., 0], c1)
        p2 = _phi(x[..., 1] + p1, c2)
        return x + np.stack([p2, p1], axis=-1)

    def jac_func(x):
        x = np.asarray(x, dtype=float)
        d1 = _dphi(x[..., 0], c1)
        d2 = _dphi(x[..., 1] + _phi(x[..., 0], c1), c2)
        J = np.zeros(x.shape[:-1] + (2, 2))
        J[..., 0, 0] = 1 + d2 * d1
        J[..., 0, 1] = d2
        J[..., 1, 0] = d1
        J[..., 1, 1] = 1
        return J

    g = uniform_grid(64) if grid is None else np.atleast_2d(np.asarray(grid, dtype=float))
    sample = LiftMapSample(g, func(g), jac_func(g), np.zeros(len(g)), func, jac_func, label="Llibre-Mackay")
    return sample, checks


@dataclass
class LiftReport:
    residual: float
    argmax: list
    fixed_points: list
    obstruction: bool
    verdict: str

    def to_dict(self):
        return {
            "schema": "lift_check",
            "version": 1,
            "residual": self.residual,
            "argmax": self.argmax,
            "fixed_points": self.fixed_points,
            "obstruction": self.obstruction,
            "verdict": self.verdict,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _integer_fixed_points(F: LiftMapSample, det_tol=1e-6, max_shift=3):
    """Points ``a`` of the sample grid neighbourhoods with F(a) - a integral.

    Every grid point seeds a Newton solve of ``F(x) - x - k = 0`` with ``k``
    the nearest integer vector to the sampled displacement.
    """
    if F.func is None or F.jac_func is None:
        return []
    found = []
    disp = F.outputs - F.inputs
    k_all = np.round(disp)
    close = np.linalg.norm(disp - k_all, axis=1) < 0.25
    for x0, k in zip(F.inputs[close], k_all[close]):
        if np.abs(k).max() > max_shift:
            continue

        def g(x, k=k):
            return F.func(x) - x - k

        def dg(x):
            return F.jac_func(x) - np.eye(len(x))

        sol = root(g, x0, jac=dg, method="hybr", options={"xtol": 1e-13})
        if not sol.success or np.abs(g(sol.x)).max() > 1e-10:
            continue
        a = wrap(sol.x)
        if any(torus_distance(a, np.array(p["a"])) < 1e-8 for p in found):
            continue
        det = float(np.linalg.det(F.jac_func(sol.x) - np.eye(len(a))))
        found.append({"a": a.tolist(), "k": [int(c) for c in k], "det": det, "nondegenerate": abs(det) > det_tol})
    return found


def check_lift_condition(F: LiftMapSample, f: FieldInstance | None = None, scan=True):
    """Residual of ``(grad F) b = b o F`` and the fixed-point obstruction scan.

    The scan looks for ``a`` with ``F(a) - a`` a nonzero integer vector and
    ``det(grad F(a) - I) != 0``. At such a point a generating field would
    have to vanish, contradicting ``F(a) != a``; its presence certifies that
    no C^1 field has ``F`` as its time-one map.
    """
    if F.jacobians is None:
        raise InvalidInputError("lift-condition check needs Jacobian samples")
    if f is not None:
        bx = f.eval(F.inputs)
        bF = f.eval(F.outputs)
        res = np.linalg.norm(np.einsum("nij,nj->ni", F.jacobians, bx) - bF, axis=1)
        i = int(np.argmax(res))
        residual, argmax = float(res[i]), F.inputs[i].tolist()
    else:
        residual, argmax = float("nan"), []
    fixed = _integer_fixed_points(F) if scan else []
    obstruction = any(p["nondegenerate"] and any(p["k"]) for p in fixed)
    if obstruction:
        verdict = "no generating field"
    elif f is not None:
        verdict = "consistent" if residual <= 1e-7 else "violated"
    else:
        verdict = "undecided"
    return LiftReport(residual, argmax, fixed, obstruction, verdict)

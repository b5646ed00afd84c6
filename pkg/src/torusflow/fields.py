"""C^1 vector fields on the torus built from finite trigonometric data."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.optimize import minimize

from . import _kernels as K
from .errors import DomainError, GeometryError, InvalidInputError, PositivityError, SmoothnessError
from .torus import wrap

TWO_PI = 2.0 * np.pi
FAMILIES = ("trig", "stepanoff", "stream", "stratified2d", "polyhedral3d")


def _canonical(k):
    """Representative of {k, -k} whose first nonzero entry is positive."""
    for c in k:
        if c > 0:
            return tuple(k), 1.0
        if c < 0:
            return tuple(-c for c in k), -1.0
    return tuple(k), 0.0


class TrigScalar:
    """Real trigonometric polynomial on the torus Y_d.

    ``f(x) = const + sum_k cos_k cos(2 pi k.x) + sin_k sin(2 pi k.x)``.
    Wavevectors are stored in canonical form (first nonzero entry positive),
    so each frequency pair ``{k, -k}`` appears once.
    """

    def __init__(self, dim, const=0.0, terms=()):
        self.dim = int(dim)
        coeffs = {}
        c0 = float(const)
        for k, a, b in terms:
            k = tuple(int(c) for c in k)
            if len(k) != self.dim:
                raise InvalidInputError(f"wavevector {k} does not have dimension {self.dim}")
            ck, sgn = _canonical(k)
            if sgn == 0.0:
                c0 += float(a)
                continue
            a0, b0 = coeffs.get(ck, (0.0, 0.0))
            coeffs[ck] = (a0 + float(a), b0 + sgn * float(b))
        keys = sorted(k for k, (a, b) in coeffs.items() if a != 0.0 or b != 0.0)
        self.const = c0
        self.k = np.array(keys, dtype=np.int64).reshape(len(keys), self.dim)
        self.cos = np.array([coeffs[k][0] for k in keys], dtype=float)
        self.sin = np.array([coeffs[k][1] for k in keys], dtype=float)

    # construction helpers -------------------------------------------------
    @classmethod
    def constant(cls, dim, c):
        return cls(dim, c)

    @classmethod
    def from_complex(cls, dim, coeffs):
        """Build from ``{k: c_k}`` with ``f = sum c_k exp(2 i pi k.x)`` (real f)."""
        terms = []
        const = 0.0
        for k, c in coeffs.items():
            ck, sgn = _canonical(k)
            if sgn == 0.0:
                const += c.real
            elif sgn > 0:
                # pair (k, -k) contributes 2 Re(c_k e^{..}); count each side once
                terms.append((ck, c.real, -c.imag))
            else:
                terms.append((ck, c.real, c.imag))
        return cls(dim, const, terms)

    def complex_coefficients(self):
        out = {tuple([0] * self.dim): complex(self.const)}
        for k, a, b in zip(self.k, self.cos, self.sin):
            kt = tuple(int(c) for c in k)
            out[kt] = out.get(kt, 0) + complex(a, -b) / 2
            mk = tuple(-c for c in kt)
            out[mk] = out.get(mk, 0) + complex(a, b) / 2
        return out

    def embed(self, dim, axes):
        """View a lower-dimensional polynomial as a function of ``x[axes]``."""
        axes = list(axes)
        if len(axes) != self.dim:
            raise InvalidInputError("one axis per source dimension is required")
        terms = []
        for k, a, b in zip(self.k, self.cos, self.sin):
            kk = [0] * dim
            for src, dst in enumerate(axes):
                kk[dst] = int(k[src])
            terms.append((kk, a, b))
        return TrigScalar(dim, self.const, terms)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return TrigScalar(self.dim, self.const * other, zip(self.k, self.cos * other, self.sin * other))
        if other.dim != self.dim:
            raise InvalidInputError("dimension mismatch in product")
        ca = self.complex_coefficients()
        cb = other.complex_coefficients()
        prod = {}
        for ka, va in ca.items():
            for kb, vb in cb.items():
                kk = tuple(x + y for x, y in zip(ka, kb))
                prod[kk] = prod.get(kk, 0) + va * vb
        return TrigScalar.from_complex(self.dim, prod)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return TrigScalar(self.dim, self.const + other, zip(self.k, self.cos, self.sin))
        terms = list(zip(self.k, self.cos, self.sin)) + list(zip(other.k, other.cos, other.sin))
        return TrigScalar(self.dim, self.const + other.const, terms)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-other)

    # evaluation -----------------------------------------------------------
    def _phases(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise InvalidInputError(f"expected points of dimension {self.dim}, got {x.shape[-1]}")
        return TWO_PI * (wrap(x) @ self.k.T.astype(float))

    def __call__(self, x):
        ph = self._phases(x)
        return self.const + np.cos(ph) @ self.cos + np.sin(ph) @ self.sin

    def grad(self, x):
        ph = self._phases(x)
        dv = TWO_PI * (np.cos(ph) * self.sin - np.sin(ph) * self.cos)
        return dv @ self.k.astype(float)

    @property
    def mean(self):
        return self.const

    @property
    def bandwidth(self):
        return int(np.abs(self.k).max()) if len(self.k) else 0

    def lipschitz(self):
        """Upper bound on |grad f| from the coefficient 1-norm."""
        if not len(self.k):
            return 0.0
        return float(TWO_PI * np.sum(np.linalg.norm(self.k, axis=1) * np.hypot(self.cos, self.sin)))

    def sup_bound(self):
        return abs(self.const) + float(np.sum(np.hypot(self.cos, self.sin)))

    # serialization --------------------------------------------------------
    def to_json(self):
        return {
            "const": self.const,
            "terms": [
                {"k": [int(c) for c in k], "cos": float(a), "sin": float(b)}
                for k, a, b in zip(self.k, self.cos, self.sin)
            ],
        }

    @classmethod
    def from_json(cls, obj, dim):
        try:
            terms = [(t["k"], t.get("cos", 0.0), t.get("sin", 0.0)) for t in obj.get("terms", [])]
            return cls(dim, obj.get("const", 0.0), terms)
        except (KeyError, TypeError, AttributeError) as exc:
            raise InvalidInputError(f"malformed scalar spec: {obj!r}") from exc

    def block(self):
        """Flat layout consumed by the compiled evaluators."""
        return np.concatenate([self.k.astype(float).ravel(), self.cos, self.sin, [self.const]])

    def __repr__(self):
        return f"TrigScalar(dim={self.dim}, const={self.const}, nterms={len(self.k)})"

    def __eq__(self, other):
        return (
            isinstance(other, TrigScalar)
            and self.dim == other.dim
            and self.const == other.const
            and np.array_equal(self.k, other.k)
            and np.array_equal(self.cos, other.cos)
            and np.array_equal(self.sin, other.sin)
        )

    __hash__ = None


class PowerScalar:
    """``max(base, 0) ** alpha`` with the chain-rule gradient (0 at roots)."""

    def __init__(self, base, alpha):
        self.base = base
        self.alpha = float(alpha)
        self.dim = base.dim

    def __call__(self, x):
        return np.maximum(self.base(x), 0.0) ** self.alpha

    def grad(self, x):
        a = self.base(x)
        g = self.base.grad(x)
        pos = a > 0
        fac = np.where(pos, self.alpha * np.where(pos, a, 1.0) ** (self.alpha - 1.0), 0.0)
        return fac[..., None] * g


class ReciprocalScalar:
    """``1 / base`` for a positive trigonometric base, evaluated pointwise."""

    def __init__(self, base):
        self.base = base
        self.dim = base.dim

    def __call__(self, x):
        return 1.0 / self.base(x)

    def grad(self, x):
        a = self.base(x)
        return -self.base.grad(x) / (a * a)[..., None]


def sample_grid(dim, n):
    """Points of the uniform n^dim grid on [0,1)^dim, shape (n,)*dim + (dim,)."""
    axes = np.arange(n) / n
    mesh = np.meshgrid(*([axes] * dim), indexing="ij")
    return np.stack(mesh, axis=-1)


def _refined_minimum(f, starts):
    best = math.inf
    for x0 in starts:
        res = minimize(lambda z: float(f(z)), x0, jac=lambda z: np.asarray(f.grad(z), dtype=float), method="BFGS")
        best = min(best, float(res.fun), float(f(x0)))
    return best


def grid_minimum(f, n=256, refine=8):
    """Minimum of a scalar over the torus: grid scan plus local refinement."""
    pts = sample_grid(f.dim, n).reshape(-1, f.dim)
    vals = f(pts)
    order = np.argsort(vals)[:refine]
    grid_min = float(vals[order[0]])
    if not hasattr(f, "grad") or refine == 0:
        return grid_min
    return min(grid_min, _refined_minimum(f, pts[order]))


def certify_positive(f, n=256, what="function"):
    """Check ``f > 0`` on the torus; returns the sampled minimum.

    A grid minimum exceeding the Lipschitz slack certifies positivity
    outright; otherwise local minimisation from the lowest samples decides.
    """
    pts = sample_grid(f.dim, n).reshape(-1, f.dim)
    vals = f(pts)
    m = float(vals.min())
    if m <= 0.0:
        raise PositivityError(f"{what} has a nonpositive sample ({m:.3e})")
    if isinstance(f, TrigScalar):
        slack = f.lipschitz() * math.sqrt(f.dim) / (2 * n)
        if m - slack > 0.0:
            return m
        refined = _refined_minimum(f, pts[np.argsort(vals)[:8]])
        if refined <= 0.0:
            raise PositivityError(f"{what} attains a nonpositive value ({refined:.3e})")
        return min(m, refined)
    return m


@dataclass(frozen=True, eq=False)
class FieldInstance:
    """An immutable vector field on Y_d with exact evaluation and Jacobian.

    ``params`` holds the family data (Python objects); ``ip``/``fp`` is the
    compiled program shared by evaluation and the integrator.
    """

    dim: int
    family: str
    params: dict
    ip: np.ndarray = field(repr=False)
    fp: np.ndarray = field(repr=False)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.ip.setflags(write=False)
        self.fp.setflags(write=False)

    def _points(self, x):
        arr = np.asarray(x, dtype=float)
        if arr.shape[-1] != self.dim:
            raise InvalidInputError(f"field has dimension {self.dim}, point has {arr.shape[-1]}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("non-finite evaluation point")
        return arr.reshape(-1, self.dim), arr.shape[:-1]

    def eval(self, x):
        pts, lead = self._points(x)
        out, _ = K.eval_many(self.ip, self.fp, np.ascontiguousarray(pts), False)
        return out.reshape(lead + (self.dim,))

    __call__ = eval

    def jacobian(self, x):
        """Matrix of partials ``d b_i / d x_j`` at each point."""
        pts, lead = self._points(x)
        _, J = K.eval_many(self.ip, self.fp, np.ascontiguousarray(pts), True)
        return J.reshape(lead + (self.dim, self.dim))

    def scaled(self, factor):
        fp = self.fp.copy()
        fp[0] *= factor
        meta = dict(self.metadata, scale=float(fp[0]))
        return FieldInstance(self.dim, self.family, self.params, self.ip.copy(), fp, meta)

    def reversed(self):
        return self.scaled(-1.0)

    @property
    def scale(self):
        return float(self.fp[0])

    def sup_norm(self, n=64):
        pts = sample_grid(self.dim, n).reshape(-1, self.dim)
        return float(np.linalg.norm(self.eval(pts), axis=1).max())

    def to_spec(self):
        spec = {"dim": self.dim, "family": self.family}
        spec.update(self.params.get("_spec", {}))
        if self.scale != 1.0:
            spec["scale"] = self.scale
        return spec


def _program(code, dim, ints, floats, scale=1.0):
    ip = np.array([code, dim] + [int(i) for i in ints], dtype=np.int64)
    fp = np.concatenate([[scale]] + [np.asarray(f, dtype=float).ravel() for f in floats])
    return ip, fp


def build_trig(components):
    """Field whose i-th component is the trigonometric polynomial ``components[i]``."""
    components = list(components)
    d = len(components)
    if d == 0 or any(c.dim != d for c in components):
        raise InvalidInputError("need d scalar components of dimension d")
    ip, fp = _program(K.TRIG, d, [len(c.k) for c in components], [c.block() for c in components])
    spec = {"components": [c.to_json() for c in components]}
    return FieldInstance(d, "trig", {"components": components, "_spec": spec}, ip, fp)


def build_constant(zeta):
    zeta = np.asarray(zeta, dtype=float)
    return build_trig([TrigScalar(len(zeta), float(z)) for z in zeta])


def build_stepanoff(a, zeta, alpha=None, grid=256):
    """Stepanoff field ``b = a**alpha * zeta`` (plain ``a * zeta`` without alpha)."""
    zeta = np.asarray(zeta, dtype=float)
    if zeta.shape != (a.dim,):
        raise InvalidInputError("zeta must match the dimension of a")
    meta = {}
    if alpha is not None:
        alpha = float(alpha)
        if alpha <= 0.5:
            raise SmoothnessError(f"alpha = {alpha} <= 1/2 does not give a C^1 field")
        base_min = grid_minimum(a, grid)
        if base_min < -1e-12:
            raise DomainError(f"power of a base with negative values (min {base_min:.3e})")
        meta["jacobian_at_roots"] = "limit" if alpha > 1.0 else "one-sided"
        scalar = PowerScalar(a, alpha)
    else:
        scalar = a
    ip, fp = _program(
        K.STEPANOFF, a.dim, [len(a.k), alpha is not None], [a.block(), [alpha if alpha is not None else 1.0], zeta]
    )
    spec = {"components": [a.to_json()], "zeta": zeta.tolist()}
    if alpha is not None:
        spec["alpha"] = alpha
    params = {"a": scalar, "base": a, "alpha": alpha, "zeta": zeta, "_spec": spec}
    return FieldInstance(a.dim, "stepanoff", params, ip, fp, meta)


def build_stream_field(rho, grad_u_mean, u_periodic=None, rho_reciprocal=False, grid=256):
    """Field ``b = rho R_perp grad u`` on Y_2 with ``grad u = mean + grad u_periodic``.

    With ``rho_reciprocal`` the polynomial ``rho`` is the density sigma and
    the coefficient is ``1 / rho``; otherwise ``rho`` itself is the
    coefficient and sigma = 1/rho is evaluated pointwise.
    """
    if rho.dim != 2:
        raise InvalidInputError("stream fields live on Y_2")
    xi = np.asarray(grad_u_mean, dtype=float)
    if xi.shape != (2,) or not np.all(xi == np.round(xi)):
        raise InvalidInputError("mean of grad u must be an integer 2-vector")
    u_per = u_periodic if u_periodic is not None else TrigScalar(2)
    if u_per.dim != 2:
        raise InvalidInputError("u_periodic must be a scalar on Y_2")
    certify_positive(rho, grid, "rho" if not rho_reciprocal else "1/rho")
    if rho_reciprocal:
        coeff = ReciprocalScalar(rho)
        sigma = rho
    else:
        coeff = rho
        sigma = ReciprocalScalar(rho)
    ip, fp = _program(K.STREAM, 2, [len(rho.k), rho_reciprocal, len(u_per.k)], [rho.block(), u_per.block(), xi])
    rho_spec = rho.to_json()
    if rho_reciprocal:
        rho_spec["reciprocal"] = True
    spec = {"components": [u_per.to_json()], "rho": rho_spec, "grad_u_mean": [int(c) for c in xi]}
    params = {"rho": coeff, "sigma": sigma, "grad_u_mean": xi, "u_periodic": u_per, "_spec": spec}
    return FieldInstance(2, "stream", params, ip, fp)


def stream_potential(field, x):
    """The (non-periodic) potential ``u = mean . x + u_periodic`` at lift points."""
    x = np.asarray(x, dtype=float)
    return x @ field.params["grad_u_mean"] + field.params["u_periodic"](x)


@dataclass(frozen=True)
class Strip:
    start: float
    width: float
    speed: float
    collar: float = 0.05

    def to_json(self):
        return {"interval": [self.start, self.start + self.width], "speed": self.speed, "collar": self.collar}


def _arcs_overlap(a0, a1, b0, b1):
    # closed arcs [a0, a1], [b0, b1] on R/Z with lengths < 1
    la = a1 - a0
    lb = b1 - b0
    return ((b0 - a0) % 1.0) <= la or ((a0 - b0) % 1.0) <= lb


def build_stratified2d(k, strips):
    """Stratified field ``b = sum_i phi_i alpha_i k`` constant along ``k``.

    ``strips`` are :class:`Strip` objects (or dicts with ``interval``,
    ``speed`` and optional ``collar``) in the transversal coordinate
    ``s = p.x mod 1`` with ``p`` the primitive vector along ``R_perp k``.
    """
    k = np.asarray(k)
    if k.shape != (2,) or not np.all(k == np.round(k)) or not np.any(k):
        raise InvalidInputError("k must be a nonzero integer 2-vector")
    k = k.astype(np.int64)
    parsed = []
    for s in strips:
        if isinstance(s, dict):
            lo, hi = s["interval"]
            s = Strip(float(lo), float(hi) - float(lo), float(s["speed"]), float(s.get("collar", 0.05)))
        if s.width <= 0 or s.collar <= 0:
            raise InvalidInputError("strip width and collar must be positive")
        parsed.append(s)
    full = [s for s in parsed if s.width >= 1.0]
    if full and len(parsed) > 1:
        raise GeometryError("a strip covering the whole torus overlaps every other strip")
    if not full:
        for i in range(len(parsed)):
            for j in range(i + 1, len(parsed)):
                a, b = parsed[i], parsed[j]
                if a.width + 2 * a.collar + b.width + 2 * b.collar >= 1.0 or _arcs_overlap(
                    a.start - a.collar, a.start + a.width + a.collar, b.start - b.collar, b.start + b.width + b.collar
                ):
                    raise GeometryError(f"strips {i} and {j} overlap")
    g = reduce(math.gcd, (abs(int(c)) for c in k))
    p = np.array([k[1], -k[0]], dtype=float) / g
    rows = [[s.start % 1.0, s.width, s.collar, s.speed] for s in parsed]
    ip, fp = _program(K.STRATIFIED, 2, [len(parsed)], [k.astype(float), p, np.array(rows).ravel()])
    spec = {"k": [int(c) for c in k], "strips": [s.to_json() for s in parsed]}
    params = {"k": k, "p": p, "strips": parsed, "_spec": spec}
    return FieldInstance(2, "stratified2d", params, ip, fp)


# --------------------------------------------------------------------------
# JSON field specs


def field_from_spec(spec):
    """Build a field from the JSON field-spec dictionary."""
    if not isinstance(spec, dict):
        raise InvalidInputError("field spec must be a JSON object")
    try:
        family = spec["family"]
        dim = int(spec["dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError("field spec needs 'dim' and 'family'") from exc
    if family not in FAMILIES:
        raise InvalidInputError(f"unknown field family {family!r}")
    comps = [TrigScalar.from_json(c, dim) for c in spec.get("components", [])]
    try:
        if family == "trig":
            f = build_trig(comps)
        elif family == "stepanoff":
            if len(comps) != 1 or "zeta" not in spec:
                raise InvalidInputError("stepanoff spec needs one component (a) and 'zeta'")
            f = build_stepanoff(comps[0], spec["zeta"], spec.get("alpha"))
        elif family == "stream":
            rho_spec = spec["rho"]
            rho = TrigScalar.from_json(rho_spec, 2)
            u_per = comps[0] if comps else None
            f = build_stream_field(rho, spec["grad_u_mean"], u_per, bool(rho_spec.get("reciprocal", False)))
        elif family == "stratified2d":
            f = build_stratified2d(spec["k"], spec["strips"])
        else:
            from .poly3d import field_from_construction

            f = field_from_construction(spec)
    except KeyError as exc:
        raise InvalidInputError(f"field spec is missing key {exc}") from exc
    if "scale" in spec:
        f = f.scaled(float(spec["scale"]))
    if f.dim != dim:
        raise InvalidInputError(f"spec declares dim {dim} but family data has dim {f.dim}")
    return f


def load_field(path):
    with open(path, encoding="utf-8") as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: invalid JSON ({exc})") from exc
    return field_from_spec(spec)


def eval_field(f, x):
    """Value of ``f`` at the lift point(s) ``x``."""
    return f.eval(x)

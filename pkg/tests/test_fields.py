import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from torusflow.errors import DomainError, GeometryError, InvalidInputError, PositivityError, SmoothnessError
from torusflow.fields import (
    PowerScalar,
    ReciprocalScalar,
    TrigScalar,
    build_stepanoff,
    build_stratified2d,
    build_stream_field,
    certify_positive,
    field_from_spec,
    grid_minimum,
    load_field,
    stream_potential,
)

from conftest import ZETA_IRR

pts = arrays(float, (2,), elements=st.floats(-3, 3, allow_nan=False))
shifts = arrays(np.int64, (2,), elements=st.integers(-4, 4))


def fd_jacobian(f, x, h=1e-6):
    d = len(x)
    J = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, j] = (f.eval(x + e) - f.eval(x - e)) / (2 * h)
    return J


def family_fields(a_diag, stream_field, trig_field, sin2_base):
    strat = build_stratified2d([1, 2], [{"interval": [0.1, 0.4], "speed": 1.5}, {"interval": [0.6, 0.8], "speed": -1.0}])
    return {
        "trig": trig_field,
        "stepanoff": build_stepanoff(a_diag, ZETA_IRR),
        "stepanoff_power": build_stepanoff(sin2_base, ZETA_IRR, alpha=0.75),
        "stream": stream_field,
        "stratified2d": strat,
    }


@pytest.fixture(scope="module")
def fields(a_diag, stream_field, trig_field, sin2_base):
    return family_fields(a_diag, stream_field, trig_field, sin2_base)


def test_trig_scalar_values():
    s = TrigScalar(2, 1.0, [((1, 0), 2.0, 0.0), ((0, -1), 0.0, 3.0)])
    x = np.array([0.1, 0.3])
    ref = 1 + 2 * np.cos(2 * np.pi * 0.1) - 3 * np.sin(2 * np.pi * 0.3)
    assert s(x) == pytest.approx(ref, abs=1e-14)
    assert s.mean == 1.0


def test_trig_product_matches_pointwise(a_product):
    rng = np.random.default_rng(0)
    x = rng.random((50, 2))
    ref = (2 + np.sin(2 * np.pi * x[:, 0])) * (2 + np.cos(2 * np.pi * x[:, 1]))
    assert np.allclose(a_product(x), ref, atol=1e-13)


def test_complex_roundtrip():
    s = TrigScalar(3, 0.5, [((1, -2, 0), 0.3, -0.2), ((0, 0, 3), 0.0, 1.1)])
    back = TrigScalar.from_complex(3, s.complex_coefficients())
    x = np.random.default_rng(3).random((20, 3))
    assert np.allclose(back(x), s(x), atol=1e-14)


def test_trig_grad_matches_fd():
    s = TrigScalar(2, 0.0, [((1, 2), 0.4, -0.7), ((3, -1), 0.1, 0.2)])
    x = np.array([0.23, 0.71])
    h = 1e-6
    fd = [(s(x + h * e) - s(x - h * e)) / (2 * h) for e in np.eye(2)]
    assert np.allclose(s.grad(x), fd, atol=1e-7)


def test_power_scalar_grad_and_domain(sin2_base):
    p = PowerScalar(sin2_base, 0.75)
    x = np.array([0.3, 0.6])
    h = 1e-6
    fd = [(p(x + h * e) - p(x - h * e)) / (2 * h) for e in np.eye(2)]
    assert np.allclose(p.grad(x), fd, atol=1e-7)
    with pytest.raises(DomainError):
        build_stepanoff(TrigScalar(2, 0.0, [((1, 0), 1.0, 0.0)]), ZETA_IRR, alpha=0.75)
    with pytest.raises(SmoothnessError):
        build_stepanoff(sin2_base, ZETA_IRR, alpha=0.5)


def test_reciprocal_scalar(a_diag):
    r = ReciprocalScalar(a_diag)
    x = np.array([0.2, 0.1])
    assert r(x) == pytest.approx(1.0 / a_diag(x))


@pytest.mark.parametrize("name", ["trig", "stepanoff", "stepanoff_power", "stream", "stratified2d"])
def test_periodicity(fields, name):
    f = fields[name]
    rng = np.random.default_rng(11)
    x = rng.random((64, 2)) * 3 - 1
    k = rng.integers(-3, 4, size=(64, 2))
    assert np.abs(f.eval(x + k) - f.eval(x)).max() <= 1e-12


@pytest.mark.parametrize("name", ["trig", "stepanoff", "stepanoff_power", "stream", "stratified2d"])
def test_jacobian_matches_finite_differences(fields, name):
    f = fields[name]
    rng = np.random.default_rng(5)
    for x in rng.random((16, 2)):
        J = f.jacobian(x)
        assert np.abs(J - fd_jacobian(f, x)).max() <= 1e-5 * max(1.0, np.abs(J).max())


@given(pts, shifts)
def test_periodicity_property(trig_field, x, k):
    assert np.allclose(trig_field.eval(x + k), trig_field.eval(x), atol=1e-12)


def test_stepanoff_is_parallel_to_zeta(fields):
    f = fields["stepanoff"]
    x = np.random.default_rng(2).random((100, 2))
    b = f.eval(x)
    assert np.abs(b[:, 0] * ZETA_IRR[1] - b[:, 1] * ZETA_IRR[0]).max() <= 1e-14


def test_stepanoff_power_vanishes_at_lattice(fields):
    f = fields["stepanoff_power"]
    assert np.linalg.norm(f.eval(np.array([0.0, 0.0]))) == 0.0
    assert np.linalg.norm(f.eval(np.array([2.0, -1.0]))) == 0.0


def test_stream_field_structure(stream_field):
    # b = (1/sigma) R_perp grad u and sigma b is divergence free
    x = np.random.default_rng(4).random((40, 2))
    u = stream_potential(stream_field, x)
    h = 1e-6
    gu = np.stack([(stream_potential(stream_field, x + h * e) - stream_potential(stream_field, x - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
    sigma = 2 + np.cos(2 * np.pi * x[:, 1])
    b = stream_field.eval(x)
    assert np.allclose(sigma[:, None] * b, np.stack([gu[:, 1], -gu[:, 0]], axis=1), atol=1e-8)
    assert u.shape == (40,)


def test_stream_field_rejects_nonpositive_rho():
    with pytest.raises(PositivityError):
        build_stream_field(TrigScalar(2, 0.5, [((1, 0), 1.0, 0.0)]), [1, 0])
    with pytest.raises(InvalidInputError):
        build_stream_field(TrigScalar(2, 1.0), [0.5, 0])


def test_stratified_field_is_constant_along_k():
    f = build_stratified2d([1, 1], [{"interval": [0.0, 0.3], "speed": 2.0, "collar": 0.05}])
    x = np.random.default_rng(0).random((50, 2))
    k = np.array([1.0, 1.0])
    for s in (0.13, 0.77):
        assert np.allclose(f.eval(x + s * k), f.eval(x), atol=1e-14)
    b = f.eval(x)
    assert np.abs(b[:, 0] - b[:, 1]).max() == 0.0


def test_stratified_overlap_is_rejected():
    with pytest.raises(GeometryError):
        build_stratified2d([1, 0], [{"interval": [0.0, 0.5], "speed": 1.0}, {"interval": [0.5, 0.9], "speed": -1.0}])


def test_grid_minimum_and_certify(a_diag):
    m = grid_minimum(a_diag)
    assert m == pytest.approx(1.0, abs=1e-9)
    certify_positive(a_diag)
    with pytest.raises(PositivityError):
        certify_positive(TrigScalar(2, 0.2, [((1, 0), 1.0, 0.0)]))


@pytest.mark.parametrize("name", ["trig", "stepanoff", "stepanoff_power", "stream", "stratified2d"])
def test_spec_roundtrip(fields, name, tmp_path):
    f = fields[name]
    p = tmp_path / "f.json"
    p.write_text(json.dumps(f.to_spec()))
    g = load_field(p)
    x = np.random.default_rng(8).random((30, 2))
    assert np.abs(g.eval(x) - f.eval(x)).max() <= 1e-14
    assert g.family == f.family


def test_spec_errors():
    with pytest.raises(InvalidInputError):
        field_from_spec({"dim": 2, "family": "nope"})
    with pytest.raises((InvalidInputError, KeyError)):
        field_from_spec({"dim": 2, "family": "stepanoff"})


def test_scaled_and_reversed(trig_field):
    x = np.array([0.4, 0.2])
    assert np.allclose(trig_field.scaled(2.5).eval(x), 2.5 * trig_field.eval(x))
    assert np.allclose(trig_field.reversed().eval(x), -trig_field.eval(x))

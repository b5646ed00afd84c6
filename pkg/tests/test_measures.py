import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from torusflow.errors import ConsistencyError, InvalidInputError, PositivityError
from torusflow.fields import ReciprocalScalar, TrigScalar, build_stepanoff, build_stream_field, stream_potential
from torusflow.measures import (
    DensityMeasure,
    DiracMeasure,
    build_mu_theta,
    centred_block,
    check_invariance,
    dirac_invariance,
    fourier_coefficients,
    mass,
    mu_theta_mass,
    solve_stream,
    weighted_table,
)

from conftest import ZETA_IRR
from oracles import fourier_direct, theta_antiderivative_periodic

thetas_st = st.lists(st.tuples(st.integers(1, 4), st.floats(-0.4, 0.4), st.floats(-0.4, 0.4)), max_size=3)


def _theta(terms, const=2.0):
    return TrigScalar(1, const, [((k,), a, b) for k, a, b in terms])


def test_fourier_matches_direct_sum():
    rng = np.random.default_rng(0)
    v = rng.random((16, 16))
    c = fourier_coefficients(v)
    for k in [(0, 0), (1, 2), (-3, 5), (7, -8)]:
        assert c[k[0] % 16, k[1] % 16] == pytest.approx(fourier_direct(v, k), abs=1e-14)
    blk = centred_block(c, 2)
    assert blk[2 + 1, 2 - 1] == pytest.approx(fourier_direct(v, (1, -1)), abs=1e-14)


def test_density_normalisation_and_roundtrip(tmp_path):
    mu = DensityMeasure.from_function(lambda x: 3 + np.cos(2 * np.pi * x[:, 0]), 2, 64)
    assert mu.values.mean() == pytest.approx(1.0)
    assert mu.roundtrip_error() <= 1e-14
    assert mu.K == 8
    mu.save(tmp_path / "d.bin")
    back = DensityMeasure.load(tmp_path / "d.bin")
    assert np.array_equal(back.values, mu.values) and back.K == mu.K
    js = mu.fourier_json(1)
    assert len(js) == 9 and js[4]["k"] == [0, 0] and js[4]["re"] == pytest.approx(1.0)


def test_density_validation():
    with pytest.raises(InvalidInputError):
        DensityMeasure(np.ones((48, 48)))
    with pytest.raises(PositivityError):
        DensityMeasure(-np.ones((16, 16)))
    with pytest.raises(InvalidInputError):
        DensityMeasure(np.full((16, 16), np.nan))


def test_uniform_measure_is_invariant_for_trig_divergence_free():
    # b = R_perp grad u with u = sin(2 pi (x1 + 2 x2)) / (2 pi) is divergence free
    from torusflow.fields import build_trig

    c1 = TrigScalar(2, 0.0, [((1, 2), 2.0, 0.0)])
    c2 = TrigScalar(2, 0.0, [((1, 2), -1.0, 0.0)])
    f = build_trig([c1, c2])
    rep = check_invariance(DensityMeasure.uniform(2, 64), f, 8)
    assert rep.passed and rep.residual <= 1e-12


def test_stepanoff_reciprocal_density(a_diag):
    f = build_stepanoff(a_diag, ZETA_IRR)
    inv = DensityMeasure.from_function(ReciprocalScalar(a_diag), 2, 256)
    assert check_invariance(inv, f, 32).passed
    leb = check_invariance(DensityMeasure.uniform(2, 256), f, 32)
    assert not leb.passed and leb.residual > 1.0
    # mass of the 1/a density is the harmonic mean times zeta
    assert mass(inv, f) == pytest.approx(np.sqrt(3) * ZETA_IRR, rel=1e-11)


def test_mu_theta_invariance_and_mass(stream_field, thetas):
    for th in thetas.values():
        mu = build_mu_theta(stream_field, th, 256)
        rep = check_invariance(mu, stream_field, 32)
        assert rep.residual <= 1e-10
        m = mass(mu, stream_field)
        assert m == pytest.approx(mu_theta_mass(stream_field, th), abs=1e-12)
        assert abs(m[0]) <= 1e-12  # parallel to R_perp (1, 0) = (0, -1)
    assert mass(build_mu_theta(stream_field, thetas["one"]), stream_field) == pytest.approx([0.0, -0.5], abs=1e-12)
    assert mass(build_mu_theta(stream_field, thetas["sin"]), stream_field) == pytest.approx([0.0, -0.5], abs=1e-12)


@given(thetas_st)
def test_mu_theta_invariance_property(stream_field, terms):
    th = _theta(terms)
    mu = build_mu_theta(stream_field, th, 128)
    assert check_invariance(mu, stream_field, 16).residual <= 1e-10


def test_mu_theta_requires_stream_field(trig_field, thetas):
    with pytest.raises(InvalidInputError):
        build_mu_theta(trig_field, thetas["one"])
    with pytest.raises(PositivityError):
        build_mu_theta(_stream_like(), TrigScalar(1, 0.5, [((1,), 1.0, 0.0)]))


def _stream_like():
    return build_stream_field(TrigScalar(2, 1.0), [0, 1])


def _stream_oracle(stream_field, theta_fun, x):
    """Independent stream function of mu_theta: periodic part of Theta(u)/Z."""
    u = stream_potential(stream_field, x)
    N = 256
    pts = (np.stack(np.meshgrid(np.arange(N) / N, np.arange(N) / N, indexing="ij"), -1)).reshape(-1, 2)
    sigma = 2 + np.cos(2 * np.pi * pts[:, 1])
    Z = np.mean(sigma * theta_fun(stream_potential(stream_field, pts)))
    tbar = np.mean(theta_fun(np.arange(4096) / 4096))
    u_per = np.sin(2 * np.pi * (x[:, 0] + x[:, 1])) / (2 * np.pi)
    raw = tbar * u_per + theta_antiderivative_periodic(theta_fun, u)
    return raw / Z


@pytest.mark.parametrize("name", ["one", "sin", "mix"])
def test_stream_function_matches_oracle(stream_field, thetas, name):
    th = thetas[name]
    mu = build_mu_theta(stream_field, th, 256)
    s = solve_stream(mu, stream_field, 32)
    x = np.random.default_rng(1).random((40, 2))
    ref = _stream_oracle(stream_field, lambda t: th(np.asarray(t)[:, None]), x)
    got = s(x)
    # both are defined up to an additive constant
    assert np.abs((got - got.mean()) - (ref - ref.mean())).max() <= 1e-10
    assert s.hermitian_defect() <= 1e-14
    assert s.reconstruction <= 1e-12


def test_solve_stream_rejects_non_invariant(stepanoff_diag):
    with pytest.raises(ConsistencyError):
        solve_stream(DensityMeasure.uniform(2, 128), stepanoff_diag, 16)


def test_dirac_measures(sin2_base):
    f = build_stepanoff(sin2_base, ZETA_IRR, alpha=0.75)
    ok, nb, bx = dirac_invariance([0.0, 0.0], f)
    assert ok and nb == 0.0
    ok, nb, _ = dirac_invariance([0.3, 0.1], f)
    assert not ok and nb > 0.1
    d = DiracMeasure(np.array([0.0, 0.0]))
    assert np.all(mass(d, f) == 0.0)
    tab = weighted_table(d, f, 2)
    assert tab.shape == (5, 5, 2) and np.all(tab == 0)

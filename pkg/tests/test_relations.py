import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from torusflow.errors import ConsistencyError
from torusflow.fields import ReciprocalScalar, TrigScalar, build_stepanoff
from torusflow.measures import DensityMeasure, StreamFunction, build_mu_theta, centred_block, mass
from torusflow.relations import extension_residuals, integral_relation, verify_pairwise_relations

from conftest import ZETA_IRR
from test_measures import _stream_oracle

K = 16


@pytest.fixture(scope="module")
def mus(stream_field, thetas):
    return {name: build_mu_theta(stream_field, th, 256) for name, th in thetas.items()}


def _oracle_stream(stream_field, theta, mu):
    N = 256
    pts = (np.stack(np.meshgrid(np.arange(N) / N, np.arange(N) / N, indexing="ij"), -1)).reshape(-1, 2)
    vals = _stream_oracle(stream_field, lambda t: theta(np.asarray(t)[:, None]), pts).reshape(N, N)
    c = centred_block(np.fft.fft2(vals) / vals.size, K)
    c[K, K] = 0.0
    return StreamFunction(c, K, mass(mu, stream_field))


def test_collinearity_of_all_pairs(stream_field, mus):
    masses = {n: mass(m, stream_field) for n, m in mus.items()}
    for a, b in itertools.combinations(masses, 2):
        ma, mb = masses[a], masses[b]
        assert abs(ma[0] * mb[1] - ma[1] * mb[0]) <= 1e-10


@pytest.mark.parametrize("pair", [("one", "sin"), ("cos", "mix"), ("sin2", "one"), ("mix", "mix")])
def test_pairwise_relations(stream_field, mus, pair):
    rep = verify_pairwise_relations(mus[pair[0]], mus[pair[1]], stream_field, K)
    assert rep.max_residual <= 1e-8
    lhs, bound = rep.parseval()
    assert lhs <= bound * (1 + 1e-10) + 1e-20


def test_relations_with_oracle_streams(stream_field, mus, thetas):
    u = _oracle_stream(stream_field, thetas["one"], mus["one"])
    v = _oracle_stream(stream_field, thetas["mix"], mus["mix"])
    rep = verify_pairwise_relations(mus["one"], mus["mix"], stream_field, K, u=u, v=v)
    assert rep.max_residual <= 1e-8


def test_antisymmetry(stream_field, mus):
    a = verify_pairwise_relations(mus["sin"], mus["mix"], stream_field, 8)
    b = verify_pairwise_relations(mus["mix"], mus["sin"], stream_field, 8)
    assert np.abs(a.lhs - (-np.transpose(b.lhs, (2, 3, 0, 1)))).max() <= 1e-15
    assert np.abs(a.rhs - (-np.transpose(b.rhs, (2, 3, 0, 1)))).max() <= 1e-15


def test_report_outputs(stream_field, mus, tmp_path):
    rep = verify_pairwise_relations(mus["one"], mus["sin"], stream_field, 4)
    d = rep.to_dict()
    assert d["schema"] == "relations" and d["passed"]
    assert d["mass_mu"] == pytest.approx([0.0, -0.5], abs=1e-12)
    rep.write_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "j1,j2,k1,k2,residual"
    # 80 x 80 pairs with j, k != 0 plus the (0, 0) entry
    assert len(lines) == 1 + 80 * 80 + 1


def test_non_invariant_input_is_rejected(stream_field, mus):
    with pytest.raises(ConsistencyError):
        verify_pairwise_relations(DensityMeasure.uniform(2, 256), mus["one"], stream_field, 4)


def test_extension_residuals_formula(stream_field, mus):
    tj, tk = extension_residuals(mus["sin"], mus["one"], stream_field, 4)
    rep = verify_pairwise_relations(mus["sin"], mus["one"], stream_field, 4)
    nb = mass(mus["one"], stream_field)
    # c_mu(j) = 2 i pi u(j) R_perp j for j != 0
    for j in [(1, 0), (0, 1), (2, -3), (1, 1)]:
        rj = np.array([j[1], -j[0]], dtype=float)
        ref = abs(2 * np.pi * rep.u.coef(j)) * abs(rj[0] * nb[1] - rj[1] * nb[0])
        assert tj[j[0] + 4, j[1] + 4] == pytest.approx(ref, abs=1e-12)
    assert tj[4, 4] == 0.0 and tk[4, 4] == 0.0


RHOS = {
    "product": TrigScalar(4, 0.0, [((1, 0, 0, 1), 0.5, 0.0), ((1, 0, 0, -1), 0.5, 0.0)]),
    "rich": TrigScalar(
        4,
        0.3,
        [
            ((1, 0, 0, 1), 0.7, -0.2),
            ((0, 1, -1, 0), 0.0, 0.4),
            ((1, 1, 0, 0), 0.5, 0.1),
            ((0, 0, 1, 2), -0.3, 0.6),
            ((2, -1, 1, 1), 0.25, 0.0),
        ],
    ),
}


@pytest.mark.parametrize("name", list(RHOS))
def test_integral_relation(stream_field, mus, name):
    rel = integral_relation(mus["one"], mus["mix"], stream_field, RHOS[name])
    assert rel.gap <= 1e-10
    assert abs(rel.terms["imag_left"]) <= 1e-12


def test_integral_relation_is_nontrivial(stream_field, mus):
    rel = integral_relation(mus["sin"], mus["mix"], stream_field, RHOS["rich"])
    assert abs(rel.left) > 1e-3
    assert rel.gap <= 1e-10


@given(
    st.lists(
        st.tuples(
            st.tuples(st.integers(-2, 2), st.integers(-2, 2), st.integers(-2, 2), st.integers(-2, 2)),
            st.floats(-1, 1),
            st.floats(-1, 1),
        ),
        min_size=1,
        max_size=4,
    )
)
def test_integral_relation_property(stream_field, mus, terms):
    rho = TrigScalar(4, 0.0, terms)
    rel = integral_relation(mus["cos"], mus["sin2"], stream_field, rho)
    assert rel.gap <= 1e-9


def test_integral_relation_stepanoff_positive(a_diag):
    # a positive Stepanoff field carries the single invariant density 1/a
    f = build_stepanoff(a_diag, ZETA_IRR)
    mu = DensityMeasure.from_function(ReciprocalScalar(a_diag), 2, 256)
    rel = integral_relation(mu, mu, f, RHOS["rich"], u=None, v=None)
    assert rel.gap <= 1e-10

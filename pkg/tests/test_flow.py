import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from torusflow.errors import IntegrationError, InvalidInputError
from torusflow.fields import build_stepanoff
from torusflow.flow import (
    IntegratorSettings,
    build_llibre_mackay,
    check_lift_condition,
    endpoints_parallel,
    flow,
    integrate,
    time_one_map,
    uniform_grid,
)

from conftest import ZETA_IRR
from oracles import flow_reference

unit = arrays(float, (2,), elements=st.floats(0, 1, allow_nan=False))


def test_constant_field_is_exact(constant_field):
    x0 = np.array([0.2, 0.9])
    tr = integrate(constant_field, x0, 7.5)
    assert np.allclose(tr.end, x0 + 7.5 * np.array([0.3, -0.7]), atol=1e-12)
    assert np.allclose(tr.times, np.linspace(0, 7.5, 101))


@pytest.mark.parametrize("x0", [[0.1, 0.2], [0.77, 0.05], [-1.3, 2.4]])
def test_trig_flow_matches_dop853(trig_field, x0):
    ref = flow_reference(trig_field.eval, x0, 5.0)
    got = flow(trig_field, x0, 5.0, {"rtol": 1e-12, "atol": 1e-12})
    assert np.abs(got - ref).max() <= 1e-9


def test_stream_flow_matches_dop853(stream_field):
    ref = flow_reference(stream_field.eval, [0.3, 0.4], 10.0)
    assert np.abs(flow(stream_field, [0.3, 0.4], 10.0, {"rtol": 1e-12, "atol": 1e-12}) - ref).max() <= 1e-9


def test_dense_output_agrees_with_restarts(trig_field):
    tr = integrate(trig_field, [0.4, 0.6], 3.0, samples=[0.5, 1.7, 2.2])
    for t, x in zip(tr.times, tr.lifts):
        assert np.abs(x - flow(trig_field, [0.4, 0.6], t)).max() <= 1e-8


@given(unit, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_semigroup_property(trig_field, x, s, t):
    lhs = flow(trig_field, x, s + t)
    rhs = flow(trig_field, flow(trig_field, x, s), t)
    assert np.abs(lhs - rhs).max() <= 1e-8


@given(unit, st.integers(-3, 3), st.integers(-3, 3))
def test_flow_commutes_with_lattice_shifts(stepanoff_diag, x, k1, k2):
    k = np.array([k1, k2], dtype=float)
    assert np.allclose(flow(stepanoff_diag, x + k, 1.3), flow(stepanoff_diag, x, 1.3) + k, atol=1e-10)


@given(unit, st.floats(0.1, 2.0))
def test_backward_flow_inverts(stream_field, x, t):
    # the stream field preserves a smooth density, so inversion is well conditioned
    assert np.abs(flow(stream_field, flow(stream_field, x, t), -t) - x).max() <= 1e-8


def test_tiny_horizon():
    from torusflow.fields import build_constant

    f = build_constant([1.0, 0.0])
    assert flow(f, [0.0, 0.0], 1e-300)[0] == pytest.approx(1e-300, rel=1e-12)


def test_batch_flow_and_parallel_endpoints(trig_field):
    X = np.random.default_rng(0).random((12, 2))
    batch = flow(trig_field, X, 2.0)
    ends, status = endpoints_parallel(trig_field, X, 2.0)
    assert np.all(status == 0)
    assert np.allclose(batch, ends, atol=1e-13)
    assert np.allclose(batch[3], flow(trig_field, X[3], 2.0), atol=1e-13)


def test_stalled_orbit_at_equilibrium(sin2_base):
    f = build_stepanoff(sin2_base, ZETA_IRR, alpha=0.75)
    tr = integrate(f, [0.0, 0.0], 100.0)
    assert tr.stalled
    assert np.all(tr.end == 0.0)


def test_integration_error_on_step_budget(trig_field):
    with pytest.raises(IntegrationError) as err:
        integrate(trig_field, [0.1, 0.1], 100.0, IntegratorSettings(max_steps=10))
    assert 0 < err.value.t_reached < 100.0


def test_invalid_inputs(trig_field):
    with pytest.raises(InvalidInputError):
        integrate(trig_field, [0.1, 0.1, 0.1], 1.0)
    with pytest.raises(InvalidInputError):
        integrate(trig_field, [0.1, 0.1], -1.0)
    with pytest.raises(InvalidInputError):
        IntegratorSettings(rtol=0.0)


def test_trajectory_csv(trig_field, tmp_path):
    tr = integrate(trig_field, [0.1, 0.1], 1.0, n_samples=5)
    p = tmp_path / "t.csv"
    tr.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,x1,x2"
    assert len(lines) == 6


def test_time_one_jacobian_matches_fd(trig_field):
    grid = np.array([[0.1, 0.2], [0.6, 0.35]])
    F = time_one_map(trig_field, grid, {"rtol": 1e-12, "atol": 1e-12})
    h = 1e-5
    for x, J in zip(grid, F.jacobians):
        fd = np.stack([(flow(trig_field, x + h * e, 1.0) - flow(trig_field, x - h * e, 1.0)) / (2 * h) for e in np.eye(2)], axis=1)
        assert np.abs(J - fd).max() <= 1e-6
    assert F.lift_residual() <= 1e-9


def test_time_one_map_satisfies_lift_condition(stepanoff_diag):
    F = time_one_map(stepanoff_diag, uniform_grid(16))
    rep = check_lift_condition(F, stepanoff_diag, scan=False)
    assert rep.residual <= 1e-7
    assert rep.verdict == "consistent"


def test_lift_condition_detects_wrong_field(stepanoff_diag, trig_field):
    F = time_one_map(stepanoff_diag, uniform_grid(8))
    assert check_lift_condition(F, trig_field, scan=False).verdict == "violated"


def test_llibre_mackay_is_rejected():
    F, checks = build_llibre_mackay(0.25, 0.25, uniform_grid(32))
    assert checks["phi1(1/2)"] == pytest.approx(1.0)
    assert F.lift_residual() <= 1e-12
    rep = check_lift_condition(F)
    assert rep.obstruction and rep.verdict == "no generating field"
    hits = [np.array(p["a"]) for p in rep.fixed_points if p["nondegenerate"] and p["k"] == [1, 0]]
    d = [np.linalg.norm((a - [0.0, 0.5]) - np.round(a - [0.0, 0.5])) for a in hits]
    a = hits[int(np.argmin(d))]
    assert min(d) <= 0.02
    assert np.allclose(F.func(a) - a, [1.0, 0.0], atol=1e-10)


def test_llibre_mackay_jacobian():
    F, _ = build_llibre_mackay(0.25, 0.25, uniform_grid(4))
    x = np.array([0.31, 0.62])
    h = 1e-6
    fd = np.stack([(F.func(x + h * e) - F.func(x - h * e)) / (2 * h) for e in np.eye(2)], axis=1)
    assert np.abs(F.jac_func(x) - fd).max() <= 1e-8

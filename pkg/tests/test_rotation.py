import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from torusflow.errors import InvalidInputError, SignError
from torusflow.fields import PowerScalar, TrigScalar, build_constant, build_stepanoff
from torusflow.rotation import (
    RotationEstimate,
    classify_case,
    default_seeds,
    estimate_rotation_set,
    harmonic_mean,
    line_average_m,
    segment_distance,
    sign_pattern,
    stepanoff_predict,
)

from conftest import ZETA_IRR
from oracles import harmonic_mean_1d, harmonic_mean_2d, harmonic_mean_power, line_average

# frozen from the polar-coordinate quadrature oracle (harmonic_mean_power)
HM_POWER_075 = 0.5205204808029078
HM_POWER_090 = 0.2606126443746098


def test_frozen_power_means_match_oracle():
    assert harmonic_mean_power(0.75) == pytest.approx(HM_POWER_075, rel=1e-12)
    assert harmonic_mean_power(0.9) == pytest.approx(HM_POWER_090, rel=1e-12)


def test_harmonic_mean_1d():
    a = TrigScalar(1, 2.0, [((1,), 0.0, 1.0)])
    ref = harmonic_mean_1d(lambda t: 2 + np.sin(2 * np.pi * t))
    assert ref == pytest.approx(np.sqrt(3.0), abs=1e-14)
    assert harmonic_mean(a).value == pytest.approx(ref, abs=1e-13)


@pytest.mark.parametrize("amp", [0.5, 1.0, 1.5])
def test_harmonic_mean_diagonal(amp):
    a = TrigScalar(2, 2.0, [((1, 1), 0.0, amp)])
    ref = harmonic_mean_2d(lambda x, y: 2 + amp * np.sin(2 * np.pi * (x + y)))
    assert ref == pytest.approx(np.sqrt(4 - amp**2), abs=1e-12)
    hm = harmonic_mean(a)
    assert not hm.divergent
    assert hm.value == pytest.approx(ref, abs=1e-12)


def test_harmonic_mean_product(a_product):
    ref = harmonic_mean_2d(lambda x, y: (2 + np.sin(2 * np.pi * x)) * (2 + np.cos(2 * np.pi * y)))
    assert harmonic_mean(a_product).value == pytest.approx(ref, abs=1e-12)


def test_harmonic_mean_vanishing(sin2_base):
    hm = harmonic_mean(PowerScalar(sin2_base, 0.75))
    assert not hm.divergent
    assert hm.value == pytest.approx(HM_POWER_075, rel=1e-6)
    assert hm.exponent == pytest.approx(0.5, abs=0.05)
    hm9 = harmonic_mean(PowerScalar(sin2_base, 0.9))
    assert hm9.value == pytest.approx(HM_POWER_090, rel=2e-3)


def test_harmonic_mean_divergent(sin2_base):
    hm = harmonic_mean(sin2_base)
    assert hm.divergent and hm.value == 0.0
    assert harmonic_mean(PowerScalar(sin2_base, 1.2)).value == 0.0


def test_harmonic_mean_rejects_sign_change(a_sign):
    with pytest.raises(SignError):
        harmonic_mean(a_sign)


@given(st.floats(0.0, 1.0))
def test_line_average_matches_quadrature(a_product, x2):
    ref = line_average(lambda x, y: (2 + np.sin(2 * np.pi * x)) * (2 + np.cos(2 * np.pi * y)), x2)
    assert line_average_m(a_product, [1.0, 0.0], [0.0, x2]) == pytest.approx(ref, rel=1e-12)
    assert ref == pytest.approx(np.sqrt(3) * (2 + np.cos(2 * np.pi * x2)), rel=1e-12)


def test_line_average_vanishes_on_roots(a_sign):
    # a = cos 2 pi x1 + cos 2 pi x2 changes sign along every horizontal line
    assert line_average_m(a_sign, [1.0, 0.0], [0.0, 0.3]) == 0.0


def test_line_average_needs_rational_direction(a_product):
    with pytest.raises(InvalidInputError):
        line_average_m(a_product, ZETA_IRR, [0.0, 0.0])


def test_sign_patterns(a_product, a_sign, sin2_base):
    assert sign_pattern(a_product) == "positive"
    assert sign_pattern(a_product * -1.0) == "negative"
    assert sign_pattern(a_sign) == "changes_sign"
    assert sign_pattern(sin2_base) == "vanishing"
    # minimum 1e-13 at an off-grid point is found by the local refinement
    shifted = TrigScalar(2, 1.0 + 1e-13, [((1, 0), -0.5, 0.0), ((0, 1), -0.5, 0.0)])
    assert sign_pattern(shifted) == "vanishing"


def test_predict_commensurable_segment(a_product):
    p = stepanoff_predict(a_product, [1.0, 0.0])
    assert p.case == "I" and p.kind == "segment"
    assert p.endpoints[0] == pytest.approx([np.sqrt(3), 0.0], abs=1e-9)
    assert p.endpoints[1] == pytest.approx([3 * np.sqrt(3), 0.0], abs=1e-9)


def test_predict_incommensurable(a_diag, a_sign, sin2_base):
    p = stepanoff_predict(build_stepanoff(a_diag, ZETA_IRR))
    assert p.case == "III"
    assert p.endpoints[0] == pytest.approx(np.sqrt(3) * ZETA_IRR, abs=1e-12)
    assert stepanoff_predict(a_sign, ZETA_IRR).case == "IV_zero"
    q = stepanoff_predict(PowerScalar(sin2_base, 0.75), ZETA_IRR)
    assert q.case == "IV_segment"
    assert q.endpoints[1] == pytest.approx(HM_POWER_075 * ZETA_IRR, rel=1e-6)
    assert stepanoff_predict(sin2_base, ZETA_IRR).case == "IV_zero"
    neg = stepanoff_predict(a_diag * -1.0, ZETA_IRR)
    assert neg.endpoints[0] == pytest.approx(-np.sqrt(3) * ZETA_IRR, abs=1e-12)


def test_predict_commensurable_point():
    # a depends only on x1, so every horizontal line has the same average
    a = TrigScalar(2, 2.0, [((1, 0), 0.0, 1.0)])
    p = stepanoff_predict(a, [2.0, 0.0])
    assert p.case == "II"
    assert p.endpoints[0] == pytest.approx([2 * np.sqrt(3), 0.0], abs=1e-9)


def _estimate(vectors, T=1e4):
    v = np.asarray(vectors, dtype=float)
    lifts = (v * T)[:, None, :]
    est = RotationEstimate(np.zeros_like(v), np.array([T]), lifts, np.zeros(len(v), dtype=np.int64))
    return est


@pytest.mark.parametrize(
    "vectors, hint, case",
    [
        ([[1e-4, 0.0], [0.0, 2e-4]] * 3, None, "IV_zero"),
        ([[0.5, 0.25], [0.5 + 1e-4, 0.25]] * 3, None, "II"),
        ([[1.0, np.sqrt(2)], [1.0 + 1e-4, np.sqrt(2)]] * 3, ZETA_IRR, "III"),
        ([[1.0, 0.0], [2.0, 0.0], [1.5, 0.0]], None, "I"),
        ([[0.0, 0.0], [0.5, 0.5 * np.sqrt(2)], [0.2, 0.2 * np.sqrt(2)]], ZETA_IRR, "IV_segment"),
        ([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], None, "unresolved"),
    ],
)
def test_classifier_decision_tree(vectors, hint, case):
    est = _estimate(vectors)
    assert classify_case(est, direction_hint=hint) == case
    assert est.case_label == case


def test_estimate_constant_fields():
    est = estimate_rotation_set(build_constant([0.3, -0.7]))
    assert est.case_label == "II"
    assert est.verdict.witness_k == (3, -7)
    assert np.all(est.cauchy_residuals() <= 1.0 / 10.0 * np.sqrt(2))
    d = est.to_dict()
    assert d["schema"] == "rotation_set" and d["case"] == "II"
    # displacement quotients remove the x/T bias exactly for constant flows
    assert np.allclose(est.displacement_vectors, [0.3, -0.7], atol=1e-12)


def test_estimate_rejects_short_horizons(constant_field):
    with pytest.raises(InvalidInputError):
        estimate_rotation_set(constant_field, horizons=(10.0, 100.0))
    with pytest.raises(InvalidInputError):
        estimate_rotation_set(constant_field, seeds=np.zeros((2, 2)), horizons=(1e3,))


def test_default_seeds():
    s = default_seeds()
    assert s.shape == (32, 2)
    assert np.array_equal(s, default_seeds())
    assert default_seeds(3).shape == (132, 3)


def test_segment_distance():
    d = segment_distance([[0.5, 1.0], [2.0, 0.0], [-1.0, 0.0]], [0.0, 0.0], [1.0, 0.0])
    assert d == pytest.approx([1.0, 1.0, 1.0])

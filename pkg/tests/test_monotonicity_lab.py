import math

import numpy as np
import pytest

import exterior_g2 as eg
import field_calculus as fc
import monotonicity_lab as ml
import pointwise_algebra as pa
from utils import geometric_ladder

BALL3 = 4.0 * math.pi / 3.0
OMEGA7 = 16.0 * math.pi ** 3 / 105.0


def e12(n):
    return pa.TwoFormPoint.from_blocks([1.0], n).coeffs


@pytest.fixture
def g2_field():
    beta = eg.normal_form_beta(eg.G2Solution(1.0, 2.0, 3.0))
    return ml.FieldOnBall.constant(beta.to_matrix(), name="g2-123")


def test_unit_ball_volumes():
    assert ml.unit_ball_volume(2) == pytest.approx(math.pi, rel=1e-14)
    assert ml.unit_ball_volume(3) == pytest.approx(BALL3, rel=1e-14)
    assert ml.unit_ball_volume(7) == pytest.approx(OMEGA7, rel=1e-14)


# ---------------------------------------------------------------------------
# Ball integrals
# ---------------------------------------------------------------------------

def test_ball_integral_examples():
    unit = ml.ball_integral(ml.FieldOnBall.zero(3), ml.Weight(ml.WeightKind.VOLUME), 1.0)
    assert unit.method == "shell"
    assert unit.value == pytest.approx(BALL3, rel=1e-12)

    field_ = ml.FieldOnBall.constant(e12(3))
    rho = 1.7
    volume = ml.ball_integral(field_, ml.Weight(ml.WeightKind.VOLUME), rho)
    assert volume.value == pytest.approx(math.sqrt(2.0) * BALL3 * rho ** 3, rel=1e-12)
    modified = ml.ball_integral(field_, ml.Weight(ml.WeightKind.MODIFIED), rho)
    assert modified.value == pytest.approx(2.0 * math.sqrt(2.0) * BALL3 * rho ** 3, rel=1e-12)
    normalized = ml.ball_integral(field_, ml.Weight(ml.WeightKind.NORMALIZED), rho)
    assert normalized.value == pytest.approx((math.sqrt(2.0) - 1.0) * BALL3 * rho ** 3, rel=1e-12)


def test_ball_integral_with_multiplier_uses_sampling():
    weight = ml.Weight(ml.WeightKind.VOLUME, multiplier=lambda points: np.ones(len(points)))
    result = ml.ball_integral(ml.FieldOnBall.zero(3), weight, 1.0)
    assert result.method == "sobol"
    assert result.value == pytest.approx(BALL3, rel=1e-2)
    assert result.error < 0.05


def test_sampling_is_reproducible():
    weight = ml.Weight(ml.WeightKind.VOLUME, multiplier=lambda points: 1.0 + points[:, 0] ** 2)
    first = ml.ball_integral(ml.FieldOnBall.zero(3), weight, 2.0)
    second = ml.ball_integral(ml.FieldOnBall.zero(3), weight, 2.0)
    assert first == second


def test_negative_multiplier_is_rejected():
    weight = ml.Weight(ml.WeightKind.VOLUME, multiplier=lambda points: points[:, 0])
    with pytest.raises(ml.MultiplierError):
        ml.ball_integral(ml.FieldOnBall.zero(2), weight, 1.0)


@pytest.mark.parametrize("rho", [0.0, -1.0, 5.0])
def test_radius_out_of_range(rho):
    field_ = ml.FieldOnBall(2, lambda points: np.zeros((len(points), 2, 2)), max_radius=4.0)
    with pytest.raises(ml.RadiusError):
        ml.ball_integral(field_, ml.Weight(), rho)


def test_flat_ball_identities():
    for n in (2, 3, 7):
        assert ml.flat_ball_identities(n, 1.5)["pass"]


def test_sampled_field_is_interpolated_periodically():
    grid = fc.TorusGrid.square(2, 16)
    lam = 0.75
    field_ = ml.FieldOnBall.from_grid(fc.FormField.constant(grid, 2, [lam]))
    points = np.array([[0.1, 0.2], [-3.0, 9.0], [100.0, -50.0]])
    np.testing.assert_allclose(field_.evaluate(points)[:, 0, 1], lam, rtol=1e-12)
    result = ml.ball_integral(field_, ml.Weight(ml.WeightKind.VOLUME), 1.0)
    assert result.value == pytest.approx(math.sqrt(1.0 + lam ** 2) * math.pi, rel=1e-2)


# ---------------------------------------------------------------------------
# Profiles
# ---------------------------------------------------------------------------

def test_profile_of_unit_weight():
    radii = geometric_ladder(0.25, rungs=20)
    result = ml.profile(ml.FieldOnBall.zero(3), ml.Weight(ml.WeightKind.VOLUME), kappa=1.0, radii=radii)
    np.testing.assert_allclose(result.normalized, BALL3 * radii ** 2, rtol=1e-12)
    assert ml.check_monotone(result)["pass"]


def test_profile_of_constant_field():
    radii = geometric_ladder(0.5)
    field_ = ml.FieldOnBall.constant(e12(3))
    weight = ml.Weight(ml.WeightKind.VOLUME)
    kappa1 = ml.profile(field_, weight, kappa=1.0, radii=radii)
    np.testing.assert_allclose(kappa1.normalized, math.sqrt(2.0) * BALL3 * radii ** 2, rtol=1e-12)
    assert ml.check_monotone(kappa1)["pass"]

    kappa3 = ml.profile(field_, weight, kappa=3.0, radii=radii, threads=4)
    np.testing.assert_allclose(kappa3.normalized, math.sqrt(2.0) * BALL3, rtol=1e-11)
    assert ml.check_monotone(kappa3)["pass"]


@pytest.mark.parametrize("kind", list(ml.WeightKind))
def test_unit_exponent_profiles_of_constant_fields_are_monotone(rng, kind):
    for n in (2, 3, 5):
        field_ = ml.FieldOnBall.constant(pa.random_skew(rng, n, 2.0))
        result = ml.profile(field_, ml.Weight(kind), kappa=1.0)
        assert ml.check_monotone(result)["pass"]


def test_profile_of_sampled_constant_field():
    grid = fc.TorusGrid.square(2, 16)
    field_ = ml.FieldOnBall.from_grid(fc.FormField.constant(grid, 2, [1.2]))
    result = ml.profile(field_, ml.Weight(ml.WeightKind.MODIFIED), radii=geometric_ladder(0.5, rungs=6))
    assert ml.check_monotone(result)["pass"]
    assert [row["rho"] for row in result.to_rows()] == list(result.radii)


def test_profile_rejects_bad_radii():
    with pytest.raises(ml.RadiusError):
        ml.profile(ml.FieldOnBall.zero(3), ml.Weight(), radii=[1.0, 0.5])


def test_check_monotone_locates_a_drop():
    report = ml.check_monotone(ml.RadialProfile.from_values([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 1.5, 3.0]))
    assert not report["pass"]
    assert report["location"] == 1
    assert report["worst_drop"] == pytest.approx(0.5)


def test_check_monotone_needs_two_radii():
    with pytest.raises(ml.RadiusError):
        ml.check_monotone(ml.RadialProfile.from_values([1.0], [1.0]))


def test_normalized_profile_carries_theta_term():
    radii = np.array([0.5, 1.0, 1.5])
    result = ml.profile(ml.FieldOnBall.zero(3), ml.Weight(ml.WeightKind.NORMALIZED), a=1.0, radii=radii)
    expected = [2.0 * ml.theta(1.0, 3, rho) for rho in radii]
    np.testing.assert_allclose(result.theta_terms, expected, rtol=1e-12)
    np.testing.assert_allclose(result.normalized, expected, rtol=1e-12)


# ---------------------------------------------------------------------------
# Θ
# ---------------------------------------------------------------------------

def test_theta_examples():
    assert ml.theta(0.0, 3, 1.0) == pytest.approx(math.pi / 3.0, rel=1e-12)
    assert ml.theta(1.0, 3, 1.0) == pytest.approx(2.0 * math.pi / 3.0, rel=1e-12)
    assert ml.theta_closed(1.0, 3, 1.0) == pytest.approx(2.0 * math.pi / 3.0, rel=1e-12)
    n7 = 8.0 * math.pi ** 3 / 105.0 * (6.0 - 2.0 * math.e)
    assert ml.theta(1.0, 7, 1.0) == pytest.approx(n7, rel=1e-12)
    assert ml.theta_closed(1.0, 7, 1.0) == pytest.approx(n7, rel=1e-12)


@pytest.mark.parametrize("n", [1, 3, 5, 7])
@pytest.mark.parametrize("a, tau", [(0.0, 1.3), (0.1, 0.5), (1.0, 1.0), (0.7, 2.0), (5.0, 2.0)])
def test_theta_closed_matches_quadrature(n, a, tau):
    assert ml.theta_closed(a, n, tau) == pytest.approx(ml.theta(a, n, tau), rel=1e-10)


def test_theta_zero_curvature_limit():
    for n in (1, 3, 5, 7):
        limit = ml.unit_ball_volume(n) * 1.2 ** (n + 1) / (n + 1)
        assert ml.theta_closed(1e-9, n, 1.2) == pytest.approx(limit, rel=1e-8)


def test_theta_errors():
    with pytest.raises(ml.MonotonicityError):
        ml.theta_closed(1.0, 4, 1.0)
    with pytest.raises(ml.MonotonicityError):
        ml.theta(-1.0, 3, 1.0)


def test_theta_general_reduces_to_theta():
    omega = ml.unit_ball_volume(5)
    value = ml.theta_general(lambda z: omega * z ** 5, 0.4, 1.0, 1.5)
    assert value == pytest.approx(ml.theta(0.4, 5, 1.5), rel=1e-7)


# ---------------------------------------------------------------------------
# G2 profiles and vanishing audits
# ---------------------------------------------------------------------------

def test_g2_volume_profile(g2_field):
    radii = geometric_ladder(0.25, rungs=8)
    result = ml.g2_profile(g2_field, "volume", radii=radii)
    np.testing.assert_allclose(result.normalized, 10.0 * OMEGA7 * radii ** 4.5, rtol=1e-11)
    assert result.kappa == 2.5
    assert ml.check_monotone(result)["pass"]


def test_g2_normalized_profile(g2_field):
    radii = geometric_ladder(0.25, rungs=8)
    result = ml.g2_profile(g2_field, "normalized", radii=radii)
    np.testing.assert_allclose(result.normalized, 9.0 * OMEGA7 * radii ** (36.0 / 7.0), rtol=1e-11)
    assert ml.check_monotone(result)["pass"]


def test_g2_profile_of_zero_field():
    result = ml.g2_profile(ml.FieldOnBall.zero(7), "normalized", radii=geometric_ladder(0.5, rungs=4))
    assert np.all(result.normalized == 0.0)


def test_g2_profile_validates_the_equation():
    beta = eg.normal_form_beta(eg.G2Solution(0.0, 0.5, -0.5)) + eg.KForm.from_terms(7, {"12": 1.0})
    with pytest.raises(ml.ResidualValidationError):
        ml.g2_profile(ml.FieldOnBall.constant(beta.to_matrix()), "volume")
    with pytest.raises(ml.MonotonicityError):
        ml.g2_profile(ml.FieldOnBall.zero(3))


def test_vanishing_audit_examples(g2_field):
    constant = ml.vanishing_audit(ml.FieldOnBall.constant(e12(3)), growth_exponent=1.0)
    assert constant["exponent"] == pytest.approx(3.0, abs=1e-6)
    assert not constant["hypothesis_holds"]
    assert constant["consistent"]

    zero = ml.vanishing_audit(ml.FieldOnBall.zero(3))
    assert zero["exponent"] is None
    assert zero["hypothesis_holds"] and zero["field_vanishes"] and zero["consistent"]

    g2 = ml.vanishing_audit(g2_field, growth_exponent=13.0 / 7.0)
    assert g2["exponent"] == pytest.approx(7.0, abs=1e-6)
    assert g2["pass"]


# ---------------------------------------------------------------------------
# Two-dimensional parallel forms
# ---------------------------------------------------------------------------

def test_dim2_parallel_check_constant(torus32, scheme):
    report = ml.dim2_parallel_check(fc.FormField.constant(torus32, 2, [2.0]), scheme)
    assert report["delta"] <= 1e-12 and report["parallel"] <= 1e-12 and report["divergence"] <= 1e-12
    assert report["ratio"] is None
    assert report["pass"]


@pytest.mark.parametrize("size", [32, 64])
def test_dim2_parallel_check_sine(scheme, size):
    grid = fc.TorusGrid.square(2, size)
    beta = fc.FormField.from_functions(grid, 2, {"12": lambda x, y: np.sin(x)})
    report = ml.dim2_parallel_check(beta, scheme)
    assert report["delta"] > 0.5 and report["parallel"] > 0.5
    assert 0.1 <= report["ratio"] <= 10.0
    assert report["pass"]


def test_dim2_parallel_check_rejects_other_dimensions(rng, scheme):
    grid = fc.TorusGrid.square(3, 8)
    with pytest.raises(fc.GridError):
        ml.dim2_parallel_check(fc.band_limited_field(grid, 2, rng), scheme)


# ---------------------------------------------------------------------------
# Odd-dimension trace bound
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("m", [2, 3])
def test_odd_bound_holds_for_m_at_least_two(m):
    report = ml.lemma_4_12_audit(m, samples=100_000, seed=7)
    assert report["failures"] == 0
    assert "failure_region" not in report


def test_odd_bound_fails_for_m_one():
    report = ml.lemma_4_12_audit(1, samples=10_000, seed=7)
    assert report["failures"] > 9_900
    assert report["worst_gap"] > 0.0
    assert report["failure_region"]["mu_max"][0] <= 100.0


def test_odd_bound_rejects_m_zero():
    with pytest.raises(ml.MonotonicityError):
        ml.lemma_4_12_audit(0)


# ---------------------------------------------------------------------------
# Multiplier and exponent conditions
# ---------------------------------------------------------------------------

def test_multiplier_defect_for_constant_beta():
    beta = pa.TwoFormPoint.from_blocks([1.0], 2)
    assert ml.multiplier_defect(beta, np.eye(2)) == pytest.approx(1.0)
    assert ml.multiplier_defect(beta, -np.eye(2)) == pytest.approx(-1.0)


def test_kappa_condition():
    assert ml.kappa_condition(pa.TwoFormPoint.zero(3), 3.0)["holds"]
    assert not ml.kappa_condition(pa.TwoFormPoint.from_blocks([1.0], 3), 3.0)["holds"]
    assert ml.kappa_condition(pa.TwoFormPoint.from_blocks([1.0], 3), 2.0)["holds"]

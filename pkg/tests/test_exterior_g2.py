import math

import numpy as np
import pytest

import exterior_g2 as eg
import pointwise_algebra as pa

SQRT3 = math.sqrt(3.0)


def e(n, label, value=1.0):
    return eg.KForm.from_terms(n, {label: value})


def test_basis_is_lexicographic():
    assert eg.basis(4, 2) == ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


@pytest.mark.parametrize("sequence, sign", [((0, 1, 2), 1), ((1, 0, 2), -1), ((2, 0, 1), 1), ((0, 0, 1), 0)])
def test_permutation_sign(sequence, sign):
    assert eg.permutation_sign(sequence) == sign


def test_kform_rejects_wrong_length():
    with pytest.raises(eg.ExteriorError):
        eg.KForm(4, 2, np.zeros(5))


def test_wedge_examples():
    assert eg.wedge(e(3, "1"), e(3, "2")).coefficient("12") == 1.0
    assert eg.norm(eg.wedge(e(3, "12"), e(3, "13"))) == 0.0
    volume = eg.wedge(eg.g2_phi(), eg.g2_star_phi())
    assert volume.degree == 7
    assert volume.coeffs[0] == 7.0


def test_wedge_of_too_high_degree_is_empty():
    product = eg.wedge(e(3, "12"), e(3, "23"))
    assert product.degree == 4 and product.coeffs.size == 0


def test_wedge_rejects_dimension_mismatch():
    with pytest.raises(eg.DimensionMismatchError):
        eg.wedge(e(3, "1"), e(4, "1"))


def test_hodge_star_examples():
    one = eg.KForm(5, 0, [1.0])
    np.testing.assert_array_equal(eg.hodge_star(one).coeffs, eg.KForm.volume(5).coeffs)
    np.testing.assert_array_equal(eg.hodge_star(eg.g2_phi()).coeffs, eg.g2_star_phi().coeffs)
    twice = eg.hodge_star(eg.hodge_star(e(7, "12")))
    np.testing.assert_array_equal(twice.coeffs, e(7, "12").coeffs)


def test_star_phi_printed_terms():
    star = eg.g2_star_phi()
    for label, sign in eg.STAR_PHI_TERMS.items():
        assert star.coefficient(label) == sign


def test_interior_examples():
    assert eg.interior([1.0, 0.0, 0.0], e(3, "12")).coefficient("2") == 1.0
    assert eg.interior([0.0, 1.0, 0.0], e(3, "12")).coefficient("1") == -1.0
    expected = eg.KForm.from_terms(7, {"23": 1, "45": 1, "67": 1})
    np.testing.assert_array_equal(eg.interior(np.eye(7)[0], eg.g2_phi()).coeffs, expected.coeffs)


def test_interior_twice_vanishes(rng):
    a = eg.KForm(6, 3, rng.normal(size=20))
    v = rng.normal(size=6)
    assert eg.norm(eg.interior(v, eg.interior(v, a))) <= 1e-12


def test_phi_coefficients():
    phi = eg.g2_phi()
    assert phi.coefficient("123") == 1.0
    assert phi.coefficient("257") == -1.0
    assert phi.coefficient("275") == 1.0
    assert eg.inner(phi, phi) == 7.0


def test_ddt_residual_examples():
    assert eg.norm(eg.ddt_residual(eg.KForm.zero(7, 2))) == 0.0
    solution = eg.KForm.from_terms(7, {"23": 1.0, "45": 2.0, "67": 3.0})
    assert eg.norm(eg.ddt_residual(solution)) <= 1e-12
    residual = eg.ddt_residual(eg.KForm.from_terms(7, {"23": 1.0, "45": 1.0, "67": 1.0}))
    assert residual.coefficient("234567") == pytest.approx(2.0)
    assert eg.norm(residual) == pytest.approx(2.0)


def test_ddt_residual_rejects_wrong_space():
    with pytest.raises(eg.DimensionMismatchError):
        eg.ddt_residual(eg.KForm.zero(6, 2))


def test_volume_from_series_examples():
    assert eg.volume_from_series(eg.KForm.zero(4, 2)) == 1.0
    beta = eg.KForm.from_terms(4, {"12": 1.0, "34": 2.0})
    assert eg.volume_from_series(beta) == pytest.approx(math.sqrt(10.0), rel=1e-12)
    equality = eg.KForm.from_terms(7, {"23": SQRT3, "45": SQRT3, "67": SQRT3})
    assert eg.volume_from_series(equality) == pytest.approx(8.0, rel=1e-12)


def test_series_matches_determinant(rng):
    for n in range(2, 9):
        B = pa.random_skew(rng, n, 5.0, size=50)
        series = eg.series_volume_arrays(eg.matrix_to_coeffs(B), n)
        np.testing.assert_allclose(series, pa.volume_from_matrix(B), rtol=1e-10)


def test_matrix_bridge_round_trip(rng):
    B = pa.random_skew(rng, 5)
    np.testing.assert_array_equal(eg.two_form_from_matrix(B).to_matrix(), B)


def test_solve_c3_examples():
    assert eg.solve_c3(SQRT3, SQRT3).c3 == pytest.approx(SQRT3, rel=1e-12)
    assert eg.solve_c3(1.0, 2.0).c3 == pytest.approx(3.0)
    with pytest.raises(eg.SingularConstraintError):
        eg.solve_c3(1.0, 1.0)


def test_g2_solution_rejects_off_constraint():
    with pytest.raises(eg.ExteriorError):
        eg.G2Solution(1.0, 1.0, 1.0)


@pytest.mark.parametrize("c", [(0.0, 0.7, -0.7), (SQRT3, SQRT3, SQRT3), (1.0, 2.0, 3.0)])
def test_normal_forms_solve_ddt(c):
    beta = eg.normal_form_beta(eg.G2Solution(*c))
    assert eg.norm(eg.ddt_residual(beta)) <= 1e-10


def test_g2_point_report_equality_point():
    report = eg.g2_point_report(SQRT3, SQRT3)
    assert report["trace"] == pytest.approx(2.5, rel=1e-12)
    assert report["volume"] == pytest.approx(8.0, rel=1e-12)
    assert report["ratio"] == pytest.approx(13 / 7, rel=1e-12)


def test_scan_single_point_equality():
    report = eg.g2_bounds_scan(1, points=[(SQRT3, SQRT3)])
    assert report.min_trace == pytest.approx(2.5, rel=1e-12)
    assert report.min_ratio == pytest.approx(13 / 7, rel=1e-12)
    assert report.passed


def test_ratio_is_three_below_the_hyperbola():
    evaluated = eg.evaluate_pairs(np.array([0.5, -0.2, 0.3]), np.array([0.5, 3.0, -4.0]))
    np.testing.assert_allclose(evaluated["ratio"], 3.0, rtol=1e-12)


def test_scan_respects_bounds_and_thread_count():
    single = eg.g2_bounds_scan(20_000, 50.0, seed=1, threads=1)
    pooled = eg.g2_bounds_scan(20_000, 50.0, seed=1, threads=3)
    assert single.passed
    assert single.as_dict() == pooled.as_dict()
    assert single.as_dict()["bound_ratio"] == 13 / 7


def test_scan_report_explains_a_residual_failure():
    report = eg.G2ScanReport(samples=10, min_trace=3.0, min_ratio=2.0, argmin_c=[1.0, 2.0, -3.0],
                             max_residual_ratio=1e-6, skipped=1)
    summary = report.as_dict()
    assert summary["pass"] is False
    assert summary["max_residual_ratio"] == 1e-6
    assert summary["skipped"] == 1


def test_exterior_suite_passes(rng):
    checks = eg.exterior_suite(rng, samples=60, volume_samples=50, g2_samples=500)
    assert [c["name"] for c in checks if not c["pass"]] == []


def test_exterior_suite_catches_corrupted_star_phi(rng):
    corrupted = dict(eg.STAR_PHI_TERMS)
    corrupted["1247"] = 1
    checks = eg.exterior_suite(rng, samples=10, volume_samples=10, g2_samples=200,
                               star_phi=eg.KForm.from_terms(7, corrupted))
    failed = {c["name"] for c in checks if not c["pass"]}
    assert "hodge_star(φ) = *φ" in failed

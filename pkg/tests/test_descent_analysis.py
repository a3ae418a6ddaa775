import numpy as np
import pytest

from descent_lab import catalog
from descent_lab.charts import BundlePoint, convert_columns, point
from descent_lab.descent import (DescentReport, SuiteConfig, _lift_F_columns, boundary_condition_check,
                                 criterion_residual, descent_suite, extend_across_zero,
                                 flow_commutation_defect, integral_preservation_defect,
                                 inverse_composition_defect, isometry_suite, jacobi_preservation_check,
                                 kappa_conjugated_jacobi, reconstruct_phi, sample_tm, spray_descent_suite,
                                 test_descent as run_criterion, trapping_check, verify_reconstruction)
from descent_lab.errors import NonIsolatedZeroError, ZeroVectorError
from descent_lab.lifts import tangent_map
from descent_lab.riemann import geodesic_spray
from descent_lab.sprays import integrate_jacobi

TOL = 1e-10
R1, R2 = catalog.euclidean(1), catalog.euclidean(2)
flat = geodesic_spray(catalog.flat_metric(R2))
flat1 = geodesic_spray(catalog.flat_metric(R1))
twisted = catalog.scenario("twisted-caps")


def identity(M):
    return catalog.bundle_map(M, lambda c: list(c), "id")


def doubling(M):
    return catalog.bundle_map(M, lambda c: list(c[:len(c) // 2]) + [2 * v for v in c[len(c) // 2:]], "double")


def y_blocks(points):
    return np.concatenate([p.coords[p.n:] for p in points], axis=1)


# -- criterion ------------------------------------------------------------------

def test_criterion_examples():
    F = tangent_map(catalog.base_map(R1, catalog.cubic, "cubic"))
    assert criterion_residual(F, point((1, 2, 3, 4), 2)) < 1e-13
    D = doubling(R1)
    xi = point((0, 1, 1, 0), 2)
    assert criterion_residual(D, xi, normalized=False) == pytest.approx(np.sqrt(2), abs=1e-15)
    assert criterion_residual(D, xi) == pytest.approx(np.sqrt(2) / (1 + np.sqrt(5)), abs=1e-15)
    assert criterion_residual(identity(R1), point((0.3, -2, 5, 1), 2)) == 0.0


@pytest.mark.parametrize("coords", [(1, 0, 1, 0), (1, 1, 0, 0)])
def test_criterion_needs_slashed_point(coords):
    with pytest.raises(ZeroVectorError):
        criterion_residual(identity(R1), point(coords, 2))


def test_sampled_criterion_verdicts():
    sc = catalog.scenario("polynomial-diffeo")
    ok = run_criterion(sc.F, 300)
    assert ok["verdict"] == "pass" and ok["max"] < 1e-12 and ok["count"] == 300
    bad = run_criterion(doubling(R2), 300)
    assert bad["verdict"] == "fail" and bad["max"] >= 0.4
    empty = run_criterion(sc.F, 0)
    assert empty["verdict"] == "inconclusive" and empty["count"] == 0


def test_pinned_point_on_fiber_doubling():
    sc = catalog.scenario("fiber-doubling")
    out = run_criterion(sc.F, 10, pinned=sc.pinned)
    assert abs(out["pinned"][0]["residual"] - np.sqrt(2) / (1 + np.sqrt(5))) < 1e-12
    assert out["pinned"][0]["raw"] == pytest.approx(np.sqrt(2), abs=1e-15)


# -- reconstruction ---------------------------------------------------------------

def test_reconstruct_shift():
    F = catalog.bundle_map(R1, lambda c: [c[0] + 1, c[1]], "shift")
    rec = reconstruct_phi(F, samples=50)
    assert rec(point((0.0,), 0)).coords[0] == 1.0
    assert rec.constancy_defect == 0.0 and not rec.diagnostics
    assert verify_reconstruction(F, rec, 50) == 0.0


def test_constancy_alone_is_not_enough():
    D = doubling(R1)
    rec = reconstruct_phi(D, samples=50)
    assert rec.constancy_defect == 0.0
    # F - D(id) = (0, y): the defect is the largest sampled |y|
    expected = float(np.max(np.abs(y_blocks(sample_tm(R1, np.random.default_rng(1), 50)))))
    assert verify_reconstruction(D, rec, 50, seed=1) == expected


def test_fiber_dependent_base_does_not_descend():
    F = catalog.bundle_map(R2, catalog.fiber_dependent_base, "x+|y|^2")
    rec = reconstruct_phi(F, samples=50)
    assert rec.constancy_defect > 0.9
    assert rec.diagnostics and rec.diagnostics[0].startswith("does not descend at")


def test_reconstruction_and_inverse_on_catalog():
    for name in ("polynomial-diffeo", "flat-torus", "poincare-half-plane"):
        sc = catalog.scenario(name)
        rec = reconstruct_phi(sc.F, samples=100)
        assert rec.constancy_defect < 1e-12
        assert verify_reconstruction(sc.F, rec, 100) < 1e-8
        assert inverse_composition_defect(sc.F, sc.F_inverse, 100) < 1e-6


# -- sprays and F -------------------------------------------------------------------

def test_integral_preservation_examples():
    assert integral_preservation_defect(identity(R2), flat, flat, 50) == 0.0
    expected = float(np.max(np.abs(y_blocks(sample_tm(R2, np.random.default_rng(3), 50)))))
    assert integral_preservation_defect(doubling(R2), flat, flat, 50) == pytest.approx(expected, rel=1e-15)
    assert integral_preservation_defect(twisted.F, twisted.spray, twisted.target_spray, 50) < 1e-8


def test_flow_commutation_examples():
    assert flow_commutation_defect(identity(R2), flat, flat, 1.0, 20, tol=TOL) <= 2 * TOL
    expected = float(np.max(np.abs(y_blocks(sample_tm(R2, np.random.default_rng(4), 20, (0.5, 1.5))))))
    d = flow_commutation_defect(doubling(R2), flat, flat, 1.0, 20, tol=TOL)
    assert d == pytest.approx(expected, rel=1e-8)
    with pytest.raises(ValueError):
        flow_commutation_defect(identity(R2), flat, flat, 100.0, 1, horizon=50.0)


def test_flow_commutation_on_twisted_caps():
    assert flow_commutation_defect(twisted.F, twisted.spray, twisted.target_spray, 1.0, 10, tol=TOL) < 1e-6


def _trials(rng, count, box=1.0):
    x = rng.uniform(-box, box, (2, count))
    xdot = rng.normal(size=(2, count))
    xdot /= np.linalg.norm(xdot, axis=0)
    J = rng.normal(size=(2, count))
    J /= np.linalg.norm(J, axis=0)
    return {"x": x, "J": J, "xdot": xdot, "Jdot": 0.5 * J, "span": (0.0, 1.5)}


def test_jacobi_preservation_identity_and_nonlinear_fiber():
    trials = _trials(np.random.default_rng(0), 5)
    same = jacobi_preservation_check(identity(R2), flat, flat, trials, TOL)
    assert same["image_defect"] <= 10 * TOL and same["launch_defect"] <= 10 * TOL
    F = catalog.bundle_map(R2, catalog.nonlinear_fiber, "y+|y|^2 e1")
    trials = dict(trials, Jdot=trials["xdot"])  # |J'| = 1 along each trial
    bad = jacobi_preservation_check(F, flat, flat, trials, TOL)
    assert bad["image_defect"] >= 0.1


def test_jacobi_preservation_skips_vanishing_trials():
    trials = _trials(np.random.default_rng(1), 3)
    trials["J"][:, 1] = 0.0
    trials["Jdot"][:, 1] = 0.0
    out = jacobi_preservation_check(identity(R2), flat, flat, trials, TOL)
    assert out["skipped"] == [1] and out["diagnostics"]


def test_jacobi_preservation_twisted_caps():
    trials = _trials(np.random.default_rng(2), 6)
    trials["chart"] = "N"
    out = jacobi_preservation_check(twisted.F, twisted.spray, twisted.target_spray, trials, TOL)
    assert out["image_defect"] < 1e-5 and out["launch_defect"] < 1e-5


def test_kappa_conjugated_jacobi():
    J = integrate_jacobi(flat, [0.1, 0.2], [1.0, 0.0], [0.0, 1.0], [0.3, 0.4], (0.0, 1.0), TOL)
    same, rep = kappa_conjugated_jacobi(identity(R2), flat, flat, J)
    assert rep["passed"]
    z, _ = J.state(0.6)
    np.testing.assert_allclose(same.state(0.6)[0], z, atol=1e-15)
    # fiber doubling: conjugation doubles the velocity blocks; the second-order
    # equation still holds (flat Jacobi fields are affine), only the velocity rows disagree
    dbl, rep = kappa_conjugated_jacobi(doubling(R2), flat, flat, J)
    assert rep["ode_defect"] == 0.0
    assert not rep["passed"] and rep["defect"] == pytest.approx(1.0, abs=1e-12)  # gap (xdot, Jdot), largest entry 1
    np.testing.assert_allclose(dbl.state(0.6)[0], np.concatenate([z[:4], 2 * z[4:]]), atol=1e-15)
    Jt, rep = kappa_conjugated_jacobi(twisted.F, twisted.spray, twisted.target_spray,
                                      integrate_jacobi(twisted.spray, [0.4, 0.1], [0.2, 0.3], [0.6, 0.8],
                                                       [0.0, 0.5], (0.0, 1.0), TOL, chart="N"))
    assert rep["passed"] and rep["defect"] < 1e-5


# -- continuation across zeros -------------------------------------------------------

def _direct_launch(F, S, St, J, t_launch, res):
    """Largest distance between the continuation and the S~-Jacobi field
    launched directly from DF(J'(t_launch))."""
    z, c = J.state(t_launch)
    d, dc = _lift_F_columns(F, z, c, S.dim)
    n = S.dim
    legs = {s: integrate_jacobi(St, d[:n], d[n:2 * n], d[2 * n:3 * n], d[3 * n:], (t_launch, end), TOL, dc)
            for s, end in ((-1, res.times[0]), (1, res.times[-1]))}
    worst = 0.0
    for t, lim, ch in zip(res.times, res.states, res.charts):
        P = legs[-1 if t < t_launch else 1]
        zt, ct = P.state(t)
        zt = convert_columns(St.manifold.tangent(), 1, zt, ct, np.array([ch], dtype=object))[:, 0]
        worst = max(worst, float(np.max(np.abs(zt - lim))))
    return worst


@pytest.mark.parametrize("x, xdot, Jdot", [((1.0, 0.0), (0.0, 1.0), (1.0, 0.0)),  # equator, J = sin t n
                                           ((0.4, 0.1), (0.6, 0.8), (-0.8, 0.6))])  # through the twisted cap
def test_extend_across_zero_matches_direct_integration(x, xdot, Jdot):
    S, St, F = twisted.spray, twisted.target_spray, twisted.F
    J = integrate_jacobi(S, list(x), [0.0, 0.0], list(xdot), list(Jdot), (0.0, 2.0), TOL, chart="N")
    res = extend_across_zero(F, S, St, J, 0.0, 0.5, (0.0, 2.0))
    assert 0.8 <= res.order <= 1.2
    assert res.matching_defect < 1e-6
    assert _direct_launch(F, S, St, J, 0.5, res) < 1e-4
    np.testing.assert_allclose(res.states[0][2:4], 0.0, atol=1e-9)  # the image field vanishes at the zero


def test_extend_across_zero_identity_returns_J():
    J = integrate_jacobi(flat, [0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0], (0.0, 1.0), TOL)
    res = extend_across_zero(identity(R2), flat, flat, J, 0.0, 0.5, (0.0, 1.0), times=[0.0, 0.5, 1.0])
    for t, s in zip(res.times, res.states):
        np.testing.assert_allclose(s, J.state(t)[0][:, 0], atol=1e-9)


def test_extend_across_zero_rejections():
    J1 = integrate_jacobi(flat1, [0.0], [0.0], [1.0], [1.0], (0.0, 1.0), TOL)
    with pytest.raises(ValueError, match="dim M >= 2"):
        extend_across_zero(identity(R1), flat1, flat1, J1, 0.0, 0.5, (0.0, 1.0))
    J0 = integrate_jacobi(flat, [0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 0.0], (0.0, 1.0), TOL)
    with pytest.raises(NonIsolatedZeroError):
        extend_across_zero(identity(R2), flat, flat, J0, 0.0, 0.5, (0.0, 1.0))


# -- trapping and boundary data ----------------------------------------------------------

def test_sphere_trapping_hits_within_quarter_circle():
    sc = catalog.scenario("round-sphere")
    rng = np.random.default_rng(0)
    x = rng.uniform(-1.5, 1.5, (2, 60))
    y = rng.normal(size=(2, 60))
    # unit speed: scale by the conformal factor (1 + |x|^2)/2
    y *= (1 + np.sum(x * x, axis=0)) / 2 / np.linalg.norm(y, axis=0)
    out = trapping_check(sc.spray, sc.sigma, x, y, "N", T_max=10.0)
    assert out["misses"] == 0 and not out["errors"]
    assert out["max_abs_hit"] <= np.pi / 2 + 1e-3


def test_trapping_start_on_sigma_and_flat_miss():
    sc = catalog.scenario("round-sphere")
    out = trapping_check(sc.spray, sc.sigma, [[1.0], [0.0]], [[0.3], [1.0]], "N", T_max=5.0)
    assert out["hit_times"] == [0.0]
    miss = trapping_check(flat, catalog.vertical_line(), [[1.0], [0.0]], [[0.0], [1.0]], "global", T_max=20.0)
    assert miss["misses"] == 1 and np.isnan(miss["hit_times"][0]) and miss["max_abs_hit"] is None
    hit = trapping_check(flat, catalog.vertical_line(), [[1.0], [0.0]], [[-2.0], [1.0]], "global", T_max=20.0)
    assert hit["hit_times"][0] == pytest.approx(0.5, abs=1e-9)


def test_boundary_condition_examples():
    S, sigma = twisted.spray, twisted.sigma
    same = boundary_condition_check(identity(catalog.sphere()), S, S, sigma, 30)
    assert same["spray_defect"] == 0.0 and same["differential_defect"] == 0.0
    tw = boundary_condition_check(twisted.F, S, twisted.target_spray, sigma, 30)
    assert tw["spray_defect"] < 1e-9 and tw["differential_defect"] < 1e-9
    bad = boundary_condition_check(doubling(catalog.sphere()), S, S, sigma, 30)
    assert bad["differential_defect"] >= 0.1


# -- suites and reports ---------------------------------------------------------------------

def small(**kw):
    base = dict(samples=40, jacobi_trials=3, trapping_samples=20, flow_times=(0.5,))
    base.update(kw)
    return SuiteConfig(**base)


def test_descent_suite_verdicts():
    sc = catalog.scenario("polynomial-diffeo")
    assert descent_suite(sc.F, small(), sc.F_inverse).verdict == "confirmed"
    bad = descent_suite(doubling(R2), small())
    assert bad.verdict == "hypothesis-fail"
    assert all(s["asserted"] is False for s in bad.stages if s["role"] == "conclusion")
    assert descent_suite(sc.F, small(samples=0)).verdict == "inconclusive"


def test_spray_suite_identity_on_sphere_is_confirmed():
    S = twisted.spray
    rep = spray_descent_suite(identity(catalog.sphere()), S, S, twisted.sigma, small())
    assert rep.verdict == "confirmed", rep.stages


def test_spray_suite_fiber_doubling_fails_hypotheses():
    sc = catalog.scenario("fiber-doubling")
    S = geodesic_spray(catalog.flat_metric(sc.manifold))
    sigma = catalog.Hypersurface(sc.manifold, {"global": catalog.exprs("level", 2, {"h": "x1 - 3"})}, 0.5)
    rep = spray_descent_suite(sc.F, S, S, sigma, small())
    stages = {s["stage"]: s for s in rep.stages}
    assert rep.verdict == "hypothesis-fail"
    assert not stages["boundary"]["passed"]
    # y -> 2y is linear, so on a flat spray it does carry Jacobi fields to Jacobi fields
    assert stages["jacobi_preservation"]["passed"]
    assert stages["criterion"]["role"] == "conclusion" and stages["criterion"]["asserted"] is False


def test_isometry_suite_identity_and_scaled():
    g = catalog.round_metric()
    S = geodesic_spray(g)
    F = identity(catalog.sphere())
    anchor = ("N", (1.0, 0.0))
    rep = isometry_suite(F, g, g, S, S, twisted.sigma, anchor, small())
    assert rep.verdict == "confirmed"
    gt = catalog.round_metric(4.0)
    rep = isometry_suite(F, g, gt, S, geodesic_spray(gt), twisted.sigma, anchor, small())
    stages = {s["stage"]: s for s in rep.stages}
    assert rep.verdict == "hypothesis-fail"
    assert abs(stages["fiber_isometry"]["defect"] - 3.0) < 1e-9
    assert stages["spray_axioms"]["passed"] and stages["boundary"]["defect"] < 1e-12  # equal sprays


def test_report_pass_flags_match_defects():
    rep = DescentReport("descent")
    assert rep.add("a", "hypothesis", 0.5, 1.0) and not rep.add("b", "conclusion", 2.0, 1.0)
    assert not rep.add("c", "conclusion", None, 1.0)
    assert rep.finish().verdict == "conclusion-fail"
    for s in rep.stages:
        assert s["passed"] == (s["defect"] is not None and s["defect"] < s["tolerance"])
    rep = DescentReport("descent")
    rep.add("a", "hypothesis", 0.0, 1.0, {"inconclusive": True}, False)
    assert rep.finish().verdict == "inconclusive"


def test_suites_are_deterministic():
    sc = catalog.scenario("fiber-doubling")
    a = descent_suite(sc.F, small(seed=7), sc.F_inverse).as_dict()
    b = descent_suite(sc.F, small(seed=7), sc.F_inverse).as_dict()
    assert a == b
    c = descent_suite(sc.F, small(seed=8), sc.F_inverse).as_dict()
    assert a["stages"][0]["defect"] != c["stages"][0]["defect"]

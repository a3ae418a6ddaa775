import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from descent_lab import catalog
from descent_lab.charts import BundlePoint, convert_columns, point
from descent_lab.errors import NonIsolatedZeroError, ZeroVectorError
from descent_lab.riemann import geodesic_spray, metric_norm
from descent_lab.sprays import (SprayField, check_spray_axioms, complete_lift, geodesic_flow, integrate_geodesic,
                                integrate_jacobi, jacobi_vs_oracle, punctured_variation, spray_vector,
                                tangent_jacobi, variation_oracle, zero_jacobi)

TOL = 1e-10
R1, R2 = catalog.euclidean(1), catalog.euclidean(2)
flat = geodesic_spray(catalog.flat_metric(R2))
sphere = geodesic_spray(catalog.round_metric())
half_plane = geodesic_spray(catalog.hyperbolic_metric())


def in_chart(manifold, z, charts, target, order=1):
    return convert_columns(manifold, order, z, charts, np.array([target] * z.shape[1], dtype=object))


def test_spray_vector_examples():
    S1 = geodesic_spray(catalog.flat_metric(R1))
    assert list(spray_vector(S1, point((1, 2), 1)).coords) == [1, 2, 2, 0]
    v = spray_vector(half_plane, point((0, 1, 1, 0), 1))
    np.testing.assert_allclose(v.coords, [0, 1, 1, 0, 1, 0, 0, -1], atol=1e-15)
    with pytest.raises(ZeroVectorError):
        spray_vector(S1, point((1, 0), 1))


def test_half_plane_closed_form_coefficients():
    rng = np.random.default_rng(4)
    x = np.vstack([rng.uniform(-2, 2, 20), rng.uniform(0.5, 3, 20)])
    y = rng.normal(size=(2, 20))
    G = half_plane.G_array("global", x, y)
    np.testing.assert_allclose(G[0], -y[0] * y[1] / x[1], rtol=1e-13)
    np.testing.assert_allclose(G[1], (y[0] ** 2 - y[1] ** 2) / (2 * x[1]), rtol=1e-13)
    np.testing.assert_allclose(half_plane.G_array("global", x, 2 * y), 4 * G, rtol=1e-14)


def test_axiom_checks():
    assert check_spray_axioms(flat)["homogeneity_defect"] == 0.0
    report = check_spray_axioms(sphere)
    assert report["homogeneity_defect"] < 1e-9 and report["structure_defect"] == 0.0
    cubed = SprayField(R1, {"global": lambda x, y: [y[0] ** 3]}, "cubed")
    assert check_spray_axioms(cubed)["homogeneity_defect"] > 0.1


def test_flat_geodesic_is_a_line():
    c = integrate_geodesic(geodesic_spray(catalog.flat_metric(R1)), [0.0], [1.0], (0.0, 2.0), TOL)
    for t in (0.3, 1.1, 2.0):
        z, _ = c.state(t)
        np.testing.assert_allclose(z[:, 0], [t, 1.0], atol=1e-12)


def test_equator_closes_up():
    c = integrate_geodesic(sphere, [1.0, 0.0], [0.0, 1.0], (0.0, 2 * np.pi), TOL, chart="N")
    z, charts = c.solution.final()
    z = in_chart(catalog.sphere(), z, charts, "N")
    assert np.linalg.norm(z[:2, 0] - [1.0, 0.0]) < 1e-6
    assert c.defect() < 10 * TOL
    assert c.min_speed() > 1e-9


def test_geodesic_crossing_charts_closes_up():
    # a meridian through both poles forces chart switches
    c = integrate_geodesic(sphere, [1.0, 0.0], [1.0, 0.0], (0.0, 2 * np.pi), TOL, chart="N")
    z, charts = c.solution.final()
    assert np.linalg.norm(in_chart(catalog.sphere(), z, charts, "N")[:2, 0] - [1.0, 0.0]) < 1e-6
    seen = {c.state(t)[1][0] for t in np.linspace(0, 2 * np.pi, 40)}
    assert seen == {"N", "S"}


def test_half_plane_geodesic_is_semicircle():
    c = integrate_geodesic(half_plane, [0.0, 1.0], [1.0, 0.0], (-1.5, 1.5), TOL)
    for t in c.probes():
        z, _ = c.state(t)
        assert abs(z[0, 0] ** 2 + z[1, 0] ** 2 - 1.0) < 1e-6
    assert c.defect() < 10 * TOL


def test_zero_velocity_rejected():
    with pytest.raises(ZeroVectorError):
        integrate_geodesic(flat, [0.0, 0.0], [0.0, 0.0], (0.0, 1.0))


def test_flow_examples():
    p = point((0.5, -1.0, 2.0, 3.0), 1)
    np.testing.assert_allclose(geodesic_flow(flat, 1.5, p).coords, [3.5, 3.5, 2.0, 3.0], atol=1e-12)
    assert geodesic_flow(sphere, 0.0, p) is p
    with pytest.raises(ValueError):
        geodesic_flow(flat, 60.0, p)


@pytest.mark.parametrize("S", [sphere, half_plane], ids=["sphere", "half-plane"])
def test_flow_group_law(S):
    rng = np.random.default_rng(5)
    cid = S.manifold.chart_ids[0]
    for s, t in rng.uniform(-2, 2, size=(3, 2)):
        box = S.manifold.charts[cid].sample_box
        x = [rng.uniform(*box[i]) for i in range(2)]
        y = rng.normal(size=2)
        p = point(np.concatenate([x, y / np.linalg.norm(y)]), 1, cid)
        two = geodesic_flow(S, s, geodesic_flow(S, t, p))
        one = geodesic_flow(S, s + t, p)
        two_c = in_chart(S.manifold, two.coords[:, None], np.array([two.chart], object), one.chart)
        assert np.max(np.abs(two_c[:, 0] - one.coords)) < 1e-8


def test_complete_lift_examples():
    zero = complete_lift(flat)
    assert zero.G("global", [0.3, 0.1, 1.0, 2.0], [0.5, -0.2, 0.7, 0.4]) == [0.0] * 4
    toy = SprayField(R1, {"global": lambda x, y: [y[0] * y[0]]}, "toy")
    lifted = complete_lift(toy)
    X, Y = 1.7, -0.6
    A, B = lifted.G("global", [0.2, 0.9], [X, Y])
    assert (A, B) == pytest.approx((X * X, 2 * X * Y), rel=1e-15)
    assert check_spray_axioms(complete_lift(sphere), samples=100)["homogeneity_defect"] < 1e-9


def test_flat_jacobi_is_affine():
    J = integrate_jacobi(flat, [0.1, 0.2], [1.0, -1.0], [0.0, 1.0], [0.5, 2.0], (0.0, 2.0), TOL)
    z, _ = J.state(1.5)
    np.testing.assert_allclose(z[2:4, 0], [1.75, 2.0], atol=1e-12)


def test_sphere_conjugate_point():
    J = integrate_jacobi(sphere, [1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [1.0, 0.0], (0.0, np.pi), TOL, chart="N")
    g = catalog.round_metric()
    worst = 0.0
    for t in np.linspace(0, np.pi, 101):
        z, charts = J.state(t)
        norm = np.sqrt(metric_norm(g, charts[0], list(z[:2, 0]), list(z[2:4, 0])))
        worst = max(worst, abs(norm - np.sin(t)))
    assert worst < 1e-6
    assert np.linalg.norm(J.state(np.pi)[0][2:4, 0]) < 1e-6
    assert J.defect() < 10 * TOL


def test_zero_initial_data_gives_zero_field():
    J = integrate_jacobi(sphere, [0.3, 0.1], [0.0, 0.0], [0.5, 1.0], [0.0, 0.0], (0.0, 2.0), TOL, chart="N")
    assert max(np.max(np.abs(J.state(t)[0][2:4])) for t in J.probes()) == 0.0


def test_zero_jacobi_is_exact():
    c = integrate_geodesic(sphere, [0.3, 0.1], [0.5, 1.0], (0.0, 2.0), TOL, chart="N")
    Z = zero_jacobi(c)
    for t in (0.0, 0.7, 2.0):
        zc, _ = c.state(t)
        z, _ = Z.state(t)
        np.testing.assert_array_equal(z[:2], zc[:2])
        assert not np.any(z[2:4]) and not np.any(z[6:8])
    assert Z.defect() < 10 * TOL


def test_tangent_of_geodesic_is_jacobi():
    x0, y0 = np.array([0.3, 0.1]), np.array([0.5, 1.0])
    c = integrate_geodesic(sphere, x0, y0, (0.0, 2.0), TOL, chart="N")
    acc = -2 * sphere.G_array("N", x0[:, None], y0[:, None])[:, 0]
    J = integrate_jacobi(sphere, x0, y0, y0, acc, (0.0, 2.0), TOL, chart="N")
    T = tangent_jacobi(c)
    for t in np.linspace(0.1, 2.0, 9):
        zj, cj = J.state(t)
        zt, ct = T.state(t)
        assert cj[0] == ct[0]
        assert np.max(np.abs(zj[:4, 0] - zt[:4, 0])) < 1e-8
    assert T.defect() < 1e-8


def test_jacobi_fields_are_linear():
    rng = np.random.default_rng(8)
    x0 = np.tile([[0.3], [0.1]], 3)
    xdot = np.tile([[0.5], [1.0]], 3)
    a, b = rng.normal(size=(2, 4))
    J0 = np.column_stack([a[:2], b[:2], a[:2] + b[:2]])
    Jdot = np.column_stack([a[2:], b[2:], a[2:] + b[2:]])
    J = integrate_jacobi(sphere, x0, J0, xdot, Jdot, (0.0, 2.5), TOL, chart="N")
    for t in J.probes(10):
        z, charts = J.state(t)
        assert len(set(charts)) == 1
        assert np.max(np.abs(z[2:4, 0] + z[2:4, 1] - z[2:4, 2])) < 1e-9


def test_variation_oracle_flat_and_sphere():
    times, states, _ = variation_oracle(flat, [0.0, 0.0], [1.0, 0.0], [0.2, 0.1], [0.0, 1.0], (0.0, 2.0))
    np.testing.assert_allclose(states[:, 2:4], 0.2 * np.array([1, 0.5]) + times[:, None] * [0, 1], atol=1e-9)
    times, states, charts = variation_oracle(sphere, [1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [1.0, 0.0],
                                             (0.0, np.pi), chart="N")
    assert np.max(np.abs(np.linalg.norm(states[:, 2:4], axis=1) - np.sin(times))) < 1e-6
    J = integrate_jacobi(sphere, [1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [1.0, 0.0], (0.0, np.pi), TOL, chart="N")
    assert jacobi_vs_oracle(J, times, states, charts) < 1e-5


def test_punctured_variation_flat():
    # J(t) = t e1 along c(t) = t e2, so j(t, s) = t e1 + s e2
    c = integrate_geodesic(flat, [0.0, -1.0], [0.0, 1.0], (-1.0, 1.0), TOL)
    J = integrate_jacobi(flat, [0.0, -1.0], [-1.0, 0.0], [0.0, 1.0], [1.0, 0.0], (-1.0, 1.0), TOL)
    j = punctured_variation(J, 0.0, base_path=c)
    assert j.radius == 1e-2 and j.min_ratio >= 0.5
    for t, s in [(0.3, 0.2), (-0.5, 1.0), (0.0, -0.01)]:
        np.testing.assert_allclose(j(t, s).coords, [0.0, t, t, s], atol=1e-12)
        np.testing.assert_array_equal(j(t, 0.0).coords, J.field(t).coords)
    for s in (-1.0, 0.5):
        slice_J = integrate_jacobi(flat, [0.0, -1.0], [-1.0, s], [0.0, 1.0], [1.0, 0.0], (-1.0, 1.0), TOL)
        assert slice_J.defect() < 10 * TOL
        np.testing.assert_allclose(j.slice(s)(0.4).coords, slice_J.field(0.4).coords, atol=1e-12)


def test_punctured_variation_rejects_nonisolated_zero():
    c = integrate_geodesic(flat, [0.0, 0.0], [0.0, 1.0], (0.0, 1.0), TOL)
    with pytest.raises(NonIsolatedZeroError):
        punctured_variation(zero_jacobi(c), 0.5, base_path=c)


def test_variation_oracle_error_is_second_order_on_twisted_metric():
    # on the steep bump the central difference dominates the gap: with both sides integrated
    # tightly, the gap shrinks 4x per halving of h
    S = geodesic_spray(catalog.twisted_metric())
    x, xdot, J0, Jdot0 = [0.2, -0.3], [0.6, 0.8], [0.8, -0.6], [0.0, 1.0]
    J = integrate_jacobi(S, x, J0, xdot, Jdot0, (0.0, 1.5), 1e-13, chart="N")
    gaps = []
    for h in (2e-4, 1e-4):
        times, states, charts = variation_oracle(S, x, xdot, J0, Jdot0, (0.0, 1.5), h=h, tol=1e-13, chart="N")
        gaps.append(jacobi_vs_oracle(J, times, states, charts))
    assert 3.8 < gaps[0] / gaps[1] < 4.2
    # the field integrated at the default tolerance sits far inside the oracle's truncation error
    coarse = integrate_jacobi(S, x, J0, xdot, Jdot0, (0.0, 1.5), TOL, chart="N")
    assert max(np.max(np.abs(coarse.state(t)[0] - J.state(t)[0])) for t in times) < 1e-2 * gaps[1]

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from descent_lab import catalog
from descent_lab.charts import (BundlePoint, ChartedManifold, Chart, ChartDomain, bundle_add, bundle_scale,
                                change_chart, is_in_T_of_slashed, is_slashed, kappa, liouville, point, project)
from descent_lab.errors import CannotProjectError, ChartError, FiberMismatchError, UnsupportedOrderError
from descent_lab.jets import lift1_coords

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def coords_of(order, n=1):
    return st.lists(finite, min_size=2 ** order * n, max_size=2 ** order * n)


# -- examples ---------------------------------------------------------------------------

def test_kappa_examples():
    assert list(kappa(point((1, 2, 3, 4), 2)).coords) == [1, 3, 2, 4]
    assert list(kappa(kappa(point((1, 2, 3, 4), 2))).coords) == [1, 2, 3, 4]
    assert list(kappa(point(range(1, 9), 3)).coords) == [1, 2, 5, 6, 3, 4, 7, 8]


@pytest.mark.parametrize("order", [0, 1])
def test_kappa_rejects_low_orders(order):
    with pytest.raises(UnsupportedOrderError):
        kappa(point(np.arange(2 ** order, dtype=float), order))


def test_project_examples():
    assert list(project(point((1, 2, 3, 4), 2)).coords) == [1, 2]
    assert list(project(point((1, 2), 1)).coords) == [1]
    # first projection after the swap is the differential of the base projection
    assert list(project(kappa(point((1, 2, 3, 4), 2))).coords) == [1, 3]
    with pytest.raises(CannotProjectError):
        project(point((1.0,), 0))


def test_bundle_add_examples():
    assert list(bundle_add(point((1, 2), 1), point((1, 5), 1)).coords) == [1, 7]
    assert list(bundle_add(point((1, 2), 1), point((1, 0), 1)).coords) == [1, 2]
    assert list(bundle_add(point((1, 2, 3, 4), 2), point((1, 2, 10, 20), 2)).coords) == [1, 2, 13, 24]


def test_bundle_add_fiber_mismatch():
    with pytest.raises(FiberMismatchError):
        bundle_add(point((1, 2), 1), point((1.1, 2), 1))
    # within the absolute base tolerance is accepted
    bundle_add(point((1, 2), 1), point((1 + 1e-13, 2), 1))


def test_bundle_scale_examples():
    assert list(bundle_scale(2, point((1, 3), 1)).coords) == [1, 6]
    assert list(bundle_scale(0, point((1, 3), 1)).coords) == [1, 0]
    assert list(bundle_scale(-1, point((1, 2, 3, 4), 2)).coords) == [1, 2, -3, -4]


def test_slashed_examples():
    assert not is_slashed(point((1, 0), 1))
    p = point((1, 0, 3, 4), 2)
    assert is_slashed(p) and not is_in_T_of_slashed(p)
    q = point((1, 2, 3, 4), 2)
    assert is_slashed(q) and is_in_T_of_slashed(q)


def test_numeric_slashed_keeps_away_from_zero_section():
    p = point((1, 1e-12), 1)
    assert is_slashed(p)
    assert not is_slashed(p, numeric=True)


def test_liouville_examples():
    assert list(liouville(point((1, 2), 1)).coords) == [1, 2, 0, 2]
    assert list(liouville(point((0, 0), 1)).coords) == [0, 0, 0, 0]
    assert list(liouville(point((1, 1, 2, 3), 1, n=2)).coords) == [1, 1, 2, 3, 0, 0, 2, 3]


def test_change_chart_identity_and_sphere():
    M = catalog.sphere()
    p = point((0.3, -0.2, 1.0, 2.0), 1, "N")
    assert np.array_equal(change_chart(M, p, "N").coords, p.coords)
    q = change_chart(M, point((1.0, 0.0), 0, "N"), "S")
    np.testing.assert_allclose(q.coords, [1.0, 0.0], atol=1e-15)


def test_change_chart_lifts_tangent_block():
    line = ChartedManifold("line", 1, {"a": Chart("a", ChartDomain(1)), "b": Chart("b", ChartDomain(1))},
                           {("a", "b"): lambda x: [x[0] ** 3 + x[0]], ("b", "a"): lambda x: [x[0]]})
    q = change_chart(line, point((1.0, 2.0), 1, "a"), "b")
    assert list(q.coords) == [2.0, 8.0]


def test_change_chart_outside_overlap():
    M = catalog.sphere()
    with pytest.raises(ChartError):
        change_chart(M, point((0.1, 0.0), 0, "N"), "S")  # image has |u| = 10


def test_bundle_point_shape_checked():
    with pytest.raises(ValueError):
        BundlePoint(2, "global", np.zeros(6), 2)
    p = point((1, 2), 1)
    with pytest.raises(ValueError):
        p.coords[0] = 5.0


def test_sphere_transitions_compose_to_identity():
    defect = catalog.sphere().check_transitions(np.random.default_rng(0), 100)
    assert defect < 1e-10


def test_equator_gradient_floor():
    assert catalog.equator().check_gradient_floor(np.random.default_rng(0), 200)


# -- properties -------------------------------------------------------------------------

@given(st.sampled_from([2, 3]), st.integers(1, 3), st.data())
def test_kappa_is_an_involution(order, n, data):
    c = data.draw(coords_of(order, n))
    p = point(c, order, n=n)
    assert np.array_equal(kappa(kappa(p)).coords, p.coords)


@settings(max_examples=50)
@given(st.sampled_from([1, 2]), st.data())
def test_projection_after_kappa_is_lifted_projection(r, data):
    n = 2
    p = point(data.draw(coords_of(r + 1, n)), r + 1, n=n)
    a, b = p.halves()
    value, velocity = lift1_coords(lambda c: list(c[: len(c) // 2]), list(a), list(b))
    assert np.array_equal(project(kappa(p)).coords, np.array(value + velocity, dtype=float))


@given(st.integers(1, 2), st.data())
def test_double_projection_ignores_kappa(n, data):
    p = point(data.draw(coords_of(3, n)), 3, n=n)
    assert np.array_equal(project(project(kappa(p))).coords, project(project(p)).coords)


@given(st.integers(1, 2), st.data())
def test_membership_flags_swap_under_kappa(n, data):
    p = point(data.draw(coords_of(2, n)), 2, n=n)
    assert is_slashed(kappa(p)) == is_in_T_of_slashed(p)
    assert is_in_T_of_slashed(kappa(p)) == is_slashed(p)


small = st.floats(-100, 100, allow_nan=False).map(lambda v: round(v, 3))


@given(st.lists(small, min_size=6, max_size=6), small, small)
def test_fiber_vector_space_laws(vals, a, b):
    x = 0.5
    p, q, r = (point((x, v), 1) for v in vals[:3])
    add = lambda u, v: bundle_add(u, v).coords[1]
    assert add(p, q) == add(q, p)
    np.testing.assert_allclose(bundle_add(bundle_add(p, q), r).coords, bundle_add(p, bundle_add(q, r)).coords,
                               rtol=1e-15, atol=1e-13)
    lhs = bundle_scale(a, bundle_add(p, q)).coords[1]
    rhs = bundle_add(bundle_scale(a, p), bundle_scale(a, q)).coords[1]
    assert abs(lhs - rhs) <= 1e-15 * max(abs(lhs), 1.0) * 1e2

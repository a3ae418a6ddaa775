"""Builtin manifolds, metrics, maps and scenarios."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from . import dsl, jets
from .charts import Chart, ChartDomain, ChartedManifold, Hypersurface
from .lifts import SmoothChartMap, tangent_map
from .riemann import MetricField, geodesic_spray
from .sprays import SprayField

TWIST_AMPLITUDE = 0.7
BUMP_INNER = 0.2  # the twist vanishes identically for |z| <= BUMP_INNER
BUMP_OUTER = 0.8  # and is full strength for |z| >= BUMP_OUTER


def exprs(role: str, dim: int, sources) -> Callable:
    """Coordinate function compiled from expr-dsl sources."""
    return dsl.ExprBundle.from_sources(role, dim, sources).as_function()


# -- manifolds ------------------------------------------------------------------

@lru_cache(maxsize=None)
def euclidean(n: int = 2, box: float = 2.0) -> ChartedManifold:
    c = Chart("global", ChartDomain(n), ((-box, box),) * n)
    return ChartedManifold(f"R{n}", n, {"global": c})


@lru_cache(maxsize=None)
def torus() -> ChartedManifold:
    """Flat torus R^2 / (2 pi Z)^2 through its covering chart; every catalog
    map on it commutes with the lattice translations."""
    c = Chart("global", ChartDomain(2), ((0.0, 2 * np.pi),) * 2)
    return ChartedManifold("T2", 2, {"global": c})


INVERSION = {"f1": "x1/(x1^2 + x2^2)", "f2": "x2/(x1^2 + x2^2)"}


@lru_cache(maxsize=None)
def sphere() -> ChartedManifold:
    """Unit sphere with stereographic charts from the north (``N``) and
    south (``S``) poles; both domains are the disc ``|u| < 2``."""
    box = ((-1.6, 1.6), (-1.6, 1.6))
    charts = {cid: Chart(cid, ChartDomain(2, radius=2.0), box) for cid in ("N", "S")}
    inv = exprs("transition", 2, INVERSION)
    return ChartedManifold("S2", 2, charts, {("N", "S"): inv, ("S", "N"): inv})


@lru_cache(maxsize=None)
def half_plane() -> ChartedManifold:
    c = Chart("global", ChartDomain(2, positive=(lambda x: x[1],)), ((-2.0, 2.0), (0.5, 3.0)))
    return ChartedManifold("H2", 2, {"global": c})


def sphere_embed(cid, u):
    """Chart coordinates to points of the unit sphere in R^3."""
    u = np.asarray(u, float)
    r = u[0] ** 2 + u[1] ** 2
    z = (r - 1) / (r + 1) if cid == "N" else (1 - r) / (1 + r)
    return np.array([2 * u[0] / (1 + r), 2 * u[1] / (1 + r), z])


def sphere_chart_of(p3):
    """Embedded points to (chart, coordinates), choosing the chart away from
    its projection pole."""
    p3 = np.asarray(p3, float)
    cid = "S" if p3[2] > 0 else "N"
    denom = 1 - p3[2] if cid == "N" else 1 + p3[2]
    return cid, p3[:2] / denom


# -- metrics ----------------------------------------------------------------------

def flat_metric(manifold) -> MetricField:
    n = manifold.dim
    fn = exprs("metric", n, {f"g{i}{j}": "1" if i == j else "0"
                             for i in range(1, n + 1) for j in range(i, n + 1)})
    return MetricField(manifold, {c: fn for c in manifold.chart_ids}, "flat")


def round_metric(scale: float = 1.0) -> MetricField:
    lam = f"{4 * scale!r}/(1 + x1^2 + x2^2)^2"
    fn = exprs("metric", 2, {"g11": lam, "g12": "0", "g22": lam})
    return MetricField(sphere(), {"N": fn, "S": fn}, "round" if scale == 1.0 else f"{scale:g}*round")


def hyperbolic_metric() -> MetricField:
    fn = exprs("metric", 2, {"g11": "1/(x2^2)", "g12": "0", "g22": "1/(x2^2)"})
    return MetricField(half_plane(), {"global": fn}, "hyperbolic")


# -- twisted caps -------------------------------------------------------------------

def _psi(t):
    """``exp(-1/t)`` for ``t > 0`` and ``0`` otherwise (smooth, flat at 0)."""
    pos = np.asarray(jets.base_value(t)) > 0
    safe = jets.where(pos, t, 1.0)
    return jets.where(pos, jets.exp(jets.div(-1.0, safe)), 0.0)


def smooth_step(w):
    """``0`` for ``w <= BUMP_INNER^2``, ``1`` for ``w >= BUMP_OUTER^2``."""
    a = _psi(w - BUMP_INNER ** 2)
    b = _psi(BUMP_OUTER ** 2 - w)
    return jets.div(a, a + b)


def twist_angle(rho, amplitude: float = TWIST_AMPLITUDE):
    """Rotation angle as a function of ``rho = |u|^2`` (same in both charts,
    since ``z^2 = ((rho - 1) / (rho + 1))^2`` there)."""
    z = jets.div(rho - 1.0, rho + 1.0)
    return amplitude * smooth_step(z * z)


def _twist_angle_and_slope(rho, amplitude):
    tag = jets.new_tag()
    a = twist_angle(jets.Jet(rho, (1.0,), None, tag), amplitude)
    return jets.value(a, tag), jets.derivative(a, tag)


def twist_map(sign: float = 1.0, amplitude: float = TWIST_AMPLITUDE) -> Callable:
    """``u -> R(sign * alpha(|u|^2)) u``; ``sign=-1`` gives the inverse."""
    def fn(u):
        a = sign * twist_angle(u[0] * u[0] + u[1] * u[1], amplitude)
        c, s = jets.cos(a), jets.sin(a)
        return [c * u[0] - s * u[1], s * u[0] + c * u[1]]
    return fn


def twisted_metric(amplitude: float = TWIST_AMPLITUDE) -> MetricField:
    """Push-forward of the round metric under the twist.

    With ``rho = |u|^2``, ``p = (-u2, u1)`` and ``b = 2 alpha'(rho)`` this is
    ``lambda (I - b (u p^T + p u^T) + b^2 rho u u^T)``, ``lambda = 4 / (1 + rho)^2``.
    """
    def fn(u):
        rho = u[0] * u[0] + u[1] * u[1]
        _, slope = _twist_angle_and_slope(rho, amplitude)
        b = 2.0 * slope
        lam = jets.div(4.0, (1.0 + rho) ** 2)
        p = (-u[1], u[0])
        m = [[lam * ((1.0 if i == j else 0.0) - b * (u[i] * p[j] + p[i] * u[j])
                     + b * b * rho * u[i] * u[j]) for j in range(2)] for i in range(2)]
        return m
    return MetricField(sphere(), {"N": fn, "S": fn}, "twisted")


def equator() -> Hypersurface:
    """``Sigma = {z = 0}`` through the height function in each chart."""
    hN = exprs("level", 2, {"h": "(x1^2 + x2^2 - 1)/(x1^2 + x2^2 + 1)"})
    hS = exprs("level", 2, {"h": "(1 - x1^2 - x2^2)/(1 + x1^2 + x2^2)"})
    return Hypersurface(sphere(), {"N": hN, "S": hS}, gradient_floor=0.5, name="equator")


def vertical_line(offset: float = 0.0) -> Hypersurface:
    h = exprs("level", 2, {"h": f"x1 - {offset!r}"})
    return Hypersurface(euclidean(2), {"global": h}, 0.5, "x1=const")


# -- maps ---------------------------------------------------------------------------

def base_map(manifold, fn, name, target=None) -> SmoothChartMap:
    return SmoothChartMap.from_callable(fn, manifold, target, 0, name)


def bundle_map(manifold, fn, name, target=None) -> SmoothChartMap:
    return SmoothChartMap.from_callable(fn, manifold, target, 1, name)


poly_diffeo = exprs("base-map", 2, {"f1": "x1 + x2^2", "f2": "x2 + (x1 + x2^2)^3"})
poly_diffeo_inverse = exprs("base-map", 2, {"f1": "x1 - (x2 - x1^3)^2", "f2": "x2 - x1^3"})
cubic = exprs("base-map", 1, {"f1": "x1^3 + x1"})
identity2 = exprs("base-map", 2, {"f1": "x1", "f2": "x2"})

TORUS_SHIFT = (0.3, 0.7)
torus_shift = exprs("base-map", 2, {"f1": "x1 + 0.3", "f2": "x2 + 0.7"})
torus_unshift = exprs("base-map", 2, {"f1": "x1 - 0.3", "f2": "x2 - 0.7"})
dilate = exprs("base-map", 2, {"f1": "2*x1", "f2": "2*x2"})
contract = exprs("base-map", 2, {"f1": "0.5*x1", "f2": "0.5*x2"})
fiber_doubling = exprs("map", 2, {"F1": "x1", "F2": "x2", "F3": "2*y1", "F4": "2*y2"})
fiber_halving = exprs("map", 2, {"F1": "x1", "F2": "x2", "F3": "0.5*y1", "F4": "0.5*y2"})


def nonlinear_fiber(c):
    """``(x, y) -> (x, y + |y|^2 e1)``: fiber-preserving but not linear."""
    n = len(c) // 2
    y = c[n:]
    sq = sum(v * v for v in y)
    return list(c[:n]) + [y[0] + sq] + list(y[1:])


def fiber_dependent_base(c):
    """``(x, y) -> (x + |y|^2, y)``: the base image depends on the fiber."""
    n = len(c) // 2
    sq = sum(v * v for v in c[n:])
    return [c[0] + sq] + list(c[1:n]) + list(c[n:])


def twist_base_maps(amplitude=TWIST_AMPLITUDE):
    M = sphere()
    fwd = SmoothChartMap(M, M, 0, {"N": twist_map(1.0, amplitude), "S": twist_map(1.0, amplitude)},
                         {"N": "N", "S": "S"}, "twist")
    inv = SmoothChartMap(M, M, 0, {"N": twist_map(-1.0, amplitude), "S": twist_map(-1.0, amplitude)},
                         {"N": "N", "S": "S"}, "untwist")
    return fwd, inv


def base_map_catalog() -> dict:
    """Base maps used by the ``kappa``-commutation property checks."""
    R1, R2 = euclidean(1), euclidean(2)
    return {
        "cubic": base_map(R1, cubic, "cubic"),
        "polynomial-diffeo": base_map(R2, poly_diffeo, "poly"),
        "torus-shift": base_map(torus(), torus_shift, "shift"),
        "dilation": base_map(half_plane(), dilate, "dilate"),
        "twist": twist_base_maps()[0],
    }


# -- scenarios ------------------------------------------------------------------------

SUITES = ("descent", "spray-theorem", "isometry-theorem", "trapping-only")


@dataclass(eq=False)
class Scenario:
    """A fully resolved test setup."""

    name: str
    manifold: ChartedManifold
    suite: str
    expected_exit: int
    F: SmoothChartMap | None = None
    F_inverse: SmoothChartMap | None = None
    spray: SprayField | None = None
    target_spray: SprayField | None = None
    metric: MetricField | None = None
    target_metric: MetricField | None = None
    sigma: Hypersurface | None = None
    anchor: tuple | None = None  # (chart, coords)
    description: str = ""
    pinned: list = field(default_factory=list)  # order-2 coords checked by the criterion


def _descent_scenario(name, M, F, Finv, expected, description, pinned=()):
    return Scenario(name, M, "descent", expected, F=F, F_inverse=Finv,
                    description=description, pinned=list(pinned))


def _euclidean_plane():
    M = euclidean(2)
    F = tangent_map(base_map(M, identity2, "id"))
    return _descent_scenario("euclidean-plane", M, F, F, 0, "identity on flat R^2")


def _flat_torus():
    M = torus()
    F = tangent_map(base_map(M, torus_shift, "shift"))
    Finv = tangent_map(base_map(M, torus_unshift, "unshift"))
    return _descent_scenario("flat-torus", M, F, Finv, 0, "translation of the flat torus")


def _round_sphere():
    g = round_metric()
    S = geodesic_spray(g)
    return Scenario("round-sphere", g.manifold, "trapping-only", 0, spray=S, target_spray=S,
                    metric=g, target_metric=g, sigma=equator(),
                    description="unit sphere, equator as trapping hypersurface")


def _half_plane():
    M = half_plane()
    F = tangent_map(base_map(M, dilate, "dilate"))
    Finv = tangent_map(base_map(M, contract, "contract"))
    return _descent_scenario("poincare-half-plane", M, F, Finv, 0,
                             "dilation x -> 2x of the upper half-plane")


def _twisted_caps():
    g, gt = round_metric(), twisted_metric()
    phi, phinv = twist_base_maps()
    return Scenario("twisted-caps", g.manifold, "isometry-theorem", 0,
                    F=tangent_map(phi), F_inverse=tangent_map(phinv),
                    spray=geodesic_spray(g), target_spray=geodesic_spray(gt),
                    metric=g, target_metric=gt, sigma=equator(), anchor=("N", (1.0, 0.0)),
                    description="sphere with polar caps twisted by a smooth bump, "
                                "identity near the equator")


def _fiber_doubling():
    M = torus()
    return _descent_scenario("fiber-doubling", M, bundle_map(M, fiber_doubling, "double"),
                             bundle_map(M, fiber_halving, "halve"), 1,
                             "F(x, y) = (x, 2y): fiberwise linear but not a derivative",
                             pinned=[(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0)])


def _polynomial_diffeo():
    M = euclidean(2)
    return _descent_scenario("polynomial-diffeo", M, tangent_map(base_map(M, poly_diffeo, "poly")),
                             tangent_map(base_map(M, poly_diffeo_inverse, "poly^-1")), 0,
                             "derivative of a polynomial diffeomorphism of R^2")


def _scaled_metric():
    g, gt = round_metric(), round_metric(4.0)
    M = g.manifold
    F = tangent_map(base_map(M, identity2, "id"))
    return Scenario("scaled-metric", M, "isometry-theorem", 1, F=F, F_inverse=F,
                    spray=geodesic_spray(g), target_spray=geodesic_spray(gt),
                    metric=g, target_metric=gt, sigma=equator(), anchor=("N", (1.0, 0.0)),
                    description="same sphere, target metric 4g: equal sprays, not an isometry")


_BUILDERS = {
    "euclidean-plane": _euclidean_plane,
    "fiber-doubling": _fiber_doubling,
    "flat-torus": _flat_torus,
    "poincare-half-plane": _half_plane,
    "polynomial-diffeo": _polynomial_diffeo,
    "round-sphere": _round_sphere,
    "scaled-metric": _scaled_metric,
    "twisted-caps": _twisted_caps,
}


def catalog() -> list[str]:
    return sorted(_BUILDERS)


@lru_cache(maxsize=None)
def scenario(name: str) -> Scenario:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(catalog())}") from None


def catalog_metrics() -> dict:
    return {"flat-plane": flat_metric(euclidean(2)), "flat-torus": flat_metric(torus()),
            "round-sphere": round_metric(), "hyperbolic": hyperbolic_metric(),
            "twisted": twisted_metric(), "scaled-round": round_metric(4.0)}

"""Sprays, geodesics, complete lifts and Jacobi fields.

A spray on an ``n``-manifold is stored through its coefficients ``G(x, y)``;
the vector field itself is ``S(x, y) = (x, y, y, -2G(x, y))`` and its
integral curves are the velocity curves of geodesics ``x'' + 2G(x, x') = 0``.
Jacobi fields are geodesics of the complete lift ``S^c`` on ``TM``, so the
same integrator handles both.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import jets
from .charts import (BundlePoint, ChartedManifold, best_charts, convert_columns,
                     lift_transition, stack)
from .errors import NonIsolatedZeroError, ZeroVectorError
from .integrate import DenseSolution, integrate

SWITCH_MARGIN = 0.1
DEFAULT_TOL = 1e-10
DEFAULT_HORIZON = 50.0


@dataclass(eq=False)
class SprayField:
    """Chart-wise spray coefficients ``G[cid](x, y) -> list of n values``."""

    manifold: ChartedManifold
    coeffs: Mapping[str, Callable]
    name: str = "S"

    @property
    def dim(self) -> int:
        return self.manifold.dim

    def G(self, cid, x, y):
        return self.coeffs[cid](list(x), list(y))

    def G_array(self, cid, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return stack(self.G(cid, x, np.asarray(y, dtype=float)), x.shape[1:])

    def rhs(self, t, z, charts):
        """Geodesic vector field on stacked states ``z = (x, y)``."""
        n = self.dim
        out = np.empty_like(z)
        out[:n] = z[n:]
        for cid in _unique(charts):
            mask = charts == cid
            out[n:, mask] = -2.0 * self.G_array(cid, z[:n, mask], z[n:, mask])
        return out


def _unique(charts):
    return sorted(set(np.asarray(charts, dtype=object).tolist()))


def spray_vector(S: SprayField, p: BundlePoint) -> BundlePoint:
    """``S(x, y) = (x, y, y, -2G(x, y))`` at a point of ``TM \\ 0``."""
    if p.order != 1:
        raise ValueError("spray_vector needs an order-1 point")
    x, y = p.halves()
    if np.any(np.all(y == 0.0, axis=0)):
        raise ZeroVectorError("sprays are defined on nonzero vectors only")
    g = S.G_array(p.chart, x, y)
    return BundlePoint(2, p.chart, np.concatenate([x, y, y, -2.0 * g]), p.n)


def sample_base(manifold: ChartedManifold, rng, count: int, chart=None):
    """Uniform samples in a chart's sample box, kept inside its domain."""
    cid = chart or manifold.chart_ids[0]
    box = tuple(manifold.chart(cid).sample_box or ())
    box += ((-1.0, 1.0),) * (manifold.dim - len(box))  # fiber coordinates of lifted charts
    picked = np.empty((manifold.dim, 0))
    while picked.shape[1] < count:
        x = np.array([rng.uniform(lo, hi, 2 * count + 4) for lo, hi in box])
        picked = np.concatenate([picked, x[:, manifold.contains(cid, x)]], axis=1)
    return cid, picked[:, :count]


def unit_vectors(rng, dim: int, count: int) -> np.ndarray:
    v = rng.normal(size=(dim, count))
    return v / np.linalg.norm(v, axis=0)


def check_spray_axioms(S: SprayField, rng=None, samples: int = 500,
                       lambdas=(0.5, 2.0, 3.0)) -> dict:
    """Sampled 2-homogeneity defect ``|G(x, ly) - l^2 G(x, y)| / max(1, |l^2 G|)``
    on unit fibers, plus the ``kappa S = S`` structure check."""
    rng = rng if rng is not None else np.random.default_rng(0)
    worst, structure = 0.0, 0.0
    for cid in S.manifold.chart_ids:
        _, x = sample_base(S.manifold, rng, samples, cid)
        y = unit_vectors(rng, S.dim, samples)
        g = S.G_array(cid, x, y)
        for lam in lambdas:
            gl = S.G_array(cid, x, lam * y)
            scale = np.maximum(1.0, np.abs(lam ** 2 * g))
            worst = max(worst, float(np.max(np.abs(gl - lam ** 2 * g) / scale)))
        v = spray_vector(S, BundlePoint(1, cid, np.concatenate([x, y]), S.dim))
        structure = max(structure, float(np.max(np.abs(v.block(2) - v.block(1)))))
    return {"homogeneity_defect": worst, "structure_defect": structure,
            "samples": samples, "lambdas": list(lambdas)}


# -- integration -----------------------------------------------------------

def chart_switcher(manifold: ChartedManifold, order: int, transform=None,
                   threshold: float = SWITCH_MARGIN):
    """Post-step hook moving columns whose chart margin dropped below
    ``threshold`` to the neighbouring chart with the largest margin."""
    if len(manifold.charts) == 1:
        return None

    def switch(z, charts):
        n = manifold.dim
        margin = np.empty(charts.shape)
        for cid in _unique(charts):
            mask = charts == cid
            margin[mask] = manifold.margin(cid, z[:n, mask])
        low = margin < threshold
        if not low.any():
            return z, charts, False
        best, best_margin = best_charts(manifold, z[:, low], charts[low])
        move = np.zeros_like(low)
        move[low] = (best != charts[low]) & (best_margin > margin[low])
        if not move.any():
            return z, charts, False
        target = charts.copy()
        target[low] = best
        z2 = z.copy()
        if transform is None:
            z2[:, move] = convert_columns(manifold, order, z[:, move], charts[move], target[move])
        else:
            z2[:, move] = transform(z[:, move], charts[move], target[move])
        return z2, target, True
    return switch


@dataclass(eq=False)
class GeodesicPath:
    """Dense geodesic ``t -> (x(t), x'(t))`` (possibly a batch of them)."""

    spray: SprayField
    solution: DenseSolution

    @property
    def span(self):
        return self.solution.t0, self.solution.t_end

    @property
    def batch(self) -> int:
        return self.solution.z0.shape[1]

    def state(self, t):
        return self.solution(t)

    def point(self, t, k: int = 0) -> BundlePoint:
        z, charts = self.solution(t)
        return BundlePoint(1, charts[k], z[:, k], self.spray.dim)

    def probes(self, count: int = 50) -> np.ndarray:
        a, b = self.span
        return a + (b - a) * (np.arange(count) + 0.5) / count

    def defect(self, count: int = 50) -> float:
        """Max ``|x'' + 2G(x, x')|`` at interior probe times, from the
        interpolant derivative."""
        n = self.spray.dim
        worst = 0.0
        for t in self.probes(count):
            z, charts = self.solution(t)
            dz, _ = self.solution.derivative(t)
            acc = np.empty((n, z.shape[1]))
            for cid in _unique(charts):
                mask = charts == cid
                acc[:, mask] = dz[n:, mask] + 2.0 * self.spray.G_array(cid, z[:n, mask], z[n:, mask])
            worst = max(worst, float(np.max(np.abs(acc))))
        return worst

    def min_speed(self, count: int = 50) -> float:
        n = self.spray.dim
        return min(float(np.min(np.linalg.norm(self.solution(t)[0][n:], axis=0)))
                   for t in self.probes(count))

    @property
    def stats(self) -> dict:
        s = self.solution
        return {"steps": s.n_steps, "rejected": s.n_rejected, "rtol": s.rtol, "atol": s.atol}


def _as_batch(v):
    v = np.array(v, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def integrate_geodesic(S: SprayField, x0, y0, t_span, tol: float = DEFAULT_TOL,
                       chart=None, on_step=None) -> GeodesicPath:
    x0, y0 = _as_batch(x0), _as_batch(y0)
    if np.any(np.linalg.norm(y0, axis=0) == 0.0):
        raise ZeroVectorError("geodesics need a nonzero initial velocity")
    z0 = np.concatenate([x0, y0])
    charts = _chart_array(S.manifold, chart, z0.shape[1])
    t0, t1 = t_span
    sol = integrate(S.rhs, t0, z0, t1, charts, rtol=tol, atol=tol,
                    switch=chart_switcher(S.manifold, 1), on_step=on_step)
    return GeodesicPath(S, sol)


def _chart_array(manifold, chart, batch):
    if chart is None:
        chart = manifold.chart_ids[0]
    arr = np.asarray(chart, dtype=object)
    if arr.shape == ():
        return np.full(batch, arr.item(), dtype=object)
    return arr.copy()


def geodesic_flow(S: SprayField, t: float, p: BundlePoint, tol: float = DEFAULT_TOL,
                  horizon: float = DEFAULT_HORIZON) -> BundlePoint:
    """``Phi_t(p) = c'(t)`` for the geodesic with ``c'(0) = p``."""
    if abs(t) > horizon:
        raise ValueError(f"|t| = {abs(t)} exceeds the horizon {horizon}")
    x, y = p.halves()
    if t == 0:
        return p
    path = integrate_geodesic(S, x, y, (0.0, t), tol, chart=p.chart)
    z, charts = path.solution.final()
    if p.batched:
        return _common_chart_point(S.manifold, 1, z, charts, p.n)
    return BundlePoint(1, charts[0], z[:, 0], p.n)


def _common_chart_point(manifold, order, z, charts, n):
    target = charts[0]
    return BundlePoint(order, target, convert_columns(manifold, order, z, charts, target), n)


# -- complete lift and Jacobi fields ------------------------------------------

def complete_lift(S: SprayField) -> SprayField:
    """``S^c`` on ``TM`` with ``A = G(x, X)`` and ``B = d/de G(x + e y, X + e Y)``,
    i.e. both coefficient blocks come out of one seeded evaluation."""
    n = S.dim

    def lifted(g):
        def G_c(q, w):
            f = lambda c: g(c[:n], c[n:])
            vals, ders = jets.lift1_coords(f, list(q[:n]) + list(w[:n]),
                                           list(q[n:]) + list(w[n:]))
            return list(vals) + list(ders)
        return G_c
    return SprayField(S.manifold.tangent(), {c: lifted(g) for c, g in S.coeffs.items()},
                      f"{S.name}^c")


@dataclass(eq=False)
class JacobiPath:
    """Jacobi field along a geodesic, as a curve ``t -> (x, J, x', J')`` in
    ``TTM``.  ``state`` and ``rate`` return ``(z, charts)`` for a batch."""

    spray: SprayField
    span: tuple
    state_fn: Callable
    rate_fn: Callable
    solution: DenseSolution | None = None
    lifted: SprayField | None = None

    def __post_init__(self):
        if self.lifted is None:
            self.lifted = complete_lift(self.spray)

    def state(self, t):
        return self.state_fn(t)

    def rate(self, t):
        return self.rate_fn(t)

    @property
    def dim(self) -> int:
        return self.spray.dim

    def field(self, t, k: int = 0) -> BundlePoint:
        """``J(t)`` as a point of ``TM``."""
        z, charts = self.state(t)
        return BundlePoint(1, charts[k], z[: 2 * self.dim, k], self.dim)

    def velocity(self, t, k: int = 0) -> BundlePoint:
        """``J'(t)`` as a point of ``TTM`` in ``(x, J, x', J')`` order."""
        z, charts = self.state(t)
        return BundlePoint(2, charts[k], z[:, k], self.dim)

    def probes(self, count: int = 50) -> np.ndarray:
        a, b = self.span
        return a + (b - a) * (np.arange(count) + 0.5) / count

    def defect(self, count: int = 50) -> float:
        """Max Jacobi-equation defect ``|J'' + 2B|`` (and base ``|x'' + 2A|``)."""
        m = 2 * self.dim
        worst = 0.0
        for t in self.probes(count):
            z, charts = self.state(t)
            dz, _ = self.rate(t)
            acc = np.empty((m, z.shape[1]))
            for cid in _unique(charts):
                mask = charts == cid
                acc[:, mask] = dz[m:, mask] + 2.0 * self.lifted.G_array(cid, z[:m, mask], z[m:, mask])
            worst = max(worst, float(np.max(np.abs(acc))))
        return worst


def _jacobi_from_solution(S, lifted, sol: DenseSolution) -> JacobiPath:
    return JacobiPath(S, (sol.t0, sol.t_end), sol, sol.derivative, sol, lifted)


def integrate_jacobi(S: SprayField, x0, J0, xdot0, Jdot0, t_span, tol: float = DEFAULT_TOL,
                     chart=None, lifted: SprayField | None = None) -> JacobiPath:
    """Jacobi field with ``J(t0) = J0``, ``J'(t0) = Jdot0`` along the geodesic
    through ``(x0, xdot0)``: a geodesic of the complete lift."""
    xdot0 = _as_batch(xdot0)
    if np.any(np.linalg.norm(xdot0, axis=0) == 0.0):
        raise ZeroVectorError("the base geodesic needs a nonzero velocity")
    lifted = lifted or complete_lift(S)
    z0 = np.concatenate([_as_batch(x0), _as_batch(J0), xdot0, _as_batch(Jdot0)])
    charts = _chart_array(S.manifold, chart, z0.shape[1])
    t0, t1 = t_span
    sol = integrate(lifted.rhs, t0, z0, t1, charts, rtol=tol, atol=tol,
                    switch=chart_switcher(lifted.manifold, 1))
    return _jacobi_from_solution(S, lifted, sol)


def zero_jacobi(c: GeodesicPath) -> JacobiPath:
    """The zero Jacobi field ``t -> (x(t), 0)``; exact, no integration."""
    n = c.spray.dim

    def state(t):
        z, charts = c.state(t)
        zero = np.zeros_like(z[:n])
        return np.concatenate([z[:n], zero, z[n:], zero]), charts

    def rate(t):
        dz, charts = c.solution.derivative(t)
        zero = np.zeros_like(dz[:n])
        return np.concatenate([dz[:n], zero, dz[n:], zero]), charts
    return JacobiPath(c.spray, c.span, state, rate)


def tangent_jacobi(c: GeodesicPath) -> JacobiPath:
    """``J = x'`` along ``c``: initial data ``(x, x', x', -2G)``; evaluated from
    the geodesic itself, no separate integration."""
    n = c.spray.dim

    def state(t):
        z, charts = c.state(t)
        dz, _ = c.solution.derivative(t)
        return np.concatenate([z[:n], z[n:], z[n:], dz[n:]]), charts

    def rate(t):
        dz, charts = c.solution.derivative(t)
        acc = _jerk(c, t)
        return np.concatenate([dz[:n], dz[n:], dz[n:], acc]), charts
    return JacobiPath(c.spray, c.span, state, rate)


def _jerk(c: GeodesicPath, t):
    """``d/dt (-2G(x, x'))`` by one seeded evaluation."""
    n = c.spray.dim
    z, charts = c.state(t)
    out = np.empty((n, z.shape[1]))
    for cid in _unique(charts):
        mask = charts == cid
        x, y = z[:n, mask], z[n:, mask]
        acc = -2.0 * c.spray.G_array(cid, x, y)
        f = lambda q: [-2.0 * g for g in c.spray.G(cid, q[:n], q[n:])]
        _, d = jets.lift1_coords(f, list(x) + list(y), list(y) + list(acc))
        out[:, mask] = stack(d, (int(mask.sum()),))
    return out


def variation_oracle(S: SprayField, x0, xdot0, dx0, dxdot0, t_span, h: float = 1e-4,
                     times=None, tol: float = DEFAULT_TOL, chart=None):
    """Central difference in ``s`` of the geodesic family with initial data
    ``(x0 + s dx0, xdot0 + s dxdot0)``, ``s in {-h, 0, +h}``.

    Returns ``(times, states, charts)``, states shaped ``(len(times), 4n)`` in
    ``(x, J, x', J')`` order, expressed in the chart of the ``s = 0`` curve.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    n = S.dim
    x0, xdot0 = np.asarray(x0, float), np.asarray(xdot0, float)
    dx0, dxdot0 = np.asarray(dx0, float), np.asarray(dxdot0, float)
    s = np.array([-h, 0.0, h])
    xs = x0[:, None] + dx0[:, None] * s
    ys = xdot0[:, None] + dxdot0[:, None] * s
    path = integrate_geodesic(S, xs, ys, t_span, tol, chart=chart)
    if times is None:
        times = np.linspace(t_span[0], t_span[1], 41)
    states, out_charts = [], []
    for t in times:
        z, charts = path.state(t)
        z = convert_columns(S.manifold, 1, z, charts, charts[1])
        d = (z[:, 2] - z[:, 0]) / (2 * h)
        states.append(np.concatenate([z[:n, 1], d[:n], z[n:, 1], d[n:]]))
        out_charts.append(charts[1])
    return np.asarray(times), np.array(states), out_charts


def jacobi_vs_oracle(J: JacobiPath, times, states, charts, column: int = 0) -> float:
    """Max deviation of ``(J, J')`` from oracle samples, compared in the
    oracle's charts."""
    n = J.dim
    worst = 0.0
    for t, ref, cid in zip(times, states, charts):
        z, zc = J.state(t)
        z = convert_columns(J.lifted.manifold, 1, z[:, [column]], zc[[column]], cid)[:, 0]
        worst = max(worst, float(np.max(np.abs(z[n:2 * n] - ref[n:2 * n]))),
                    float(np.max(np.abs(z[3 * n:] - ref[3 * n:]))))
    return worst


# -- punctured variations -------------------------------------------------------

@dataclass(eq=False)
class PuncturedVariation:
    """``j(t, s) = J(t) + s K(t)`` around an isolated zero of ``J`` at ``tau``."""

    J: JacobiPath
    K: JacobiPath
    tau: float
    radius: float
    min_ratio: float
    grid: int = field(default=21)

    def __call__(self, t, s) -> BundlePoint:
        j = self.J.field(t)
        k = _field_in_chart(self.K, t, j.chart)
        return j.replace(np.concatenate([j.base, j.halves()[1] + s * k[self.J.dim:]]))

    def slice(self, s) -> Callable:
        return lambda t: self(t, s)


def _field_in_chart(P: JacobiPath, t, chart):
    z, charts = P.state(t)
    n = P.dim
    return convert_columns(P.spray.manifold, 1, z[: 2 * n, [0]], charts[[0]], chart)[:, 0]


def punctured_variation(J: JacobiPath, tau: float, K: JacobiPath | None = None,
                        base_path: GeodesicPath | None = None, radius: float = 1e-2,
                        grid: int = 21, shrink_steps: int = 6) -> PuncturedVariation:
    """Build ``j(t, s) = J(t) + s K(t)`` (``K`` defaults to ``c'``) and check
    that ``(tau, 0)`` is its only zero on a grid around it.

    With ``xi = J'(tau)`` and ``v = K(tau)`` linearly independent, choose an
    auxiliary inner product making them orthonormal; then near ``(tau, 0)``
    ``g(j, j) >= (t^2 + s^2) / 2``.  The radius is halved until this bound
    holds on the whole grid.
    """
    if K is None:
        if base_path is None:
            raise ValueError("give K or the base geodesic")
        K = tangent_jacobi(base_path)
    n = J.dim
    zj, cj = J.state(tau)
    zk, ck = K.state(tau)
    zk = convert_columns(J.lifted.manifold, 1, zk[:, [0]], ck[[0]], cj[0])[:, 0]
    zj = zj[:, 0]
    for t in np.linspace(*_overlap(J.span, K.span), 7):
        a, ac = J.state(t)
        b, bc = K.state(t)
        b = convert_columns(J.lifted.manifold, 1, b[:, [0]], bc[[0]], ac[0])[:, 0]
        if np.max(np.abs(a[:n, 0] - b[:n])) > 1e-6 or np.max(np.abs(a[2 * n:3 * n, 0] - b[2 * n:3 * n])) > 1e-6:
            raise ValueError("J and K must share the base geodesic")
    if np.linalg.norm(zj[n:2 * n]) > 1e-8:
        raise NonIsolatedZeroError(f"J does not vanish at tau={tau}")
    xi, v = zj[3 * n:], zk[n:2 * n]
    basis = np.column_stack([xi, v])
    if np.linalg.norm(xi) < 1e-12 or np.linalg.matrix_rank(basis, tol=1e-9) < 2:
        raise NonIsolatedZeroError("J'(tau) and K(tau) must be linearly independent")
    full = _complete_basis(basis)
    inv = np.linalg.inv(full)
    r = radius
    for _ in range(shrink_steps):
        ratio = _grid_ratio(J, K, tau, r, grid, inv)
        if ratio >= 0.5:
            return PuncturedVariation(J, K, tau, r, ratio, grid)
        r /= 2
    raise NonIsolatedZeroError(f"no radius down to {r:.2e} isolates the zero at tau={tau}")


def _overlap(a, b):
    lo = max(min(a), min(b))
    hi = min(max(a), max(b))
    return lo, hi


def _complete_basis(basis):
    n = basis.shape[0]
    cols = [basis[:, 0], basis[:, 1]]
    for e in np.eye(n):
        trial = np.column_stack(cols + [e])
        if np.linalg.matrix_rank(trial, tol=1e-9) == trial.shape[1]:
            cols.append(e)
        if len(cols) == n:
            break
    return np.column_stack(cols)


def _grid_ratio(J, K, tau, r, grid, inv):
    """Min of ``g_aux(j, j) / (dt^2 + s^2)`` over the grid minus the centre."""
    n = J.dim
    worst = np.inf
    offsets = np.linspace(-r, r, grid)
    lo, hi = J.span
    for dt in offsets:
        t = tau + dt
        if not min(lo, hi) <= t <= max(lo, hi):
            continue
        zj, cj = J.state(t)
        k = _field_in_chart(K, t, cj[0])[n:]
        for s in offsets:
            if dt == 0 and s == 0:
                continue
            j = zj[n:2 * n, 0] + s * k
            w = inv @ j
            worst = min(worst, float(w @ w) / (dt * dt + s * s))
    return worst

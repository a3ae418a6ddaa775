"""Riemannian metrics: Christoffel symbols, geodesic sprays, parallel
transport and isometry defects.

Metric functions take a coordinate list and return an ``n x n`` nested list;
they are evaluated on floats, arrays and jets alike, so the Christoffel
symbols (and everything built on them) stay differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import jets
from .charts import BundlePoint, ChartedManifold, convert_columns, lift_transition, stack
from .errors import SingularMetricError
from .lifts import SmoothChartMap
from .sprays import (DEFAULT_TOL, GeodesicPath, SprayField, _unique, chart_switcher,
                     integrate_geodesic, sample_base, unit_vectors)
from .integrate import integrate


@dataclass(eq=False)
class MetricField:
    manifold: ChartedManifold
    g: Mapping[str, Callable]
    name: str = "g"

    @property
    def dim(self) -> int:
        return self.manifold.dim

    def matrix(self, cid, x):
        return self.g[cid](list(x))

    def array(self, cid, x) -> np.ndarray:
        """``(n, n, batch...)`` array of metric entries at float input."""
        x = np.asarray(x, dtype=float)
        m = self.matrix(cid, x)
        return np.array([[np.broadcast_to(np.asarray(e, float), x.shape[1:]) for e in row]
                         for row in m])


def _inverse(m):
    """Inverse of a small symmetric matrix of scalars/arrays/jets."""
    n = len(m)
    try:
        if n == 1:
            return [[jets.div(1.0, m[0][0])]]
        if n == 2:
            det = m[0][0] * m[1][1] - m[0][1] * m[1][0]
            inv = jets.div(1.0, det)
            return [[m[1][1] * inv, -m[0][1] * inv], [-m[1][0] * inv, m[0][0] * inv]]
        a = [list(row) + [1.0 if i == j else 0.0 for j in range(n)] for i, row in enumerate(m)]
        for i in range(n):
            piv = jets.div(1.0, a[i][i])
            a[i] = [e * piv for e in a[i]]
            for r in range(n):
                if r != i:
                    f = a[r][i]
                    a[r] = [er - f * ei for er, ei in zip(a[r], a[i])]
        return [row[n:] for row in a]
    except ZeroDivisionError as exc:
        raise SingularMetricError(str(exc)) from exc


def _metric_and_partials(metric_fn, x):
    """``g_ij`` and ``dg[k][i][j] = d_k g_ij`` via one ``n``-seed jet."""
    n = len(x)
    tag = jets.new_tag()
    seeded = [jets.Jet(xi, [1.0 if j == i else 0.0 for j in range(n)], None, tag)
              for i, xi in enumerate(x)]
    m = metric_fn(seeded)
    g = [[jets.value(e, tag) for e in row] for row in m]
    dg = [[[jets.derivative(e, tag, k) for e in row] for row in m] for k in range(n)]
    return g, dg


def christoffel(metric: MetricField, cid, x):
    """Levi-Civita symbols ``Gamma[i][a][b]``."""
    n = metric.dim
    g, dg = _metric_and_partials(metric.g[cid], list(x))
    ginv = _check_inverse(g)
    first = [[[0.5 * (dg[a][c][b] + dg[b][c][a] - dg[c][a][b]) for b in range(n)]
              for a in range(n)] for c in range(n)]
    return [[[sum(ginv[i][c] * first[c][a][b] for c in range(n)) for b in range(n)]
             for a in range(n)] for i in range(n)]


def _check_inverse(g):
    try:
        return _inverse(g)
    except Exception as exc:  # DomainError from a zero determinant
        if isinstance(exc, SingularMetricError):
            raise
        raise SingularMetricError(f"metric is singular: {exc}") from exc


def spray_coefficients(metric_fn, n):
    """``G^i = 1/2 Gamma^i_ab y^a y^b`` in the contracted form
    ``1/4 g^il (2 d_a g_lb - d_l g_ab) y^a y^b``."""
    def G(x, y):
        g, dg = _metric_and_partials(metric_fn, list(x))
        ginv = _check_inverse(g)
        # w_l = sum_ab (2 d_a g_lb - d_l g_ab) y^a y^b
        dgy = [[sum(dg[a][l][b] * y[a] for a in range(n)) for b in range(n)] for l in range(n)]
        w = []
        for l in range(n):
            t1 = sum(dgy[l][b] * y[b] for b in range(n))
            t2 = sum(sum(dg[l][a][b] * y[b] for b in range(n)) * y[a] for a in range(n))
            w.append(2.0 * t1 - t2)
        return [0.25 * sum(ginv[i][l] * w[l] for l in range(n)) for i in range(n)]
    return G


def geodesic_spray(metric: MetricField) -> SprayField:
    return SprayField(metric.manifold,
                      {c: spray_coefficients(fn, metric.dim) for c, fn in metric.g.items()},
                      f"spray({metric.name})")


def metric_norm(metric: MetricField, cid, x, y):
    """``g_ij(x) y^i y^j`` (the squared norm)."""
    m = metric.matrix(cid, x)
    n = metric.dim
    return sum(m[i][j] * y[i] * y[j] for i in range(n) for j in range(n))


def check_metric(metric: MetricField, rng=None, samples: int = 500) -> float:
    """Smallest eigenvalue of ``g`` over chart samples."""
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = np.inf
    for cid in metric.manifold.chart_ids:
        _, x = sample_base(metric.manifold, rng, samples, cid)
        m = metric.array(cid, x)
        ev = np.linalg.eigvalsh(np.moveaxis(m, -1, 0))
        worst = min(worst, float(ev.min()))
    return worst


# -- parallel transport ---------------------------------------------------------

def _gamma_contract(metric, cid, x, u, v, gam=None):
    """``Gamma^i_ab(x) u^a v^b`` on float batches."""
    n = metric.dim
    gam = gam if gam is not None else christoffel(metric, cid, list(x))
    out = [sum(gam[i][a][b] * u[a] * v[b] for a in range(n) for b in range(n)) for i in range(n)]
    return stack(out, np.shape(x[0]))


def _vector_transform(manifold, extra_vectors):
    """Chart transform for states ``(x, x', V_1 .. V_k)``: every block after
    the base transforms by the transition Jacobian."""
    n = manifold.dim

    def transform(z, charts, target):
        out = z.copy()
        for a, b in {(a, b) for a, b in zip(charts, target)}:
            mask = (charts == a) & (target == b)
            tau = manifold.transition(a, b)
            x = list(z[:n, mask])
            blocks = []
            for k in range(1 + extra_vectors):
                vals, d = jets.lift1_coords(tau, x, list(z[n * (k + 1):n * (k + 2), mask]))
                if k == 0:
                    blocks.append(vals)
                blocks.append(d)
            out[:, mask] = stack([e for blk in blocks for e in blk], (int(mask.sum()),))
        return out
    return transform


def transport_solution(metric: MetricField, x0, xdot0, V0, charts, t_span, tol=DEFAULT_TOL,
                       spray: SprayField | None = None):
    """Integrate ``(x, x', V)`` with ``V' = -Gamma(x')V`` for a batch.  The
    geodesic part uses ``spray`` when given, else the same Christoffel
    evaluation as the transport (one metric jet per step instead of two)."""
    n = metric.dim

    def rhs(t, z, ch):
        out = np.empty_like(z)
        out[:n] = z[n:2 * n]
        for cid in _unique(ch):
            m = ch == cid
            x, y, v = z[:n, m], z[n:2 * n, m], z[2 * n:, m]
            gam = christoffel(metric, cid, list(x))
            if spray is None:
                out[n:2 * n, m] = -_gamma_contract(metric, cid, list(x), list(y), list(y), gam)
            else:
                out[n:2 * n, m] = -2.0 * spray.G_array(cid, x, y)
            out[2 * n:, m] = -_gamma_contract(metric, cid, list(x), list(y), list(v), gam)
        return out
    z0 = np.concatenate([np.atleast_2d(np.asarray(a, float).T).T for a in (x0, xdot0, V0)])
    ch = np.asarray(charts, dtype=object)
    return integrate(rhs, t_span[0], z0, t_span[1], ch, rtol=tol, atol=tol,
                     switch=chart_switcher(metric.manifold, 1, _vector_transform(metric.manifold, 1)))


def parallel_transport(metric: MetricField, c: GeodesicPath, t_from: float, t_to: float, y,
                       tol: float = DEFAULT_TOL, column: int = 0):
    """``P_{t_from -> t_to}(c)(y)``; ``y`` is given in the chart of
    ``c(t_from)``.  Returns ``(V, chart)`` at ``t_to``."""
    z, charts = c.state(t_from)
    n = metric.dim
    sol = transport_solution(metric, z[:n, [column]], z[n:, [column]],
                             np.asarray(y, float).reshape(n, 1), charts[[column]],
                             (t_from, t_to), tol, c.spray)
    zf, cf = sol.final()
    return zf[2 * n:, 0], cf[0]


def transport_checks(metric: MetricField, rng, count: int = 100, length: float = 2.0,
                     tol: float = DEFAULT_TOL) -> dict:
    """Norm conservation and round trip on ``count`` random geodesics with
    random transported vectors, batched."""
    n = metric.dim
    out = {"norm_defect": 0.0, "round_trip": 0.0, "speed_defect": 0.0}
    cids = metric.manifold.chart_ids
    per = [count // len(cids) + (1 if i < count % len(cids) else 0) for i in range(len(cids))]
    for cid, k in zip(cids, per):
        if k == 0:
            continue
        _, x = sample_base(metric.manifold, rng, k, cid)
        y = unit_vectors(rng, n, k)
        v = unit_vectors(rng, n, k) * rng.uniform(0.5, 2.0, k)
        ch = np.full(k, cid, dtype=object)
        fwd = transport_solution(metric, x, y, v, ch, (0.0, length), tol)
        z1, c1 = fwd.final()
        back = transport_solution(metric, z1[:n], z1[n:2 * n], z1[2 * n:], c1, (length, 0.0), tol)
        z2, c2 = back.final()
        z2 = convert_columns_vec(metric.manifold, z2, c2, ch, 1)
        out["round_trip"] = max(out["round_trip"], float(np.max(np.abs(z2[2 * n:] - v))))
        for t in np.linspace(0, length, 9):
            z, c = fwd(t)
            for cc in _unique(c):
                m = c == cc
                nv = np.asarray(metric_norm(metric, cc, list(z[:n, m]), list(z[2 * n:, m])))
                n0 = np.asarray(metric_norm(metric, cid, list(x[:, m]), list(v[:, m])))
                ny = np.asarray(metric_norm(metric, cc, list(z[:n, m]), list(z[n:2 * n, m])))
                s0 = np.asarray(metric_norm(metric, cid, list(x[:, m]), list(y[:, m])))
                out["norm_defect"] = max(out["norm_defect"], float(np.max(np.abs(nv - n0))))
                out["speed_defect"] = max(out["speed_defect"], float(np.max(np.abs(ny - s0))))
    return out


def convert_columns_vec(manifold, z, charts, target, extra_vectors):
    tf = _vector_transform(manifold, extra_vectors)
    target = np.broadcast_to(np.asarray(target, dtype=object), np.shape(charts))
    if np.all(np.asarray(charts) == target):
        return z
    return tf(z, np.asarray(charts, dtype=object), np.asarray(target, dtype=object))


def parallel_commute_defect(phi: SmoothChartMap, metric: MetricField, target: MetricField,
                            x0, xdot0, vectors, t_span, tol: float = DEFAULT_TOL, chart=None) -> float:
    """Max ``|Dphi(P(c) y) - P~(phi o c)(Dphi y)|`` at the end of ``t_span``
    for the geodesic through ``(x0, xdot0)`` and each column of ``vectors``.

    ``Dphi`` maps velocities of ``c`` to velocities of ``phi o c``, so the
    target transport is integrated alongside with
    ``V~' = -Gamma~(phi(x))(Dphi x', V~)``.
    """
    n = metric.dim
    vectors = np.atleast_2d(np.asarray(vectors, float).T).T
    k = vectors.shape[1]
    cid = chart or metric.manifold.chart_ids[0]
    x0 = np.repeat(np.asarray(x0, float).reshape(n, 1), k, axis=1)
    xdot0 = np.repeat(np.asarray(xdot0, float).reshape(n, 1), k, axis=1)
    spray = geodesic_spray(metric)
    src_tf = _vector_transform(metric.manifold, 1)

    def dphi(c, x, v):
        vals, d = jets.lift1_coords(phi.chart_fn(c), list(x), list(v))
        return stack(vals, x.shape[1:]), stack(d, x.shape[1:])

    def rhs(t, z, ch):
        out = np.empty_like(z)
        out[:n] = z[n:2 * n]
        for c in _unique(ch):
            m = ch == c
            x, y, v, w = z[:n, m], z[n:2 * n, m], z[2 * n:3 * n, m], z[3 * n:, m]
            out[n:2 * n, m] = -2.0 * spray.G_array(c, x, y)
            out[2 * n:3 * n, m] = -_gamma_contract(metric, c, list(x), list(y), list(v))
            px, py = dphi(c, x, y)
            out[3 * n:, m] = -_gamma_contract(target, phi.image_chart(c), list(px), list(py), list(w))
        return out

    def transform(z, ch, tgt):
        out = z.copy()
        out[:3 * n] = src_tf(z[:3 * n], ch, tgt)
        for a, b in {(a, b) for a, b in zip(ch, tgt)}:
            m = (ch == a) & (tgt == b)
            ia, ib = phi.image_chart(a), phi.image_chart(b)
            if ia != ib:
                px, _ = dphi(a, z[:n, m], z[n:2 * n, m])
                _, d = jets.lift1_coords(target.manifold.transition(ia, ib), list(px), list(z[3 * n:, m]))
                out[3 * n:, m] = stack(d, (int(m.sum()),))
        return out

    _, w0 = dphi(cid, x0, vectors)
    z0 = np.concatenate([x0, xdot0, vectors, w0])
    ch0 = np.full(k, cid, dtype=object)
    sol = integrate(rhs, t_span[0], z0, t_span[1], ch0, rtol=tol, atol=tol,
                    switch=chart_switcher(metric.manifold, 1, transform))
    z, ch = sol.final()
    worst = 0.0
    for c in _unique(ch):
        m = ch == c
        _, img = dphi(c, z[:n, m], z[2 * n:3 * n, m])
        worst = max(worst, float(np.max(np.abs(img - z[3 * n:, m]))))
    return worst


# -- isometries -------------------------------------------------------------------

def isometry_defect(F: SmoothChartMap, metric: MetricField, target: MetricField,
                    points: BundlePoint) -> float:
    """Max ``|g(y, y) - g~(F(y), F(y))|`` over a batch of ``TM`` points."""
    n = metric.dim
    x, y = points.halves()
    img = F(points)
    fx, fy = img.halves()
    a = np.asarray(metric_norm(metric, points.chart, list(x), list(y)))
    b = np.asarray(metric_norm(target, img.chart, list(fx), list(fy)))
    return float(np.max(np.abs(a - b)))


def unit_fiber(metric: MetricField, cid, x, rng, count: int) -> BundlePoint:
    """``count`` g-unit vectors over the single base point ``x``."""
    n = metric.dim
    xs = np.repeat(np.asarray(x, float).reshape(n, 1), count, axis=1)
    y = unit_vectors(rng, n, count)
    y = y / np.sqrt(np.asarray(metric_norm(metric, cid, list(xs), list(y))))
    return BundlePoint(1, cid, np.concatenate([xs, y]), n)


def isometry_propagation_probe(F: SmoothChartMap, metric: MetricField, target: MetricField,
                               anchor, directions, lengths, rng, fiber_samples: int = 16,
                               chart=None, tol: float = DEFAULT_TOL) -> dict:
    """Fiber isometry defect at ``anchor`` and at the endpoints of geodesics
    leaving it along ``directions`` for the given ``lengths``."""
    n = metric.dim
    cid = chart or metric.manifold.chart_ids[0]
    anchor = np.asarray(anchor, float)
    base_defect = isometry_defect(F, metric, target, unit_fiber(metric, cid, anchor, rng, fiber_samples))
    directions = np.atleast_2d(np.asarray(directions, float).T).T
    spray = geodesic_spray(metric)
    probes = []
    for L in lengths:
        k = directions.shape[1]
        path = integrate_geodesic(spray, np.repeat(anchor.reshape(n, 1), k, axis=1), directions,
                                  (0.0, L), tol, chart=cid)
        z, ch = path.solution.final()
        for j in range(k):
            pts = unit_fiber(metric, ch[j], z[:n, j], rng, fiber_samples)
            probes.append({"length": float(L), "direction": j, "chart": ch[j],
                           "defect": isometry_defect(F, metric, target, pts)})
    return {"anchor_defect": base_defect, "probes": probes,
            "max_probe_defect": max((p["defect"] for p in probes), default=0.0)}

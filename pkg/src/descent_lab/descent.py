"""Does a map ``F: TM \\ 0 -> TM~ \\ 0`` come from a base map?

The criterion compares ``DF`` with its conjugate ``kappa~ DF kappa`` on
``TTM \\ 0 ∩ T(TM \\ 0)``; when they agree, ``phi(p) = pi~ F(xi)`` for any
nonzero ``xi`` over ``p`` is a well defined base map with ``F = Dphi``.
The remaining checks probe how ``F`` interacts with sprays: integral
curves, geodesic flows, Jacobi fields, and boundary data on a trapping
hypersurface.  Suites combine them into a single report.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import jets
from .charts import (BundlePoint, Hypersurface, convert_columns, is_in_T_of_slashed,
                     is_slashed, kappa, stack)
from .errors import ContinuationError, NonIsolatedZeroError, ZeroVectorError
from .integrate import integrate
from .lifts import SmoothChartMap, lift1, lift2, tangent_map
from .riemann import MetricField, isometry_defect, isometry_propagation_probe, metric_norm, unit_fiber
from .sprays import (DEFAULT_HORIZON, DEFAULT_TOL, JacobiPath, SprayField, _unique,
                     check_spray_axioms, complete_lift, integrate_geodesic, integrate_jacobi,
                     sample_base, tangent_jacobi, unit_vectors)

NORM_RANGE = (0.1, 10.0)


# -- samplers -------------------------------------------------------------------

def _log_uniform_vectors(rng, dim, count, lo, hi):
    return unit_vectors(rng, dim, count) * np.exp(rng.uniform(np.log(lo), np.log(hi), count))


def _split(manifold, count):
    cids = manifold.chart_ids
    return [(c, count // len(cids) + (1 if i < count % len(cids) else 0)) for i, c in enumerate(cids)]


def sample_tm(manifold, rng, count, norms=NORM_RANGE):
    """Points of ``TM \\ 0`` per chart: list of order-1 BundlePoint batches."""
    out = []
    for cid, k in _split(manifold, count):
        if k:
            _, x = sample_base(manifold, rng, k, cid)
            y = _log_uniform_vectors(rng, manifold.dim, k, *norms)
            out.append(BundlePoint(1, cid, np.concatenate([x, y]), manifold.dim))
    return out


def sample_ttm(manifold, rng, count, norms=NORM_RANGE):
    """Points of ``TTM \\ 0 ∩ T(TM \\ 0)``: base uniform in the chart box,
    the ``y``, ``X`` and ``Y`` blocks with log-uniform norms."""
    out = []
    n = manifold.dim
    for cid, k in _split(manifold, count):
        if k:
            _, x = sample_base(manifold, rng, k, cid)
            blocks = [_log_uniform_vectors(rng, n, k, *norms) for _ in range(3)]
            out.append(BundlePoint(2, cid, np.concatenate([x] + blocks), n))
    return out


# -- descent criterion ------------------------------------------------------------

def criterion_residual(F: SmoothChartMap, xi: BundlePoint, normalized: bool = True):
    """``|DF(xi) - kappa~ DF kappa(xi)|``, divided by ``1 + |DF(xi)|`` when
    ``normalized``.  Works on batches."""
    if not (np.all(is_slashed(xi)) and np.all(is_in_T_of_slashed(xi))):
        raise ZeroVectorError("the criterion lives on TTM\\0 ∩ T(TM\\0): need y != 0 and X != 0")
    a = lift1(F, xi).coords
    b = kappa(lift1(F, kappa(xi))).coords
    raw = np.linalg.norm(a - b, axis=0)
    if not normalized:
        return raw
    return raw / (1.0 + np.linalg.norm(a, axis=0))


def test_descent(F: SmoothChartMap, samples: int = 1000, seed: int = 0, tol: float = 1e-8,
                 pinned=()) -> dict:
    """Sampled criterion: verdict ``pass`` iff the max normalized residual is
    below ``tol``; ``inconclusive`` for an empty sample."""
    rng = np.random.default_rng(seed)
    res, raw = [], []
    for xi in sample_ttm(F.source, rng, samples):
        res.append(criterion_residual(F, xi))
        raw.append(criterion_residual(F, xi, normalized=False))
    pins = []
    for coords in pinned:
        p = BundlePoint(2, F.source.chart_ids[0], np.asarray(coords, float), F.source.dim)
        pins.append({"point": list(map(float, coords)), "residual": float(criterion_residual(F, p)),
                     "raw": float(criterion_residual(F, p, normalized=False))})
    if not res:
        return {"count": 0, "max": None, "mean": None, "raw_max": None, "tol": tol,
                "seed": seed, "verdict": "inconclusive", "pinned": pins}
    res, raw = np.concatenate(res), np.concatenate(raw)
    worst = float(res.max())
    return {"count": int(res.size), "max": worst, "mean": float(res.mean()),
            "raw_max": float(raw.max()), "tol": tol, "seed": seed,
            "verdict": "pass" if worst < tol else "fail", "pinned": pins}


# -- reconstruction -----------------------------------------------------------------

test_descent.__test__ = False  # keep pytest from collecting it when imported


@dataclass(eq=False)
class ReconstructedMap:
    """``phi(p) = pi~ F(p, xi)`` with a fixed fiber policy ``xi``."""

    F: SmoothChartMap
    phi: SmoothChartMap
    fiber: tuple
    constancy_defect: float
    audited_points: int
    diagnostics: list = field(default_factory=list)

    def __call__(self, p: BundlePoint) -> BundlePoint:
        return self.phi(p)


def _base_of_F(F: SmoothChartMap, fiber):
    n = F.source.dim

    def make(fn):
        def phi(x):
            return list(fn(list(x) + [float(v) for v in fiber]))[:n]
        return phi
    return SmoothChartMap(F.source, F.target, 0, {c: make(f) for c, f in F.body.items()},
                          dict(F.target_chart), f"pi∘{F.name}")


def reconstruct_phi(F: SmoothChartMap, samples: int = 200, directions: int = 8, seed: int = 0,
                    fiber=None, tol: float = 1e-8, norms=(0.1, 1.0)) -> ReconstructedMap:
    """Reconstruct the base map and audit fiber constancy over ``directions``
    random fiber vectors (norms in ``norms``) at each sampled point."""
    n = F.source.dim
    fiber = tuple(fiber) if fiber is not None else (1.0,) + (0.0,) * (n - 1)
    phi = _base_of_F(F, fiber)
    rng = np.random.default_rng(seed)
    worst, diagnostics, audited = 0.0, [], 0
    for cid, k in _split(F.source, samples):
        if not k:
            continue
        _, x = sample_base(F.source, rng, k, cid)
        ref = phi(BundlePoint(0, cid, x, n)).coords
        for _ in range(directions):
            y = unit_vectors(rng, n, k) * rng.uniform(*norms, k)
            img = F(BundlePoint(1, cid, np.concatenate([x, y]), n)).coords[:n]
            d = np.max(np.abs(img - ref), axis=0)
            worst = max(worst, float(d.max()))
            for j in np.flatnonzero(d > tol)[:3]:
                diagnostics.append(f"does not descend at {x[:, j].tolist()} (chart {cid}): "
                                   f"base image varies by {d[j]:.3g}")
        audited += k
    return ReconstructedMap(F, phi, fiber, worst, audited, diagnostics[:10])


def verify_reconstruction(F: SmoothChartMap, phi: ReconstructedMap | SmoothChartMap,
                          samples: int = 200, seed: int = 1) -> float:
    """Max ``|F(xi) - Dphi(xi)|`` over sampled ``xi`` in ``TM \\ 0``."""
    base = phi.phi if isinstance(phi, ReconstructedMap) else phi
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in sample_tm(F.source, rng, samples):
        worst = max(worst, float(np.max(np.abs(F(p).coords - lift1(base, p).coords))))
    return worst


def inverse_composition_defect(F: SmoothChartMap, F_inverse: SmoothChartMap, samples: int = 200,
                               seed: int = 2) -> float:
    """``psi(phi(p)) - p`` for the reconstructions of ``F`` and ``F^-1``."""
    phi = reconstruct_phi(F, samples=0).phi
    psi = reconstruct_phi(F_inverse, samples=0).phi
    rng = np.random.default_rng(seed)
    worst = 0.0
    for cid, k in _split(F.source, samples):
        if k:
            _, x = sample_base(F.source, rng, k, cid)
            p = BundlePoint(0, cid, x, F.source.dim)
            q = psi(phi(p))
            back = convert_columns(F.source, 0, q.coords, np.full(k, q.chart, object), cid)
            worst = max(worst, float(np.max(np.abs(back - x))))
    return worst


# -- sprays and F ---------------------------------------------------------------------

def _spray_vec(S: SprayField, p: BundlePoint) -> np.ndarray:
    x, y = p.halves()
    return np.concatenate([x, y, y, -2.0 * S.G_array(p.chart, x, y)])


def integral_preservation_defect(F: SmoothChartMap, S: SprayField, St: SprayField,
                                 samples: int = 200, seed: int = 3, norms=NORM_RANGE) -> float:
    """Max ``|S~(F(p)) - DF(S(p))|``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in sample_tm(F.source, rng, samples, norms):
        lhs = _spray_vec(St, F(p))
        rhs = lift1(F, BundlePoint(2, p.chart, _spray_vec(S, p), p.n)).coords
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def flow_commutation_defect(F: SmoothChartMap, S: SprayField, St: SprayField, t: float,
                            samples: int = 50, seed: int = 4, tol: float = DEFAULT_TOL,
                            horizon: float = DEFAULT_HORIZON, norms=(0.5, 1.5)) -> float:
    """Max ``|Phi~_t(F(p)) - F(Phi_t(p))|``, both flows integrated."""
    if abs(t) > horizon:
        raise ValueError(f"|t| = {abs(t)} exceeds the horizon {horizon}")
    rng = np.random.default_rng(seed)
    n = S.dim
    worst = 0.0
    for p in sample_tm(F.source, rng, samples, norms):
        k = p.coords.shape[1]
        a = integrate_geodesic(S, p.coords[:n], p.coords[n:], (0.0, t), tol, chart=p.chart)
        za, ca = a.solution.final()
        Fp = F(p)
        b = integrate_geodesic(St, Fp.coords[:n], Fp.coords[n:], (0.0, t), tol, chart=Fp.chart)
        zb, cb = b.solution.final()
        img = np.empty_like(za)
        img_charts = np.empty(k, dtype=object)
        for cid in _unique(ca):
            m = ca == cid
            q = F(BundlePoint(1, cid, za[:, m], n))
            img[:, m], img_charts[m] = q.coords, q.chart
        zb = convert_columns(St.manifold, 1, zb, cb, img_charts)
        worst = max(worst, float(np.max(np.abs(zb - img))))
    return worst


# -- Jacobi fields and F --------------------------------------------------------------

def _image_curve_defect(F: SmoothChartMap, St_c: SprayField, z, charts, lifted: SprayField):
    """Jacobi defect of ``t -> F(J(t))`` at states ``z = J'(t)`` of an
    ``S``-Jacobi field: with ``J'' = S^c(J')`` the image has velocity
    ``DF J'`` and acceleration ``DF J'' + D^2F(J', J')``."""
    m = lifted.dim
    worst = 0.0
    for cid in _unique(charts):
        mk = charts == cid
        q, w = z[:m, mk], z[m:, mk]
        acc = -2.0 * lifted.G_array(cid, q, w)
        v, d1, _, d2 = jets.lift2_coords(F.chart_fn(cid), list(q), list(w), list(w), list(acc))
        k = int(mk.sum())
        Q, W, A = stack(v, (k,)), stack(d1, (k,)), stack(d2, (k,))
        tc = F.image_chart(cid)
        defect = A + 2.0 * St_c.G_array(tc, Q, W)
        worst = max(worst, float(np.max(np.abs(defect))))
    return worst


def jacobi_preservation_check(F: SmoothChartMap, S: SprayField, St: SprayField, trials: dict,
                              tol: float = DEFAULT_TOL, probes: int = 40,
                              zero_floor: float = 1e-6) -> dict:
    """For each trial Jacobi field ``J`` of ``S`` (batched initial data
    ``x, J, xdot, Jdot`` and a time span) measure

    * the ``S~``-Jacobi defect of the image ``F o J`` along ``J``, and
    * its distance to the ``S~``-Jacobi field launched from ``DF(J'(t0))``.

    Trials whose field vanishes on the probe grid are skipped.
    """
    n = S.dim
    span = trials["span"]
    chart = trials.get("chart")
    J = integrate_jacobi(S, trials["x"], trials["J"], trials["xdot"], trials["Jdot"], span, tol, chart)
    lifted = J.lifted
    St_c = complete_lift(St)
    times = np.linspace(span[0], span[1], probes)
    k = np.asarray(trials["x"]).shape[1]
    alive = np.ones(k, dtype=bool)
    for t in times:
        z, _ = J.state(t)
        alive &= np.linalg.norm(z[n:2 * n], axis=0) > zero_floor
    skipped = [int(i) for i in np.flatnonzero(~alive)]
    result = {"trials": k, "skipped": skipped, "image_defect": 0.0, "launch_defect": 0.0,
              "diagnostics": [f"trial {i} skipped: the field vanishes on its span" for i in skipped]}
    if not alive.any():
        return result
    for t in times:
        z, ch = J.state(t)
        result["image_defect"] = max(result["image_defect"],
                                     _image_curve_defect(F, St_c, z[:, alive], ch[alive], lifted))
    # launched comparison
    z0, c0 = J.state(span[0])
    z0, c0 = z0[:, alive], c0[alive]
    data, dc = _lift_F_columns(F, z0, c0, n)
    Jt = integrate_jacobi(St, data[:n], data[n:2 * n], data[2 * n:3 * n], data[3 * n:], span, tol,
                          dc, lifted=St_c)
    for t in times:
        z, ch = J.state(t)
        img, ic = _apply_F_columns(F, z[:2 * n, alive], ch[alive], n)
        zt, ct = Jt.state(t)
        zt = convert_columns(St.manifold, 1, zt[:2 * n], ct, ic)
        result["launch_defect"] = max(result["launch_defect"], float(np.max(np.abs(zt - img))))
    return result


def _apply_F_columns(F, z, charts, n):
    out = np.empty_like(z)
    out_c = np.empty(z.shape[1], dtype=object)
    for cid in _unique(charts):
        m = charts == cid
        q = F(BundlePoint(1, cid, z[:, m], n))
        out[:, m], out_c[m] = q.coords, q.chart
    return out, out_c


def _lift_F_columns(F, z, charts, n):
    out = np.empty_like(z)
    out_c = np.empty(z.shape[1], dtype=object)
    for cid in _unique(charts):
        m = charts == cid
        q = lift1(F, BundlePoint(2, cid, z[:, m], n))
        out[:, m], out_c[m] = q.coords, q.chart
    return out, out_c


def conjugated_map(F: SmoothChartMap) -> Callable:
    """Coordinate function of ``Psi = kappa~ DF kappa`` on ``TTM``."""
    def make(fn):
        def psi(c):
            h = len(c) // 4
            x, y, X, Y = c[:h], c[h:2 * h], c[2 * h:3 * h], c[3 * h:]
            v, d = jets.lift1_coords(fn, list(x) + list(X), list(y) + list(Y))
            return v[:h] + d[:h] + v[h:] + d[h:]
        return psi
    return {c: make(f) for c, f in F.body.items()}


def kappa_conjugated_jacobi(F: SmoothChartMap, S: SprayField, St: SprayField, J: JacobiPath,
                            probes: int = 40, tol: float = 1e-5) -> tuple[JacobiPath, dict]:
    """``J~' = kappa~ DF kappa (J')`` and its ``S~``-Jacobi defect
    ``|DPsi(S^c(J')) - S~^c(Psi(J'))|`` on a time grid."""
    n = S.dim
    psi = conjugated_map(F)
    lifted = J.lifted
    St_c = complete_lift(St)
    times = np.linspace(J.span[0], J.span[1], probes)
    worst = ode = 0.0  # ode: second-order rows only
    for t in times:
        z, charts = J.state(t)
        for cid in _unique(charts):
            m = charts == cid
            q = z[:, m]
            k = int(m.sum())
            acc = -2.0 * lifted.G_array(cid, q[:2 * n], q[2 * n:])
            vel = np.concatenate([q[2 * n:], acc])
            v, d = jets.lift1_coords(psi[cid], list(q), list(vel))
            V, D = stack(v, (k,)), stack(d, (k,))
            target = np.concatenate([V[2 * n:], -2.0 * St_c.G_array(F.image_chart(cid), V[:2 * n], V[2 * n:])])
            gap = np.abs(D - target)
            worst = max(worst, float(np.max(gap)))
            ode = max(ode, float(np.max(gap[2 * n:])))

    def state(t):
        z, charts = J.state(t)
        out = np.empty_like(z)
        out_c = np.empty(z.shape[1], dtype=object)
        for cid in _unique(charts):
            m = charts == cid
            out[:, m] = stack(psi[cid](list(z[:, m])), (int(m.sum()),))
            out_c[m] = F.image_chart(cid)
        return out, out_c

    def rate(t):
        z, charts = J.state(t)
        dz, _ = J.rate(t)
        out = np.empty_like(z)
        for cid in _unique(charts):
            m = charts == cid
            _, d = jets.lift1_coords(psi[cid], list(z[:, m]), list(dz[:, m]))
            out[:, m] = stack(d, (int(m.sum()),))
        return out, state(t)[1]

    path = JacobiPath(St, J.span, state, rate, lifted=St_c)
    report = {"defect": worst, "ode_defect": ode, "tol": tol, "passed": worst < tol,
              "diagnostics": [] if worst < tol else
              ["conjugated field is not an S~-Jacobi field: F does not preserve integral curves"]}
    return path, report


# -- continuation across zeros -----------------------------------------------------------

@dataclass(eq=False)
class JacobiZeroContinuation:
    tau: float
    times: np.ndarray
    states: np.ndarray  # (len(times), 4n) limiting J~' in ``charts``
    charts: list
    matching_defect: float
    order: float
    h: float
    diagnostics: list = field(default_factory=list)


def extend_across_zero(F: SmoothChartMap, S: SprayField, St: SprayField, J: JacobiPath, tau: float,
                       t_minus: float, span, h: float = 1e-3, times=None, tol: float = DEFAULT_TOL,
                       exclusion: float = 1e-2, order_window=(0.8, 1.2)) -> JacobiZeroContinuation:
    """Continue ``F o J`` across the isolated zero of ``J`` at ``tau``.

    The slices ``j_s = J + s c'`` (``s = ±h, ±h/2``) are Jacobi fields without
    that zero.  Their images, launched as ``S~``-Jacobi fields from
    ``DF(j_s'(t_minus))``, are Richardson-extrapolated to ``s = 0``.  The
    observed order ``log2(|j~_h - j~_-h| / |j~_{h/2} - j~_{-h/2}|)`` must lie
    in ``order_window``.
    """
    from .sprays import punctured_variation

    n = S.dim
    if n < 2:
        raise ValueError("continuation across zeros needs dim M >= 2")
    if J.solution is None:
        raise ValueError("J must be an integrated Jacobi field")
    # isolation check; raises on J == 0 or degenerate data
    base = _base_geodesic(S, J)
    punctured_variation(J, tau, base_path=base)
    if times is None:
        times = np.linspace(span[0], span[1], 41)
    z, ch = J.state(t_minus)
    z, cid = z[:, 0], ch[0]
    acc = -2.0 * S.G_array(cid, z[:n, None], z[2 * n:3 * n, None])[:, 0]
    tangent = np.concatenate([np.zeros(n), z[2 * n:3 * n], np.zeros(n), acc])
    s_values = np.array([-h, -h / 2, h / 2, h])
    slices = z[:, None] + tangent[:, None] * s_values
    data, dc = _lift_F_columns(F, slices, np.full(4, cid, dtype=object), n)
    Jt = integrate_jacobi(St, data[:n], data[n:2 * n], data[2 * n:3 * n], data[3 * n:],
                          (t_minus, span[0]) if span[0] < t_minus else (t_minus, t_minus), tol, dc)
    Jt_fwd = integrate_jacobi(St, data[:n], data[n:2 * n], data[2 * n:3 * n], data[3 * n:],
                              (t_minus, span[1]), tol, dc)
    states, charts, num, den = [], [], 0.0, 0.0
    for t in times:
        path = Jt if t < t_minus else Jt_fwd
        zt, ct = path.state(t)
        zt = convert_columns(path.lifted.manifold, 1, zt, ct, ct[0])
        lim = 0.5 * ((2 * zt[:, 1] - zt[:, 0]) + (2 * zt[:, 2] - zt[:, 3]))
        num = max(num, float(np.linalg.norm(zt[:, 3] - zt[:, 0])))
        den = max(den, float(np.linalg.norm(zt[:, 2] - zt[:, 1])))
        states.append(lim)
        charts.append(ct[0])
    order = float(np.log2(num / den)) if den > 0 and num > 0 else float("nan")
    diagnostics = []
    if not (order_window[0] <= order <= order_window[1]):
        raise ContinuationError(f"extrapolation did not converge: observed order {order:.3g} "
                                f"outside [{order_window[0]}, {order_window[1]}]")
    # matching defect off the zero
    worst = 0.0
    for t, lim, c in zip(times, states, charts):
        if abs(t - tau) < exclusion:
            continue
        zj, cj = J.state(t)
        img, ic = _lift_F_columns(F, zj[:, [0]], cj[[0]], n)
        img = convert_columns(St.manifold.tangent(), 1, img, ic, c)[:, 0]
        worst = max(worst, float(np.max(np.abs(img - lim))))
    return JacobiZeroContinuation(tau, np.asarray(times), np.array(states), charts, worst, order, h,
                                  diagnostics)


def _base_geodesic(S: SprayField, J: JacobiPath):
    n = S.dim
    z0, c0 = J.solution.z0, J.solution.charts0
    return integrate_geodesic(S, z0[:n, [0]], z0[2 * n:3 * n, [0]], J.span, J.solution.rtol, chart=c0[:1])


# -- trapping and boundary data -------------------------------------------------------------

def _level_on(sigma: Hypersurface, z, charts, n):
    out = np.empty(z.shape[1])
    for cid in _unique(charts):
        m = charts == cid
        out[m] = sigma.value(cid, z[:n, m])
    return out


def _first_hits(path, sigma, n, h0, tol_t=1e-10):
    sol = path.solution
    k = h0.shape[0]
    hit = np.full(k, np.nan)
    hit[h0 == 0.0] = 0.0
    prev = h0.copy()
    prev_t = sol.t0
    for step in sol.steps:
        t1 = step.t0 + step.h
        z1 = step.z0 + step.h * step.Q.sum(axis=1)  # step end, before any chart switch
        cur = _level_on(sigma, z1, step.charts, n)
        new = np.isnan(hit) & (np.sign(cur) != np.sign(prev))
        for j in np.flatnonzero(new):
            hit[j] = _bisect(sol, sigma, n, j, prev_t, t1, prev[j], tol_t)
        prev, prev_t = cur, t1
    return hit


def _bisect(sol, sigma, n, j, a, b, fa, tol_t):
    sa = np.sign(fa)
    while abs(b - a) > tol_t:
        mid = 0.5 * (a + b)
        z, c = sol(mid)
        fm = sigma.value(c[j], z[:n, [j]])[0]
        if fm == 0:
            return mid
        if np.sign(fm) == sa:
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def trapping_check(S: SprayField, sigma: Hypersurface, x, y, chart, T_max: float = DEFAULT_HORIZON,
                   tol: float = DEFAULT_TOL) -> dict:
    """First signed hit time of ``h o c`` for each sample (forward and
    backward, whichever is nearer), or ``nan`` for a miss within ``T_max``."""
    n = S.dim
    x, y = np.atleast_2d(np.asarray(x, float).T).T, np.atleast_2d(np.asarray(y, float).T).T
    k = x.shape[1]
    charts = np.full(k, chart, dtype=object) if np.ndim(chart) == 0 else np.asarray(chart, object)
    h0 = _level_on(sigma, np.concatenate([x, y]), charts, n)
    results, errors = {}, []
    for sign in (1.0, -1.0):
        crossed = h0 == 0.0

        def stop(sol, crossed=crossed):
            z, c = sol.final()
            crossed |= np.sign(_level_on(sigma, z, c, n)) != np.sign(h0)
            return bool(crossed.all())
        try:
            path = integrate_geodesic(S, x, y, (0.0, sign * T_max), tol, chart=charts, on_step=stop)
            results[sign] = _first_hits(path, sigma, n, h0)
        except Exception as exc:  # recorded per direction
            errors.append(f"{'forward' if sign > 0 else 'backward'} integration failed: {exc}")
            results[sign] = np.full(k, np.nan)
    fwd, bwd = results[1.0], results[-1.0]
    times = np.where(np.isnan(fwd), bwd, np.where(np.isnan(bwd) | (np.abs(fwd) <= np.abs(bwd)), fwd, bwd))
    hits = ~np.isnan(times)
    return {"samples": k, "hit_times": times.tolist(), "hits": int(hits.sum()),
            "misses": int((~hits).sum()), "max_abs_hit": float(np.nanmax(np.abs(times))) if hits.any() else None,
            "T_max": T_max, "errors": errors}


def sample_sigma(sigma: Hypersurface, rng, count: int):
    """Points of ``Sigma`` by Newton projection; returns ``(chart, x)`` pairs."""
    out = []
    M = sigma.manifold
    for cid, k in _split(M, count):
        got = np.empty((M.dim, 0))
        tries = 0
        while got.shape[1] < k and k:
            _, x = sample_base(M, rng, 2 * k, cid)
            x, ok = sigma.project(cid, x)
            got = np.concatenate([got, x[:, ok]], axis=1)
            tries += 1
            if tries > 20:
                raise RuntimeError(f"could not project samples onto {sigma.name} in chart {cid}")
        if k:
            out.append((cid, got[:, :k]))
    return out


def boundary_condition_check(F: SmoothChartMap, S: SprayField, St: SprayField, sigma: Hypersurface,
                             samples: int = 100, seed: int = 5, norms=NORM_RANGE) -> dict:
    """On ``Sigma``: max ``|S(y) - S~(y)|`` over fibers, and max
    ``|DF(xi) - xi|`` over order-2 points with nonzero ``y`` block."""
    rng = np.random.default_rng(seed)
    n = S.dim
    spray_gap = differential_gap = 0.0
    for cid, x in sample_sigma(sigma, rng, samples):
        k = x.shape[1]
        y = _log_uniform_vectors(rng, n, k, *norms)
        p = BundlePoint(1, cid, np.concatenate([x, y]), n)
        spray_gap = max(spray_gap, float(np.max(np.abs(_spray_vec(S, p) - _spray_vec(St, p)))))
        blocks = [_log_uniform_vectors(rng, n, k, *norms) for _ in range(3)]
        xi = BundlePoint(2, cid, np.concatenate([x] + blocks), n)
        img = lift1(F, xi)
        if img.chart != cid:
            raise ValueError("boundary data must be compared in a common chart")
        differential_gap = max(differential_gap, float(np.max(np.abs(img.coords - xi.coords))))
    return {"spray_defect": spray_gap, "differential_defect": differential_gap, "samples": samples}


# -- suites ------------------------------------------------------------------------------------

DEFAULT_TOLERANCES = {
    "spray_axioms": 1e-9,
    "boundary": 1e-9,
    "jacobi_preservation": 1e-5,
    "criterion": 1e-8,
    "constancy": 1e-8,
    "reconstruction": 1e-6,
    "inverse": 1e-6,
    "integral_preservation": 1e-8,
    "flow_commutation": 1e-5,
    "fiber_isometry": 1e-9,
    "global_isometry": 1e-6,
}


@dataclass
class SuiteConfig:
    samples: int = 1000
    seed: int = 0
    tol: float = DEFAULT_TOL
    horizon: float = DEFAULT_HORIZON
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    jacobi_trials: int = 20
    flow_times: tuple = (0.5, 1.0, 2.0)
    trapping_samples: int = 100
    pinned: tuple = ()


@dataclass
class DescentReport:
    suite: str
    stages: list = field(default_factory=list)
    verdict: str = "inconclusive"
    seed: int = 0
    timing: dict = field(default_factory=dict)

    def add(self, name, role, defect, tolerance, details=None, passed=None):
        ok = (defect is not None and defect < tolerance) if passed is None else passed
        self.stages.append({"stage": name, "role": role,
                            "defect": None if defect is None else float(defect),
                            "tolerance": float(tolerance), "passed": bool(ok),
                            "details": details or {}})
        return ok

    def finish(self):
        hyp = [s for s in self.stages if s["role"] == "hypothesis"]
        con = [s for s in self.stages if s["role"] == "conclusion"]
        if any(s["details"].get("inconclusive") for s in self.stages):
            self.verdict = "inconclusive"
        elif not all(s["passed"] for s in hyp):
            self.verdict = "hypothesis-fail"
            for s in con:
                s["asserted"] = False
        elif not all(s["passed"] for s in con):
            self.verdict = "conclusion-fail"
        else:
            self.verdict = "confirmed"
        return self

    def as_dict(self) -> dict:
        return {"suite": self.suite, "verdict": self.verdict, "seed": self.seed,
                "stages": self.stages}


def _timed(report, name, fn):
    t = time.perf_counter()
    out = fn()
    report.timing[name] = time.perf_counter() - t
    return out


def descent_suite(F: SmoothChartMap, config: SuiteConfig, F_inverse: SmoothChartMap | None = None,
                  report: DescentReport | None = None, role: str = "hypothesis") -> DescentReport:
    """Criterion (``role``), then reconstruction checks (conclusions)."""
    tols = config.tolerances
    report = report or DescentReport("descent", seed=config.seed)
    crit = _timed(report, "criterion", lambda: test_descent(F, config.samples, config.seed,
                                                             tols["criterion"], config.pinned))
    if crit["verdict"] == "inconclusive":
        report.add("criterion", role, None, tols["criterion"], dict(crit, inconclusive=True), False)
        return report.finish()
    report.add("criterion", role, crit["max"], tols["criterion"], crit)
    rec = _timed(report, "reconstruction", lambda: reconstruct_phi(F, min(config.samples, 200),
                                                                     seed=config.seed + 1))
    report.add("fiber_constancy", "conclusion", rec.constancy_defect, tols["constancy"],
               {"diagnostics": rec.diagnostics, "points": rec.audited_points})
    ver = verify_reconstruction(F, rec, min(config.samples, 200), seed=config.seed + 2)
    report.add("reconstruction", "conclusion", ver, tols["reconstruction"])
    if F_inverse is not None:
        inv = inverse_composition_defect(F, F_inverse, min(config.samples, 200), seed=config.seed + 3)
        report.add("inverse_composition", "conclusion", inv, tols["inverse"])
    return report.finish()


def _jacobi_trials(S: SprayField, rng, count: int, span=(0.0, 1.5)):
    """Random Jacobi initial data over the first chart's sample box."""
    M = S.manifold
    cid = M.chart_ids[0]
    _, x = sample_base(M, rng, count, cid)
    xdot = unit_vectors(rng, M.dim, count)
    J = unit_vectors(rng, M.dim, count)
    Jdot = 0.5 * unit_vectors(rng, M.dim, count)
    return {"x": x, "J": J, "xdot": xdot, "Jdot": Jdot, "span": span, "chart": cid}


def spray_descent_suite(F: SmoothChartMap, S: SprayField, St: SprayField, sigma: Hypersurface,
                        config: SuiteConfig, F_inverse=None, report=None) -> DescentReport:
    tols = config.tolerances
    report = report or DescentReport("spray-theorem", seed=config.seed)
    rng = np.random.default_rng(config.seed)
    if config.samples <= 0:
        report.add("sampling", "hypothesis", None, 0.0, {"inconclusive": True}, False)
        return report.finish()
    ax = _timed(report, "spray_axioms", lambda: [check_spray_axioms(S, np.random.default_rng(config.seed), 200),
                                                 check_spray_axioms(St, np.random.default_rng(config.seed), 200)])
    report.add("spray_axioms", "hypothesis",
               max(max(a["homogeneity_defect"], a["structure_defect"]) for a in ax),
               tols["spray_axioms"], {"source": ax[0], "target": ax[1]})
    trap = _timed(report, "trapping", lambda: sample_trapping(S, sigma, rng, config))
    add_trapping_stage(report, trap)
    bc = _timed(report, "boundary", lambda: boundary_condition_check(F, S, St, sigma, 100, config.seed + 5))
    report.add("boundary", "hypothesis", max(bc["spray_defect"], bc["differential_defect"]),
               tols["boundary"], bc)
    trials = _jacobi_trials(S, rng, config.jacobi_trials)
    jp = _timed(report, "jacobi_preservation",
                lambda: jacobi_preservation_check(F, S, St, trials, config.tol))
    report.add("jacobi_preservation", "hypothesis", max(jp["image_defect"], jp["launch_defect"]),
               tols["jacobi_preservation"], jp)
    descent_suite(F, config, F_inverse, report, role="conclusion")
    ip = _timed(report, "integral_preservation",
                lambda: integral_preservation_defect(F, S, St, min(config.samples, 200), config.seed + 6))
    report.add("integral_preservation", "conclusion", ip, tols["integral_preservation"])
    flows = _timed(report, "flow_commutation",
                   lambda: {t: flow_commutation_defect(F, S, St, t, 20, config.seed + 7, config.tol,
                                                       config.horizon) for t in config.flow_times})
    report.add("flow_commutation", "conclusion", max(flows.values()), tols["flow_commutation"],
               {str(t): d for t, d in flows.items()})
    return report.finish()


def add_trapping_stage(report, trap):
    """Defect is the miss fraction; a single miss or failed integration fails."""
    report.add("trapping", "hypothesis", trap["misses"] / max(trap["samples"], 1), 0.0, trap,
               passed=trap["misses"] == 0 and not trap["errors"])


def sample_trapping(S, sigma, rng, config):
    M = S.manifold
    xs, ys, cs = [], [], []
    for cid, k in _split(M, config.trapping_samples):
        if k:
            _, x = sample_base(M, rng, k, cid)
            xs.append(x)
            ys.append(unit_vectors(rng, M.dim, k))
            cs += [cid] * k
    return trapping_check(S, sigma, np.concatenate(xs, axis=1), np.concatenate(ys, axis=1),
                          np.array(cs, dtype=object), config.horizon, config.tol)


def isometry_suite(F: SmoothChartMap, g: MetricField, gt: MetricField, S: SprayField, St: SprayField,
                   sigma: Hypersurface, anchor, config: SuiteConfig, F_inverse=None) -> DescentReport:
    """Spray suite on the geodesic sprays, plus the fiber isometry at the
    anchor (hypothesis) and the global isometry of the reconstructed map."""
    tols = config.tolerances
    report = DescentReport("isometry-theorem", seed=config.seed)
    rng = np.random.default_rng(config.seed + 11)
    cid, x = anchor
    fiber = unit_fiber(g, cid, x, rng, 64)
    report.add("fiber_isometry", "hypothesis", isometry_defect(F, g, gt, fiber), tols["fiber_isometry"],
               {"anchor": [cid, list(map(float, x))], "vectors": 64})
    spray_descent_suite(F, S, St, sigma, config, F_inverse, report)
    if config.samples > 0:
        rec = reconstruct_phi(F, samples=0)
        Dphi = tangent_map(rec.phi)
        n = g.dim
        worst = 0.0
        for cid2, k in _split(g.manifold, min(config.samples, 500)):
            if k:
                _, xs = sample_base(g.manifold, rng, k, cid2)
                y = unit_vectors(rng, n, k)
                y = y / np.sqrt(np.asarray(metric_norm(g, cid2, list(xs), list(y))))
                worst = max(worst, isometry_defect(Dphi, g, gt, BundlePoint(1, cid2, np.concatenate([xs, y]), n)))
        report.add("global_isometry", "conclusion", worst, tols["global_isometry"],
                   {"vectors": min(config.samples, 500)})
    return report.finish()

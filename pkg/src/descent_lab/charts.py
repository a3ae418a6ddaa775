"""Charted manifolds and points of iterated tangent bundles ``T^r M`` (r <= 3).

In canonical coordinates a point of ``T^r M`` is ``2**r`` blocks of ``n``
reals, named ``(x)``, ``(x, y)``, ``(x, y, X, Y)`` and
``(x, y, X, Y, u, v, U, V)``.  ``coords`` may carry a trailing batch axis, in
which case every operation here acts on all columns at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import jets
from .errors import (CannotProjectError, ChartError, FiberMismatchError,
                     UnsupportedOrderError)

FIBER_TOL = 1e-12
NUMERIC_ZERO = 1e-9


@dataclass(frozen=True, eq=False)
class BundlePoint:
    """A point (or a batch of points) of ``T^r M`` in one chart."""

    order: int
    chart: str
    coords: np.ndarray
    n: int = field(default=0)

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if self.order < 0:
            raise UnsupportedOrderError(f"negative order {self.order}")
        blocks = 2 ** self.order
        n = self.n or c.shape[0] // blocks
        if c.shape[0] != blocks * n or n < 1:
            raise ValueError(f"order-{self.order} point needs {blocks} blocks of equal length, "
                             f"got {c.shape[0]} coordinates")
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "n", n)

    @property
    def batched(self) -> bool:
        return self.coords.ndim > 1

    def block(self, i: int) -> np.ndarray:
        return self.coords[i * self.n:(i + 1) * self.n]

    @property
    def base(self) -> np.ndarray:
        return self.coords[: self.n]

    def halves(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.coords.shape[0] // 2
        return self.coords[:h], self.coords[h:]

    def replace(self, coords, order=None, chart=None) -> "BundlePoint":
        return BundlePoint(self.order if order is None else order,
                           self.chart if chart is None else chart, coords, self.n)

    def column(self, k: int) -> "BundlePoint":
        return self.replace(self.coords[:, k])

    def __eq__(self, other):
        return (isinstance(other, BundlePoint) and self.order == other.order
                and self.chart == other.chart and self.n == other.n
                and self.coords.shape == other.coords.shape
                and bool(np.array_equal(self.coords, other.coords)))

    __hash__ = None

    def __repr__(self):
        return f"BundlePoint(order={self.order}, chart={self.chart!r}, coords={self.coords.tolist()})"


def point(coords, order: int | None = None, chart: str = "global", n: int | None = None):
    """Convenience constructor; ``order`` defaults from ``n``."""
    c = np.asarray(coords, dtype=float)
    if order is None:
        if n is None:
            raise ValueError("give order or n")
        order = int(np.log2(c.shape[0] // n))
    return BundlePoint(order, chart, c, n or 0)


_KAPPA_BLOCKS = {2: (0, 2, 1, 3), 3: (0, 1, 4, 5, 2, 3, 6, 7)}


def kappa(p: BundlePoint) -> BundlePoint:
    """Canonical involution on ``T^2 M`` and ``T^3 M``."""
    if p.order not in _KAPPA_BLOCKS:
        raise UnsupportedOrderError(f"kappa is implemented for orders 2 and 3, not {p.order}")
    perm = _KAPPA_BLOCKS[p.order]
    blocks = [p.block(i) for i in perm]
    return p.replace(np.concatenate(blocks, axis=0))


def project(p: BundlePoint) -> BundlePoint:
    """Canonical projection ``T^r M -> T^(r-1) M``: keep the first half."""
    if p.order < 1:
        raise CannotProjectError("cannot project a point of M")
    return p.replace(p.halves()[0], order=p.order - 1)


def _check_fiber(p: BundlePoint, q: BundlePoint):
    if p.order < 1:
        raise CannotProjectError("vector operations need order >= 1")
    if p.order != q.order or p.chart != q.chart or p.n != q.n:
        raise FiberMismatchError("points live on different bundles or charts")
    if p.coords.shape != q.coords.shape:
        raise FiberMismatchError("batch shapes differ")
    if np.any(np.abs(p.halves()[0] - q.halves()[0]) > FIBER_TOL):
        raise FiberMismatchError("points lie in different fibers")


def bundle_add(p: BundlePoint, q: BundlePoint) -> BundlePoint:
    _check_fiber(p, q)
    a, b = p.halves()
    return p.replace(np.concatenate([a, b + q.halves()[1]], axis=0))


def bundle_scale(lam: float, p: BundlePoint) -> BundlePoint:
    if p.order < 1:
        raise CannotProjectError("vector operations need order >= 1")
    a, b = p.halves()
    return p.replace(np.concatenate([a, lam * b], axis=0))


def _nonzero(block: np.ndarray, numeric: bool):
    if numeric:
        return np.linalg.norm(block, axis=0) > NUMERIC_ZERO
    return np.any(block != 0.0, axis=0)


def is_slashed(p: BundlePoint, numeric: bool = False):
    """Membership in ``T^r M \\ 0``: the image under ``D pi_{T^(r-1)M -> M}``
    is a nonzero vector.  That image is ``(x, y)`` for r=1, ``(x, X)`` for
    r=2 and ``(x, u)`` for r=3, i.e. block ``2**(r-1)``."""
    if p.order < 1:
        raise CannotProjectError("slashed bundles start at order 1")
    return _nonzero(p.block(2 ** (p.order - 1)), numeric)


def is_in_T_of_slashed(p: BundlePoint, numeric: bool = False):
    """Membership in ``T(T^(r-1) M \\ 0)`` for r >= 2."""
    if p.order < 2:
        raise UnsupportedOrderError("T(T^(r-1)M \\ 0) needs order >= 2")
    return is_slashed(project(p), numeric)


def liouville(p: BundlePoint) -> BundlePoint:
    """Liouville vector field ``C(x, y) = (x, y, 0, y)``."""
    if p.order < 1:
        raise CannotProjectError("the Liouville field lives on order >= 1")
    a, b = p.halves()
    return BundlePoint(p.order + 1, p.chart, np.concatenate([a, b, np.zeros_like(a), b]), p.n)


# -- charts ---------------------------------------------------------------

@dataclass(frozen=True)
class ChartDomain:
    """Open set ``{|x - center| < radius} ∩ {h_k(x) > 0}`` in R^n.

    ``margin`` is a cheap proxy for the distance to the boundary, used to
    decide when integrators should switch charts.
    """

    dim: int
    radius: float | None = None
    center: tuple | None = None
    positive: tuple = ()  # callables x -> value that must stay > 0

    def _xs(self, x):
        return [np.asarray(x[i], dtype=float) for i in range(self.dim)]

    def margin(self, x):
        xs = self._xs(x)
        m = np.full(np.shape(xs[0]), np.inf)
        if self.radius is not None:
            c = self.center or (0.0,) * self.dim
            r = np.sqrt(sum((xi - ci) ** 2 for xi, ci in zip(xs, c)))
            m = np.minimum(m, self.radius - r)
        for h in self.positive:
            m = np.minimum(m, np.asarray(h(xs), dtype=float))
        return m

    def contains(self, x):
        return self.margin(x) > 0


@dataclass(frozen=True)
class Chart:
    id: str
    domain: ChartDomain
    sample_box: tuple | None = None  # ((lo, hi), ...) used by samplers


@dataclass(eq=False)
class ChartedManifold:
    """Manifold given by charts and coordinate transitions.

    ``transitions[(a, b)]`` maps chart-``a`` coordinates to chart-``b``
    coordinates; it must accept jets so higher bundle blocks can be lifted.
    """

    name: str
    dim: int
    charts: dict
    transitions: dict = field(default_factory=dict)
    base_dim: int = 0  # for tangent manifolds: dimension of the underlying M

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not self.charts:
            raise ValueError("a manifold needs at least one chart")
        if not self.base_dim:
            self.base_dim = self.dim

    @property
    def chart_ids(self) -> list[str]:
        return list(self.charts)

    def chart(self, cid) -> Chart:
        try:
            return self.charts[cid]
        except KeyError:
            raise ChartError(f"unknown chart {cid!r} on {self.name}") from None

    def margin(self, cid, x):
        return self.chart(cid).domain.margin(x)

    def contains(self, cid, x):
        return self.chart(cid).domain.contains(x)

    def neighbours(self, cid) -> list[str]:
        return [b for (a, b) in self.transitions if a == cid]

    def transition(self, a, b) -> Callable:
        if a == b:
            return lambda c: list(c)
        try:
            return self.transitions[(a, b)]
        except KeyError:
            raise ChartError(f"no transition {a!r} -> {b!r} on {self.name}") from None

    def tangent(self) -> "ChartedManifold":
        """The tangent bundle TM as a charted manifold of dimension 2n."""
        n = self.dim

        def lifted(tau):
            def f(c):
                v, d = jets.lift1_coords(tau, c[:n], c[n:2 * n])
                return list(v) + list(d)
            return f
        return ChartedManifold(f"T{self.name}", 2 * n, self.charts,
                               {k: lifted(t) for k, t in self.transitions.items()},
                               base_dim=self.base_dim)

    def check_transitions(self, rng: np.random.Generator, samples: int = 100) -> float:
        """Max round-trip error of stored transition pairs on overlap samples."""
        worst = 0.0
        for (a, b), f in self.transitions.items():
            if (b, a) not in self.transitions:
                continue
            g = self.transitions[(b, a)]
            box = self.chart(a).sample_box or ((-1.0, 1.0),) * self.dim
            got = 0
            while got < samples:
                x = np.array([rng.uniform(lo, hi, 4 * samples) for lo, hi in box])
                y = np.array(f(list(x)))
                ok = self.contains(a, x) & self.contains(b, y)
                if not ok.any():
                    continue
                xs = x[:, ok][:, : samples - got]
                back = np.array(g(list(np.array(f(list(xs))))))
                worst = max(worst, float(np.max(np.abs(back - xs))))
                got += xs.shape[1]
        return worst


def change_chart(manifold: ChartedManifold, p: BundlePoint, target: str) -> BundlePoint:
    """Express ``p`` in chart ``target``; higher blocks transform through the
    iterated tangent lifts of the transition map."""
    if p.chart == target:
        return p
    base_dim = manifold.base_dim
    if not np.all(manifold.contains(target, _base_in_target(manifold, p, target))):
        raise ChartError(f"point is not in the overlap of {p.chart!r} and {target!r}")
    f = lift_transition(manifold.transition(p.chart, target), p.order)
    out = f(list(p.coords))
    return BundlePoint(p.order, target, np.array(_broadcast(out, p.coords.shape[1:])), p.n)


def _base_in_target(manifold, p, target):
    tau = manifold.transition(p.chart, target)
    return np.array(_broadcast(tau(list(p.coords[: manifold.dim])), p.coords.shape[1:]))


def lift_transition(tau: Callable, order: int) -> Callable:
    """``T^order`` of a coordinate map, by repeated first-order lifts."""
    f = tau
    for _ in range(order):
        f = _lift_once(f)
    return f


def _lift_once(f):
    def g(c):
        h = len(c) // 2
        v, d = jets.lift1_coords(f, c[:h], c[h:])
        return list(v) + list(d)
    return g


def _broadcast(values: Sequence, batch_shape) -> list:
    return [np.broadcast_to(np.asarray(v, dtype=float), batch_shape) for v in values]


def stack(values: Sequence, batch_shape=()) -> np.ndarray:
    """Stack a list of components (floats or arrays) into one array."""
    return np.array(_broadcast(values, batch_shape))


# -- hypersurfaces ---------------------------------------------------------

@dataclass(eq=False)
class Hypersurface:
    """``Sigma = {h = 0}`` given chart-wise by a level function."""

    manifold: ChartedManifold
    level: Mapping[str, Callable]  # chart id -> (x list -> value)
    gradient_floor: float = 1e-3
    name: str = "Sigma"

    def value(self, cid, x):
        return np.asarray(self.level[cid](list(x)), dtype=float)

    def gradient(self, cid, x):
        v, g = jets.gradient(self.level[cid], list(x))
        shape = np.shape(np.asarray(x[0]))
        return np.asarray(v, dtype=float), stack(g, shape)

    def project(self, cid, x, tol=1e-10, max_iter=50):
        """Newton steps along the gradient onto ``{h = 0}``; returns the
        projected points and a mask of converged columns."""
        x = np.array(x, dtype=float)
        for _ in range(max_iter):
            h, g = self.gradient(cid, x)
            if np.all(np.abs(h) < tol):
                break
            gg = np.sum(g * g, axis=0)
            x = x - g * (h / np.where(gg > 0, gg, 1.0))
        h = self.value(cid, x)
        return x, (np.abs(h) < tol) & self.manifold.contains(cid, x)

    def check_gradient_floor(self, rng, samples=200) -> float:
        """Smallest gradient norm over projected points of Sigma."""
        worst = np.inf
        for cid in self.level:
            box = self.manifold.chart(cid).sample_box or ((-1.0, 1.0),) * self.manifold.dim
            x = np.array([rng.uniform(lo, hi, samples) for lo, hi in box])
            x, ok = self.project(cid, x)
            x = x[:, ok & (np.abs(self.value(cid, x)) < 1e-6)]
            if x.shape[1]:
                _, g = self.gradient(cid, x)
                worst = min(worst, float(np.min(np.linalg.norm(g, axis=0))))
        return worst


def convert_columns(manifold: ChartedManifold, order: int, z: np.ndarray, charts, target_charts):
    """Re-express each column of ``z`` (order-``order`` bundle coordinates)
    in the matching entry of ``target_charts``."""
    z = np.array(z, dtype=float)
    charts = np.asarray(charts, dtype=object)
    target_charts = np.broadcast_to(np.asarray(target_charts, dtype=object), charts.shape)
    out = z.copy()
    for a, b in {(a, b) for a, b in zip(charts, target_charts) if a != b}:
        mask = (charts == a) & (target_charts == b)
        f = lift_transition(manifold.transition(a, b), order)
        out[:, mask] = stack(f(list(z[:, mask])), (int(mask.sum()),))
    return out


def best_charts(manifold: ChartedManifold, z: np.ndarray, charts):
    """Per column, the chart (among current and neighbours) with the largest
    domain margin at the base point."""
    n = manifold.dim
    charts = np.asarray(charts, dtype=object)
    best = charts.copy()
    best_margin = np.full(charts.shape, -np.inf)
    for a in set(charts):
        mask = charts == a
        xa = z[:n, mask]
        m = manifold.margin(a, xa)
        sel = best_margin[mask]
        cur = best[mask]
        better = m > sel
        cur[better], sel[better] = a, m[better]
        for b in manifold.neighbours(a):
            xb = stack(manifold.transition(a, b)(list(xa)), (xa.shape[1],))
            mb = manifold.margin(b, xb)
            better = mb > sel
            cur[better], sel[better] = b, mb[better]
        best[mask], best_margin[mask] = cur, sel
    return best, best_margin

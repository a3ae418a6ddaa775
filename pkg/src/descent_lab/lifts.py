"""Chart-wise smooth maps and their tangent lifts ``Df`` and ``DDf``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import dsl, jets
from .charts import BundlePoint, ChartedManifold, stack
from .errors import ChartError


@dataclass(eq=False)
class SmoothChartMap:
    """A map ``T^order M -> T^order M~`` given by one coordinate function per
    source chart.  ``target_chart[c]`` names the chart the image lands in.

    Coordinate functions take a list of ``2**order * n`` components (floats,
    arrays or jets) and return the image components.
    """

    source: ChartedManifold
    target: ChartedManifold
    order: int
    body: Mapping[str, Callable]
    target_chart: Mapping[str, str] = field(default_factory=dict)
    name: str = "f"

    def chart_fn(self, cid) -> Callable:
        try:
            return self.body[cid]
        except KeyError:
            raise ChartError(f"{self.name} is not defined on chart {cid!r}") from None

    def image_chart(self, cid) -> str:
        return self.target_chart.get(cid, cid)

    @classmethod
    def from_callable(cls, fn, source, target=None, order=0, name="f"):
        target = target or source
        body = {c: fn for c in source.chart_ids}
        return cls(source, target, order, body, {c: c for c in source.chart_ids}, name)

    @classmethod
    def from_exprs(cls, sources, source, target=None, order=0, chart=None, name="f"):
        """Build from expr-dsl strings, e.g. ``{"f1": "x1 + x2^2", ...}`` for a
        base map or ``{"F1": ..., "F2n": ...}`` for a bundle map."""
        target = target or source
        role = "base-map" if order == 0 else "map"
        fn = dsl.ExprBundle.from_sources(role, source.dim, sources).as_function()
        charts = [chart] if chart else source.chart_ids
        return cls(source, target, order, {c: fn for c in charts}, {c: c for c in charts}, name)

    def __call__(self, p: BundlePoint) -> BundlePoint:
        if p.order != self.order:
            raise ValueError(f"{self.name} acts on order {self.order}, got order {p.order}")
        out = self.chart_fn(p.chart)(list(p.coords))
        return BundlePoint(p.order, self.image_chart(p.chart), stack(out, p.coords.shape[1:]),
                           self.target.base_dim)

    def compose(self, other: "SmoothChartMap") -> "SmoothChartMap":
        """``self ∘ other`` on charts where the composition is tabulated."""
        body, table = {}, {}
        for c, f in other.body.items():
            mid = other.image_chart(c)
            if mid in self.body:
                g = self.body[mid]
                body[c] = (lambda f, g: lambda z: g(list(f(z))))(f, g)
                table[c] = self.image_chart(mid)
        return SmoothChartMap(other.source, self.target, self.order, body, table,
                              f"{self.name}∘{other.name}")


def lift1(f: SmoothChartMap, p: BundlePoint) -> BundlePoint:
    """``Df`` at an order ``r+1`` point, by one first-order seed."""
    if p.order != f.order + 1:
        raise ValueError(f"lift1 of an order-{f.order} map needs an order-{f.order + 1} point")
    base, vel = p.halves()
    v, d = jets.lift1_coords(f.chart_fn(p.chart), list(base), list(vel))
    shape = p.coords.shape[1:]
    return BundlePoint(p.order, f.image_chart(p.chart), stack(list(v) + list(d), shape),
                       f.target.base_dim)


def lift2(f: SmoothChartMap, p: BundlePoint) -> BundlePoint:
    """``DDf`` at an order ``r+2`` point ``(a, b, c, d)`` (blocks of size
    ``2**r n``): ``(f(a), Df b, Df c, Df d + D^2f(b, c))``."""
    if p.order != f.order + 2:
        raise ValueError(f"lift2 of an order-{f.order} map needs an order-{f.order + 2} point")
    q = p.coords.shape[0] // 4
    a, b, c, d = (list(p.coords[i * q:(i + 1) * q]) for i in range(4))
    blocks = jets.lift2_coords(f.chart_fn(p.chart), a, b, c, d)
    flat = [x for blk in blocks for x in blk]
    return BundlePoint(p.order, f.image_chart(p.chart), stack(flat, p.coords.shape[1:]),
                       f.target.base_dim)


def tangent_map(f: SmoothChartMap) -> SmoothChartMap:
    """``Df`` as a SmoothChartMap of one order higher."""
    def lifted(fn):
        def g(c):
            h = len(c) // 2
            v, d = jets.lift1_coords(fn, c[:h], c[h:])
            return list(v) + list(d)
        return g
    return SmoothChartMap(f.source, f.target, f.order + 1,
                          {c: lifted(fn) for c, fn in f.body.items()},
                          dict(f.target_chart), f"D{f.name}")


def fd_oracle(f: SmoothChartMap, p: BundlePoint, h: float = 1e-5) -> BundlePoint:
    """Central-difference stand-in for :func:`lift1`; a test oracle only."""
    if h <= 0:
        raise ValueError("step must be positive")
    base, vel = p.halves()
    fn = f.chart_fn(p.chart)
    plus = np.asarray(fn(list(base + h * vel)), dtype=float)
    minus = np.asarray(fn(list(base - h * vel)), dtype=float)
    value = stack(fn(list(base)), p.coords.shape[1:])
    return BundlePoint(p.order, f.image_chart(p.chart),
                       np.concatenate([value, (plus - minus) / (2 * h)]), f.target.base_dim)

"""Truncated Taylor arithmetic ("jets") for exact forward-mode derivatives.

A :class:`Jet` carries a value together with first derivatives along ``k``
seed directions and, optionally, the symmetric ``k x k`` block of second
mixed derivatives.  Components may be Python floats, numpy arrays (a batch of
independent evaluations) or other jets.  Nested jets are told apart by an
integer ``tag``: when two jets with different tags meet, the one with the
larger tag (the one seeded last) treats the other as a constant.  This is
what makes derivatives of functions that internally differentiate (a
pushforward metric, a complete lift of a spray, ...) come out right.

The elementary functions in this module dispatch on their argument, so the
same code path evaluates plain reals, batches and jets.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError

_tags = itertools.count(1)


def new_tag() -> int:
    return next(_tags)


class Jet:
    """Second-order truncated Taylor value.

    ``v`` is the value, ``d[i]`` the derivative along seed ``i`` and
    ``dd[i][j]`` the mixed second derivative.  ``dd`` is ``None`` for
    first-order jets, which skip all second-order work.
    """

    __slots__ = ("v", "d", "dd", "tag")
    __array_ufunc__ = None  # make ndarray <op> Jet defer to the Jet methods

    def __init__(self, v, d, dd=None, tag=0):
        self.v = v
        self.d = tuple(d)
        self.dd = None if dd is None else tuple(tuple(row) for row in dd)
        self.tag = tag

    @property
    def k(self) -> int:
        return len(self.d)

    def __repr__(self):
        return f"Jet(v={self.v!r}, d={self.d!r}, dd={self.dd!r}, tag={self.tag})"

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return Jet(-self.v, [-x for x in self.d],
                   None if self.dd is None else [[-x for x in row] for row in self.dd],
                   self.tag)

    def __pos__(self):
        return self

    def __pow__(self, n):
        return ipow(self, n)

    # -- chain rule -------------------------------------------------------
    def _unary(self, f0, f1, f2):
        """Compose with a scalar function given its value and two derivatives."""
        v = self.v
        a = f0(v)
        b = f1(v)
        d = [b * x for x in self.d]
        if self.dd is None:
            return Jet(a, d, None, self.tag)
        c = f2(v)
        return Jet(a, d, _sym(self.k, lambda i, j: c * self.d[i] * self.d[j] + b * self.dd[i][j]),
                   self.tag)


def _sym(k, entry):
    rows = [[None] * k for _ in range(k)]
    for i in range(k):
        for j in range(i, k):
            rows[i][j] = rows[j][i] = entry(i, j)
    return rows


def _tag(x) -> int:
    return x.tag if isinstance(x, Jet) else -1


def base_value(x):
    """Innermost value of a possibly nested jet."""
    while isinstance(x, Jet):
        x = x.v
    return x


def derivative(x, tag: int, i: int = 0):
    """Derivative slot ``i`` of ``x`` with respect to seeds carrying ``tag``.

    Values that do not depend on the seeds (plain numbers or jets of another
    tag) have derivative zero.
    """
    if isinstance(x, Jet) and x.tag == tag:
        return x.d[i]
    return 0.0


def second_derivative(x, tag: int, i: int = 0, j: int = 0):
    if isinstance(x, Jet) and x.tag == tag and x.dd is not None:
        return x.dd[i][j]
    return 0.0


def value(x, tag: int):
    if isinstance(x, Jet) and x.tag == tag:
        return x.v
    return x


def add(a, b):
    ta, tb = _tag(a), _tag(b)
    if ta == tb and ta >= 0:
        dd = None
        if a.dd is not None and b.dd is not None:
            dd = [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a.dd, b.dd)]
        return Jet(a.v + b.v, [x + y for x, y in zip(a.d, b.d)], dd, ta)
    if ta > tb:
        return Jet(a.v + b, a.d, a.dd, ta)
    if tb > ta:
        return Jet(a + b.v, b.d, b.dd, tb)
    return a + b


def sub(a, b):
    if isinstance(b, Jet):
        return add(a, -b)
    if isinstance(a, Jet):
        return Jet(a.v - b, a.d, a.dd, a.tag)
    return a - b


def _scale(c, a: Jet) -> Jet:
    return Jet(c * a.v, [c * x for x in a.d],
               None if a.dd is None else [[c * x for x in row] for row in a.dd], a.tag)


def mul(a, b):
    ta, tb = _tag(a), _tag(b)
    if ta == tb and ta >= 0:
        av, bv, ad, bd = a.v, b.v, a.d, b.d
        d = [av * y + x * bv for x, y in zip(ad, bd)]
        dd = None
        if a.dd is not None and b.dd is not None:
            add_, bdd = a.dd, b.dd
            dd = _sym(a.k, lambda i, j: av * bdd[i][j] + ad[i] * bd[j] + ad[j] * bd[i]
                      + add_[i][j] * bv)
        return Jet(av * bv, d, dd, ta)
    if ta > tb:
        return _scale(b, a)
    if tb > ta:
        return _scale(a, b)
    return a * b


def _check_nonzero(b, what="division by zero"):
    base = base_value(b)
    if isinstance(base, float):
        if base == 0.0:
            raise DomainError(what)
    elif np.any(np.asarray(base) == 0):
        raise DomainError(what)


def div(a, b):
    _check_nonzero(b)
    return _div(a, b)


def _div(a, b):
    # the denominator's base value is known to be nonzero here
    ta, tb = _tag(a), _tag(b)
    if tb < ta:
        # b is constant with respect to a's seeds
        return Jet(_div(a.v, b), [_div(x, b) for x in a.d],
                   None if a.dd is None else [[_div(x, b) for x in row] for row in a.dd], ta)
    if tb < 0:
        return a / b
    # quotient rule, value slot computed exactly as in plain arithmetic
    if ta < tb:
        a_v, a_d, a_dd = a, [0.0] * b.k, None
    else:
        a_v, a_d, a_dd = a.v, a.d, a.dd
    bv = b.v
    q = _div(a_v, bv)
    dq = [_div(x - q * y, bv) for x, y in zip(a_d, b.d)]
    dd = None
    if b.dd is not None and (ta < tb or a_dd is not None):
        def entry(i, j):
            num = -dq[i] * b.d[j] - dq[j] * b.d[i] - q * b.dd[i][j]
            if a_dd is not None:
                num = a_dd[i][j] + num
            return _div(num, bv)
        dd = _sym(b.k, entry)
    return Jet(q, dq, dd, tb)


def ipow(x, n: int):
    """Integer power."""
    n = int(n)
    if n == 0:
        return 1.0 if not isinstance(x, Jet) else x * 0.0 + 1.0
    if n == 1:
        return x
    if n == 2:
        return x * x
    if n < 0:
        _check_nonzero(x, "negative power of zero")
    if isinstance(x, Jet):
        return x._unary(lambda v: ipow(v, n), lambda v: n * ipow(v, n - 1),
                        lambda v: n * (n - 1) * ipow(v, n - 2))
    if isinstance(x, np.ndarray):
        return np.power(x.astype(float), n)
    return float(x) ** n


def _is_scalar(x):
    return type(x) is float or type(x) is int


def sqrt(x):
    base = base_value(x)
    if np.any(np.asarray(base) < 0):
        raise DomainError("sqrt of negative number")
    if isinstance(x, Jet):
        if np.any(np.asarray(base) == 0):
            raise DomainError("sqrt is not differentiable at 0")
        return x._unary(sqrt, lambda v: 0.5 / sqrt(v), lambda v: -0.25 / (v * sqrt(v)))
    return math.sqrt(x) if _is_scalar(x) else np.sqrt(x)


def sin(x):
    if isinstance(x, Jet):
        return x._unary(sin, cos, lambda v: -sin(v))
    return math.sin(x) if _is_scalar(x) else np.sin(x)


def cos(x):
    if isinstance(x, Jet):
        return x._unary(cos, lambda v: -sin(v), lambda v: -cos(v))
    return math.cos(x) if _is_scalar(x) else np.cos(x)


def tan(x):
    if isinstance(x, Jet):
        def f1(v):
            t = tan(v)
            return 1.0 + t * t

        def f2(v):
            t = tan(v)
            return 2.0 * t * (1.0 + t * t)
        return x._unary(tan, f1, f2)
    return math.tan(x) if _is_scalar(x) else np.tan(x)


def exp(x):
    if isinstance(x, Jet):
        return x._unary(exp, exp, exp)
    return math.exp(x) if _is_scalar(x) else np.exp(x)


def log(x):
    if np.any(np.asarray(base_value(x)) <= 0):
        raise DomainError("log of nonpositive number")
    if isinstance(x, Jet):
        return x._unary(log, lambda v: 1.0 / v, lambda v: -1.0 / (v * v))
    return math.log(x) if _is_scalar(x) else np.log(x)


def atan2(y, x):
    """Two-argument arctangent with jet support in both arguments."""
    ty, tx = _tag(y), _tag(x)
    if ty < 0 and tx < 0:
        if _is_scalar(y) and _is_scalar(x):
            return math.atan2(y, x)
        return np.arctan2(y, x)
    r2 = base_value(x) ** 2 + base_value(y) ** 2
    if np.any(np.asarray(r2) == 0):
        raise DomainError("atan2 is not differentiable at the origin")
    t = max(ty, tx)
    yv, xv = value(y, t), value(x, t)
    yd = y.d if ty == t else None
    xd = x.d if tx == t else None
    k = (y if ty == t else x).k
    yd = yd or [0.0] * k
    xd = xd or [0.0] * k
    rr = xv * xv + yv * yv
    fy = xv / rr
    fx = -yv / rr
    d = [fy * a + fx * b for a, b in zip(yd, xd)]
    ydd = y.dd if ty == t else None
    xdd = x.dd if tx == t else None
    first_order = (ty == t and ydd is None) or (tx == t and xdd is None)
    if first_order:
        return Jet(atan2(yv, xv), d, None, t)
    # divide twice so tiny radii overflow to inf instead of dividing by an underflowed zero
    fyy = -2.0 * xv * yv / rr / rr
    fxx = 2.0 * xv * yv / rr / rr
    fxy = (yv * yv - xv * xv) / rr / rr

    def entry(i, j):
        e = fyy * yd[i] * yd[j] + fxx * xd[i] * xd[j] + fxy * (yd[i] * xd[j] + xd[i] * yd[j])
        if ydd is not None:
            e = e + fy * ydd[i][j]
        if xdd is not None:
            e = e + fx * xdd[i][j]
        return e
    return Jet(atan2(yv, xv), d, _sym(k, entry), t)


def where(cond, a, b):
    """Componentwise select; ``cond`` must not depend on any seed."""
    if isinstance(a, Jet) or isinstance(b, Jet):
        t = max(_tag(a), _tag(b))
        ja = a if _tag(a) == t else None
        jb = b if _tag(b) == t else None
        ref = ja or jb
        k = ref.k
        av = ja.v if ja else a
        bv = jb.v if jb else b
        ad = ja.d if ja else [0.0] * k
        bd = jb.d if jb else [0.0] * k
        second = (ja is None or ja.dd is not None) and (jb is None or jb.dd is not None)
        dd = None
        if second:
            zero = [[0.0] * k for _ in range(k)]
            add_ = ja.dd if ja else zero
            bdd = jb.dd if jb else zero
            dd = [[where(cond, x, y) for x, y in zip(ra, rb)] for ra, rb in zip(add_, bdd)]
        return Jet(where(cond, av, bv), [where(cond, x, y) for x, y in zip(ad, bd)], dd, t)
    out = np.where(cond, a, b)
    return out[()] if out.ndim == 0 else out


# -- coordinate-level lifts ----------------------------------------------------

CoordMap = Callable[[Sequence], Sequence]


def lift1_coords(f: CoordMap, base: Sequence, vel: Sequence) -> tuple[list, list]:
    """Return ``(f(base), Df(base) . vel)`` using a single first-order seed."""
    tag = new_tag()
    out = f([Jet(b, (v,), None, tag) for b, v in zip(base, vel)])
    return [value(o, tag) for o in out], [derivative(o, tag) for o in out]


def lift2_coords(f: CoordMap, a: Sequence, b: Sequence, c: Sequence, d: Sequence):
    """Second tangent lift ``DDf`` at the order-2 point ``(a, b, c, d)``.

    Returns the four blocks ``(f(a), Df b, Df c, Df d + D^2 f(b, c))``.
    """
    tag = new_tag()
    args = [Jet(ai, (bi, ci), ((0.0, di), (di, 0.0)), tag) for ai, bi, ci, di in zip(a, b, c, d)]
    out = f(args)
    return ([value(o, tag) for o in out],
            [derivative(o, tag, 0) for o in out],
            [derivative(o, tag, 1) for o in out],
            [second_derivative(o, tag, 0, 1) for o in out])


def gradient(f: Callable[[Sequence], object], x: Sequence) -> tuple[object, list]:
    """Value and gradient of a scalar function using one multi-seed jet."""
    tag = new_tag()
    n = len(x)
    args = [Jet(xi, [1.0 if j == i else 0.0 for j in range(n)], None, tag)
            for i, xi in enumerate(x)]
    out = f(args)
    if isinstance(out, Jet) and out.tag == tag:
        return out.v, list(out.d)
    return out, [0.0] * n


def jacobian_columns(f: CoordMap, x: Sequence) -> tuple[list, list[list]]:
    """Values and all first partials ``J[i][a] = d f_i / d x_a``."""
    tag = new_tag()
    n = len(x)
    args = [Jet(xi, [1.0 if j == i else 0.0 for j in range(n)], None, tag)
            for i, xi in enumerate(x)]
    out = f(args)
    vals = [value(o, tag) for o in out]
    jac = [[derivative(o, tag, a) for a in range(n)] for o in out]
    return vals, jac

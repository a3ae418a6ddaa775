"""Adaptive Dormand-Prince 5(4) integration with dense output.

States are arrays of shape ``(dim, batch)``.  All columns share one step
size, but each column carries its own chart id so a batch of curves on a
multi-chart manifold can switch charts independently.  After every accepted
step an optional ``switch`` hook may re-express columns in another chart.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import IntegrationError

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])
# Dense output: y(t0 + th*h) = y0 + h * K^T P [th, th^2, th^3, th^4]
P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0

Rhs = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


# Quintic Hermite refinement through theta = 0, 1/2, 1 (values and slopes);
# the midpoint comes from an extra half step, not from the quartic interpolant.
_NODES = (0.0, 0.5, 1.0)
_HERMITE = np.linalg.inv(np.array(
    [row for th in _NODES for row in ([th ** k for k in range(6)],
                                      [k * th ** (k - 1) if k else 0.0 for k in range(6)])]))


def _half_step(rhs, t, z, f, h, charts):
    """One plain DP5 step (no error control); returns the new state and slope."""
    K = [f]
    for s in range(1, 6):
        K.append(rhs(t + C[s] * h, z + h * sum(a * K[j] for j, a in enumerate(A[s])), charts))
    z_new = z + h * sum(b * k for b, k in zip(B, K))
    return z_new, rhs(t + h, z_new, charts)


@dataclass
class Step:
    t0: float
    h: float
    z0: np.ndarray
    Q: np.ndarray  # (dim, 4, batch)
    charts: np.ndarray
    f0: np.ndarray
    f1: np.ndarray
    coef: np.ndarray | None = None  # (6, dim, batch) once refined

    def refine(self, rhs):
        if self.coef is None:
            z1 = self.z0 + self.h * self.Q.sum(axis=1)
            zm, fm = _half_step(rhs, self.t0, self.z0, self.f0, 0.5 * self.h, self.charts)
            data = np.array([self.z0, self.h * self.f0, zm, self.h * fm, z1, self.h * self.f1])
            self.coef = np.tensordot(_HERMITE, data, axes=1)
        return self.coef


@dataclass
class DenseSolution:
    """Piecewise polynomial interpolant over accepted steps."""

    t0: float
    z0: np.ndarray
    charts0: np.ndarray
    steps: list = field(default_factory=list)
    n_rejected: int = 0
    n_rhs: int = 0
    rtol: float = 0.0
    atol: float = 0.0
    stopped: bool = False
    rhs: Callable | None = None

    @property
    def t_end(self) -> float:
        if not self.steps:
            return self.t0
        s = self.steps[-1]
        return s.t0 + s.h

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    @property
    def direction(self) -> float:
        return 1.0 if not self.steps or self.steps[0].h > 0 else -1.0

    def _locate(self, t: float) -> Step | None:
        if not self.steps:
            if t != self.t0:
                raise ValueError(f"t={t} outside empty solution at {self.t0}")
            return None
        d = self.direction
        lo, hi = sorted((self.t0, self.t_end))
        span = hi - lo
        if not (lo - 1e-12 * max(1.0, span) <= t <= hi + 1e-12 * max(1.0, span)):
            raise ValueError(f"t={t} outside solution span [{lo}, {hi}]")
        starts = np.array([s.t0 for s in self.steps]) * d
        i = int(np.searchsorted(starts, t * d, side="right")) - 1
        return self.steps[min(max(i, 0), len(self.steps) - 1)]

    def __call__(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        s = self._locate(t)
        if s is None:
            return self.z0.copy(), self.charts0.copy()
        th = (t - s.t0) / s.h
        if self.rhs is not None:
            return np.tensordot(th ** np.arange(6), s.refine(self.rhs), axes=1), s.charts
        powers = np.array([th, th ** 2, th ** 3, th ** 4])
        return s.z0 + s.h * np.einsum("dpb,p->db", s.Q, powers), s.charts

    def derivative(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Time derivative of the interpolant (not of the vector field)."""
        s = self._locate(t)
        if s is None:
            raise ValueError("derivative of an empty solution")
        th = (t - s.t0) / s.h
        if self.rhs is not None:
            k = np.arange(6)
            w = np.where(k > 0, k * th ** np.maximum(k - 1, 0), 0.0) / s.h
            return np.tensordot(w, s.refine(self.rhs), axes=1), s.charts
        powers = np.array([1.0, 2 * th, 3 * th ** 2, 4 * th ** 3])
        return np.einsum("dpb,p->db", s.Q, powers), s.charts

    def final(self) -> tuple[np.ndarray, np.ndarray]:
        return self(self.t_end)

    def grid(self) -> np.ndarray:
        """Accepted step boundaries, in integration order."""
        return np.array([self.t0] + [s.t0 + s.h for s in self.steps])


def _error_norm(err, z0, z1, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(z0), np.abs(z1))
    per_sample = np.sqrt(np.mean((err / scale) ** 2, axis=0))
    return float(np.max(per_sample)) if per_sample.size else 0.0


def _initial_step(rhs, t0, z0, charts, f0, direction, rtol, atol):
    scale = atol + np.abs(z0) * rtol
    d0 = np.sqrt(np.mean((z0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    z1 = z0 + h0 * direction * f0
    f1 = rhs(t0 + h0 * direction, z1, charts)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def integrate(rhs: Rhs, t0: float, z0, t1: float, charts0=None, *,
              rtol: float = 1e-10, atol: float = 1e-10, max_step: float = np.inf,
              switch: Callable | None = None, on_step: Callable | None = None,
              max_steps: int = 200_000, refine: bool = True) -> DenseSolution:
    """Integrate ``dz/dt = rhs(t, z, charts)`` from ``t0`` to ``t1``.

    ``switch(z, charts) -> (z, charts, changed)`` runs after every accepted
    step.  ``on_step(solution) -> bool`` may stop the integration early by
    returning True.  Raises :class:`IntegrationError` when the step size
    underflows, which usually signals a finite-time blow-up.

    With ``refine`` the dense output is a quintic Hermite interpolant built
    from the step's end slopes and a lazily evaluated midpoint
    state computed by a half step, which keeps interpolated derivatives at
    the tolerance level.
    """
    z = np.array(z0, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    batch = z.shape[1]
    charts = np.asarray(["global"] * batch if charts0 is None else charts0, dtype=object)
    if charts.shape == ():
        charts = np.full(batch, charts.item(), dtype=object)
    sol = DenseSolution(t0, z.copy(), charts.copy(), rtol=rtol, atol=atol,
                        rhs=rhs if refine else None)
    if t1 == t0:
        return sol
    direction = 1.0 if t1 > t0 else -1.0
    t = t0
    f = rhs(t, z, charts)
    sol.n_rhs += 1
    h = min(_initial_step(rhs, t, z, charts, f, direction, rtol, atol), max_step, abs(t1 - t0))
    sol.n_rhs += 1
    K = np.empty((7,) + z.shape)
    while direction * (t1 - t) > 0:
        if len(sol.steps) >= max_steps:
            raise IntegrationError(f"step budget exhausted at t={t}", t=t)
        min_step = 10 * abs(np.nextafter(t, direction * np.inf) - t)
        h = min(h, abs(t1 - t))
        if h < min_step:
            raise IntegrationError(f"step size underflow at t={t:.6g}; "
                                   "the solution is possibly incomplete", t=t)
        hs = h * direction
        K[0] = f
        for s in range(1, 6):
            dz = sum(a * K[j] for j, a in enumerate(A[s]))
            K[s] = rhs(t + C[s] * hs, z + hs * dz, charts)
        z_new = z + hs * np.tensordot(B, K[:6], axes=1)
        f_new = rhs(t + hs, z_new, charts)
        K[6] = f_new
        sol.n_rhs += 6
        err = hs * np.tensordot(E, K, axes=1)
        norm = _error_norm(err, z, z_new, rtol, atol)
        if not np.isfinite(norm):
            sol.n_rejected += 1
            h *= MIN_FACTOR
            continue
        if norm > 1.0:
            sol.n_rejected += 1
            h *= max(MIN_FACTOR, SAFETY * norm ** (-1 / 5))
            continue
        Q = np.einsum("kdb,kp->dpb", K, P)
        t_new = t + hs if abs(t1 - (t + hs)) > 1e-15 * max(1.0, abs(t1)) else t1
        sol.steps.append(Step(t, t_new - t, z.copy(), Q, charts.copy(), f.copy(), f_new.copy()))
        t, z, f = t_new, z_new, f_new
        factor = MAX_FACTOR if norm == 0 else min(MAX_FACTOR, SAFETY * norm ** (-1 / 5))
        h = min(h * factor, max_step)
        if switch is not None:
            z2, charts2, changed = switch(z, charts)
            if changed:
                z, charts = z2, charts2
                f = rhs(t, z, charts)
                sol.n_rhs += 1
        if on_step is not None and on_step(sol):
            sol.stopped = True
            break
    return sol

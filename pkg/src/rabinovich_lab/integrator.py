"""Adaptive Dormand-Prince 5(4) integration with dense output and section events."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from ._backend import py_func
from .field_core import jacobian_fd

DIVERGENCE_RADIUS = 1e6


class IntegrationError(RuntimeError):
    """The integrator could not complete the requested span.

    ``partial`` holds whatever was accepted before the failure, when known.
    """

    partial = None


class StepBudgetExhausted(IntegrationError):
    pass


class StepUnderflow(IntegrationError):
    pass


class NonFiniteState(IntegrationError):
    pass


class NoCrossing(IntegrationError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    h_init: float = 1e-4
    h_max: float = np.inf
    max_steps: int = 10_000_000

    def __post_init__(self):
        if not 0 < self.rtol <= 1e-3:
            raise ValueError(f"rtol must lie in (0, 1e-3], got {self.rtol}")
        if not self.atol > 0:
            raise ValueError("atol must be positive")
        if not (self.h_init > 0 and self.h_max > 0):
            raise ValueError("step bounds must be positive")


@dataclass(frozen=True)
class EventSpec:
    """Hyperplane ``<normal, u - anchor> = 0`` crossed in ``direction`` (+1, -1 or 0 for both)."""

    anchor: np.ndarray
    normal: np.ndarray
    direction: int = 1

    def __post_init__(self):
        if not np.linalg.norm(self.normal) > 0:
            raise ValueError("section normal must be nonzero")

    def value(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return (u[..., :3] - self.anchor) @ np.asarray(self.normal, dtype=float)


@dataclass
class Trajectory:
    """Accepted steps of one run.

    ``q[i]`` are the dense-output coefficients on ``[t[i], t[i+1]]``.
    ``H`` and ``C`` are filled in when the field carries a context.
    """

    t: np.ndarray
    y: np.ndarray
    q: np.ndarray
    status: str = "COMPLETED"
    H: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def states(self) -> np.ndarray:
        return self.y[:, :3]

    @property
    def diverged(self) -> bool:
        return self.status == "DIVERGED"

    def __len__(self):
        return len(self.t)

    def _locate(self, t):
        idx = np.searchsorted(self.t, t, side="right") - 1
        return np.clip(idx, 0, max(len(self.t) - 2, 0))

    def __call__(self, t) -> np.ndarray:
        """Dense output at time(s) ``t`` inside ``[t[0], t[-1]]``."""
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if len(self.t) == 1:
            out = np.repeat(self.y[:1], len(ts), axis=0)
            return out[0] if np.ndim(t) == 0 else out
        idx = self._locate(ts)
        t0 = self.t[idx]
        step = self.t[idx + 1] - t0
        theta = (ts - t0) / step
        powers = np.stack([theta, theta ** 2, theta ** 3, theta ** 4], axis=-1)
        out = self.y[idx] + step[:, None] * np.einsum("knj,kj->kn", self.q[idx], powers)
        # mesh points are returned exactly as stored
        exact = np.searchsorted(self.t, ts)
        hit = (exact < len(self.t)) & (self.t[np.minimum(exact, len(self.t) - 1)] == ts)
        out[hit] = self.y[exact[hit]]
        return out[0] if np.ndim(t) == 0 else out

    def to_csv(self, path) -> None:
        write_trajectory_csv(path, self)


_STATUS = {
    _kernels.STATUS_DONE: "COMPLETED",
    _kernels.STATUS_EVENT: "EVENT",
    _kernels.STATUS_DIVERGED: "DIVERGED",
}


def _rhs_for(field_fn):
    """Pick the compiled kernel when available, else wrap the Python callable."""
    compiled = getattr(field_fn, "compiled", None)
    if compiled is not None:
        return compiled[0], compiled[2], _kernels.dopri5_loop

    def rhs(u, _params):
        return np.asarray(field_fn(u), dtype=float)

    return rhs, np.zeros(1), py_func(_kernels.dopri5_loop)


def _run(rhs, params, loop, y0, t0, t_end, cfg: IntegratorConfig,
         event: Optional[EventSpec] = None, t_min: float = 0.0, blowup=DIVERGENCE_RADIUS):
    y0 = np.ascontiguousarray(y0, dtype=float)
    if not np.all(np.isfinite(y0)):
        raise NonFiniteState("initial state is not finite")
    if event is not None:
        anchor = np.ascontiguousarray(event.anchor, dtype=float)
        normal = np.ascontiguousarray(event.normal, dtype=float)
        direction = int(event.direction)
    else:
        anchor = np.zeros(3)
        normal = np.ones(3)
        direction = 0
    status, ts, ys, qs = loop(
        rhs, params, y0, float(t0), float(t_end), float(cfg.rtol), float(cfg.atol),
        float(cfg.h_init), float(cfg.h_max), int(cfg.max_steps), float(blowup),
        event is not None, anchor, normal, direction, float(t_min))
    err = None
    if status == _kernels.STATUS_BUDGET:
        err = StepBudgetExhausted(f"step budget {cfg.max_steps} exhausted at t={ts[-1]:.6g}")
    elif status == _kernels.STATUS_UNDERFLOW:
        err = StepUnderflow(f"step size underflow at t={ts[-1]:.6g}")
    elif status == _kernels.STATUS_NONFINITE:
        err = NonFiniteState(f"non-finite state encountered near t={ts[-1]:.6g}")
    if err is not None:
        err.partial = (ts, ys, qs)
        raise err
    return _STATUS[status], ts, ys, qs


def _attach_invariants(traj: Trajectory, field_fn) -> Trajectory:
    ctx = getattr(field_fn, "ctx", None)
    if ctx is not None:
        traj.H = np.asarray(ctx.H(traj.states), dtype=float)
        traj.C = np.asarray(ctx.C(traj.states), dtype=float)
    return traj


def integrate(field_fn: Callable, u0, t_end: float,
              cfg: IntegratorConfig = IntegratorConfig(),
              blowup: float = DIVERGENCE_RADIUS) -> Trajectory:
    """Integrate ``u' = field_fn(u)`` on ``[0, t_end]``.

    Runs leaving the ball of radius ``blowup`` stop early with status
    ``DIVERGED``; other failures raise :class:`IntegrationError`.
    """
    if t_end < 0:
        raise ValueError("t_end must be non-negative")
    rhs, params, loop = _rhs_for(field_fn)
    try:
        status, ts, ys, qs = _run(rhs, params, loop, u0, 0.0, t_end, cfg, blowup=blowup)
    except IntegrationError as exc:
        if exc.partial is not None:
            ts, ys, qs = exc.partial
            exc.partial = _attach_invariants(Trajectory(ts, ys, qs, status="FAILED"), field_fn)
        raise
    return _attach_invariants(Trajectory(ts, ys, qs, status=status), field_fn)


def integrate_variational(field_fn, u0, t_end: float,
                          cfg: IntegratorConfig = IntegratorConfig(),
                          base_fn=None) -> Trajectory:
    """Integrate a base path with the 3x3 state-transition matrix of ``field_fn``.

    The base point follows ``base_fn`` (default ``field_fn``) while the matrix
    obeys ``Phi' = D field_fn(u) Phi``.  Following a neutrally stable field
    that shares the orbit keeps the base point on it even when ``field_fn``
    makes the orbit strongly unstable.
    """
    if base_fn is None:
        base_fn = field_fn
    y0 = np.concatenate([np.asarray(u0, dtype=float), np.eye(3).ravel()])
    fc = getattr(field_fn, "compiled", None)
    bc = getattr(base_fn, "compiled", None)
    if fc is not None and bc is not None and fc[1] is bc[1]:
        params = np.concatenate([bc[2], fc[2]])
        status, ts, ys, qs = _run(fc[1], params, _kernels.dopri5_loop, y0, 0.0, t_end, cfg,
                                  blowup=0.0)
        return Trajectory(ts, ys, qs, status=status)

    def var(y):
        u = y[:3]
        return np.concatenate([base_fn(u), (jacobian_fd(field_fn, u) @ y[3:].reshape(3, 3)).ravel()])

    return integrate_python(var, y0, t_end, cfg)


def integrate_python(rhs: Callable, y0, t_end: float,
                     cfg: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Integrate an arbitrary-dimensional Python right-hand side (no blow-up guard)."""
    def wrapped(y, _p):
        return np.asarray(rhs(y), dtype=float)
    status, ts, ys, qs = _run(wrapped, np.zeros(1), py_func(_kernels.dopri5_loop),
                              np.asarray(y0, float), 0.0, t_end, cfg, blowup=0.0)
    return Trajectory(ts, ys, qs, status=status)


def _refine_root(traj_seg: Trajectory, event: EventSpec, t_lo: float, t_hi: float) -> float:
    """Root of the section function on one dense-output step.

    Safeguarded secant (Illinois) iteration with bisection fallback.
    """
    g = lambda t: float(event.value(traj_seg(t)))
    a, b = t_lo, t_hi
    ga, gb = g(a), g(b)
    if ga == 0.0:
        return a
    side = 0
    for _ in range(200):
        if gb == ga:
            m = 0.5 * (a + b)
        else:
            m = b - gb * (b - a) / (gb - ga)
            if not (min(a, b) < m < max(a, b)):
                m = 0.5 * (a + b)
        gm = g(m)
        u = traj_seg(m)
        if abs(gm) <= 1e-13 * (1.0 + np.linalg.norm(u[:3])) or abs(b - a) < 1e-16 * max(1.0, abs(m)):
            return m
        if np.sign(gm) == np.sign(gb):
            b, gb = m, gm
            if side == 1:
                ga *= 0.5
            side = 1
        else:
            a, ga = m, gm
            if side == -1:
                gb *= 0.5
            side = -1
    return m


def integrate_until_event(field_fn, u0, ev: EventSpec, max_time: float,
                          cfg: IntegratorConfig = IntegratorConfig(),
                          t_min: Optional[float] = None):
    """First directed crossing of ``ev`` after ``t_min`` (default ``10 * h_init``).

    Returns ``(state, time, trajectory)``; the trajectory ends at the step
    containing the crossing.
    """
    if t_min is None:
        t_min = 10.0 * cfg.h_init
    rhs, params, loop = _rhs_for(field_fn)
    t0 = 0.0
    y0 = np.asarray(u0, dtype=float)
    pieces = []
    while True:
        status, ts, ys, qs = _run(rhs, params, loop, y0, t0, max_time, cfg, ev, t_min)
        pieces.append((ts, ys, qs))
        if status != "EVENT":
            raise NoCrossing(f"no crossing of the section within t={max_time:g} (status {status})")
        last = Trajectory(ts[-2:], ys[-2:], qs[-1:])
        t_star = _refine_root(last, ev, ts[-2], ts[-1])
        if t_star > t_min:
            break
        # the crossing happened before the guard time; resume past it
        t0, y0 = ts[-1], ys[-1]
        t_min = max(t_min, t0)
    ts = np.concatenate([pieces[0][0]] + [p[0][1:] for p in pieces[1:]])
    ys = np.concatenate([pieces[0][1]] + [p[1][1:] for p in pieces[1:]])
    qs = np.concatenate([p[2] for p in pieces])
    traj = _attach_invariants(Trajectory(ts, ys, qs, status="EVENT"), field_fn)
    return traj(t_star)[:3], t_star, traj


def monitor_scalars(traj: Trajectory, fns: Sequence[Callable]) -> np.ndarray:
    """Table with columns ``t, fns[0](u), fns[1](u), ...`` over stored samples."""
    cols = [traj.t]
    for fn in fns:
        cols.append(np.broadcast_to(np.asarray(fn(traj.states), dtype=float), traj.t.shape))
    return np.column_stack(cols)


CSV_HEADER = ["t", "x", "y", "z", "H", "C"]


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(path, traj: Trajectory) -> None:
    n = len(traj.t)
    H = traj.H if traj.H is not None else np.full(n, np.nan)
    C = traj.C if traj.C is not None else np.full(n, np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(n):
            x, y, z = traj.y[i, :3]
            w.writerow([_fmt(v) for v in (traj.t[i], x, y, z, H[i], C[i])])


def read_trajectory_csv(path) -> np.ndarray:
    """Rows of ``t, x, y, z, H, C`` as a float array; checks the header."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected trajectory header {header}")
        rows = [[float(v) for v in row] for row in r]
    return np.array(rows, dtype=float).reshape(-1, 6)

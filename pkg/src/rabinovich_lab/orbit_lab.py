"""Periodic orbits as fibers of the energy-Casimir map: location, period, monodromy."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .field_core import Mode, PerturbationSpec, ScalarField, assemble_rhs, jacobian_fd
from .integrator import (
    EventSpec,
    IntegrationError,
    IntegratorConfig,
    integrate,
    integrate_until_event,
    integrate_variational,
)
from .rabinovich import (
    Family,
    LevelPair,
    SystemParams,
    casimir,
    equilibrium,
    hamiltonian,
    in_regular_set,
    make_context,
    sigma,
)

FIBER_TOL = 1e-10
ORBIT_TOL = 1e-7


class FiberSolveError(RuntimeError):
    pass


class NotPeriodicAtScale(RuntimeError):
    """No return to the section within the time budget."""


class PeriodMismatch(RuntimeError):
    pass


class Component(enum.Enum):
    PLUS = "PLUS"
    MINUS = "MINUS"
    SINGLE = "SINGLE"


@dataclass(frozen=True)
class FiberPoint:
    state: np.ndarray
    residuals: tuple
    level: LevelPair
    iterations: int = 0


@dataclass(frozen=True)
class Orbit:
    level: LevelPair
    beta: float
    period: float
    samples: np.ndarray
    component: Component = Component.SINGLE

    @property
    def params(self) -> SystemParams:
        return SystemParams(self.beta)

    def fiber_residuals(self) -> np.ndarray:
        p = self.params
        return np.maximum(np.abs(hamiltonian(self.samples, p) - self.level.h),
                          np.abs(casimir(self.samples) - self.level.c))

    def to_json(self) -> dict:
        return {"beta": self.beta, "h": self.level.h, "c": self.level.c,
                "period": self.period, "samples": self.samples.tolist(),
                "component": self.component.value}

    @classmethod
    def from_json(cls, rec: dict) -> "Orbit":
        missing = {"beta", "h", "c", "period", "samples"} - set(rec)
        if missing:
            raise ValueError(f"orbit record lacks {sorted(missing)}")
        samples = np.asarray(rec["samples"], dtype=float)
        if samples.ndim != 2 or samples.shape[1] != 3 or len(samples) < 3:
            raise ValueError("orbit samples must be a list of at least 3 [x, y, z] triples")
        return cls(LevelPair(float(rec["h"]), float(rec["c"])), float(rec["beta"]),
                   float(rec["period"]), samples, Component(rec.get("component", "SINGLE")))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "Orbit":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


# -- fiber points ---------------------------------------------------------------

def fiber_seeds(hs, cs, beta: float):
    """Closed-form points on the fibers ``(H, C) = (h, c)``.

    With ``X = x^2`` and ``Y = y^2`` the two level equations give
    ``X = 2(h + b z) - (c - z^2)`` and ``Y = 2(h + b z) + (c - z^2)``, so
    ``min(X, Y) = 2(h + b z) - |c - z^2|``.  That slack is maximized over the
    candidates ``z = b`` and ``z = +-sqrt(c)``.  Returns ``(points, slack)``;
    a positive slack means a point with ``x, y != 0`` exists.
    """
    hs = np.asarray(hs, dtype=float)
    cs = np.asarray(cs, dtype=float)
    b = float(beta)
    root_c = np.sqrt(np.maximum(cs, 0.0))
    cands = np.stack([np.full_like(cs, b), root_c, -root_c], axis=-1)
    slack = 2 * (hs[..., None] + b * cands) - np.abs(cs[..., None] - cands ** 2)
    slack = np.where(np.isfinite(slack), slack, -np.inf)
    k = np.argmax(slack, axis=-1)
    z = np.take_along_axis(cands, k[..., None], axis=-1)[..., 0]
    best = np.take_along_axis(slack, k[..., None], axis=-1)[..., 0]
    s = 2 * (hs + b * z)
    X = np.maximum(s - (cs - z ** 2), 0.0)
    Y = np.maximum(s + (cs - z ** 2), 0.0)
    return np.stack([np.sqrt(X), np.sqrt(Y), z], axis=-1), best


def auto_seed(lp: LevelPair, p: SystemParams) -> np.ndarray:
    pts, _ = fiber_seeds(np.array([lp.h]), np.array([lp.c]), p.beta)
    return pts[0]


def solve_fiber_point(lp: LevelPair, p: SystemParams, seed=None,
                      tol: float = FIBER_TOL, max_iter: int = 50) -> FiberPoint:
    """Newton iteration with least-norm updates onto ``(H, C) = (h, c)``."""
    if seed is None:
        seed = auto_seed(lp, p)
    seed = np.asarray(seed, dtype=float)
    if not np.all(np.isfinite(seed)):
        raise FiberSolveError("seed must be finite")
    pts, res, iters, flags = _kernels.fiber_newton_batch(
        np.array([lp.h]), np.array([lp.c]), p.beta, seed[None, :], tol, max_iter)
    if flags[0] == 2:
        raise FiberSolveError(f"Jacobian of (H, C) lost rank near {pts[0]}")
    if flags[0] == 1:
        raise FiberSolveError(f"no convergence in {max_iter} iterations (residual {res[0]:.3g})")
    u = pts[0]
    if not in_regular_set(u, p):
        raise FiberSolveError(f"converged to an equilibrium {u}")
    r = (abs(float(hamiltonian(u, p)) - lp.h), abs(float(casimir(u)) - lp.c))
    return FiberPoint(u, r, lp, int(iters[0]))


# -- periods and orbits ---------------------------------------------------------

def _nearest_gap(a: np.ndarray, b: np.ndarray) -> float:
    """Largest distance from a point of ``b`` to its nearest sample of ``a``."""
    d = np.linalg.norm(b[:, None, :] - a[None, :, :], axis=-1)
    return float(d.min(axis=1).max())


def _spacing(samples: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(samples, axis=0, append=samples[:1]), axis=1).max())


def _component(samples: np.ndarray) -> Component:
    mirrored = sigma(samples)
    if _nearest_gap(samples, mirrored) <= _spacing(samples):
        return Component.SINGLE
    cx, cy = samples[:, 0].mean(), samples[:, 1].mean()
    key = cx if abs(cx) >= abs(cy) else cy
    return Component.PLUS if key > 0 else Component.MINUS


def _project_to_fiber(pts: np.ndarray, lp: LevelPair, p: SystemParams) -> np.ndarray:
    """Pull samples back onto the fiber to roundoff; keeps a point if Newton does not help."""
    n = len(pts)
    hs, cs = np.full(n, lp.h), np.full(n, lp.c)
    before = np.maximum(np.abs(hamiltonian(pts, p) - lp.h), np.abs(casimir(pts) - lp.c))
    new, after, _, flags = _kernels.fiber_newton_batch(hs, cs, p.beta, pts, tol=1e-15, max_iter=4)
    keep = (flags != 2) & (after <= before) & (np.linalg.norm(new - pts, axis=1) <= 1e-6)
    return np.where(keep[:, None], new, pts)


def detect_period(fp: FiberPoint, p: SystemParams,
                  cfg: IntegratorConfig = IntegratorConfig(),
                  n_samples: int = 256, max_time: float = 1000.0) -> Orbit:
    """Period of the unperturbed orbit through ``fp`` by first same-direction section return."""
    fld = assemble_rhs(PerturbationSpec(), make_context(p))
    u0 = np.asarray(fp.state, dtype=float)
    f0 = fld(u0)
    speed = np.linalg.norm(f0)
    if speed == 0:
        raise NotPeriodicAtScale("the seed is an equilibrium")
    ev = EventSpec(anchor=u0, normal=f0 / speed, direction=1)
    try:
        _, period, traj = integrate_until_event(fld, u0, ev, max_time, cfg)
    except IntegrationError as exc:
        raise NotPeriodicAtScale(str(exc)) from exc
    closure = float(np.linalg.norm(traj(period)[:3] - u0))
    if closure > ORBIT_TOL:
        raise NotPeriodicAtScale(f"orbit does not close: return residual {closure:.3g}")
    ts = np.linspace(0.0, period, n_samples, endpoint=False)
    samples = traj(ts)[:, :3]
    samples[0] = u0
    samples = _project_to_fiber(samples, fp.level, p)
    return Orbit(fp.level, float(p.beta), float(period), samples, _component(samples))


def orbit_for_level(lp: LevelPair, p: SystemParams, seed=None,
                    cfg: IntegratorConfig = IntegratorConfig(), n_samples: int = 256) -> Orbit:
    return detect_period(solve_fiber_point(lp, p, seed), p, cfg, n_samples)


def mirror_orbit(orb: Orbit) -> Orbit:
    comp = {Component.PLUS: Component.MINUS, Component.MINUS: Component.PLUS}.get(
        orb.component, Component.SINGLE)
    return Orbit(orb.level, orb.beta, orb.period, sigma(orb.samples), comp)


def orbits_coincide(a: Orbit, b: Orbit) -> bool:
    return _nearest_gap(a.samples, b.samples) <= max(_spacing(a.samples), _spacing(b.samples))


@dataclass(frozen=True)
class PeriodProbe:
    equilibrium: np.ndarray
    amplitude: float
    expected_period: float

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError("probe amplitude must be positive")


def limit_period(family: Family, M: float, p: SystemParams) -> float:
    """Limiting period of the small orbits around a stable equilibrium."""
    b = float(p.beta)
    if family is Family.E3:
        if not abs(M) > abs(b):
            raise ValueError("small orbits around (0,0,M) need |M| > |beta|")
        return 2 * math.pi / math.sqrt(M * M - b * b)
    if family is Family.E1:
        if M == 0 or abs(abs(M) - abs(b) * math.sqrt(2)) == 0:
            raise ValueError("small orbits around (M,0,beta) need M != 0, +-beta*sqrt(2)")
        return 2 * math.pi / abs(M)
    raise ValueError(f"no periodic family around {family.name} equilibria")


def period_probe(family: Family, M: float, p: SystemParams, amplitude: float = 1e-3,
                 direction=None, cfg: IntegratorConfig = IntegratorConfig()):
    """Orbit through ``equilibrium + amplitude * direction`` and the limit it should approach."""
    eq = equilibrium(family, M, p)
    probe = PeriodProbe(eq, amplitude, limit_period(family, M, p))
    if direction is None:
        direction = [1.0, 0.0, 0.0] if family is Family.E3 else [0.0, 1.0, 0.0]
    d = np.asarray(direction, dtype=float)
    seed = eq + amplitude * d / np.linalg.norm(d)
    lp = LevelPair(float(hamiltonian(seed, p)), float(casimir(seed)))
    return detect_period(solve_fiber_point(lp, p, seed), p, cfg), probe


# -- monodromy ------------------------------------------------------------------

def char_poly(m: np.ndarray) -> tuple:
    """Coefficients ``(a2, a1, a0)`` of ``l^3 + a2 l^2 + a1 l + a0 = det(l I - m)``."""
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    minors = (m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
              + m[0, 0] * m[2, 2] - m[0, 2] * m[2, 0]
              + m[1, 1] * m[2, 2] - m[1, 2] * m[2, 1])
    return -tr, minors, -float(np.linalg.det(m))


def _cbrt(v: float) -> float:
    return math.copysign(abs(v) ** (1 / 3), v)


def cubic_roots(a2: float, a1: float, a0: float) -> np.ndarray:
    """Roots of a monic real cubic by the closed-form (Cardano / trigonometric) solution."""
    shift = a2 / 3
    p = a1 - a2 * a2 / 3
    q = 2 * a2 ** 3 / 27 - a2 * a1 / 3 + a0
    disc = (q / 2) ** 2 + (p / 3) ** 3
    if disc > 0 or p == 0:
        A = -_cbrt(q / 2 + math.copysign(math.sqrt(max(disc, 0.0)), q))
        B = -p / (3 * A) if A != 0 else 0.0
        re = -(A + B) / 2
        im = math.sqrt(3) / 2 * (A - B)
        roots = [complex(A + B), complex(re, im), complex(re, -im)]
    else:
        r = 2 * math.sqrt(-p / 3)
        arg = 3 * q / (p * r)
        phi = math.acos(max(-1.0, min(1.0, arg))) / 3
        roots = [complex(r * math.cos(phi - 2 * math.pi * k / 3)) for k in range(3)]
    return np.array([z - shift for z in roots])


def _polish(roots, coeffs, steps: int = 3):
    a2, a1, a0 = coeffs
    poly = lambda z: ((z + a2) * z + a1) * z + a0
    dpoly = lambda z: (3 * z + 2 * a2) * z + a1
    out = []
    for z in roots:
        for _ in range(steps):
            d = dpoly(z)
            if d == 0:
                break
            znew = z - poly(z) / d
            if abs(poly(znew)) < abs(poly(z)):
                z = znew
            else:
                break
        out.append(z)
    return np.array(out)


def multipliers_of(m: np.ndarray) -> np.ndarray:
    """Eigenvalues of a 3x3 matrix, sorted by descending modulus.

    Closed-form cubic first; if its residual is poor, eigenvalues of the
    companion matrix instead.
    """
    coeffs = char_poly(np.asarray(m, dtype=float))
    a2, a1, a0 = coeffs
    roots = _polish(cubic_roots(*coeffs), coeffs)
    scale = 1.0 + abs(a2) + abs(a1) + abs(a0)
    resid = max(abs(((z + a2) * z + a1) * z + a0) for z in roots)
    if not np.all(np.isfinite(roots)) or resid > 1e-10 * scale * max(1.0, np.abs(roots).max() ** 3):
        companion = np.array([[-a2, -a1, -a0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        roots = np.linalg.eigvals(companion).astype(complex)
    roots = np.where(np.abs(roots.imag) <= 1e-14 * np.maximum(1.0, np.abs(roots)), roots.real, roots)
    return roots[np.argsort(-np.abs(roots), kind="stable")].astype(complex)


@dataclass(frozen=True)
class MonodromyResult:
    matrix: np.ndarray
    multipliers: np.ndarray
    div_integral: float
    closure: float

    @property
    def trivial_index(self) -> int:
        return int(np.argmin(np.abs(self.multipliers - 1.0)))

    @property
    def trivial(self) -> complex:
        return self.multipliers[self.trivial_index]

    @property
    def nontrivial(self) -> np.ndarray:
        return np.delete(self.multipliers, self.trivial_index)

    @property
    def det(self) -> float:
        return float(np.linalg.det(self.matrix))

    def to_json(self) -> list:
        return [{"re": float(z.real), "im": float(z.imag), "abs": float(abs(z))}
                for z in self.multipliers]


def divergence_integral(orb: Orbit, field_fn) -> float:
    """Periodic trapezoid rule for the integral of ``div field`` once around the orbit."""
    div = np.array([np.trace(jacobian_fd(field_fn, u)) for u in orb.samples])
    return float(div.mean() * orb.period)


def monodromy(orb: Orbit, field_fn, cfg: IntegratorConfig = IntegratorConfig(),
              closure_tol: float = 1e-5) -> MonodromyResult:
    """Flow-map Jacobian of ``field_fn`` over one period, starting at ``orb.samples[0]``.

    When ``field_fn`` is a perturbation targeting the orbit's own fiber the
    base point is carried by the unperturbed field, which traces the same
    orbit; this keeps unstable cases on the orbit for a whole period.
    """
    u0 = orb.samples[0]
    base = field_fn
    spec = getattr(field_fn, "spec", None)
    if spec is not None and spec.mode is not Mode.NONE and _targets(spec, orb):
        base = assemble_rhs(PerturbationSpec(), field_fn.ctx)
    traj = integrate_variational(field_fn, u0, orb.period, cfg, base_fn=base)
    end = traj.y[-1]
    closure = float(np.linalg.norm(end[:3] - u0))
    if closure > closure_tol:
        raise PeriodMismatch(f"flow over one period misses the start by {closure:.3g}")
    mat = end[3:].reshape(3, 3)
    return MonodromyResult(mat, multipliers_of(mat), divergence_integral(orb, field_fn), closure)


def _targets(spec: PerturbationSpec, orb: Orbit, tol: float = ORBIT_TOL) -> bool:
    ok_h = spec.h is None or not spec.mode.touches_energy or abs(spec.h - orb.level.h) <= tol
    ok_c = spec.c is None or not spec.mode.touches_casimir or abs(spec.c - orb.level.c) <= tol
    return ok_h and ok_c and float(orb.fiber_residuals().max()) <= tol


def perturbed_field(orb: Orbit, mode: Mode, gain_a: float = 1.0, gain_b: float = 1.0):
    """Field of ``mode`` targeting the orbit's own level pair."""
    spec = PerturbationSpec(mode, orb.level.h, orb.level.c,
                            ScalarField.const(gain_a), ScalarField.const(gain_b))
    return assemble_rhs(spec, make_context(orb.params))


def closure_residual(orb: Orbit, cfg: IntegratorConfig = IntegratorConfig()) -> float:
    fld = assemble_rhs(PerturbationSpec(), make_context(orb.params))
    traj = integrate(fld, orb.samples[0], orb.period, cfg)
    return float(np.linalg.norm(traj.states[-1] - orb.samples[0]))

"""End-to-end stabilization experiments and their verdicts."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .field_core import FieldContext, Mode, PerturbationSpec, assemble_rhs, cross
from .integrator import (IntegratorConfig, NonFiniteState, StepUnderflow, Trajectory,
                         integrate)
from .orbit_lab import MonodromyResult, Orbit, monodromy
from .rabinovich import SystemParams, in_regular_set, make_context

CONVERGED_DIST = 1e-4
LEAF_TOL = 1e-6
LEAF_DRIFT_TOL = 1e-7
DIST_NOISE = 1e-6
# speed-up factor that marks a stalled step controller as finite-time blow-up
RUNAWAY_FACTOR = 100.0


class VerdictKind(enum.Enum):
    CONVERGED_TO_ORBIT = "CONVERGED_TO_ORBIT"
    LEAF_CONVERGED_ONLY = "LEAF_CONVERGED_ONLY"
    DIVERGED = "DIVERGED"
    INDETERMINATE = "INDETERMINATE"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    evidence: dict = field(default_factory=dict)


@dataclass
class DecayRecord:
    t: np.ndarray
    dist: np.ndarray
    dev_H2: np.ndarray
    dev_C2: np.ndarray
    rate: Optional[float] = None
    trajectory: Optional[Trajectory] = None
    floquet: Optional[MonodromyResult] = None


@dataclass(frozen=True)
class ExperimentSpec:
    params: SystemParams
    spec: PerturbationSpec
    orbit: Orbit
    offset: np.ndarray
    t_end: float
    cfg: IntegratorConfig = IntegratorConfig()
    floquet: bool = False

    def __post_init__(self):
        lvl = self.orbit.level
        if self.spec.mode.touches_energy and abs(self.spec.h - lvl.h) > 1e-7:
            raise ValueError("target energy level differs from the reference orbit's")
        if self.spec.mode.touches_casimir and abs(self.spec.c - lvl.c) > 1e-7:
            raise ValueError("target Casimir level differs from the reference orbit's")


# -- distance to an orbit ---------------------------------------------------------

def _refine(u, prev, mid, nxt):
    """Distance from ``u`` to the parabola through three consecutive samples.

    Parameter ``s`` in [-1, 1] maps to ``prev``, ``mid``, ``nxt``; a few
    safeguarded Newton steps on the squared distance.
    """
    d1 = 0.5 * (nxt - prev)
    d2 = nxt - 2.0 * mid + prev
    s = np.zeros(len(u))
    for _ in range(8):
        r = u - (mid + s[:, None] * d1 + 0.5 * (s ** 2)[:, None] * d2)
        tangent = d1 + s[:, None] * d2
        g = -np.einsum("ij,ij->i", r, tangent)
        curv = np.einsum("ij,ij->i", tangent, tangent) - np.einsum("ij,ij->i", r, d2)
        step = np.where(curv > 0, g / np.where(curv > 0, curv, 1.0), 0.0)
        s = np.clip(s - step, -1.0, 1.0)
    r = u - (mid + s[:, None] * d1 + 0.5 * (s ** 2)[:, None] * d2)
    return np.linalg.norm(r, axis=1)


def dist_to_orbits(us, orb: Orbit, chunk: int = 4096) -> np.ndarray:
    """Distance from each row of ``us`` to the sampled orbit."""
    us = np.atleast_2d(np.asarray(us, dtype=float))
    samples = orb.samples
    n = len(samples)
    if n < 3:
        raise ValueError("orbit needs at least 3 samples")
    out = np.empty(len(us))
    for lo in range(0, len(us), chunk):
        u = us[lo:lo + chunk]
        d = np.linalg.norm(u[:, None, :] - samples[None, :, :], axis=-1)
        k = np.argmin(d, axis=1)
        raw = d[np.arange(len(u)), k]
        refined = _refine(u, samples[(k - 1) % n], samples[k], samples[(k + 1) % n])
        out[lo:lo + chunk] = np.minimum(raw, refined)
    return out


def dist_to_orbit(u, orb: Orbit) -> float:
    """Euclidean distance from ``u`` to the orbit, refined between samples."""
    return float(dist_to_orbits(np.asarray(u, dtype=float)[None, :], orb)[0])


# -- experiments ------------------------------------------------------------------

def _fit_rate(t, dist):
    ok = (dist > CONVERGED_DIST) & np.isfinite(dist)
    if ok.sum() < 3 or np.ptp(t[ok]) == 0:
        return None
    slope, _ = np.polyfit(t[ok], np.log(dist[ok]), 1)
    return float(slope)


def _trend_ok(t, dist, t_end, chunks: int = 5) -> bool:
    """Chunk maxima over the last tenth of the run never grow beyond the noise floor."""
    window = t >= 0.9 * t_end
    tw, dw = t[window], dist[window]
    if len(tw) < chunks:
        return bool(len(dw)) and bool(np.all(np.diff(dw) <= DIST_NOISE))
    edges = np.linspace(tw[0], tw[-1], chunks + 1)
    maxima = []
    for a, b in zip(edges[:-1], edges[1:]):
        sel = (tw >= a) & (tw <= b)
        if sel.any():
            maxima.append(dw[sel].max())
    return bool(np.all(np.diff(maxima) <= DIST_NOISE))


def run_experiment(ex: ExperimentSpec):
    """Integrate from ``orbit.samples[0] + offset`` and classify the outcome.

    Returns ``(DecayRecord, Verdict)``.
    """
    p = ex.params
    ctx = make_context(p)
    fld = assemble_rhs(ex.spec, ctx)
    u0 = ex.orbit.samples[0] + np.asarray(ex.offset, dtype=float)
    if not in_regular_set(u0, p):
        raise ValueError("initial state lies on an equilibrium line")
    blew_up = False
    try:
        traj = integrate(fld, u0, ex.t_end, ex.cfg)
    except (StepUnderflow, NonFiniteState) as exc:
        traj = exc.partial
        if traj is None or len(traj) < 2:
            raise
        speed = np.linalg.norm(fld(traj.states[[0, -1]]), axis=1)
        if not (speed[1] > RUNAWAY_FACTOR * speed[0]) and np.all(np.isfinite(traj.states[-1])):
            raise
        blew_up = True
    lvl = ex.orbit.level
    dist = dist_to_orbits(traj.states, ex.orbit)
    dev_H2 = (traj.H - lvl.h) ** 2
    dev_C2 = (traj.C - lvl.c) ** 2
    record = DecayRecord(traj.t, dist, dev_H2, dev_C2, _fit_rate(traj.t, dist), traj)
    if ex.floquet:
        record.floquet = monodromy(ex.orbit, fld, ex.cfg)

    mode = ex.spec.mode
    drift_H = float(np.max(np.abs(traj.H - traj.H[0])))
    drift_C = float(np.max(np.abs(traj.C - traj.C[0])))
    evidence = {
        "final_dist": float(dist[-1]),
        "final_dev_H": float(abs(traj.H[-1] - lvl.h)),
        "final_dev_C": float(abs(traj.C[-1] - lvl.c)),
        "drift_H": drift_H,
        "drift_C": drift_C,
        "t_stop": float(traj.t[-1]),
        "rate": record.rate,
    }
    if blew_up:
        evidence["reason"] = "finite-time blow-up"
    invariant_ok = True
    if mode is Mode.CASIMIR_LEAF_STABILIZE:
        invariant_ok = drift_C <= LEAF_DRIFT_TOL
        evidence["casimir_preserved"] = invariant_ok
    elif mode is Mode.ENERGY_LEAF_STABILIZE:
        invariant_ok = drift_H <= LEAF_DRIFT_TOL
        evidence["energy_preserved"] = invariant_ok

    if traj.diverged or blew_up:
        kind = VerdictKind.DIVERGED
    elif not invariant_ok:
        kind = VerdictKind.INDETERMINATE
        evidence["reason"] = "leaf invariant drifted"
    elif dist[-1] < CONVERGED_DIST and _trend_ok(traj.t, dist, ex.t_end):
        kind = VerdictKind.CONVERGED_TO_ORBIT
    else:
        leaf = []
        if mode.touches_energy and not mode.destabilizing:
            leaf.append(evidence["final_dev_H"] < LEAF_TOL)
        if mode.touches_casimir and not mode.destabilizing:
            leaf.append(evidence["final_dev_C"] < LEAF_TOL)
        kind = VerdictKind.LEAF_CONVERGED_ONLY if leaf and all(leaf) else VerdictKind.INDETERMINATE
    return record, Verdict(kind, evidence)


def experiment_report(ex: ExperimentSpec, record: DecayRecord, verdict: Verdict) -> dict:
    """JSON-ready summary ``{spec, verdict, final_dist, drift_H, drift_C, floquet}``."""
    spec = ex.spec.to_dict()
    spec.update({"beta": ex.params.beta, "offset": [float(v) for v in ex.offset],
                 "t_end": ex.t_end, "rtol": ex.cfg.rtol, "atol": ex.cfg.atol})
    return {
        "spec": spec,
        "verdict": verdict.kind.value,
        "final_dist": verdict.evidence["final_dist"],
        "drift_H": verdict.evidence["drift_H"],
        "drift_C": verdict.evidence["drift_C"],
        "floquet": record.floquet.to_json() if record.floquet is not None else [],
    }


def write_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)


# -- decay-rate identity ----------------------------------------------------------

@dataclass(frozen=True)
class RateReport:
    quantity: str
    n_points: int
    median_rel_err: float
    max_rel_err: float
    max_abs_err: float

    @property
    def passed(self) -> bool:
        return self.n_points > 0 and self.max_rel_err <= 1e-4 and self.median_rel_err <= 1e-5


def _rate_one(traj: Trajectory, values: np.ndarray, rate_fn, quantity: str,
              min_change: float) -> RateReport:
    t = traj.t
    dt = np.diff(t)
    mid = traj(t[:-1] + 0.5 * dt)[:, :3]
    states = traj.states
    r0, r1, rm = rate_fn(states[:-1]), rate_fn(states[1:]), rate_fn(mid)
    # mean of the analytic rate over each step (Simpson) vs. finite-difference slope
    mean_rate = (r0 + 4 * rm + r1) / 6
    slope = np.diff(values) / dt
    abs_err = np.abs(slope - mean_rate)
    rate_fn_weight = rate_fn.weight(mid)
    valid = (rate_fn_weight > 1e-6) & (np.abs(np.diff(values)) > min_change)
    if not valid.any():
        return RateReport(quantity, 0, 0.0, 0.0, float(abs_err.max(initial=0.0)))
    rel = abs_err[valid] / np.abs(mean_rate[valid])
    return RateReport(quantity, int(valid.sum()), float(np.median(rel)), float(rel.max()),
                      float(abs_err.max()))


class _Rate:
    def __init__(self, ctx, gain, fn, level):
        self.ctx, self.gain, self.fn, self.level = ctx, gain, fn, level

    def weight(self, u):
        return np.sum(cross(self.ctx.grad_H(u), self.ctx.grad_C(u)) ** 2, axis=-1)

    def __call__(self, u):
        return -self.gain(u) * (self.fn(u) - self.level) * self.weight(u)


def lyapunov_rate_check(traj: Trajectory, ctx: FieldContext, spec: PerturbationSpec,
                        min_change: float = 1e-7) -> list[RateReport]:
    """Check ``dH/dt = -a (H-h) |grad H x grad C|^2`` and ``dC/dt = -b (C-c) |...|^2``.

    Only intervals where the weight exceeds 1e-6 and the monitored quantity
    moves by more than ``min_change`` enter the statistics.
    """
    reports = []
    if spec.mode in (Mode.CASIMIR_LEAF_STABILIZE, Mode.FULL):
        vals = ctx.H(traj.states)
        reports.append(_rate_one(traj, vals, _Rate(ctx, spec.gain_a, ctx.H, spec.h), "H", min_change))
    if spec.mode in (Mode.ENERGY_LEAF_STABILIZE, Mode.FULL):
        vals = ctx.C(traj.states)
        reports.append(_rate_one(traj, vals, _Rate(ctx, spec.gain_b, ctx.C, spec.c), "C", min_change))
    if not reports:
        raise ValueError("rate identities apply to stabilizing modes only")
    return reports

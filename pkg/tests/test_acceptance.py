"""Acceptance gate: one test per criterion, each leaving a PASS/FAIL line in RESULTS."""

import numpy as np
import pytest

from equilibrium_table import TABLE, families_containing, point
from rabinovich_lab import _kernels
from rabinovich_lab.field_core import (Mode, PerturbationSpec, ScalarField, assemble_rhs,
                                       casimir_leaf_perturbation, energy_leaf_perturbation,
                                       unperturbed_rhs)
from rabinovich_lab.integrator import IntegratorConfig, integrate
from rabinovich_lab.orbit_lab import (fiber_seeds, monodromy, period_probe, perturbed_field,
                                      solve_fiber_point)
from rabinovich_lab.rabinovich import (OUTSIDE, Family, LevelPair, SystemParams,
                                       classify_equilibrium, classify_grid,
                                       explicit_perturbed_rhs, grad_casimir, grad_hamiltonian,
                                       make_context)
from rabinovich_lab.stability_report import (ExperimentSpec, VerdictKind, lyapunov_rate_check,
                                             run_experiment)

RESULTS = {}


def record(n, title, passed, detail):
    RESULTS[n] = f"{'PASS' if passed else 'FAIL'}  [{n:2d}] {title}: {detail}"
    print(RESULTS[n])
    assert passed, RESULTS[n]


def unit(v):
    return v / np.linalg.norm(v)


def level_spec(mode, h=0.0, c=2.0):
    return PerturbationSpec(mode, h, c)


def test_01_transcription_oracle():
    rng = np.random.default_rng(1)
    n = 10_000
    us = rng.uniform(-3, 3, size=(n, 3))
    betas = rng.uniform(-2, 2, n)
    hs, cs = rng.uniform(-3, 3, n), rng.uniform(-3, 3, n)
    worst = 0.0
    for i in range(n):
        p = SystemParams(betas[i])
        ctx = make_context(p)
        for mode in Mode:
            s = PerturbationSpec(mode, hs[i], cs[i])
            a = assemble_rhs(s, ctx)(us[i])
            b = explicit_perturbed_rhs(us[i], p, s)
            worst = max(worst, np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))
    record(1, "field assembly equals expanded polynomials (1e4 states x 6 modes)",
           worst <= 1e-10, f"max relative error {worst:.2e} (gate 1e-10)")


def test_02_conservation(beta1, ctx1):
    fp = solve_fiber_point(LevelPair(0.0, 2.0), beta1, np.array([0.0, 1.7, 0.7]))
    tr = integrate(assemble_rhs(PerturbationSpec(), ctx1), fp.state, 50.0, IntegratorConfig(rtol=1e-10))
    dH, dC = np.abs(tr.H - tr.H[0]).max(), np.abs(tr.C - tr.C[0]).max()
    record(2, "unperturbed run conserves H and C to t=50",
           dH <= 1e-8 and dC <= 1e-8, f"|dH|={dH:.1e}, |dC|={dC:.1e} (gate 1e-8)")


def _leaf_run(beta1, orbit02, mode, tangent_to):
    u0 = orbit02.samples[0]
    gH, gC = grad_hamiltonian(u0, beta1), grad_casimir(u0)
    # offset inside the preserved leaf and off the target one
    direction = np.cross(gC, np.cross(gH, gC)) if tangent_to == "C" else np.cross(gH, np.cross(gH, gC))
    ex = ExperimentSpec(beta1, level_spec(mode), orbit02, 0.05 * unit(direction), 200.0)
    return run_experiment(ex)


def test_03_casimir_leaf_stabilization(beta1, orbit02):
    rec, v = _leaf_run(beta1, orbit02, Mode.CASIMIR_LEAF_STABILIZE, "C")
    growth = np.diff(rec.dev_H2).max()
    final = np.sqrt(rec.dev_H2[-1])
    drift = v.evidence["drift_C"]
    ok = growth <= 1e-10 and final < 1e-6 and drift <= 1e-7 and rec.dev_H2[0] > 1e-6
    record(3, "energy deviation decays on the Casimir leaf",
           ok, f"max step growth of (H-h)^2 {growth:.1e}, |H-h|(200)={final:.1e}, C drift {drift:.1e}")


def test_04_energy_leaf_stabilization(beta1, orbit02):
    rec, v = _leaf_run(beta1, orbit02, Mode.ENERGY_LEAF_STABILIZE, "H")
    growth = np.diff(rec.dev_C2).max()
    final = np.sqrt(rec.dev_C2[-1])
    drift = v.evidence["drift_H"]
    ok = growth <= 1e-10 and final < 1e-6 and drift <= 1e-7 and rec.dev_C2[0] > 1e-6
    record(4, "Casimir deviation decays on the energy leaf",
           ok, f"max step growth of (C-c)^2 {growth:.1e}, |C-c|(200)={final:.1e}, H drift {drift:.1e}")


def test_05_destabilizing_modes_grow(beta1, orbit02):
    u0 = orbit02.samples[0]
    details, ok = [], True
    for mode, grad, key in ((Mode.CASIMIR_LEAF_DESTABILIZE, grad_hamiltonian(u0, beta1), "dev_H2"),
                            (Mode.ENERGY_LEAF_DESTABILIZE, grad_casimir(u0), "dev_C2")):
        ex = ExperimentSpec(beta1, level_spec(mode), orbit02, 1e-3 * unit(grad), 10.0)
        rec, v = run_experiment(ex)
        dev = getattr(rec, key)
        strict = bool(np.all(np.diff(dev) > 0))
        ok &= strict and dev[-1] > dev[0]
        details.append(f"{mode.name}: strictly increasing={strict}, x{dev[-1] / dev[0]:.1e} "
                       f"by t={rec.t[-1]:.3g} ({v.kind.value})")
    record(5, "destabilizing modes push the squared deviation up", ok, "; ".join(details))


def test_06_full_mode_convergence(beta1, orbit02):
    ex = ExperimentSpec(beta1, level_spec(Mode.FULL), orbit02, np.full(3, 0.05), 300.0, floquet=True)
    rec, v = run_experiment(ex)
    fl = rec.floquet
    nontriv = np.abs(fl.nontrivial).max()
    triv = abs(fl.trivial - 1)
    ok = (v.kind is VerdictKind.CONVERGED_TO_ORBIT and rec.dist[-1] < 1e-4
          and nontriv <= 1 - 1e-3 and triv <= 1e-3)
    record(6, "both perturbations together converge to the orbit",
           ok, f"verdict {v.kind.value}, dist(300)={rec.dist[-1]:.1e}, "
               f"max |nontrivial| {nontriv:.1e}, |trivial-1| {triv:.1e}")


def test_07_unperturbed_spectrum(orbit02):
    res = monodromy(orbit02, perturbed_field(orbit02, Mode.NONE))
    dev = np.abs(res.multipliers - 1).max()
    rel = abs(res.det / np.exp(res.div_integral) - 1)
    record(7, "unperturbed monodromy has unit spectrum",
           dev <= 1e-3 and rel <= 1e-4, f"max |lambda-1| {dev:.1e}, det vs exp(int div) {rel:.1e}")


def test_08_period_limits(beta1):
    details, ok = [], True
    for fam, M in ((Family.E3, 2.0), (Family.E1, 3.0)):
        orb, probe = period_probe(fam, M, beta1, amplitude=1e-3)
        rel = abs(orb.period / probe.expected_period - 1)
        ok &= rel <= 0.02
        details.append(f"{fam.name} M={M:g}: T={orb.period:.6f} vs {probe.expected_period:.6f} ({rel:.1e})")
    record(8, "small-amplitude periods approach their limits", ok, "; ".join(details))


def test_09_equilibrium_verdicts():
    mismatches = []
    for beta, fam, M, expected in TABLE:
        u = point(beta, fam, M)
        v = classify_equilibrium(np.array(u), SystemParams(beta))
        if v.stability.value != expected or v.family.name not in families_containing(u, beta):
            mismatches.append((beta, fam, M))
    record(9, "equilibrium classifier matches the stability table",
           len(TABLE) == 30 and not mismatches, f"{len(TABLE)} cases, {len(mismatches)} mismatches")


def test_10_region_atlas():
    grid = np.linspace(-5, 5, 400)
    details, ok = [], True
    for beta in (0.0, 1.0, 2.0):
        labels, overlaps = classify_grid(grid, grid, SystemParams(beta))
        H, C = np.meshgrid(grid, grid, indexing="ij")
        listed = labels != OUTSIDE
        seeds, _ = fiber_seeds(H[listed], C[listed], beta)
        _, res, _, flags = _kernels.fiber_newton_batch(H[listed], C[listed], beta, seeds)
        bad = int(np.count_nonzero((flags != 0) | ~(res <= 1e-10)))
        ok &= overlaps == 0 and bad == 0
        details.append(f"beta={beta:g}: {int(listed.sum())} listed, {overlaps} overlaps, {bad} fiber failures")
    record(10, "region atlas is disjoint and every listed cell has a fiber point", ok, "; ".join(details))


def test_11_decay_rate_identity(beta1, ctx1, orbit02):
    s = level_spec(Mode.FULL)
    u0 = orbit02.samples[0] + 0.05
    tr = integrate(assemble_rhs(s, ctx1), u0, 50.0)
    good = lyapunov_rate_check(tr, ctx1, s)

    one = ScalarField.const(1.0)

    def flipped(u):
        return (unperturbed_rhs(u, ctx1)
                + casimir_leaf_perturbation(u, ctx1, 0.0, one, destabilize=True)
                + energy_leaf_perturbation(u, ctx1, 2.0, one, destabilize=True))

    bad_tr = integrate(flipped, u0, 0.05)  # finite-time blow-up near t=0.08
    bad = lyapunov_rate_check(bad_tr, ctx1, s)
    ok = (all(r.median_rel_err <= 1e-5 and r.n_points > 0 for r in good)
          and all(r.median_rel_err > 1e-5 for r in bad))
    fmt = ", ".join(f"{r.quantity} median {r.median_rel_err:.1e}" for r in good)
    fmt_bad = ", ".join(f"{r.quantity} median {r.median_rel_err:.1e}" for r in bad)
    record(11, "decay-rate identity holds and catches a sign flip",
           ok, f"FULL: {fmt}; sign-flipped: {fmt_bad}")

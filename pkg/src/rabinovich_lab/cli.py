"""Command-line front end: ``rablab simulate | classify | orbit | floquet | equilibria | sweep``.

Each subcommand takes an optional ``--config`` JSON document; command-line
flags override keys from the file.  Exit codes: 0 ok, 2 bad configuration,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor

import jsonschema
import numpy as np

from .field_core import Mode, PerturbationSpec, ScalarField, assemble_rhs
from .integrator import IntegrationError, IntegratorConfig, integrate, write_trajectory_csv
from .orbit_lab import (FiberSolveError, NotPeriodicAtScale, Orbit, PeriodMismatch,
                        fiber_seeds, monodromy, orbit_for_level, perturbed_field)
from .rabinovich import (OUTSIDE, SIGMA_LABELS, Family, LevelPair, SystemParams,
                         classify_equilibrium, classify_grid, classify_level_pair,
                         equilibrium, in_regular_set, make_context)
from .stability_report import ExperimentSpec, experiment_report, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

NUMERIC_ERRORS = (IntegrationError, FiberSolveError, NotPeriodicAtScale, PeriodMismatch,
                  FloatingPointError, np.linalg.LinAlgError)


class ConfigError(Exception):
    pass


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec3 = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}
_mode = {"type": "string", "enum": [m.name.lower() for m in Mode]}

SCHEMAS = {
    "simulate": {
        "beta": _num, "mode": _mode, "h": _num, "c": _num,
        "gain_a": _pos, "gain_b": _pos, "u0": _vec3, "auto_seed": {"type": "boolean"},
        "offset": _vec3, "t_end": {"type": "number", "minimum": 0},
        "rtol": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-3}, "atol": _pos,
        "output": {"type": "string"}, "format": {"type": "string", "enum": ["csv", "json"]},
        "report": {"type": "string"},
    },
    "classify": {"beta": _num, "h": _num, "c": _num},
    "orbit": {"beta": _num, "h": _num, "c": _num, "seed": _vec3,
              "samples": {"type": "integer", "minimum": 3}, "output": {"type": "string"},
              "rtol": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-3}, "atol": _pos},
    "floquet": {"orbit": {"type": "string"}, "mode": _mode, "gain_a": _pos, "gain_b": _pos,
                "output": {"type": "string"},
                "rtol": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-3}, "atol": _pos},
    "equilibria": {"beta": _num, "M": {"type": "array", "items": _num, "minItems": 1},
                   "output": {"type": "string"}},
    "sweep": {"beta": _num, "h_range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
              "c_range": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
              "n": {"type": "integer", "minimum": 1}, "output": {"type": "string"},
              "solve": {"type": "boolean"}, "workers": {"type": "integer", "minimum": 1}},
}

DEFAULTS = {
    "simulate": {"beta": 1.0, "mode": "none", "gain_a": 1.0, "gain_b": 1.0,
                 "offset": [0.0, 0.0, 0.0], "t_end": 100.0, "rtol": 1e-10, "atol": 1e-12,
                 "output": "trajectory.csv", "format": "csv", "auto_seed": False},
    "classify": {"beta": 1.0},
    "orbit": {"beta": 1.0, "samples": 256, "output": "orbit.json", "rtol": 1e-10, "atol": 1e-12},
    "floquet": {"mode": "none", "gain_a": 1.0, "gain_b": 1.0, "rtol": 1e-10, "atol": 1e-12},
    "equilibria": {"beta": 1.0, "M": [-2.0, 0.0, 2.0]},
    "sweep": {"beta": 1.0, "h_range": [-3.0, 3.0], "c_range": [-3.0, 3.0], "n": 101,
              "output": "atlas.csv", "solve": False, "workers": 1},
}

REQUIRED = {"classify": ["h", "c"], "orbit": ["h", "c"], "floquet": ["orbit"]}


def _schema(cmd):
    return {"type": "object", "properties": SCHEMAS[cmd], "additionalProperties": False}


def load_config(path, cmd) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    validate(doc, cmd, source=str(path))
    return doc


def validate(doc, cmd, source="config") -> None:
    try:
        jsonschema.validate(doc, _schema(cmd))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(k) for k in exc.absolute_path) or "<root>"
        raise ConfigError(f"{source}: {where}: {exc.message}") from None


def resolve(cmd, args) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS[cmd])
    if getattr(args, "config", None):
        cfg.update(load_config(args.config, cmd))
    flags = {k: v for k, v in vars(args).items()
             if k in SCHEMAS[cmd] and v is not None}
    validate(flags, cmd, source="command line")
    cfg.update(flags)
    missing = [k for k in REQUIRED.get(cmd, []) if k not in cfg]
    if missing:
        raise ConfigError(f"{cmd}: missing required setting(s): {', '.join(missing)}")
    return cfg


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _integrator(cfg) -> IntegratorConfig:
    return IntegratorConfig(rtol=cfg["rtol"], atol=cfg["atol"])


def _perturbation(cfg) -> PerturbationSpec:
    spec = PerturbationSpec(Mode.parse(cfg["mode"]), cfg.get("h"), cfg.get("c"),
                            ScalarField.const(cfg["gain_a"]), ScalarField.const(cfg["gain_b"]))
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return spec


# -- subcommands ------------------------------------------------------------------

def cmd_simulate(cfg) -> int:
    p = SystemParams(cfg["beta"])
    spec = _perturbation(cfg)
    icfg = _integrator(cfg)
    has_level = "h" in cfg and "c" in cfg
    if "u0" not in cfg and not (cfg["auto_seed"] and has_level):
        raise ConfigError("simulate needs u0, or auto_seed with h and c")
    lp = LevelPair(cfg["h"], cfg["c"]) if has_level else None

    orbit = None
    if has_level:
        seed = None if cfg["auto_seed"] else cfg.get("u0")
        try:
            orbit = orbit_for_level(lp, p, seed, icfg)
        except (FiberSolveError, NotPeriodicAtScale, PeriodMismatch) as exc:
            if seed is None:
                raise
            print(f"note: no reference orbit on ({lp.h:g}, {lp.c:g}): {exc}", file=sys.stderr)
    if "u0" in cfg and not cfg["auto_seed"]:
        u0 = np.asarray(cfg["u0"], dtype=float)
    else:
        u0 = orbit.samples[0] + np.asarray(cfg["offset"], dtype=float)
    if not in_regular_set(u0, p):
        raise ConfigError("initial state lies on an equilibrium line")

    report = None
    if orbit is not None and cfg["t_end"] > 0:
        ex = ExperimentSpec(p, spec, orbit, u0 - orbit.samples[0], cfg["t_end"], icfg)
        record, verdict = run_experiment(ex)
        traj = record.trajectory
        report = experiment_report(ex, record, verdict)
    else:
        traj = integrate(assemble_rhs(spec, make_context(p)), u0, cfg["t_end"], icfg)

    if cfg["format"] == "csv":
        write_trajectory_csv(cfg["output"], traj)
    else:
        rows = np.column_stack([traj.t, traj.states, traj.H, traj.C])
        with open(cfg["output"], "w") as fh:
            json.dump({"columns": ["t", "x", "y", "z", "H", "C"],
                       "rows": [[float(v) for v in r] for r in rows],
                       "summary": report}, fh)
    drift_H = float(np.max(np.abs(traj.H - traj.H[0])))
    drift_C = float(np.max(np.abs(traj.C - traj.C[0])))
    print(f"steps={len(traj)} t_final={_fmt(traj.t[-1])} status={traj.status} "
          f"drift_H={drift_H:.3e} drift_C={drift_C:.3e}")
    if report is not None:
        print(f"final_dist={report['final_dist']:.3e} verdict={report['verdict']}")
        if cfg.get("report"):
            with open(cfg["report"], "w") as fh:
                json.dump(report, fh, indent=2)
    return EXIT_OK


def cmd_classify(cfg) -> int:
    tag = classify_level_pair(LevelPair(cfg["h"], cfg["c"]), SystemParams(cfg["beta"]))
    if tag.case_path == OUTSIDE:
        print(OUTSIDE)
    else:
        print(f"case {tag.case_path} {tag.sigma_label}")
    return EXIT_OK


def cmd_orbit(cfg) -> int:
    p = SystemParams(cfg["beta"])
    orb = orbit_for_level(LevelPair(cfg["h"], cfg["c"]), p, cfg.get("seed"),
                          _integrator(cfg), cfg["samples"])
    orb.save(cfg["output"])
    print(f"period={_fmt(orb.period)} component={orb.component.value} "
          f"max_fiber_residual={np.abs(orb.fiber_residuals()).max():.3e} -> {cfg['output']}")
    return EXIT_OK


def cmd_floquet(cfg) -> int:
    try:
        orb = Orbit.load(cfg["orbit"])
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot load orbit {cfg['orbit']}: {exc}") from None
    mode = Mode.parse(cfg["mode"])
    res = monodromy(orb, perturbed_field(orb, mode, cfg["gain_a"], cfg["gain_b"]), _integrator(cfg))
    for k, lam in enumerate(res.multipliers):
        tag = " (trivial)" if k == res.trivial_index else ""
        print(f"lambda_{k} = {_fmt(lam.real)} {'+' if lam.imag >= 0 else '-'} "
              f"{_fmt(abs(lam.imag))}i  |lambda|={abs(lam):.10f}{tag}")
    print(f"det={res.det:.10e} exp(int div)={np.exp(res.div_integral):.10e}")
    if cfg.get("output"):
        with open(cfg["output"], "w") as fh:
            json.dump({"mode": mode.name, "multipliers": res.to_json(),
                       "det": res.det, "div_integral": res.div_integral}, fh, indent=2)
    return EXIT_OK


def equilibria_table(beta: float, Ms) -> list[dict]:
    p = SystemParams(beta)
    rows = []
    for fam in (Family.E1, Family.E2, Family.E3):
        for M in Ms:
            u = equilibrium(fam, float(M), p)
            v = classify_equilibrium(u, p)
            rows.append({"family": fam.name, "M": float(M), "x": u[0], "y": u[1], "z": u[2],
                         "classified_as": v.family.name, "stability": v.stability.name})
    return rows


def cmd_equilibria(cfg) -> int:
    rows = equilibria_table(cfg["beta"], cfg["M"])
    print(f"{'family':<7}{'M':>8}  {'point':<26}{'stability'}")
    for r in rows:
        point = f"({r['x']:g}, {r['y']:g}, {r['z']:g})"
        print(f"{r['family']:<7}{r['M']:>8g}  {point:<26}{r['stability']}")
    if cfg.get("output"):
        with open(cfg["output"], "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in r.items()})
    return EXIT_OK


def _sweep_block(args):
    hs, cs, beta, solve = args
    p = SystemParams(beta)
    labels, overlaps = classify_grid(hs, cs, p)
    H, Cg = np.meshgrid(hs, cs, indexing="ij")
    resid = np.full(H.shape, np.nan)
    if solve:
        listed = labels != OUTSIDE
        if listed.any():
            from ._kernels import fiber_newton_batch
            seeds, _ = fiber_seeds(H[listed], Cg[listed], beta)
            _, res, _, flags = fiber_newton_batch(H[listed], Cg[listed], beta, seeds)
            r = np.where(flags == 0, np.abs(res), np.inf)
            resid[listed] = r
    return H, Cg, labels, overlaps, resid


def sweep(beta, h_range, c_range, n, solve=False, workers=1):
    hs = np.linspace(h_range[0], h_range[1], n)
    cs = np.linspace(c_range[0], c_range[1], n)
    blocks = [(b, cs, beta, solve) for b in np.array_split(hs, max(1, min(workers, n)))]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            parts = list(pool.map(_sweep_block, blocks))
    else:
        parts = [_sweep_block(b) for b in blocks]
    H = np.concatenate([q[0] for q in parts])
    Cg = np.concatenate([q[1] for q in parts])
    labels = np.concatenate([q[2] for q in parts])
    resid = np.concatenate([q[4] for q in parts])
    return H, Cg, labels, sum(q[3] for q in parts), resid


def cmd_sweep(cfg) -> int:
    H, Cg, labels, overlaps, resid = sweep(cfg["beta"], cfg["h_range"], cfg["c_range"],
                                           cfg["n"], cfg["solve"], cfg["workers"])
    with open(cfg["output"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h", "c", "case", "sigma", "fiber_residual"])
        for h, c, lab, r in zip(H.ravel(), Cg.ravel(), labels.ravel(), resid.ravel()):
            w.writerow([_fmt(h), _fmt(c), lab, SIGMA_LABELS.get(lab, ""),
                        "" if np.isnan(r) else _fmt(r)])
    listed = int(np.count_nonzero(labels != OUTSIDE))
    print(f"cells={labels.size} listed={listed} disjointness_violations={overlaps}")
    if cfg["solve"]:
        bad = int(np.count_nonzero(~(resid[labels != OUTSIDE] <= 1e-10)))
        print(f"fiber_failures={bad}")
        if bad:
            return EXIT_NUMERIC
    return EXIT_NUMERIC if overlaps else EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "classify": cmd_classify, "orbit": cmd_orbit,
            "floquet": cmd_floquet, "equilibria": cmd_equilibria, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rablab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, *keys):
        sp.add_argument("--config", help="JSON config file; flags override its keys")
        for k in keys:
            sp.add_argument(f"--{k.replace('_', '-')}", dest=k, type=float)

    s = sub.add_parser("simulate", help="integrate one trajectory")
    common(s, "beta", "h", "c", "gain_a", "gain_b", "t_end", "rtol", "atol")
    s.add_argument("--mode", type=str.lower, choices=[m.name.lower() for m in Mode])
    s.add_argument("--u0", type=float, nargs=3)
    s.add_argument("--offset", type=float, nargs=3)
    s.add_argument("--auto-seed", dest="auto_seed", action="store_const", const=True)
    s.add_argument("-o", "--output")
    s.add_argument("--format", choices=["csv", "json"])
    s.add_argument("--report", help="write the experiment report JSON here")

    s = sub.add_parser("classify", help="locate (h, c) in the region atlas")
    common(s, "beta", "h", "c")

    s = sub.add_parser("orbit", help="periodic orbit through a fiber point")
    common(s, "beta", "h", "c", "rtol", "atol")
    s.add_argument("--seed", type=float, nargs=3)
    s.add_argument("--samples", type=int)
    s.add_argument("-o", "--output")

    s = sub.add_parser("floquet", help="monodromy multipliers of a saved orbit")
    common(s, "gain_a", "gain_b", "rtol", "atol")
    s.add_argument("orbit", nargs="?")
    s.add_argument("--mode", type=str.lower, choices=[m.name.lower() for m in Mode])
    s.add_argument("-o", "--output")

    s = sub.add_parser("equilibria", help="stability table of the equilibrium families")
    common(s, "beta")
    s.add_argument("--M", dest="M", type=float, nargs="+")
    s.add_argument("-o", "--output")

    s = sub.add_parser("sweep", help="label a grid of (h, c) pairs")
    common(s, "beta")
    s.add_argument("--h-range", dest="h_range", type=float, nargs=2)
    s.add_argument("--c-range", dest="c_range", type=float, nargs=2)
    s.add_argument("-n", dest="n", type=int)
    s.add_argument("--solve", action="store_const", const=True,
                   help="also solve for a fiber point in every listed cell")
    s.add_argument("--workers", type=int)
    s.add_argument("-o", "--output")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args.command, args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())

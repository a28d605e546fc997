import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest
from scipy.linalg import expm

from rabinovich_lab.field_core import Mode, PerturbationSpec, assemble_rhs
from rabinovich_lab.integrator import (CSV_HEADER, EventSpec, IntegratorConfig, NoCrossing,
                                       StepBudgetExhausted, integrate, integrate_python,
                                       integrate_until_event, monitor_scalars,
                                       read_trajectory_csv, write_trajectory_csv)

A = np.array([[-0.3, 1.0, 0.0], [-1.0, -0.3, 0.2], [0.0, -0.2, -0.1]])
U_FIB = np.array([0.0, 1.7112, 0.7321])


def linear(u):
    return A @ u


def test_zero_span_keeps_initial_state(ctx1):
    f = assemble_rhs(PerturbationSpec(), ctx1)
    tr = integrate(f, U_FIB, 0.0)
    assert tr.t.tolist() == [0.0]
    assert np.array_equal(tr.states[0], U_FIB)


def test_negative_span_rejected(ctx1):
    with pytest.raises(ValueError):
        integrate(assemble_rhs(PerturbationSpec(), ctx1), U_FIB, -1.0)


@pytest.mark.parametrize("kw", [{"rtol": 0.0}, {"rtol": 1e-2}, {"atol": 0.0}, {"h_init": -1.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        IntegratorConfig(**kw)


def test_error_tracks_tolerance():
    u0 = np.array([1.0, 0.5, -0.2])
    exact = expm(3.0 * A) @ u0
    tols = [1e-6, 1e-8, 1e-10, 1e-12]
    errs = []
    for tol in tols:
        tr = integrate(linear, u0, 3.0, IntegratorConfig(rtol=tol, atol=tol * 1e-2))
        errs.append(np.abs(tr.states[-1] - exact).max())
    errs = np.array(errs)
    assert np.all(np.diff(errs) < 0)
    assert np.all(errs <= 100 * np.array(tols))
    slope = np.polyfit(np.log10(tols), np.log10(errs), 1)[0]
    assert 0.7 <= slope <= 1.3


def test_conservation_unperturbed(ctx1):
    tr = integrate(assemble_rhs(PerturbationSpec(), ctx1), U_FIB, 50.0, IntegratorConfig(rtol=1e-10))
    assert np.abs(tr.H - tr.H[0]).max() <= 1e-8
    assert np.abs(tr.C - tr.C[0]).max() <= 1e-8


def test_time_reversal(ctx1):
    f = assemble_rhs(PerturbationSpec(), ctx1)
    fwd = integrate(f, U_FIB, 5.0)
    back = integrate(lambda u: -f(u), fwd.states[-1], 5.0)
    assert np.linalg.norm(back.states[-1] - U_FIB) < 1e-6


def test_dense_output_exact_at_mesh(ctx1):
    tr = integrate(assemble_rhs(PerturbationSpec(), ctx1), U_FIB, 3.0)
    assert np.array_equal(tr(tr.t)[:, :3], tr.states)


def test_dense_output_between_mesh_points():
    u0 = np.array([1.0, 0.5, -0.2])
    tr = integrate(linear, u0, 3.0, IntegratorConfig(rtol=1e-10, atol=1e-12))
    ts = np.linspace(0.05, 2.95, 37)
    exact = np.array([expm(t * A) @ u0 for t in ts])
    assert np.abs(tr(ts) - exact).max() < 1e-8


def test_linear_event():
    ev = EventSpec(np.array([1.0, 0, 0]), np.array([1.0, 0, 0]))
    state, t, _ = integrate_until_event(lambda u: np.array([1.0, 0, 0]), np.zeros(3), ev, 10.0)
    assert abs(t - 1.0) < 1e-12
    assert np.allclose(state, [1, 0, 0], atol=1e-12)


def test_event_residual_on_orbit(ctx1):
    f = assemble_rhs(PerturbationSpec(), ctx1)
    ev = EventSpec(U_FIB, f(U_FIB))
    state, t, traj = integrate_until_event(f, U_FIB, ev, 100.0)
    assert abs(ev.value(state)) <= 1e-12
    assert t > 1.0
    assert traj.status == "EVENT"


def test_event_direction_filter():
    ev_down = EventSpec(np.array([1.0, 0, 0]), np.array([1.0, 0, 0]), direction=-1)
    with pytest.raises(NoCrossing):
        integrate_until_event(lambda u: np.array([1.0, 0, 0]), np.zeros(3), ev_down, 3.0)


def test_departure_crossing_ignored():
    # start on the section; only the return counts
    rot = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 0]])
    ev = EventSpec(np.array([1.0, 0, 0]), np.array([0.0, 1, 0]))
    state, t, _ = integrate_until_event(lambda u: rot @ u, np.array([1.0, 0, 0]), ev, 20.0)
    assert abs(t - 2 * np.pi) < 1e-9
    assert np.allclose(state, [1, 0, 0], atol=1e-9)


def test_blow_up_is_a_status_not_an_error():
    tr = integrate(lambda u: np.array([u[0] ** 2, 0.0, 0.0]), np.array([1.0, 0, 0]), 2.0)
    assert tr.diverged
    assert np.abs(tr.states[-1]).max() > 1e6
    assert tr.t[-1] < 1.0


def test_step_budget():
    with pytest.raises(StepBudgetExhausted):
        integrate(linear, np.ones(3), 100.0, IntegratorConfig(max_steps=10))


def test_monitor_constant_column(ctx1):
    tr = integrate(assemble_rhs(PerturbationSpec(), ctx1), U_FIB, 1.0)
    tab = monitor_scalars(tr, [lambda u: 3.5, ctx1.C])
    assert tab.shape == (len(tr), 3)
    assert np.all(tab[:, 1] == 3.5)
    assert np.array_equal(tab[:, 0], tr.t)


def test_csv_round_trip(ctx1, tmp_path):
    tr = integrate(assemble_rhs(PerturbationSpec(Mode.FULL, 0.0, 2.0), ctx1), U_FIB + 0.01, 2.0)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, tr)
    assert path.read_text().splitlines()[0] == ",".join(CSV_HEADER) == "t,x,y,z,H,C"
    back = read_trajectory_csv(path)
    assert np.array_equal(back, np.column_stack([tr.t, tr.states, tr.H, tr.C]))


def test_csv_rejects_foreign_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,x,y,z\n0,1,2,3\n")
    with pytest.raises(ValueError):
        read_trajectory_csv(path)


def test_python_path_matches_compiled(ctx1):
    f = assemble_rhs(PerturbationSpec(Mode.FULL, 0.0, 2.0), ctx1)
    compiled = integrate(f, U_FIB + 0.02, 2.0)
    plain = integrate_python(lambda y: f(y), U_FIB + 0.02, 2.0)
    assert np.abs(compiled.states[-1] - plain.states[-1]).max() < 1e-12


def test_numpy_backend_agrees(tmp_path):
    script = textwrap.dedent("""
        import sys, numpy as np
        from rabinovich_lab import BACKEND
        from rabinovich_lab.field_core import Mode, PerturbationSpec, assemble_rhs
        from rabinovich_lab.integrator import integrate
        from rabinovich_lab.rabinovich import SystemParams, make_context
        f = assemble_rhs(PerturbationSpec(Mode.FULL, 0.0, 2.0), make_context(SystemParams(1.0)))
        tr = integrate(f, np.array([0.02, 1.73, 0.75]), 1.5)
        np.save(sys.argv[1], tr.states[-1])
        print(BACKEND)
    """)
    out = {}
    for backend in ("numba", "numpy"):
        target = tmp_path / f"{backend}.npy"
        env = dict(os.environ, RABLAB_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", script, str(target)], env=env,
                             capture_output=True, text=True, check=True)
        assert res.stdout.strip() == backend
        out[backend] = np.load(target)
    assert np.abs(out["numba"] - out["numpy"]).max() < 1e-12


def test_bad_backend_name():
    env = dict(os.environ, RABLAB_BACKEND="fortran")
    res = subprocess.run([sys.executable, "-c", "import rabinovich_lab"], env=env,
                         capture_output=True, text=True)
    assert res.returncode != 0
    assert "RABLAB_BACKEND" in res.stderr

"""Simulation and stabilization of periodic orbits in the Rabinovich system.

Set ``RABLAB_BACKEND=numpy`` before import to bypass numba compilation.
"""

from ._backend import BACKEND, NUMBA_AVAILABLE
from .field_core import (FieldContext, Mode, PerturbationSpec, ScalarField, VectorField,
                         assemble_rhs, cross, jacobian_fd)
from .integrator import (EventSpec, IntegrationError, IntegratorConfig, Trajectory,
                         integrate, integrate_until_event, integrate_variational,
                         read_trajectory_csv, write_trajectory_csv)
from .orbit_lab import (Component, FiberPoint, MonodromyResult, Orbit, detect_period,
                        limit_period, monodromy, multipliers_of, orbit_for_level,
                        period_probe, perturbed_field, solve_fiber_point)
from .rabinovich import (Family, LevelPair, RegionTag, Stability, SystemParams, casimir,
                         classify_equilibrium, classify_grid, classify_level_pair,
                         explicit_perturbed_rhs, hamiltonian, make_context)
from .stability_report import (DecayRecord, ExperimentSpec, Verdict, VerdictKind,
                               dist_to_orbit, lyapunov_rate_check, run_experiment)

__version__ = "0.1.0"

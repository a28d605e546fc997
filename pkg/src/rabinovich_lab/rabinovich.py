"""The Rabinovich system ``x' = yz + b y, y' = -xz + b x, z' = xy``.

Energy ``H_b = (x^2 + y^2)/4 - b z`` and Casimir ``C = (y^2 - x^2)/2 + z^2``
realize it as ``u' = grad H_b x grad C``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .field_core import FieldContext, Mode, PerturbationSpec, ScalarField

EQ_TOL = 1e-12


@dataclass(frozen=True)
class SystemParams:
    beta: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.beta):
            raise ValueError("beta must be finite")


@dataclass(frozen=True)
class LevelPair:
    h: float
    c: float


def _xyz(u):
    u = np.asarray(u, dtype=float)
    return u[..., 0], u[..., 1], u[..., 2]


def hamiltonian(u, p: SystemParams):
    x, y, z = _xyz(u)
    return 0.25 * (x * x + y * y) - p.beta * z


def casimir(u):
    x, y, z = _xyz(u)
    return 0.5 * (y * y - x * x) + z * z


def grad_hamiltonian(u, p: SystemParams) -> np.ndarray:
    x, y, z = _xyz(u)
    return np.stack([0.5 * x, 0.5 * y, np.full_like(z, -p.beta)], axis=-1)


def grad_casimir(u) -> np.ndarray:
    x, y, z = _xyz(u)
    return np.stack([-x, y, 2.0 * z], axis=-1)


def poisson_matrix(u) -> np.ndarray:
    """Minus Lie-Poisson tensor; ``poisson_matrix(u) @ grad_hamiltonian(u)`` is the field."""
    x, y, z = (float(v) for v in np.asarray(u, dtype=float))
    return np.array([[0.0, 2 * z, -y],
                     [-2 * z, 0.0, -x],
                     [y, x, 0.0]])


def rhs(u, p: SystemParams) -> np.ndarray:
    """Unperturbed Rabinovich field written out componentwise."""
    x, y, z = _xyz(u)
    b = p.beta
    return np.stack([y * z + b * y, -x * z + b * x, x * y], axis=-1)


def sigma(u) -> np.ndarray:
    """The symmetry ``(x, y, z) -> (-x, -y, z)``."""
    u = np.array(u, dtype=float, copy=True)
    u[..., 0] *= -1
    u[..., 1] *= -1
    return u


def make_context(p: SystemParams) -> FieldContext:
    beta = float(p.beta)
    return FieldContext(
        H=ScalarField(lambda u: hamiltonian(u, p)),
        C=ScalarField(casimir),
        grad_H=lambda u: grad_hamiltonian(u, p),
        grad_C=grad_casimir,
        kernel=(_kernels.rabinovich_field, _kernels.rabinovich_variational, (beta,)),
    )


# -- equilibria ---------------------------------------------------------------

class Family(enum.Enum):
    E1 = "E1"
    E2 = "E2"
    E3 = "E3"
    NONE = "NONE"


class Stability(enum.Enum):
    NONLINEARLY_STABLE = "NONLINEARLY_STABLE"
    UNSTABLE = "UNSTABLE"


@dataclass(frozen=True)
class EquilibriumVerdict:
    family: Family
    M: float | None = None
    stability: Stability | None = None


def equilibrium(family: Family, M: float, p: SystemParams) -> np.ndarray:
    """Member of an equilibrium family: ``(M,0,b)``, ``(0,M,-b)`` or ``(0,0,M)``."""
    b = float(p.beta)
    if family is Family.E1:
        return np.array([M, 0.0, b])
    if family is Family.E2:
        return np.array([0.0, M, -b])
    if family is Family.E3:
        return np.array([0.0, 0.0, M])
    raise ValueError("NONE is not an equilibrium family")


def _stability(family: Family, M: float, beta: float) -> Stability:
    S, U = Stability.NONLINEARLY_STABLE, Stability.UNSTABLE
    if family is Family.E1:
        # only (0,0,b) is excluded, and only when b != 0
        return U if (beta != 0 and M == 0) else S
    if family is Family.E2:
        if beta != 0:
            return U
        return S if M == 0 else U
    if beta == 0:
        return S
    return S if abs(M) > abs(beta) else U


def classify_equilibrium(u, p: SystemParams, tol: float = EQ_TOL) -> EquilibriumVerdict:
    """Family and nonlinear-stability verdict of an equilibrium.

    Families are tried in the order E1, E2, E3; the points ``(0,0,+-b)`` sit
    in two families and get the same verdict from either.
    """
    x, y, z = (float(v) for v in np.asarray(u, dtype=float))
    b = float(p.beta)
    if abs(y) <= tol and abs(z - b) <= tol:
        fam, M = Family.E1, x
    elif abs(x) <= tol and abs(z + b) <= tol:
        fam, M = Family.E2, y
    elif abs(x) <= tol and abs(y) <= tol:
        fam, M = Family.E3, z
    else:
        return EquilibriumVerdict(Family.NONE)
    if abs(M) <= tol:
        M = 0.0
    if fam is Family.E3 and abs(abs(M) - abs(b)) <= tol:
        M = float(np.copysign(abs(b), M))
    return EquilibriumVerdict(fam, M, _stability(fam, M, b))


def in_regular_set(u, p: SystemParams, tol: float = EQ_TOL) -> bool:
    """True off the three equilibrium lines, where grad H and grad C are independent."""
    x, y, z = (float(v) for v in np.asarray(u, dtype=float))
    b = float(p.beta)
    on_e1 = abs(y) <= tol and abs(z - b) <= tol
    on_e2 = abs(x) <= tol and abs(z + b) <= tol
    on_e3 = abs(x) <= tol and abs(y) <= tol
    return not (on_e1 or on_e2 or on_e3)


# -- energy-Casimir atlas -----------------------------------------------------

OUTSIDE = "OUTSIDE_S_LIST"


@dataclass(frozen=True)
class RegionTag:
    case_path: str
    sigma_label: str = ""

    @property
    def listed(self) -> bool:
        return self.case_path != OUTSIDE


# Inequalities exactly as listed, strict comparisons on floats; each takes
# broadcastable (h, c, b2) with b2 = beta^2.
_REGIONS_BETA_NONZERO = {
    "1.a.i": ("Σ_{(3,β)↔(3,β)}^{(s,−)↔(s,+)}",
              lambda h, c, b2: (b2 * c > h * h) & (c > b2)),
    "1.a.ii": ("Σ_{(3,β)}^{(s,−)}",
               lambda h, c, b2: (b2 * c == h * h) & (c > b2)),
    "1.a.iii": ("Σ_{(3,β)→(2,β)}^{(s,±)→(u,*)}",
                lambda h, c, b2: (2 * h - b2 < c) & (c < h * h / b2) & (h > b2)),
    "1.a.iv": ("Σ_{(2,β)→}^{(u,*)→}",
               lambda h, c, b2: (b2 < c) & (c < 2 * h - b2)),
    "1.b.i": ("Σ_{(1,β)→(2,β)}^{u→(u,0)}",
              lambda h, c, b2: (-b2 < h) & (h < b2) & (c == b2)),
    "1.b.ii": ("Σ_{(2,β)→}^{(u,0)→}",
               lambda h, c, b2: (h > b2) & (c == b2)),
    "1.c.i": ("Σ_{(1,β)→(3,β)}^{(s,−)→(u,−)}",
              lambda h, c, b2: (-b2 < h) & (h < 0) & (np.maximum(-2 * h - b2, 0.0) < c)
              & (c < h * h / b2)),
    "1.c.ii": ("Σ_{(3,β)→(3,β)}^{(u,−)→(u,+)}",
               lambda h, c, b2: (-b2 < h) & (h < b2) & (h * h / b2 < c) & (c < b2)),
    "1.c.iii": ("Σ_{(3,β)→}^{(u,+)→}",
                lambda h, c, b2: (h > 0) & (0 < c) & (c < np.minimum(b2, h * h / b2))),
    "1.d.i": ("Σ_{(1,β)→(3,β)}^{(s,0)→(u,0)}",
              lambda h, c, b2: (-b2 / 2 < h) & (h < 0) & (c == 0)),
    "1.d.ii": ("Σ_{(3,β)→}^{(u,0)→}",
               lambda h, c, b2: (h > 0) & (c == 0)),
    "1.e": ("Σ_{(1,β)→}^{(s,+)→}",
            lambda h, c, b2: (-2 * h - b2 < c) & (c < 0)),
}

_REGIONS_BETA_ZERO = {
    "2.a.i": ("Σ_{(3,0)→(2,0)}^{(s,*)→u}",
              lambda h, c: (h > 0) & (c > 2 * h)),
    "2.a.ii": ("Σ_{(2,0)→}^{u→}",
               lambda h, c: (0 < c) & (c < 2 * h)),
    "2.b": ("Σ_{(1,0)→}^{(s,0)→}",
            lambda h, c: (h > 0) & (c == 0)),
    "2.c": ("Σ_{(1,0)→}^{(s,*)→}",
            lambda h, c: (-2 * h < c) & (c < 0)),
}

SIGMA_LABELS = {k: v[0] for k, v in {**_REGIONS_BETA_NONZERO, **_REGIONS_BETA_ZERO}.items()}


def region_masks(h, c, p: SystemParams) -> dict[str, np.ndarray]:
    """Boolean membership of ``(h, c)`` (scalars or arrays) in every listed region."""
    h = np.asarray(h, dtype=float)
    c = np.asarray(c, dtype=float)
    b = float(p.beta)
    with np.errstate(invalid="ignore"):
        if b != 0:
            b2 = b * b
            return {k: np.broadcast_to(fn(h, c, b2), np.broadcast(h, c).shape)
                    for k, (_, fn) in _REGIONS_BETA_NONZERO.items()}
        return {k: np.broadcast_to(fn(h, c), np.broadcast(h, c).shape)
                for k, (_, fn) in _REGIONS_BETA_ZERO.items()}


def matching_regions(lp: LevelPair, p: SystemParams) -> list[str]:
    return [k for k, m in region_masks(lp.h, lp.c, p).items() if bool(m)]


def classify_level_pair(lp: LevelPair, p: SystemParams) -> RegionTag:
    """Listed region containing ``(h, c)``, or ``OUTSIDE_S_LIST``.

    Raises ``RuntimeError`` if two listed regions claim the pair, which the
    atlas is supposed to make impossible.
    """
    hits = matching_regions(lp, p)
    if not hits:
        return RegionTag(OUTSIDE)
    if len(hits) > 1:
        raise RuntimeError(f"regions overlap at {lp}: {hits}")
    return RegionTag(hits[0], SIGMA_LABELS[hits[0]])


def classify_grid(hs, cs, p: SystemParams):
    """Label a grid of level pairs.

    Returns ``(labels, overlaps)``: an object array of case paths and the
    number of grid points accepted by more than one region.
    """
    H, Cg = np.meshgrid(np.asarray(hs, float), np.asarray(cs, float), indexing="ij")
    masks = region_masks(H, Cg, p)
    labels = np.full(H.shape, OUTSIDE, dtype=object)
    hits = np.zeros(H.shape, dtype=np.int64)
    for key, m in masks.items():
        labels[m] = key
        hits += m
    return labels, int(np.count_nonzero(hits > 1))


# -- expanded perturbed systems -----------------------------------------------

def explicit_perturbed_rhs(u, p: SystemParams, spec: PerturbationSpec) -> np.ndarray:
    """Expanded polynomial right-hand sides of the perturbed systems.

    Transcribed term by term, independent of :mod:`field_core`; serves as the
    cross-check for :func:`field_core.assemble_rhs`.  ``gain_a`` multiplies the
    ``(H - h)`` term and ``gain_b`` the ``(C - c)`` term.
    """
    u = np.asarray(u, dtype=float)
    x, y, z = u[..., 0], u[..., 1], u[..., 2]
    b = p.beta
    dx = y * z + b * y
    dy = -x * z + b * x
    dz = x * y
    mode = spec.mode
    if mode.touches_energy:
        a = spec.gain_a(u)
        s = 1.0 if mode is Mode.CASIMIR_LEAF_DESTABILIZE else -1.0
        eh = (x ** 2 + y ** 2) / 4 - b * z - spec.h
        dx = dx + s * a * eh * (x * y ** 2 + 2 * x * z ** 2 - 2 * b * x * z)
        dy = dy + s * a * eh * (y * x ** 2 + 2 * y * z ** 2 + 2 * b * y * z)
        dz = dz + s * a * eh * (-b * x ** 2 + z * x ** 2 - b * y ** 2 - y ** 2 * z)
    if mode.touches_casimir:
        g = spec.gain_b(u)
        s = -1.0 if mode is Mode.ENERGY_LEAF_DESTABILIZE else 1.0
        ec = z ** 2 + (y ** 2 - x ** 2) / 2 - spec.c
        dx = dx + s * g * ec * (x * b ** 2 - x * z * b + x * y ** 2 / 2)
        dy = dy + s * g * ec * (-y * z * b - b ** 2 * y - x ** 2 * y / 2)
        dz = dz + s * g * ec * (b * x ** 2 - z * x ** 2 - b * y ** 2 - y ** 2 * z) / 2
    return np.stack([dx, dy, dz], axis=-1)

"""Algebra of three-dimensional Hamilton-Poisson fields ``u' = nu (grad H x grad C)``.

All state-valued functions accept arrays of shape ``(..., 3)`` and broadcast
over the leading axes, so a single call can evaluate a field on many states.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _kernels


class Mode(enum.IntEnum):
    """Which leaf corrections are added to the unperturbed field."""

    NONE = _kernels.MODE_NONE
    CASIMIR_LEAF_STABILIZE = _kernels.MODE_CASIMIR_STAB
    CASIMIR_LEAF_DESTABILIZE = _kernels.MODE_CASIMIR_DESTAB
    ENERGY_LEAF_STABILIZE = _kernels.MODE_ENERGY_STAB
    ENERGY_LEAF_DESTABILIZE = _kernels.MODE_ENERGY_DESTAB
    FULL = _kernels.MODE_FULL

    @property
    def touches_energy(self) -> bool:
        """True when the mode carries the ``(H - h)`` correction term."""
        return self in (Mode.CASIMIR_LEAF_STABILIZE, Mode.CASIMIR_LEAF_DESTABILIZE, Mode.FULL)

    @property
    def touches_casimir(self) -> bool:
        """True when the mode carries the ``(C - c)`` correction term."""
        return self in (Mode.ENERGY_LEAF_STABILIZE, Mode.ENERGY_LEAF_DESTABILIZE, Mode.FULL)

    @property
    def destabilizing(self) -> bool:
        return self in (Mode.CASIMIR_LEAF_DESTABILIZE, Mode.ENERGY_LEAF_DESTABILIZE)

    @classmethod
    def parse(cls, name: str) -> "Mode":
        key = name.strip().upper().replace("-", "_")
        aliases = {"CASIMIR_STABILIZE": "CASIMIR_LEAF_STABILIZE",
                   "CASIMIR_DESTABILIZE": "CASIMIR_LEAF_DESTABILIZE",
                   "ENERGY_STABILIZE": "ENERGY_LEAF_STABILIZE",
                   "ENERGY_DESTABILIZE": "ENERGY_LEAF_DESTABILIZE"}
        key = aliases.get(key, key)
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown perturbation mode {name!r}") from None


@dataclass(frozen=True)
class ScalarField:
    """A real-valued function of the state.

    ``fn`` receives an array of shape ``(..., 3)`` and returns shape ``(...)``.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    constant: bool = False
    value: Optional[float] = None

    @classmethod
    def const(cls, value: float) -> "ScalarField":
        value = float(value)

        def fn(u, _v=value):
            return np.full(np.shape(u)[:-1], _v)

        return cls(fn=fn, constant=True, value=value)

    def __call__(self, u) -> np.ndarray:
        return self.fn(np.asarray(u, dtype=float))


ONE = ScalarField.const(1.0)


@dataclass(frozen=True)
class FieldContext:
    """Energy ``H``, Casimir ``C``, their gradients and the conformal factor ``nu``.

    ``kernel`` optionally names a compiled field for this system: a tuple
    ``(field_kernel, variational_kernel, base_params)`` following the calling
    convention of :func:`rabinovich_lab._kernels.rabinovich_field`.  It is only
    used when every gain is constant and ``nu`` is the constant 1.
    """

    H: ScalarField
    C: ScalarField
    grad_H: Callable[[np.ndarray], np.ndarray]
    grad_C: Callable[[np.ndarray], np.ndarray]
    nu: ScalarField = ONE
    kernel: Optional[tuple] = None


@dataclass(frozen=True)
class PerturbationSpec:
    mode: Mode = Mode.NONE
    h: Optional[float] = None
    c: Optional[float] = None
    gain_a: ScalarField = ONE
    gain_b: ScalarField = ONE

    def validate(self) -> None:
        if self.mode.touches_energy and self.h is None:
            raise ValueError(f"mode {self.mode.name} needs a target energy level h")
        if self.mode.touches_casimir and self.c is None:
            raise ValueError(f"mode {self.mode.name} needs a target Casimir level c")
        for name, gain in (("gain_a", self.gain_a), ("gain_b", self.gain_b)):
            if gain.constant and not gain.value > 0:
                raise ValueError(f"{name} must be strictly positive, got {gain.value}")

    def to_dict(self) -> dict:
        def gain(g):
            return g.value if g.constant else "state-dependent"
        return {"mode": self.mode.name, "h": self.h, "c": self.c,
                "gain_a": gain(self.gain_a), "gain_b": gain(self.gain_b)}


def cross(a, b) -> np.ndarray:
    """Right-handed cross product over the last axis."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.stack([
        a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1],
        a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2],
        a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0],
    ], axis=-1)


def dot(a, b) -> np.ndarray:
    return np.sum(np.asarray(a) * np.asarray(b), axis=-1)


def _positive_gain(gain: ScalarField, u: np.ndarray) -> np.ndarray:
    g = gain(u)
    if np.any(~(g > 0)):
        raise ValueError("gain function must be strictly positive at every queried state")
    return g


def unperturbed_rhs(u, ctx: FieldContext) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return ctx.nu(u)[..., None] * cross(ctx.grad_H(u), ctx.grad_C(u))


def casimir_leaf_perturbation(u, ctx: FieldContext, h: float, gain: ScalarField,
                              destabilize: bool = False) -> np.ndarray:
    """``-/+ gain (H - h) [grad C x (grad H x grad C)]``, tangent to the Casimir leaf.

    Along the stabilizing sign ``dH/dt`` picks up ``-gain (H - h) |grad H x grad C|^2``.
    """
    u = np.asarray(u, dtype=float)
    g = _positive_gain(gain, u)
    gh, gc = ctx.grad_H(u), ctx.grad_C(u)
    s = 1.0 if destabilize else -1.0
    return (s * g * (ctx.H(u) - h))[..., None] * cross(gc, cross(gh, gc))


def energy_leaf_perturbation(u, ctx: FieldContext, c: float, gain: ScalarField,
                             destabilize: bool = False) -> np.ndarray:
    """``+/- gain (C - c) [grad H x (grad H x grad C)]``, tangent to the energy leaf.

    Along the stabilizing sign ``dC/dt`` picks up ``-gain (C - c) |grad H x grad C|^2``.
    """
    u = np.asarray(u, dtype=float)
    g = _positive_gain(gain, u)
    gh, gc = ctx.grad_H(u), ctx.grad_C(u)
    s = -1.0 if destabilize else 1.0
    return (s * g * (ctx.C(u) - c))[..., None] * cross(gh, cross(gh, gc))


@dataclass(frozen=True)
class VectorField:
    """Evaluable right-hand side built by :func:`assemble_rhs`.

    ``compiled`` is ``(field_kernel, variational_kernel, params)`` when a
    compiled equivalent exists; the integrator prefers it.
    """

    spec: PerturbationSpec
    ctx: FieldContext
    compiled: Optional[tuple] = field(default=None, compare=False)

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        spec, ctx = self.spec, self.ctx
        out = unperturbed_rhs(u, ctx)
        mode = spec.mode
        if mode.touches_energy:
            out = out + casimir_leaf_perturbation(
                u, ctx, spec.h, spec.gain_a, destabilize=mode.destabilizing)
        if mode.touches_casimir:
            out = out + energy_leaf_perturbation(
                u, ctx, spec.c, spec.gain_b, destabilize=mode.destabilizing)
        return out


def assemble_rhs(spec: PerturbationSpec, ctx: FieldContext) -> VectorField:
    """Unperturbed field plus the correction terms selected by ``spec.mode``.

    The ``(H - h)`` correction is weighted by ``gain_a`` and the ``(C - c)``
    correction by ``gain_b`` in every mode.
    """
    spec.validate()
    compiled = None
    gains_const = spec.gain_a.constant and spec.gain_b.constant
    if ctx.kernel is not None and gains_const and ctx.nu.constant and ctx.nu.value == 1.0:
        field_kernel, var_kernel, base = ctx.kernel
        params = np.array(list(base) + [
            float(int(spec.mode)),
            0.0 if spec.h is None else float(spec.h),
            0.0 if spec.c is None else float(spec.c),
            spec.gain_a.value,
            spec.gain_b.value,
        ])
        compiled = (field_kernel, var_kernel, params)
    return VectorField(spec=spec, ctx=ctx, compiled=compiled)


def jacobian_fd(fieldfn: Callable, u, step: Optional[float] = None) -> np.ndarray:
    """Central-difference Jacobian of a vector field at ``u``."""
    u = np.asarray(u, dtype=float)
    if step is None:
        step = 1e-6 * (1.0 + np.linalg.norm(u))
    jac = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        jac[:, j] = (fieldfn(u + e) - fieldfn(u - e)) / (2 * step)
    return jac

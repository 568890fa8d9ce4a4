"""Electrical model of the distribution network.

``n_s`` controllable voltage sources feed one capacitive load bus through
series RL lines. The load is a parallel constant-current / constant-admittance
(ZI) element evaluated at the instantaneous bus voltage.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelDomainError",
    "PlantParams",
    "PlantState",
    "PlantStateDerivative",
    "plant_derivative",
    "reference_plant_params",
]


class ModelDomainError(ValueError):
    """Raised for non-finite or out-of-domain model inputs."""


def _vec(value, n: int | None = None, name: str = "value") -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float)).copy()
    if arr.ndim != 1:
        raise ModelDomainError(f"{name} must be one-dimensional")
    if n is not None and arr.size == 1 and n > 1:
        arr = np.full(n, arr[0])
    if n is not None and arr.size != n:
        raise ModelDomainError(f"{name} has length {arr.size}, expected {n}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PlantParams:
    """Physical network parameters in SI units.

    ``L_min``/``L_max`` are the known bounds on the (otherwise unknown)
    line inductances; each ``L_tau[i]`` must lie strictly inside them.
    """

    L_tau: np.ndarray
    R_tau: np.ndarray
    C_dc: float
    I_ell: float
    Y: float = 1e-3
    L_min: np.ndarray | None = None
    L_max: np.ndarray | None = None
    n_s: int = field(init=False)

    def __post_init__(self):
        L = _vec(self.L_tau, name="L_tau")
        n = L.size
        R = _vec(self.R_tau, n, "R_tau")
        L_min = _vec(0.5 * L if self.L_min is None else self.L_min, n, "L_min")
        L_max = _vec(1.5 * L if self.L_max is None else self.L_max, n, "L_max")
        object.__setattr__(self, "L_tau", L)
        object.__setattr__(self, "R_tau", R)
        object.__setattr__(self, "L_min", L_min)
        object.__setattr__(self, "L_max", L_max)
        object.__setattr__(self, "C_dc", float(self.C_dc))
        object.__setattr__(self, "I_ell", float(self.I_ell))
        object.__setattr__(self, "Y", float(self.Y))
        object.__setattr__(self, "n_s", n)

        scalars = np.array([self.C_dc, self.I_ell, self.Y])
        if not (np.all(np.isfinite(L)) and np.all(np.isfinite(R)) and np.all(np.isfinite(scalars))
                and np.all(np.isfinite(L_min)) and np.all(np.isfinite(L_max))):
            raise ModelDomainError("plant parameters must be finite")
        if np.any(L <= 0) or np.any(R <= 0):
            raise ModelDomainError("line inductances and resistances must be positive")
        if self.C_dc <= 0:
            raise ModelDomainError("C_dc must be positive")
        if self.I_ell <= 0:
            raise ModelDomainError("I_ell must be positive")
        if self.Y < 0:
            raise ModelDomainError("Y must be non-negative")
        if np.any(L <= L_min) or np.any(L >= L_max):
            raise ModelDomainError("each L_tau must lie strictly inside (L_min, L_max)")

    @property
    def r_tau(self) -> np.ndarray:
        """Line resistances as a vector (diagonal of R_tau)."""
        return np.asarray(self.R_tau)

    @property
    def l_tau(self) -> np.ndarray:
        """Line inductances as a vector (diagonal of L_tau)."""
        return np.asarray(self.L_tau)

    def with_load(self, I_ell: float | None = None, Y: float | None = None) -> "PlantParams":
        return PlantParams(
            L_tau=self.L_tau,
            R_tau=self.R_tau,
            C_dc=self.C_dc,
            I_ell=self.I_ell if I_ell is None else I_ell,
            Y=self.Y if Y is None else Y,
            L_min=self.L_min,
            L_max=self.L_max,
        )


@dataclass(frozen=True)
class PlantState:
    I_tau: np.ndarray
    V_dc: float

    def __post_init__(self):
        object.__setattr__(self, "I_tau", _vec(self.I_tau, name="I_tau"))
        object.__setattr__(self, "V_dc", float(self.V_dc))


@dataclass(frozen=True)
class PlantStateDerivative:
    dI_tau: np.ndarray
    dV_dc: float


def reference_plant_params(I_ell: float = 2.98 * 6.7, Y: float = 1e-3) -> PlantParams:
    """Reference three-line network (line L/R values and bus capacitance).

    The inductance bounds (300 uH, 1 mH) bracket all three lines.
    """
    return PlantParams(
        L_tau=np.array([900e-6, 550e-6, 350e-6]),
        R_tau=np.array([1.33, 0.78, 0.71]),
        C_dc=0.318e-6,
        I_ell=I_ell,
        Y=Y,
        L_min=np.full(3, 300e-6),
        L_max=np.full(3, 1e-3),
    )


def plant_derivative(params: PlantParams, state: PlantState, u) -> PlantStateDerivative:
    """Time derivative of line currents and bus voltage under source voltages ``u``."""
    u = np.asarray(u, dtype=float)
    I = np.asarray(state.I_tau, dtype=float)
    if u.shape != (params.n_s,) or I.shape != (params.n_s,):
        raise ModelDomainError("state/input dimension does not match n_s")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(I)) and np.isfinite(state.V_dc)):
        raise ModelDomainError("non-finite state or input")
    V = state.V_dc
    dI = (-V - params.R_tau * I + u) / params.L_tau
    dV = (I.sum() - params.I_ell - params.Y * V) / params.C_dc
    return PlantStateDerivative(dI_tau=dI, dV_dc=float(dV))

"""Closed-loop structure of the adaptive controller.

Works in the shifted current ``z = I - phi``. Everything here is vectorized
over sources and independent of the per-source code in ``controllers`` and
the integration kernels, so the two can be checked against each other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .controllers import AdaptiveCtrlState, ControllerGains, verify_gains
from .graph import CommGraph
from .plant import PlantParams, PlantState

__all__ = [
    "ClosedLoopState",
    "EquilibriumPoint",
    "LyapunovRate",
    "PHForm",
    "to_closed_loop",
    "from_closed_loop",
    "closed_loop_rhs",
    "compute_equilibrium",
    "equilibrium_residual",
    "lyapunov_S",
    "lyapunov_S_dot",
    "ph_matrices",
    "ph_form_check",
    "check_invariant_set",
    "is_steady",
    "random_state",
    "Check",
    "verification_suite",
]


@dataclass(frozen=True)
class ClosedLoopState:
    """State in shifted coordinates; also used for its time derivative."""

    z_tau: np.ndarray
    V_dc: float
    phi_tau: np.ndarray
    theta_tau: np.ndarray
    rhat_tau: np.ndarray
    eta_tau: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.z_tau).size
        for f in ("z_tau", "phi_tau", "theta_tau", "rhat_tau", "eta_tau"):
            arr = np.asarray(getattr(self, f), dtype=float).reshape(-1)
            if arr.size != n:
                raise ValueError(f"{f} has length {arr.size}, expected {n}")
            object.__setattr__(self, f, arr)
        object.__setattr__(self, "V_dc", float(self.V_dc))

    @property
    def n_s(self) -> int:
        return self.z_tau.size

    @property
    def I_tau(self) -> np.ndarray:
        return self.z_tau + self.phi_tau

    def as_array(self) -> np.ndarray:
        """Stacked ``(z, V, phi, theta, rhat, eta)``."""
        return np.concatenate([self.z_tau, [self.V_dc], self.phi_tau, self.theta_tau,
                               self.rhat_tau, self.eta_tau])

    @classmethod
    def from_array(cls, x) -> "ClosedLoopState":
        x = np.asarray(x, dtype=float)
        n = (x.size - 1) // 5
        if x.size != 5 * n + 1:
            raise ValueError(f"state length {x.size} is not 5n+1")
        return cls(x[:n], x[n], x[n + 1:2 * n + 1], x[2 * n + 1:3 * n + 1],
                   x[3 * n + 1:4 * n + 1], x[4 * n + 1:])

    @classmethod
    def from_kernel(cls, x) -> "ClosedLoopState":
        """Convert a kernel-layout row ``(I, V, phi, theta, rhat, eta)``."""
        cl = cls.from_array(x)
        return cls(cl.z_tau - cl.phi_tau, cl.V_dc, cl.phi_tau, cl.theta_tau, cl.rhat_tau, cl.eta_tau)

    def to_kernel(self) -> np.ndarray:
        x = self.as_array()
        x[:self.n_s] = self.I_tau
        return x


def to_closed_loop(plant_state: PlantState, ctrl_state: AdaptiveCtrlState) -> ClosedLoopState:
    I = np.asarray(plant_state.I_tau, dtype=float)
    if I.size != ctrl_state.phi_tau.size:
        raise ValueError("plant and controller states have different sizes")
    return ClosedLoopState(I - ctrl_state.phi_tau, plant_state.V_dc, ctrl_state.phi_tau,
                           ctrl_state.theta_tau, ctrl_state.rhat_tau, ctrl_state.eta_tau)


def from_closed_loop(cl: ClosedLoopState) -> tuple[PlantState, AdaptiveCtrlState]:
    return (PlantState(cl.z_tau + cl.phi_tau, cl.V_dc),
            AdaptiveCtrlState(cl.phi_tau, cl.theta_tau, cl.rhat_tau, cl.eta_tau))


def _check(params: PlantParams, gains: ControllerGains, graph: CommGraph | None, cl: ClosedLoopState):
    n = params.n_s
    if gains.n_s != n or cl.n_s != n or (graph is not None and graph.n_s != n):
        raise ValueError("plant, gains, graph and state disagree on the number of sources")


def _forcing(gains: ControllerGains, Lap: np.ndarray, cl: ClosedLoopState) -> np.ndarray:
    # F = T_phi^-1 [-(V - V*) 1 - W Lap theta]
    return (-(cl.V_dc - gains.V_dc_star) - gains.W * (Lap @ cl.theta_tau)) / gains.T_phi


def closed_loop_rhs(params: PlantParams, gains: ControllerGains, graph: CommGraph,
                    cl: ClosedLoopState) -> ClosedLoopState:
    """Time derivative of the shifted closed loop, without communication delay."""
    _check(params, gains, graph, cl)
    Lap = graph.laplacian.astype(float)
    W = gains.W
    z, V, phi = cl.z_tau, cl.V_dc, cl.phi_tau
    I = z + phi
    WLth = W * (Lap @ cl.theta_tau)
    F = _forcing(gains, Lap, cl)
    dz = (-gains.K_z * z + I * (cl.rhat_tau - params.R_tau) - (V - gains.V_dc_star)
          - WLth + F * (cl.eta_tau - params.L_tau)) / params.L_tau
    # compensated sum: the small bus capacitance amplifies cancellation error
    dV = math.fsum([*I, -params.I_ell, -params.Y * V]) / params.C_dc
    dphi = F
    dtheta = (Lap @ (W * I)) / gains.T_theta
    drhat = -I * z / gains.T_rhat
    deta = -F * z / gains.T_eta
    return ClosedLoopState(dz, dV, dphi, dtheta, drhat, deta)


@dataclass(frozen=True)
class EquilibriumPoint:
    z_bar: np.ndarray
    V_bar: float
    phi_bar: np.ndarray
    theta_bar: np.ndarray
    rhat_bar: np.ndarray
    eta_bar: np.ndarray
    alpha: float
    beta: float

    @property
    def I_bar(self) -> np.ndarray:
        return self.phi_bar + self.z_bar

    def state(self) -> ClosedLoopState:
        return ClosedLoopState(self.z_bar, self.V_bar, self.phi_bar, self.theta_bar,
                               self.rhat_bar, self.eta_bar)


def compute_equilibrium(params: PlantParams, gains: ControllerGains, theta_0,
                        eta_bar=None) -> EquilibriumPoint:
    """Equilibrium reached from consensus state ``theta_0``.

    ``eta_bar`` is a free parameter of the equilibrium family and defaults to
    the true inductances.
    """
    n = params.n_s
    theta_0 = np.asarray(theta_0, dtype=float).reshape(-1)
    if theta_0.size != n or gains.n_s != n:
        raise ValueError("theta_0 and gains must match the number of sources")
    W_inv = 1.0 / gains.W
    alpha = (params.I_ell + params.Y * gains.V_dc_star) / W_inv.sum()
    beta = float(gains.T_theta @ theta_0) / float(gains.T_theta.sum())
    eta = params.L_tau.copy() if eta_bar is None else np.broadcast_to(
        np.asarray(eta_bar, dtype=float), (n,)).copy()
    phi = alpha * W_inv
    # One residual-correction step so the current balance also holds in floating
    # point; the bus row divides it by C_dc, which turns one ulp into ~1e-8 V/s.
    k = int(np.argmax(phi))
    phi[k] += math.fsum([params.I_ell, params.Y * gains.V_dc_star, *(-phi)])
    return EquilibriumPoint(
        z_bar=np.zeros(n), V_bar=gains.V_dc_star, phi_bar=phi,
        theta_bar=np.full(n, beta), rhat_bar=params.R_tau.copy(), eta_bar=eta,
        alpha=float(alpha), beta=beta,
    )


def equilibrium_residual(params: PlantParams, gains: ControllerGains, graph: CommGraph,
                         eq: EquilibriumPoint) -> float:
    return float(np.max(np.abs(closed_loop_rhs(params, gains, graph, eq.state()).as_array())))


def _deviation(params: PlantParams, cl: ClosedLoopState, eq: EquilibriumPoint) -> ClosedLoopState:
    # reference uses eta = l_tau regardless of eq.eta_bar
    return ClosedLoopState(cl.z_tau - eq.z_bar, cl.V_dc - eq.V_bar, cl.phi_tau - eq.phi_bar,
                           cl.theta_tau - eq.theta_bar, cl.rhat_tau - eq.rhat_bar,
                           cl.eta_tau - params.L_tau)


def _metric(params: PlantParams, gains: ControllerGains) -> np.ndarray:
    """Diagonal of diag(L, C, T_phi, T_theta, T_rhat, T_eta)."""
    return np.concatenate([params.L_tau, [params.C_dc], gains.T_phi, gains.T_theta,
                           gains.T_rhat, gains.T_eta])


def lyapunov_S(params: PlantParams, gains: ControllerGains, cl: ClosedLoopState,
               eq: EquilibriumPoint) -> float:
    """Weighted quadratic distance to the equilibrium (eta measured from l_tau)."""
    _check(params, gains, None, cl)
    d = _deviation(params, cl, eq).as_array()
    return 0.5 * float(np.sum(_metric(params, gains) * d * d))


class LyapunovRate(NamedTuple):
    analytic: float
    chain_rule: float

    @property
    def rel_diff(self) -> float:
        scale = max(abs(self.analytic), abs(self.chain_rule), np.finfo(float).tiny)
        return abs(self.analytic - self.chain_rule) / scale


def lyapunov_S_dot(params: PlantParams, gains: ControllerGains, graph: CommGraph,
                   cl: ClosedLoopState, eq: EquilibriumPoint) -> LyapunovRate:
    """Rate of S along the closed loop, in closed form and as grad(S) . rhs."""
    z = cl.z_tau
    analytic = -float(z @ (gains.K_z * z)) - params.Y * (cl.V_dc - eq.V_bar) ** 2
    grad = _metric(params, gains) * _deviation(params, cl, eq).as_array()
    rhs = closed_loop_rhs(params, gains, graph, cl).as_array()
    return LyapunovRate(analytic, float(grad @ rhs))


@dataclass(frozen=True)
class PHForm:
    """Port-Hamiltonian pieces at one state, in energy coordinates ``M_d^-1 x``."""

    J: np.ndarray
    R: np.ndarray
    M: np.ndarray
    grad_H: np.ndarray
    x_dot: np.ndarray
    forcing: np.ndarray

    @property
    def H(self) -> float:
        g = self.grad_H
        return 0.5 * float(g @ np.linalg.solve(self.M, g))

    def residual(self) -> np.ndarray:
        return self.x_dot - (self.J - self.R) @ self.grad_H


def ph_matrices(params: PlantParams, gains: ControllerGains, graph: CommGraph,
                cl: ClosedLoopState, eq: EquilibriumPoint | None = None) -> PHForm:
    """Assemble J_d(x), R_d, M_d and grad H_d at ``cl``.

    Energy coordinates are ``x = (L z, C V, T_phi phi, T_theta theta,
    T_rhat rhat, T_eta eta)`` so that ``grad H_d = M_d (x - x_bar)``.
    """
    _check(params, gains, graph, cl)
    n = params.n_s
    if eq is None:
        eq = compute_equilibrium(params, gains, cl.theta_tau)
    Lap = graph.laplacian.astype(float)
    WL = gains.W[:, None] * Lap
    F = _forcing(gains, Lap, cl)
    one = np.ones((n, 1))
    Z = np.zeros((n, n))

    J11 = np.block([
        [Z, -one, Z],
        [one.T, np.zeros((1, 1)), one.T],
        [Z, -one, Z],
    ])
    J12 = np.block([
        [-WL, np.diag(cl.I_tau), np.diag(F)],
        [np.zeros((1, 3 * n))],
        [-WL, Z, Z],
    ])
    J = np.block([[J11, J12], [-J12.T, np.zeros((3 * n, 3 * n))]])
    R = np.diag(np.concatenate([gains.K_z, [params.Y], np.zeros(4 * n)]))
    metric = _metric(params, gains)
    M = np.diag(1.0 / metric)
    grad_H = _deviation(params, cl, eq).as_array()
    x_dot = metric * closed_loop_rhs(params, gains, graph, cl).as_array()
    return PHForm(J=J, R=R, M=M, grad_H=grad_H, x_dot=x_dot, forcing=F)


def ph_form_check(params: PlantParams, gains: ControllerGains, graph: CommGraph,
                  cl: ClosedLoopState, eq: EquilibriumPoint | None = None) -> float:
    """Infinity norm of ``x_dot - (J_d - R_d) grad H_d``."""
    return float(np.max(np.abs(ph_matrices(params, gains, graph, cl, eq).residual())))


def check_invariant_set(traj, T_theta=None) -> float:
    """Largest drift of the weighted consensus sum ``1' T_theta theta`` from its start."""
    theta = np.asarray(traj.theta, dtype=float)
    if theta.shape[0] == 0:
        return 0.0
    w = np.ones(theta.shape[1]) if T_theta is None else np.asarray(T_theta, dtype=float)
    s = theta @ w
    return float(np.max(np.abs(s - s[0])))


def is_steady(params: PlantParams, gains: ControllerGains, graph: CommGraph,
              cl: ClosedLoopState, tol: float = 1e-6) -> bool:
    """True when every closed-loop derivative is below ``tol`` (SI units)."""
    d = closed_loop_rhs(params, gains, graph, cl).as_array()
    return bool(np.all(np.abs(d) < tol))



def random_state(params: PlantParams, gains: ControllerGains, rng: np.random.Generator,
                 eq: EquilibriumPoint | None = None) -> ClosedLoopState:
    """Random closed-loop state spread around an equilibrium (for structural checks)."""
    n = params.n_s
    if eq is None:
        eq = compute_equilibrium(params, gains, np.zeros(n))
    return ClosedLoopState(
        z_tau=rng.normal(0.0, 1.0 + eq.alpha, n),
        V_dc=eq.V_bar + rng.normal(0.0, 0.05 * abs(eq.V_bar) + 1.0),
        phi_tau=eq.phi_bar * (1.0 + rng.normal(0.0, 0.5, n)),
        theta_tau=eq.theta_bar + rng.normal(0.0, 1.0, n),
        rhat_tau=params.R_tau * (1.0 + rng.normal(0.0, 0.5, n)),
        eta_tau=params.L_tau * (1.0 + rng.normal(0.0, 0.5, n)),
    )


class Check(NamedTuple):
    name: str
    value: float
    limit: float
    passed: bool


def verification_suite(params: PlantParams, gains: ControllerGains, graph: CommGraph,
                       rng: np.random.Generator, n_ph: int = 100, n_sdot: int = 1000) -> list[Check]:
    """Gain condition, equilibrium residual, pH form and the S-dot identity."""
    out = []
    rep = verify_gains(gains, params)
    for i, m in enumerate(rep.margin):
        out.append(Check(f"gain condition T_phi - (L_max - L_min), source {i + 1}", float(m), 0.0,
                         bool(rep.per_dgu_pass[i])))

    theta0 = rng.normal(0.0, 1.0, params.n_s)
    eq = compute_equilibrium(params, gains, theta0)
    res = equilibrium_residual(params, gains, graph, eq)
    tol = 1e-10 * (1.0 + float(np.linalg.norm(eq.state().as_array())))
    out.append(Check("equilibrium residual (inf-norm)", res, tol, bool(res <= tol)))

    worst_ph, worst_skew = 0.0, 0.0
    for _ in range(n_ph):
        cl = random_state(params, gains, rng, eq)
        form = ph_matrices(params, gains, graph, cl, eq)
        scale = 1.0 + float(np.max(np.abs(form.x_dot)))
        worst_ph = max(worst_ph, float(np.max(np.abs(form.residual()))) / scale)
        worst_skew = max(worst_skew, float(np.max(np.abs(form.J + form.J.T))))
    out.append(Check(f"pH residual / scale, {n_ph} random states", worst_ph, 1e-9, worst_ph <= 1e-9))
    out.append(Check("J_d skew-symmetry, max |J + J'|", worst_skew, 0.0, worst_skew == 0.0))

    worst = 0.0
    for _ in range(n_sdot):
        cl = random_state(params, gains, rng, eq)
        worst = max(worst, lyapunov_S_dot(params, gains, graph, cl, eq).rel_diff)
    out.append(Check(f"S-dot analytic vs chain rule (rel), {n_sdot} states", worst, 1e-9, worst <= 1e-9))
    return out

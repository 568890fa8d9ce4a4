"""Per-source control laws.

Three controllers share the same calling convention: each source ``i`` sees
its own current, the received bus voltage, and (possibly delayed) data from
its communication neighbours.

* ``c1_*``  distributed adaptive controller (voltage integral action,
  weighted-current consensus, line-resistance estimator, inductance
  compensation state).
* ``c2_droop``  decentralized V-I droop.
* ``c3_known_r_consensus``  consensus controller that relies on
  (possibly wrong) known line resistances.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .graph import CommGraph
from .plant import PlantParams, _vec

__all__ = [
    "ControllerConfigError",
    "ControllerGains",
    "AdaptiveCtrlState",
    "AdaptiveCtrlStateDerivative",
    "OwnMeasurement",
    "NeighborView",
    "DroopGains",
    "KnownRGains",
    "GainReport",
    "reference_c1_gains",
    "default_droop_gains",
    "default_known_r_gains",
    "c1_state_derivative",
    "c1_control_law",
    "c2_droop",
    "c3_known_r_consensus",
    "verify_gains",
    "neighbor_view",
]


class ControllerConfigError(ValueError):
    pass


def _positive(arr: np.ndarray, name: str):
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ControllerConfigError(f"{name} entries must be finite and strictly positive")


@dataclass(frozen=True)
class ControllerGains:
    """Tuning of the adaptive controller; each gain is a per-source diagonal entry."""

    T_phi: np.ndarray
    T_theta: np.ndarray
    T_rhat: np.ndarray
    T_eta: np.ndarray
    K_z: np.ndarray
    W: np.ndarray
    V_dc_star: float

    def __post_init__(self):
        n = _vec(self.W, name="W").size
        for name in ("T_phi", "T_theta", "T_rhat", "T_eta", "K_z", "W"):
            arr = _vec(getattr(self, name), n, name)
            _positive(arr, name)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "V_dc_star", float(self.V_dc_star))
        if not np.isfinite(self.V_dc_star):
            raise ControllerConfigError("V_dc_star must be finite")

    @property
    def n_s(self) -> int:
        return self.W.size


def reference_c1_gains(n: int = 3, V_dc_star: float = 200.0, W=None) -> ControllerGains:
    """Reference gain set (identity weights by default)."""
    one = np.ones(n)
    return ControllerGains(
        T_phi=one, T_theta=one, T_rhat=10.0 * one, T_eta=1e6 * one, K_z=2.0 * one,
        W=one if W is None else W, V_dc_star=V_dc_star,
    )


@dataclass(frozen=True)
class AdaptiveCtrlState:
    phi_tau: np.ndarray
    theta_tau: np.ndarray
    rhat_tau: np.ndarray
    eta_tau: np.ndarray

    def __post_init__(self):
        n = _vec(self.phi_tau, name="phi_tau").size
        for name in ("phi_tau", "theta_tau", "rhat_tau", "eta_tau"):
            object.__setattr__(self, name, _vec(getattr(self, name), n, name))

    @classmethod
    def zeros(cls, n: int) -> "AdaptiveCtrlState":
        z = np.zeros(n)
        return cls(z, z, z, z)

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.phi_tau, self.theta_tau, self.rhat_tau, self.eta_tau])


class AdaptiveCtrlStateDerivative(NamedTuple):
    dphi: float
    dtheta: float
    drhat: float
    deta: float


class OwnMeasurement(NamedTuple):
    I_tau_i: float
    V_dc: float


@dataclass(frozen=True)
class NeighborView:
    """Data received by one source from its neighbours (ids, currents, consensus states)."""

    ids: tuple[int, ...]
    I_tau: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(k) for k in self.ids))
        I = np.asarray(self.I_tau, dtype=float).reshape(-1)
        th = np.asarray(self.theta, dtype=float).reshape(-1)
        if I.size != len(self.ids) or th.size != len(self.ids):
            raise ControllerConfigError("neighbor data length does not match neighbor ids")
        object.__setattr__(self, "I_tau", I)
        object.__setattr__(self, "theta", th)


def neighbor_view(graph: CommGraph, i: int, I_tau, theta) -> NeighborView:
    """Undelayed view of node ``i``'s neighbours taken from full-network vectors."""
    ids = graph.neighbors(i)
    return NeighborView(tuple(ids), np.asarray(I_tau, dtype=float)[ids], np.asarray(theta, dtype=float)[ids])


def _check_view(graph: CommGraph | None, i: int, nbrs: NeighborView):
    if graph is None:
        return
    if set(nbrs.ids) != set(graph.neighbors(i).tolist()) or len(set(nbrs.ids)) != len(nbrs.ids):
        raise ControllerConfigError(
            f"neighbor set {sorted(nbrs.ids)} of node {i} does not match graph adjacency "
            f"{graph.neighbors(i).tolist()}"
        )


def _consensus_terms(W: np.ndarray, i: int, theta_i: float, I_i: float, nbrs: NeighborView):
    s_theta = 0.0
    s_current = 0.0
    for k, j in enumerate(nbrs.ids):
        s_theta += theta_i - nbrs.theta[k]
        s_current += W[i] * I_i - W[j] * nbrs.I_tau[k]
    return s_theta, s_current


def _c1_bracket(gains: ControllerGains, i: int, V_dc: float, s_theta: float) -> float:
    # -(V_dc - V*) - w_i * sum_j (theta_i - theta_j)
    return -(V_dc - gains.V_dc_star) - gains.W[i] * s_theta


def c1_state_derivative(gains: ControllerGains, state: AdaptiveCtrlState, i: int,
                        own: OwnMeasurement, nbrs: NeighborView,
                        graph: CommGraph | None = None) -> AdaptiveCtrlStateDerivative:
    """Controller-state derivatives for source ``i``."""
    _check_view(graph, i, nbrs)
    I_i, V = float(own.I_tau_i), float(own.V_dc)
    s_theta, s_current = _consensus_terms(gains.W, i, state.theta_tau[i], I_i, nbrs)
    psi = _c1_bracket(gains, i, V, s_theta)
    f_i = psi / gains.T_phi[i]
    z_i = I_i - state.phi_tau[i]
    return AdaptiveCtrlStateDerivative(
        dphi=f_i,
        dtheta=s_current / gains.T_theta[i],
        drhat=-I_i * z_i / gains.T_rhat[i],
        deta=-f_i * z_i / gains.T_eta[i],
    )


def c1_control_law(gains: ControllerGains, state: AdaptiveCtrlState, i: int,
                   own: OwnMeasurement, nbrs: NeighborView,
                   graph: CommGraph | None = None) -> float:
    """Voltage set-point of source ``i``."""
    _check_view(graph, i, nbrs)
    I_i, V = float(own.I_tau_i), float(own.V_dc)
    s_theta, _ = _consensus_terms(gains.W, i, state.theta_tau[i], I_i, nbrs)
    f_i = _c1_bracket(gains, i, V, s_theta) / gains.T_phi[i]
    z_i = I_i - state.phi_tau[i]
    return (-gains.K_z[i] * z_i + state.rhat_tau[i] * I_i + gains.V_dc_star
            + f_i * state.eta_tau[i] - gains.W[i] * s_theta)


@dataclass(frozen=True)
class DroopGains:
    k_droop: np.ndarray
    V_dc_star: float

    def __post_init__(self):
        k = _vec(self.k_droop, name="k_droop")
        _positive(k, "k_droop")
        object.__setattr__(self, "k_droop", k)
        object.__setattr__(self, "V_dc_star", float(self.V_dc_star))

    @property
    def n_s(self) -> int:
        return self.k_droop.size


def default_droop_gains(W, V_dc_star: float = 200.0) -> DroopGains:
    """Droop slopes 0.5/w_i ohm, so droop sharing leans the same way as W."""
    return DroopGains(0.5 / np.asarray(W, dtype=float), V_dc_star)


def c2_droop(gains: DroopGains, i: int, I_tau_i: float) -> float:
    return gains.V_dc_star - gains.k_droop[i] * I_tau_i


@dataclass(frozen=True)
class KnownRGains:
    """Consensus controller that feeds forward assumed line resistances."""

    assumed_R: np.ndarray
    T_theta: np.ndarray
    W: np.ndarray
    V_dc_star: float

    def __post_init__(self):
        n = _vec(self.W, name="W").size
        for name in ("assumed_R", "T_theta", "W"):
            arr = _vec(getattr(self, name), n, name)
            _positive(arr, name)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "V_dc_star", float(self.V_dc_star))

    @property
    def n_s(self) -> int:
        return self.W.size


def default_known_r_gains(params: PlantParams, W=None, V_dc_star: float = 200.0,
                          r_error: float = -0.10) -> KnownRGains:
    # An overestimate (r_error > 0) leaves a net negative series resistance and
    # destabilizes the circulating-current modes; see tests/test_controllers.py.
    n = params.n_s
    return KnownRGains(
        assumed_R=(1.0 + r_error) * params.R_tau,
        T_theta=np.ones(n),
        W=np.ones(n) if W is None else W,
        V_dc_star=V_dc_star,
    )


def c3_known_r_consensus(gains: KnownRGains, i: int, theta_i: float, own: OwnMeasurement,
                         nbrs: NeighborView, graph: CommGraph | None = None) -> tuple[float, float]:
    """Return ``(u_i, dtheta_i)``; the bus voltage in ``own`` is not used."""
    _check_view(graph, i, nbrs)
    I_i = float(own.I_tau_i)
    s_theta, s_current = _consensus_terms(gains.W, i, theta_i, I_i, nbrs)
    u = gains.V_dc_star + gains.assumed_R[i] * I_i - gains.W[i] * s_theta
    return u, s_current / gains.T_theta[i]


@dataclass(frozen=True)
class GainReport:
    per_dgu_pass: np.ndarray
    margin: np.ndarray
    passed: bool
    eta_min: np.ndarray
    eta_max: np.ndarray

    def lines(self) -> list[str]:
        out = []
        for i, (ok, m) in enumerate(zip(self.per_dgu_pass, self.margin)):
            out.append(f"DGU {i + 1}: T_phi - (L_max - L_min) = {m:.6g}  {'PASS' if ok else 'FAIL'}")
        return out


def verify_gains(gains: ControllerGains, params: PlantParams) -> GainReport:
    """Check T_phi_i > L_max_i - L_min_i for every source.

    Also returns an interval ``[eta_min, eta_max]`` that contains
    ``[L_min, L_max]`` and is still narrower than ``T_phi`` (used only by the
    inductance-compensation diagnostic; NaN where the check fails).
    """
    spread = params.L_max - params.L_min
    margin = gains.T_phi - spread
    ok = margin > 0
    pad = np.where(ok, margin / 4.0, np.nan)
    return GainReport(
        per_dgu_pass=ok,
        margin=margin,
        passed=bool(np.all(ok)),
        eta_min=params.L_min - pad,
        eta_max=params.L_max + pad,
    )

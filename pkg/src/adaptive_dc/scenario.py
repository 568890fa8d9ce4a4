"""Flight-segment load profiles, per-unit conversion and comparison metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

__all__ = [
    "Segment",
    "Scenario",
    "Trajectory",
    "builtin_regional_profile",
    "short_regional_profile",
    "voltage_deviation_pct",
    "current_sharing_error",
    "resistance_estimation_error",
    "REGIONAL_SEGMENTS",
]

# (name, duration in s, propulsion load in pu)
REGIONAL_SEGMENTS = (
    ("takeoff", 35.0, 2.98),
    ("cruise", 25.0, 2.3),
    ("landing", 25.0, 1.7),
)


@dataclass(frozen=True)
class Segment:
    duration_s: float
    I_ell_pu: float
    name: str = ""


@dataclass(frozen=True)
class Scenario:
    segments: tuple[Segment, ...]
    V_base: float = 200.0
    I_base: float = 6.7
    V_dc_star: float = 200.0
    Y_pu: float | None = None

    def __post_init__(self):
        segs = tuple(s if isinstance(s, Segment) else Segment(*s) for s in self.segments)
        if not segs:
            raise ValueError("scenario needs at least one segment")
        for s in segs:
            if not (s.duration_s > 0 and np.isfinite(s.duration_s)):
                raise ValueError(f"segment duration must be positive, got {s.duration_s}")
            if not (s.I_ell_pu > 0 and np.isfinite(s.I_ell_pu)):
                raise ValueError(f"segment load must be positive, got {s.I_ell_pu}")
        if self.V_base <= 0 or self.I_base <= 0:
            raise ValueError("base values must be positive")
        object.__setattr__(self, "segments", segs)

    def pu_to_amps(self, pu):
        return np.asarray(pu, dtype=float) * self.I_base

    def amps_to_pu(self, amps):
        return np.asarray(amps, dtype=float) / self.I_base

    @property
    def Z_base(self) -> float:
        return self.V_base / self.I_base

    @property
    def Y_siemens(self) -> float | None:
        return None if self.Y_pu is None else self.Y_pu / self.Z_base

    def load_amps(self) -> np.ndarray:
        return self.pu_to_amps([s.I_ell_pu for s in self.segments])

    @property
    def duration_s(self) -> float:
        return float(sum(s.duration_s for s in self.segments))

    def boundaries_s(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([s.duration_s for s in self.segments])])


def builtin_regional_profile() -> Scenario:
    """Scaled regional mission: takeoff, cruise, landing at full segment length."""
    return Scenario(tuple(Segment(d, pu, name) for name, d, pu in REGIONAL_SEGMENTS))


def short_regional_profile(segment_s: float = 0.05) -> Scenario:
    """Same load levels as the regional profile with short segments."""
    return Scenario(tuple(Segment(segment_s, pu, name) for name, _, pu in REGIONAL_SEGMENTS))


@dataclass
class Trajectory:
    """Decimated samples of a closed-loop run."""

    t: np.ndarray
    I_tau: np.ndarray
    V_dc: np.ndarray
    phi: np.ndarray
    theta: np.ndarray
    rhat: np.ndarray
    eta: np.ndarray
    u: np.ndarray
    segment: np.ndarray
    controller: str = "c1"
    step_s: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def n_s(self) -> int:
        return self.I_tau.shape[1]

    def __len__(self) -> int:
        return self.t.size

    def state_matrix(self) -> np.ndarray:
        """Samples as rows in the kernel layout (I, V, phi, theta, rhat, eta)."""
        return np.column_stack([self.I_tau, self.V_dc, self.phi, self.theta, self.rhat, self.eta])

    @classmethod
    def from_matrix(cls, t, X, U, segment, **kw) -> "Trajectory":
        n = U.shape[1]
        return cls(
            t=np.asarray(t), I_tau=X[:, :n], V_dc=X[:, n], phi=X[:, n + 1:2 * n + 1],
            theta=X[:, 2 * n + 1:3 * n + 1], rhat=X[:, 3 * n + 1:4 * n + 1],
            eta=X[:, 4 * n + 1:5 * n + 1], u=np.asarray(U), segment=np.asarray(segment), **kw,
        )

    def select(self, mask) -> "Trajectory":
        return Trajectory(
            t=self.t[mask], I_tau=self.I_tau[mask], V_dc=self.V_dc[mask], phi=self.phi[mask],
            theta=self.theta[mask], rhat=self.rhat[mask], eta=self.eta[mask], u=self.u[mask],
            segment=self.segment[mask], controller=self.controller, step_s=self.step_s,
            meta=dict(self.meta),
        )

    def segment_end_index(self, seg: int) -> int:
        idx = np.flatnonzero(self.segment == seg)
        return int(idx[-1])


def voltage_deviation_pct(traj: Trajectory, V_star: float) -> np.ndarray:
    """Absolute bus-voltage deviation from the reference, in percent."""
    return 100.0 * np.abs(np.asarray(traj.V_dc) - V_star) / abs(V_star)


def current_sharing_error(traj: Trajectory, W) -> np.ndarray:
    """Euclidean norm of all pairwise weighted-current differences, per sample.

    Stacks ``w_i I_i - w_j I_j`` over unordered pairs ``i < j``; summing over
    ordered pairs would cancel to zero.
    """
    wI = np.asarray(traj.I_tau) * np.asarray(W, dtype=float)
    n = wI.shape[1]
    if n < 2:
        return np.zeros(wI.shape[0])
    ii, jj = np.array(list(combinations(range(n), 2))).T
    return np.linalg.norm(wI[:, ii] - wI[:, jj], axis=1)


def resistance_estimation_error(traj: Trajectory, params) -> tuple[np.ndarray, np.ndarray]:
    """Per-line absolute (ohm) and relative (percent) estimation error."""
    R = np.asarray(params.R_tau, dtype=float)
    err = np.abs(np.asarray(traj.rhat) - R)
    return err, 100.0 * err / R

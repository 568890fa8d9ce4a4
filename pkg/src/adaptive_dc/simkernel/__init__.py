"""Fixed-step simulation of the source/line/bus closed loop.

The inner loop runs in a compiled extension (``_ckernel``) when available and
falls back to a pure-Python mirror (``_pykernel``) otherwise. Set
``ADAPTIVE_DC_PURE_PYTHON=1`` to force the fallback.
"""
from __future__ import annotations

import logging
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from ..controllers import (
    ControllerGains,
    DroopGains,
    KnownRGains,
    NeighborView,
    verify_gains,
)
from ..graph import CommGraph
from ..plant import PlantParams
from ..scenario import Scenario, Trajectory
from . import _pykernel

log = logging.getLogger(__name__)

try:
    if os.environ.get("ADAPTIVE_DC_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python backend forced by environment")
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

BACKEND = "cython" if _ckernel is not None else "python"

__all__ = [
    "BACKEND",
    "CommGraph",
    "IntegratorConfig",
    "NoiseConfig",
    "DelayBuffer",
    "SimulationAborted",
    "StepSizeWarning",
    "EtaRangeWarning",
    "GainConditionWarning",
    "available_backends",
    "build_model",
    "kernel_rhs",
    "default_initial_state",
    "delay_steps",
    "delayed_view",
    "integrate",
]

STABLE_STEP_HINT_S = 2e-7
_CHUNK = 200_000


class StepSizeWarning(UserWarning):
    pass


class EtaRangeWarning(UserWarning):
    pass


class GainConditionWarning(UserWarning):
    pass


class SimulationAborted(RuntimeError):
    """Non-finite state encountered; carries the step index and partial trajectory."""

    def __init__(self, step: int, t: float, partial: Trajectory | None = None):
        super().__init__(f"non-finite state at step {step} (t = {t:.9g} s)")
        self.step = step
        self.t = t
        self.partial = partial


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4"
    step_s: float = 1e-7
    record_every: int = 100
    t_end: float | None = None

    def __post_init__(self):
        if self.method not in ("rk4", "euler"):
            raise ValueError(f"unknown integration method {self.method!r}")
        if not (self.step_s > 0 and math.isfinite(self.step_s)):
            raise ValueError("step_s must be positive")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be a positive integer")
        if self.t_end is not None and self.t_end <= 0:
            raise ValueError("t_end must be positive")


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian measurement noise on source currents and the broadcast bus voltage."""

    sigma_I: float = 0.0
    sigma_V: float = 0.0
    seed: int = 0

    @property
    def active(self) -> bool:
        return self.sigma_I > 0 or self.sigma_V > 0


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernel is not None else [])


def _backend(name: str | None):
    name = name or BACKEND
    if name == "cython":
        if _ckernel is None:
            raise RuntimeError("compiled kernel is not available")
        return _ckernel
    if name == "python":
        return _pykernel
    raise ValueError(f"unknown backend {name!r}")


def delay_steps(delay_s: float, h: float) -> int:
    """Number of whole steps covering ``delay_s`` (ceil, tolerant to round-off)."""
    if delay_s <= 0:
        return 0
    return int(math.ceil(round(delay_s / h, 9)))


def build_model(params: PlantParams, controller, graph: CommGraph, h: float = 1.0,
                Y: float | None = None) -> tuple:
    """Flatten plant/controller/graph into the tuple consumed by the kernels."""
    n = params.n_s
    if graph.n_s != n:
        raise ValueError(f"graph has {graph.n_s} nodes, plant has {n} lines")
    one = np.ones(n)
    if isinstance(controller, ControllerGains):
        g = controller
        ctrl, g2 = 0, np.zeros(n)
        gains = (g.T_phi, g.T_theta, g.T_rhat, g.T_eta, g.K_z, g.W, g.V_dc_star)
    elif isinstance(controller, DroopGains):
        ctrl, g2 = 1, controller.k_droop
        gains = (one, one, one, one, one, one, controller.V_dc_star)
    elif isinstance(controller, KnownRGains):
        ctrl, g2 = 2, controller.assumed_R
        gains = (one, controller.T_theta, one, one, one, controller.W, controller.V_dc_star)
    else:
        raise TypeError(f"unsupported controller {type(controller).__name__}")
    if g2.size != n or np.asarray(gains[5]).size != n:
        raise ValueError("controller dimension does not match plant")
    adj = graph.adjacency.astype(np.intc)
    dly = np.array([[delay_steps(graph.delay_s[i, j], h) for j in range(n)] for i in range(n)],
                   dtype=np.int_)
    dv = delay_steps(graph.broadcast_delay_s, h)
    Tphi, Ttheta, Trhat, Teta, Kz, W, Vstar = gains
    return (n, ctrl, np.asarray(params.L_tau, float), np.asarray(params.R_tau, float),
            params.C_dc, params.Y if Y is None else float(Y),
            np.asarray(Tphi, float), np.asarray(Ttheta, float), np.asarray(Trhat, float),
            np.asarray(Teta, float), np.asarray(Kz, float), np.asarray(W, float), float(Vstar),
            np.asarray(g2, float), adj, dly, dv)


def kernel_rhs(params: PlantParams, controller, graph: CommGraph, x, I_ell: float | None = None,
               backend: str | None = None):
    """Undelayed closed-loop derivative ``(dx, u)`` in the kernel state layout."""
    model = build_model(params, controller, graph.with_delay(0.0, 0.0))
    I_ell = params.I_ell if I_ell is None else I_ell
    return _backend(backend).rhs(model, np.ascontiguousarray(x, dtype=float), float(I_ell))


def default_initial_state(n: int, V_star: float, rhat0=0.0) -> np.ndarray:
    """Zero currents, bus at reference, controller states zero (r-hat as given)."""
    x = np.zeros(5 * n + 1)
    x[n] = V_star
    x[3 * n + 1:4 * n + 1] = rhat0
    return x


class DelayBuffer:
    """Ring buffer of measured (I, theta, V) samples at integration-step resolution.

    Row ``k % depth`` holds the sample taken at the start of step ``k``. Reads
    with a zero delay bypass the buffer and return the live value.
    """

    def __init__(self, n: int, depth: int, initial_row=None):
        self.n = n
        self.depth = max(int(depth), 1)
        self.data = np.zeros((self.depth, 2 * n + 1))
        if initial_row is not None:
            self.data[:] = initial_row

    @classmethod
    def for_graph(cls, graph: CommGraph, h: float, x0) -> "DelayBuffer":
        n = graph.n_s
        d = [delay_steps(v, h) for v in np.ravel(graph.delay_s)]
        depth = max(d + [delay_steps(graph.broadcast_delay_s, h)]) + 1
        return cls(n, depth, _measure_row(np.asarray(x0, float), n))

    def push(self, k: int, row):
        self.data[k % self.depth] = row

    def read(self, k: int, delay: int, col: int | slice):
        if delay >= self.depth:
            raise ValueError(f"delay of {delay} steps exceeds buffer depth {self.depth}")
        return self.data[(k - delay) % self.depth, col]


def _measure_row(x: np.ndarray, n: int) -> np.ndarray:
    return np.concatenate([x[:n], x[2 * n + 1:3 * n + 1], [x[n]]])


def delayed_view(buffer: DelayBuffer, graph: CommGraph, k: int, h: float,
                 live_x=None) -> list[tuple[NeighborView, float]]:
    """Per-source ``(NeighborView, received V_dc)`` at the start of step ``k``.

    Links with zero delay read ``live_x`` (kernel layout) directly.
    """
    n = graph.n_s
    live = None if live_x is None else _measure_row(np.asarray(live_x, float), n)
    out = []
    dv = delay_steps(graph.broadcast_delay_s, h)
    for i in range(n):
        ids = graph.neighbors(i)
        I_vals, th_vals = [], []
        for j in ids:
            d = delay_steps(graph.delay_s[i, j], h)
            if d == 0 and live is not None:
                I_vals.append(live[j])
                th_vals.append(live[n + j])
            else:
                I_vals.append(buffer.read(k, d, j))
                th_vals.append(buffer.read(k, d, n + j))
        V = live[2 * n] if (dv == 0 and live is not None) else buffer.read(k, dv, 2 * n)
        out.append((NeighborView(tuple(ids), np.array(I_vals), np.array(th_vals)), float(V)))
    return out


def _controller_name(controller) -> str:
    return {ControllerGains: "c1", DroopGains: "c2", KnownRGains: "c3"}[type(controller)]


def integrate(params: PlantParams, controller, graph: CommGraph, scenario: Scenario,
              cfg: IntegratorConfig = IntegratorConfig(), x0=None,
              noise: NoiseConfig | None = None, backend: str | None = None) -> Trajectory:
    """Simulate the closed loop over the scenario's load segments.

    Returns decimated samples every ``cfg.record_every`` steps (the first at
    t = 0, the last at the end of the run when it falls on the grid). Raises
    :class:`SimulationAborted` on a non-finite state.
    """
    kern = _backend(backend)
    h = float(cfg.step_s)
    n = params.n_s
    if h > STABLE_STEP_HINT_S:
        warnings.warn(f"step {h:g} s exceeds {STABLE_STEP_HINT_S:g} s", StepSizeWarning, stacklevel=2)
    if isinstance(controller, ControllerGains):
        report = verify_gains(controller, params)
        if not report.passed:
            warnings.warn("T_phi violates the inductance-spread condition: "
                          + "; ".join(report.lines()), GainConditionWarning, stacklevel=2)
    Y = scenario.Y_siemens if scenario.Y_siemens is not None else params.Y
    model = build_model(params, controller, graph, h, Y=Y)
    V_star = model[12]

    x = default_initial_state(n, V_star) if x0 is None else np.array(x0, dtype=float)
    if x.shape != (5 * n + 1,):
        raise ValueError(f"initial state must have length {5 * n + 1}")
    x = np.ascontiguousarray(x)

    seg_steps = [max(1, int(round(s.duration_s / h))) for s in scenario.segments]
    loads = scenario.load_amps()
    if cfg.t_end is not None:
        budget = int(round(cfg.t_end / h))
        trimmed = []
        for s in seg_steps:
            trimmed.append(min(s, max(budget, 0)))
            budget -= s
        seg_steps = [s for s in trimmed if s > 0]
    total = sum(seg_steps)
    re = int(cfg.record_every)
    cap = total // re + 2
    rec_x = np.zeros((cap, 5 * n + 1))
    rec_u = np.zeros((cap, n))
    rec_seg = np.zeros(cap, dtype=int)

    buf = DelayBuffer.for_graph(graph, h, x)
    hist = np.ascontiguousarray(buf.data)
    rng = np.random.default_rng(noise.seed) if noise is not None and noise.active else None
    sig = None if rng is None else np.r_[np.full(n, noise.sigma_I), noise.sigma_V]
    empty = np.zeros((0, n + 1))
    method = 0 if cfg.method == "rk4" else 1

    k, pos = 0, 0
    for seg, (steps, I_ell) in enumerate(zip(seg_steps, loads)):
        done = 0
        while done < steps:
            m = min(_CHUNK, steps - done)
            nz = empty if rng is None else np.ascontiguousarray(rng.standard_normal((m, n + 1)) * sig)
            start = pos
            status, k_ret, pos = kern.advance(model, x, hist, k, m, h, method, float(I_ell), nz,
                                              re, rec_x, rec_u, pos)
            rec_seg[start:pos] = seg
            if status:
                partial = _assemble(rec_x, rec_u, rec_seg, pos, re, h, controller, scenario)
                raise SimulationAborted(k_ret, k_ret * h, partial)
            k = k_ret
            done += m
    if k % re == 0:
        nz = empty if rng is None else np.ascontiguousarray(rng.standard_normal((1, n + 1)) * sig)
        start = pos
        _, _, pos = kern.advance(model, x, hist, k, 0, h, method, float(loads[len(seg_steps) - 1]),
                                 nz, re, rec_x, rec_u, pos, True)
        rec_seg[start:pos] = len(seg_steps) - 1

    traj = _assemble(rec_x, rec_u, rec_seg, pos, re, h, controller, scenario)
    traj.meta.update(backend=backend or BACKEND, steps=total, Y=Y,
                     delay_steps=int(np.max(model[15])) if n else 0, broadcast_delay_steps=model[16])
    if isinstance(controller, ControllerGains):
        report = verify_gains(controller, params)
        if report.passed:
            out = (traj.eta < report.eta_min) | (traj.eta > report.eta_max)
            if np.any(out):
                warnings.warn("eta left the interval used by the convergence argument",
                              EtaRangeWarning, stacklevel=2)
    log.debug("integrated %d steps (%s backend), %d samples", total, backend or BACKEND, len(traj))
    return traj


def _assemble(rec_x, rec_u, rec_seg, pos, re, h, controller, scenario) -> Trajectory:
    t = np.arange(pos) * (re * h)
    return Trajectory.from_matrix(
        t, rec_x[:pos].copy(), rec_u[:pos].copy(), rec_seg[:pos].copy(),
        controller=_controller_name(controller), step_s=h,
        meta={"record_every": re, "V_dc_star": controller.V_dc_star,
              "segment_bounds_s": scenario.boundaries_s().tolist()},
    )

"""Run summaries, CSV export and the summary JSON schema."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import jsonschema
import numpy as np

from .analysis import check_invariant_set
from .controllers import ControllerGains, verify_gains
from .plant import PlantParams
from .scenario import (
    Trajectory,
    current_sharing_error,
    resistance_estimation_error,
    voltage_deviation_pct,
)

__all__ = [
    "SUMMARY_SCHEMA",
    "COMPARISON_SCHEMA",
    "trajectory_header",
    "write_trajectory_csv",
    "write_metrics_csv",
    "write_json",
    "segment_table",
    "summarize",
    "compare_summaries",
    "settle_time",
]

_VOLTAGE_BAND_PCT = 0.5
_SHARING_BAND_PCT = 1.0

_float = {"type": "number"}
_float_or_null = {"type": ["number", "null"]}
_floats = {"type": "array", "items": _float}

_SEGMENT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["index", "name", "t_start_s", "t_end_s", "I_ell_A", "V_dc_V", "V_deviation_pct",
                 "I_tau_A", "sharing_error_A", "sharing_spread_pct", "rhat_ohm", "rhat_error_pct",
                 "voltage_settle_s", "sharing_settle_s"],
    "properties": {
        "index": {"type": "integer", "minimum": 0},
        "name": {"type": "string"},
        "t_start_s": _float,
        "t_end_s": _float,
        "I_ell_A": _float,
        "V_dc_V": _float,
        "V_deviation_pct": _float,
        "I_tau_A": _floats,
        "sharing_error_A": _float,
        "sharing_spread_pct": _float,
        "rhat_ohm": {"type": ["array", "null"], "items": _float},
        "rhat_error_pct": {"type": ["array", "null"], "items": _float},
        "voltage_settle_s": _float_or_null,
        "sharing_settle_s": _float_or_null,
    },
}

SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "controller", "step_s", "steps", "duration_s", "V_dc_star_V",
                 "segments", "final", "invariant", "gain_check"],
    "properties": {
        "schema_version": {"const": 1},
        "controller": {"enum": ["c1", "c2", "c3"]},
        "step_s": _float,
        "steps": {"type": "integer", "minimum": 0},
        "duration_s": _float,
        "V_dc_star_V": _float,
        "segments": {"type": "array", "items": _SEGMENT, "minItems": 1},
        "final": _SEGMENT,
        "invariant": {
            "type": "object",
            "additionalProperties": False,
            "required": ["theta_sum_initial", "theta_sum_drift", "drift_bound"],
            "properties": {"theta_sum_initial": _float, "theta_sum_drift": _float,
                           "drift_bound": _float},
        },
        "gain_check": {
            "type": ["object", "null"],
            "additionalProperties": False,
            "required": ["passed", "margin_H"],
            "properties": {"passed": {"type": "boolean"}, "margin_H": _floats},
        },
    },
}

COMPARISON_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "controllers", "steady_state", "voltage_deviation_rank",
                 "sharing_error_rank", "sharing_ratio_c1_c3"],
    "properties": {
        "schema_version": {"const": 1},
        "controllers": {"type": "array", "items": {"enum": ["c1", "c2", "c3"]}},
        "steady_state": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": False,
                "required": ["V_deviation_pct", "sharing_error_A"],
                "properties": {"V_deviation_pct": _floats, "sharing_error_A": _floats},
            },
        },
        "voltage_deviation_rank": {"type": "array", "items": {"type": "string"}},
        "sharing_error_rank": {"type": "array", "items": {"type": "string"}},
        "sharing_ratio_c1_c3": {"type": "array", "items": _float_or_null},
    },
}


def trajectory_header(n: int) -> list[str]:
    cols = ["t_s", "V_dc_V"]
    for stem, unit in (("I_tau", "_A"), ("phi", ""), ("theta", ""), ("rhat", "_ohm"),
                       ("eta", ""), ("u", "_V")):
        cols += [f"{stem}_{i}{unit}" for i in range(1, n + 1)]
    return cols


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(path, traj: Trajectory):
    data = np.column_stack([traj.t, traj.V_dc, traj.I_tau, traj.phi, traj.theta, traj.rhat,
                            traj.eta, traj.u])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trajectory_header(traj.n_s))
        w.writerows([_fmt(v) for v in row] for row in data)


def write_metrics_csv(path, traj: Trajectory, params: PlantParams, W, V_star: float,
                      controller: str | None = None):
    """Long-format rows ``t_s, controller, metric, channel, value``."""
    ctrl = controller or traj.controller
    vd = voltage_deviation_pct(traj, V_star)
    se = current_sharing_error(traj, W)
    _, rel = resistance_estimation_error(traj, params)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "controller", "metric", "channel", "value"])
        for k, t in enumerate(traj.t):
            ts = _fmt(t)
            w.writerow([ts, ctrl, "voltage_deviation_pct", "bus", _fmt(vd[k])])
            w.writerow([ts, ctrl, "current_sharing_error_A", "all", _fmt(se[k])])
            if ctrl == "c1":
                for i in range(traj.n_s):
                    w.writerow([ts, ctrl, "rhat_error_pct", str(i + 1), _fmt(rel[k, i])])


def write_json(path, obj, schema=None):
    if schema is not None:
        jsonschema.validate(obj, schema)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def settle_time(t: np.ndarray, within: np.ndarray, t0: float) -> float | None:
    """Time after ``t0`` from which ``within`` holds until the end of the window."""
    if within.size == 0 or not within[-1]:
        return None
    bad = np.flatnonzero(~within)
    start = 0 if bad.size == 0 else bad[-1] + 1
    return float(max(t[start] - t0, 0.0))


def _spread_pct(wI: np.ndarray) -> np.ndarray:
    mean = np.abs(wI.mean(axis=-1))
    return 100.0 * np.ptp(wI, axis=-1) / np.where(mean > 0, mean, np.nan)


def segment_table(traj: Trajectory, params: PlantParams, W, V_star: float, scenario) -> list[dict]:
    """Per-segment end-point values and settling times."""
    W = np.asarray(W, dtype=float)
    bounds = scenario.boundaries_s()
    loads = scenario.load_amps()
    vd = voltage_deviation_pct(traj, V_star)
    se = current_sharing_error(traj, W)
    spread = _spread_pct(traj.I_tau * W)
    _, rel = resistance_estimation_error(traj, params)
    rows = []
    for s in range(len(scenario.segments)):
        idx = np.flatnonzero(traj.segment == s)
        if idx.size == 0:
            continue
        k = idx[-1]
        t_seg = traj.t[idx]
        adaptive = traj.controller == "c1"
        rows.append({
            "index": s,
            "name": scenario.segments[s].name,
            "t_start_s": float(bounds[s]),
            "t_end_s": float(traj.t[k]),
            "I_ell_A": float(loads[s]),
            "V_dc_V": float(traj.V_dc[k]),
            "V_deviation_pct": float(vd[k]),
            "I_tau_A": [float(v) for v in traj.I_tau[k]],
            "sharing_error_A": float(se[k]),
            "sharing_spread_pct": float(spread[k]),
            "rhat_ohm": [float(v) for v in traj.rhat[k]] if adaptive else None,
            "rhat_error_pct": [float(v) for v in rel[k]] if adaptive else None,
            "voltage_settle_s": settle_time(t_seg, vd[idx] <= _VOLTAGE_BAND_PCT, bounds[s]),
            "sharing_settle_s": settle_time(t_seg, spread[idx] <= _SHARING_BAND_PCT, bounds[s]),
        })
    return rows


def summarize(traj: Trajectory, params: PlantParams, controller, scenario) -> dict:
    W = getattr(controller, "W", np.ones(params.n_s))
    V_star = controller.V_dc_star
    rows = segment_table(traj, params, W, V_star, scenario)
    T_theta = getattr(controller, "T_theta", None)
    theta_sum = traj.theta @ (np.ones(params.n_s) if T_theta is None else T_theta)
    s0 = float(theta_sum[0]) if len(traj) else 0.0
    gain = None
    if isinstance(controller, ControllerGains):
        rep = verify_gains(controller, params)
        gain = {"passed": rep.passed, "margin_H": [float(m) for m in rep.margin]}
    final = dict(rows[-1])
    return {
        "schema_version": 1,
        "controller": traj.controller,
        "step_s": float(traj.step_s),
        "steps": int(traj.meta.get("steps", 0)),
        "duration_s": float(traj.t[-1]) if len(traj) else 0.0,
        "V_dc_star_V": float(V_star),
        "segments": rows,
        "final": final,
        "invariant": {
            "theta_sum_initial": s0,
            "theta_sum_drift": check_invariant_set(traj, T_theta),
            "drift_bound": 1e-6 * (1.0 + abs(s0)),
        },
        "gain_check": gain,
    }


def compare_summaries(summaries: dict[str, dict]) -> dict:
    """Rank controllers by mean segment-end voltage deviation and sharing error."""
    steady = {
        name: {"V_deviation_pct": [r["V_deviation_pct"] for r in s["segments"]],
               "sharing_error_A": [r["sharing_error_A"] for r in s["segments"]]}
        for name, s in summaries.items()
    }
    names = list(summaries)
    v_rank = sorted(names, key=lambda c: float(np.mean(steady[c]["V_deviation_pct"])))
    s_rank = sorted(names, key=lambda c: float(np.mean(steady[c]["sharing_error_A"])))
    ratio = []
    if "c1" in steady and "c3" in steady:
        for a, b in zip(steady["c1"]["sharing_error_A"], steady["c3"]["sharing_error_A"]):
            ratio.append(a / b if b > 0 else None)
    return {
        "schema_version": 1,
        "controllers": names,
        "steady_state": steady,
        "voltage_deviation_rank": v_rank,
        "sharing_error_rank": s_rank,
        "sharing_ratio_c1_c3": ratio,
    }

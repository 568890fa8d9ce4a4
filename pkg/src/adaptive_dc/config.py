"""YAML run configuration.

Every physical quantity carries its unit in the key name. Structural errors
are reported with the line and column of the offending node.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from .controllers import (
    ControllerConfigError,
    ControllerGains,
    DroopGains,
    KnownRGains,
    default_known_r_gains,
)
from .graph import CommGraph, GraphConfigError
from .plant import ModelDomainError, PlantParams
from .scenario import Scenario, Segment, builtin_regional_profile, short_regional_profile
from .simkernel import IntegratorConfig, NoiseConfig

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "default_config_path"]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None,
                 source: str | None = None):
        self.line, self.column, self.source = line, column, source
        where = ""
        if line is not None:
            where = f"{source or '<config>'}:{line}:{column}: "
        super().__init__(where + message)


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}


def _vec_or(item):
    return {"oneOf": [item, {"type": "array", "items": item, "minItems": 1}]}


CONFIG_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "plant", "graph", "scenario"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "plant": {
            "type": "object",
            "required": ["L_tau_H", "R_tau_ohm", "C_dc_F"],
            "additionalProperties": False,
            "properties": {
                "L_tau_H": {"type": "array", "items": _num, "minItems": 1},
                "R_tau_ohm": {"type": "array", "items": _num, "minItems": 1},
                "C_dc_F": _num,
                "Y_S": _num,
                "L_min_H": _vec_or(_num),
                "L_max_H": _vec_or(_num),
            },
        },
        "V_dc_star_V": _pos,
        "controllers": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "c1": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "T_phi_H": _vec_or(_num),
                        "T_theta_F": _vec_or(_num),
                        "T_rhat_A2s_per_ohm": _vec_or(_num),
                        "T_eta_A2_per_Hs": _vec_or(_num),
                        "K_z_ohm": _vec_or(_num),
                        "W": _vec_or(_num),
                    },
                },
                "c2": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"k_droop_ohm": _vec_or(_num)},
                },
                "c3": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "assumed_R_ohm": _vec_or(_num),
                        "R_error_fraction": _num,
                        "T_theta_F": _vec_or(_num),
                    },
                },
            },
        },
        "graph": {
            "type": "object",
            "required": ["edges"],
            "additionalProperties": False,
            "properties": {
                "edges": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "integer", "minimum": 1},
                              "minItems": 2, "maxItems": 2},
                },
                "link_delay_s": _vec_or(_nonneg),
                "broadcast_delay_s": _nonneg,
            },
        },
        "scenario": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "builtin": {"enum": ["regional", "regional_short"]},
                "segment_s": _pos,
                "segments": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["duration_s", "I_ell_pu"],
                        "additionalProperties": False,
                        "properties": {"name": {"type": "string"}, "duration_s": _num,
                                       "I_ell_pu": _num},
                    },
                },
                "V_base_V": _pos,
                "I_base_A": _pos,
                "Y_pu": {"type": ["number", "null"]},
            },
            "oneOf": [{"required": ["builtin"]}, {"required": ["segments"]}],
        },
        "integrator": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["rk4", "euler"]},
                "step_s": _pos,
                "record_every": {"type": "integer", "minimum": 1},
                "t_end_s": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "initial_state": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "I_tau_A": _vec_or(_num),
                "V_dc_V": _num,
                "phi_A": _vec_or(_num),
                "theta_V": _vec_or(_num),
                "rhat_ohm": _vec_or(_num),
                "eta_H": _vec_or(_num),
            },
        },
        "noise": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"sigma_I_A": _nonneg, "sigma_V_V": _nonneg,
                           "seed": {"type": "integer", "minimum": 0}},
        },
        "seed": {"type": "integer", "minimum": 0},
        "backend": {"enum": ["auto", "cython", "python"]},
    },
}


class _LineLoader(yaml.SafeLoader):
    """Safe loader that also reads ``1e6`` / ``1.0e-6`` as floats (YAML 1.2 style)."""


_LineLoader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                   |[0-9][0-9_]*[eE][-+]?[0-9]+
                   |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                   |[-+]?\.(?:inf|Inf|INF)
                   |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def _locate(node, path) -> tuple[int, int] | None:
    """Line/column (1-based) of the deepest node reachable along ``path``."""
    best = node
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt = v
                    best = k
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            nxt = node.value[key]
        else:
            nxt = None
        if nxt is None:
            break
        node = best = nxt
    if best is None:
        return None
    return best.start_mark.line + 1, best.start_mark.column + 1


@dataclass
class RunConfig:
    params: PlantParams
    controllers: dict
    graph: CommGraph
    scenario: Scenario
    integrator: IntegratorConfig
    x0: np.ndarray | None = None
    noise: NoiseConfig | None = None
    seed: int = 0
    backend: str | None = None
    source: str = "<config>"
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def n_s(self) -> int:
        return self.params.n_s

    def controller(self, name: str):
        return self.controllers[name]


def default_config_path(name: str = "default.yaml") -> Path:
    return Path(str(resources.files("adaptive_dc") / "data" / name))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config(text, source=str(path))


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        node = yaml.compose(text, Loader=_LineLoader)
        data = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line, col = (mark.line + 1, mark.column + 1) if mark else (None, None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", line, col, source) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", 1, 1, source)

    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(data),
                    key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        path = list(err.absolute_path)
        if err.validator == "additionalProperties" and isinstance(err.instance, dict):
            # point at the offending key rather than the enclosing mapping
            extra = [k for k in err.instance if k not in err.schema.get("properties", {})]
            path += extra[:1]
        loc = _locate(node, path) or (None, None)
        key = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{key}: {err.message}", *loc, source)

    def fail(path, message):
        loc = _locate(node, path) or (None, None)
        raise ConfigError(f"{'/'.join(map(str, path))}: {message}", *loc, source)

    return _build(data, fail, source)


def _array(value, n, path, fail):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size == 1:
        return np.full(n, float(arr[0]))
    if arr.size != n:
        fail(path, f"expected {n} entries (one per source), got {arr.size}")
    return arr


def _build(data: dict, fail, source: str) -> RunConfig:
    p = data["plant"]
    n = len(p["L_tau_H"])
    if len(p["R_tau_ohm"]) != n:
        fail(["plant", "R_tau_ohm"], f"expected {n} entries to match L_tau_H, got {len(p['R_tau_ohm'])}")
    for key in ("L_tau_H", "R_tau_ohm"):
        if any(v <= 0 for v in p[key]):
            fail(["plant", key], "entries must be strictly positive")
    V_star = float(data.get("V_dc_star_V", 200.0))

    sc = data["scenario"]
    scenario = _scenario(sc, V_star, fail)

    try:
        params = PlantParams(
            L_tau=np.asarray(p["L_tau_H"], dtype=float),
            R_tau=np.asarray(p["R_tau_ohm"], dtype=float),
            C_dc=p["C_dc_F"],
            I_ell=float(scenario.load_amps()[0]),
            Y=p.get("Y_S", 1e-3),
            L_min=None if "L_min_H" not in p else _array(p["L_min_H"], n, ["plant", "L_min_H"], fail),
            L_max=None if "L_max_H" not in p else _array(p["L_max_H"], n, ["plant", "L_max_H"], fail),
        )
    except ModelDomainError as exc:
        fail(["plant"], str(exc))

    g = data["graph"]
    adj = np.zeros((n, n), dtype=bool)
    for k, (a, b) in enumerate(g["edges"]):
        if a > n or b > n:
            fail(["graph", "edges", k], f"node id out of range 1..{n}")
        if a == b:
            fail(["graph", "edges", k], "self-loops are not allowed")
        adj[a - 1, b - 1] = adj[b - 1, a - 1] = True
    link = g.get("link_delay_s", 0.0)
    delay = np.zeros((n, n))
    if isinstance(link, list):
        if len(link) != len(g["edges"]):
            fail(["graph", "link_delay_s"], f"expected one delay per edge ({len(g['edges'])})")
        for (a, b), d in zip(g["edges"], link):
            delay[a - 1, b - 1] = delay[b - 1, a - 1] = d
    else:
        delay[:] = link
    try:
        graph = CommGraph(adj, delay_s=delay, broadcast_delay_s=g.get("broadcast_delay_s", 0.0))
    except GraphConfigError as exc:
        fail(["graph", "edges"], str(exc))

    ctrl_cfg = data.get("controllers", {})
    controllers = {}
    try:
        c1 = ctrl_cfg.get("c1", {})
        controllers["c1"] = ControllerGains(
            T_phi=_array(c1.get("T_phi_H", 1.0), n, ["controllers", "c1", "T_phi_H"], fail),
            T_theta=_array(c1.get("T_theta_F", 1.0), n, ["controllers", "c1", "T_theta_F"], fail),
            T_rhat=_array(c1.get("T_rhat_A2s_per_ohm", 10.0), n,
                          ["controllers", "c1", "T_rhat_A2s_per_ohm"], fail),
            T_eta=_array(c1.get("T_eta_A2_per_Hs", 1e6), n, ["controllers", "c1", "T_eta_A2_per_Hs"], fail),
            K_z=_array(c1.get("K_z_ohm", 2.0), n, ["controllers", "c1", "K_z_ohm"], fail),
            W=_array(c1.get("W", 1.0), n, ["controllers", "c1", "W"], fail),
            V_dc_star=V_star,
        )
    except ControllerConfigError as exc:
        fail(["controllers", "c1"], str(exc))
    W = controllers["c1"].W
    try:
        c2 = ctrl_cfg.get("c2", {})
        k = c2.get("k_droop_ohm")
        k = 0.5 / W if k is None else _array(k, n, ["controllers", "c2", "k_droop_ohm"], fail)
        controllers["c2"] = DroopGains(k, V_star)
    except ControllerConfigError as exc:
        fail(["controllers", "c2"], str(exc))
    try:
        c3 = ctrl_cfg.get("c3", {})
        if "assumed_R_ohm" in c3 and "R_error_fraction" in c3:
            fail(["controllers", "c3"], "give either assumed_R_ohm or R_error_fraction, not both")
        base = default_known_r_gains(params, W=W, V_dc_star=V_star,
                                     r_error=c3.get("R_error_fraction", -0.10))
        controllers["c3"] = KnownRGains(
            assumed_R=base.assumed_R if "assumed_R_ohm" not in c3 else _array(
                c3["assumed_R_ohm"], n, ["controllers", "c3", "assumed_R_ohm"], fail),
            T_theta=_array(c3.get("T_theta_F", 1.0), n, ["controllers", "c3", "T_theta_F"], fail),
            W=W, V_dc_star=V_star,
        )
    except ControllerConfigError as exc:
        fail(["controllers", "c3"], str(exc))

    it = data.get("integrator", {})
    try:
        integrator = IntegratorConfig(method=it.get("method", "rk4"), step_s=it.get("step_s", 1e-7),
                                      record_every=it.get("record_every", 100),
                                      t_end=it.get("t_end_s"))
    except ValueError as exc:
        fail(["integrator"], str(exc))

    x0 = None
    if "initial_state" in data:
        s = data["initial_state"]
        path = ["initial_state"]
        x0 = np.concatenate([
            _array(s.get("I_tau_A", 0.0), n, path + ["I_tau_A"], fail),
            [float(s.get("V_dc_V", V_star))],
            _array(s.get("phi_A", 0.0), n, path + ["phi_A"], fail),
            _array(s.get("theta_V", 0.0), n, path + ["theta_V"], fail),
            _array(s.get("rhat_ohm", 0.0), n, path + ["rhat_ohm"], fail),
            _array(s.get("eta_H", 0.0), n, path + ["eta_H"], fail),
        ])

    seed = int(data.get("seed", 0))
    noise = None
    if "noise" in data:
        nz = data["noise"]
        noise = NoiseConfig(nz.get("sigma_I_A", 0.0), nz.get("sigma_V_V", 0.0), nz.get("seed", seed))

    backend = data.get("backend", "auto")
    return RunConfig(params=params, controllers=controllers, graph=graph, scenario=scenario,
                     integrator=integrator, x0=x0, noise=noise, seed=seed,
                     backend=None if backend == "auto" else backend, source=source, raw=data)


def _scenario(sc: dict, V_star: float, fail) -> Scenario:
    base = {"V_base": sc.get("V_base_V", 200.0), "I_base": sc.get("I_base_A", 6.7),
            "V_dc_star": V_star, "Y_pu": sc.get("Y_pu")}
    if "builtin" in sc:
        if sc["builtin"] == "regional":
            if "segment_s" in sc:
                fail(["scenario", "segment_s"], "segment_s only applies to regional_short")
            segs = builtin_regional_profile().segments
        else:
            segs = short_regional_profile(sc.get("segment_s", 0.05)).segments
    else:
        segs = []
        for k, s in enumerate(sc["segments"]):
            if not (s["duration_s"] > 0):
                fail(["scenario", "segments", k, "duration_s"], "duration must be positive")
            if not (s["I_ell_pu"] > 0):
                fail(["scenario", "segments", k, "I_ell_pu"], "load must be positive")
            segs.append(Segment(s["duration_s"], s["I_ell_pu"], s.get("name", f"segment{k + 1}")))
    return Scenario(tuple(segs), **base)

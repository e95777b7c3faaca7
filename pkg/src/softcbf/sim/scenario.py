"""Scenario configuration for the ground-robot examples and its assembly into barriers.

A scenario is stored as JSON. Every field, its unit and default:

``name`` (str)
    Scenario identifier used in reports.
``map.obstacles`` (list)
    Each entry ``{"bx", "by", "ax", "ay", "c", "p"}``: center [m], axis
    scales [1/m], offset [-] and norm exponent. ``ax, ay`` default 1,
    ``p`` defaults to ``map.p``.
``map.wall`` (object)
    ``{"ax", "ay", "c", "p"}``; the free region is
    ``||(ax q_x, ay q_y)||_p <= c``. Defaults 0.1, 0.1, 1, 4.
``map.p`` (float, default 4)
    Default norm exponent.
``map.speed_bounds`` ([v_min, v_max] in m/s, default [-1, 9]).
``input_bounds`` (object or null)
    ``{"u1": [lo, hi], "u2": [lo, hi]}`` bounds on the plant input; only
    used together with ``controller``.
``gains`` (object)
    ``{"k1", "k2", "k3"}`` of the goal-seeking law. Defaults 0.2, 1, 2.
``goal`` ([q_x, q_y] in m).
``goal_radius`` (m, default 0)
    Inside this distance of the goal the desired control reduces to speed
    damping. Zero keeps the law exact everywhere except the goal itself.
``x0`` ([q_x, q_y, v, theta] in m, m, m/s, rad).
``filter.rho`` (float, default 10)
    Soft-minimum sharpness.
``filter.gamma`` (float, default 1e24)
    Slack weight.
``filter.alpha`` (alpha object, default linear slope 0.5)
    Outer alpha of the barrier constraint.
``alphas`` (object)
    Alpha chains per barrier group: ``obstacles``, ``wall``, ``speed``,
    ``inputs``. Each is a list of alpha objects ``{"kind", "slope",
    "offset"}``; the relative degree of each barrier is one plus the chain
    length. ``overrides`` maps a barrier label (``obs1`` .. ``obs6``,
    ``wall``, ``speed_max``, ``speed_min``, ``u1_max``, ``u1_min``,
    ``u2_max``, ``u2_min``) to its own chain.
``controller`` (object or null)
    ``{"A", "B", "C", "xc0", "gammas"}``: LTI controller dynamics, initial
    controller state and tracking gains gamma_0 .. gamma_{d_c-1}. When
    ``xc0`` is the string ``"matched"`` the controller starts matched.
``dt_integrator`` (s, default 0.001), ``control_rate`` (Hz, default 1000),
``duration`` (s, default 60).
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import jax.numpy as jnp
import numpy as np

from ..cbf_chain import AlphaFunction, BarrierSpec, CompositeCBF, composite_terms
from ..fields import ControlAffineSystem, ScalarField
from ..input_aug import (
    CostSpec,
    InputConstraintSpec,
    LtiController,
    TrackingLawConfig,
    build_cascade,
    lift_barriers,
    matched_initialization,
)
from .unicycle import (
    DesiredControlGains,
    ObstacleParams,
    WallParams,
    desired_control_fn,
    obstacle_field,
    speed_fields,
    unicycle_system,
    wall_field,
)

DATA_DIR = Path(__file__).resolve().parent.parent / "data"

REFERENCE_GOALS = ((3.0, 4.5), (-7.0, 0.0), (7.0, 1.5), (-1.0, 7.0))


class ConfigError(ValueError):
    """The scenario document is malformed or inconsistent."""


@dataclass
class ControllerConfig:
    A: List[List[float]]
    B: List[List[float]]
    C: List[List[float]]
    xc0: Any = field(default_factory=lambda: [0.0, 0.0])
    gammas: List[float] = field(default_factory=lambda: [1.0])


@dataclass
class ScenarioConfig:
    name: str
    obstacles: List[ObstacleParams]
    wall: WallParams
    speed_bounds: Tuple[float, float]
    gains: DesiredControlGains
    goal: Tuple[float, float]
    x0: Tuple[float, ...]
    rho: float = 10.0
    gamma: float = 1e24
    alpha: AlphaFunction = field(default_factory=lambda: AlphaFunction.linear(0.5))
    alphas: Dict[str, Any] = field(default_factory=dict)
    input_bounds: Optional[Dict[str, Tuple[float, float]]] = None
    controller: Optional[ControllerConfig] = None
    goal_radius: float = 0.0
    dt_integrator: float = 0.001
    control_rate: float = 1000.0
    duration: float = 60.0

    def __post_init__(self):
        if self.duration < 0:
            raise ConfigError(f"duration must be nonnegative, got {self.duration}")
        if self.control_rate <= 0 or self.dt_integrator <= 0:
            raise ConfigError("control_rate and dt_integrator must be positive")
        if self.dt_integrator > 1.0 / self.control_rate * (1 + 1e-12):
            raise ConfigError("dt_integrator must not exceed the control period")
        ratio = 1.0 / (self.control_rate * self.dt_integrator)
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("the control period must be an integer multiple of dt_integrator")
        if len(self.x0) != 4:
            raise ConfigError(f"x0 must have 4 entries (q_x, q_y, v, theta), got {len(self.x0)}")
        if self.controller is not None and self.input_bounds is None:
            raise ConfigError("a controller needs input_bounds")
        if self.goal_radius < 0:
            raise ConfigError("goal_radius must be nonnegative")
        if not self.rho > 0 or not self.gamma > 0:
            raise ConfigError("filter.rho and filter.gamma must be positive")

    @property
    def augmented(self) -> bool:
        return self.controller is not None

    @property
    def substeps(self) -> int:
        return int(round(1.0 / (self.control_rate * self.dt_integrator)))

    @property
    def n_ticks(self) -> int:
        return int(round(self.duration * self.control_rate))

    def to_dict(self) -> Dict[str, Any]:
        d = {
            "name": self.name,
            "map": {
                "obstacles": [
                    {"bx": o.b_x, "by": o.b_y, "ax": o.a_x, "ay": o.a_y, "c": o.c, "p": o.p} for o in self.obstacles
                ],
                "wall": {"ax": self.wall.a_x, "ay": self.wall.a_y, "c": self.wall.c, "p": self.wall.p},
                "speed_bounds": list(self.speed_bounds),
            },
            "input_bounds": None if self.input_bounds is None else {k: list(v) for k, v in self.input_bounds.items()},
            "gains": {"k1": self.gains.k1, "k2": self.gains.k2, "k3": self.gains.k3},
            "goal": list(self.goal),
            "x0": list(self.x0),
            "goal_radius": self.goal_radius,
            "filter": {"rho": self.rho, "gamma": self.gamma, "alpha": self.alpha.to_dict()},
            "alphas": copy.deepcopy(self.alphas),
            "controller": None,
            "dt_integrator": self.dt_integrator,
            "control_rate": self.control_rate,
            "duration": self.duration,
        }
        if self.controller is not None:
            c = self.controller
            d["controller"] = {"A": c.A, "B": c.B, "C": c.C, "xc0": c.xc0, "gammas": c.gammas}
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ScenarioConfig":
        try:
            m = d.get("map", {})
            p_default = float(m.get("p", 4.0))
            obstacles = [
                ObstacleParams(
                    float(o["bx"]),
                    float(o["by"]),
                    float(o.get("ax", 1.0)),
                    float(o.get("ay", 1.0)),
                    float(o.get("c", 1.0)),
                    float(o.get("p", p_default)),
                )
                for o in m.get("obstacles", [])
            ]
            w = m.get("wall", {})
            wall = WallParams(float(w.get("ax", 0.1)), float(w.get("ay", 0.1)), float(w.get("c", 1.0)), float(w.get("p", p_default)))
            flt = d.get("filter", {})
            ctrl = d.get("controller")
            bounds = d.get("input_bounds")
            return cls(
                name=str(d.get("name", "scenario")),
                obstacles=obstacles,
                wall=wall,
                speed_bounds=tuple(float(v) for v in m.get("speed_bounds", (-1.0, 9.0))),
                gains=DesiredControlGains(**{k: float(v) for k, v in d.get("gains", {}).items()}),
                goal=tuple(float(v) for v in d["goal"]),
                x0=tuple(float(v) for v in d["x0"]),
                rho=float(flt.get("rho", 10.0)),
                gamma=float(flt.get("gamma", 1e24)),
                alpha=AlphaFunction.from_dict(flt.get("alpha", {"kind": "linear", "slope": 0.5})),
                alphas=copy.deepcopy(d.get("alphas", {})),
                input_bounds=None if bounds is None else {k: tuple(float(x) for x in v) for k, v in bounds.items()},
                controller=None if ctrl is None else ControllerConfig(**ctrl),
                goal_radius=float(d.get("goal_radius", 0.0)),
                dt_integrator=float(d.get("dt_integrator", 0.001)),
                control_rate=float(d.get("control_rate", 1000.0)),
                duration=float(d.get("duration", 60.0)),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid scenario: {exc!r}") from exc


def load_config(path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return ScenarioConfig.from_dict(doc)


def default_config(name: str) -> ScenarioConfig:
    """Bundled scenario ``example1`` or ``example3``."""
    return load_config(DATA_DIR / f"{name}.json")


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: ScenarioConfig, overrides: Sequence[str]) -> ScenarioConfig:
    """Apply ``dotted.key=value`` assignments to the JSON form; later ones win."""
    doc = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, _, raw = item.partition("=")
        node = doc
        parts = key.strip().split(".")
        for part in parts[:-1]:
            if isinstance(node, list):
                node = node[int(part)]
            else:
                if node.get(part) is None:
                    node[part] = {}
                node = node[part]
        last = parts[-1]
        if isinstance(node, list):
            node[int(last)] = _parse_value(raw)
        else:
            node[last] = _parse_value(raw)
    return ScenarioConfig.from_dict(doc)


def _alphas(table: Sequence[dict]) -> Tuple[AlphaFunction, ...]:
    return tuple(AlphaFunction.from_dict(a) for a in table)


INPUT_LABELS = ("u1_max", "u1_min", "u2_max", "u2_min")


def _chain_for(cfg: ScenarioConfig, label: str, group: str) -> Tuple[AlphaFunction, ...]:
    overrides = cfg.alphas.get("overrides", {})
    return _alphas(overrides.get(label, cfg.alphas.get(group, [])))


def _plant_fields(cfg: ScenarioConfig, n: int = 4) -> List[Tuple[ScalarField, str]]:
    out = [(obstacle_field(o, f"obs{k + 1}", n), "obstacles") for k, o in enumerate(cfg.obstacles)]
    out.append((wall_field(cfg.wall, "wall", n), "wall"))
    lo, hi = cfg.speed_bounds
    for fld in speed_fields(lo, hi, n):
        out.append((fld, "speed"))
    return out


def _input_fields(cfg: ScenarioConfig) -> List[ScalarField]:
    (l1, u1), (l2, u2) = cfg.input_bounds["u1"], cfg.input_bounds["u2"]
    return [
        ScalarField(lambda u: u1 - u[0], 2, "u1_max"),
        ScalarField(lambda u: u[0] - l1, 2, "u1_min"),
        ScalarField(lambda u: u2 - u[1], 2, "u2_max"),
        ScalarField(lambda u: u[1] - l2, 2, "u2_min"),
    ]


@dataclass(eq=False)
class Scenario:
    """Assembled objects for one scenario."""

    cfg: ScenarioConfig
    plant: ControlAffineSystem
    sys: ControlAffineSystem
    cbf: CompositeCBF
    gains: DesiredControlGains
    cost: CostSpec
    x0: np.ndarray
    plant_specs: Tuple[BarrierSpec, ...] = ()
    ics: Optional[InputConstraintSpec] = None
    controller: Optional[LtiController] = None
    law: Optional[TrackingLawConfig] = None

    @property
    def augmented(self) -> bool:
        return self.controller is not None

    @property
    def n_plant(self) -> int:
        return self.plant.n


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    plant = unicycle_system()
    ud = desired_control_fn(cfg.gains, cfg.goal, cfg.goal_radius)
    cost = CostSpec(Qhat=lambda xh: jnp.eye(2), chat=lambda xh: -ud(xh))
    x0 = np.asarray(cfg.x0, dtype=float)
    if not cfg.augmented:
        specs = tuple(
            BarrierSpec(fld, len(chain) + 1, chain, fld.label)
            for fld, group in _plant_fields(cfg)
            for chain in [_chain_for(cfg, fld.label, group)]
        )
        return Scenario(cfg, plant, plant, CompositeCBF(specs, cfg.rho), cfg.gains, cost, x0, plant_specs=specs)

    cc = cfg.controller
    try:
        ctrl = LtiController(np.array(cc.A, dtype=float), np.array(cc.B, dtype=float), np.array(cc.C, dtype=float))
        law = TrackingLawConfig(tuple(cc.gammas))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    dyn = ctrl.dynamics
    chains = []
    plant_specs = []
    for fld, group in _plant_fields(cfg):
        chain = _chain_for(cfg, fld.label, group)
        d_hat = len(chain) + 1 - dyn.d_c
        if d_hat < 1:
            raise ConfigError(f"{fld.label}: alpha chain too short for d_c = {dyn.d_c}")
        plant_specs.append(BarrierSpec(fld, d_hat, (AlphaFunction.linear(1.0),) * (d_hat - 1), fld.label))
        chains.append(chain)
    ics = InputConstraintSpec(tuple(_input_fields(cfg)))
    for label in INPUT_LABELS:
        chains.append(_chain_for(cfg, label, "inputs"))
    specs = lift_barriers(plant_specs, ics, dyn, chains)
    sys = build_cascade(plant, dyn)
    if isinstance(cc.xc0, str):
        if cc.xc0 != "matched":
            raise ConfigError(f"unknown xc0 {cc.xc0!r}")
        xc0 = matched_initialization(cost, ctrl, x0)
    else:
        xc0 = np.asarray(cc.xc0, dtype=float)
        if xc0.shape != (dyn.n_c,):
            raise ConfigError(f"xc0 must have {dyn.n_c} entries")
    return Scenario(
        cfg,
        plant,
        sys,
        CompositeCBF(specs, cfg.rho),
        cfg.gains,
        cost,
        np.concatenate([x0, xc0]),
        plant_specs=tuple(plant_specs),
        ics=ics,
        controller=ctrl,
        law=law,
    )


def sample_states(scn: Scenario, count: int, rng: np.random.Generator, require: str = "Ss") -> np.ndarray:
    """Rejection-sample states in the map box that lie in S_s (``"Ss"``) or in S (``"S"``).

    Positions cover the wall's bounding box, speed the allowed band, heading
    [-pi, pi) and, for augmented scenarios, controller states the input box.
    """
    lo_v, hi_v = scn.cfg.speed_bounds
    half = np.array([scn.cfg.wall.c / scn.cfg.wall.a_x, scn.cfg.wall.c / scn.cfg.wall.a_y])
    out = []
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > 200 * count + 10000:
            raise RuntimeError(f"could only sample {len(out)} of {count} states")
        q = rng.uniform(-half, half)
        v = rng.uniform(lo_v, hi_v)
        th = rng.uniform(-math.pi, math.pi)
        x = [q[0], q[1], v, th]
        if scn.augmented:
            b = scn.cfg.input_bounds
            x += [rng.uniform(*b["u1"]), rng.uniform(*b["u2"])]
        x = np.array(x)
        t = composite_terms(scn.cbf, scn.sys, x)
        if require == "S" and t.h >= 0:
            out.append(x)
        elif require == "Ss" and np.all(t.hj >= 0):
            out.append(x)
    return np.array(out)

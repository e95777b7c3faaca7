"""Closed-loop episodes: zero-order-hold filtered control, RK4 plant, per-tick logging."""

from __future__ import annotations

import csv
import functools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import jax
import jax.numpy as jnp
import numpy as np

from ..cbf_chain import composite_terms, membership_from_terms
from ..input_aug import tracking_fn
from ..safety_filter import FilterProblem, InfeasibleFilterError, solve_filter
from .integrate import NonFiniteStateError, step_rk4
from .scenario import Scenario, build_scenario

logger = logging.getLogger(__name__)

PLANT_COLUMNS = ["qx", "qy", "v", "theta"]


def trace_header(augmented: bool) -> List[str]:
    cols = ["t"] + PLANT_COLUMNS
    if augmented:
        cols += ["xc1", "xc2"]
    cols += ["u1", "u2"]
    if augmented:
        cols += ["uhat1", "uhat2", "ud1hat", "ud2hat", "e1", "e2"]
    return cols + ["h", "min_b", "min_hj", "mu", "status", "goal_dist"]


@dataclass
class TrajectoryLog:
    """Uniformly sampled closed-loop signals, one row per control tick.

    ``data`` holds every numeric column of ``header`` except ``status``,
    which is kept as strings. ``failure`` is None for a complete episode and
    a machine-readable reason otherwise.
    """

    scenario: str
    header: List[str]
    data: np.ndarray
    status: List[str]
    failure: Optional[str] = None
    x0_admissible: bool = True

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def numeric_header(self) -> List[str]:
        return [c for c in self.header if c != "status"]

    def column(self, name: str) -> np.ndarray:
        if name == "status":
            return np.array(self.status)
        return self.data[:, self.numeric_header.index(name)]

    def rows(self):
        si = self.header.index("status")
        for vals, st in zip(self.data, self.status):
            row = [repr(float(v)) for v in vals]
            row.insert(si, st)
            yield row

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header)
            w.writerows(self.rows())

    @classmethod
    def from_csv(cls, path, scenario: str = "") -> "TrajectoryLog":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            si = header.index("status")
            data, status = [], []
            for row in r:
                status.append(row[si])
                data.append([float(v) for k, v in enumerate(row) if k != si])
        ncol = len(header) - 1
        return cls(scenario or Path(path).stem, header, np.array(data, dtype=float).reshape(-1, ncol), status)


@functools.lru_cache(maxsize=16)
def _tick(scn: Scenario):
    terms = scn.cbf.terms_fn(scn.sys)
    nh = scn.n_plant
    ideal = scn.cost.ideal_fn()
    if scn.augmented:
        ud = tracking_fn(scn.cost, scn.controller.dynamics, scn.law, scn.sys)
        C = jnp.asarray(scn.controller.C)
    else:
        ud = ideal

    def tick(x):
        h, lf, lg, _, _, levels = terms(x)
        hj = jnp.stack([lv[0] for lv in levels])
        parts = [jnp.stack([h, lf]), lg, ud(x), hj, jnp.min(jnp.concatenate(levels))[None]]
        if scn.augmented:
            uhat = C @ x[nh:]
            uhat_d = ideal(x[:nh])
            parts += [uhat, uhat_d, uhat - uhat_d]
        return jnp.concatenate(parts)

    return jax.jit(tick)


def run_episode(cfg, scenario: Optional[Scenario] = None) -> TrajectoryLog:
    """Simulate ``cfg.duration`` seconds and log every control tick.

    The filter runs at ``control_rate``; its output is held over the RK4
    substeps of one control period. An infeasible filter or a non-finite
    state ends the episode early with ``failure`` set.

    A prebuilt ``scenario`` supplies the barriers, dynamics and initial
    state; timing and the filter weights still come from ``cfg`` when given.
    """
    scn = scenario if scenario is not None else build_scenario(cfg)
    cfg = cfg if cfg is not None else scn.cfg
    m = scn.sys.m
    ell = len(scn.cbf.specs)
    aug = scn.augmented
    header = trace_header(aug)
    tick = _tick(scn)
    Q = np.eye(m)
    goal = np.asarray(cfg.goal)
    dt = cfg.dt_integrator
    period = 1.0 / cfg.control_rate

    x = scn.x0.copy()
    mem = membership_from_terms(scn.cbf, composite_terms(scn.cbf, scn.sys, x))
    admissible = mem.in_S and mem.in_C
    if not admissible:
        logger.warning("initial state is outside S intersect C; running anyway")

    rows, status = [], []
    failure = None
    for k in range(cfg.n_ticks + 1):
        out = np.asarray(tick(x))
        if not np.all(np.isfinite(out)):
            failure = f"non_finite_state: barrier terms at t={k * period:.6g}"
            break
        h, lf = out[0], out[1]
        lg = out[2 : 2 + m]
        ud = out[2 + m : 2 + 2 * m]
        hj = out[2 + 2 * m : 2 + 2 * m + ell]
        min_b = out[2 + 2 * m + ell]
        extra = out[3 + 2 * m + ell :]
        problem = FilterProblem(Q, -ud, cfg.gamma, cfg.alpha, h, lf, lg)
        try:
            sol = solve_filter(problem)
        except InfeasibleFilterError as exc:
            failure = f"infeasible_filter: t={k * period:.6g}: {exc}"
            break
        t = k * period
        row = [t, *x[:4]]
        if aug:
            row += [*x[4:]]
        row += [*sol.u]
        if aug:
            row += [*extra]
        row += [h, min_b, hj.min(), sol.mu, np.hypot(*(x[:2] - goal))]
        rows.append(row)
        status.append(sol.status)
        if k == cfg.n_ticks:
            break
        try:
            for _ in range(cfg.substeps):
                x = step_rk4(scn.sys, x, sol.u, dt)
        except NonFiniteStateError as exc:
            failure = f"non_finite_state: t={t:.6g}: {exc}"
            break

    data = np.array(rows, dtype=float).reshape(-1, len(header) - 1)
    return TrajectoryLog(cfg.name, header, data, status, failure, admissible)


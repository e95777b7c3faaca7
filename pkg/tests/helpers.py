"""Closed-loop runs with the filter bypassed (u = u_d), for the tracking-error tests."""

import functools

import jax
import jax.numpy as jnp
import numpy as np

from softcbf.input_aug import tracking_fn


@functools.lru_cache(maxsize=8)
def _loop(scn, dt, hold):
    ctrl = scn.controller.dynamics
    nh = scn.n_plant
    ud = tracking_fn(scn.cost, ctrl, scn.law, scn.sys)
    ideal = scn.cost.ideal_fn()

    def step(x):
        u0 = ud(x)

        def rhs(y):
            return scn.sys.rhs(y, u0 if hold else ud(y))

        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def err(x):
        return ctrl.h_c.fn(x[nh:]) - ideal(x[:nh])

    return jax.jit(step), jax.jit(err)


def simulate_unfiltered(scn, xc0, duration, dt=1e-3, hold=True):
    """Integrate the cascade under u = u_d; returns (t, x, e).

    With ``hold`` the input is sampled once per step (zero-order hold). Without it
    u_d is re-evaluated at every RK4 stage, which integrates the continuous-time loop.
    """
    step, err = _loop(scn, float(dt), bool(hold))
    x = jnp.concatenate([jnp.asarray(scn.x0[: scn.n_plant]), jnp.asarray(xc0, dtype=float)])
    n = int(round(duration / dt))
    xs, es = [np.asarray(x)], [np.asarray(err(x))]
    for _ in range(n):
        x = step(x)
        xs.append(np.asarray(x))
        es.append(np.asarray(err(x)))
    return np.arange(n + 1) * dt, np.array(xs), np.array(es)


# Criterion number -> pass/fail line, filled by test_acceptance and printed by conftest.
ACCEPTANCE = {}

"""Three-element Windkessel outlet model.

The continuous model couples the proximal pressure ``pp`` and the outlet
pressure ``p`` to the outlet flow rate ``Q``::

    C dpp/dt + (pp - pd) / Rd = Q
    p - pp = Rp Q

Pressures are kinematic (m²/s²).  ``Rp = 0`` gives the two-element model.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "WindkesselParams",
    "WindkesselState",
    "CASE1_PARAMS",
    "CASE1_U0",
    "CASE1_RADIUS",
    "step",
    "inlet_profile",
    "analytic_case1_pressure",
    "exact_case1_pressure",
    "simulate",
    "convergence_study",
]


@dataclass(frozen=True)
class WindkesselParams:
    rp: float
    rd: float
    c: float
    pd: float = 0.0

    def __post_init__(self):
        if not self.rd > 0:
            raise ValueError(f"distal resistance must be positive, got {self.rd}")
        if not self.c > 0:
            raise ValueError(f"compliance must be positive, got {self.c}")
        if not self.rp >= 0:
            raise ValueError(f"proximal resistance must be non-negative, got {self.rp}")

    @property
    def time_constant(self):
        return self.rd * self.c


@dataclass(frozen=True)
class WindkesselState:
    pp: float = 0.0
    p: float = 0.0
    t: float = 0.0


# Case 1 values: Rp, Rd [1/(m s)], C [m s^2]; inlet amplitude [m/s]; radius [m]
CASE1_PARAMS = WindkesselParams(rp=1.0e4, rd=1.0e5, c=0.07957e-5)
CASE1_U0 = 0.007957
CASE1_RADIUS = 0.02


def step(state, q, dt, params):
    """Advance one implicit Euler step with the flow rate ``q`` held fixed.

    Solves ``C (pp' - pp) / dt + (pp' - pd) / Rd = q`` for ``pp'`` and sets
    ``p' = pp' + Rp q``.
    """
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    c_dt = params.c / dt
    pp = (c_dt * state.pp + q + params.pd / params.rd) / (c_dt + 1.0 / params.rd)
    return WindkesselState(pp=pp, p=pp + params.rp * q, t=state.t + dt)


def inlet_profile(t, u0, params):
    """Pulsatile inflow speed ``u0 sin^2(t / (4 Rd C))``."""
    return u0 * np.sin(np.asarray(t, dtype=float) / (4.0 * params.time_constant)) ** 2


def analytic_case1_pressure(t, u0, radius, params, area=None, decaying_exponential=False):
    """Closed-form outflow pressure of the idealised vessel, as published.

    ``area`` replaces the circular section ``pi R^2`` (a plane channel uses
    its inlet height).  The published expression carries ``exp(+t / 2RdC)``;
    ``decaying_exponential=True`` flips the sign of that exponent.  Neither
    variant solves the Windkessel equations exactly for these parameters; see
    :func:`exact_case1_pressure`.
    """
    t = np.asarray(t, dtype=float)
    tau = params.time_constant
    if area is None:
        area = np.pi * radius**2
    sign = -1.0 if decaying_exponential else 1.0
    x = t / (2.0 * tau)
    bracket = (params.rp / params.rd + 0.5) * np.sin(t / (4.0 * tau)) ** 2 + 0.25 * (
        1.0 - np.exp(sign * x) - np.sin(x)
    )
    return params.rd * u0 * area * bracket


def exact_case1_pressure(t, u0, params, area):
    """Exact solution of the continuous model for ``Q = area * inlet_profile``.

    With ``tau = Rd C`` the forcing frequency is ``1 / (2 tau)``, which gives
    ``pp = Rd Q0 [1/2 - 0.4 cos(t/2tau) - 0.2 sin(t/2tau) - 0.1 exp(-t/tau)]``
    for ``pp(0) = 0`` (plus the relaxation towards ``pd``).
    """
    t = np.asarray(t, dtype=float)
    tau = params.time_constant
    q0 = u0 * area
    x = t / (2.0 * tau)
    decay = np.exp(-t / tau)
    pp = params.rd * q0 * (0.5 - 0.4 * np.cos(x) - 0.2 * np.sin(x) - 0.1 * decay)
    pp = pp + params.pd * (1.0 - decay)
    return pp + params.rp * q0 * np.sin(t / (4.0 * tau)) ** 2


def simulate(flow, dt, t_end, params, t0=0.0):
    """Discrete outlet trace for a prescribed flow-rate function.

    The flow rate enters explicitly: step ``n -> n+1`` uses ``flow(t_n)``.

    Returns
    -------
    times, pressures : ndarray
        Arrays of length ``N_T + 1`` including the initial state.
    """
    n_steps = int(round((t_end - t0) / dt))
    if n_steps < 1 or not np.isclose(t0 + n_steps * dt, t_end, rtol=0, atol=1e-9 * max(1.0, abs(t_end))):
        raise ValueError(f"dt={dt} does not divide the interval ({t0}, {t_end}]")
    state = WindkesselState(pp=0.0, p=0.0, t=t0)
    times = t0 + dt * np.arange(n_steps + 1)
    out = np.empty(n_steps + 1)
    out[0] = state.p
    for n in range(n_steps):
        state = step(state, float(flow(times[n])), dt, params)
        out[n + 1] = state.p
    return times, out


def convergence_study(dts, params, u0, area, t_end=1.0, reference="published",
                      radius=CASE1_RADIUS, decaying_exponential=False):
    """Max-norm error of the discrete trace against a reference, per ``dt``.

    Parameters
    ----------
    reference : {"published", "exact"}
        ``"published"`` compares with :func:`analytic_case1_pressure`,
        ``"exact"`` with :func:`exact_case1_pressure`.

    Returns
    -------
    errors : ndarray
    ratios : ndarray
        ``errors[k] / errors[k + 1]``.
    """
    def flow(t):
        return area * inlet_profile(t, u0, params)

    errors = []
    for dt in dts:
        t, p = simulate(flow, dt, t_end, params)
        if reference == "published":
            ref = analytic_case1_pressure(t, u0, radius, params, area=area,
                                          decaying_exponential=decaying_exponential)
        elif reference == "exact":
            ref = exact_case1_pressure(t, u0, params, area)
        else:
            raise ValueError(f"unknown reference {reference!r}")
        errors.append(float(np.max(np.abs(p - ref))))
    errors = np.array(errors)
    return errors, errors[:-1] / errors[1:]

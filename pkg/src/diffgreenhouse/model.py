"""Reduced-order greenhouse climate and cucumber crop model.

The dynamics are written in quasi-linear form ``dx/dt = A(x, u) x + b(x, u)``:
``A`` and ``b`` are evaluated at the current state, then held fixed while the
linear system is solved exactly over one time step.

State channels (fixed order)
----------------------------
=========  ==============================================  ===============
 Name       Description                                     Unit
=========  ==============================================  ===============
T_air      air temperature                                 degC
VP_air     air vapour pressure                             Pa
CO2_air    air CO2 concentration                           ppm
T_can      canopy temperature                              degC
T_can24    24 h moving average of canopy temperature       degC
C_buf      carbohydrate buffer                             mg CH2O m-2
C_leaf     leaf carbohydrate                               mg CH2O m-2
C_fruit    fruit carbohydrate                              mg CH2O m-2
N_fruit    fruits on the plants                            fruits m-2
HW         cumulative harvested fresh weight               kg m-2
HC         cumulative harvested fruit count                fruits m-2
=========  ==============================================  ===============

Controls: heating pipe temperature (degC), ventilation aperture, fogging,
CO2 injection and harvest intensity (fractions in [0, 1]).
Weather: outdoor temperature (degC), vapour pressure (Pa), CO2 (ppm) and
global radiation (W m-2).

Processes
---------
Air temperature: pipe heating (only while the pipe is warmer than the air),
absorbed radiation, cover loss, leakage and ventilation, canopy convection.
Vapour: canopy transpiration, fogging, condensation on the cover, air
exchange.  CO2: injection, net photosynthesis, air exchange.  Canopy
temperature: absorbed radiation, convection, latent cooling.  Crop:
photosynthate enters the buffer, flows to leaves and fruits at a
temperature-dependent rate, is lost to maintenance respiration, and fruits
are removed by harvest into the cumulative harvest channels.

Saturation vapour pressure at the canopy is linearised around the current
canopy temperature, so its state dependence sits in ``A``.  Photosynthesis
and condensation are evaluated at the current state and placed in ``b``.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import linalg
from .params import load_registry

CHANNELS = (
    "T_air", "VP_air", "CO2_air", "T_can", "T_can24",
    "C_buf", "C_leaf", "C_fruit", "N_fruit", "HW", "HC",
)
CONTROLS = ("u_pipe", "u_vent", "u_fog", "u_co2", "u_harvest")
WEATHER = ("T_out", "VP_out", "CO2_out", "I_glob")
IDX = {name: i for i, name in enumerate(CHANNELS)}
N_STATES = len(CHANNELS)

# Observation classes: "step" every time step, "daily" once per day, "none" never.
DEFAULT_MASK = {
    "T_air": "step", "VP_air": "step", "CO2_air": "step",
    "T_can": "none", "T_can24": "none", "C_buf": "none", "C_leaf": "none",
    "C_fruit": "none", "N_fruit": "none", "HW": "daily", "HC": "daily",
}

DT = 300.0
TAU_24 = 86400.0
RHO_CP = 1200.0  # J m-3 K-1, volumetric heat capacity of air
LAI_SOFTNESS = 0.05
COND_SOFTNESS = 50.0  # Pa
# Channels that may not go negative; -inf marks unconstrained ones.
LOWER_BOUNDS = np.array([-np.inf, 0.0, 0.0, -np.inf, -np.inf, 0, 0, 0, 0, 0, 0], dtype=float)

REGISTRY = load_registry()
PARAM_NAMES = tuple(s.name for s in REGISTRY)
_PIDX = {name: i for i, name in enumerate(PARAM_NAMES)}


class DomainError(ValueError):
    pass


def _check_temperature(T):
    Tv = ad.value(T)
    if np.any(Tv <= -40.0) or np.any(Tv >= 80.0):
        raise DomainError(f"temperature outside (-40, 80) degC: {Tv.min():.3g}..{Tv.max():.3g}")


def saturation_vapor_pressure(T):
    """Magnus saturation vapour pressure in Pa for ``T`` in degC."""
    _check_temperature(T)
    return 610.94 * ad.exp(17.625 * T / (T + 243.04))


def _svp_slope(T, svp):
    return svp * (17.625 * 243.04) / ((T + 243.04) * (T + 243.04))


def lai(c_leaf, sla, lai_max, softness=LAI_SOFTNESS, smooth=True):
    """Leaf area index from leaf carbohydrate, capped at ``lai_max``.

    The smooth cap ``a - softness * log(1 + exp((a - cap) / softness))`` stays
    within ``softness * ln 2`` of the hard minimum.
    """
    a = sla * c_leaf
    if not smooth:
        return ad.minimum(a, lai_max)
    return a - softness * ad.softplus((a - lai_max) / softness)


def params_view(theta):
    """Named access to a constrained parameter vector (array or ``Var``).

    Step-invariant combinations of parameters are added under keys starting
    with an underscore.  A dict returned by an earlier call passes through,
    so rollouts split the vector once rather than every step.
    """
    if isinstance(theta, dict):
        return theta
    n = ad.value(theta).shape[-1]
    if n != len(PARAM_NAMES):
        raise ValueError(f"expected {len(PARAM_NAMES)} parameters, got {n}")
    p = {name: theta[..., i] for name, i in _PIDX.items()}
    p["_inv_cap_air"] = 1.0 / p["cap_air"]
    p["_inv_h_air"] = 1.0 / p["h_air"]
    p["_inv_cap_can"] = 1.0 / p["cap_can"]
    p["_pipe_air"] = p["k_pipe"] * p["_inv_cap_air"]
    p["_glob_air"] = p["eta_glob"] * p["_inv_cap_air"]
    p["_lat_can"] = p["lambda_lat"] * p["_inv_cap_can"]
    p["_rg_total"] = p["rg_leaf"] + p["rg_fruit"]
    p["_set_per_max"] = p["r_set"] / p["n_max"]
    p["_log_q10"] = ad.log(p["q10"]) * 0.1
    p["_inv_c_fw"] = 1.0 / p["c_fw"]
    return p


def build_system(x, u, w, theta):
    """Quasi-linear system ``(A, b)`` at state ``x``.

    ``x`` has shape ``(..., 11)``, ``u`` ``(..., 5)``, ``w`` ``(..., 4)`` and
    ``theta`` holds constrained parameter values in registry order.
    """
    p = params_view(theta)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    Ta, VP, CO2, Tc, T24, Cb, Cl, Cf, Nf = (x[..., i] for i in range(9))
    pipe, vent, fog, co2u, harv = (u[..., i] for i in range(5))
    To, VPo, CO2o, I = (w[..., i] for i in range(4))

    L = lai(Cl, p["sla"], p["lai_max"])
    intercept = 1.0 - ad.exp(-p["k_ext"] * L)
    q = p["f_leak"] + p["f_vent_max"] * vent
    pipe_on = (pipe > ad.value(Ta)).astype(float)

    svp = saturation_vapor_pressure(Tc)
    slope = _svp_slope(Tc, svp)
    svp_offset = svp - slope * Tc  # svp(T) ~ svp_offset + slope * T near the current T_can
    svp_out = saturation_vapor_pressure(To)
    cond = p["k_cond"] * COND_SOFTNESS * ad.softplus((VP - svp_out) / COND_SOFTNESS)
    photo = p["eps_photo"] * I * intercept * CO2 / (CO2 + p["k_co2"])

    growth = ad.maximum(1.0 + p["g_slope"] * (T24 - 20.0), 0.0)
    q10f = ad.exp(p["_log_q10"] * (T24 - 25.0))
    conv = p["k_can"] * L
    trans = p["k_trans"] * L
    trans_slope = trans * slope
    heat_exch = p["k_cov"] + RHO_CP * q
    harvest = p["k_harvest"] * harv
    pipe_gain = p["_pipe_air"] * pipe_on
    ia, ih, ic = p["_inv_cap_air"], p["_inv_h_air"], p["_inv_cap_can"]
    conv_air = conv * ia
    conv_can = conv * ic

    A = {
        (0, 0): -(pipe_gain + (heat_exch + conv) * ia),
        (0, 3): conv_air,
        (1, 1): -(trans + q) * ih,
        (1, 3): trans_slope * ih,
        (2, 2): -q * ih,
        (3, 0): conv_can,
        (3, 1): p["_lat_can"] * trans,
        (3, 3): -(conv_can + p["_lat_can"] * trans_slope),
        (4, 3): np.float64(1.0 / TAU_24),
        (4, 4): np.float64(-1.0 / TAU_24),
        (5, 5): -(growth * p["_rg_total"] + p["r_maint"] * q10f),
        (6, 5): growth * p["rg_leaf"],
        (6, 6): -p["r_maint_leaf"] * q10f,
        (7, 5): growth * p["rg_fruit"],
        (7, 7): -(p["r_maint_fruit"] * q10f + harvest),
        (8, 8): -(p["_set_per_max"] * growth + harvest),
        (9, 7): harvest * p["_inv_c_fw"],
        (10, 8): harvest * 1.0,
    }
    b = {
        (0,): pipe_gain * pipe + p["_glob_air"] * I + heat_exch * To * ia,
        (1,): (trans * svp_offset + p["cap_fog"] * fog - cond + q * VPo) * ih,
        (2,): (p["cap_co2inj"] * co2u - photo + q * CO2o) * ih,
        (3,): (p["eta_can"] * I * intercept - p["lambda_lat"] * trans * svp_offset) * ic,
        (5,): p["c_photo"] * photo,
        (8,): p["r_set"] * growth,
    }
    return ad.assemble((N_STATES, N_STATES), A), ad.assemble((N_STATES,), b)


def step(x, u, w, theta, dt=DT, policy="auto", substeps=1):
    """One transition ``x_{k+1} = S_theta(x_k, u_k)``.

    Channels that must stay nonnegative are clamped at exactly 0 after the
    solve; the clamp passes gradients only where it is inactive.
    """
    A, b = build_system(x, u, w, theta)
    x_next = linalg.ode_step(A, b, x, dt, substeps=substeps, policy=policy)
    return ad.maximum(x_next, LOWER_BOUNDS)


def state(**channels):
    """State array from named channel values; unnamed channels are NaN."""
    unknown = set(channels) - set(CHANNELS)
    if unknown:
        raise KeyError(f"unknown channels {sorted(unknown)}")
    vals = [np.asarray(channels.get(c, np.nan), dtype=float) for c in CHANNELS]
    shape = np.broadcast_shapes(*(v.shape for v in vals))
    return np.stack([np.broadcast_to(v, shape) for v in vals], axis=-1)

"""Ionic membrane models: FitzHugh-Nagumo and Bueno-Orovio.

Both models expose the transmembrane current ``iion(u, w)`` and the gating
right-hand side in the affine-in-w form ``dw/dt = c0(u) + c1(u) * w`` (one
pair per gating variable), which makes the per-DoF BDF2 gating solve closed
form.  All operations are vectorized over DoF arrays; gating state is stored
as an array of shape (S, n).

Heaviside gates: thresholds written with an explicit steepness constant use
the smooth ``(1 + tanh(eps (z - z0))) / 2`` form (the slow-outward time
"constant" with steepness ``k_so`` and the second-gate steady state with
``k3``); all other gates are sharp switches returning 1/2 exactly at the
threshold.  The superscript-minus thresholds map to the "m"-suffixed
parameters (``v1 -> v1m``); this mapping is an interpretation, documented in
the README.
"""

from dataclasses import dataclass, fields

import numpy as np


class IonicError(ValueError):
    """Invalid ionic model parameters or state."""


def smooth_heaviside(z, z0, eps=None):
    """Heaviside switch at z0: smooth tanh profile if eps is given, else the
    sharp function with value 1/2 exactly at the threshold."""
    z = np.asarray(z, dtype=float)
    if eps is None:
        return np.where(z < z0, 0.0, np.where(z > z0, 1.0, 0.5))
    if eps <= 0:
        raise IonicError("smooth Heaviside needs eps > 0")
    return 0.5 * (1.0 + np.tanh(eps * (z - z0)))


def to_millivolts(u):
    """Dimensionless potential to millivolts: 85.7 u - 84."""
    return 85.7 * np.asarray(u, dtype=float) - 84.0


@dataclass(frozen=True)
class FHNParams:
    """FitzHugh-Nagumo parameters (2D test defaults)."""

    k: float = 19.5
    a: float = 1.3e-2
    eps: float = 4e1
    gamma: float = 1e-1


@dataclass(frozen=True)
class BuenoOrovioParams:
    """Bueno-Orovio minimal-model parameters (idealized 3D test defaults).

    Time constants in seconds, thresholds dimensionless.
    """

    tau_o1: float = 6e-3
    tau_o2: float = 6e-3
    tau_so1: float = 4.3e-2
    tau_so2: float = 2e-4
    tau_si: float = 2.8723e-3
    tau_fi: float = 1.1e-4
    tau_1plus: float = 1.4506e-3
    tau_11: float = 6e-2
    tau_12: float = 1.15
    tau_21: float = 7e-2
    tau_22: float = 2e-2
    tau_31: float = 2.7342e-3
    tau_32: float = 3e-3
    tau_2plus: float = 2.8e-1
    tau_2inf: float = 7e-2
    k2: float = 6.5e1
    k3: float = 2.0994
    k_so: float = 2.0
    w_inf_star: float = 9.4e-1
    v1: float = 3e-1
    v1m: float = 1.5e-2
    v2: float = 1.5e-2
    v2m: float = 3e-2
    v3: float = 9.087e-1
    v_hat: float = 1.58
    v_o: float = 6e-3
    v_so: float = 6.5e-1

    def __post_init__(self):
        for f in fields(self):
            if f.name.startswith("tau") and getattr(self, f.name) <= 0.0:
                raise IonicError(f"time constant {f.name} must be positive")


class FitzHughNagumo:
    """Cubic reaction with one linear recovery variable.

    ``iion = k u (u - a)(u - 1) + w``, ``dw/dt = eps (u - gamma w)``.
    """

    name = "fhn"
    n_gating = 1

    def __init__(self, params=None):
        self.params = params or FHNParams()

    def iion(self, u, w):
        p = self.params
        u = np.asarray(u, dtype=float)
        return p.k * u * (u - p.a) * (u - 1.0) + w[0]

    def gating_rhs(self, u, w):
        c0, c1 = self.gating_coeffs(u)
        return c0 + c1 * w

    def gating_coeffs(self, u):
        """dw/dt = c0(u) + c1(u) w, per gating variable (stacked on axis 0)."""
        p = self.params
        u = np.asarray(u, dtype=float)
        c0 = p.eps * u
        c1 = np.full_like(u, -p.eps * p.gamma)
        return c0[None, :], c1[None, :]

    def rest_state(self, n):
        return np.zeros(n), np.zeros((1, n))


class BuenoOrovio:
    """Three-gate minimal ventricular model (fast inward, slow outward,
    slow inward currents)."""

    name = "bueno-orovio"
    n_gating = 3

    def __init__(self, params=None):
        self.params = params or BuenoOrovioParams()

    def _gates(self, u):
        p = self.params
        return {
            "h_v1": smooth_heaviside(u, p.v1),
            "h_v1m": smooth_heaviside(u, p.v1m),
            "h_v2": smooth_heaviside(u, p.v2),
            "h_v2m": smooth_heaviside(u, p.v2m),
            "h_vo": smooth_heaviside(u, p.v_o),
            "h_so": smooth_heaviside(u, p.v_so, p.k_so),
            "h_v3": smooth_heaviside(u, p.v3, p.k3),
        }

    def iion(self, u, w):
        p = self.params
        u = np.asarray(u, dtype=float)
        g = self._gates(u)
        i_fi = -g["h_v1"] * (u - p.v1) * (p.v_hat - u) / p.tau_fi * w[0]
        tau_o = g["h_vo"] * (p.tau_o2 - p.tau_o1) + p.tau_o1
        tau_so = g["h_so"] * (p.tau_so2 - p.tau_so1) + p.tau_so1
        i_so = (1.0 - g["h_v2"]) * (u - p.v_o) / tau_o + g["h_v2"] / tau_so
        i_si = -g["h_v2"] / p.tau_si * w[1] * w[2]
        return i_fi + i_so + i_si

    def gating_coeffs(self, u):
        p = self.params
        u = np.asarray(u, dtype=float)
        g = self._gates(u)
        a0 = (1.0 - g["h_v1"]) / (g["h_v1m"] * (p.tau_12 - p.tau_11) + p.tau_11)
        b0 = -g["h_v1"] / p.tau_1plus
        w0_inf = 1.0 - g["h_v1m"]
        a1 = (1.0 - g["h_v2"]) / (g["h_v2m"] * (p.tau_22 - p.tau_21) + p.tau_21)
        b1 = -g["h_v2"] / p.tau_2plus
        w1_inf = g["h_vo"] * (p.w_inf_star - 1.0 + u / p.tau_2inf) + 1.0 - u / p.tau_2inf
        a2 = 1.0 / (g["h_v2"] * (p.tau_32 - p.tau_31) + p.tau_31)
        b2 = np.zeros_like(u)
        w2_inf = g["h_v3"]
        c0 = np.stack([a0 * w0_inf, a1 * w1_inf, a2 * w2_inf])
        c1 = np.stack([b0 - a0, b1 - a1, b2 - a2])
        return c0, c1

    def gating_rhs(self, u, w):
        c0, c1 = self.gating_coeffs(u)
        return c0 + c1 * w

    def rest_state(self, n):
        w = np.zeros((3, n))
        w[0] = 1.0
        w[1] = 1.0
        return np.zeros(n), w


_MODELS = {"fhn": (FitzHughNagumo, FHNParams),
           "bueno-orovio": (BuenoOrovio, BuenoOrovioParams)}


def make_model(name, overrides=None):
    """Instantiate a model by name with optional parameter overrides."""
    key = name.lower()
    if key not in _MODELS:
        raise IonicError(f"unknown ionic model {name!r}; have {sorted(_MODELS)}")
    cls, pcls = _MODELS[key]
    params = pcls(**(overrides or {}))
    return cls(params)


def gating_step_bdf2(model, u_star, w_n, w_nm1, dt):
    """Per-DoF BDF2 gating solve with the extrapolated potential.

    Solves (3 w - 4 w_n + w_nm1) / (2 dt) = c0(u*) + c1(u*) w in closed form;
    the gating equations of both models are linear in w for fixed u.
    """
    c0, c1 = model.gating_coeffs(u_star)
    return (4.0 * w_n - w_nm1 + 2.0 * dt * c0) / (3.0 - 2.0 * dt * c1)


def gating_step_be(model, u, w_n, dt):
    """One backward-Euler gating step (bootstraps the BDF2 history)."""
    c0, c1 = model.gating_coeffs(u)
    return (w_n + dt * c0) / (1.0 - dt * c1)


def read_params(path):
    """Read `name = value` parameter overrides from a plain-text file."""
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise IonicError(f"malformed parameter line: {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            out[key] = float(val)
    return out


def write_params(params, path):
    """Write a parameter dataclass as `name = value` lines."""
    with open(path, "w") as fh:
        for f in fields(params):
            fh.write(f"{f.name} = {getattr(params, f.name)!r}\n")

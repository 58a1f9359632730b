"""Vector fields for the FitzHugh-Nagumo, reduced Chay-Keizer and phantom
bursting models.

Units follow the parameter tables: conductances in pS, capacitance in fF,
voltages in mV, concentrations in uM and time in ms for the two beta-cell
models, so that ``pS * mV = fA`` and ``fA / fF = mV/ms``.  The FitzHugh-Nagumo
model is dimensionless.

Each model has a parameter dataclass, a numba kernel ``rhs(x, p, out)`` used
by :func:`homeodyn.ode.integrate`, and plain-Python wrappers that validate
their inputs.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, fields, replace
from typing import Callable

import numpy as np
from numba import njit

FAST = "fast"
SLOW = "slow"


class _Params:
    """Mixin giving parameter dataclasses a flat-vector view."""

    @classmethod
    def names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))

    def to_array(self) -> np.ndarray:
        return np.array([float(getattr(self, n)) for n in self.names()])

    def as_dict(self) -> dict:
        return {n: getattr(self, n) for n in self.names()}

    def updated(self, **overrides):
        unknown = set(overrides) - set(self.names())
        if unknown:
            raise KeyError(f"unknown parameter(s) {sorted(unknown)} for {type(self).__name__}")
        return replace(self, **{k: float(v) for k, v in overrides.items()})


def _require_nonneg(obj, names):
    for n in names:
        if getattr(obj, n) < 0:
            raise ValueError(f"{n} must be nonnegative, got {getattr(obj, n)}")


# --------------------------------------------------------------------------
# FitzHugh-Nagumo
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FhnParams(_Params):
    mu: float = 30.0
    alpha: float = 2.0
    J: float = 0.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.mu < 5:
            warnings.warn(f"mu={self.mu} gives weak timescale separation", stacklevel=3)


@njit(nogil=True, cache=True)
def _fhn_kernel(x, p, out):
    mu, alpha, J = p[0], p[1], p[2]
    u, y = x[0], x[1]
    out[0] = mu * (u - u * u * u / 3.0 - y)
    out[1] = (J + alpha * u - y) / mu


def fhn_rhs(state, params: FhnParams) -> np.ndarray:
    """``(dx/dt, dy/dt)`` of the FitzHugh-Nagumo model."""
    x = np.asarray(state, dtype=float)
    if x.shape != (2,) or not np.all(np.isfinite(x)):
        raise ValueError("state must be a finite (x, y) pair")
    out = np.empty(2)
    _fhn_kernel(x, params.to_array(), out)
    return out


def fhn_equilibrium(params: FhnParams) -> tuple:
    """Unique equilibrium ``(x*, y*)`` for ``alpha > 1``.

    ``x*`` is the real root of ``x^3/3 + (alpha-1) x + J = 0`` from Cardano's
    formula, polished by Newton steps.
    """
    a, J = params.alpha, params.J
    if a <= 1:
        raise ValueError("fhn_equilibrium requires alpha > 1 (single real equilibrium)")
    # x^3 + P x + Q = 0 with P > 0 has exactly one real root
    P, Q = 3.0 * (a - 1.0), 3.0 * J
    disc = math.sqrt(Q * Q / 4.0 + P ** 3 / 27.0)
    x = np.cbrt(-Q / 2.0 + disc) + np.cbrt(-Q / 2.0 - disc)
    for _ in range(3):
        x -= (x ** 3 / 3.0 + (a - 1.0) * x + J) / (x * x + a - 1.0)
    return float(x), float(J + a * x)


# --------------------------------------------------------------------------
# reduced Chay-Keizer
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ChayKeizerParams(_Params):
    gCa: float = 1200.0
    gK: float = 3000.0
    gKCa: float = 300.0
    gKATP: float = 230.0
    Cm: float = 5300.0
    Iap: float = 500.0
    vm: float = -20.0
    vw: float = -16.0
    sm: float = 12.0
    sw: float = 5.0
    VCa: float = 25.0
    VK: float = -75.0
    tau_w: float = 16.0
    p: float = 5.0
    KOmega: float = 0.3
    f: float = 0.001
    beta: float = 2.25e-6
    kc: float = 0.07

    def __post_init__(self):
        _require_nonneg(self, ("gCa", "gK", "gKCa", "gKATP", "Cm", "tau_w",
                               "KOmega", "f", "beta", "kc"))
        if self.p < 1:
            raise ValueError("Hill coefficient p must be >= 1")


def boltzmann(V, v_half, slope):
    """Increasing Boltzmann activation ``1 / (1 + exp((v_half - V) / slope))``."""
    if slope == 0:
        raise ValueError("slope must be nonzero")
    z = (np.asarray(V, dtype=float) - v_half) / slope
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-z))
    return out if out.ndim else float(out)


@njit(nogil=True, cache=True)
def _bz(V, vh, s):
    return 1.0 / (1.0 + math.exp((vh - V) / s))


@njit(nogil=True, cache=True)
def _ck_currents(V, w, c, p):
    gCa, gK, gKCa, gKATP = p[0], p[1], p[2], p[3]
    vm, sm, VCa, VK, hill, KO = p[6], p[8], p[10], p[11], p[13], p[14]
    ICa = gCa * _bz(V, vm, sm) * (V - VCa)
    IK = gK * w * (V - VK)
    cp = c ** hill
    IKCa = gKCa * cp / (KO ** hill + cp) * (V - VK)
    IKATP = gKATP * (V - VK)
    return ICa, IK, IKCa, IKATP


@njit(nogil=True, cache=True)
def _ck_kernel(x, p, out):
    V, w, c = x[0], x[1], x[2]
    ICa, IK, IKCa, IKATP = _ck_currents(V, w, c, p)
    out[0] = -(ICa + IK + IKCa + IKATP - p[5]) / p[4]
    out[1] = (_bz(V, p[7], p[9]) - w) / p[12]
    out[2] = -p[15] * (p[16] * ICa + p[17] * c)


def _ck_state(state):
    V, w, c = (float(v) for v in state)
    if c < 0:
        raise ValueError(f"calcium must be nonnegative, got c={c}")
    return V, w, c


def ck_currents(state, params: ChayKeizerParams) -> tuple:
    """``(ICa, IK, IKCa, IKATP)`` in fA at ``state = (V, w, c)``."""
    V, w, c = _ck_state(state)
    return tuple(float(i) for i in _ck_currents(V, w, c, params.to_array()))


def ck_rhs(state, params: ChayKeizerParams) -> np.ndarray:
    """``(dV/dt, dw/dt, dc/dt)`` of the reduced Chay-Keizer model."""
    V, w, c = _ck_state(state)
    out = np.empty(3)
    _ck_kernel(np.array([V, w, c]), params.to_array(), out)
    return out


# --------------------------------------------------------------------------
# phantom bursting model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PbmParams(_Params):
    gCa: float = 1200.0
    gK: float = 3000.0
    gKCa: float = 600.0
    gKATP: float = 500.0
    Cm: float = 5300.0
    vm: float = -20.0
    vw: float = -15.0
    sm: float = 12.0
    sw: float = 5.0
    VCa: float = 25.0
    VK: float = -75.0
    tau_w: float = 18.0
    Kd: float = 0.4
    r: float = 0.225
    s_a: float = 0.1
    tau_a: float = 300000.0
    p_leak: float = 0.0002
    SERCA2b: float = 0.02
    SERCA3: float = 0.2
    kPMCA: float = 0.125
    f_cyt: float = 0.001
    f_er: float = 0.01
    vol_ratio: float = 10.0
    beta: float = 4.5e-6

    def __post_init__(self):
        _require_nonneg(self, ("gCa", "gK", "gKCa", "gKATP", "Cm", "tau_w", "Kd",
                               "tau_a", "p_leak", "SERCA2b", "SERCA3", "kPMCA",
                               "f_cyt", "f_er", "vol_ratio", "beta"))


@njit(nogil=True, cache=True)
def _pbm_fluxes(V, c, c_er, p):
    ICa = p[0] * _bz(V, p[5], p[7]) * (V - p[9])
    J_mem = -(p[23] * ICa + p[19] * c)
    J_serca = p[17] + p[18] * c
    J_leak = p[16] * (c_er - c)
    return ICa, J_mem, J_serca, J_leak, J_leak - J_serca


@njit(nogil=True, cache=True)
def _pbm_kernel(x, p, out):
    V, w, c, c_er, a = x[0], x[1], x[2], x[3], x[4]
    VK = p[10]
    ICa, J_mem, J_serca, J_leak, J_er = _pbm_fluxes(V, c, c_er, p)
    IK = p[1] * w * (V - VK)
    c5 = c * c * c * c * c
    Kd = p[12]
    IKCa = p[2] * c5 / (Kd * Kd * Kd * Kd * Kd + c5) * (V - VK)
    IKATP = p[3] * a * (V - VK)
    out[0] = -(ICa + IK + IKCa + IKATP) / p[4]
    out[1] = (_bz(V, p[6], p[8]) - w) / p[11]
    out[2] = p[20] * (J_mem + J_er)
    out[3] = -p[21] * p[22] * J_er
    out[4] = (_bz(c, p[13], p[14]) - a) / p[15]


def pbm_fluxes(state, params: PbmParams) -> dict:
    """Calcium fluxes (uM/ms) at ``state = (V, w, c, c_er, a)``."""
    V, _, c, c_er, _ = (float(v) for v in state)
    ICa, J_mem, J_serca, J_leak, J_er = _pbm_fluxes(V, c, c_er, params.to_array())
    return {"ICa": ICa, "J_mem": J_mem, "J_SERCA": J_serca, "J_leak": J_leak, "J_er": J_er}


def pbm_rhs(state, params: PbmParams) -> np.ndarray:
    """Five-component derivative of the phantom bursting model."""
    x = np.array(state, dtype=float)
    if x.shape != (5,):
        raise ValueError("state must be (V, w, c, c_er, a)")
    if x[2] < 0 or x[3] < 0:
        raise ValueError("concentrations must be nonnegative")
    if not 0.0 <= x[4] <= 1.0:
        warnings.warn(f"nucleotide ratio a={x[4]} outside [0, 1]", stacklevel=2)
    out = np.empty(5)
    _pbm_kernel(x, params.to_array(), out)
    return out


# --------------------------------------------------------------------------
# registry
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelSystem:
    """A named vector field bound to a parameter set."""

    name: str
    params: object
    labels: tuple
    timescales: tuple
    kernel: Callable
    default_x0: tuple

    @property
    def dim(self) -> int:
        return len(self.labels)

    def param_array(self) -> np.ndarray:
        return self.params.to_array()

    def param_index(self, name: str) -> int:
        try:
            return self.params.names().index(name)
        except ValueError:
            raise KeyError(f"{self.name} has no parameter {name!r}") from None

    def with_params(self, **overrides) -> "ModelSystem":
        return replace(self, params=self.params.updated(**overrides))

    def rhs(self, state) -> np.ndarray:
        out = np.empty(self.dim)
        self.kernel(np.asarray(state, dtype=float), self.param_array(), out)
        return out

    def fast_variables(self) -> tuple:
        return tuple(l for l, s in zip(self.labels, self.timescales) if s == FAST)

    def slow_variables(self) -> tuple:
        return tuple(l for l, s in zip(self.labels, self.timescales) if s == SLOW)


MODEL_NAMES = ("fhn", "chay-keizer", "pbm")


def make_system(name: str, params=None, **overrides) -> ModelSystem:
    """Build a :class:`ModelSystem` with table defaults plus ``overrides``."""
    if name == "fhn":
        sys = ModelSystem("fhn", params or FhnParams(), ("x", "y"), (FAST, SLOW),
                          _fhn_kernel, (0.1, 0.0))
    elif name in ("chay-keizer", "ck"):
        sys = ModelSystem("chay-keizer", params or ChayKeizerParams(), ("V", "w", "c"),
                          (FAST, FAST, SLOW), _ck_kernel, (-60.0, 0.0, 0.2))
    elif name == "pbm":
        # a listed last is the slowest variable
        sys = ModelSystem("pbm", params or PbmParams(), ("V", "w", "c", "c_er", "a"),
                          (FAST, FAST, SLOW, SLOW, SLOW), _pbm_kernel,
                          (-60.0, 0.0, 0.1, 100.0, 0.46))
    else:
        raise ValueError(f"unknown model {name!r}; expected one of {MODEL_NAMES}")
    return sys.with_params(**overrides) if overrides else sys

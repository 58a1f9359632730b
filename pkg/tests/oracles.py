"""Independent reference computations for the test-suite.

Nothing here imports the package's kernels or numerical helpers: vector
fields are written out from the model equations in plain Python, roots come
from bisection, and integrals from scipy's adaptive solvers.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp


# --------------------------------------------------------------------------
# vector fields, written from the equations with keyword parameters
# --------------------------------------------------------------------------


def fhn(state, mu=30.0, alpha=2.0, J=0.0):
    x, y = state
    return [mu * (x - x ** 3 / 3.0 - y), (J + alpha * x - y) / mu]


def bz(v, half, slope):
    return 1.0 / (1.0 + math.exp((half - v) / slope))


CK_TABLE = dict(gCa=1200.0, gK=3000.0, gKCa=300.0, gKATP=230.0, Cm=5300.0, Iap=500.0,
                vm=-20.0, vw=-16.0, sm=12.0, sw=5.0, VCa=25.0, VK=-75.0, tau_w=16.0,
                p=5.0, KOmega=0.3, f=0.001, beta=2.25e-6, kc=0.07)

PBM_TABLE = dict(gCa=1200.0, gK=3000.0, gKCa=600.0, gKATP=500.0, Cm=5300.0, vm=-20.0,
                 vw=-15.0, sm=12.0, sw=5.0, VCa=25.0, VK=-75.0, tau_w=18.0, Kd=0.4, r=0.225,
                 s_a=0.1, tau_a=300000.0, p_leak=0.0002, SERCA2b=0.02, SERCA3=0.2,
                 kPMCA=0.125, f_cyt=0.001, f_er=0.01, vol_ratio=10.0, beta=4.5e-6)


def ck(state, **kw):
    P = {**CK_TABLE, **kw}
    V, w, c = state
    ica = P["gCa"] * bz(V, P["vm"], P["sm"]) * (V - P["VCa"])
    ik = P["gK"] * w * (V - P["VK"])
    hill = c ** P["p"] / (P["KOmega"] ** P["p"] + c ** P["p"])
    ikca = P["gKCa"] * hill * (V - P["VK"])
    ikatp = P["gKATP"] * (V - P["VK"])
    return [-(ica + ik + ikca + ikatp - P["Iap"]) / P["Cm"],
            (bz(V, P["vw"], P["sw"]) - w) / P["tau_w"],
            -P["f"] * (P["beta"] * ica + P["kc"] * c)]


def pbm(state, **kw):
    P = {**PBM_TABLE, **kw}
    V, w, c, cer, a = state
    ica = P["gCa"] * bz(V, P["vm"], P["sm"]) * (V - P["VCa"])
    ik = P["gK"] * w * (V - P["VK"])
    ikca = P["gKCa"] * c ** 5 / (P["Kd"] ** 5 + c ** 5) * (V - P["VK"])
    ikatp = P["gKATP"] * a * (V - P["VK"])
    jmem = -(P["beta"] * ica + P["kPMCA"] * c)
    jer = P["p_leak"] * (cer - c) - (P["SERCA2b"] + P["SERCA3"] * c)
    return [-(ica + ik + ikca + ikatp) / P["Cm"],
            (bz(V, P["vw"], P["sw"]) - w) / P["tau_w"],
            P["f_cyt"] * (jmem + jer),
            -P["f_er"] * P["vol_ratio"] * jer,
            (bz(c, P["r"], P["s_a"]) - a) / P["tau_a"]]


# --------------------------------------------------------------------------
# roots and integrals
# --------------------------------------------------------------------------


def bisect(f, lo, hi, tol=1e-15, maxiter=400):
    flo = f(lo)
    assert flo * f(hi) <= 0, "bracket does not change sign"
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0 or hi - lo < tol:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fhn_equilibrium(J, alpha):
    x = bisect(lambda s: s ** 3 / 3.0 + (alpha - 1.0) * s + J, -10.0, 10.0)
    return x, J + alpha * x


def solve(rhs, x0, t_end, rtol=1e-11, atol=1e-12, t_eval=None, method="DOP853", **kw):
    return solve_ivp(lambda t, s: rhs(s, **kw), (0.0, t_end), x0, method=method,
                     rtol=rtol, atol=atol, t_eval=t_eval, dense_output=t_eval is None)


def ck_fold_grid(n=2000, V_range=(-75.0, -10.0), c_range=(0.0, 0.8), **kw):
    """Fold c-values from a brute-force count of fast-subsystem equilibria.

    On an ``n x n`` grid in ``(c, V)``, count sign changes of the V-nullcline
    residual (with ``w = w_inf(V)``) along ``V`` at every ``c``.  Folds are
    where that count changes; each is returned as the bracketing pair of grid
    ``c`` values.
    """
    P = {**CK_TABLE, **kw}
    V = np.linspace(V_range[0], V_range[1], n)
    cs = np.linspace(c_range[0], c_range[1], n)
    winf = 1.0 / (1.0 + np.exp((P["vw"] - V) / P["sw"]))
    minf = 1.0 / (1.0 + np.exp((P["vm"] - V) / P["sm"]))
    base = (P["gCa"] * minf * (V - P["VCa"]) + P["gK"] * winf * (V - P["VK"])
            + P["gKATP"] * (V - P["VK"]) - P["Iap"])
    hill = cs ** P["p"] / (P["KOmega"] ** P["p"] + cs ** P["p"])
    resid = base[None, :] + P["gKCa"] * hill[:, None] * (V - P["VK"])[None, :]
    counts = (np.diff(np.sign(resid), axis=1) != 0).sum(axis=1)
    idx = np.flatnonzero(np.diff(counts) != 0)
    return [(cs[i], cs[i + 1]) for i in idx], cs[1] - cs[0]


def trapezoid_mean(t, v):
    return float(np.trapezoid(v, t) / (t[-1] - t[0]))

"""Hopf points of the FitzHugh-Nagumo model and the fast-subsystem
bifurcation diagram of the reduced Chay-Keizer model.

The Chay-Keizer fast subsystem is ``(V, w)`` with calcium ``c`` frozen.  Its
equilibria form a curve that is single-valued in ``V``: fixing ``V`` and
``w = w_inf(V)``, the current balance is linear in the K(Ca) Hill fraction,
which can then be inverted for ``c``.  Stability comes from a central
difference Jacobian of the 2-D vector field.  Periodic (spiking) solutions
are followed by brute-force integration at frozen ``c``, and the homoclinic
end of the spiking branch is bracketed by bisection on the long-time outcome.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .models import ChayKeizerParams, FhnParams, boltzmann, make_system
from .ode import IntegratorConfig, integrate

FD_STEP = 1e-6


# --------------------------------------------------------------------------
# FitzHugh-Nagumo
# --------------------------------------------------------------------------


def fhn_jacobian_trace_det(x_star: float, params: FhnParams) -> tuple:
    """Trace and determinant of the linearisation at an equilibrium with ``x = x_star``."""
    mu, a = params.mu, params.alpha
    return mu * (1.0 - x_star ** 2) - 1.0 / mu, x_star ** 2 + a - 1.0


def fhn_jacobian(x_star: float, params: FhnParams) -> np.ndarray:
    mu, a = params.mu, params.alpha
    return np.array([[mu * (1.0 - x_star ** 2), -mu], [a / mu, -1.0 / mu]])


@dataclass(frozen=True)
class FhnHopfPair:
    J_minus: float
    J_plus: float
    x_star_minus: float
    x_star_plus: float


def _hopf_pair(alpha: float, mu: float) -> FhnHopfPair:
    if not alpha > 1.0 / mu ** 2:
        raise ValueError(f"Hopf points need alpha > 1/mu^2, got alpha={alpha}, mu={mu}")
    s = 1.0 - 1.0 / mu ** 2
    xs = math.sqrt(s)
    # the Hopf point at x* = +sqrt(s) has the lower input value
    j_at_plus = (1.0 - alpha) * s ** 0.5 - s ** 1.5 / 3.0
    pairs = sorted([(j_at_plus, xs), (-j_at_plus, -xs)])
    return FhnHopfPair(pairs[0][0], pairs[1][0], pairs[0][1], pairs[1][1])


def fhn_hopf_points(alpha: float, mu: float = 30.0) -> FhnHopfPair:
    """Input values where the trace of the Jacobian vanishes.

    ``x* = +-sqrt(1 - 1/mu^2)`` and ``J = -(x*^3/3 + (alpha - 1) x*)``.
    Requires ``alpha > 1`` so that each input has a single equilibrium.
    """
    if alpha <= 1:
        raise ValueError("Hopf analysis assumes alpha > 1 (single equilibrium)")
    return _hopf_pair(alpha, mu)


@dataclass(frozen=True)
class FhnHopfLocus:
    alpha: np.ndarray
    J_minus: np.ndarray
    J_plus: np.ndarray
    mu: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(("alpha", "J_minus", "J_plus", "mu"))
            for a, jm, jp in zip(self.alpha, self.J_minus, self.J_plus):
                wr.writerow([f"{a:.17g}", f"{jm:.17g}", f"{jp:.17g}", f"{self.mu:.17g}"])


def fhn_hopf_locus(alpha_values, mu: float = 30.0) -> FhnHopfLocus:
    """Both Hopf branches in the ``(J, alpha)`` plane.

    Unlike :func:`fhn_hopf_points` this accepts ``alpha = 1``, the edge of the
    single-equilibrium regime, so the locus can start there.
    """
    alpha = np.asarray(alpha_values, dtype=float)
    if alpha.size == 0:
        raise ValueError("empty alpha range")
    if np.any(alpha < 1):
        raise ValueError("the Hopf locus is computed for alpha >= 1")
    pts = [_hopf_pair(a, mu) for a in alpha]
    return FhnHopfLocus(alpha, np.array([p.J_minus for p in pts]),
                        np.array([p.J_plus for p in pts]), mu)


# --------------------------------------------------------------------------
# Chay-Keizer fast subsystem
# --------------------------------------------------------------------------


def _fast_rhs(V, w, c, p: ChayKeizerParams):
    """Vectorised ``(dV/dt, dw/dt)`` at frozen ``c``."""
    minf = boltzmann(V, p.vm, p.sm)
    winf = boltzmann(V, p.vw, p.sw)
    cp = np.power(c, p.p)
    hill = cp / (p.KOmega ** p.p + cp)
    itot = (p.gCa * minf * (V - p.VCa) + p.gK * w * (V - p.VK)
            + p.gKCa * hill * (V - p.VK) + p.gKATP * (V - p.VK))
    return -(itot - p.Iap) / p.Cm, (winf - w) / p.tau_w


def fast_jacobian(V, w, c, p: ChayKeizerParams, h: float = FD_STEP):
    """Central-difference Jacobian entries ``(a11, a12, a21, a22)``."""
    fVp, gVp = _fast_rhs(V + h, w, c, p)
    fVm, gVm = _fast_rhs(V - h, w, c, p)
    fwp, gwp = _fast_rhs(V, w + h, c, p)
    fwm, gwm = _fast_rhs(V, w - h, c, p)
    return ((fVp - fVm) / (2 * h), (fwp - fwm) / (2 * h),
            (gVp - gVm) / (2 * h), (gwp - gwm) / (2 * h))


def _hill_fraction(V, p: ChayKeizerParams):
    winf = boltzmann(V, p.vw, p.sw)
    minf = boltzmann(V, p.vm, p.sm)
    other = p.gCa * minf * (V - p.VCa) + p.gK * winf * (V - p.VK) + p.gKATP * (V - p.VK)
    return -(other - p.Iap) / (p.gKCa * (V - p.VK)), winf


def _branch_point(V, p: ChayKeizerParams):
    h, winf = _hill_fraction(V, p)
    c = p.KOmega * (h / (1.0 - h)) ** (1.0 / p.p)
    return c, winf


def _trace_det(V, w, c, p):
    a11, a12, a21, a22 = fast_jacobian(V, w, c, p)
    return a11 + a22, a11 * a22 - a12 * a21


@dataclass
class Branch:
    """Fast-subsystem equilibria sampled along ``V``."""

    V: np.ndarray
    w: np.ndarray
    c: np.ndarray
    trace: np.ndarray
    det: np.ndarray
    stable: np.ndarray
    params: ChayKeizerParams

    def __len__(self):
        return len(self.V)

    @property
    def eigenvalues(self) -> np.ndarray:
        disc = (self.trace / 2) ** 2 - self.det
        root = np.sqrt(disc.astype(complex))
        return np.stack([self.trace / 2 + root, self.trace / 2 - root], axis=1)


def ck_equilibrium_branch(params: ChayKeizerParams, V_range=(-75.0, -10.0),
                          n_samples: int = 2000) -> Branch:
    """Critical manifold of the Chay-Keizer fast subsystem, parametrised by ``V``.

    Samples whose Hill fraction falls outside ``(0, 1)`` have no calcium
    preimage and are dropped; ``V = VK`` is excluded.
    """
    if params.gKCa <= 0:
        raise ValueError("the branch inversion needs gKCa > 0")
    V = np.linspace(V_range[0], V_range[1], n_samples)
    V = V[np.abs(V - params.VK) > 1e-12]
    h, _ = _hill_fraction(V, params)
    keep = (h > 0) & (h < 1)
    V = V[keep]
    c, w = _branch_point(V, params)
    tr, dt = _trace_det(V, w, c, params)
    stable = (tr < 0) & (dt > 0)
    return Branch(V, w, c, tr, dt, stable, params)


@dataclass(frozen=True)
class SpecialPoint:
    kind: str
    c: float
    V: float
    aux: float = math.nan


def ck_detect_saddle_nodes(branch: Branch) -> list:
    """Local extrema of ``c`` along the branch, refined by a parabola through three samples."""
    if len(branch) < 100:
        raise ValueError("need at least 100 branch samples")
    V, c = branch.V, branch.c
    dc = np.diff(c)
    out = []
    for i in np.flatnonzero(dc[:-1] * dc[1:] < 0) + 1:
        v0, v1, v2 = V[i - 1], V[i], V[i + 1]
        coef = np.polyfit([v0 - v1, 0.0, v2 - v1], [c[i - 1], c[i], c[i + 1]], 2)
        dv = -coef[1] / (2 * coef[0])
        out.append(SpecialPoint("saddle-node", float(np.polyval(coef, dv)), float(v1 + dv)))
    if len(out) < 2:
        warnings.warn(f"found {len(out)} saddle-node(s); expected two for a Z-shaped branch",
                      RuntimeWarning, stacklevel=2)
    return out


def _trace_along(V, p):
    c, w = _branch_point(V, p)
    tr, det = _trace_det(V, w, c, p)
    return tr, det, c


def ck_detect_fast_hopf(branch: Branch, tol: float = 1e-13) -> list:
    """Points where the trace changes sign with positive determinant (complex pair)."""
    p = branch.params
    tr, det = branch.trace, branch.det
    out = []
    for i in np.flatnonzero((tr[:-1] * tr[1:] < 0) & (det[:-1] > 0) & (det[1:] > 0)):
        a, b = branch.V[i], branch.V[i + 1]
        ta = tr[i]
        for _ in range(200):
            m = 0.5 * (a + b)
            tm = _trace_along(m, p)[0]
            if tm == 0 or b - a < tol:
                break
            if (tm < 0) == (ta < 0):
                a, ta = m, tm
            else:
                b = m
        Vh = 0.5 * (a + b)
        _, dh, ch = _trace_along(Vh, p)
        out.append(SpecialPoint("hopf", float(ch), float(Vh), float(math.sqrt(dh))))
    if not out:
        warnings.warn("no fast-subsystem Hopf point found", RuntimeWarning, stacklevel=2)
    return out


def fast_subsystem(params: ChayKeizerParams):
    """Chay-Keizer system with calcium frozen (no flux, no pump)."""
    return make_system("chay-keizer", params.updated(f=0.0, kc=0.0, beta=0.0))


@dataclass(frozen=True)
class EnvelopePoint:
    c: float
    V_min: float
    V_max: float
    period: float
    spiking: bool
    state: tuple = ()


def _spike_stats(traj, settle: float):
    from .analysis import AnalysisError, period_estimate

    V = traj.column("V")
    t = traj.times
    tail = V[t >= traj.t0 + settle]
    vmin, vmax = float(tail.min()), float(tail.max())
    try:
        period = period_estimate(traj, "V", transient_discard=settle)[0]
    except AnalysisError:
        period = math.nan
    return vmin, vmax, period


def ck_periodic_envelope(params: ChayKeizerParams, c_values, x0=None, dt: float = 0.05,
                         transient: float = 2000.0, window: float = 2000.0,
                         min_amplitude: float = 1.0) -> list:
    """Min/max ``V`` and spike period of the stable periodic orbits at frozen ``c``.

    ``c_values`` are visited in the given order, each run starting from the
    final state of the previous one.  The scan stops at the first ``c``
    without sustained spiking (peak-to-peak ``V`` below ``min_amplitude``).
    """
    fast = fast_subsystem(params)
    cfg = IntegratorConfig("rk4", dt, transient + window, 1)
    c_values = list(c_values)
    if x0 is None:
        c0 = c_values[0]
        V0 = _upper_equilibrium_V(params, c0)
        x0 = (V0 + 1.0, float(boltzmann(V0, params.vw, params.sw)), c0)
    state = np.array(x0, dtype=float)
    out = []
    probe = IntegratorConfig("rk4", dt, max(transient, 2000.0) * 2, 1)
    prev_c = state_prev = None
    for c in c_values:
        state[2] = c
        traj = integrate(fast, state, cfg)
        vmin, vmax, period = _spike_stats(traj, transient)
        spiking = (vmax - vmin) >= min_amplitude
        if not spiking and prev_c is not None:
            # a single jump in c can leave a thin basin near the saddle;
            # retry by smaller continuation steps before giving up
            end = _march(fast, params, prev_c, state_prev, c, probe, abs(c - prev_c) / 64)
            if end.reached:
                x = end.state.copy()
                x[2] = c
                traj = integrate(fast, x, cfg)
                vmin, vmax, period = _spike_stats(traj, transient)
                spiking = (vmax - vmin) >= min_amplitude
        out.append(EnvelopePoint(float(c), vmin, vmax, period, bool(spiking),
                                 tuple(_orbit_seed(traj))))
        if not spiking:
            break
        prev_c, state_prev = c, _orbit_seed(traj)
        state = state_prev.copy()
    return out


def _upper_equilibrium_V(params, c, V_range=(-75.0, -10.0)):
    return _equilibria_V(params, c, V_range)[-1]


def _equilibria_V(params, c, V_range=(-75.0, -10.0)) -> list:
    """Equilibrium voltages at frozen ``c``, ascending."""
    br = ck_equilibrium_branch(params, V_range, 4000)
    idx = np.flatnonzero(np.diff(np.sign(br.c - c)) != 0)
    if len(idx) == 0:
        return [float(br.V[-1])]
    out = []
    for i in idx:
        # linear interpolation between the bracketing samples
        w = (c - br.c[i]) / (br.c[i + 1] - br.c[i])
        out.append(float(br.V[i] + w * (br.V[i + 1] - br.V[i])))
    return out


def _lower_stable_equilibrium(params, c):
    br = ck_equilibrium_branch(params, (-75.0, -10.0), 4000)
    idx = np.flatnonzero(np.diff(np.sign(br.c - c)) != 0)
    idx = [i for i in idx if br.stable[i] and br.stable[i + 1]]
    if not idx:
        return None
    return float(br.V[idx[0]])


def _orbit_seed(traj) -> np.ndarray:
    """State at the last spike peak, the point of the orbit farthest from the saddle."""
    V = traj.column("V")
    tail = len(V) // 2
    return traj.states[tail + int(np.argmax(V[tail:]))].copy()


def _keeps_spiking(fast, params, state, c, cfg, settle_tol=0.5):
    x = np.array(state, dtype=float)
    x[2] = c
    traj = integrate(fast, x, cfg)
    tail = traj.column("V")[len(traj) // 2:]
    V_rest = _lower_stable_equilibrium(params, c)
    if V_rest is not None and np.all(np.abs(tail - V_rest) < settle_tol):
        return False, traj
    return (tail.max() - tail.min()) > 1.0, traj


@dataclass
class _MarchEnd:
    reached: bool
    c: float              # last c with sustained spiking
    state: np.ndarray     # orbit point at that c
    traj: object
    failed_c: float       # closest c beyond it where the orbit was lost


def _march(fast, params, c_from, state, c_to, cfg, min_step) -> _MarchEnd:
    """Continue the spiking orbit from ``c_from`` toward ``c_to``.

    Steps that lose the orbit are halved until they drop below ``min_step``.
    """
    c, h = float(c_from), float(c_to - c_from)
    state = np.array(state, dtype=float)
    traj, failed = None, math.nan
    while (c_to - c) * np.sign(h) > 1e-15:
        step = h if abs(h) < abs(c_to - c) else c_to - c
        ok, trial = _keeps_spiking(fast, params, state, c + step, cfg)
        if ok:
            c, state, traj = c + step, _orbit_seed(trial), trial
            continue
        failed = c + step
        h = step / 2
        if abs(h) < min_step:
            return _MarchEnd(False, c, state, traj, failed)
    return _MarchEnd(True, c, state, traj, failed)


@dataclass(frozen=True)
class HomoclinicEstimate:
    c: float
    bracket: tuple
    period_ratio: float


def ck_homoclinic_estimate(params: ChayKeizerParams, spiking_c: float, spiking_state,
                           silent_c: float, tol: float = 1e-4, dt: float = 0.05,
                           horizon: float = 4000.0, reference_period: Optional[float] = None,
                           max_extensions: int = 5) -> HomoclinicEstimate:
    """Bracket the frozen ``c`` at which the spiking orbit stops being an attractor.

    The orbit is continued from ``spiking_state`` (a point on it at
    ``spiking_c``) toward ``silent_c``.  A trial counts as spiking unless
    ``V`` settles onto the lower stable equilibrium within ``horizon``; a
    failed step is halved, so the search is a bisection on the last step
    and stops once the bracket is narrower than ``tol``.  If spiking
    survives at ``silent_c`` the search carries on past it, up to
    ``max_extensions`` further bracket widths.

    ``period_ratio`` is the spike period on the last sustained orbit over
    ``reference_period``.
    """
    from .analysis import AnalysisError, period_estimate

    fast = fast_subsystem(params)
    cfg = IntegratorConfig("rk4", dt, horizon, 1)
    c0 = float(spiking_c)
    ok, traj = _keeps_spiking(fast, params, spiking_state, c0, cfg)
    if not ok:
        raise RuntimeError(f"no sustained spiking at the starting c={c0}")
    width = float(silent_c) - c0
    end = _march(fast, params, c0, _orbit_seed(traj), c0 + (1 + max_extensions) * width,
                 cfg, tol / 2)
    if end.reached:
        raise RuntimeError(f"spiking persists up to c={end.c}; no homoclinic bracket")
    last = end.traj if end.traj is not None else traj
    ratio = math.nan
    if reference_period:
        try:
            ratio = period_estimate(last, "V", horizon / 2)[0] / reference_period
        except AnalysisError:
            pass
    if not ratio > 10:
        warnings.warn(f"spike period only {ratio:.3g}x the reference at the end of the "
                      "spiking branch; the bracket may mark a fold of periodic orbits "
                      "rather than a homoclinic orbit", RuntimeWarning, stacklevel=2)
    lo, hi = sorted((end.c, end.failed_c))
    return HomoclinicEstimate(0.5 * (lo + hi), (lo, hi), ratio)


@dataclass
class BifurcationDiagram:
    slow_param_name: str
    branch: Branch
    special_points: list
    envelope: list = field(default_factory=list)
    homoclinic: Optional[HomoclinicEstimate] = None

    def points(self, kind: str) -> list:
        return [p for p in self.special_points if p.kind == kind]

    def to_csv(self, path) -> None:
        """Sections ``branch``, ``envelope`` and ``special`` in one table."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(("section", "c", "V", "kind", "aux"))
            b = self.branch
            for c, V, w, s in zip(b.c, b.V, b.w, b.stable):
                wr.writerow(["branch", f"{c:.17g}", f"{V:.17g}",
                             "stable" if s else "unstable", f"{w:.17g}"])
            for e in self.envelope:
                if not e.spiking:
                    continue
                wr.writerow(["envelope", f"{e.c:.17g}", f"{e.V_min:.17g}", "min",
                             f"{e.period:.17g}"])
                wr.writerow(["envelope", f"{e.c:.17g}", f"{e.V_max:.17g}", "max",
                             f"{e.period:.17g}"])
            for sp in self.special_points:
                wr.writerow(["special", f"{sp.c:.17g}", f"{sp.V:.17g}", sp.kind,
                             f"{sp.aux:.17g}"])


def ck_bifurcation_diagram(params: ChayKeizerParams, n_samples: int = 2000,
                           n_envelope: int = 40, dt: float = 0.05,
                           envelope: bool = True) -> BifurcationDiagram:
    """Branch, folds, Hopf point, spiking envelope and homoclinic estimate."""
    branch = ck_equilibrium_branch(params, n_samples=n_samples)
    specials = ck_detect_saddle_nodes(branch) + ck_detect_fast_hopf(branch)
    diagram = BifurcationDiagram("c", branch, specials)
    hopfs = diagram.points("hopf")
    folds = sorted(diagram.points("saddle-node"), key=lambda s: s.c)
    if not envelope or not hopfs or len(folds) < 2:
        return diagram

    hopf = hopfs[0]
    c_right = folds[-1].c
    # periodic orbits grow from the Hopf point toward the upper fold
    c_vals = np.linspace(hopf.c, c_right, n_envelope + 1)[1:]
    env = ck_periodic_envelope(params, c_vals, dt=dt)
    diagram.envelope = env
    spiking = [e for e in env if e.spiking]
    if not spiking or spiking[-1] is env[-1]:
        return diagram

    last, first_silent = spiking[-1], env[len(spiking)]
    ref = next((e.period for e in spiking if np.isfinite(e.period)), None)
    hc = ck_homoclinic_estimate(params, last.c, last.state, first_silent.c,
                                dt=dt, reference_period=ref)
    diagram.homoclinic = hc
    # the orbit ends on the saddle, the middle of the three equilibria
    eqs = _equilibria_V(params, hc.c)
    V_hc = eqs[len(eqs) // 2]
    diagram.special_points.append(SpecialPoint("homoclinic", hc.c, V_hc, hc.period_ratio))
    return diagram

"""Time averages, dynamic-state labels and chair-curve sweeps."""
from __future__ import annotations

import csv
import enum
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .models import ModelSystem
from .ode import IntegrationError, IntegratorConfig, Trajectory, integrate, resample_window
from .stochastic import NoiseProcess, folded_mean_for, point_seed

log = logging.getLogger(__name__)


class DynamicState(str, enum.Enum):
    QUIESCENT = "quiescent"
    OSCILLATORY = "oscillatory"
    BURSTING = "bursting"
    SPIKING = "spiking"
    UNDETERMINED = "undetermined"


class AnalysisError(ValueError):
    pass


def _window(traj: Trajectory, transient_discard: float) -> Trajectory:
    if transient_discard < 0:
        raise AnalysisError("transient_discard must be nonnegative")
    if transient_discard >= traj.duration:
        raise AnalysisError(
            f"transient_discard {transient_discard} leaves an empty window "
            f"(duration {traj.duration})"
        )
    if transient_discard == 0:
        return traj
    return resample_window(traj, traj.t0 + transient_discard, traj.t_final)


def time_average(traj: Trajectory, variable: str, transient_discard: float = 0.0) -> float:
    """Trapezoidal mean of ``variable`` over ``[t0 + transient_discard, t_end]``."""
    w = _window(traj, transient_discard)
    v = w.column(variable)
    if len(v) < 2:
        raise AnalysisError("window holds fewer than two samples")
    # uniform grid: dividing by the interval count avoids a dt round trip
    return float(np.trapezoid(v) / (len(v) - 1))


def duty_cycle(traj: Trajectory, variable: str, threshold: float,
               transient_discard: float = 0.0) -> float:
    """Fraction of the window during which ``variable`` exceeds ``threshold``."""
    v = _window(traj, transient_discard).column(variable)
    if not (v.min() < threshold < v.max()):
        raise AnalysisError(
            f"threshold {threshold} outside observed range [{v.min():.6g}, {v.max():.6g}]"
        )
    return float(np.mean(v[:-1] > threshold))


def upward_crossings(t: np.ndarray, v: np.ndarray, level: float, hysteresis: float) -> np.ndarray:
    """Interpolated times where ``v`` rises through ``level``.

    A crossing only counts after ``v`` has dropped below ``level - hysteresis``
    since the previous one, so small ripples riding on the signal are ignored.
    """
    cand = np.flatnonzero((v[:-1] < level) & (v[1:] >= level))
    below = np.flatnonzero(v < level - hysteresis)
    times = []
    last = -1
    for i in cand:
        k = np.searchsorted(below, last + 1)
        if k >= len(below) or below[k] > i:
            continue
        frac = (level - v[i]) / (v[i + 1] - v[i])
        times.append(t[i] + frac * (t[i + 1] - t[i]))
        last = i
    return np.asarray(times)


def period_estimate(traj: Trajectory, variable: str, transient_discard: float = 0.0,
                    hysteresis: float = 0.1) -> tuple:
    """Mean and standard deviation of the spacing between upward mid-range crossings.

    ``hysteresis`` is a fraction of the peak-to-peak range.
    """
    w = _window(traj, transient_discard)
    v = w.column(variable)
    lo, hi = float(v.min()), float(v.max())
    if hi - lo <= 0:
        raise AnalysisError(f"{variable} is constant; no period")
    crossings = upward_crossings(w.times, v, 0.5 * (lo + hi), hysteresis * (hi - lo))
    if len(crossings) < 3:
        raise AnalysisError(f"only {len(crossings)} upward crossings of {variable}")
    gaps = np.diff(crossings)
    return float(gaps.mean()), float(gaps.std())


# --------------------------------------------------------------------------
# state classification
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StateCriteria:
    """Thresholds used by :func:`classify_state`.

    ``amplitude_variable`` is quiescent when its peak-to-peak range is below
    ``eps_amp``.  For the beta-cell models a silent epoch is a stretch of at
    least ``t_silent`` with ``V < v_silent``.
    """

    amplitude_variable: str
    eps_amp: float
    min_duration: float
    v_silent: float = -55.0
    t_silent: float = 500.0


# eps_amp is 1% of the reference oscillation range: y at J=0, alpha=2 for FHN
# (range 1.384); the burst spike height in V (about 44 mV) for the beta-cell models
FHN_CRITERIA = StateCriteria("y", eps_amp=0.0138, min_duration=100.0)
CK_CRITERIA = StateCriteria("V", eps_amp=0.44, min_duration=20000.0, t_silent=500.0)
PBM_FAST_CRITERIA = StateCriteria("V", eps_amp=0.47, min_duration=20000.0, t_silent=500.0)
PBM_SLOW_CRITERIA = StateCriteria("V", eps_amp=0.47, min_duration=600000.0, t_silent=5000.0)


def criteria_for(system: ModelSystem) -> StateCriteria:
    if system.name == "fhn":
        return FHN_CRITERIA
    if system.name == "chay-keizer":
        return CK_CRITERIA
    # small K(Ca) conductance puts the phantom burster in its slow, a-driven regime
    return PBM_SLOW_CRITERIA if system.params.gKCa < 100 else PBM_FAST_CRITERIA


def _longest_run(mask: np.ndarray) -> int:
    if not mask.any():
        return 0
    padded = np.concatenate(([0], mask.astype(np.int8), [0]))
    edges = np.flatnonzero(np.diff(padded))
    return int((edges[1::2] - edges[0::2]).max())


def classify_state(traj: Trajectory, system: ModelSystem,
                   criteria: Optional[StateCriteria] = None) -> DynamicState:
    """Label a post-transient trajectory as quiescent, oscillatory, bursting or spiking."""
    crit = criteria or criteria_for(system)
    if traj.duration < crit.min_duration:
        return DynamicState.UNDETERMINED
    amp = traj.column(crit.amplitude_variable)
    if np.ptp(amp) < crit.eps_amp:
        return DynamicState.QUIESCENT
    if system.name == "fhn":
        return DynamicState.OSCILLATORY
    V = traj.column("V")
    if V.max() <= crit.v_silent:
        return DynamicState.OSCILLATORY
    silent = _longest_run(V < crit.v_silent) * traj.dt
    return DynamicState.BURSTING if silent >= crit.t_silent else DynamicState.SPIKING


# --------------------------------------------------------------------------
# chair curves
# --------------------------------------------------------------------------


def parse_range(text: str) -> np.ndarray:
    """``"lo:hi:step"`` to an inclusive grid (endpoint kept within half a step)."""
    try:
        lo, hi, step = (float(x) for x in text.split(":"))
    except ValueError:
        raise ValueError(f"range must be lo:hi:step, got {text!r}") from None
    return grid(lo, hi, step)


def grid(lo: float, hi: float, step: float) -> np.ndarray:
    if not lo < hi:
        raise ValueError("range needs lo < hi")
    if not step > 0:
        raise ValueError("step must be positive")
    n = int(math.floor((hi - lo) / step + 0.5)) + 1
    return np.round(lo + step * np.arange(n), 12)


@dataclass
class ChairCurve:
    input_name: str
    inputs: np.ndarray
    averages: np.ndarray
    state_labels: list
    observable_name: str
    periods: Optional[np.ndarray] = None
    duty_cycles: Optional[np.ndarray] = None
    seeds: Optional[np.ndarray] = None
    input_effective: Optional[np.ndarray] = None
    errors: Optional[list] = None
    model: str = ""
    fixed_params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.averages = np.asarray(self.averages, dtype=float)
        self.state_labels = [DynamicState(s) if not isinstance(s, DynamicState) else s
                             for s in self.state_labels]
        n = len(self.inputs)
        if len(self.averages) != n or len(self.state_labels) != n:
            raise ValueError("inputs, averages and state labels must have equal length")
        if n > 1 and not np.all(np.diff(self.inputs) > 0):
            raise ValueError("inputs must be strictly increasing")

    def __len__(self):
        return len(self.inputs)

    def _col(self, arr, i, default=math.nan):
        return default if arr is None else arr[i]

    def to_csv(self, path) -> None:
        cols = ("input", "average", "state_label", "period", "duty_cycle", "seed",
                "input_effective", "error")
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(cols)
            for i, x in enumerate(self.inputs):
                seed = self._col(self.seeds, i, "")
                wr.writerow([
                    f"{x:.17g}", f"{self.averages[i]:.17g}", self.state_labels[i].value,
                    f"{self._col(self.periods, i):.17g}",
                    f"{self._col(self.duty_cycles, i):.17g}",
                    "" if seed == "" else int(seed),
                    f"{self._col(self.input_effective, i, x):.17g}",
                    "" if self.errors is None or self.errors[i] is None else self.errors[i],
                ])


def read_chair_csv(path, input_name="input", observable_name="average") -> ChairCurve:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return ChairCurve(
        input_name=input_name,
        inputs=[float(r["input"]) for r in rows],
        averages=[float(r["average"]) for r in rows],
        state_labels=[r["state_label"] for r in rows],
        observable_name=observable_name,
        periods=np.array([float(r["period"]) for r in rows]),
        duty_cycles=np.array([float(r["duty_cycle"]) for r in rows]),
        seeds=np.array([int(r["seed"]) if r["seed"] else -1 for r in rows]),
        input_effective=np.array([float(r["input_effective"]) for r in rows]),
    )


@dataclass(frozen=True)
class SweepConfig:
    """One chair-curve sweep.

    ``integrator.t_end`` is ignored; each point runs for
    ``transient_discard + averaging_window``.  When ``noise`` targets the
    swept input, its mean follows the sweep.  With ``effective_inputs`` and
    folded-normal noise, grid values are read as expected values of the
    injected parameter and converted to the underlying normal mean.
    """

    input_name: str
    lo: float
    hi: float
    step: float
    transient_discard: float
    averaging_window: float
    integrator: IntegratorConfig = IntegratorConfig()
    noise: Optional[NoiseProcess] = None
    x0: Optional[tuple] = None
    warm_start: bool = False
    reverse: bool = False
    base_seed: int = 0
    workers: Optional[int] = None
    period_variable: Optional[str] = None
    duty_variable: Optional[str] = None
    duty_threshold: Optional[float] = None
    effective_inputs: bool = False
    record_errors: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("sweep needs lo < hi")
        if not self.step > 0:
            raise ValueError("sweep step must be positive")
        if self.transient_discard < 0 or not self.averaging_window > 0:
            raise ValueError("need transient_discard >= 0 and averaging_window > 0")

    def inputs(self) -> np.ndarray:
        return grid(self.lo, self.hi, self.step)


# default (period variable, duty variable, duty threshold) per model
_SWEEP_DEFAULTS = {
    "fhn": ("y", "x", 0.0),
    "chay-keizer": ("c", "V", -55.0),
    "pbm": ("a", "V", -55.0),
}


class SweepError(RuntimeError):
    def __init__(self, message, input_value):
        super().__init__(message)
        self.input_value = input_value


@dataclass
class _Point:
    value: float
    effective: float
    seed: int
    averages: dict
    state: DynamicState
    period: float
    duty: float
    final_state: Optional[np.ndarray]
    error: Optional[str] = None


def _run_point(system, observables, cfg, idx, value, x0) -> _Point:
    period_var, duty_var, duty_thr = _SWEEP_DEFAULTS[system.name]
    period_var = cfg.period_variable or period_var
    duty_var = cfg.duty_variable or duty_var
    duty_thr = duty_thr if cfg.duty_threshold is None else cfg.duty_threshold

    seed = point_seed(cfg.base_seed, idx)
    noise = cfg.noise
    effective = value
    sys_k = system
    if noise is not None:
        noise = noise.with_seed(seed)
        if noise.target == cfg.input_name:
            mean = value
            if cfg.effective_inputs and noise.distribution == "folded-normal":
                mean = folded_mean_for(value, noise.sigma)
            noise = noise.with_mean(mean)
            effective = noise.effective_mean()
            sys_k = system.with_params(**{cfg.input_name: mean})
        else:
            sys_k = system.with_params(**{cfg.input_name: value})
    else:
        sys_k = system.with_params(**{cfg.input_name: value})

    icfg = replace(cfg.integrator, t_end=cfg.transient_discard + cfg.averaging_window)
    try:
        traj = integrate(sys_k, x0, icfg, noise=noise)
    except IntegrationError as exc:
        if not cfg.record_errors:
            raise SweepError(f"{cfg.input_name}={value}: {exc}", value) from exc
        return _Point(value, effective, seed, {o: math.nan for o in observables},
                      DynamicState.UNDETERMINED, math.nan, math.nan, None, str(exc))
    win = resample_window(traj, cfg.transient_discard, traj.t_final)
    averages = {o: time_average(win, o) for o in observables}
    state = classify_state(win, sys_k)
    try:
        period = period_estimate(win, period_var)[0]
    except AnalysisError:
        period = math.nan
    try:
        duty = duty_cycle(win, duty_var, duty_thr)
    except AnalysisError:
        duty = math.nan
    return _Point(value, effective, seed, averages, state, period, duty, traj.final_state)


@dataclass
class SweepResult:
    input_name: str
    model: str
    points: list
    fixed_params: dict

    def curve(self, observable: str) -> ChairCurve:
        pts = sorted(self.points, key=lambda p: p.value)
        return ChairCurve(
            input_name=self.input_name,
            inputs=[p.value for p in pts],
            averages=[p.averages[observable] for p in pts],
            state_labels=[p.state for p in pts],
            observable_name=observable,
            periods=np.array([p.period for p in pts]),
            duty_cycles=np.array([p.duty for p in pts]),
            seeds=np.array([p.seed for p in pts]),
            input_effective=np.array([p.effective for p in pts]),
            errors=[p.error for p in pts],
            model=self.model,
            fixed_params=dict(self.fixed_params),
        )


def run_sweep(system: ModelSystem, observables: Sequence[str], cfg: SweepConfig) -> SweepResult:
    """Integrate every grid point of ``cfg`` and collect averages for ``observables``."""
    if isinstance(observables, str):
        observables = [observables]
    for o in observables:
        if o not in system.labels:
            raise KeyError(f"{system.name} has no variable {o!r}")
    system.param_index(cfg.input_name)
    values = cfg.inputs()
    order = list(range(len(values)))
    if cfg.reverse:
        order.reverse()
    x0 = tuple(cfg.x0) if cfg.x0 is not None else system.default_x0

    if cfg.warm_start:
        # continuation: each run starts where the previous one ended
        points = []
        start = x0
        for idx in order:
            pt = _run_point(system, observables, cfg, idx, values[idx], start)
            points.append(pt)
            if pt.final_state is not None:
                start = tuple(pt.final_state)
    else:
        workers = cfg.workers or os.cpu_count() or 1
        if workers == 1:
            points = [_run_point(system, observables, cfg, i, values[i], x0) for i in order]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futs = [pool.submit(_run_point, system, observables, cfg, i, values[i], x0)
                        for i in order]
                points = [f.result() for f in futs]
    fixed = {k: v for k, v in system.params.as_dict().items() if k != cfg.input_name}
    return SweepResult(cfg.input_name, system.name, points, fixed)


def chair_sweep(system: ModelSystem, observable: str, cfg: SweepConfig) -> ChairCurve:
    """Asymptotic time-average of ``observable`` across the input grid."""
    return run_sweep(system, [observable], cfg).curve(observable)


# --------------------------------------------------------------------------
# chair-curve metrics
# --------------------------------------------------------------------------


def default_seat_interval(curve: ChairCurve) -> tuple:
    if curve.model == "fhn" and "alpha" in curve.fixed_params:
        from .bifurcation import fhn_hopf_points

        hp = fhn_hopf_points(curve.fixed_params["alpha"], curve.fixed_params.get("mu", 30.0))
        return hp.J_minus, hp.J_plus
    osc = [x for x, s in zip(curve.inputs, curve.state_labels)
           if s not in (DynamicState.QUIESCENT, DynamicState.UNDETERMINED)]
    if not osc:
        raise AnalysisError("no oscillatory points to define a seat interval")
    return min(osc), max(osc)


def seat_slope(curve: ChairCurve, interval: Optional[tuple] = None) -> float:
    """Least-squares slope of the averages against the inputs inside ``interval``.

    Without an interval, FitzHugh-Nagumo curves use the span between the two
    Hopf points of the deterministic model; other curves use the span of
    their non-quiescent points.
    """
    lo, hi = interval if interval is not None else default_seat_interval(curve)
    mask = (curve.inputs >= lo) & (curve.inputs <= hi) & np.isfinite(curve.averages)
    if mask.sum() < 3:
        raise AnalysisError(f"only {int(mask.sum())} sweep points inside [{lo}, {hi}]")
    x = curve.inputs[mask]
    y = curve.averages[mask]
    xm = x - x.mean()
    return float(np.dot(xm, y - y.mean()) / np.dot(xm, xm))


def oscillation_interval(stoch: ChairCurve, det: ChairCurve, delta: float = 0.03,
                         reference_states=(DynamicState.QUIESCENT,)) -> Optional[tuple]:
    """Left and right input where ``stoch`` leaves the deterministic reference branch.

    Scanning inward from each end of the grid, the endpoint is the first input
    where either the deterministic point is no longer on a reference branch
    (``reference_states``) or ``|stoch - det| > delta``.  Returns ``None`` when
    no endpoint exists.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if len(stoch) != len(det) or not np.allclose(stoch.inputs, det.inputs, atol=1e-12):
        raise ValueError("curves must share the same input grid")
    ref = {DynamicState(s) for s in reference_states}
    diff = np.abs(stoch.averages - det.averages)

    def departs(i):
        return det.state_labels[i] not in ref or diff[i] > delta

    n = len(det)
    left = next((i for i in range(n) if departs(i)), None)
    right = next((i for i in reversed(range(n)) if departs(i)), None)
    if left is None or right is None:
        return None
    return float(det.inputs[left]), float(det.inputs[right])


def oscillation_interval_length(stoch: ChairCurve, det: ChairCurve, delta: float = 0.03,
                                reference_states=(DynamicState.QUIESCENT,)) -> float:
    """Length of :func:`oscillation_interval`; zero (with a warning) if none is found."""
    iv = oscillation_interval(stoch, det, delta, reference_states)
    if iv is None:
        warnings.warn("stochastic curve never leaves the deterministic reference branch",
                      RuntimeWarning, stacklevel=2)
        return 0.0
    return iv[1] - iv[0]

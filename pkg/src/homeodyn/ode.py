"""Fixed-step integration of autonomous vector fields.

Every model in the package exposes a numba-compiled right-hand side with the
signature ``rhs(x, p, out)`` operating on a state vector ``x`` and a flat
parameter vector ``p``.  :func:`integrate` drives that kernel with either
forward Euler or classical RK4, optionally replacing one entry of ``p`` by a
piecewise-constant random path (see :mod:`homeodyn.stochastic`).

The step loop runs without the GIL, so independent integrations can be
spread over a thread pool.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from numba import njit

if TYPE_CHECKING:  # pragma: no cover
    from .models import ModelSystem
    from .stochastic import NoiseProcess

METHODS = ("forward-euler", "rk4")

# steps per kernel call when a noise path has to be streamed in
_CHUNK_STEPS = 1 << 20


class IntegrationError(RuntimeError):
    """Raised when the state stops being finite."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4"
    dt: float = 1e-3
    t_end: float = 100.0
    record_stride: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")

    @property
    def n_steps(self) -> int:
        return n_steps(self.t_end, self.dt)


def n_steps(t_end: float, dt: float) -> int:
    """Number of whole steps of size ``dt`` in ``t_end`` (tolerant to round-off)."""
    return int(math.floor(t_end / dt + 1e-9))


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled solution; row ``i`` is the state at ``t0 + i*dt``."""

    t0: float
    dt: float
    states: np.ndarray
    labels: tuple = field(default_factory=tuple)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim != 2:
            raise ValueError("states must be a 2-D array (samples x variables)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        labels = tuple(self.labels)
        if states.shape[1] != len(labels):
            raise ValueError(
                f"state dimension {states.shape[1]} does not match {len(labels)} labels"
            )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def t_final(self) -> float:
        return self.t0 + self.dt * (len(self) - 1)

    @property
    def duration(self) -> float:
        return self.dt * (len(self) - 1)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.states[:, self.labels.index(name)]
        except ValueError:
            raise KeyError(f"unknown variable {name!r}; have {self.labels}") from None

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1].copy()

    def to_csv(self, path) -> None:
        """Write ``t`` plus every variable, 17 significant digits."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("t",) + self.labels)
            for t, row in zip(self.times, self.states):
                writer.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in r] for r in reader])
    t = rows[:, 0]
    dt = t[1] - t[0] if len(t) > 1 else 1.0
    return Trajectory(t0=t[0], dt=dt, states=rows[:, 1:], labels=tuple(header[1:]))


def resample_window(traj: Trajectory, t_start: float, t_stop: float) -> Trajectory:
    """Contiguous sub-trajectory covering ``[t_start, t_stop]``.

    Window edges are snapped to the sample grid.  The sample spacing is kept.
    """
    eps = 1e-9 * traj.dt
    if not (t_start < t_stop):
        raise ValueError("t_start must be smaller than t_stop")
    if t_start < traj.t0 - eps or t_stop > traj.t_final + eps:
        raise ValueError(
            f"window [{t_start}, {t_stop}] outside trajectory range "
            f"[{traj.t0}, {traj.t_final}]"
        )
    i0 = int(math.ceil((t_start - traj.t0) / traj.dt - 1e-9))
    i1 = int(math.floor((t_stop - traj.t0) / traj.dt + 1e-9))
    i1 = max(i1, i0 + 1)
    return Trajectory(
        t0=traj.t0 + i0 * traj.dt,
        dt=traj.dt,
        states=traj.states[i0 : i1 + 1],
        labels=traj.labels,
    )


# not cached on disk: entries specialised on a kernel's dispatcher type go
# stale across processes and numba then fails with a ReferenceError
@njit(nogil=True)
def _run_steps(rhs, x, p, dt, g_start, g_stop, stride, use_rk4,
               noise_idx, noise_vals, refresh, interval0, out):
    d = x.size
    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    tmp = np.empty(d)
    for g in range(g_start, g_stop):
        if noise_idx >= 0:
            p[noise_idx] = noise_vals[g // refresh - interval0]
        if use_rk4:
            rhs(x, p, k1)
            for j in range(d):
                tmp[j] = x[j] + 0.5 * dt * k1[j]
            rhs(tmp, p, k2)
            for j in range(d):
                tmp[j] = x[j] + 0.5 * dt * k2[j]
            rhs(tmp, p, k3)
            for j in range(d):
                tmp[j] = x[j] + dt * k3[j]
            rhs(tmp, p, k4)
            for j in range(d):
                x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        else:
            rhs(x, p, k1)
            for j in range(d):
                x[j] += dt * k1[j]
        for j in range(d):
            if not np.isfinite(x[j]):
                return g + 1
        if (g + 1) % stride == 0:
            row = (g + 1) // stride
            for j in range(d):
                out[row, j] = x[j]
    return -1


def integrate(
    system: "ModelSystem",
    x0: Sequence[float],
    cfg: IntegratorConfig,
    noise: Optional["NoiseProcess"] = None,
    t0: float = 0.0,
) -> Trajectory:
    """Integrate ``system`` from ``x0`` over ``[t0, t0 + cfg.t_end]``.

    Parameters
    ----------
    system : ModelSystem
        Vector field and parameters.
    x0 : sequence of float
        Initial state, one entry per state label.
    cfg : IntegratorConfig
        Method, step, horizon and recording stride.
    noise : NoiseProcess, optional
        If given, the target parameter is held at a fresh random draw on each
        refresh interval ``[k*T, (k+1)*T)``, ``T`` snapped to the step grid.

    Returns
    -------
    Trajectory
        ``cfg.n_steps // cfg.record_stride + 1`` samples spaced
        ``cfg.dt * cfg.record_stride`` apart.

    Raises
    ------
    ValueError
        Dimension mismatch or unknown noise target.
    IntegrationError
        A state component became non-finite; ``.time`` holds the step time.
    """
    x = np.array(x0, dtype=float).ravel()
    if x.size != system.dim:
        raise ValueError(f"x0 has dimension {x.size}, system {system.name} has {system.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")

    p = system.param_array()
    total = cfg.n_steps
    stride = int(cfg.record_stride)
    out = np.empty((total // stride + 1, system.dim))
    out[0] = x
    use_rk4 = cfg.method == "rk4"

    if noise is None:
        status = _run_steps(system.kernel, x, p, cfg.dt, 0, total, stride, use_rk4,
                            -1, np.zeros(1), 1, 0, out)
    else:
        noise_idx = system.param_index(noise.target)
        stream = noise.stream(cfg.dt)
        refresh = stream.refresh_steps
        chunk = max(1, _CHUNK_STEPS // refresh) * refresh
        status = -1
        for g_start in range(0, total, chunk):
            g_stop = min(total, g_start + chunk)
            n_int = -(-(g_stop - g_start) // refresh)
            vals = stream.next(n_int)
            status = _run_steps(system.kernel, x, p, cfg.dt, g_start, g_stop, stride,
                                use_rk4, noise_idx, vals, refresh, g_start // refresh, out)
            if status >= 0:
                break

    if status >= 0:
        t_bad = t0 + status * cfg.dt
        raise IntegrationError(
            f"non-finite state in {system.name} at t={t_bad:.6g}", time=t_bad
        )
    return Trajectory(t0=t0, dt=cfg.dt * stride, states=out, labels=system.labels)

"""Pinned recipes that regenerate the data behind each figure.

Each recipe writes plot-ready CSVs into ``<out>/<figure>/`` and returns the
paths plus a dict of headline numbers that goes into the manifest.  Columns
are documented in the README; any plotting tool can render them.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .analysis import read_chair_csv, time_average
from .cli import MODEL_DEFAULTS, Resolved, do_bifurcate, do_simulate, do_sweep
from .models import fhn_equilibrium, make_system
from .ode import read_trajectory_csv

FHN_J_RANGE = "-3:3:0.05"
CK_KC_RANGE = "0.01:0.15:0.002"


def _res(model, params=None, command="simulate", seed=0, workers=None, noise=None, **run):
    base = dict(MODEL_DEFAULTS[model]["sweep" if command == "sweep" else "simulate"])
    base.update(run)
    return Resolved(model, dict(params or {}), base, dict(noise or {}), seed, workers)


def _averages(path, variables, discard=0.0) -> dict:
    traj = read_trajectory_csv(path)
    return {v: time_average(traj, v, discard) for v in variables}


def _write_json(path: Path, data: dict) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def fig2(out, seed, workers):
    """Excitability (J=1) and relaxation oscillation (J=0), alpha=1."""
    params = dict(alpha=1.0, J=1.0)
    # with alpha = 1 the equilibrium cubic reduces to x^3/3 + J = 0
    xs = float(-np.cbrt(3.0 * params["J"]))
    ys = params["J"] + xs
    outs = []
    for tag, kick in (("B_subthreshold", 0.3), ("B_superthreshold", 1.5)):
        outs += do_simulate(_res("fhn", params, t_end=20.0), out, (xs + kick, ys),
                            f"fig2_{tag}.csv")
    outs += do_simulate(_res("fhn", dict(alpha=1.0, J=0.0), t_end=100.0), out, (2.0, 0.0),
                        "fig2_D.csv")
    return outs, {}


def fig3(out, seed, workers):
    """Limit cycles and y series for J=0 and J=0.8 at alpha=2."""
    outs, avg = [], {}
    for J in (0.0, 0.8):
        p = do_simulate(_res("fhn", dict(alpha=2.0, J=J), t_end=300.0), out, (0.1, 0.0),
                        f"fig3_J{J:g}.csv")
        outs += p
        avg[f"J={J:g}"] = _averages(p[0], ("x", "y"), discard=100.0)
    outs.append(_write_json(out / "fig3_averages.json", avg))
    return outs, {"averages": avg}


def _fhn_chair(out, seed, workers, alpha, prefix, observe=("y", "x")):
    return do_sweep(_res("fhn", dict(alpha=alpha), "sweep", seed, workers), out, "J",
                    FHN_J_RANGE, list(observe), prefix=prefix)


def _jumps(path):
    """Inputs bracketing the two largest drops of a chair curve."""
    c = read_chair_csv(path)
    d = c.averages[1:] - c.averages[:-1]
    idx = sorted(sorted(range(len(d)), key=lambda i: d[i])[:2])
    return [[float(c.inputs[i]), float(c.inputs[i + 1]), float(d[i])] for i in idx]


def fig4(out, seed, workers):
    """Chair curve of <y> over J at alpha=2, plus the equilibria for panel B."""
    outs = _fhn_chair(out, seed, workers, 2.0, "fig4_chair", observe=("y",))
    rows = ["J,x_star,y_star"]
    for J in (-2.5, -2.0, -1.5, -0.5, 0.0, 0.5, 2.0):
        xs, ys = fhn_equilibrium(make_system("fhn", alpha=2.0, J=J).params)
        rows.append(f"{J:.17g},{xs:.17g},{ys:.17g}")
    path = out / "fig4_B_equilibria.csv"
    path.write_text("\n".join(rows) + "\n")
    return outs + [path], {"jumps": _jumps(outs[0])}


def fig5(out, seed, workers):
    """<x> over J and x series at two inputs inside the oscillation range."""
    outs = _fhn_chair(out, seed, workers, 2.0, "fig5_chair", observe=("x",))
    for J in (-0.5, 0.5):
        outs += do_simulate(_res("fhn", dict(alpha=2.0, J=J), t_end=300.0), out, (0.1, 0.0),
                            f"fig5_B_J{J:g}.csv")
    return outs, {}


def fig6(out, seed, workers):
    """Chair curves at alpha=2 and alpha=4 and the Hopf locus in (J, alpha)."""
    outs = []
    for a in (2.0, 4.0):
        outs += _fhn_chair(out, seed, workers, a, f"fig6_B_alpha{a:g}", observe=("y",))
    outs += do_bifurcate(_res("fhn"), out, "1:5:0.05", 30.0, name="fig6_C_hopf_locus.csv")
    return outs, {}


def fig7(out, seed, workers):
    """Stochastic input, alpha=2.5: chair curves, seat slopes and oscillation intervals."""
    outs, table = [], {}
    for sigma in (0, 10, 20, 30):
        res = _res("fhn", dict(alpha=2.5), "sweep", seed, workers,
                   noise=dict(dist="normal", sigma=float(sigma), refresh=1e-3),
                   method="forward-euler", dt=1e-3, window=3000.0)
        written = do_sweep(res, out, "J", FHN_J_RANGE, ["y"], want_slope=True, delta=0.03,
                           prefix=f"fig7_sigma{sigma}")
        outs += written
        summary = json.loads(Path(written[-1]).read_text())
        table[str(sigma)] = {"seat_slope": summary["seat_slope_y"],
                             "oscillation_interval_length":
                                 summary["oscillation_interval_length_y"]}
    outs.append(_write_json(out / "fig7_summary.json", {"seed": seed, "alpha": 2.5,
                                                         "by_sigma": table}))
    return outs, {"by_sigma": table}


def fig8(out, seed, workers):
    """Bursting with the default Chay-Keizer parameters."""
    return do_simulate(_res("chay-keizer", t_end=60000.0, record_stride=10), out, None,
                       "fig8_trajectory.csv"), {}


def fig9(out, seed, workers):
    """Fast-subsystem diagram and a burst trajectory to overlay on it."""
    outs = do_bifurcate(_res("chay-keizer"), out, name="fig9_A_diagram.csv")
    outs += do_simulate(_res("chay-keizer", t_end=60000.0, record_stride=10), out, None,
                        "fig9_B_trajectory.csv")
    return outs, {}


def _ck_chair(out, seed, workers, prefix):
    return do_sweep(_res("chay-keizer", None, "sweep", seed, workers), out, "kc", CK_KC_RANGE,
                    ["c", "V"], prefix=prefix)


def _ck_series(out, kcs, prefix):
    outs = []
    for kc in kcs:
        outs += do_simulate(_res("chay-keizer", dict(kc=kc), t_end=60000.0, record_stride=10),
                            out, None, f"{prefix}_kc{kc:g}.csv")
    return outs


def fig10(out, seed, workers):
    """<c> over kc, and c series at kc=0.05 and 0.09."""
    return _ck_chair(out, seed, workers, "fig10_chair") + _ck_series(out, (0.05, 0.09),
                                                                       "fig10_C"), {}


def fig11(out, seed, workers):
    """<V> over kc, and V series at kc=0.05 and 0.09."""
    return _ck_chair(out, seed, workers, "fig11_chair") + _ck_series(out, (0.05, 0.09),
                                                                       "fig11_B"), {}


def fig12(out, seed, workers):
    """Folded-normal pump noise (sigma=0.04, refresh 1 s) against the noise-free curve."""
    res = _res("chay-keizer", None, "sweep", seed, workers,
               noise=dict(dist="folded-normal", sigma=0.04, refresh=1000.0))
    outs = do_sweep(res, out, "kc", "0.034:0.15:0.002", ["c"], delta=0.005,
                    reference_states=("quiescent", "spiking"), effective_inputs=True,
                    prefix="fig12_A")
    outs += _ck_series(out, (0.036, 0.126), "fig12_B")
    summary = json.loads(Path(outs[2]).read_text())
    return outs, {"oscillation_interval_c": summary.get("oscillation_interval_c")}


def _pbm_pair(out, params, key, values, prefix):
    outs, avg = [], {}
    for v in values:
        p = do_simulate(_res("pbm", {**params, key: v}, t_end=3.6e6, record_stride=20), out,
                        None, f"{prefix}_{key}{v:g}.csv")
        outs += p
        avg[f"{key}={v:g}"] = _averages(p[0], ("c", "a"), discard=1.8e6)
    (a0, a1) = (avg[f"{key}={v:g}"] for v in values)
    rel = {var: abs(a1[var] - a0[var]) / abs(a0[var]) for var in ("c", "a")}
    outs.append(_write_json(out / f"{prefix}_averages.json",
                            {"averages": avg, "relative_change": rel}))
    return outs, {"relative_change": rel}


def fig13(out, seed, workers):
    """Slow bursting (gKCa=25): r=0.18 against r=0.26."""
    return _pbm_pair(out, dict(gKCa=25.0), "r", (0.18, 0.26), "fig13")


def fig14(out, seed, workers):
    """Fast bursting (gKCa=600): kPMCA=0.1 against kPMCA=0.15."""
    return _pbm_pair(out, dict(gKCa=600.0), "kPMCA", (0.1, 0.15), "fig14")


RECIPES = {f.__name__: f for f in (fig2, fig3, fig4, fig5, fig6, fig7, fig8, fig9, fig10,
                                   fig11, fig12, fig13, fig14)}


def run_recipe(name: str, out: Path, seed: int = 0, workers=None):
    target = Path(out) / name
    target.mkdir(parents=True, exist_ok=True)
    outputs, extra = RECIPES[name](target, seed, workers)
    return outputs, extra

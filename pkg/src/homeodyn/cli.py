"""Command-line interface: ``homeodyn simulate | sweep | bifurcate | reproduce``.

Every command writes its CSV outputs plus ``manifest.json`` into ``--out``.
The manifest records the argument vector, the resolved configuration, the
seed and the package version; ``homeodyn --check --out DIR`` re-runs the
recorded command in a scratch directory and compares every output byte for
byte.

Exit codes: 0 success, 1 configuration error, 2 numerical failure (or a
``--check`` mismatch).
"""
from __future__ import annotations

import argparse
import filecmp
import json
import logging
import math
import re
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (AnalysisError, DynamicState, SweepConfig, SweepError,
                       oscillation_interval, oscillation_interval_length, parse_range,
                       run_sweep, seat_slope)
from .bifurcation import ck_bifurcation_diagram, fhn_hopf_locus
from .config import (ConfigError, RunConfig, build_noise, build_system, load_config,
                     parse_noise_flag, parse_set_flags)
from .ode import IntegrationError, IntegratorConfig, integrate

log = logging.getLogger("homeodyn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

# per model: settings for single runs and for sweep points
MODEL_DEFAULTS = {
    "fhn": {
        "simulate": dict(method="rk4", dt=1e-4, t_end=100.0),
        "sweep": dict(method="rk4", dt=1e-3, discard=200.0, window=2000.0, record_stride=10),
    },
    "chay-keizer": {
        "simulate": dict(method="rk4", dt=0.05, t_end=60000.0),
        "sweep": dict(method="rk4", dt=0.05, discard=100000.0, window=200000.0,
                      record_stride=10),
    },
    "pbm": {
        "simulate": dict(method="rk4", dt=0.05, t_end=3.6e6),
        "sweep": dict(method="rk4", dt=0.05, discard=1.8e6, window=1.8e6, record_stride=20),
    },
}
MAX_ROWS = 200_000


def _canonical_model(name: str) -> str:
    return "chay-keizer" if name == "ck" else name


@dataclass
class Resolved:
    """Everything a command needs after defaults, config file and flags are merged."""

    model: str
    params: dict
    run: dict
    noise: dict
    seed: int
    workers: Optional[int]
    config_text: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def manifest_config(self) -> dict:
        system = build_system(self.model, self.params)
        return {"model": self.model, "params": system.params.as_dict(), "run": self.run,
                "noise": self.noise, "workers": self.workers}


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # let "-2:2:0.1" through as a positional range, like a plain negative number
        self._negative_number_matcher = re.compile(r"^-\d*\.?\d+([eE][-+]?\d+)?(:|$)")

    def error(self, message):
        raise ConfigError(message)


def _global_flags() -> argparse.ArgumentParser:
    g = _Parser(add_help=False)
    g.add_argument("--config", metavar="PATH", help="key = value configuration file")
    g.add_argument("--seed", type=int, help="base random seed (default 0)")
    g.add_argument("--dt", type=float, help="integration step")
    g.add_argument("--t-end", type=float, help="simulated duration")
    g.add_argument("--discard", type=float, help="transient discarded before averaging")
    g.add_argument("--window", type=float, help="averaging window after the transient")
    g.add_argument("--method", choices=("rk4", "forward-euler"))
    g.add_argument("--stride", type=int, dest="record_stride", help="record every Nth step")
    g.add_argument("--workers", type=int, help="sweep worker threads")
    g.add_argument("--out", default=".", metavar="DIR", help="output directory")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one parameter or run key (repeatable)")
    g.add_argument("--noise", metavar="DIST:k=v,...",
                   help="parameter noise, e.g. folded-normal:sigma=0.04,refresh=1000")
    g.add_argument("-v", "--verbose", action="store_true")
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    p = _Parser(prog="homeodyn", description=__doc__.splitlines()[0], parents=[common])
    p.add_argument("--check", action="store_true",
                   help="re-run the command recorded in --out and compare outputs")
    p.add_argument("--version", action="version", version=f"homeodyn {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="integrate one trajectory")
    s.add_argument("model")
    s.add_argument("--x0", help="comma-separated initial state")

    w = sub.add_parser("sweep", parents=[common], help="chair curve over one input")
    w.add_argument("model")
    w.add_argument("input", nargs="?", help="swept parameter name (or config key input)")
    w.add_argument("range", nargs="?",
                   help="lo:hi:step, endpoints inclusive (or config key range)")
    w.add_argument("--observe", default=None, help="comma-separated variables to average")
    w.add_argument("--x0", help="comma-separated initial state")
    w.add_argument("--seat-slope", action="store_true", help="report the seat slope")
    w.add_argument("--interval-delta", type=float, default=None,
                   help="also run the noise-free sweep and report the oscillation "
                        "interval at this threshold")
    w.add_argument("--reference-states", default="quiescent",
                   help="deterministic states that count as the equilibrium branch")
    w.add_argument("--warm-start", action="store_true")
    w.add_argument("--reverse", action="store_true")
    w.add_argument("--effective-inputs", action="store_true",
                   help="read grid values as expected values of folded-normal noise")

    b = sub.add_parser("bifurcate", parents=[common], help="bifurcation data")
    b.add_argument("model", choices=("fhn", "chay-keizer", "ck"))
    b.add_argument("--alpha", default="1:5:0.05", help="alpha range for the Hopf locus")
    b.add_argument("--mu", type=float, default=None)
    b.add_argument("--n-samples", type=int, default=2000)
    b.add_argument("--n-envelope", type=int, default=40)

    r = sub.add_parser("reproduce", parents=[common], help="data for one figure")
    r.add_argument("figure")
    return p


def resolve(args, command: str, model: Optional[str] = None) -> Resolved:
    cfg = RunConfig()
    config_text = None
    if args.config:
        cfg = load_config(args.config)
        config_text = Path(args.config).read_text()
    cfg = cfg.merged(parse_set_flags(args.set))
    if args.noise:
        cfg.noise.update(parse_noise_flag(args.noise))
    model = _canonical_model(model or cfg.run.get("model", ""))
    if model not in MODEL_DEFAULTS:
        raise ConfigError(f"unknown model {model!r}")
    run = dict(MODEL_DEFAULTS[model]["simulate" if command != "sweep" else "sweep"])
    run.update({k: v for k, v in cfg.run.items() if k not in ("model", "seed", "workers")})
    for key in ("dt", "t_end", "discard", "window", "method", "record_stride"):
        val = getattr(args, key, None)
        if val is not None:
            run[key] = val
    seed = args.seed if args.seed is not None else cfg.run.get("seed", 0)
    workers = args.workers if args.workers is not None else cfg.run.get("workers")
    build_system(model, cfg.params)  # rejects unknown parameter names early
    return Resolved(model, cfg.params, run, cfg.noise, int(seed), workers, config_text)


def _integrator(run: dict, t_end: float) -> IntegratorConfig:
    try:
        stride = run.get("record_stride")
        if stride is None:
            stride = max(1, math.ceil(math.floor(t_end / run["dt"]) / MAX_ROWS))
        return IntegratorConfig(run["method"], float(run["dt"]), float(t_end), int(stride))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _parse_floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None


# --------------------------------------------------------------------------
# commands; each returns the list of files written
# --------------------------------------------------------------------------


def do_simulate(res: Resolved, out: Path, x0=None, name: str = "trajectory.csv") -> list:
    system = build_system(res.model, res.params)
    noise = build_noise(res.noise, system=system, seed=res.seed)
    cfg = _integrator(res.run, res.run["t_end"])
    x0 = x0 if x0 is not None else res.run.get("x0", system.default_x0)
    if len(x0) != system.dim:
        raise ConfigError(f"x0 needs {system.dim} values for {res.model}")
    traj = integrate(system, x0, cfg, noise=noise)
    path = out / name
    traj.to_csv(path)
    return [path]


def _sweep_config(res: Resolved, input_name: str, rng: str, noise, **kw) -> SweepConfig:
    values = parse_range(rng)
    run = res.run
    try:
        return SweepConfig(
            input_name=input_name, lo=float(values[0]), hi=float(values[-1]),
            step=float(rng.split(":")[2]),
            transient_discard=float(run["discard"]), averaging_window=float(run["window"]),
            integrator=_integrator(run, run["discard"] + run["window"]),
            noise=noise, base_seed=res.seed, workers=res.workers, record_errors=True,
            x0=run.get("x0"), **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def do_sweep(res: Resolved, out: Path, input_name: str, rng: str, observe=None,
             want_slope=False, delta=None, reference_states=("quiescent",),
             warm_start=False, reverse=False, effective_inputs=False, prefix="chair") -> list:
    system = build_system(res.model, res.params)
    try:
        system.param_index(input_name)
    except KeyError as exc:
        raise ConfigError(str(exc)) from None
    observables = list(observe or [system.slow_variables()[-1]])
    for o in observables:
        if o not in system.labels:
            raise ConfigError(f"{res.model} has no variable {o!r}")
    noise = build_noise(res.noise, default_target=input_name, system=system, seed=res.seed)
    opts = dict(warm_start=warm_start, reverse=reverse, effective_inputs=effective_inputs)
    result = run_sweep(system, observables, _sweep_config(res, input_name, rng, noise, **opts))
    written = []
    curves = {}
    for o in observables:
        curves[o] = result.curve(o)
        path = out / f"{prefix}_{o}.csv"
        curves[o].to_csv(path)
        written.append(path)
    failed = [p for p in result.points if p.error]
    for p in failed:
        log.warning("%s=%g failed: %s", input_name, p.value, p.error)

    summary = {}
    if want_slope:
        for o, c in curves.items():
            try:
                summary[f"seat_slope_{o}"] = seat_slope(c)
            except AnalysisError as exc:
                summary[f"seat_slope_{o}"] = None
                log.warning("seat slope for %s: %s", o, exc)
    if delta is not None:
        if noise is None:
            raise ConfigError("--interval-delta needs --noise")
        det = run_sweep(system, observables,
                        _sweep_config(res, input_name, rng, None, **opts))
        for o in observables:
            dcurve = det.curve(o)
            path = out / f"{prefix}_{o}_deterministic.csv"
            dcurve.to_csv(path)
            written.append(path)
            iv = oscillation_interval(curves[o], dcurve, delta, reference_states)
            summary[f"oscillation_interval_{o}"] = list(iv) if iv else None
            summary[f"oscillation_interval_length_{o}"] = oscillation_interval_length(
                curves[o], dcurve, delta, reference_states)
            if want_slope:
                try:
                    summary[f"seat_slope_{o}_deterministic"] = seat_slope(dcurve)
                except AnalysisError:
                    summary[f"seat_slope_{o}_deterministic"] = None
    if summary:
        summary["seed"] = res.seed
        path = out / f"{prefix}_summary.json"
        path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        written.append(path)
    if failed and len(failed) == len(result.points):
        raise SweepError("every sweep point failed", math.nan)
    return written


def do_bifurcate(res: Resolved, out: Path, alpha="1:5:0.05", mu=None, n_samples=2000,
                 n_envelope=40, name=None) -> list:
    if res.model == "fhn":
        system = build_system("fhn", res.params)
        mu = mu if mu is not None else system.params.mu
        locus = fhn_hopf_locus(parse_range(alpha), mu)
        path = out / (name or "hopf_locus.csv")
        locus.to_csv(path)
        return [path]
    system = build_system("chay-keizer", res.params)
    diagram = ck_bifurcation_diagram(system.params, n_samples=n_samples, n_envelope=n_envelope,
                                     dt=float(res.run.get("dt", 0.05)))
    path = out / (name or "diagram.csv")
    diagram.to_csv(path)
    return [path]


# --------------------------------------------------------------------------
# manifest and --check
# --------------------------------------------------------------------------


def write_manifest(out: Path, argv: list, command: str, res: Optional[Resolved],
                   outputs: list, extra: Optional[dict] = None) -> Path:
    manifest = {
        "tool": "homeodyn",
        "version": __version__,
        "command": command,
        "argv": argv,
        "seed": res.seed if res else None,
        "config": res.manifest_config() if res else None,
        "config_text": res.config_text if res else None,
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, DynamicState):
        return obj.value
    raise TypeError(f"not JSON serialisable: {type(obj)}")


def _replace_flag(argv: list, flag: str, value: str) -> list:
    out, skip = [], False
    for i, a in enumerate(argv):
        if skip:
            skip = False
            continue
        if a == flag:
            skip = True
            continue
        if a.startswith(flag + "="):
            continue
        out.append(a)
    return out + [flag, value]


def check(out: Path) -> int:
    mpath = out / "manifest.json"
    if not mpath.exists():
        raise ConfigError(f"no manifest.json in {out}")
    manifest = json.loads(mpath.read_text())
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        argv = _replace_flag(list(manifest["argv"]), "--out", str(tmp / "run"))
        if manifest.get("config_text") is not None:
            cfg = tmp / "config.txt"
            cfg.write_text(manifest["config_text"])
            argv = _replace_flag(argv, "--config", str(cfg))
        code = main(argv)
        if code != EXIT_OK:
            print(f"check: re-run exited with {code}", file=sys.stderr)
            return EXIT_NUMERIC
        bad = [name for name in manifest["outputs"]
               if not (tmp / "run" / name).exists()
               or not filecmp.cmp(out / name, tmp / "run" / name, shallow=False)]
    for name in bad:
        print(f"check: {name} differs", file=sys.stderr)
    if bad:
        return EXIT_NUMERIC
    print(f"check: {len(manifest['outputs'])} output(s) reproduced exactly")
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _dispatch(args, argv) -> int:
    out = Path(args.out)
    if args.check:
        return check(out)
    if args.command is None:
        raise ConfigError("a command is required (simulate, sweep, bifurcate, reproduce)")
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "reproduce":
        from .recipes import RECIPES, run_recipe

        if args.figure not in RECIPES:
            raise ConfigError(f"unknown figure {args.figure!r}; expected one of "
                              f"{', '.join(RECIPES)}")
        seed = args.seed if args.seed is not None else 0
        outputs, extra = run_recipe(args.figure, out, seed=seed, workers=args.workers)
        write_manifest(out, argv, "reproduce", None, outputs,
                       {"figure": args.figure, "seed": seed, **extra})
        return EXIT_OK

    res = resolve(args, args.command, args.model)
    x0 = _parse_floats(args.x0) if getattr(args, "x0", None) else None
    if x0 is not None:
        res.run["x0"] = x0
    if args.command == "simulate":
        outputs = do_simulate(res, out, x0)
    elif args.command == "sweep":
        observe = args.observe.split(",") if args.observe else None
        if observe is None and "observe" in res.run:
            observe = res.run["observe"].split(",")
        input_name = args.input or res.run.get("input")
        rng = args.range or res.run.get("range")
        if not input_name or not rng:
            raise ConfigError("sweep needs an input name and a lo:hi:step range")
        outputs = do_sweep(res, out, input_name, rng, observe,
                           want_slope=args.seat_slope, delta=args.interval_delta,
                           reference_states=tuple(args.reference_states.split(",")),
                           warm_start=args.warm_start or res.run.get("warm_start", False),
                           reverse=args.reverse,
                           effective_inputs=args.effective_inputs
                           or res.run.get("effective_inputs", False))
    else:
        outputs = do_bifurcate(res, out, args.alpha, args.mu, args.n_samples, args.n_envelope)
    write_manifest(out, argv, args.command, res, outputs)
    for p in outputs:
        print(p)
    return EXIT_OK


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"homeodyn: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args, argv)
    except ConfigError as exc:
        print(f"homeodyn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"homeodyn: numerical failure at t={exc.time:.6g}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (SweepError, AnalysisError, RuntimeError) as exc:
        print(f"homeodyn: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        print(f"homeodyn: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

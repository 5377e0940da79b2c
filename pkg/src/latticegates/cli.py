"""Command-line interface.

Every command writes into ``--out`` (created if needed) and leaves a
``manifest.json`` recording the resolved configuration.  Exit codes: 0 on
success (including optimizations that hit the iteration cap), 1 on numerical
failure, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from scipy import constants

from . import __version__
from .band_model import LatticeSpec, band_scan, dispersion, recoil_energy
from .ensemble_fidelity import EnsembleSpec, TargetGate, fine_grid_fidelity
from .experiments import (
    SweepGrid,
    depth_duration_sweep,
    nyquist_experiment,
    write_nyquist,
    write_sweep,
)
from .grape import OptimizerConfig, optimize
from .io import (
    PulseFormatError,
    load_pulse,
    save_pulse,
    write_band_scan,
    write_fidelity_scan,
    write_json,
    write_trace,
)
from .propagation import physical_from_pulse

log = logging.getLogger("latticegates")

CONFIG_SCHEMA = "latticegates/1"


class UsageError(Exception):
    """Invalid arguments or configuration (exit code 2)."""


def _targets(name: str) -> TargetGate:
    if name == "xpi":
        return TargetGate.x_pi()
    if name == "identity":
        return TargetGate.identity()
    raise UsageError(f"unknown target {name!r} (expected xpi or identity)")


def _load_config(path) -> dict:
    """Read a config file; a run manifest is accepted and its config block reused."""
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    if "command" in data and isinstance(data.get("config"), dict):
        data = data["config"]
    schema = data.pop("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise UsageError(f"unsupported config schema {schema!r}, expected {CONFIG_SCHEMA!r}")
    return data


def _resolve(args: argparse.Namespace, keys, defaults: dict) -> dict:
    # flags > config file > defaults
    conf = dict(defaults)
    file_conf = _load_config(getattr(args, "config", None))
    unknown = set(file_conf) - set(keys)
    if unknown:
        raise UsageError(f"unknown config field(s): {', '.join(sorted(unknown))}")
    conf.update(file_conf)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            conf[key] = value
    return conf


def _seed(value):
    if value is not None:
        return int(value)
    env = os.environ.get("LG_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"LG_SEED must be an integer, got {env!r}") from exc
    return 0


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest(out: Path, command: str, config: dict, seed, inputs, outputs, started):
    write_json(out / "manifest.json", {
        "command": command,
        "config": dict(config, schema=CONFIG_SCHEMA),
        "seed": seed,
        "version": __version__,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": time.perf_counter() - started,
    })


def _durations(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"cannot parse list {text!r}") from exc


def _physical_seconds(args, duration_energy_units: float):
    if not getattr(args, "physical", False):
        return None
    if args.mass is None or args.k_laser is None:
        raise UsageError("--physical needs --mass and --k-laser")
    if args.mass <= 0 or args.k_laser <= 0:
        raise UsageError("--mass and --k-laser must be positive")
    return duration_energy_units * constants.hbar / recoil_energy(args.mass, args.k_laser)


# -- commands ---------------------------------------------------------------

BANDS_KEYS = ("r", "kpoints", "bands", "planewaves")
BANDS_DEFAULTS = {"r": None, "kpoints": 101, "bands": 4, "planewaves": 16}


def cmd_bands(args) -> int:
    started = time.perf_counter()
    conf = _resolve(args, BANDS_KEYS, BANDS_DEFAULTS)
    if conf["r"] is None:
        raise UsageError("lattice depth --r is required (flag or config)")
    if conf["r"] < 0:
        raise UsageError("--r must be >= 0")
    if conf["kpoints"] < 2:
        raise UsageError("--kpoints must be >= 2")
    try:
        spec = LatticeSpec(float(conf["r"]), n_planewaves=int(conf["planewaves"]),
                           n_bands=int(conf["bands"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _outdir(args)
    ks, energies = band_scan(spec, int(conf["kpoints"]))
    csv_path = write_band_scan(out / "bands.csv", ks, energies)
    try:
        report = dispersion(spec).to_dict()
    except ValueError as exc:
        report = {"r": spec.r, "D": None, "gap_center": None, "gap_edge": None,
                  "error": str(exc)}
    json_path = write_json(out / "dispersion.json", report)
    _manifest(out, "bands", conf, None, [], [csv_path, json_path], started)
    print(json.dumps(report))
    return 0


OPT_KEYS = ("r", "duration", "k_samples", "restarts", "slices_per_period", "seed", "init",
            "pulse", "max_iters", "target", "bands", "kpoints", "step_init", "grad_tol",
            "phi_tol", "amplitude_bound", "phi_target", "jobs", "rabi_k")
OPT_DEFAULTS = {"duration": 5.0, "k_samples": 20, "restarts": 11, "slices_per_period": 32,
                "init": "restarts", "pulse": None, "max_iters": 100_000, "target": "xpi",
                "bands": 6, "kpoints": 100, "step_init": 1.0, "grad_tol": 1e-8,
                "phi_tol": 1e-9, "amplitude_bound": "auto", "phi_target": None,
                "jobs": os.cpu_count() or 1, "rabi_k": 0.0}


def _optimizer_config(conf: dict) -> OptimizerConfig:
    bound = conf.get("amplitude_bound", "auto")
    if isinstance(bound, str) and bound not in ("auto", "none"):
        try:
            bound = float(bound)
        except ValueError as exc:
            raise UsageError(f"bad amplitude bound {bound!r}") from exc
    if bound == "none":
        bound = None
    try:
        return OptimizerConfig(
            max_iters=int(conf["max_iters"]), step_init=float(conf["step_init"]),
            grad_tol=float(conf["grad_tol"]), phi_tol=float(conf["phi_tol"]),
            restarts=int(conf["restarts"]), amplitude_bound=bound,
            slices_per_period=int(conf["slices_per_period"]), n_fine=int(conf["kpoints"]),
            seed=int(conf["seed"]), phi_target=conf.get("phi_target"),
            jobs=int(conf["jobs"]), rabi_k=float(conf.get("rabi_k", 0.0)),
        )
    except (TypeError, ValueError, KeyError) as exc:
        raise UsageError(f"invalid optimizer configuration: {exc}") from exc


def cmd_optimize(args) -> int:
    started = time.perf_counter()
    conf = _resolve(args, OPT_KEYS, OPT_DEFAULTS)
    conf["seed"] = _seed(conf.get("seed"))
    if conf.get("r") is None:
        raise UsageError("lattice depth --r is required (flag or config)")
    if conf["kpoints"] < 2:
        raise UsageError("--kpoints must be >= 2")
    try:
        spec = LatticeSpec(float(conf["r"]), n_bands=int(conf["bands"]))
        ens = EnsembleSpec.uniform(int(conf["k_samples"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    config = _optimizer_config(conf)
    target = _targets(conf["target"])
    inputs = []
    init = conf["init"]
    if init == "file":
        if not conf.get("pulse"):
            raise UsageError("--init file needs --pulse PATH")
        try:
            init = load_pulse(conf["pulse"])
        except (OSError, PulseFormatError) as exc:
            raise UsageError(f"cannot load initial pulse: {exc}") from exc
        inputs.append(conf["pulse"])
    elif init not in ("rabi", "random", "restarts"):
        raise UsageError(f"unknown --init {init!r}")
    try:
        result = optimize(config, spec, ens, target, float(conf["duration"]), init=init)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _outdir(args)
    pulse = result.best_pulse
    pulse.meta = dict(pulse.meta, duration_periods=float(conf["duration"]),
                      target=conf["target"])
    report = result.report()
    report.update({"r": spec.r, "duration_periods": float(conf["duration"]),
                   "duration": pulse.duration, "n_slices": pulse.n_slices,
                   "k_samples": [float(k) for k in ens.k_samples]})
    seconds = _physical_seconds(args, pulse.duration)
    if seconds is not None:
        report["duration_seconds"] = seconds
    paths = [save_pulse(out / "pulse.json", pulse), write_json(out / "report.json", report),
             write_trace(out / "trace.csv", result.trace)]
    _manifest(out, "optimize", conf, conf["seed"], inputs, paths, started)
    print(json.dumps({k: report[k] for k in ("phi_coarse", "phi_fine", "termination")}))
    return 0


VERIFY_KEYS = ("pulse", "kpoints", "target", "bands")
VERIFY_DEFAULTS = {"pulse": None, "kpoints": 100, "target": "xpi", "bands": 6}


def cmd_verify(args) -> int:
    started = time.perf_counter()
    conf = _resolve(args, VERIFY_KEYS, VERIFY_DEFAULTS)
    if conf["pulse"] is None:
        raise UsageError("a pulse file is required (argument or config)")
    if conf["kpoints"] < 2:
        raise UsageError("--kpoints must be >= 2")
    try:
        pulse = load_pulse(conf["pulse"])
    except OSError as exc:
        raise UsageError(f"cannot read pulse file: {exc}") from exc
    except PulseFormatError as exc:
        raise UsageError(f"malformed pulse file {conf['pulse']}: {exc}") from exc
    target = _targets(conf["target"])
    try:
        spec = LatticeSpec(pulse.r_ref, n_bands=int(conf["bands"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rep = fine_grid_fidelity(pulse, spec, target, int(conf["kpoints"]))
    out = _outdir(args)
    summary = rep.summary()
    summary.update({"r": spec.r, "kpoints": conf["kpoints"],
                    "mean_gate_error": 1.0 - rep.mean_fidelity,
                    "max_gate_error": float(1.0 - rep.per_k_fidelity.min())})
    paths = [write_fidelity_scan(out / "fidelity_scan.csv", rep.k_samples, rep.per_k_fidelity,
                                 rep.trace_phases),
             write_json(out / "summary.json", summary)]
    conf["pulse"] = str(conf["pulse"])
    _manifest(out, "verify", conf, None, [conf["pulse"]], paths, started)
    print(json.dumps({k: summary[k] for k in ("phi", "fidelity_mean", "fidelity_min")}))
    return 0


NYQ_KEYS = ("r", "k", "durations", "kpoints", "max_iters", "slices_per_period", "seed",
            "bands", "step_init", "amplitude_bound", "phi_target")
NYQ_DEFAULTS = {"r": 2.0, "k": 0.5, "durations": "5,15,30", "kpoints": 100,
                "max_iters": 2000, "slices_per_period": 32, "bands": 6, "step_init": 1.0,
                "amplitude_bound": "auto", "phi_target": None}


def cmd_nyquist(args) -> int:
    started = time.perf_counter()
    conf = _resolve(args, NYQ_KEYS, NYQ_DEFAULTS)
    conf["seed"] = _seed(conf.get("seed"))
    durations = _durations(conf["durations"])
    if not durations or any(d <= 0 for d in durations):
        raise UsageError("--durations must be positive numbers")
    if conf["kpoints"] < 2:
        raise UsageError("--kpoints must be >= 2")
    try:
        spec = LatticeSpec(float(conf["r"]), n_bands=int(conf["bands"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    config = _optimizer_config(dict(OPT_DEFAULTS, **{
        "max_iters": conf["max_iters"], "slices_per_period": conf["slices_per_period"],
        "seed": conf["seed"], "step_init": conf["step_init"], "restarts": 1,
        "amplitude_bound": conf["amplitude_bound"], "phi_target": conf["phi_target"],
        "kpoints": conf["kpoints"]}))
    try:
        run = nyquist_experiment(spec, float(conf["k"]), durations, int(conf["kpoints"]),
                                 config)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _outdir(args)
    summary = run.summary()
    summary["fwhm_strictly_decreasing"] = bool(np.all(np.diff(run.peak_width) < 0))
    paths = [write_nyquist(out / "nyquist.csv", run),
             write_json(out / "nyquist_summary.json", summary)]
    conf["durations"] = durations
    _manifest(out, "nyquist", conf, conf["seed"], [], paths, started)
    print(json.dumps({"durations": summary["durations"], "fwhm": summary["fwhm"]}))
    return 0


SWEEP_KEYS = ("r_values", "durations", "k_samples", "restarts", "max_iters",
              "slices_per_period", "seed", "bands", "kpoints", "step_init",
              "amplitude_bound", "phi_target", "jobs")
SWEEP_DEFAULTS = {"r_values": "12,17,30,110", "durations": "3,5,10", "k_samples": 20,
                  "restarts": 11, "max_iters": 100_000, "slices_per_period": 32,
                  "bands": 6, "kpoints": 100, "step_init": 1.0, "amplitude_bound": "auto",
                  "phi_target": None, "jobs": os.cpu_count() or 1}


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    conf = _resolve(args, SWEEP_KEYS, SWEEP_DEFAULTS)
    conf["seed"] = _seed(conf.get("seed"))
    r_values = _durations(conf["r_values"])
    durations = _durations(conf["durations"])
    config = _optimizer_config(dict(OPT_DEFAULTS, **{
        k: conf[k] for k in ("restarts", "max_iters", "slices_per_period", "seed", "kpoints",
                             "step_init", "amplitude_bound", "phi_target")}, jobs=1))
    try:
        grid = SweepGrid(r_values, durations, config, int(conf["k_samples"]),
                         int(conf["bands"]))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rows = depth_duration_sweep(grid, jobs=int(conf["jobs"]))
    out = _outdir(args)
    path = write_sweep(out / "sweep.csv", rows)
    conf["r_values"], conf["durations"] = r_values, durations
    _manifest(out, "sweep", conf, conf["seed"], [], [path], started)
    print(f"{len(rows)} cells written to {path}")
    return 0


def cmd_pulse_info(args) -> int:
    try:
        pulse = load_pulse(args.pulse)
    except OSError as exc:
        raise UsageError(f"cannot read pulse file: {exc}") from exc
    except PulseFormatError as exc:
        raise UsageError(f"malformed pulse file {args.pulse}: {exc}") from exc
    try:
        phys = physical_from_pulse(pulse)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(f"# r={pulse.r_ref} dt={pulse.dt} n_slices={pulse.n_slices} "
          f"duration={pulse.duration}")
    seconds = _physical_seconds(args, pulse.duration)
    if seconds is not None:
        print(f"# duration_seconds={seconds:.12g}")
    print("slice,alpha,beta,eta,phi")
    for j in range(pulse.n_slices):
        print(f"{j},{pulse.alpha[j]:.12g},{pulse.beta[j]:.12g},"
              f"{phys.eta[j]:.12g},{phys.phi[j]:.12g}")
    return 0


# -- parser -----------------------------------------------------------------

def _add_common(p, out_default):
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_physical(p):
    p.add_argument("--physical", action="store_true",
                   help="also report durations in seconds (needs --mass, --k-laser)")
    p.add_argument("--mass", type=float, help="atomic mass in kg")
    p.add_argument("--k-laser", type=float, help="lattice laser wave number in 1/m")


def _add_optimizer_flags(p):
    p.add_argument("--max-iters", type=int)
    p.add_argument("--slices-per-period", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--bands", type=int)
    p.add_argument("--kpoints", type=int, help="fine verification grid size")
    p.add_argument("--step-init", type=float)
    p.add_argument("--amplitude-bound", help="number, 'auto' (r/2) or 'none'")
    p.add_argument("--phi-target", type=float, help="stop once the ensemble fidelity reaches this")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latticegates",
                                     description="Ensemble gate optimization in a 1-D optical lattice")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bands", help="band structure and dispersion")
    p.add_argument("--config")
    p.add_argument("--r", type=float)
    p.add_argument("--kpoints", type=int)
    p.add_argument("--bands", type=int)
    p.add_argument("--planewaves", type=int)
    _add_common(p, "out/bands")
    p.set_defaults(func=cmd_bands)

    p = sub.add_parser("optimize", help="optimize an ensemble X_pi pulse")
    p.add_argument("--config")
    p.add_argument("--r", type=float)
    p.add_argument("--duration", type=float, help="gate time in free-oscillation periods")
    p.add_argument("--k-samples", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--init", choices=["rabi", "random", "file", "restarts"])
    p.add_argument("--pulse", help="initial pulse for --init file")
    p.add_argument("--target", choices=["xpi", "identity"])
    p.add_argument("--grad-tol", type=float)
    p.add_argument("--phi-tol", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--rabi-k", type=float, help="quasimomentum the Rabi guess is tuned to")
    _add_optimizer_flags(p)
    _add_physical(p)
    _add_common(p, "out/optimize")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("verify", help="fine-grid fidelity scan of a pulse file")
    p.add_argument("pulse", nargs="?")
    p.add_argument("--config")
    p.add_argument("--kpoints", type=int)
    p.add_argument("--target", choices=["xpi", "identity"])
    p.add_argument("--bands", type=int)
    _add_common(p, "out/verify")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("nyquist", help="single-k optimization and response width")
    p.add_argument("--config")
    p.add_argument("--r", type=float)
    p.add_argument("--k", type=float)
    p.add_argument("--durations", help="comma-separated, in free-oscillation periods")
    _add_optimizer_flags(p)
    _add_common(p, "out/nyquist")
    p.set_defaults(func=cmd_nyquist)

    p = sub.add_parser("sweep", help="best fidelity over depths and durations")
    p.add_argument("--config")
    p.add_argument("--r-values")
    p.add_argument("--durations")
    p.add_argument("--k-samples", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--jobs", type=int)
    _add_optimizer_flags(p)
    _add_common(p, "out/sweep")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pulse-info", help="print laser intensity ratio and phase per slice")
    p.add_argument("pulse")
    _add_physical(p)
    p.set_defaults(func=cmd_pulse_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

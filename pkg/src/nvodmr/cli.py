"""``nvodmr`` command-line interface.

Every subcommand prints one JSON report on stdout; diagnostics go to
stderr. Exit status: 0 success, 2 invalid input or config, 3 fit
non-convergence, 4 inconsistent magnetometry.
"""
from __future__ import annotations

import argparse
import json
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import fileio
from .fileio import ConfigError, TraceFileError
from .fitting import DetectConfig, ModelSelectionError, detect_dips, estimate_baseline, \
    fit_lorentzians, seed_dips, select_model
from .magnetometry import InconsistentResonanceError, classify_pattern, forward_pairs, \
    solve_b_vector
from .scan import (PSFConfig, channel, composite, loglog_slope, odmr_at_point, power_series,
                   scan_tile, stitch, tile_grid)
from .signal_chain import simulate_sweep, synth_trace
from .spin import MagneticField, axis_projections

log = logging.getLogger("nvodmr")

EXIT_OK, EXIT_INPUT, EXIT_FIT, EXIT_MAGNETOMETRY = 0, 2, 3, 4


class FitFailure(RuntimeError):
    pass


class MagnetometryFailure(RuntimeError):
    pass


# -- helpers ----------------------------------------------------------------

def _floats(text, n=None, what="value list"):
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"could not parse {what} {text!r}") from None
    if n is not None and len(vals) != n:
        raise ConfigError(f"{what} needs {n} comma-separated numbers, got {len(vals)}")
    return vals


_UNITS = {"mt": 1.0, "ut": 1e-3, "t": 1e3, "g": 0.1, "": 1.0}


def parse_field_magnitude(text) -> float:
    """``'2mT'``, ``'20 G'``, ``'500uT'`` or a bare number (mT) to mT."""
    m = re.fullmatch(r"\s*([-+0-9.eE]+)\s*([a-zA-Zµ]*)\s*", text)
    unit = m.group(2).lower().replace("µ", "u") if m else None
    if m is None or unit not in _UNITS:
        raise ConfigError(f"could not parse field magnitude {text!r}")
    try:
        return float(m.group(1)) * _UNITS[unit]
    except ValueError:
        raise ConfigError(f"could not parse field magnitude {text!r}") from None


def _out_path(args, default_name):
    if args.out:
        path = Path(args.out)
    else:
        path = Path(args.out_dir) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _dip_json(d):
    return {"f0_mhz": d.f0, "fwhm_mhz": d.fwhm, "contrast": d.contrast}


def _fit_json(res):
    f0 = [d.f0 for d in res.dips]
    out = {
        "n_dips": len(res.dips),
        "baseline": res.baseline,
        "dips": [_dip_json(d) for d in res.dips],
        "stderr": [float(v) for v in res.stderr],
        "total_contrast": float(sum(d.contrast for d in res.dips)),
        "mean_fwhm_mhz": float(np.mean([d.fwhm for d in res.dips])),
        "rms_residual": res.rms_residual,
        "converged": bool(res.converged),
        "iterations": res.iterations,
        "bic": res.bic,
        "message": res.message,
    }
    if len(f0) >= 2:
        out["separation_mhz"] = float(f0[-1] - f0[0])
    return out


def _phantom(cfg, args):
    source = args.phantom or cfg.get("phantom") or fileio.MICRODIAMOND_PHANTOM
    base = Path(args.config).parent if args.config else None
    return fileio.load_phantom(source, base)


def _psf(cfg):
    p = cfg["psf"]
    return PSFConfig(p["fwhm_lateral_um"], p["fwhm_axial_um"])


def _point(cfg, args):
    return _floats(args.point, 3, "point") if args.point else list(cfg["scan"]["point_um"])


def _detect_cfg(cfg):
    an = cfg["analysis"]
    return DetectConfig(an["smooth_window"], an["min_prominence"], an["max_dips"])


# -- subcommands --------------------------------------------------------------

def cmd_synth(cfg, args):
    dips = fileio.config_dips(cfg)
    noise = cfg["noise"]
    trace = synth_trace(fileio.sweep_config(cfg), dips, 1.0, noise["sigma"], noise["seed"])
    path = _out_path(args, "spectrum.csv")
    fileio.write_trace(path, trace)
    return {"n_points": len(trace), "dips": [_dip_json(d) for d in dips],
            "noise_sigma": noise["sigma"], "seed": noise["seed"], "out": str(path)}


def cmd_sweep(cfg, args):
    dips = fileio.config_dips(cfg)
    noise = cfg["noise"]
    sweep = fileio.sweep_config(cfg)
    trace = simulate_sweep(sweep, dips, fileio.lockin_config(cfg), cfg["lockin"]["mode"],
                           noise["seed"], 1.0, noise["sigma"])
    path = _out_path(args, "sweep.csv")
    fileio.write_trace(path, trace)
    return {"n_points": len(trace), "mode": cfg["lockin"]["mode"],
            "sweep_rate_mhz_per_s": sweep.rate, "dips": [_dip_json(d) for d in dips],
            "noise_sigma": noise["sigma"], "seed": noise["seed"], "out": str(path)}


def _fit_trace(trace, cfg, n_dips):
    if n_dips is not None:
        init = seed_dips(detect_dips(trace, _detect_cfg(cfg)), n_dips, trace)
        res = fit_lorentzians(trace, init, estimate_baseline(trace.signal))
        if not res.converged:
            raise FitFailure(f"{n_dips}-dip fit did not converge: {res.message}")
        return res
    try:
        return select_model(trace, cfg["analysis"]["candidates"], _detect_cfg(cfg))
    except ModelSelectionError as exc:
        raise FitFailure(f"{exc}: {json.dumps(exc.diagnostics, sort_keys=True)}") from None


def cmd_fit(cfg, args):
    trace = fileio.read_trace(args.input)
    n = args.dips if args.dips is not None else cfg["analysis"].get("dips")
    res = _fit_trace(trace, cfg, n)
    report = {"input": str(args.input), "n_points": len(trace), "fit": _fit_json(res)}
    if args.out:
        path = _out_path(args, "fit.csv")
        fileio.write_trace(path, type(trace)(trace.frequencies, res.model(trace.frequencies)))
        report["out"] = str(path)
    return report


def _field_from_args(cfg, args) -> MagneticField:
    b = fileio.field_vector(cfg)
    if args.b:
        b = MagneticField(*_floats(args.b, 3, "--b"))
    if args.scale:
        mag = parse_field_magnitude(args.scale)
        if b.magnitude == 0:
            raise ConfigError("--scale needs a non-zero field direction")
        b = b.scaled(mag / b.magnitude)
    return b


def cmd_pattern(cfg, args):
    b = _field_from_args(cfg, args)
    params = fileio.hamiltonian_params(cfg)
    pc = classify_pattern(b, params, cfg["analysis"]["merge_tol_mhz"])
    return {"field_mt": [float(v) for v in b.vector], "count": pc.count,
            "dips": [{"f_mhz": f, "multiplicity": m} for f, m in pc.dips],
            "projection_groups": [list(g) for g in pc.groups],
            "projections_mt": [float(v) for v in axis_projections(b)]}


def nest_pairs(freqs):
    """Pair eight dip frequencies outermost-first around the spectrum centre."""
    f = sorted(freqs)
    if len(f) != 8:
        raise ConfigError(f"vector inversion needs 8 dip frequencies, got {len(f)}")
    return [(f[i], f[7 - i]) for i in range(4)]


def cmd_invert(cfg, args):
    params = fileio.hamiltonian_params(cfg)
    report = {}
    if args.freqs:
        pairs = nest_pairs(_floats(args.freqs, 8, "--freqs"))
        report["source"] = "frequencies"
    elif args.input:
        trace = fileio.read_trace(args.input)
        res = _fit_trace(trace, cfg, 8)
        pairs = nest_pairs([d.f0 for d in res.dips])
        report["source"] = str(args.input)
        report["fit"] = _fit_json(res)
    else:
        b = _field_from_args(cfg, args)
        pairs = [(p.f_minus, p.f_plus) for p in forward_pairs(params, b)]
        report["source"] = "forward"
        report["true_field_mt"] = [float(v) for v in b.vector]
    report["pairs_mhz"] = [[float(a), float(c)] for a, c in pairs]
    try:
        est = solve_b_vector(pairs, params, cfg["analysis"]["inconsistency_mhz"])
    except InconsistentResonanceError as exc:
        raise MagnetometryFailure(str(exc)) from None
    report.update({
        "field_mt": [float(v) for v in est.b.vector],
        "magnitude_mt": est.b.magnitude,
        "residual_rms_mhz": est.residual_rms,
        "assignment": {str(k): v for k, v in sorted(est.assignment.items())},
        "degenerate_flags": list(est.degenerate_flags),
        "consistent": bool(est.consistent),
    })
    if not est.consistent:
        report["error"] = "resonances are inconsistent with any field"
        print(json.dumps(report, indent=2, sort_keys=True))
        raise MagnetometryFailure(
            f"residual {est.residual_rms:.4g} MHz exceeds {cfg['analysis']['inconsistency_mhz']} MHz")
    return report


def cmd_scan(cfg, args):
    ph = _phantom(cfg, args)
    psf = _psf(cfg)
    t, sc = cfg["tile"], cfg["scan"]
    tiles = tile_grid(t["tiles_x"], t["tiles_y"], t["fov_um"], t["pixels"], t["overlap"],
                      t["focus_z_um"], (t["stage_x_um"], t["stage_y_um"]))
    seed = cfg["noise"]["seed"]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, files, stats = {}, {}, {}
    for ci, name in enumerate(sc["channels"]):
        ch = channel(name)
        imgs = [scan_tile(ph, ch, psf, tile, sc["power_mw"], sc["noise_sigma"],
                          seed + 1000 * ci + k) for k, tile in enumerate(tiles)]
        mosaic = stitch(imgs)
        images[ch.name] = mosaic.image
        path = out_dir / f"scan_{ch.name}.pgm"
        fileio.write_pgm(path, mosaic.image)
        files[ch.name] = str(path)
        stats[ch.name] = {"max": float(mosaic.image.max()), "mean": float(mosaic.image.mean())}
    comp = Path(args.out) if args.out else out_dir / "composite.ppm"
    comp.parent.mkdir(parents=True, exist_ok=True)
    fileio.write_ppm(comp, composite(images))
    shape = next(iter(images.values())).shape
    return {"tiles": len(tiles), "mosaic_shape": list(shape), "pitch_um": tiles[0].pitch,
            "channels": stats, "files": files, "composite": str(comp)}


def cmd_odmr_point(cfg, args):
    ph = _phantom(cfg, args)
    point = _point(cfg, args)
    noise = cfg["noise"]
    trace = odmr_at_point(ph, point, fileio.sweep_config(cfg), fileio.lockin_config(cfg),
                          cfg["scan"]["power_mw"], _psf(cfg), cfg["lockin"]["mode"],
                          noise["sigma"], noise["seed"])
    path = _out_path(args, "odmr_point.csv")
    fileio.write_trace(path, trace)
    base = estimate_baseline(trace.signal)
    eff = trace.meta["effective_dips"]
    return {"point_um": point, "signal": trace.meta["signal"],
            "effective_dips": [{"f0_mhz": f, "fwhm_mhz": w, "contrast": c} for f, w, c in eff],
            "observed_contrast": float(1.0 - trace.signal.min() / base), "out": str(path)}


def cmd_power_series(cfg, args):
    ph = _phantom(cfg, args)
    point = _point(cfg, args)
    sc = cfg["scan"]
    powers = np.asarray(sc["powers_mw"], dtype=float)
    seed = cfg["noise"]["seed"]
    columns, slopes = {}, {}
    for ci, name in enumerate(sc["channels"]):
        sig = power_series(ph, point, name, powers, _psf(cfg), sc["noise_sigma"], seed + ci)
        columns[name] = sig
        if np.all(sig > 0):
            slopes[name] = loglog_slope(powers, sig)
        else:
            slopes[name] = None
            log.warning("channel %s has no signal at %s; slope undefined", name, point)
    path = _out_path(args, "power_series.csv")
    lines = [",".join(["power_mw"] + list(columns))]
    for i, p in enumerate(powers):
        lines.append(",".join([repr(float(p))] + [repr(float(columns[c][i])) for c in columns]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    return {"point_um": point, "powers_mw": [float(p) for p in powers],
            "slopes": slopes, "out": str(path)}


COMMANDS = {
    "synth-spectrum": cmd_synth,
    "sweep": cmd_sweep,
    "fit": cmd_fit,
    "pattern": cmd_pattern,
    "invert": cmd_invert,
    "scan": cmd_scan,
    "odmr-point": cmd_odmr_point,
    "power-series": cmd_power_series,
}


# -- argument parsing ---------------------------------------------------------

def override_keys():
    """(section, key, type, choices) for every scalar config entry."""
    out = []
    for section, sch in fileio.CONFIG_SCHEMA["properties"].items():
        for key, prop in sch.get("properties", {}).items() if isinstance(sch, dict) else ():
            if "enum" in prop and all(isinstance(v, str) for v in prop["enum"]):
                out.append((section, key, str, prop["enum"]))
            elif prop.get("type") == "integer":
                out.append((section, key, int, None))
            elif prop.get("type") == "number":
                out.append((section, key, float, None))
    return out


def _common_parser():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common options")
    g.add_argument("--config", help="experiment config (JSON)")
    g.add_argument("--seed", type=int, help="noise seed (overrides noise.seed)")
    g.add_argument("--out", help="output file")
    g.add_argument("--out-dir", default=".", help="directory for default-named outputs")
    g.add_argument("-v", "--verbose", action="store_true", help="debug diagnostics on stderr")
    o = p.add_argument_group("config overrides")
    for section, key, typ, choices in override_keys():
        flag = f"--{section}-{key}".replace("_", "-")
        o.add_argument(flag, dest=f"ov__{section}__{key}", type=typ, choices=choices,
                       metavar=None if choices else typ.__name__.upper())
    return p


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="nvodmr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth-spectrum", aliases=["synth"], parents=[common],
                   help="static multi-Lorentzian trace")
    sub.add_parser("sweep", parents=[common], help="lock-in readout of a MW sweep")
    p = sub.add_parser("fit", parents=[common], help="fit Lorentzian dips to a trace")
    p.add_argument("input")
    p.add_argument("--dips", type=int, help="fixed dip count (default: BIC model selection)")
    p = sub.add_parser("pattern", parents=[common], help="Zeeman dip count for a field")
    p.add_argument("--b", help="field direction or vector bx,by,bz (mT)")
    p.add_argument("--scale", help="field magnitude, e.g. 2mT")
    p = sub.add_parser("invert", parents=[common], help="recover the field vector")
    p.add_argument("input", nargs="?", help="trace with eight resolved dips")
    p.add_argument("--freqs", help="eight dip frequencies (MHz), comma separated")
    p.add_argument("--b", help="forward-model field for a self-test")
    p.add_argument("--scale", help="field magnitude, e.g. 2mT")
    for name, hlp in (("scan", "raster-scan a phantom"),
                      ("odmr-point", "ODMR trace with the focus parked"),
                      ("power-series", "signal versus excitation power")):
        p = sub.add_parser(name, parents=[common], help=hlp)
        p.add_argument("--phantom", help="phantom JSON file")
        if name != "scan":
            p.add_argument("--point", help="focus position x,y,z (um)")
    return parser


def _overrides(args):
    ov = {}
    for dest, val in vars(args).items():
        if dest.startswith("ov__") and val is not None:
            _, section, key = dest.split("__", 2)
            ov[(section, key)] = val
    if args.seed is not None:
        ov[("noise", "seed")] = args.seed
    return ov


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="nvodmr: %(message)s", stream=sys.stderr)
    command = {"synth": "synth-spectrum"}.get(args.command, args.command)
    t0 = time.perf_counter()
    try:
        cfg = fileio.load_config(args.config, _overrides(args))
        report = COMMANDS[command](cfg, args)
    except FitFailure as exc:
        print(f"nvodmr {command}: {exc}", file=sys.stderr)
        return EXIT_FIT
    except MagnetometryFailure as exc:
        print(f"nvodmr {command}: {exc}", file=sys.stderr)
        return EXIT_MAGNETOMETRY
    except (ConfigError, TraceFileError, ValueError, OSError) as exc:
        print(f"nvodmr {command}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    report = {"command": command, **report}
    print(json.dumps(report, indent=2, sort_keys=True))
    log.info("%s finished in %.3f s", command, time.perf_counter() - t0)
    return EXIT_OK


def run_pipeline(command, config=None, *args) -> int:
    """Run one subcommand programmatically; returns the exit status."""
    argv = [command] + (["--config", str(config)] if config is not None else []) + list(args)
    return run(argv)


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

"""Trace CSV, portable-anymap images, experiment configs and phantom files."""
from __future__ import annotations

import copy
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .signal_chain import DipSpec, LockinConfig, SpectrumTrace, SweepConfig
from .spin import HamiltonianParams, MagneticField

TRACE_HEADER = "frequency_mhz,signal"


class TraceFileError(ValueError):
    pass


class TraceFormatError(TraceFileError):
    pass


class TraceParseError(TraceFileError):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TraceValidationError(TraceFileError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ConfigError(ValueError):
    pass


# -- traces -----------------------------------------------------------------

def write_trace(path, trace: SpectrumTrace) -> None:
    lines = [TRACE_HEADER]
    lines += [f"{float(f)!r},{float(s)!r}" for f, s in zip(trace.frequencies, trace.signal)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_trace(path) -> SpectrumTrace:
    text = Path(path).read_text(encoding="utf-8")
    rows = text.splitlines()
    if not rows or rows[0].strip() != TRACE_HEADER:
        raise TraceFormatError(f"{path}: missing header {TRACE_HEADER!r}")
    freqs, sig = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row.strip():
            continue
        cells = row.split(",")
        if len(cells) != 2:
            raise TraceParseError(f"expected 2 columns, got {len(cells)}", lineno)
        try:
            f, s = float(cells[0]), float(cells[1])
        except ValueError:
            raise TraceParseError(f"non-numeric cell in {row!r}", lineno) from None
        if not (math.isfinite(f) and math.isfinite(s)):
            raise TraceParseError(f"non-finite value in {row!r}", lineno)
        if freqs and f <= freqs[-1]:
            raise TraceValidationError("frequencies are not strictly increasing", lineno)
        freqs.append(f)
        sig.append(s)
    if not freqs:
        raise TraceValidationError(f"{path}: trace has no data rows")
    return SpectrumTrace(np.array(freqs), np.array(sig))


# -- images -----------------------------------------------------------------

def _wrap(tokens, per_line):
    return "\n".join(" ".join(tokens[i:i + per_line]) for i in range(0, len(tokens), per_line))


def write_pgm(path, image, maxval: int = 65535) -> None:
    """ASCII graymap (P2), scaled so the image maximum maps to ``maxval``."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError("graymap needs a 2-D image")
    peak = float(img.max()) if img.size else 0.0
    scaled = np.zeros(img.shape, dtype=np.int64) if peak <= 0 else \
        np.rint(np.clip(img, 0.0, None) / peak * maxval).astype(np.int64)
    h, w = img.shape
    body = "\n".join(_wrap([f"{v:5d}" for v in row], 11) for row in scaled)
    Path(path).write_text(f"P2\n{w} {h}\n{maxval}\n{body}\n", encoding="ascii", newline="\n")


def write_ppm(path, rgb, maxval: int = 255) -> None:
    """ASCII pixmap (P3) from an RGB image with values in [0, 1]."""
    arr = np.asarray(rgb, dtype=float)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError("pixmap needs an (h, w, 3) image")
    q = np.rint(np.clip(arr, 0.0, 1.0) * maxval).astype(np.int64)
    h, w, _ = q.shape
    body = "\n".join(_wrap([f"{v:3d}" for v in row.ravel()], 15) for row in q)
    Path(path).write_text(f"P3\n{w} {h}\n{maxval}\n{body}\n", encoding="ascii", newline="\n")


def read_pnm(path):
    """Parse an ASCII P2/P3 file; returns ``(magic, maxval, array)``."""
    tokens = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        tokens += line.split("#", 1)[0].split()
    if len(tokens) < 4 or tokens[0] not in ("P2", "P3"):
        raise ValueError("not an ASCII P2/P3 file")
    magic = tokens[0]
    w, h, maxval = (int(t) for t in tokens[1:4])
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise ValueError("invalid portable-anymap header")
    depth = 3 if magic == "P3" else 1
    values = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if values.size != w * h * depth:
        raise ValueError(f"payload has {values.size} samples, header implies {w * h * depth}")
    if values.min(initial=0) < 0 or values.max(initial=0) > maxval:
        raise ValueError("sample outside [0, maxval]")
    shape = (h, w, 3) if depth == 3 else (h, w)
    return magic, maxval, values.reshape(shape)


# -- experiment config --------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}


def _section(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


_DIP = _section({"f0_mhz": _NUM, "fwhm_mhz": _POS,
                 "contrast": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
                required=("f0_mhz", "fwhm_mhz", "contrast"))
_VEC3 = {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3}
_POSVEC3 = {"type": "array", "items": _POS, "minItems": 3, "maxItems": 3}
_CHANNEL = {"enum": ["2PEF", "SHG", "THG", "3PEF"]}

_SHAPES = [
    _section({"kind": {"const": "all"}}, ("kind",)),
    _section({"kind": {"const": "box"}, "lo_um": _VEC3, "hi_um": _VEC3}, ("kind", "lo_um", "hi_um")),
    _section({"kind": {"const": "sphere"}, "center_um": _VEC3, "radius_um": _POS},
             ("kind", "center_um", "radius_um")),
    _section({"kind": {"const": "point"}, "position_um": _VEC3}, ("kind", "position_um")),
]

PHANTOM_SCHEMA = _section({
    "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3},
    "voxel_size_um": _POSVEC3,
    "densities": {"type": "array", "items": _section(
        {"channel": _CHANNEL, "shape": {"oneOf": _SHAPES}, "density": _NONNEG},
        ("channel", "shape", "density"))},
    "odmr_regions": {"type": "array", "items": _section(
        {"shape": {"oneOf": _SHAPES}, "dips": {"type": "array", "items": _DIP, "minItems": 1}},
        ("shape", "dips"))},
}, required=("dims", "voxel_size_um"))

CONFIG_SCHEMA = _section({
    "hamiltonian": _section({"d_mhz": _POS, "e_mhz": _NONNEG, "gamma_mhz_per_mt": _POS}),
    "field": _section({"bx_mt": _NUM, "by_mt": _NUM, "bz_mt": _NUM}),
    "sweep": _section({"f_start_mhz": _NUM, "f_stop_mhz": _NUM,
                       "n_points": {"type": "integer", "minimum": 2}, "duration_s": _POS}),
    "lockin": _section({"order": {"type": "integer", "minimum": 1}, "tau_s": _POS,
                        "mode": {"enum": ["baseband", "carrier"]},
                        "ref_freq_hz": _POS, "sample_rate_hz": _POS}),
    "dips": {"type": "array", "items": _DIP},
    "noise": _section({"sigma": _NONNEG, "seed": {"type": "integer", "minimum": 0}}),
    "lineshape": _section({"fwhm_mhz": _POS,
                           "total_contrast": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}}),
    "analysis": _section({"dips": {"type": "integer", "minimum": 1},
                          "candidates": {"type": "array", "minItems": 1,
                                         "items": {"type": "integer", "minimum": 1}},
                          "merge_tol_mhz": _POS, "inconsistency_mhz": _POS,
                          "smooth_window": {"type": "integer", "minimum": 1},
                          "min_prominence": {"type": "number", "exclusiveMinimum": 0,
                                             "exclusiveMaximum": 1},
                          "max_dips": {"type": "integer", "minimum": 1}}),
    "psf": _section({"fwhm_lateral_um": _POS, "fwhm_axial_um": _POS}),
    "tile": _section({"fov_um": _POS, "pixels": {"type": "integer", "minimum": 1},
                      "focus_z_um": _NUM, "stage_x_um": _NUM, "stage_y_um": _NUM,
                      "overlap": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
                      "tiles_x": {"type": "integer", "minimum": 1},
                      "tiles_y": {"type": "integer", "minimum": 1}}),
    "scan": _section({"channels": {"type": "array", "items": _CHANNEL, "minItems": 1},
                      "power_mw": _POS,
                      "powers_mw": {"type": "array", "items": _POS, "minItems": 3},
                      "point_um": _VEC3, "noise_sigma": _NONNEG}),
    "phantom": {"oneOf": [{"type": "string"}, PHANTOM_SCHEMA]},
})

DEFAULTS = {
    "hamiltonian": {"d_mhz": 2870.0, "e_mhz": 2.82, "gamma_mhz_per_mt": 28.024},
    "field": {"bx_mt": 0.0, "by_mt": 0.0, "bz_mt": 0.0},
    "sweep": {"f_start_mhz": 2750.0, "f_stop_mhz": 2960.0, "n_points": 512, "duration_s": 40.0},
    "lockin": {"order": 5, "tau_s": 0.03, "mode": "baseband", "ref_freq_hz": 7.01e6,
               "sample_rate_hz": 1e4},
    "noise": {"sigma": 0.0, "seed": 0},
    "lineshape": {"fwhm_mhz": 26.87, "total_contrast": 0.07},
    "analysis": {"candidates": [1, 2, 3, 4, 5, 6, 7, 8], "merge_tol_mhz": 1.0,
                 "inconsistency_mhz": 1.0, "smooth_window": 5, "min_prominence": 0.005,
                 "max_dips": 8},
    "psf": {"fwhm_lateral_um": 0.57, "fwhm_axial_um": 3.95},
    "tile": {"fov_um": 317.0, "pixels": 512, "focus_z_um": 5.0, "stage_x_um": 0.0,
             "stage_y_um": 0.0, "overlap": 0.1, "tiles_x": 1, "tiles_y": 1},
    "scan": {"channels": ["2PEF", "3PEF", "SHG", "THG"], "power_mw": 4.2,
             "powers_mw": [1.0, 2.0, 3.0, 4.0, 5.0], "point_um": [28.0, 12.0, 5.0],
             "noise_sigma": 0.0},
}


def validate_config(doc) -> None:
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config {where}: {exc.message}") from None


def merge_defaults(doc) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    for key, val in (doc or {}).items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(val)
        else:
            cfg[key] = copy.deepcopy(val)
    return cfg


def check_config(cfg) -> None:
    """Cross-field rules the schema cannot express; raises ConfigError."""
    validate_config(cfg)
    sw = cfg["sweep"]
    if not sw["f_start_mhz"] < sw["f_stop_mhz"]:
        raise ConfigError("sweep: f_start_mhz must be below f_stop_mhz")
    lk = cfg["lockin"]
    if lk["mode"] == "carrier" and not lk["sample_rate_hz"] > 2 * lk["ref_freq_hz"]:
        raise ConfigError("lockin: carrier mode needs sample_rate_hz > 2 * ref_freq_hz")
    an = cfg["analysis"]
    if an["smooth_window"] % 2 == 0:
        raise ConfigError("analysis: smooth_window must be odd")


def load_config(path=None, overrides=None) -> dict:
    """Read, default-fill and validate an experiment config."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        validate_config(doc)
    cfg = merge_defaults(doc)
    for (section, key), value in (overrides or {}).items():
        cfg.setdefault(section, {})[key] = value
    check_config(cfg)
    return cfg


def hamiltonian_params(cfg) -> HamiltonianParams:
    h = cfg["hamiltonian"]
    return HamiltonianParams(h["d_mhz"], h["e_mhz"], h["gamma_mhz_per_mt"])


def field_vector(cfg) -> MagneticField:
    f = cfg["field"]
    return MagneticField(f["bx_mt"], f["by_mt"], f["bz_mt"])


def sweep_config(cfg) -> SweepConfig:
    s = cfg["sweep"]
    return SweepConfig(s["f_start_mhz"], s["f_stop_mhz"], s["n_points"], s["duration_s"])


def lockin_config(cfg) -> LockinConfig:
    lk = cfg["lockin"]
    return LockinConfig(lk["ref_freq_hz"], lk["order"], lk["tau_s"], lk["sample_rate_hz"])


def dip_specs(items) -> list[DipSpec]:
    return [DipSpec(d["f0_mhz"], d["fwhm_mhz"], d["contrast"]) for d in items]


def config_dips(cfg) -> list[DipSpec]:
    """Explicit ``dips`` if given, else one dip per merged Hamiltonian transition."""
    if cfg.get("dips"):
        return dip_specs(cfg["dips"])
    from .spin import zeeman_pattern

    pattern = zeeman_pattern(hamiltonian_params(cfg), field_vector(cfg),
                             cfg["analysis"]["merge_tol_mhz"])
    ls = cfg["lineshape"]
    return [DipSpec(f, ls["fwhm_mhz"], ls["total_contrast"] * m / 8.0) for f, m in pattern.dips]


# -- phantoms ---------------------------------------------------------------

def _mask(phantom, shape):
    kind = shape["kind"]
    if kind == "all":
        return np.ones(phantom.dims, dtype=bool)
    if kind == "box":
        return phantom.box_mask(shape["lo_um"], shape["hi_um"])
    if kind == "sphere":
        return phantom.sphere_mask(shape["center_um"], shape["radius_um"])
    mask = np.zeros(phantom.dims, dtype=bool)
    idx = tuple(int(np.floor(p / v)) for p, v in zip(shape["position_um"], phantom.voxel_size))
    if not all(0 <= i < n for i, n in zip(idx, phantom.dims)):
        raise ConfigError(f"phantom point {shape['position_um']} lies outside the volume")
    mask[idx] = True
    return mask


def phantom_from_dict(doc):
    from .scan import Phantom

    try:
        jsonschema.validate(doc, PHANTOM_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"phantom {where}: {exc.message}") from None
    ph = Phantom(tuple(doc["dims"]), tuple(doc["voxel_size_um"]))
    for item in doc.get("densities", []):
        ph.add_density(item["channel"], _mask(ph, item["shape"]), item["density"])
    for reg in doc.get("odmr_regions", []):
        try:
            ph.add_odmr_region(_mask(ph, reg["shape"]), dip_specs(reg["dips"]))
        except ValueError as exc:
            raise ConfigError(f"phantom: {exc}") from None
    return ph


def load_phantom(source, base_dir=None):
    """Phantom from an inline dict or a JSON file path."""
    if isinstance(source, dict):
        return phantom_from_dict(source)
    path = Path(source)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"phantom file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"phantom {path}: invalid JSON ({exc})") from None
    return phantom_from_dict(doc)


MICRODIAMOND_PHANTOM = {
    "dims": [160, 96, 20],
    "voxel_size_um": [0.25, 0.25, 0.5],
    "densities": [
        # grain 1: mostly NV0, no spin contrast
        {"channel": "2PEF", "shape": {"kind": "sphere", "center_um": [10.0, 12.0, 5.0], "radius_um": 6.0},
         "density": 0.6},
        {"channel": "3PEF", "shape": {"kind": "sphere", "center_um": [10.0, 12.0, 5.0], "radius_um": 6.0},
         "density": 0.5},
        # grain 2: NV- rich
        {"channel": "2PEF", "shape": {"kind": "sphere", "center_um": [28.0, 12.0, 5.0], "radius_um": 6.0},
         "density": 1.0},
        {"channel": "SHG", "shape": {"kind": "box", "lo_um": [22.0, 6.0, 4.0], "hi_um": [34.0, 8.0, 6.0]},
         "density": 0.3},
        {"channel": "THG", "shape": {"kind": "box", "lo_um": [4.0, 16.0, 4.0], "hi_um": [34.0, 18.0, 6.0]},
         "density": 0.2},
    ],
    "odmr_regions": [
        {"shape": {"kind": "sphere", "center_um": [28.0, 12.0, 5.0], "radius_um": 6.0},
         "dips": [{"f0_mhz": 2866.0, "fwhm_mhz": 20.0, "contrast": 0.025},
                  {"f0_mhz": 2874.0, "fwhm_mhz": 20.0, "contrast": 0.025}]},
    ],
}

"""``fluxsim`` command-line front end.

Exit codes: 0 ok, 2 configuration error, 3 numerical convergence failure,
4 fit failure.  Every output starts with (CSV) or contains (JSON) a metadata
block with the tool version, a hash of the resolved configuration and the seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import DEVICE_PARAMS, CircuitParams, FluxBias, diagonalize
from .decoherence import DEVICE_T1_MODEL, NoiseModel, gamma1_dielectric, gamma1_flux_single
from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    FitError,
    FluxsimError,
    GridError,
    NoMinimumError,
)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_FIT = 0, 2, 3, 4


@dataclass
class RunConfig:
    command: str
    device: CircuitParams = DEVICE_PARAMS
    device_path: str | None = None
    noise: NoiseModel | None = None
    noise_path: str | None = None
    grids: dict = field(default_factory=dict)
    out: str | None = None
    fmt: str = "csv"
    seed: int = 0
    options: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        return {
            "command": self.command,
            "device": self.device.to_dict(),
            "noise": None if self.noise is None else self.noise.to_dict(),
            "grids": {k: [repr(float(x)) for x in v] for k, v in sorted(self.grids.items())},
            "seed": self.seed,
            "options": {k: self.options[k] for k in sorted(self.options)},
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def meta(self) -> dict:
        return {"tool": "fluxsim", "version": __version__, "config_hash": self.config_hash(), "seed": self.seed}


def parse_grid(spec: str) -> tuple[str, np.ndarray]:
    """``axis:start:stop:steps`` -> (axis, linspace)."""
    parts = spec.split(":")
    if len(parts) != 4:
        raise ConfigError(f"grid {spec!r} is not of the form axis:start:stop:steps")
    axis = parts[0].strip()
    if not axis:
        raise ConfigError(f"grid {spec!r} has no axis name")
    try:
        start, stop = float(parts[1]), float(parts[2])
        steps = int(parts[3])
    except ValueError as exc:
        raise ConfigError(f"grid {spec!r}: {exc}") from exc
    if steps < 1:
        raise ConfigError(f"grid {spec!r} is empty")
    return axis, np.linspace(start, stop, steps)


def thread_count() -> int:
    raw = os.environ.get("FLUXSIM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"FLUXSIM_THREADS must be an integer, got {raw!r}") from exc


def _pmap(fn, items):
    items = list(items)
    n = thread_count()
    if n <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _read_text(path: str, what: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {what} file {path}: {exc}") from exc


def load_device(path: str | None) -> CircuitParams:
    if path is None:
        return DEVICE_PARAMS
    text = _read_text(path, "device")
    if text.lstrip().startswith("{"):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"device file {path}: {exc}") from exc
        try:
            return CircuitParams(**d)
        except TypeError as exc:
            raise ConfigError(f"device file {path}: {exc}") from exc
    return CircuitParams.from_text(text)


def load_noise(path: str | None, default: NoiseModel | None) -> NoiseModel | None:
    if path is None:
        return default
    try:
        return NoiseModel.from_json(_read_text(path, "noise"))
    except (json.JSONDecodeError, TypeError, KeyError) as exc:
        raise ConfigError(f"noise file {path}: {exc}") from exc


# Output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def render_csv(cfg: RunConfig, header: list[str], rows, extra_meta: dict | None = None) -> str:
    buf = io.StringIO()
    meta = cfg.meta()
    buf.write(f"# {meta['tool']} {meta['version']}\n")
    buf.write(f"# command: {cfg.command}\n")
    buf.write(f"# config_hash: {meta['config_hash']}\n")
    buf.write(f"# seed: {meta['seed']}\n")
    for k, v in (extra_meta or {}).items():
        buf.write(f"# {k}: {_fmt(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def render_json(cfg: RunConfig, payload: dict) -> str:
    doc = {"schema_version": SCHEMA_VERSION, "meta": cfg.meta(), "command": cfg.command}
    doc.update(payload)
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def table_payload(header, rows) -> dict:
    return {"columns": list(header), "rows": [list(r) for r in rows]}


def emit(cfg: RunConfig, outputs: dict[str, str], stdout) -> None:
    """Write ``{filename: text}`` into ``cfg.out`` or, without it, the first entry to stdout."""
    if cfg.out is None:
        stdout.write(next(iter(outputs.values())))
        return
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in outputs.items():
            (out / name).write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write to {out}: {exc}") from exc


# Commands


def _axis(cfg: RunConfig, name: str, default) -> np.ndarray:
    return np.asarray(cfg.grids.get(name, default), dtype=float)


def _check_axes(cfg: RunConfig, allowed: set[str]):
    bad = set(cfg.grids) - allowed
    if bad:
        raise ConfigError(f"{cfg.command}: unknown grid axes {sorted(bad)}; expected {sorted(allowed)}")


def cmd_spectrum(cfg: RunConfig) -> dict[str, str]:
    _check_axes(cfg, {"phi_j", "phi_l", "phi_ext"})
    if "phi_l" in cfg.grids and "phi_ext" in cfg.grids:
        raise ConfigError("give either a phi_l or a phi_ext grid, not both")
    phi_j = _axis(cfg, "phi_j", [0.376])
    conv = "phi_l" if "phi_l" in cfg.grids else "phi_ext"
    second = _axis(cfg, conv, [0.5])
    biases = [FluxBias(float(j), **{conv: float(x)}) for j in phi_j for x in second]

    def point(b: FluxBias):
        s = diagonalize(cfg.device, b, n_levels=3)
        return (b.phi_j, b.loop_flux(cfg.device), s.f01_ghz, s.f02_ghz, s.phi01, s.n01)

    rows = _pmap(point, biases)
    header = ["phi_j", "phi_l", "f01_GHz", "f02_GHz", "abs_phi01", "abs_n01"]
    if cfg.fmt == "json":
        return {"spectrum.json": render_json(cfg, table_payload(header, rows))}
    return {"spectrum.csv": render_csv(cfg, header, rows)}


def _read_measured_t1(path: str):
    lines = [ln for ln in _read_text(path, "measured").splitlines() if ln.strip() and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    need = {"phi_j", "dphi_l", "T1_us"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise ConfigError(f"measured T1 CSV needs columns {sorted(need)}")
    try:
        return {(round(float(r["phi_j"]), 9), round(float(r["dphi_l"]), 9)): float(r["T1_us"]) for r in reader}
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def cmd_t1_map(cfg: RunConfig) -> dict[str, str]:
    _check_axes(cfg, {"phi_j", "dphi_l"})
    if cfg.noise is None:
        raise ConfigError("t1-map needs a noise model")
    phi_j = _axis(cfg, "phi_j", np.linspace(0.0, 0.45, 46))
    dphi = _axis(cfg, "dphi_l", [0.0])
    measured = _read_measured_t1(cfg.options["measured"]) if cfg.options.get("measured") else None

    def point(args):
        j, d = args
        s = diagonalize(cfg.device, FluxBias(float(j), phi_ext=0.5 + float(d)))
        g_d = gamma1_dielectric(s, cfg.noise)
        g_f = gamma1_flux_single(s, cfg.noise)
        return (j, d, s.f01_ghz, 1e6 / (g_d + g_f), g_d, g_f)

    rows = _pmap(point, [(j, d) for j in phi_j for d in dphi])
    header = ["phi_j", "dphi_l", "f01_GHz", "T1_us", "gamma_dielectric_per_s", "gamma_flux_per_s"]
    if measured is not None:
        header.append("residual_T1_us")
        rows = [r + (measured.get((round(r[0], 9), round(r[1], 9)), float("nan")) - r[3],) for r in rows]

    sweet = _pmap(point, [(j, 0.0) for j in phi_j])
    best = max(sweet, key=lambda r: r[3])
    extra = {"sweet_spot_T1_peak_f01_GHz": best[2], "sweet_spot_T1_peak_us": best[3], "sweet_spot_T1_peak_phi_j": best[0]}
    if cfg.fmt == "json":
        payload = table_payload(header, rows)
        payload["sweet_spot_peak"] = extra
        payload["noise_model"] = cfg.noise.to_dict()
        return {"t1_map.json": render_json(cfg, payload)}
    return {"t1_map.csv": render_csv(cfg, header, rows, extra)}


def cmd_tls_sim(cfg: RunConfig) -> dict[str, str]:
    from .tlsbath import TlsBathConfig, find_dips, p1_sweep, sample_bath

    _check_axes(cfg, {"f"})
    f = _axis(cfg, "f", np.linspace(0.2, 2.0, 3601))
    if f.size > 2 and not np.allclose(np.diff(f), np.diff(f)[0]):
        raise GridError("frequency grid must be uniform")
    bath_path = cfg.options.get("bath")
    try:
        bath_cfg = TlsBathConfig.from_dict(json.loads(_read_text(bath_path, "bath"))) if bath_path else TlsBathConfig()
    except (json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"bath file {bath_path}: {exc}") from exc
    tau = float(cfg.options.get("tau", 15e-6))
    ens = sample_bath(bath_cfg, cfg.seed)
    curve = p1_sweep(ens, cfg.device, f, tau=tau)
    prominence = float(cfg.options.get("prominence", 0.02))
    dips = find_dips(curve.f01_ghz, curve.p1, prominence)
    curve_rows = list(zip(curve.f01_ghz, curve.p1))
    dip_rows = [(d.frequency_ghz, d.p1, d.prominence) for d in dips]
    if cfg.fmt == "json":
        payload = {
            "curve": table_payload(["frequency_GHz", "P1"], curve_rows),
            "dips": table_payload(["frequency_GHz", "P1", "prominence"], dip_rows),
            "bath": asdict(bath_cfg),
            "tau_s": tau,
        }
        return {"tls_sim.json": render_json(cfg, payload)}
    extra = {"tau_s": tau, "n_dips": len(dips)}
    return {
        "tls_sim.csv": render_csv(cfg, ["frequency_GHz", "P1"], curve_rows, extra),
        "tls_dips.csv": render_csv(cfg, ["frequency_GHz", "P1", "prominence"], dip_rows, extra),
    }


def cmd_noise_fit(cfg: RunConfig) -> dict[str, str]:
    from .noisespec import fit_noise_model, fit_relaxation_pair, read_traces_csv, spectra_from_fit

    path = cfg.options.get("traces")
    if not path:
        raise ConfigError("noise-fit needs --traces")
    groups = read_traces_csv(_read_text(path, "traces"))
    t_max = cfg.options.get("t_max_us")
    points, per_bias = [], []
    for ctx, up, down in groups:
        if "phi_j" not in ctx or not ({"phi_l", "phi_ext"} & set(ctx)):
            raise ConfigError("trace CSV needs phi_j and phi_l (or phi_ext) bias columns")
        conv = "phi_l" if "phi_l" in ctx else "phi_ext"
        bias = FluxBias(ctx["phi_j"], **{conv: ctx[conv]})
        if t_max is not None:
            up, down = up.truncate(t_max), down.truncate(t_max)
        fit = fit_relaxation_pair(up, down)
        spec = diagonalize(cfg.device, bias)
        pt = spectra_from_fit(fit, spec)
        points.append(pt)
        per_bias.append({"bias": bias.to_dict(), "fit": fit._asdict(), "point": pt.to_dict()})
    points_sorted = sorted(points, key=lambda p: p.f01)
    report = {"points": per_bias}
    if len(points_sorted) >= 8:
        nf = fit_noise_model(points_sorted, cfg.device)
        report["model_fit"] = nf.to_dict()
    else:
        report["model_fit"] = None
    if cfg.fmt == "csv":
        header = ["f01_GHz", "T1_us", "p_stray", "S_plus_uphi0sq_per_Hz", "S_minus_uphi0sq_per_Hz", "T_eff_K"]
        rows = [(p.f01, p.t1, p.p_stray, p.s_plus, p.s_minus, p.t_eff) for p in points_sorted]
        return {"spectra.csv": render_csv(cfg, header, rows), "noise_fit.json": render_json(cfg, report)}
    return {"noise_fit.json": render_json(cfg, report)}


def cmd_calibrate(cfg: RunConfig) -> dict[str, str]:
    from .fluxcal import FluxMapParams, fit_flux_map, read_calibration_csv

    data_path = cfg.options.get("data")
    init_path = cfg.options.get("initial")
    if not data_path or not init_path:
        raise ConfigError("calibrate needs --data and --initial")
    data = read_calibration_csv(_read_text(data_path, "calibration"))
    try:
        initial = FluxMapParams.from_dict(json.loads(_read_text(init_path, "initial-guess")))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"initial-guess file {init_path}: {exc}") from exc
    fit = fit_flux_map(data, cfg.device, initial, cofit_circuit=bool(cfg.options.get("cofit")))
    return {"calibration.json": render_json(cfg, fit.to_dict())}


def _read_two_columns(path: str, names: tuple[str, str]):
    lines = [ln for ln in _read_text(path, names[0]).splitlines() if ln.strip() and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or not set(names) <= set(reader.fieldnames):
        raise ConfigError(f"{path}: expected columns {list(names)}")
    try:
        rows = [(float(r[names[0]]), float(r[names[1]])) for r in reader]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return np.array(rows).T


def cmd_predistort(cfg: RunConfig) -> dict[str, str]:
    from .pulsecomp import (
        DEVICE_ZJ_MODEL,
        DEVICE_ZL_MODEL,
        StepResponseModel,
        design_predistortion,
        fit_step_response,
    )

    opts = cfg.options
    sources = [k for k in ("model", "preset", "phase_error") if opts.get(k)]
    if len(sources) != 1:
        raise ConfigError("predistort needs exactly one of --model, --preset, --phase-error")
    rate = float(opts.get("sample_rate", 1e9))
    report = {}
    if opts.get("preset"):
        model = {"zl": DEVICE_ZL_MODEL, "zj": DEVICE_ZJ_MODEL}[opts["preset"]]
        model = StepResponseModel(model.components, rate)
    elif opts.get("model"):
        try:
            model = StepResponseModel.from_dict(json.loads(_read_text(opts["model"], "model")))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"model file: {exc}") from exc
    else:
        t, y = _read_two_columns(opts["phase_error"], ("delay_ns", "phase_rad"))
        fit = fit_step_response(t, y, scale=float(opts.get("scale", 1.0)), sample_rate=rate, seed=cfg.seed)
        model = fit.model
        report["step_fit"] = {"n_components": fit.n_components, "rss": fit.rss, "bic": fit.bic}
    filt = design_predistortion(model)
    report["model"] = model.to_dict()
    report["filter"] = filt.to_dict()
    report["dc_gain"] = filt.dc_gain
    report["leading_gain"] = filt.leading_gain
    outputs = {"predistortion.json": render_json(cfg, report)}
    if opts.get("waveform"):
        t, x = _read_two_columns(opts["waveform"], ("t_ns", "amplitude"))
        y = filt.apply(x)
        outputs["predistorted_waveform.csv"] = render_csv(cfg, ["t_ns", "amplitude"], zip(t, y))
    return outputs


COMMANDS = {
    "spectrum": cmd_spectrum,
    "t1-map": cmd_t1_map,
    "tls-sim": cmd_tls_sim,
    "noise-fit": cmd_noise_fit,
    "calibrate": cmd_calibrate,
    "predistort": cmd_predistort,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--device", help="circuit parameter file (key = value lines or JSON)")
    common.add_argument("--noise", help="noise model JSON file")
    common.add_argument("--grid", action="append", default=[], metavar="AXIS:START:STOP:STEPS")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help="output directory (default: first output to stdout)")
    common.add_argument("--format", dest="fmt", choices=("csv", "json"), default="csv")

    p = argparse.ArgumentParser(prog="fluxsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"fluxsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("spectrum", parents=[common], help="f01, f02 and matrix elements over a flux grid")
    t1 = sub.add_parser("t1-map", parents=[common], help="modelled T1 over (phi_j, dphi_l)")
    t1.add_argument("--measured", help="CSV with phi_j, dphi_l, T1_us for residuals")
    tls = sub.add_parser("tls-sim", parents=[common], help="TLS-bath Monte Carlo P1 sweep")
    tls.add_argument("--bath", help="bath configuration JSON")
    tls.add_argument("--tau", type=float, default=15e-6, help="delay in seconds")
    tls.add_argument("--prominence", type=float, default=0.02)
    nf = sub.add_parser("noise-fit", parents=[common], help="S+/S- spectra and noise-model fit")
    nf.add_argument("--traces", help="decay-trace CSV")
    nf.add_argument("--t-max-us", dest="t_max_us", type=float)
    cal = sub.add_parser("calibrate", parents=[common], help="voltage-to-flux map fit")
    cal.add_argument("--data", help="calibration CSV (Z_L_V, Z_J_V, f01_MHz)")
    cal.add_argument("--initial", help="initial flux-map JSON")
    cal.add_argument("--cofit", action="store_true", help="co-fit circuit energies")
    pd = sub.add_parser("predistort", parents=[common], help="pre-distortion filter design")
    pd.add_argument("--model", help="step-response model JSON")
    pd.add_argument("--preset", choices=("zl", "zj"))
    pd.add_argument("--phase-error", dest="phase_error", help="CSV with delay_ns, phase_rad to fit")
    pd.add_argument("--scale", type=float, default=1.0)
    pd.add_argument("--sample-rate", dest="sample_rate", type=float, default=1e9)
    pd.add_argument("--waveform", help="CSV with t_ns, amplitude to filter")
    return p


_COMMON = {"device", "noise", "grid", "seed", "out", "fmt", "command"}


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    grids = {}
    for g in ns.grid:
        axis, values = parse_grid(g)
        if axis in grids:
            raise ConfigError(f"grid axis {axis!r} given twice")
        grids[axis] = values
    device = load_device(ns.device)
    default_noise = DEVICE_T1_MODEL if ns.command == "t1-map" else None
    noise = load_noise(ns.noise, default_noise)
    opts = {k: v for k, v in vars(ns).items() if k not in _COMMON and v is not None and v is not False}
    return RunConfig(ns.command, device, ns.device, noise, ns.noise, grids, ns.out, ns.fmt, ns.seed, opts)


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = config_from_args(ns)
        outputs = COMMANDS[ns.command](cfg)
        emit(cfg, outputs, stdout)
    except (ConvergenceError, NoMinimumError) as exc:
        print(f"fluxsim: convergence error: {exc}", file=stderr)
        return EXIT_CONVERGENCE
    except FitError as exc:
        print(f"fluxsim: fit error: {exc}", file=stderr)
        return EXIT_FIT
    except (ConfigError, GridError, DomainError, FluxsimError) as exc:
        print(f"fluxsim: configuration error: {exc}", file=stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()

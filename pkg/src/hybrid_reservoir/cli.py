"""Command-line experiment runner.

Subcommands::

    simulate   config -> trajectory.csv (+ inputs, resolved config, manifest)
    evaluate   trajectory -> results.csv, heatmap_nrmse.csv, correlation_k{k}.csv
    memory     trajectory -> memory.csv, memory_summary.csv
    plot       result CSVs -> SVG figures
    sweep      all of the above in one output directory

Exit codes: 0 ok, 2 configuration, 3 extinction, 4 insufficient data, 5 schema.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import readout as ro
from .errors import ConfigurationError, InsufficientDataError, SchemaError
from .reservoir import SimConfig, StateTrajectory, config_digest, discard_washin, run_simulation
from .signals import MGParams, mackey_glass_inputs, write_sequence_csv

log = logging.getLogger("hybrid_reservoir")

EXIT_OK, EXIT_CONFIG, EXIT_EXTINCT, EXIT_DATA, EXIT_SCHEMA = 0, 2, 3, 4, 5

RESULT_COLUMNS = ["H", "k", "offset", "lambda", "n_components", "nrmse", "correlation"]
MEMORY_COLUMNS = ["d", "r2"]
SUMMARY_COLUMNS = ["mc", "h_star"]
TRAJECTORY_FILE = "trajectory.csv"
EXTINCTION_MARKER = "EXTINCT"


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# -- configuration --------------------------------------------------------------

@dataclass(frozen=True)
class SignalConfig:
    mg: MGParams = field(default_factory=MGParams)
    stride_steps: int = 10
    transient_time_mg: float = 1000.0
    out_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        if self.stride_steps < 1:
            raise ConfigurationError("signal.stride_steps must be >= 1")
        if self.transient_time_mg < 0:
            raise ConfigurationError("signal.transient_time_mg must be >= 0")
        if len(self.out_range) != 2 or not self.out_range[0] < self.out_range[1]:
            raise ConfigurationError("signal.out_range must be [lo, hi] with lo < hi")

    def inputs(self, n: int) -> np.ndarray:
        return mackey_glass_inputs(n, self.mg, self.stride_steps, self.transient_time_mg,
                                   tuple(self.out_range))


@dataclass(frozen=True)
class ReadoutConfig:
    H_list: tuple = tuple(range(1, 26))
    k_list: tuple = (0, 1, 2, 3, 4, 5)
    d_max: int = 50
    n_offsets: int = 6
    var_frac: float = 0.95
    memory_var_frac: float = 1.0
    lambdas: tuple = ro.DEFAULT_LAMBDAS

    def __post_init__(self):
        if not self.H_list or min(self.H_list) < 0:
            raise ConfigurationError("readout.H_list must be non-empty with H >= 0")
        if not self.k_list or min(self.k_list) < 0:
            raise ConfigurationError("readout.k_list must be non-empty with k >= 0")
        if self.d_max < 0:
            raise ConfigurationError("readout.d_max must be >= 0")
        if self.n_offsets < 1:
            raise ConfigurationError("readout.n_offsets must be >= 1")
        if not 0 < self.var_frac <= 1 or not 0 < self.memory_var_frac <= 1:
            raise ConfigurationError("readout variance fractions must lie in (0, 1]")
        if not self.lambdas or min(self.lambdas) < 0:
            raise ConfigurationError("readout.lambdas must be non-empty and >= 0")


@dataclass(frozen=True)
class ExperimentConfig:
    simulation: SimConfig = field(default_factory=SimConfig)
    signal: SignalConfig = field(default_factory=SignalConfig)
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)
    seed: int = 12345
    out_dir: str = "out"

    def to_dict(self) -> dict:
        sig = dataclasses.asdict(self.signal)
        sig = {**sig.pop("mg"), **sig, "out_range": list(self.signal.out_range)}
        rd = {k: list(v) if isinstance(v, tuple) else v
              for k, v in dataclasses.asdict(self.readout).items()}
        rd["lambdas"] = [float(v) for v in self.readout.lambdas]
        return {"simulation": self.simulation.to_dict(), "signal": sig, "readout": rd,
                "seed": self.seed, "out_dir": self.out_dir}

    def digest(self) -> str:
        # the output location is not part of the experiment's identity
        d = self.to_dict()
        d.pop("out_dir")
        return config_digest(d)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        extra = sorted(set(d) - {f.name for f in dataclasses.fields(cls)})
        if extra:
            raise ConfigurationError(f"unknown key(s) {extra}")
        sim = dict(d.get("simulation", {}))
        seed = int(d.get("seed", sim.get("seed", cls.seed)))
        sim["seed"] = seed
        sig = dict(d.get("signal", {}))
        mg_keys = {f.name for f in dataclasses.fields(MGParams)}
        mg = MGParams(**{k: sig.pop(k) for k in list(sig) if k in mg_keys})
        if "mg" in sig:
            raise ConfigurationError("signal: give Mackey-Glass parameters inline")
        _check_keys(sig, SignalConfig, "signal", skip={"mg"})
        if "out_range" in sig:
            sig["out_range"] = tuple(sig["out_range"])
        rd = dict(d.get("readout", {}))
        _check_keys(rd, ReadoutConfig, "readout")
        for key in ("H_list", "k_list", "lambdas"):
            if key in rd:
                rd[key] = tuple(rd[key])
        return cls(SimConfig.from_dict(sim), SignalConfig(mg, **sig), ReadoutConfig(**rd),
                   seed, str(d.get("out_dir", cls.out_dir)))


def _check_keys(d: dict, typ, where: str, skip=()) -> None:
    names = {f.name for f in dataclasses.fields(typ)} - set(skip)
    extra = sorted(set(d) - names)
    if extra:
        raise ConfigurationError(f"{where}: unknown key(s) {extra}")


def _anchor_line(text: str, message: str) -> int:
    """Line of the JSON key named in ``message``; 1 if none is found.

    Messages name the offending key last (``section.key must ...`` or
    ``unknown key(s) ['key']``), so tokens are tried from the end.
    """
    for token in reversed(re.findall(r"[A-Za-z_][A-Za-z0-9_]+", message)):
        m = re.search(r'"' + re.escape(token) + r'"\s*:', text)
        if m:
            return text.count("\n", 0, m.start()) + 1
    return 1


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: error: cannot read config ({exc.strerror})")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"{path}:{exc.lineno}:{exc.colno}: error: {exc.msg}")
    try:
        return ExperimentConfig.from_dict(raw)
    except (ConfigurationError, TypeError, ValueError) as exc:
        line = _anchor_line(text, str(exc))
        raise CliError(EXIT_CONFIG, f"{path}:{line}: error: {exc}")


def write_resolved_config(cfg: ExperimentConfig, path) -> None:
    """Every default made explicit, with Mackey-Glass parameters inline under ``signal``."""
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
                          + "\n")


# -- provenance -----------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def update_manifest(out_dir: Path, command: str, digest: str, seed, outputs, **extra) -> None:
    """Record a command's outputs, their hashes and the config digest they derive from."""
    path = out_dir / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    manifest[command] = {
        "config_digest": digest,
        "seed": seed,
        "outputs": {p.name: _sha256(p) for p in outputs},
        **extra,
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- list parsing ---------------------------------------------------------------

def parse_int_list(text: str) -> tuple[int, ...]:
    """``"1,2,5-8"`` -> ``(1, 2, 5, 6, 7, 8)``."""
    out: list[int] = []
    for part in text.split(","):
        m = re.fullmatch(r"\s*(\d+)\s*(?:-\s*(\d+)\s*)?", part)
        if m is None:
            raise argparse.ArgumentTypeError(f"bad integer list {text!r}")
        lo = int(m.group(1))
        hi = lo if m.group(2) is None else int(m.group(2))
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty range {part.strip()!r}")
        out.extend(range(lo, hi + 1))
    return tuple(sorted(set(out)))


# -- CSV helpers ----------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _read_csv(path: Path, header=None, first: str | None = None):
    """Rows of ``path`` after checking the header against ``header`` or its first name."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise SchemaError(f"{path}: cannot read ({exc.strerror})")
    if not rows:
        raise SchemaError(f"{path}: empty file")
    if header is not None and rows[0] != list(header):
        raise SchemaError(f"{path}: expected header {','.join(header)}")
    if first is not None and (not rows[0] or rows[0][0] != first):
        raise SchemaError(f"{path}: expected first column {first!r}")
    return rows[0], rows[1:]


def _floats(path, row) -> list[float]:
    try:
        return [float(v) for v in row]
    except ValueError:
        raise SchemaError(f"{path}: non-numeric value in row {row}")


# -- commands -------------------------------------------------------------------

def _load_trajectory(path) -> StateTrajectory:
    try:
        return StateTrajectory.load(path)
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"{path}: error: cannot read trajectory ({exc.strerror})")


def cmd_simulate(cfg: ExperimentConfig, out_dir: Path, workers: int = 1) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    sim = cfg.simulation
    t0 = time.perf_counter()
    u = cfg.signal.inputs(sim.n_windows)

    def progress(n, res):
        if (n + 1) % 50 == 0:
            log.info("window %d/%d, %d agents", n + 1, sim.n_windows, len(res.pop))

    traj = run_simulation(sim, u, cfg.seed, workers, on_window=progress)
    traj.meta["experiment_digest"] = cfg.digest()
    extinct_window = traj.extinct_at
    if len(traj) > sim.n_washin:
        traj = discard_washin(traj, sim.n_washin)
    path = out_dir / TRAJECTORY_FILE
    traj.save(path)
    write_sequence_csv(out_dir / "inputs.csv", u[:sim.n_windows])
    write_resolved_config(cfg, out_dir / "config.resolved.json")
    outputs = [path, out_dir / "inputs.csv", out_dir / "config.resolved.json"]
    marker = out_dir / EXTINCTION_MARKER
    if extinct_window is not None:
        marker.write_text(f"population extinct in window {extinct_window}\n")
        outputs.append(marker)
    elif marker.exists():
        marker.unlink()
    update_manifest(out_dir, "simulate", cfg.digest(), cfg.seed, outputs,
                    wall_time_s=round(time.perf_counter() - t0, 3))
    if extinct_window is not None:
        raise CliError(EXIT_EXTINCT, f"population extinct; truncated trajectory in {path}")
    return path


def cmd_evaluate(traj_path, out_dir: Path, H_list, k_list, rd: ReadoutConfig,
                 workers: int = 1) -> list[Path]:
    traj = _load_trajectory(traj_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    H_list, k_list = sorted(H_list), sorted(k_list)
    need = max(H_list) + max(k_list)
    if len(traj) <= need:
        raise InsufficientDataError(
            f"trajectory has {len(traj)} windows; max(H) + max(k) = {need}")
    res = ro.sweep(traj.states, traj.inputs, H_list, k_list, rd.n_offsets, workers,
                   lambdas=rd.lambdas, var_frac=rd.var_frac)
    rows = []
    for H in H_list:
        for k in k_list:
            ev = res[(H, k)]
            for r in ev.per_offset:
                rows.append([H, k, r.offset, _fmt(r.lam), r.n_components, _fmt(r.nrmse),
                             _fmt(r.correlation)])
            rows.append([H, k, "median", "", "", _fmt(ev.median_nrmse),
                         _fmt(ev.median_correlation)])
    outputs = [_write_csv(out_dir / "results.csv", RESULT_COLUMNS, rows)]
    heat = [[k] + [_fmt(res[(H, k)].median_nrmse) for H in H_list] for k in k_list]
    outputs.append(_write_csv(out_dir / "heatmap_nrmse.csv", ["k"] + [str(H) for H in H_list],
                              heat))
    for k in k_list:
        outputs.append(_write_csv(out_dir / f"correlation_k{k}.csv", ["H", "correlation"],
                                  [[H, _fmt(res[(H, k)].median_correlation)] for H in H_list]))
    update_manifest(out_dir, "evaluate", traj.meta.get("experiment_digest",
                                                      traj.meta.get("config_digest")),
                    traj.meta.get("seed"), outputs, trajectory=os.path.relpath(traj_path, out_dir),
                    trajectory_sha256=_sha256(Path(traj_path)))
    return outputs


def cmd_memory(traj_path, out_dir: Path, d_max: int, rd: ReadoutConfig) -> tuple[float, float]:
    traj = _load_trajectory(traj_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    curve = ro.memory_curve(traj.states, traj.inputs, d_max, lambdas=rd.lambdas,
                            var_frac=rd.memory_var_frac, n_offsets=rd.n_offsets)
    h_star = 0.7 * curve.mc
    rows = [[d, _fmt(r)] for d, r in zip(curve.delays, curve.r2)] + [["MC", _fmt(curve.mc)]]
    outputs = [_write_csv(out_dir / "memory.csv", MEMORY_COLUMNS, rows),
               _write_csv(out_dir / "memory_summary.csv", SUMMARY_COLUMNS,
                          [[_fmt(curve.mc), _fmt(h_star)]])]
    update_manifest(out_dir, "memory", traj.meta.get("experiment_digest",
                                                    traj.meta.get("config_digest")),
                    traj.meta.get("seed"), outputs, trajectory=os.path.relpath(traj_path, out_dir),
                    trajectory_sha256=_sha256(Path(traj_path)))
    return curve.mc, h_star


def read_heatmap(path: Path):
    header, rows = _read_csv(path, first="k")
    try:
        H = [int(h) for h in header[1:]]
    except ValueError:
        raise SchemaError(f"{path}: horizon columns must be integers")
    if not H or not rows:
        raise SchemaError(f"{path}: empty heatmap")
    ks, vals = [], []
    for row in rows:
        if len(row) != len(header):
            raise SchemaError(f"{path}: ragged row {row}")
        v = _floats(path, row)
        ks.append(int(v[0]))
        vals.append(v[1:])
    return ks, H, np.array(vals)


def read_memory(path: Path):
    _, rows = _read_csv(path, MEMORY_COLUMNS)
    if not rows or rows[-1][0] != "MC":
        raise SchemaError(f"{path}: missing final MC line")
    data = [_floats(path, r) for r in rows[:-1]]
    if any(len(r) != 2 for r in data):
        raise SchemaError(f"{path}: expected two columns")
    mc = _floats(path, rows[-1][1:])[0]
    d = np.array([r[0] for r in data])
    return d, np.array([r[1] for r in data]), mc


def cmd_plot(in_dir: Path, out_dir: Path) -> list[Path]:
    from . import plotting
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    heat_path = in_dir / "heatmap_nrmse.csv"
    if heat_path.exists():
        ks, Hs, vals = read_heatmap(heat_path)
        outputs.append(plotting.heatmap(ks, Hs, vals, out_dir / "heatmap_nrmse.svg"))
        outputs.append(plotting.k_sweep(ks, Hs, vals, out_dir / "nrmse_vs_H.svg"))
    series = {}
    for p in sorted(in_dir.glob("correlation_k*.csv"),
                    key=lambda q: int(re.sub(r"\D", "", q.stem) or 0)):
        _, rows = _read_csv(p, ["H", "correlation"])
        data = np.array([_floats(p, r) for r in rows]).reshape(-1, 2)
        series[int(p.stem[len("correlation_k"):])] = data
    if series:
        outputs.append(plotting.correlation(series, out_dir / "correlation_vs_H.svg"))
    mem_path = in_dir / "memory.csv"
    if mem_path.exists():
        d, r2, mc = read_memory(mem_path)
        outputs.append(plotting.memory(d, r2, mc, out_dir / "memory_curve.svg"))
    if not outputs:
        raise SchemaError(f"{in_dir}: no result CSVs to plot")
    digest = None
    manifest = in_dir / "manifest.json"
    if manifest.exists():
        m = json.loads(manifest.read_text())
        digest = next((v.get("config_digest") for v in m.values() if v.get("config_digest")),
                      None)
    update_manifest(out_dir, "plot", digest, None, outputs, inputs_dir=os.path.relpath(in_dir, out_dir))
    return outputs


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hybrid-reservoir", description=__doc__.split("\n")[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=False, trajectory=False):
        if config:
            p.add_argument("--config", required=True, help="experiment JSON")
            p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out-dir", help="output directory (default: config out_dir or '.')")
        if trajectory:
            p.add_argument("--trajectory", required=True)
            p.add_argument("--config", help="experiment JSON for readout settings")
        p.add_argument("--workers", type=int, default=1)

    common(sub.add_parser("simulate", help="run the reservoir and write a trajectory"),
           config=True)
    ev = sub.add_parser("evaluate", help="H x k x offset readout sweep")
    common(ev, trajectory=True)
    ev.add_argument("--h-list", type=parse_int_list)
    ev.add_argument("--k-list", type=parse_int_list)
    mem = sub.add_parser("memory", help="memory curve and capacity")
    common(mem, trajectory=True)
    mem.add_argument("--d-max", type=int)
    pl = sub.add_parser("plot", help="render SVG figures from result CSVs")
    pl.add_argument("--out-dir", required=True)
    pl.add_argument("--in-dir", help="directory holding the CSVs (default: --out-dir)")
    sw = sub.add_parser("sweep", help="simulate, evaluate, memory and plot")
    common(sw, config=True)
    sw.add_argument("--h-list", type=parse_int_list)
    sw.add_argument("--k-list", type=parse_int_list)
    sw.add_argument("--d-max", type=int)
    return ap


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed,
                                  simulation=dataclasses.replace(cfg.simulation, seed=args.seed))
    rd = cfg.readout
    over = {}
    if getattr(args, "h_list", None):
        over["H_list"] = args.h_list
    if getattr(args, "k_list", None):
        over["k_list"] = args.k_list
    if getattr(args, "d_max", None) is not None:
        over["d_max"] = args.d_max
    if over:
        cfg = dataclasses.replace(cfg, readout=dataclasses.replace(rd, **over))
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "plot":
            out = Path(args.out_dir)
            cmd_plot(Path(args.in_dir) if args.in_dir else out, out)
            return EXIT_OK
        cfg = _experiment(args)
        out = Path(args.out_dir or (cfg.out_dir if getattr(args, "config", None) else "."))
        rd = cfg.readout
        if args.command == "simulate":
            cmd_simulate(cfg, out, args.workers)
        elif args.command == "evaluate":
            cmd_evaluate(args.trajectory, out, rd.H_list, rd.k_list, rd, args.workers)
        elif args.command == "memory":
            mc, h_star = cmd_memory(args.trajectory, out, rd.d_max, rd)
            print(f"MC={mc:.6g} H*={h_star:.6g}")
        elif args.command == "sweep":
            traj = cmd_simulate(cfg, out, args.workers)
            cmd_evaluate(traj, out, rd.H_list, rd.k_list, rd, args.workers)
            mc, h_star = cmd_memory(traj, out, rd.d_max, rd)
            cmd_plot(out, out)
            print(f"MC={mc:.6g} H*={h_star:.6g}")
    except CliError as exc:
        print(exc, file=sys.stderr)
        return exc.code
    except InsufficientDataError as exc:
        print(f"error: insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SchemaError as exc:
        print(f"error: schema: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ConfigurationError as exc:
        print(f"error: configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

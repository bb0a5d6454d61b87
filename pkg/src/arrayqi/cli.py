"""Config-driven experiment runner.

Configs are TOML documents of dotted ``key.path = value`` entries. Every run
writes CSV data with a provenance header, JSON sidecars and a ``run.json``
record into the output directory.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import dynamics, geometry, greens, memory, model1d, scattering
from .errors import ConfigError, NumericalError

SCHEMA_VERSION = 1
PRESETS = ("fig4a", "fig4b", "fig8a", "fig8b", "memory", "subradiant", "eigs")


@dataclass
class LatticeSection:
    a: float = 0.6
    n_side: int = 30
    nz: int = 1
    a_z: float = 1.0
    orientation: str = "x"

    def __post_init__(self):
        if self.a <= 0 or self.a_z <= 0 or self.n_side < 1 or self.nz < 1:
            raise ConfigError("lattice: a, a_z, n_side and nz must be positive")
        greens.DipoleOrientation.named(self.orientation)


@dataclass
class BeamSection:
    waist: Optional[float] = None
    waist_over_a: Optional[float] = None
    waist_over_La: Optional[float] = None
    plane_z: float = 5.0

    def __post_init__(self):
        given = [v for v in (self.waist, self.waist_over_a, self.waist_over_La) if v is not None]
        if len(given) > 1 or any(v <= 0 for v in given):
            raise ConfigError("beam: give at most one positive waist, waist_over_a or waist_over_La")
        if self.plane_z <= 0:
            raise ConfigError("beam.plane_z must be positive")

    def resolve(self, a: float, n_side: int) -> float:
        if self.waist is not None:
            return self.waist
        if self.waist_over_a is not None:
            return self.waist_over_a * a
        frac = 0.25 if self.waist_over_La is None else self.waist_over_La
        return frac * n_side * a


@dataclass
class DisorderSection:
    sigma: float = 0.0
    sigmas: list = field(default_factory=list)
    realizations: int = 1
    base_seed: int = 0
    distribution: str = "normal"
    axes: str = "xyz"

    def __post_init__(self):
        try:
            geometry.DisorderSpec(self.sigma, self.realizations, self.base_seed, self.distribution, self.axes)
        except ValueError as exc:
            raise ConfigError(f"disorder: {exc}") from exc
        if any(s < 0 for s in self.sigmas):
            raise ConfigError("disorder.sigmas must be non-negative")


@dataclass
class ScanSection:
    center: str = "delta0"
    half_width: float = 5.0
    steps: int = 81

    def __post_init__(self):
        if self.steps < 3 or self.half_width <= 0:
            raise ConfigError("scan: need steps >= 3 and a positive half_width")
        if self.center != "delta0":
            try:
                float(self.center)
            except ValueError as exc:
                raise ConfigError("scan.center must be 'delta0' or a number") from exc


@dataclass
class SweepSection:
    n_sides: list = field(default_factory=list)
    a_min: float = 0.55
    a_max: float = 0.95
    a_steps: int = 41
    extra_a: list = field(default_factory=list)


@dataclass
class LayersSection:
    eta: Optional[float] = 1.0
    gamma_loss_over_gamma0: float = 0.05

    def __post_init__(self):
        if self.eta is not None and not 0 < self.eta <= 1:
            raise ConfigError("layers.eta must lie in (0, 1]")


@dataclass
class MemorySection:
    mode: str = "1d"
    cooperativity: float = 10.0
    rate_fraction: float = 0.004
    clamp: float = 1000.0
    hold: float = 50.0
    pulse_file: str = ""
    control_file: str = ""

    def __post_init__(self):
        if self.mode not in ("1d", "array"):
            raise ConfigError("memory.mode must be '1d' or 'array'")
        if self.cooperativity <= 0 or self.rate_fraction <= 0 or self.clamp <= 0 or self.hold < 0:
            raise ConfigError("memory: cooperativity, rate_fraction, clamp must be positive and hold >= 0")


@dataclass
class SuperlatticeSection:
    V: float = 0.0


@dataclass
class OutputSection:
    directory: str = "out"
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class RunConfig:
    schema: int = SCHEMA_VERSION
    command: str = ""
    lattice: LatticeSection = field(default_factory=LatticeSection)
    beam: BeamSection = field(default_factory=BeamSection)
    disorder: DisorderSection = field(default_factory=DisorderSection)
    scan: ScanSection = field(default_factory=ScanSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    layers: LayersSection = field(default_factory=LayersSection)
    memory: MemorySection = field(default_factory=MemorySection)
    superlattice: SuperlatticeSection = field(default_factory=SuperlatticeSection)
    output: OutputSection = field(default_factory=OutputSection)

    def hash(self) -> str:
        doc = asdict(self)
        doc.pop("output")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]

    @property
    def waist(self) -> float:
        return self.beam.resolve(self.lattice.a, self.lattice.n_side)


_SECTIONS = {f.name: f.type for f in dataclasses.fields(RunConfig) if f.name not in ("schema", "command")}


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def config_from_dict(doc: dict) -> RunConfig:
    """Validate a parsed document against the schema; unknown keys are errors."""
    kwargs = {}
    for key, value in doc.items():
        if key in ("schema", "command"):
            kwargs[key] = value
            continue
        if key not in _SECTIONS:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"{key} must be a table")
        cls = globals()[_SECTIONS[key]] if isinstance(_SECTIONS[key], str) else _SECTIONS[key]
        names = {f.name: f for f in dataclasses.fields(cls)}
        for k, v in value.items():
            if k not in names:
                raise ConfigError(f"unknown config key {key}.{k}")
        try:
            kwargs[key] = cls(**value)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    if kwargs.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {kwargs['schema']}")
    return RunConfig(**kwargs)


def preset_document(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("arrayqi.presets").joinpath(f"{name}.toml").read_text()
    return tomllib.loads(text)


def load_config(path: Optional[str] = None, preset: Optional[str] = None) -> RunConfig:
    doc: dict = {}
    if preset:
        doc = preset_document(preset)
    if path:
        try:
            with open(path, "rb") as fh:
                doc = _merge(doc, tomllib.load(fh))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(doc)


def code_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def _read_pulse(path: str) -> memory.PulseShape:
    try:
        return memory.read_pulse_csv(path)
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read pulse file {path}: {exc}") from exc


def _lattice(cfg: RunConfig, a: Optional[float] = None) -> greens.LatticeParams:
    L = cfg.lattice
    return greens.LatticeParams(L.a if a is None else a, L.a_z, greens.DipoleOrientation.named(L.orientation))


def _array(cfg: RunConfig, n_side: Optional[int] = None, a: Optional[float] = None) -> geometry.ArrayRealization:
    lat = _lattice(cfg, a)
    n = cfg.lattice.n_side if n_side is None else n_side
    arr = geometry.build_3d(lat, n, cfg.lattice.nz) if cfg.lattice.nz > 1 else geometry.build_2d(lat, n)
    if cfg.superlattice.V:
        arr = geometry.checkerboard_detuning(arr, cfg.superlattice.V)
    return arr


def _scan_grid(cfg: RunConfig, lat: greens.LatticeParams) -> np.ndarray:
    g0 = greens.collective_rate_2d(lat)
    c = greens.collective_shift_2d(lat).delta0 if cfg.scan.center == "delta0" else float(cfg.scan.center)
    return np.linspace(c - cfg.scan.half_width * g0, c + cfg.scan.half_width * g0, cfg.scan.steps)


def _spec(cfg: RunConfig, sigma: float) -> geometry.DisorderSpec:
    d = cfg.disorder
    return geometry.DisorderSpec(sigma, d.realizations, d.base_seed, d.distribution, d.axes)


def _disorder_task(args):
    cfg, sigma, idx = args
    arr = _array(cfg)
    if sigma > 0:
        arr = geometry.apply_disorder(arr, _spec(cfg, sigma), idx)
    beam = geometry.GaussianBeam(cfg.waist)
    scan = scattering.reflectivity_spectrum(arr, beam, _scan_grid(cfg, arr.lattice), cfg.beam.plane_z)
    f = scan.fit
    return sigma, idx, arr.seed, f.r0, f.inverse_cooperativity, f.delta_res


def _pool_map(fn, tasks, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


@dataclass(frozen=True)
class DisorderPoint:
    sigma: float
    mean_inv_C: float
    stderr: float
    count: int


def disorder_sweep(cfg: RunConfig, workers: int = 1):
    """Per-realization fits and per-sigma means of 1/C."""
    sigmas = cfg.disorder.sigmas or [cfg.disorder.sigma]
    tasks = [(cfg, float(s), i) for s in sigmas for i in range(cfg.disorder.realizations if s > 0 else 1)]
    rows = sorted(_pool_map(_disorder_task, tasks, workers), key=lambda r: (r[0], r[1]))
    points = []
    for s in sigmas:
        vals = np.array([r[4] for r in rows if r[0] == float(s)])
        err = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
        points.append(DisorderPoint(float(s), float(vals.mean()), err, len(vals)))
    return rows, points


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass(frozen=True)
class SizePoint:
    n_side: int
    side_length: float
    waist: float
    eta: float
    inv_C: float
    predicted: float


def _size_task(args):
    cfg, n = args
    arr = _array(cfg, n_side=n)
    beam = geometry.GaussianBeam(cfg.beam.resolve(cfg.lattice.a, n))
    scan = scattering.reflectivity_spectrum(arr, beam, _scan_grid(cfg, arr.lattice), cfg.beam.plane_z)
    eta = geometry.mode_overlap_eta(beam, arr.side_length)
    return SizePoint(n, arr.side_length, beam.waist, eta, scan.fit.inverse_cooperativity, (1 - eta) / eta)


def size_sweep(cfg: RunConfig, workers: int = 1) -> list:
    sizes = cfg.sweep.n_sides or [cfg.lattice.n_side]
    return _pool_map(_size_task, [(cfg, int(n)) for n in sizes], workers)


@dataclass(frozen=True)
class LayerPeak:
    a: float
    peak: float
    delta_prime: float
    gamma0: float
    cooperativity: float


def _layers_task(args):
    cfg, a = args
    lat = _lattice(cfg, a)
    arr = geometry.build_3d(lat, 2, cfg.lattice.nz)
    g0 = greens.collective_rate_2d(lat)
    grid = np.linspace(-cfg.scan.half_width * g0, cfg.scan.half_width * g0, cfg.scan.steps)
    eta = cfg.layers.eta
    beam = None if eta is not None else geometry.GaussianBeam(cfg.waist)
    gs = cfg.layers.gamma_loss_over_gamma0 * g0
    scan = scattering.multilayer_effective_solve(arr, beam, grid, gamma_s=gs, eta=eta)
    dp = greens.phase_matched_shift(lat, cfg.lattice.nz) if abs(2 * lat.a_z - round(2 * lat.a_z)) < 1e-9 else np.nan
    return scan, LayerPeak(a, scan.fit.delta_res, dp, g0, scan.fit.cooperativity)


def layers_map(cfg: RunConfig, workers: int = 1):
    s = cfg.sweep
    a_values = sorted(set(np.round(np.linspace(s.a_min, s.a_max, s.a_steps), 10).tolist() + list(s.extra_a)))
    return _pool_map(_layers_task, [(cfg, float(a)) for a in a_values], workers)


def _write_csv(path: Path, header: str, columns, rows) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(v if isinstance(v, str) else f"{v:.12e}" if isinstance(v, float) else str(v) for v in r) + "\n")


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, default=float)
        fh.write("\n")


def _header(cfg: RunConfig) -> str:
    return f"config_hash={cfg.hash()} base_seed={cfg.disorder.base_seed} version={code_version()}"


def cmd_spectrum(cfg: RunConfig, out: Path, workers: int = 1) -> list:
    arr = _array(cfg)
    if cfg.disorder.sigma > 0:
        arr = geometry.apply_disorder(arr, _spec(cfg, cfg.disorder.sigma), 0)
    beam = geometry.GaussianBeam(cfg.waist)
    if arr.n_layers > 1:
        g0 = greens.collective_rate_2d(arr.lattice)
        grid = np.linspace(-cfg.scan.half_width * g0, cfg.scan.half_width * g0, cfg.scan.steps)
        scan = scattering.multilayer_effective_solve(arr, beam, grid, eta=cfg.layers.eta)
    else:
        scan = scattering.reflectivity_spectrum(arr, beam, _scan_grid(cfg, arr.lattice), cfg.beam.plane_z)
    scan.write_csv(out / "spectrum.csv", _header(cfg))
    scan.write_json(out / "spectrum.json", {"config_hash": cfg.hash(), "seed": arr.seed,
                                            "base_seed": cfg.disorder.base_seed})
    return ["spectrum.csv", "spectrum.json"]


def cmd_disorder_sweep(cfg: RunConfig, out: Path, workers: int = 1) -> list:
    rows, points = disorder_sweep(cfg, workers)
    _write_csv(out / "disorder_realizations.csv", _header(cfg),
               ["sigma", "realization", "seed", "r0", "inv_C", "delta_res"],
               [(s, i, "" if seed is None else str(seed), r0, ic, d) for s, i, seed, r0, ic, d in rows])
    _write_csv(out / "disorder_sweep.csv", _header(cfg), ["sigma", "mean_inv_C", "stderr", "count"],
               [(p.sigma, p.mean_inv_C, p.stderr, p.count) for p in points])
    pos = [p for p in points if p.sigma > 0]
    doc = {"config_hash": cfg.hash(), "base_seed": cfg.disorder.base_seed,
           "distribution": cfg.disorder.distribution, "axes": cfg.disorder.axes,
           "realizations": cfg.disorder.realizations}
    if len(pos) >= 2:
        doc["loglog_slope"] = loglog_slope([p.sigma for p in pos], [p.mean_inv_C for p in pos])
    _write_json(out / "disorder_sweep.json", doc)
    return ["disorder_realizations.csv", "disorder_sweep.csv", "disorder_sweep.json"]


def cmd_size_sweep(cfg: RunConfig, out: Path, workers: int = 1) -> list:
    pts = size_sweep(cfg, workers)
    _write_csv(out / "size_sweep.csv", _header(cfg),
               ["n_side", "N", "L_a", "waist", "eta", "inv_C", "predicted", "ratio"],
               [(p.n_side, p.n_side**2, p.side_length, p.waist, p.eta, p.inv_C, p.predicted, p.inv_C / p.predicted)
                for p in pts])
    _write_json(out / "size_sweep.json", {"config_hash": cfg.hash()})
    return ["size_sweep.csv", "size_sweep.json"]


def cmd_layers_map(cfg: RunConfig, out: Path, workers: int = 1) -> list:
    res = layers_map(cfg, workers)
    grid_rows = []
    for scan, pk in res:
        for d, R in zip(scan.detunings, scan.R):
            grid_rows.append((pk.a, d / pk.gamma0, float(R), pk.delta_prime / pk.gamma0))
    _write_csv(out / "layers_map.csv", _header(cfg), ["a", "detuning_over_gamma0", "R", "delta_prime_over_gamma0"],
               grid_rows)
    _write_csv(out / "layers_peaks.csv", _header(cfg),
               ["a", "peak_over_gamma0", "delta_prime_over_gamma0", "difference_over_gamma0", "C"],
               [(pk.a, pk.peak / pk.gamma0, pk.delta_prime / pk.gamma0, (pk.peak - pk.delta_prime) / pk.gamma0,
                 pk.cooperativity) for _, pk in res])
    _write_json(out / "layers_map.json", {"config_hash": cfg.hash(), "nz": cfg.lattice.nz, "a_z": cfg.lattice.a_z})
    return ["layers_map.csv", "layers_peaks.csv", "layers_map.json"]


def cmd_memory(cfg: RunConfig, out: Path, workers: int = 1) -> list:
    m = cfg.memory
    if m.mode == "array":
        arr = _array(cfg)
        beam = geometry.GaussianBeam(cfg.waist)
        g0 = greens.collective_rate_2d(arr.lattice)
        h0 = _read_pulse(m.pulse_file) if m.pulse_file else dynamics.default_storage_pulse(arr, m.rate_fraction)
        ctrl = _read_pulse(m.control_file) if m.control_file else dynamics.subradiant_control(arr, beam, h0)
        run = dynamics.subradiant_memory_run(arr, beam, h0, ctrl, m.hold / g0)
        run.trajectory.write_csv(out / "memory_trajectory.csv", _header(cfg))
        eta = geometry.mode_overlap_eta(beam, arr.side_length)
        summary = {"e_s": run.storage_efficiency, "e_r": run.retrieval_efficiency, "predicted": eta,
                   "output_overlap": run.output_overlap}
    else:
        p = model1d.InterfaceParams(1.0, 1.0 / m.cooperativity)
        A = p.total_rate
        h0 = _read_pulse(m.pulse_file) if m.pulse_file else memory.exponential_pulse(m.rate_fraction * A, step=0.5 / A)
        ctrl = _read_pulse(m.control_file) if m.control_file else memory.optimal_storage_control(h0, p, 0.0, clamp=m.clamp)
        run = memory.simulate_storage(h0, ctrl, p, 0.0)
        memory.write_memory_run_csv(run, out / "memory_trajectory.csv", _header(cfg))
        summary = {"e_s": run.efficiency, "predicted": model1d.resonant_reflectivity(m.cooperativity)}
        if run.stored_excitation > 0:
            summary["e_r"] = memory.simulate_retrieval(run.S[-1], memory.time_reverse_control(ctrl), p, 0.0).efficiency
    _write_csv(out / "memory_summary.csv", _header(cfg), list(summary), [tuple(float(v) for v in summary.values())])
    _write_json(out / "memory_summary.json", {"config_hash": cfg.hash(), **summary})
    return ["memory_trajectory.csv", "memory_summary.csv", "memory_summary.json"]


def cmd_eigs(cfg: RunConfig, out: Path, workers: int = 1) -> list:
    arr = _array(cfg)
    beam = geometry.GaussianBeam(cfg.waist)
    x, y, _ = arr.positions.T
    u = beam.profile(x, y)
    modes = scattering.eigenmodes(scattering.build_matrix(arr), target=u, pattern=u * arr.parity)
    rows = [(i, float(l.real), float(l.imag), float(2 * l.real), float(o), float(po))
            for i, (l, o, po) in enumerate(zip(modes.eigenvalues, modes.overlaps, modes.pattern_overlaps))]
    _write_csv(out / "eigs.csv", _header(cfg), ["mode", "re", "im", "decay_rate", "target_overlap", "m_overlap"], rows)
    _write_json(out / "eigs.json", {"config_hash": cfg.hash(), "modes": len(rows),
                                    "unnormalized": list(modes.unnormalized)})
    return ["eigs.csv", "eigs.json"]


COMMANDS = {
    "spectrum": cmd_spectrum,
    "disorder-sweep": cmd_disorder_sweep,
    "size-sweep": cmd_size_sweep,
    "layers-map": cmd_layers_map,
    "memory": cmd_memory,
    "eigs": cmd_eigs,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="arrayqi", description="Atom-array light-matter interface experiments")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="TOML config file")
    ap.add_argument("--preset", help=f"built-in config: {', '.join(PRESETS)}")
    ap.add_argument("--out", help="output directory (overrides output.directory)")
    ap.add_argument("--workers", type=int, default=1, help="worker processes; results do not depend on it")
    ap.add_argument("--seed", type=int, help="base seed for disorder (overrides disorder.base_seed)")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.preset)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.disorder.base_seed = args.seed
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        out = Path(args.out or cfg.output.directory)
        out.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        files = COMMANDS[args.command](cfg, out, args.workers)
        record = {"command": args.command, "config_hash": cfg.hash(), "code_version": code_version(),
                  "base_seed": cfg.disorder.base_seed, "seconds": round(time.perf_counter() - start, 3),
                  "files": files, "config": asdict(cfg)}
        _write_json(out / "run.json", record)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print("\n".join(str(out / f) for f in files))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

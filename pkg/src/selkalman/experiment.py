"""Reproducible case-study driver: config, truth simulation, inversion, report.

Config files are YAML with an explicit ``version`` field.  All CSV outputs
start with a ``# nx,ny,dx`` header line; field CSVs then hold ``ny`` rows of
``nx`` values, row 0 being ``y = 0``.

Seeds are derived from the root seed with :class:`numpy.random.SeedSequence`:
``[root, 0]`` drives observation noise, ``[root, 1, model, T]`` the chain and
``[root, 2, model, T]`` the posterior realizations (``model`` is 0 for skm,
1 for tkm).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .forward import (
    FIVE_SPOT,
    AdvectionDiffusionParams,
    GridSpec,
    ObservationLayout,
    assemble_propagator,
    build_observation_matrix,
    simulate_truth,
)
from .gaussian import GaussianDist, IntervalUnion, SelectionSet, marginalize
from .inference import rmse, summarize_posterior
from .recursion import (
    ProcessModel,
    TargetedJoint,
    posterior_r0_selection,
    posterior_r0_traditional,
    run_selection,
    run_traditional,
)
from .selection import (
    CaseCoupling,
    ChainConfig,
    StationaryFieldSpec,
    build_stationary_field,
    couple_case_auxiliary,
)

CONFIG_VERSION = 1
MODELS = ("skm", "tkm")
OUTPUT_ROOT_ENV = "SELKALMAN_OUTPUT_ROOT"
WINDOW = (15.0, 50.0)
ERROR_WINDOW = (0.0, 35.0)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


class ManifestError(RuntimeError):
    """Manifest missing or lacking the entries a command needs."""


@dataclass(frozen=True)
class EventSpec:
    value: float
    i_range: tuple[int, int]  # inclusive
    j_range: tuple[int, int]


@dataclass(frozen=True)
class TruthSpec:
    background: float = 20.0
    events: tuple[EventSpec, ...] = (EventSpec(45.0, (12, 14), (12, 14)),)


@dataclass(frozen=True)
class SelectionPriorSpec:
    mean: float = 28.75
    std: float = 10.0
    corr_range: float = 0.15
    gamma: float = 0.95
    standardized: bool = True
    segments: tuple[tuple[float, float], ...] = ((-np.inf, -0.2), (0.5, np.inf))


@dataclass(frozen=True)
class GaussianPriorSpec:
    mean: float = 20.0
    std: float = 10.0
    corr_range: float = 0.15


@dataclass(frozen=True)
class ObservationSpec:
    sites: tuple[tuple[int, int], ...] = FIVE_SPOT
    noise_std: float = 0.1


@dataclass(frozen=True)
class ChainSpec:
    n_samples: int = 1000
    burn_in: int = 1000
    thinning: int = 10
    block_size: int = 10
    inner_sweeps: int = 1


@dataclass(frozen=True)
class SummarySpec:
    resolution: int = 512
    hdi_mass: float = 0.8
    n_realizations: int = 100
    export_realizations: int = 4
    monitor: tuple[tuple[int, int], ...] = ((13, 13), (10, 13), (2, 18), (5, 6))
    profile_row: int = 13


@dataclass(frozen=True)
class ExperimentConfig:
    version: int = CONFIG_VERSION
    grid: GridSpec = GridSpec()
    pde: AdvectionDiffusionParams = AdvectionDiffusionParams()
    observation: ObservationSpec = ObservationSpec()
    truth: TruthSpec = TruthSpec()
    selection_prior: SelectionPriorSpec = SelectionPriorSpec()
    gaussian_prior: GaussianPriorSpec = GaussianPriorSpec()
    horizons: tuple[int, ...] = (0, 20, 30, 50)
    chain: ChainSpec = ChainSpec()
    summary: SummarySpec = SummarySpec()
    recursion_mode: str = "targeted"
    seed: int = 2024
    output_dir: str = "results"


# ---------------------------------------------------------------- config I/O

def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(x) for x in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def emit_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(_to_plain(cfg), sort_keys=False, default_flow_style=None)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ConfigError(f"{path + '.' if path else ''}{sorted(unknown)[0]}: unknown field")
    kwargs = {}
    for name, value in data.items():
        fpath = f"{path}.{name}" if path else name
        kwargs[name] = _coerce(cls, name, value, fpath)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or '<root>'}: {exc}") from exc


_NESTED = {
    (ExperimentConfig, "grid"): GridSpec,
    (ExperimentConfig, "pde"): AdvectionDiffusionParams,
    (ExperimentConfig, "observation"): ObservationSpec,
    (ExperimentConfig, "truth"): TruthSpec,
    (ExperimentConfig, "selection_prior"): SelectionPriorSpec,
    (ExperimentConfig, "gaussian_prior"): GaussianPriorSpec,
    (ExperimentConfig, "chain"): ChainSpec,
    (ExperimentConfig, "summary"): SummarySpec,
}


def _pairs(value, path: str, kind=int) -> tuple:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path}: expected a list")
    out = []
    for k, item in enumerate(value):
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ConfigError(f"{path}[{k}]: expected a pair")
        try:
            out.append((kind(item[0]), kind(item[1])))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}[{k}]: {exc}") from exc
    return tuple(out)


def _coerce(cls, name, value, path):
    nested = _NESTED.get((cls, name))
    if nested is not None:
        return _build(nested, value, path)
    if cls is TruthSpec and name == "events":
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list of events")
        events = []
        for k, ev in enumerate(value):
            p = f"{path}[{k}]"
            if not isinstance(ev, dict):
                raise ConfigError(f"{p}: expected a mapping")
            for key in ("value", "i_range", "j_range"):
                if key not in ev:
                    raise ConfigError(f"{p}.{key}: missing")
            ranges = _pairs([ev["i_range"], ev["j_range"]], p)
            events.append(EventSpec(float(ev["value"]), ranges[0], ranges[1]))
        return tuple(events)
    if name in ("sites", "monitor"):
        return _pairs(value, path)
    if name == "segments":
        return _pairs(value, path, float)
    if name in ("horizons", "velocity"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        return tuple(int(v) if name == "horizons" else float(v) for v in value)
    return value


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"<root>: not valid YAML ({exc})") from exc
    if data is None:
        data = {}
    if isinstance(data, dict) and data.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"version: unsupported config version {data.get('version')}")
    cfg = _build(ExperimentConfig, data, "")
    validate_config(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def validate_config(cfg: ExperimentConfig) -> None:
    g = cfg.grid
    hs = list(cfg.horizons)
    if not hs or hs != sorted(hs) or len(set(hs)) != len(hs) or hs[0] < 0:
        raise ConfigError("horizons: must be distinct, non-negative and sorted ascending")
    for k, (i, j) in enumerate(cfg.observation.sites):
        if not (0 <= i < g.nx and 0 <= j < g.ny):
            raise ConfigError(f"observation.sites[{k}]: node ({i}, {j}) outside grid")
    if len(set(cfg.observation.sites)) != len(cfg.observation.sites):
        raise ConfigError("observation.sites: duplicate site")
    if cfg.observation.noise_std < 0:
        raise ConfigError("observation.noise_std: must be non-negative")
    for k, ev in enumerate(cfg.truth.events):
        for axis, (lo, hi), size in (("i_range", ev.i_range, g.nx), ("j_range", ev.j_range, g.ny)):
            if not 0 <= lo <= hi < size:
                raise ConfigError(f"truth.events[{k}].{axis}: ({lo}, {hi}) outside grid")
    for k, (i, j) in enumerate(cfg.summary.monitor):
        if not (0 <= i < g.nx and 0 <= j < g.ny):
            raise ConfigError(f"summary.monitor[{k}]: node ({i}, {j}) outside grid")
    if not 0 <= cfg.summary.profile_row < g.ny:
        raise ConfigError("summary.profile_row: outside grid")
    if cfg.recursion_mode not in ("targeted", "full"):
        raise ConfigError("recursion_mode: must be 'targeted' or 'full'")
    try:
        IntervalUnion(cfg.selection_prior.segments)
        CaseCoupling(cfg.selection_prior.gamma)
        ChainConfig(**dataclasses.asdict(cfg.chain))
    except ValueError as exc:
        raise ConfigError(f"selection_prior/chain: {exc}") from exc


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of the model-defining fields; the seed and output location are
    recorded separately in the manifest."""
    plain = _to_plain(dataclasses.replace(cfg, seed=0, output_dir=""))
    return hashlib.sha256(yaml.safe_dump(plain, sort_keys=True).encode()).hexdigest()


# ------------------------------------------------------------------ model set-up

def initial_truth(cfg: ExperimentConfig) -> np.ndarray:
    g = cfg.grid
    img = np.full((g.ny, g.nx), float(cfg.truth.background))
    for ev in cfg.truth.events:
        img[ev.j_range[0]:ev.j_range[1] + 1, ev.i_range[0]:ev.i_range[1] + 1] = ev.value
    return img.reshape(-1)


def process_model(cfg: ExperimentConfig, horizon: int) -> ProcessModel:
    g = cfg.grid
    a = assemble_propagator(g, cfg.pde)
    layout = ObservationLayout.from_nodes(g, cfg.observation.sites)
    h = build_observation_matrix(g, layout)
    r = cfg.observation.noise_std**2 * np.eye(layout.m)
    return ProcessModel(a, h, r, horizon)


def selection_initial(cfg: ExperimentConfig) -> tuple[GaussianDist, SelectionSet]:
    sp = cfg.selection_prior
    base = build_stationary_field(StationaryFieldSpec(cfg.grid, sp.mean, sp.std, sp.corr_range))
    joint = couple_case_auxiliary(base, CaseCoupling(sp.gamma, sp.standardized))
    return joint, SelectionSet.repeated(IntervalUnion(sp.segments), cfg.grid.n)


def gaussian_initial(cfg: ExperimentConfig) -> GaussianDist:
    gp = cfg.gaussian_prior
    return build_stationary_field(StationaryFieldSpec(cfg.grid, gp.mean, gp.std, gp.corr_range))


def derived_seed(root: int, *key: int) -> int:
    return int(np.random.SeedSequence([root, *key]).generate_state(1)[0])


def monitor_nodes(cfg: ExperimentConfig) -> list[int]:
    g = cfg.grid
    nodes = [g.index(i, j) for i, j in cfg.summary.monitor]
    nodes += [g.index(i, cfg.summary.profile_row) for i in range(g.nx)]
    return sorted(set(nodes))


def _targeted(jm_or_tj, n: int, q: int, pm: ProcessModel) -> TargetedJoint:
    if isinstance(jm_or_tj, TargetedJoint):
        return jm_or_tj
    full = jm_or_tj.assemble()
    T = pm.horizon
    nr = n * (T + 2)
    keep = np.concatenate([np.arange(n), np.arange(nr, full.dim)])
    return TargetedJoint(marginalize(full, keep), n, q, pm.m, T)


def invert(cfg: ExperimentConfig, model: str, horizon: int, data: np.ndarray, seed: int):
    """Posterior of ``r_0`` given ``data`` (shape (T+1, m)) and its summary."""
    pm = process_model(cfg, horizon)
    n = cfg.grid.n
    d = np.asarray(data, dtype=float)[: horizon + 1].reshape(-1)
    model_id = MODELS.index(model)
    if model == "skm":
        joint, sel = selection_initial(cfg)
        tj = _targeted(run_selection(joint, pm, cfg.recursion_mode), n, n, pm)
        chain = ChainConfig(seed=derived_seed(seed, 1, model_id, horizon), **dataclasses.asdict(cfg.chain))
        post = posterior_r0_selection(tj, d, sel, chain)
    else:
        tj = _targeted(run_traditional(gaussian_initial(cfg), pm, cfg.recursion_mode), n, 0, pm)
        post = posterior_r0_traditional(tj, d)
    s = cfg.summary
    summary = summarize_posterior(
        post, nodes=monitor_nodes(cfg), resolution=s.resolution, hdi_mass=s.hdi_mass,
        n_real=s.n_realizations, seed=derived_seed(seed, 2, model_id, horizon),
    )
    return post, summary


# ------------------------------------------------------------------ file formats

def _num(x: float) -> str:
    return repr(float(x))


def grid_header(g: GridSpec) -> str:
    return f"# {g.nx},{g.ny},{_num(g.dx)}\n"


def write_field(path: Path, g: GridSpec, values) -> None:
    img = g.to_image(values)
    lines = [grid_header(g)] + [",".join(_num(v) for v in row) + "\n" for row in img]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(lines))


def read_field(path: Path) -> tuple[GridSpec, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    nx, ny, dx = lines[0].lstrip("#").split(",")
    g = GridSpec(int(nx), int(ny), float(dx))
    rows = [list(map(float, ln.split(","))) for ln in lines[1:] if ln.strip()]
    values = np.array(rows)
    if values.shape != (g.ny, g.nx):
        raise ValueError(f"{path}: expected {g.ny}x{g.nx} cells, got {values.shape}")
    return g, values.reshape(-1)


def write_table(path: Path, g: GridSpec, header: list[str], rows) -> None:
    lines = [grid_header(g), ",".join(header) + "\n"]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else _num(v) for v in row) + "\n")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(lines))


def read_observations(path: Path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    rows = [list(map(float, ln.split(",")))[1:] for ln in lines[2:] if ln.strip()]
    return np.array(rows)


def write_pgm(path: Path, g: GridSpec, values, window=WINDOW) -> None:
    """8-bit binary graymap, north (largest y) at the top."""
    lo, hi = window
    img = g.to_image(values)[::-1]
    pix = np.round(np.clip((img - lo) / (hi - lo), 0.0, 1.0) * 255).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(f"P5\n{g.nx} {g.ny}\n255\n".encode() + pix.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


# ------------------------------------------------------------------ manifest

def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch is not None else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def manifest_path(out: Path) -> Path:
    return out / "manifest.json"


def load_manifest(out: Path) -> dict:
    p = manifest_path(out)
    if not p.exists():
        raise ManifestError(f"{p} not found; run 'simulate' first")
    return json.loads(p.read_text())


def save_manifest(out: Path, manifest: dict) -> None:
    manifest["rmse_table"] = {
        model: {str(t): entry["rmse"] for t, entry in sorted(runs.items(), key=lambda kv: int(kv[0]))}
        for model, runs in sorted(manifest.get("runs", {}).items())
    }
    manifest_path(out).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def resolve_output(cfg: ExperimentConfig, out: Optional[str]) -> Path:
    if out:
        return Path(out)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return Path(root) / cfg.output_dir if root else Path(cfg.output_dir)


# ------------------------------------------------------------------ commands

def cmd_simulate(cfg: ExperimentConfig, out: Path, seed: Optional[int] = None) -> dict:
    seed = cfg.seed if seed is None else seed
    g = cfg.grid
    t_max = max(cfg.horizons)
    sim = simulate_truth(initial_truth(cfg), process_model(cfg, t_max), t_max, seed=derived_seed(seed, 0))
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for t in sorted({0, *cfg.horizons}):
        p = Path("truth") / f"truth_t{t:03d}.csv"
        write_field(out / p, g, sim.states[t])
        files.append(str(p))
    obs_header = ["t"] + [f"site_{i}_{j}" for i, j in cfg.observation.sites]
    write_table(out / "observations.csv", g, obs_header,
                ([float(t), *row] for t, row in enumerate(sim.observations)))
    files.append("observations.csv")
    (out / "config.yaml").write_text(emit_config(cfg))
    files.append("config.yaml")
    manifest = {
        "version": CONFIG_VERSION,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "created": _timestamp(),
        "simulate": {"files": files, "horizon": t_max},
        "runs": {},
    }
    save_manifest(out, manifest)
    return manifest


def cmd_invert(cfg: ExperimentConfig, out: Path, models=MODELS, horizons=None) -> dict:
    manifest = load_manifest(out)
    seed = manifest["seed"]
    if manifest["config_hash"] != config_hash(cfg):
        raise ManifestError("config differs from the one used by 'simulate'; rerun simulate")
    obs_path = out / "observations.csv"
    truth_path = out / "truth" / "truth_t000.csv"
    if not obs_path.exists() or not truth_path.exists():
        raise ManifestError("simulation outputs missing; run 'simulate' first")
    data = read_observations(obs_path)
    _, truth = read_field(truth_path)
    g = cfg.grid
    horizons = cfg.horizons if horizons is None else horizons
    for model in models:
        for T in horizons:
            if T > manifest["simulate"]["horizon"]:
                raise ManifestError(f"horizon {T} beyond simulated horizon")
            post, summary = invert(cfg, model, T, data, seed)
            rel = Path(model) / f"T{T:03d}"
            d = out / rel
            files = []
            write_field(d / "mmap.csv", g, summary.mmap)
            files.append(str(rel / "mmap.csv"))
            rows = []
            for node, band in sorted(summary.hdi.items()):
                j, i = divmod(node, g.nx)
                segs = ";".join(f"{_num(a)}:{_num(b)}" for a, b in band.intervals.segments)
                rows.append([str(node), str(i), str(j), band.mass, band.covered, str(band.n_intervals), segs])
            write_table(d / "hdi.csv", g, ["node", "i", "j", "mass", "covered", "n_intervals", "segments"], rows)
            files.append(str(rel / "hdi.csv"))
            mon = [g.index(i, j) for i, j in cfg.summary.monitor]
            drows = []
            for node in mon:
                dens = summary.densities[node]
                j, i = divmod(node, g.nx)
                drows += [[str(node), str(i), str(j), x, y] for x, y in zip(dens.grid, dens.values)]
            write_table(d / "densities.csv", g, ["node", "i", "j", "value", "density"], drows)
            files.append(str(rel / "densities.csv"))
            for k in range(min(cfg.summary.export_realizations, len(summary.realizations))):
                write_field(d / f"realization_{k:03d}.csv", g, summary.realizations[k])
                files.append(str(rel / f"realization_{k:03d}.csv"))
            err = rmse(summary.mmap, truth)
            manifest["runs"].setdefault(model, {})[str(T)] = {
                "files": files, "rmse": err, "completed": _timestamp(),
                "seed": derived_seed(seed, 1, MODELS.index(model), T),
            }
            save_manifest(out, manifest)
    return manifest


def rmse_table_text(manifest: dict) -> str:
    runs = manifest.get("runs", {})
    horizons = sorted({int(t) for r in runs.values() for t in r})
    lines = ["model " + " ".join(f"{'T=' + str(t):>8}" for t in horizons)]
    for model in MODELS:
        if model in runs:
            vals = [runs[model].get(str(t), {}).get("rmse") for t in horizons]
            lines.append(f"{model:<5} " + " ".join(f"{v:8.3f}" if v is not None else f"{'-':>8}" for v in vals))
    return "\n".join(lines) + "\n"


def cmd_report(cfg: ExperimentConfig, out: Path) -> list[str]:
    manifest = load_manifest(out)
    runs = manifest.get("runs", {})
    if not runs:
        raise ManifestError("manifest has no inversion runs; run 'invert' first")
    horizons = sorted({int(t) for r in runs.values() for t in r})
    for model, entries in runs.items():
        for t in horizons:
            if str(t) not in entries:
                raise ManifestError(f"incomplete manifest: {model} lacks horizon {t}")
            for f in entries[str(t)]["files"]:
                if not (out / f).exists():
                    raise ManifestError(f"manifest lists missing file {f}")
    g, truth = read_field(out / "truth" / "truth_t000.csv")
    rep = out / "report"
    rep.mkdir(parents=True, exist_ok=True)
    written = ["report/rmse_table.txt", "report/truth.pgm"]
    (rep / "rmse_table.txt").write_text(rmse_table_text(manifest))
    write_pgm(rep / "truth.pgm", g, truth)
    for model in sorted(runs):
        for t in horizons:
            _, pred = read_field(out / model / f"T{t:03d}" / "mmap.csv")
            write_pgm(rep / f"{model}_T{t:03d}_mmap.pgm", g, pred)
            write_pgm(rep / f"{model}_T{t:03d}_error.pgm", g, np.abs(pred - truth), ERROR_WINDOW)
            written += [f"report/{model}_T{t:03d}_mmap.pgm", f"report/{model}_T{t:03d}_error.pgm"]
    return written

"""Experiment configuration and orchestration.

A run is described by one TOML file::

    command = "gradient"          # optional, the CLI subcommand wins
    seed = 7
    out = "results"
    workers = 1

    [model]
    name = "switching-ou"
    params = { a = [0.5, 1.0] }

    [simulation]
    x0 = [0.5]
    alpha0 = 0
    t = 1.0
    dt = 1e-3
    n_paths = 10000
    method = "holding-times"     # or "prm"

    [functional]
    name = "tanh"
    params = { component = 0 }

    [gradient]
    xi = "all-axes"              # or a direction vector
    estimators = ["bismut", "pathwise", "finite-difference"]
    bump = 1e-3

    [strong_feller]
    offsets = [0.2, 0.1, 0.05, 0.025]

    [hormander]
    j0 = 1
    variant = "sigma-prime"
    threshold = 1e-6
    box = 2.0
    count = 100

    [nondegeneracy]
    eps_list = [0.1, 0.01, 0.001]
    p_list = [1, 2]

    [density]
    low = -3.0
    high = 3.0
    count = 61
    n_boot = 0

Unknown keys at any level are rejected with the offending key named.
Every output file is listed in ``manifest.json`` with its SHA-256 digest.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli
import tomli_w

from . import __version__
from .bismut import (COND_MAX, finite_difference_gradient, gradient_estimate, pathwise_gradient,
                     strong_feller_probe)
from .density import (DegeneracyError, Table, density_table, negative_moment_estimate, nondegeneracy_sample,
                      small_ball_probe, terminal_states)
from .functionals import REGISTRY, make_functional
from .hormander import uhc_check
from .malliavin import flow_bundle
from .model import ModelError, SwitchingModel, builtin_model
from .paths import simulate_batch

log = logging.getLogger(__name__)

COMMANDS = ("simulate", "flows", "hormander", "gradient", "strong-feller", "nondegeneracy", "density",
            "validate-all")
ESTIMATORS = ("bismut", "pathwise", "finite-difference")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` is the dotted path of the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


@dataclass
class ModelSpec:
    name: str = "switching-ou"
    params: dict = field(default_factory=dict)


@dataclass
class SimulationSpec:
    x0: list | None = None
    alpha0: int = 0
    t: float = 1.0
    dt: float = 1e-3
    n_paths: int = 1000
    method: str = "holding-times"
    chunk_size: int | None = None


@dataclass
class FunctionalSpec:
    name: str = "tanh"
    params: dict = field(default_factory=dict)


@dataclass
class GradientSpec:
    xi: str | list = "all-axes"
    estimators: list = field(default_factory=lambda: list(ESTIMATORS))
    bump: float = 1e-3
    cond_max: float = COND_MAX


@dataclass
class StrongFellerSpec:
    offsets: list = field(default_factory=lambda: [0.2, 0.1, 0.05, 0.025])
    direction: list | None = None


@dataclass
class HormanderSpec:
    j0: int = 1
    variant: str = "sigma-prime"
    threshold: float = 1e-6
    box: float | list = 2.0
    count: int = 100


@dataclass
class NondegeneracySpec:
    eps_list: list = field(default_factory=lambda: [1e-1, 1e-2, 1e-3, 1e-4])
    p_list: list = field(default_factory=lambda: [1, 2])


@dataclass
class DensitySpec:
    low: float = -3.0
    high: float = 3.0
    count: int = 61
    bandwidth: float | None = None
    n_boot: int = 0


SECTIONS = {
    "model": ModelSpec, "simulation": SimulationSpec, "functional": FunctionalSpec, "gradient": GradientSpec,
    "strong_feller": StrongFellerSpec, "hormander": HormanderSpec, "nondegeneracy": NondegeneracySpec,
    "density": DensitySpec,
}


@dataclass
class ExperimentConfig:
    command: str | None = None
    seed: int = 0
    out: str = "out"
    workers: int = 1
    model: ModelSpec = field(default_factory=ModelSpec)
    simulation: SimulationSpec = field(default_factory=SimulationSpec)
    functional: FunctionalSpec = field(default_factory=FunctionalSpec)
    gradient: GradientSpec = field(default_factory=GradientSpec)
    strong_feller: StrongFellerSpec = field(default_factory=StrongFellerSpec)
    hormander: HormanderSpec = field(default_factory=HormanderSpec)
    nondegeneracy: NondegeneracySpec = field(default_factory=NondegeneracySpec)
    density: DensitySpec = field(default_factory=DensitySpec)

    def to_dict(self) -> dict:
        def clean(d):
            return {k: v for k, v in d.items() if v is not None}
        out = clean({k: getattr(self, k) for k in ("command", "seed", "out", "workers")})
        for name in SECTIONS:
            out[name] = clean(dataclasses.asdict(getattr(self, name)))
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def build_model(self) -> SwitchingModel:
        try:
            return builtin_model(self.model.name, self.model.params)
        except ModelError as exc:
            raise ConfigError(str(exc), key="model") from None

    def x0(self, model: SwitchingModel) -> np.ndarray:
        x0 = self.simulation.x0
        return np.zeros(model.n) if x0 is None else np.asarray(x0, dtype=float)


def _section(cls, raw, name):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a table", key=name)
    known = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key {name}.{key}", key=f"{name}.{key}")
    return cls(**raw)


def _require(cond, message, key):
    if not cond:
        raise ConfigError(f"{key}: {message}", key=key)


def config_from_dict(raw: dict) -> ExperimentConfig:
    top = {}
    sections = {}
    known_top = {"command", "seed", "out", "workers"}
    for key, value in raw.items():
        if key in SECTIONS:
            sections[key] = _section(SECTIONS[key], value, key)
        elif key in known_top:
            top[key] = value
        else:
            raise ConfigError(f"unknown config key {key}", key=key)
    cfg = ExperimentConfig(**top, **sections)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    """Parse-time checks of every precondition that does not need a simulation."""
    _require(cfg.command is None or cfg.command in COMMANDS, f"unknown command {cfg.command!r}", "command")
    _require(isinstance(cfg.seed, int) and cfg.seed >= 0, "must be a non-negative integer", "seed")
    _require(isinstance(cfg.workers, int) and cfg.workers >= 1, "must be a positive integer", "workers")
    model = cfg.build_model()
    s = cfg.simulation
    _require(s.t > 0, "must be positive", "simulation.t")
    _require(0 < s.dt <= s.t, "must be positive and at most t", "simulation.dt")
    _require(isinstance(s.n_paths, int) and s.n_paths >= 1, "must be a positive integer", "simulation.n_paths")
    _require(s.method in ("holding-times", "prm"), f"unknown method {s.method!r}", "simulation.method")
    _require(0 <= s.alpha0 < model.m0, f"must lie in 0..{model.m0 - 1}", "simulation.alpha0")
    _require(s.x0 is None or len(s.x0) == model.n, f"must have {model.n} entries", "simulation.x0")
    _require(s.chunk_size is None or s.chunk_size >= 1, "must be positive", "simulation.chunk_size")
    _require(cfg.functional.name in REGISTRY, f"unknown functional {cfg.functional.name!r}", "functional.name")
    try:
        make_functional(cfg.functional.name, cfg.functional.params)
    except ValueError as exc:
        raise ConfigError(f"functional.params: {exc}", key="functional.params") from None
    g = cfg.gradient
    _require(g.xi == "all-axes" or (isinstance(g.xi, list) and len(g.xi) == model.n),
             f"must be 'all-axes' or a vector of length {model.n}", "gradient.xi")
    _require(all(e in ESTIMATORS for e in g.estimators), f"estimators must be among {ESTIMATORS}",
             "gradient.estimators")
    _require(g.bump > 0, "must be positive", "gradient.bump")
    offs = np.asarray(cfg.strong_feller.offsets, dtype=float)
    _require(offs.size > 0 and np.all(offs > 0) and np.all(np.diff(offs) < 0),
             "must be positive and decreasing", "strong_feller.offsets")
    h = cfg.hormander
    _require(h.j0 >= 0, "must be non-negative", "hormander.j0")
    _require(h.variant in ("sigma", "sigma-prime"), "must be 'sigma' or 'sigma-prime'", "hormander.variant")
    eps = np.asarray(cfg.nondegeneracy.eps_list, dtype=float)
    _require(eps.size > 0 and np.all(np.diff(eps) < 0), "must be decreasing", "nondegeneracy.eps_list")
    dn = cfg.density
    _require(dn.high > dn.low and dn.count >= 2, "need low < high and count >= 2", "density")
    _require(dn.bandwidth is None or dn.bandwidth > 0, "must be positive", "density.bandwidth")


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed TOML: {exc}") from None
    return config_from_dict(raw)


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def task_seed(master: int, task: str) -> int:
    """Seed of a named task, a fixed function of the master seed and the task name."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(task.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class RunManifest:
    command: str
    config: dict
    version: str
    seeds: dict
    outputs: dict  # file name -> sha256
    wall_clock: float
    status: str = "ok"
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _Run:
    def __init__(self, cfg: ExperimentConfig, command: str, out: Path):
        self.cfg = cfg
        self.command = command
        self.out = out
        self.files: list[str] = []
        self.seeds: dict = {}
        self.notes: list = []
        self.status = "ok"
        self.model = cfg.build_model()

    def seed(self, task):
        s = task_seed(self.cfg.seed, task)
        self.seeds[task] = s
        return s

    def file(self, name) -> Path:
        self.files.append(name)
        return self.out / name

    @property
    def meta(self):
        s = self.cfg.simulation
        return {"model": self.model.name, "t": s.t, "dt": s.dt, "n_paths": s.n_paths}

    def common(self):
        s = self.cfg.simulation
        return dict(n_paths=s.n_paths, dt=s.dt, method=s.method, workers=self.cfg.workers,
                    chunk_size=s.chunk_size)


def _cmd_simulate(r: _Run):
    s = r.cfg.simulation
    seed = r.seed("simulate")
    batch = simulate_batch(r.model, r.cfg.x0(r.model), s.alpha0, s.t, s.dt, np.arange(s.n_paths), seed, s.method)
    width = max(4, len(str(s.n_paths - 1)))
    for i in range(batch.size):
        batch.path(i).to_csv(r.file(f"path_{i:0{width}d}.csv"))


def _cmd_flows(r: _Run):
    s = r.cfg.simulation
    seed = r.seed("flows")
    batch = simulate_batch(r.model, r.cfg.x0(r.model), s.alpha0, s.t, s.dt, np.arange(s.n_paths), seed, s.method)
    width = max(4, len(str(s.n_paths - 1)))
    rows = []
    for i in range(batch.size):
        fl = flow_bundle(r.model, batch.path(i))
        fl.to_csv(r.file(f"flows_{i:0{width}d}.csv"))
        rows.append((i, float(np.max(fl.product_error())), float(np.linalg.norm(fl.J[-1]))))
    Table(("path", "max_product_error", "norm_J_end"), rows, {**r.meta, "seed": seed}).to_csv(
        r.file("flows_summary.csv"))


def _cmd_hormander(r: _Run):
    h = r.cfg.hormander
    seed = r.seed("hormander")
    rep = uhc_check(r.model, h.j0, h.variant, {"box": h.box, "count": h.count, "seed": seed}, h.threshold)
    rep.to_csv(r.file("uhc.csv"))
    r.notes.append(rep.summary)


def _directions(r: _Run):
    xi = r.cfg.gradient.xi
    return None if xi == "all-axes" else np.asarray(xi, dtype=float)


def _cmd_gradient(r: _Run):
    s, g = r.cfg.simulation, r.cfg.gradient
    f = make_functional(r.cfg.functional.name, r.cfg.functional.params)
    x0, xi = r.cfg.x0(r.model), _directions(r)
    path = r.file("gradient.csv")
    for k, est in enumerate(g.estimators):
        seed = r.seed(f"gradient/{est}")
        if est == "bismut":
            res = gradient_estimate(r.model, x0, s.alpha0, s.t, f, xi, seed=seed, cond_max=g.cond_max, **r.common())
            if res.rejected_paths:
                r.notes.append(f"bismut: {res.rejected_paths} path(s) rejected for conditioning")
        elif est == "pathwise":
            res = pathwise_gradient(r.model, x0, s.alpha0, s.t, f, xi, seed=seed, **r.common())
        else:
            res = finite_difference_gradient(r.model, x0, s.alpha0, s.t, f, xi, bump=g.bump, seed=seed,
                                             **r.common())
        res.to_csv(path, append=k > 0)


def _cmd_strong_feller(r: _Run):
    s, sf = r.cfg.simulation, r.cfg.strong_feller
    f = make_functional(r.cfg.functional.name, r.cfg.functional.params)
    seed = r.seed("strong-feller")
    common = r.common()
    common.pop("method")
    probe = strong_feller_probe(r.model, r.cfg.x0(r.model), s.alpha0, s.t, f, sf.offsets, seed=seed,
                                direction=sf.direction, method=s.method, **common)
    probe.to_csv(r.file("strong_feller.csv"), header=" ".join(
        f"{k}={v}" for k, v in {**r.meta, "seed": seed}.items()))


def _cmd_nondegeneracy(r: _Run):
    s, nd = r.cfg.simulation, r.cfg.nondegeneracy
    seed = r.seed("nondegeneracy")
    sample = nondegeneracy_sample(r.model, r.cfg.x0(r.model), s.alpha0, s.t, seed=seed, **r.common())
    sample.to_csv(r.file("nondegeneracy.csv"))
    small_ball_probe(sample, nd.eps_list).to_csv(r.file("small_ball.csv"))
    try:
        negative_moment_estimate(sample, nd.p_list).to_csv(r.file("negative_moments.csv"))
    except DegeneracyError as exc:
        r.notes.append(f"negative moments skipped: {exc}")


def _cmd_density(r: _Run):
    s, dn = r.cfg.simulation, r.cfg.density
    seed = r.seed("density")
    common = r.common()
    common.pop("chunk_size")
    xs = terminal_states(r.model, r.cfg.x0(r.model), s.alpha0, s.t, seed=seed, **common)
    grid = np.linspace(dn.low, dn.high, dn.count)
    if r.model.n == 1:
        pts = grid[:, None]
    else:
        mesh = np.meshgrid(*([grid] * r.model.n), indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=1)
    density_table(xs, pts, dn.bandwidth, dn.n_boot, seed, {**r.meta, "seed": seed}).to_csv(r.file("density.csv"))


def _cmd_validate_all(r: _Run):
    from .validation import run_validation
    seed = r.seed("validate-all")
    table = run_validation(seed=seed, workers=r.cfg.workers)
    table.to_csv(r.file("validate.csv"))
    failed = [row for row in table.rows if not row[-1]]
    if failed:
        r.status = "failed"
        r.notes.extend(f"failed: {row[0]} on {row[1]}" for row in failed)


HANDLERS = {
    "simulate": _cmd_simulate, "flows": _cmd_flows, "hormander": _cmd_hormander, "gradient": _cmd_gradient,
    "strong-feller": _cmd_strong_feller, "nondegeneracy": _cmd_nondegeneracy, "density": _cmd_density,
    "validate-all": _cmd_validate_all,
}


def run_experiment(cfg: ExperimentConfig, command: str | None = None, out=None) -> RunManifest:
    """Execute one subcommand and write its CSVs plus ``manifest.json`` into the output directory."""
    command = command or cfg.command
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}", key="command")
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    run = _Run(cfg, command, out)
    HANDLERS[command](run)
    manifest = RunManifest(command=command, config=cfg.to_dict(), version=__version__, seeds=run.seeds,
                           outputs={name: _digest(out / name) for name in run.files},
                           wall_clock=round(time.perf_counter() - start, 3), status=run.status, notes=run.notes)
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    return manifest


def config_with_overrides(cfg: ExperimentConfig, seed: int | None = None, out=None,
                          workers: int | None = None) -> ExperimentConfig:
    cfg = dataclasses.replace(cfg)
    if seed is not None:
        cfg.seed = seed
    if out is not None:
        cfg.out = str(out)
    if workers is not None:
        cfg.workers = workers
    validate_config(cfg)
    return cfg


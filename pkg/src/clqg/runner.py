"""Experiment configuration, staged execution, and deterministic persistence.

Configs are flat ``key = value`` text files validated against a typed schema.
A run executes the requested stages (field -> measure -> clock -> lbm ->
estimators) with hash-chained caching: every stage's output name embeds a
hash of its config block and its upstream hash, so touching an upstream knob
invalidates everything downstream while untouched stages are reused byte for
byte.  The same config and seed reproduce every output file exactly,
independent of the thread count.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import __version__
from .clock import SQRT_2_OVER_PI, clock_derivative, simulate_bm
from .dirichlet import Rect
from .errors import CacheError, ConfigError, DomainError
from .estimators import (
    aggregate_spectra,
    bessel_envelope,
    invariance_test,
    multifractal_spectrum,
    ordered_replica_map,
    record,
    resolvent_estimate,
)
from .field import (
    GridSpec,
    ScaleLadder,
    _replica_seed,
    append_measure_block,
    read_field_cache,
    sample_field_ladder,
    write_field_cache,
)
from .kernels import GFF_DIRICHLET, MFF, KernelSpec, assumption_report
from .lbm import sample_lbm
from .measure import (
    DERIVATIVE,
    KIND_IDS,
    SENETA_HEYDE,
    TRUNCATED,
    derivative_measure,
    seneta_heyde_measure,
    truncated_measure,
)

__all__ = ["ExperimentConfig", "RunManifest", "parse_config", "load_config", "run"]

_SCHEMA = {
    "seed": ("int", None),
    "output_dir": ("str", "out"),
    "threads": ("int", 1),
    "kernel_family": ("str", MFF),
    "kernel_mass": ("float", 1.0),
    "kernel_domain": ("list_float", None),
    "grid_nx": ("int", 64),
    "grid_ny": ("int", 64),
    "grid_x0": ("float", 0.0),
    "grid_y0": ("float", 0.0),
    "grid_dx": ("float", None),
    "grid_periodic": ("bool", False),
    "ladder_j": ("int", 6),
    "synth_wrap_tol": ("float", 5e-3),
    "path_dt": ("float", None),
    "path_t": ("float", 0.01),
    "path_horizon_cap": ("int", 50_000_000),
    "measure_beta": ("float", 15.0),
    "measure_kinds": ("list_str", [SENETA_HEYDE, DERIVATIVE, TRUNCATED]),
    "estimators": ("list_str", []),
    "spectrum_q": ("list_float", [0.2, 0.5, 0.8]),
    "envelope_chi": ("float", 0.1),
    "envelope_points": ("int", 2000),
    "resolvent_lambda": ("list_float", [0.5, 1.0, 2.0]),
    "resolvent_paths": ("int", 2000),
    "invariance_t": ("list_float", [0.0, 0.05]),
    "invariance_trajectories": ("int", 4000),
    "replicas": ("int", 50),
    "lbm_horizon": ("float", 0.2),
    "lbm_points": ("int", 64),
}

_STAGES = ("field", "measure", "clock", "lbm", "estimators")
_ESTIMATORS = ("spectrum", "envelope", "resolvent", "invariance")


@dataclass(frozen=True)
class ExperimentConfig:
    values: tuple  # sorted (key, value) pairs, lists as tuples

    def __getitem__(self, key):
        return dict(self.values)[key]

    def get(self, key, default=None):
        return dict(self.values).get(key, default)

    def canonical(self) -> str:
        return "\n".join(f"{k} = {_fmt(v)}" for k, v in self.values)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def kernel_spec(self) -> KernelSpec:
        fam = self["kernel_family"]
        if fam == GFF_DIRICHLET:
            dom = self["kernel_domain"]
            if dom is None:
                g = self.grid_spec()
                w = g.window
                dom = (w.x0, w.y0, w.x1, w.y1)
            return KernelSpec(family=fam, domain=Rect(*dom))
        return KernelSpec(family=fam, mass=self["kernel_mass"])

    def grid_spec(self) -> GridSpec:
        return GridSpec(
            nx=self["grid_nx"],
            ny=self["grid_ny"],
            x0=self["grid_x0"],
            y0=self["grid_y0"],
            dx=self["grid_dx"],
            periodic=self["grid_periodic"],
        )

    def ladder(self) -> ScaleLadder:
        return ScaleLadder(J=self["ladder_j"])


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key, raw):
    kind, _ = _SCHEMA[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "str":
            return raw
        items = [s.strip() for s in raw.split(",") if s.strip()]
        if kind == "list_float":
            return tuple(float(s) for s in items)
        return tuple(items)
    except ValueError as e:
        raise ConfigError(f"cannot parse {raw!r} as {kind}", field=key) from e


def parse_config(text: str) -> ExperimentConfig:
    vals = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'", field=f"line{lineno}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError("unknown key", field=key)
        vals[key] = _coerce(key, raw)
    for key, (kind, default) in _SCHEMA.items():
        if key not in vals:
            if key == "seed":
                raise ConfigError("required key missing", field="seed")
            if isinstance(default, list):
                default = tuple(default)
            vals[key] = default
    cfg = ExperimentConfig(values=tuple(sorted(vals.items())))
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def _validate(cfg: ExperimentConfig):
    grid = cfg.grid_spec()  # raises DomainError -> surfaced as config error below
    if cfg["ladder_j"] > math.log2(min(grid.nx, grid.ny)) + 1e-9:
        raise ConfigError("ladder depth exceeds log2(grid size)", field="ladder_j")
    dt = cfg["path_dt"]
    if dt is not None and dt > grid.dx**2:
        raise ConfigError("path step must satisfy dt <= dx^2", field="path_dt")
    for name in cfg["estimators"]:
        if name not in _ESTIMATORS:
            raise ConfigError(f"unknown estimator {name!r}", field="estimators")
    for kind in cfg["measure_kinds"]:
        if kind not in KIND_IDS:
            raise ConfigError(f"unknown measure kind {kind!r}", field="measure_kinds")
    try:
        cfg.kernel_spec()
    except DomainError as e:
        raise ConfigError(str(e), field="kernel_family") from e


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    seeds: dict
    outputs: list  # [{"path": ..., "sha256": ...}]
    wall_clock: dict = dc_field(default_factory=dict)

    @property
    def manifest_hash(self) -> str:
        h = hashlib.sha256(self.config_hash.encode())
        for out in sorted(self.outputs, key=lambda o: o["path"]):
            h.update(out["path"].encode())
            h.update(out["sha256"].encode())
        return h.hexdigest()

    def write(self, path):
        payload = {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "seeds": self.seeds,
            "outputs": self.outputs,
            "wall_clock": self.wall_clock,
            "manifest_hash": self.manifest_hash,
        }
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cache_dir(cfg: ExperimentConfig) -> Path:
    env = os.environ.get("CLQG_CACHE_DIR")
    base = Path(env) if env else Path(cfg["output_dir"]) / "cache"
    base.mkdir(parents=True, exist_ok=True)
    return base


def _block_hash(cfg: ExperimentConfig, keys, upstream: str = "") -> str:
    h = hashlib.sha256(upstream.encode())
    d = dict(cfg.values)
    for k in keys:
        h.update(f"{k}={_fmt(d[k])};".encode())
    return h.hexdigest()[:12]


_FIELD_KEYS = (
    "seed",
    "kernel_family",
    "kernel_mass",
    "kernel_domain",
    "grid_nx",
    "grid_ny",
    "grid_x0",
    "grid_y0",
    "grid_dx",
    "grid_periodic",
    "ladder_j",
    "synth_wrap_tol",
)


def run(cfg: ExperimentConfig, stages=_STAGES) -> RunManifest:
    """Execute the requested stages with caching; idempotent on cache hits."""
    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        config_hash=cfg.hash(),
        code_version=__version__,
        seeds={"root": cfg["seed"]},
        outputs=[],
    )
    field_hash = _block_hash(cfg, _FIELD_KEYS)
    fl = None

    def note(path):
        manifest.outputs.append({"path": str(path), "sha256": _sha256(path)})

    if "field" in stages:
        t0 = time.time()
        cache = cache_dir(cfg) / f"field_{field_hash}.clqg"
        if cache.exists():
            fl = read_field_cache(cache)  # CacheError on corruption
        else:
            fl = sample_field_ladder(
                cfg.kernel_spec(), cfg.grid_spec(), cfg.ladder(), cfg["seed"], cfg["synth_wrap_tol"]
            )
            write_field_cache(cache, fl)
        manifest.wall_clock["field"] = time.time() - t0
        note(cache)

    measure_hash = _block_hash(cfg, ("measure_beta", "measure_kinds"), field_hash)
    if "measure" in stages:
        t0 = time.time()
        fl = fl or _load_field(cfg, field_hash)
        J = fl.ladder.J
        for kind in cfg["measure_kinds"]:
            path = out_dir / f"measure_{kind.lower()}_{measure_hash}.csv"
            if not path.exists():
                meas = _make_measure(fl, kind, J, cfg["measure_beta"])
                meas.to_csv(path)
                cache = cache_dir(cfg) / f"field_{field_hash}.clqg"
                append_measure_block(cache, KIND_IDS[kind], J, cfg["measure_beta"] or 0.0, np.asarray(meas.masses))
            note(path)
        manifest.wall_clock["measure"] = time.time() - t0

    clock_hash = _block_hash(cfg, ("path_dt", "path_t", "path_horizon_cap"), measure_hash)
    if "clock" in stages:
        t0 = time.time()
        fl = fl or _load_field(cfg, field_hash)
        path = out_dir / f"clock_{clock_hash}.csv"
        if not path.exists():
            cp = _pipeline_clock(cfg, fl)
            cp.to_csv(path)
        note(path)
        manifest.wall_clock["clock"] = time.time() - t0

    lbm_hash = _block_hash(cfg, ("lbm_horizon", "lbm_points", "measure_beta"), clock_hash)
    if "lbm" in stages:
        t0 = time.time()
        fl = fl or _load_field(cfg, field_hash)
        path = out_dir / f"lbm_{lbm_hash}.csv"
        if not path.exists():
            g = fl.grid.window
            center = [(g.x0 + g.x1) / 2.0, (g.y0 + g.y1) / 2.0]
            times = np.linspace(0.0, cfg["lbm_horizon"], cfg["lbm_points"])
            traj = sample_lbm(
                fl,
                center,
                cfg["lbm_horizon"],
                times,
                seed=_replica_seed(cfg["seed"], 7),
                beta=cfg["measure_beta"],
                dt=cfg["path_dt"],
                max_steps=cfg["path_horizon_cap"],
            )
            traj.to_csv(path)
        note(path)
        manifest.wall_clock["lbm"] = time.time() - t0

    if "estimators" in stages and cfg["estimators"]:
        t0 = time.time()
        fl = fl or _load_field(cfg, field_hash)
        est_hash = _block_hash(
            cfg,
            (
                "estimators",
                "spectrum_q",
                "envelope_chi",
                "envelope_points",
                "resolvent_lambda",
                "resolvent_paths",
                "invariance_t",
                "invariance_trajectories",
                "replicas",
            ),
            lbm_hash,
        )
        path = out_dir / f"results_{est_hash}.jsonl"
        if not path.exists():
            records = _run_estimators(cfg, fl)
            with open(path, "w") as fh:
                for rec in records:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
        note(path)
        manifest.wall_clock["estimators"] = time.time() - t0

    manifest.write(out_dir / "manifest.json")
    return manifest


def _load_field(cfg, field_hash):
    cache = cache_dir(cfg) / f"field_{field_hash}.clqg"
    if cache.exists():
        return read_field_cache(cache)
    return sample_field_ladder(
        cfg.kernel_spec(), cfg.grid_spec(), cfg.ladder(), cfg["seed"], cfg["synth_wrap_tol"]
    )


def _make_measure(fl, kind, j, beta):
    if kind == SENETA_HEYDE:
        return seneta_heyde_measure(fl, j)
    if kind == DERIVATIVE:
        return derivative_measure(fl, j)
    return truncated_measure(fl, j, beta)


def _pipeline_clock(cfg, fl):
    g = fl.grid.window
    center = [(g.x0 + g.x1) / 2.0, (g.y0 + g.y1) / 2.0]
    dt = cfg["path_dt"] or fl.grid.dx**2 / 4.0
    bm = simulate_bm(center, cfg["path_t"], dt, _replica_seed(cfg["seed"], 5))
    return clock_derivative(fl, bm, fl.ladder.J, beta=cfg["measure_beta"])


def _run_estimators(cfg, fl):
    records = []
    threads = cfg["threads"]
    beta = cfg["measure_beta"]
    J = fl.ladder.J
    seed = cfg["seed"]
    if "spectrum" in cfg["estimators"]:
        qs = np.asarray(cfg["spectrum_q"])

        def one(r):
            f = sample_field_ladder(
                cfg.kernel_spec(), cfg.grid_spec(), cfg.ladder(), _replica_seed(seed, 10_000 + r), cfg["synth_wrap_tol"]
            )
            return multifractal_spectrum(truncated_measure(f, J, beta), qs)

        agg = aggregate_spectra(ordered_replica_map(one, cfg["replicas"], threads))
        for q, xi, se in zip(agg["qs"], agg["xi_hat"], agg["se"]):
            target = 4.0 * q - 2.0 * q * q
            records.append(
                record(
                    "spectrum",
                    {"q": float(q), "replicas": cfg["replicas"]},
                    float(xi),
                    float(se),
                    target,
                    "PASS" if abs(xi - target) <= 0.15 else "FAIL",
                )
            )
    if "envelope" in cfg["estimators"]:
        rep = bessel_envelope(
            fl,
            truncated_measure(fl, J, beta),
            cfg["envelope_chi"],
            n_points=cfg["envelope_points"],
            seed=_replica_seed(seed, 21),
        )
        ok = rep.R_star is not None and rep.coverage_mass[list(rep.R_grid).index(rep.R_star)] > max(
            rep.coverage_uniform[list(rep.R_grid).index(rep.R_star)], 0.9 - 1e-12
        )
        records.append(
            record(
                "envelope",
                {"chi": cfg["envelope_chi"], "points": cfg["envelope_points"]},
                rep.R_star if rep.R_star is not None else -1,
                0.0,
                16,
                "PASS" if ok else "FAIL",
            )
        )
    if "resolvent" in cfg["estimators"]:
        g = fl.grid.window
        center = [(g.x0 + g.x1) / 2.0, (g.y0 + g.y1) / 2.0]
        for lam in cfg["resolvent_lambda"]:
            res = resolvent_estimate(
                fl,
                lambda p: np.ones(len(p)),
                center,
                lam,
                cfg["resolvent_paths"],
                _replica_seed(seed, 31),
                beta=beta,
            )
            err = abs(lam * res["estimate"] - 1.0)
            tol = 3.0 * lam * res["se"] + 1e-9
            records.append(
                record(
                    "resolvent",
                    {"lambda": lam, "paths": cfg["resolvent_paths"]},
                    res["estimate"],
                    res["se"],
                    1.0 / lam,
                    "PASS" if err <= tol else "FAIL",
                )
            )
    if "invariance" in cfg["estimators"]:
        for t in cfg["invariance_t"]:
            out = invariance_test(
                fl, t, cfg["invariance_trajectories"], _replica_seed(seed, 41), beta=beta
            )
            records.append(
                record(
                    "invariance",
                    {"t": t, "trajectories": cfg["invariance_trajectories"]},
                    out["statistic"],
                    0.0,
                    out["null_quantile"],
                    "PASS" if out["inside"] else "FAIL",
                )
            )
    return records


def collate_report(directory) -> list:
    """Collect estimator records from results_*.jsonl files under a directory."""
    rows = []
    d = Path(directory)
    if not d.exists():
        return rows
    for path in sorted(d.glob("results_*.jsonl")):
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append(json.loads(line))
    return rows

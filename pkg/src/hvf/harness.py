"""Experiment configuration, data collection and benchmark orchestration.

Configs are INI files read with :mod:`configparser`, one section per component
(``[geometry]``, ``[raster]``, ``[mpc]``, ``[hvf]``, ``[run]``). Every key has a
default, so an empty file is a valid config; unknown keys are an error.
``ExperimentConfig.config_hash`` is the SHA-256 prefix of the canonical text
and names the run directory, which makes reruns land in the same place.

Benchmarks are paired: trial ``i`` of every cell uses scene seed
``base_seed + i``, so all methods and sweep settings face the same scenes.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import maze_env
from .cem import CemConfig
from .dynamics import (DynamicsModel, InteractionDataset, OracleDynamics, SurrogateDynamics,
                       fit_surrogate)
from .generative import FreeSpaceDecoder
from .hierarchy import HvfConfig, execute_plan, optimize_subgoals, oracle_plan
from .maze_env import Difficulty, Geometry
from .mpc import MpcConfig
from .raster import RasterConfig, render, write_ppm

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "ResultTable",
    "collect",
    "run_benchmark",
    "run_ablation",
    "METHODS",
    "ABLATIONS",
]

log = logging.getLogger(__name__)

METHODS = ("no_subgoal", "hvf", "gt_bottleneck")
ABLATIONS = ("num_subgoals", "max_vs_mean", "sample_quantity", "planning_horizon")

# key -> (default text, section); order here is the canonical order
_SCHEMA: dict[str, tuple[str, str]] = {
    "wall_x_ranges": ("0.28:0.38,0.60:0.72", "geometry"),
    "gap_center_range": ("0.15:0.85", "geometry"),
    "gap_half_width": ("0.07", "geometry"),
    "wall_thickness": ("0.04", "geometry"),
    "a_max": ("0.1", "geometry"),
    "success_radius": ("0.05", "geometry"),
    "spawn_margin": ("0.02", "geometry"),
    "resolution": ("32", "raster"),
    "blob_px": ("auto", "raster"),
    "goal_marker_px": ("4", "raster"),
    "horizon": ("5", "mpc"),
    "samples": ("200", "mpc"),
    "elites": ("40", "mpc"),
    "mpc_iters": ("5", "mpc"),
    "std_threshold": ("0.001", "mpc"),
    "search_samples": ("64", "hvf"),
    "search_elites": ("13", "hvf"),
    "search_iters": ("2", "hvf"),
    "num_subgoals": ("2", "hvf"),
    "aggregate_mode": ("max", "hvf"),
    "outer_samples": ("200", "hvf"),
    "outer_elites": ("40", "hvf"),
    "outer_iters": ("5", "hvf"),
    "latent_dim": ("8", "hvf"),
    "subgoal_steps": ("10", "hvf"),
    "total_steps": ("50", "hvf"),
    "stop_threshold": ("auto", "hvf"),
    "dynamics": ("oracle", "run"),
    "dataset": ("", "run"),
    "collect_episodes": ("500", "run"),
    "collect_horizon": ("50", "run"),
    "surrogate_k": ("8", "run"),
    "trials": ("100", "run"),
    "base_seed": ("0", "run"),
    "out": ("runs", "run"),
}


def _pair(text: str) -> tuple[float, float]:
    lo, hi = text.split(":")
    return float(lo), float(hi)


def _auto(text: str, cast):
    return None if text == "auto" else cast(text)


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: Geometry = Geometry()
    raster: RasterConfig = RasterConfig()
    mpc: MpcConfig = MpcConfig()
    hvf: HvfConfig = HvfConfig()
    latent_dim: int = 8
    dynamics: str = "oracle"
    dataset: str = ""
    collect_episodes: int = 500
    collect_horizon: int = 50
    surrogate_k: int = 8
    trials: int = 100
    base_seed: int = 0
    out: str = "runs"
    values: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.dynamics not in ("oracle", "surrogate"):
            raise ValueError(f"dynamics must be 'oracle' or 'surrogate', got {self.dynamics!r}")
        if self.hvf.exec_mpc != self.mpc:
            object.__setattr__(self, "hvf", self.hvf.with_(exec_mpc=self.mpc))
        if not self.values:
            defaults = {k: v for k, (v, _) in _SCHEMA.items()}
            if self != self.from_values(defaults):
                raise ValueError("non-default configs must be built with from_values/from_text/override")
            object.__setattr__(self, "values", defaults)

    # ---- text round trip

    @classmethod
    def from_values(cls, values: dict[str, str]) -> "ExperimentConfig":
        unknown = set(values) - set(_SCHEMA)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        v = {k: str(values.get(k, d)).strip() for k, (d, _) in _SCHEMA.items()}
        geometry = Geometry(
            wall_x_ranges=tuple(_pair(p) for p in v["wall_x_ranges"].split(",")),
            gap_center_range=_pair(v["gap_center_range"]),
            gap_half_width=float(v["gap_half_width"]),
            wall_thickness=float(v["wall_thickness"]),
            a_max=float(v["a_max"]),
            success_radius=float(v["success_radius"]),
            spawn_margin=float(v["spawn_margin"]),
        )
        raster = RasterConfig(int(v["resolution"]), _auto(v["blob_px"], int), int(v["goal_marker_px"]))
        thr = float(v["std_threshold"])
        mpc = MpcConfig(horizon=int(v["horizon"]), num_samples=int(v["samples"]),
                        num_elites=int(v["elites"]), max_iters=int(v["mpc_iters"]), std_threshold=thr)
        search = mpc.with_(num_samples=int(v["search_samples"]), num_elites=int(v["search_elites"]),
                           max_iters=int(v["search_iters"]))
        hvf = HvfConfig(
            num_subgoals=int(v["num_subgoals"]),
            outer=CemConfig(int(v["outer_samples"]), int(v["outer_elites"]), int(v["outer_iters"]), thr),
            aggregate_mode=v["aggregate_mode"],
            search_mpc=search,
            exec_mpc=mpc,
            subgoal_steps=int(v["subgoal_steps"]),
            total_steps=int(v["total_steps"]),
            stop_threshold=_auto(v["stop_threshold"], float),
        )
        return cls(geometry, raster, mpc, hvf, int(v["latent_dim"]), v["dynamics"], v["dataset"],
                   int(v["collect_episodes"]), int(v["collect_horizon"]), int(v["surrogate_k"]),
                   int(v["trials"]), int(v["base_seed"]), v["out"], v)

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ValueError(f"malformed config: {exc}") from exc
        values = {}
        for section in parser.sections():
            for key, val in parser.items(section):
                if key in _SCHEMA and _SCHEMA[key][1] != section:
                    raise ValueError(f"key {key!r} belongs in [{_SCHEMA[key][1]}], not [{section}]")
                values[key] = val
        return cls.from_values(values)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for key, (_, section) in _SCHEMA.items():
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, key, self.values[key])
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @property
    def config_hash(self) -> str:
        # the output location does not change what is computed
        text = "".join(ln + "\n" for ln in self.to_text().splitlines() if not ln.startswith("out ="))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def override(self, **kw) -> "ExperimentConfig":
        """New config with some flat keys replaced (values given as in the file)."""
        values = dict(self.values)
        values.update({k: str(v) for k, v in kw.items() if v is not None})
        return self.from_values(values)

    def full_scale(self) -> "ExperimentConfig":
        """64x64 frames, full inner planner during search, surrogate dynamics."""
        v = self.values
        return self.override(resolution=64, blob_px="auto", dynamics="surrogate",
                             search_samples=v["samples"], search_elites=v["elites"],
                             search_iters=v["mpc_iters"])

    @property
    def run_id(self) -> str:
        return f"{self.config_hash}-s{self.base_seed}"


# --------------------------------------------------------------------------
# data collection


def collect(config: ExperimentConfig, episodes: int, horizon: int, seed: int) -> InteractionDataset:
    """Uniform random-action rollouts on freshly sampled scenes.

    Start difficulties cycle through easy/medium/hard so every section is
    covered. Actions are uniform on ``[-a_max, a_max]^2``.
    """
    if episodes < 1 or horizon < 1:
        raise ValueError("episodes and horizon must be >= 1")
    geo = config.geometry
    rng = np.random.default_rng(seed)
    diffs = list(Difficulty)
    n_walls = len(geo.wall_x_ranges)
    wall_x = np.empty((episodes, n_walls))
    gap_y = np.empty((episodes, n_walls))
    goals = np.empty((episodes, 2))
    positions = np.empty((episodes, horizon + 1, 2))
    actions = rng.uniform(-geo.a_max, geo.a_max, size=(episodes, horizon, 2))
    for e in range(episodes):
        scene = maze_env.sample_scene(diffs[e % len(diffs)], rng, geo)
        wall_x[e] = scene.layout.wall_x
        gap_y[e] = scene.layout.gap_center_y
        goals[e] = scene.goal
        positions[e, 0] = scene.agent
        for t in range(horizon):
            positions[e, t + 1] = maze_env.step_batch(scene.layout, positions[e, t][None], actions[e, t][None],
                                                      geo.a_max, geo.contact_eps)[0]
    return InteractionDataset(wall_x, gap_y, goals, positions, actions, geo, seed)


def build_model(config: ExperimentConfig) -> DynamicsModel:
    if config.dynamics == "oracle":
        return OracleDynamics(config.geometry, config.raster)
    if config.dataset:
        data = InteractionDataset.load(config.dataset)
        ref = config.dataset
    else:
        data = collect(config, config.collect_episodes, config.collect_horizon, config.base_seed)
        ref = f"collect:{data.content_hash()[:16]}"
    model = fit_surrogate(data, k=config.surrogate_k, dataset_ref=ref)
    log.info("surrogate fitted on %d transitions, holdout error %.4g", data.num_transitions,
             model.holdout_error)
    return SurrogateDynamics(model, config.raster)


# --------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class ResultRow:
    method: str
    difficulty: str
    k: int
    mode: str
    samples: int
    horizon: int
    success_rate: float
    mean_steps: float
    wall_clock_s: float
    trials: int = 0
    successes: int = 0
    complete: bool = True
    sweep: str = "benchmark"

    def __post_init__(self):
        if not 0.0 <= self.success_rate <= 1.0:
            raise ValueError(f"success_rate out of range: {self.success_rate}")


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def extend(self, other: "ResultTable") -> None:
        self.rows.extend(other.rows)

    def find(self, **kw) -> ResultRow:
        hits = [r for r in self.rows if all(getattr(r, k) == v for k, v in kw.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {kw}")
        return hits[0]


# --------------------------------------------------------------------------
# episodes


@dataclass(frozen=True)
class Cell:
    method: str
    difficulty: str
    hvf: HvfConfig
    sweep: str = "benchmark"

    @property
    def k(self) -> int:
        return 0 if self.method == "no_subgoal" else self.hvf.num_subgoals

    @property
    def mode(self) -> str:
        return self.hvf.aggregate_mode if self.method == "hvf" else "none"

    @property
    def label(self) -> str:
        mpc = self.hvf.exec_mpc
        return f"{self.method}-{self.difficulty}-k{self.k}-{self.mode}-d{mpc.num_samples}-h{mpc.horizon}"


# models are built once per process; workers receive the config and rebuild
_MODELS: dict[str, tuple[DynamicsModel, FreeSpaceDecoder]] = {}


def _models(config: ExperimentConfig):
    key = config.config_hash
    if key not in _MODELS:
        _MODELS[key] = (build_model(config), FreeSpaceDecoder(config.latent_dim, config.raster))
    return _MODELS[key]


def scene_for(config: ExperimentConfig, difficulty: str, trial: int) -> maze_env.MazeState:
    return maze_env.sample_scene(difficulty, np.random.default_rng(config.base_seed + trial), config.geometry)


def run_episode(config: ExperimentConfig, cell: Cell, trial: int, frames_dir: str | None = None) -> dict:
    """One seeded episode; exceptions are caught and reported in the record."""
    seed = config.base_seed + trial
    rec = {"seed": seed, "trial": trial, "method": cell.method, "difficulty": cell.difficulty,
           "k": cell.k, "aggregate_mode": cell.mode}
    try:
        model, gen = _models(config)
        scene = scene_for(config, cell.difficulty, trial)
        goal = render(scene.with_agent(scene.goal), config.raster)
        rng = np.random.default_rng((seed, 1))
        t0 = time.perf_counter()
        if cell.method == "gt_bottleneck":
            plan = oracle_plan(model, gen, scene, goal, cell.hvf, rng)
            hvf = cell.hvf.with_(num_subgoals=plan.num_subgoals)
        else:
            hvf = cell.hvf.with_(num_subgoals=cell.k)
            plan = optimize_subgoals(model, gen, scene, goal, hvf, rng)
        ep = execute_plan(scene, model, plan, hvf, rng)
        elapsed = time.perf_counter() - t0
        rec.update(
            k=plan.num_subgoals,
            scene={"agent": list(scene.agent), "goal": list(scene.goal),
                   "wall_x": list(scene.layout.wall_x), "gap_y": list(scene.layout.gap_center_y)},
            latents=plan.latents.tolist(),
            positions=plan.positions.tolist(),
            segment_costs=plan.segment_costs,
            optimized_cost=plan.optimized_cost,
            steps=ep.steps,
            phase_steps=ep.phase_steps,
            success=bool(ep.success),
            wall_clock_s=elapsed,
        )
        if frames_dir is not None:
            d = os.path.join(frames_dir, f"{cell.label}-t{trial}")
            for i, f in enumerate(plan.subgoals):
                write_ppm(os.path.join(d, f"subgoal_{i}.ppm"), f)
            for t, s in enumerate(ep.trajectory):
                write_ppm(os.path.join(d, f"{t}.ppm"), render(s, config.raster))
    except Exception as exc:  # isolate per-episode failures
        log.exception("episode %s trial %d failed", cell.label, trial)
        rec.update(success=False, error=f"{type(exc).__name__}: {exc}")
    return rec


def _job(args):
    return run_episode(*args)


def _workers() -> int:
    cap = os.environ.get("HVF_WORKERS")
    n = os.cpu_count() or 1
    return max(1, min(n, int(cap))) if cap else n


def _run_cells(config: ExperimentConfig, cells: list[Cell], dump_frames: bool = False,
               records_path: str | None = None) -> ResultTable:
    frames_dir = os.path.join(config.out, config.run_id) if dump_frames else None
    jobs = [(config, c, t, frames_dir) for c in cells for t in range(config.trials)]
    workers = min(_workers(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        records = [_job(j) for j in jobs]

    table = ResultTable()
    for i, cell in enumerate(cells):
        recs = records[i * config.trials:(i + 1) * config.trials]
        ok = [r for r in recs if "error" not in r]
        succ = sum(r["success"] for r in ok)
        k = ok[0]["k"] if ok else cell.k
        mpc = cell.hvf.exec_mpc
        table.rows.append(ResultRow(
            cell.method, cell.difficulty, k, cell.mode, mpc.num_samples, mpc.horizon,
            succ / len(ok) if ok else 0.0,
            float(np.mean([r["steps"] for r in ok])) if ok else 0.0,
            float(sum(r["wall_clock_s"] for r in ok)),
            len(ok), succ, len(ok) == len(recs), cell.sweep))
        if len(ok) < len(recs):
            log.warning("cell %s incomplete: %d of %d trials failed", cell.label, len(recs) - len(ok), len(recs))
    if records_path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(records_path)), exist_ok=True)
        with open(records_path, "a") as fh:
            for r in records:
                r = {k: v for k, v in r.items() if k != "wall_clock_s"}
                fh.write(json.dumps(r, sort_keys=True) + "\n")
    return table


def run_benchmark(config: ExperimentConfig, methods: Iterable[str] = METHODS,
                  difficulties: Iterable[str] = ("easy", "medium", "hard"), *,
                  dump_frames: bool = False, records_path: str | None = None) -> ResultTable:
    """Paired-scene comparison of methods on each difficulty."""
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    cells = [Cell(m, Difficulty(d).value, config.hvf) for d in difficulties for m in methods]
    return _run_cells(config, cells, dump_frames, records_path)


def ablation_cells(which: str, config: ExperimentConfig) -> list[Cell]:
    hvf = config.hvf
    if which == "num_subgoals":
        return [Cell("hvf", "hard", hvf.with_(num_subgoals=k), which) for k in (0, 1, 2, 3, 5, 10)]
    if which == "max_vs_mean":
        return [Cell("hvf", "hard", hvf.with_(num_subgoals=k, aggregate_mode=m), which)
                for m in ("max", "mean") for k in (1, 2)]
    if which == "sample_quantity":
        cells = []
        for d in (200, 1000):
            ex = hvf.exec_mpc.with_(num_samples=d, num_elites=max(1, d // 5))
            cells += [Cell("hvf", "hard", hvf.with_(num_subgoals=k, exec_mpc=ex), which) for k in (0, 1, 2)]
        return cells
    if which == "planning_horizon":
        cells = []
        for h in (5, 10, 15):
            h_cfg = hvf.with_(search_mpc=hvf.search_mpc.with_(horizon=h), exec_mpc=hvf.exec_mpc.with_(horizon=h))
            cells += [Cell("hvf", "hard", h_cfg.with_(num_subgoals=k), which) for k in (0, 1, 2)]
        return cells
    raise ValueError(f"unknown ablation {which!r}; expected one of {ABLATIONS}")


def run_ablation(which: str, config: ExperimentConfig, *, dump_frames: bool = False,
                 records_path: str | None = None) -> ResultTable:
    """Sweep one axis on the hard difficulty, other settings at their config values."""
    return _run_cells(config, ablation_cells(which, config), dump_frames, records_path)

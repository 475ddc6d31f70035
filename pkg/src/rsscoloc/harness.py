"""Network layouts, Monte Carlo experiments, sweeps and timing benchmarks.

Experiments are described by a flat ``key = value`` spec (see
:data:`DEFAULTS` for the keys). Every run is replayable from the master
seed: run ``k`` of a spec uses seed ``seed + k`` for both the measurement
noise and the engine, the same for every sweep value, so sweep points
share their random numbers.
"""

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import Delaunay

from ._textio import config_hash
from .belief_store import Priors, Rectangle
from .errors import ConfigError, FormatError
from .estimator import alpha_point_estimate, compute_metrics, position_estimates, position_rmse
from .msgpass import (
    ALGORITHMS,
    EngineConfig,
    PositionMessage,
    RunResult,
    run,
    sample_product_ais,
    sample_product_is,
)
from .rss_model import (
    ChannelParams,
    MeasurementSet,
    NetworkGeometry,
    Node,
    Position,
    log_normalizer_z,
    read_measurements,
    read_network,
    synthesize_measurements,
)

NETWORK2_AGENTS = (
    (8.318573, 12.067195),
    (7.0, 28.0),
    (10.985717, 2.504516),
    (15.0, 33.0),
    (14.071792, 18.409607),
    (18.502847, 3.062930),
    (20.322322, 31.614010),
    (20.671522, 13.566139),
    (28.442789, 24.064806),
    (28.936394, 9.749019),
)
NETWORK_AREA = Rectangle(0.0, 0.0, 35.0, 35.0)

# Reconstructed layout with three agents (ids 3, 4, 6) outside the anchor hull.
NETWORK1_LIKE_ANCHORS = ((6.0, 6.0), (29.0, 6.0), (6.0, 29.0), (29.0, 29.0), (17.5, 17.5))
NETWORK1_LIKE_AGENTS = (
    (8.318573, 12.067195),
    (7.0, 28.0),
    (10.985717, 2.504516),
    (15.0, 33.0),
    (14.071792, 18.409607),
    (18.502847, 3.062930),
    (20.322322, 26.5),
    (20.671522, 13.566139),
    (28.442789, 24.064806),
    (28.936394, 9.749019),
)
DEMO_RANDOM_SEED = 20170101
BUNDLED = ("network2_agents", "network1_like", "demo_random")


def corner_center_anchors(rect: Rectangle) -> np.ndarray:
    cx = 0.5 * (rect.xmin + rect.xmax)
    cy = 0.5 * (rect.ymin + rect.ymax)
    return np.array(
        [(rect.xmin, rect.ymin), (rect.xmax, rect.ymin), (rect.xmin, rect.ymax), (rect.xmax, rect.ymax), (cx, cy)]
    )


def generate_random_network(
    rng: np.random.Generator,
    n_agents: int,
    n_anchors: int,
    rect: Rectangle = NETWORK_AREA,
    comm_range: float = 20.0,
) -> NetworkGeometry:
    """Uniform agents; anchors on corners plus center when ``n_anchors == 5``.

    Agents get ids ``1..n_agents`` and anchors follow.
    """
    if n_agents < 1 or n_anchors < 1:
        raise ConfigError("need at least one agent and one anchor")
    agents = rect.sample(rng, n_agents)
    anchors = corner_center_anchors(rect) if n_anchors == 5 else rect.sample(rng, n_anchors)
    return NetworkGeometry.from_arrays(agents, anchors, comm_range)


def load_bundled_network(name: str, comm_range: float = 20.0) -> NetworkGeometry:
    """Bundled layouts: ``network2_agents``, ``network1_like`` and ``demo_random``."""
    if name == "network2_agents":
        return NetworkGeometry.from_arrays(NETWORK2_AGENTS, corner_center_anchors(NETWORK_AREA), comm_range)
    if name == "network1_like":
        return NetworkGeometry.from_arrays(NETWORK1_LIKE_AGENTS, NETWORK1_LIKE_ANCHORS, comm_range)
    if name == "demo_random":
        return generate_random_network(np.random.default_rng(DEMO_RANDOM_SEED), 10, 5, NETWORK_AREA, comm_range)
    raise ConfigError(f"unknown bundled network {name!r}; expected one of {BUNDLED}")


def inside_anchor_hull(geometry: NetworkGeometry) -> np.ndarray:
    """Boolean per agent (ascending id): inside the convex hull of the anchors."""
    anchors = geometry.positions(geometry.anchor_ids)
    agents = geometry.positions(geometry.agent_ids)
    if len(anchors) < 3:
        return np.zeros(len(agents), dtype=bool)
    return Delaunay(anchors).find_simplex(agents) >= 0


def position_prior(geometry: NetworkGeometry) -> Rectangle:
    """Bounding rectangle of all nodes."""
    return Rectangle(*geometry.bounding_box())


# -- experiment specs ----------------------------------------------------------

SWEEP_AXES = ("alpha_true", "comm_range", "sigma")

DEFAULTS: Dict[str, str] = {
    "network": "network2_agents",
    "network_file": "",
    "measurements_file": "",
    "n_agents": "10",
    "n_anchors": "5",
    "algorithm": "spawn-ais",
    "L": "1000",
    "R": "100",
    "n_max": "10",
    "seed": "0",
    "runs": "1",
    "sigma": "3.0",
    "comm_range": "20.0",
    "alpha_true": "3.5",
    "alpha_prior_lo": "1.5",
    "alpha_prior_hi": "6.0",
    "ref_power": "-30.0",
    "ref_distance": "1.0",
    "is_proposal": "mixture_mean",
    "schedule": "sequential",
    "ais_normalizer_correction": "true",
    "ais_rect_labels": "true",
    "censor_uninformed": "false",
    "snapshots": "final",
    "sweep.axis": "",
    "sweep.values": "",
}


def _parse_bool(key: str, text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def _parse_number(key: str, text: str, kind=float):
    try:
        value = kind(text)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind.__name__}, got {text!r}") from None
    if kind is float and not math.isfinite(value):
        raise ConfigError(f"{key}: must be finite")
    return value


def _parse_values(text: str) -> Tuple[float, ...]:
    t = text.strip()
    if not t:
        return ()
    if t.startswith("{") and t.endswith("}") and ".." in t:
        lo, hi = t[1:-1].split("..", 1)
        lo_i, hi_i = int(lo), int(hi)
        return tuple(float(v) for v in range(lo_i, hi_i + 1))
    parts = [p for p in t.replace(",", " ").split() if p]
    return tuple(_parse_number("sweep.values", p) for p in parts)


@dataclass(frozen=True)
class ExperimentSpec:
    """Fully resolved experiment description."""

    network: str = "network2_agents"
    network_file: str = ""
    measurements_file: str = ""
    n_agents: int = 10
    n_anchors: int = 5
    algorithm: str = "spawn-ais"
    L: int = 1000
    R: int = 100
    n_max: int = 10
    seed: int = 0
    runs: int = 1
    sigma: float = 3.0
    comm_range: float = 20.0
    alpha_true: float = 3.5
    alpha_prior_lo: float = 1.5
    alpha_prior_hi: float = 6.0
    ref_power: float = -30.0
    ref_distance: float = 1.0
    is_proposal: str = "mixture_mean"
    schedule: str = "sequential"
    ais_normalizer_correction: bool = True
    ais_rect_labels: bool = True
    censor_uninformed: bool = False
    snapshots: str = "final"
    sweep_axis: str = ""
    sweep_values: Tuple[float, ...] = ()

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.algorithm.lower() not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {sorted(ALGORITHMS)}")
        if self.sigma <= 0 or self.comm_range <= 0 or self.ref_distance <= 0:
            raise ConfigError("sigma, comm_range and ref_distance must be positive")
        if self.snapshots not in ("final", "all", "none"):
            raise ConfigError("snapshots must be one of final, all, none")
        if self.sweep_axis:
            if self.sweep_axis not in SWEEP_AXES:
                raise ConfigError(f"sweep.axis must be one of {SWEEP_AXES}")
            if not self.sweep_values:
                raise ConfigError("sweep.values must be non-empty when sweep.axis is set")
            if list(self.sweep_values) != sorted(self.sweep_values):
                raise ConfigError("sweep.values must be sorted")
        elif self.sweep_values:
            raise ConfigError("sweep.values given without sweep.axis")
        self.engine_config()  # validates L, R, n_max, enums

    def engine_config(self, seed: Optional[int] = None) -> EngineConfig:
        return EngineConfig.from_algorithm(
            self.algorithm,
            L=self.L,
            R=self.R,
            n_max=self.n_max,
            seed=self.seed if seed is None else seed,
            is_proposal=self.is_proposal,
            schedule=self.schedule,
            ais_normalizer_correction=self.ais_normalizer_correction,
            ais_rect_labels=self.ais_rect_labels,
            censor_uninformed=self.censor_uninformed,
        )

    def channel(self) -> ChannelParams:
        return ChannelParams(ref_power_dbm=self.ref_power, ref_distance=self.ref_distance, noise_std=self.sigma)

    def with_value(self, axis: str, value: float) -> "ExperimentSpec":
        return replace(self, **{axis: float(value)}, sweep_axis="", sweep_values=())

    def as_mapping(self) -> Dict[str, str]:
        """Flat ``key -> text`` echo using the spec-file key names."""
        out = {}
        for key in DEFAULTS:
            attr = key.replace("sweep.axis", "sweep_axis").replace("sweep.values", "sweep_values")
            value = getattr(self, attr)
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, tuple):
                text = " ".join(repr(v) for v in value)
            else:
                text = str(value)
            out[key] = text
        return out

    @property
    def hash(self) -> str:
        return config_hash(self.as_mapping())


_INT_KEYS = {"n_agents", "n_anchors", "L", "R", "n_max", "seed", "runs"}
_FLOAT_KEYS = {"sigma", "comm_range", "alpha_true", "alpha_prior_lo", "alpha_prior_hi", "ref_power", "ref_distance"}
_BOOL_KEYS = {"ais_normalizer_correction", "ais_rect_labels", "censor_uninformed"}


def parse_spec_text(text: str, source: str = "<spec>", allowed: Optional[Iterable[str]] = None) -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment line.

    Keys outside ``allowed`` (default: the keys of :data:`DEFAULTS`) raise
    :class:`ConfigError`.
    """
    allowed = set(DEFAULTS if allowed is None else allowed)
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load_spec_file(path, allowed: Optional[Iterable[str]] = None) -> Dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    return parse_spec_text(path.read_text(encoding="utf-8"), str(path), allowed)


def parse_overrides(pairs: Sequence[str], allowed: Optional[Iterable[str]] = None) -> Dict[str, str]:
    allowed = set(DEFAULTS if allowed is None else allowed)
    out = {}
    for item in pairs:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in override")
        out[key] = value
    return out


def build_spec(*layers: Mapping[str, str]) -> ExperimentSpec:
    """Resolve :data:`DEFAULTS` updated by each mapping in turn (later wins)."""
    merged = dict(DEFAULTS)
    for layer in layers:
        for key, value in layer.items():
            if key not in DEFAULTS:
                raise ConfigError(f"unknown key {key!r}")
            merged[key] = str(value)
    kwargs = {}
    for key, text in merged.items():
        attr = key.replace(".", "_")
        if key in _INT_KEYS:
            kwargs[attr] = _parse_number(key, text, int)
        elif key in _FLOAT_KEYS:
            kwargs[attr] = _parse_number(key, text)
        elif key in _BOOL_KEYS:
            kwargs[attr] = _parse_bool(key, text)
        elif key == "sweep.values":
            kwargs[attr] = _parse_values(text)
        else:
            kwargs[attr] = text
    return ExperimentSpec(**kwargs)


# -- single runs and experiments ---------------------------------------------


def spec_geometry(spec: ExperimentSpec, run_seed: int) -> NetworkGeometry:
    if spec.network_file:
        return read_network(spec.network_file, comm_range=spec.comm_range)
    if spec.network == "random":
        rng = np.random.default_rng(np.random.SeedSequence(run_seed, spawn_key=(8,)))
        return generate_random_network(rng, spec.n_agents, spec.n_anchors, NETWORK_AREA, spec.comm_range)
    return load_bundled_network(spec.network, spec.comm_range)


def spec_measurements(spec: ExperimentSpec, geometry: NetworkGeometry, run_seed: int) -> MeasurementSet:
    if spec.measurements_file:
        return read_measurements(spec.measurements_file)
    rng = np.random.default_rng(np.random.SeedSequence(run_seed, spawn_key=(7,)))
    return synthesize_measurements(rng, geometry, spec.channel(), spec.alpha_true)


def spec_priors(spec: ExperimentSpec, geometry: NetworkGeometry) -> Priors:
    return Priors(position_prior(geometry), spec.alpha_prior_lo, spec.alpha_prior_hi)


@dataclass
class SingleRun:
    run_index: int
    seed: int
    alpha_hat: float
    alpha_tied: bool
    estimates: np.ndarray
    truths: np.ndarray
    rmse_by_iteration: List[float]
    divergences: int
    runtime: float
    result: Optional[RunResult] = field(default=None, repr=False)


def run_single(spec: ExperimentSpec, run_index: int = 0, keep_result: bool = False, track_rmse: bool = True) -> SingleRun:
    """Synthesize (or load) data for run ``run_index`` and localize it."""
    seed = spec.seed + run_index
    geometry = spec_geometry(spec, seed)
    measurements = spec_measurements(spec, geometry, seed)
    t0 = time.perf_counter()
    result = run(spec.engine_config(seed), geometry, measurements, spec.channel(), spec_priors(spec, geometry))
    runtime = time.perf_counter() - t0
    agents = geometry.agent_ids
    truths = geometry.positions(agents)
    estimates = position_estimates(result.final.beliefs, agents)
    if track_rmse:
        rmse = [position_rmse(position_estimates(rec.beliefs, agents), truths) for rec in result.history[1:]]
    else:
        rmse = [position_rmse(estimates, truths)]
    a = alpha_point_estimate(result.final.alpha_belief)
    return SingleRun(
        run_index, seed, a.value, a.tied, estimates, truths, rmse, result.diverged, runtime, result if keep_result else None
    )


SWEEP_COLUMNS = ("sweep_axis", "sweep_value", "runs", "mse_alpha", "bias_alpha", "rmse", "divergences", "seed", "config_hash")
RUN_COLUMNS = ("sweep_value", "run_index", "run_seed", "alpha_hat", "alpha_tied", "rmse", "divergences", "config_hash")


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: List[dict]
    runs: List[dict]


def run_experiment(spec: ExperimentSpec, include_timings: bool = False, progress=None) -> ExperimentResult:
    """One aggregated row per sweep value (a single row without a sweep).

    Rows carry the master seed and the spec hash; the per-run table adds
    the run seed so that any single run can be replayed. ``runtime_s`` is
    only emitted with ``include_timings`` because it is not reproducible.
    """
    axis = spec.sweep_axis
    values = spec.sweep_values if axis else (None,)
    rows, runs = [], []
    for value in values:
        sub = spec.with_value(axis, value) if axis else spec
        results = []
        for k in range(spec.runs):
            single = run_single(sub, k, track_rmse=False)
            results.append(single)
            if progress is not None:
                progress(value, k, single)
        truth = sub.alpha_true
        m = compute_metrics(
            [s.alpha_hat for s in results],
            truth,
            np.stack([s.estimates for s in results]),
            np.stack([s.truths for s in results]),
        )
        shown = value if axis else ""
        row = {
            "sweep_axis": axis or "none",
            "sweep_value": shown,
            "runs": spec.runs,
            "mse_alpha": m.mse_alpha,
            "bias_alpha": m.bias_alpha,
            "rmse": m.rmse_positions,
            "divergences": sum(s.divergences for s in results),
            "seed": spec.seed,
            "config_hash": spec.hash,
        }
        if include_timings:
            row["runtime_s"] = sum(s.runtime for s in results)
        rows.append(row)
        for s in results:
            runs.append(
                {
                    "sweep_value": shown,
                    "run_index": s.run_index,
                    "run_seed": s.seed,
                    "alpha_hat": s.alpha_hat,
                    "alpha_tied": int(s.alpha_tied),
                    "rmse": s.rmse_by_iteration[-1],
                    "divergences": s.divergences,
                    "config_hash": spec.hash,
                }
            )
    return ExperimentResult(spec, rows, runs)


# -- complexity benchmark ------------------------------------------------------


def bench_instance(L: int, n_neighbors: int = 4, alpha: float = 3.5, sigma: float = 3.0, seed: int = 0):
    """Fixed instance: agent at the area center, ``n_neighbors`` neighbors on a
    circle of radius 10 with Gaussian beliefs (std 1) and alpha draws from a
    narrow grid belief around ``alpha``.
    """
    rng = np.random.default_rng(seed)
    params = ChannelParams(noise_std=sigma)
    center = np.array([17.5, 17.5])
    msgs = []
    for k in range(n_neighbors):
        ang = 2.0 * math.pi * k / n_neighbors
        pos = center + 10.0 * np.array([math.cos(ang), math.sin(ang)])
        d = 10.0
        r = params.ref_power_dbm - 10.0 * alpha * math.log10(d) + sigma * rng.standard_normal()
        sources = pos + rng.standard_normal((L, 2))
        alphas = alpha + 0.05 * rng.standard_normal(L)
        log_z = log_normalizer_z(r, alphas, params)
        w = np.exp(log_z - log_z.max())
        msgs.append(PositionMessage(1, k + 2, r, params, w / w.sum(), sources, alphas, log_z))
    return msgs, NETWORK_AREA


@dataclass
class BenchResult:
    L: List[int]
    is_times: List[float]
    ais_times: List[float]
    slope_is: float
    slope_ais: float


def loglog_slope(L: Sequence[int], t: Sequence[float]) -> float:
    return float(np.polyfit(np.log(np.asarray(L, dtype=float)), np.log(np.asarray(t, dtype=float)), 1)[0])


def bench_belief_update(L_values: Sequence[int] = (250, 500, 1000, 2000), repeats: int = 3, n_neighbors: int = 4, seed: int = 0) -> BenchResult:
    """Median wall-clock of one IS and one AIS belief update per ``L``."""
    if len(L_values) < 3:
        raise ConfigError("need at least 3 values of L")
    is_t, ais_t = [], []
    for L in L_values:
        msgs, rect = bench_instance(L, n_neighbors, seed=seed)
        times = {"IS": [], "AIS": []}
        for rep in range(repeats):
            rng = np.random.default_rng(seed + rep)
            t0 = time.perf_counter()
            sample_product_is(rng, msgs, rect, L)
            times["IS"].append(time.perf_counter() - t0)
            t0 = time.perf_counter()
            sample_product_ais(rng, msgs, rect, L, rect_labels=True)
            times["AIS"].append(time.perf_counter() - t0)
        is_t.append(float(np.median(times["IS"])))
        ais_t.append(float(np.median(times["AIS"])))
    return BenchResult(list(L_values), is_t, ais_t, loglog_slope(L_values, is_t), loglog_slope(L_values, ais_t))

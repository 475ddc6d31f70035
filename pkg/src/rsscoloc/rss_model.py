"""Network geometry and the log-distance RSS channel.

The received power between nodes ``i`` and ``j`` at distance ``d`` is::

    r_ij = A - 10 * alpha * log10(d / d0) + v,    v ~ N(0, sigma^2)

All functions here are pure; randomness comes in through an explicit
``numpy.random.Generator``.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from ._textio import parse_comment_keys, read_table, write_table
from .errors import ConfigError, DomainError, FormatError

LN10 = math.log(10.0)
MIN_DISTANCE = 1e-6
ROLES = ("agent", "anchor")


class Position(NamedTuple):
    """2-D coordinate in meters."""

    x: float
    y: float


@dataclass(frozen=True)
class Node:
    id: int
    role: str
    position: Position

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigError(f"node {self.id}: role must be one of {ROLES}, got {self.role!r}")
        if not (math.isfinite(self.position[0]) and math.isfinite(self.position[1])):
            raise ConfigError(f"node {self.id}: non-finite position {self.position}")
        object.__setattr__(self, "position", Position(float(self.position[0]), float(self.position[1])))


@dataclass(frozen=True)
class NetworkGeometry:
    """Node layout plus the communication range used to define neighbors."""

    nodes: Tuple[Node, ...]
    comm_range: float

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda n: n.id))
        object.__setattr__(self, "nodes", nodes)
        ids = [n.id for n in nodes]
        if len(set(ids)) != len(ids):
            raise ConfigError("node ids must be unique")
        if not any(n.role == "anchor" for n in nodes):
            raise ConfigError("at least one anchor is required")
        if not self.comm_range > 0:
            raise ConfigError(f"comm_range must be positive, got {self.comm_range}")

    @classmethod
    def from_arrays(cls, agents, anchors, comm_range: float, first_id: int = 1):
        """Agents get ids ``first_id..``, anchors follow."""
        agents = np.atleast_2d(np.asarray(agents, dtype=float)).reshape(-1, 2)
        anchors = np.atleast_2d(np.asarray(anchors, dtype=float)).reshape(-1, 2)
        nodes = []
        k = first_id
        for role, pts in (("agent", agents), ("anchor", anchors)):
            for x, y in pts:
                nodes.append(Node(k, role, Position(x, y)))
                k += 1
        return cls(tuple(nodes), float(comm_range))

    @property
    def ids(self) -> List[int]:
        return [n.id for n in self.nodes]

    @property
    def agent_ids(self) -> List[int]:
        return [n.id for n in self.nodes if n.role == "agent"]

    @property
    def anchor_ids(self) -> List[int]:
        return [n.id for n in self.nodes if n.role == "anchor"]

    def node(self, node_id: int) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def is_anchor(self, node_id: int) -> bool:
        return self.node(node_id).role == "anchor"

    def position(self, node_id: int) -> np.ndarray:
        return np.asarray(self.node(node_id).position, dtype=float)

    def positions(self, ids: Optional[Sequence[int]] = None) -> np.ndarray:
        ids = self.ids if ids is None else ids
        return np.array([self.position(i) for i in ids], dtype=float).reshape(-1, 2)

    def bounding_box(self) -> Tuple[float, float, float, float]:
        p = self.positions()
        return float(p[:, 0].min()), float(p[:, 1].min()), float(p[:, 0].max()), float(p[:, 1].max())

    def with_comm_range(self, comm_range: float) -> "NetworkGeometry":
        return NetworkGeometry(self.nodes, float(comm_range))


@dataclass(frozen=True)
class ChannelParams:
    """Channel constants. Per-node / per-edge overrides are optional.

    ``ref_power_dbm``, ``ref_distance`` and ``noise_std`` are the global
    values; :meth:`for_edge` resolves overrides into a plain instance.
    """

    ref_power_dbm: float = -30.0
    ref_distance: float = 1.0
    noise_std: float = 3.0
    node_ref_power: Mapping[int, float] = field(default_factory=dict)
    edge_noise_std: Mapping[Tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.ref_distance > 0:
            raise ConfigError(f"ref_distance must be positive, got {self.ref_distance}")
        sigmas = [self.noise_std, *self.edge_noise_std.values()]
        if not all(s > 0 for s in sigmas):
            raise ConfigError("all noise_std values must be positive")

    def for_edge(self, i: int, j: int) -> "ChannelParams":
        i, j = min(i, j), max(i, j)
        return ChannelParams(
            ref_power_dbm=float(self.node_ref_power.get(i, self.ref_power_dbm)),
            ref_distance=self.ref_distance,
            noise_std=float(self.edge_noise_std.get((i, j), self.noise_std)),
        )


@dataclass(frozen=True)
class Measurement:
    i: int
    j: int
    r: float
    sigma: Optional[float] = None


@dataclass(frozen=True)
class MeasurementSet:
    """RSS measurements, one per unordered neighbor pair, stored with ``i < j``."""

    edges: Tuple[Measurement, ...]
    diagnostics: Tuple[str, ...] = ()

    def __post_init__(self):
        seen = set()
        for m in self.edges:
            if not m.i < m.j:
                raise ConfigError(f"edge ({m.i},{m.j}) must be stored with i < j")
            if (m.i, m.j) in seen:
                raise ConfigError(f"edge ({m.i},{m.j}) appears twice")
            seen.add((m.i, m.j))

    def __len__(self):
        return len(self.edges)

    def pairs(self) -> List[Tuple[int, int]]:
        return [(m.i, m.j) for m in self.edges]

    def get(self, i: int, j: int) -> Measurement:
        a, b = min(i, j), max(i, j)
        for m in self.edges:
            if m.i == a and m.j == b:
                return m
        raise KeyError((i, j))

    def channel_params(self, base: ChannelParams) -> ChannelParams:
        """``base`` with the per-edge sigma overrides recorded in this set."""
        overrides = dict(base.edge_noise_std)
        overrides.update({(m.i, m.j): m.sigma for m in self.edges if m.sigma is not None})
        return ChannelParams(
            base.ref_power_dbm, base.ref_distance, base.noise_std, dict(base.node_ref_power), overrides
        )


def _distance(xi, xj) -> np.ndarray:
    diff = np.asarray(xi, dtype=float) - np.asarray(xj, dtype=float)
    return np.maximum(np.hypot(diff[..., 0], diff[..., 1]), MIN_DISTANCE)


def rss_mean(A, alpha, d, d0=1.0):
    """Mean received power ``A - 10 alpha log10(d/d0)`` in dBm."""
    d = np.asarray(d, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(d <= 0) or np.any(np.asarray(d0) <= 0):
        raise DomainError("distances d and d0 must be positive")
    if np.any(alpha <= 0):
        raise DomainError("alpha must be positive")
    out = A - 10.0 * alpha * np.log10(d / d0)
    return out[()] if out.ndim == 0 else out


def log_likelihood_distance(r, d, alpha, params: ChannelParams):
    """log N(r; rss_mean(A, alpha, d, d0), sigma^2), broadcasting over d and alpha."""
    sigma = params.noise_std
    d = np.maximum(np.asarray(d, dtype=float), MIN_DISTANCE)
    resid = (r - params.ref_power_dbm) + 10.0 * np.asarray(alpha) * np.log10(d / params.ref_distance)
    return -0.5 * (resid / sigma) ** 2 - math.log(math.sqrt(2.0 * math.pi) * sigma)


def log_likelihood(r, xi, xj, alpha, params: ChannelParams):
    """Gaussian log-density of ``r`` given the two positions and alpha.

    Positions broadcast along leading axes; the distance is clamped at
    ``MIN_DISTANCE``.
    """
    out = log_likelihood_distance(r, _distance(xi, xj), alpha, params)
    return out[()] if np.ndim(out) == 0 else out


def _check_alpha(alpha):
    if np.any(np.asarray(alpha) <= 0):
        raise DomainError("alpha must be positive")


def log_normalizer_z(r, alpha, params: ChannelParams):
    """Natural log of :func:`normalizer_z`; vectorized over ``alpha``."""
    _check_alpha(alpha)
    alpha = np.asarray(alpha, dtype=float)
    c = LN10 / (10.0 * alpha)
    mu_d = c * (params.ref_power_dbm - r) + math.log(params.ref_distance)
    var_d = (params.noise_std * c) ** 2
    return math.log(2.0 * math.pi) + np.log(c) + 2.0 * var_d + 2.0 * mu_d


def normalizer_z(r, alpha, params: ChannelParams):
    """Integral of the likelihood over the plane of one endpoint.

    ``Z = 2 pi c exp(2 sigma_d^2 + 2 mu_d)`` with ``c = ln10 / (10 alpha)``,
    ``mu_d = c (A - r) + ln d0`` and ``sigma_d = c sigma``. It does not depend
    on the other endpoint's position.
    """
    out = np.exp(log_normalizer_z(r, alpha, params))
    return out[()] if np.ndim(out) == 0 else out


def neighbor_sets(measurements: MeasurementSet, node_ids: Sequence[int] = ()):
    """Neighbor index per node and the sorted edge list.

    Returns ``(gamma, edges)`` where ``gamma[i]`` is the sorted list of
    neighbors of ``i`` and ``edges`` lists each pair once with ``i < j``.
    """
    gamma: Dict[int, List[int]] = {i: [] for i in node_ids}
    edges = sorted(measurements.pairs())
    for i, j in edges:
        gamma.setdefault(i, []).append(j)
        gamma.setdefault(j, []).append(i)
    return {k: sorted(v) for k, v in gamma.items()}, edges


def synthesize_measurements(
    rng: np.random.Generator,
    geometry: NetworkGeometry,
    params: ChannelParams,
    alpha_true: float,
) -> MeasurementSet:
    """Draw one RSS value per in-range pair that involves at least one agent.

    Pairs are visited in ascending ``(i, j)`` order so the draws are
    reproducible for a given generator state.
    """
    if not alpha_true > 0:
        raise DomainError("alpha_true must be positive")
    edges = []
    nodes = geometry.nodes
    for a in range(len(nodes)):
        for b in range(a + 1, len(nodes)):
            ni, nj = nodes[a], nodes[b]
            if ni.role == "anchor" and nj.role == "anchor":
                continue
            d = math.dist(ni.position, nj.position)
            if d > geometry.comm_range:
                continue
            p = params.for_edge(ni.id, nj.id)
            mean = rss_mean(p.ref_power_dbm, alpha_true, max(d, MIN_DISTANCE), p.ref_distance)
            r = float(mean + p.noise_std * rng.standard_normal())
            sigma = p.noise_std if (ni.id, nj.id) in params.edge_noise_std else None
            edges.append(Measurement(ni.id, nj.id, r, sigma))
    ms = MeasurementSet(tuple(edges))
    gamma, _ = neighbor_sets(ms, geometry.ids)
    lonely = [i for i in geometry.agent_ids if not gamma[i]]
    if lonely:
        msg = f"agents without neighbors: {lonely}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        ms = MeasurementSet(ms.edges, (msg,))
    return ms


# -- text files --------------------------------------------------------------


def write_network(geometry: NetworkGeometry, path, header: Sequence[str] = ()) -> None:
    hdr = list(header) + [f"# comm_range={geometry.comm_range!r}"]
    rows = [(n.id, n.role, float(n.position.x), float(n.position.y)) for n in geometry.nodes]
    write_table(path, ("id", "role", "x", "y"), rows, hdr)


def read_network(path, comm_range: Optional[float] = None) -> NetworkGeometry:
    """Read ``id,role,x,y`` records; ``comm_range`` falls back to the header comment."""
    records, comments = read_table(path, ("id", "role", "x", "y"))
    try:
        nodes = tuple(
            Node(int(rec["id"]), rec["role"], Position(float(rec["x"]), float(rec["y"])))
            for rec in records
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise FormatError(f"{path}: {exc}") from exc
    if comm_range is None:
        keys = parse_comment_keys(comments)
        if "comm_range" not in keys:
            raise FormatError(f"{path}: comm_range neither given nor recorded in the header")
        comm_range = float(keys["comm_range"])
    return NetworkGeometry(nodes, float(comm_range))


def write_measurements(measurements: MeasurementSet, path, header: Sequence[str] = ()) -> None:
    with_sigma = any(m.sigma is not None for m in measurements.edges)
    cols = ("i", "j", "r_dbm", "sigma") if with_sigma else ("i", "j", "r_dbm")
    rows = []
    for m in measurements.edges:
        row = [m.i, m.j, float(m.r)]
        if with_sigma:
            row.append(float(m.sigma) if m.sigma is not None else "")
        rows.append(row)
    write_table(path, cols, rows, header)


def read_measurements(path) -> MeasurementSet:
    records, _ = read_table(path, ("i", "j", "r_dbm"), optional=("sigma",))
    edges = []
    try:
        for rec in records:
            i, j = int(rec["i"]), int(rec["j"])
            s = rec.get("sigma", "")
            edges.append(Measurement(min(i, j), max(i, j), float(rec["r_dbm"]), float(s) if s else None))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return MeasurementSet(tuple(sorted(edges, key=lambda m: (m.i, m.j))))

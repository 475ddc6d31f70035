"""Belief and message containers, resampling and categorical sampling.

Position beliefs are L equally weighted particles; the path loss exponent
lives on a fixed grid. Position messages are mixtures of normalized
likelihood components (see :class:`PositionMessage`).
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from ._textio import write_table
from .errors import ConfigError, DomainError
from .rss_model import MIN_DISTANCE, ChannelParams, NetworkGeometry, log_likelihood_distance

# densities are floored here before they appear in a denominator
DENSITY_FLOOR = 1e-300
LOG_DENSITY_FLOOR = math.log(DENSITY_FLOOR)
_CHUNK = 1 << 18


class Diagnostics:
    """Collects non-fatal events (fallbacks, divergences) during a run."""

    def __init__(self):
        self.events: List[Tuple[str, str]] = []

    def record(self, kind: str, message: str) -> None:
        self.events.append((kind, message))

    def count(self, kind: Optional[str] = None) -> int:
        return sum(1 for k, _ in self.events if kind is None or k == kind)

    def __repr__(self):
        return f"Diagnostics({len(self.events)} events)"


@dataclass(frozen=True)
class Rectangle:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise ConfigError(f"empty rectangle {self}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (
            (x[..., 0] >= self.xmin)
            & (x[..., 0] <= self.xmax)
            & (x[..., 1] >= self.ymin)
            & (x[..., 1] <= self.ymax)
        )

    def log_density(self, x) -> np.ndarray:
        """Log of the uniform density, ``-inf`` outside."""
        return np.where(self.contains(x), -math.log(self.area), -np.inf)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random((n, 2))
        return np.column_stack(
            (self.xmin + u[:, 0] * (self.xmax - self.xmin), self.ymin + u[:, 1] * (self.ymax - self.ymin))
        )


@dataclass(frozen=True)
class Priors:
    """Uniform position prior on a rectangle and a prior on the alpha grid.

    ``alpha_masses`` (optional) replaces the uniform grid prior; with
    ``alpha_grid`` it allows degenerate priors such as a fixed alpha.
    """

    rect: Rectangle
    alpha_lo: float = 1.5
    alpha_hi: float = 6.0
    alpha_grid: Optional[Tuple[float, ...]] = None
    alpha_masses: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if not 0 < self.alpha_lo < self.alpha_hi:
            raise ConfigError(f"alpha prior interval [{self.alpha_lo}, {self.alpha_hi}] is invalid")

    def grid(self, R: int) -> np.ndarray:
        if self.alpha_grid is not None:
            return np.asarray(self.alpha_grid, dtype=float)
        if R < 2:
            raise ConfigError("R must be at least 2")
        return np.linspace(self.alpha_lo, self.alpha_hi, R)

    def alpha_prior(self, R: int) -> np.ndarray:
        grid = self.grid(R)
        if self.alpha_masses is None:
            return np.full(grid.size, 1.0 / grid.size)
        m = np.asarray(self.alpha_masses, dtype=float)
        if m.shape != grid.shape or np.any(m < 0) or m.sum() <= 0:
            raise ConfigError("alpha_masses must be nonnegative, match the grid and have positive sum")
        return m / m.sum()


@dataclass(frozen=True)
class ParticleBelief:
    owner: int
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 2 or s.shape[1] != 2 or s.shape[0] < 1:
            raise ConfigError(f"belief of {self.owner}: samples must have shape (L, 2)")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def L(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class AlphaGridBelief:
    grid: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        m = np.asarray(self.masses, dtype=float)
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise ConfigError("alpha grid must be strictly increasing with at least 2 points")
        if m.shape != g.shape or np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ConfigError("alpha masses must be nonnegative and sum to 1")
        g.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "masses", m)

    @property
    def R(self) -> int:
        return self.grid.size


@dataclass(frozen=True)
class AlphaMessage:
    """Values of one edge's alpha message on the grid, normalized to sum 1.

    ``log_values`` keeps the normalized logarithms so that products of many
    sharp messages can be formed without underflow; it is derived from
    ``values`` when not given.
    """

    edge: Tuple[int, int]
    values: np.ndarray
    log_values: Optional[np.ndarray] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-12:
            raise ConfigError(f"alpha message {self.edge} must be nonnegative and sum to 1")
        if self.log_values is None:
            with np.errstate(divide="ignore"):
                lv = np.log(v)
        else:
            lv = np.asarray(self.log_values, dtype=float)
            if lv.shape != v.shape:
                raise ConfigError(f"alpha message {self.edge}: log_values shape mismatch")
        for name, arr in (("values", v), ("log_values", lv)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def from_log(cls, edge, logv) -> "AlphaMessage":
        logv = np.asarray(logv, dtype=float)
        lv = logv - logsumexp(logv)
        return cls(edge, normalize_log_weights(logv), lv)

    @classmethod
    def uniform(cls, edge, R: int) -> "AlphaMessage":
        return cls(edge, np.full(R, 1.0 / R))


@dataclass(frozen=True)
class PositionMessage:
    """Mixture message to ``target`` from the factor shared with ``source``.

    Component ``l`` is the likelihood of ``r`` as a function of the target
    position, centred at ``sources[l]`` with exponent ``alphas[l]``, divided
    by its integral ``exp(log_z[l])``; ``weights`` are the mixture weights.
    """

    target: int
    source: int
    r: float
    params: ChannelParams
    weights: np.ndarray
    sources: np.ndarray
    alphas: np.ndarray
    log_z: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        s = np.asarray(self.sources, dtype=float).reshape(-1, 2)
        a = np.asarray(self.alphas, dtype=float)
        z = np.asarray(self.log_z, dtype=float)
        if not (w.shape[0] == s.shape[0] == a.shape[0] == z.shape[0]):
            raise ConfigError("message component arrays differ in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigError("message weights must be nonnegative and sum to 1")
        if not np.all(np.isfinite(z)):
            raise ConfigError("normalizers must be positive and finite")
        for name, arr in (("weights", w), ("sources", s), ("alphas", a), ("log_z", z)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def L(self) -> int:
        return self.weights.size

    def log_evaluate(self, x) -> np.ndarray:
        return log_evaluate_position_message(self, x)


def log_evaluate_position_message(msg: PositionMessage, x) -> np.ndarray:
    """Log-density of the mixture at points ``x`` of shape ``(..., 2)``."""
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    pts = x.reshape(-1, 2)
    logw = np.log(np.where(msg.weights > 0, msg.weights, 1.0)) - msg.log_z
    logw = np.where(msg.weights > 0, logw, -np.inf)
    out = np.empty(pts.shape[0])
    step = max(1, _CHUNK // max(msg.L, 1))
    for s in range(0, pts.shape[0], step):
        p = pts[s : s + step]
        d = np.hypot(p[:, None, 0] - msg.sources[None, :, 0], p[:, None, 1] - msg.sources[None, :, 1])
        ll = log_likelihood_distance(msg.r, np.maximum(d, MIN_DISTANCE), msg.alphas[None, :], msg.params)
        out[s : s + step] = logsumexp(ll + logw[None, :], axis=1)
    out = out.reshape(shape)
    return out[()] if out.ndim == 0 else out


def evaluate_position_message(msg: PositionMessage, x) -> np.ndarray:
    """Mixture density ``sum_l w_l / Z_l * f(r | x, x_l, alpha_l)`` at ``x``."""
    return np.exp(log_evaluate_position_message(msg, x))


def init_beliefs(
    rng: np.random.Generator,
    geometry: NetworkGeometry,
    priors: Priors,
    L: int,
    R: int,
) -> Tuple[Dict[int, ParticleBelief], AlphaGridBelief]:
    """Initial beliefs equal to the priors.

    Agents draw ``L`` uniform samples in the prior rectangle (ascending id
    order); anchors hold ``L`` copies of their position.
    """
    if L < 1:
        raise ConfigError("L must be at least 1")
    beliefs = {}
    for node in geometry.nodes:
        if node.role == "anchor":
            samples = np.tile(np.asarray(node.position, dtype=float), (L, 1))
        else:
            samples = priors.rect.sample(rng, L)
        beliefs[node.id] = ParticleBelief(node.id, samples)
    alpha = AlphaGridBelief(priors.grid(R), priors.alpha_prior(R))
    return beliefs, alpha


def normalize_log_weights(logw) -> np.ndarray:
    """Exponentiate and normalize log weights; all ``-inf`` gives zeros."""
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw) if logw.size else -np.inf
    if not np.isfinite(top):
        return np.zeros_like(logw)
    w = np.exp(logw - top)
    return w / w.sum()


def systematic_indices(weights, u: float, count: Optional[int] = None) -> np.ndarray:
    """Indices picked by strata points ``(u + k) / L`` against the weight CDF.

    ``L`` is ``count`` when given, else the number of weights.
    """
    w = np.asarray(weights, dtype=float)
    L = w.size if count is None else int(count)
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    points = (u + np.arange(L)) / L
    idx = np.searchsorted(cdf, points, side="right")
    return np.minimum(idx, w.size - 1)


def resample_systematic(
    rng: np.random.Generator,
    samples,
    weights,
    diagnostics: Optional[Diagnostics] = None,
) -> np.ndarray:
    """Systematic resampling to ``L`` equally weighted samples.

    All-zero weights fall back to uniform weights (recorded in
    ``diagnostics`` when given).
    """
    samples = np.asarray(samples)
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise DomainError("weights must be finite and nonnegative")
    if w.sum() <= 0:
        if diagnostics is not None:
            diagnostics.record("resample_fallback", "all-zero weights, using uniform")
        w = np.ones_like(w)
    idx = systematic_indices(w, rng.random())
    return samples[idx]


class AliasTable:
    """Walker/Vose alias table: O(N) build, O(1) per draw."""

    def __init__(self, masses):
        p = np.asarray(masses, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise DomainError("masses must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise DomainError("masses must be finite and nonnegative")
        total = p.sum()
        if total <= 0:
            raise DomainError("masses must have positive sum")
        n = p.size
        scaled = (p * (n / total)).tolist()
        prob = [1.0] * n
        alias = list(range(n))
        small = [i for i, v in enumerate(scaled) if v < 1.0]
        large = [i for i, v in enumerate(scaled) if v >= 1.0]
        while small and large:
            s = small.pop()
            g = large[-1]
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                large.pop()
                small.append(g)
        # leftovers are 1 up to rounding
        self.prob = np.array(prob)
        self.alias = np.array(alias, dtype=np.intp)
        # zero-mass columns must never be returned
        zero = p == 0
        self.prob[zero] = 0.0
        self.alias[zero & (self.alias == np.arange(n))] = int(np.argmax(p))
        self.n = n

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        k = rng.integers(0, self.n, size=count)
        take = rng.random(count) < self.prob[k]
        return np.where(take, k, self.alias[k])


def sample_categorical(rng: np.random.Generator, masses, count: int) -> np.ndarray:
    """``count`` i.i.d. indices with probability proportional to ``masses``."""
    return AliasTable(masses).sample(rng, count)


# -- snapshot tables ---------------------------------------------------------


def write_position_snapshots(records: Iterable[Tuple[int, Mapping[int, ParticleBelief]]], path, header=()):
    """Rows ``iter,node_id,sample_index,x,y``."""

    def rows():
        for it, beliefs in records:
            for node_id in sorted(beliefs):
                for k, (x, y) in enumerate(beliefs[node_id].samples):
                    yield it, node_id, k, float(x), float(y)

    write_table(path, ("iter", "node_id", "sample_index", "x", "y"), rows(), header)


def write_alpha_snapshots(records: Iterable[Tuple[int, AlphaGridBelief]], path, header=()):
    """Rows ``iter,grid_index,alpha,mass``."""

    def rows():
        for it, belief in records:
            for k, (a, m) in enumerate(zip(belief.grid, belief.masses)):
                yield it, k, float(a), float(m)

    write_table(path, ("iter", "grid_index", "alpha", "mass"), rows(), header)

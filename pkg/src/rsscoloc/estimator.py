"""Point estimates from beliefs and error metrics over Monte Carlo runs."""

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .belief_store import AlphaGridBelief, ParticleBelief
from .errors import ConfigError
from .rss_model import Position

_CHUNK = 1 << 20


def silverman_bandwidth(samples) -> np.ndarray:
    """Per-axis ``1.06 * std * L**(-1/5)``; axes with zero spread get 1."""
    x = np.asarray(samples, dtype=float)
    h = 1.06 * x.std(axis=0) * x.shape[0] ** (-0.2)
    return np.where(h > 0, h, 1.0)


def kde_log_density_at_samples(samples, bandwidth=None) -> np.ndarray:
    """Unnormalized log KDE (Gaussian product kernel) at every sample location."""
    x = np.asarray(samples, dtype=float)
    h = silverman_bandwidth(x) if bandwidth is None else np.asarray(bandwidth, dtype=float)
    z = x / h
    n = z.shape[0]
    out = np.empty(n)
    step = max(1, _CHUNK // n)
    for s in range(0, n, step):
        d2 = ((z[s : s + step, None, :] - z[None, :, :]) ** 2).sum(axis=-1)
        out[s : s + step] = np.log(np.exp(-0.5 * d2).sum(axis=1))
    return out


def kde_mode_index(samples) -> int:
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ConfigError("samples must have shape (L, 2) with L >= 1")
    return int(np.argmax(kde_log_density_at_samples(x)))


def kde_mode(samples) -> Position:
    """Sample location with the highest kernel density estimate.

    Parameters
    ----------
    samples : array_like, shape (L, 2)

    Returns
    -------
    Position
        One of the input samples. The search costs O(L^2).
    """
    x = np.asarray(samples, dtype=float)
    k = kde_mode_index(x)
    return Position(float(x[k, 0]), float(x[k, 1]))


class AlphaEstimate(NamedTuple):
    value: float
    index: int
    tied: bool


def alpha_point_estimate(belief: AlphaGridBelief) -> AlphaEstimate:
    """Grid point of maximal mass; ties go to the smallest alpha and are flagged."""
    m = belief.masses
    k = int(np.argmax(m))
    tied = int(np.count_nonzero(m == m[k])) > 1
    return AlphaEstimate(float(belief.grid[k]), k, tied)


def position_estimates(beliefs: Mapping[int, ParticleBelief], agent_ids: Sequence[int]) -> np.ndarray:
    """KDE modes of the listed agents, shape ``(n_agents, 2)``."""
    return np.array([kde_mode(beliefs[a].samples) for a in agent_ids], dtype=float).reshape(-1, 2)


def position_rmse(estimates, truths) -> float:
    e = np.asarray(estimates, dtype=float) - np.asarray(truths, dtype=float)
    return math.sqrt(float(np.mean(np.sum(e * e, axis=-1))))


@dataclass(frozen=True)
class RunMetrics:
    mse_alpha: float
    bias_alpha: float
    rmse_positions: float
    agent_errors: np.ndarray
    n_runs: int


def compute_metrics(alpha_estimates, alpha_true, position_estimates, position_truths) -> RunMetrics:
    """Aggregate errors over runs.

    Parameters
    ----------
    alpha_estimates : array_like, shape (runs,)
    alpha_true : float or array_like, shape (runs,)
    position_estimates, position_truths : array_like, shape (runs, agents, 2)

    Returns
    -------
    RunMetrics
        ``rmse_positions`` is the root of the squared position error averaged
        over runs and agents. ``agent_errors`` holds Euclidean errors with
        shape (runs, agents).
    """
    a_hat = np.atleast_1d(np.asarray(alpha_estimates, dtype=float))
    a_true = np.broadcast_to(np.asarray(alpha_true, dtype=float), a_hat.shape) if np.ndim(alpha_true) == 0 else np.asarray(alpha_true, dtype=float)
    p_hat = np.asarray(position_estimates, dtype=float)
    p_true = np.asarray(position_truths, dtype=float)
    if a_hat.ndim != 1 or a_hat.size < 1:
        raise ConfigError("need at least one run")
    if a_true.shape != a_hat.shape:
        raise ConfigError(f"alpha truth shape {a_true.shape} does not match estimates {a_hat.shape}")
    if p_hat.shape != p_true.shape or p_hat.ndim != 3 or p_hat.shape[0] != a_hat.size or p_hat.shape[2] != 2:
        raise ConfigError(
            f"position arrays must both have shape (runs={a_hat.size}, agents, 2); got {p_hat.shape} and {p_true.shape}"
        )
    err = a_hat - a_true
    diff = p_hat - p_true
    sq = np.sum(diff * diff, axis=-1)
    rmse = math.sqrt(float(sq.mean())) if sq.size else 0.0
    return RunMetrics(
        mse_alpha=float(np.mean(err * err)),
        bias_alpha=float(np.mean(err)),
        rmse_positions=rmse,
        agent_errors=np.sqrt(sq),
        n_runs=int(a_hat.size),
    )

"""Message-passing engine: BP or SPAWN messages, IS or AIS belief updates.

One iteration visits the agents in ascending id order. For agent ``i`` it
refreshes the alpha message of every incident edge not yet refreshed in
this iteration, the position message ``m_ij(x_i)`` from every neighbor,
and then the particle belief of ``i``, which later agents see immediately.
The alpha belief is recomputed once all agents are done.

BP divides by the previous iteration's messages evaluated at the samples;
SPAWN drops those denominators. Before the first iteration every message is the
constant 1, so both variants coincide at iteration 1.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import special
from scipy.special import logsumexp

from .belief_store import (
    LOG_DENSITY_FLOOR,
    AliasTable,
    AlphaGridBelief,
    AlphaMessage,
    Diagnostics,
    ParticleBelief,
    PositionMessage,
    Priors,
    Rectangle,
    init_beliefs,
    normalize_log_weights,
    resample_systematic,
)
from .errors import ConfigError, EngineError
from .nlsampler import LogDistanceModel, log_polar_density, polar_sample
from .rss_model import (
    LN10,
    MIN_DISTANCE,
    ChannelParams,
    MeasurementSet,
    NetworkGeometry,
    log_likelihood_distance,
    log_normalizer_z,
    neighbor_sets,
)

VARIANTS = ("BP", "SPAWN")
SAMPLERS = ("IS", "AIS")
PROPOSALS = ("mixture_mean", "prior")
SCHEDULES = ("sequential", "synchronous")
ALGORITHMS = {
    "bp-is": ("BP", "IS"),
    "bp-ais": ("BP", "AIS"),
    "spawn-is": ("SPAWN", "IS"),
    "spawn-ais": ("SPAWN", "AIS"),
}

# RNG stream purposes
_INIT, _ALPHA_DRAW, _BELIEF = 0, 1, 2
_CHUNK = 1 << 18


@dataclass(frozen=True)
class EngineConfig:
    variant: str = "SPAWN"
    belief_sampler: str = "AIS"
    L: int = 1000
    R: int = 100
    n_max: int = 10
    seed: int = 0
    is_proposal: str = "mixture_mean"
    schedule: str = "sequential"
    ais_normalizer_correction: bool = True
    censor_uninformed: bool = False
    ais_rect_labels: bool = True
    workers: int = 1

    def __post_init__(self):
        checks = (
            (self.variant in VARIANTS, f"variant must be one of {VARIANTS}"),
            (self.belief_sampler in SAMPLERS, f"belief_sampler must be one of {SAMPLERS}"),
            (self.is_proposal in PROPOSALS, f"is_proposal must be one of {PROPOSALS}"),
            (self.schedule in SCHEDULES, f"schedule must be one of {SCHEDULES}"),
            (self.L >= 2, "L must be at least 2"),
            (self.R >= 2, "R must be at least 2"),
            (self.n_max >= 1, "n_max must be at least 1"),
            (self.workers >= 1, "workers must be at least 1"),
        )
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)

    @property
    def algorithm(self) -> str:
        return f"{self.variant}-{self.belief_sampler}".lower()

    @classmethod
    def from_algorithm(cls, name: str, **kwargs) -> "EngineConfig":
        try:
            variant, sampler = ALGORITHMS[name.lower()]
        except KeyError:
            raise ConfigError(f"unknown algorithm {name!r}; expected one of {sorted(ALGORITHMS)}") from None
        return cls(variant=variant, belief_sampler=sampler, **kwargs)

    def as_dict(self) -> dict:
        return asdict(self)


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


class Problem:
    """Static inputs of one localization run, with the neighbor structure."""

    def __init__(self, geometry: NetworkGeometry, measurements: MeasurementSet, params: ChannelParams, priors: Priors):
        self.geometry = geometry
        self.measurements = measurements
        self.params = measurements.channel_params(params)
        self.priors = priors
        ids = set(geometry.ids)
        for m in measurements.edges:
            if m.i not in ids or m.j not in ids:
                raise ConfigError(f"measurement ({m.i},{m.j}) refers to an unknown node")
            if geometry.is_anchor(m.i) and geometry.is_anchor(m.j):
                raise ConfigError(f"measurement ({m.i},{m.j}) joins two anchors")
        self.gamma, self.edges = neighbor_sets(measurements, geometry.ids)
        self.agents = geometry.agent_ids
        self.index = {node_id: k for k, node_id in enumerate(geometry.ids)}
        self.r = {(m.i, m.j): m.r for m in measurements.edges}
        self.edge_params = {e: self.params.for_edge(*e) for e in self.edges}

    @staticmethod
    def edge(i: int, j: int) -> Tuple[int, int]:
        return (i, j) if i < j else (j, i)


class EngineState:
    """Mutable engine bookkeeping; beliefs and messages themselves are immutable.

    ``pos_prev`` and ``alpha_prev`` hold the messages of the previous
    iteration; BP divides by these. Both are empty during iteration 1.
    """

    def __init__(self, problem: Problem, config: EngineConfig):
        self.problem = problem
        self.config = config
        self.iteration = 0
        self.diagnostics = Diagnostics()
        self.beliefs, self.alpha_belief = init_beliefs(
            _stream(config.seed, _INIT), problem.geometry, problem.priors, config.L, config.R
        )
        self.alpha_prior = self.alpha_belief.masses.copy()
        self.alpha_msgs: Dict[Tuple[int, int], AlphaMessage] = {}
        self.alpha_prev: Dict[Tuple[int, int], AlphaMessage] = {}
        self.pos_msgs: Dict[Tuple[int, int], PositionMessage] = {}
        self.pos_prev: Dict[Tuple[int, int], PositionMessage] = {}
        # anchors, plus agents whose belief has absorbed at least one message
        self.informed = set(problem.geometry.anchor_ids)

    def sends(self, node: int) -> bool:
        return node in self.informed or not self.config.censor_uninformed

    def incoming(self, agent: int) -> List[PositionMessage]:
        return [self.pos_msgs[(agent, j)] for j in self.problem.gamma[agent] if (agent, j) in self.pos_msgs]


def _log_prev(state: EngineState, target: int, source: int, x) -> np.ndarray:
    msg = state.pos_prev.get((target, source))
    if msg is None:
        return np.zeros(np.asarray(x).shape[0])
    return np.maximum(msg.log_evaluate(x), LOG_DENSITY_FLOOR)


def update_alpha_message(state: EngineState, edge: Tuple[int, int]) -> AlphaMessage:
    """Importance-sampled alpha message of ``edge`` on the grid."""
    pb = state.problem
    i, j = edge
    xi = state.beliefs[i].samples
    xj = state.beliefs[j].samples
    grid = state.alpha_belief.grid
    d = np.maximum(np.hypot(*(xi - xj).T), MIN_DISTANCE)
    ll = log_likelihood_distance(pb.r[edge], d[:, None], grid[None, :], pb.edge_params[edge])
    if state.config.variant == "BP":
        logw = -_log_prev(state, i, j, xi) - _log_prev(state, j, i, xj)
        logw = logw - logsumexp(logw)
    else:
        logw = np.full(d.size, -math.log(d.size))
    logv = logsumexp(ll + logw[:, None], axis=0)
    return AlphaMessage.from_log(edge, logv)


def update_position_message(
    rng: np.random.Generator, state: EngineState, target: int, source: int
) -> PositionMessage:
    """Mixture message ``m(x_target)`` from the factor shared with ``source``."""
    pb = state.problem
    edge = pb.edge(target, source)
    params = pb.edge_params[edge]
    r = pb.r[edge]
    xj = state.beliefs[source].samples
    L = xj.shape[0]
    grid = state.alpha_belief.grid
    idx = AliasTable(state.alpha_belief.masses).sample(rng, L)
    alphas = grid[idx]
    log_z = log_normalizer_z(r, alphas, params)
    if state.config.variant == "BP":
        logw = -_log_prev(state, source, target, xj)
        prev = state.alpha_prev.get(edge)
        if prev is not None:
            logw = logw - np.maximum(prev.log_values[idx], LOG_DENSITY_FLOOR)
    else:
        logw = np.zeros(L)
    weights = normalize_log_weights(log_z + logw)
    if weights.sum() == 0:
        state.diagnostics.record("message_fallback", f"iteration {state.iteration}: m({target}<-{source}) weights underflow")
        weights = np.full(L, 1.0 / L)
    return PositionMessage(target, source, r, params, weights, xj, alphas, log_z)


def combine_alpha_log_messages(prior, log_messages: Sequence[np.ndarray], diagnostics: Optional[Diagnostics] = None):
    """Normalized ``prior * prod(messages)`` from log-domain messages."""
    with np.errstate(divide="ignore"):
        logb = np.log(np.asarray(prior, dtype=float))
    for lv in log_messages:
        logb = logb + np.asarray(lv, dtype=float)
    masses = normalize_log_weights(logb)
    if masses.sum() == 0:
        if diagnostics is not None:
            diagnostics.record("alpha_belief_fallback", "product of alpha messages vanished, using uniform")
        masses = np.full(masses.size, 1.0 / masses.size)
    return masses


def combine_alpha_messages(prior, messages: Sequence[np.ndarray], diagnostics: Optional[Diagnostics] = None):
    """Normalized ``prior * prod(messages)`` on the grid, in log domain."""
    with np.errstate(divide="ignore"):
        logs = [np.log(np.asarray(v, dtype=float)) for v in messages]
    return combine_alpha_log_messages(prior, logs, diagnostics)


def update_alpha_belief(state: EngineState) -> AlphaGridBelief:
    msgs = [state.alpha_msgs[e].log_values for e in state.problem.edges if e in state.alpha_msgs]
    masses = combine_alpha_log_messages(state.alpha_prior, msgs, state.diagnostics)
    return AlphaGridBelief(state.alpha_belief.grid, masses)


# -- belief update samplers --------------------------------------------------


def _models(msgs: Sequence[PositionMessage]):
    return [m.params for m in msgs], np.array([m.r for m in msgs])


def log_product_density(msgs: Sequence[PositionMessage], rect: Rectangle, x) -> np.ndarray:
    """``log f(x) + sum_j log m_j(x)``; costs O(J L) per point."""
    out = rect.log_density(x)
    for m in msgs:
        out = out + m.log_evaluate(x)
    return out


def log_mixture_proposal_density(msgs: Sequence[PositionMessage], x) -> np.ndarray:
    """Density of the evenly weighted mixture of polar proposals of the messages."""
    x = np.asarray(x, dtype=float)
    J = len(msgs)
    per = np.empty((J, x.shape[0]))
    for k, m in enumerate(msgs):
        model = LogDistanceModel(m.alphas[None, :], m.params.ref_power_dbm, m.params.noise_std, m.params.ref_distance)
        with np.errstate(divide="ignore"):
            logw = np.log(m.weights)
        step = max(1, _CHUNK // m.L)
        for s in range(0, x.shape[0], step):
            p = x[s : s + step, None, :]
            lq = log_polar_density(model, p, m.sources[None, :, :], m.r)
            per[k, s : s + step] = logsumexp(lq + logw[None, :], axis=1)
    return logsumexp(per, axis=0) - math.log(J)


def _draw_from_mixture_proposal(rng, msgs: Sequence[PositionMessage], L: int) -> np.ndarray:
    J = len(msgs)
    which = rng.integers(0, J, size=L)
    x = np.empty((L, 2))
    for k, m in enumerate(msgs):
        sel = np.flatnonzero(which == k)
        if sel.size == 0:
            continue
        comp = AliasTable(m.weights).sample(rng, sel.size)
        model = LogDistanceModel(m.alphas[comp], m.params.ref_power_dbm, m.params.noise_std, m.params.ref_distance)
        x[sel] = polar_sample(rng, model, m.r, m.sources[comp])
    return x


def sample_product_is(
    rng: np.random.Generator,
    msgs: Sequence[PositionMessage],
    rect: Rectangle,
    L: int,
    proposal: str = "mixture_mean",
    diagnostics: Optional[Diagnostics] = None,
) -> Optional[np.ndarray]:
    """Importance sampler for ``f(x) prod_j m_j(x)``; returns None on total weight 0.

    Cost is O(J L^2): every message is evaluated at every proposal point.
    """
    if proposal == "prior":
        x = rect.sample(rng, L)
        logq = rect.log_density(x)
    else:
        x = _draw_from_mixture_proposal(rng, msgs, L)
        logq = log_mixture_proposal_density(msgs, x)
    with np.errstate(invalid="ignore"):
        logw = log_product_density(msgs, rect, x) - logq
    logw = np.where(np.isfinite(logw), logw, -np.inf)
    w = normalize_log_weights(logw)
    if w.sum() == 0:
        return None
    return resample_systematic(rng, x, w, diagnostics)


def component_rect_mass_bound(msg: PositionMessage, rect: Rectangle) -> np.ndarray:
    """Upper bound on the mass each normalized component puts inside ``rect``.

    The radial law of a normalized component is log-normal in the distance
    to its source, with log-mean ``mu_d + 2 sigma_d**2`` and log-std
    ``sigma_d``. The bound is its mass between the nearest and farthest
    points of the rectangle.
    """
    s = msg.sources
    dx_near = np.maximum.reduce([rect.xmin - s[:, 0], np.zeros(len(s)), s[:, 0] - rect.xmax])
    dy_near = np.maximum.reduce([rect.ymin - s[:, 1], np.zeros(len(s)), s[:, 1] - rect.ymax])
    dx_far = np.maximum(np.abs(s[:, 0] - rect.xmin), np.abs(s[:, 0] - rect.xmax))
    dy_far = np.maximum(np.abs(s[:, 1] - rect.ymin), np.abs(s[:, 1] - rect.ymax))
    near = np.hypot(dx_near, dy_near)
    far = np.hypot(dx_far, dy_far)
    p = msg.params
    c = LN10 / (10.0 * msg.alphas)
    sd = c * p.noise_std
    mean = c * (p.ref_power_dbm - msg.r) + math.log(p.ref_distance) + 2.0 * sd * sd
    with np.errstate(divide="ignore"):
        lo = special.ndtr((np.log(near) - mean) / sd)
    hi = special.ndtr((np.log(far) - mean) / sd)
    return np.clip(hi - lo, 0.0, 1.0)


def sample_product_ais(
    rng: np.random.Generator,
    msgs: Sequence[PositionMessage],
    rect: Rectangle,
    L: int,
    normalizer_correction: bool = True,
    diagnostics: Optional[Diagnostics] = None,
    rect_labels: bool = False,
) -> Optional[np.ndarray]:
    """Auxiliary importance sampler for ``f(x) prod_j m_j(x)``, O(J L).

    Each particle gets one component label per message (drawn from the
    mixture weights) and is proposed around the labelled component of one
    uniformly chosen message. With ``normalizer_correction`` the weight
    divides each likelihood by its component normalizer, so the target is
    exactly the product of the normalized mixtures.

    With ``rect_labels`` the labels are drawn in proportion to the mixture
    weight times :func:`component_rect_mass_bound`, and the weight carries
    the matching ratio, so the target is unchanged. Components that cannot
    reach the prior rectangle are then never proposed.
    """
    J = len(msgs)
    cols = np.arange(L)
    label_masses = [m.weights for m in msgs]
    log_label_corr = None
    if rect_labels:
        label_masses = [m.weights * component_rect_mass_bound(m, rect) for m in msgs]
        totals = np.array([lm.sum() for lm in label_masses])
        if np.any(totals <= 0):
            return None
    labels = np.stack([AliasTable(lm).sample(rng, L) for lm in label_masses])
    if rect_labels:
        with np.errstate(divide="ignore"):
            log_label_corr = np.stack(
                [np.log(m.weights[labels[k]]) - np.log(label_masses[k][labels[k]]) + np.log(totals[k]) for k, m in enumerate(msgs)]
            ).sum(axis=0)
    src = np.stack([m.sources[labels[k]] for k, m in enumerate(msgs)])  # (J, L, 2)
    alph = np.stack([m.alphas[labels[k]] for k, m in enumerate(msgs)])
    logz = np.stack([m.log_z[labels[k]] for k, m in enumerate(msgs)])
    A = np.array([m.params.ref_power_dbm for m in msgs])[:, None]
    sig = np.array([m.params.noise_std for m in msgs])[:, None]
    d0 = np.array([m.params.ref_distance for m in msgs])[:, None]
    r = np.array([m.r for m in msgs])[:, None]

    choice = rng.integers(0, J, size=L)
    model = LogDistanceModel(alph[choice, cols], A[choice, 0], sig[choice, 0], d0[choice, 0])
    x = polar_sample(rng, model, r[choice, 0], src[choice, cols])

    all_models = LogDistanceModel(alph, A, sig, d0)
    dist = np.maximum(np.hypot(x[None, :, 0] - src[..., 0], x[None, :, 1] - src[..., 1]), MIN_DISTANCE)
    lognum = all_models.log_f(r, dist)
    if normalizer_correction:
        lognum = lognum - logz
    lognum = rect.log_density(x) + lognum.sum(axis=0)
    if log_label_corr is not None:
        lognum = lognum + log_label_corr
    logden = logsumexp(log_polar_density(all_models, x[None, :, :], src, r), axis=0) - math.log(J)
    with np.errstate(invalid="ignore"):
        logw = lognum - logden
    logw = np.where(np.isfinite(logw), logw, -np.inf)
    w = normalize_log_weights(logw)
    if w.sum() == 0:
        return None
    return resample_systematic(rng, x, w, diagnostics)


def _belief_update(rng, state: EngineState, agent: int, sampler: str) -> ParticleBelief:
    msgs = state.incoming(agent)
    old = state.beliefs[agent]
    if not msgs:
        return old
    cfg = state.config
    rect = state.problem.priors.rect
    if sampler == "IS":
        x = sample_product_is(rng, msgs, rect, cfg.L, cfg.is_proposal, state.diagnostics)
    else:
        x = sample_product_ais(
            rng, msgs, rect, cfg.L, cfg.ais_normalizer_correction, state.diagnostics, cfg.ais_rect_labels
        )
    if x is None:
        state.diagnostics.record("divergence", f"iteration {state.iteration}: agent {agent} got zero total weight")
        return old
    return ParticleBelief(agent, x)


def update_position_belief_is(rng, state: EngineState, agent: int) -> ParticleBelief:
    return _belief_update(rng, state, agent, "IS")


def update_position_belief_ais(rng, state: EngineState, agent: int) -> ParticleBelief:
    return _belief_update(rng, state, agent, "AIS")


# -- driver ------------------------------------------------------------------


@dataclass
class IterationRecord:
    iteration: int
    beliefs: Dict[int, ParticleBelief]
    alpha_belief: AlphaGridBelief
    elapsed: float = 0.0


@dataclass
class RunResult:
    config: EngineConfig
    problem: Problem
    history: List[IterationRecord]
    diagnostics: Diagnostics
    state: EngineState = field(repr=False, default=None)

    @property
    def final(self) -> IterationRecord:
        return self.history[-1]

    @property
    def diverged(self) -> int:
        return self.diagnostics.count("divergence")


def _agent_messages(state: EngineState, agent: int, done: set) -> None:
    n = state.iteration
    seed = state.config.seed
    pb = state.problem
    for j in pb.gamma[agent]:
        edge = pb.edge(agent, j)
        if edge not in done:
            done.add(edge)
            if state.sends(agent) and state.sends(j):
                state.alpha_msgs[edge] = update_alpha_message(state, edge)
        if state.sends(j):
            rng = _stream(seed, n, _ALPHA_DRAW, pb.index[agent], pb.index[j])
            state.pos_msgs[(agent, j)] = update_position_message(rng, state, agent, j)


def _agent_belief(state: EngineState, agent: int) -> ParticleBelief:
    rng = _stream(state.config.seed, state.iteration, _BELIEF, state.problem.index[agent])
    return _belief_update(rng, state, agent, state.config.belief_sampler)


def _commit_belief(state: EngineState, agent: int, belief: ParticleBelief) -> None:
    state.beliefs[agent] = belief
    if any((agent, j) in state.pos_msgs for j in state.problem.gamma[agent]):
        state.informed.add(agent)


def _iterate_sequential(state: EngineState) -> None:
    done: set = set()
    for agent in state.problem.agents:
        try:
            _agent_messages(state, agent, done)
            _commit_belief(state, agent, _agent_belief(state, agent))
        except (ValueError, FloatingPointError) as exc:
            raise EngineError(f"iteration {state.iteration}, agent {agent}: {exc}") from exc


def _iterate_synchronous(state: EngineState) -> None:
    pb = state.problem
    seed = state.config.seed
    n = state.iteration

    def alpha_task(edge):
        return edge, update_alpha_message(state, edge)

    def msg_task(pair):
        t, s = pair
        rng = _stream(seed, n, _ALPHA_DRAW, pb.index[t], pb.index[s])
        return pair, update_position_message(rng, state, t, s)

    def belief_task(agent):
        return agent, _agent_belief(state, agent)

    edges = [e for e in pb.edges if state.sends(e[0]) and state.sends(e[1])]
    pairs = [(a, j) for a in pb.agents for j in pb.gamma[a] if state.sends(j)]
    with ThreadPoolExecutor(max_workers=state.config.workers) as pool:
        alpha_new = dict(pool.map(alpha_task, edges))
        msg_new = dict(pool.map(msg_task, pairs))
        state.alpha_msgs.update(alpha_new)
        state.pos_msgs.update(msg_new)
        beliefs = dict(pool.map(belief_task, pb.agents))
    for agent in pb.agents:
        _commit_belief(state, agent, beliefs[agent])


def run(
    config: EngineConfig,
    geometry: NetworkGeometry,
    measurements: MeasurementSet,
    params: ChannelParams,
    priors: Priors,
) -> RunResult:
    """Run ``config.n_max`` iterations and keep a snapshot of every iteration.

    The snapshot list starts with iteration 0 (the priors). Results are a
    deterministic function of the inputs and ``config.seed``.
    """
    problem = Problem(geometry, measurements, params, priors)
    state = EngineState(problem, config)
    history = [IterationRecord(0, dict(state.beliefs), state.alpha_belief)]
    for n in range(1, config.n_max + 1):
        t0 = time.perf_counter()
        state.iteration = n
        if config.schedule == "sequential":
            _iterate_sequential(state)
        else:
            try:
                _iterate_synchronous(state)
            except (ValueError, FloatingPointError) as exc:
                raise EngineError(f"iteration {n}: {exc}") from exc
        state.alpha_belief = update_alpha_belief(state)
        state.alpha_prev = dict(state.alpha_msgs)
        state.pos_prev = dict(state.pos_msgs)
        history.append(IterationRecord(n, dict(state.beliefs), state.alpha_belief, time.perf_counter() - t0))
    return RunResult(config, problem, history, state.diagnostics, state)

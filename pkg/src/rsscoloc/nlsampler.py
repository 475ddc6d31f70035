"""Sampling from a normalized likelihood via a distance/angle transform.

For a range-type measurement ``r = h(d) + v`` a position sample around a
reference point is drawn as::

    theta ~ U[0, 2 pi),  v ~ f_v,  d = h^{-1}(r - v),  x = x_ref + d (cos theta, sin theta)

The density of ``x`` is ``q_d(d | r) / (2 pi d)``. Weighting each sample by
``f(r | d) d / q_d(d | r)`` turns these draws into an importance sample of
the likelihood normalized over the plane. The unweighted draws are the
heuristic strategy; they are only correct when ``f(r|d) d / q_d(d|r)`` is
constant.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .belief_store import Diagnostics
from .errors import DomainError
from .rss_model import LN10, MIN_DISTANCE, ChannelParams

TWO_PI = 2.0 * math.pi


class RangeModel:
    """Interface of a measurement model ``r = h(d) + v`` usable by the polar sampler."""

    def log_f(self, r, d):
        """log f(r | d)."""
        raise NotImplementedError

    def sample_distance(self, rng, r, size):
        """Distances ``h^{-1}(r - v)`` for fresh noise draws ``v``."""
        raise NotImplementedError

    def log_qd(self, r, d):
        """Log-density of :meth:`sample_distance` output at ``d``."""
        raise NotImplementedError


@dataclass(frozen=True)
class LogDistanceModel(RangeModel):
    """Log-distance RSS model. Fields broadcast against each other and ``r``."""

    alpha: object
    ref_power: object = -30.0
    noise_std: object = 3.0
    ref_distance: object = 1.0

    @classmethod
    def from_params(cls, alpha, params: ChannelParams) -> "LogDistanceModel":
        if np.any(np.asarray(alpha) <= 0):
            raise DomainError("alpha must be positive")
        return cls(alpha, params.ref_power_dbm, params.noise_std, params.ref_distance)

    def _scale(self):
        return LN10 / (10.0 * np.asarray(self.alpha, dtype=float))

    def log_f(self, r, d):
        sigma = np.asarray(self.noise_std, dtype=float)
        d = np.maximum(np.asarray(d, dtype=float), MIN_DISTANCE)
        resid = (r - np.asarray(self.ref_power)) + 10.0 * np.asarray(self.alpha) * np.log10(
            d / np.asarray(self.ref_distance)
        )
        return -0.5 * (resid / sigma) ** 2 - np.log(math.sqrt(TWO_PI) * sigma)

    def sample_distance(self, rng, r, size):
        v = np.asarray(self.noise_std) * rng.standard_normal(size)
        return np.asarray(self.ref_distance) * 10.0 ** (
            (np.asarray(self.ref_power) - r - v) / (10.0 * np.asarray(self.alpha))
        )

    def log_qd(self, r, d):
        c = self._scale()
        mu = c * (np.asarray(self.ref_power) - r)
        s = c * np.asarray(self.noise_std)
        d = np.maximum(np.asarray(d, dtype=float), MIN_DISTANCE)
        u = np.log(d / np.asarray(self.ref_distance))
        return -0.5 * ((u - mu) / s) ** 2 - np.log(math.sqrt(TWO_PI) * s * d)


@dataclass(frozen=True)
class UniformRangeModel(RangeModel):
    """``r = d + v`` with ``v ~ U[-half_width, half_width]``."""

    half_width: float

    def log_f(self, r, d):
        inside = np.abs(r - np.asarray(d, dtype=float)) <= self.half_width
        return np.where(inside, -math.log(2.0 * self.half_width), -np.inf)

    def sample_distance(self, rng, r, size):
        v = rng.uniform(-self.half_width, self.half_width, size)
        return r - v

    def log_qd(self, r, d):
        # q_d(d | r) = f_v(r - d) since d = r - v
        d = np.asarray(d, dtype=float)
        return np.where(d > 0, self.log_f(r, d), -np.inf)


@dataclass(frozen=True)
class DistanceProposal:
    """``d / d0`` is log-normal with log-mean ``mu_tilde`` and log-std ``sigma_tilde``."""

    mu_tilde: object
    sigma_tilde: object
    d0: float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.sigma_tilde) <= 0):
            raise DomainError("sigma_tilde must be positive")

    @property
    def median(self):
        return self.d0 * np.exp(self.mu_tilde)

    def logpdf(self, d):
        d = np.asarray(d, dtype=float)
        u = np.log(d / self.d0)
        s = np.asarray(self.sigma_tilde)
        return -0.5 * ((u - self.mu_tilde) / s) ** 2 - np.log(math.sqrt(TWO_PI) * s * d)

    def pdf(self, d):
        return np.exp(self.logpdf(d))

    def cdf(self, d):
        return stats.norm.cdf((np.log(np.asarray(d, dtype=float) / self.d0) - self.mu_tilde) / self.sigma_tilde)


def distance_proposal_params(r, alpha, params: ChannelParams) -> DistanceProposal:
    """Log-normal law of the distances produced by :func:`sample_polar`."""
    if np.any(np.asarray(alpha) <= 0):
        raise DomainError("alpha must be positive")
    c = LN10 / (10.0 * np.asarray(alpha, dtype=float))
    return DistanceProposal(c * (params.ref_power_dbm - r), c * params.noise_std, params.ref_distance)


def polar_sample(rng: np.random.Generator, model: RangeModel, r, x_ref, size: Optional[int] = None):
    """Draw positions around ``x_ref`` by the distance/angle transform.

    ``x_ref`` is ``(2,)`` (then ``size`` samples are drawn) or ``(n, 2)``
    (one sample per row). Model parameters and ``r`` broadcast against the
    sample axis.
    """
    x_ref = np.asarray(x_ref, dtype=float)
    n = x_ref.shape[0] if x_ref.ndim == 2 else (1 if size is None else size)
    theta = rng.uniform(0.0, TWO_PI, n)
    d = model.sample_distance(rng, r, n)
    out = x_ref + np.column_stack((d * np.cos(theta), d * np.sin(theta)))
    if x_ref.ndim == 1 and size is None:
        return out[0]
    return out


def _dist(x, x_ref):
    diff = np.asarray(x, dtype=float) - np.asarray(x_ref, dtype=float)
    return np.maximum(np.hypot(diff[..., 0], diff[..., 1]), MIN_DISTANCE)


def log_polar_density(model: RangeModel, x, x_ref, r):
    """``log q(x | x_ref, r) = log q_d(|x - x_ref|) - log(2 pi |x - x_ref|)``."""
    d = _dist(x, x_ref)
    return model.log_qd(r, d) - np.log(TWO_PI * d)


def log_nl_weight(model: RangeModel, x, x_ref, r, diagnostics: Optional[Diagnostics] = None):
    """Unnormalized log importance weight ``log f(r|d) - log q_d(d|r) + log d``.

    Points with zero proposal density get weight zero (``-inf``).
    """
    d = _dist(x, x_ref)
    lq = model.log_qd(r, d)
    bad = ~np.isfinite(lq)
    if np.any(bad) and diagnostics is not None:
        diagnostics.record("zero_proposal_density", f"{int(np.sum(bad))} points outside proposal support")
    with np.errstate(invalid="ignore"):
        lw = model.log_f(r, d) - lq + np.log(d)
    return np.where(bad, -np.inf, lw)


# -- RSS-specific entry points ------------------------------------------------


def sample_polar(rng: np.random.Generator, r, x_ref, alpha, params: ChannelParams, size: Optional[int] = None):
    """Polar draws for the RSS model (proposed sampler, before weighting)."""
    return polar_sample(rng, LogDistanceModel.from_params(alpha, params), r, x_ref, size)


def heuristic_sample(rng: np.random.Generator, r, x_ref, alpha, params: ChannelParams, size: Optional[int] = None):
    """Same draws as :func:`sample_polar`; consumers treat them as unweighted."""
    return sample_polar(rng, r, x_ref, alpha, params, size)


def log_proposal_density(x, x_ref, r, alpha, params: ChannelParams):
    out = log_polar_density(LogDistanceModel.from_params(alpha, params), x, x_ref, r)
    return out[()] if np.ndim(out) == 0 else out


def proposal_density(x, x_ref, r, alpha, params: ChannelParams):
    """Density of :func:`sample_polar` output at ``x``."""
    return np.exp(log_proposal_density(x, x_ref, r, alpha, params))


def nl_log_importance_weight(x, x_ref, r, alpha, params: ChannelParams, diagnostics=None):
    out = log_nl_weight(LogDistanceModel.from_params(alpha, params), x, x_ref, r, diagnostics)
    return out[()] if np.ndim(out) == 0 else out


def nl_importance_weight(x, x_ref, r, alpha, params: ChannelParams, diagnostics=None):
    """Unnormalized weight; proportional to ``d**2`` for the RSS model."""
    return np.exp(nl_log_importance_weight(x, x_ref, r, alpha, params, diagnostics))


def radial_self_normalized_mean(x, x_ref, log_weights=None) -> float:
    """Weighted mean distance from ``x_ref``; unweighted if no weights."""
    d = _dist(x, x_ref)
    if log_weights is None:
        return float(d.mean())
    lw = np.asarray(log_weights, dtype=float)
    w = np.exp(lw - lw.max())
    return float(np.sum(w * d) / np.sum(w))

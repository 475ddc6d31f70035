import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from rsscoloc.belief_store import Diagnostics
from rsscoloc.errors import DomainError
from rsscoloc.nlsampler import (
    LogDistanceModel,
    UniformRangeModel,
    distance_proposal_params,
    heuristic_sample,
    log_nl_weight,
    nl_importance_weight,
    nl_log_importance_weight,
    polar_sample,
    proposal_density,
    radial_self_normalized_mean,
    sample_polar,
)
from rsscoloc.rss_model import ChannelParams, log_likelihood_distance


def radial_mean_oracle(log_f, lo, hi):
    """E[d] under the likelihood normalized over the plane (weight d from the Jacobian)."""
    num, _ = integrate.quad(lambda d: d * d * math.exp(log_f(d)), lo, hi, limit=400, epsabs=0, epsrel=1e-11)
    den, _ = integrate.quad(lambda d: d * math.exp(log_f(d)), lo, hi, limit=400, epsabs=0, epsrel=1e-11)
    return num / den


def test_distance_proposal_examples(params):
    q = distance_proposal_params(-50.0, 2.0, params)
    assert q.mu_tilde == pytest.approx(math.log(10), abs=1e-12)
    assert q.median == pytest.approx(10.0, rel=1e-12)
    assert q.sigma_tilde == pytest.approx(0.34538776394910684, rel=1e-12)
    q2 = distance_proposal_params(-50.0, 4.0, params)
    assert q2.mu_tilde == pytest.approx(q.mu_tilde / 2) and q2.sigma_tilde == pytest.approx(q.sigma_tilde / 2)
    with pytest.raises(DomainError):
        distance_proposal_params(-50.0, 0.0, params)


def test_sigma_tilde_moment_matching(params):
    # log-distances of the draw mechanism have the stated spread
    x = sample_polar(np.random.default_rng(0), -50.0, (0.0, 0.0), 2.0, params, size=1_000_000)
    u = np.log(np.hypot(x[:, 0], x[:, 1]))
    assert u.std() == pytest.approx(0.34539, rel=3e-3)
    assert u.mean() == pytest.approx(math.log(10), abs=2e-3)


def test_degenerate_noise_ring():
    p = ChannelParams(noise_std=1e-12)
    x = sample_polar(np.random.default_rng(1), -65.0, (2.0, -1.0), 3.5, p, size=500)
    d = np.hypot(x[:, 0] - 2.0, x[:, 1] + 1.0)
    assert np.allclose(d, 10.0, rtol=1e-9)


def test_sample_shapes(params):
    rng = np.random.default_rng(0)
    assert sample_polar(rng, -50.0, (0, 0), 2.0, params).shape == (2,)
    assert sample_polar(rng, -50.0, (0, 0), 2.0, params, size=7).shape == (7, 2)
    refs = np.zeros((5, 2))
    assert sample_polar(rng, -50.0, refs, np.full(5, 2.0), params).shape == (5, 2)


def test_radius_and_angle_laws(params):
    x = sample_polar(np.random.default_rng(2), -60.0, (1.0, 1.0), 3.0, params, size=100_000)
    dx, dy = x[:, 0] - 1.0, x[:, 1] - 1.0
    q = distance_proposal_params(-60.0, 3.0, params)
    assert stats.kstest(np.hypot(dx, dy), q.cdf).pvalue > 0.01
    theta = np.mod(np.arctan2(dy, dx), 2 * math.pi)
    assert stats.kstest(theta, stats.uniform(0, 2 * math.pi).cdf).pvalue > 0.01


def test_heuristic_same_draws(params):
    a = sample_polar(np.random.default_rng(5), -55.0, (0, 0), 3.0, params, size=20)
    b = heuristic_sample(np.random.default_rng(5), -55.0, (0, 0), 3.0, params, size=20)
    assert np.array_equal(a, b)


def test_proposal_density_integrates_to_one(params):
    q = distance_proposal_params(-50.0, 2.0, params)
    f = lambda d: float(proposal_density((d, 0.0), (0.0, 0.0), -50.0, 2.0, params)) * 2 * math.pi * d
    med = float(q.median)
    val = sum(
        integrate.quad(f, a, b, limit=400, epsabs=0, epsrel=1e-12)[0]
        for a, b in ((0, med / 4), (med / 4, med), (med, 4 * med), (4 * med, np.inf))
    )
    assert val == pytest.approx(1.0, abs=1e-8)


def test_proposal_density_symmetry_and_ring_value(params):
    a = proposal_density((3.0, 4.0), (0, 0), -50.0, 2.0, params)
    b = proposal_density((-5.0, 0.0), (0, 0), -50.0, 2.0, params)
    assert a == pytest.approx(b, rel=1e-14)
    q = distance_proposal_params(-50.0, 2.0, params)
    d = 10.0
    # at the median ring the log-normal exponent vanishes
    expected = 1.0 / (math.sqrt(2 * math.pi) * q.sigma_tilde * d) / (2 * math.pi * d)
    assert proposal_density((0.0, d), (0, 0), -50.0, 2.0, params) == pytest.approx(expected, rel=1e-12)


def test_rss_weight_ratio_is_distance_squared(params):
    rng = np.random.default_rng(4)
    x = sample_polar(rng, -55.0, (0, 0), 3.0, params, size=100)
    w = nl_importance_weight(x, (0, 0), -55.0, 3.0, params)
    d = np.hypot(x[:, 0], x[:, 1])
    assert np.allclose((w / w[0]), (d / d[0]) ** 2, rtol=1e-10, atol=0)


def test_uniform_model_weight_proportional_to_distance():
    model = UniformRangeModel(2.5)
    x = polar_sample(np.random.default_rng(0), model, 7.5, np.zeros(2), size=50)
    lw = log_nl_weight(model, x, np.zeros(2), 7.5)
    d = np.hypot(x[:, 0], x[:, 1])
    assert np.allclose(np.exp(lw - lw[0]), d / d[0], rtol=1e-12)


def test_zero_proposal_density_gets_zero_weight():
    diag = Diagnostics()
    lw = log_nl_weight(UniformRangeModel(2.5), np.array([[20.0, 0.0], [7.0, 0.0]]), np.zeros(2), 7.5, diag)
    assert lw[0] == -np.inf and np.isfinite(lw[1])
    assert diag.count("zero_proposal_density") == 1


class _ConstantWeightModel(LogDistanceModel):
    """Likelihood with log f = log q_d - log d: the weight is constant."""

    def log_f(self, r, d):
        return self.log_qd(r, d) - np.log(d)


def test_condition_for_heuristic_gives_constant_weights():
    m = _ConstantWeightModel(3.0)
    x = polar_sample(np.random.default_rng(0), m, -55.0, np.zeros(2), size=100)
    lw = log_nl_weight(m, x, np.zeros(2), -55.0)
    assert np.allclose(lw, lw[0], atol=1e-12)


def test_rss_condition_fails():
    m = LogDistanceModel(3.0)
    d = np.array([2.0, 8.0, 30.0])
    ratio = np.exp(m.log_f(-55.0, d) + np.log(d) - m.log_qd(-55.0, d))
    assert np.allclose(ratio / d**2, ratio[0] / 4.0, rtol=1e-12)
    assert not np.allclose(ratio, ratio[0])


def test_weighted_mean_rss_matches_quadrature(params):
    r, alpha = -60.0, 3.0
    oracle = radial_mean_oracle(lambda d: float(log_likelihood_distance(r, d, alpha, params)), 1e-6, 500.0)
    x = sample_polar(np.random.default_rng(9), r, (0, 0), alpha, params, size=100_000)
    est = radial_self_normalized_mean(x, (0, 0), nl_log_importance_weight(x, (0, 0), r, alpha, params))
    assert est == pytest.approx(oracle, rel=0.01)
    # closed form of the normalized-likelihood radial law, frozen from the quadrature
    c = math.log(10) / 30
    assert oracle == pytest.approx(math.exp(c * 30 + 2.5 * (3 * c) ** 2), rel=1e-8)


def test_weighted_mean_uniform_model():
    model = UniformRangeModel(2.5)
    oracle = radial_mean_oracle(lambda d: float(model.log_f(7.5, d)), 5.0, 10.0)
    assert oracle == pytest.approx(70.0 / 9.0, rel=1e-10)
    x = polar_sample(np.random.default_rng(3), model, 7.5, np.zeros(2), size=100_000)
    est = radial_self_normalized_mean(x, np.zeros(2), log_nl_weight(model, x, np.zeros(2), 7.5))
    assert est == pytest.approx(oracle, rel=0.01)
    assert radial_self_normalized_mean(x, np.zeros(2)) == pytest.approx(7.5, abs=0.05)


def test_sharp_likelihood_heuristic_agrees():
    p = ChannelParams(noise_std=1e-9)
    x = sample_polar(np.random.default_rng(0), -60.0, (0, 0), 3.0, p, size=1000)
    lw = nl_log_importance_weight(x, (0, 0), -60.0, 3.0, p)
    w = np.exp(lw - lw.max())
    assert w.min() > 0.999


@settings(max_examples=30, deadline=None)
@given(st.floats(-90, -35), st.floats(1.5, 6), st.floats(0.5, 6))
def test_weight_is_d_squared_property(r, alpha, sigma):
    p = ChannelParams(noise_std=sigma)
    d = np.array([1.0, 3.0, 17.0])
    x = np.column_stack((d, np.zeros(3)))
    lw = nl_log_importance_weight(x, (0.0, 0.0), r, alpha, p)
    assert np.allclose(lw - lw[0], 2 * np.log(d), atol=1e-8)

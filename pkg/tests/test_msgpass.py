import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rsscoloc.belief_store import (
    AlphaGridBelief,
    AlphaMessage,
    ParticleBelief,
    PositionMessage,
    Priors,
    Rectangle,
    evaluate_position_message,
)
from rsscoloc.errors import ConfigError
from rsscoloc.msgpass import (
    ALGORITHMS,
    EngineConfig,
    EngineState,
    Problem,
    combine_alpha_messages,
    component_rect_mass_bound,
    log_product_density,
    run,
    sample_product_ais,
    sample_product_is,
    update_alpha_belief,
    update_alpha_message,
    update_position_belief_ais,
    update_position_belief_is,
    update_position_message,
)
from rsscoloc.estimator import alpha_point_estimate
from rsscoloc.rss_model import (
    ChannelParams,
    Measurement,
    MeasurementSet,
    NetworkGeometry,
    log_normalizer_z,
    rss_mean,
    synthesize_measurements,
)

from oracles import (
    grid_posterior,
    install_previous,
    oracle_alpha_message,
    oracle_position_weights,
    radial_mean_normalized_likelihood,
    small_state,
)

RECT = Rectangle(0.0, 0.0, 30.0, 30.0)


@pytest.mark.parametrize("variant", ["SPAWN", "BP"])
def test_alpha_message_matches_double_sum(variant):
    st_, rng = small_state(variant)
    if variant == "BP":
        install_previous(st_, rng)
    for e in st_.problem.edges:
        got = update_alpha_message(st_, e).values
        assert np.allclose(got, oracle_alpha_message(st_, e, variant == "BP"), rtol=1e-12, atol=0)


@pytest.mark.parametrize("variant", ["SPAWN", "BP"])
def test_position_message_matches_oracle(variant):
    st_, rng = small_state(variant)
    if variant == "BP":
        install_previous(st_, rng)
    for t, s in ((1, 2), (2, 1), (1, 3)):
        msg = update_position_message(np.random.default_rng(5), st_, t, s)
        assert np.array_equal(msg.sources, st_.beliefs[s].samples)
        assert set(msg.alphas) <= set(st_.alpha_belief.grid)
        weights, log_z = oracle_position_weights(st_, msg, variant == "BP")
        assert np.allclose(msg.weights, weights, rtol=1e-12, atol=0)
        assert np.allclose(msg.log_z, log_z, rtol=1e-13)


def test_alpha_draws_follow_belief():
    st_, _ = small_state(L=40_000, R=5)
    msg = update_position_message(np.random.default_rng(1), st_, 1, 2)
    grid = st_.alpha_belief.grid
    freq = np.array([np.mean(msg.alphas == a) for a in grid])
    m = st_.alpha_belief.masses
    assert np.all(np.abs(freq - m) < 4 * np.sqrt(m * (1 - m) / 40_000))


def test_position_message_degenerate_inputs():
    st_, _ = small_state(L=8, R=2)
    st_.alpha_belief = AlphaGridBelief(st_.alpha_belief.grid, np.array([0.0, 1.0]))
    st_.beliefs[2] = ParticleBelief(2, np.tile([5.0, 5.0], (8, 1)))
    msg = update_position_message(np.random.default_rng(0), st_, 1, 2)
    assert np.allclose(msg.weights, 1 / 8, rtol=0, atol=1e-15)


def test_spawn_weights_proportional_to_z():
    st_, _ = small_state()
    msg = update_position_message(np.random.default_rng(2), st_, 1, 2)
    z = np.exp(msg.log_z)
    assert np.allclose(msg.weights, z / z.sum(), rtol=1e-13)


def test_position_message_integrates_to_one():
    st_, _ = small_state(L=4)
    msg = update_position_message(np.random.default_rng(0), st_, 2, 3)
    c = (12.0, 22.0)
    f = lambda d, th: float(evaluate_position_message(msg, (c[0] + d * math.cos(th), c[1] + d * math.sin(th)))) * d
    # the sources are the anchor, so polar coordinates around it are exact
    val, _ = integrate.dblquad(f, 0, 2 * math.pi, 0, 2000, epsabs=1e-10, epsrel=1e-9)
    assert val == pytest.approx(1.0, abs=1e-6)


def test_combine_examples():
    got = combine_alpha_messages(np.full(3, 1 / 3), [np.array([0.2, 0.5, 0.3]), np.array([0.1, 0.6, 0.3])])
    assert np.allclose(got, [0.02 / 0.41, 0.30 / 0.41, 0.09 / 0.41], rtol=1e-13)
    assert got[0] == pytest.approx(0.048780, abs=1e-6) and got[1] == pytest.approx(0.731707, abs=1e-6)
    prior = np.array([0.1, 0.2, 0.7])
    assert np.allclose(combine_alpha_messages(prior, [np.full(3, 1 / 3)] * 4), prior, rtol=1e-13)


def test_combine_vanishing_product_falls_back():
    from rsscoloc.belief_store import Diagnostics

    diag = Diagnostics()
    got = combine_alpha_messages(np.full(2, 0.5), [np.array([1.0, 0.0]), np.array([0.0, 1.0])], diag)
    assert np.allclose(got, 0.5) and diag.count("alpha_belief_fallback") == 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.floats(1e-6, 1.0), min_size=4, max_size=4), min_size=1, max_size=8))
def test_combine_is_normalized(messages):
    v = [np.array(m) / sum(m) for m in messages]
    out = combine_alpha_messages(np.full(4, 0.25), v)
    assert abs(out.sum() - 1) < 1e-12 and np.all(out >= 0)


def test_triangle_alpha_posterior():
    pos = np.array([(0.0, 0.0), (12.0, 3.0), (5.0, 14.0)])
    g = NetworkGeometry.from_arrays(pos, [(40.0, 40.0)], 30.0)
    p = ChannelParams(noise_std=1.0)
    ms = MeasurementSet(
        tuple(
            Measurement(i + 1, j + 1, float(rss_mean(-30, 3.0, math.dist(pos[i], pos[j]))) + e)
            for (i, j), e in zip(((0, 1), (0, 2), (1, 2)), (0.4, -0.7, 0.2))
        )
    )
    st_ = EngineState(Problem(g, ms, p, Priors(Rectangle(-5, -5, 45, 45))), EngineConfig(L=10, R=100))
    for k in range(3):
        st_.beliefs[k + 1] = ParticleBelief(k + 1, np.tile(pos[k], (10, 1)))
    for e in st_.problem.edges:
        st_.alpha_msgs[e] = update_alpha_message(st_, e)
    b = update_alpha_belief(st_)
    grid = b.grid
    oracle = np.zeros(grid.size)
    for m in ms.edges:
        d = math.dist(pos[m.i - 1], pos[m.j - 1])
        oracle += -0.5 * (m.r - (-30 - 10 * grid * math.log10(d))) ** 2
    oracle = np.exp(oracle - oracle.max())
    oracle /= oracle.sum()
    assert np.allclose(b.masses, oracle, rtol=1e-9, atol=1e-15)
    step = grid[1] - grid[0]
    assert abs(alpha_point_estimate(b).value - 3.0) <= step


def test_alpha_message_dirac_endpoints_is_likelihood_profile():
    st_, _ = small_state(L=12, R=20)
    st_.beliefs[1] = ParticleBelief(1, np.tile([8.0, 9.0], (12, 1)))
    v = update_alpha_message(st_, (1, 3)).values
    d = math.dist((8.0, 9.0), (12.0, 22.0))
    r = st_.problem.r[(1, 3)]
    prof = np.exp(-0.5 * ((r - (-30 - 10 * st_.alpha_belief.grid * math.log10(d))) / 3.0) ** 2)
    assert np.allclose(v, prof / prof.sum(), rtol=1e-12)


def two_anchor_problem(L=2000, seed=0):
    g = NetworkGeometry.from_arrays([(14.0, 11.0)], [(5.0, 5.0), (24.0, 8.0)], 30.0)
    ms = synthesize_measurements(np.random.default_rng(seed), g, ChannelParams(), 3.0)
    pri = Priors(RECT, alpha_grid=(3.0, 3.5), alpha_masses=(1.0, 0.0))
    return g, ms, pri


def _one_shot(sampler, L, seed, **kw):
    g, ms, pri = two_anchor_problem(L)
    cfg = EngineConfig(belief_sampler=sampler, L=L, R=2, n_max=1, seed=seed, **kw)
    return run(cfg, g, ms, ChannelParams(), pri)


@pytest.mark.parametrize("sampler", ["IS", "AIS"])
def test_two_anchor_posterior_mean(sampler):
    g, ms, pri = two_anchor_problem()
    res = _one_shot(sampler, 2000, 1)
    msgs = res.state.incoming(1)
    mean, cov = grid_posterior(lambda x: log_product_density(msgs, RECT, x), RECT)
    x = res.final.beliefs[1].samples
    se = np.sqrt(np.diag(cov) / x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - mean) < 3 * se * 1.5)


@pytest.mark.parametrize("sampler", ["IS", "AIS"])
def test_ring_posterior_radial_mean(sampler):
    g = NetworkGeometry.from_arrays([(3.0, 8.0)], [(0.0, 0.0)], 30.0)
    r = float(rss_mean(-30, 3.5, 10.0))
    ms = MeasurementSet((Measurement(1, 2, r),))
    pri = Priors(Rectangle(-60, -60, 60, 60), alpha_grid=(3.5, 4.0), alpha_masses=(1.0, 0.0))
    res = run(EngineConfig(belief_sampler=sampler, L=4000, R=2, n_max=2, seed=3), g, ms, ChannelParams(), pri)
    x = res.final.beliefs[1].samples
    assert np.hypot(x[:, 0], x[:, 1]).mean() == pytest.approx(radial_mean_normalized_likelihood(r, 3.5), rel=0.01)


def test_is_single_sharp_component_on_ring():
    p = ChannelParams(noise_std=0.05)
    r = float(rss_mean(-30, 3.0, 8.0))
    msg = PositionMessage(1, 2, r, p, [1.0], [(15.0, 15.0)], [3.0], [log_normalizer_z(r, 3.0, p)])
    x = sample_product_is(np.random.default_rng(0), [msg], RECT, 500)
    d = np.hypot(x[:, 0] - 15, x[:, 1] - 15)
    assert np.all(np.abs(d - 8.0) < 0.2)


def test_ais_dominant_label_is_deterministic():
    p = ChannelParams(noise_std=0.05)
    r = float(rss_mean(-30, 3.0, 5.0))
    w = np.array([1 - 1e-12, 1e-12])
    msg = PositionMessage(1, 2, r, p, w, [(10.0, 10.0), (25.0, 25.0)], [3.0, 3.0], [log_normalizer_z(r, 3.0, p)] * 2)
    x = sample_product_ais(np.random.default_rng(0), [msg], RECT, 500)
    assert np.all(np.abs(np.hypot(x[:, 0] - 10, x[:, 1] - 10) - 5.0) < 0.2)


def test_rect_mass_bound_is_upper_bound():
    rng = np.random.default_rng(0)
    p = ChannelParams()
    r = -55.0
    a = rng.uniform(2, 5, 6)
    src = np.array([(15, 15), (-20, 5), (40, 40), (0, 0), (31, 10), (-3, -3)], dtype=float)
    msg = PositionMessage(1, 2, r, p, np.full(6, 1 / 6), src, a, log_normalizer_z(r, a, p))
    bound = component_rect_mass_bound(msg, RECT)
    from rsscoloc.nlsampler import LogDistanceModel, log_nl_weight, polar_sample

    for k in range(6):
        model = LogDistanceModel(a[k])
        x = polar_sample(rng, model, r, src[k], size=200_000)
        lw = log_nl_weight(model, x, src[k], r)
        w = np.exp(lw - lw.max())
        inside = np.sum(w * RECT.contains(x)) / np.sum(w)
        assert inside <= bound[k] + 0.01


def test_rect_labels_keep_target():
    g, ms, pri = two_anchor_problem()
    means = {}
    for flag in (False, True):
        xs = [_one_shot("AIS", 1000, s, ais_rect_labels=flag).final.beliefs[1].samples.mean(axis=0) for s in range(8)]
        means[flag] = np.mean(xs, axis=0)
    assert np.allclose(means[False], means[True], atol=0.3)


def test_bp_equals_spawn_at_iteration_one():
    g = NetworkGeometry.from_arrays([(8.0, 9.0), (20.0, 14.0), (15.0, 25.0)], [(2.0, 2.0), (28.0, 28.0)], 25.0)
    ms = synthesize_measurements(np.random.default_rng(0), g, ChannelParams(), 3.0)
    out = {}
    for v in ("BP", "SPAWN"):
        out[v] = run(EngineConfig(variant=v, L=200, R=20, n_max=1, seed=4), g, ms, ChannelParams(), Priors(RECT))
    a, b = out["BP"].final, out["SPAWN"].final
    assert np.array_equal(a.alpha_belief.masses, b.alpha_belief.masses)
    for k in g.ids:
        assert np.array_equal(a.beliefs[k].samples, b.beliefs[k].samples)
    sa, sb = out["BP"].state, out["SPAWN"].state
    for e in sa.alpha_msgs:
        assert np.array_equal(sa.alpha_msgs[e].values, sb.alpha_msgs[e].values)
    for e in sa.pos_msgs:
        assert np.array_equal(sa.pos_msgs[e].weights, sb.pos_msgs[e].weights)


def test_no_edges_keeps_priors():
    g = NetworkGeometry.from_arrays([(8.0, 9.0)], [(28.0, 28.0)], 5.0)
    res = run(EngineConfig(L=50, R=10, n_max=1), g, MeasurementSet(()), ChannelParams(), Priors(RECT))
    assert np.array_equal(res.history[0].beliefs[1].samples, res.final.beliefs[1].samples)
    assert np.allclose(res.final.alpha_belief.masses, 0.1)


@pytest.mark.parametrize("algorithm", sorted(ALGORITHMS))
def test_run_invariants_and_determinism(algorithm):
    g = NetworkGeometry.from_arrays([(8.0, 9.0), (20.0, 14.0), (15.0, 25.0)], [(2.0, 2.0), (28.0, 28.0)], 25.0)
    ms = synthesize_measurements(np.random.default_rng(0), g, ChannelParams(), 3.0)
    cfg = EngineConfig.from_algorithm(algorithm, L=60, R=15, n_max=3, seed=9)
    a = run(cfg, g, ms, ChannelParams(), Priors(RECT))
    b = run(cfg, g, ms, ChannelParams(), Priors(RECT))
    assert len(a.history) == 4
    for ra, rb in zip(a.history, b.history):
        assert abs(ra.alpha_belief.masses.sum() - 1) < 1e-12
        assert np.array_equal(ra.alpha_belief.masses, rb.alpha_belief.masses)
        for k in g.ids:
            assert np.array_equal(ra.beliefs[k].samples, rb.beliefs[k].samples)
        for k in g.anchor_ids:
            assert np.all(ra.beliefs[k].samples == g.position(k))
    for m in a.state.alpha_msgs.values():
        assert abs(m.values.sum() - 1) < 1e-12
    for m in a.state.pos_msgs.values():
        assert abs(m.weights.sum() - 1) < 1e-12


def test_synchronous_schedule_runs_and_is_deterministic():
    g = NetworkGeometry.from_arrays([(8.0, 9.0), (20.0, 14.0)], [(2.0, 2.0), (28.0, 28.0)], 25.0)
    ms = synthesize_measurements(np.random.default_rng(0), g, ChannelParams(), 3.0)
    out = [
        run(EngineConfig(L=50, R=10, n_max=2, schedule="synchronous", workers=w), g, ms, ChannelParams(), Priors(RECT))
        for w in (1, 3)
    ]
    for k in g.ids:
        assert np.array_equal(out[0].final.beliefs[k].samples, out[1].final.beliefs[k].samples)


def test_belief_wrappers_and_empty_incoming():
    st_, _ = small_state(L=30)
    rng = np.random.default_rng(0)
    old = st_.beliefs[1]
    assert update_position_belief_is(rng, st_, 1) is old
    st_.pos_msgs[(1, 3)] = update_position_message(rng, st_, 1, 3)
    assert update_position_belief_is(rng, st_, 1).L == 30
    assert update_position_belief_ais(rng, st_, 1).L == 30


def test_config_validation():
    with pytest.raises(ConfigError):
        EngineConfig(L=1)
    with pytest.raises(ConfigError):
        EngineConfig(R=1)
    with pytest.raises(ConfigError):
        EngineConfig(n_max=0)
    with pytest.raises(ConfigError):
        EngineConfig(variant="MAX")
    with pytest.raises(ConfigError):
        EngineConfig.from_algorithm("gibbs")
    assert EngineConfig.from_algorithm("BP-IS").algorithm == "bp-is"


def test_problem_rejects_anchor_pairs():
    g = NetworkGeometry.from_arrays([(8.0, 9.0)], [(2.0, 2.0), (28.0, 28.0)], 50.0)
    ms = MeasurementSet((Measurement(2, 3, -70.0),))
    with pytest.raises(ConfigError):
        Problem(g, ms, ChannelParams(), Priors(RECT))


def test_network2_alpha_belief_sharpens():
    from rsscoloc.harness import load_bundled_network, position_prior

    g = load_bundled_network("network2_agents", 20.0)
    p = ChannelParams()
    ok = 0
    for s in range(10):
        ms = synthesize_measurements(np.random.default_rng(1000 + s), g, p, 3.5)
        res = run(EngineConfig(L=1000, R=100, n_max=10, seed=s), g, ms, p, Priors(position_prior(g)))
        var = []
        for n in (1, 3, 10):
            b = res.history[n].alpha_belief
            mu = b.masses @ b.grid
            var.append(b.masses @ (b.grid - mu) ** 2)
        ok += var[0] > var[1] > var[2]
    assert ok >= 8

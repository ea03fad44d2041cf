import dataclasses
import math

import numpy as np
import pytest

from quorumexit.metrics import ppd
from quorumexit.search import (
    ArchParams,
    Particle,
    SVGDConfig,
    discretize,
    elbo_step,
    fit_posterior,
    gumbel_sample,
    init_swarm,
    kl_uniform,
    macs_penalty,
    make_logits_posterior,
    run_svgd,
    select_ensemble,
    soft_sample_grad_chain,
    svgd_direction,
    svgd_rd_step,
    uniform_params,
    _stable_softmax,
)
from quorumexit.supernet import build_supernet
from quorumexit.toytrain import (
    ConfigError,
    JointLossConfig,
    SyntheticTask,
    ToyLearner,
    gen_task,
    train_joint,
)


def toy_data(overlap=0.2, seed=3, classes=3):
    task = SyntheticTask(
        classes=classes, dim=2, overlap=overlap, n_train=256, n_test=200, seed=seed
    )
    return gen_task(task)


# --- Gumbel-softmax sampling --------------------------------------------------


def test_gumbel_sums_to_one():
    rng = np.random.default_rng(0)
    for _ in range(50):
        alpha = rng.standard_normal(int(rng.integers(2, 6)))
        z = gumbel_sample(alpha, float(rng.uniform(0.1, 3.0)), 7)
        assert np.all(z > 0)
        assert abs(z.sum() - 1.0) <= 1e-12


def test_gumbel_deterministic_given_seed():
    alpha = np.array([0.3, -0.2, 1.1])
    assert np.array_equal(gumbel_sample(alpha, 0.7, 42), gumbel_sample(alpha, 0.7, 42))


def test_gumbel_low_temperature_is_nearly_one_hot():
    alpha = np.array([0.5, 0.1, -0.3])
    z = gumbel_sample(alpha, 1e-3, 5)
    assert z.max() >= 0.999


def test_gumbel_symmetric_choices_uniform():
    alpha = np.zeros(3)
    rng = np.random.default_rng(123)
    draws = 10_000
    counts = np.zeros(3)
    for _ in range(draws):
        counts[int(np.argmax(gumbel_sample(alpha, 1.0, rng)))] += 1
    p = 1.0 / 3
    sigma = math.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) <= 3 * sigma)


def test_gumbel_rejects_bad_inputs():
    with pytest.raises(ConfigError, match="non-finite"):
        gumbel_sample(np.array([np.inf, 0.0]), 1.0, 0)
    with pytest.raises(ConfigError, match="temperature"):
        gumbel_sample(np.array([0.0, 1.0]), 0.0, 0)


def gumbel_grad_error(alpha, lam, seed, weights, h=1e-6):
    z = gumbel_sample(alpha, lam, seed)
    analytic = soft_sample_grad_chain(z, weights, lam)
    numeric = np.zeros_like(alpha)
    for i in range(alpha.size):
        up = alpha.copy()
        up[i] += h
        down = alpha.copy()
        down[i] -= h
        f_up = float(np.dot(weights, gumbel_sample(up, lam, seed)))
        f_down = float(np.dot(weights, gumbel_sample(down, lam, seed)))
        numeric[i] = (f_up - f_down) / (2 * h)
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-4)
    return float(np.max(np.abs(analytic - numeric) / scale))


def test_gumbel_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    for trial in range(10):
        alpha = rng.standard_normal(int(rng.integers(2, 6)))
        weights = rng.standard_normal(alpha.size)
        lam = float(rng.uniform(0.4, 2.0))
        assert gumbel_grad_error(alpha, lam, 100 + trial, weights) <= 1e-5


# --- expected-MACs penalty ----------------------------------------------------


def penalty_supernet(macs):
    data = toy_data()
    menus = [tuple(8 for _ in row) for row in macs]
    return build_supernet(data, menus, seed=0, macs=macs)


def test_penalty_one_hot():
    sn = penalty_supernet([[15.0, 40.0]])
    assert macs_penalty(sn, [np.array([0.0, 1.0])]) == 40.0


def test_penalty_uniform_expectation():
    sn = penalty_supernet([[10.0, 30.0]])
    assert macs_penalty(sn, [np.array([0.5, 0.5])]) == pytest.approx(20.0)


def test_penalty_linearity():
    sn = penalty_supernet([[3.0, 11.0, 20.0]])
    rng = np.random.default_rng(2)
    for _ in range(20):
        z1 = rng.dirichlet([1.0] * 3)
        z2 = rng.dirichlet([1.0] * 3)
        a = float(rng.uniform())
        mix = a * z1 + (1 - a) * z2
        lhs = macs_penalty(sn, [mix])
        rhs = a * macs_penalty(sn, [z1]) + (1 - a) * macs_penalty(sn, [z2])
        assert lhs == pytest.approx(rhs, rel=1e-12)


def test_penalty_dimension_mismatch():
    sn = penalty_supernet([[10.0, 30.0]])
    with pytest.raises(ConfigError):
        macs_penalty(sn, [np.array([1.0, 0.0, 0.0])])


def test_penalty_gradient_through_sampling():
    sn = penalty_supernet([[10.0, 30.0, 55.0]])
    rng = np.random.default_rng(3)
    for trial in range(10):
        alpha = rng.standard_normal(3)
        lam = float(rng.uniform(0.4, 1.5))
        seed = 300 + trial
        z = gumbel_sample(alpha, lam, seed)
        analytic = soft_sample_grad_chain(z, sn.macs[0], lam)
        h = 1e-6
        numeric = np.zeros(3)
        for i in range(3):
            up, down = alpha.copy(), alpha.copy()
            up[i] += h
            down[i] -= h
            numeric[i] = (
                macs_penalty(sn, [gumbel_sample(up, lam, seed)])
                - macs_penalty(sn, [gumbel_sample(down, lam, seed)])
            ) / (2 * h)
        scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-4)
        assert float(np.max(np.abs(analytic - numeric) / scale)) <= 1e-5


def test_supernet_mixing_gradient_matches_finite_differences():
    data = toy_data()
    sn = build_supernet(data, [(8, 16, 24), (8, 16)], seed=1)
    rng = np.random.default_rng(7)
    z_list = [rng.dirichlet([1.0] * 3), rng.dirichlet([1.0] * 2)]
    _nll, grad_z = sn.joint_nll(z_list)
    h = 1e-6
    for i, z in enumerate(z_list):
        for k in range(z.size):
            up = [v.copy() for v in z_list]
            down = [v.copy() for v in z_list]
            up[i][k] += h
            down[i][k] -= h
            numeric = (sn.joint_nll(up)[0] - sn.joint_nll(down)[0]) / (2 * h)
            assert grad_z[i][k] == pytest.approx(numeric, abs=1e-6)


# --- variational fitting ------------------------------------------------------


def test_kl_uniform_is_zero_at_uniform():
    assert kl_uniform([np.zeros(4), np.full(3, 1.7)]) == pytest.approx(0.0, abs=1e-12)


def test_kl_uniform_nonnegative_and_positive_off_uniform():
    rng = np.random.default_rng(5)
    for _ in range(50):
        logits = [rng.standard_normal(int(rng.integers(2, 6))) for _ in range(2)]
        assert kl_uniform(logits) >= 0.0
    assert kl_uniform([np.array([2.0, -2.0])]) > 0.0


def test_large_kl_weight_drives_logits_uniform():
    data = toy_data()
    sn = build_supernet(data, [(8, 16, 24)] * 2, seed=0)
    phi = ArchParams((np.array([2.0, -1.0, 0.5]), np.array([0.3, 1.5, -0.7])), 1.0)
    for it in range(600):
        phi, _nll, _kl = elbo_step(phi, sn, beta_kl=100.0, eta=0.05, seed=100 + it)
    assert kl_uniform(phi.alpha) <= 1e-3


def test_dominant_op_takes_the_mass():
    data = toy_data()
    sn = build_supernet(data, [(8, 8)], seed=0, quality=[[1.0, 0.0]])
    assert sn.nll_of_discrete((0,)) < sn.nll_of_discrete((1,))
    phi, _ = fit_posterior(
        sn, iterations=300, eta=0.2, beta_kl=0.0, cost_weight=0.0, seed=1
    )
    assert _stable_softmax(phi.alpha[0])[0] >= 0.95


def test_cost_penalty_prefers_cheaper_equal_op():
    data = toy_data()
    sn = build_supernet(
        data, [(8, 8)], seed=0, quality=[[1.0, 1.0]], macs=[[10.0, 30.0]]
    )
    assert sn.nll_of_discrete((0,)) == sn.nll_of_discrete((1,))
    phi, _ = fit_posterior(
        sn, iterations=300, eta=0.2, beta_kl=0.0, cost_weight=0.01, seed=3
    )
    assert _stable_softmax(phi.alpha[0])[0] > 0.5


def test_elbo_returns_nll_and_kl():
    data = toy_data()
    sn = build_supernet(data, [(8, 16)], seed=0)
    phi = uniform_params((2,), 1.0)
    _phi, nll, kl = elbo_step(phi, sn, beta_kl=0.1, eta=0.05, seed=0)
    assert math.isfinite(nll) and nll > 0
    assert kl == pytest.approx(0.0, abs=1e-12)


# --- SVGD with regularized diversity ------------------------------------------


def std_normal(positions):
    return -0.5 * np.sum(positions**2, axis=1), -positions


def test_near_identical_particles_separate():
    cfg = SVGDConfig(
        particle_count=2, step_size=0.1, momentum=0.0, delta=0.0,
        iterations=1, bandwidth=1.0,
    )
    pair = [Particle.at(np.array([0.5])), Particle.at(np.array([0.5 + 1e-6]))]
    out = svgd_rd_step(pair, std_normal, cfg)
    assert abs(out[1].position[0] - out[0].position[0]) > 1e-6


def test_delta_minus_one_removes_repulsion():
    rng = np.random.default_rng(8)
    positions = rng.standard_normal((6, 2))
    _vals, grads = std_normal(positions)
    cfg = SVGDConfig(particle_count=6, delta=-1.0, bandwidth=1.0)
    direction = svgd_direction(positions, grads, cfg)
    sq = np.sum(
        (positions[:, None, :] - positions[None, :, :]) ** 2, axis=2
    )
    kmat = np.exp(-sq / 1.0)
    assert np.allclose(direction, (kmat @ grads) / 6, atol=1e-14)


def test_delta_kernel_degenerates_to_scaled_gradient_ascent():
    rng = np.random.default_rng(9)
    positions = rng.standard_normal((5, 3))
    _vals, grads = std_normal(positions)
    cfg = SVGDConfig(particle_count=5, delta=0.0, kernel="delta")
    direction = svgd_direction(positions, grads, cfg)
    assert np.allclose(direction, grads / 5)


def test_svgd_step_deterministic():
    swarm = init_swarm(np.zeros(2), 8, spread=1.0, seed=4)
    cfg = SVGDConfig(particle_count=8, iterations=1, delta=-1.3)
    a = svgd_rd_step(swarm, std_normal, cfg)
    b = svgd_rd_step(swarm, std_normal, cfg)
    for pa, pb in zip(a, b):
        assert np.array_equal(pa.position, pb.position)


def test_svgd_standard_normal_moments_short():
    cfg = SVGDConfig(particle_count=32, step_size=0.1, momentum=0.9, delta=0.0, iterations=500)
    swarm = init_swarm(np.zeros(1), 32, spread=2.0, seed=11)
    swarm, _ = run_svgd(swarm, std_normal, cfg)
    xs = np.array([p.position[0] for p in swarm])
    assert abs(xs.mean()) <= 0.15
    assert abs(xs.var() - 1.0) <= 0.25


def test_amplified_repulsion_covers_both_modes():
    centers = np.array([-2.0, 2.0])

    def mixture(positions):
        x = positions[:, 0]
        d = -0.5 * (x[:, None] - centers[None, :]) ** 2
        m = d.max(axis=1)
        log_p = m + np.log(np.exp(d - m[:, None]).sum(axis=1)) - math.log(2.0)
        w = np.exp(d - m[:, None])
        w /= w.sum(axis=1, keepdims=True)
        grad = -(x[:, None] - centers[None, :])
        return log_p, (w * grad).sum(axis=1, keepdims=True)

    cfg = SVGDConfig(particle_count=16, step_size=0.1, momentum=0.9, delta=1.0, iterations=800)
    swarm = init_swarm(np.zeros(1), 16, spread=1.0, seed=21)
    swarm, _ = run_svgd(swarm, mixture, cfg)
    xs = np.array([p.position[0] for p in swarm])
    assert (xs < 0).any() and (xs > 0).any()


def test_svgd_config_validation():
    with pytest.raises(ConfigError, match="particles"):
        SVGDConfig(particle_count=1)
    with pytest.raises(ConfigError, match="step size"):
        SVGDConfig(particle_count=2, step_size=0.0)
    with pytest.raises(ConfigError, match="bandwidth"):
        SVGDConfig(particle_count=2, bandwidth=-1.0)
    with pytest.raises(ConfigError, match="kernel"):
        SVGDConfig(particle_count=2, kernel="triangle")


def test_logits_posterior_gradient():
    phi = ArchParams((np.array([0.7, -0.4]), np.array([0.1, 0.9, -1.2])), 1.0)
    log_posterior = make_logits_posterior(phi)
    rng = np.random.default_rng(14)
    positions = rng.standard_normal((3, 5))
    values, grads = log_posterior(positions)
    h = 1e-6
    for row in range(3):
        for i in range(5):
            up, down = positions.copy(), positions.copy()
            up[row, i] += h
            down[row, i] -= h
            numeric = (log_posterior(up)[0][row] - log_posterior(down)[0][row]) / (2 * h)
            assert grads[row, i] == pytest.approx(numeric, abs=1e-6)
    assert np.all(values <= 0.0)  # log-probabilities of categorical masses


# --- ensemble selection -------------------------------------------------------


def test_discretize_segments():
    assert discretize(np.array([0.2, 1.5, -0.3, 0.1, 0.9]), (2, 3)) == (1, 2)


def test_select_ensemble_ranks_by_nll():
    data = toy_data()
    sn = build_supernet(data, [(8, 16, 24)], seed=0)
    swarm = [
        Particle.at(np.array([3.0, 0.0, 0.0])),
        Particle.at(np.array([0.0, 3.0, 0.0])),
        Particle.at(np.array([0.0, 0.0, 3.0])),
    ]
    archs = select_ensemble(swarm, sn, 3)
    assert len(archs) == 3
    nlls = [sn.nll_of_discrete(a) for a in archs]
    assert nlls == sorted(nlls)


def test_select_ensemble_warns_on_collapse(caplog):
    data = toy_data()
    sn = build_supernet(data, [(8, 16)], seed=0)
    swarm = [Particle.at(np.array([1.0, 0.0]))] * 3
    with caplog.at_level("WARNING"):
        archs = select_ensemble(swarm, sn, 3)
    assert archs == [(0,)]
    assert any("distinct architectures" in r.message for r in caplog.records)


def test_select_ensemble_requires_enough_particles():
    data = toy_data()
    sn = build_supernet(data, [(8, 16)], seed=0)
    with pytest.raises(ConfigError, match="fewer than"):
        select_ensemble([Particle.at(np.array([1.0, 0.0]))], sn, 2)


def test_searched_ensemble_diversity_beats_identical_baseline():
    data = toy_data(overlap=0.8, seed=5, classes=3)
    sn = build_supernet(data, [(8, 16, 24)] * 2, seed=0)
    phi, _ = fit_posterior(sn, iterations=120, eta=0.05, beta_kl=0.25, seed=0)
    cfg = SVGDConfig(particle_count=12, iterations=150, delta=-1.3, seed=0)
    swarm = init_swarm(phi.flatten(), 12, spread=2.0, seed=1)
    swarm, _ = run_svgd(swarm, make_logits_posterior(phi), cfg)
    archs = select_ensemble(swarm, sn, 3)
    while len(archs) < 2:
        archs.append(archs[0])

    train_cfg = JointLossConfig(epochs=80, learning_rate=0.05, batch_size=32)
    searched = []
    for j, arch in enumerate(archs):
        learner = ToyLearner(2, 3, sn.materialize(arch), seed=50 + j)
        train_joint(learner, data, dataclasses.replace(train_cfg, seed=60 + j))
        searched.append(learner)
    searched_ppd = [
        ppd([np.argmax(l.predict_proba(data.x_test)[e], axis=1) for l in searched])
        for e in range(2)
    ]

    # same architecture, same seed everywhere: a perfectly redundant ensemble
    baseline = []
    for _ in range(3):
        learner = ToyLearner(2, 3, sn.materialize(archs[0]), seed=50)
        train_joint(learner, data, dataclasses.replace(train_cfg, seed=60))
        baseline.append(learner)
    baseline_ppd = [
        ppd([np.argmax(l.predict_proba(data.x_test)[e], axis=1) for l in baseline])
        for e in range(2)
    ]
    assert baseline_ppd == [0.0, 0.0]
    for e in range(2):
        assert searched_ppd[e] >= baseline_ppd[e]

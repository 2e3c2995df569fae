import numpy as np
import pytest
from scipy import optimize

from vrestim import geometry as geo
from vrestim import oracles, rng


def box_problem(d=6, noise=1.0, seed=5):
    g = geo.box(np.full(d, -1.0), np.full(d, 1.0))
    raw = rng.normals(seed, 0, rng.STREAM_MISC, np.arange(d), 0, d)
    a = raw @ raw.T / d + np.eye(d)
    return oracles.NoisyQuadratic(g, a, noise_std=noise)


def test_subgaussian_std_examples():
    sigma = 1.3
    assert oracles.subgaussian_std_for_proxy(sigma, 1) ** 2 == pytest.approx(
        3.0 / 8.0 * sigma ** 2)
    stds = [oracles.subgaussian_std_for_proxy(sigma, d) for d in (1, 2, 5, 20, 200)]
    assert all(a > b for a, b in zip(stds, stds[1:]))
    # round trip with the inverse map
    assert oracles.gaussian_proxy_for_std(stds[3], 20) == pytest.approx(sigma)
    with pytest.raises(ValueError):
        oracles.subgaussian_std_for_proxy(0.0, 3)


def test_subgaussian_certificate_monte_carlo():
    # E[exp(||Z||^2 / sigma^2)] <= 2 at the certified std, within MC error.
    d, sigma = 4, 2.0
    s = oracles.subgaussian_std_for_proxy(sigma, d)
    z = s * rng.normals(17, 0, rng.STREAM_MISC, np.arange(250000), 1, d)
    moment = np.exp((z ** 2).sum(axis=-1) / sigma ** 2).mean()
    assert moment <= 2.02
    assert moment >= 1.9  # the certificate is tight, not slack


def test_linear_gaussian_population_is_zero():
    g = geo.box(np.full(3, -2.0), np.full(3, 2.0))
    prob = oracles.LinearGaussian(g, 0.3 * np.eye(3))
    w = np.array([0.5, -1.0, 2.0])
    assert prob.eval_g(w) == 0.0
    assert prob.eval_g(np.zeros((4, 3))).shape == (4,)


def test_noisy_quadratic_zero_noise_is_exact():
    prob = box_problem(noise=0.0)
    w = 0.3 * np.ones(6)
    sample = oracles.draw_sample(1, 0, 0, 1)
    assert np.array_equal(prob.eval_G(w, sample), prob.eval_g(w))


def test_unbiasedness_monte_carlo():
    prob = box_problem(noise=1.5)
    w = np.linspace(-0.9, 0.9, 6)
    n = 100000
    sample = oracles.draw_sample(23, 0, np.arange(n), 1)
    draws = prob.eval_G(np.broadcast_to(w, (n, 6)), sample)
    mean = draws.mean(axis=0)
    se = draws.std(axis=0) / np.sqrt(n)
    assert np.all(np.abs(mean - prob.eval_g(w)) <= 5.0 * se + 1e-12)


def test_shared_sample_repeatability():
    prob = box_problem()
    s = oracles.draw_sample(9, 0, 3, 7)
    w1, w2 = 0.2 * np.ones(6), -0.4 * np.ones(6)
    d1 = prob.eval_G(w1, s) - prob.eval_G(w2, s)
    d2 = prob.eval_G(w1, s) - prob.eval_G(w2, s)
    assert np.array_equal(d1, d2)


def test_jvp_against_finite_differences():
    prob = box_problem(noise=0.7)
    s = oracles.draw_sample(4, 0, 0, 2)
    w = 0.1 * np.ones(6)
    direction = np.linspace(-1.0, 1.0, 6)
    jvp = prob.eval_jvp(w, s, direction)
    eps = 1e-6
    fd = (prob.eval_G(w + eps * direction, s) - prob.eval_G(w, s)) / eps
    assert np.linalg.norm(fd - jvp) <= 1e-4 * max(1.0, np.linalg.norm(jvp))
    assert np.array_equal(prob.eval_jvp(w, s, np.zeros(6)), np.zeros(6))


def test_jvp_finite_difference_finite_sum():
    g = geo.box(np.full(3, -1.0), np.full(3, 1.0))
    mats = np.stack([np.eye(3), 2 * np.eye(3), np.diag([1.0, 2.0, 3.0])])
    offs = np.stack([np.zeros(3), np.ones(3), -np.ones(3)])
    prob = oracles.FiniteSum(g, mats, offs)
    s = oracles.draw_sample(4, 0, 5, 2)
    w = np.array([0.1, -0.2, 0.3])
    direction = np.array([1.0, 0.5, -0.5])
    fd = (prob.eval_G(w + 1e-6 * direction, s) - prob.eval_G(w, s)) / 1e-6
    assert np.allclose(fd, prob.eval_jvp(w, s, direction), atol=1e-4)


def test_finite_sum_constants_and_unbiasedness():
    g = geo.box(np.full(3, -1.0), np.full(3, 1.0))
    mats = np.stack([np.eye(3), 3 * np.eye(3)])
    offs = np.zeros((2, 3))
    prob = oracles.FiniteSum(g, mats, offs)
    assert prob.constants.ell == pytest.approx(2.0 * 3.0)
    n = 50000
    w = np.array([0.5, 0.5, -0.5])
    sample = oracles.draw_sample(31, 0, np.arange(n), 1)
    draws = prob.eval_G(np.broadcast_to(w, (n, 3)), sample)
    assert np.allclose(draws.mean(axis=0), prob.eval_g(w), atol=0.03)


def test_centered_difference_proxy_certificate():
    # E[exp(||Delta||^2 / (ell ||w - w'||)^2)] <= 2 empirically, pooled over
    # 100 random point pairs with 1000 shared-sample draws each.
    prob = box_problem(noise=0.8)
    ell = prob.constants.ell
    moments = []
    for pair in range(100):
        w = rng.uniforms(41, 0, rng.STREAM_MISC, pair, 1, 6) * 2.0 - 1.0
        w2 = rng.uniforms(41, 0, rng.STREAM_MISC, pair, 2, 6) * 2.0 - 1.0
        n = 1000
        sample = oracles.draw_sample(42 + pair, 0, np.arange(n), 1)
        wb = np.broadcast_to(w, (n, 6))
        w2b = np.broadcast_to(w2, (n, 6))
        delta = (prob.eval_G(wb, sample) - prob.eval_G(w2b, sample)) \
            - (prob.eval_g(w) - prob.eval_g(w2))
        ratio = (delta ** 2).sum(axis=-1) / (ell ** 2 * ((w - w2) ** 2).sum())
        moments.append(np.exp(ratio))
    pooled = float(np.concatenate(moments).mean())
    assert pooled <= 2.05


def test_batch_mean_matches_lane_average():
    prob = box_problem()
    w = 0.25 * np.ones((3, 6))
    sample = oracles.draw_sample(2, 0, np.arange(3), 4)
    mean = oracles.batch_mean_G(prob, w, sample, 8)
    singles = [
        prob.eval_G(w, oracles.draw_sample(2, 0, np.arange(3)[:, None], 4,
                                           lane=np.array([i]),
                                           stream=rng.STREAM_BATCH))[:, 0]
        for i in range(8)
    ]
    assert np.allclose(mean, np.mean(singles, axis=0), atol=1e-12)


def test_constrained_linear_optimum_matches_linprog():
    d = 4
    g = geo.box(np.full(d, -1.0), np.full(d, 1.0))
    prob = oracles.ConstrainedLinear(g, cost=np.array([1.0, 2.0, -0.5, 1.5]),
                                     normal=-np.ones(d), offset=0.5,
                                     noise_std=0.4)
    res = optimize.linprog(prob.cost, A_ub=prob.normal[None, :],
                           b_ub=[-prob.offset], bounds=[(-1.0, 1.0)] * d)
    assert res.success
    assert prob.f_star == pytest.approx(res.fun, abs=1e-9)
    assert prob.h(prob.w_star) <= 1e-9


def test_constrained_linear_simplex_optimum():
    d = 5
    prob = oracles.ConstrainedLinear(geo.simplex(d),
                                     cost=np.linspace(1.0, 2.0, d),
                                     normal=np.linspace(-1.0, 1.0, d),
                                     offset=0.1, noise_std=0.2)
    res = optimize.linprog(prob.cost, A_ub=prob.normal[None, :],
                           b_ub=[-prob.offset],
                           A_eq=np.ones((1, d)), b_eq=[1.0],
                           bounds=[(0.0, 1.0)] * d)
    assert res.success
    assert prob.f_star == pytest.approx(res.fun, abs=1e-9)


def test_constrained_linear_scalar_oracle_unbiased():
    d = 4
    g = geo.box(np.full(d, -1.0), np.full(d, 1.0))
    prob = oracles.ConstrainedLinear(g, cost=np.ones(d), normal=-np.ones(d),
                                     offset=0.5, noise_std=0.5)
    w = np.array([0.3, -0.2, 0.8, 0.1])
    n = 100000
    sample = oracles.draw_sample(77, 0, np.arange(n), 1)
    draws = prob.eval_G(np.broadcast_to(w, (n, d)), sample)
    se = draws.std() / np.sqrt(n)
    assert abs(draws.mean() - prob.h(w)) <= 5 * se


def test_infeasible_constraint_rejected():
    d = 2
    g = geo.box(np.zeros(d), np.ones(d))
    with pytest.raises(ValueError):
        oracles.ConstrainedLinear(g, cost=np.ones(d), normal=np.ones(d),
                                  offset=5.0, noise_std=0.1)


def test_problem_constants_derived_scales():
    c = oracles.ProblemConstants(sigma=2.0, L=1.0, ell=0.5, gamma=0.25,
                                 alpha=0.4, delta_f=2.0)
    assert c.sigma_L == pytest.approx(np.sqrt(2.0))
    assert c.sigma_ell == pytest.approx(1.0)
    assert c.sigma_gamma == pytest.approx(np.sqrt(0.5))
    assert c.sigma_alpha == pytest.approx((4.0 * 0.4) ** (1 / 3))
    with pytest.raises(ValueError):
        oracles.ProblemConstants(sigma=-1.0, L=0, ell=0, gamma=0, alpha=0)
    with pytest.raises(ValueError):
        _ = oracles.ProblemConstants(sigma=1, L=1, ell=1, gamma=1, alpha=1).sigma_L

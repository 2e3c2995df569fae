import numpy as np
import pytest

from vrestim import geometry as geo
from vrestim import oracles, rng
from vrestim.estimator import (
    FAMILY_FIRST,
    FAMILY_SECOND,
    FAMILY_ZEROTH,
    EstimatorConfig,
    Schedule,
    correction_term,
    estimator_init,
    estimator_step,
    run_estimation_trajectory,
    variance_proxy,
)


class LaneValueOracle:
    """Scalar stub returning a prescribed value per batch lane (for batch math)."""

    scalar_valued = True
    supports_jvp = False
    geometry = geo.euclidean(1)
    constants = oracles.ProblemConstants(sigma=1.0, L=0.0, ell=0.0, gamma=0.0, alpha=0.0)

    def __init__(self, lane_values):
        self.lane_values = np.asarray(lane_values, dtype=float)

    def eval_g(self, w):
        w = np.asarray(w, dtype=float)
        return np.full(w.shape[:-1], self.lane_values.mean())

    def eval_G(self, w, sample):
        lane = np.asarray(sample.lane)
        base = np.zeros(np.broadcast(np.asarray(sample.trial), lane).shape)
        return base + self.lane_values[lane % len(self.lane_values)]


def box_problem(d=4, noise=1.0, seed=2):
    g = geo.box(np.full(d, -1.0), np.full(d, 1.0))
    a = np.diag(np.linspace(0.5, 1.0, d))
    return oracles.NoisyQuadratic(g, a, noise_std=noise)


def constant_path(w0, horizon):
    return np.broadcast_to(w0, (horizon + 1, w0.shape[0])).copy()


def drift_path(problem, horizon, eta, seed=3):
    """Feasible path with per-step displacement exactly <= eta (G = 1)."""
    d = problem.geometry.dimension
    steps = rng.normals(seed, 0, rng.STREAM_MISC, np.arange(horizon), 0, d)
    steps = eta * steps / np.linalg.norm(steps, axis=-1, keepdims=True)
    path = [0.25 * np.ones(d)]
    for k in range(horizon):
        nxt = np.clip(path[-1] + steps[k], problem.geometry.lower,
                      problem.geometry.upper)
        path.append(nxt)
    return np.stack(path)


def test_init_batch_average_of_lane_values():
    prob = LaneValueOracle([1.0, 3.0])
    config = EstimatorConfig(FAMILY_FIRST, 1.0, Schedule.never(), 2, 0.1, 4)
    state, record = estimator_init(config, prob, np.zeros(1), master=0)
    assert state.v[0] == pytest.approx(2.0)
    assert record.reset.all() and record.t == 0
    assert state.reset_times == [[0]]
    assert state.calls[0] == 2


def test_init_zero_noise_equals_population():
    prob = box_problem(noise=0.0)
    config = EstimatorConfig(FAMILY_FIRST, 1.0, Schedule.never(), 3, 0.1, 4)
    w0 = 0.5 * np.ones(4)
    state, _ = estimator_init(config, prob, w0, master=1)
    assert np.allclose(state.v[0], prob.eval_g(w0), atol=1e-15)


def test_init_batch_variance_scaling():
    prob = box_problem(noise=1.0)
    w0 = 0.9 * np.ones(4)
    stds = {}
    for batch in (1, 16):
        config = EstimatorConfig(FAMILY_FIRST, 1.0, Schedule.never(), batch, 0.1, 1)
        state, _ = estimator_init(config, prob, w0, master=5, trials=4000)
        stds[batch] = state.v.std(axis=0).mean()
    assert stds[16] == pytest.approx(stds[1] / 4.0, rel=0.1)


def test_batch_size_zero_rejected():
    prob = box_problem()
    with pytest.raises(ValueError):
        EstimatorConfig(FAMILY_FIRST, 1.0, Schedule.never(), 0, 0.1, 4)
    config = EstimatorConfig(FAMILY_FIRST, 1.0, Schedule.never(), 1, 0.1, 4)
    with pytest.raises(ValueError):
        oracles.batch_mean_G(prob, np.zeros(4), oracles.draw_sample(0, 0, 0, 0), 0)


def test_correction_term_families():
    prob = box_problem(noise=0.8)
    s = oracles.draw_sample(7, 0, 0, 3)
    w, w_prev = 0.2 * np.ones(4), -0.3 * np.ones(4)
    assert np.array_equal(correction_term(FAMILY_FIRST, prob, s, w, w_prev, 0.9),
                          np.zeros(4))
    # coincident points: zero for all three families
    for fam in (FAMILY_ZEROTH, FAMILY_FIRST, FAMILY_SECOND):
        np.testing.assert_allclose(
            correction_term(fam, prob, s, w, w, 0.9), np.zeros(4), atol=1e-15)
    # affine field: the Taylor remainder vanishes for every draw
    for trial in range(20):
        s_t = oracles.draw_sample(7, 0, trial, 3)
        corr = correction_term(FAMILY_SECOND, prob, s_t, w, w_prev, 0.9)
        np.testing.assert_allclose(corr, np.zeros(4), atol=1e-12)


def test_beta_zero_collapses_to_plain_sample():
    prob = box_problem(noise=1.0)
    config = EstimatorConfig(FAMILY_ZEROTH, 0.0, Schedule.never(), 1, 0.05, 6)
    path = drift_path(prob, 6, 0.05)
    log = run_estimation_trajectory(prob, path, config, master=11)
    for rec in log.records[1:]:
        direct = prob.eval_G(path[rec.t], oracles.draw_sample(11, 0, np.arange(1), rec.t))
        assert np.array_equal(rec.value, direct)


def test_first_order_zero_noise_telescopes_exactly():
    prob = box_problem(noise=0.0)
    config = EstimatorConfig(FAMILY_FIRST, 1.0, Schedule.never(), 1, 0.05, 10)
    path = drift_path(prob, 10, 0.05)
    log = run_estimation_trajectory(prob, path, config, master=2)
    for rec in log.records:
        assert np.all(rec.error_norm == 0.0)


def test_error_recursion_identity():
    # e_t = beta e_{t-1} + I_t with I_t computed from its definition.
    for fam, beta in [(FAMILY_ZEROTH, 0.9), (FAMILY_FIRST, 0.7), (FAMILY_SECOND, 0.85)]:
        prob = box_problem(noise=1.2)
        config = EstimatorConfig(fam, beta, Schedule.never(), 1, 0.05, 12)
        path = drift_path(prob, 12, 0.05, seed=8)
        log = run_estimation_trajectory(prob, path, config, master=13, trials=6)
        for prev, rec in zip(log.records, log.records[1:]):
            recomposed = beta * prev.error + rec.innovation
            assert np.nanmax(np.abs(rec.error - recomposed)) <= 1e-12


def test_probabilistic_resets_and_epochs():
    prob = box_problem(noise=1.0)
    config = EstimatorConfig(FAMILY_FIRST, 1.0, Schedule.probabilistic(0.25), 4, 0.05, 40)
    path = drift_path(prob, 40, 0.05)
    log = run_estimation_trajectory(prob, path, config, master=17, trials=8)
    resets = log.reset_flags()
    assert 0.05 < resets[1:].mean() < 0.6
    # tau lists strictly increasing, start at 0; every t in one epoch
    state_epochs = np.stack([r.epoch for r in log.records[1:]])
    for i in range(8):
        taus = [0] + [t for t in range(1, 41) if resets[t, i]]
        assert all(a < b for a, b in zip(taus, taus[1:]))
        for t in range(1, 41):
            m = state_epochs[t - 1, i]
            lo = taus[m - 1]
            hi = taus[m] if m < len(taus) else np.inf
            assert lo < t <= hi


def test_periodic_schedule_reset_times():
    prob = box_problem(noise=1.0)
    config = EstimatorConfig(FAMILY_FIRST, 1.0, Schedule.periodic(8), 2, 0.05, 26)
    path = drift_path(prob, 26, 0.05)
    log = run_estimation_trajectory(prob, path, config, master=19, trials=2)
    resets = log.reset_flags()
    expected = [t for t in range(1, 27) if t % 8 == 0]
    assert [t for t in range(1, 27) if resets[t, 0]] == expected


def test_masked_epoch_innovation_sum_is_exact():
    # within-epoch innovation sum equals the full-horizon masked sum, exactly
    prob = box_problem(noise=1.0)
    config = EstimatorConfig(FAMILY_FIRST, 1.0, Schedule.probabilistic(0.2), 2, 0.05, 30)
    path = drift_path(prob, 30, 0.05, seed=5)
    log = run_estimation_trajectory(prob, path, config, master=23, trials=4)
    resets = log.reset_flags()
    innovations = [r.innovation for r in log.records[1:]]
    for i in range(4):
        taus = [0] + [t for t in range(1, 31) if resets[t, i]] + [31]
        for lo, hi in zip(taus, taus[1:]):
            window = np.zeros(4)
            for t in range(lo + 1, min(hi + 1, 31)):
                if not resets[t, i]:
                    window = window + innovations[t - 1][i]
            masked = np.zeros(4)
            for t in range(1, 31):
                flag = float(lo < t <= hi and not resets[t, i])
                masked = masked + np.nan_to_num(innovations[t - 1][i]) * flag
            assert np.array_equal(window, masked)


def test_multiplier_consistency_log_domain():
    beta = 0.9
    prob = box_problem(noise=1.0)
    config = EstimatorConfig(FAMILY_ZEROTH, beta, Schedule.never(), 1, 0.05, 20)
    path = drift_path(prob, 20, 0.05)
    log = run_estimation_trajectory(prob, path, config, master=29)
    log_as = [r.log_a for r in log.records]
    assert log_as[0] == 0.0
    for t in range(1, 21):
        # Lambda_{t,t} = 1 and Lambda_{t,j} * A_j = A_t
        assert np.exp(log_as[t] - log_as[t]) == 1.0
        for j in (0, t // 2, t - 1):
            lam_direct = beta ** (t - j)
            lam_log = np.exp(log_as[j] - log_as[t])
            assert abs(lam_log - lam_direct) <= 1e-12 * max(1.0, lam_direct)


def test_variance_proxy_formulas_recorded():
    prob = box_problem(noise=1.0)
    c = prob.constants
    eta = 0.05
    cfg2 = EstimatorConfig(FAMILY_FIRST, 0.8, Schedule.never(), 1, eta, 5)
    expected = 2 * (1 - 0.8) ** 2 * c.sigma ** 2 + 2 * 0.8 ** 2 * c.ell ** 2 * eta ** 2
    assert variance_proxy(cfg2, c) == pytest.approx(expected)
    path = drift_path(prob, 5, eta)
    log = run_estimation_trajectory(prob, path, cfg2, master=31)
    for rec in log.records[1:]:
        assert rec.var_proxy[0] == pytest.approx(expected)
    cfg1 = EstimatorConfig(FAMILY_ZEROTH, 0.8, Schedule.never(), 1, eta, 5)
    assert variance_proxy(cfg1, c) == pytest.approx((1 - 0.8) ** 2 * c.sigma ** 2)
    cfg3 = EstimatorConfig(FAMILY_SECOND, 0.8, Schedule.never(), 1, eta, 5)
    assert variance_proxy(cfg3, c) == pytest.approx(
        2 * 0.04 * c.sigma ** 2 + 2 * 0.64 * c.gamma ** 2 * eta ** 2)


def test_frozen_path_has_zero_bias_bound():
    prob = box_problem(noise=1.0)
    config = EstimatorConfig(FAMILY_ZEROTH, 0.5, Schedule.never(), 1, 0.05, 8)
    w0 = 0.25 * np.ones(4)
    log = run_estimation_trajectory(prob, constant_path(w0, 8), config, master=37,
                                    trials=200)
    for rec in log.records[1:]:
        assert np.all(rec.bias_bound == 0.0)
    # and the error mean shrinks toward zero as momentum averages noise
    first = log.records[1].error_norm.mean()
    last = log.records[-1].error_norm.mean()
    assert last < first


def test_replay_bias_family2_is_centered():
    prob = box_problem(noise=1.0)
    beta = 0.9
    n = 10000
    w_prev = 0.3 * np.ones((n, 4))
    w_t = w_prev + 0.04
    config = EstimatorConfig(FAMILY_FIRST, beta, Schedule.never(), 1, 0.05, 1)
    state, _ = estimator_init(config, prob, w_prev, master=41)
    rec = estimator_step(state, w_t, config, prob, master=41)
    mean = rec.innovation.mean(axis=0)
    se = rec.innovation.std(axis=0) / np.sqrt(n)
    assert np.linalg.norm(mean) <= 5.0 * np.linalg.norm(se)


def test_replay_bias_family1_and_3_within_bounds():
    prob = box_problem(noise=1.0)
    beta = 0.9
    n = 10000
    w_prev = 0.3 * np.ones((n, 4))
    w_t = w_prev + 0.04
    disp = float(np.linalg.norm(w_t[0] - w_prev[0]))
    for fam, bound in [
        (FAMILY_ZEROTH, beta * prob.constants.L * disp),
        (FAMILY_SECOND, 0.5 * prob.constants.alpha * beta * disp ** 2),
    ]:
        config = EstimatorConfig(fam, beta, Schedule.never(), 1, 0.05, 1)
        state, _ = estimator_init(config, prob, w_prev, master=43)
        rec = estimator_step(state, w_t, config, prob, master=43)
        mean = rec.innovation.mean(axis=0)
        se = rec.innovation.std(axis=0) / np.sqrt(n)
        assert np.linalg.norm(mean) <= bound + 5.0 * np.linalg.norm(se)


def test_oracle_call_accounting():
    prob = box_problem(noise=1.0)
    config = EstimatorConfig(FAMILY_FIRST, 1.0, Schedule.periodic(4), 6, 0.05, 12)
    path = drift_path(prob, 12, 0.05)
    log = run_estimation_trajectory(prob, path, config, master=47)
    # init batch 6, resets at 4, 8, 12 cost 6 each, other 9 steps cost 1
    assert log.total_calls()[0] == 6 + 3 * 6 + 9


def test_trajectory_csv_shape(tmp_path):
    prob = box_problem(noise=1.0)
    config = EstimatorConfig(FAMILY_FIRST, 0.9, Schedule.never(), 1, 0.05, 3)
    path = drift_path(prob, 3, 0.05)
    log = run_estimation_trajectory(prob, path, config, master=53, trials=2)
    out = tmp_path / "log.csv"
    log.write_csv(out)
    lines = out.read_text().strip().splitlines()
    assert lines[0].split(",")[:4] == ["trial", "t", "reset", "error_norm"]
    assert len(lines) == 1 + 3 * 2


def test_chunked_trials_match_monolithic():
    prob = box_problem(noise=1.0)
    config = EstimatorConfig(FAMILY_FIRST, 1.0, Schedule.probabilistic(0.2), 3, 0.05, 10)
    path = drift_path(prob, 10, 0.05)
    full = run_estimation_trajectory(prob, path, config, master=59, trials=10)
    part = run_estimation_trajectory(prob, path, config, master=59, trials=4,
                                     trial_offset=6)
    assert np.array_equal(full.records[-1].error_norm[6:],
                          part.records[-1].error_norm)

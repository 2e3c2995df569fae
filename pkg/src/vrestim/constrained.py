"""Switching gradient method with a variance-reduced constraint tracker.

The recursive estimator tracks the scalar expectation-constraint value
h(w_t); at each step a threshold test on the estimate decides whether the
mirror-descent update uses the objective or the constraint subgradient
(drawn with fresh randomness, on its own counter stream).  Final output is
the uniform average over the selected steps; an empty selected set is a
first-class failure result, never an exception.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bounds as bnd
from . import geometry as geo
from .estimator import (
    EstimatorConfig,
    Schedule,
    estimator_init,
    estimator_step,
)
from .optimizer import FAMILY_BY_INDEX


@dataclass
class ConstrainedSetup:
    """A constrained problem with its diameter, Bregman radius, and bound G.

    Box geometry uses R = D (the Euclidean mirror map has sup divergence
    D^2/2); the simplex uses R^2 = 2 ln d, valid for runs started at the
    uniform point, with D the l1 diameter 2.
    """

    problem: object
    R: float
    D: float
    G: float

    @property
    def w_star(self):
        return self.problem.w_star

    @property
    def f_star(self) -> float:
        return self.problem.f_star


def setup_from_problem(problem) -> ConstrainedSetup:
    geom = problem.geometry
    if geom.kind == geo.EUCLIDEAN_BOX:
        diam = float(np.linalg.norm(geom.upper - geom.lower))
        r = diam
    elif geom.kind == geo.SIMPLEX:
        diam = 2.0
        r = math.sqrt(2.0 * math.log(geom.dimension))
    else:
        raise ValueError("the switching method needs a bounded domain")
    return ConstrainedSetup(problem=problem, R=r, D=diam,
                            G=problem.constants.G_update)


def sgm_threshold(R: float, eta: float, T: int, G: float, D: float,
                  delta: float, envelope_bound: float) -> float:
    """Switching threshold: optimization error terms plus the estimator envelope."""
    return (R ** 2 / (2.0 * eta * T) + eta * G ** 2 / 2.0
            + (2.0 * D * G / math.sqrt(T)) * math.sqrt(2.0 * math.log(4.0 / delta))
            + envelope_bound)


@dataclass
class SGMPlan:
    """Tuned parameters, envelope, and guarantees for one SGM configuration."""

    case: int
    family: int
    horizon: int
    delta: float
    eta: float
    beta: float
    batch: int
    envelope_bound: float
    epsilon: float
    window_start: int
    predicted_gap: float
    side_condition: str
    admissible: bool
    expected_calls: float

    @property
    def estimator_config(self) -> EstimatorConfig:
        if self.case == 1:
            schedule = Schedule.never()
        elif self.case == 2:
            schedule = Schedule.probabilistic(1.0 / self.batch)
        else:
            schedule = Schedule.periodic(self.batch)
        return EstimatorConfig(
            family=FAMILY_BY_INDEX[self.family], beta=self.beta,
            schedule=schedule, batch_size=self.batch, step_size=self.eta,
            horizon=self.horizon,
        )


def _case1_envelope(family: int, consts, beta: float, eta: float, g: float,
                    horizon: int, delta: float) -> float:
    """Uniform error bound over the analysis window t > T/2 (delta/2 budget).

    The initialization term decays like beta^t <= 1/((1-beta)T) on the
    window, so the envelope is a constant.
    """
    c = bnd.confidence_factor(delta / (4.0 * horizon), 1.0)
    y = 1.0 - beta
    init = c * consts.sigma / (y * horizon)
    if family == 1:
        return init + consts.L * g * eta / y + c * consts.sigma * math.sqrt(y)
    scale = consts.ell if family == 2 else consts.gamma
    dev = c * (consts.sigma * math.sqrt(2.0 * y) + scale * g * eta * math.sqrt(2.0 / y))
    if family == 2:
        return init + dev
    return init + consts.alpha * beta * eta ** 2 * g ** 2 / (2.0 * y) + dev


def _case23_envelope(family: int, consts, eta: float, g: float, batch: int,
                     horizon: int, delta: float) -> float:
    """Uniform error bound for the reset regimes (delta/2 budget, kappa = 1)."""
    lam = math.log(8.0 * horizon / delta)
    c = bnd.confidence_factor(delta / (8.0 * horizon), 1.0)
    init = c * consts.sigma / math.sqrt(batch)
    if family == 1:
        return init + consts.L * g * eta * lam * batch
    scale = consts.ell if family == 2 else consts.gamma
    dev = c * scale * eta * g * math.sqrt(2.0 * lam * batch)
    if family == 2:
        return init + dev
    return init + consts.alpha * eta ** 2 * g ** 2 * lam * batch / 2.0 + dev


def _case3_envelope(family: int, consts, eta: float, g: float, period: int,
                    horizon: int, delta: float) -> float:
    lam = math.log(8.0 * horizon / delta)
    c = bnd.confidence_factor(delta / (8.0 * horizon), 1.0)
    init = c * consts.sigma / math.sqrt(period)
    if family == 1:
        return init + consts.L * g * eta * period
    scale = consts.ell if family == 2 else consts.gamma
    dev = c * scale * eta * g * math.sqrt(2.0 * period)
    if family == 2:
        return init + dev
    return init + consts.alpha * eta ** 2 * g ** 2 * period / 2.0 + dev


def sgm_configure(case: int, family: int, setup: ConstrainedSetup, horizon: int,
                  delta: float) -> SGMPlan:
    """Tuned (eta, momentum or reset rate, batch) plus the predicted gap Q_T.

    Uses the scalar estimation geometry (kappa = 1).  Admissibility is the
    horizon threshold of the underlying rate-selection lemma; the violated
    condition is spelled out when the horizon is too short.
    """
    if case not in (1, 2, 3) or family not in (1, 2, 3):
        raise ValueError("case and family must each be 1, 2, or 3")
    consts = setup.problem.constants
    r, d_diam, g = setup.R, setup.D, setup.G
    sig = consts.sigma
    T = horizon
    tail = 2.0 * math.sqrt(2.0) * d_diam * g * math.sqrt(math.log(4.0 / delta)) \
        / math.sqrt(T)
    if case == 1:
        gam = 2.0 * math.log(4.0 * T / delta)
        c1, c2 = r ** 2, g ** 2 / 2.0
        if family == 1:
            coeffs = (c1, c2, 4 * sig * math.sqrt(gam), 4 * sig * math.sqrt(gam),
                      2 * consts.L * g, 0.0)
        else:
            scale = consts.ell if family == 2 else consts.gamma
            coeffs = (c1, c2, 4 * sig * math.sqrt(gam), 4 * sig * math.sqrt(2 * gam),
                      4 * scale * g * math.sqrt(2 * gam),
                      consts.alpha * g ** 2 if family == 3 else 0.0)
        sel = bnd.select_params_case1(coeffs, family, T)
        beta = min(max(1.0 - sel.knob_value, 0.0), 1.0)
        batch = 1
        t0 = T // 2
        env = _case1_envelope(family, consts, beta, sel.eta, g, T, delta)
        eps = sgm_threshold(r, sel.eta, T - t0, g, d_diam, delta, env)
        expected_calls = float(T)
    else:
        lam = math.log(8.0 * T / delta)
        c1, c2 = r ** 2 / 2.0, g ** 2 / 2.0
        c4 = 4 * sig * math.sqrt(2 * lam)
        if case == 2:
            c5 = {1: 2 * g * consts.L * lam, 2: 8 * consts.ell * g * lam,
                  3: 8 * consts.gamma * g * lam}[family]
            c6 = consts.alpha * g ** 2 * lam if family == 3 else 0.0
        else:
            c5 = {1: 2 * g * consts.L, 2: 8 * consts.ell * g * math.sqrt(lam),
                  3: 8 * consts.gamma * g * math.sqrt(lam)}[family]
            c6 = consts.alpha * g ** 2 if family == 3 else 0.0
        coeffs = (c1, c2, 0.0, c4, c5, c6)
        sel = bnd.select_params_case23(coeffs, family, T)
        beta = 1.0
        batch = sel.batch
        t0 = 0
        if case == 2:
            env = _case23_envelope(family, consts, sel.eta, g, batch, T, delta)
            expected_calls = (2.0 - 1.0 / batch) * T
        else:
            env = _case3_envelope(family, consts, sel.eta, g, batch, T, delta)
            expected_calls = float(T + (batch - 1) * (T // batch))
        eps = sgm_threshold(r, sel.eta, T, g, d_diam, delta, env)
    condition = (f"horizon {T} must be at least {sel.horizon_threshold:.6g} "
                 f"(case {case}, family {family} rate selection)")
    return SGMPlan(
        case=case, family=family, horizon=T, delta=delta, eta=sel.eta,
        beta=beta, batch=batch, envelope_bound=env, epsilon=eps,
        window_start=t0, predicted_gap=sel.predicted_bound + tail,
        side_condition=condition, admissible=sel.admissible,
        expected_calls=expected_calls,
    )


@dataclass
class SGMResult:
    """Outcome of (vectorized) SGM runs; flags never raise on failure."""

    epsilon: float
    envelope_bound: float
    selected_count: np.ndarray
    w_bar: np.ndarray
    f_gap: np.ndarray
    h_value: np.ndarray
    calls: np.ndarray
    nonempty: np.ndarray
    success: np.ndarray


def sgm_run(setup: ConstrainedSetup, plan: SGMPlan, master: int, tag: int = 0,
            trials: int = 1, trial_offset: int = 0,
            trace: list | None = None) -> SGMResult:
    """Run the switching method; average over the selected window steps.

    Oracle calls are counted over steps t = 1..T (the t = 0 initialization
    batch is excluded, matching the N = (2 - 1/B) T accounting).  Passing a
    list as ``trace`` appends (t, estimate, chosen, iterate, update) tuples
    for replay checks.
    """
    problem = setup.problem
    geom = problem.geometry
    config = plan.estimator_config
    T = plan.horizon
    n = trials
    trial_ids = trial_offset + np.arange(n)
    w = np.broadcast_to(geo.center_point(geom), (n, geom.dimension)).copy()
    state, _ = estimator_init(config, problem, w, master, tag, trials,
                              trial_offset=trial_offset, keep_vectors=False)
    init_calls = state.calls.copy()
    sel_sum = np.zeros((n, geom.dimension))
    sel_cnt = np.zeros(n, dtype=int)
    for t in range(1, T + 1):
        rec = estimator_step(state, w, config, problem, master, tag,
                             keep_vectors=True)
        chosen = rec.value <= plan.epsilon
        if t > plan.window_start:
            sel_sum += np.where(chosen[:, None], w, 0.0)
            sel_cnt += chosen
        f_sub, h_sub = problem.subgradients(w, master, tag, trial_ids, t)
        u = np.where(chosen[:, None], f_sub, h_sub)
        if trace is not None:
            trace.append((t, rec.value.copy(), chosen.copy(), w.copy(), u.copy()))
        w = geo.prox_step(w, u, plan.eta, geom)
    nonempty = sel_cnt > 0
    denom = np.where(nonempty, sel_cnt, 1)
    w_bar = sel_sum / denom[:, None]
    f_gap = np.where(nonempty, problem.f(w_bar) - setup.f_star, np.inf)
    h_val = np.where(nonempty, problem.h(w_bar), np.inf)
    success = nonempty & (f_gap <= plan.epsilon) \
        & (h_val <= plan.epsilon + plan.envelope_bound)
    return SGMResult(
        epsilon=plan.epsilon, envelope_bound=plan.envelope_bound,
        selected_count=sel_cnt, w_bar=w_bar, f_gap=f_gap, h_value=h_val,
        calls=state.calls - init_calls, nonempty=nonempty, success=success,
    )

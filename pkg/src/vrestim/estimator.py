"""The unified recursive estimator.

One recursion covers momentum-style, differential, and second-order
variance-reduced estimators: at each step a reset coin decides between a
fresh batch average and the recursive update

    v_t = G(w_t, xi_t) + beta * (v_{t-1} - G(w_{t-1}, xi_t)) + T_t,

where the correction term T_t is the family choice (zeroth order realigns
values, first order is zero, second order adds a Jacobian-vector term) and
all three oracle evaluations share the same draw xi_t.

State and step records carry a leading trials axis so Monte-Carlo runs are
vectorized; every random draw is addressed by (trial, t), which makes any
chunking of trials bit-identical (see rng).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import oracles, rng

FAMILY_ZEROTH = "zeroth-order"
FAMILY_FIRST = "first-order"
FAMILY_SECOND = "second-order"
FAMILIES = (FAMILY_ZEROTH, FAMILY_FIRST, FAMILY_SECOND)

SCHEDULE_NEVER = "never"
SCHEDULE_PROBABILISTIC = "probabilistic"
SCHEDULE_PERIODIC = "periodic"


@dataclass(frozen=True)
class Schedule:
    """Reset schedule: never, Bernoulli(p) coins, or every E-th step."""

    kind: str
    p: float = 0.0
    period: int = 0

    def __post_init__(self):
        if self.kind == SCHEDULE_PROBABILISTIC:
            if not 0.0 < self.p <= 1.0:
                raise ValueError("reset probability must lie in (0, 1]")
        elif self.kind == SCHEDULE_PERIODIC:
            if self.period < 1:
                raise ValueError("reset period must be a positive integer")
        elif self.kind != SCHEDULE_NEVER:
            raise ValueError(f"unknown schedule kind {self.kind!r}")

    @classmethod
    def never(cls) -> "Schedule":
        return cls(SCHEDULE_NEVER)

    @classmethod
    def probabilistic(cls, p: float) -> "Schedule":
        return cls(SCHEDULE_PROBABILISTIC, p=p)

    @classmethod
    def periodic(cls, period: int) -> "Schedule":
        return cls(SCHEDULE_PERIODIC, period=period)


@dataclass
class EstimatorConfig:
    """Parameters of the unified recursion."""

    family: str
    beta: float
    schedule: Schedule
    batch_size: int
    step_size: float
    horizon: int

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.step_size <= 0.0:
            raise ValueError("step size must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")


@dataclass
class EstimatorState:
    """Live recursion state for a block of trials.

    ``trial_ids`` are the global counter-stream identities; a chunk of a
    larger run carries its offset ids so randomness matches a monolithic
    run exactly.
    """

    v: np.ndarray
    prev_w: np.ndarray
    t: int
    trial_ids: np.ndarray
    last_reset: np.ndarray
    reset_times: list
    log_a: float
    scaled_var: np.ndarray
    calls: np.ndarray

    @property
    def trials(self) -> int:
        return self.prev_w.shape[0]


@dataclass
class StepRecord:
    """Diagnostics for one step across all trials.

    Innovation, bias bound and variance proxy are NaN on reset steps,
    where no recursion happens.  ``scaled_var`` is the overflow-safe
    quantity A_t^{-2} * V_t^2 (the deviation term of the error bound is
    its square root); ``log_var`` is log of the accumulated proxy itself.
    """

    t: int
    reset: np.ndarray
    value: np.ndarray | None
    error: np.ndarray | None
    error_norm: np.ndarray
    innovation: np.ndarray | None
    innovation_norm: np.ndarray
    bias_bound: np.ndarray
    var_proxy: np.ndarray
    displacement: np.ndarray
    log_a: float
    epoch: np.ndarray
    scaled_var: np.ndarray
    log_var: np.ndarray
    calls: np.ndarray


def target_norm(problem, x):
    """Norm of an estimator-space vector: |.| for scalar oracles, dual norm else."""
    if problem.scalar_valued:
        return np.abs(x)
    return geo.dual_norm(x, problem.geometry)


def correction_term(family: str, problem, sample: oracles.OracleSample,
                    w_t, w_prev, beta_t: float):
    """The family-defining correction realigning information from w_prev to w_t."""
    if family == FAMILY_FIRST:
        base = problem.eval_g(np.asarray(w_t, dtype=float))
        return np.zeros_like(np.asarray(base, dtype=float))
    g_prev = problem.eval_G(w_prev, sample)
    g_here = problem.eval_G(w_t, sample)
    if family == FAMILY_ZEROTH:
        return beta_t * (g_prev - g_here)
    if family == FAMILY_SECOND:
        if not problem.supports_jvp:
            raise ValueError("second-order correction needs a Jacobian-vector oracle")
        jvp = problem.eval_jvp(w_t, sample, np.asarray(w_prev) - np.asarray(w_t))
        return beta_t * (g_prev - g_here - jvp)
    raise ValueError(f"unknown family {family!r}")


def variance_proxy(config: EstimatorConfig, constants: oracles.ProblemConstants) -> float:
    """Per-step innovation variance proxy from the family identity.

    Uses the a-priori displacement bound eta * G; the recorded bias bound
    uses the realized displacement instead.
    """
    beta, eta, g = config.beta, config.step_size, constants.G_update
    if config.family == FAMILY_ZEROTH:
        return (1.0 - beta) ** 2 * constants.sigma ** 2
    if config.family == FAMILY_FIRST:
        scale = constants.ell
    else:
        scale = constants.gamma
    return 2.0 * (1.0 - beta) ** 2 * constants.sigma ** 2 \
        + 2.0 * beta ** 2 * scale ** 2 * eta ** 2 * g ** 2


def _bias_bound(config: EstimatorConfig, constants: oracles.ProblemConstants,
                displacement):
    if config.family == FAMILY_ZEROTH:
        return config.beta * constants.L * displacement
    if config.family == FAMILY_FIRST:
        return np.zeros_like(displacement)
    return 0.5 * constants.alpha * config.beta * displacement ** 2


def estimator_init(config: EstimatorConfig, problem, w0, master: int,
                   tag: int = 0, trials: int = 1, trial_offset: int = 0,
                   keep_vectors: bool = True):
    """Batch initialization (b_0 = 1): v_0 averages B fresh draws at w_0."""
    w0 = np.asarray(w0, dtype=float)
    if w0.ndim == 1:
        w0 = np.broadcast_to(w0, (trials, w0.shape[0])).copy()
    n = w0.shape[0]
    trial_ids = trial_offset + np.arange(n)
    sample = oracles.draw_sample(master, tag, trial_ids, 0)
    v0 = oracles.batch_mean_G(problem, w0, sample, config.batch_size)
    err = v0 - problem.eval_g(w0)
    zeros = np.zeros(n)
    nan = np.full(n, np.nan)
    state = EstimatorState(
        v=v0,
        prev_w=w0,
        t=0,
        trial_ids=trial_ids,
        last_reset=np.zeros(n, dtype=int),
        reset_times=[[0] for _ in range(n)],
        log_a=0.0,
        scaled_var=np.zeros(n),
        calls=np.full(n, config.batch_size, dtype=np.int64),
    )
    record = StepRecord(
        t=0,
        reset=np.ones(n, dtype=bool),
        value=v0 if keep_vectors else None,
        error=err if keep_vectors else None,
        error_norm=target_norm(problem, err),
        innovation=None,
        innovation_norm=nan.copy(),
        bias_bound=nan.copy(),
        var_proxy=nan.copy(),
        displacement=zeros,
        log_a=0.0,
        epoch=np.zeros(n, dtype=int),
        scaled_var=zeros.copy(),
        log_var=np.full(n, -np.inf),
        calls=state.calls.copy(),
    )
    return state, record


def estimator_step(state: EstimatorState, w_t, config: EstimatorConfig, problem,
                   master: int, tag: int = 0, keep_vectors: bool = True) -> StepRecord:
    """Advance one step of the recursion at iterate w_t (in place on state)."""
    n = state.trials
    t = state.t + 1
    trial_ids = state.trial_ids
    w_t = np.asarray(w_t, dtype=float)
    if w_t.ndim == 1:
        w_t = np.broadcast_to(w_t, (n, w_t.shape[0]))

    sched = config.schedule
    if sched.kind == SCHEDULE_PERIODIC:
        b = np.full(n, t % sched.period == 0)
    elif sched.kind == SCHEDULE_PROBABILISTIC:
        b = rng.coins(master, tag, rng.STREAM_RESET, trial_ids, t, sched.p)
    else:
        b = np.zeros(n, dtype=bool)

    sample = oracles.draw_sample(master, tag, trial_ids, t)
    g_here = problem.eval_G(w_t, sample)
    g_prev = problem.eval_G(state.prev_w, sample)
    corr = correction_term(config.family, problem, sample, w_t, state.prev_w, config.beta)
    v_rec = g_here + config.beta * (state.v - g_prev) + corr
    v_res = oracles.batch_mean_G(problem, w_t, sample, config.batch_size)
    mask = b if problem.scalar_valued else b[:, None]
    v = np.where(mask, v_res, v_rec)

    pop_here = problem.eval_g(w_t)
    pop_prev = problem.eval_g(state.prev_w)
    err = v - pop_here
    # Innovation from its definition (direct noise + difference noise +
    # correction), not from the stored error recursion, so the identity
    # e_t = beta e_{t-1} + I_t is a real cross check.
    innov = (1.0 - config.beta) * (g_here - pop_here) \
        + config.beta * ((g_here - g_prev) - (pop_here - pop_prev)) + corr
    innov = np.where(mask, np.nan, innov)

    displacement = geo.primal_norm(w_t - state.prev_w, problem.geometry)
    bias = np.where(b, np.nan, _bias_bound(config, problem.constants, displacement))
    proxy = np.where(b, np.nan, variance_proxy(config, problem.constants))

    log_beta = -np.inf if config.beta == 0.0 else float(np.log(config.beta))
    log_a = state.log_a - log_beta
    new_scaled = np.where(
        b, 0.0, config.beta ** 2 * state.scaled_var + variance_proxy(config, problem.constants)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        log_var = np.where(b, -np.inf, 2.0 * log_a + np.log(new_scaled))

    epoch = np.fromiter((len(times) for times in state.reset_times), dtype=int, count=n)
    for i in np.flatnonzero(b):
        state.reset_times[i].append(t)
    state.last_reset = np.where(b, t, state.last_reset)
    state.calls = state.calls + np.where(b, config.batch_size, 1)
    state.v = v
    state.prev_w = np.array(w_t, dtype=float)
    state.t = t
    state.log_a = log_a
    state.scaled_var = new_scaled

    return StepRecord(
        t=t,
        reset=b,
        value=v if keep_vectors else None,
        error=err if keep_vectors else None,
        error_norm=target_norm(problem, err),
        innovation=innov if keep_vectors else None,
        innovation_norm=target_norm(problem, innov),
        bias_bound=bias,
        var_proxy=proxy,
        displacement=displacement,
        log_a=log_a,
        epoch=epoch,
        scaled_var=np.where(b, 0.0, new_scaled),
        log_var=log_var,
        calls=state.calls.copy(),
    )


@dataclass
class TrajectoryLog:
    """A full run of step records plus the configuration that produced it."""

    config: EstimatorConfig
    records: list = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.records[-1].t if self.records else 0

    def error_norms(self) -> np.ndarray:
        """(T+1, trials) matrix of ||e_t|| including the t=0 initialization."""
        return np.stack([r.error_norm for r in self.records])

    def reset_flags(self) -> np.ndarray:
        return np.stack([r.reset for r in self.records])

    def total_calls(self) -> np.ndarray:
        return self.records[-1].calls

    def write_csv(self, path, envelope=None) -> None:
        """One row per (trial, t) for t >= 1; NaN diagnostics print empty."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["trial", "t", "reset", "error_norm", "envelope",
                 "bias_bound", "var_proxy", "epoch"]
            )
            for rec in self.records:
                if rec.t == 0:
                    continue
                env = "" if envelope is None else repr(float(envelope(rec.t)))
                for i in range(rec.error_norm.shape[0]):
                    writer.writerow([
                        i, rec.t, int(rec.reset[i]), repr(float(rec.error_norm[i])),
                        env,
                        "" if np.isnan(rec.bias_bound[i]) else repr(float(rec.bias_bound[i])),
                        "" if np.isnan(rec.var_proxy[i]) else repr(float(rec.var_proxy[i])),
                        int(rec.epoch[i]),
                    ])


def run_estimation_trajectory(problem, path, config: EstimatorConfig, master: int,
                              tag: int = 0, trials: int = 1, trial_offset: int = 0,
                              keep_vectors: bool = True) -> TrajectoryLog:
    """Drive the estimator along a prescribed iterate path.

    ``path`` has shape (T+1, d): path[0] is the initialization point and
    steps run at path[1..T].
    """
    path = np.asarray(path, dtype=float)
    if path.ndim != 2 or path.shape[0] != config.horizon + 1:
        raise ValueError("path must have shape (horizon + 1, dimension)")
    state, first = estimator_init(config, problem, path[0], master, tag, trials,
                                  trial_offset=trial_offset, keep_vectors=keep_vectors)
    log = TrajectoryLog(config=config, records=[first])
    for t in range(1, config.horizon + 1):
        log.records.append(
            estimator_step(state, path[t], config, problem, master, tag,
                           keep_vectors=keep_vectors)
        )
    return log

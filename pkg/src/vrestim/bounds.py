"""Closed-form high-probability error envelopes and parameter selection.

Nine named estimator configurations (three correction families crossed
with three reset regimes) admit closed-form per-iteration bounds on the
estimation error.  This module evaluates those bounds, the confidence
factor they share, the step-size/momentum/reset selections that optimize
the resulting rate expressions, and the minimum horizon achieving a target
accuracy despite the log(T) factors.

Case numbering throughout: case 1 is the fully recursive regime
(beta < 1, no resets), case 2 the probabilistic-reset regime (beta = 1,
Bernoulli(p) resets), case 3 the periodic-reset regime (beta = 1, reset
every E steps).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimator import FAMILY_FIRST, FAMILY_SECOND, FAMILY_ZEROTH

ROW_LABELS = {
    (FAMILY_ZEROTH, 1): "momentum",
    (FAMILY_ZEROTH, 2): "probabilistic-momentum",
    (FAMILY_ZEROTH, 3): "periodic-momentum",
    (FAMILY_FIRST, 1): "storm",
    (FAMILY_FIRST, 2): "page",
    (FAMILY_FIRST, 3): "spider",
    (FAMILY_SECOND, 1): "so-momentum",
    (FAMILY_SECOND, 2): "so-page",
    (FAMILY_SECOND, 3): "so-spider",
}


def confidence_factor(delta: float, kappa: float) -> float:
    """sqrt(kappa) + sqrt(3 ln(1/delta)) for delta in (0, 1], kappa >= 1."""
    if not 0.0 < delta <= 1.0:
        raise ValueError("delta must lie in (0, 1]")
    if kappa < 1.0:
        raise ValueError("kappa must be at least 1")
    return math.sqrt(kappa) + math.sqrt(3.0 * math.log(1.0 / delta))


@dataclass
class NoEnvelope:
    """Typed refusal: the requested (family, case, parameters) has no row."""

    family: str
    case: int
    reason: str

    def __bool__(self) -> bool:
        return False


@dataclass
class BoundEnvelope:
    """Per-iteration high-probability bound ||e_t|| <= envelope(t), t in [T]."""

    family: str
    case: int
    label: str
    eta: float
    beta: float
    p: float
    period: int
    batch: int
    horizon: int
    G: float
    sigma: float
    L: float
    ell: float
    gamma: float
    alpha: float
    delta: float
    kappa: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        T, B = self.horizon, self.batch
        sig, eta, g = self.sigma, self.eta, self.G
        if self.case == 1:
            c = confidence_factor(self.delta / (2.0 * T), self.kappa)
            beta = self.beta
            init = beta ** t * c * sig / math.sqrt(B)
            if self.family == FAMILY_ZEROTH:
                return init + g * self.L * eta / (1.0 - beta) + c * sig * math.sqrt(1.0 - beta)
            tail_scale = self.ell if self.family == FAMILY_FIRST else self.gamma
            dev = c * math.sqrt(
                (2.0 * (1.0 - beta) ** 2 * sig ** 2
                 + 2.0 * beta ** 2 * tail_scale ** 2 * eta ** 2 * g ** 2)
                / (1.0 - beta ** 2)
            )
            if self.family == FAMILY_FIRST:
                return init + dev
            bias = self.alpha * beta * eta ** 2 * g ** 2 / (2.0 * (1.0 - beta))
            return init + bias + dev
        if self.case == 2:
            c = confidence_factor(self.delta / (4.0 * T), self.kappa)
            span = math.log(4.0 * T / self.delta)
            init = c * sig / math.sqrt(B)
            if self.family == FAMILY_ZEROTH:
                return np.broadcast_to(init + g * self.L * eta * span / self.p, t.shape).copy()
            tail_scale = self.ell if self.family == FAMILY_FIRST else self.gamma
            dev = c * tail_scale * eta * g * math.sqrt(2.0 * span / self.p)
            if self.family == FAMILY_FIRST:
                return np.broadcast_to(init + dev, t.shape).copy()
            bias = self.alpha * eta ** 2 * g ** 2 * span / (2.0 * self.p)
            return np.broadcast_to(init + bias + dev, t.shape).copy()
        # case 3: the initialization term is union-bounded over the T/E
        # scheduled epochs only.
        E = self.period
        init = confidence_factor(self.delta / (2.0 * T / E), self.kappa) * sig / math.sqrt(B)
        c = confidence_factor(self.delta / (2.0 * T), self.kappa)
        if self.family == FAMILY_ZEROTH:
            return np.broadcast_to(init + g * self.L * eta * E, t.shape).copy()
        tail_scale = self.ell if self.family == FAMILY_FIRST else self.gamma
        dev = c * tail_scale * eta * g * math.sqrt(2.0 * E)
        if self.family == FAMILY_FIRST:
            return np.broadcast_to(init + dev, t.shape).copy()
        bias = self.alpha * eta ** 2 * g ** 2 * E / 2.0
        return np.broadcast_to(init + bias + dev, t.shape).copy()


def envelope(family: str, case: int, *, eta: float, batch: int, horizon: int,
             G: float, constants, delta: float, kappa: float,
             beta: float | None = None, p: float | None = None,
             period: int | None = None):
    """Build the tabulated envelope for one of the nine rows.

    Returns a BoundEnvelope, or a NoEnvelope explaining why the requested
    (family, case, parameters) combination has no tabulated bound.
    """
    if (family, case) not in ROW_LABELS:
        return NoEnvelope(family, case, "not one of the nine tabulated rows")
    if case == 1:
        if beta is None or not 0.0 <= beta < 1.0:
            return NoEnvelope(family, case, "case 1 needs a momentum parameter beta < 1")
        p_val, e_val = 0.0, 0
    elif case == 2:
        if beta not in (None, 1.0):
            return NoEnvelope(family, case, "case 2 is tabulated for beta = 1 only")
        if p is None or not 0.0 < p <= 1.0:
            return NoEnvelope(family, case, "case 2 needs a reset probability in (0, 1]")
        beta, p_val, e_val = 1.0, p, 0
    else:
        if beta not in (None, 1.0):
            return NoEnvelope(family, case, "case 3 is tabulated for beta = 1 only")
        if period is None or period < 1:
            return NoEnvelope(family, case, "case 3 needs a positive reset period")
        beta, p_val, e_val = 1.0, 0.0, int(period)
    if eta <= 0 or batch < 1 or horizon < 1 or G < 0:
        return NoEnvelope(family, case, "invalid step size, batch, horizon, or G")
    return BoundEnvelope(
        family=family, case=case, label=ROW_LABELS[(family, case)],
        eta=eta, beta=float(beta), p=p_val, period=e_val, batch=batch,
        horizon=horizon, G=G, sigma=constants.sigma, L=constants.L,
        ell=constants.ell, gamma=constants.gamma, alpha=constants.alpha,
        delta=delta, kappa=kappa,
    )


@dataclass
class ParamSelection:
    """Output of the rate-optimizing parameter choice for one family."""

    family: int
    eta: float
    knob: str
    knob_value: float
    batch: int | None
    predicted_bound: float
    horizon_threshold: float
    admissible: bool


def _require_positive(**values):
    for name, v in values.items():
        if v <= 0:
            raise ValueError(f"coefficient {name} must be positive")


def select_params_case1(coeffs, family: int, horizon: int) -> ParamSelection:
    """Joint step-size / momentum selection for the fully recursive regime.

    ``coeffs`` are the six nonnegative constants (C1..C6) of the rate
    objective; C6 is only used by family 3.  The returned bound is the
    closed-form value the objective provably stays below at the selection,
    provided the horizon clears the returned threshold.
    """
    c1, c2, c3, c4, c5, c6 = (list(coeffs) + [0.0] * 6)[:6]
    _require_positive(C1=c1, C2=c2, C4=c4, C5=c5)
    if family == 3:
        _require_positive(C6=c6)
    if min(c3, c6) < 0:
        raise ValueError("coefficients must be nonnegative")
    T = float(horizon)

    eta_a = math.sqrt(c1 / c2) * T ** -0.5
    y_a = (c3 / c4) ** (2.0 / 3.0) * T ** (-2.0 / 3.0)
    l1 = math.sqrt(c1 * c2 / T)
    l2 = (c3 * c4 ** 2 / T) ** (1.0 / 3.0)
    if family == 1:
        eta = min(eta_a, (c1 ** 3 / (c4 ** 2 * c5)) ** 0.25 * T ** -0.75)
        y = max(y_a, math.sqrt(c1 * c5 / c4 ** 2) * T ** -0.5)
        bound = 2 * l1 + 2 * l2 + 3 * (c1 * c4 ** 2 * c5 / T) ** 0.25
        threshold = max(c3 / c4, c1 * c5 / c4 ** 2)
    elif family == 2:
        eta = min(eta_a, (c1 ** 2 / (c4 * c5)) ** (1.0 / 3.0) * T ** (-2.0 / 3.0))
        y = max(y_a, (c1 * c5 / c4 ** 2) ** (2.0 / 3.0) * T ** (-2.0 / 3.0))
        bound = 2 * l1 + 2 * l2 + 3 * (c1 * c4 * c5 / T) ** (1.0 / 3.0)
        threshold = max(c3 / c4, c1 * c5 / c4 ** 2)
    elif family == 3:
        eta = min(
            eta_a,
            (c1 ** 2 / (c4 * c5)) ** (1.0 / 3.0) * T ** (-2.0 / 3.0),
            (c1 ** 3 / (c4 ** 2 * c6)) ** 0.2 * T ** -0.6,
        )
        y = max(
            y_a,
            (c1 * c5 / c4 ** 2) ** (2.0 / 3.0) * T ** (-2.0 / 3.0),
            (c1 ** 2 * c6 / c4 ** 3) ** 0.4 * T ** -0.8,
        )
        bound = (
            2 * l1 + 2 * l2
            + 3 * (c1 * c4 * c5 / T) ** (1.0 / 3.0)
            + 3 * (c1 ** 2 * c4 ** 2 * c6 / T ** 2) ** 0.2
        )
        threshold = max(c3 / c4, c1 * c5 / c4 ** 2, math.sqrt(c1 ** 2 * c6 / c4 ** 3))
    else:
        raise ValueError("family must be 1, 2, or 3")
    return ParamSelection(
        family=family, eta=eta, knob="one_minus_beta", knob_value=y, batch=None,
        predicted_bound=bound, horizon_threshold=threshold,
        admissible=T >= threshold,
    )


def select_params_case23(coeffs, family: int, horizon: int) -> ParamSelection:
    """Joint step-size / reset-rate / batch selection (B = E = 1/p, ceilinged)."""
    c1, c2, c3, c4, c5, c6 = (list(coeffs) + [0.0] * 6)[:6]
    _require_positive(C1=c1, C2=c2, C4=c4, C5=c5)
    if family == 3:
        _require_positive(C6=c6)
    if c3 != 0.0:
        raise ValueError("the reset-rate selection requires C3 = 0")
    T = float(horizon)

    eta_a = math.sqrt(c1 / (c2 * T))
    m1 = math.sqrt(c1 * c2 / T)
    if family == 1:
        eta = min(eta_a, (2.0 * c1 ** 3 / (c4 ** 2 * c5 * T ** 3)) ** 0.25)
        cont = math.sqrt(c4 ** 2 * T / (8.0 * c1 * c5))
        bound = 2 * m1 + 4 * (c1 * c4 ** 2 * c5 / (2.0 * T)) ** 0.25
        threshold = 8.0 * c1 * c5 / c4 ** 2
    elif family == 2:
        eta = min(eta_a, (c1 ** 2 / (math.sqrt(2.0) * c4 * c5 * T ** 2)) ** (1.0 / 3.0))
        cont = (c4 ** 4 * T ** 2 / (2.0 * c1 ** 2 * c5 ** 2)) ** (1.0 / 3.0)
        bound = 2 * m1 + 3 * (math.sqrt(2.0) * c1 * c4 * c5 / T) ** (1.0 / 3.0)
        threshold = math.sqrt(2.0) * c1 * c5 / c4 ** 2
    elif family == 3:
        eta = min(
            eta_a,
            (c1 ** 2 / (math.sqrt(2.0) * c4 * c5 * T ** 2)) ** (1.0 / 3.0),
            (c1 ** 3 / (4.0 * c4 ** 2 * c6 * T ** 3)) ** 0.2,
        )
        cont = min(
            (c4 ** 4 * T ** 2 / (2.0 * c1 ** 2 * c5 ** 2)) ** (1.0 / 3.0),
            (c4 ** 6 * T ** 4 / (16.0 * c1 ** 4 * c6 ** 2)) ** 0.2,
        )
        bound = (
            2 * m1
            + 3 * (math.sqrt(2.0) * c1 * c4 * c5 / T) ** (1.0 / 3.0)
            + 5 * (c1 ** 2 * c4 ** 2 * c6 / (8.0 * T ** 2)) ** 0.2
        )
        threshold = max(
            math.sqrt(2.0) * c1 * c5 / c4 ** 2,
            2.0 * math.sqrt(c1 ** 2 * c6 / c4 ** 3),
        )
    else:
        raise ValueError("family must be 1, 2, or 3")
    batch = max(1, math.ceil(cont))
    return ParamSelection(
        family=family, eta=eta, knob="reset_rate", knob_value=1.0 / batch, batch=batch,
        predicted_bound=bound, horizon_threshold=threshold,
        admissible=T >= threshold,
    )


def rate_objective_case1(coeffs, family: int, horizon: int, eta: float, y: float) -> float:
    """The rate expression f_k(eta, 1 - beta) the case-1 selection optimizes."""
    c1, c2, c3, c4, c5, c6 = (list(coeffs) + [0.0] * 6)[:6]
    base = c1 / (eta * horizon) + c2 * eta + (c3 / (y * horizon) if c3 else 0.0) \
        + c4 * math.sqrt(y)
    if family == 1:
        return base + c5 * eta / y
    if family == 2:
        return base + c5 * eta / math.sqrt(y)
    return base + c5 * eta / math.sqrt(y) + c6 * eta ** 2 / y


def rate_objective_case23(coeffs, family: int, horizon: int, eta: float, p: float) -> float:
    """The rate expression f_k(eta, p) the reset-rate selection optimizes."""
    c1, c2, _, c4, c5, c6 = (list(coeffs) + [0.0] * 6)[:6]
    base = c1 / (eta * horizon) + c2 * eta + c4 * math.sqrt(p)
    if family == 1:
        return base + c5 * eta / p
    if family == 2:
        return base + c5 * eta / math.sqrt(p)
    return base + c5 * eta / math.sqrt(p) + c6 * eta ** 2 / p


def min_horizon(epsilon: float, delta: float, q: float) -> int:
    """Smallest integer T with T >= (e^{q^2}/eps) * max(1, ln(1/(eps*delta)))^q.

    Any such T satisfies log^q(T/delta) / T <= epsilon.
    """
    if epsilon <= 0 or delta <= 0 or q <= 0:
        raise ValueError("epsilon, delta, q must be positive")
    value = math.exp(q * q) / epsilon * max(1.0, math.log(1.0 / (epsilon * delta))) ** q
    return int(math.ceil(value))

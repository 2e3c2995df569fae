"""Finite-dimensional primal/dual geometries with closed-form prox steps.

Three geometries are supported:

* ``euclidean-free``  -- all of R^d, mirror map ||.||_2^2 / 2,
* ``euclidean-box``   -- a coordinate box, same mirror map,
* ``simplex``         -- the probability simplex with the negative-entropy
  mirror map (l1 primal norm, l_inf dual norm, KL divergence).

Points and dual vectors are plain ndarrays; every operation acts on the
last axis and broadcasts over leading axes, so a batch of trials is just a
(n, d) array.  All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EUCLIDEAN_FREE = "euclidean-free"
EUCLIDEAN_BOX = "euclidean-box"
SIMPLEX = "simplex"

_SIMPLEX_SUM_TOL = 1e-12
_SIMPLEX_FLOOR = 1e-300


@dataclass
class GeometrySpec:
    """A primal space, its mirror map, and the smoothness constant kappa.

    kappa is the smoothness constant of the space the estimator lives in:
    1 for the Euclidean kinds, ln(max{e, d}) for the simplex (the smoothed
    l_q surrogate of l_inf).  Scalar-valued estimation always uses kappa=1
    regardless of the iterate geometry.
    """

    kind: str
    dimension: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    kappa: float = field(init=False)

    def __post_init__(self):
        if self.kind not in (EUCLIDEAN_FREE, EUCLIDEAN_BOX, SIMPLEX):
            raise ValueError(f"unknown geometry kind {self.kind!r}")
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.kind == EUCLIDEAN_BOX:
            if self.lower is None or self.upper is None:
                raise ValueError("box geometry needs lower and upper bounds")
            self.lower = np.asarray(self.lower, dtype=float)
            self.upper = np.asarray(self.upper, dtype=float)
            if self.lower.shape != (self.dimension,) or self.upper.shape != (self.dimension,):
                raise ValueError("box bounds must have shape (dimension,)")
            if not np.all(self.lower < self.upper):
                raise ValueError("box bounds must satisfy lower < upper")
        elif self.lower is not None or self.upper is not None:
            raise ValueError("bounds are only meaningful for box geometry")
        if self.kind == SIMPLEX:
            self.kappa = float(np.log(max(np.e, self.dimension)))
        else:
            self.kappa = 1.0


def euclidean(dimension: int) -> GeometrySpec:
    return GeometrySpec(EUCLIDEAN_FREE, dimension)


def box(lower, upper) -> GeometrySpec:
    lower = np.asarray(lower, dtype=float)
    return GeometrySpec(EUCLIDEAN_BOX, lower.shape[0], lower, np.asarray(upper, dtype=float))


def simplex(dimension: int) -> GeometrySpec:
    return GeometrySpec(SIMPLEX, dimension)


def _check_dim(x, geom: GeometrySpec):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != geom.dimension:
        raise ValueError(f"expected last axis {geom.dimension}, got {x.shape[-1]}")
    return x


def primal_norm(x, geom: GeometrySpec):
    """Norm of a primal displacement: l2 for Euclidean kinds, l1 on the simplex."""
    x = _check_dim(x, geom)
    if geom.kind == SIMPLEX:
        return np.abs(x).sum(axis=-1)
    return np.sqrt((x * x).sum(axis=-1))


def dual_norm(u, geom: GeometrySpec):
    """Dual norm: l2 for Euclidean kinds, l_inf on the simplex."""
    u = _check_dim(u, geom)
    if geom.kind == SIMPLEX:
        return np.abs(u).max(axis=-1)
    return np.sqrt((u * u).sum(axis=-1))


def is_feasible(w, geom: GeometrySpec, tol: float = 1e-9) -> bool:
    w = _check_dim(w, geom)
    if not np.all(np.isfinite(w)):
        return False
    if geom.kind == EUCLIDEAN_BOX:
        return bool(np.all(w >= geom.lower - tol) and np.all(w <= geom.upper + tol))
    if geom.kind == SIMPLEX:
        return bool(
            np.all(w > 0.0)
            and np.all(np.abs(w.sum(axis=-1) - 1.0) <= max(tol, _SIMPLEX_SUM_TOL))
        )
    return True


def require_feasible(w, geom: GeometrySpec, tol: float = 1e-9):
    if not is_feasible(w, geom, tol):
        raise ValueError(f"point is not feasible for {geom.kind}")


def center_point(geom: GeometrySpec) -> np.ndarray:
    """A canonical interior point: origin, box center, or uniform weights."""
    if geom.kind == EUCLIDEAN_BOX:
        return 0.5 * (geom.lower + geom.upper)
    if geom.kind == SIMPLEX:
        return np.full(geom.dimension, 1.0 / geom.dimension)
    return np.zeros(geom.dimension)


def bregman(x, y, geom: GeometrySpec):
    """Bregman divergence of the geometry's mirror map.

    Euclidean kinds: ||x - y||_2^2 / 2.  Simplex (negative entropy): the KL
    divergence sum_i x_i ln(x_i / y_i).
    """
    x = _check_dim(x, geom)
    y = _check_dim(y, geom)
    if geom.kind == SIMPLEX:
        return (x * (np.log(x) - np.log(y))).sum(axis=-1)
    d = x - y
    return 0.5 * (d * d).sum(axis=-1)


def prox_step(w, u, eta, geom: GeometrySpec):
    """The updated point w+ = argmin_{w'} <eta*u, w'> + D(w', w).

    Closed forms: free space w - eta*u; box the coordinate-wise clamp of
    w - eta*u; simplex the multiplicative-weights update
    w_i * exp(-eta*u_i) renormalized (computed in log space, floored at
    1e-300 to stay inside the entropy domain).
    """
    w = _check_dim(w, geom)
    u = _check_dim(u, geom)
    eta = np.asarray(eta, dtype=float)
    if np.any(eta <= 0.0):
        raise ValueError("eta must be positive")
    if geom.kind == SIMPLEX:
        z = np.log(w) - eta[..., None] * u if eta.ndim else np.log(w) - eta * u
        z = z - z.max(axis=-1, keepdims=True)
        e = np.maximum(np.exp(z), _SIMPLEX_FLOOR)
        return e / e.sum(axis=-1, keepdims=True)
    step = w - (eta[..., None] * u if eta.ndim else eta * u)
    if geom.kind == EUCLIDEAN_BOX:
        return np.clip(step, geom.lower, geom.upper)
    return step


def prox_map(w, u, eta, geom: GeometrySpec):
    """The proximal gradient mapping P(w, u, eta) = (w - w+) / eta."""
    eta = np.asarray(eta, dtype=float)
    wp = prox_step(w, u, eta, geom)
    return (np.asarray(w, dtype=float) - wp) / (eta[..., None] if eta.ndim else eta)

"""Stochastic oracles with known population targets and certified constants.

Each synthetic problem exposes

* ``eval_g(w)``        -- the exact population target,
* ``eval_G(w, sample)`` -- one stochastic evaluation; the sample handle pins
  the randomness, so evaluating at several points reuses the same draw,
* ``eval_jvp(w, sample, d)`` -- the stochastic Jacobian-vector product with
  the same draw (problems here are affine in w, so it is exact),
* ``constants``        -- certified (sigma, L, ell, gamma, alpha) for the
  problem over its stated radius.

Handles are value types built from counters (see rng), so a draw at
(trial, step, lane) is bit-reproducible and independent of evaluation
order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from . import geometry as geo
from . import rng

_LN2 = float(np.log(2.0))

# Gaussian-noise problems saturate their moment certificates exactly at the
# minimal constants, which makes empirical moment checks sit on the boundary;
# declared ell / gamma carry this margin so the certificates hold with slack.
_CERT_MARGIN = 1.05


@dataclass(frozen=True)
class OracleSample:
    """Seed-derived draw handle; re-evaluation is bit-identical.

    ``trial`` and ``lane`` may be arrays; they broadcast against the point
    being evaluated, which is how batched trials and reset batches work.
    """

    master: int
    tag: int
    trial: object
    step: int
    lane: object = 0
    stream: int = rng.STREAM_ORACLE


def draw_sample(master: int, tag: int, trial, step: int, lane=0,
                stream: int = rng.STREAM_ORACLE) -> OracleSample:
    return OracleSample(master, tag, trial, step, lane, stream)


def batch_sample(sample: OracleSample, batch: int) -> OracleSample:
    """The B-lane batch handle sharing (trial, step) with ``sample``."""
    trial = np.asarray(sample.trial)[..., None]
    return replace(sample, trial=trial, lane=np.arange(batch), stream=rng.STREAM_BATCH)


def subgaussian_std_for_proxy(sigma_proxy: float, d: int) -> float:
    """Largest per-coordinate Gaussian std certified by variance proxy sigma.

    For Z ~ N(0, s^2 I_d), E[exp(||Z||^2 / sigma^2)] = (1 - 2 s^2/sigma^2)^(-d/2);
    requiring this to be at most 2 gives s^2 = sigma^2 (1 - 2^(-2/d)) / 2.
    """
    if sigma_proxy <= 0 or d < 1:
        raise ValueError("need sigma_proxy > 0 and d >= 1")
    return float(sigma_proxy * np.sqrt((1.0 - 2.0 ** (-2.0 / d)) / 2.0))


def gaussian_proxy_for_std(s: float, d: int) -> float:
    """Inverse of subgaussian_std_for_proxy: smallest certified proxy for N(0, s^2 I_d)."""
    return float(s * np.sqrt(2.0 / (1.0 - 2.0 ** (-2.0 / d))))


@dataclass
class ProblemConstants:
    """Certified regularity constants of a stochastic oracle.

    sigma   variance proxy of the direct oracle noise,
    L       Lipschitz constant of the population target,
    ell     sub-Gaussian Lipschitz constant of centered differences,
    gamma   variance proxy of the Jacobian noise,
    alpha   smoothness (Lipschitz Jacobian) of the target,
    G_update almost-sure bound on the update vector,
    delta_f initial objective gap (optimizer problems only).
    """

    sigma: float
    L: float
    ell: float
    gamma: float
    alpha: float
    G_update: float = 1.0
    delta_f: float | None = None

    def __post_init__(self):
        for name in ("sigma", "L", "ell", "gamma", "alpha", "G_update"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def _gap(self) -> float:
        if self.delta_f is None:
            raise ValueError("delta_f is not set for this problem")
        return self.delta_f

    @property
    def sigma_L(self) -> float:
        return float(np.sqrt(self._gap() * self.L))

    @property
    def sigma_ell(self) -> float:
        return float(np.sqrt(self._gap() * self.ell))

    @property
    def sigma_gamma(self) -> float:
        return float(np.sqrt(self._gap() * self.gamma))

    @property
    def sigma_alpha(self) -> float:
        return float((self._gap() ** 2 * self.alpha) ** (1.0 / 3.0))


def domain_radius(geom: geo.GeometrySpec) -> float:
    """sup of ||w||_2 over the feasible set (used to certify sigma)."""
    if geom.kind == geo.EUCLIDEAN_BOX:
        corner = np.maximum(np.abs(geom.lower), np.abs(geom.upper))
        return float(np.sqrt((corner ** 2).sum()))
    if geom.kind == geo.SIMPLEX:
        return 1.0
    raise ValueError("free Euclidean space has no finite radius; pass one explicitly")


class LinearGaussian:
    """Scalar oracle G(w, xi) = <xi, w>, xi ~ N(0, Sigma); g(w) = 0."""

    scalar_valued = True
    supports_jvp = True

    def __init__(self, geom: geo.GeometrySpec, covariance, radius: float | None = None):
        self.geometry = geom
        self.covariance = np.asarray(covariance, dtype=float)
        d = geom.dimension
        if self.covariance.shape != (d, d):
            raise ValueError("covariance must be d x d")
        evals, evecs = np.linalg.eigh(self.covariance)
        if np.any(evals < -1e-12):
            raise ValueError("covariance must be positive semidefinite")
        evals = np.clip(evals, 0.0, None)
        self._sqrt_cov = evecs @ np.diag(np.sqrt(evals)) @ evecs.T
        lam_max = float(evals.max())
        r = domain_radius(geom) if radius is None else radius
        self.radius = r
        self.constants = ProblemConstants(
            sigma=float(np.sqrt(8.0 * lam_max / 3.0) * r),
            L=0.0,
            ell=float(_CERT_MARGIN * np.sqrt(8.0 * lam_max / 3.0)),
            gamma=float(_CERT_MARGIN * np.sqrt(2.0 * lam_max / (1.0 - 2.0 ** (-2.0 / d)))),
            alpha=0.0,
        )

    def _xi(self, sample: OracleSample):
        z = rng.normals(sample.master, sample.tag, sample.stream,
                        sample.trial, sample.step, self.geometry.dimension,
                        lane=sample.lane)
        return z @ self._sqrt_cov.T

    def eval_g(self, w):
        w = np.asarray(w, dtype=float)
        return np.zeros(w.shape[:-1])

    def eval_G(self, w, sample: OracleSample):
        return (self._xi(sample) * np.asarray(w, dtype=float)).sum(axis=-1)

    def eval_jvp(self, w, sample: OracleSample, direction):
        return (self._xi(sample) * np.asarray(direction, dtype=float)).sum(axis=-1)


class NoisyQuadratic:
    """Vector-field oracle G(w, xi) = (A + xi I) w with scalar xi ~ N(0, s^2).

    The population field g(w) = A w is the gradient of f(w) = w' A w / 2,
    so the same object serves as the optimizer test problem.
    """

    scalar_valued = False
    supports_jvp = True

    def __init__(self, geom: geo.GeometrySpec, matrix, noise_std: float,
                 radius: float | None = None):
        self.geometry = geom
        self.matrix = np.asarray(matrix, dtype=float)
        d = geom.dimension
        if self.matrix.shape != (d, d) or not np.allclose(self.matrix, self.matrix.T):
            raise ValueError("matrix must be symmetric d x d")
        if noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        self.noise_std = float(noise_std)
        r = domain_radius(geom) if radius is None else radius
        self.radius = r
        s = self.noise_std
        op = float(np.linalg.norm(self.matrix, 2))
        self.constants = ProblemConstants(
            sigma=float(s * r * np.sqrt(8.0 / 3.0)),
            L=op,
            ell=float(_CERT_MARGIN * s * np.sqrt(8.0 / 3.0)),
            gamma=float(_CERT_MARGIN * s * np.sqrt(8.0 / 3.0)),
            alpha=0.0,
        )
        self.f_min = self._exact_min()

    def _exact_min(self) -> float:
        evals = np.linalg.eigvalsh(self.matrix)
        if evals.min() < -1e-12:
            raise ValueError("matrix must be positive semidefinite")
        g = self.geometry
        if g.kind == geo.EUCLIDEAN_FREE:
            return 0.0
        if g.kind == geo.EUCLIDEAN_BOX and np.all(g.lower <= 0) and np.all(g.upper >= 0):
            return 0.0
        from scipy import optimize

        cons = []
        bounds = None
        if g.kind == geo.EUCLIDEAN_BOX:
            bounds = list(zip(g.lower, g.upper))
        else:
            cons = [{"type": "eq", "fun": lambda w: w.sum() - 1.0}]
            bounds = [(0.0, 1.0)] * g.dimension
        res = optimize.minimize(
            self.f, geo.center_point(g), jac=self.eval_g,
            bounds=bounds, constraints=cons, method="SLSQP",
            options={"maxiter": 500, "ftol": 1e-14},
        )
        return float(res.fun)

    def _xi(self, sample: OracleSample):
        return rng.normals(sample.master, sample.tag, sample.stream,
                           sample.trial, sample.step, 1, lane=sample.lane)[..., 0]

    def f(self, w):
        w = np.asarray(w, dtype=float)
        return 0.5 * (w * (w @ self.matrix.T)).sum(axis=-1)

    def eval_g(self, w):
        return np.asarray(w, dtype=float) @ self.matrix.T

    grad_f = eval_g

    def eval_G(self, w, sample: OracleSample):
        w = np.asarray(w, dtype=float)
        xi = self.noise_std * self._xi(sample)
        return w @ self.matrix.T + xi[..., None] * w

    def eval_jvp(self, w, sample: OracleSample, direction):
        direction = np.asarray(direction, dtype=float)
        xi = self.noise_std * self._xi(sample)
        return direction @ self.matrix.T + xi[..., None] * direction

    def constants_for_start(self, w_start) -> ProblemConstants:
        gap = float(self.f(np.asarray(w_start, dtype=float)) - self.f_min)
        return replace(self.constants, delta_f=max(gap, 0.0))


class FiniteSum:
    """Uniform sampling over affine components G_i(w) = A_i w + c_i."""

    scalar_valued = False
    supports_jvp = True

    def __init__(self, geom: geo.GeometrySpec, matrices, offsets, radius: float | None = None):
        self.geometry = geom
        self.matrices = np.asarray(matrices, dtype=float)
        self.offsets = np.asarray(offsets, dtype=float)
        m, d = self.offsets.shape
        if self.matrices.shape != (m, d, d) or d != geom.dimension:
            raise ValueError("component shapes do not match the geometry")
        self._mean_matrix = self.matrices.mean(axis=0)
        self._mean_offset = self.offsets.mean(axis=0)
        r = domain_radius(geom) if radius is None else radius
        self.radius = r
        comp_lip = [np.linalg.norm(a, 2) for a in self.matrices]
        dev = [
            np.linalg.norm(a - self._mean_matrix, 2) * r
            + np.linalg.norm(c - self._mean_offset)
            for a, c in zip(self.matrices, self.offsets)
        ]
        # Bounded noise: a.s. bound M certifies proxy M / sqrt(ln 2).
        self.constants = ProblemConstants(
            sigma=float(max(dev) / np.sqrt(_LN2)),
            L=float(np.linalg.norm(self._mean_matrix, 2)),
            ell=float(2.0 * max(comp_lip)),
            gamma=float(max(np.linalg.norm(a - self._mean_matrix, 2) for a in self.matrices)
                        / np.sqrt(_LN2)),
            alpha=0.0,
        )

    def _index(self, sample: OracleSample):
        u = rng.uniforms(sample.master, sample.tag, sample.stream,
                         sample.trial, sample.step, 1, lane=sample.lane)[..., 0]
        return np.minimum((u * len(self.matrices)).astype(int), len(self.matrices) - 1)

    def eval_g(self, w):
        return np.asarray(w, dtype=float) @ self._mean_matrix.T + self._mean_offset

    def eval_G(self, w, sample: OracleSample):
        w = np.asarray(w, dtype=float)
        i = self._index(sample)
        a = self.matrices[i]
        return np.einsum("...ij,...j->...i", a, np.broadcast_to(w, i.shape + w.shape[-1:])) \
            + self.offsets[i]

    def eval_jvp(self, w, sample: OracleSample, direction):
        direction = np.asarray(direction, dtype=float)
        i = self._index(sample)
        a = self.matrices[i]
        return np.einsum("...ij,...j->...i", a,
                         np.broadcast_to(direction, i.shape + direction.shape[-1:]))


class ConstrainedLinear:
    """Linear objective with a noisy linear expectation constraint.

    f(w) = <c, w>;  h(w) = <a, w> + b observed through
    H(w, xi) = <a + xi, w> + b with xi ~ N(0, s^2 I).  Stochastic
    subgradients carry fresh bounded noise: F' = c + rho * zeta,
    H' = a + rho * zeta with zeta uniform on [-1, 1]^d.  The exact optimum
    is found once by enumerating vertices of the feasible polytope.
    """

    scalar_valued = True
    supports_jvp = True

    def __init__(self, geom: geo.GeometrySpec, cost, normal, offset: float,
                 noise_std: float, subgrad_noise: float = 0.0):
        if geom.kind == geo.EUCLIDEAN_FREE:
            raise ValueError("the constrained problem needs a bounded domain")
        self.geometry = geom
        self.cost = np.asarray(cost, dtype=float)
        self.normal = np.asarray(normal, dtype=float)
        self.offset = float(offset)
        self.noise_std = float(noise_std)
        self.subgrad_noise = float(subgrad_noise)
        d = geom.dimension
        r = domain_radius(geom)
        self.radius = r
        zeta_bound = np.sqrt(d) if geom.kind == geo.EUCLIDEAN_BOX else 1.0
        g_bound = max(geo.dual_norm(self.cost, geom), geo.dual_norm(self.normal, geom)) \
            + self.subgrad_noise * zeta_bound
        self.constants = ProblemConstants(
            sigma=float(self.noise_std * r * np.sqrt(8.0 / 3.0)),
            L=float(geo.dual_norm(self.normal, geom)),
            ell=float(_CERT_MARGIN * self.noise_std * np.sqrt(8.0 / 3.0)),
            gamma=_CERT_MARGIN * gaussian_proxy_for_std(self.noise_std, d)
            if self.noise_std > 0 else 0.0,
            alpha=0.0,
            G_update=float(g_bound),
        )
        self.w_star, self.f_star = self._solve()
        if self.h(self.w_star) > 1e-9:
            raise ValueError("constructed problem is infeasible")

    def _candidate_points(self):
        g = self.geometry
        a, b = self.normal, self.offset
        if g.kind == geo.EUCLIDEAN_BOX:
            lo, hi = g.lower, g.upper
            verts = [np.where(mask, hi, lo)
                     for mask in itertools.product([False, True], repeat=g.dimension)]
            verts = [np.asarray(v, dtype=float) for v in verts]
            edges = []
            for v in verts:
                for j in range(g.dimension):
                    if v[j] == lo[j]:
                        w = v.copy()
                        denom = a[j] * (hi[j] - lo[j])
                        if denom != 0.0:
                            s = -(a @ v + b) / denom
                            if 0.0 <= s <= 1.0:
                                w[j] = lo[j] + s * (hi[j] - lo[j])
                                edges.append(w)
            return verts + edges
        # simplex: vertices e_i plus hyperplane crossings of edges (e_i, e_j)
        eye = np.eye(g.dimension)
        verts = [eye[i] for i in range(g.dimension)]
        edges = []
        for i in range(g.dimension):
            for j in range(i + 1, g.dimension):
                denom = a[j] - a[i]
                if denom != 0.0:
                    lam = (a[j] + b) / denom  # h((1-lam) e_j + lam e_i) = 0
                    if 0.0 <= lam <= 1.0:
                        edges.append(lam * eye[i] + (1.0 - lam) * eye[j])
        return verts + edges

    def _solve(self):
        feasible = [w for w in self._candidate_points() if self.h(w) <= 1e-12]
        if not feasible:
            raise ValueError("the constraint excludes the whole domain")
        vals = [float(self.cost @ w) for w in feasible]
        k = int(np.argmin(vals))
        return feasible[k], vals[k]

    def f(self, w):
        return np.asarray(w, dtype=float) @ self.cost

    def h(self, w):
        return np.asarray(w, dtype=float) @ self.normal + self.offset

    eval_g = h

    def _xi(self, sample: OracleSample):
        z = rng.normals(sample.master, sample.tag, sample.stream,
                        sample.trial, sample.step, self.geometry.dimension,
                        lane=sample.lane)
        return self.noise_std * z

    def eval_G(self, w, sample: OracleSample):
        w = np.asarray(w, dtype=float)
        return w @ self.normal + (self._xi(sample) * w).sum(axis=-1) + self.offset

    def eval_jvp(self, w, sample: OracleSample, direction):
        direction = np.asarray(direction, dtype=float)
        return direction @ self.normal + (self._xi(sample) * direction).sum(axis=-1)

    def subgradients(self, w, master: int, tag: int, trial, step: int):
        """Fresh (F', H') pair at step t; zeta is its own counter stream."""
        d = self.geometry.dimension
        zeta = 2.0 * rng.uniforms(master, tag, rng.STREAM_SUBGRAD, trial, step, d) - 1.0
        noise = self.subgrad_noise * zeta
        return self.cost + noise, self.normal + noise


def batch_mean_G(problem, w, sample: OracleSample, batch: int):
    """Average of ``batch`` independent evaluations at the same point."""
    if batch < 1:
        raise ValueError("batch size must be at least 1")
    handle = batch_sample(sample, batch)
    w = np.asarray(w, dtype=float)
    values = problem.eval_G(w[..., None, :], handle)
    if problem.scalar_valued:
        return values.mean(axis=-1)
    return values.mean(axis=-2)

import numpy as np
import pytest
from scipy import optimize

from vrestim import geometry as geo
from vrestim import rng


def random_instances(geom, count, seed=0, dual_scale=2.0):
    """Deterministic random (w, u) batches for property checks."""
    d = geom.dimension
    w_raw = rng.uniforms(seed, 0, rng.STREAM_MISC, np.arange(count), 1, d)
    u = dual_scale * rng.normals(seed, 0, rng.STREAM_MISC, np.arange(count), 2, d)
    if geom.kind == geo.SIMPLEX:
        w = 0.05 + w_raw
        w = w / w.sum(axis=-1, keepdims=True)
    elif geom.kind == geo.EUCLIDEAN_BOX:
        w = geom.lower + w_raw * (geom.upper - geom.lower)
    else:
        w = 4.0 * (w_raw - 0.5)
    return w, u


GEOMETRIES = [
    geo.euclidean(5),
    geo.box(np.full(5, -1.5), np.full(5, 2.0)),
    geo.simplex(5),
]


def test_norm_examples():
    g2 = geo.euclidean(2)
    assert geo.primal_norm(np.array([3.0, 4.0]), g2) == 5.0
    assert geo.primal_norm(np.zeros(2), g2) == 0.0
    assert geo.dual_norm(np.array([3.0, 4.0]), g2) == 5.0
    s3 = geo.simplex(3)
    assert geo.primal_norm(np.array([1.0, -1.0, 2.0]), s3) == 4.0
    assert geo.dual_norm(np.array([1.0, -7.0, 2.0]), s3) == 7.0
    assert geo.dual_norm(np.zeros(3), s3) == 0.0


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        geo.primal_norm(np.zeros(3), geo.euclidean(2))
    with pytest.raises(ValueError):
        geo.dual_norm(np.zeros(4), geo.simplex(3))


def test_kappa_values():
    assert geo.euclidean(7).kappa == 1.0
    assert geo.box(np.zeros(2), np.ones(2)).kappa == 1.0
    assert geo.simplex(2).kappa == 1.0  # ln(max{e, d}) with d <= e
    assert geo.simplex(50).kappa == pytest.approx(np.log(50.0))


def test_bregman_examples():
    g2 = geo.euclidean(2)
    x = np.array([1.0, 0.0])
    assert geo.bregman(x, x, g2) == 0.0
    assert geo.bregman(x, np.zeros(2), g2) == 0.5
    s2 = geo.simplex(2)
    val = geo.bregman(np.array([0.5, 0.5]), np.array([0.25, 0.75]), s2)
    assert val == pytest.approx(0.5 * np.log(2.0) + 0.5 * np.log(2.0 / 3.0), abs=1e-12)


def test_prox_step_examples():
    g2 = geo.euclidean(2)
    out = geo.prox_step(np.array([1.0, 2.0]), np.array([0.5, -1.0]), 0.2, g2)
    assert np.allclose(out, [0.9, 2.2], atol=1e-15)
    for geom in GEOMETRIES:
        w = geo.center_point(geom)
        assert np.allclose(geo.prox_step(w, np.zeros(geom.dimension), 0.7, geom), w)
        assert np.allclose(geo.prox_map(w, np.zeros(geom.dimension), 0.7, geom), 0.0)
    s2 = geo.simplex(2)
    wp = geo.prox_step(np.array([0.5, 0.5]), np.array([np.log(4.0), 0.0]), 1.0, s2)
    assert np.allclose(wp, [0.2, 0.8], atol=1e-12)
    pm = geo.prox_map(np.array([0.5, 0.5]), np.array([np.log(4.0), 0.0]), 1.0, s2)
    assert np.allclose(pm, [0.3, -0.3], atol=1e-12)


def test_prox_map_is_identity_on_free_space():
    g = geo.euclidean(4)
    w, u = random_instances(g, 64, seed=3)
    p = geo.prox_map(w, u, 0.37, g)
    assert np.allclose(p, u, atol=1e-12)


def test_prox_rejects_bad_eta():
    g = geo.euclidean(2)
    with pytest.raises(ValueError):
        geo.prox_step(np.zeros(2), np.ones(2), 0.0, g)


def numeric_prox(w, u, eta, geom):
    """Independent prox oracle: solve the subproblem with SLSQP."""
    d = geom.dimension

    def objective(x):
        return eta * float(u @ x) + float(geo.bregman(x, w, geom))

    if geom.kind == geo.SIMPLEX:
        cons = [{"type": "eq", "fun": lambda x: x.sum() - 1.0}]
        bnds = [(1e-12, 1.0)] * d
        x0 = np.full(d, 1.0 / d)
    elif geom.kind == geo.EUCLIDEAN_BOX:
        cons = []
        bnds = list(zip(geom.lower, geom.upper))
        x0 = geo.center_point(geom)
    else:
        cons = []
        bnds = None
        x0 = np.array(w, dtype=float)
    res = optimize.minimize(objective, x0, method="SLSQP", bounds=bnds,
                            constraints=cons,
                            options={"maxiter": 500, "ftol": 1e-16})
    return res.x


@pytest.mark.parametrize("geom", GEOMETRIES, ids=lambda g: g.kind)
def test_closed_form_prox_matches_numeric_oracle(geom):
    w, u = random_instances(geom, 25, seed=11)
    for i in range(w.shape[0]):
        eta = 0.05 + 0.5 * (i % 7) / 7.0
        closed = geo.prox_step(w[i], u[i], eta, geom)
        numeric = numeric_prox(w[i], u[i], eta, geom)
        assert np.linalg.norm(closed - numeric) <= 1e-6 * max(1.0, np.linalg.norm(closed))


@pytest.mark.parametrize("geom", GEOMETRIES, ids=lambda g: g.kind)
def test_prox_mapping_properties(geom):
    """The four mapping properties on a downsampled instance set (full set
    runs in the acceptance suite)."""
    n = 500
    tol = 1e-9
    w, u1 = random_instances(geom, n, seed=21)
    _, u2 = random_instances(geom, n, seed=22)
    eta = 0.05 + rng.uniforms(23, 0, rng.STREAM_MISC, np.arange(n), 3, 1)[:, 0]
    eta2 = eta + 0.3

    p1 = geo.prox_map(w, u1, eta, geom)
    p2 = geo.prox_map(w, u2, eta, geom)
    # non-expansiveness
    assert np.all(geo.primal_norm(p1 - p2, geom)
                  <= geo.dual_norm(u1 - u2, geom) + tol)
    # inner-product bounds
    inner = (u1 * p1).sum(axis=-1)
    assert np.all(geo.primal_norm(p1, geom) ** 2 <= inner + tol)
    assert np.all(inner <= geo.dual_norm(u1, geom) * geo.primal_norm(p1, geom) + tol)
    # scaling
    alpha = 1.7
    lhs = geo.prox_map(w, alpha * u1, eta, geom)
    rhs = alpha * geo.prox_map(w, u1, alpha * eta, geom)
    assert np.max(np.abs(lhs - rhs)) <= tol
    # monotonicity
    big = (u1 * (eta2[:, None] * geo.prox_map(w, u1, eta2, geom))).sum(axis=-1)
    small = (u1 * (eta[:, None] * geo.prox_map(w, u1, eta, geom))).sum(axis=-1)
    assert np.all(big >= small - tol)


@pytest.mark.parametrize("geom", GEOMETRIES, ids=lambda g: g.kind)
def test_bregman_strong_convexity(geom):
    x, _ = random_instances(geom, 400, seed=31)
    y, _ = random_instances(geom, 400, seed=32)
    div = geo.bregman(x, y, geom)
    assert np.all(div >= 0.5 * geo.primal_norm(x - y, geom) ** 2 - 1e-9)


@pytest.mark.parametrize("geom", GEOMETRIES, ids=lambda g: g.kind)
def test_normalized_direction_inequality(geom):
    n = 400
    tol = 1e-9
    w, u = random_instances(geom, n, seed=41)
    _, delta = random_instances(geom, n, seed=42)
    delta = 0.5 * delta
    eta = 0.05 + rng.uniforms(43, 0, rng.STREAM_MISC, np.arange(n), 4, 1)[:, 0]
    un = geo.dual_norm(u, geom)
    vn = geo.dual_norm(u + delta, geom)
    keep = (un > 1e-8) & (vn > 1e-8)
    w, u, delta, eta, un, vn = w[keep], u[keep], delta[keep], eta[keep], un[keep], vn[keep]
    lhs = (u * geo.prox_map(w, (u + delta) / vn[:, None], eta, geom)).sum(axis=-1)
    rhs = 0.25 * (u * geo.prox_map(w, u / un[:, None], eta / 2.0, geom)).sum(axis=-1) \
        - 2.0 * geo.dual_norm(delta, geom)
    assert np.all(lhs >= rhs - tol)


def test_feasibility_checks():
    s = geo.simplex(3)
    assert geo.is_feasible(np.array([0.2, 0.3, 0.5]), s)
    assert not geo.is_feasible(np.array([0.2, 0.3, 0.6]), s)
    assert not geo.is_feasible(np.array([0.0, 0.5, 0.5]), s)
    b = geo.box(np.zeros(2), np.ones(2))
    assert geo.is_feasible(np.array([0.5, 1.0]), b)
    assert not geo.is_feasible(np.array([0.5, 1.5]), b)
    with pytest.raises(ValueError):
        geo.require_feasible(np.array([2.0, 0.0]), b)


def test_simplex_prox_survives_extreme_inputs():
    s = geo.simplex(4)
    w = np.array([0.97, 0.01, 0.01, 0.01])
    u = np.array([800.0, -800.0, 0.0, 0.0])
    wp = geo.prox_step(w, u, 1.0, s)
    assert geo.is_feasible(wp, s)
    assert abs(wp.sum() - 1.0) <= 1e-12

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import paper, toy
from fstar_noma.beamforming import solve_beamforming
from fstar_noma.channels import assemble_channels, draw_nlos
from fstar_noma.convex import quad_lower_taylor, quad_upper_taylor
from fstar_noma.metrics import effective_channels, sum_rate
from fstar_noma.positions import (CouplingContext, DinkelbachState, a1_value_grad_hess, b_value_grad_hess,
                                  build_position_problem, coupling_contexts, coupling_curvature, d_hat,
                                  element_model, optimize_element, optimize_positions, t_value_grad_hess)
from fstar_noma.surface import ElementLayout, default_coeffs, uniform_grid_layout, validate_layout

LAM = 0.03
H = 1e-6


def random_context(rng, n_other=None):
    n_other = n_other or int(rng.integers(1, 30))
    s = np.exp(1j * rng.uniform(0, 2 * np.pi, n_other))
    dh = rng.normal(size=2) * 2 * np.pi / LAM
    return CouplingContext(z1=float(rng.uniform(0.5, 3)), s=s, d_hat=dh, weights=rng.uniform(0.1, 2, n_other))


def fd_check(f, p, scale):
    """Max relative error of the analytic gradient and Hessian against central differences."""
    _, g, Hs = f(p)
    fd_g = np.array([(f(p + H * e)[0] - f(p - H * e)[0]) / (2 * H) for e in np.eye(2)])
    fd_h = np.array([(f(p + H * e)[1] - f(p - H * e)[1]) / (2 * H) for e in np.eye(2)])
    eg = np.linalg.norm(g - fd_g) / max(np.linalg.norm(g), scale)
    eh = np.linalg.norm(Hs - fd_h) / max(np.linalg.norm(Hs), scale)
    return eg, eh


def test_a1_examples():
    ctx = CouplingContext(z1=2.0, s=np.ones(24, complex), d_hat=np.array([50.0, -20.0]))
    v, g, Hs = a1_value_grad_hess(ctx, np.zeros(2))
    assert v == pytest.approx(2.0 * 24) and np.allclose(g, 0)
    assert Hs[0, 1] == Hs[1, 0]


def test_a1_derivatives_match_finite_differences(rng):
    worst = 0.0
    for _ in range(100):
        ctx = random_context(rng)
        p = rng.uniform(-0.0675, 0.0675, 2)
        scale = 1e-6 * ctx.z1 * np.sum(ctx.w()) * np.linalg.norm(ctx.d_hat)
        worst = max(worst, *fd_check(lambda q: a1_value_grad_hess(ctx, q), p, scale))
    assert worst <= 1e-6


def test_t_examples_and_derivatives(rng):
    dh = np.array([30.0, 40.0])
    v, g, _ = t_value_grad_hess(1.5 + 0j, dh, np.zeros(2))
    assert v == pytest.approx(3.0) and np.allclose(g, 0)
    v, g, _ = t_value_grad_hess(1.5 + 0.5j, dh, np.zeros(2))
    assert np.allclose(g, 2 * 0.5 * dh)
    worst = 0.0
    for _ in range(100):
        z2 = complex(*rng.normal(size=2))
        dh = rng.normal(size=2) * 2 * np.pi / LAM
        p = rng.uniform(-0.0675, 0.0675, 2)
        v = t_value_grad_hess(z2, dh, p)[0]
        assert isinstance(v, float) or np.isrealobj(v)
        worst = max(worst, *fd_check(lambda q: t_value_grad_hess(z2, dh, q), p, 1e-6 * abs(z2) * np.linalg.norm(dh)))
    assert worst <= 1e-6


def test_b_examples_and_derivatives(rng):
    s = paper()
    assert np.allclose(d_hat(s, s.phi_r, s.psi_r), 0)
    ctx = CouplingContext(z1=2.0, s=np.exp(1j * rng.uniform(0, 6, 10)), d_hat=d_hat(s, s.phi_r, s.psi_r))
    assert np.allclose(b_value_grad_hess(ctx, rng.normal(size=2))[1], 0)
    worst = 0.0
    for _ in range(100):
        q = int(rng.integers(0, 2))
        ctx = CouplingContext(z1=float(rng.uniform(0.5, 3)), s=np.exp(1j * rng.uniform(0, 6, 24)),
                              d_hat=d_hat(s, s.phi_T[q] + rng.normal(), s.psi_T[q]))
        p = rng.uniform(-0.0675, 0.0675, 2)
        scale = 1e-6 * ctx.z1 * 24 * np.linalg.norm(ctx.d_hat)
        worst = max(worst, *fd_check(lambda x: b_value_grad_hess(ctx, x), p, scale))
    assert worst <= 1e-6


@given(st.integers(0, 10_000), st.floats(-0.05, 0.05))
def test_value_constant_along_null_direction(seed, t):
    rng = np.random.default_rng(seed)
    ctx = random_context(rng)
    n = np.array([-ctx.d_hat[1], ctx.d_hat[0]]) / np.linalg.norm(ctx.d_hat)
    p = rng.uniform(-0.05, 0.05, 2)
    assert b_value_grad_hess(ctx, p + t * n)[0] == pytest.approx(b_value_grad_hess(ctx, p)[0], rel=1e-9, abs=1e-9)


def test_quadratic_sandwich_on_closed_forms(rng):
    for _ in range(20):
        ctx = random_context(rng)
        z2 = complex(*rng.normal(size=2)) * 3
        f = lambda p: tuple(a + b for a, b in zip(a1_value_grad_hess(ctx, p), t_value_grad_hess(z2, ctx.d_hat, p)))
        delta = coupling_curvature(ctx, z2)
        p_n = rng.uniform(-0.05, 0.05, 2)
        v_n, g_n, _ = f(p_n)
        for p in p_n + rng.uniform(-LAM / 4, LAM / 4, (50, 2)):
            v = f(p)[0]
            assert quad_lower_taylor(v_n, g_n, p, p_n, delta) <= v + 1e-9 * abs(v_n)
            assert v <= quad_upper_taylor(v_n, g_n, p, p_n, delta) + 1e-9 * abs(v_n)


@pytest.fixture(scope="module")
def paper_point():
    s = paper(seed=0)
    nl = draw_nlos(s)
    lay = uniform_grid_layout(s.L, s.aperture_side, s.min_spacing, s.wavelength)
    ch = assemble_channels(s, lay.positions, nl)
    co = default_coeffs(s.L, s, lay)
    bf = solve_beamforming(*effective_channels(ch, co), s).beamformers
    return s, nl, lay, ch, co, bf


def test_element_model_is_exact(paper_point, rng):
    s, nl, lay, ch, co, bf = paper_point
    m = element_model(7, lay, co, bf, s, nl, ch)
    for _ in range(5):
        p = lay.positions.copy()
        p[:, 7] = rng.uniform(-0.0675, 0.0675, 2)
        F = np.vstack(effective_channels(assemble_channels(s, p, nl), co)[::-1])
        exact = np.abs(F @ bf.all().T) ** 2 / s.noise_r[0]
        assert np.allclose(m.powers(p[:, 7])[0], exact, rtol=1e-9)


def test_decomposition_matches_model(paper_point, rng):
    s, nl, lay, ch, co, bf = paper_point
    m = element_model(3, lay, co, bf, s, nl, ch)
    for u, j in ((2, 3), (0, 1), (3, 3)):
        const, ctx, z2, nc, nf = coupling_contexts(m, lay, s, u, j)
        for p in rng.uniform(-0.0675, 0.0675, (5, 2)):
            v = const + a1_value_grad_hess(ctx, p)[0] + t_value_grad_hess(z2, ctx.d_hat, p)[0] + \
                np.real(nc * np.exp(1j * nf @ p)).sum()
            assert v == pytest.approx(m.powers(p)[0][u, j], rel=1e-9)


def test_model_sandwich_in_trust_region(paper_point, rng):
    s, nl, lay, ch, co, bf = paper_point
    violations = 0
    for l in (0, 12, 24):
        m = element_model(l, lay, co, bf, s, nl, ch)
        p_n = lay.positions[:, l]
        v_n, g_n = m.powers(p_n)
        cap = m.caps()
        for p in p_n + rng.uniform(-LAM / 4, LAM / 4, (300, 2)):
            v = m.powers(p)[0]
            d = p - p_n
            lin = v_n + np.einsum("ujd,d->uj", g_n, d)
            q = cap / 2 * (d @ d)
            tol = 1e-9 * np.abs(v_n).max()
            violations += np.sum(lin - q > v + tol) + np.sum(v > lin + q + tol)
    assert violations == 0


def test_current_point_feasible_and_touching(paper_point):
    s, nl, lay, ch, co, bf = paper_point
    m = element_model(5, lay, co, bf, s, nl, ch)
    P, _ = m.powers(lay.positions[:, 5])
    num = np.diag(P)
    den = np.array([P[u, u + 1:].sum() for u in range(4)]) + m.noise
    dink = DinkelbachState(y=num / den)
    prob, data = build_position_problem(m, lay, dink, s, trust=0.25)
    x0 = np.concatenate([[0.0, 0.0, 0.0], dink.y])
    slack = data.rhs - data.rows @ x0
    assert np.all(slack >= -1e-9 * np.abs(data.rhs).max())
    assert np.allclose(slack[0], 0, atol=1e-9 * abs(data.rhs[0]))     # Dinkelbach row touches


def test_spacing_linearisation_is_conservative(rng):
    for _ in range(1000):
        pt, pm, q = rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)
        e = (pt - pm) / np.linalg.norm(pt - pm)
        assert e @ (q - pm) <= np.linalg.norm(q - pm) + 1e-12


def test_flat_objective_keeps_position():
    s = toy(K=1, Q=0, L=1, M=2, gamma_min=0.0)
    s = s.with_updates(phi_R=[s.phi_r], psi_R=[s.psi_r])
    nl = draw_nlos(s.with_updates(kappa=1.0))
    s = s.with_updates(kappa=1e15)
    lay = ElementLayout(np.zeros((2, 1)))
    ch = assemble_channels(s, lay.positions, nl)
    co = default_coeffs(1, s, lay)
    bf = solve_beamforming(*effective_channels(ch, co), s).beamformers
    res = optimize_element(0, lay, co, bf, s, nl)
    assert np.linalg.norm(res.position) <= 1e-9


def test_two_element_matches_grid_search():
    s = toy(K=1, Q=0, L=2, M=2, kappa=1.0, aperture_side=LAM)
    nl = draw_nlos(s)
    lay = ElementLayout(np.array([[-LAM / 4, LAM / 4], [0.0, 0.0]]))
    ch = assemble_channels(s, lay.positions, nl)
    co = default_coeffs(2, s, lay)
    bf = solve_beamforming(*effective_channels(ch, co), s).beamformers
    p = lay.positions.copy()
    for _ in range(60):
        r = optimize_element(0, ElementLayout(p), co, bf, s, nl)
        moved = np.linalg.norm(r.position - p[:, 0])
        p[:, 0] = r.position
        if moved < 1e-10:
            break
    half = s.aperture_side / 2
    ax = np.arange(-half, half + 1e-12, LAM / 100)
    best = -np.inf
    for x in ax:
        for y in ax:
            if np.hypot(x - p[0, 1], y - p[1, 1]) < s.min_spacing:
                continue
            q = p.copy()
            q[:, 0] = [x, y]
            best = max(best, sum_rate(assemble_channels(s, q, nl), co, bf, s))
    assert abs(r.objective - best) <= 1e-2
    assert validate_layout(ElementLayout(p), s.aperture_side, s.min_spacing) == []


def test_paper_sweep_monotone(paper_point):
    s, nl, lay, ch, co, bf = paper_point
    before = sum_rate(ch, co, bf, s)
    sw = optimize_positions(lay, co, bf, s, nl)
    assert validate_layout(sw.layout, s.aperture_side, s.min_spacing) == []
    hist = np.array([before] + sw.history)
    assert np.all(np.diff(hist) >= -1e-6)
    assert sum_rate(assemble_channels(s, sw.layout.positions, nl), co, bf, s) == pytest.approx(sw.objective, rel=1e-9)
    for seq in sw.ratios:
        assert np.all(np.diff(np.array(seq), axis=0) >= -1e-9 * np.abs(np.array(seq)[:-1]))
    assert len(sw.rows) == s.L and {"element", "inner", "objective"} <= set(sw.rows[0])

"""Per-element position optimisation by majorisation-minimisation.

Moving element l only changes its own steering phases, so every received
amplitude splits into a fixed part c0 (other elements plus the direct link)
and the element's own contribution

    b_l(p) = lam1 exp(j w1.p) + lam2 exp(j w2.p),
    w1 = (2 pi / lambda)(D_r - D_u),  w2 = -(2 pi / lambda) D_u,

where D(phi, psi) = (sin phi cos psi, sin psi). lam1 carries the LoS part of
the BS-surface channel and lam2 its NLoS part. Hence

    |F_u w|^2 = K0 + A1(p) + T(p) + N(p)

with A1 the coupling to the other elements, T the coupling to the direct
link (R users only) and N the terms caused by the NLoS part. Each is a
sum of sinusoids in p, so values, gradients and Hessians are closed form and
sum_m |C_m| ||w_m||^2 bounds the Hessian norm everywhere. That bound is
used as the curvature constant of the quadratic minorant/majorant, so the
surrogates hold globally and not only near the expansion point.

The position step keeps every user's SINR at least at its current
Dinkelbach ratio y (so ratios never decrease) and maximises
sum log2(1 + Xi) with Xi <= y + (C~ - y D~) / D(p_t).
"""

from dataclasses import dataclass, field
from functools import lru_cache

import cvxpy as cp
import numpy as np

from .channels import assemble_channels, direction_vector, ula_steering
from .convex import ConicProblem, DINKELBACH_TOL, dinkelbach_update, solve_conic
from .metrics import Beamformers, sic_chain_pairs
from .surface import ElementLayout, SurfaceCoeffs, validate_layout

MAX_INNER = 10
MIN_TRUST_FRACTION = 1 / 32
STATIONARY_GAIN = 1e-10     # relative sum-rate gain below which a move is not taken


# ---------------------------------------------------------------------------
# closed-form terms


@dataclass(frozen=True)
class CouplingContext:
    """Coupling of one element with the other elements for one (user, beam) pair.

    value(p) = z1 * sum_i weights_i cos(angle(s_i) + d_hat . p)

    With unit weights this is the unit-amplitude cosine sum; the weights keep
    the per-element magnitudes exact when amplitudes differ.
    """
    z1: float
    s: np.ndarray          # unit phasors, one per other element
    d_hat: np.ndarray      # (2,) spatial frequency (2 pi / lambda)(D_r - D_u)
    weights: np.ndarray | None = None

    def w(self):
        return np.ones(len(self.s)) if self.weights is None else self.weights


def a1_value_grad_hess(ctx: CouplingContext, p):
    theta = np.angle(ctx.s) + ctx.d_hat @ np.asarray(p, dtype=float)
    w = ctx.w()
    c = ctx.z1 * np.sum(w * np.cos(theta))
    sn = ctx.z1 * np.sum(w * np.sin(theta))
    return c, -sn * ctx.d_hat, -c * np.outer(ctx.d_hat, ctx.d_hat)


# the transmission-side term has the same form with the T-user angles
b_value_grad_hess = a1_value_grad_hess


def t_value_grad_hess(z2, d_hat, p):
    """T(p) = 2 Re(z2) cos(theta) + 2 Im(z2) sin(theta), theta = d_hat . p."""
    theta = d_hat @ np.asarray(p, dtype=float)
    v = 2 * z2.real * np.cos(theta) + 2 * z2.imag * np.sin(theta)
    dv = -2 * z2.real * np.sin(theta) + 2 * z2.imag * np.cos(theta)
    return v, dv * d_hat, -v * np.outer(d_hat, d_hat)


def coupling_curvature(ctx: CouplingContext, z2=0.0, t_hat=None):
    """Curvature constant valid at every p for A1(ctx, p) + T(z2, t_hat, p)."""
    t_hat = ctx.d_hat if t_hat is None else np.asarray(t_hat, dtype=float)
    return float(ctx.z1 * np.sum(np.abs(ctx.w())) * (ctx.d_hat @ ctx.d_hat) + 2 * abs(z2) * (t_hat @ t_hat))


def d_hat(scenario, phi, psi):
    k = 2 * np.pi / scenario.wavelength
    return k * (direction_vector(scenario.phi_r, scenario.psi_r) - direction_vector(phi, psi))


def sinusoid_value_grad(coef, freq, const, p):
    """f = const + sum_m Re(coef_m exp(j freq_m . p)) and its gradient; coef (..., m), freq (..., m, 2)."""
    e = coef * np.exp(1j * np.einsum("...md,d->...m", freq, p))
    val = const + np.real(e).sum(-1)
    grad = -np.einsum("...m,...md->...d", np.imag(e), freq)
    return val, grad


def sinusoid_hess(coef, freq, p):
    e = np.real(coef * np.exp(1j * np.einsum("...md,d->...m", freq, p)))
    return -np.einsum("...m,...md,...me->...de", e, freq, freq)


def curvature_bound(coef, freq):
    """sum_m |coef_m| ||freq_m||^2, an upper bound on ||Hessian||_F at every p."""
    return np.sum(np.abs(coef) * np.sum(freq ** 2, axis=-1), axis=-1)


@dataclass
class ElementModel:
    """Exact received powers P[u, j](p) = |F_u w_j|^2 / sigma_ref^2 as sinusoid sums of p_l."""
    l: int
    const: np.ndarray      # (n, n)
    coef: np.ndarray       # (n, n, 3)
    freq: np.ndarray       # (n, n, 3, 2)
    noise: np.ndarray      # (n,)
    # pieces kept for the decomposition checks
    lam1: np.ndarray       # (n, n)
    lam2: np.ndarray
    others: np.ndarray     # (n, n, L) contributions of every element at the current layout
    direct: np.ndarray     # (n, n)

    def powers(self, p):
        return sinusoid_value_grad(self.coef, self.freq, self.const, p)

    def hessians(self, p):
        return sinusoid_hess(self.coef, self.freq, p)

    def caps(self):
        return curvature_bound(self.coef, self.freq)


def element_model(l, layout: ElementLayout, coeffs: SurfaceCoeffs, bf: Beamformers,
                  scenario, nlos, channels=None) -> ElementModel:
    ch = channels if channels is not None else assemble_channels(scenario, layout.positions, nlos)
    noise = np.concatenate([scenario.noise_t, scenario.noise_r])
    ref = noise.min()
    scale = 1 / np.sqrt(ref)
    K, Q, M = scenario.K, scenario.Q, scenario.M
    n = K + Q
    k = 2 * np.pi / scenario.wavelength
    kap = scenario.kappa
    c_los, c_nlos = np.sqrt(kap / (kap + 1)), np.sqrt(1 / (kap + 1))
    beams = bf.all()                                   # (n, M)
    h_side = np.vstack([ch.h_t, ch.h_r])               # (n, L)
    v_side = np.vstack([np.tile(coeffs.v1, (Q, 1)), np.tile(coeffs.v2, (K, 1))])
    y = ch.g @ beams.T                                 # (L, n)
    others = (h_side.conj() * v_side.conj())[:, None, :] * y.T[None, :, :] * scale
    direct = np.zeros((n, n), dtype=complex)
    if K:
        direct[Q:] = (ch.h_b @ beams.T) * scale
    total = others.sum(-1) + direct
    c0 = total - others[:, :, l]

    a_t = ula_steering(scenario.phi_t, M)
    los_gain = np.sqrt(ch.zeta_g) * c_los * (a_t.conj() @ beams.T)            # (n,)
    nlos_gain = np.sqrt(ch.zeta_g) * c_nlos * (nlos.g_nlos[l] @ beams.T)     # (n,)
    zeta_side = np.concatenate([ch.zeta_t, ch.zeta_r])
    amp = np.sqrt(zeta_side) * v_side[:, l].conj() * scale                   # (n,)
    lam1 = amp[:, None] * los_gain[None, :]
    lam2 = amp[:, None] * nlos_gain[None, :]

    angles = [(scenario.phi_T[q], scenario.psi_T[q]) for q in range(Q)] + \
             [(scenario.phi_R[i], scenario.psi_R[i]) for i in range(K)]
    d_r = direction_vector(scenario.phi_r, scenario.psi_r)
    w1 = np.array([k * (d_r - direction_vector(*a)) for a in angles])       # (n, 2)
    w2 = np.array([-k * direction_vector(*a) for a in angles])
    w3 = np.tile(k * d_r, (n, 1))
    freq = np.stack([w1, w2, w3], axis=1)[:, None, :, :].repeat(n, axis=1)  # (n, n, 3, 2)

    # |c0 + lam1 e1 + lam2 e2|^2 expanded
    coef = np.stack([2 * c0.conj() * lam1, 2 * c0.conj() * lam2, 2 * lam2.conj() * lam1], axis=-1)
    const = np.abs(c0) ** 2 + np.abs(lam1) ** 2 + np.abs(lam2) ** 2
    return ElementModel(l, const, coef, freq, noise / ref, lam1, lam2, others, direct)


def coupling_contexts(model: ElementModel, layout: ElementLayout, scenario, u, j):
    """Decomposition of P[u, j] into (K0, A1 context, T coefficient, NLoS sinusoids).

    Returns (const, ctx, z2, nlos_coef, nlos_freq) such that, for every p,
    P[u, j](p) = const + A1(ctx, p) + T(z2, p) + sum Re(nlos_coef e^{j nlos_freq . p}).
    """
    l = model.l
    lam1 = model.lam1[u, j]
    w1 = model.freq[u, j, 0]
    # other elements' amplitudes evaluated at the current layout
    mask = np.arange(model.others.shape[-1]) != l
    b = model.others[u, j, mask]
    prod = np.conj(b) * lam1
    mag = np.abs(prod)
    s = np.where(mag > 0, prod / np.where(mag > 0, mag, 1), 1.0)
    z1 = 2.0
    ctx = CouplingContext(z1=z1, s=s, d_hat=w1, weights=mag)
    z2 = model.direct[u, j] * np.conj(lam1)
    c0 = b.sum() + model.direct[u, j]
    nlos_coef = np.array([2 * np.conj(c0) * model.lam2[u, j], 2 * np.conj(model.lam2[u, j]) * lam1])
    nlos_freq = model.freq[u, j, 1:]
    return model.const[u, j], ctx, z2, nlos_coef, nlos_freq


# ---------------------------------------------------------------------------
# per-element convex step


@dataclass
class DinkelbachState:
    y: np.ndarray                       # current ratios, decoding order T_1..T_Q, R_1..R_K
    history: list = field(default_factory=list)
    tol: float = DINKELBACH_TOL

    def converged(self, new):
        rel = np.abs(new - self.y) / np.maximum(np.abs(self.y), 1e-12)
        return bool(np.all(rel < self.tol))


@lru_cache(maxsize=None)
def _build(n, n_rows):
    """x = [dx, dy, s, Xi_1..Xi_n] with displacement in wavelengths and s >= ||d||^2."""
    x = cp.Variable(3 + n, name="x")
    Mrow = cp.Parameter((n_rows, 3 + n), name="M")
    r = cp.Parameter(n_rows, name="r")
    lo = cp.Parameter(2, name="lo")
    hi = cp.Parameter(2, name="hi")
    y = cp.Parameter(n, name="y")
    w = cp.Parameter(n, nonneg=True, name="w")
    d, s, xi = x[:2], x[2], x[3:]
    cons = [Mrow @ x <= r, d >= lo, d <= hi, cp.sum_squares(d) <= s, xi >= y]
    prob = cp.Problem(cp.Maximize(w @ cp.log(1 + xi)), cons)
    return ConicProblem(prob, {"x": x}, dict(M=Mrow, r=r, lo=lo, hi=hi, y=y, w=w))


@dataclass
class PositionProblemData:
    rows: np.ndarray
    rhs: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    y: np.ndarray
    weights: np.ndarray


def build_position_problem(model: ElementModel, layout: ElementLayout, dink: DinkelbachState,
                           scenario, trust, p_t=None, sic=True, pareto=True):
    """Assemble the convex per-element step around p_t; returns (ConicProblem, data)."""
    l = model.l
    p = layout.positions
    p_t = p[:, l] if p_t is None else p_t
    lam = scenario.wavelength
    n = model.const.shape[0]
    val, grad = model.powers(p_t)                 # (n, n), (n, n, 2)
    grad = grad * lam                             # per wavelength of displacement
    cap = model.caps() * lam ** 2
    noise = model.noise
    y = dink.y
    rows, rhs = [], []

    def row(g_d, g_s, xi=None):
        r_ = np.zeros(3 + n)
        r_[:2], r_[2] = g_d, g_s
        if xi is not None:
            r_[3 + xi[0]] = xi[1]
        return r_

    for u in range(n):
        later = list(range(u + 1, n))
        C0, gC, dC = val[u, u], grad[u, u], cap[u, u]
        D0 = val[u, later].sum() + noise[u]
        gD = grad[u, later].sum(0) if later else np.zeros(2)
        dD = cap[u, later].sum() if later else 0.0
        # D0 (Xi - y) <= C~ - y D~   ->   -(gC - y gD).d + (dC + y dD)/2 s + D0 Xi <= C0 - y D0 + D0 y
        rows.append(row(-(gC - y[u] * gD), (dC + y[u] * dD) / 2, (u, D0)))
        rhs.append(C0 - y[u] * D0 + D0 * y[u])
        # QoS floor, no worse than the current margin
        gam = scenario.gamma_min
        if gam > 0:
            margin = min(0.0, C0 - gam * D0)
            rows.append(row(-(gC - gam * gD), (dC + gam * dD) / 2))
            rhs.append(C0 - gam * D0 - margin)
        # SIC chains: upper(weak) <= lower(strong) + current violation
        for weak, strong in (sic_chain_pairs(0, n) if sic else []):
            viol = max(0.0, val[u, weak] - val[u, strong])
            rows.append(row(grad[u, weak] - grad[u, strong], (cap[u, weak] + cap[u, strong]) / 2))
            rhs.append(val[u, strong] - val[u, weak] + viol)
    # linearised spacing: e.(p_t + lam d - p_m) >= dmin  with e = (p_t - p_m)/|p_t - p_m|
    dmin = scenario.min_spacing
    for m in range(p.shape[1]):
        if m == l:
            continue
        diff = p_t - p[:, m]
        dist = np.linalg.norm(diff)
        e = diff / dist
        rows.append(row(-lam * e, 0.0))
        rhs.append(dist - dmin - 1e-12)
    half = scenario.aperture_side / 2
    lo = np.maximum(-trust, (-half - p_t) / lam)
    hi = np.minimum(trust, (half - p_t) / lam)
    lo, hi = np.minimum(lo, 0), np.maximum(hi, 0)
    weights = np.concatenate([scenario.weights_t, scenario.weights_r])
    data = PositionProblemData(np.array(rows), np.array(rhs), lo, hi, y.copy(), weights)
    prob = _build(n, len(rows))
    floor = y if pareto else np.full(n, -0.5)
    prob.set(M=data.rows, r=data.rhs, lo=lo, hi=hi, y=floor, w=weights)
    return prob, data


def _exact(model: ElementModel, p):
    P, _ = model.powers(p)
    n = P.shape[0]
    num = np.diag(P).copy()
    den = np.array([P[u, u + 1:].sum() for u in range(n)]) + model.noise
    return num, den, P


def _sum_rate(num, den, weights):
    return float(weights @ np.log2(1 + num / den))


def _spacing_ok(p, l, pt, dmin, half):
    if np.any(np.abs(pt) > half):
        return False
    d = np.delete(p, l, axis=1) - pt[:, None]
    return bool(np.all(np.sqrt((d ** 2).sum(0)) >= dmin))


@dataclass
class ElementResult:
    position: np.ndarray
    objective: float
    accepted: int
    inner: int
    trust: float
    ratios: list


def optimize_element(l, layout: ElementLayout, coeffs, bf, scenario, nlos, trust=0.25,
                     max_inner=MAX_INNER, channels=None, sic=True, pareto=True) -> ElementResult:
    """Algorithm-1 inner loop for one element: Dinkelbach ratio updates around MM steps."""
    model = element_model(l, layout, coeffs, bf, scenario, nlos, channels)
    weights = np.concatenate([scenario.weights_t, scenario.weights_r])
    p = layout.positions.copy()
    p_t = p[:, l].copy()
    num, den, _ = _exact(model, p_t)
    obj = _sum_rate(num, den, weights)
    dink = DinkelbachState(y=np.array([dinkelbach_update(c, d) for c, d in zip(num, den)]))
    dink.history.append(dink.y.copy())
    half, dmin, lam = scenario.aperture_side / 2, scenario.min_spacing, scenario.wavelength
    accepted, it = 0, 0
    rho = trust
    while it < max_inner:
        it += 1
        prob, _ = build_position_problem(model, ElementLayout(p), dink, scenario, rho, p_t, sic, pareto)
        sol = solve_conic(prob)
        if not sol.ok:
            break
        d = sol.values["x"][:2] * lam
        cand = None
        for alpha in (1.0, 0.5, 0.25, 0.125):
            q = np.clip(p_t + alpha * d, -half, half)
            if _spacing_ok(p, l, q, dmin, half):
                cand = q
                break
        if cand is None:
            break
        num_n, den_n, _ = _exact(model, cand)
        y_new = num_n / den_n
        new_obj = _sum_rate(num_n, den_n, weights)
        if new_obj < obj - 1e-9 or (pareto and np.any(y_new < dink.y * (1 - 1e-9))):
            rho /= 2
            if rho < trust * MIN_TRUST_FRACTION:
                break
            continue
        if new_obj <= obj + STATIONARY_GAIN * max(1.0, abs(obj)):
            break                       # no measurable gain: stay put
        done = dink.converged(y_new)
        moved = np.linalg.norm(cand - p_t)
        p_t, obj = cand, new_obj
        p[:, l] = p_t
        dink.y = y_new
        dink.history.append(y_new.copy())
        accepted += 1
        if done or moved < 1e-9 * lam:
            break
    return ElementResult(p_t, obj, accepted, it, rho, dink.history)


@dataclass
class SweepResult:
    layout: ElementLayout
    objective: float
    history: list          # exact objective after each element
    rows: list             # per-element trace rows
    ratios: list           # Dinkelbach ratio sequences, one list per element


def optimize_positions(layout: ElementLayout, coeffs, bf, scenario, nlos, sweeps=1,
                       trust=0.25, sweep_index=0, sic=True, pareto=True) -> SweepResult:
    """Sequential sweep over elements; each accepted move refreshes the channels."""
    p = layout.positions.copy()
    history, rows, ratios = [], [], []
    obj = None
    for sw in range(sweeps):
        for l in range(p.shape[1]):
            res = optimize_element(l, ElementLayout(p), coeffs, bf, scenario, nlos, trust, sic=sic, pareto=pareto)
            p[:, l] = res.position
            obj = res.objective
            history.append(obj)
            ratios.append(res.ratios)
            rows.append(dict(sweep=sweep_index + sw, element=l, x=float(p[0, l]), y=float(p[1, l]),
                             objective=obj, inner=res.inner, accepted=res.accepted, trust=res.trust))
    out = ElementLayout(p)
    if validate_layout(out, scenario.aperture_side, scenario.min_spacing):
        raise RuntimeError("position sweep produced an invalid layout")
    return SweepResult(out, obj, history, rows, ratios)

"""Alternating optimisation over beams, coefficients and element positions, plus baselines.

Each outer iteration runs beamforming, then coefficients, then positions
(F-STAR only). Every stage starts from the current point and its result is
kept only if the exact weighted sum rate does not drop, so the objective
history is non-decreasing.
"""

import enum
import json
import time
from dataclasses import dataclass, field
from functools import lru_cache

import cvxpy as cp
import numpy as np

from .beamforming import solve_beamforming
from .channels import ChannelSet, NlosDraws, Scenario, assemble_channels, draw_nlos
from .coefficients import solve_coeff_subproblem, subproblem_data
from .convex import ConicProblem, SCA_TOL, solve_conic
from .metrics import Beamformers, effective_channels, qos_feasible, sinr_all, user_channels
from .positions import DinkelbachState, optimize_positions
from .surface import ElementLayout, SurfaceCoeffs, default_coeffs, uniform_grid_layout

OUTER_TOL = 1e-3
MAX_OUTER = 50
MONO_SLACK = 1e-6


class BaselineKind(str, enum.Enum):
    F_STAR = "F_STAR"
    T_STAR = "T_STAR"
    D_F_STAR = "D_F_STAR"
    OMA = "OMA"


@dataclass
class AoState:
    beamformers: Beamformers
    coeffs: SurfaceCoeffs
    layout: ElementLayout
    channels: ChannelSet
    dinkelbach: DinkelbachState | None = None
    history: list = field(default_factory=list)      # objective after each outer iteration
    stages: list = field(default_factory=list)       # (iteration, stage, objective) after every stage
    iterations: int = 0
    converged: bool = False
    failed_stage: str = ""
    ratios: list = field(default_factory=list)       # Dinkelbach sequences from the position stages
    dominance: list = field(default_factory=list)
    randomized: bool = False
    position_rows: list = field(default_factory=list)

    @property
    def objective(self):
        return self.history[-1] if self.history else float("nan")


def _objective(ch, coeffs, bf, scenario, kind):
    if kind == BaselineKind.OMA:
        return oma_rate(ch, coeffs, scenario)
    f_r, f_t = effective_channels(ch, coeffs)
    return sinr_all(f_r, f_t, bf, scenario).sum_rate


def _qos_ok(ch, coeffs, bf, scenario, tol=1e-5):
    f_r, f_t = effective_channels(ch, coeffs)
    rep = sinr_all(f_r, f_t, bf, scenario)
    return qos_feasible(rep, scenario.gamma_min, tol=tol * max(1.0, scenario.gamma_min))


class _Trace:
    def __init__(self, sink):
        self.sink = sink
        self.t0 = time.perf_counter()

    def __call__(self, iteration, stage, objective):
        if self.sink is not None:
            _replay(self.sink, [dict(iteration=iteration, stage=stage, objective=float(objective),
                                     time=round(time.perf_counter() - self.t0, 6))])


def _initial_state(scenario, layout, nlos):
    coeffs = default_coeffs(scenario.L, scenario, layout)
    return AoState(None, coeffs, layout, assemble_channels(scenario, layout.positions, nlos))


def _replay(sink, records):
    if sink is None:
        return
    for rec in records:
        if callable(getattr(sink, "write", None)):
            sink.write(json.dumps(rec) + "\n")
        else:
            sink.append(rec)


def run_ao(scenario: Scenario, kind=BaselineKind.F_STAR, init: AoState | None = None, nlos=None,
           max_outer=MAX_OUTER, tol=OUTER_TOL, trace=None, sweeps=1, first_iteration=1) -> AoState:
    """Alternate the three stages until the relative objective change is below tol.

    Without init, D_F_STAR runs from the greedy layout and from the uniform grid
    and keeps the better result. F_STAR first converges with positions frozen
    (the D_F_STAR run), then continues with the position stage on.
    trace may be a list (records appended) or a writable text stream (JSON lines).
    """
    kind = BaselineKind(kind)
    nlos = draw_nlos(scenario) if nlos is None else nlos
    if kind == BaselineKind.F_STAR and init is None and scenario.L > 0:
        # continuous refinement of the converged discrete-placement solution
        pre = run_ao(scenario, BaselineKind.D_F_STAR, nlos=nlos, max_outer=max_outer, tol=tol, trace=trace)
        if pre.failed_stage:
            return pre
        st = run_ao(scenario, kind, init=pre, nlos=nlos, max_outer=max(1, max_outer - pre.iterations), tol=tol,
                    trace=trace, sweeps=sweeps, first_iteration=pre.iterations + 1)
        st.history = pre.history + st.history[1:]
        st.stages = pre.stages + st.stages
        st.iterations += pre.iterations
        st.dominance = pre.dominance + st.dominance
        st.randomized |= pre.randomized
        return st
    if kind == BaselineKind.D_F_STAR and init is None and scenario.L > 0:
        # the uniform grid sits on the same lattice, so it is a second placement to start from;
        # at high power the greedy probe misjudges the SIC-limited rates and the grid can win
        starts = [greedy_discrete_placement(scenario, max(scenario.min_spacing, scenario.wavelength / 2), nlos),
                  uniform_grid_layout(scenario.L, scenario.aperture_side, scenario.min_spacing, scenario.wavelength)]
        best, best_log = None, None
        for layout in starts:
            recs = []
            st = run_ao(scenario, kind, init=_initial_state(scenario, layout, nlos), nlos=nlos,
                        max_outer=max_outer, tol=tol, trace=recs)
            if best is None or (not st.failed_stage and (best.failed_stage or st.objective > best.objective)):
                best, best_log = st, recs
        _replay(trace, best_log)
        return best
    log = _Trace(trace)
    if init is not None:
        state = AoState(init.beamformers, init.coeffs, init.layout,
                        assemble_channels(scenario, init.layout.positions, nlos),
                        history=list(init.history[-1:]))
    else:
        state = _initial_state(scenario, uniform_grid_layout(scenario.L, scenario.aperture_side,
                                                             scenario.min_spacing, scenario.wavelength), nlos)

    if kind == BaselineKind.OMA:
        return _run_oma(state, scenario, max_outer, tol, log)

    prev = state.history[-1] if state.history else None
    for it in range(first_iteration, first_iteration + max_outer):
        state.iterations = it - first_iteration + 1
        cur = prev
        # 1) beams
        f_r, f_t = effective_channels(state.channels, state.coeffs)
        bres = solve_beamforming(f_r, f_t, scenario, init=state.beamformers, rng_seed=scenario.seed + it)
        if bres.status == "optimal" and np.isfinite(bres.objective) and \
                _qos_ok(state.channels, state.coeffs, bres.beamformers, scenario) and \
                (cur is None or bres.objective >= cur):
            state.beamformers = bres.beamformers
            state.dominance.extend(np.atleast_1d(bres.dominance).tolist())
            state.randomized |= bres.randomized
            cur = bres.objective
        elif state.beamformers is None:
            state.failed_stage = f"beamforming: {bres.status}"
            return state
        log(it, "beamforming", cur)
        state.stages.append((it, "beamforming", cur))
        # 2) coefficients
        data = subproblem_data(state.channels, state.beamformers, scenario)
        cres = solve_coeff_subproblem(data, state.coeffs, scenario)
        if cres.objective >= cur - MONO_SLACK * max(1.0, abs(cur)):
            state.coeffs = cres.coeffs
            cur = max(cur, cres.objective)
        log(it, "coefficients", cur)
        state.stages.append((it, "coefficients", cur))
        # 3) positions
        if kind == BaselineKind.F_STAR and scenario.L > 0:
            sw = optimize_positions(state.layout, state.coeffs, state.beamformers, scenario, nlos,
                                    sweeps=sweeps, sweep_index=it)
            if sw.objective >= cur - MONO_SLACK * max(1.0, abs(cur)):
                state.layout = sw.layout
                state.channels = assemble_channels(scenario, sw.layout.positions, nlos)
                cur = _objective(state.channels, state.coeffs, state.beamformers, scenario, kind)
            state.ratios.extend(sw.ratios)
            state.position_rows.extend(sw.rows)
            state.dinkelbach = DinkelbachState(y=sw.ratios[-1][-1]) if sw.ratios else state.dinkelbach
            log(it, "positions", cur)
            state.stages.append((it, "positions", cur))
        state.history.append(cur)
        if prev is not None and abs(cur - prev) <= tol * max(abs(prev), 1e-12):
            state.converged = True
            break
        prev = cur
    return state


# ---------------------------------------------------------------------------
# OMA baseline


def oma_rate(channels: ChannelSet, coeffs: SurfaceCoeffs, scenario: Scenario):
    """Equal-share TDMA with full-power MRT in every slot."""
    f_r, f_t = effective_channels(channels, coeffs)
    f = user_channels(f_r, f_t)
    noise = np.concatenate([scenario.noise_t, scenario.noise_r])
    weights = np.concatenate([scenario.weights_t, scenario.weights_r])
    n = f.shape[0]
    snr = scenario.p_max * np.sum(np.abs(f) ** 2, axis=1) / noise
    return float(np.sum(weights * np.log2(1 + snr)) / n)


def oma_beamformers(channels, coeffs, scenario):
    """Per-slot MRT beams at full power (each slot is used alone)."""
    f_r, f_t = effective_channels(channels, coeffs)
    f = user_channels(f_r, f_t)
    nrm = np.linalg.norm(f, axis=1, keepdims=True)
    w = np.where(nrm > 0, f.conj() / np.where(nrm > 0, nrm, 1), 1 / np.sqrt(f.shape[1])) * np.sqrt(scenario.p_max)
    Q = scenario.Q
    return Beamformers(w_r=w[Q:], w_t=w[:Q])


@lru_cache(maxsize=None)
def _build_oma(L, n, Q, M, weights):
    # weights enter as constants: a parameter times a log is not DPP
    xt = cp.Variable(2 * L, name="xt")
    xr = cp.Variable(2 * L, name="xr")
    g = cp.Parameter((n, 2 * L), name="g")
    h = cp.Parameter(n, name="h")
    gain = [g[u] @ (xt if u < Q else xr) + h[u] for u in range(n)]
    obj = sum(weights[u] * cp.log(1 + gain[u]) for u in range(n))
    cons = [cp.square(xt[:L]) + cp.square(xt[L:]) + cp.square(xr[:L]) + cp.square(xr[L:]) <= 1]
    cons += [gu >= 0 for gu in gain]
    return ConicProblem(cp.Problem(cp.Maximize(obj), cons), {"xt": xt, "xr": xr}, dict(g=g, h=h))


def optimize_oma_coeffs(channels, coeffs, scenario, max_iters=30, tol=SCA_TOL):
    """Ascent on the OMA rate: each slot SNR is a convex quadratic, replaced by its tangent plane."""
    L, Q, n = scenario.L, scenario.Q, scenario.K + scenario.Q
    if L == 0:
        return coeffs, oma_rate(channels, coeffs, scenario)
    noise = np.concatenate([scenario.noise_t, scenario.noise_r])
    weights = np.concatenate([scenario.weights_t, scenario.weights_r])
    # conj(F_u)[m] * sqrt(P/noise) = a[u, m] @ v_side + c[u, m]
    h_side = np.vstack([channels.h_t, channels.h_r])
    sc = np.sqrt(scenario.p_max / noise)
    a = h_side[:, None, :] * channels.g.T.conj()[None, :, :] * sc[:, None, None]     # (n, M, L)
    c = np.zeros(a.shape[:2], dtype=complex)
    if scenario.K:
        c[Q:] = channels.h_b.conj() * sc[Q:, None]
    prob = _build_oma(L, n, Q, scenario.M, tuple(float(x) for x in weights / n / np.log(2)))
    obj = oma_rate(channels, coeffs, scenario)
    for _ in range(max_iters):
        v = np.vstack([np.tile(coeffs.v1, (Q, 1)), np.tile(coeffs.v2, (n - Q, 1))])
        z = np.einsum("uml,ul->um", a, v) + c
        g = np.zeros((n, 2 * L))
        h = np.zeros(n)
        for u in range(n):
            b = (np.conj(z[u])[:, None] * a[u]).sum(0)
            g[u] = 2 * np.concatenate([b.real, -b.imag])
            h[u] = float(np.sum(2 * np.real(np.conj(z[u]) * c[u]) - np.abs(z[u]) ** 2))
        prob.set(g=g, h=h)
        sol = solve_conic(prob)
        if not sol.ok:
            break
        xt, xr = sol.values["xt"], sol.values["xr"]
        cand = SurfaceCoeffs(xt[:L] + 1j * xt[L:], xr[:L] + 1j * xr[L:])
        e = np.sqrt(np.abs(cand.v1) ** 2 + np.abs(cand.v2) ** 2)
        s = np.where(e > 1, 1 / np.maximum(e, 1e-300), 1.0)
        cand = SurfaceCoeffs(cand.v1 * s, cand.v2 * s)
        new = oma_rate(channels, cand, scenario)
        if new < obj - 1e-9 * max(1.0, obj):
            break
        done = abs(new - obj) <= tol * max(abs(obj), 1e-12)
        coeffs, obj = cand, new
        if done:
            break
    return coeffs, obj


def _run_oma(state, scenario, max_outer, tol, log):
    coeffs, obj = optimize_oma_coeffs(state.channels, state.coeffs, scenario, max_iters=max_outer, tol=tol)
    state.coeffs = coeffs
    state.beamformers = oma_beamformers(state.channels, coeffs, scenario)
    state.history = [obj]
    state.stages.append((1, "coefficients", obj))
    log(1, "coefficients", obj)
    state.iterations = 1
    state.converged = True
    return state


# ---------------------------------------------------------------------------
# discrete greedy placement


def candidate_grid(aperture_side, pitch):
    """Square lattice k * pitch (k integer) inside the centred region.

    The lattice contains the centre, so at a half-wavelength pitch it also
    contains every point of the uniform grid layout.
    """
    k = int(np.floor(aperture_side / 2 / pitch + 1e-9))
    ax = np.arange(-k, k + 1) * pitch
    xx, yy = np.meshgrid(ax, ax[::-1], indexing="xy")
    return np.vstack([xx.ravel(), yy.ravel()])


PROBE_PHASES = 12
PROBE_SPLITS = (0.0, 0.25, 0.5, 0.75, 1.0)


def _probe_coeffs():
    ph = np.exp(2j * np.pi * np.arange(PROBE_PHASES) / PROBE_PHASES)
    out = []
    for beta in PROBE_SPLITS:
        for p1 in ph:
            for p2 in ph:
                out.append((np.sqrt(beta) * p1, np.sqrt(1 - beta) * p2))
                if beta in (0.0, 1.0):
                    break
            if beta == 0.0:
                break
    # beta = 0 or 1 only need one phase on the silent side
    return np.array(sorted(set(out), key=lambda t: (abs(t[0]), np.angle(t[0]), np.angle(t[1]))))


def greedy_discrete_placement(scenario: Scenario, candidate_pitch, nlos=None, beams=None,
                              refine=True) -> ElementLayout:
    """Place elements one at a time on the unoccupied candidate that maximises the sum rate.

    Beams are frozen (by default at the NOMA beams designed for the uniform
    grid with default coefficients, else equal-power MRT). Each probe picks
    the new element's coefficients from a small grid of amplitude splits and
    phases, evaluated in closed form. After each placement, one coefficient
    ascent step (refine=True) re-tunes all placed elements. Element l keeps
    its own NLoS draw wherever it is placed, as in the continuous scheme.
    """
    if candidate_pitch < scenario.min_spacing:
        raise ValueError("candidate pitch below the minimum spacing")
    nlos = draw_nlos(scenario) if nlos is None else nlos
    cand = candidate_grid(scenario.aperture_side, candidate_pitch)
    L, C = scenario.L, cand.shape[1]
    if C < L:
        raise ValueError(f"{C} candidates for {L} elements")
    if C == L:
        return ElementLayout(cand)
    Q, K, M = scenario.Q, scenario.K, scenario.M
    n = K + Q
    noise = np.concatenate([scenario.noise_t, scenario.noise_r])
    weights = np.concatenate([scenario.weights_t, scenario.weights_r])
    # LoS parts at every candidate site; the NLoS row is added per element
    los = assemble_channels(scenario, cand, NlosDraws(np.zeros((C, M)), nlos.h_nlos))
    kap = scenario.kappa
    c_nlos = np.sqrt(1 / (kap + 1))
    h_side = np.vstack([los.h_t, los.h_r])                    # (n, C)
    probes = _probe_coeffs()                                   # (P, 2): (v1, v2)
    v_side = np.where(np.arange(n)[:, None] < Q, probes[:, 0][None, :], probes[:, 1][None, :])  # (n, P)
    tri = np.triu(np.ones((n, n)), 1)                          # later streams interfere
    base0 = np.zeros((n, M), dtype=complex)
    if K:
        base0[Q:] = los.h_b
    base = base0
    if beams is None:
        beams = _grid_beams(scenario, nlos)
    w = beams.all() if beams is not None else _mrt(base0) * np.sqrt(scenario.p_max)   # (n, M)
    placed, v1, v2 = [], [], []
    free = np.ones(C, dtype=bool)
    for l in range(L):
        g_l = los.g + np.sqrt(los.zeta_g) * c_nlos * nlos.g_nlos[l][None, :]   # (C, M)
        amp0 = base @ w.T                                       # (u, j)
        elem = h_side.conj()[:, :, None] * (g_l @ w.T)[None, :, :]            # (u, C, j)
        amp = amp0[:, None, None, :] + v_side.conj()[:, None, :, None] * elem[:, :, None, :]
        P = np.abs(amp) ** 2                                    # (u, C, P, j)
        num = np.einsum("ucpu->ucp", P)
        den = np.einsum("ucpj,uj->ucp", P, tri) + noise[:, None, None]
        rate = np.einsum("u,ucp->cp", weights, np.log2(1 + num / den))
        rate[~free] = -np.inf
        c, p = np.unravel_index(np.argmax(rate), rate.shape)
        placed.append(int(c))
        free[c] = False
        v1.append(probes[p, 0])
        v2.append(probes[p, 1])
        if refine and beams is not None:
            # one coefficient ascent step over the placed elements, beams frozen
            sub = scenario.with_updates(L=l + 1)
            ch = assemble_channels(sub, cand[:, placed], nlos)
            res = solve_coeff_subproblem(subproblem_data(ch, beams, sub),
                                         SurfaceCoeffs(np.array(v1), np.array(v2)), sub, max_iters=1)
            v1, v2 = list(res.coeffs.v1), list(res.coeffs.v2)
        vs = np.where(np.arange(n)[:, None] < Q, np.array(v1)[None, :], np.array(v2)[None, :])   # (n, l+1)
        g_placed = los.g[placed] + np.sqrt(los.zeta_g) * c_nlos * nlos.g_nlos[:l + 1]
        base = base0 + (h_side[:, placed].conj() * vs.conj()) @ g_placed
    return ElementLayout(cand[:, placed])


def _grid_beams(scenario, nlos):
    layout = uniform_grid_layout(scenario.L, scenario.aperture_side, scenario.min_spacing, scenario.wavelength)
    ch = assemble_channels(scenario, layout.positions, nlos)
    f_r, f_t = effective_channels(ch, default_coeffs(scenario.L, scenario, layout))
    res = solve_beamforming(f_r, f_t, scenario, rng_seed=scenario.seed)
    return res.beamformers if res.status == "optimal" else None


def _mrt(f):
    nrm = np.linalg.norm(f, axis=1, keepdims=True)
    w = np.where(nrm > 0, f.conj() / np.where(nrm > 0, nrm, 1), 1 / np.sqrt(f.shape[1]))
    return w / np.sqrt(f.shape[0])

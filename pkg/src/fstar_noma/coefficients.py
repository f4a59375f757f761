"""Energy-splitting coefficient design by successive convex approximation.

With beams and layout fixed, every received amplitude is affine in the
coefficients of the side the receiver is on:

    conj(F_T,q w) = sum_l v1_l h_T,q,l conj((G w)_l)
    conj(F_R,k w) = sum_l v2_l h_R,k,l conj((G w)_l) + conj(H_b,k w)

so each |F_u w|^2 = |a^T v + c|^2 is a convex quadratic. The desired power
is replaced by its tangent-plane minorant and the rate by the log-ratio
bound, which gives a convex problem per step. SIC chains and QoS floors
keep the exact quadratic on the side that must stay small and the
minorant on the side that must stay large, so each accepted step is
feasible for the exact constraints.

The quadratic of the reflection side can equally be written through the
Hadamard form v2^H (Y o Z^T) v2 + 2 Re{v2^T diag X} + Tr D; see
hadamard_power, which is used to cross-check the affine form.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import cvxpy as cp
import numpy as np

from .convex import ConicProblem, SCA_TOL, log_ratio_coefficients, solve_conic
from .metrics import Beamformers, sic_chain_pairs
from .surface import SurfaceCoeffs

MAX_SCA_ITERS = 30


@dataclass
class CoeffResult:
    coeffs: SurfaceCoeffs
    objective: float
    status: str
    iterations: int = 0
    history: list = field(default_factory=list)


@dataclass(frozen=True)
class CoeffSubproblemData:
    """Per-user affine data: conj(F_u w_j) / sigma_ref = a[u, j] @ v_side(u) + c[u, j].

    Users and beams are both in decoding order T_1..T_Q, R_1..R_K.
    """
    a: np.ndarray        # (n, n, L) complex
    c: np.ndarray        # (n, n) complex
    noise: np.ndarray    # (n,) noise normalised by sigma_ref^2
    Q: int


def subproblem_data(ch, bf: Beamformers, scenario) -> CoeffSubproblemData:
    noise = np.concatenate([scenario.noise_t, scenario.noise_r])
    ref = noise.min()
    scale = 1 / np.sqrt(ref)
    beams = bf.all()                      # (n, M)
    y = ch.g @ beams.T                    # (L, n): G w_j
    h_side = np.vstack([ch.h_t, ch.h_r])  # (n, L)
    a = h_side[:, None, :] * y.T.conj()[None, :, :] * scale
    c = np.zeros(a.shape[:2], dtype=complex)
    Q = scenario.Q
    if scenario.K:
        c[Q:, :] = (ch.h_b @ beams.T).conj() * scale
    return CoeffSubproblemData(a=a, c=c, noise=noise / ref, Q=Q)


def amplitudes(data: CoeffSubproblemData, coeffs: SurfaceCoeffs):
    """z[u, j] = conj(F_u w_j) / sigma_ref for the given coefficients."""
    Q = data.Q
    v = np.vstack([np.tile(coeffs.v1, (Q, 1)), np.tile(coeffs.v2, (data.a.shape[0] - Q, 1))])
    return np.einsum("ujl,ul->uj", data.a, v) + data.c


def _rates(z, noise, weights):
    P = np.abs(z) ** 2
    n = P.shape[0]
    num = np.diag(P).copy()
    den = np.array([P[u, u + 1:].sum() for u in range(n)]) + noise
    return float(weights @ np.log2(1 + num / den)), num, den, P


def hadamard_matrices(h_r, g, h_b, w):
    """The matrices Y = G w w^H G^H, Z = h h^H, X = h H_b w w^H G^H, D = H_b w w^H H_b^H."""
    y = g @ w
    Y = np.outer(y, y.conj())
    Z = np.outer(h_r, h_r.conj())
    X = np.outer(h_r, y.conj()) * (h_b @ w)
    D = np.abs(h_b @ w) ** 2
    return Y, Z, X, D


def hadamard_power(v2, h_r, g, h_b, w):
    """v2^H (Y o Z^T) v2 + 2 Re{v2^T diag X} + Tr D, which equals |F_R w|^2."""
    Y, Z, X, D = hadamard_matrices(h_r, g, h_b, w)
    quad = np.real(v2.conj() @ (Y * Z.T) @ v2)
    return float(quad + 2 * np.real(v2 @ np.diag(X)) + D)


def _embed(a):
    """Real 2 x 2L matrix of z = a^T v acting on [Re v; Im v]."""
    return np.vstack([np.concatenate([a.real, -a.imag]), np.concatenate([a.imag, a.real])])


@lru_cache(maxsize=None)
def _build(L, n, Q, qos, sic):
    """Convex step in real variables x_T = [Re v1; Im v1], x_R = [Re v2; Im v2]."""
    xt = cp.Variable(2 * L, name="xt")
    xr = cp.Variable(2 * L, name="xr")
    side = lambda u: xt if u < Q else xr
    par = {}

    def P(name, shape=()):
        if name not in par:
            par[name] = cp.Parameter(shape, name=name)
        return par[name]

    obj = 0
    cons = [cp.square(xt[:L]) + cp.square(xt[L:]) + cp.square(xr[:L]) + cp.square(xr[L:]) <= 1]
    for u in range(n):
        x = side(u)
        later = range(u + 1, n)
        # a/beta_lin: the minorant coefficients are pre-divided by the weight
        obj = obj - cp.inv_pos(P(f"go{u}", 2 * L) @ x + P(f"ho{u}"))
        for j in later:
            obj = obj - cp.sum_squares(P(f"Ao{u}_{j}", (2, 2 * L)) @ x + P(f"co{u}_{j}", 2))
        if qos:
            interf = sum(cp.sum_squares(P(f"A{u}_{j}", (2, 2 * L)) @ x + P(f"c{u}_{j}", 2)) for j in later) \
                if u + 1 < n else 0
            cons.append(interf <= P(f"gq{u}", 2 * L) @ x + P(f"hq{u}"))
        if sic:
            for weak, strong in sic_chain_pairs(0, n):
                A, c = P(f"A{u}_{weak}", (2, 2 * L)), P(f"c{u}_{weak}", 2)
                cons.append(cp.sum_squares(A @ x + c)
                            <= P(f"gs{u}_{strong}", 2 * L) @ x + P(f"hs{u}_{weak}_{strong}"))
    prob = cp.Problem(cp.Maximize(obj), cons)
    return ConicProblem(prob, {"xt": xt, "xr": xr}, par)


def _lin(a, c, z_n):
    """Real (g, h) with |a^T v + c|^2 >= g @ [Re v; Im v] + h, tight where z = z_n."""
    b = np.conj(z_n) * a
    g = 2 * np.concatenate([b.real, -b.imag])
    h = 2 * np.real(np.conj(z_n) * c) - np.abs(z_n) ** 2
    return g, h


def solve_coeff_subproblem(data: CoeffSubproblemData, init: SurfaceCoeffs, scenario,
                           qos=True, sic=True, max_iters=MAX_SCA_ITERS, tol=SCA_TOL) -> CoeffResult:
    """Weighted sum-rate ascent over the coefficients from a feasible starting point."""
    n, _, L = data.a.shape
    Q = data.Q
    weights = np.concatenate([scenario.weights_t, scenario.weights_r])
    gamma = scenario.gamma_min
    qos = bool(qos and gamma > 0)
    coeffs = init
    z = amplitudes(data, coeffs)
    obj, num, den, Pw = _rates(z, data.noise, weights)
    history = [obj]
    if np.any(den <= 0):
        raise ValueError("interference-plus-noise must be positive")
    if L == 0 or np.all(num <= 0):
        return CoeffResult(coeffs, obj, "optimal", 0, history)

    prob = _build(L, n, Q, qos, bool(sic))
    A = {(u, j): _embed(data.a[u, j]) for u in range(n) for j in range(n)}
    C = {(u, j): np.array([data.c[u, j].real, data.c[u, j].imag]) for u in range(n) for j in range(n)}
    status, it = "optimal", 0
    for it in range(1, max_iters + 1):
        num_safe = np.maximum(num, 1e-300)
        _, pa, qb = log_ratio_coefficients(num_safe, den)
        pa = pa * weights / np.log(2)
        qb = qb * weights / np.log(2)
        lin = {(u, j): _lin(data.a[u, j], data.c[u, j], z[u, j]) for u in range(n) for j in range(n)}
        for u in range(n):
            g, h = lin[u, u]
            w = max(pa[u], 1e-300)
            prob.params[f"go{u}"].value = g / w
            prob.params[f"ho{u}"].value = h / w
            sq = np.sqrt(qb[u])
            for j in range(u + 1, n):
                prob.params[f"Ao{u}_{j}"].value = sq * A[u, j]
                prob.params[f"co{u}_{j}"].value = sq * C[u, j]
            if qos:
                for j in range(u + 1, n):
                    prob.params[f"A{u}_{j}"].value = A[u, j]
                    prob.params[f"c{u}_{j}"].value = C[u, j]
                # beta_lin - gamma * (interf + noise) >= min(0, current margin)
                slack = min(0.0, num[u] - gamma * den[u])
                prob.params[f"gq{u}"].value = g / gamma
                prob.params[f"hq{u}"].value = (h - slack) / gamma - data.noise[u]
            if sic:
                for weak, strong in sic_chain_pairs(0, n):
                    prob.params[f"A{u}_{weak}"].value = A[u, weak]
                    prob.params[f"c{u}_{weak}"].value = C[u, weak]
                    gs, hs = lin[u, strong]
                    prob.params[f"gs{u}_{strong}"].value = gs
                    prob.params[f"hs{u}_{weak}_{strong}"].value = hs + max(0.0, Pw[u, weak] - Pw[u, strong])
        sol = solve_conic(prob)
        if not sol.ok:
            status = sol.status
            break
        xt, xr = sol.values["xt"], sol.values["xr"]
        cand = _project(SurfaceCoeffs(xt[:L] + 1j * xt[L:], xr[:L] + 1j * xr[L:]))
        z_new = amplitudes(data, cand)
        new_obj, num_n, den_n, P_n = _rates(z_new, data.noise, weights)
        if new_obj < obj - 1e-9 * max(1.0, abs(obj)):
            break
        coeffs, z, obj, num, den, Pw = cand, z_new, new_obj, num_n, den_n, P_n
        history.append(obj)
        if abs(history[-1] - history[-2]) <= tol * max(abs(history[-2]), 1e-12):
            break
    return CoeffResult(coeffs, obj, status, it, history)


def _project(c: SurfaceCoeffs) -> SurfaceCoeffs:
    """Pull elements that exceed unit energy by solver round-off back onto the cap."""
    e = np.sqrt(np.abs(c.v1) ** 2 + np.abs(c.v2) ** 2)
    s = np.where(e > 1, 1 / np.maximum(e, 1e-300), 1.0)
    return SurfaceCoeffs(c.v1 * s, c.v2 * s)

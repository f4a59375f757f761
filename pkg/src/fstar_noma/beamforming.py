"""Transmit beamforming by semidefinite relaxation and successive convex approximation.

With the surface fixed, each stream u gets a covariance W_u = w_u w_u^H.
Received powers become linear in W: |F_u w_j|^2 = Tr(F_u^H F_u W_j). The
rank-one constraint is dropped, the sum rate is replaced by the log-ratio
minorant around the previous iterate, and the resulting SDP is solved
repeatedly until the rate stops improving. Beams are then read off the
principal eigenvector; Gaussian randomisation is used when the relaxed
solution is not close to rank one.

Internally channels are scaled by sqrt(P_max)/sigma_ref so that the power
budget is 1 and the reference noise is 1; this keeps the SDP well scaled.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import cvxpy as cp
import numpy as np

from .convex import ConicProblem, SCA_TOL, complex_embed, log_ratio_coefficients, solve_conic
from .metrics import Beamformers, sic_chain_pairs

MAX_SCA_ITERS = 30
DOMINANCE_FLOOR = 0.99
N_RANDOMIZATION = 200


@dataclass
class BeamformingResult:
    beamformers: Beamformers
    objective: float               # exact weighted sum rate of the returned beams
    status: str
    iterations: int = 0
    dominance: np.ndarray = field(default_factory=lambda: np.zeros(0))
    randomized: bool = False
    history: list = field(default_factory=list)   # exact relaxed objective per SCA step


@lru_cache(maxsize=None)
def _build(M, n, sic):
    # Each Hermitian covariance W_u is carried by a real symmetric PSD matrix
    # S_u of size 2M; W_u = (S11 + S22)/2 + j (S21 - S12)/2 is then PSD and
    # Re Tr(R W_u) = Tr(embed(R) S_u) / 2 for Hermitian R. Channel-dependent
    # scalars are folded into the matrix parameters so the problem is DPP:
    #   R_u = embed(F_u^H F_u)/2, Ra_u = R_u / a_u, Rb_u = b_u R_u, Rg_u = gamma R_u
    # QoS and SIC rows are homogeneous in R_u, so they use R_u / ||R_u|| (parameter Rn)
    # with the noise term scaled to match; this keeps the rows O(1).
    S = [cp.Variable((2 * M, 2 * M), symmetric=True, name=f"S{u}") for u in range(n)]
    mats = {f"{tag}{u}": cp.Parameter((2 * M, 2 * M), symmetric=True, name=f"{tag}{u}")
            for tag in ("Rn", "Ra", "Rb", "Rg") for u in range(n)}
    gam_noise = cp.Parameter(n, nonneg=True, name="gamma_noise")
    tr = lambda A, X: cp.sum(cp.multiply(A, X))
    obj = 0
    cons = [sum(cp.trace(Su) for Su in S) <= 2]
    cons += [Su >> 0 for Su in S]
    for u in range(n):
        later = range(u + 1, n)
        obj = obj - cp.inv_pos(tr(mats[f"Ra{u}"], S[u]))
        if u + 1 < n:
            obj = obj - sum(tr(mats[f"Rb{u}"], S[j]) for j in later)
            cons.append(tr(mats[f"Rn{u}"], S[u]) - sum(tr(mats[f"Rg{u}"], S[j]) for j in later)
                        >= gam_noise[u])
        else:
            cons.append(tr(mats[f"Rn{u}"], S[u]) >= gam_noise[u])
        if sic:
            for weak, strong in sic_chain_pairs(0, n):
                cons.append(tr(mats[f"Rn{u}"], S[weak]) <= tr(mats[f"Rn{u}"], S[strong]))
    prob = cp.Problem(cp.Maximize(obj), cons)
    params = dict(mats, gamma_noise=gam_noise)
    return ConicProblem(prob, {f"S{u}": S[u] for u in range(n)}, params)


def _to_hermitian(S):
    M = S.shape[0] // 2
    return (S[:M, :M] + S[M:, M:]) / 2 + 1j * (S[M:, :M] - S[:M, M:]) / 2


def _herm(A):
    return (A + A.conj().T) / 2


def _scaled(f_r, f_t, scenario):
    noise = np.concatenate([scenario.noise_t, scenario.noise_r])
    ref = noise.min()
    f_all = np.vstack([f_t, f_r]) * np.sqrt(scenario.p_max / ref)
    return f_all, noise / ref


def mrt_init(f_all, noise=None):
    """Equal-power maximum-ratio beams (unit total power), one per user."""
    n, M = f_all.shape
    W = np.zeros((n, M), dtype=complex)
    for u in range(n):
        nrm = np.linalg.norm(f_all[u])
        W[u] = f_all[u].conj() / nrm if nrm > 0 else np.ones(M) / np.sqrt(M)
    return W / np.sqrt(n)


def _powers_from_cov(f_all, covs):
    return np.real(np.einsum("um,jmk,uk->uj", f_all, covs, f_all.conj()))


def _rates(P, noise, weights):
    n = P.shape[0]
    num = np.diag(P)
    den = np.array([P[u, u + 1:].sum() for u in range(n)]) + noise
    return float(weights @ np.log2(1 + num / den)), num, den


def _feasible(P, noise, gamma_min, sic, tol=1e-6):
    n = P.shape[0]
    num = np.diag(P)
    den = np.array([P[u, u + 1:].sum() for u in range(n)]) + noise
    if np.any(num / den < gamma_min - tol):
        return False
    if sic:
        scale = max(P.max(), 1e-300)
        for weak, strong in sic_chain_pairs(0, n):
            if np.any(P[:, weak] > P[:, strong] + tol * scale):
                return False
    return True


def rank_one_recover(W):
    """Principal eigen-beam sqrt(l1) u1 with its dominance l1 / Tr W.

    The phase is fixed so that the largest-magnitude entry is real positive.
    """
    W = np.asarray(W)
    tr = float(np.real(np.trace(W)))
    if tr <= 0:
        return np.zeros(W.shape[0], dtype=complex), 0.0
    vals, vecs = np.linalg.eigh((W + W.conj().T) / 2)
    lam, u = max(vals[-1], 0.0), vecs[:, -1]
    w = np.sqrt(lam) * u
    i = np.argmax(np.abs(w))
    if np.abs(w[i]) > 0:
        w = w * np.exp(-1j * np.angle(w[i]))
    return w, lam / tr


def solve_beamforming(f_r, f_t, scenario, init: Beamformers | None = None, sic=True,
                      max_iters=MAX_SCA_ITERS, tol=SCA_TOL, rng_seed=0) -> BeamformingResult:
    """Maximise the weighted NOMA sum rate over the beams for fixed effective channels."""
    Q = f_t.shape[0]
    f_all, noise = _scaled(f_r, f_t, scenario)
    n, M = f_all.shape
    weights = np.concatenate([scenario.weights_t, scenario.weights_r])
    gamma = scenario.gamma_min
    sqrt_p = np.sqrt(scenario.p_max)

    if init is not None:
        w0 = init.all() / sqrt_p
    else:
        w0 = mrt_init(f_all)
    covs = np.einsum("um,uk->umk", w0, w0.conj())
    P = _powers_from_cov(f_all, covs)
    obj, num, den = _rates(P, noise, weights)
    history = [obj] if init is not None else []

    cp_prob = _build(M, n, bool(sic))
    R = [complex_embed(_herm(np.outer(f_all[u].conj(), f_all[u]))) / 2 for u in range(n)]
    norms = np.array([max(np.linalg.norm(f_all[u]) ** 2 / 2, 1e-300) for u in range(n)])
    for u in range(n):
        cp_prob.params[f"Rn{u}"].value = R[u] / norms[u]
        cp_prob.params[f"Rg{u}"].value = gamma * R[u] / norms[u]
    cp_prob.set(gamma_noise=gamma * noise / norms)

    status, it = "optimal", 0
    best_covs = None
    for it in range(1, max_iters + 1):
        if np.any(num <= 0):
            num = np.maximum(num, 1e-12)
        _, a, b = log_ratio_coefficients(num, den)
        scale = weights / np.log(2)
        a, b = scale * a, scale * b
        for u in range(n):
            cp_prob.params[f"Ra{u}"].value = R[u] / max(a[u], 1e-12)
            cp_prob.params[f"Rb{u}"].value = b[u] * R[u]
        sol = solve_conic(cp_prob)
        if not sol.ok:
            status = sol.status
            break
        new_covs = np.array([_to_hermitian(sol.values[f"S{u}"]) for u in range(n)])
        P = _powers_from_cov(f_all, new_covs)
        new_obj, num, den = _rates(P, noise, weights)
        covs, best_covs = new_covs, new_covs
        history.append(new_obj)
        if len(history) > 1 and abs(new_obj - history[-2]) <= tol * max(abs(history[-2]), 1e-12):
            obj = new_obj
            break
        obj = new_obj

    if best_covs is None:
        bf = Beamformers(w_r=w0[Q:] * sqrt_p, w_t=w0[:Q] * sqrt_p)
        return BeamformingResult(bf, np.nan, status if status != "optimal" else "error", it,
                                 history=history)

    beams, dom = [], []
    for u in range(n):
        w, d = rank_one_recover(best_covs[u])
        beams.append(w)
        dom.append(d)
    beams = np.array(beams)
    dom = np.array(dom)
    randomized = False
    if np.any(dom < DOMINANCE_FLOOR):
        beams, randomized = _randomize(f_all, best_covs, beams, noise, weights, gamma, sic, rng_seed)
    P = np.abs(f_all @ beams.T) ** 2
    final, _, _ = _rates(P, noise, weights)
    bf = Beamformers(w_r=beams[Q:] * sqrt_p, w_t=beams[:Q] * sqrt_p)
    return BeamformingResult(bf, final, "optimal", it, dom, randomized, history)


def _randomize(f_all, covs, eig_beams, noise, weights, gamma, sic, seed):
    """Best feasible beam set among the eigen-beams and N Gaussian draws."""
    rng = np.random.default_rng(seed)
    n, M = eig_beams.shape
    roots = []
    for u in range(n):
        vals, vecs = np.linalg.eigh((covs[u] + covs[u].conj().T) / 2)
        roots.append(vecs * np.sqrt(np.clip(vals, 0, None)))
    cands = [eig_beams]
    for _ in range(N_RANDOMIZATION):
        z = (rng.standard_normal((n, M)) + 1j * rng.standard_normal((n, M))) / np.sqrt(2)
        w = np.array([roots[u] @ z[u] for u in range(n)])
        pw = np.sum(np.abs(w) ** 2)
        if pw > 1:
            w = w / np.sqrt(pw)
        cands.append(w)
    best, best_val = None, -np.inf
    for w in cands:
        P = np.abs(f_all @ w.T) ** 2
        if not _feasible(P, noise, gamma, sic):
            continue
        val, _, _ = _rates(P, noise, weights)
        if val > best_val:
            best, best_val = w, val
    if best is None:
        return eig_beams, True
    return best, True

"""Effective channels, NOMA SINRs and sum rate.

Decoding order: T_1, ..., T_Q, R_1, ..., R_K (weakest first). A T user q
cancels T users j < q and treats the rest, including every R stream, as
interference. An R user k cancels all T streams and R users j < k.
"""

from dataclasses import dataclass

import numpy as np

from .channels import ChannelSet, Scenario
from .surface import SurfaceCoeffs


@dataclass(frozen=True)
class Beamformers:
    w_r: np.ndarray   # (K, M), row k is the beam of R user k
    w_t: np.ndarray   # (Q, M)

    def power(self):
        return float(np.sum(np.abs(self.w_r) ** 2) + np.sum(np.abs(self.w_t) ** 2))

    def all(self):
        """Beams in decoding order T_1..T_Q, R_1..R_K."""
        return np.vstack([self.w_t, self.w_r])


@dataclass(frozen=True)
class SinrReport:
    gamma_r: np.ndarray
    gamma_t: np.ndarray
    num_r: np.ndarray
    den_r: np.ndarray
    num_t: np.ndarray
    den_t: np.ndarray
    rate_r: np.ndarray
    rate_t: np.ndarray
    sum_rate: float


def effective_channels(ch: ChannelSet, coeffs: SurfaceCoeffs):
    """F_R (K, M) and F_T (Q, M): F_R,k = h_R,k^H Phi^H G + H_b,k, F_T,q = h_T,q^H Theta^H G."""
    f_r = (ch.h_r.conj() * coeffs.v2.conj()) @ ch.g + ch.h_b
    f_t = (ch.h_t.conj() * coeffs.v1.conj()) @ ch.g
    return f_r, f_t


def user_channels(f_r, f_t):
    """All effective channels in decoding order T_1..T_Q, R_1..R_K."""
    return np.vstack([f_t, f_r])


def interference_sets(K, Q):
    """For each user in decoding order, the indices of streams it still sees."""
    n = K + Q
    out = []
    for u in range(n):
        if u < Q:                      # T user: later T users and every R user
            out.append(list(range(u + 1, n)))
        else:                          # R user: later R users only
            out.append(list(range(u + 1, n)))
    return out


def received_powers(f_all, w_all):
    """P[u, j] = |F_u w_j|^2."""
    return np.abs(f_all @ w_all.T) ** 2


def sinr_from_powers(P, noise, K, Q):
    n = K + Q
    num = np.diag(P).copy()
    den = np.array([P[u, u + 1:].sum() for u in range(n)]) + noise
    return num, den


def sinr_all(f_r, f_t, bf: Beamformers, scenario: Scenario) -> SinrReport:
    noise = np.concatenate([scenario.noise_t, scenario.noise_r])
    if np.any(noise <= 0):
        raise ValueError("noise variance must be positive")
    K, Q = scenario.K, scenario.Q
    P = received_powers(user_channels(f_r, f_t), bf.all())
    num, den = sinr_from_powers(P, noise, K, Q)
    gamma = num / den
    rates = np.log2(1 + gamma)
    weights = np.concatenate([scenario.weights_t, scenario.weights_r])
    return SinrReport(gamma_r=gamma[Q:], gamma_t=gamma[:Q], num_r=num[Q:], den_r=den[Q:],
                      num_t=num[:Q], den_t=den[:Q], rate_r=rates[Q:], rate_t=rates[:Q],
                      sum_rate=float(weights @ rates))


def sic_chain_pairs(K, Q):
    """Consecutive (weaker, stronger) beam pairs that must hold at every receiver.

    At each user the received power from beams must satisfy
    R_K <= ... <= R_1 <= T_Q <= ... <= T_1, i.e. decoding-order index j
    is received at least as strongly as index j + 1.
    """
    n = K + Q
    return [(j + 1, j) for j in range(n - 1)]


def check_orderings(f_r, f_t, bf: Beamformers | None = None, tol=1e-9):
    """First violated ordering, or None.

    Checks the channel-gain order ||F_T1|| <= .. <= ||F_TQ|| <= ||F_R1|| <= .. <= ||F_RK||
    and, when beamformers are given, the SIC power chains at every user.
    Returns a tuple (kind, detail) for the first failure.
    """
    f_all = user_channels(f_r, f_t)
    gains = np.sum(np.abs(f_all) ** 2, axis=1)
    for u in range(len(gains) - 1):
        if gains[u] > gains[u + 1] * (1 + tol) + tol * gains.max():
            return ("channel_order", (u, u + 1))
    if bf is not None:
        P = received_powers(f_all, bf.all())
        scale = P.max() if P.size else 1.0
        for u in range(P.shape[0]):
            for weak, strong in sic_chain_pairs(*_kq_from(f_r, f_t)):
                if P[u, weak] > P[u, strong] + tol * scale:
                    return ("sic_chain", (u, weak, strong))
    return None


def _kq_from(f_r, f_t):
    return f_r.shape[0], f_t.shape[0]


def qos_feasible(report: SinrReport, gamma_min, tol=1e-6):
    g = np.concatenate([report.gamma_t, report.gamma_r])
    return bool(np.all(g >= gamma_min - tol))


def sum_rate(ch: ChannelSet, coeffs: SurfaceCoeffs, bf: Beamformers, scenario: Scenario):
    f_r, f_t = effective_channels(ch, coeffs)
    return sinr_all(f_r, f_t, bf, scenario).sum_rate

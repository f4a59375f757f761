"""Scenario description and Rician channel assembly for a fluid STAR surface.

The base station carries an M-antenna ULA. The surface has L movable
elements lying in a plane; element l sits at position p_l = (x, y) measured
from the surface's reference origin (the centre of the movable region).

Channels:
    G      = sqrt(zeta_G) [ sqrt(k/(k+1)) a_r(p) a_t^H + sqrt(1/(k+1)) G_nlos ]
    h_b,k  = sqrt(zeta_b,k) [ sqrt(k/(k+1)) a_t^H(phi_b,k) + sqrt(1/(k+1)) h_nlos,k ]
    h_R,k  = sqrt(zeta_R,k) a_R,k(p)       (pure line of sight)
    h_T,q  = sqrt(zeta_T,q) a_T,q(p)       (pure line of sight)

Only the line-of-sight factors depend on the layout, so the NLoS draws are
kept in a separate object and reused verbatim whenever elements move.
"""

from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class PathLossModel:
    # "free_space": (lambda / (4 pi d))^2 on every link
    # "log_distance": ref_gain * d^-exponent with per-link exponents
    kind: str = "log_distance"
    ref_gain_db: float = -20.0      # gain at 1 m
    exp_bs_surface: float = 2.0
    exp_surface_user: float = 2.0
    exp_direct: float = 2.2


@dataclass(frozen=True)
class Scenario:
    """Static description of one deployment. Angles in radians, powers in watts."""

    M: int                       # BS antennas
    K: int                       # reflection-side users (have a direct link)
    Q: int                       # transmission-side users (surface only)
    L: int                       # movable surface elements
    wavelength: float
    kappa: float                 # Rician factor, shared by all stochastic links
    aperture_side: float         # side of the square movable region
    min_spacing: float
    p_max: float
    gamma_min: float             # SINR floor (linear), already converted from a rate
    noise_r: np.ndarray          # (K,) noise variances
    noise_t: np.ndarray          # (Q,)
    phi_t: float                 # BS departure azimuth towards the surface
    phi_r: float                 # arrival azimuth at the surface
    psi_r: float                 # arrival elevation at the surface
    phi_R: np.ndarray            # (K,) surface -> R user azimuths
    psi_R: np.ndarray            # (K,)
    phi_T: np.ndarray            # (Q,)
    psi_T: np.ndarray            # (Q,)
    phi_b: np.ndarray            # (K,) BS -> R user direct azimuths
    d_bs_surface: float
    d_R: np.ndarray              # (K,) surface -> R users
    d_T: np.ndarray              # (Q,)
    d_b: np.ndarray              # (K,) BS -> R users
    seed: int = 0
    pathloss: PathLossModel = field(default_factory=PathLossModel)
    weights_r: np.ndarray | None = None   # optional per-user rate weights
    weights_t: np.ndarray | None = None

    def __post_init__(self):
        if self.M < 1 or self.K < 0 or self.Q < 0 or self.L < 0 or self.K + self.Q < 1:
            raise ValueError("need M >= 1, K, Q, L >= 0 and at least one user")
        for name in ("wavelength", "aperture_side", "d_bs_surface"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.min_spacing < 0 or self.p_max <= 0 or self.kappa < 0 or self.gamma_min < 0:
            raise ValueError("min_spacing, kappa, gamma_min must be >= 0 and p_max > 0")
        # normalise array fields so that list input works and shapes are checked
        for name, n in (("noise_r", self.K), ("phi_R", self.K), ("psi_R", self.K),
                        ("phi_b", self.K), ("d_R", self.K), ("d_b", self.K),
                        ("noise_t", self.Q), ("phi_T", self.Q), ("psi_T", self.Q),
                        ("d_T", self.Q)):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if arr.shape != (n,):
                raise ValueError(f"{name} must have length {n}, got {arr.shape}")
            object.__setattr__(self, name, arr)
        if np.any(self.noise_r <= 0) or np.any(self.noise_t <= 0):
            raise ValueError("noise variances must be positive")
        for name, n in (("weights_r", self.K), ("weights_t", self.Q)):
            w = getattr(self, name)
            w = np.ones(n) if w is None else np.asarray(w, dtype=float)
            if w.shape != (n,) or np.any(w < 0):
                raise ValueError(f"{name} must be {n} non-negative numbers")
            object.__setattr__(self, name, w)

    def with_updates(self, **kw) -> "Scenario":
        return replace(self, **kw)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        for f in self.__dataclass_fields__:
            a, b = getattr(self, f), getattr(other, f)
            if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
                if not np.array_equal(a, b):
                    return False
            elif a != b:
                return False
        return True

    __hash__ = None


@dataclass(frozen=True)
class NlosDraws:
    g_nlos: np.ndarray   # (L, M) CN(0, 1)
    h_nlos: np.ndarray   # (K, M) CN(0, 1)


@dataclass(frozen=True)
class ChannelSet:
    g: np.ndarray        # (L, M)
    h_r: np.ndarray      # (K, L) row k is h_R,k
    h_t: np.ndarray      # (Q, L)
    h_b: np.ndarray      # (K, M) row k is H_b,k
    zeta_g: float
    zeta_r: np.ndarray
    zeta_t: np.ndarray
    zeta_b: np.ndarray


def path_difference(p, phi, psi):
    """Extra path length at position(s) p for a plane wave from (phi, psi).

    p can be a 2-vector or a (2, L) array; the result broadcasts accordingly.
    """
    p = np.asarray(p, dtype=float)
    return p[0] * np.sin(phi) * np.cos(psi) + p[1] * np.sin(psi)


def direction_vector(phi, psi):
    """Gradient of path_difference with respect to the position."""
    return np.array([np.sin(phi) * np.cos(psi), np.sin(psi)])


def surface_steering(layout, phi, psi, wavelength):
    """Surface steering vector, entry l = exp(j 2 pi / lambda * d(phi, psi, p_l))."""
    return np.exp(2j * np.pi / wavelength * path_difference(layout, phi, psi))


def ula_steering(phi, M):
    """Half-wavelength ULA response exp(j pi m sin phi), m = 0..M-1."""
    return np.exp(1j * np.pi * np.arange(M) * np.sin(phi))


def path_loss(d, wavelength):
    """Free-space power gain (lambda / (4 pi d))^2."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return (wavelength / (4 * np.pi * d)) ** 2


def log_distance_loss(d, ref_gain_db, exponent):
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return 10 ** (ref_gain_db / 10) * d ** (-exponent)


def link_losses(scenario: Scenario):
    """Large-scale gains (zeta_G, zeta_R, zeta_T, zeta_b)."""
    pl = scenario.pathloss
    if pl.kind == "free_space":
        f = lambda d, _e: path_loss(d, scenario.wavelength)
    elif pl.kind == "log_distance":
        f = lambda d, e: log_distance_loss(d, pl.ref_gain_db, e)
    else:
        raise ValueError(f"unknown path-loss model {pl.kind!r}")
    return (float(f(scenario.d_bs_surface, pl.exp_bs_surface)),
            np.atleast_1d(f(scenario.d_R, pl.exp_surface_user)) if scenario.K else np.zeros(0),
            np.atleast_1d(f(scenario.d_T, pl.exp_surface_user)) if scenario.Q else np.zeros(0),
            np.atleast_1d(f(scenario.d_b, pl.exp_direct)) if scenario.K else np.zeros(0))


def _cn(rng, shape):
    z = rng.standard_normal((*shape, 2))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2)


def draw_nlos(scenario: Scenario, seed=None) -> NlosDraws:
    """Draw the NLoS parts: G_nlos first, then h_nlos,1..K, from one PCG64 stream."""
    rng = np.random.Generator(np.random.PCG64(scenario.seed if seed is None else seed))
    g = _cn(rng, (scenario.L, scenario.M))
    h = _cn(rng, (scenario.K, scenario.M))
    return NlosDraws(g_nlos=g, h_nlos=h)


def assemble_channels(scenario: Scenario, layout, nlos: NlosDraws) -> ChannelSet:
    layout = np.asarray(layout, dtype=float).reshape(2, -1)
    L = layout.shape[1]
    if nlos.g_nlos.shape[0] < L:
        raise ValueError("not enough NLoS rows for this layout")
    lam, kap = scenario.wavelength, scenario.kappa
    c_los, c_nlos = np.sqrt(kap / (kap + 1)), np.sqrt(1 / (kap + 1))
    zg, zr, zt, zb = link_losses(scenario)

    a_t = ula_steering(scenario.phi_t, scenario.M)
    a_r = surface_steering(layout, scenario.phi_r, scenario.psi_r, lam)
    g = np.sqrt(zg) * (c_los * np.outer(a_r, a_t.conj()) + c_nlos * nlos.g_nlos[:L])

    h_r = np.array([np.sqrt(zr[k]) * surface_steering(layout, scenario.phi_R[k], scenario.psi_R[k], lam)
                    for k in range(scenario.K)]).reshape(scenario.K, L)
    h_t = np.array([np.sqrt(zt[q]) * surface_steering(layout, scenario.phi_T[q], scenario.psi_T[q], lam)
                    for q in range(scenario.Q)]).reshape(scenario.Q, L)
    h_b = np.array([np.sqrt(zb[k]) * (c_los * ula_steering(scenario.phi_b[k], scenario.M).conj()
                                      + c_nlos * nlos.h_nlos[k])
                    for k in range(scenario.K)]).reshape(scenario.K, scenario.M)
    return ChannelSet(g=g, h_r=h_r, h_t=h_t, h_b=h_b, zeta_g=zg, zeta_r=zr, zeta_t=zt, zeta_b=zb)


def rate_to_sinr(rate):
    """SINR floor equivalent to a rate floor in bps/Hz."""
    return 2.0 ** rate - 1.0


def dbm_to_watt(dbm):
    return 10 ** ((np.asarray(dbm, dtype=float) - 30) / 10)


def watt_to_dbm(w):
    return 10 * np.log10(np.asarray(w, dtype=float)) + 30

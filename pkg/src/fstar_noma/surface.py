"""Element layouts and energy-splitting coefficients of the fluid STAR surface.

Positions live in the square [-A/2, A/2]^2 centred on the steering reference
origin. Each element splits incident energy into a transmitted part v1 and a
reflected part v2 with |v1_l|^2 + |v2_l|^2 <= 1.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

TOL = 1e-9


@dataclass(frozen=True)
class ElementLayout:
    positions: np.ndarray   # (2, L), metres

    @property
    def L(self):
        return self.positions.shape[1]


@dataclass(frozen=True)
class SurfaceCoeffs:
    v1: np.ndarray   # transmission, (L,) complex
    v2: np.ndarray   # reflection, (L,) complex


@dataclass(frozen=True)
class Violation:
    kind: str        # "region" or "spacing"
    where: tuple     # (l,) for region, (l, m) for spacing
    margin: float    # how far the constraint is missed, metres

    def __str__(self):
        return f"{self.kind} {self.where}: off by {self.margin:.3e} m"


def uniform_grid_layout(L, aperture_side, min_spacing, wavelength) -> ElementLayout:
    """Centred ceil(sqrt(L)) x ceil(sqrt(L)) grid, filled row by row.

    The pitch is half a wavelength unless the spacing floor asks for more.
    """
    if L == 0:
        return ElementLayout(np.zeros((2, 0)))
    n = int(np.ceil(np.sqrt(L)))
    pitch = max(wavelength / 2, min_spacing)
    if (n - 1) * pitch > aperture_side + TOL:
        raise ValueError(f"{n}x{n} grid at pitch {pitch:g} does not fit in aperture {aperture_side:g}")
    ticks = (np.arange(n) - (n - 1) / 2) * pitch
    xs, ys = np.meshgrid(ticks, ticks[::-1])
    pts = np.vstack([xs.ravel(), ys.ravel()])[:, :L]
    return ElementLayout(pts)


def validate_layout(layout: ElementLayout, aperture_side, min_spacing, tol=0.0):
    """Return every region or spacing violation (empty list when valid)."""
    p = np.asarray(layout.positions, dtype=float)
    half = aperture_side / 2
    out = []
    for l in range(p.shape[1]):
        excess = float(np.max(np.abs(p[:, l])) - half)
        if excess > tol:
            out.append(Violation("region", (l,), excess))
    if p.shape[1] > 1:
        diff = p[:, :, None] - p[:, None, :]
        dist = np.sqrt((diff ** 2).sum(axis=0))
        for l, m in zip(*np.triu_indices(p.shape[1], k=1)):
            short = float(min_spacing - dist[l, m])
            if short > tol:
                out.append(Violation("spacing", (int(l), int(m)), short))
    return out


def validate_coeffs(coeffs: SurfaceCoeffs, tol=TOL):
    """List of (l, excess) for elements whose total energy exceeds one."""
    e = np.abs(coeffs.v1) ** 2 + np.abs(coeffs.v2) ** 2
    return [(int(l), float(e[l] - 1)) for l in np.flatnonzero(e > 1 + tol)]


def coeffs_to_diagonals(coeffs: SurfaceCoeffs):
    """(Phi, Theta) = (diag(v2), diag(v1)): reflection and transmission matrices."""
    return np.diag(coeffs.v2), np.diag(coeffs.v1)


def default_coeffs(L, scenario=None, layout=None):
    """Equal energy split. With a scenario, phases co-phase the line-of-sight
    cascade towards the first user on each side; otherwise phases are zero."""
    amp = 1 / np.sqrt(2)
    v1 = np.full(L, amp, dtype=complex)
    v2 = np.full(L, amp, dtype=complex)
    if scenario is not None and layout is not None and L:
        from .channels import path_difference
        k = 2 * np.pi / scenario.wavelength
        p = layout.positions
        d_in = path_difference(p, scenario.phi_r, scenario.psi_r)
        if scenario.Q:
            v1 = amp * np.exp(1j * k * (d_in - path_difference(p, scenario.phi_T[0], scenario.psi_T[0])))
        if scenario.K:
            v2 = amp * np.exp(1j * k * (d_in - path_difference(p, scenario.phi_R[0], scenario.psi_R[0])))
    return SurfaceCoeffs(v1, v2)


def layout_to_csv(layout: ElementLayout) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["element", "x", "y"])
    for l in range(layout.L):
        w.writerow([l, repr(float(layout.positions[0, l])), repr(float(layout.positions[1, l]))])
    return buf.getvalue()


def layout_from_csv(text: str) -> ElementLayout:
    rows = list(csv.DictReader(io.StringIO(text)))
    return ElementLayout(np.array([[float(r["x"]) for r in rows], [float(r["y"]) for r in rows]]).reshape(2, -1))


def coeffs_to_csv(coeffs: SurfaceCoeffs) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["element", "v1_re", "v1_im", "v2_re", "v2_im"])
    for l, (a, b) in enumerate(zip(coeffs.v1, coeffs.v2)):
        w.writerow([l] + [repr(float(x)) for x in (a.real, a.imag, b.real, b.imag)])
    return buf.getvalue()


def coeffs_from_csv(text: str) -> SurfaceCoeffs:
    rows = list(csv.DictReader(io.StringIO(text)))
    v1 = np.array([complex(float(r["v1_re"]), float(r["v1_im"])) for r in rows])
    v2 = np.array([complex(float(r["v2_re"]), float(r["v2_im"])) for r in rows])
    return SurfaceCoeffs(v1, v2)

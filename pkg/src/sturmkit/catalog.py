"""Named nonlinearities and one-parameter families.

`get` builds a fresh fixture by name, `family` a continuous path of them.
The names are stable identifiers referenced from run configs.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import UsageError
from .model import (Box, EllipseOrbits, ParametricFamily,
                    PolynomialHamiltonian, ReversibleQuadratic)
from .phase_plane import CyclicityRegion

_MODULE = "catalog"


def _chafee_infante(lam: float = 5.0):
    """Cubic f = lam*u - u**3; the tower-attractor workhorse."""
    lam = float(lam)
    if lam <= 0.0:
        raise UsageError(_MODULE, "get", "lam must be positive", lam=lam)
    f = PolynomialHamiltonian([0.0, lam, 0.0, -1.0], _ci_box(lam))
    f.family_hook = ("chafee_infante", {"lam_start": -0.5, "lam_end": lam})
    return f


def _ci_box(lam_top: float) -> Box:
    r = math.sqrt(max(lam_top, 1.0))
    p = 0.8 * max(lam_top, 1.0) + 1.0
    return Box(-1.5 * r, 1.5 * r, -p, p)


def _chafee_infante_family(lam_start: float = 0.0, lam_end: float = 9.0):
    lam_start, lam_end = float(lam_start), float(lam_end)
    if lam_end <= lam_start:
        raise UsageError(_MODULE, "family", "lam_end must exceed lam_start",
                         lam_start=lam_start, lam_end=lam_end)
    box = _ci_box(max(abs(lam_start), abs(lam_end)))

    def build(s: float):
        lam = lam_start + (lam_end - lam_start) * s
        return PolynomialHamiltonian([0.0, lam, 0.0, -1.0], box)

    return ParametricFamily(build, "chafee_infante",
                            {"lam_start": lam_start, "lam_end": lam_end})


def _eq301(k: int = 1, radius: float = 4.0):
    """Reversible flow with exact period 2*pi/(k*|a|) on each orbit.

    The center at the origin is degenerate by construction, so no phase
    portrait can be built; a hand-made cyclicity region ships with it.
    """
    k = int(k)
    radius = float(radius)
    if k < 1:
        raise UsageError(_MODULE, "get", "k must be a positive integer", k=k)
    if radius <= 0.0:
        raise UsageError(_MODULE, "get", "radius must be positive", radius=radius)
    p = k * radius ** 2 * 1.5 + 8.0
    f = EllipseOrbits(k, Box(-1.5 * radius, 1.5 * radius, -p, p))
    f.manual_regions = [CyclicityRegion(
        id=0, kind="punctured_disk", u_minus=-radius, u_plus=radius,
        orientation="right", boundary_saddle=-1,
        enclosed_centers=[0], enclosed_equilibria=[0], center_u=0.0,
    )]
    return f


_TWO_WELL_ROOTS = (-2.15, -1.05, 0.1, 1.0, 2.0)


def _two_well(scale: float = 0.35):
    """Quintic with two unequal wells: (( ) ( )) with distinct outer levels."""
    scale = float(scale)
    if scale <= 0.0:
        raise UsageError(_MODULE, "get", "scale must be positive", scale=scale)
    coeffs = -scale * np.polynomial.polynomial.polyfromroots(_TWO_WELL_ROOTS)
    return PolynomialHamiltonian(coeffs, Box(-3.2, 3.2, -4.0, 4.0))


def _tilted_cubic():
    """g = 5u + 0.2u**2 - u**3: same lap signature as the lam=5 cubic."""
    return PolynomialHamiltonian([0.0, 5.0, 0.2, -1.0],
                                 Box(-3.6, 3.6, -7.0, 7.0))


def _pocket_bump(t):
    t = np.clip(t, 0.0, 1.0)
    return 64.0 * (t * (1.0 - t)) ** 3


def _pocket_bump_d(t):
    t = np.clip(t, 0.0, 1.0)
    return 192.0 * (t * (1.0 - t)) ** 2 * (1.0 - 2.0 * t)


def _pocket_bump_int(t):
    t = np.clip(t, 0.0, 1.0)
    return 64.0 * (t ** 4 / 4.0 - 3.0 * t ** 5 / 5.0 + t ** 6 / 2.0 - t ** 7 / 7.0)


def _slow_pocket(om2: float = 1.18, al: float = 0.6, beta: float = -30.0,
                 r1: float = 0.62, r2: float = 0.69):
    """Cubic well with a one-sided p**2 pocket that stalls mid-size orbits.

    The pocket makes (a - c) T(a) locally decreasing, so the scaling
    condition fails on a genuinely non-Hamiltonian fixture. One-sided
    support keeps the period map close to the cubic's elsewhere; the
    u**2 tilt keeps the left saddle the binding boundary.
    """
    w = float(r2) - float(r1)
    if w <= 0.0:
        raise UsageError(_MODULE, "get", "need r2 > r1", r1=r1, r2=r2)

    def g(u):
        u = np.asarray(u, dtype=float)
        return u * (om2 + al * u - u * u)

    def gp(u):
        u = np.asarray(u, dtype=float)
        return om2 + 2.0 * al * u - 3.0 * u * u

    def t_of(u):
        return (-np.asarray(u, dtype=float) - r1) / w

    def h(u):
        return beta * _pocket_bump(t_of(u))

    def hp(u):
        return -beta * _pocket_bump_d(t_of(u)) / w

    def Hf(u):
        return -beta * w * _pocket_bump_int(t_of(u))

    return ReversibleQuadratic(g, gp, h, hp, Hf, Box(-2.2, 2.2, -3.5, 3.5))


# Shifted nested-well quintic g = -K (u - sigma(s)) (u^2 - P(s)) (u^2 - Q(s)).
# Growth path: P crossing 0 births the outer saddle pair; the middle-center
# frequency sqrt(K P |Q|) rises through 1 and falls back, leaving two laps-1
# waves that survive into the annulus once Q crosses 0 and splits the well;
# sigma staggers the two late center frequencies so the last two wave births
# are separate events. The knee in P keeps the mid-path well wide enough for
# its period dip; the flat post-split Q slope keeps the late centers slow.
_NESTED_K = 8.0
_NESTED_SIGMA = 0.04
_NESTED_P_KNEE = (0.4, 0.9)
_NESTED_Q_PRE = 0.8
_NESTED_Q_END = 0.1
_NESTED_BOX = Box(-2.2, 2.2, -6.0, 6.0)


def _nested_wells_coeffs(s: float):
    knee_s, knee_p = _NESTED_P_KNEE
    sig = _NESTED_SIGMA * min(max(7.0 * s, 0.0), 1.0)
    if s <= knee_s:
        P = knee_p * (s - 1.0 / 7.0) / (knee_s - 1.0 / 7.0)
    else:
        P = knee_p + (1.0 - knee_p) * (s - knee_s) / (1.0 - knee_s)
    q1 = _NESTED_Q_PRE if s <= 4.0 / 7.0 else _NESTED_Q_END
    Q = q1 * (7.0 * s - 4.0) / 3.0
    K = _NESTED_K
    return [K * sig * P * Q, -K * P * Q, -K * sig * (P + Q),
            K * (P + Q), K * sig, -K]


def _nested_wells():
    """Five-equilibrium quintic: an annulus pair of waves over two wells."""
    f = PolynomialHamiltonian(_nested_wells_coeffs(1.0), _NESTED_BOX)
    f.family_hook = ("nested_wells", {})
    return f


def _nested_wells_family():
    def build(s: float):
        return PolynomialHamiltonian(_nested_wells_coeffs(s), _NESTED_BOX)

    return ParametricFamily(build, "nested_wells", {})


_FIXTURES = {
    "chafee_infante": _chafee_infante,
    "eq301": _eq301,
    "two_well": _two_well,
    "tilted_cubic": _tilted_cubic,
    "slow_pocket": _slow_pocket,
    "nested_wells": _nested_wells,
}

_FAMILIES = {
    "chafee_infante": _chafee_infante_family,
    "nested_wells": _nested_wells_family,
}


def get(name: str, **params):
    try:
        builder = _FIXTURES[name]
    except KeyError:
        raise UsageError(_MODULE, "get", f"unknown nonlinearity {name!r}",
                         known=sorted(_FIXTURES)) from None
    try:
        return builder(**params)
    except TypeError:
        raise UsageError(_MODULE, "get", f"bad parameters for {name!r}",
                         params=sorted(params)) from None


def family(name: str, **params):
    try:
        builder = _FAMILIES[name]
    except KeyError:
        raise UsageError(_MODULE, "family", f"unknown family {name!r}",
                         known=sorted(_FAMILIES)) from None
    try:
        return builder(**params)
    except TypeError:
        raise UsageError(_MODULE, "family", f"bad parameters for {name!r}",
                         params=sorted(params)) from None


def list_names():
    return sorted(_FIXTURES)


def list_families():
    return sorted(_FAMILIES)

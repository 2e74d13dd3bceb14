"""Periodic eigenvalue problems around equilibria and frozen waves.

The linearization w_xx + f_p(u,u_x) w_x + f_u(u,u_x) w on the circle is
discretized by trigonometric collocation; the grid doubles until the
leading eigenvalues stabilize. Morse indices count eigenvalues with
positive real part, excluding the translation zero mode for waves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    AmbiguousZeroError,
    DataError,
    HyperbolicityError,
    NormalHyperbolicityError,
    ResolutionError,
    UsageError,
)
from .signature import PeriodicOrbit, orbit_profile

_MODULE = "spectrum"

ZERO_EIG_TOL = 1e-6
CONVERGENCE_TOL = 1e-6
GRID_MIN = 64
GRID_MAX = 1024
NOISE_FLOOR_REL = 1e-8


@dataclass
class Spectrum:
    eigenvalues: list
    grid_size: int
    about: str
    eigenvectors: np.ndarray = field(default=None, repr=False)
    grid: np.ndarray = field(default=None, repr=False)
    convergence_residual: float = math.nan

    def as_dict(self) -> dict:
        return {
            "about": self.about,
            "grid_size": self.grid_size,
            "convergence_residual": self.convergence_residual,
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
        }


@dataclass(frozen=True)
class MorseData:
    index: int
    z_of_zero_mode: int | None
    parity: str  # "odd" | "even"
    dim_W_cu: int
    codim_W_cs: int
    spectrum: Spectrum = field(repr=False, default=None, compare=False)

    def as_dict(self) -> dict:
        return {
            "index": self.index,
            "z_of_zero_mode": self.z_of_zero_mode,
            "parity": self.parity,
            "dim_W_cu": self.dim_W_cu,
            "codim_W_cs": self.codim_W_cs,
        }


def _diff_matrices(n: int):
    m = np.fft.fftfreq(n, d=1.0 / n)
    m1 = m.copy()
    m1[n // 2] = 0.0  # Nyquist mode carries no odd derivative
    eye = np.eye(n)
    ft = np.fft.fft(eye, axis=0)
    D1 = np.real(np.fft.ifft(1j * m1[:, None] * ft, axis=0))
    D2 = np.real(np.fft.ifft(-(m[:, None] ** 2) * ft, axis=0))
    return D1, D2


def _resample(profile: np.ndarray, n: int) -> np.ndarray:
    """Trigonometric interpolation onto n uniform points."""
    n0 = len(profile)
    if n == n0:
        return profile
    c = np.fft.rfft(profile)
    out = np.fft.irfft(c, n=n) * (n / n0)
    return out


def _operator(f, u: np.ndarray):
    n = len(u)
    D1, D2 = _diff_matrices(n)
    ux = D1 @ u
    fu = np.asarray(f.f_u(u, ux), dtype=float)
    fp = np.asarray(f.f_p(u, ux), dtype=float)
    return D2 + fp[:, None] * D1 + np.diag(fu), D1


def _sorted_eig(L):
    vals, vecs = scipy.linalg.eig(L)
    order = np.lexsort((-vals.imag, -vals.real))
    return vals[order], vecs[:, order]


def _assert_pairing(vals, block: int, about: str):
    lead = vals[:block]
    if abs(lead[0].imag) > 1e-6:
        raise DataError(_MODULE, "eigenproblem",
                        "leading eigenvalue is not real", about=about,
                        lam0=complex(lead[0]))
    if len(lead) > 1 and not (lead[0].real > lead[1].real + 1e-10):
        raise DataError(_MODULE, "eigenproblem",
                        "leading eigenvalue is not simple", about=about,
                        lam0=complex(lead[0]), lam1=complex(lead[1]))
    for j in range(0, len(lead) - 1, 2):
        if not (lead[j].real > lead[j + 1].real - 1e-8):
            raise DataError(_MODULE, "eigenproblem",
                            "eigenvalue pairing violated", about=about,
                            position=j, pair=(complex(lead[j]), complex(lead[j + 1])))
    for j in range(2, len(lead), 2):
        gap = lead[j - 1].real - lead[j].real
        if gap > 1e-6:
            if abs(lead[j - 1].imag) > 1e-6 or abs(lead[j].imag) > 1e-6:
                raise DataError(
                    _MODULE, "eigenproblem",
                    "strictly separated pair is not real", about=about,
                    pair=(complex(lead[j - 1]), complex(lead[j])),
                )


def eigenproblem(f, profile, count: int = 12, about: str = "profile") -> Spectrum:
    """Leading spectrum of the periodic linearization along a profile.

    profile: u-values on a uniform grid over [0, 2pi), at least 64 points,
    or a callable n -> u-array producing the profile at resolution n.
    """
    if callable(profile):
        provider = profile
        base = np.asarray(provider(GRID_MIN), dtype=float)
    else:
        base = np.asarray(profile, dtype=float)
        if len(base) < GRID_MIN:
            raise UsageError(_MODULE, "eigenproblem",
                             f"profile needs at least {GRID_MIN} points",
                             got=len(base))
        provider = lambda n: _resample(base, n)
    block = 2 * count + 6

    n = max(GRID_MIN, len(base) if not callable(profile) else GRID_MIN)
    n = 1 << (n - 1).bit_length()
    prev = None
    while n <= GRID_MAX:
        u = np.asarray(provider(n), dtype=float)
        L, D1 = _operator(f, u)
        vals, vecs = _sorted_eig(L)
        if prev is not None:
            k = min(block, len(prev), len(vals))
            resid = float(np.max(np.abs(vals[:k] - prev[:k])))
            if resid < CONVERGENCE_TOL:
                _assert_pairing(vals, min(block, len(vals)), about)
                return Spectrum(
                    eigenvalues=[complex(z) for z in vals[:block]],
                    grid_size=n, about=about,
                    eigenvectors=vecs[:, :block], grid=u,
                    convergence_residual=resid,
                )
        prev = vals
        n *= 2
    raise ResolutionError(_MODULE, "eigenproblem",
                          "leading eigenvalues did not stabilize under grid "
                          "doubling", about=about, grid_max=GRID_MAX)


def morse_index_equilibrium(f, e, count: int = 12) -> MorseData:
    """PDE Morse index of a spatially constant equilibrium."""
    u0 = float(e.u) if hasattr(e, "u") else float(e)
    spec = eigenproblem(f, lambda n: np.full(n, u0), count=count,
                        about=f"equilibrium u={u0:.6g}")
    vals = np.array(spec.eigenvalues)
    near_zero = np.abs(vals) < ZERO_EIG_TOL
    if np.any(near_zero):
        raise HyperbolicityError(
            _MODULE, "morse_index_equilibrium",
            "equilibrium has an eigenvalue at zero (PDE hyperbolicity fails)",
            u=u0, eigenvalue=complex(vals[np.argmax(near_zero)]),
        )
    i = int(np.sum(vals.real > 0))
    return MorseData(index=i, z_of_zero_mode=None,
                     parity="odd" if i % 2 else "even",
                     dim_W_cu=i + 1, codim_W_cs=i, spectrum=spec)


def morse_index_wave(f, orbit: PeriodicOrbit, count: int = 12) -> MorseData:
    """Morse index of a frozen wave, excluding the translation zero mode."""

    def provider(n):
        _, v, _ = orbit_profile(f, orbit.a, n=n)
        return v

    spec = eigenproblem(f, provider, count=count,
                        about=f"wave a={orbit.a:.6g} lap={orbit.lap}")
    vals = np.array(spec.eigenvalues)
    near_zero = np.nonzero(np.abs(vals) < ZERO_EIG_TOL)[0]
    if len(near_zero) != 1:
        raise NormalHyperbolicityError(
            _MODULE, "morse_index_wave",
            f"expected exactly one zero eigenvalue, found {len(near_zero)}",
            a=orbit.a, near_zero=[complex(vals[i]) for i in near_zero],
        )
    zi = int(near_zero[0])
    # the zero mode must be the translation eigenfunction v_x
    _, v, vx = orbit_profile(f, orbit.a, n=spec.grid_size)
    w0 = np.real(spec.eigenvectors[:, zi])
    w0 = w0 / np.max(np.abs(w0))
    ref = vx / np.max(np.abs(vx))
    mismatch = min(float(np.max(np.abs(w0 - ref))), float(np.max(np.abs(w0 + ref))))
    if mismatch > 1e-4:
        raise DataError(_MODULE, "morse_index_wave",
                        "zero mode does not match the translation direction",
                        mismatch=mismatch, a=orbit.a)
    i = int(np.sum(vals.real > ZERO_EIG_TOL))
    two_n = zero_number(vx)
    if not (two_n - 1 <= i <= two_n):
        raise DataError(_MODULE, "morse_index_wave",
                        "wave index outside {2N-1, 2N}",
                        index=i, two_n=two_n, a=orbit.a)
    return MorseData(index=i, z_of_zero_mode=two_n,
                     parity="odd" if i % 2 else "even",
                     dim_W_cu=i + 1, codim_W_cs=i, spectrum=spec)


def zero_number(w, noise_floor_rel: float = NOISE_FLOOR_REL) -> int:
    """Sign changes of a function around the closed circle."""
    w = np.asarray(w, dtype=float)
    floor = noise_floor_rel * float(np.max(np.abs(w))) if np.max(np.abs(w)) > 0 else 0.0
    sig = np.where(np.abs(w) <= floor, 0, np.sign(w)).astype(int)
    # plateaus at the noise floor wider than 2 cells are ambiguous
    run = 0
    for s in np.concatenate([sig, sig[:1]]):
        if s == 0:
            run += 1
            if run > 2:
                raise AmbiguousZeroError(
                    _MODULE, "zero_number",
                    "zero plateau wider than 2 grid cells", floor=floor,
                )
        else:
            run = 0
    signs = sig[sig != 0]
    if len(signs) == 0:
        raise AmbiguousZeroError(_MODULE, "zero_number",
                                 "profile vanishes identically at this floor")
    changes = int(np.sum(signs != np.roll(signs, 1)))
    return changes

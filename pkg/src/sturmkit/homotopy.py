"""Scale functions, orbit scaling, Hamiltonian realization, and the
five-stage collective homotopy.

The scaling diffeomorphism shrinks orbits radially about a region's center
with a factor constant along each orbit; the realization inverts the
period-width relation of the single-well time map (an Abel integral
equation) node by node, then joins wells with sign-constrained fillers.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, quad
from scipy.interpolate import PchipInterpolator, make_interp_spline
from scipy.optimize import brentq

from .errors import (
    ConstructionError,
    ConvergenceError,
    RealizationRefusedError,
    SignatureMismatchError,
    StageError,
    VariantError,
)
from .model import (
    Box,
    CallableHamiltonian,
    ConvexCombination,
    HamiltonianNonlinearity,
    Nonlinearity,
)
from .period_map import (
    ConditionCReport,
    PeriodMap,
    check_condition_C,
    sample_map,
    shoot_half,
)
from .phase_plane import build_portrait
from .signature import (
    build_signature,
    find_periodic_orbits,
    format_signature,
    signatures_equal,
)

_MODULE = "homotopy"

TWO_PI = 2.0 * math.pi
FIDELITY_REL = 1e-5
HYP_MARGIN_T_PRIME = 1e-5
HYP_MARGIN_F_U = 1e-8


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


def _smoothstep_d(t):
    t = np.clip(t, 0.0, 1.0)
    return 30.0 * t * t * (1.0 - t) ** 2


@dataclass
class ScaleFunction:
    """omega(a): delta on (0, c1], quintic-smoothstep bridge, 1 on [c2, inf).

    delta = 1 is admitted as the degenerate identity scale.
    """

    delta: float
    c1: float
    c2: float
    bridge: object = field(default=None, repr=False)

    def __post_init__(self):
        if not (0.0 < self.delta <= 1.0):
            raise ConstructionError(_MODULE, "make_scale",
                                    "delta must lie in (0, 1]", delta=self.delta)
        if not (0.0 < self.c1 < self.c2):
            raise ConstructionError(_MODULE, "make_scale",
                                    "need 0 < c1 < c2", c1=self.c1, c2=self.c2)
        d, c1, c2 = self.delta, self.c1, self.c2
        self.bridge = lambda a: d + (1.0 - d) * _smoothstep((a - c1) / (c2 - c1))

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        out = np.where(a <= self.c1, self.delta,
                       np.where(a >= self.c2, 1.0, self.bridge(a)))
        return float(out) if out.ndim == 0 else out

    def derivative(self, a):
        a = np.asarray(a, dtype=float)
        t = (a - self.c1) / (self.c2 - self.c1)
        inside = (a > self.c1) & (a < self.c2)
        out = np.where(inside,
                       (1.0 - self.delta) * _smoothstep_d(t) / (self.c2 - self.c1),
                       0.0)
        return float(out) if out.ndim == 0 else out

    def as_dict(self) -> dict:
        return {"delta": self.delta, "c1": self.c1, "c2": self.c2}


def _radial_view(pm: PeriodMap):
    """(r, T) with r the distance of the orbit min from the region center."""
    if pm.kind != "punctured_disk" or pm.center_u is None:
        raise VariantError(_MODULE, "make_scale",
                           "scale functions are built over disk period maps")
    a = pm.samples[:, 0]
    T = pm.samples[:, 1]
    r = pm.center_u - a
    order = np.argsort(r)
    return r[order], T[order]


def make_scale(pm: PeriodMap, delta: float | None = None,
               margin: float = 1e-8) -> ScaleFunction:
    """Place c1 beyond the outermost orbit inside the T' > 0 tail and c2
    past any d(aT)/da violation; delta by bisection when not given."""
    r, T = _radial_view(pm)
    R = pm.center_u - pm.domain[0]
    # verified monotone tail: T increasing toward the boundary
    tail = len(r) - 1
    while tail > 0 and T[tail] > T[tail - 1]:
        tail -= 1
    if tail >= len(r) - 2:
        raise ConstructionError(
            _MODULE, "make_scale",
            "no verified T' > 0 tail near the boundary; reduce the sampling "
            "cutoff so the monotone blowup window is resolved",
            tail_index=tail,
        )
    orbits = find_periodic_orbits(pm)
    r_alpha1 = max((pm.center_u - o.a) for o in orbits) if orbits else 0.0
    rT = r * T
    d = np.diff(rT) / np.diff(r)
    bad = np.nonzero(d <= margin)[0]
    if bad.size:
        z_lo, z_hi = float(r[bad[0]]), float(r[bad[-1] + 1])
        if z_lo <= r_alpha1:
            raise ConstructionError(
                _MODULE, "make_scale",
                "condition (C) violation overlaps the periodic-orbit zone; "
                "no admissible c1 beyond the outermost orbit",
                z_lo=z_lo, r_alpha1=float(r_alpha1),
            )
        c1 = 0.5 * (r_alpha1 + z_lo)
        push_to = z_lo
        c2 = min(z_hi + 0.3 * (R - z_hi), 0.5 * (z_hi + R))
    else:
        c1 = r_alpha1 + 0.5 * (R - r_alpha1)
        push_to = R
        c2 = c1 + 0.6 * (R - c1)
    for _ in range(8):
        i = int(np.searchsorted(r, c1))
        if 0 < i < len(r) and T[i] > T[i - 1]:
            break
        c1 = 0.5 * (c1 + push_to)
    else:
        raise ConstructionError(
            _MODULE, "make_scale",
            "could not verify T' > 0 at c1; reduce the sampling cutoff",
            c1=float(c1),
        )
    if delta is None:
        delta = suggest_delta(pm, c1, c2)
    return ScaleFunction(delta=delta, c1=float(c1), c2=float(c2))


def _min_scaled_derivative(pm: PeriodMap, omega: ScaleFunction):
    """Minimum of d(aT1)/da over the samples under s = omega(r) r."""
    r, T = _radial_view(pm)
    s = np.asarray(omega(r)) * r
    sT = s * T
    d = np.diff(sT) / np.diff(s)
    i = int(np.argmin(d))
    return float(d[i]), float(pm.center_u - 0.5 * (s[i] + s[i + 1]))


def condition_C_after_scaling(pm: PeriodMap, omega: ScaleFunction) -> ConditionCReport:
    """d(aT1)/da over the samples, via the orbit relabeling s = omega(r) r."""
    md, witness = _min_scaled_derivative(pm, omega)
    try:
        admissible = suggest_delta(pm, omega.c1, omega.c2)
    except ConstructionError:
        admissible = None
    return ConditionCReport(
        region_id=pm.region_id,
        holds=bool(md > 1e-8),
        min_derivative=md,
        witness_a=witness,
        admissible_delta=admissible,
    )


def suggest_delta(pm: PeriodMap, c1: float, c2: float,
                  margin: float = 1e-6) -> float:
    """Largest delta in (0, 1) for which condition (C) holds with margin."""

    def ok(delta):
        md, _ = _min_scaled_derivative(pm, ScaleFunction(delta, c1, c2))
        return md > margin

    if ok(1.0):
        return 1.0
    lo, hi = 1e-6, 1.0
    if not ok(lo):
        raise ConstructionError(_MODULE, "suggest_delta",
                                "no delta in (0, 1) repairs condition (C)",
                                c1=c1, c2=c2)
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


class OrbitScaled(Nonlinearity):
    """f_tau = Omega_tau * (f0 o Phi_tau^{-1}) about a disk region's center.

    Omega is a function of the first integral, hence constant along orbits;
    orbits map onto radially shrunk orbits and periods relabel through
    sigma(a). Identity on the fixed zone where omega = 1 and outside the
    region, so the boundary structure is untouched.
    """

    variant = "scaled"

    def __init__(self, f0: Nonlinearity, omega: ScaleFunction, region, tau: float):
        if not f0.is_reversible:
            raise VariantError(_MODULE, "scaled_nonlinearity",
                               "scaling requires a reversible base")
        if not (0.0 <= tau <= 1.0):
            raise VariantError(_MODULE, "scaled_nonlinearity",
                               "tau must lie in [0, 1]", tau=tau)
        super().__init__(box=f0.box, bound_C0=f0.bound_C0,
                         sign_threshold_K0=f0.sign_threshold_K0)
        self.f0 = f0
        self.omega = omega
        self.tau = float(tau)
        self.region = region
        self.center = float(region.center_u)
        self.u_lo = float(region.u_minus)
        self.u_hi = float(region.u_plus)
        self.is_reversible = f0.is_reversible
        self.omega_min = (1.0 - self.tau) + self.tau * omega.delta
        if self.omega_min <= 0:
            raise ConstructionError(_MODULE, "scaled_nonlinearity",
                                    "omega_tau is not positive",
                                    omega_min=self.omega_min)
        # level thresholds taken on the min side of the center
        self.lam1 = float(f0.axis_integral(self.center - omega.c1))
        self.lam2 = float(f0.axis_integral(self.center - omega.c2))
        if not (self.lam2 > self.lam1):
            raise ConstructionError(_MODULE, "scaled_nonlinearity",
                                    "c1, c2 do not map to increasing levels",
                                    lam1=self.lam1, lam2=self.lam2)
        rr = np.linspace(omega.c1, omega.c2, 1025)
        levels = np.array([float(f0.axis_integral(self.center - x)) for x in rr])
        if np.any(np.diff(levels) <= 0):
            raise ConstructionError(_MODULE, "scaled_nonlinearity",
                                    "axis integral not monotone across the "
                                    "bridge zone; scaling map not injective")
        # shape-preserving: an interpolating cubic can overshoot 1 near the
        # flat ends, which breaks the inversion bracket
        self._bridge_interp = PchipInterpolator(levels, np.asarray(omega(rr)))

    # -- scale as a function of the orbit level ------------------------------
    def _omega_hat(self, level: float) -> float:
        if level <= self.lam1:
            base = self.omega.delta
        elif level >= self.lam2:
            base = 1.0
        else:
            base = min(1.0, max(self.omega.delta, float(self._bridge_interp(level))))
        return (1.0 - self.tau) + self.tau * base

    def _invert_point(self, u: float, p: float):
        """x = Phi_tau^{-1}(y) along the ray from the center; returns
        (x_u, x_p, t) with x = c + t (y - c)."""
        if self.omega_min >= 1.0 - 1e-15:
            return u, p, 1.0
        c = self.center
        du, dp = u - c, p
        I0 = self.f0.first_integral

        def lev(t):
            return float(I0(c + t * du, t * dp))

        if lev(1.0) >= self.lam2:
            return u, p, 1.0
        t_max = 1.0 / self.omega_min
        if lev(t_max) <= self.lam1:
            return c + t_max * du, t_max * dp, t_max

        def resid(t):
            return t * self._omega_hat(lev(t)) - 1.0

        t = brentq(resid, 1.0, t_max, xtol=1e-13)
        return c + t * du, t * dp, t

    def _eval_scalar(self, u: float, p: float) -> float:
        if not (self.u_lo < u < self.u_hi):
            return float(self.f0._eval(u, p))
        if float(self.f0.first_integral(u, p)) >= self.lam2:
            return float(self.f0._eval(u, p))
        x, q, t = self._invert_point(u, p)
        return float(self.f0._eval(x, q)) / t

    def _eval(self, u, p):
        u = np.asarray(u, dtype=float)
        p = np.asarray(p, dtype=float)
        if u.ndim == 0 and p.ndim == 0:
            return self._eval_scalar(float(u), float(p))
        ub, pb = np.broadcast_arrays(u, p)
        out = np.empty(ub.shape)
        for idx in np.ndindex(out.shape):
            out[idx] = self._eval_scalar(float(ub[idx]), float(pb[idx]))
        return out

    def first_integral(self, u, p):
        u = np.asarray(u, dtype=float)
        p = np.asarray(p, dtype=float)
        if u.ndim == 0 and p.ndim == 0:
            uu, pp = float(u), float(p)
            if not (self.u_lo < uu < self.u_hi):
                return float(self.f0.first_integral(uu, pp))
            lev = float(self.f0.first_integral(uu, pp))
            if lev >= self.lam2:
                return lev
            x, q, _ = self._invert_point(uu, pp)
            return float(self.f0.first_integral(x, q))
        ub, pb = np.broadcast_arrays(u, p)
        out = np.empty(ub.shape)
        for idx in np.ndindex(out.shape):
            out[idx] = self.first_integral(float(ub[idx]), float(pb[idx]))
        return out

    def p_squared_on_orbit(self, u, level):
        """Orbits of a known level shrink by the constant factor
        omega_hat(level), so the squared slope transports in closed form."""
        w = self._omega_hat(float(level))
        x = self.center + (np.asarray(u, dtype=float) - self.center) / w
        return w * w * np.asarray(self.f0.p_squared_on_orbit(x, level))

    def sigma(self, a):
        """New min-value coordinate of the orbit whose old min sits at a."""
        r = self.center - np.asarray(a, dtype=float)
        w = (1.0 - self.tau) + self.tau * np.asarray(self.omega(r))
        out = self.center - w * r
        return float(out) if out.ndim == 0 else out

    def describe(self) -> dict:
        d = super().describe()
        d.update({"tau": self.tau, "delta": self.omega.delta,
                  "c1": self.omega.c1, "c2": self.omega.c2})
        return d


def scaled_nonlinearity(f0: Nonlinearity, omega: ScaleFunction, region,
                        tau: float) -> Nonlinearity:
    return OrbitScaled(f0, omega, region, tau)


# ---------------------------------------------------------------------------
# Hamiltonian realization
# ---------------------------------------------------------------------------


def _abel_width(T_tilde, eps: float) -> float:
    """w(eps) = (1 / pi sqrt 2) * int_0^eps T(s) (eps - s)^{-1/2} ds."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val, _ = quad(T_tilde, 0.0, eps, weight="alg", wvar=(0.0, -0.5),
                      epsabs=1e-11, epsrel=1e-10, limit=200)
    return val / (math.pi * math.sqrt(2.0))


def _orbit_mate(pm: PeriodMap, a: float) -> float:
    """Right crossing of the orbit through (a, 0)."""
    f = pm.f
    try:
        E = float(f.axis_integral(a))
        from .period_map import _mate
        return float(_mate(f, a, E, 1.0, center_hint=pm.center_u,
                           far_bound=pm.u_plus))
    except VariantError:
        _, m = shoot_half(f, a)
        return float(m)


@dataclass
class _Well:
    spline: object  # potential in absolute u with its minimum 0 at center
    g: object
    center: float
    a_rim: float
    m_rim: float
    eps_top: float
    T0: float
    fidelity: float
    nodes: list


def _realize_well(pm: PeriodMap, n_nodes: int, fidelity_rel: float,
                  max_iters: int) -> _Well:
    T0 = pm.center_limit
    if T0 is None or not math.isfinite(T0):
        raise ConstructionError(_MODULE, "realize_hamiltonian",
                                "degenerate center limit is not realizable",
                                region=pm.region_id)
    c = float(pm.center_u)
    a = pm.samples[:, 0]
    lo = float(pm.domain[0])
    width_dom = float(pm.domain[1] - pm.domain[0])
    # rim placement: the outermost node must clear 2 pi (no wave can hide
    # past the realized cutoff) yet stay off the boundary blowup, where the
    # saddle flattening would make the interpolant ring
    a_in = float(a[-1])
    a_bdry = float(a[0])
    T_bdry = float(pm.samples[0, 1])
    t_lo, t_hi = TWO_PI * 1.05, TWO_PI * 1.3
    d_bdry = a_bdry - lo
    if T_bdry <= t_lo:
        while T_bdry <= t_lo and d_bdry > 1e-9 * width_dom:
            d_bdry *= 0.5
            T_bdry = float(pm.evaluator(lo + d_bdry))
        a_bdry = lo + d_bdry
    elif T_bdry > t_hi:
        t_mid = TWO_PI * 1.12
        for d in np.geomspace(d_bdry, 0.5 * (a_in - lo), 64)[1:]:
            Tt = float(pm.evaluator(lo + float(d)))
            if Tt <= t_lo:
                break
            a_bdry, T_bdry = lo + float(d), Tt
            if Tt <= t_mid:
                break
    # uniform in the label coordinate; index-uniform selection degenerates
    # where the sampler densified against the boundary blowup
    a_nodes = [float(x) for x in np.linspace(a_in, a_bdry, n_nodes)]
    T_nodes = [float(pm.evaluator(x)) for x in a_nodes]
    m_nodes = [_orbit_mate(pm, x) for x in a_nodes]
    for j, (aj, mj) in enumerate(zip(a_nodes, m_nodes)):
        if not (aj < c < mj):
            raise ConstructionError(_MODULE, "realize_hamiltonian",
                                    "orbit crossings do not straddle the "
                                    "region center", node=j, region=pm.region_id)
        if j and (aj >= a_nodes[j - 1] or mj <= m_nodes[j - 1]):
            raise ConstructionError(_MODULE, "realize_hamiltonian",
                                    "orbit crossings not strictly nested",
                                    index=j, region=pm.region_id)
    w_nodes = [mj - aj for aj, mj in zip(a_nodes, m_nodes)]

    T_work = list(T_nodes)
    fid = math.inf
    for _ in range(max_iters):
        eps = _march(T0, T_work, w_nodes)
        spline = _well_spline(T0, c, a_nodes, m_nodes, eps)
        T_real = [_well_period(spline, e, aj, mj)
                  for e, aj, mj in zip(eps, a_nodes, m_nodes)]
        fid = max(abs(Tq - Tt) / Tt for Tq, Tt in zip(T_real, T_nodes))
        if fid < fidelity_rel:
            return _Well(spline=spline, g=spline.derivative(), center=c,
                         a_rim=a_nodes[-1], m_rim=m_nodes[-1],
                         eps_top=eps[-1], T0=T0, fidelity=fid,
                         nodes=list(zip(a_nodes, m_nodes, T_nodes, eps)))
        # damped multiplicative correction: the rim node feeds back on the
        # spline endpoint slope with near-unit gain, and undamped updates
        # oscillate there
        T_work = [Tw * (Tt / Tq) ** 0.6
                  for Tw, Tt, Tq in zip(T_work, T_nodes, T_real)]
    raise ConvergenceError(_MODULE, "realize_hamiltonian",
                           "period fidelity iteration stalled",
                           residual=fid, tolerance=fidelity_rel,
                           region=pm.region_id)


def _march(T0: float, T_nodes, w_nodes):
    """Solve the width relation for the node energies, one node at a time."""
    eps = []
    for j, w_target in enumerate(w_nodes):
        pts_e = [0.0] + eps
        pts_T = [T0] + list(T_nodes[:j])

        def resid(e):
            xs = np.array(pts_e + [e])
            ys = np.array(pts_T + [T_nodes[j]])
            interp = PchipInterpolator(xs, ys, extrapolate=True)
            return _abel_width(lambda s: float(interp(s)), e) - w_target

        lo = eps[-1] * (1.0 + 1e-10) if eps else 1e-12
        # harmonic relation w = 2 sqrt(2 eps) seeds the upper bracket
        hi = max(w_target ** 2 / 8.0 * 1.2, lo * 2.0, 1e-9)
        tries = 0
        while resid(hi) < 0:
            hi *= 2.0
            tries += 1
            if tries > 60:
                raise ConvergenceError(_MODULE, "realize_hamiltonian",
                                       "energy bracket expansion failed",
                                       node=j, width=w_target)
        if resid(lo) > 0:
            raise ConvergenceError(_MODULE, "realize_hamiltonian",
                                   "node energies not increasing", node=j)
        eps.append(brentq(resid, lo, hi, xtol=1e-14, rtol=8.9e-16))
    return eps


def _well_spline(T0: float, c: float, a_nodes, m_nodes, eps):
    """Quintic interpolant through both crossing branches plus curvature
    ghost points pinned by the center period."""
    h = 0.2 * min(c - a_nodes[0], m_nodes[0] - c)
    ghost = 0.5 * (TWO_PI / T0) ** 2 * h * h
    xs = np.array(list(reversed(a_nodes)) + [c - h, c, c + h] + list(m_nodes))
    ys = np.array(list(reversed(list(eps))) + [ghost, 0.0, ghost] + list(eps))
    if np.any(np.diff(xs) <= 0):
        raise ConstructionError(_MODULE, "realize_hamiltonian",
                                "well nodes collide; lower n_nodes")
    spl = make_interp_spline(xs, ys, k=5)
    d = spl.derivative()
    for ulo, uhi, sgn in ((xs[0], c - h, -1.0), (c + h, xs[-1], 1.0)):
        grid = np.linspace(ulo, uhi, 240)
        vals = sgn * np.asarray(d(grid))
        if float(np.min(vals)) < -1e-7 * float(np.max(np.abs(vals))):
            raise ConstructionError(_MODULE, "realize_hamiltonian",
                                    "realized well is not monotone between "
                                    "rim and center; raise n_nodes")
    return spl


def _well_period(spline, E: float, u_lo: float, u_hi: float) -> float:
    """Quadrature period of the realized well at rim energy E."""
    w = u_hi - u_lo
    delta = 1e-8 * w

    def fn(u):
        u = min(max(u, u_lo + delta), u_hi - delta)
        p2 = 2.0 * (E - float(spline(u)))
        r = (u - u_lo) * (u_hi - u) / p2 if p2 > 0 else 0.0
        return math.sqrt(max(r, 0.0))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val, _ = quad(fn, u_lo, u_hi, weight="alg", wvar=(-0.5, -0.5),
                      epsabs=1e-10, epsrel=1e-11, limit=200)
    return 2.0 * val


class _Piecewise:
    """Piecewise scalar function with derivative and running antiderivative."""

    def __init__(self):
        self.breaks = []
        self.pieces = []  # (g, g', G_local) with G_local(0) = 0
        self.G_offsets = []
        self.edges = None

    def add(self, lo, hi, g, g_prime, G_local):
        self.breaks.append((lo, hi))
        self.pieces.append((g, g_prime, G_local))

    def finalize(self):
        acc = 0.0
        self.G_offsets = []
        for (lo, hi), (_, _, G_local) in zip(self.breaks, self.pieces):
            self.G_offsets.append(acc)
            acc += G_local(hi - lo)
        self.edges = np.array([b[0] for b in self.breaks] + [self.breaks[-1][1]])

    def _idx(self, u):
        i = int(np.searchsorted(self.edges, u, side="right")) - 1
        return min(max(i, 0), len(self.pieces) - 1)

    def g(self, u):
        u = np.asarray(u, dtype=float)
        if u.ndim == 0:
            i = self._idx(float(u))
            return float(self.pieces[i][0](float(u) - self.breaks[i][0]))
        return np.array([self.g(x) for x in u.ravel()]).reshape(u.shape)

    def g_prime(self, u):
        u = np.asarray(u, dtype=float)
        if u.ndim == 0:
            i = self._idx(float(u))
            return float(self.pieces[i][1](float(u) - self.breaks[i][0]))
        return np.array([self.g_prime(x) for x in u.ravel()]).reshape(u.shape)

    def G(self, u):
        u = np.asarray(u, dtype=float)
        if u.ndim == 0:
            i = self._idx(float(u))
            return self.G_offsets[i] + float(
                self.pieces[i][2](float(u) - self.breaks[i][0]))
        return np.array([self.G(x) for x in u.ravel()]).reshape(u.shape)


def _cubic_piece(y0, d0, y1, d1, L):
    """Cubic Hermite on [0, L]; returns local (g, g', G) callables."""
    c0, c1 = y0, d0
    c2 = (3.0 * (y1 - y0) - (2.0 * d0 + d1) * L) / (L * L)
    c3 = (2.0 * (y0 - y1) + (d0 + d1) * L) / (L * L * L)

    def g(x):
        return c0 + x * (c1 + x * (c2 + x * c3))

    def gp(x):
        return c1 + x * (2.0 * c2 + x * 3.0 * c3)

    def G(x):
        return x * (c0 + x * (c1 / 2.0 + x * (c2 / 3.0 + x * c3 / 4.0)))

    return g, gp, G


def _sign_ok(params, L, sign):
    g, _, _ = _cubic_piece(*params, L)
    xs = np.linspace(0.0, L, 200)[1:-1]
    strict = [g(x) for x in xs if min(x, L - x) > 1e-3 * L]
    return all(sign * v > 0 for v in strict)


def _solve_outer_filler(rim_val, rim_slope, target, sign, L_guess,
                        kappa_base, saddle_first):
    """Free-length cubic between an outer saddle and a well rim with a
    prescribed integral and no interior zero; returns the saddle slope
    actually used so the adjoining tail can match it."""
    want = 1.0 if target >= 0 else -1.0
    for scale in (1.0, 0.5, 2.0, 4.0, 0.25, 8.0):
        kappa = kappa_base * scale
        if saddle_first:
            params = (0.0, -kappa, rim_val, rim_slope)
        else:
            params = (rim_val, rim_slope, 0.0, -kappa)

        def F(L):
            _, _, G = _cubic_piece(*params, L)
            return G(L) - target

        lo, hi = 1e-6 * L_guess, L_guess
        tries = 0
        while F(hi) * want < 0 and tries <= 80:
            hi *= 1.8
            tries += 1
        if tries > 80 or F(lo) * F(hi) > 0:
            continue
        L = brentq(F, lo, hi, xtol=1e-13)
        if _sign_ok(params, L, sign):
            return L, kappa, params
    raise ConstructionError(_MODULE, "realize_hamiltonian",
                            "gap filler would introduce an extra zero",
                            target=target)


def _solve_gap(gR, dR, gL, dL, up_target, dn_target, L_gap, kappa_base):
    """Two cubics across a fixed-length gap joined at an interior saddle;
    the split point and the shared saddle slope are solved together so both
    level climbs land exactly."""

    def split_for(kappa):
        def F(L):
            _, _, G = _cubic_piece(gR, dR, 0.0, -kappa, L)
            return G(L) - up_target

        Ls = np.linspace(0.04 * L_gap, 0.96 * L_gap, 48)
        vals = [F(L) for L in Ls]
        for i in range(len(Ls) - 1):
            if vals[i] == 0.0:
                return float(Ls[i])
            if vals[i] * vals[i + 1] < 0:
                return float(brentq(F, Ls[i], Ls[i + 1], xtol=1e-13))
        return None

    def resid(kappa):
        L_up = split_for(kappa)
        if L_up is None:
            return None
        L_dn = L_gap - L_up
        _, _, G = _cubic_piece(0.0, -kappa, gL, dL, L_dn)
        return G(L_dn) - dn_target

    def resid_strict(kappa):
        v = resid(kappa)
        if v is None:
            raise ConstructionError(_MODULE, "realize_hamiltonian",
                                    "interior saddle placement lost its "
                                    "bracket", gap=L_gap)
        return v

    kappas = kappa_base * np.geomspace(1.0 / 32.0, 32.0, 33)
    vals = [resid(k) for k in kappas]
    kappa = None
    for i in range(len(kappas) - 1):
        vi, vj = vals[i], vals[i + 1]
        if vi is None or vj is None:
            continue
        if vi == 0.0:
            kappa = float(kappas[i])
            break
        if vi * vj < 0:
            kappa = float(brentq(resid_strict, kappas[i], kappas[i + 1],
                                 rtol=1e-12, xtol=1e-12 * kappa_base))
            break
    if kappa is None:
        raise ConstructionError(_MODULE, "realize_hamiltonian",
                                "no interior saddle placement meets both "
                                "level climbs across the gap",
                                gap=L_gap, up=up_target, dn=dn_target)
    L_up = split_for(kappa)
    L_dn = L_gap - L_up
    up = (gR, dR, 0.0, -kappa)
    dn = (0.0, -kappa, gL, dL)
    for params, L, sgn in ((up, L_up, 1.0), (dn, L_dn, -1.0)):
        if not _sign_ok(params, L, sgn):
            raise ConstructionError(_MODULE, "realize_hamiltonian",
                                    "interior gap filler changes sign",
                                    gap=L_gap)
    return L_up, L_dn, kappa, up, dn


def realize_hamiltonian(pms, n_nodes: int = 56,
                        fidelity_rel: float = FIDELITY_REL,
                        max_iters: int = 14,
                        box: Box | None = None) -> Nonlinearity:
    """Pendulum nonlinearity whose quadrature period maps match the input.

    Accepts one period map or a list for adjacent disk regions, ordered left
    to right. Refused when condition (C) fails on any input; annulus maps
    are out of scope (the shrink construction handles those regions).
    """
    if isinstance(pms, PeriodMap):
        pms = [pms]
    if not pms:
        raise ConstructionError(_MODULE, "realize_hamiltonian",
                                "no period maps given")
    for pm in pms:
        if pm.kind != "punctured_disk":
            raise ConstructionError(
                _MODULE, "realize_hamiltonian",
                "only punctured-disk period maps are realized",
                region=pm.region_id, kind=pm.kind,
            )
        rep = check_condition_C(pm)
        if not rep.holds:
            raise RealizationRefusedError(
                _MODULE, "realize_hamiltonian",
                "condition (C) fails on the input period map",
                region=pm.region_id, min_derivative=rep.min_derivative,
                witness_a=rep.witness_a,
            )
    wells = [_realize_well(pm, n_nodes, fidelity_rel, max_iters) for pm in pms]
    wells.sort(key=lambda w: w.center)
    K = len(wells)
    for j in range(1, K):
        if wells[j].a_rim <= wells[j - 1].m_rim:
            raise ConstructionError(
                _MODULE, "realize_hamiltonian",
                "realized wells overlap; the input regions are not disjoint "
                "on the u-axis",
                left=wells[j - 1].m_rim, right=wells[j].a_rim,
            )

    # Saddle levels rise to the single pivot after the first well, then
    # strictly fall; each rim clears its bounding saddles by a positive climb,
    # so no periodic orbit can surround more than one well.
    e = [wl.eps_top for wl in wells]
    rims = [0.0]
    levels = [0.08 * e[0]]
    if K == 1:
        levels.append(0.12 * e[0])
    else:
        levels.append(rims[0] + 0.35 * max(e[0], e[1]))
        for j in range(1, K):
            rims.append(levels[j] - 0.23 * e[j])
            levels.append(rims[j] + 0.08 * e[j])
    lev_scale = max(abs(v) for v in levels) + max(e)
    for i in range(len(levels)):
        for j in range(i + 1, len(levels)):
            if abs(levels[i] - levels[j]) < 1e-9 * lev_scale:
                raise ConstructionError(_MODULE, "realize_hamiltonian",
                                        "assembled saddle levels tie",
                                        levels=levels)
    climbs_L = [levels[j] - rims[j] for j in range(K)]
    climbs_R = [levels[j + 1] - rims[j] for j in range(K)]
    if min(min(climbs_L), min(climbs_R)) <= 0:
        raise ConstructionError(_MODULE, "realize_hamiltonian",
                                "level assembly failed", levels=levels)

    gmax = max(float(np.max(np.abs(wl.g(
        np.linspace(wl.a_rim, wl.m_rim, 256))))) for wl in wells)
    B = 1.5 * gmax
    half_w = max(0.5 * (wl.m_rim - wl.a_rim) for wl in wells)
    kappa_base = max(0.5, gmax / (0.3 * half_w))

    def rim_data(wl):
        d2 = wl.g.derivative()
        return (float(wl.g(wl.a_rim)), float(d2(wl.a_rim)),
                float(wl.g(wl.m_rim)), float(d2(wl.m_rim)))

    gL0, dL0, _, _ = rim_data(wells[0])
    L_dn0, kap_L, par_dn0 = _solve_outer_filler(
        gL0, dL0, -climbs_L[0], -1.0, half_w, kappa_base, saddle_first=True)
    _, _, gRK, dRK = rim_data(wells[-1])
    L_upK, kap_R, par_upK = _solve_outer_filler(
        gRK, dRK, climbs_R[-1], 1.0, half_w, kappa_base, saddle_first=False)
    gaps = []
    for j in range(K - 1):
        _, _, gR, dR = rim_data(wells[j])
        gL, dL, _, _ = rim_data(wells[j + 1])
        L_gap = wells[j + 1].a_rim - wells[j].m_rim
        gaps.append(_solve_gap(gR, dR, gL, dL, climbs_R[j], -climbs_L[j + 1],
                               L_gap, kappa_base))

    s_left = wells[0].a_rim - L_dn0
    s_right = wells[-1].m_rim + L_upK
    span = s_right - s_left
    L_tail = max(2.0, 1.1 * span)

    def tanh_tail(kappa):
        # g = -B tanh(kappa x / B): zero with slope -kappa at x = 0
        def g(x):
            return -B * math.tanh(kappa * x / B)

        def gp(x):
            return -kappa / math.cosh(kappa * x / B) ** 2

        def G(x):
            return -(B * B / kappa) * math.log(math.cosh(kappa * x / B))

        return g, gp, G

    pw = _Piecewise()

    def add_cubic(lo, L, params):
        g, gp, G = _cubic_piece(*params, L)
        pw.add(lo, lo + L, g, gp, G)

    def add_well(wl):
        dspl, spl = wl.g, wl.spline
        d2spl = dspl.derivative()
        lo = wl.a_rim
        pw.add(lo, wl.m_rim,
               lambda x, dspl=dspl, lo=lo: float(dspl(lo + x)),
               lambda x, d2spl=d2spl, lo=lo: float(d2spl(lo + x)),
               lambda x, spl=spl, lo=lo: float(spl(lo + x)) - float(spl(lo)))

    g_t, gp_t, G_t = tanh_tail(kap_L)
    off = L_tail  # local origin at the left box edge, saddle at x = off
    pw.add(s_left - L_tail, s_left,
           lambda x, g=g_t, off=off: g(x - off),
           lambda x, gp=gp_t, off=off: gp(x - off),
           lambda x, G=G_t, off=off: G(x - off) - G(-off))
    add_cubic(s_left, L_dn0, par_dn0)
    add_well(wells[0])
    cursor = wells[0].m_rim
    for j in range(K - 1):
        L_up, L_dn, _, par_up, par_dn = gaps[j]
        add_cubic(cursor, L_up, par_up)
        add_cubic(cursor + L_up, L_dn, par_dn)
        nxt = wells[j + 1]
        if abs(cursor + L_up + L_dn - nxt.a_rim) > 1e-7 * span:
            raise ConstructionError(_MODULE, "realize_hamiltonian",
                                    "gap pieces do not tile the gap", gap=j)
        add_well(nxt)
        cursor = nxt.m_rim
    add_cubic(cursor, L_upK, par_upK)
    g_t2, gp_t2, G_t2 = tanh_tail(kap_R)
    pw.add(s_right, s_right + L_tail, g_t2, gp_t2, G_t2)
    pw.finalize()

    u_lo, u_hi = float(pw.edges[0]), float(pw.edges[-1])
    if box is not None:
        u_lo = min(u_lo, box.u_min)
        u_hi = max(u_hi, box.u_max)
    Gs = pw.G(np.linspace(u_lo, u_hi, 400))
    p_max = 1.3 * math.sqrt(2.0 * max(float(np.max(Gs) - np.min(Gs)), 1e-9))
    if box is not None:
        p_max = max(p_max, box.p_max)
    out_box = Box(u_min=u_lo, u_max=u_hi, p_min=-p_max, p_max=p_max)
    realized = CallableHamiltonian(
        g=lambda u: np.asarray(pw.g(u)),
        box=out_box,
        g_prime=lambda u: np.asarray(pw.g_prime(u)),
        antiderivative=lambda u: np.asarray(pw.G(u)),
        sign_threshold_K0=1.02 * max(abs(s_left), abs(s_right)),
    )
    realized.realization_fidelity = max(wl.fidelity for wl in wells)
    realized.realization_wells = wells
    return realized


# ---------------------------------------------------------------------------
# Homotopy stages
# ---------------------------------------------------------------------------


def pendulum_homotopy(f1: Nonlinearity, g: Nonlinearity, tau: float) -> Nonlinearity:
    """(1 - tau) f1 + tau g."""
    return ConvexCombination(f1, g, tau)


@dataclass
class HomotopyStage:
    kind: str
    family: object  # tau -> Nonlinearity
    hyperbolicity_log: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"kind": self.kind, "log": list(self.hyperbolicity_log)}


def fingerprint(f: Nonlinearity, n_samples: int = 56) -> dict:
    """Equilibrium count, wave count, lap signature, hyperbolicity margins."""
    portrait = build_portrait(f)
    orbits = []
    min_tp = math.inf
    for reg in portrait.regions:
        pm = sample_map(f, reg, n_samples=n_samples)
        obs = find_periodic_orbits(pm)
        orbits.extend(obs)
        width = pm.domain[1] - pm.domain[0]
        h = 1e-6 * width
        for o in obs:
            tp = abs((pm.evaluator(o.a + h) - pm.evaluator(o.a - h)) / (2 * h))
            min_tp = min(min_tp, tp)
    sig = format_signature(build_signature(portrait, orbits))
    min_fu = min(abs(float(e.f_u)) for e in portrait.equilibria)
    return {
        "n": len(portrait.equilibria),
        "q": len(orbits),
        "signature": sig,
        "parenthesis": portrait.parenthesis,
        "min_T_prime": None if min_tp is math.inf else float(min_tp),
        "min_f_u": float(min_fu),
    }


def audit_stage(stage: HomotopyStage, tau_grid=None,
                n_samples: int = 48) -> HomotopyStage:
    """Fill the hyperbolicity log; the fingerprint must stay constant."""
    if tau_grid is None:
        tau_grid = np.linspace(0.0, 1.0, 7)
    ref = None
    for tau in tau_grid:
        f_tau = stage.family(float(tau))
        fp = fingerprint(f_tau, n_samples=n_samples)
        fp["tau"] = float(tau)
        stage.hyperbolicity_log.append(fp)
        if fp["min_f_u"] < HYP_MARGIN_F_U or (
            fp["min_T_prime"] is not None
            and fp["min_T_prime"] < HYP_MARGIN_T_PRIME
        ):
            raise StageError(_MODULE, "collective_homotopy",
                             "hyperbolicity margin collapsed",
                             kind=stage.kind, tau=float(tau),
                             min_T_prime=fp["min_T_prime"],
                             min_f_u=fp["min_f_u"])
        key = (fp["n"], fp["q"], fp["signature"])
        if ref is None:
            ref = key
        elif key != ref:
            raise StageError(_MODULE, "collective_homotopy",
                             "lap structure changed along the stage",
                             kind=stage.kind, tau=float(tau),
                             expected=list(ref), found=list(key))
    return stage


def _scaling_plan(f: Nonlinearity):
    """Per-region scale functions wherever condition (C) fails."""
    portrait = build_portrait(f)
    plan = []
    for reg in portrait.regions:
        if reg.kind != "punctured_disk":
            raise ConstructionError(_MODULE, "collective_homotopy",
                                    "annulus regions are out of scope for "
                                    "the realization pipeline", region=reg.id)
        pm = sample_map(f, reg, n_samples=120)
        rep = check_condition_C(pm)
        if not rep.holds:
            plan.append((reg, make_scale(pm)))
    return portrait, plan


def _apply_plan(f: Nonlinearity, plan, tau: float) -> Nonlinearity:
    out = f
    for reg, omega in plan:
        out = OrbitScaled(out, omega, reg, tau)
    return out


def _is_pendulum(f: Nonlinearity) -> bool:
    return isinstance(f, HamiltonianNonlinearity)


def collective_homotopy(f0: Nonlinearity, f1: Nonlinearity,
                        tau_samples: int = 7, audit: bool = True):
    """Stage list joining f0 to f1: scale, realize, pendulum bridge, and the
    reverses, each stage monitored for constant lap structure."""
    fp0 = fingerprint(f0)
    fp1 = fingerprint(f1)
    if not signatures_equal(fp0["signature"], fp1["signature"]):
        raise SignatureMismatchError(
            _MODULE, "collective_homotopy",
            "endpoints carry different lap signatures, so no admissible "
            "homotopy exists under the connection-preservation theorem",
            sig0=fp0["signature"], sig1=fp1["signature"],
        )
    grid = np.linspace(0.0, 1.0, tau_samples)
    stages = []

    def realize_endpoint(f):
        portrait, plan = _scaling_plan(f)
        scaled = _apply_plan(f, plan, 1.0)
        portrait_s = build_portrait(scaled) if plan else portrait
        pms = [sample_map(scaled, reg, n_samples=120)
               for reg in portrait_s.regions]
        g = realize_hamiltonian(pms, box=f.box)
        return plan, scaled, g

    if not _is_pendulum(f0):
        plan0, f0_scaled, g0 = realize_endpoint(f0)
        if plan0:
            stages.append(HomotopyStage(
                kind="hamiltonian_realization",
                family=lambda t, f=f0, p=plan0: _apply_plan(f, p, t)))
        stages.append(HomotopyStage(
            kind="pendulum_realization",
            family=lambda t, a=f0_scaled, b=g0: ConvexCombination(a, b, t)))
    else:
        g0 = f0
    if not _is_pendulum(f1):
        plan1, f1_scaled, g1 = realize_endpoint(f1)
    else:
        g1 = f1
    stages.append(HomotopyStage(
        kind="pendulum_to_pendulum",
        family=lambda t, a=g0, b=g1: ConvexCombination(a, b, t)))
    if not _is_pendulum(f1):
        stages.append(HomotopyStage(
            kind="reverse_pendulum",
            family=lambda t, a=g1, b=f1_scaled: ConvexCombination(a, b, t)))
        if plan1:
            stages.append(HomotopyStage(
                kind="reverse_hamiltonian",
                family=lambda t, f=f1, p=plan1: _apply_plan(f, p, 1.0 - t)))
    if audit:
        for st in stages:
            audit_stage(st, tau_grid=grid)
    return stages


def transcript_dict(stages, f0: Nonlinearity | None = None,
                    f1: Nonlinearity | None = None) -> dict:
    """JSON-ready transcript of a collective homotopy run."""
    out = {"stages": [st.as_dict() for st in stages]}
    if f0 is not None:
        out["start"] = f0.describe()
    if f1 is not None:
        out["end"] = f1.describe()
    return out

"""Period map T(a) over cyclicity regions: quadrature, shooting, condition (C).

Orbits are parameterized by their minimal u-value a. Disks sample
a in (u_minus, center); annuli sample a in (u_minus, b_minus) and are
computed by shooting only, since the quadrature turning-point logic
assumes a single well.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import IntegrationWarning, quad, solve_ivp
from scipy.optimize import brentq

from .errors import (
    DataError,
    HyperbolicityError,
    NearSeparatrixError,
    RegionMembershipError,
    UsageError,
    VariantError,
)
from .model import Nonlinearity

_MODULE = "period_map"

QUAD_ABS_TOL = 2e-12
SHOOT_RTOL = 1e-11
SHOOT_ATOL = 1e-12
EVENT_TIME_TOL = 1e-10
CONDITION_C_TOL = 1e-8
RESONANCE_TOL = 1e-7
BOUNDARY_CUTOFF = 1e-6
SHOOT_T_MAX = 500.0


@dataclass
class PeriodMap:
    region_id: int
    kind: str
    domain: tuple
    samples: np.ndarray  # rows (a, T)
    blowup_end: float
    blowup_end_inner: float | None = None
    center_limit: float | None = None
    center_k: int | None = None
    center_u: float | None = None
    # far edge of the region across the center from the labels; bounds the
    # turning-point search away from neighboring wells
    u_plus: float | None = None
    evaluator: object = field(default=None, repr=False)
    f: object = field(default=None, repr=False)

    def csv_rows(self):
        for a, T in self.samples:
            yield self.region_id, float(a), float(T)

    def as_dict(self) -> dict:
        return {
            "region_id": self.region_id,
            "kind": self.kind,
            "domain": list(self.domain),
            "n_samples": int(len(self.samples)),
            "center_limit": self.center_limit,
            "center_k": self.center_k,
            "blowup_end": self.blowup_end,
        }


@dataclass(frozen=True)
class ConditionCReport:
    region_id: int
    holds: bool
    min_derivative: float
    witness_a: float
    # bisection boundary for the plateau value of a scale function; only
    # populated by the post-scaling check, None elsewhere
    admissible_delta: float | None = None

    def as_dict(self) -> dict:
        return {
            "region_id": self.region_id,
            "holds": self.holds,
            "min_derivative": self.min_derivative,
            "witness_a": self.witness_a,
            "admissible_delta": self.admissible_delta,
        }


def _mate(f, a, E, direction, center_hint=None, far_bound=None):
    """Far turning point: first u past the well with axis integral back at E.

    With `far_bound` (the region edge across the center) the crossing is
    bracketed on the monotone stretch between center and edge, which stays
    correct arbitrarily close to the boundary level. Without it, a fine scan
    finds the first crossing; over-level windows narrower than the scan grid
    are then out of reach.
    """
    G = lambda u: float(f.axis_integral(u)) - E
    edge = f.box.u_max if direction > 0 else f.box.u_min

    if far_bound is not None and center_hint is not None:
        g_far = G(far_bound)
        if G(center_hint) < 0.0 <= g_far:
            return brentq(G, min(center_hint, far_bound),
                          max(center_hint, far_bound),
                          xtol=4e-16, rtol=8.9e-16)
        # level sits outside the region; fall through to the scan

    xs = np.linspace(a + direction * 1e-9, edge - direction * 1e-9, 2000)
    gv = np.array([G(x) for x in xs])
    idx = np.nonzero((gv[:-1] < 0) & (gv[1:] >= 0))[0]
    if idx.size == 0:
        raise RegionMembershipError(
            _MODULE, "period_quadrature",
            "turning points not bracketed inside the box",
            a=a, level=E,
        )
    i = idx[0]
    return brentq(G, xs[i], xs[i + 1], xtol=4e-16, rtol=8.9e-16)


def period_quadrature(f: Nonlinearity, a: float, center: float | None = None,
                      far_bound: float | None = None) -> float:
    """T(a) by endpoint-singularity-aware quadrature on the orbit through (a, 0).

    Needs an integrable variant (first integral along the axis). The

    inverse-square-root endpoint behavior is handled by an algebraic-weight
    rule, so only the smooth factor is evaluated.
    """
    fa = float(f._eval(a, 0.0))
    if fa == 0.0:
        raise RegionMembershipError(_MODULE, "period_quadrature",
                                    "a is an equilibrium", a=a)
    direction = 1.0 if fa < 0.0 else -1.0
    E = float(f.axis_integral(a))
    m = _mate(f, a, E, direction, center_hint=center, far_bound=far_bound)
    u_lo, u_hi = (a, m) if direction > 0 else (m, a)

    dd = getattr(f, "second_divided_difference", None)
    if dd is not None:
        # factored form 2*(level - G(u)) = 2*(u-lo)*(hi-u)*G[lo,u,hi]: the
        # smooth factor never suffers endpoint cancellation
        def w(u):
            g2 = float(dd(u_lo, u_hi, u))
            return 1.0 / math.sqrt(2.0 * g2) if g2 > 0.0 else 0.0
    else:
        # clamp off the last 1e-8 of the interval: there the smooth factor is
        # a 0/0 ratio drowned in rounding noise, its true variation O(delta)
        delta = 1e-8 * (u_hi - u_lo)

        def w(u):
            u = min(max(u, u_lo + delta), u_hi - delta)
            p2 = float(f.p_squared_on_orbit(u, E))
            r = (u - u_lo) * (u_hi - u) / p2 if p2 > 0 else 0.0
            return math.sqrt(max(r, 0.0))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntegrationWarning)
        val, _ = quad(w, u_lo, u_hi, weight="alg", wvar=(-0.5, -0.5),
                      epsabs=QUAD_ABS_TOL / 2.0, epsrel=1e-12, limit=200)
    T = 2.0 * val
    if not (T > 0.0 and np.isfinite(T)):
        raise RegionMembershipError(_MODULE, "period_quadrature",
                                    "quadrature produced a non-positive period",
                                    a=a, T=T)
    return T


def shoot_half(f: Nonlinearity, a: float, t_max: float = SHOOT_T_MAX):
    """Integrate from (a, 0) to the first return to p = 0; returns (T, mate)."""
    fa = float(f._eval(a, 0.0))
    if fa == 0.0:
        raise RegionMembershipError(_MODULE, "period_shoot",
                                    "a is an equilibrium", a=a)
    s = -np.sign(fa)

    def rhs(t, y):
        return [y[1], -float(f._eval(y[0], y[1]))]

    def ev(t, y):
        return y[1]
    ev.terminal = True
    ev.direction = -s

    sol = solve_ivp(rhs, (0.0, t_max), [a, 0.0], events=[ev],
                    rtol=SHOOT_RTOL, atol=SHOOT_ATOL, method="DOP853",
                    dense_output=False)
    if not sol.t_events[0].size:
        raise NearSeparatrixError(
            _MODULE, "period_shoot",
            "no axis return within the time budget (a too close to a boundary)",
            a=a, t_max=t_max,
        )
    t_half = float(sol.t_events[0][0])
    mate = float(sol.y_events[0][0][0])
    return 2.0 * t_half, mate


def period_shoot(f: Nonlinearity, a: float, t_max: float = SHOOT_T_MAX) -> float:
    T, _ = shoot_half(f, a, t_max=t_max)
    return T


def _center_frequency_period(f, e):
    fu = float(f.f_u(e, 0.0))
    if fu <= 0:
        return None
    return 2.0 * math.pi / math.sqrt(fu)


def _is_integrable(f) -> bool:
    try:
        f.axis_integral(0.5 * (f.box.u_min + f.box.u_max))
        return True
    except VariantError:
        return False
    except Exception:
        return True


def sample_map(f: Nonlinearity, region, n_samples: int = 160,
               boundary_cutoff: float = BOUNDARY_CUTOFF,
               resonance_tol: float = RESONANCE_TOL) -> PeriodMap:
    """Adaptively sample T over the region's min-value domain.

    Densifies where the map changes fastest; for disks the center limit is
    Richardson-extrapolated from four amplitudes, checked against the
    linearization, and bracketed per eq-centers: T(e) in (2pi/k, 2pi/(k-1)).
    """
    is_disk = region.kind == "punctured_disk"
    if is_disk:
        lo, hi = region.u_minus, region.center_u
    else:
        lo, hi = region.u_minus, region.b_minus
    width = hi - lo
    if not (width > 0):
        raise UsageError(_MODULE, "sample_map", "empty region domain",
                         lo=lo, hi=hi)
    cut = max(boundary_cutoff * width, 1e-12)
    a_lo = lo + cut
    a_hi = hi - (0.01 * width if is_disk else cut)

    use_quadrature = _is_integrable(f)
    # mate bracket: a u-value strictly below every orbit level on this side,
    # paired with the region edge; for annuli the inner-boundary extreme sits
    # below all annulus levels and the outer wall beyond it is monotone
    center_hint = region.center_u if is_disk else region.b_plus
    far_edge = region.u_plus
    if use_quadrature:
        def T_of(a):
            return period_quadrature(f, a, center=center_hint, far_bound=far_edge)
    else:
        def T_of(a):
            return period_shoot(f, a)

    n0 = max(12, n_samples // 3)
    a_vals = list(np.linspace(a_lo, a_hi, n0))
    T_vals = [T_of(a) for a in a_vals]
    while len(a_vals) < n_samples:
        jumps = [abs(T_vals[i + 1] - T_vals[i]) * (1.0 + (a_vals[i + 1] - a_vals[i]) / width)
                 for i in range(len(a_vals) - 1)]
        i = int(np.argmax(jumps))
        mid = 0.5 * (a_vals[i] + a_vals[i + 1])
        a_vals.insert(i + 1, mid)
        T_vals.insert(i + 1, T_of(mid))
    samples = np.column_stack([a_vals, T_vals])

    if np.any(samples[:, 1] <= 0):
        raise DataError(_MODULE, "sample_map", "non-positive period sample")

    center_limit = None
    center_k = None
    degenerate_center = False
    if is_disk:
        center_limit, center_k = _center_limit(
            f, region, T_of, width, resonance_tol=resonance_tol
        )
        degenerate_center = center_limit == math.inf

    # a degenerate center has no homoclinic boundary: the blowup sits at the
    # center end instead
    if degenerate_center:
        _check_blowup_window(samples, at_start=False)
        blowup_end = hi
    else:
        _check_blowup_window(samples, at_start=True)
        if not is_disk:
            _check_blowup_window(samples, at_start=False)
        blowup_end = lo

    return PeriodMap(
        region_id=region.id,
        kind=region.kind,
        domain=(lo, hi),
        samples=samples,
        blowup_end=blowup_end,
        blowup_end_inner=None if is_disk or degenerate_center else hi,
        center_limit=center_limit,
        center_k=center_k,
        center_u=region.center_u if is_disk else None,
        u_plus=far_edge,
        evaluator=T_of,
        f=f,
    )


def _check_blowup_window(samples, at_start: bool, window: int = 5):
    # a stiff boundary saddle squeezes the interior minimum against the
    # edge, so only the boundary-most pair is reliably inside the log
    # regime; corrupted edge quadrature shows up as a non-rising edge pair
    Ts = samples[:window, 1] if at_start else samples[-window:, 1][::-1]
    if len(Ts) < 2:
        return
    if Ts[0] <= Ts[1]:
        raise DataError(
            _MODULE, "sample_map",
            "period not blowing up toward the region boundary",
            window=list(map(float, Ts)),
        )


def _center_limit(f, region, T_of, width, resonance_tol):
    e = region.center_u
    fu = float(f.f_u(e, 0.0))
    if fu <= 1e-8:
        # degenerate center: the period diverges at e and no bracket applies
        return math.inf, None
    # keep the probe amplitudes inside the harmonic neighborhood, which
    # shrinks as the center curvature g'(e) fades toward a pitchfork
    dlt = 1e-5 * max(width, 1.0)
    g2 = abs(float(f.f_u(e + dlt, 0.0)) - float(f.f_u(e - dlt, 0.0))) / (2 * dlt)
    h0 = 0.02 * width
    if g2 > 0:
        h0 = min(h0, 0.2 * fu / g2)
    hs = np.array([h0, h0 / 2, h0 / 4, h0 / 8])
    Ts = np.array([T_of(e - h) for h in hs])
    # the amplitude series starts at h^2 but picks up an h^3 term in
    # asymmetric wells, so fit powers {0,2,3,4} instead of assuming evenness
    tau = hs / h0
    M = np.column_stack([np.ones(4), tau ** 2, tau ** 3, tau ** 4])
    T0 = float(np.linalg.solve(M, Ts)[0])
    lin = _center_frequency_period(f, e)
    if lin is not None and abs(T0 - lin) > 1e-6 * lin:
        raise DataError(
            _MODULE, "sample_map",
            "center limit disagrees with the linearization",
            extrapolated=T0, linearized=lin,
        )
    # quadratic tangency: differences must shrink like h^2
    d_big = Ts[0] - T0
    d_small = Ts[1] - T0
    if abs(d_big) > 1e-9 and abs(d_small) > 1e-12:
        ratio = d_big / d_small
        if ratio < 2.7:
            raise DataError(
                _MODULE, "sample_map",
                "period map is not quadratically tangent at the center",
                ratio=float(ratio),
            )
    k_near = 2.0 * math.pi / T0
    k_round = round(k_near)
    if k_round >= 1 and abs(T0 - 2.0 * math.pi / k_round) <= resonance_tol:
        raise HyperbolicityError(
            _MODULE, "sample_map",
            f"center limit hits the 2pi/{k_round} resonance ((H) fails)",
            center=e, T0=T0,
        )
    k = math.ceil(k_near) if k_near > 1.0 else 1
    if k > 1:
        assert 2.0 * math.pi / k < T0 < 2.0 * math.pi / (k - 1)
    return T0, k


def check_condition_C(pm: PeriodMap, tolerance: float = CONDITION_C_TOL) -> ConditionCReport:
    """Finite-difference positivity of d(aT)/da over the samples.

    The label is taken relative to the region center: realizability is
    translation-invariant, and the criterion is stated for a well moved
    to the origin.
    """
    n = len(pm.samples)
    if n < 100:
        raise UsageError(_MODULE, "check_condition_C",
                         "condition (C) needs at least 100 samples", n=n)
    c = float(pm.center_u) if pm.center_u is not None else 0.0
    a = pm.samples[:, 0]
    aT = (a - c) * pm.samples[:, 1]
    d = np.diff(aT) / np.diff(a)
    i = int(np.argmin(d))
    md = float(d[i])
    return ConditionCReport(
        region_id=pm.region_id,
        holds=bool(md > tolerance),
        min_derivative=md,
        witness_a=float(0.5 * (a[i] + a[i + 1])),
    )


def cross_validate(f: Nonlinearity, pm: PeriodMap, n: int = 50, seed: int = 0,
                   rel_tol: float = 1e-6) -> float:
    """Quadrature-vs-shooting agreement on random points; returns worst rel err."""
    rng = np.random.default_rng(seed)
    lo, hi = pm.samples[0, 0], pm.samples[-1, 0]
    worst = 0.0
    for a in rng.uniform(lo + 0.02 * (hi - lo), hi - 0.02 * (hi - lo), size=n):
        Tq = period_quadrature(f, float(a), center=pm.center_u)
        Ts = period_shoot(f, float(a))
        worst = max(worst, abs(Tq - Ts) / Ts)
    if worst > rel_tol:
        raise DataError(_MODULE, "cross_validate",
                        "quadrature and shooting disagree",
                        worst_rel=worst, tol=rel_tol)
    return worst

"""Bifurcation scans of one-parameter reversible families.

A family s -> f^s is probed for changes of the structural fingerprint
(equilibrium count n, wave count q, lap signature).  Every change is
bracketed to width 1e-8 and classified: an equilibrium pair birth is a
pitchfork, a wave birth is a Hopf point where a center frequency crosses
the wave's lap number.  The scan output joins the trivial attractor to
the full one through an ordered event list with per-interval snapshots.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .attractor_graph import attractor_dim, build_graph, classify_elements
from .errors import (ResolutionError, SturmkitError, UnresolvedEventError,
                     UsageError)
from .model import (ConvexCombination, ParametricFamily,
                    PolynomialHamiltonian)
from .period_map import period_shoot, sample_map
from .phase_plane import build_portrait, find_equilibria
from .signature import build_signature, find_periodic_orbits, format_signature

_MODULE = "bifurcation"

TWO_PI = 2.0 * math.pi
S_STAR_TOL = 1e-8
# below this bracket width, census probes sit too close to the degeneracy
# to be trustworthy; sharp scalar dials take over or the event is reported
# unresolved
SPLIT_FLOOR = 1e-6
# jitter offsets for census probes that land on a degenerate family member
_JITTERS = (0.0, 1e-4, -1e-4, 3e-4, -3e-4, 1e-3, -1e-3)
_MAX_WORKERS = 8


# ---------------------------------------------------------------------------
# census


@dataclass
class _Census:
    """Full structural snapshot of one family member."""

    s: float
    f: object
    portrait: object
    orbits: list
    signature: object
    text: str

    @property
    def n(self) -> int:
        return len(self.portrait.equilibria)

    @property
    def q(self) -> int:
        return len(self.orbits)

    @property
    def laps(self) -> tuple:
        return tuple(sorted(o.lap for o in self.orbits))

    def fingerprint(self) -> tuple:
        return (self.n, self.q, self.laps, self.text)


def _census(f, s: float, n_samples: int) -> _Census:
    portrait = build_portrait(f)
    orbits = []
    for reg in portrait.regions:
        pm = sample_map(f, reg, n_samples=n_samples)
        orbits.extend(find_periodic_orbits(pm))
    sig = build_signature(portrait, orbits)
    return _Census(s=s, f=f, portrait=portrait, orbits=orbits,
                   signature=sig, text=format_signature(sig))


def _census_at(family, s: float, n_samples: int, s_min: float, s_max: float):
    """Census with deterministic jitter retries off degenerate members."""
    last = None
    for off in _JITTERS:
        cand = s + off
        if not (s_min <= cand <= s_max):
            continue
        try:
            return _census(family(cand), cand, n_samples)
        except SturmkitError as exc:
            last = exc
    raise ResolutionError(
        _MODULE, "scan_family",
        "no analyzable family member near this parameter value; raise "
        "n_coarse or repair the family",
        s=s, cause=str(last),
    )


# ---------------------------------------------------------------------------
# result types


@dataclass
class BifurcationEvent:
    s_lo: float
    s_hi: float
    kind: str  # "pitchfork_saddles" | "pitchfork_centers" | "hopf_wave"
    location: dict
    detail: object  # lap number (hopf_wave) or branch description (pitchforks)
    invariant_gap: float

    @property
    def s_star(self) -> float:
        return 0.5 * (self.s_lo + self.s_hi)

    def as_dict(self) -> dict:
        return {
            "s_star": self.s_star,
            "s_lo": self.s_lo,
            "s_hi": self.s_hi,
            "kind": self.kind,
            "location": dict(self.location),
            "detail": self.detail,
            "invariant_gap": self.invariant_gap,
        }


@dataclass
class IntervalSnapshot:
    s_lo: float
    s_hi: float
    probe_s: float
    n: int
    q: int
    signature: object
    text: str
    graph: object = field(default=None, repr=False)
    dim: int | None = None

    def as_dict(self) -> dict:
        return {
            "s_lo": self.s_lo,
            "s_hi": self.s_hi,
            "probe_s": self.probe_s,
            "n": self.n,
            "q": self.q,
            "signature": self.text,
            "attractor_dim": self.dim,
        }


@dataclass
class BifurcationDiagram:
    family_name: str
    events: list
    snapshots: list

    def as_dict(self) -> dict:
        return {
            "family": self.family_name,
            "events": [e.as_dict() for e in self.events],
            "intervals": [s.as_dict() for s in self.snapshots],
        }

    def csv_rows(self):
        """Plot-ready staircase of (s, n, q)."""
        for snap in self.snapshots:
            yield (snap.s_lo, snap.n, snap.q)
            yield (snap.s_hi, snap.n, snap.q)


def export_json(diagram: BifurcationDiagram) -> dict:
    return diagram.as_dict()


# ---------------------------------------------------------------------------
# sharp scalar dials


class _NeedSplit(Exception):
    """Internal: bracket shape not refinable by a sharp dial; bisect census."""


def _real_roots(f, lo: float, hi: float, derivative: bool = False):
    """Real roots of g (or g') on [lo, hi]; stays sharp at double roots."""
    if isinstance(f, PolynomialHamiltonian):
        poly = f._dpoly if derivative else f._poly
        rts = np.polynomial.Polynomial(poly.coef).roots()
    else:
        base = (lambda u: f.f_u(u, np.zeros_like(u))) if derivative \
            else (lambda u: f._eval(u, np.zeros_like(u)))
        cheb = np.polynomial.chebyshev.Chebyshev.interpolate(
            lambda u: np.asarray(base(u), dtype=float), 128, domain=[lo, hi])
        rts = cheb.roots()
    if len(rts) == 0:
        return []
    rts = np.atleast_1d(rts)
    real = rts[np.abs(rts.imag) <= 1e-9].real
    return sorted(float(r) for r in real if lo <= r <= hi)


def _track_center(f, c_ref: float, width: float) -> float:
    """Center equilibrium of f nearest to c_ref, by local root hunt."""
    w = width
    for _ in range(3):
        us = np.linspace(c_ref - w, c_ref + w, 801)
        vals = np.asarray(f._eval(us, np.zeros_like(us)), dtype=float)
        hits = []
        for i in range(len(us) - 1):
            if vals[i] == 0.0:
                hits.append(us[i])
            elif vals[i] * vals[i + 1] < 0.0:
                hits.append(brentq(lambda x: float(f._eval(x, 0.0)),
                                   us[i], us[i + 1], xtol=1e-14))
        centers = [r for r in hits if float(f.f_u(r, 0.0)) > 0.0]
        if centers:
            return min(centers, key=lambda r: abs(r - c_ref))
        w *= 2.0
    raise ResolutionError(
        _MODULE, "scan_family", "lost track of the host center while "
        "refining a wave-birth event", c_ref=c_ref,
    )


# ---------------------------------------------------------------------------
# candidate extraction


def _match_extra(new_vals: list, old_vals: list, k: int):
    """Indices of the k extra entries in new_vals (minimal-cost deletion)."""
    best, best_cost = None, None
    for combo in combinations(range(len(new_vals)), k):
        rest = [v for i, v in enumerate(new_vals) if i not in combo]
        cost = sum(abs(r - o) for r, o in zip(rest, old_vals))
        if best_cost is None or cost < best_cost:
            best, best_cost = combo, cost
    return best


def _pitchfork_candidate(A: _Census, B: _Census):
    """Window + born-pair kinds for a single equilibrium-pair birth."""
    born, base = (B, A) if B.n > A.n else (A, B)
    new_eq = born.portrait.equilibria
    old_us = [e.u for e in base.portrait.equilibria]
    i, j = _match_extra([e.u for e in new_eq], old_us, 2)
    pair = (new_eq[i], new_eq[j])
    kinds = {pair[0].kind, pair[1].kind}
    if len(kinds) != 1:
        # born pair sampled inside a root-exchange microwindow; a census
        # split moves the endpoint off it
        raise _NeedSplit
    kind = "pitchfork_saddles" if kinds == {"saddle"} else "pitchfork_centers"
    u1, u2 = sorted((pair[0].u, pair[1].u))
    mid, half = 0.5 * (u1 + u2), 0.5 * (u2 - u1)
    others = [e.u for idx, e in enumerate(new_eq) if idx not in (i, j)
              and not u1 < e.u < u2]
    pad = 2.2
    for u in others:
        gap = abs(u - mid) / max(half, 1e-300)
        if gap <= 1.2:
            raise _NeedSplit
        pad = min(pad, 0.5 * (1.2 + gap))
    box = born.f.box
    lo = max(mid - pad * half, box.u_min)
    hi = min(mid + pad * half, box.u_max)
    return kind, lo, hi


@dataclass
class _HopfCandidate:
    lap: int
    region_kind: str
    region_center: float | None
    a_born: float
    born_pair_a: tuple | None = None  # set when merged into a fold pair


def _hopf_candidates(A: _Census, B: _Census):
    dq = B.q - A.q
    if dq == 0:
        return []
    if abs(dq) > 2:
        raise _NeedSplit
    born, base = (B, A) if dq > 0 else (A, B)
    new = sorted(born.orbits, key=lambda o: o.a)
    old = sorted(base.orbits, key=lambda o: o.a)
    picks = _match_extra([o.a for o in new], [o.a for o in old], abs(dq))
    cands = []
    for idx in picks:
        o = new[idx]
        reg = born.portrait.region(o.region_id)
        cands.append(_HopfCandidate(
            lap=o.lap, region_kind=reg.kind, region_center=reg.center_u,
            a_born=o.a,
        ))
    if len(cands) == 2 and cands[0].lap == cands[1].lap and \
            new[picks[0]].region_id == new[picks[1]].region_id:
        # one fold pair or two sequential crossings of the same level; a
        # census split separates sequential ones, so defer until exhausted
        raise _NeedSplit
    return cands


def _candidate_kinds(A: _Census, B: _Census) -> list:
    kinds = []
    if B.n != A.n:
        kinds.append("pitchfork_saddles | pitchfork_centers")
    dq = abs(B.q - A.q)
    kinds.extend(["hopf_wave"] * max(dq, 1 if B.text != A.text and not kinds
                                     else dq))
    return kinds


# ---------------------------------------------------------------------------
# refinement


def _refine_pitchfork(family, A: _Census, B: _Census, cand) -> BifurcationEvent:
    kind, w_lo, w_hi = cand

    def count(s: float) -> int:
        return len(_real_roots(family(s), w_lo, w_hi))

    c_lo, c_hi = count(A.s), count(B.s)
    if c_lo == c_hi:
        raise _NeedSplit
    lo, hi = A.s, B.s
    while hi - lo > S_STAR_TOL:
        mid = 0.5 * (lo + hi)
        if count(mid) == c_lo:
            lo = mid
        else:
            hi = mid
    s_star = 0.5 * (lo + hi)
    f_star = family(s_star)
    crits = _real_roots(f_star, w_lo, w_hi, derivative=True)
    if crits:
        u_deg = min(crits, key=lambda c: abs(float(f_star._eval(c, 0.0))))
    else:
        us = np.linspace(w_lo, w_hi, 2001)
        vals = np.abs(np.asarray(f_star._eval(us, np.zeros_like(us))))
        u_deg = float(us[int(np.argmin(vals))])
    gap = abs(float(f_star.f_u(u_deg, 0.0)))
    side = "saddle" if kind == "pitchfork_saddles" else "center"
    return BifurcationEvent(
        s_lo=lo, s_hi=hi, kind=kind,
        location={"type": "equilibrium", "u": u_deg,
                  "g_value": float(f_star._eval(u_deg, 0.0))},
        detail=f"{side} pair born near u = {u_deg:.6g}",
        invariant_gap=gap,
    )


def _refine_hopf(family, A: _Census, B: _Census,
                 cand: _HopfCandidate) -> BifurcationEvent:
    if cand.region_center is None:
        raise _NeedSplit
    box = family(A.s).box
    box_w = box.u_max - box.u_min
    hunt = 0.02 * box_w
    try:
        c_a = _track_center(family(A.s), cand.region_center, hunt)
        c_b = _track_center(family(B.s), cand.region_center, hunt)
    except ResolutionError:
        # the host center does not span the bracket (it is itself born
        # inside); split so the pitchfork separates out first
        raise _NeedSplit
    c_ref = 0.5 * (c_a + c_b)
    width = max(hunt, 2.0 * abs(c_b - c_a))
    ell = cand.lap

    def dial(s: float):
        f = family(s)
        c = _track_center(f, c_ref, width)
        fu = float(f.f_u(c, 0.0))
        if fu <= 0.0:
            raise ResolutionError(
                _MODULE, "scan_family",
                "tracked center lost hyperbolic sign during refinement",
                s=s, u=c)
        return math.sqrt(fu) - ell, c

    d_lo, _ = dial(A.s)
    d_hi, _ = dial(B.s)
    if d_lo == 0.0 or d_hi == 0.0 or (d_lo > 0) == (d_hi > 0):
        raise _NeedSplit
    lo, hi = A.s, B.s
    while hi - lo > S_STAR_TOL:
        mid = 0.5 * (lo + hi)
        d_mid, _ = dial(mid)
        if d_mid == 0.0:
            lo = hi = mid
            break
        if (d_mid > 0) == (d_lo > 0):
            lo = mid
        else:
            hi = mid
    s_star = 0.5 * (lo + hi)
    d_star, c_star = dial(s_star)
    omega = d_star + ell
    gap = abs(TWO_PI / omega - TWO_PI / ell)
    return BifurcationEvent(
        s_lo=lo, s_hi=min(hi, lo + S_STAR_TOL), kind="hopf_wave",
        location={"type": "center", "u": float(c_star)},
        detail=ell, invariant_gap=gap,
    )


def _refine_hopf_fold(family, A: _Census, B: _Census) -> BifurcationEvent:
    """Tangential birth of a wave pair at a period-map fold."""
    born = B if B.q > A.q else A
    other = A if born is B else B
    picks = _match_extra([o.a for o in sorted(born.orbits, key=lambda o: o.a)],
                         [o.a for o in sorted(other.orbits, key=lambda o: o.a)],
                         2)
    pair = [sorted(born.orbits, key=lambda o: o.a)[i] for i in picks]
    ell = pair[0].lap
    a_mid = 0.5 * (pair[0].a + pair[1].a)
    r = max(2.0 * abs(pair[1].a - pair[0].a),
            0.01 * (born.f.box.u_max - born.f.box.u_min))

    def dial(s: float):
        f = family(s)
        res = minimize_scalar(lambda a: period_shoot(f, a),
                              bounds=(a_mid - r, a_mid + r),
                              method="bounded",
                              options={"xatol": 1e-10})
        return float(res.fun) - TWO_PI / ell, float(res.x)

    d_lo, _ = dial(A.s)
    d_hi, _ = dial(B.s)
    if (d_lo > 0) == (d_hi > 0):
        raise _NeedSplit
    lo, hi = A.s, B.s
    while hi - lo > S_STAR_TOL:
        mid = 0.5 * (lo + hi)
        d_mid, _ = dial(mid)
        if (d_mid > 0) == (d_lo > 0):
            lo = mid
        else:
            hi = mid
    s_star = 0.5 * (lo + hi)
    d_star, a_star = dial(s_star)
    return BifurcationEvent(
        s_lo=lo, s_hi=hi, kind="hopf_wave",
        location={"type": "wave_fold", "a": a_star},
        detail=ell, invariant_gap=abs(d_star),
    )


def _sharp_events(family, A: _Census, B: _Census, exhausted: bool) -> list:
    dn = B.n - A.n
    dq = B.q - A.q
    events = []
    if dn != 0:
        if abs(dn) != 2:
            raise _NeedSplit
        events.append(_refine_pitchfork(family, A, B,
                                        _pitchfork_candidate(A, B)))
    if dq != 0:
        try:
            cands = _hopf_candidates(A, B)
        except _NeedSplit:
            if exhausted and dn == 0 and abs(dq) == 2:
                return [_refine_hopf_fold(family, A, B)]
            raise
        for cand in cands:
            events.append(_refine_hopf(family, A, B, cand))
    if not events:
        # signature text changed with n, q fixed: simultaneous death and
        # birth that census cannot order
        raise _NeedSplit
    events.sort(key=lambda e: e.s_star)
    for e1, e2 in zip(events, events[1:]):
        if e2.s_lo - e1.s_hi < S_STAR_TOL:
            raise UnresolvedEventError(
                _MODULE, "scan_family",
                "two events inside one bracket at the finest resolution",
                s_lo=min(e1.s_lo, e2.s_lo), s_hi=max(e1.s_hi, e2.s_hi),
                candidate_kinds=[e1.kind, e2.kind],
                candidates=[e1.as_dict(), e2.as_dict()],
            )
    return events


def _resolve(family, A: _Census, B: _Census, n_samples: int) -> list:
    width = B.s - A.s
    try:
        return _sharp_events(family, A, B, exhausted=width <= SPLIT_FLOOR)
    except _NeedSplit:
        pass
    if width <= SPLIT_FLOOR:
        raise UnresolvedEventError(
            _MODULE, "scan_family",
            "two events inside one bracket at the finest resolution",
            s_lo=A.s, s_hi=B.s, candidate_kinds=_candidate_kinds(A, B),
        )
    mid = 0.5 * (A.s + B.s)
    pad = 0.2 * width
    M = _census_at(family, mid, n_samples, mid - pad, mid + pad)
    if M.fingerprint() == A.fingerprint():
        return _resolve(family, M, B, n_samples)
    if M.fingerprint() == B.fingerprint():
        return _resolve(family, A, M, n_samples)
    return (_resolve(family, A, M, n_samples)
            + _resolve(family, M, B, n_samples))


# ---------------------------------------------------------------------------
# public operations


def scan_family(family, n_coarse: int = 24, n_samples: int = 48,
                with_graphs: bool = True) -> BifurcationDiagram:
    """Locate and classify every structural change along the family."""
    if n_coarse < 2:
        raise UsageError(_MODULE, "scan_family", "n_coarse must be >= 2",
                         n_coarse=n_coarse)
    name = getattr(family, "name", "family")
    grid = np.linspace(0.0, 1.0, n_coarse + 1)
    spacing = 1.0 / n_coarse

    def endpoint(s: float) -> _Census:
        try:
            return _census(family(s), s, n_samples)
        except SturmkitError as exc:
            raise UsageError(
                _MODULE, "scan_family",
                "family endpoint is not structurally stable",
                s=s, cause=str(exc),
            ) from exc

    def interior(s: float) -> _Census:
        return _census_at(family, s, n_samples,
                          s - 0.3 * spacing, s + 0.3 * spacing)

    with ThreadPoolExecutor(max_workers=min(_MAX_WORKERS, n_coarse + 1)) as ex:
        head = ex.submit(endpoint, 0.0)
        tail = ex.submit(endpoint, 1.0)
        mids = list(ex.map(interior, grid[1:-1]))
        probes = [head.result()] + mids + [tail.result()]

    brackets = [(A, B) for A, B in zip(probes, probes[1:])
                if A.fingerprint() != B.fingerprint()]
    events = []
    with ThreadPoolExecutor(max_workers=min(_MAX_WORKERS,
                                            max(1, len(brackets)))) as ex:
        for chunk in ex.map(
                lambda ab: _resolve(family, ab[0], ab[1], n_samples),
                brackets):
            events.extend(chunk)
    events.sort(key=lambda e: e.s_star)

    bounds = [0.0] + [e.s_star for e in events] + [1.0]
    snapshots = []
    for s_lo, s_hi in zip(bounds, bounds[1:]):
        inside = [c for c in probes if s_lo + S_STAR_TOL < c.s < s_hi - S_STAR_TOL]
        mid = 0.5 * (s_lo + s_hi)
        if inside:
            cen = min(inside, key=lambda c: abs(c.s - mid))
        else:
            cen = _census_at(family, mid, n_samples,
                             s_lo + 0.1 * (s_hi - s_lo),
                             s_hi - 0.1 * (s_hi - s_lo))
        graph = dim = None
        if with_graphs:
            elements = classify_elements(cen.f, cen.portrait, cen.orbits)
            graph = build_graph(elements, cen.portrait)
            dim = attractor_dim(graph)
        snapshots.append(IntervalSnapshot(
            s_lo=s_lo, s_hi=s_hi, probe_s=cen.s, n=cen.n, q=cen.q,
            signature=cen.signature, text=cen.text, graph=graph, dim=dim,
        ))
    return BifurcationDiagram(family_name=name, events=events,
                              snapshots=snapshots)


def reduction_path(f1) -> ParametricFamily:
    """Reversible family joining a trivial nonlinearity (s=0) to f1 (s=1)."""
    hook = getattr(f1, "family_hook", None)
    if hook is not None:
        from . import catalog
        fam = catalog.family(hook[0], **hook[1])
        _assert_same_endpoint(fam(1.0), f1)
        return fam
    eqs = find_equilibria(f1)
    if len(eqs) == 1:
        return ParametricFamily(lambda s: f1, "constant", {})
    if isinstance(f1, PolynomialHamiltonian):
        coeffs = np.array(f1.coeffs, dtype=float)
        box = f1.box

        def build(s: float):
            cs = s * coeffs.copy()
            if len(cs) < 2:
                cs = np.pad(cs, (0, 2 - len(cs)))
            cs[1] -= (1.0 - s)
            return PolynomialHamiltonian(cs, box)
    else:
        f0 = PolynomialHamiltonian([0.0, -1.0], f1.box)

        def build(s: float):
            return ConvexCombination(f0, f1, s)

    fam = ParametricFamily(build, "reduction",
                           {"target": getattr(f1, "variant", "unknown")})
    for s in (0.0, 0.37, 1.0):
        assert fam(s).is_reversible, "reduction synthesized a non-reversible member"
    return fam


def _assert_same_endpoint(g1, f1) -> None:
    us = np.linspace(f1.box.u_min, f1.box.u_max, 33)
    z = np.zeros_like(us)
    a = np.asarray(f1._eval(us, z), dtype=float)
    b = np.asarray(g1._eval(us, z), dtype=float)
    scale = 1.0 + float(np.max(np.abs(a)))
    assert float(np.max(np.abs(a - b))) <= 1e-9 * scale, \
        "family hook does not reproduce the analyzed nonlinearity at s=1"

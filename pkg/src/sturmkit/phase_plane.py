"""Phase portrait of v'' + f(v, v') = 0: equilibria, separatrices, regions.

Cyclicity regions are discovered through homoclinic loops: every region is
bounded on the outside by exactly one saddle loop (or by a heteroclinic pair
when the two outermost saddle levels tie). Integrable variants locate loop
extremes on level sets of the first integral; general reversible variants
fall back to separatrix tracing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import (
    DegeneracyError,
    HyperbolicityError,
    StructuralError,
    TracingError,
    VariantError,
)
from .model import Nonlinearity

_MODULE = "phase_plane"

HYPERBOLICITY_THRESHOLD = 1e-8
ROOT_REFINE_TOL = 1e-12
TIE_TOL = 1e-9
TRACE_OFFSET = 1e-6
TRACE_RTOL = 1e-10


@dataclass(frozen=True)
class OdeEquilibrium:
    u: float
    kind: str  # "saddle" | "center"
    f_u: float
    index_in_order: int


@dataclass
class CyclicityRegion:
    id: int
    kind: str  # "punctured_disk" | "annulus"
    u_minus: float
    u_plus: float
    orientation: str  # "left" | "right"
    boundary_saddle: int
    enclosed_centers: list
    enclosed_equilibria: list
    children: list = field(default_factory=list)
    parent: int | None = None
    center_u: float | None = None  # disks
    inner_saddle: int | None = None  # annuli
    b_minus: float | None = None
    b_plus: float | None = None
    level_outer: float | None = None
    level_inner: float | None = None
    tie_boundary: bool = False

    def as_dict(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "u_interval": [self.u_minus, self.u_plus],
            "orientation": self.orientation,
            "boundary_saddle": self.boundary_saddle,
            "enclosed_centers": list(self.enclosed_centers),
            "children": list(self.children),
            "inner_saddle": self.inner_saddle,
            "inner_interval": None
            if self.b_minus is None
            else [self.b_minus, self.b_plus],
            "tie_boundary": self.tie_boundary,
        }


@dataclass
class PhasePortrait:
    f: Nonlinearity
    equilibria: list
    regions: list
    separatrices: dict
    parenthesis: str
    pivot_saddle: int | None
    r: int
    K: int

    def region(self, rid: int) -> CyclicityRegion:
        return self.regions[rid]

    def top_regions(self) -> list:
        return [r for r in self.regions if r.parent is None]

    def as_dict(self) -> dict:
        return {
            "equilibria": [
                {"u": e.u, "kind": e.kind, "f_u": e.f_u, "index": e.index_in_order}
                for e in self.equilibria
            ],
            "regions": [r.as_dict() for r in self.regions],
            "parenthesis": self.parenthesis,
            "pivot_saddle": self.pivot_saddle,
            "r": self.r,
            "K": self.K,
        }

    def polyline_rows(self):
        """Yield (saddle_index, loop_index, u, p) rows for CSV export."""
        for sid in sorted(self.separatrices):
            for k, poly in enumerate(self.separatrices[sid]):
                for u, p in np.asarray(poly):
                    yield sid, k, float(u), float(p)


def find_equilibria(f: Nonlinearity, search_interval=None, n_scan: int = 10000):
    """Roots of f(u, 0) on the box interval, classified and order-checked."""
    if search_interval is None:
        w = f.box.u_max - f.box.u_min
        search_interval = (f.box.u_min + 1e-9 * w, f.box.u_max - 1e-9 * w)
    lo, hi = search_interval
    us = np.linspace(lo, hi, n_scan)
    vals = np.asarray(f._eval(us, np.zeros_like(us)), dtype=float)
    roots = []
    for i in range(len(us) - 1):
        a, b = vals[i], vals[i + 1]
        if a == 0.0:
            roots.append(us[i])
        elif a * b < 0.0:
            r = brentq(lambda x: float(f._eval(x, 0.0)), us[i], us[i + 1], xtol=1e-14)
            # derivative polish
            for _ in range(2):
                d = float(f.f_u(r, 0.0))
                if abs(d) > HYPERBOLICITY_THRESHOLD:
                    step = float(f._eval(r, 0.0)) / d
                    if abs(step) < 1e-3:
                        r -= step
            roots.append(r)
    if vals[-1] == 0.0:
        roots.append(us[-1])
    roots = sorted(roots)
    for i in range(len(roots) - 1):
        if roots[i + 1] - roots[i] < 1e-6:
            raise StructuralError(
                _MODULE, "find_equilibria", "two roots within tolerance of each other",
                roots=(roots[i], roots[i + 1]),
            )
    eqs = []
    for idx, r in enumerate(roots):
        d = float(f.f_u(r, 0.0))
        if abs(d) <= HYPERBOLICITY_THRESHOLD:
            raise HyperbolicityError(
                _MODULE, "find_equilibria",
                f"degenerate root at u = {r:.12g} (|f_u| = {abs(d):.3g})",
                root=r, f_u=d,
            )
        eqs.append(OdeEquilibrium(u=r, kind="center" if d > 0 else "saddle", f_u=d,
                                  index_in_order=idx))
    n = len(eqs)
    if n % 2 == 0:
        raise StructuralError(_MODULE, "find_equilibria", "even equilibrium count",
                              count=n)
    for i, e in enumerate(eqs):
        want = "saddle" if i % 2 == 0 else "center"
        if e.kind != want:
            raise StructuralError(
                _MODULE, "find_equilibria",
                "kinds do not alternate saddle/center with saddle endpoints",
                position=i, found=e.kind,
            )
    return eqs


@dataclass
class HomoclinicLoop:
    saddle: int  # equilibrium index
    side: str  # "left" | "right"
    extreme_u: float
    partner_saddle: int | None = None  # heteroclinic pair boundary
    polyline: np.ndarray | None = None

    def interval(self, eqs) -> tuple:
        su = eqs[self.saddle].u
        return (min(su, self.extreme_u), max(su, self.extreme_u))


@dataclass
class SeparatrixTrace:
    saddle: int
    loops: list
    escapes: list  # sides that left the box


def _unstable_mu(f, saddle_u):
    fu = float(f.f_u(saddle_u, 0.0))
    if fu >= 0:
        raise HyperbolicityError(_MODULE, "trace_separatrix",
                                 "not a saddle", u=saddle_u, f_u=fu)
    return math.sqrt(-fu)


def trace_separatrix(f: Nonlinearity, saddle, equilibria=None, t_max=None):
    """Follow both unstable directions of a saddle to closure or escape.

    Returns a SeparatrixTrace whose loops carry the homoclinic extreme
    (a+ / a- or the b's of a figure-infinity pair) and a sampled polyline.
    """
    if not f.is_reversible:
        raise VariantError(_MODULE, "trace_separatrix",
                           "separatrix closure needs reversibility")
    su = saddle.u
    mu = _unstable_mu(f, su)
    if t_max is None:
        t_max = 60.0 + 60.0 / mu
    box = f.box
    loops, escapes = [], []
    others = [e for e in (equilibria or []) if e.kind == "saddle" and e.u != su]

    def rhs(t, y):
        return [y[1], -float(f._eval(y[0], y[1]))]

    for side, s in (("right", 1.0), ("left", -1.0)):
        eps = TRACE_OFFSET * max(1.0, abs(su))
        y0 = [su + s * eps, s * eps * mu]
        # p starts with sign s; the homoclinic return crosses p = 0 downward
        # for s > 0 and upward for s < 0.
        def ev_cross(t, y, s=s):
            return y[1]
        ev_cross.terminal = True
        ev_cross.direction = -s

        def ev_escape(t, y):
            return min(y[0] - box.u_min, box.u_max - y[0],
                       y[1] - box.p_min, box.p_max - y[1])
        ev_escape.terminal = True
        ev_escape.direction = -1.0

        sol = solve_ivp(rhs, (0.0, t_max), y0, events=[ev_cross, ev_escape],
                        rtol=TRACE_RTOL, atol=1e-12, method="DOP853",
                        dense_output=True, max_step=t_max / 50.0)
        if sol.t_events[0].size:
            u_land = float(sol.y_events[0][0][0])
            partner = None
            for o in others:
                if abs(u_land - o.u) < 1e-4 * max(1.0, abs(o.u)):
                    partner = o.index_in_order
            upper = sol.sol(np.linspace(0, sol.t_events[0][0], 400)).T
            poly = np.vstack([upper, upper[::-1] * np.array([1.0, -1.0])])
            loops.append(HomoclinicLoop(saddle=saddle.index_in_order, side=side,
                                        extreme_u=u_land, partner_saddle=partner,
                                        polyline=poly))
        elif sol.t_events[1].size:
            escapes.append(side)
        else:
            # no event: either creeping into another saddle (heteroclinic)
            # or a genuine non-closure
            uf, pf = float(sol.y[0][-1]), float(sol.y[1][-1])
            partner = None
            for o in others:
                if abs(uf - o.u) < 1e-3 * max(1.0, abs(o.u)) and abs(pf) < 1e-3:
                    partner = o.index_in_order
            if partner is not None:
                upper = sol.sol(np.linspace(0, sol.t[-1], 400)).T
                poly = np.vstack([upper, upper[::-1] * np.array([1.0, -1.0])])
                loops.append(HomoclinicLoop(saddle=saddle.index_in_order, side=side,
                                            extreme_u=float((equilibria or [])[partner].u),
                                            partner_saddle=partner, polyline=poly))
            else:
                raise TracingError(
                    _MODULE, "trace_separatrix",
                    "separatrix neither closed nor escaped within budget",
                    saddle=su, side=side, final=(uf, pf), t_max=t_max,
                )
    return SeparatrixTrace(saddle=saddle.index_in_order, loops=loops, escapes=escapes)


def _is_integrable(f: Nonlinearity) -> bool:
    try:
        f.first_integral(0.5 * (f.box.u_min + f.box.u_max), 0.0)
        return True
    except VariantError:
        return False
    except Exception:
        return True


def _axis_levels(f, eqs):
    return np.asarray([float(f.axis_integral(e.u)) for e in eqs])


def _level_loops(f, eqs):
    """Loop extremes from level sets of the axis first integral."""
    levels = _axis_levels(f, eqs)
    scale = max(1.0, float(np.max(np.abs(levels))))
    saddles = [e for e in eqs if e.kind == "saddle"]
    # Morse condition (M): ties only between the two outermost saddles.
    for i, a in enumerate(saddles):
        for b in saddles[i + 1:]:
            if abs(levels[a.index_in_order] - levels[b.index_in_order]) <= TIE_TOL * scale:
                if not (a is saddles[0] and b is saddles[-1]):
                    raise DegeneracyError(
                        _MODULE, "build_portrait",
                        "saddle potential values tie (condition (M) violated)",
                        saddles=(a.u, b.u),
                        levels=(levels[a.index_in_order], levels[b.index_in_order]),
                    )
    tie_outer = (
        len(saddles) >= 2
        and abs(levels[saddles[0].index_in_order] - levels[saddles[-1].index_in_order])
        <= TIE_TOL * scale
    )
    loops = []
    span = eqs[-1].u - eqs[0].u if len(eqs) > 1 else 1.0
    for s in saddles:
        Ls = levels[s.index_in_order]
        for side, sgn in (("right", 1.0), ("left", -1.0)):
            if tie_outer and ((s is saddles[0] and side == "left") or
                              (s is saddles[-1] and side == "right")):
                continue
            if tie_outer and s is saddles[0] and side == "right":
                # heteroclinic pair bounding the whole complex
                loops.append(HomoclinicLoop(saddle=s.index_in_order, side=side,
                                            extreme_u=saddles[-1].u,
                                            partner_saddle=saddles[-1].index_in_order))
                continue
            if tie_outer and s is saddles[-1] and side == "left":
                continue  # mirror of the pair above
            lo = s.u + sgn * 1e-9 * max(1.0, abs(s.u))
            hi = s.u + sgn * 1.5 * span if len(eqs) > 1 else s.u + sgn
            hi = min(hi, f.box.u_max - 1e-9) if sgn > 0 else max(hi, f.box.u_min + 1e-9)
            xs = np.linspace(lo, hi, 4000)
            gv = np.asarray([float(f.axis_integral(x)) for x in xs]) - Ls
            # skip the plateau at the saddle itself
            start = 1
            while start < len(xs) - 1 and gv[start] >= 0:
                start += 1
            cross = None
            for i in range(start, len(xs) - 1):
                if gv[i] < 0 <= gv[i + 1]:
                    cross = brentq(lambda x: float(f.axis_integral(x)) - Ls,
                                   xs[i], xs[i + 1], xtol=1e-13)
                    break
            if cross is None:
                continue  # escapes on this side
            partner = None
            for o in saddles:
                if o is not s and abs(cross - o.u) < 1e-7 * max(1.0, abs(o.u)):
                    partner = o.index_in_order
            loops.append(HomoclinicLoop(saddle=s.index_in_order, side=side,
                                        extreme_u=float(cross),
                                        partner_saddle=partner))
    return loops, levels, tie_outer


def _traced_loops(f, eqs):
    loops, traces = [], {}
    saddles = [e for e in eqs if e.kind == "saddle"]
    for s in saddles:
        tr = trace_separatrix(f, s, equilibria=eqs)
        traces[s.index_in_order] = tr
        loops.extend(tr.loops)
    # dedupe heteroclinic pairs (found from both endpoints)
    seen_pairs = set()
    out = []
    for lp in loops:
        if lp.partner_saddle is not None:
            key = tuple(sorted((lp.saddle, lp.partner_saddle)))
            if key in seen_pairs:
                continue
            seen_pairs.add(key)
            # canonical: keep the left saddle as owner
            if eqs[lp.saddle].u > eqs[lp.partner_saddle].u:
                lp = HomoclinicLoop(saddle=lp.partner_saddle, side="right",
                                    extreme_u=eqs[lp.saddle].u,
                                    partner_saddle=lp.saddle, polyline=lp.polyline)
            # heteroclinic pairs are legal only as the outermost boundary
            a, b = sorted((eqs[lp.saddle].u, eqs[lp.partner_saddle].u))
            strictly_inside = [e for e in eqs if a < e.u < b and e.kind == "saddle"]
            span_all = [e for e in eqs if e.kind == "saddle"]
            if not (eqs[lp.saddle] is span_all[0] and eqs[lp.partner_saddle] is span_all[-1]):
                raise DegeneracyError(
                    _MODULE, "build_portrait",
                    "heteroclinic saddle connection away from the outer boundary "
                    "(condition (M) tie)",
                    pair=(a, b), inner=len(strictly_inside),
                )
        out.append(lp)
    return out, traces


def build_portrait(f: Nonlinearity) -> PhasePortrait:
    """Assemble equilibria, loops, and nested cyclicity regions."""
    if not f.is_reversible:
        raise VariantError(_MODULE, "build_portrait",
                           "portraits are defined for reversible f only")
    eqs = find_equilibria(f)
    integrable = _is_integrable(f)
    traces = {}
    if integrable:
        loops, levels, tie_outer = _level_loops(f, eqs)
    else:
        loops, traces = _traced_loops(f, eqs)
        levels, tie_outer = None, any(lp.partner_saddle is not None for lp in loops)

    # regions correspond one-to-one with loops
    intervals = [lp.interval(eqs) for lp in loops]
    order = sorted(range(len(loops)), key=lambda i: intervals[i][1] - intervals[i][0])
    regions = []
    for rid_pos, li in enumerate(order):
        lp = loops[li]
        lo, hi = intervals[li]
        inside = [e for e in eqs if lo < e.u < hi and e.index_in_order != lp.saddle
                  and (lp.partner_saddle is None or e.index_in_order != lp.partner_saddle)]
        centers = [e for e in inside if e.kind == "center"]
        if not centers:
            raise StructuralError(_MODULE, "build_portrait",
                                  "homoclinic loop enclosing no center",
                                  interval=(lo, hi))
        saddle_u = eqs[lp.saddle].u
        orientation = "right" if abs(saddle_u - lo) < abs(saddle_u - hi) else "left"
        if lp.partner_saddle is not None:
            orientation = "right"  # convention: left saddle owns a tie boundary
        reg = CyclicityRegion(
            id=rid_pos,
            kind="punctured_disk" if len(centers) == 1 else "annulus",
            u_minus=lo, u_plus=hi,
            orientation=orientation,
            boundary_saddle=lp.saddle,
            enclosed_centers=[c.index_in_order for c in centers],
            enclosed_equilibria=[e.index_in_order for e in inside],
            tie_boundary=lp.partner_saddle is not None,
        )
        if reg.kind == "punctured_disk":
            reg.center_u = centers[0].u
        if levels is not None:
            reg.level_outer = float(levels[lp.saddle])
        regions.append(reg)

    # containment forest (region list is sorted by interval width already)
    for i, ri in enumerate(regions):
        for j in range(i + 1, len(regions)):
            rj = regions[j]
            if rj.u_minus <= ri.u_minus and ri.u_plus <= rj.u_plus and (
                rj.u_minus < ri.u_minus or ri.u_plus < rj.u_plus
            ):
                ri.parent = rj.id
                rj.children.append(ri.id)
                break

    # annulus inner structure: the saddle inside with both loops at top level
    for reg in regions:
        if reg.kind != "annulus":
            continue
        inner_saddles = [i for i in reg.enclosed_equilibria if eqs[i].kind == "saddle"]
        top_children = [regions[c] for c in reg.children]
        cand = None
        for i in inner_saddles:
            owned = [c for c in top_children if c.boundary_saddle == i]
            if len(owned) >= 2 or (
                len(owned) == 1 and owned[0].kind == "annulus"
            ):
                cand = i
        if cand is None:
            # the inner complex must be capped by a single saddle
            counts = {}
            for c in top_children:
                counts[c.boundary_saddle] = counts.get(c.boundary_saddle, 0) + 1
            cand = max(counts, key=counts.get) if counts else None
        if cand is None:
            raise StructuralError(_MODULE, "build_portrait",
                                  "annulus without an inner separatrix saddle",
                                  region=reg.id)
        reg.inner_saddle = cand
        inner_loops = [lp for lp in loops if lp.saddle == cand]
        if inner_loops:
            ext = [lp.extreme_u for lp in inner_loops] + [eqs[cand].u]
            reg.b_minus, reg.b_plus = min(ext), max(ext)
        if levels is not None:
            reg.level_inner = float(levels[cand])

    # sort children by position for deterministic parenthesis strings
    for reg in regions:
        reg.children.sort(key=lambda c: regions[c].u_minus)

    tops = sorted((r for r in regions if r.parent is None), key=lambda r: r.u_minus)

    def paren(reg) -> str:
        if not reg.children:
            return "( )"
        inner = " ".join(paren(regions[c]) for c in reg.children)
        return f"({inner})"

    parenthesis = " ".join(paren(r) for r in tops)

    n = len(eqs)
    K = len(regions)
    r_count = sum(1 for reg in regions if reg.kind == "annulus")
    if K != (n - 1) // 2 + r_count:
        raise StructuralError(_MODULE, "build_portrait",
                              "region count violates K = (n-1)/2 + r",
                              K=K, n=n, r=r_count)

    pivot = _check_pivot_and_314(f, eqs, regions, tops, levels, integrable)

    separatrices = {}
    if traces:
        for sid, tr in traces.items():
            separatrices[sid] = [lp.polyline for lp in tr.loops if lp.polyline is not None]
    elif integrable:
        for lp in loops:
            poly = _loop_polyline(f, lp, eqs)
            separatrices.setdefault(lp.saddle, []).append(poly)
    return PhasePortrait(f=f, equilibria=eqs, regions=regions,
                         separatrices=separatrices, parenthesis=parenthesis,
                         pivot_saddle=pivot, r=r_count, K=K)


def _loop_polyline(f, lp, eqs, n: int = 400) -> np.ndarray:
    lo, hi = lp.interval(eqs)
    level = float(f.axis_integral(eqs[lp.saddle].u))
    us = np.linspace(lo, hi, n)
    ps2 = np.clip(np.asarray(f.p_squared_on_orbit(us, level), dtype=float), 0.0, None)
    ps = np.sqrt(ps2)
    upper = np.column_stack([us, ps])
    lower = np.column_stack([us[::-1], -ps[::-1]])
    return np.vstack([upper, lower, upper[:1]])


def _check_pivot_and_314(f, eqs, regions, tops, levels, integrable):
    """Pivot pattern among top-level regions; eq. (314) on visible saddles.

    Visible saddles are those not strictly inside any region; saddles
    interior to an annulus complex sit below the outer levels by
    construction and are exempt from the ordering.
    """
    saddle_ids = [e.index_in_order for e in eqs if e.kind == "saddle"]
    if not saddle_ids:
        return None

    def hidden(i):
        u = eqs[i].u
        return any(r.u_minus + 1e-12 < u < r.u_plus - 1e-12 for r in regions)

    visible = [i for i in saddle_ids if not hidden(i)]
    # orientation pattern: right-oriented tops, then left-oriented tops
    pattern = [t.orientation for t in tops]
    switched = False
    for o in pattern:
        if o == "left":
            switched = True
        elif switched:
            raise StructuralError(
                _MODULE, "build_portrait",
                "top-level orientations admit no pivot saddle", pattern=pattern,
            )
    if integrable and levels is not None and visible:
        vl = [levels[i] for i in visible]
        m = int(np.argmax(vl))
        scale = max(1.0, float(np.max(np.abs(vl))))
        tie_pair = len(visible) == 2 and abs(vl[0] - vl[1]) <= TIE_TOL * scale
        ok = all(vl[i] < vl[i + 1] for i in range(m)) and all(
            vl[i] > vl[i + 1] for i in range(m, len(vl) - 1)
        )
        if not (ok or tie_pair):
            raise StructuralError(
                _MODULE, "build_portrait",
                "saddle potential values are not unimodal toward a pivot",
                levels=vl,
            )
        return visible[-1] if tie_pair else visible[m]
    # non-integrable: place the pivot at the orientation switch
    rights = [t for t in tops if t.orientation == "right"]
    lefts = [t for t in tops if t.orientation == "left"]
    if rights and lefts:
        gap_lo, gap_hi = rights[-1].u_plus, lefts[0].u_minus
        inside = [i for i in visible if gap_lo - 1e-12 <= eqs[i].u <= gap_hi + 1e-12]
        if inside:
            return inside[0]
    if rights or not lefts:
        return visible[-1] if visible else saddle_ids[-1]
    return visible[0] if visible else saddle_ids[0]

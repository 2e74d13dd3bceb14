"""2pi-periodic orbits, lap numbers, and lap signatures.

A signature is a tree mirroring the cyclicity-region forest; each node
carries the multiset of lap numbers of the region's 2pi-periodic orbits,
printed in nesting order (outermost orbit first). Text form follows the
parenthesis/brace notation exactly, whitespace insignificant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from collections import Counter

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import (
    HyperbolicityError,
    NearSeparatrixError,
    SignatureParseError,
    StructuralError,
)
from .period_map import PeriodMap, shoot_half

_MODULE = "signature"

T_PRIME_MIN = 1e-5
TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PeriodicOrbit:
    region_id: int
    a: float
    alpha: float
    lap: int
    z: int
    T_prime_sign: str  # "+" | "-"

    def as_dict(self) -> dict:
        return {
            "region_id": self.region_id,
            "a": self.a,
            "alpha": self.alpha,
            "lap": self.lap,
            "z": self.z,
            "T_prime_sign": self.T_prime_sign,
        }


@dataclass
class SignatureNode:
    laps: list
    children: list = field(default_factory=list)


@dataclass
class LapSignature:
    roots: list

    def __str__(self) -> str:
        return format_signature(self)


def _blowup_edge_row(ev, base: float, sign: float, width: float):
    """Evaluate T as close to a separatrix end as the evaluator survives."""
    for frac in (1e-10, 1e-8, 1e-6):
        a_ext = base + sign * frac * width
        try:
            return (a_ext, ev(a_ext))
        except NearSeparatrixError:
            continue
    return None


def _augmented_samples(pm: PeriodMap):
    """Sample rows extended toward the unsampled ends of the domain."""
    rows = [tuple(r) for r in pm.samples]
    lo, hi = pm.domain
    width = hi - lo
    ev = pm.evaluator
    if pm.blowup_end == lo:
        row = _blowup_edge_row(ev, lo, 1.0, width)
        if row is not None and row[0] < rows[0][0]:
            rows.insert(0, row)
    if pm.kind == "punctured_disk" and pm.center_limit is not None \
            and math.isfinite(pm.center_limit):
        # 1e-5 of the width keeps the orbit level resolvable above rounding
        a_ext = hi - 1e-5 * width
        if a_ext > rows[-1][0]:
            rows.append((a_ext, ev(a_ext)))
    else:
        row = _blowup_edge_row(ev, hi, -1.0, width)
        if row is not None and row[0] > rows[-1][0]:
            rows.append(row)
    return rows


def find_periodic_orbits(pm: PeriodMap, t_prime_min: float = T_PRIME_MIN):
    """Roots of T(a) = 2pi/l on each monotone piece of the sampled map."""
    rows = _augmented_samples(pm)
    a = np.array([r[0] for r in rows])
    T = np.array([r[1] for r in rows])
    width = pm.domain[1] - pm.domain[0]
    ev = pm.evaluator
    ell_max = max(1, int(math.floor(TWO_PI / T.min())) + 1)
    found = []
    for i in range(len(a) - 1):
        T0, T1 = T[i], T[i + 1]
        for ell in range(1, ell_max + 1):
            target = TWO_PI / ell
            if (T0 - target) * (T1 - target) < 0:
                root = brentq(lambda x: ev(x) - target, a[i], a[i + 1],
                              xtol=1e-12 * max(1.0, width), rtol=8.9e-16)
                found.append((float(root), ell))
            elif T0 == target:
                found.append((float(a[i]), ell))
    # dedupe piece-joint duplicates
    found.sort()
    orbits = []
    for root, ell in found:
        if orbits and abs(root - orbits[-1][0]) < 1e-8 * max(1.0, width):
            continue
        orbits.append((root, ell))
    out = []
    for root, ell in orbits:
        h = 1e-6 * width
        tp = (ev(root + h) - ev(root - h)) / (2 * h)
        if abs(tp) < t_prime_min:
            raise HyperbolicityError(
                _MODULE, "find_periodic_orbits",
                f"tangential root of T = 2pi/{ell} (frozen wave not normally "
                "hyperbolic)", a=root, T_prime=tp,
            )
        _, alpha = shoot_half(pm.f, root)
        out.append(PeriodicOrbit(
            region_id=pm.region_id, a=root, alpha=float(alpha),
            lap=ell, z=2 * ell, T_prime_sign="+" if tp > 0 else "-",
        ))
    return out


def orbit_profile(f, a: float, n: int = 256):
    """Sample (v, v_x) of the 2pi-periodic orbit through (a, 0) on [0, 2pi)."""

    def rhs(t, y):
        return [y[1], -float(f._eval(y[0], y[1]))]

    xs = np.linspace(0.0, TWO_PI, n, endpoint=False)
    sol = solve_ivp(rhs, (0.0, TWO_PI), [a, 0.0], t_eval=xs,
                    rtol=1e-11, atol=1e-12, method="DOP853")
    return xs, sol.y[0], sol.y[1]


def count_laps(v: np.ndarray, rel_tol: float = 1e-8) -> int:
    """Local maxima of a periodic profile, cyclically.

    Steps smaller than rel_tol of the profile range are treated as flat:
    orbits hovering near a saddle otherwise pick up spurious extrema from
    integration noise.
    """
    v = np.asarray(v, dtype=float)
    rng = float(v.max() - v.min())
    if rng == 0.0:
        return 0
    dv = np.diff(np.append(v, v[0]))
    s = np.sign(dv)
    s[np.abs(dv) < rel_tol * rng] = 0
    s = s[s != 0]
    if len(s) == 0:
        return 0
    laps = 0
    for i in range(len(s)):
        if s[i] > 0 and s[(i + 1) % len(s)] < 0:
            laps += 1
    return laps


def build_signature(portrait, orbits) -> LapSignature:
    """Per-region lap multisets arranged on the cyclicity-region forest."""
    by_region = {}
    for o in orbits:
        by_region.setdefault(o.region_id, []).append(o)
    nodes = {}
    for reg in portrait.regions:
        olist = sorted(by_region.get(reg.id, []), key=lambda o: o.a)
        if reg.kind == "annulus" and len(olist) % 2 != 0:
            raise StructuralError(
                _MODULE, "build_signature",
                "odd orbit count in an annulus", region=reg.id, count=len(olist),
            )
        nodes[reg.id] = SignatureNode(laps=[o.lap for o in olist])
    for reg in portrait.regions:
        nodes[reg.id].children = [nodes[c] for c in reg.children]
    tops = sorted((r for r in portrait.regions if r.parent is None),
                  key=lambda r: r.u_minus)
    return LapSignature(roots=[nodes[r.id] for r in tops])


def format_signature(sig: LapSignature) -> str:
    def fmt(node):
        inner = "{" + ",".join(str(l) for l in node.laps) + "}"
        return "(" + inner + "".join(fmt(c) for c in node.children) + ")"

    return "".join(fmt(r) for r in sig.roots)


def parse_signature(text: str) -> LapSignature:
    s = text
    i = 0

    def error(msg, pos):
        raise SignatureParseError(_MODULE, "parse_signature", msg, position=pos,
                                  text=text)

    def skip_ws():
        nonlocal i
        while i < len(s) and s[i].isspace():
            i += 1

    def parse_multiset():
        nonlocal i
        skip_ws()
        if i >= len(s) or s[i] != "{":
            error("expected '{'", i)
        i += 1
        laps = []
        skip_ws()
        if i < len(s) and s[i] == "}":
            i += 1
            return laps
        while True:
            skip_ws()
            j = i
            while j < len(s) and s[j].isdigit():
                j += 1
            if j == i:
                error("expected integer lap", i)
            laps.append(int(s[i:j]))
            i = j
            skip_ws()
            if i < len(s) and s[i] == ",":
                i += 1
                continue
            if i < len(s) and s[i] == "}":
                i += 1
                return laps
            error("expected ',' or '}'", i)

    def parse_node():
        nonlocal i
        skip_ws()
        if i >= len(s) or s[i] != "(":
            error("expected '('", i)
        i += 1
        laps = parse_multiset()
        children = []
        while True:
            skip_ws()
            if i < len(s) and s[i] == "(":
                children.append(parse_node())
                continue
            if i < len(s) and s[i] == ")":
                i += 1
                return SignatureNode(laps=laps, children=children)
            error("expected '(' or ')'", i)

    roots = []
    skip_ws()
    while i < len(s):
        roots.append(parse_node())
        skip_ws()
    if not roots:
        error("empty signature", 0)
    return LapSignature(roots=roots)


def signatures_equal(s1, s2) -> bool:
    """Structural tree equality with multiset brace semantics."""
    a = parse_signature(s1) if isinstance(s1, str) else s1
    b = parse_signature(s2) if isinstance(s2, str) else s2

    def eq(x, y):
        if Counter(x.laps) != Counter(y.laps):
            return False
        if len(x.children) != len(y.children):
            return False
        return all(eq(cx, cy) for cx, cy in zip(x.children, y.children))

    if len(a.roots) != len(b.roots):
        return False
    return all(eq(x, y) for x, y in zip(a.roots, b.roots))

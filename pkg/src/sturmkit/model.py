"""Nonlinearity variants for u_t = u_xx + f(u, u_x) on the circle.

Reversible means f(u, p) = f(u, -p). The stationary equation v'' + f(v, v') = 0
is integrated in the phase plane (v, p = v'). Variants that admit a first
integral expose it; the others are handled by shooting only.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp

from .errors import DomainBoxError, VariantError

_MODULE = "model"


@dataclass(frozen=True)
class Box:
    """Working box in the (u, p) phase plane; also the PDE amplitude bound."""

    u_min: float
    u_max: float
    p_min: float
    p_max: float

    def contains(self, u, p, slack: float = 0.0) -> bool:
        du = slack * (self.u_max - self.u_min)
        dp = slack * (self.p_max - self.p_min)
        return bool(
            np.all(u >= self.u_min - du)
            and np.all(u <= self.u_max + du)
            and np.all(p >= self.p_min - dp)
            and np.all(p <= self.p_max + dp)
        )

    def as_dict(self) -> dict:
        return {
            "u_min": self.u_min,
            "u_max": self.u_max,
            "p_min": self.p_min,
            "p_max": self.p_max,
        }


# Evaluation is permitted slightly beyond the declared box so adaptive
# steppers may probe trial points; the error fires on genuine runaways.
_BOX_SLACK = 0.1


class Nonlinearity:
    """Base class. Subclasses fill in _eval and the derivative helpers."""

    variant = "abstract"
    is_reversible = True

    def __init__(self, box: Box, bound_C0: float, sign_threshold_K0: float):
        self.box = box
        self.bound_C0 = float(bound_C0)
        self.sign_threshold_K0 = float(sign_threshold_K0)

    # -- evaluation --------------------------------------------------------

    def eval(self, u, p):
        """f(u, p), box-checked; scalars or arrays."""
        if not self.box.contains(u, p, slack=_BOX_SLACK):
            raise DomainBoxError(
                _MODULE,
                "eval",
                "evaluation outside the working box (runaway trajectory upstream)",
                box=self.box.as_dict(),
                u_range=(float(np.min(u)), float(np.max(u))),
                p_range=(float(np.min(p)), float(np.max(p))),
            )
        return self._eval(u, p)

    __call__ = eval

    def _eval(self, u, p):
        raise NotImplementedError

    # -- partial derivatives ------------------------------------------------

    _FD_H = 1e-6

    def f_u(self, u, p):
        h = self._FD_H * max(1.0, float(np.max(np.abs(u))))
        return (self._eval(u + h, p) - self._eval(u - h, p)) / (2 * h)

    def f_p(self, u, p):
        h = self._FD_H * max(1.0, float(np.max(np.abs(p))))
        return (self._eval(u, p + h) - self._eval(u, p - h)) / (2 * h)

    # -- optional structure --------------------------------------------------

    def first_integral(self, u, p):
        """Conserved quantity of v'' + f = 0, if the variant has one."""
        raise VariantError(
            _MODULE, "first_integral", f"variant {self.variant!r} is not integrable"
        )

    def axis_integral(self, u):
        """First integral restricted to the axis p = 0."""
        return self.first_integral(u, 0.0)

    def p_squared_on_orbit(self, u, level):
        """Solve first_integral(u, p) = level for p**2 (orbit squared slope)."""
        raise VariantError(
            _MODULE, "p_squared_on_orbit", f"variant {self.variant!r} is not integrable"
        )

    def describe(self) -> dict:
        return {
            "variant": self.variant,
            "reversible": self.is_reversible,
            "bound_C0": self.bound_C0,
            "sign_threshold_K0": self.sign_threshold_K0,
            "box": self.box.as_dict(),
        }


class HamiltonianNonlinearity(Nonlinearity):
    """f(u, p) = g(u); stationary orbits conserve p**2/2 + G(u)."""

    variant = "hamiltonian"

    def g(self, u):
        raise NotImplementedError

    def g_prime(self, u):
        raise NotImplementedError

    def antiderivative(self, u):
        """G(u) = integral of g from 0 to u; exact when available, else None."""
        return None

    def _eval(self, u, p):
        return self.g(u) + 0.0 * np.asarray(p)

    def f_u(self, u, p):
        return self.g_prime(u) + 0.0 * np.asarray(p)

    def f_p(self, u, p):
        return np.zeros_like(np.asarray(u, dtype=float) + np.asarray(p, dtype=float))

    def first_integral(self, u, p):
        return np.asarray(p) ** 2 / 2.0 + self._G(u)

    def p_squared_on_orbit(self, u, level):
        return 2.0 * (level - self._G(u))

    # G with an exact antiderivative when the subclass provides one and an
    # adaptive-quadrature fallback with declared absolute tolerance otherwise.
    potential_abs_tol = 1e-11

    def _G(self, u):
        exact = self.antiderivative(u)
        if exact is not None:
            return exact
        scalar = np.isscalar(u) or np.asarray(u).ndim == 0
        us = np.atleast_1d(np.asarray(u, dtype=float))
        vals = np.array(
            [quad(self.g, 0.0, x, epsabs=self.potential_abs_tol, limit=200)[0] for x in us]
        )
        return float(vals[0]) if scalar else vals


class PolynomialHamiltonian(HamiltonianNonlinearity):
    """g(u) = sum coeffs[i] * u**i with exact derivative and antiderivative."""

    def __init__(self, coeffs: Sequence[float], box: Box, bound_C0=None, sign_threshold_K0=None):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self._poly = np.polynomial.Polynomial(self.coeffs)
        self._dpoly = self._poly.deriv()
        self._ipoly = self._poly.integ()
        if sign_threshold_K0 is None:
            sign_threshold_K0 = _default_K0(lambda x: self._poly(x), box)
        if bound_C0 is None:
            bound_C0 = _sup_on_box(lambda u, p: self._poly(u), box)
        super().__init__(box, bound_C0, sign_threshold_K0)

    def g(self, u):
        return self._poly(u)

    def g_prime(self, u):
        return self._dpoly(u)

    def antiderivative(self, u):
        return self._ipoly(u)

    def second_divided_difference(self, x: float, z: float, u):
        """G[x, u, z] by homogeneous-sum recurrences.

        Stays accurate when u approaches x or z, where direct differences
        of G lose all significant digits.
        """
        c = self._ipoly.coef
        deg = len(c) - 1
        u = np.asarray(u, dtype=float)
        if deg < 2:
            return np.zeros_like(u)
        hxz = np.empty(deg - 1)
        for m in range(deg - 1):
            hxz[m] = sum(x ** j * z ** (m - j) for j in range(m + 1))
        total = np.zeros_like(u)
        for k in range(2, deg + 1):
            m = k - 2
            acc = np.zeros_like(u)
            upow = np.ones_like(u)
            for i in range(m + 1):
                acc += upow * hxz[m - i]
                upow = upow * u
            total += c[k] * acc
        return total


class CallableHamiltonian(HamiltonianNonlinearity):
    """g given as a closed-form callable; potential falls back to quadrature."""

    def __init__(self, g: Callable, box: Box, g_prime: Callable | None = None,
                 antiderivative: Callable | None = None,
                 bound_C0=None, sign_threshold_K0=None):
        self._g = g
        self._gp = g_prime
        self._anti = antiderivative
        if sign_threshold_K0 is None:
            sign_threshold_K0 = _default_K0(g, box)
        if bound_C0 is None:
            bound_C0 = _sup_on_box(lambda u, p: g(u), box)
        super().__init__(box, bound_C0, sign_threshold_K0)

    def g(self, u):
        return self._g(np.asarray(u, dtype=float))

    def g_prime(self, u):
        if self._gp is not None:
            return self._gp(np.asarray(u, dtype=float))
        h = self._FD_H * max(1.0, float(np.max(np.abs(u))))
        return (self.g(u + h) - self.g(u - h)) / (2 * h)

    def antiderivative(self, u):
        if self._anti is None:
            return None
        scalar = np.isscalar(u) or np.asarray(u).ndim == 0
        out = self._anti(np.asarray(u, dtype=float))
        return float(out) if scalar else out


class SplineHamiltonian(HamiltonianNonlinearity):
    """g from a piecewise polynomial (realized nonlinearities land here)."""

    def __init__(self, ppoly, box: Box, bound_C0=None, sign_threshold_K0=None):
        self._pp = ppoly
        self._dpp = ppoly.derivative()
        self._ipp = ppoly.antiderivative()
        self._i0 = float(self._ipp(0.0))
        if sign_threshold_K0 is None:
            sign_threshold_K0 = _default_K0(lambda x: ppoly(x), box)
        if bound_C0 is None:
            bound_C0 = _sup_on_box(lambda u, p: ppoly(u), box)
        super().__init__(box, bound_C0, sign_threshold_K0)

    def g(self, u):
        return self._pp(u)

    def g_prime(self, u):
        return self._dpp(u)

    def antiderivative(self, u):
        return self._ipp(u) - self._i0


class EllipseOrbits(Nonlinearity):
    """f(u, p) = (k/2) u (k u**2 + sqrt(k**2 u**4 + 4 p**2)).

    Stationary orbits are the concentric ellipses p**2 + k*I0*u**2 = I0**2
    with I0 = k*a**2 through (a, 0), of period 2*pi/(k*|a|). The center at the
    origin is degenerate by design (f_u(0, 0) = 0).
    """

    variant = "reversible_expr"

    def __init__(self, k: int, box: Box):
        self.k = int(k)
        a_max = max(abs(box.u_min), abs(box.u_max))
        p_big = abs(box.p_max)
        C0 = self.k * a_max * (self.k * a_max**2 + math.hypot(self.k * a_max**2, 2 * p_big))
        super().__init__(box, C0, a_max)

    def _eval(self, u, p):
        u = np.asarray(u, dtype=float)
        p = np.asarray(p, dtype=float)
        k = self.k
        root = np.sqrt((k * u**2) ** 2 + 4.0 * p**2)
        out = 0.5 * k * u * (k * u**2 + root)
        return float(out) if out.ndim == 0 else out

    def f_u(self, u, p):
        u = np.asarray(u, dtype=float)
        p = np.asarray(p, dtype=float)
        k = self.k
        root = np.sqrt((k * u**2) ** 2 + 4.0 * p**2)
        safe = np.where(root > 0, root, 1.0)
        term = np.where(root > 0, (k * u**2) * (k * u**2) / safe, 0.0)
        out = 0.5 * k * (k * u**2 + root) + 0.5 * k * (2 * k * u**2 + 2 * term)
        return float(out) if out.ndim == 0 else out

    def f_p(self, u, p):
        u = np.asarray(u, dtype=float)
        p = np.asarray(p, dtype=float)
        k = self.k
        root = np.sqrt((k * u**2) ** 2 + 4.0 * p**2)
        safe = np.where(root > 0, root, 1.0)
        out = np.where(root > 0, 0.5 * k * u * 4.0 * p / safe, 0.0)
        return float(out) if out.ndim == 0 else out

    def first_integral(self, u, p):
        u = np.asarray(u, dtype=float)
        p = np.asarray(p, dtype=float)
        k = self.k
        out = 0.5 * (k * u**2 + np.sqrt((k * u**2) ** 2 + 4.0 * p**2))
        return float(out) if out.ndim == 0 else out

    def p_squared_on_orbit(self, u, level):
        u = np.asarray(u, dtype=float)
        return level * (level - self.k * u**2)

    def axis_crossing(self, level: float) -> float:
        """Positive axis crossing of a level set, closed form."""
        return math.sqrt(level / self.k)

    def orbit_period(self, a: float) -> float:
        return 2.0 * math.pi / (self.k * abs(a))


class ReversibleQuadratic(Nonlinearity):
    """f(u, p) = g(u) + h(u) p**2, reversible with a weighted first integral.

    Conserved: E(u, p) = p**2 exp(2 H(u)) / 2 + W(u), with H' = h and
    W' = g exp(2 H). W is precomputed on the box by high-accuracy integration.
    """

    variant = "reversible_expr"

    def __init__(self, g: Callable, g_prime: Callable, h: Callable,
                 h_prime: Callable, H: Callable, box: Box,
                 bound_C0=None, sign_threshold_K0=None):
        self._g = g
        self._gp = g_prime
        self._h = h
        self._hp = h_prime
        self._H = H
        if sign_threshold_K0 is None:
            sign_threshold_K0 = _default_K0(g, box)
        if bound_C0 is None:
            bound_C0 = _sup_on_box(
                lambda u, p: g(u) + h(u) * p**2, box
            )
        super().__init__(box, bound_C0, sign_threshold_K0)
        self._W = self._build_W()

    def _build_W(self):
        from scipy.interpolate import CubicSpline

        lo, hi = self.box.u_min, self.box.u_max
        rhs = lambda x, w: self._g(x) * np.exp(2.0 * self._H(x))
        xs = np.linspace(lo, hi, 4001)
        sol = solve_ivp(rhs, (0.0, hi), [0.0], t_eval=xs[xs >= 0.0],
                        rtol=1e-12, atol=1e-14, dense_output=False, method="DOP853")
        sol_l = solve_ivp(rhs, (0.0, lo), [0.0], t_eval=xs[xs <= 0.0][::-1],
                          rtol=1e-12, atol=1e-14, dense_output=False, method="DOP853")
        x_all = np.concatenate([sol_l.t[::-1], sol.t[1:]])
        w_all = np.concatenate([sol_l.y[0][::-1], sol.y[0][1:]])
        return CubicSpline(x_all, w_all)

    def _eval(self, u, p):
        u = np.asarray(u, dtype=float)
        p = np.asarray(p, dtype=float)
        out = self._g(u) + self._h(u) * p**2
        return float(out) if np.ndim(out) == 0 else out

    def f_u(self, u, p):
        u = np.asarray(u, dtype=float)
        p = np.asarray(p, dtype=float)
        out = self._gp(u) + self._hp(u) * p**2
        return float(out) if np.ndim(out) == 0 else out

    def f_p(self, u, p):
        u = np.asarray(u, dtype=float)
        p = np.asarray(p, dtype=float)
        out = 2.0 * self._h(u) * p
        return float(out) if np.ndim(out) == 0 else out

    def first_integral(self, u, p):
        u = np.asarray(u, dtype=float)
        p = np.asarray(p, dtype=float)
        out = 0.5 * p**2 * np.exp(2.0 * self._H(u)) + self._W(u)
        return float(out) if np.ndim(out) == 0 else out

    def p_squared_on_orbit(self, u, level):
        u = np.asarray(u, dtype=float)
        return 2.0 * np.exp(-2.0 * self._H(u)) * (level - self._W(u))


class ParametricFamily:
    """Continuous path s in [0, 1] -> nonlinearity, for bifurcation scans."""

    def __init__(self, builder: Callable, name: str, params: dict | None = None):
        self._builder = builder
        self.name = name
        self.params = dict(params or {})

    def __call__(self, s: float) -> Nonlinearity:
        s = float(s)
        if not 0.0 <= s <= 1.0:
            raise VariantError(_MODULE, "family", "s must lie in [0, 1]", s=s)
        return self._builder(s)


class ConvexCombination(Nonlinearity):
    """(1 - tau) f0 + tau f1; the pendulum-homotopy workhorse."""

    variant = "convex"

    def __init__(self, f0: Nonlinearity, f1: Nonlinearity, tau: float):
        if not 0.0 <= tau <= 1.0:
            raise VariantError(_MODULE, "convex", "tau must lie in [0, 1]", tau=tau)
        self.f0 = f0
        self.f1 = f1
        self.tau = float(tau)
        box = Box(
            max(f0.box.u_min, f1.box.u_min),
            min(f0.box.u_max, f1.box.u_max),
            max(f0.box.p_min, f1.box.p_min),
            min(f0.box.p_max, f1.box.p_max),
        )
        C0 = (1 - tau) * f0.bound_C0 + tau * f1.bound_C0
        K0 = max(f0.sign_threshold_K0, f1.sign_threshold_K0)
        super().__init__(box, C0, K0)
        self.is_reversible = f0.is_reversible and f1.is_reversible

    def _eval(self, u, p):
        return (1 - self.tau) * self.f0._eval(u, p) + self.tau * self.f1._eval(u, p)

    def f_u(self, u, p):
        return (1 - self.tau) * self.f0.f_u(u, p) + self.tau * self.f1.f_u(u, p)

    def f_p(self, u, p):
        return (1 - self.tau) * self.f0.f_p(u, p) + self.tau * self.f1.f_p(u, p)


class DriftPerturbed(Nonlinearity):
    """f(u, p) = base(u, p) + eps * p. Breaks reversibility; PDE use only."""

    variant = "drift"
    is_reversible = False

    def __init__(self, base: Nonlinearity, eps: float):
        self.base = base
        self.eps = float(eps)
        C0 = base.bound_C0 + abs(eps) * max(abs(base.box.p_min), abs(base.box.p_max))
        super().__init__(base.box, C0, base.sign_threshold_K0)

    def _eval(self, u, p):
        return self.base._eval(u, p) + self.eps * np.asarray(p)

    def f_u(self, u, p):
        return self.base.f_u(u, p)

    def f_p(self, u, p):
        return self.base.f_p(u, p) + self.eps


class Potential:
    """G(a) = integral of f(s, 0) from e2 to a for a Hamiltonian variant."""

    def __init__(self, f: Nonlinearity, e2: float):
        if not isinstance(f, HamiltonianNonlinearity):
            raise VariantError(
                _MODULE, "potential", "potential requires the Hamiltonian variant",
                variant=f.variant,
            )
        self.f = f
        self.e2 = float(e2)
        self.abs_tol = f.potential_abs_tol if f.antiderivative(0.0) is None else 1e-14
        self._G_e2 = f._G(self.e2)

    def __call__(self, a):
        return self.f._G(a) - self._G_e2


@dataclass
class DissipativityReport:
    ok: bool
    bound_C0: float
    sign_threshold_K0: float
    n_samples: int
    bound_violations: list
    sign_violations: list

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "bound_C0": self.bound_C0,
            "sign_threshold_K0": self.sign_threshold_K0,
            "n_samples": self.n_samples,
            "bound_violations": self.bound_violations[:16],
            "sign_violations": self.sign_violations[:16],
        }


def check_dissipative(f: Nonlinearity, n_samples: int = 256) -> DissipativityReport:
    """Sample |f| <= C0 on the box and u*f(u,0) < 0 beyond K0; report violations."""
    us = np.linspace(f.box.u_min, f.box.u_max, n_samples)
    ps = np.linspace(f.box.p_min, f.box.p_max, n_samples)
    U, P = np.meshgrid(us, ps)
    vals = f._eval(U, P)
    bound_viol = []
    mask = np.abs(vals) > f.bound_C0 * (1 + 1e-12)
    if np.any(mask):
        idx = np.argwhere(mask)
        for i, j in idx[:64]:
            bound_viol.append(
                {"u": float(U[i, j]), "p": float(P[i, j]), "f": float(vals[i, j])}
            )
    sign_viol = []
    K0 = f.sign_threshold_K0
    for side in (-1.0, 1.0):
        outer = np.linspace(K0 * (1 + 1e-9), max(abs(f.box.u_min), abs(f.box.u_max)), n_samples)
        uu = side * outer
        uu = uu[(uu >= f.box.u_min) & (uu <= f.box.u_max)]
        if uu.size == 0:
            continue
        fv = f._eval(uu, np.zeros_like(uu))
        bad = uu * fv >= 0.0
        for x, y in zip(uu[bad][:64], np.asarray(fv)[bad][:64]):
            sign_viol.append({"u": float(x), "f": float(y)})
    ok = not bound_viol and not sign_viol
    return DissipativityReport(ok, f.bound_C0, K0, n_samples, bound_viol, sign_viol)


def default_box(g: Callable, K0: float, pad: float = 1.2) -> Box:
    """Box [-2 K0, 2 K0] x [-P, P] with P from the largest axis energy swing."""
    lo, hi = -2.0 * K0, 2.0 * K0
    xs = np.linspace(lo, hi, 2001)
    gv = np.asarray([g(x) for x in xs])
    G = np.concatenate([[0.0], np.cumsum((gv[1:] + gv[:-1]) / 2.0 * np.diff(xs))])
    swing = float(np.max(G) - np.min(G))
    P = pad * math.sqrt(max(2.0 * swing, 1e-12))
    return Box(lo, hi, -P, P)


def _default_K0(g: Callable, box: Box) -> float:
    """Smallest sampled threshold beyond which u*g(u) stays negative."""
    hi = max(abs(box.u_min), abs(box.u_max))
    xs = np.linspace(1e-9, hi, 4000)
    ok = np.full(xs.shape, True)
    for side in (-1.0, 1.0):
        uu = side * xs
        gv = np.asarray([g(x) for x in uu])
        ok &= uu * gv < 0.0
    bad = np.where(~ok)[0]
    if bad.size == 0:
        return float(xs[0])
    if bad[-1] == len(xs) - 1:
        return hi  # never sign-definite inside the box; caller must override
    return float(xs[bad[-1] + 1])


def _sup_on_box(f2: Callable, box: Box, n: int = 201) -> float:
    us = np.linspace(box.u_min, box.u_max, n)
    ps = np.linspace(box.p_min, box.p_max, n)
    U, P = np.meshgrid(us, ps)
    return float(np.max(np.abs(f2(U, P)))) * (1 + 1e-9)

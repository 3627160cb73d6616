"""Two-sided control problems with a discontinuity on the hyperplane {x_N = 0}.

The state space R^N splits into Omega_1 = {x_N > 0}, Omega_2 = {x_N < 0} and
the interface H = {x_N = 0}.  Each side carries a dynamic b_i(x, alpha) and a
running cost l_i(x, alpha) over an unbounded control space R^d, truncated in
practice to closed balls of radius m.  On H the two sides are blended through
an extended control a = (alpha_1, alpha_2, mu):

    b_H(x, a) = mu * b_1(x, alpha_1) + (1 - mu) * b_2(x, alpha_2)
    l_H(x, a) = mu * l_1(x, alpha_1) + (1 - mu) * l_2(x, alpha_2)

Three families are shipped:

* ``Superlinear`` -- b_i = c_r d_i(x) |alpha|^(r-2) alpha,
  l_i = f_i(x) + |alpha|^r with c_r = r / (r-1)^((r-1)/r).  The associated
  side Hamiltonian has the closed form lambda*u + d_i(x)^r |p|^r - f_i(x).
* ``Quadratic`` -- the r = 2 special case written with per-side curvature
  coefficients c_i, giving lambda*u + c_i |p|^2 - f_i(x).
* ``PiecewiseToy`` -- b_i = alpha + drift_i with a piecewise-affine control
  cost max_j (w_j . alpha + o_j) per side; the workhorse for interface
  counterexamples (compact truncations only, its cost grows linearly).

All evaluations broadcast over leading batch axes: x with shape (..., N) and
alpha with shape (..., d) yield b of shape (..., N) and l of shape (...).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np


class ProblemDefinitionError(ValueError):
    """A problem specification violates one of its structural invariants."""


class DomainError(ValueError):
    """An evaluation was requested outside an operation's domain."""


def _as_point(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != dim:
        raise DomainError(f"expected point with last axis {dim}, got shape {x.shape}")
    return x


def _require_finite(name: str, value: np.ndarray) -> None:
    if not np.all(np.isfinite(value)):
        raise DomainError(f"non-finite {name} rejected")


@dataclass(frozen=True)
class PolyCoefficient:
    """Polynomial in |x|^2: value(x) = sum_k coeffs[k] * |x|^(2k).

    Restricting coefficient functions to this family keeps problem files
    declarative (no expression language) while covering constants and the
    |x|^2-type state costs used throughout the test suite.
    """

    coeffs: tuple[float, ...]

    def __post_init__(self):
        if len(self.coeffs) == 0:
            raise ProblemDefinitionError("coefficient polynomial needs at least one term")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        s = np.sum(np.square(x), axis=-1)
        out = np.zeros_like(s)
        for c in reversed(self.coeffs):
            out = out * s + c
        return out


def _coeff(spec) -> PolyCoefficient:
    if isinstance(spec, PolyCoefficient):
        return spec
    if np.isscalar(spec):
        return PolyCoefficient((float(spec),))
    return PolyCoefficient(tuple(spec))


@dataclass(frozen=True)
class Superlinear:
    """Superlinear family: cost |alpha|^power dominates the linear dynamic.

    ``power`` is the superlinearity exponent r > 1, ``coefficient_growth`` the
    exponent kappa bounding d_i(x) <= |x|^kappa, and ``growth_exponent`` the
    class exponent a appearing in the admissible growth |x|^(a - eps); the
    family constraints a >= (a - 1 + kappa) r and discount >= a^r are enforced
    by :class:`ProblemSpec`.
    """

    power: float = 2.0
    d1: PolyCoefficient = field(default=PolyCoefficient((1.0,)))
    d2: PolyCoefficient = field(default=PolyCoefficient((1.0,)))
    f1: PolyCoefficient = field(default=PolyCoefficient((0.0,)))
    f2: PolyCoefficient = field(default=PolyCoefficient((0.0,)))
    coefficient_growth: float = 0.0
    growth_exponent: float = 1.0
    cost_growth_scale: float = 1.0
    cost_growth_offset: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "d1", _coeff(self.d1))
        object.__setattr__(self, "d2", _coeff(self.d2))
        object.__setattr__(self, "f1", _coeff(self.f1))
        object.__setattr__(self, "f2", _coeff(self.f2))
        if self.power <= 1.0:
            raise ProblemDefinitionError("superlinear exponent must exceed 1")

    @property
    def dynamic_scale(self) -> float:
        r = self.power
        return r / (r - 1.0) ** ((r - 1.0) / r)

    def _d(self, side: int, x: np.ndarray) -> np.ndarray:
        return (self.d1 if side == 1 else self.d2)(x)

    def _f(self, side: int, x: np.ndarray) -> np.ndarray:
        return (self.f1 if side == 1 else self.f2)(x)

    def dyn(self, side: int, x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        r = self.power
        mag = np.linalg.norm(alpha, axis=-1, keepdims=True)
        # |alpha|^(r-2) alpha -> 0 as alpha -> 0 for r > 1; avoid 0**negative.
        radial = np.where(mag > 0.0, np.power(np.where(mag > 0.0, mag, 1.0), r - 2.0), 0.0)
        d = self._d(side, x)[..., None]
        return self.dynamic_scale * d * radial * alpha

    def cost(self, side: int, x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        mag = np.linalg.norm(alpha, axis=-1)
        return self._f(side, x) + np.power(mag, self.power)

    def velocity_inverse(self, side: int, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Control alpha with b_side(x, alpha) = v (exact for d_side(x) > 0)."""
        speed = np.linalg.norm(v, axis=-1, keepdims=True)
        d = self._d(side, x)[..., None]
        scale = np.where(speed > 0.0, np.power(
            np.where(speed > 0.0, speed, 1.0) / (self.dynamic_scale * d),
            1.0 / (self.power - 1.0)) / np.where(speed > 0.0, speed, 1.0), 0.0)
        return scale * v

    def stay_control(self, side: int, x: np.ndarray) -> np.ndarray:
        return np.zeros(np.shape(x), dtype=float)

    def hamiltonian_closed_form(self, side: int, x, u, p, discount, m=None):
        """sup_alpha {lambda u - b.p - l} over the |alpha| <= m ball.

        The radial profile g(t) = c_r d |p| t^(r-1) - t^r increases up to
        t* = (r-1)^(1/r) d |p| and the unconstrained maximum is (d |p|)^r, so
        the truncated supremum is g(min(t*, m)).
        """
        r = self.power
        x = np.asarray(x, dtype=float)
        pmag = np.linalg.norm(np.asarray(p, dtype=float), axis=-1)
        d = self._d(side, x)
        t_star = (r - 1.0) ** (1.0 / r) * d * pmag
        t = t_star if m is None else np.minimum(t_star, m)
        gain = self.dynamic_scale * d * pmag * np.power(t, r - 1.0) - np.power(t, r)
        return discount * u + gain - self._f(side, x)


@dataclass(frozen=True)
class Quadratic:
    """Quadratic Hamiltonian lambda*u + c_i |p|^2 - f_i(x), via the r=2 family."""

    c1: float = 1.0
    c2: float = 1.0
    f1: PolyCoefficient = field(default=PolyCoefficient((0.0,)))
    f2: PolyCoefficient = field(default=PolyCoefficient((0.0,)))

    def __post_init__(self):
        if self.c1 <= 0.0 or self.c2 <= 0.0:
            raise ProblemDefinitionError("quadratic coefficients must be positive")
        object.__setattr__(self, "f1", _coeff(self.f1))
        object.__setattr__(self, "f2", _coeff(self.f2))
        core = Superlinear(power=2.0,
                           d1=PolyCoefficient((np.sqrt(self.c1),)),
                           d2=PolyCoefficient((np.sqrt(self.c2),)),
                           f1=self.f1, f2=self.f2)
        object.__setattr__(self, "_core", core)

    def dyn(self, side, x, alpha):
        return self._core.dyn(side, x, alpha)

    def cost(self, side, x, alpha):
        return self._core.cost(side, x, alpha)

    def velocity_inverse(self, side, x, v):
        return self._core.velocity_inverse(side, x, v)

    def stay_control(self, side, x):
        return self._core.stay_control(side, x)

    def hamiltonian_closed_form(self, side, x, u, p, discount, m=None):
        return self._core.hamiltonian_closed_form(side, x, u, p, discount, m)


@dataclass(frozen=True)
class PiecewiseToy:
    """b_i = alpha + drift_i with piecewise-affine control costs.

    ``cost_rows_i`` lists rows (w_1 .. w_d, o); the side cost is
    max_j (w_j . alpha + o_j).  With rows ((1,-1),(-1,1)) this is |alpha - 1|.
    Costs grow only linearly in |alpha|, so this family is meaningful with
    compact truncations only.
    """

    cost_rows_1: tuple[tuple[float, ...], ...]
    cost_rows_2: tuple[tuple[float, ...], ...]
    drift_1: tuple[float, ...] = ()
    drift_2: tuple[float, ...] = ()

    def __post_init__(self):
        rows1 = tuple(tuple(float(v) for v in row) for row in self.cost_rows_1)
        rows2 = tuple(tuple(float(v) for v in row) for row in self.cost_rows_2)
        if not rows1 or not rows2:
            raise ProblemDefinitionError("each side needs at least one affine cost row")
        widths = {len(r) for r in rows1} | {len(r) for r in rows2}
        if len(widths) != 1:
            raise ProblemDefinitionError("all cost rows must share one width d+1")
        object.__setattr__(self, "cost_rows_1", rows1)
        object.__setattr__(self, "cost_rows_2", rows2)
        object.__setattr__(self, "drift_1", tuple(float(v) for v in self.drift_1))
        object.__setattr__(self, "drift_2", tuple(float(v) for v in self.drift_2))

    def _rows(self, side: int) -> np.ndarray:
        return np.asarray(self.cost_rows_1 if side == 1 else self.cost_rows_2)

    def _drift(self, side: int, d: int) -> np.ndarray:
        drift = self.drift_1 if side == 1 else self.drift_2
        if not drift:
            return np.zeros(d)
        return np.asarray(drift, dtype=float)

    def dyn(self, side, x, alpha):
        alpha = np.asarray(alpha, dtype=float)
        return alpha + self._drift(side, alpha.shape[-1])

    def cost(self, side, x, alpha):
        alpha = np.asarray(alpha, dtype=float)
        x = np.asarray(x, dtype=float)
        rows = self._rows(side)
        vals = alpha @ rows[:, :-1].T + rows[:, -1]
        base = np.max(vals, axis=-1)
        return np.broadcast_to(base, np.broadcast_shapes(base.shape, x.shape[:-1])).copy()

    def velocity_inverse(self, side, x, v):
        v = np.asarray(v, dtype=float)
        return v - self._drift(side, v.shape[-1])

    def stay_control(self, side, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(-self._drift(side, x.shape[-1]), x.shape).copy()

    hamiltonian_closed_form = None


Family = Union[Superlinear, Quadratic, PiecewiseToy]


@dataclass(frozen=True)
class ExtendedControl:
    """Interface control (alpha_1, alpha_2, mu) driving the blended dynamics."""

    alpha1: np.ndarray
    alpha2: np.ndarray
    mu: float

    def __post_init__(self):
        object.__setattr__(self, "alpha1", np.atleast_1d(np.asarray(self.alpha1, dtype=float)))
        object.__setattr__(self, "alpha2", np.atleast_1d(np.asarray(self.alpha2, dtype=float)))
        if not 0.0 <= self.mu <= 1.0:
            raise ProblemDefinitionError(f"mixing weight mu={self.mu} outside [0, 1]")


@dataclass(frozen=True)
class ProblemSpec:
    """Immutable two-sided control problem.

    Invariants checked at construction: positive discount and controllability
    radius, control dimension matching the state dimension (all shipped
    families steer through R^N), and for the superlinear family the exponent
    constraints a >= (a - 1 + kappa) r and discount >= a^r.
    """

    dimension: int
    discount: float
    controllability_radius: float
    family: Family
    control_dim: int | None = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ProblemDefinitionError("state dimension must be >= 1")
        if not self.discount > 0.0:
            raise ProblemDefinitionError("discount rate must be positive")
        if not self.controllability_radius > 0.0:
            raise ProblemDefinitionError("controllability radius must be positive")
        if self.control_dim is None:
            object.__setattr__(self, "control_dim", self.dimension)
        if self.control_dim != self.dimension:
            raise ProblemDefinitionError(
                "shipped families require control_dim == dimension")
        fam = self.family
        if isinstance(fam, Superlinear):
            r, kappa, a = fam.power, fam.coefficient_growth, fam.growth_exponent
            if a < (a - 1.0 + kappa) * r - 1e-12:
                raise ProblemDefinitionError(
                    f"growth exponent violates a >= (a - 1 + kappa) r: a={a}, kappa={kappa}, r={r}")
            if self.discount < a ** r - 1e-12:
                raise ProblemDefinitionError(
                    f"discount {self.discount} below growth-class floor {a ** r}")
        if isinstance(fam, PiecewiseToy):
            width = len(fam.cost_rows_1[0]) - 1
            if width != self.dimension:
                raise ProblemDefinitionError(
                    f"cost rows have control width {width}, expected {self.dimension}")

    @property
    def interface_axis(self) -> int:
        return self.dimension - 1


def dyn_cost(spec: ProblemSpec, side: int, x, alpha):
    """Side dynamics and running cost (b_i(x, alpha), l_i(x, alpha)).

    Broadcasts over leading axes.  Rejects non-finite input and an unknown
    side label; the family objects do the actual evaluation.
    """
    if side not in (1, 2):
        raise DomainError(f"side must be 1 or 2, got {side}")
    x = _as_point(x, spec.dimension)
    alpha = _as_point(alpha, spec.control_dim)
    _require_finite("state", x)
    _require_finite("control", alpha)
    b = spec.family.dyn(side, x, alpha)
    l = spec.family.cost(side, x, alpha)
    return b, np.asarray(l, dtype=float)


def mixed_dyn_cost(spec: ProblemSpec, x, a: ExtendedControl, *, interface_tol: float = 1e-9):
    """Blended interface pair (b_H, l_H); requires x on the hyperplane."""
    x = _as_point(x, spec.dimension)
    if np.any(np.abs(x[..., spec.interface_axis]) > interface_tol):
        raise DomainError("mixed dynamics only defined on the interface {x_N = 0}")
    b1, l1 = dyn_cost(spec, 1, x, a.alpha1)
    b2, l2 = dyn_cost(spec, 2, x, a.alpha2)
    mu = a.mu
    return mu * b1 + (1.0 - mu) * b2, mu * l1 + (1.0 - mu) * l2


def stay_put_control(spec: ProblemSpec, x, side: int) -> np.ndarray:
    """Control with b_side(x, alpha) = 0 through the family's analytic inverse."""
    x = _as_point(x, spec.dimension)
    alpha = spec.family.stay_control(side, x)
    b, _ = dyn_cost(spec, side, x, alpha)
    if np.max(np.abs(b)) > 1e-12:
        raise ProblemDefinitionError("family stay-put control failed to zero the dynamic")
    return alpha


def stay_cost(spec: ProblemSpec, side: int, x) -> np.ndarray:
    """Running cost of parking at x on the given side."""
    x = _as_point(x, spec.dimension)
    return np.asarray(spec.family.cost(side, x, spec.family.stay_control(side, x)), dtype=float)


def check_controllability(spec: ProblemSpec, box_radius: float, *, samples: int = 25,
                          seed: int = 0, tol: float = 1e-9) -> float:
    """Verify the reachability hypothesis on sampled box points.

    For each sample x and side the zero velocity and delta * e must be exact
    values of b_i(x, .) through the analytic inverse, for every coordinate
    direction e.  Returns the worst velocity defect.
    """
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-box_radius, box_radius, size=(samples, spec.dimension))
    delta = spec.controllability_radius
    worst = 0.0
    for side in (1, 2):
        alpha0 = spec.family.stay_control(side, pts)
        b0, _ = dyn_cost(spec, side, pts, alpha0)
        worst = max(worst, float(np.max(np.abs(b0))))
        for axis in range(spec.dimension):
            for sign in (1.0, -1.0):
                v = np.zeros((samples, spec.dimension))
                v[:, axis] = sign * delta
                alpha = spec.family.velocity_inverse(side, pts, v)
                b, _ = dyn_cost(spec, side, pts, alpha)
                worst = max(worst, float(np.max(np.abs(b - v))))
    if worst > tol:
        raise ProblemDefinitionError(
            f"controllability defect {worst:.3e} exceeds {tol:.1e} on the box")
    return worst


def cost_growth_ratios(spec: ProblemSpec, box_radius: float, magnitudes,
                       *, samples: int = 10, seed: int = 0) -> np.ndarray:
    """Sampled l / (1 + |b|) along control rays of growing magnitude.

    The unbounded-control hypothesis asks this ratio to blow up; superlinear
    and quadratic families satisfy it, the piecewise toy (linear cost) does
    not and is only ever used with compact truncations.
    """
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-box_radius, box_radius, size=(samples, spec.dimension))
    dirs = rng.normal(size=(samples, spec.control_dim))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    out = []
    for mag in np.asarray(magnitudes, dtype=float):
        alpha = mag * dirs
        b, l = dyn_cost(spec, 1, pts, alpha)
        ratio1 = l / (1.0 + np.linalg.norm(b, axis=-1))
        b, l = dyn_cost(spec, 2, pts, alpha)
        ratio2 = l / (1.0 + np.linalg.norm(b, axis=-1))
        out.append(min(ratio1.min(), ratio2.min()))
    return np.asarray(out)


def pull_pull_toy(dimension: int = 1, *, discount: float = 1.0) -> ProblemSpec:
    """The two-sided toy whose only cheap interface equilibrium is singular.

    Side costs |alpha_N - 1| above and |alpha_N + 1| below: each side rides
    away from the interface for free, holding it with a regular (pushing) mix
    costs at least 1 per unit time, and the singular mix (e_N, -e_N, 1/2)
    slides at zero cost.  This separates the extremal value functions at the
    interface.
    """
    rows_up = []
    rows_dn = []
    for sign in (1.0, -1.0):
        w = [0.0] * dimension
        w[dimension - 1] = sign
        rows_up.append(tuple(w + [-sign]))
        rows_dn.append(tuple(w + [sign]))
    fam = PiecewiseToy(cost_rows_1=tuple(rows_up), cost_rows_2=tuple(rows_dn))
    return ProblemSpec(dimension=dimension, discount=discount,
                       controllability_radius=1.0, family=fam)

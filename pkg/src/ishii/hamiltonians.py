"""Bellman Hamiltonians of the two-sided problem.

Everything is a supremum of the affine integrand

    F(b, l) = lambda * u - b . p - l

over some admissible family of dynamic/cost pairs:

* side Hamiltonians H_1, H_2 over one side's control ball,
* the global Hamiltonian (side value off the interface, max of both on it),
* tangential Hamiltonians over extended controls whose blended dynamics stays
  on the hyperplane, optionally restricted to regular (``reg``) or
  eta-relaxed (``eta``) normal components,
* the switch-blended Hamiltonian phi(x_N / eps) H_1 + (1 - phi) H_2.

Suprema are computed on explicit control meshes.  Radial values are laid on a
fixed lattice of step 1/radial_resolution so meshes for nested truncation
radii are themselves nested (monotonicity in m then holds exactly on the
mesh); the superlinear/quadratic families additionally expose their closed
form, which the mesh supremum must reproduce within mesh tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .problems import (
    DomainError,
    ProblemSpec,
    _as_point,
    _require_finite,
    dyn_cost,
    stay_cost,
)


class NoAdmissibleControlError(RuntimeError):
    """The admissible control set of a constrained supremum is empty on the mesh."""


class SearchCapExceededError(RuntimeError):
    """A radius search hit its cap before the defining inequality held."""


DEFAULT_RADIAL_RESOLUTION = 8
DEFAULT_ANGULAR_RESOLUTION = 16
DEFAULT_MU_SAMPLES = 8


@lru_cache(maxsize=128)
def _radial_lattice(m: float, radial_resolution: int) -> tuple[float, ...]:
    step = 1.0 / radial_resolution
    n = int(np.floor(m / step + 1e-12))
    radii = [k * step for k in range(1, n + 1)]
    if not radii or radii[-1] < m - 1e-12:
        radii.append(float(m))
    return tuple(radii)


@lru_cache(maxsize=128)
def _directions(dim: int, angular_resolution: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        angles = 2.0 * np.pi * np.arange(angular_resolution) / angular_resolution
        return np.column_stack([np.cos(angles), np.sin(angles)])
    raise NotImplementedError(f"control meshes implemented for d in {{1, 2}}, got {dim}")


def side_control_mesh(spec: ProblemSpec, m: float,
                      radial_resolution: int = DEFAULT_RADIAL_RESOLUTION,
                      angular_resolution: int = DEFAULT_ANGULAR_RESOLUTION) -> np.ndarray:
    """Deterministic polar mesh of the closed control ball of radius m.

    Always contains the origin; radii are multiples of 1/radial_resolution
    (plus the boundary radius m itself), so integer truncation radii produce
    nested meshes.
    """
    if m <= 0.0:
        raise DomainError(f"truncation radius must be positive, got {m}")
    radii = np.asarray(_radial_lattice(float(m), int(radial_resolution)))
    dirs = _directions(spec.control_dim, int(angular_resolution))
    pts = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, spec.control_dim)
    return np.vstack([np.zeros((1, spec.control_dim)), pts])


@dataclass(frozen=True)
class InterfaceControlMesh:
    """Cartesian product mesh of extended controls at one interface point.

    Flattened in C order over (side-1 index, side-2 index, mu index); the
    flattening is part of the artifact contract because admissibility masks
    are compared bitwise across value-function classes.
    """

    alpha1: np.ndarray   # (n1, d)
    alpha2: np.ndarray   # (n2, d)
    mu: np.ndarray       # (n_mu,)

    @property
    def size(self) -> int:
        return len(self.alpha1) * len(self.alpha2) * len(self.mu)

    def flat_mu(self) -> np.ndarray:
        return np.broadcast_to(self.mu, (len(self.alpha1), len(self.alpha2), len(self.mu))).reshape(-1)


def interface_control_mesh(spec: ProblemSpec, m: float,
                           radial_resolution: int = DEFAULT_RADIAL_RESOLUTION,
                           angular_resolution: int = DEFAULT_ANGULAR_RESOLUTION,
                           mu_samples: int = DEFAULT_MU_SAMPLES) -> InterfaceControlMesh:
    if mu_samples < 2:
        raise DomainError("mu_samples must be >= 2")
    mesh = side_control_mesh(spec, m, radial_resolution, angular_resolution)
    mu = np.arange(mu_samples + 1) / mu_samples
    return InterfaceControlMesh(alpha1=mesh, alpha2=mesh, mu=mu)


def interface_pairs(spec: ProblemSpec, x, mesh: InterfaceControlMesh):
    """Blended (b_H, l_H, b1.e_N, b2.e_N) arrays over the flattened mesh."""
    x = _as_point(x, spec.dimension)
    b1, l1 = dyn_cost(spec, 1, x, mesh.alpha1)
    b2, l2 = dyn_cost(spec, 2, x, mesh.alpha2)
    mu = mesh.mu[None, None, :, None]
    bh = mu * b1[:, None, None, :] + (1.0 - mu) * b2[None, :, None, :]
    lh = mu[..., 0] * l1[:, None, None] + (1.0 - mu[..., 0]) * l2[None, :, None]
    axis = spec.interface_axis
    n1 = np.broadcast_to(b1[:, None, None, axis], lh.shape)
    n2 = np.broadcast_to(b2[None, :, None, axis], lh.shape)
    d = spec.dimension
    return (bh.reshape(-1, d), lh.reshape(-1), n1.reshape(-1), n2.reshape(-1))


def hamiltonian_side(spec: ProblemSpec, side: int, x, u: float, p, m: float,
                     *, method: str = "auto",
                     radial_resolution: int = DEFAULT_RADIAL_RESOLUTION,
                     angular_resolution: int = DEFAULT_ANGULAR_RESOLUTION) -> float:
    """H_side(x, u, p) = sup over the radius-m control ball of lambda*u - b.p - l.

    ``method`` is one of ``auto`` (closed form when the family has one, mesh
    otherwise), ``closed`` or ``mesh``; the mesh path is the cross-check
    oracle for the closed form.
    """
    x = _as_point(x, spec.dimension)
    p = _as_point(p, spec.dimension)
    _require_finite("gradient", p)
    if method not in ("auto", "closed", "mesh"):
        raise DomainError(f"unknown Hamiltonian method {method!r}")
    closed = getattr(spec.family, "hamiltonian_closed_form", None)
    if method in ("auto", "closed") and closed is not None:
        return float(closed(side, x, u, p, spec.discount, m))
    if method == "closed":
        raise DomainError("family has no closed-form Hamiltonian")
    mesh = side_control_mesh(spec, m, radial_resolution, angular_resolution)
    b, l = dyn_cost(spec, side, x, mesh)
    vals = spec.discount * u - b @ np.asarray(p, dtype=float).reshape(-1) - l
    return float(np.max(vals))


def hamiltonian_global(spec: ProblemSpec, x, u: float, p, m: float,
                       *, interface_tol: float = 1e-12, **mesh_kw) -> float:
    """Side Hamiltonian off the interface, max of the two sides on it."""
    x = _as_point(x, spec.dimension)
    xn = float(x[..., spec.interface_axis])
    if xn > interface_tol:
        return hamiltonian_side(spec, 1, x, u, p, m, **mesh_kw)
    if xn < -interface_tol:
        return hamiltonian_side(spec, 2, x, u, p, m, **mesh_kw)
    return max(hamiltonian_side(spec, 1, x, u, p, m, **mesh_kw),
               hamiltonian_side(spec, 2, x, u, p, m, **mesh_kw))


def tangential_hamiltonian(spec: ProblemSpec, x, u: float, q, m: float,
                           mode: str = "full", eta: float | None = None,
                           *, tol_slide: float | None = None,
                           radial_resolution: int = DEFAULT_RADIAL_RESOLUTION,
                           angular_resolution: int = DEFAULT_ANGULAR_RESOLUTION,
                           mu_samples: int = DEFAULT_MU_SAMPLES) -> float:
    """Supremum over extended controls whose blended dynamics stays on H.

    ``q`` is the tangential gradient in R^(N-1).  The sliding filter keeps
    mesh controls with |b_H . e_N| <= tol_slide; ``reg`` additionally demands
    b_1 . e_N <= 0 and b_2 . e_N >= 0 (within tol_slide), ``eta`` relaxes
    those thresholds to +-eta.  An empty admissible set raises
    NoAdmissibleControlError rather than returning -inf.
    """
    if mode not in ("full", "reg", "eta"):
        raise DomainError(f"unknown tangential mode {mode!r}")
    if mode == "eta":
        if eta is None or eta < 0.0:
            raise DomainError("eta mode needs eta >= 0")
    x = _as_point(x, spec.dimension)
    if abs(float(x[..., spec.interface_axis])) > 1e-9:
        raise DomainError("tangential Hamiltonian only defined on the interface")
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != spec.dimension - 1:
        raise DomainError(f"tangential gradient must have length {spec.dimension - 1}")
    mesh = interface_control_mesh(spec, m, radial_resolution, angular_resolution, mu_samples)
    bh, lh, n1, n2 = interface_pairs(spec, x, mesh)
    if tol_slide is None:
        scale = max(np.max(np.abs(n1)), np.max(np.abs(n2)), 1.0)
        tol_slide = 1e-9 * scale
    axis = spec.interface_axis
    admissible = np.abs(bh[:, axis]) <= tol_slide
    if mode == "reg":
        admissible &= (n1 <= tol_slide) & (n2 >= -tol_slide)
    elif mode == "eta":
        admissible &= (n1 <= eta) & (n2 >= -eta)
    if not np.any(admissible):
        raise NoAdmissibleControlError(
            f"no admissible control on the mesh for mode={mode!r} at x={x.tolist()}")
    p_full = np.concatenate([q, [0.0]])
    vals = spec.discount * u - bh[admissible] @ p_full - lh[admissible]
    return float(np.max(vals))


def logistic_switch(y):
    return expit(y)


def filippov_hamiltonian(spec: ProblemSpec, x, u: float, p, eps: float, m: float,
                         *, switch=logistic_switch, **mesh_kw) -> float:
    """Blend H_2 + phi(x_N / eps) (H_1 - H_2); phi defaults to the logistic switch.

    Written in increment form so the blend is exact when the two sides
    coincide.
    """
    if eps <= 0.0:
        raise DomainError("filippov blending width must be positive")
    x = _as_point(x, spec.dimension)
    h1 = hamiltonian_side(spec, 1, x, u, p, m, **mesh_kw)
    h2 = hamiltonian_side(spec, 2, x, u, p, m, **mesh_kw)
    phi = float(switch(float(x[..., spec.interface_axis]) / eps))
    return h2 + phi * (h1 - h2)


def control_reduction_radius(spec: ProblemSpec, box_radius: float, value_bound: float,
                             gradient_bound: float, *,
                             x_samples: int = 9, direction_samples: int = 8,
                             step: float = 1e-3, cap: float = 1e4,
                             refine_tol: float = 1e-6) -> float:
    """Radius beyond which controls cannot attain the Hamiltonian supremum.

    Computes M_tilde = max(box_radius, value_bound, gradient_bound, worst
    stay-put cost over the box) and returns the smallest radius Gamma such
    that every sampled state, side and control direction satisfies

        l(x, t w) > M_tilde (1 + |b(x, t w)|)   for all t >= Gamma

    up to the search cap.  Beyond Gamma the integrand is dominated by the
    stay-put candidate, so enlarging the truncation cannot change the
    supremum.  Monotone non-decreasing in each bound.
    """
    if value_bound < 0.0 or gradient_bound < 0.0 or box_radius <= 0.0:
        raise DomainError("bounds must be non-negative and the box radius positive")
    if gradient_bound == 0.0:
        # integrand reduces to lambda*u - l(x, alpha); the supremum sits at the
        # cost minimiser and no truncation radius can change it
        return step
    if spec.dimension == 1:
        coords = np.linspace(-box_radius, box_radius, x_samples)[:, None]
    else:
        side = max(3, int(round(np.sqrt(x_samples))))
        axis = np.linspace(-box_radius, box_radius, side)
        coords = np.stack(np.meshgrid(*([axis] * spec.dimension), indexing="ij"),
                          axis=-1).reshape(-1, spec.dimension)
    stay = max(float(np.max(stay_cost(spec, side, coords))) for side in (1, 2))
    m_tilde = max(box_radius, value_bound, gradient_bound, stay) * (1.0 + 1e-12) + 1e-12
    dirs = _directions(spec.control_dim, direction_samples)

    def dominated(t: float) -> bool:
        alpha = t * dirs
        for side in (1, 2):
            b, l = dyn_cost(spec, side, coords[:, None, :], alpha[None, :, :])
            if not np.all(l > m_tilde * (1.0 + np.linalg.norm(b, axis=-1))):
                return False
        return True

    lo, hi = 0.0, step
    while not (dominated(hi) and all(dominated(hi * g) for g in (1.5, 2.0, 4.0))):
        lo, hi = hi, hi * 2.0
        if hi > cap:
            raise SearchCapExceededError(
                f"no domination radius found below the search cap {cap:g}")
    while hi - lo > refine_tol:
        mid = 0.5 * (lo + hi)
        if dominated(mid) and all(dominated(mid * g) for g in (1.5, 2.0, 4.0)):
            hi = mid
        else:
            lo = mid
    return max(hi, step)


HAMILTONIAN_MODES = ("side1", "side2", "global", "tangential_full",
                     "tangential_reg", "tangential_eta", "filippov")


@dataclass(frozen=True)
class HamiltonianQuery:
    """One Hamiltonian evaluation request; ``mode`` picks the variant."""

    x: np.ndarray
    u: float
    p: np.ndarray
    m: float
    mode: str
    eta: float | None = None
    eps: float | None = None

    def __post_init__(self):
        if self.mode not in HAMILTONIAN_MODES:
            raise DomainError(f"unknown Hamiltonian mode {self.mode!r}")
        if self.m <= 0.0:
            raise DomainError("truncation radius must be positive")
        if self.mode == "tangential_eta" and (self.eta is None or self.eta < 0.0):
            raise DomainError("tangential_eta mode needs eta >= 0")
        if self.mode == "filippov" and (self.eps is None or self.eps <= 0.0):
            raise DomainError("filippov mode needs eps > 0")
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "p", np.atleast_1d(np.asarray(self.p, dtype=float)))


def evaluate_hamiltonian(spec: ProblemSpec, query: HamiltonianQuery, **mesh_kw) -> float:
    if query.mode == "side1":
        return hamiltonian_side(spec, 1, query.x, query.u, query.p, query.m, **mesh_kw)
    if query.mode == "side2":
        return hamiltonian_side(spec, 2, query.x, query.u, query.p, query.m, **mesh_kw)
    if query.mode == "global":
        return hamiltonian_global(spec, query.x, query.u, query.p, query.m, **mesh_kw)
    if query.mode == "filippov":
        return filippov_hamiltonian(spec, query.x, query.u, query.p, query.eps, query.m, **mesh_kw)
    mode = {"tangential_full": "full", "tangential_reg": "reg",
            "tangential_eta": "eta"}[query.mode]
    return tangential_hamiltonian(spec, query.x, query.u, query.p, query.m,
                                  mode=mode, eta=query.eta, **mesh_kw)

"""Controlled trajectories of the discontinuous system.

Explicit Euler with event location: off the interface the active side's
dynamics is followed; a step that would cross {x_N = 0} is split at the
linearly interpolated crossing point.  On the interface the policy's control
pair is resolved by the sliding weight

    mu(x) = -b_2 . e_N / ((b_1 - b_2) . e_N)

whenever the two transversal components have strictly opposite signs (the
blended normal velocity then vanishes identically); otherwise the trajectory
leaves along the side selected by the sign of the policy's own blended normal
velocity.

Regularity classification, the discounted-cost quadrature with its decay tail
certificate, and the interface control regularization

    gamma_1 = -max(0, b_1 . e_N),  gamma_2 = -min(0, b_2 . e_N),
    beta    = min((delta - 2|gamma_1|) / delta, (delta - 2|gamma_2|) / delta),
    b_i    -> beta (b_i + gamma_i e_N)

live here as well.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, NamedTuple

import numpy as np

from .problems import (
    DomainError,
    ExtendedControl,
    ProblemSpec,
    _as_point,
    dyn_cost,
    stay_cost,
)

Policy = Callable[[float, np.ndarray, "Regime"], ExtendedControl]


class Regime(IntEnum):
    INTERFACE = 0
    OMEGA1 = 1
    OMEGA2 = 2


class TrajectoryInvariantError(RuntimeError):
    """A recorded trajectory violates one of its structural invariants."""


@dataclass(frozen=True)
class Trajectory:
    """Timestamped states, controls and regime labels of one rollout.

    ``times`` has one more entry than the step arrays; step k covers
    [times[k], times[k+1]) with the recorded control and regime.  Times are
    multiples of the nominal ``dt`` with crossing instants spliced in, so
    individual steps may be shorter.
    """

    times: np.ndarray        # (K+1,)
    states: np.ndarray       # (K+1, N)
    alpha1: np.ndarray       # (K, d)
    alpha2: np.ndarray       # (K, d)
    mu: np.ndarray           # (K,)
    regimes: np.ndarray      # (K,) Regime values
    dt: float
    truncated: bool = False

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def steps(self) -> int:
        return len(self.regimes)

    def control(self, k: int) -> ExtendedControl:
        return ExtendedControl(self.alpha1[k], self.alpha2[k], float(self.mu[k]))

    def interface_time_fraction(self) -> float:
        if self.steps == 0:
            return 0.0
        widths = np.diff(self.times)
        on = widths[self.regimes == Regime.INTERFACE].sum()
        return float(on / max(self.horizon, 1e-300))


@dataclass(frozen=True)
class RegularityReport:
    """How far a trajectory's interface controls are from regular.

    ``max_violation`` is the largest max(b_1 . e_N, 0) or max(-b_2 . e_N, 0)
    over sliding interface steps; isolated one-step interface visits are
    transversal crossings (vanishing time measure) and are not scanned.
    """

    interface_time_fraction: float
    max_violation: float
    label: str               # "regular" | "eta" | "general"
    eta: float | None = None

    @property
    def is_regular(self) -> bool:
        return self.label == "regular"


def sliding_mix(spec: ProblemSpec, x, alpha1, alpha2, *, interface_tol: float = 1e-9):
    """Mixing weight that cancels the blended normal velocity, if one exists.

    Returns mu in (0, 1) when b_1 . e_N and b_2 . e_N have strictly opposite
    signs, and None otherwise (including the tangent-tangent case, where any
    mu already slides).
    """
    x = _as_point(x, spec.dimension)
    if abs(float(x[..., spec.interface_axis])) > interface_tol:
        raise DomainError("sliding mix only defined on the interface")
    axis = spec.interface_axis
    b1, _ = dyn_cost(spec, 1, x, alpha1)
    b2, _ = dyn_cost(spec, 2, x, alpha2)
    n1, n2 = float(b1[axis]), float(b2[axis])
    if n1 * n2 >= 0.0:
        return None
    return float(-n2 / (n1 - n2))


def integrate(spec: ProblemSpec, x0, policy: Policy, T: float, dt: float,
              *, box_radius: float, speed_bound: float | None = None) -> Trajectory:
    """Roll the policy out from x0 over [0, T] with nominal step dt.

    The interface band |x_N| <= dt * B / 2 (B the running speed bound) tags
    the regime; inside it the state is projected onto the hyperplane before
    evaluating interface dynamics.  Escaping the box truncates the rollout
    with the ``truncated`` flag set.
    """
    if T <= 0.0 or dt <= 0.0:
        raise DomainError("horizon and step must be positive")
    x = _as_point(x0, spec.dimension).astype(float).copy()
    if np.max(np.abs(x)) > box_radius:
        raise DomainError("initial state outside the evaluation box")
    axis = spec.interface_axis
    bound = max(speed_bound or 0.0, 1e-12)

    times = [0.0]
    states = [x.copy()]
    a1s, a2s, mus, regimes = [], [], [], []
    truncated = False
    t = 0.0

    while t < T - 1e-12:
        tol_h = 0.5 * dt * bound
        xn = x[axis]
        if abs(xn) <= tol_h:
            regime = Regime.INTERFACE
            x = x.copy()
            x[axis] = 0.0
        elif xn > 0.0:
            regime = Regime.OMEGA1
        else:
            regime = Regime.OMEGA2

        a = policy(t, x, regime)
        step = min(dt, T - t)

        if regime == Regime.INTERFACE:
            b1, _ = dyn_cost(spec, 1, x, a.alpha1)
            b2, _ = dyn_cost(spec, 2, x, a.alpha2)
            mu_star = sliding_mix(spec, x, a.alpha1, a.alpha2)
            if mu_star is not None:
                mu_eff = mu_star
                b = mu_eff * b1 + (1.0 - mu_eff) * b2
                b[axis] = 0.0
            else:
                mu_eff = a.mu
                b = mu_eff * b1 + (1.0 - mu_eff) * b2
                if abs(b[axis]) <= 1e-15:
                    b = b.copy()
                    b[axis] = 0.0
                elif b[axis] > 0.0:
                    b = b1
                else:
                    b = b2
            x_next = x + step * b
        else:
            side = 1 if regime == Regime.OMEGA1 else 2
            alpha = a.alpha1 if side == 1 else a.alpha2
            b, _ = dyn_cost(spec, side, x, alpha)
            mu_eff = a.mu
            x_next = x + step * b
            if x[axis] * x_next[axis] < 0.0:
                # crossing: split the step at the interpolated event time
                theta = x[axis] / (x[axis] - x_next[axis])
                step = max(theta * step, 1e-15)
                x_next = x + step * b
                x_next[axis] = 0.0

        bound = max(bound, float(np.max(np.abs(b))))
        if np.max(np.abs(x_next)) > box_radius + 1e-12:
            truncated = True
            break

        t += step
        times.append(t)
        states.append(x_next)
        a1s.append(np.atleast_1d(np.asarray(a.alpha1, dtype=float)))
        a2s.append(np.atleast_1d(np.asarray(a.alpha2, dtype=float)))
        mus.append(mu_eff)
        regimes.append(int(regime))
        x = x_next

    return Trajectory(times=np.asarray(times), states=np.asarray(states),
                      alpha1=np.asarray(a1s).reshape(len(a1s), spec.control_dim),
                      alpha2=np.asarray(a2s).reshape(len(a2s), spec.control_dim),
                      mu=np.asarray(mus, dtype=float),
                      regimes=np.asarray(regimes, dtype=np.int64),
                      dt=dt, truncated=truncated)


def validate_trajectory(traj: Trajectory, spec: ProblemSpec, *, tol_slide: float = 1e-9,
                        speed_slack: float = 1.01) -> None:
    """Check the structural invariants of a recorded trajectory.

    Sliding interface steps must have vanishing blended normal velocity and
    every step must respect |X_{k+1} - X_k| <= step * |b| with slack.
    """
    widths = np.diff(traj.times)
    if np.any(widths <= 0.0):
        raise TrajectoryInvariantError("times must be strictly increasing")
    axis = spec.interface_axis
    for k in np.nonzero(traj.regimes == Regime.INTERFACE)[0]:
        if not _is_sliding_step(traj, k):
            continue
        x = traj.states[k].copy()
        x[axis] = 0.0
        b1, _ = dyn_cost(spec, 1, x, traj.alpha1[k])
        b2, _ = dyn_cost(spec, 2, x, traj.alpha2[k])
        bn = traj.mu[k] * b1[axis] + (1.0 - traj.mu[k]) * b2[axis]
        if abs(bn) > tol_slide:
            raise TrajectoryInvariantError(
                f"sliding step {k} has blended normal velocity {bn:.3e}")
    for k in range(traj.steps):
        jump = np.linalg.norm(traj.states[k + 1] - traj.states[k])
        if traj.regimes[k] == Regime.INTERFACE:
            x = traj.states[k].copy()
            x[axis] = 0.0
            b1, _ = dyn_cost(spec, 1, x, traj.alpha1[k])
            b2, _ = dyn_cost(spec, 2, x, traj.alpha2[k])
            speed = max(np.linalg.norm(b1), np.linalg.norm(b2))
        else:
            side = 1 if traj.regimes[k] == Regime.OMEGA1 else 2
            alpha = traj.alpha1[k] if side == 1 else traj.alpha2[k]
            b, _ = dyn_cost(spec, side, traj.states[k], alpha)
            speed = np.linalg.norm(b)
        if jump > widths[k] * speed * speed_slack + 1e-12:
            raise TrajectoryInvariantError(f"step {k} jumps faster than its dynamics")


def _is_sliding_step(traj: Trajectory, k: int) -> bool:
    if traj.regimes[k] != Regime.INTERFACE:
        return False
    before = k > 0 and traj.regimes[k - 1] == Regime.INTERFACE
    after = k + 1 < traj.steps and traj.regimes[k + 1] == Regime.INTERFACE
    return before or after


def classify(traj: Trajectory, spec: ProblemSpec, eta: float,
             *, tol_slide: float = 1e-9) -> RegularityReport:
    """Regularity class of a trajectory's sliding behaviour.

    Scans sliding interface steps for violations of b_1 . e_N <= 0 and
    b_2 . e_N >= 0; the class thresholds are nested, so regular implies
    eta-admissible implies eta'-admissible for eta <= eta'.
    """
    if eta < 0.0:
        raise DomainError("eta must be non-negative")
    axis = spec.interface_axis
    worst = 0.0
    for k in np.nonzero(traj.regimes == Regime.INTERFACE)[0]:
        if not _is_sliding_step(traj, k):
            continue
        x = traj.states[k].copy()
        x[axis] = 0.0
        b1, _ = dyn_cost(spec, 1, x, traj.alpha1[k])
        b2, _ = dyn_cost(spec, 2, x, traj.alpha2[k])
        worst = max(worst, max(b1[axis], 0.0), max(-b2[axis], 0.0))
    if worst <= tol_slide:
        label = "regular"
    elif worst <= eta + tol_slide:
        label = "eta"
    else:
        label = "general"
    return RegularityReport(interface_time_fraction=traj.interface_time_fraction(),
                            max_violation=float(worst), label=label, eta=eta)


class CostBracket(NamedTuple):
    cost: float
    tail_bound: float


def discounted_cost(traj: Trajectory, spec: ProblemSpec) -> CostBracket:
    """Left-endpoint quadrature of the discounted running cost.

    Returns the finite-horizon sum together with a stay-put tail certificate:
    from the final state the cost-to-go is at most l_stay(X_T) / lambda, so
    the infinite-horizon value along this control is bracketed by
    [cost, cost + tail_bound].
    """
    lam = spec.discount
    widths = np.diff(traj.times)
    total = 0.0
    axis = spec.interface_axis
    for k in range(traj.steps):
        x = traj.states[k]
        if traj.regimes[k] == Regime.INTERFACE:
            x = x.copy()
            x[axis] = 0.0
            _, l1 = dyn_cost(spec, 1, x, traj.alpha1[k])
            _, l2 = dyn_cost(spec, 2, x, traj.alpha2[k])
            l = traj.mu[k] * l1 + (1.0 - traj.mu[k]) * l2
        else:
            side = 1 if traj.regimes[k] == Regime.OMEGA1 else 2
            alpha = traj.alpha1[k] if side == 1 else traj.alpha2[k]
            _, l = dyn_cost(spec, side, x, alpha)
        total += float(l) * np.exp(-lam * traj.times[k]) * widths[k]
    x_end = traj.states[-1]
    if abs(x_end[axis]) <= 1e-12:
        park = min(float(stay_cost(spec, 1, x_end)), float(stay_cost(spec, 2, x_end)))
    elif x_end[axis] > 0.0:
        park = float(stay_cost(spec, 1, x_end))
    else:
        park = float(stay_cost(spec, 2, x_end))
    tail = park / lam * np.exp(-lam * traj.horizon)
    return CostBracket(cost=float(total), tail_bound=float(tail))


class RegularizationOutOfRange(RuntimeError):
    """Control regularization needs eta < delta / 2."""


def regularize_control(spec: ProblemSpec, x, a: ExtendedControl, eta: float):
    """Project an eta-admissible interface control onto the regular cone.

    Implements the two-step construction: absorb the normal violations
    gamma_i, shrink by beta = min_i (delta - 2|gamma_i|) / delta, and invert
    the corrected dynamics beta (b_i + gamma_i e_N) through the family's
    analytic control inverse.  Returns the regularized control and the worst
    per-side dynamic perturbation |b_i' - b_i|, which is O(eta).
    """
    x = _as_point(x, spec.dimension)
    axis = spec.interface_axis
    if abs(float(x[axis])) > 1e-9:
        raise DomainError("control regularization only defined on the interface")
    delta = spec.controllability_radius
    if eta < 0.0:
        raise DomainError("eta must be non-negative")
    if eta >= delta / 2.0:
        raise RegularizationOutOfRange(
            f"regularization out of range: eta={eta} >= delta/2={delta / 2.0}")
    b1, _ = dyn_cost(spec, 1, x, a.alpha1)
    b2, _ = dyn_cost(spec, 2, x, a.alpha2)
    n1, n2 = float(b1[axis]), float(b2[axis])
    if n1 > eta + 1e-12 or n2 < -eta - 1e-12:
        raise DomainError(
            f"control is not eta-admissible: b1.e_N={n1:.3e}, b2.e_N={n2:.3e}, eta={eta}")
    gamma1 = -max(0.0, n1)
    gamma2 = -min(0.0, n2)
    beta = min((delta - 2.0 * abs(gamma1)) / delta, (delta - 2.0 * abs(gamma2)) / delta)
    e_n = np.zeros(spec.dimension)
    e_n[axis] = 1.0
    targets = (beta * (b1 + gamma1 * e_n), beta * (b2 + gamma2 * e_n))
    new_alpha = [spec.family.velocity_inverse(side, x, v)
                 for side, v in zip((1, 2), targets)]
    nb1, _ = dyn_cost(spec, 1, x, new_alpha[0])
    nb2, _ = dyn_cost(spec, 2, x, new_alpha[1])
    perturbation = max(float(np.linalg.norm(nb1 - b1)), float(np.linalg.norm(nb2 - b2)))
    return ExtendedControl(new_alpha[0], new_alpha[1], a.mu), perturbation


def constant_policy(a: ExtendedControl) -> Policy:
    return lambda t, x, regime: a


def stay_put_policy(spec: ProblemSpec) -> Policy:
    def policy(t, x, regime):
        return ExtendedControl(spec.family.stay_control(1, x),
                               spec.family.stay_control(2, x), 0.5)
    return policy

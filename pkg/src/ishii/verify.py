"""Property harness: turns the theory's testable claims into measured checks.

Every check yields rows carrying a stable ``check_id`` (a descriptive anchor
naming the property, e.g. ``eta-family-ordering``), a pass flag, the measured
margin (signed distance to the threshold, >= 0 passing), the tolerance used,
and the provenance of the inputs.  Negative controls are first-class: the
harness is expected to flag deliberately broken inputs, and the test suite
asserts that it does.

Default residual tolerances are C * h with the constant calibrated once on
the exact-solution toys and frozen here (``RESIDUAL_CONSTANT``).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bellman import (
    Grid,
    GridFunction,
    SolverConfig,
    solve_value,
    value_tolerance,
)
from .hamiltonians import (
    NoAdmissibleControlError,
    control_reduction_radius,
    side_control_mesh,
)
from .problems import DomainError, ProblemSpec, Superlinear, dyn_cost

# Calibrated on the no-discontinuity exact-solution toy (constant cost, value
# f / lambda): the upwind mesh-sup residual of the converged solver stays
# below ~1.2 h there; factor headroom for the kinked toys.
RESIDUAL_CONSTANT = 4.0


@dataclass(frozen=True)
class CheckResult:
    check_id: str
    passed: bool
    margin: float
    tolerance: float
    provenance: str = ""
    details: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        out = f"[{status}] {self.check_id}"
        if self.provenance:
            out += f" [{self.provenance}]"
        out += f": margin={self.margin:.6g} tol={self.tolerance:.6g}"
        if self.details:
            out += f" ({self.details})"
        return out


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple[CheckResult, ...] = ()

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def merged(self, other: "VerificationReport") -> "VerificationReport":
        return VerificationReport(self.checks + other.checks)

    def summary_text(self) -> str:
        return "\n".join(c.line() for c in self.checks)

    def rows(self):
        for c in self.checks:
            yield (c.check_id, "pass" if c.passed else "fail", c.margin,
                   c.tolerance, c.provenance, c.details)


def _result(check_id, passed, margin, tolerance, provenance="", details=""):
    return CheckResult(check_id=check_id, passed=bool(passed), margin=float(margin),
                       tolerance=float(tolerance), provenance=provenance, details=details)


def check_ordering(functions, spec: ProblemSpec, *, slack: float | None = None) -> VerificationReport:
    """Pairwise pointwise ordering of value functions listed smallest first.

    The listed order is asserted: each function must lie below the next one
    within the slack (default: sum of the pair's fixed-point value
    tolerances, doubled).
    """
    if len(functions) < 2:
        raise DomainError("ordering needs at least two functions")
    grid = functions[0].grid
    for gf in functions:
        if gf.grid.shape != grid.shape or gf.grid.spacing != grid.spacing:
            raise DomainError("ordering requires a shared grid")
    checks = []
    coords = grid.coordinates()
    for lo, hi in zip(functions, functions[1:]):
        tol = slack
        if tol is None:
            tol = 2.0 * (value_tolerance(lo, spec) + value_tolerance(hi, spec))
        gap = hi.values - lo.values
        worst = int(np.argmin(gap))
        margin = float(gap[worst] + tol)
        checks.append(_result(
            "value-ordering", gap[worst] >= -tol, margin, tol,
            provenance=f"{lo.class_tag.describe()} <= {hi.class_tag.describe()}",
            details=f"worst node x={coords[worst].tolist()} gap={gap[worst]:.3e}"))
    return VerificationReport(tuple(checks))


def _one_sided_gradients(grid: Grid, values: np.ndarray):
    """Forward and backward difference fields per axis, shape (nodes, N)."""
    table = values.reshape(grid.shape)
    h = grid.spacing
    fwd = np.empty(table.shape + (grid.dimension,))
    bwd = np.empty_like(fwd)
    for axis in range(grid.dimension):
        d = np.diff(table, axis=axis) / h
        pad_lo = [slice(None)] * grid.dimension
        pad_hi = [slice(None)] * grid.dimension
        pad_lo[axis] = slice(0, 1)
        pad_hi[axis] = slice(-1, None)
        fwd[..., axis] = np.concatenate([d, d[tuple(pad_hi)]], axis=axis)
        bwd[..., axis] = np.concatenate([d[tuple(pad_lo)], d], axis=axis)
    n = grid.n_nodes
    return fwd.reshape(n, grid.dimension), bwd.reshape(n, grid.dimension)


def _upwind_hamiltonian(spec: ProblemSpec, grid: Grid, values: np.ndarray, side: int,
                        node_idx: np.ndarray, m: float, config: SolverConfig,
                        normal_override: str | None = None) -> np.ndarray:
    """Mesh supremum of lambda u - b . D^upw u - l at the given nodes.

    Each control upwinds every axis by the sign of its own velocity, matching
    the one-step interpolation the solver uses; ``normal_override`` forces the
    normal-axis derivative one-sided from above (``plus``) or below
    (``minus``) for interface evaluations.
    """
    coords = grid.coordinates()
    fwd, bwd = _one_sided_gradients(grid, values)
    mesh = side_control_mesh(spec, m, config.radial_resolution, config.angular_resolution)
    x = coords[node_idx][:, None, :]
    b, l = dyn_cost(spec, side, x, mesh[None, :, :])
    b = np.broadcast_to(b, (len(node_idx), len(mesh), spec.dimension))
    l = np.broadcast_to(l, b.shape[:2])
    grad = np.where(b > 0.0, fwd[node_idx][:, None, :], bwd[node_idx][:, None, :])
    if normal_override is not None:
        axis = spec.dimension - 1
        pick = fwd if normal_override == "plus" else bwd
        grad = grad.copy()
        grad[..., axis] = pick[node_idx][:, None, axis]
    u = values[node_idx]
    vals = spec.discount * u[:, None] - np.einsum("ncj,ncj->nc", b, grad) - l
    return np.max(vals, axis=1)


def viscosity_residuals(gf: GridFunction, spec: ProblemSpec, m: float,
                        *, config: SolverConfig = SolverConfig(),
                        residual_constant: float = RESIDUAL_CONSTANT,
                        inner_fraction: float = 0.5,
                        include_tangential: bool | None = None) -> VerificationReport:
    """PDE residuals of a tabulated value function, with upwind gradients.

    Off the interface: |H_side(x, U, DU)| <= C h on inner nodes.  On the
    interface: min(H_1, H_2) <= C h with one-sided normal derivatives from
    each side, max(H_1, H_2) >= -C h, and (for the minimal class, or when
    forced) the tangential supremum over sliding mesh controls <= C h.
    """
    grid = gf.grid
    h = grid.spacing
    tol = residual_constant * h
    coords = grid.coordinates()
    xn = coords[:, spec.dimension - 1]
    inner = grid.inner_node_mask(inner_fraction)
    checks = []
    label = gf.class_tag.describe()

    worst = 0.0
    for side, sel in ((1, (xn > 0.0) & inner), (2, (xn < 0.0) & inner)):
        idx = np.nonzero(sel)[0]
        if not len(idx):
            continue
        res = _upwind_hamiltonian(spec, grid, gf.values, side, idx, m, config)
        worst = max(worst, float(np.max(np.abs(res))))
    checks.append(_result("side-equation-residual", worst <= tol, tol - worst, tol,
                          provenance=label, details=f"max |H_side| = {worst:.3e}"))

    iface = np.nonzero((xn == 0.0) & inner)[0]
    if len(iface):
        h1 = _upwind_hamiltonian(spec, grid, gf.values, 1, iface, m, config,
                                 normal_override="plus")
        h2 = _upwind_hamiltonian(spec, grid, gf.values, 2, iface, m, config,
                                 normal_override="minus")
        worst_min = float(np.max(np.minimum(h1, h2)))
        worst_max = float(np.min(np.maximum(h1, h2)))
        checks.append(_result("interface-subsolution-min", worst_min <= tol,
                              tol - worst_min, tol, provenance=label,
                              details=f"max over nodes of min(H1,H2) = {worst_min:.3e}"))
        checks.append(_result("interface-supersolution-max", worst_max >= -tol,
                              worst_max + tol, tol, provenance=label,
                              details=f"min over nodes of max(H1,H2) = {worst_max:.3e}"))
        tang = include_tangential
        if tang is None:
            tang = gf.class_tag.kind == "minus"
        if tang:
            from .hamiltonians import tangential_hamiltonian
            worst_t = -np.inf
            table = gf.values.reshape(grid.shape)
            grads = np.gradient(table, h) if grid.dimension > 1 else [np.gradient(table, h)]
            centered = np.stack([g.reshape(-1) for g in grads], axis=-1)
            for node in iface:
                q = centered[node][:-1]
                try:
                    val = tangential_hamiltonian(
                        spec, coords[node], float(gf.values[node]), q, m,
                        mode="full",
                        tol_slide=config.tol_slide if config.tol_slide is not None else None,
                        radial_resolution=config.radial_resolution,
                        angular_resolution=config.angular_resolution,
                        mu_samples=config.mu_samples)
                except NoAdmissibleControlError:
                    continue
                worst_t = max(worst_t, val)
            checks.append(_result("interface-tangential-subsolution", worst_t <= tol,
                                  tol - worst_t, tol, provenance=label,
                                  details=f"max H_T = {worst_t:.3e}"))
    return VerificationReport(tuple(checks))


def psi_test_function(x: np.ndarray, growth_exponent: float) -> np.ndarray:
    """The negative algebraic test function -(1 + |x|^(2a))^(1/2)."""
    s = np.sum(np.square(x), axis=-1)
    return -np.sqrt(1.0 + s ** growth_exponent)


def psi_gradient(x: np.ndarray, growth_exponent: float) -> np.ndarray:
    a = growth_exponent
    s = np.sum(np.square(x), axis=-1, keepdims=True)
    safe = np.where(s > 0.0, s, 1.0)
    return -a * np.where(s > 0.0, safe ** (a - 1.0), (1.0 if a == 1.0 else 0.0)) \
        * x / np.sqrt(1.0 + s ** a)


def check_psi_subsolution(spec: ProblemSpec, grid: Grid, growth_exponent: float, m: float,
                          *, config: SolverConfig = SolverConfig(),
                          tol: float = 1e-9, sign: float = 1.0) -> VerificationReport:
    """The algebraic barrier is a subsolution of all three Hamiltonian tests.

    Evaluates H_1, H_2 on every grid node and the tangential supremum on
    interface nodes, with the analytic gradient of sign * psi; all must stay
    <= tol.  ``sign=-1`` is the negative control (the flipped barrier must
    fail).
    """
    if growth_exponent <= 0.5:
        raise DomainError("barrier exponent must exceed 1/2")
    if not isinstance(spec.family, (Superlinear,)):
        raise DomainError("barrier check is defined for the superlinear family")
    from .hamiltonians import hamiltonian_side, tangential_hamiltonian
    coords = grid.coordinates()
    u = sign * psi_test_function(coords, growth_exponent)
    p = sign * psi_gradient(coords, growth_exponent)
    worst = -np.inf
    for side in (1, 2):
        for k in range(len(coords)):
            worst = max(worst, hamiltonian_side(spec, side, coords[k], float(u[k]),
                                                p[k], m, method="mesh",
                                                radial_resolution=config.radial_resolution,
                                                angular_resolution=config.angular_resolution))
    worst_t = -np.inf
    for node in grid.interface_node_indices():
        try:
            worst_t = max(worst_t, tangential_hamiltonian(
                spec, coords[node], float(u[node]), p[node][:-1], m,
                mode="full", radial_resolution=config.radial_resolution,
                angular_resolution=config.angular_resolution,
                mu_samples=config.mu_samples))
        except NoAdmissibleControlError:
            continue
    checks = (
        _result("barrier-side-subsolution", worst <= tol, tol - worst, tol,
                provenance=f"sign={sign:g}", details=f"max H_side = {worst:.3e}"),
        _result("barrier-tangential-subsolution", worst_t <= tol, tol - worst_t, tol,
                provenance=f"sign={sign:g}", details=f"max H_T = {worst_t:.3e}"),
    )
    return VerificationReport(checks)


def hull_sup_equivalence(spec: ProblemSpec, x, u: float, p, m: float,
                         *, samples: int = 2000, seed: int = 0,
                         config: SolverConfig = SolverConfig(),
                         objective=None, tol: float = 1e-9) -> VerificationReport:
    """Convex combinations of mesh (b, l) pairs cannot beat the vertices.

    With the affine Bellman integrand the supremum over sampled convex hulls
    of each side's (b, l) set equals the vertex supremum up to 1e-9; a
    non-convex ``objective`` is the documented negative control.
    """
    if samples < 1000:
        raise DomainError("hull sampling needs at least 1000 draws")
    rng = np.random.default_rng(seed)
    p = np.asarray(p, dtype=float).reshape(-1)
    if objective is None:
        def objective(b, l):
            return spec.discount * u - b @ p - l
    checks = []
    for side in (1, 2):
        mesh = side_control_mesh(spec, m, config.radial_resolution, config.angular_resolution)
        b, l = dyn_cost(spec, side, np.asarray(x, dtype=float), mesh)
        vertex_sup = float(np.max(objective(b, l)))
        n = len(mesh)
        k = 3
        idx = rng.integers(0, n, size=(samples, k))
        w = rng.dirichlet(np.ones(k), size=samples)
        bc = np.einsum("sk,skj->sj", w, b[idx])
        lc = np.einsum("sk,sk->s", w, l[idx])
        hull_sup = float(np.max(objective(bc, lc)))
        margin = vertex_sup + tol - hull_sup
        checks.append(_result("hull-supremum-identity", hull_sup <= vertex_sup + tol,
                              margin, tol, provenance=f"side {side}",
                              details=f"hull sup {hull_sup:.9g} vs vertex sup {vertex_sup:.9g}"))
    return VerificationReport(tuple(checks))


def check_discount_decay(spec: ProblemSpec, trajectories, gf: GridFunction,
                         *, horizons=(2.0, 4.0, 8.0)) -> VerificationReport:
    """Discounted terminal values U(X(T)) e^(-lambda T) decay geometrically.

    For each trajectory the sampled sequence must be dominated by
    sup |U| e^(-lambda T) and decrease at least by the discount factor times
    the spread of the sampled |U| values per horizon doubling.  Trajectories
    leaving the box are skipped with a notice.
    """
    grid = gf.grid
    table = gf.values.reshape(grid.shape)
    sup_u = float(np.max(np.abs(gf.values)))
    lam = spec.discount
    checks = []
    for i, traj in enumerate(trajectories):
        if traj.truncated or traj.horizon < max(horizons) - 1e-9:
            checks.append(_result("discount-decay", True, 0.0, 0.0,
                                  provenance=f"trajectory {i}",
                                  details="skipped: leaves the box before the last horizon"))
            continue
        vals = []
        u_samples = []
        for T in horizons:
            k = int(np.searchsorted(traj.times, T - 1e-12))
            k = min(k, len(traj.times) - 1)
            x = traj.states[k]
            rel = np.clip((x + grid.half_width) / grid.spacing, 0, len(grid.axis) - 1)
            idx = tuple(int(round(r)) for r in rel)
            uval = float(table[idx])
            u_samples.append(abs(uval))
            vals.append(uval * np.exp(-lam * T))
        dominated = all(v <= sup_u * np.exp(-lam * T) + 1e-12
                        for v, T in zip(vals, horizons))
        spread = (max(u_samples) + 1e-12) / (min(u_samples) + 1e-12)
        ok = dominated
        worst_ratio = 0.0
        for (v0, T0), (v1, T1) in zip(zip(vals, horizons), zip(vals[1:], horizons[1:])):
            bound = abs(v0) * np.exp(-lam * (T1 - T0)) * spread + 1e-12
            worst_ratio = max(worst_ratio, abs(v1) - bound)
            ok = ok and abs(v1) <= bound
        checks.append(_result("discount-decay", ok, -worst_ratio, 1e-12,
                              provenance=f"trajectory {i}",
                              details=f"values {[f'{v:.3e}' for v in vals]}"))
    return VerificationReport(tuple(checks))


def check_truncation_stability(spec: ProblemSpec, grid: Grid, class_tag, m_list,
                               config: SolverConfig = SolverConfig(),
                               *, value_bound: float | None = None,
                               gradient_bound: float | None = None) -> VerificationReport:
    """Value functions are pointwise non-increasing in the truncation radius.

    All solves share the time step and sliding tolerance computed for the
    largest radius so the admissible sets are nested; the final increment
    must drop below the summed fixed-point tolerances once the radius passes
    the control-reduction radius of the box.
    """
    m_list = [float(m) for m in m_list]
    if any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise DomainError("truncation radii must be strictly increasing")
    if len(m_list) == 1:
        return VerificationReport((_result("truncation-monotonicity", True, 0.0, 0.0,
                                           details="single radius: vacuous"),))
    shared = _shared_operator_config(spec, grid, max(m_list), config)
    sols = [solve_value(spec, grid, class_tag, m, shared) for m in m_list]
    checks = []
    for lo_m, hi_m, lo, hi in zip(m_list, m_list[1:], sols, sols[1:]):
        tol = 2.0 * (value_tolerance(lo, spec) + value_tolerance(hi, spec))
        gap = lo.values - hi.values
        worst = float(np.min(gap))
        checks.append(_result("truncation-monotonicity", worst >= -tol, worst + tol, tol,
                              provenance=f"m={lo_m:g} vs m={hi_m:g}",
                              details=f"min decrease {worst:.3e}"))
    final = float(np.max(np.abs(sols[-1].values - sols[-2].values)))
    tol = 2.0 * (value_tolerance(sols[-1], spec) + value_tolerance(sols[-2], spec))
    details = f"sup increment {final:.3e}"
    if value_bound is not None and gradient_bound is not None:
        radius = control_reduction_radius(spec, grid.half_width, value_bound, gradient_bound)
        details += f"; reduction radius {radius:.3g}"
    checks.append(_result("truncation-stabilization", final <= tol, tol - final, tol,
                          provenance=f"m={m_list[-2]:g} -> m={m_list[-1]:g}", details=details))
    return VerificationReport(tuple(checks))


def _shared_operator_config(spec: ProblemSpec, grid: Grid, m_max: float,
                            config: SolverConfig) -> SolverConfig:
    """Pin time step and sliding tolerance from the largest truncation."""
    if config.time_step is not None and config.tol_slide is not None:
        return config
    mesh = side_control_mesh(spec, m_max, config.radial_resolution, config.angular_resolution)
    coords = grid.coordinates()
    speed = 0.0
    normal = 0.0
    for side in (1, 2):
        b, _ = dyn_cost(spec, side, coords[:, None, :], mesh[None, :, :])
        speed = max(speed, float(np.max(np.abs(b))))
        normal = max(normal, float(np.max(np.abs(b[..., spec.dimension - 1]))))
    tau = config.time_step or config.dt_factor * grid.spacing / max(speed, 1e-12)
    tol_slide = config.tol_slide
    if tol_slide is None:
        tol_slide = 0.1 * grid.spacing * max(normal, 1e-12)
    return replace(config, time_step=tau, tol_slide=tol_slide)


def check_growth_class(gf: GridFunction, growth_exponent: float,
                       *, eps_hat: float = 0.5, bound_constant: float = 2.0,
                       inner_fraction: float = 0.5) -> VerificationReport:
    """Solution stays inside the algebraic growth envelope of its class."""
    grid = gf.grid
    inner = grid.inner_node_mask(inner_fraction)
    s = np.sum(np.square(grid.coordinates()), axis=-1)
    a = growth_exponent
    low = -bound_constant * (1.0 + s ** a) ** (0.5 - eps_hat) - bound_constant
    high = bound_constant * (1.0 + s ** a) ** (0.5 - eps_hat / (2.0 * a)) + bound_constant
    vals = gf.values
    worst = float(np.min(np.minimum(vals - low, high - vals)[inner]))
    return VerificationReport((_result(
        "growth-class-envelope", worst >= 0.0, worst, 0.0,
        provenance=gf.class_tag.describe(),
        details=f"worst envelope clearance {worst:.3e}"),))

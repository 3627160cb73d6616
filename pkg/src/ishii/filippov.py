"""Monotone finite-difference solver for the switch-blended equation.

The discontinuous pair (H_1, H_2) is replaced by the continuous blend

    H_eps(x, u, p) = H_2(x, u, p) + phi(x_N / eps) (H_1 - H_2)(x, u, p)

and the equation H_eps(x, u, Du) = 0 is relaxed to its fixed point with a
Lax-Friedrichs update

    u <- u - rho [ H_eps(x, u, D_c u) - sum_j sigma_j (u_{+j} - 2 u + u_{-j}) / (2h) ]

using centered differences D_c and per-axis artificial viscosities sigma_j at
least as large as the mesh envelope of |dH/dp_j|.  The update is monotone
when rho (lambda + sum_j sigma_j / h) <= 1.  Boundary nodes carry Dirichlet
data from the stay-put value bound, matching the Bellman solver's box
localization on the shipped problems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bellman import Grid, GridFunction, SolverError, filippov_class
from .hamiltonians import logistic_switch, side_control_mesh
from .problems import DomainError, ProblemSpec, dyn_cost, stay_cost


@dataclass(frozen=True)
class FDScheme:
    """Lax-Friedrichs discretization parameters.

    ``sigma`` and ``relaxation`` default to automatic choices: sigma per axis
    from mesh samples of |b| (re-estimated once per run), and
    rho = safety / (lambda + sum sigma_j / h), which satisfies the
    monotonicity condition with margin 1 - safety.
    """

    sigma: tuple[float, ...] | None = None
    relaxation: float | None = None
    safety: float = 0.9
    tolerance: float = 1e-7
    max_iterations: int = 400_000
    radial_resolution: int = 8
    angular_resolution: int = 16

    def __post_init__(self):
        if not 0.0 < self.safety <= 1.0:
            raise DomainError("safety factor must lie in (0, 1]")
        if self.tolerance <= 0.0:
            raise DomainError("tolerance must be positive")


def estimate_sigma(spec: ProblemSpec, grid: Grid, m: float, scheme: FDScheme) -> np.ndarray:
    """Per-axis envelope of |dH/dp_j| from mesh samples of the dynamics."""
    coords = grid.coordinates()
    mesh = side_control_mesh(spec, m, scheme.radial_resolution, scheme.angular_resolution)
    out = np.zeros(spec.dimension)
    for side in (1, 2):
        b, _ = dyn_cost(spec, side, coords[:, None, :], mesh[None, :, :])
        out = np.maximum(out, np.max(np.abs(b), axis=(0, 1)))
    return out


def _mesh_tables(spec: ProblemSpec, grid: Grid, m: float, scheme: FDScheme):
    coords = grid.coordinates()
    mesh = side_control_mesh(spec, m, scheme.radial_resolution, scheme.angular_resolution)
    tables = {}
    for side in (1, 2):
        b, l = dyn_cost(spec, side, coords[:, None, :], mesh[None, :, :])
        n_c = len(mesh)
        tables[side] = (np.broadcast_to(b, (len(coords), n_c, spec.dimension)),
                        np.broadcast_to(l, (len(coords), n_c)))
    return tables


def blended_hamiltonian_field(spec: ProblemSpec, tables, phi: np.ndarray,
                              u: np.ndarray, p: np.ndarray) -> np.ndarray:
    """H_eps at every node given nodewise u and gradient p (n, N)."""
    lam = spec.discount
    hvals = {}
    for side in (1, 2):
        b, l = tables[side]
        hvals[side] = np.max(lam * u[:, None] - np.einsum("ncj,nj->nc", b, p) - l, axis=1)
    return hvals[2] + phi * (hvals[1] - hvals[2])


def make_defect(spec: ProblemSpec, grid: Grid, eps: float, m: float,
                scheme: FDScheme = FDScheme(), *, switch=logistic_switch):
    """Build the relaxation defect u -> H_eps(x, u, D_c u) - viscosity(u).

    Returns (defect, rho, sigma); the solver's update is u <- u - rho *
    defect(u) on interior nodes, and the property tests drive ``defect``
    directly for the monotonicity and consistency checks.
    """
    if eps <= 0.0:
        raise DomainError("blending width eps must be positive")
    h = grid.spacing
    lam = spec.discount
    dim = grid.dimension
    sigma = np.asarray(scheme.sigma if scheme.sigma is not None
                       else estimate_sigma(spec, grid, m, scheme), dtype=float)
    if sigma.ndim == 0:
        sigma = np.full(dim, float(sigma))
    rho = scheme.relaxation
    if rho is None:
        rho = scheme.safety / (lam + float(np.sum(sigma)) / h)
    if rho * (lam + float(np.sum(sigma)) / h) > 1.0 + 1e-12:
        raise DomainError(
            "monotonicity condition rho (lambda + sum sigma / h) <= 1 violated")
    coords = grid.coordinates()
    phi = np.asarray(switch(coords[:, dim - 1] / eps), dtype=float)
    tables = _mesh_tables(spec, grid, m, scheme)

    def defect(u: np.ndarray) -> np.ndarray:
        grads = np.gradient(u, h) if dim > 1 else [np.gradient(u, h)]
        p = np.stack([g.reshape(-1) for g in grads], axis=-1)
        ham = blended_hamiltonian_field(spec, tables, phi, u.reshape(-1), p)
        visc = np.zeros(grid.shape)
        for axis in range(dim):
            upper = np.roll(u, -1, axis=axis)
            lower = np.roll(u, 1, axis=axis)
            visc += sigma[axis] * (upper - 2.0 * u + lower) / (2.0 * h)
        return ham.reshape(grid.shape) - visc

    return defect, float(rho), sigma


def solve_filippov(spec: ProblemSpec, grid: Grid, eps: float, m: float,
                   scheme: FDScheme = FDScheme(), *, switch=logistic_switch) -> GridFunction:
    """Relax u - rho [H_eps - viscosity] to its fixed point.

    Raises SolverError with the trailing residual trace on divergence or
    iteration exhaustion; the converged function carries class filippov(eps).
    """
    defect_fn, rho, _ = make_defect(spec, grid, eps, m, scheme, switch=switch)
    lam = spec.discount
    shape = grid.shape
    dim = grid.dimension
    coords = grid.coordinates()
    xn = coords[:, dim - 1]
    park = np.where(xn > 0.0, stay_cost(spec, 1, coords),
                    np.where(xn < 0.0, stay_cost(spec, 2, coords),
                             np.minimum(stay_cost(spec, 1, coords),
                                        stay_cost(spec, 2, coords))))
    u = (park / lam).reshape(shape)
    interior = np.ones(shape, dtype=bool)
    for axis in range(dim):
        sl = [slice(None)] * dim
        sl[axis] = 0
        interior[tuple(sl)] = False
        sl[axis] = -1
        interior[tuple(sl)] = False

    trace = []
    residual = np.inf
    for it in range(1, scheme.max_iterations + 1):
        defect = defect_fn(u)
        residual = float(np.max(np.abs(defect[interior])))
        if len(trace) < 50 or it % 100 == 0:
            trace.append(residual)
        if residual < scheme.tolerance:
            return GridFunction(grid=grid, values=u.reshape(-1), class_tag=filippov_class(eps),
                                truncation=float(m), iterations=it, final_residual=residual,
                                time_step=rho, converged=True)
        if not np.isfinite(residual) or residual > 1e12:
            raise SolverError(
                f"relaxation diverged at sweep {it}; residual trace tail {trace[-5:]}",
                residual)
        u_new = u - rho * defect
        u = np.where(interior, u_new, u)
    raise SolverError(
        f"relaxation did not reach {scheme.tolerance:g} within {scheme.max_iterations} "
        f"sweeps (trace tail {trace[-5:]})", residual)


@dataclass(frozen=True)
class SweepRow:
    eps: float
    distance: float
    iterations: int


@dataclass(frozen=True)
class SweepReport:
    rows: tuple[SweepRow, ...]
    monotone: bool
    reference: str
    inner_fraction: float
    functions: tuple[GridFunction, ...] = field(repr=False, default=())

    @property
    def final_distance(self) -> float:
        return self.rows[-1].distance


def epsilon_sweep(spec: ProblemSpec, grid: Grid, m: float, eps_list,
                  scheme: FDScheme = FDScheme(), *, reference: GridFunction,
                  inner_fraction: float = 0.5, switch=logistic_switch) -> SweepReport:
    """Distances sup_inner |u_eps - reference| for a decreasing eps ladder."""
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise DomainError("eps ladder must be strictly decreasing")
    if reference.grid.shape != grid.shape:
        raise DomainError("reference grid does not match")
    inner = grid.inner_node_mask(inner_fraction)
    rows = []
    funcs = []
    for eps in eps_list:
        gf = solve_filippov(spec, grid, eps, m, scheme, switch=switch)
        dist = float(np.max(np.abs(gf.values[inner] - reference.values[inner])))
        rows.append(SweepRow(eps=eps, distance=dist, iterations=gf.iterations))
        funcs.append(gf)
    monotone = all(rows[i + 1].distance <= rows[i].distance + 1e-12
                   for i in range(len(rows) - 1))
    return SweepReport(rows=tuple(rows), monotone=monotone,
                       reference=reference.class_tag.describe(),
                       inner_fraction=inner_fraction, functions=tuple(funcs))

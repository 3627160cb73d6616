"""Semi-Lagrangian solvers for the extremal and eta value functions.

The discrete dynamic programming operator on a hyperplane-aligned box grid is

    (T V)(x) = min over admissible controls { tau * l + e^(-lambda tau) V~(x + tau b) }

with V~ the multilinear interpolant.  Off the interface the admissible set is
the active side's control mesh; at interface nodes it is

    { sliding extended controls passing the class filter }
      union { pure one-sided controls (mu in {0, 1}) that exit the hyperplane }

where "sliding" means |b_H . e_N| <= tol_slide (the step is then projected
exactly onto the hyperplane).  The class filters on sliding controls are:
none for the minimal class, the regular cone b_1 . e_N <= tol_slide and
b_2 . e_N >= -tol_slide for the maximal class, and the relaxed thresholds
+-eta in between.  Strict mixes with nonzero normal velocity are excluded:
blended dynamics is only realizable while on the hyperplane, and keeping such
controls would let near-singular mixes counterfeit sliding for one time step.

Steps that would leave the box are excluded from the admissible set (the
hard-penalty limit of discouraging outward flow); the stay-put control keeps
every admissible set nonempty, and reported values are meant to be read on
the inner part of the box.

Value iteration starts from the discrete stay-put value tau * l_stay / (1 - gamma),
an upper fixed-point bound, so sweeps are monotone non-increasing.  A separate
finite-horizon backward recursion (``finite_horizon_oracle``) reimplements the
one-step minimisation with its own interpolation code as an independent
cross-check of the fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .hamiltonians import interface_control_mesh, interface_pairs, side_control_mesh
from .problems import DomainError, ProblemSpec, dyn_cost, stay_cost


class GridError(ValueError):
    """Grid construction violated an alignment requirement."""


class SolverError(RuntimeError):
    """Iteration failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Grid:
    """Uniform box grid on [-L, L]^N with a node row exactly on {x_N = 0}."""

    dimension: int
    half_width: float
    spacing: float
    axis: np.ndarray
    shape: tuple[int, ...]

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def interface_axis_index(self) -> int:
        return (len(self.axis) - 1) // 2

    def coordinates(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.dimension), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.dimension)

    def interface_node_indices(self) -> np.ndarray:
        coords = self.coordinates()
        return np.nonzero(coords[:, self.dimension - 1] == 0.0)[0]

    def inner_node_mask(self, fraction: float = 0.5) -> np.ndarray:
        coords = self.coordinates()
        return np.all(np.abs(coords) <= fraction * self.half_width + 1e-12, axis=1)


def build_grid(dimension: int, half_width: float, spacing: float) -> Grid:
    if dimension < 1:
        raise GridError("grid dimension must be >= 1")
    if half_width <= 0.0 or spacing <= 0.0:
        raise GridError("half width and spacing must be positive")
    ratio = half_width / spacing
    k = round(ratio)
    if abs(ratio - k) > 1e-9 or k < 1:
        raise GridError(
            f"half_width / spacing = {ratio} is not a positive integer; "
            "the interface must be a node row")
    axis = (np.arange(2 * k + 1) - k) * spacing
    return Grid(dimension=dimension, half_width=float(half_width),
                spacing=float(spacing), axis=axis,
                shape=(2 * k + 1,) * dimension)


@dataclass(frozen=True)
class ValueClass:
    """Which trajectory class a tabulated value function approximates."""

    kind: str                 # "minus" | "plus" | "eta" | "filippov"
    param: float | None = None

    def __post_init__(self):
        if self.kind not in ("minus", "plus", "eta", "filippov"):
            raise DomainError(f"unknown value class {self.kind!r}")
        if self.kind in ("eta", "filippov") and (self.param is None or self.param < 0.0):
            raise DomainError(f"class {self.kind!r} needs a non-negative parameter")

    def describe(self) -> str:
        if self.param is None:
            return self.kind
        return f"{self.kind}({self.param:g})"


MINUS = ValueClass("minus")
PLUS = ValueClass("plus")


def eta_class(eta: float) -> ValueClass:
    return ValueClass("eta", float(eta))


def filippov_class(eps: float) -> ValueClass:
    return ValueClass("filippov", float(eps))


@dataclass(frozen=True)
class SolverConfig:
    """Discretization knobs shared by the value solvers.

    ``tolerance`` is the sup-norm stopping threshold on one sweep's change;
    the distance to the exact discrete fixed point is bounded by
    tolerance / (1 - gamma), exposed as the value tolerance of the result.
    ``time_step`` overrides tau = dt_factor * h / max |b| when sweeps over
    several truncation radii must share one operator.
    """

    dt_factor: float = 1.0
    radial_resolution: int = 8
    angular_resolution: int = 16
    mu_samples: int = 8
    tolerance: float = 1e-9
    max_iterations: int = 200_000
    tol_slide: float | None = None
    time_step: float | None = None

    def __post_init__(self):
        if self.dt_factor <= 0.0 or self.dt_factor > 1.0:
            raise DomainError("dt_factor must lie in (0, 1]")
        if self.radial_resolution < 2 or self.angular_resolution < 2 or self.mu_samples < 2:
            raise DomainError("control mesh resolutions must be >= 2")
        if self.tolerance <= 0.0:
            raise DomainError("tolerance must be positive")


@dataclass(frozen=True)
class GridFunction:
    """A value function tabulated on a grid, tagged with its provenance."""

    grid: Grid
    values: np.ndarray
    class_tag: ValueClass
    truncation: float
    iterations: int
    final_residual: float
    time_step: float
    converged: bool

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise DomainError("grid function values must be finite")

    def at_origin(self) -> float:
        idx = tuple([self.grid.interface_axis_index] * self.grid.dimension)
        return float(self.values.reshape(self.grid.shape)[idx])


def _interp_table(grid: Grid, pos: np.ndarray):
    """Multilinear gather table for fractional index positions (P, N).

    Returns flat corner indices (P, 2^N) and weights (P, 2^N); positions are
    assumed inside [0, len(axis) - 1] per axis.
    """
    n_ax = len(grid.axis)
    dim = grid.dimension
    base = np.floor(pos).astype(np.int64)
    np.clip(base, 0, n_ax - 2, out=base)
    frac = pos - base
    corners = 1 << dim
    idx = np.empty((pos.shape[0], corners), dtype=np.int64)
    wgt = np.empty((pos.shape[0], corners))
    strides = np.array([n_ax ** (dim - 1 - j) for j in range(dim)], dtype=np.int64)
    for c in range(corners):
        offs = np.array([(c >> (dim - 1 - j)) & 1 for j in range(dim)], dtype=np.int64)
        idx[:, c] = (base + offs) @ strides
        w = np.ones(pos.shape[0])
        for j in range(dim):
            w *= frac[:, j] if offs[j] else (1.0 - frac[:, j])
        wgt[:, c] = w
    return idx, wgt


def _sliding_filter(class_tag: ValueClass, n1, n2, tol_slide: float):
    if class_tag.kind == "minus":
        return np.ones_like(n1, dtype=bool)
    if class_tag.kind == "plus":
        return (n1 <= tol_slide) & (n2 >= -tol_slide)
    if class_tag.kind == "eta":
        return (n1 <= class_tag.param) & (n2 >= -class_tag.param)
    raise DomainError(f"class {class_tag.kind!r} is not a trajectory class")


def default_tol_slide(grid: Grid, normal_scale: float) -> float:
    return 0.1 * grid.spacing * max(normal_scale, 1e-12)


class _Operator:
    """Precomputed one-sweep dynamic programming operator."""

    def __init__(self, spec: ProblemSpec, grid: Grid, class_tag: ValueClass,
                 m: float, config: SolverConfig):
        if class_tag.kind == "filippov":
            raise DomainError("the Bellman solver handles trajectory classes only")
        dim = spec.dimension
        coords = grid.coordinates()
        xn = coords[:, dim - 1]
        h = grid.spacing
        mesh = side_control_mesh(spec, m, config.radial_resolution, config.angular_resolution)
        groups = []   # (node_indices, tau*cost (n, c), target positions (n, c, N))

        side_data = {}
        speed = 0.0
        for side, node_idx in ((1, np.nonzero(xn > 0.0)[0]), (2, np.nonzero(xn < 0.0)[0])):
            x = coords[node_idx][:, None, :]
            b, l = dyn_cost(spec, side, x, mesh[None, :, :])
            b = np.broadcast_to(b, (len(node_idx), len(mesh), dim))
            l = np.broadcast_to(l, (len(node_idx), len(mesh)))
            side_data[side] = (node_idx, b, l)
            if b.size:
                speed = max(speed, float(np.max(np.abs(b))))

        iface_idx = grid.interface_node_indices()
        imesh = interface_control_mesh(spec, m, config.radial_resolution,
                                       config.angular_resolution, config.mu_samples)
        iface_rows = []
        for node in iface_idx:
            bh, lh, n1, n2 = interface_pairs(spec, coords[node], imesh)
            iface_rows.append((bh, lh, n1, n2))
            speed = max(speed, float(np.max(np.abs(bh))))

        tau = config.time_step
        if tau is None:
            tau = config.dt_factor * h / max(speed, 1e-12)
        self.tau = float(tau)
        self.gamma = float(np.exp(-spec.discount * tau))

        tol_slide = config.tol_slide
        if tol_slide is None:
            normal_scale = max((float(np.max(np.abs(r[2]))) for r in iface_rows), default=1.0)
            normal_scale = max(normal_scale,
                               max((float(np.max(np.abs(r[3]))) for r in iface_rows), default=1.0))
            tol_slide = default_tol_slide(grid, normal_scale)
        self.tol_slide = float(tol_slide)

        n_ax = len(grid.axis)
        step_cells = self.tau / h

        def positions(node_idx, b):
            node_pos = np.stack(np.unravel_index(node_idx, grid.shape), axis=-1).astype(float)
            return node_pos[:, None, :] + step_cells * b

        def admit_inside(pos):
            return np.all((pos >= -1e-9) & (pos <= n_ax - 1 + 1e-9), axis=-1)

        for side in (1, 2):
            node_idx, b, l = side_data[side]
            if len(node_idx) == 0:
                continue
            pos = positions(node_idx, b)
            ok = admit_inside(pos)
            groups.append(self._pack(grid, node_idx, l, pos, ok))

        if len(iface_idx):
            mu_flat = imesh.flat_mu()
            pure = (mu_flat == 0.0) | (mu_flat == 1.0)
            masks = []
            packs = []
            for node, (bh, lh, n1, n2) in zip(iface_idx, iface_rows):
                sliding = np.abs(bh[:, dim - 1]) <= self.tol_slide
                ok = (sliding & _sliding_filter(class_tag, n1, n2, self.tol_slide)) \
                    | (pure & ~sliding)
                pos = positions(np.array([node]), bh[None, :, :])
                pos[0, sliding, dim - 1] = grid.interface_axis_index
                ok &= admit_inside(pos)[0]
                masks.append(ok)
                packs.append(self._pack(grid, np.array([node]), lh[None, :], pos, ok[None, :]))
            groups.extend(packs)
            self.interface_masks = np.asarray(masks)
        else:
            self.interface_masks = np.zeros((0, 0), dtype=bool)

        self.groups = groups
        self.n_nodes = grid.n_nodes
        for node_idx, tl, idx, wgt in groups:
            if np.any(np.all(np.isinf(tl), axis=1)):
                raise SolverError("a node has no admissible control", np.inf)

    def _pack(self, grid: Grid, node_idx, l, pos, ok):
        n, c = l.shape
        idx, wgt = _interp_table(grid, np.clip(pos.reshape(-1, grid.dimension),
                                               0.0, len(grid.axis) - 1))
        idx = idx.reshape(n, c, -1)
        wgt = wgt.reshape(n, c, -1)
        tl = np.where(ok, self.tau * l, np.inf)
        wgt = np.where(ok[..., None], wgt, 0.0)
        return (node_idx, tl, idx, wgt)

    def apply(self, values: np.ndarray) -> np.ndarray:
        out = values.copy()
        for node_idx, tl, idx, wgt in self.groups:
            interp = np.einsum("ncj,ncj->nc", wgt, values[idx])
            out[node_idx] = np.min(tl + self.gamma * interp, axis=1)
        return out

    def stay_value(self, spec: ProblemSpec, grid: Grid) -> np.ndarray:
        coords = grid.coordinates()
        xn = coords[:, spec.dimension - 1]
        park = np.where(xn > 0.0, stay_cost(spec, 1, coords),
                        np.where(xn < 0.0, stay_cost(spec, 2, coords),
                                 np.minimum(stay_cost(spec, 1, coords),
                                            stay_cost(spec, 2, coords))))
        return self.tau * park / (1.0 - self.gamma)


def solve_value(spec: ProblemSpec, grid: Grid, class_tag: ValueClass, m: float,
                config: SolverConfig = SolverConfig()) -> GridFunction:
    """Value iteration to the fixed point of the class-filtered DPP operator."""
    op = _Operator(spec, grid, class_tag, m, config)
    v = op.stay_value(spec, grid)
    residual = np.inf
    for it in range(1, config.max_iterations + 1):
        v_new = op.apply(v)
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        if residual < config.tolerance:
            return GridFunction(grid=grid, values=v, class_tag=class_tag,
                                truncation=float(m), iterations=it,
                                final_residual=residual, time_step=op.tau,
                                converged=True)
    raise SolverError(
        f"value iteration did not reach {config.tolerance:g} within "
        f"{config.max_iterations} sweeps (last residual {residual:.3e})", residual)


def value_tolerance(gf: GridFunction, spec: ProblemSpec) -> float:
    """Bound on |values - exact discrete fixed point| from the stop residual."""
    gamma = float(np.exp(-spec.discount * gf.time_step))
    return gf.final_residual * gamma / (1.0 - gamma)


def dpp_residual(gf: GridFunction, spec: ProblemSpec, m: float,
                 config: SolverConfig = SolverConfig()) -> np.ndarray:
    """Per-node one-step dynamic programming defect |V - T V|."""
    cfg = replace(config, time_step=gf.time_step)
    op = _Operator(spec, gf.grid, gf.class_tag, m, cfg)
    return np.abs(op.apply(gf.values) - gf.values)


def interface_admissibility_mask(spec: ProblemSpec, grid: Grid, class_tag: ValueClass,
                                 m: float, config: SolverConfig = SolverConfig()) -> np.ndarray:
    """Admissible-control masks at interface nodes, (n_interface, n_extended).

    The flattening order is the interface control mesh's C order, making the
    masks directly comparable bitwise across value classes.
    """
    op = _Operator(spec, grid, class_tag, m, config)
    return op.interface_masks


def finite_horizon_oracle(spec: ProblemSpec, grid: Grid, class_tag: ValueClass,
                          m: float, T: float, dt: float,
                          config: SolverConfig = SolverConfig()) -> GridFunction:
    """Backward recursion V_k = min { dt l + e^(-lambda dt) V_{k+1}(x + dt b) }.

    Independent cross-check of ``solve_value``: same control meshes and
    admissibility semantics, but a hand-rolled interpolation and minimisation
    path with no shared update kernel, started from V(T) = 0.
    """
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 or steps < 0:
        raise DomainError("horizon must be a non-negative multiple of dt")
    dim = spec.dimension
    coords = grid.coordinates()
    xn = coords[:, dim - 1]
    h = grid.spacing
    n_ax = len(grid.axis)
    gamma = float(np.exp(-spec.discount * dt))
    mesh = side_control_mesh(spec, m, config.radial_resolution, config.angular_resolution)

    # candidate lists per node group: (node indices, dt*cost, target points (n, c, N))
    plans = []
    for side, sel in ((1, xn > 0.0), (2, xn < 0.0)):
        node_idx = np.nonzero(sel)[0]
        if not len(node_idx):
            continue
        x = coords[node_idx][:, None, :]
        b, l = dyn_cost(spec, side, x, mesh[None, :, :])
        b = np.broadcast_to(b, (len(node_idx), len(mesh), dim)).copy()
        l = np.broadcast_to(l, (len(node_idx), len(mesh))).copy()
        target = x + dt * b
        inside = np.all(np.abs(target) <= grid.half_width + 1e-12, axis=-1)
        cost = np.where(inside, dt * l, np.inf)
        plans.append((node_idx, cost, target))

    imesh = interface_control_mesh(spec, m, config.radial_resolution,
                                   config.angular_resolution, config.mu_samples)
    mu_flat = imesh.flat_mu()
    pure = (mu_flat == 0.0) | (mu_flat == 1.0)
    normal_scale = 1e-12
    iface_raw = []
    for node in grid.interface_node_indices():
        bh, lh, n1, n2 = interface_pairs(spec, coords[node], imesh)
        normal_scale = max(normal_scale, float(np.max(np.abs(n1))), float(np.max(np.abs(n2))))
        iface_raw.append((node, bh, lh, n1, n2))
    tol_slide = config.tol_slide
    if tol_slide is None:
        tol_slide = default_tol_slide(grid, normal_scale)
    for node, bh, lh, n1, n2 in iface_raw:
        sliding = np.abs(bh[:, dim - 1]) <= tol_slide
        ok = (sliding & _sliding_filter(class_tag, n1, n2, tol_slide)) | (pure & ~sliding)
        target = coords[node][None, :] + dt * bh
        target[sliding, dim - 1] = 0.0
        ok &= np.all(np.abs(target) <= grid.half_width + 1e-12, axis=-1)
        cost = np.where(ok, dt * lh, np.inf)
        plans.append((np.array([node]), cost[None, :], target[None, :, :]))

    def lerp(values: np.ndarray, points: np.ndarray) -> np.ndarray:
        rel = np.clip((points + grid.half_width) / h, 0.0, n_ax - 1)
        table = values.reshape(grid.shape)
        if dim == 1:
            return np.interp(rel[..., 0], np.arange(n_ax), table)
        if dim == 2:
            i = np.clip(np.floor(rel[..., 0]).astype(np.int64), 0, n_ax - 2)
            j = np.clip(np.floor(rel[..., 1]).astype(np.int64), 0, n_ax - 2)
            s = rel[..., 0] - i
            t = rel[..., 1] - j
            return ((1.0 - s) * (1.0 - t) * table[i, j] + s * (1.0 - t) * table[i + 1, j]
                    + (1.0 - s) * t * table[i, j + 1] + s * t * table[i + 1, j + 1])
        raise NotImplementedError("oracle interpolation implemented for N in {1, 2}")

    v = np.zeros(grid.n_nodes)
    for _ in range(steps):
        v_next = v.copy()
        for node_idx, cost, target in plans:
            vals = lerp(v, target)
            v_next[node_idx] = np.min(cost + gamma * np.where(np.isfinite(cost), vals, 0.0),
                                      axis=-1)
        v = v_next
    return GridFunction(grid=grid, values=v, class_tag=class_tag, truncation=float(m),
                        iterations=steps, final_residual=0.0, time_step=float(dt),
                        converged=True)

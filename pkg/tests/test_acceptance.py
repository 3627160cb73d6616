"""Acceptance suite: every criterion asserted at its stated tolerance.

Each test prints one pass/fail line.  Criterion 7 is a known-honest failure:
a monotone Lax-Friedrichs relaxation with the required viscosity sigma >= 1
obeys a discrete maximum principle at the interface node, so it cannot
reproduce the zero-cost singular-sliding notch of the minimal value function
there; the sup distance to that reference has an eps-independent floor of
order sqrt(sigma h) (saturating near the maximal value once eps falls below
h), which is incompatible with the joint requirement of a monotone eps-ladder
and a final distance below 10 h at any grid spacing.  The assertion is kept
as stated rather than weakened.
"""

import time

import numpy as np
import pytest

from ishii.bellman import (
    MINUS,
    PLUS,
    SolverConfig,
    build_grid,
    eta_class,
    finite_horizon_oracle,
    interface_admissibility_mask,
    solve_value,
    value_tolerance,
)
from ishii.dynamics import ExtendedControl, regularize_control
from ishii.filippov import FDScheme, epsilon_sweep
from ishii.hamiltonians import control_reduction_radius, hamiltonian_side
from ishii.problems import ProblemSpec, Superlinear, dyn_cost, pull_pull_toy
from ishii.verify import (
    check_ordering,
    check_psi_subsolution,
    check_truncation_stability,
    viscosity_residuals,
)

H_FINE = 0.01


def report(number: int, name: str, ok: bool, detail: str = "") -> bool:
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion-{number:02d} {name}" + (f": {detail}" if detail else ""))
    return ok


@pytest.fixture(scope="module")
def toy():
    return pull_pull_toy()


@pytest.fixture(scope="module")
def cfg():
    return SolverConfig(tolerance=1e-9)


@pytest.fixture(scope="module")
def grid_fine():
    return build_grid(1, 1.0, H_FINE)


@pytest.fixture(scope="module")
def suite(toy, grid_fine, cfg):
    tags = {"minus": MINUS, "plus": PLUS}
    tags.update({f"eta{e:g}": eta_class(e) for e in (1.0, 0.5, 0.25, 0.125)})
    return {name: solve_value(toy, grid_fine, tag, 1.0, cfg)
            for name, tag in tags.items()}


def test_criterion_1_ordering_suite(toy, cfg):
    t0 = time.perf_counter()
    grid = build_grid(1, 1.0, H_FINE)
    sols = [solve_value(toy, grid, tag, 1.0, cfg)
            for tag in (MINUS, eta_class(1.0), eta_class(0.25), PLUS)]
    ordering = check_ordering(sols, toy)
    gap = sols[-1].at_origin() - sols[0].at_origin()
    oracle_ok = True
    worst = 0.0
    for gf in (sols[0], sols[-1]):
        orc = finite_horizon_oracle(toy, grid, gf.class_tag, 1.0, 10.0,
                                    gf.time_step, cfg)
        dist = float(np.max(np.abs(orc.values - gf.values)))
        worst = max(worst, dist)
        oracle_ok &= dist <= np.exp(-10.0) + 1e-5
    elapsed = time.perf_counter() - t0
    ok = ordering.all_passed and gap >= 0.1 and oracle_ok and elapsed < 10.0
    assert report(1, "ordering-suite", ok,
                  f"gap={gap:.4f}, worst oracle distance {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_wide_eta_exactness(toy, grid_fine, cfg, suite):
    mask_minus = interface_admissibility_mask(toy, grid_fine, MINUS, 1.0, cfg)
    mask_eta = interface_admissibility_mask(toy, grid_fine, eta_class(1.0), 1.0, cfg)
    bitwise = np.array_equal(mask_minus, mask_eta)
    values = np.array_equal(suite["eta1"].values, suite["minus"].values)
    assert report(2, "wide-eta-exactness", bitwise and values,
                  f"masks equal={bitwise}, values equal={values}")


def test_criterion_3_eta_shrinks_to_plus(toy, grid_fine, cfg, suite):
    inner = grid_fine.inner_node_mask()
    plus = suite["plus"]
    gaps = []
    slacks = []
    for name in ("eta1", "eta0.5", "eta0.25", "eta0.125"):
        gf = suite[name]
        gaps.append(float(np.max(np.abs(gf.values[inner] - plus.values[inner]))))
        slacks.append(2.0 * (value_tolerance(gf, toy) + value_tolerance(plus, toy)))
    monotone = all(b <= a + s for a, b, s in zip(gaps, gaps[1:], slacks[1:]))
    final_ok = gaps[-1] <= 5 * H_FINE
    assert report(3, "eta-to-plus-convergence", monotone and final_ok,
                  "gaps " + ", ".join(f"{g:.3g}" for g in gaps))


def test_criterion_4_truncation_monotonicity():
    t0 = time.perf_counter()
    spec = ProblemSpec(dimension=1, discount=4.0, controllability_radius=1.0,
                       family=Superlinear(power=2.0, f1=(0.0, 1.0), f2=(0.0, 1.0)))
    grid = build_grid(1, 1.0, 0.02)
    cfg = SolverConfig(tolerance=1e-8, radial_resolution=4, mu_samples=4)
    rep = check_truncation_stability(spec, grid, MINUS, [1.0, 2.0, 4.0, 8.0], cfg,
                                     value_bound=0.25, gradient_bound=2.5)
    elapsed = time.perf_counter() - t0
    ok = rep.all_passed and elapsed < 60.0
    assert report(4, "truncation-monotonicity", ok,
                  f"{len(rep.checks)} checks, {elapsed:.1f}s")


def test_criterion_5_closed_form_agreement():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for power in (1.5, 2.0, 3.0):
        spec = ProblemSpec(dimension=1, discount=1.0, controllability_radius=1.0,
                           family=Superlinear(power=power))
        m = control_reduction_radius(spec, 1.0, 1.0, 2.0)
        for _ in range(100):
            x = rng.uniform(-1.0, 1.0)
            u = rng.uniform(-1.0, 1.0)
            p = rng.uniform(-2.0, 2.0)
            closed = hamiltonian_side(spec, 1, [x], u, [p], m, method="closed")
            mesh = hamiltonian_side(spec, 1, [x], u, [p], m, method="mesh",
                                    radial_resolution=512)
            worst = max(worst, abs(mesh - closed))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and elapsed < 5.0
    assert report(5, "closed-form-agreement", ok,
                  f"worst |mesh - closed| = {worst:.2e}, {elapsed:.1f}s")


def test_criterion_6_viscosity_residual_suite(toy, cfg, suite):
    minus_rep = viscosity_residuals(suite["minus"], toy, 1.0, config=cfg)
    plus_rep = viscosity_residuals(suite["plus"], toy, 1.0, config=cfg,
                                   include_tangential=True)
    plus_failures = {c.check_id for c in plus_rep.checks if not c.passed}
    residuals = {}
    for h in (0.02, H_FINE):
        grid = build_grid(1, 1.0, h)
        gf = suite["minus"] if h == H_FINE else solve_value(toy, grid, MINUS, 1.0, cfg)
        rep = viscosity_residuals(gf, toy, 1.0, config=cfg)
        side = [c for c in rep.checks if c.check_id == "side-equation-residual"][0]
        residuals[h] = side.tolerance - side.margin
    halves = residuals[H_FINE] <= 0.6 * residuals[0.02]
    ok = (minus_rep.all_passed
          and plus_failures == {"interface-tangential-subsolution"}
          and halves)
    assert report(6, "viscosity-residual-suite", ok,
                  f"minus green={minus_rep.all_passed}, plus fails {sorted(plus_failures)}, "
                  f"residual {residuals[0.02]:.3f} -> {residuals[H_FINE]:.3f}")


def test_criterion_7_filippov_convergence(toy, grid_fine, cfg, suite):
    t0 = time.perf_counter()
    rep = epsilon_sweep(toy, grid_fine, 1.0, [0.4, 0.2, 0.1, 0.05], FDScheme(),
                        reference=suite["minus"])
    elapsed = time.perf_counter() - t0
    final_ok = rep.final_distance <= 10 * H_FINE
    ok = rep.monotone and final_ok and elapsed < 120.0
    report(7, "filippov-convergence", ok,
           "distances " + ", ".join(f"{r.distance:.3f}" for r in rep.rows)
           + f", {elapsed:.1f}s")
    assert ok, ("monotone Lax-Friedrichs viscosity fills the singular-sliding "
                "notch at the interface by O(sqrt(sigma h)), an eps-independent "
                "floor; see the module docstring")


def test_criterion_8_barrier_subsolution():
    spec = ProblemSpec(dimension=1, discount=1.0, controllability_radius=1.0,
                       family=Superlinear(power=2.0, growth_exponent=1.0))
    rep1 = check_psi_subsolution(spec, build_grid(1, 1.0, 0.05), 1.0, 4.0)
    spec2 = ProblemSpec(dimension=2, discount=1.0, controllability_radius=1.0,
                        family=Superlinear(power=2.0, growth_exponent=1.0))
    rep2 = check_psi_subsolution(spec2, build_grid(2, 1.0, 0.5), 1.0, 4.0,
                                 config=SolverConfig(radial_resolution=4,
                                                     angular_resolution=8,
                                                     mu_samples=4))
    ok = rep1.all_passed and rep2.all_passed
    assert report(8, "barrier-subsolution", ok, "1D and 2D grids")


def test_criterion_9_regularization_formulas():
    spec = ProblemSpec(dimension=2, discount=1.0, controllability_radius=1.0,
                       family=Superlinear(power=2.0))
    rng = np.random.default_rng(99)
    x = np.zeros(2)
    worst = {}
    signs_ok = True
    for eta in (0.2, 0.1, 0.05):
        perts = []
        for _ in range(1000):
            up = eta * rng.uniform(0.0, 1.0)
            down = eta * rng.uniform(0.0, 1.0)
            tangent = rng.uniform(-1.0, 1.0, size=2)
            v1 = np.array([tangent[0], up])
            v2 = np.array([tangent[1], -down])
            a = ExtendedControl(spec.family.velocity_inverse(1, x, v1),
                                spec.family.velocity_inverse(2, x, v2),
                                down / (up + down) if up + down > 0 else 0.5)
            out, pert = regularize_control(spec, x, a, eta)
            b1, _ = dyn_cost(spec, 1, x, out.alpha1)
            b2, _ = dyn_cost(spec, 2, x, out.alpha2)
            signs_ok &= b1[1] <= 1e-12 and b2[1] >= -1e-12
            perts.append(pert)
        worst[eta] = max(perts)
    monotone = worst[0.05] < worst[0.1] < worst[0.2]
    ok = signs_ok and monotone and worst[0.05] <= 0.5 * worst[0.2]
    assert report(9, "regularization-formulas", ok,
                  ", ".join(f"eta={e:g}: {worst[e]:.4f}" for e in (0.2, 0.1, 0.05)))


def test_criterion_10_determinism(tmp_path):
    import filecmp
    from pathlib import Path

    from ishii.cli import main
    shipped = Path(__file__).resolve().parents[1] / "configs" / "toy_pullpull.toml"
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    code1 = main(["run", "--config", str(shipped), "--out", str(out1)])
    code2 = main(["run", "--config", str(shipped), "--out", str(out2)])
    names = sorted(p.name for p in out1.iterdir())
    same_names = names == sorted(p.name for p in out2.iterdir())
    match, mismatch, errors = filecmp.cmpfiles(out1, out2, names, shallow=False)
    ok = code1 == 0 and code2 == 0 and same_names and not mismatch and not errors
    assert report(10, "determinism", ok,
                  f"{len(names)} artifacts, mismatched {mismatch}, errors {errors}")

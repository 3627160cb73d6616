"""Experiment runner.

A single TOML config drives solves, sweeps and verification checks; the
runner emits a deterministic artifact tree (CSV tables, JSON sidecars, a
report and a one-line-per-check summary).  Identical configs and seeds
produce byte-identical artifacts.

Config grammar (TOML; sections, scalars and lists only, no expressions)::

    [problem]
    family = "pull_pull_toy"        # superlinear | quadratic | piecewise_toy | pull_pull_toy
    dimension = 1
    discount = 1.0
    controllability_radius = 1.0
    # superlinear: power, coefficient_growth, growth_exponent,
    #              d1 = [1.0], d2 = [1.0], f1 = [0.0], f2 = [0.0]
    # quadratic:   c1, c2, f1 = [...], f2 = [...]
    # piecewise_toy: cost_rows_1 = [[w.., o], ...], cost_rows_2 = [...],
    #                drift_1 = [..], drift_2 = [..]

    [grid]
    half_width = 1.0
    spacing = 0.01

    [solver]     # semi-Lagrangian knobs, all optional
    [filippov]   # Lax-Friedrichs knobs, all optional

    [run]
    truncation = 1.0
    classes = ["minus", "plus"]
    eta = [1.0, 0.25]
    epsilon = []
    m_sweep = []
    checks = ["ordering", "viscosity", "oracle", "masks"]
    oracle_horizon = 10.0
    seed = 0
    inner_fraction = 0.5
    trajectory_policies = []
    trajectory_x0 = [0.5]
    trajectory_horizon = 10.0
    trajectory_dt = 0.01

    [output]
    directory = "out"

Exit codes: 0 success, 1 config error, 2 solver failure, 3 verification
failure.  ``ISHII_OUTPUT_DIR`` overrides the output directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from . import artifacts, verify
from .bellman import (
    MINUS,
    PLUS,
    GridFunction,
    SolverConfig,
    SolverError,
    ValueClass,
    build_grid,
    eta_class,
    finite_horizon_oracle,
    interface_admissibility_mask,
    solve_value,
    value_tolerance,
)
from .dynamics import ExtendedControl, integrate
from .filippov import FDScheme, epsilon_sweep
from .problems import (
    PiecewiseToy,
    ProblemDefinitionError,
    ProblemSpec,
    Quadratic,
    Superlinear,
    pull_pull_toy,
)
from .verify import VerificationReport


class ConfigError(ValueError):
    pass


EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2, 3

_DEFAULTS = {
    "problem": {"family": "pull_pull_toy", "dimension": 1, "discount": 1.0,
                "controllability_radius": 1.0},
    "grid": {"half_width": 1.0, "spacing": 0.01},
    "solver": {"dt_factor": 1.0, "radial_resolution": 8, "angular_resolution": 16,
               "mu_samples": 8, "tolerance": 1e-9, "max_iterations": 200000},
    "filippov": {"safety": 0.9, "tolerance": 1e-7, "max_iterations": 400000,
                 "radial_resolution": 8, "angular_resolution": 16},
    "run": {"truncation": 1.0, "classes": ["minus", "plus"], "eta": [],
            "epsilon": [], "m_sweep": [], "checks": [], "oracle_horizon": 10.0,
            "seed": 0, "inner_fraction": 0.5, "trajectory_policies": [],
            "trajectory_x0": [0.5], "trajectory_horizon": 10.0, "trajectory_dt": 0.01},
    "output": {"directory": "out"},
}

_FAMILY_KEYS = {
    "superlinear": {"power", "coefficient_growth", "growth_exponent",
                    "d1", "d2", "f1", "f2"},
    "quadratic": {"c1", "c2", "f1", "f2"},
    "piecewise_toy": {"cost_rows_1", "cost_rows_2", "drift_1", "drift_2"},
    "pull_pull_toy": set(),
}

KNOWN_CHECKS = ("ordering", "viscosity", "oracle", "masks", "truncation",
                "hull", "psi", "decay")


def parse_config(text: str) -> dict:
    """Parse and canonicalize a config; unknown sections or keys are errors."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    canon = {}
    for section, defaults in _DEFAULTS.items():
        given = raw.pop(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section [{section}] must be a table")
        merged = dict(defaults)
        extra = set(given) - set(defaults)
        if section == "problem":
            family = given.get("family", merged["family"])
            if family not in _FAMILY_KEYS:
                raise ConfigError(f"unknown family {family!r}")
            extra -= _FAMILY_KEYS[family]
        if extra:
            raise ConfigError(f"unknown keys in [{section}]: {sorted(extra)}")
        merged.update(given)
        canon[section] = merged
    if raw:
        raise ConfigError(f"unknown sections: {sorted(raw)}")
    for check in canon["run"]["checks"]:
        if check not in KNOWN_CHECKS:
            raise ConfigError(f"unknown check {check!r}; known: {KNOWN_CHECKS}")
    # canonical numeric form: floats where the defaults are floats
    for section, defaults in _DEFAULTS.items():
        for key, dval in defaults.items():
            if isinstance(dval, float):
                canon[section][key] = float(canon[section][key])
    return canon


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        import json
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize config value {v!r}")


def serialize_config(canon: dict) -> str:
    lines = []
    for section in _DEFAULTS:
        lines.append(f"[{section}]")
        keys = list(_DEFAULTS[section])
        keys += [k for k in canon[section] if k not in keys]
        for key in keys:
            if key in canon[section]:
                lines.append(f"{key} = {_toml_value(canon[section][key])}")
        lines.append("")
    return "\n".join(lines)


def build_problem(canon: dict) -> ProblemSpec:
    p = canon["problem"]
    family = p["family"]
    try:
        if family == "pull_pull_toy":
            return pull_pull_toy(int(p["dimension"]), discount=p["discount"])
        if family == "superlinear":
            fam = Superlinear(power=float(p.get("power", 2.0)),
                              coefficient_growth=float(p.get("coefficient_growth", 0.0)),
                              growth_exponent=float(p.get("growth_exponent", 1.0)),
                              d1=tuple(p.get("d1", [1.0])), d2=tuple(p.get("d2", [1.0])),
                              f1=tuple(p.get("f1", [0.0])), f2=tuple(p.get("f2", [0.0])))
        elif family == "quadratic":
            fam = Quadratic(c1=float(p.get("c1", 1.0)), c2=float(p.get("c2", 1.0)),
                            f1=tuple(p.get("f1", [0.0])), f2=tuple(p.get("f2", [0.0])))
        elif family == "piecewise_toy":
            fam = PiecewiseToy(
                cost_rows_1=tuple(tuple(r) for r in p["cost_rows_1"]),
                cost_rows_2=tuple(tuple(r) for r in p["cost_rows_2"]),
                drift_1=tuple(p.get("drift_1", [])), drift_2=tuple(p.get("drift_2", [])))
        else:
            raise ConfigError(f"unknown family {family!r}")
        return ProblemSpec(dimension=int(p["dimension"]), discount=p["discount"],
                           controllability_radius=p["controllability_radius"], family=fam)
    except (ProblemDefinitionError, KeyError, TypeError) as exc:
        raise ConfigError(f"invalid [problem] section: {exc}") from exc


def build_solver_config(canon: dict) -> SolverConfig:
    s = canon["solver"]
    return SolverConfig(dt_factor=s["dt_factor"],
                        radial_resolution=int(s["radial_resolution"]),
                        angular_resolution=int(s["angular_resolution"]),
                        mu_samples=int(s["mu_samples"]), tolerance=s["tolerance"],
                        max_iterations=int(s["max_iterations"]))


def build_scheme(canon: dict) -> FDScheme:
    f = canon["filippov"]
    return FDScheme(safety=f["safety"], tolerance=f["tolerance"],
                    max_iterations=int(f["max_iterations"]),
                    radial_resolution=int(f["radial_resolution"]),
                    angular_resolution=int(f["angular_resolution"]))


def _class_list(canon: dict) -> list[ValueClass]:
    classes = []
    for name in canon["run"]["classes"]:
        if name == "minus":
            classes.append(MINUS)
        elif name == "plus":
            classes.append(PLUS)
        else:
            raise ConfigError(f"unknown value class {name!r} (eta goes in run.eta)")
    for eta in canon["run"]["eta"]:
        classes.append(eta_class(float(eta)))
    return classes


def _file_tag(tag: ValueClass) -> str:
    if tag.param is None:
        return tag.kind
    return f"{tag.kind}_{tag.param:g}"


def named_policy(spec: ProblemSpec, name: str):
    """Shipped trajectory policies, defined through the velocity inverse."""
    delta = spec.controllability_radius
    e_n = np.zeros(spec.dimension)
    e_n[spec.interface_axis] = 1.0
    fam = spec.family

    def toward(x, side):
        sign = -1.0 if side == 1 else 1.0
        return fam.velocity_inverse(side, x, sign * delta * e_n)

    def outward(x, side):
        sign = 1.0 if side == 1 else -1.0
        return fam.velocity_inverse(side, x, sign * delta * e_n)

    if name == "stay-put":
        def policy(t, x, regime):
            return ExtendedControl(fam.stay_control(1, x), fam.stay_control(2, x), 0.5)
    elif name == "slide-test":
        # approach the interface, then hold it with the pulling (singular) pair
        def policy(t, x, regime):
            if regime == 0:
                return ExtendedControl(outward(x, 1), outward(x, 2), 0.5)
            return ExtendedControl(toward(x, 1), toward(x, 2), 0.5)
    elif name == "descend":
        # approach, then hold with the pushing (regular) pair
        def policy(t, x, regime):
            return ExtendedControl(toward(x, 1), toward(x, 2), 0.5)
    elif name == "ride-up":
        def policy(t, x, regime):
            return ExtendedControl(outward(x, 1), toward(x, 2), 1.0)
    else:
        raise ConfigError(f"unknown policy {name!r}")
    return policy


def run_experiment(canon: dict, out_dir: Path) -> int:
    spec = build_problem(canon)
    try:
        grid = build_grid(spec.dimension, canon["grid"]["half_width"],
                          canon["grid"]["spacing"])
    except Exception as exc:
        raise ConfigError(f"invalid [grid] section: {exc}") from exc
    solver_cfg = build_solver_config(canon)
    scheme = build_scheme(canon)
    run = canon["run"]
    m = float(run["truncation"])
    out_dir.mkdir(parents=True, exist_ok=True)

    report = VerificationReport()
    solved: dict[str, GridFunction] = {}
    try:
        for tag in _class_list(canon):
            gf = solve_value(spec, grid, tag, m, solver_cfg)
            solved[_file_tag(tag)] = gf
            artifacts.write_grid_function(out_dir / f"value_{_file_tag(tag)}.csv", gf)

        sweep_rows = []
        if run["epsilon"]:
            ref = solved.get("minus") or solve_value(spec, grid, MINUS, m, solver_cfg)
            rep = epsilon_sweep(spec, grid, m, run["epsilon"], scheme, reference=ref,
                                inner_fraction=run["inner_fraction"])
            for row, gf in zip(rep.rows, rep.functions):
                artifacts.write_grid_function(
                    out_dir / f"value_filippov_{row.eps:g}.csv", gf)
            sweep_rows = [(r.eps, r.distance, r.iterations) for r in rep.rows]
            artifacts.write_table(out_dir / "sweep_eps.csv",
                                  ["eps", "sup_distance_to_minus", "iterations"],
                                  sweep_rows)
        if run["m_sweep"]:
            rows = []
            shared = verify._shared_operator_config(spec, grid, max(run["m_sweep"]), solver_cfg)
            prev = None
            for mv in run["m_sweep"]:
                gf = solve_value(spec, grid, MINUS, float(mv), shared)
                artifacts.write_grid_function(out_dir / f"value_minus_m{mv:g}.csv", gf)
                inc = float(np.max(np.abs(gf.values - prev.values))) if prev is not None else 0.0
                rows.append((mv, gf.at_origin(), inc, gf.iterations))
                prev = gf
            artifacts.write_table(out_dir / "sweep_m.csv",
                                  ["m", "value_at_origin", "sup_change", "iterations"], rows)

        for name in run["trajectory_policies"]:
            x0 = np.asarray(run["trajectory_x0"], dtype=float)
            traj = integrate(spec, x0, named_policy(spec, name),
                             run["trajectory_horizon"], run["trajectory_dt"],
                             box_radius=grid.half_width)
            artifacts.write_trajectory(out_dir / f"trajectory_{name}.csv", traj)
    except SolverError as exc:
        (out_dir / "FAILED").write_text(f"solver failure: {exc}\n")
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    checks = run["checks"]
    if "ordering" in checks and len(solved) >= 2:
        order = [gf for key, gf in sorted(
            solved.items(),
            key=lambda kv: (0.0 if kv[1].class_tag.kind == "minus"
                            else 1.0 if kv[1].class_tag.kind == "eta" else 2.0,
                            -(kv[1].class_tag.param or 0.0)))]
        report = report.merged(verify.check_ordering(order, spec))
    if "viscosity" in checks:
        for key in sorted(solved):
            report = report.merged(verify.viscosity_residuals(
                solved[key], spec, m, config=solver_cfg,
                inner_fraction=run["inner_fraction"]))
    if "oracle" in checks:
        for key in sorted(solved):
            gf = solved[key]
            orc = finite_horizon_oracle(spec, grid, gf.class_tag, m,
                                        run["oracle_horizon"],
                                        gf.time_step, solver_cfg)
            dist = float(np.max(np.abs(orc.values - gf.values)))
            bound = (1.01 * np.exp(-spec.discount * run["oracle_horizon"])
                     * max(1.0, float(np.max(np.abs(gf.values))))
                     + 10.0 * value_tolerance(gf, spec) + 1e-12)
            report = report.merged(VerificationReport((verify._result(
                "finite-horizon-oracle-agreement", dist <= bound, bound - dist, bound,
                provenance=key, details=f"sup distance {dist:.3e}"),)))
    if "masks" in checks:
        mask_minus = interface_admissibility_mask(spec, grid, MINUS, m, solver_cfg)
        for key in sorted(solved):
            tag = solved[key].class_tag
            if tag.kind != "eta":
                continue
            mask_eta = interface_admissibility_mask(spec, grid, tag, m, solver_cfg)
            equal = bool(np.array_equal(mask_minus, mask_eta))
            wide = tag.param >= 1.0    # the toy meshes have |b . e_N| <= m
            report = report.merged(VerificationReport((verify._result(
                "eta-mask-saturation", equal == wide, 0.0 if equal == wide else -1.0, 0.0,
                provenance=key,
                details=f"masks {'equal' if equal else 'differ'}"),)))
    if "truncation" in checks and run["m_sweep"]:
        report = report.merged(verify.check_truncation_stability(
            spec, grid, MINUS, run["m_sweep"], solver_cfg))
    if "hull" in checks:
        rng = np.random.default_rng(int(run["seed"]))
        x = rng.uniform(-grid.half_width / 2, grid.half_width / 2, size=spec.dimension)
        p = rng.uniform(-2.0, 2.0, size=spec.dimension)
        report = report.merged(verify.hull_sup_equivalence(
            spec, x, float(rng.uniform(-1, 1)), p, m, seed=int(run["seed"]),
            config=solver_cfg))
    if "psi" in checks:
        report = report.merged(verify.check_psi_subsolution(
            spec, grid, getattr(spec.family, "growth_exponent", 1.0), m,
            config=solver_cfg))
    if "decay" in checks and "minus" in solved:
        trajs = [integrate(spec, np.asarray(run["trajectory_x0"], dtype=float),
                           named_policy(spec, name), run["trajectory_horizon"],
                           run["trajectory_dt"], box_radius=grid.half_width)
                 for name in (run["trajectory_policies"] or ["descend"])]
        report = report.merged(verify.check_discount_decay(spec, trajs, solved["minus"]))

    artifacts.write_report(out_dir / "report.csv", report)
    summary = report.summary_text()
    (out_dir / "summary.txt").write_text((summary + "\n") if summary else "no checks configured\n")
    print(summary if summary else "no checks configured")
    return EXIT_OK if report.all_passed else EXIT_VERIFY


def _load(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    return parse_config(text)


def _out_dir(canon: dict, override: str | None) -> Path:
    env = os.environ.get("ISHII_OUTPUT_DIR")
    return Path(override or env or canon["output"]["directory"])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ishii",
        description="Value functions across a cost/dynamics discontinuity: "
                    "solves, sweeps and verification reports.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)
        sp.add_argument("--seed", type=int, default=None)
        return sp

    add("run", "full pipeline: solves, sweeps, checks, artifact tree")
    sp = add("solve", "solve one value function and export it")
    sp.add_argument("--klass", "--class", dest="klass", default="minus")
    sp.add_argument("--eta", type=float, default=None)
    sp.add_argument("--m", type=float, default=None)
    sp = add("trajectory", "integrate a named policy and export the rollout")
    sp.add_argument("--x0", default=None, help="comma-separated start point")
    sp.add_argument("--policy", default="slide-test")
    sp.add_argument("--horizon", type=float, default=None)
    sp.add_argument("--dt", type=float, default=None)
    add("verify", "run only the configured checks (solving what they need)")
    sp = add("sweep-eta", "gap table of the eta ladder against the maximal class")
    sp.add_argument("--etas", default=None, help="comma-separated decreasing etas")
    sp = add("sweep-eps", "Filippov blending sweep against the minimal class")
    sp.add_argument("--eps", default=None, help="comma-separated decreasing widths")
    sp = add("sweep-m", "truncation sweep of the minimal class")
    sp.add_argument("--ms", default=None, help="comma-separated increasing radii")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        canon = _load(args.config)
        if args.seed is not None:
            canon["run"]["seed"] = int(args.seed)
        out = _out_dir(canon, args.out)

        if args.command == "run":
            return run_experiment(canon, out)
        if args.command == "verify":
            canon["run"]["epsilon"] = []
            canon["run"]["m_sweep"] = []
            canon["run"]["trajectory_policies"] = []
            return run_experiment(canon, out)

        spec = build_problem(canon)
        grid = build_grid(spec.dimension, canon["grid"]["half_width"],
                          canon["grid"]["spacing"])
        cfg = build_solver_config(canon)
        m = float(canon["run"]["truncation"])
        out.mkdir(parents=True, exist_ok=True)

        if args.command == "solve":
            if args.klass == "eta":
                if args.eta is None:
                    raise ConfigError("--class eta needs --eta")
                tag = eta_class(args.eta)
            elif args.klass in ("minus", "plus"):
                tag = MINUS if args.klass == "minus" else PLUS
            else:
                raise ConfigError(f"unknown class {args.klass!r}")
            gf = solve_value(spec, grid, tag, args.m if args.m is not None else m, cfg)
            artifacts.write_grid_function(out / f"value_{_file_tag(tag)}.csv", gf)
            print(f"solved {tag.describe()}: {gf.iterations} sweeps, "
                  f"residual {gf.final_residual:.3e}")
            return EXIT_OK
        if args.command == "trajectory":
            x0 = (np.asarray([float(v) for v in args.x0.split(",")])
                  if args.x0 else np.asarray(canon["run"]["trajectory_x0"], dtype=float))
            traj = integrate(spec, x0, named_policy(spec, args.policy),
                             args.horizon or canon["run"]["trajectory_horizon"],
                             args.dt or canon["run"]["trajectory_dt"],
                             box_radius=grid.half_width)
            artifacts.write_trajectory(out / f"trajectory_{args.policy}.csv", traj)
            print(f"integrated {traj.steps} steps, truncated={traj.truncated}")
            return EXIT_OK
        if args.command == "sweep-eta":
            etas = ([float(v) for v in args.etas.split(",")] if args.etas
                    else [float(v) for v in canon["run"]["eta"]])
            if not etas:
                raise ConfigError("no etas given")
            plus = solve_value(spec, grid, PLUS, m, cfg)
            inner = grid.inner_node_mask(canon["run"]["inner_fraction"])
            rows = []
            for eta in etas:
                gf = solve_value(spec, grid, eta_class(eta), m, cfg)
                gap = float(np.max(np.abs(gf.values[inner] - plus.values[inner])))
                rows.append((eta, gap, gf.iterations))
            artifacts.write_table(out / "sweep_eta.csv",
                                  ["eta", "sup_gap_to_plus", "iterations"], rows)
            print("\n".join(f"eta={r[0]:g} gap={r[1]:.6g}" for r in rows))
            return EXIT_OK
        if args.command == "sweep-eps":
            eps = ([float(v) for v in args.eps.split(",")] if args.eps
                   else [float(v) for v in canon["run"]["epsilon"]])
            if not eps:
                raise ConfigError("no widths given")
            ref = solve_value(spec, grid, MINUS, m, cfg)
            rep = epsilon_sweep(spec, grid, m, eps, build_scheme(canon), reference=ref,
                                inner_fraction=canon["run"]["inner_fraction"])
            artifacts.write_table(out / "sweep_eps.csv",
                                  ["eps", "sup_distance_to_minus", "iterations"],
                                  [(r.eps, r.distance, r.iterations) for r in rep.rows])
            print("\n".join(f"eps={r.eps:g} dist={r.distance:.6g}" for r in rep.rows))
            return EXIT_OK
        if args.command == "sweep-m":
            ms = ([float(v) for v in args.ms.split(",")] if args.ms
                  else [float(v) for v in canon["run"]["m_sweep"]])
            if not ms:
                raise ConfigError("no radii given")
            rep = verify.check_truncation_stability(spec, grid, MINUS, ms, cfg)
            artifacts.write_report(out / "sweep_m_report.csv", rep)
            print(rep.summary_text())
            return EXIT_OK if rep.all_passed else EXIT_VERIFY
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

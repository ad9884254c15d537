"""Config-driven experiment runner.

Subcommands:
  run <config.json>   execute one scenario; writes CSVs and a manifest
  compare <a> <b>     metric between two run directories
  list-scenarios      bundled scenario configs

Exit codes: 2 for configuration errors (message names the offending field),
3 for numerical failures, 1 for a compare metric above the given threshold.
"""

from __future__ import annotations

import argparse
import csv
import importlib.resources
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dsmc import ParticleEnsemble, kernel_cap, run_to_equilibrium
from .equilibria import (
    EquilibriumDensity,
    EquilibriumKind,
    controlled_steady_state,
    tail_classify,
)
from .errors import ConfigError, NumericsError, TailInconclusiveError
from .fp import ContactDensity, Grid, SpStepper, build_operator, steady_state_solve, uniform_density
from .io import (
    MANIFEST_FILE,
    TRAJECTORY_FILE,
    density_filename,
    read_csv,
    resolve_out_dir,
    write_density,
    write_manifest,
    write_trajectory,
)
from .kinetic import gamma_profile_state, run_scenario
from .macro import MacroModel, MacroState, MacroVariant, rk4_integrate
from .params import ClosureKind, ControlSpec, EpidemicParams, KineticParams, Strategy

SCHEMA_VERSION = 1

SCENARIO_KINDS = (
    "dsmc_equilibrium",
    "fp_equilibrium",
    "tail_sweep",
    "macro_compare",
    "kinetic_macro_consistency",
    "controlled_epidemic",
)


# ---------------------------------------------------------------------------
# config parsing


def _get(cfg: dict, path: str, expected, required=True, default=None):
    node = cfg
    parts = path.split(".")
    for i, key in enumerate(parts):
        if not isinstance(node, dict) or key not in node:
            if required:
                raise ConfigError(f"missing field '{'.'.join(parts[: i + 1])}'")
            return default
        node = node[key]
    if node is None and not required:
        return default
    if expected is float and isinstance(node, (int, float)) and not isinstance(node, bool):
        return float(node)
    if expected is int and isinstance(node, int) and not isinstance(node, bool):
        return node
    if not isinstance(node, expected) or (isinstance(node, bool) and expected is not bool):
        raise ConfigError(f"field '{path}': expected {expected.__name__}, got {node!r}")
    return node


def _kinetic_params(cfg: dict) -> KineticParams:
    try:
        return KineticParams(
            alpha=_get(cfg, "kinetic.alpha", float),
            sigma2=_get(cfg, "kinetic.sigma2", float),
            delta=_get(cfg, "kinetic.delta", float),
            epsilon=_get(cfg, "kinetic.epsilon", float, required=False, default=0.01),
            tau=_get(cfg, "kinetic.tau", float, required=False, default=1.0),
        )
    except ValueError as exc:
        raise ConfigError(f"field 'kinetic': {exc}") from exc


def _epidemic_params(cfg: dict) -> EpidemicParams:
    try:
        return EpidemicParams(
            betas=tuple(_get(cfg, "epidemic.betas", list)),
            gamma_i=_get(cfg, "epidemic.gamma_i", float),
            beta0=_get(cfg, "epidemic.beta0", float, required=False, default=0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"field 'epidemic': {exc}") from exc


def _control_spec(cfg: dict) -> ControlSpec:
    block = cfg.get("control")
    if block is None:
        return ControlSpec.uncontrolled()
    name = _get(cfg, "control.strategy", str)
    try:
        strategy = Strategy(name)
    except ValueError:
        raise ConfigError(
            f"field 'control.strategy': unknown strategy {name!r}; "
            f"choose from {[s.value for s in Strategy]}"
        ) from None
    if strategy is Strategy.UNCONTROLLED:
        return ControlSpec.uncontrolled()
    try:
        return ControlSpec(
            strategy,
            nu=_get(cfg, "control.nu", float),
            x_target=_get(cfg, "control.x_target", float),
        )
    except ValueError as exc:
        raise ConfigError(f"field 'control': {exc}") from exc


def _grid(cfg: dict) -> Grid:
    try:
        return Grid(_get(cfg, "grid.x_max", float), _get(cfg, "grid.n_cells", int))
    except ValueError as exc:
        raise ConfigError(f"field 'grid': {exc}") from exc


def _closure(cfg: dict, path: str = "macro.closure") -> ClosureKind:
    name = _get(cfg, path, str)
    try:
        return ClosureKind(name)
    except ValueError:
        raise ConfigError(
            f"field '{path}': unknown closure {name!r}; "
            f"choose from {[c.value for c in ClosureKind]}"
        ) from None


def load_config(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config {path} is not valid JSON: {exc.msg} at line {exc.lineno}, column {exc.colno}"
        ) from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    version = _get(cfg, "schema_version", int)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"field 'schema_version': expected {SCHEMA_VERSION}, got {version}"
        )
    kind = _get(cfg, "kind", str)
    if kind not in SCENARIO_KINDS:
        raise ConfigError(f"field 'kind': unknown scenario {kind!r}; choose from {SCENARIO_KINDS}")
    return cfg


# ---------------------------------------------------------------------------
# scenario runners


def _reference_density(
    kind_name: str, p: KineticParams, c: ControlSpec, m_ref: float, edges: np.ndarray
) -> np.ndarray:
    """Bin-averaged equilibrium density on histogram bins (16 panels per bin)."""
    refine = 16
    n_bins = len(edges) - 1
    fine = Grid(float(edges[-1]), n_bins * refine)
    kind = EquilibriumKind(kind_name)
    eq = EquilibriumDensity(kind, p, m_ref, fine, control=c if c.active else None)
    return eq.values.reshape(n_bins, refine).mean(axis=1)


def _equilibrium_kind_for(p: KineticParams, c: ControlSpec) -> str | None:
    if c.strategy is Strategy.ADDITIVE_A:
        return "controlled_a"
    if c.strategy is Strategy.INTERACTION_B:
        return "controlled_b"
    if p.delta == 1.0:
        return "gamma"
    if p.delta == -1.0:
        return "inverse_gamma"
    return None


def run_dsmc_equilibrium(cfg: dict, out: Path, seed: int) -> dict:
    p = _kinetic_params(cfg)
    c = _control_spec(cfg)
    n = _get(cfg, "dsmc.n_particles", int)
    n_bins = _get(cfg, "dsmc.n_bins", int, required=False, default=400)
    x_max = _get(cfg, "grid.x_max", float)
    dt = _get(cfg, "time.dt", float)
    t_final = _get(cfg, "time.t_final", float)
    m_ref = _get(cfg, "dsmc.mean_reference", float, required=False)
    low = _get(cfg, "initial.low", float)
    high = _get(cfg, "initial.high", float)

    bound = _get(cfg, "dsmc.kernel_bound", float, required=False)
    if bound is None:
        bound = kernel_cap(p, x_floor=0.5 * x_max / n_bins)

    ens = ParticleEnsemble.from_uniform(n, low, high, seed)
    hist = run_to_equilibrium(
        ens, p, c.micro_scaled(p.epsilon), t_final, dt, bound,
        m_ref=m_ref, x_max=x_max, n_bins=n_bins,
    )
    write_density(out / density_filename(t_final), hist.centers, {"f": hist.density})

    metrics = {
        "kernel_bound": bound,
        "clamped_fraction": ens.n_clamped / max(ens.n_transitions, 1),
        "ensemble_mean": ens.mean(),
        "ensemble_second_moment": ens.second_moment(),
    }
    eq_kind = _equilibrium_kind_for(p, c)
    if eq_kind is not None and m_ref is not None:
        ref = _reference_density(eq_kind, p, c, m_ref, hist.bin_edges)
        metrics["l1_to_equilibrium"] = hist.l1_distance(ref)
        metrics["equilibrium_kind"] = eq_kind
    return metrics


def run_fp_equilibrium(cfg: dict, out: Path, seed: int) -> dict:
    p = _kinetic_params(cfg)
    c = _control_spec(cfg)
    grid = _grid(cfg)
    dt = _get(cfg, "time.dt", float)
    t_final = _get(cfg, "time.t_final", float)
    m_ref = _get(cfg, "fp.mean_reference", float, required=False)
    low = _get(cfg, "initial.low", float)
    high = _get(cfg, "initial.high", float)

    f = uniform_density(grid, low, high)
    n_steps = int(round(t_final / dt))
    if m_ref is not None:
        stepper = SpStepper(grid, build_operator(p, c, m_ref), dt, p.tau)
        vals = f.values
        for _ in range(n_steps):
            vals = stepper.step(vals)
        f = ContactDensity(grid, vals)
        op = build_operator(p, c, m_ref)
    else:
        for _ in range(n_steps):
            op = build_operator(p, c, f.mean())
            f = ContactDensity(grid, SpStepper(grid, op, dt, p.tau).step(f.values))
        op = build_operator(p, c, f.mean())

    steady = steady_state_solve(op, grid)
    x = grid.centers()
    write_density(out / density_filename(t_final), x, {"f": f.values})
    write_density(out / "steady_state.csv", x, {"f": steady.values})

    metrics = {
        "final_mass": f.mass(),
        "final_mean": f.mean(),
        "l1_to_steady_state": float(np.abs(f.values - steady.values).sum() * grid.dx),
    }
    eq_kind = _equilibrium_kind_for(p, c)
    if eq_kind is not None and m_ref is not None:
        eq = EquilibriumDensity(
            EquilibriumKind(eq_kind), p, m_ref, grid, control=c if c.active else None
        )
        metrics["l1_to_equilibrium"] = float(np.abs(f.values - eq.values).sum() * grid.dx)
        metrics["equilibrium_kind"] = eq_kind
    return metrics


def run_tail_sweep(cfg: dict, out: Path, seed: int) -> dict:
    p = _kinetic_params(cfg)
    grid = _grid(cfg)
    m_ref = _get(cfg, "fp.mean_reference", float)
    x_target = _get(cfg, "sweep.x_target", float)
    nus = _get(cfg, "sweep.nu_values", list)
    win_power = tuple(_get(cfg, "sweep.window_power_law", list, required=False, default=[50.0, 100.0]))
    win_slim = tuple(_get(cfg, "sweep.window_slim", list, required=False, default=[20.0, 40.0]))
    if p.delta != -1.0:
        raise ConfigError("field 'kinetic.delta': tail_sweep requires delta = -1")

    uncontrolled = EquilibriumDensity(EquilibriumKind.INVERSE_GAMMA, p, m_ref, grid)
    rows = [("uncontrolled", 0.0, uncontrolled.grid_moment(1), uncontrolled.grid_moment(2))]
    tails: dict[str, dict] = {"additive_a": {}, "interaction_b": {}}
    for nu in nus:
        for strategy, make in (
            ("additive_a", ControlSpec.additive),
            ("interaction_b", ControlSpec.interaction),
        ):
            c = make(float(nu), x_target)
            f = controlled_steady_state(p, c, m_ref, grid)
            rows.append((strategy, float(nu), f.raw_moment(1), f.raw_moment(2)))
            window = win_power if strategy == "additive_a" else win_slim
            try:
                tc = tail_classify(f, window)
                tails[strategy][str(nu)] = {
                    "kind": tc.kind.value,
                    "exponent": tc.exponent,
                    "window": list(window),
                }
            except (TailInconclusiveError, ValueError) as exc:
                tails[strategy][str(nu)] = {"kind": "inconclusive", "detail": str(exc)}

    sweep_path = out / "sweep.csv"
    sweep_path.parent.mkdir(parents=True, exist_ok=True)
    with open(sweep_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "nu", "m_inf", "m2_inf"])
        for strategy, nu, m1, m2 in rows:
            writer.writerow([strategy, *(repr(float(v)) for v in (nu, m1, m2))])
    return {"tails": tails}


def _macro_model(cfg: dict) -> MacroModel:
    p = _kinetic_params(cfg)
    variant_name = _get(cfg, "macro.variant", str)
    try:
        variant = MacroVariant(variant_name)
    except ValueError:
        raise ConfigError(
            f"field 'macro.variant': unknown variant {variant_name!r}; "
            f"choose from {[v.value for v in MacroVariant]}"
        ) from None
    closure = _closure(cfg)
    beta = _get(cfg, "macro.beta", float, required=False)
    try:
        return MacroModel(variant, closure, p, _epidemic_params(cfg), beta=beta)
    except ValueError as exc:
        raise ConfigError(f"field 'macro': {exc}") from exc


def _macro_initial(cfg: dict) -> MacroState:
    rho = _get(cfg, "initial.rho", list)
    mean = _get(cfg, "initial.mean", float)
    if len(rho) != 3:
        raise ConfigError("field 'initial.rho': expected three masses [S, I, R]")
    return MacroState(float(rho[0]), float(rho[1]), float(rho[2]), mean, mean, mean)


def _write_macro_trajectory(path: Path, times, states) -> None:
    write_trajectory(
        path,
        np.asarray(times),
        {
            "rho_S": np.array([s.rho_s for s in states]),
            "rho_I": np.array([s.rho_i for s in states]),
            "rho_R": np.array([s.rho_r for s in states]),
            "m_S": np.array([s.m_s for s in states]),
            "m_I": np.array([s.m_i for s in states]),
            "m_R": np.array([s.m_r for s in states]),
        },
    )


def run_macro_compare(cfg: dict, out: Path, seed: int) -> dict:
    model = _macro_model(cfg)
    s0 = _macro_initial(cfg)
    dt = _get(cfg, "time.dt", float)
    t_final = _get(cfg, "time.t_final", float)
    every = _get(cfg, "time.output_every", int, required=False, default=1)
    times, states = rk4_integrate(model, s0, dt, t_final)
    times, states = times[::every], states[::every]
    _write_macro_trajectory(out / TRAJECTORY_FILE, times, states)
    return {
        "peak_rho_i": max(s.rho_i for s in states),
        "peak_m_i": max(s.m_i for s in states),
    }


def _kinetic_pieces(cfg: dict):
    p = _kinetic_params(cfg)
    e = _epidemic_params(cfg)
    c = _control_spec(cfg)
    grid = _grid(cfg)
    rho = _get(cfg, "initial.rho", list)
    if len(rho) != 3:
        raise ConfigError("field 'initial.rho': expected three masses [S, I, R]")
    mean0 = _get(cfg, "initial.mean", float)
    lam = _get(cfg, "initial.lam", float, required=False)
    ic = gamma_profile_state(grid, lam if lam is not None else p.lam, mean0, tuple(map(float, rho)))
    return p, e, c, grid, ic


def _write_kinetic_trajectory(path: Path, result) -> None:
    write_trajectory(
        path,
        result.times,
        {
            "rho_S": result.column("rho_s"),
            "rho_I": result.column("rho_i"),
            "rho_R": result.column("rho_r"),
            "m_S": result.column("m_s"),
            "m_I": result.column("m_i"),
            "m_R": result.column("m_r"),
            "m2_S": result.column("m2_s"),
            "m2_I": result.column("m2_i"),
            "m2_R": result.column("m2_r"),
        },
    )


def run_kinetic_macro_consistency(cfg: dict, out: Path, seed: int) -> dict:
    p, e, c, grid, ic = _kinetic_pieces(cfg)
    if c.active:
        raise ConfigError("field 'control': consistency scenario is uncontrolled")
    dt = _get(cfg, "time.dt", float)
    t_final = _get(cfg, "time.t_final", float)
    every = _get(cfg, "time.output_every", int, required=False, default=1)

    result = run_scenario(ic, p, c, e, t_final, dt, output_every=every)
    _write_kinetic_trajectory(out / TRAJECTORY_FILE, result)

    closure = ClosureKind.INVERSE_GAMMA if p.delta == -1.0 else ClosureKind.GAMMA
    variant = MacroVariant.L2 if e.order >= 2 else MacroVariant.L1
    model = MacroModel(variant, closure, p, e)
    s0 = ic.macro_state()
    times, states = rk4_integrate(model, s0, dt, t_final)
    idx = [int(round(t / dt)) for t in result.times]
    times = [times[i] for i in idx]
    states = [states[i] for i in idx]
    _write_macro_trajectory(out / "trajectory_macro.csv", times, states)

    gaps = {}
    for name, attr in (("rho_S", "rho_s"), ("rho_I", "rho_i"), ("rho_R", "rho_r")):
        gaps[name] = float(np.max(np.abs(result.column(attr) - np.array([getattr(s, attr) for s in states]))))
    for name, attr in (("m_S", "m_s"), ("m_I", "m_i"), ("m_R", "m_r")):
        ref = np.array([getattr(s, attr) for s in states])
        gaps[name + "_rel"] = float(np.max(np.abs(result.column(attr) - ref) / np.abs(ref)))
    return {"sup_gaps": gaps, "clipped_mass": result.final_state.clipped_mass}


def run_controlled_epidemic(cfg: dict, out: Path, seed: int) -> dict:
    p, e, c, grid, ic = _kinetic_pieces(cfg)
    dt = _get(cfg, "time.dt", float)
    t_final = _get(cfg, "time.t_final", float)
    every = _get(cfg, "time.output_every", int, required=False, default=1)

    result = run_scenario(ic, p, c, e, t_final, dt, output_every=every, snapshot_times=(t_final,))
    _write_kinetic_trajectory(out / TRAJECTORY_FILE, result)

    final = result.final_state
    write_density(
        out / density_filename(t_final),
        grid.centers(),
        {"f_S": final.f_s.values, "f_I": final.f_i.values, "f_R": final.f_r.values},
    )
    metrics = {
        "peak_rho_i": float(result.column("rho_i").max()),
        "final_m_s": float(result.column("m_s")[-1]),
        "clipped_mass": final.clipped_mass,
    }
    window = cfg.get("tail_window")
    if window is not None:
        try:
            tc = tail_classify(final.f_s.normalized(), tuple(window))
            metrics["final_s_tail"] = {"kind": tc.kind.value, "exponent": tc.exponent}
        except (TailInconclusiveError, ValueError) as exc:
            metrics["final_s_tail"] = {"kind": "inconclusive", "detail": str(exc)}
    return metrics


RUNNERS = {
    "dsmc_equilibrium": run_dsmc_equilibrium,
    "fp_equilibrium": run_fp_equilibrium,
    "tail_sweep": run_tail_sweep,
    "macro_compare": run_macro_compare,
    "kinetic_macro_consistency": run_kinetic_macro_consistency,
    "controlled_epidemic": run_controlled_epidemic,
}


def execute(config_path: Path, out_dir: Path | None = None, seed: int | None = None) -> Path:
    """Run one scenario config; returns the output directory."""
    cfg = load_config(config_path)
    kind = cfg["kind"]
    eff_seed = seed if seed is not None else _get(cfg, "seed", int, required=False, default=0)
    if kind == "dsmc_equilibrium" and _get(cfg, "seed", int, required=False) is None and seed is None:
        raise ConfigError("field 'seed': required for stochastic scenarios")
    out = resolve_out_dir(str(out_dir) if out_dir else None, cfg.get("out_dir"), config_path.stem)
    out.mkdir(parents=True, exist_ok=True)

    start = time.time()
    metrics = RUNNERS[kind](cfg, out, eff_seed)
    elapsed = time.time() - start

    p = _kinetic_params(cfg) if "kinetic" in cfg else None
    derived = {}
    if p is not None:
        derived["lam"] = p.lam
        if p.delta in (-1.0, 1.0) and (p.delta == 1.0 or p.lam > 1.0):
            derived["moment_ratio"] = ((p.lam + p.delta) / p.lam) ** p.delta
    write_manifest(
        out / MANIFEST_FILE,
        {
            "schema_version": SCHEMA_VERSION,
            "code_version": __version__,
            "config": cfg,
            "config_path": str(config_path),
            "derived": derived,
            "seed": eff_seed,
            "wall_clock_s": elapsed,
            "metrics": metrics,
        },
    )
    return out


# ---------------------------------------------------------------------------
# compare


def compare_runs(dir_a: Path, dir_b: Path, metric: str) -> dict:
    """Metric between two run directories; raises on incompatible axes."""
    if metric == "sup_trajectory":
        ta = read_csv(dir_a / TRAJECTORY_FILE)
        tb = read_csv(dir_b / TRAJECTORY_FILE)
        if not np.array_equal(ta["t"], tb["t"]):
            raise NumericsError("trajectories have different time axes")
        shared = [k for k in ta if k != "t" and k in tb]
        if not shared:
            raise NumericsError("trajectories share no columns")
        per_column = {k: float(np.max(np.abs(ta[k] - tb[k]))) for k in shared}
        return {"metric": metric, "per_column": per_column, "value": max(per_column.values())}
    if metric == "L1_density":
        names_a = {f.name for f in dir_a.glob("density_t*.csv")}
        names_b = {f.name for f in dir_b.glob("density_t*.csv")}
        common = sorted(names_a & names_b)
        if not common:
            raise NumericsError("run directories share no density snapshots")
        per_file = {}
        for name in common:
            da = read_csv(dir_a / name)
            db = read_csv(dir_b / name)
            if not np.array_equal(da["x"], db["x"]):
                raise NumericsError(f"{name}: x grids differ")
            cols = [k for k in da if k != "x" and k in db]
            if not cols:
                raise NumericsError(f"{name}: no shared density columns")
            dx = float(da["x"][1] - da["x"][0])
            per_file[name] = max(
                float(np.abs(da[k] - db[k]).sum() * dx) for k in cols
            )
        return {"metric": metric, "per_file": per_file, "value": max(per_file.values())}
    raise ConfigError(f"unknown metric {metric!r}; choose L1_density or sup_trajectory")


def list_bundled_scenarios() -> list[str]:
    root = importlib.resources.files("kinctrl") / "configs"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".json"))


def bundled_config_path(name: str) -> Path:
    path = importlib.resources.files("kinctrl") / "configs" / name
    return Path(str(path))


# ---------------------------------------------------------------------------
# entry point


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="kinctrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario config")
    p_run.add_argument("config", type=Path)
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", type=Path, default=None, help="output directory")
    p_run.add_argument(
        "--threads", type=int, default=1,
        help="worker threads available to the solvers (current solvers are single-threaded)",
    )

    p_cmp = sub.add_parser("compare", help="compare two run directories")
    p_cmp.add_argument("dir_a", type=Path)
    p_cmp.add_argument("dir_b", type=Path)
    p_cmp.add_argument("--metric", choices=["L1_density", "sup_trajectory"], required=True)
    p_cmp.add_argument("--threshold", type=float, default=None)

    sub.add_parser("list-scenarios", help="list bundled scenario configs")

    args = parser.parse_args(argv)

    if args.command == "list-scenarios":
        for name in list_bundled_scenarios():
            print(name)
        return 0

    if args.command == "run":
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return 2
        try:
            out = execute(args.config, args.out, args.seed)
        except ConfigError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return 2
        except Exception as exc:  # noqa: BLE001 - numerical failures map to exit 3
            print(f"numerical failure [{type(exc).__name__}]: {exc}", file=sys.stderr)
            return 3
        print(f"run complete: {out}")
        return 0

    if args.command == "compare":
        try:
            report = compare_runs(args.dir_a, args.dir_b, args.metric)
        except ConfigError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return 2
        except NumericsError as exc:
            print(f"comparison failed: {exc}", file=sys.stderr)
            return 3
        print(json.dumps(report, indent=2, sort_keys=True))
        report_path = args.dir_b / "compare_report.json"
        write_manifest(report_path, report)
        if args.threshold is not None and report["value"] > args.threshold:
            print(
                f"metric {report['value']:.6g} exceeds threshold {args.threshold:.6g}",
                file=sys.stderr,
            )
            return 1
        return 0

    return 2  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())

"""Command-line runner emitting CSV data for every experiment.

Subcommands mirror the experiment presets: ``surface``, ``upath``,
``boundary``, ``euler-compare``, ``bsde``. A run is configured by a flat
TOML file (``--config``) or a named in-package preset (``--preset``);
``--seed`` overrides the configured seed, ``--threads`` caps parallelism
and ``--out`` selects the output directory. Output is deterministic:
identical config and seed give byte-identical CSVs at any thread count.

Exit codes: 0 success, 2 configuration error, 3 numerical budget or
conditioning error.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .bsde import BsdeConfig, solve_bsde, solve_reflected
from .errors import (
    BudgetExceeded,
    ConfigError,
    OptArbError,
    RegressionIllConditioned,
    SingularMatrix,
)
from .estimator import MeshAxis, sweep_surface, sweep_time
from .euler import (
    EPS_POSITIVITY,
    auxiliary_boundary_experiment,
    bessel_failure_report,
    euler_vsm_paths,
)
from .params import Interpolation, SimConfig, VsmParams, validate_vsm
from .streams import DOMAIN_BOUNDARY, substream

_COMMANDS = ("surface", "upath", "boundary", "euler-compare", "bsde")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_fmt(x) for x in v) + "]"
    return str(v)


def _config_line(command: str, cfg: dict) -> str:
    body = " ".join(f"{k}={_fmt(cfg[k])}" for k in sorted(cfg))
    return f"# config: command={command} {body}\n"


def _load_config(path_or_name: str, preset: bool) -> dict:
    if preset:
        ref = resources.files("optarb").joinpath("presets", f"{path_or_name}.toml")
        if not ref.is_file():
            available = sorted(
                p.name[:-5]
                for p in resources.files("optarb").joinpath("presets").iterdir()
                if p.name.endswith(".toml")
            )
            raise ConfigError(f"unknown preset {path_or_name!r}; available: {', '.join(available)}")
        raw = ref.read_bytes()
        origin = f"preset {path_or_name}"
    else:
        p = Path(path_or_name)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path_or_name}")
        raw = p.read_bytes()
        origin = str(p)
    try:
        return tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {origin}: {exc}") from exc


def _field(cfg: dict, key: str, kind, required: bool = True, default=None):
    if key not in cfg:
        if required:
            raise ConfigError(f"missing config field {key!r}")
        return default
    v = cfg[key]
    try:
        if kind is float:
            if isinstance(v, bool):
                raise TypeError
            return float(v)
        if kind is int:
            if isinstance(v, bool) or (isinstance(v, float) and not v.is_integer()):
                raise TypeError
            return int(v)
        if kind is str:
            if not isinstance(v, str):
                raise TypeError
            return v
        if kind is list:
            if not isinstance(v, (list, tuple)):
                raise TypeError
            return [float(x) for x in v]
    except (TypeError, ValueError):
        pass
    raise ConfigError(f"config field {key!r} must be of type {kind.__name__}, got {v!r}")


def _sim_config(cfg: dict) -> SimConfig:
    horizon = _field(cfg, "t_horizon", float)
    dt = _field(cfg, "dt", float)
    if not 0 < dt <= horizon:
        raise ConfigError(f"dt must lie in (0, t_horizon], got dt={dt}")
    n_steps = int(round(horizon / dt))
    if abs(n_steps * dt - horizon) > 1e-9 * horizon:
        raise ConfigError(f"dt={dt} does not evenly divide t_horizon={horizon}")
    interp_name = _field(cfg, "interpolation", str, required=False, default="linear")
    try:
        interpolation = Interpolation(interp_name)
    except ValueError:
        raise ConfigError(
            f"interpolation must be 'linear' or 'bessel_bridge', got {interp_name!r}"
        ) from None
    bridge_step = _field(cfg, "bridge_step", float, required=False)
    n_paths = _field(cfg, "n_paths", int)
    if n_paths < 2:
        raise ConfigError(f"n_paths must be >= 2, got {n_paths}")
    seed = _field(cfg, "seed", int)
    try:
        return SimConfig(
            horizon=horizon,
            n_steps=n_steps,
            n_paths=n_paths,
            seed=seed,
            interpolation=interpolation,
            bridge_step=bridge_step,
        )
    except OptArbError as exc:
        raise ConfigError(str(exc)) from exc


def _vsm(cfg: dict, x0) -> VsmParams:
    n = _field(cfg, "n", int)
    kappa = _field(cfg, "kappa", float, required=False, default=1.0)
    try:
        return validate_vsm(VsmParams(n=n, kappa=kappa, x0=x0))
    except OptArbError as exc:
        raise ConfigError(str(exc)) from exc


def _check_command(cfg: dict, command: str) -> None:
    stated = cfg.get("command")
    if stated is not None and stated != command:
        raise ConfigError(f"config is for command {stated!r}, not {command!r}")


def _write(path: Path, lines: list[str]) -> None:
    path.write_text("".join(lines), encoding="utf-8", newline="")


def cmd_surface(cfg: dict, out: Path, threads: int) -> None:
    sim = _sim_config(cfg)
    axis1 = MeshAxis(_field(cfg, "mesh_lo", float), _field(cfg, "mesh_hi", float),
                     _field(cfg, "mesh_cells", int))
    axis2 = axis1
    fixed = _field(cfg, "fixed_coords", list, required=False, default=[])
    vsm = _vsm(cfg, [axis1.lo, axis2.lo] + list(fixed))
    if 2 + len(fixed) != vsm.n:
        raise ConfigError(f"fixed_coords must have n-2={vsm.n - 2} entries, got {len(fixed)}")
    surface = sweep_surface(vsm, axis1, axis2, fixed, sim, n_threads=threads)
    p1, p2 = axis1.points(), axis2.points()
    lines = [_config_line("surface", cfg), "x1,x2,u,std_err,n_paths,seed\n"]
    for i in range(axis1.cells):
        for j in range(axis2.cells):
            e = surface.values[i][j]
            lines.append(
                f"{_fmt(p1[i])},{_fmt(p2[j])},{_fmt(e.mean)},{_fmt(e.std_error)},"
                f"{e.n_paths},{sim.seed}\n"
            )
    if surface.n_failed:
        lines.append(f"# unstable_nodes={surface.n_failed} (reported as nan)\n")
    _write(out / "surface.csv", lines)


def cmd_upath(cfg: dict, out: Path, threads: int) -> None:
    sim = _sim_config(cfg)
    x0 = _field(cfg, "x0", list)
    vsm = _vsm(cfg, x0)
    n_sweep = _field(cfg, "sweep_steps", int, required=False)
    if n_sweep is not None and n_sweep < 0:
        raise ConfigError(f"sweep_steps must be >= 0, got {n_sweep}")
    upath = sweep_time(vsm, sim, n_sweep=n_sweep)
    lines = [_config_line("upath", cfg), "t,u,std_err\n"]
    for t, e in zip(upath.times, upath.estimates):
        lines.append(f"{_fmt(t)},{_fmt(e.mean)},{_fmt(e.std_error)}\n")
    _write(out / "upath.csv", lines)


def cmd_boundary(cfg: dict, out: Path, threads: int) -> None:
    n = _field(cfg, "n", int)
    x0 = _field(cfg, "x0", list)
    horizon = _field(cfg, "t_horizon", float)
    dt = _field(cfg, "dt", float)
    n_paths = _field(cfg, "n_paths", int)
    if n_paths < 1:
        raise ConfigError(f"n_paths must be >= 1, got {n_paths}")
    seed = _field(cfg, "seed", int)
    eps = _field(cfg, "eps_floor", float, required=False, default=EPS_POSITIVITY)
    record = _field(cfg, "record_paths", int, required=False, default=0)
    try:
        report, paths = auxiliary_boundary_experiment(
            n, x0, horizon, dt, n_paths, substream(seed, DOMAIN_BOUNDARY, 0),
            eps_floor=eps, record_paths=record,
        )
    except OptArbError as exc:
        raise ConfigError(str(exc)) from exc
    lines = [_config_line("boundary", cfg), "path_id,hit,hit_time\n"]
    for p in range(n_paths):
        ht = report.hit_times[p]
        lines.append(f"{p},{_fmt(bool(report.hit_mask[p]))},{_fmt(ht)}\n")
    lo, hi = report.ci99()
    lines.append(f"# fraction_hit={_fmt(report.fraction_hit)} ci99_lo={_fmt(lo)} ci99_hi={_fmt(hi)}\n")
    _write(out / "boundary.csv", lines)
    if paths is not None:
        times, values = paths
        plines = [_config_line("boundary", cfg)]
        plines.append("path_id,t," + ",".join(f"zeta_{i + 1}" for i in range(n)) + "\n")
        for p in range(values.shape[0]):
            for k, t in enumerate(times):
                row = ",".join(_fmt(values[p, k, i]) for i in range(n))
                plines.append(f"{p},{_fmt(t)},{row}\n")
        _write(out / "boundary_paths.csv", plines)


def cmd_euler_compare(cfg: dict, out: Path, threads: int) -> None:
    sim = _sim_config(cfg)
    x0 = _field(cfg, "x0", list)
    vsm = _vsm(cfg, x0)
    eps = _field(cfg, "eps_floor", float, required=False, default=EPS_POSITIVITY)
    _, euler_report = euler_vsm_paths(vsm, sim, eps_floor=eps)
    bessel_report, truncated = bessel_failure_report(vsm, sim, eps_floor=eps)
    lines = [_config_line("euler-compare", cfg), "method,fail_fraction,n_paths\n"]
    lines.append(f"euler,{_fmt(euler_report.failure_fraction)},{euler_report.n_paths}\n")
    lines.append(f"bessel,{_fmt(bessel_report.failure_fraction)},{bessel_report.n_paths}\n")
    if truncated:
        lines.append(f"# bessel_paths_truncated_by_step_cap={truncated}\n")
    _write(out / "euler_compare.csv", lines)


def cmd_bsde(cfg: dict, out: Path, threads: int) -> None:
    n = _field(cfg, "n", int)
    if n > 3:
        raise ConfigError(f"backward solver is desk scale, n <= 3 required, got n={n}")
    x0 = _field(cfg, "x0", list)
    vsm = _vsm(cfg, x0)
    horizon = _field(cfg, "t_horizon", float)
    ladder = _field(cfg, "lambda_ladder", list, required=False, default=[0.0, 1.0, 10.0, 100.0])
    try:
        bcfg = BsdeConfig(
            n_time_steps=_field(cfg, "n_time_steps", int),
            n_paths=_field(cfg, "n_paths", int),
            basis=_field(cfg, "basis", str, required=False, default="log_poly"),
            degree=_field(cfg, "degree", int, required=False, default=2),
            penalization=tuple(ladder),
            seed=_field(cfg, "seed", int),
            bessel_dt=_field(cfg, "bessel_dt", float, required=False),
        )
    except OptArbError as exc:
        raise ConfigError(str(exc)) from exc
    solution = solve_reflected(vsm, horizon, np.asarray(x0), bcfg)
    lines = [_config_line("bsde", cfg), "lambda,y0,std_err\n"]
    for lam, y0, se in solution.ladder:
        lines.append(f"{_fmt(lam)},{_fmt(y0)},{_fmt(se)}\n")
    _write(out / "bsde.csv", lines)
    tgrid = np.linspace(0.0, horizon, bcfg.n_time_steps + 1)
    klines = [_config_line("bsde", cfg), "t,k\n"]
    for t, k in zip(tgrid, solution.k_trace):
        klines.append(f"{_fmt(t)},{_fmt(k)}\n")
    _write(out / "bsde_k_trace.csv", klines)


_RUNNERS = {
    "surface": cmd_surface,
    "upath": cmd_upath,
    "boundary": cmd_boundary,
    "euler-compare": cmd_euler_compare,
    "bsde": cmd_bsde,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optarb",
        description="Optimal-arbitrage experiments in volatility-stabilized markets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment and write CSV output")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", help="path to a flat TOML config file")
        src.add_argument("--preset", help="name of a packaged preset")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--threads", type=int, default=1, help="parallelism cap (default 1)")
        p.add_argument("--out", default=".", help="output directory (default .)")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.preset or args.config, preset=args.preset is not None)
        _check_command(cfg, args.command)
        if args.seed is not None:
            cfg["seed"] = int(args.seed)
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _RUNNERS[args.command](cfg, out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BudgetExceeded, RegressionIllConditioned, SingularMatrix) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

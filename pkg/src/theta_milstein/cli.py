"""Command-line front end: simulate, convergence, stability, linear-region,
selfcheck.

Experiments are configured by flags, by an INI config file with a [common]
section plus one section per subcommand, or both (flags win).  Unknown keys
are rejected.  Outputs are tidy CSV (with a version header comment) or JSON;
the environment variable THETA_MILSTEIN_SEED overrides the configured seed.

Exit codes: 0 success, 2 configuration error, 3 runtime divergence or
non-convergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from configparser import ConfigParser, Error as ConfigParserError

import numpy as np

from . import analysis, noise, sde
from .errors import (
    ConfigError,
    DivergenceError,
    DomainError,
    GuardViolationError,
    NonConvergenceError,
    ThetaMilsteinError,
)
from .schemes import GuardPolicy, Scheme, SchemeConfig, integrate, trajectory_to_csv

VERSION_TAG = "theta-milstein v1"
SEED_ENV = "THETA_MILSTEIN_SEED"

_PROBLEM_PARAM_KEYS = ("mu", "c", "eta", "lam", "s", "a")


def parse_stepsizes(spec: str) -> tuple[float, ...]:
    """Stepsize list: dyadic shorthand ``2^-a..2^-b``, comma list, or one value."""
    spec = spec.strip()
    m = re.fullmatch(r"2\^(-?\d+)\.\.2\^(-?\d+)", spec)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        hi, lo = max(a, b), min(a, b)
        return tuple(2.0 ** e for e in range(hi, lo - 1, -1))
    try:
        vals = tuple(float(p) for p in spec.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse stepsizes {spec!r}") from exc
    if not vals:
        raise ConfigError(f"empty stepsize list {spec!r}")
    return vals


def parse_grid(spec: str) -> tuple[float, ...]:
    """Grid: ``start:step:stop`` (stop inclusive), comma list, or one value."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"grid {spec!r} must be start:step:stop")
        try:
            start, step, stop = (float(p) for p in parts)
        except ValueError as exc:
            raise ConfigError(f"cannot parse grid {spec!r}") from exc
        if step <= 0 or stop < start:
            raise ConfigError(f"grid {spec!r} must have step > 0 and stop >= start")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(start + i * step for i in range(count))
    try:
        vals = tuple(float(p) for p in spec.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"cannot parse grid {spec!r}") from exc
    if not vals:
        raise ConfigError(f"empty grid {spec!r}")
    return vals


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, tuple):
        return ",".join(format(v, ".17g") for v in value)
    return str(value)


# key -> (parser, default); required keys have default None
_COMMON_SCHEMA = {
    "output": (str, None),
    "format": (str, "csv"),
    "guard": (str, "warn"),
    "workers": (int, 1),
}

_SUB_SCHEMAS = {
    "simulate": {
        "problem": (str, None),
        "scheme": (str, "stm"),
        "theta": (float, None),
        "dt": (float, None),
        "t_end": (float, 1.0),
        "y0": (float, 1.0),
        "seed": (int, 0),
        "paths": (int, 1),
        **{k: (float, None) for k in _PROBLEM_PARAM_KEYS},
    },
    "convergence": {
        "problem": (str, None),
        "scheme": (str, "stm"),
        "theta": (float, None),
        "stepsizes": (parse_stepsizes, None),
        "t_end": (float, 1.0),
        "y0": (float, 1.0),
        "p": (int, 2),
        "paths": (int, 1000),
        "seed": (int, 0),
        **{k: (float, None) for k in _PROBLEM_PARAM_KEYS},
    },
    "stability": {
        "problem": (str, None),
        "scheme": (str, "stm"),
        "theta": (float, None),
        "dt": (float, None),
        "t_end": (float, 1.0),
        "y0": (float, 1.0),
        "paths": (int, 1000),
        "seed": (int, 0),
        **{k: (float, None) for k in _PROBLEM_PARAM_KEYS},
    },
    "linear-region": {
        "theta": (float, None),
        "mu_grid": (parse_grid, None),
        "c_grid": (parse_grid, None),
        "dt_grid": (parse_grid, None),
    },
    "selfcheck": {
        "seed": (int, 0),
    },
}

# keys that must be present after merging flags and file
_REQUIRED = {
    "simulate": ("problem", "theta", "dt"),
    "convergence": ("problem", "theta", "stepsizes"),
    "stability": ("problem", "theta", "dt"),
    "linear-region": ("theta", "mu_grid", "c_grid", "dt_grid"),
    "selfcheck": (),
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="theta-milstein",
        description="Theta-Milstein SDE schemes: simulation and experiment harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, schema in _SUB_SCHEMAS.items():
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", default=None, help="INI config file")
        for key, (cast, _) in _COMMON_SCHEMA.items():
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=key, default=argparse.SUPPRESS, type=str)
        for key, (cast, _) in schema.items():
            flag = "--" + key.replace("_", "-")
            sp.add_argument(flag, dest=key, default=argparse.SUPPRESS, type=str)
    return parser


def _read_config_file(path: str, command: str) -> dict[str, str]:
    parser = ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError:
        raise
    except ConfigParserError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    allowed_sections = {"common", command}
    values: dict[str, str] = {}
    for section in parser.sections():
        if section not in allowed_sections:
            if section in _SUB_SCHEMAS:
                continue  # sections for other subcommands are fine to carry
            raise ConfigError(f"unknown config section [{section}]")
        schema = _COMMON_SCHEMA if section == "common" else _SUB_SCHEMAS[command]
        for key, raw in parser.items(section):
            key = key.replace("-", "_")
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            values[key] = raw
    return values


def _merge_config(args: argparse.Namespace) -> dict:
    command = args.command
    schema = {**_COMMON_SCHEMA, **_SUB_SCHEMAS[command]}
    raw: dict[str, str] = {}
    if getattr(args, "config", None):
        raw.update(_read_config_file(args.config, command))
    for key in schema:
        if hasattr(args, key):
            raw[key] = getattr(args, key)

    cfg: dict = {}
    for key, (cast, default) in schema.items():
        if key in raw:
            try:
                cfg[key] = cast(raw[key])
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"invalid value for {key!r}: {raw[key]!r}") from exc
        else:
            cfg[key] = default

    if "seed" in schema and os.environ.get(SEED_ENV):
        try:
            cfg["seed"] = int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc

    missing = [k for k in _REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"{command}: missing required option(s) {missing}")
    _validate(command, cfg)
    return cfg


def _validate(command: str, cfg: dict) -> None:
    if cfg.get("format") not in (None, "csv", "json"):
        raise ConfigError(f"format must be csv or json, got {cfg['format']!r}")
    if cfg.get("guard") not in (None, "strict", "warn", "off"):
        raise ConfigError(f"guard must be strict, warn or off, got {cfg['guard']!r}")
    if cfg.get("workers") is not None and cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    if "scheme" in cfg and cfg["scheme"] not in ("sstm", "stm"):
        raise ConfigError(f"scheme must be sstm or stm, got {cfg['scheme']!r}")
    if "theta" in cfg and cfg["theta"] is not None and not 0.0 <= cfg["theta"] <= 1.0:
        raise ConfigError(f"theta must lie in [0, 1], got {cfg['theta']}")
    for key in ("dt", "t_end"):
        if cfg.get(key) is not None and cfg[key] <= 0:
            raise ConfigError(f"{key} must be > 0")
    if cfg.get("paths") is not None and cfg["paths"] < 1:
        raise ConfigError("paths must be >= 1")
    if cfg.get("p") is not None and (cfg["p"] < 2 or cfg["p"] % 2):
        raise ConfigError("p must be an even integer >= 2")


def canonical_config(command: str, cfg: dict) -> dict[str, dict[str, str]]:
    """Canonical two-section form of a merged config; stable under re-parsing."""
    common = {
        k: _fmt(cfg[k]) for k in sorted(_COMMON_SCHEMA) if cfg.get(k) is not None
    }
    section = {
        k: _fmt(cfg[k]) for k in sorted(_SUB_SCHEMAS[command]) if cfg.get(k) is not None
    }
    return {"common": common, command: section}


def render_ini(command: str, cfg: dict) -> str:
    parts = []
    for section, values in canonical_config(command, cfg).items():
        parts.append(f"[{section}]")
        parts.extend(f"{k} = {v}" for k, v in values.items())
        parts.append("")
    return "\n".join(parts)


def _problem_from(cfg: dict) -> sde.SdeProblem:
    params = {
        k: cfg[k] for k in _PROBLEM_PARAM_KEYS if cfg.get(k) is not None
    }
    try:
        return sde.builtin_problem(cfg["problem"], params)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def _write_output(cfg: dict, command: str, result_dict: dict, csv_writer) -> None:
    path = cfg.get("output")
    if not path:
        return
    if cfg.get("format") == "json":
        payload = {
            "version": VERSION_TAG,
            "subcommand": command,
            "config": canonical_config(command, cfg),
            "result": result_dict,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    else:
        with open(path, "w") as fh:
            fh.write(f"# {VERSION_TAG} {command}\n")
            csv_writer(fh)


def _guard(cfg: dict) -> GuardPolicy:
    return GuardPolicy(cfg.get("guard") or "warn")


def _cmd_simulate(cfg: dict) -> int:
    problem = _problem_from(cfg)
    steps = round(cfg["t_end"] / cfg["dt"])
    if steps < 1 or abs(steps * cfg["dt"] - cfg["t_end"]) > 1e-9 * cfg["t_end"]:
        raise ConfigError("dt must divide t_end")
    scheme_cfg = SchemeConfig(theta=cfg["theta"], dt=cfg["dt"], guard_policy=_guard(cfg))
    trajectories = []
    for pidx in range(cfg["paths"]):
        dw = noise.normal_increments(cfg["seed"], pidx, cfg["dt"], steps)
        trajectories.append(integrate(problem, cfg["scheme"], cfg["y0"], dw, scheme_cfg))

    def csv_writer(fh):
        if cfg["paths"] == 1:
            trajectory_to_csv(trajectories[0], fh)
            return
        n = trajectories[0].y_states.shape[1]
        cols = ["path", "t"] + [f"y_{j + 1}" for j in range(n)]
        if trajectories[0].z_states is not None:
            cols += [f"z_{j + 1}" for j in range(n)]
        fh.write(",".join(cols) + "\n")
        for pidx, traj in enumerate(trajectories):
            for k, t in enumerate(traj.times):
                row = [str(pidx), format(t, ".17g")]
                row += [format(v, ".17g") for v in traj.y_states[k]]
                if traj.z_states is not None:
                    row += [format(v, ".17g") for v in traj.z_states[k]]
                fh.write(",".join(row) + "\n")

    result = {
        "paths": cfg["paths"],
        "terminal_states": [traj.y_states[-1].tolist() for traj in trajectories],
        "times": trajectories[0].times.tolist(),
        "y": [traj.y_states.tolist() for traj in trajectories],
        "z": [
            traj.z_states.tolist() if traj.z_states is not None else None
            for traj in trajectories
        ],
        "guard_warnings": list(trajectories[0].flags.guard_warnings),
    }
    _write_output(cfg, "simulate", result, csv_writer)
    terminal = trajectories[0].y_states[-1]
    print(
        f"simulate: {cfg['problem']} {cfg['scheme']} theta={cfg['theta']:g} "
        f"dt={cfg['dt']:g} terminal y={np.array2string(terminal, precision=6)}"
    )
    return 0


def _cmd_convergence(cfg: dict) -> int:
    problem = _problem_from(cfg)
    report = analysis.estimate_strong_order(
        problem,
        cfg["scheme"],
        cfg["theta"],
        cfg["y0"],
        cfg["t_end"],
        cfg["stepsizes"],
        cfg["paths"],
        cfg["p"],
        cfg["seed"],
        guard_policy=_guard(cfg),
        workers=cfg["workers"],
    )
    _write_output(cfg, "convergence", report.to_dict(), report.write_csv)
    print(
        f"convergence: fitted order {report.fitted_order:.3f} "
        f"({len(report.stepsizes)} levels, p={report.p}, paths={report.paths}, "
        f"reference={report.reference})"
    )
    return 0


def _cmd_stability(cfg: dict) -> int:
    problem = _problem_from(cfg)
    report = analysis.estimate_ms_decay(
        problem,
        cfg["scheme"],
        cfg["theta"],
        cfg["dt"],
        cfg["y0"],
        cfg["t_end"],
        cfg["paths"],
        cfg["seed"],
        guard_policy=_guard(cfg),
        workers=cfg["workers"],
    )
    _write_output(cfg, "stability", report.to_dict(), report.write_csv)
    predicted = (
        f", predicted {report.predicted_gamma_delta:.4f}"
        if report.predicted_gamma_delta is not None
        else ""
    )
    print(f"stability: fitted decay {report.fitted_decay:.4f}{predicted}")
    return 0


def _cmd_linear_region(cfg: dict) -> int:
    table = analysis.linear_region_scan(
        cfg["theta"], cfg["dt_grid"], cfg["mu_grid"], cfg["c_grid"]
    )
    _write_output(cfg, "linear-region", table.to_dict(), table.write_csv)
    stable = sum(1 for r in table.rows if r.scheme_stable)
    print(f"linear-region: {stable}/{len(table.rows)} grid points scheme-stable")
    return 0


def _cmd_selfcheck(cfg: dict) -> int:
    seed = cfg["seed"]
    ok = True

    grid = noise.generate(seed, 0, t_end=10_000.0, fine_steps=1_000_000)
    report = noise.moment_check(grid)
    for stat in report.stats:
        good = stat.deviation_sigmas <= 3.0
        ok &= good
        print(
            f"selfcheck moment {stat.name}: estimate {stat.estimate:.6g} "
            f"target {stat.target:.6g} ({stat.deviation_sigmas:.2f} sigma) "
            f"[{'ok' if good else 'FAIL'}]"
        )

    problem = sde.linear_problem(-2.0, 1.0)
    worst = 0.0
    for theta in (0.0, 0.25, 0.5, 0.75, 1.0):
        scheme_cfg = SchemeConfig(theta=theta, dt=0.02, guard_policy=GuardPolicy.WARN)
        for pidx in range(20):
            dw = noise.normal_increments(seed, pidx, 0.02, 50)
            stm = integrate(problem, Scheme.STM, 1.0, dw, scheme_cfg)
            sstm = integrate(problem, Scheme.SSTM, 1.0, dw, scheme_cfg)
            scale = 1.0 + float(np.max(np.abs(stm.y_states)))
            diff = float(np.max(np.abs(stm.y_states - sstm.y_states))) / scale
            worst = max(worst, diff)
    good = worst <= 1e-9
    ok &= good
    print(
        f"selfcheck scheme equivalence: max relative discrepancy {worst:.3e} "
        f"[{'ok' if good else 'FAIL'}]"
    )

    if not ok:
        print("selfcheck failed", file=sys.stderr)
        return 1
    print("selfcheck passed")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "convergence": _cmd_convergence,
    "stability": _cmd_stability,
    "linear-region": _cmd_linear_region,
    "selfcheck": _cmd_selfcheck,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _merge_config(args)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, DomainError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    except (GuardViolationError, DivergenceError, NonConvergenceError) as exc:
        print(f"error: runtime failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: i/o failure: {exc}", file=sys.stderr)
        return 4
    except ThetaMilsteinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

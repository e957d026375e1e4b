"""Command-line front end: run the experiments and emit CSV.

Subcommands:
    simulate     one trajectory            -> t, x1, ..., xd
    convergence  strong-order table        -> h, rms, stderr (+ # slope=)
    structure    energy | growth | triangle time series
    sweep        one-step error vs frequency

Reals are serialized with 17 significant digits, so identical
invocations produce byte-identical files. Exit codes: 0 success, 2 usage
error, 3 numerical failure. SEDGKIT_THREADS mirrors --threads.
"""

import argparse
import json
import sys

import numpy as np

from .diagnostics import poisson_energy, triangle_area_track
from .harness import (
    SWEEP_COMPONENTS,
    ExperimentConfig,
    expectation_growth,
    frequency_sweep,
    resolve_threads,
    simulate_path,
    strong_order,
    _steps_for,
)
from .integrators import SCHEME_NAMES, FixedPointError, make_scheme
from .models import MODEL_NAMES, build_model
from .wiener import TruncationPolicy, generate

_TRIANGLE_VERTICES = np.array([[-1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])

_STRUCTURE_DEFAULTS = {
    # mode: (model, scheme, h, t_end, x0)
    "energy": ("wind_poisson", "sedg_poisson", 0.0625, 50.0, [0.1, 1.0]),
    "growth": ("oscillator", "sedg_oscillator", 0.015625, 5.0, [0.0, 0.02]),
    "triangle": ("damped_oscillator", "sedg_langevin", 0.03125, 5.0, None),
}


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(out, header, rows, comments=()):
    """Write header + rows (+ trailing comment lines) with LF endings."""
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    lines.extend(comments)
    text = "\n".join(lines) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", newline="") as fh:
            fh.write(text)


def _parse_params(chunks):
    """Parse repeated/comma-joined key=value pairs into a float dict."""
    params = {}
    for chunk in chunks or ():
        for pair in chunk.split(","):
            pair = pair.strip()
            if not pair:
                continue
            if "=" not in pair:
                raise ValueError(f"malformed parameter {pair!r}, expected key=value")
            key, _, val = pair.partition("=")
            params[key.strip()] = float(val)
    return params


def _parse_floats(text, what):
    try:
        vals = [float(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError as exc:
        raise ValueError(f"malformed {what}: {text!r}") from exc
    if not vals:
        raise ValueError(f"empty {what}")
    return vals


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    return cfg


def _pick(args, config, key, default=None):
    """Flag value if given, else config value, else default."""
    val = getattr(args, key.replace("-", "_"), None)
    if val is not None:
        return val
    if key in config:
        return config[key]
    return default


def _require(value, flag):
    if value is None:
        raise ValueError(f"missing required option --{flag}")
    return value


def _truncation(args, config):
    k = _pick(args, config, "truncate_k")
    if k is None:
        return None
    return TruncationPolicy(enabled=True, k=float(k))


def _params_of(args, config):
    params = dict(config.get("params", {}))
    params.update(_parse_params(args.params))
    return {k: float(v) for k, v in params.items()}


def _x0_of(args, config, default=None):
    raw = _pick(args, config, "x0", default)
    if raw is None:
        raise ValueError("missing required option --x0")
    if isinstance(raw, str):
        return np.array(_parse_floats(raw, "x0"))
    return np.asarray(raw, dtype=float)


def _check_positive(value, flag):
    if value <= 0:
        raise ValueError(f"--{flag} must be > 0, got {value}")
    return value


def _scheme_for(name, model, truncation):
    if name not in SCHEME_NAMES:
        raise ValueError(f"unknown scheme {name!r} (expected one of {SCHEME_NAMES})")
    return make_scheme(name, model, truncation=truncation)


def _grid_for(seed, m, n_steps, h):
    L = max(0, (n_steps - 1).bit_length())
    return generate(seed, 0, m, L, h)


def cmd_simulate(args):
    config = _load_config(args.config)
    model_name = _require(_pick(args, config, "model"), "model")
    scheme_name = _require(_pick(args, config, "scheme"), "scheme")
    h = _check_positive(float(_require(_pick(args, config, "h"), "h")), "h")
    t_end = _check_positive(float(_require(_pick(args, config, "t_end"), "t-end")),
                            "t-end")
    seed = int(_pick(args, config, "seed", 0))
    out = _pick(args, config, "out")
    x0 = _x0_of(args, config)
    model = build_model(model_name, _params_of(args, config))
    scheme = _scheme_for(scheme_name, model, _truncation(args, config))
    n_steps = _steps_for(t_end, h)
    grid = _grid_for(seed, 1, n_steps, h)
    traj = simulate_path(model, scheme, x0, h, n_steps, grid)
    t = h * np.arange(n_steps + 1)
    header = ["t"] + [f"x{i + 1}" for i in range(traj.shape[1])]
    rows = [(t[k], *traj[k]) for k in range(traj.shape[0])]
    write_csv(out, header, rows)
    return 0


def cmd_convergence(args):
    config = _load_config(args.config)
    model_name = _require(_pick(args, config, "model"), "model")
    scheme_name = _require(_pick(args, config, "scheme"), "scheme")
    raw_h = _require(_pick(args, config, "h_list"), "h-list")
    h_list = _parse_floats(raw_h, "h-list") if isinstance(raw_h, str) else list(raw_h)
    paths = int(_pick(args, config, "paths", 1000))
    _check_positive(paths, "paths")
    t_end = _check_positive(float(_pick(args, config, "t_end", 1.0)), "t-end")
    if scheme_name not in SCHEME_NAMES:
        raise ValueError(f"unknown scheme {scheme_name!r}")
    if model_name not in MODEL_NAMES:
        raise ValueError(f"unknown model {model_name!r}")
    cfg = ExperimentConfig(
        model=model_name,
        scheme=scheme_name,
        t_end=t_end,
        h_list=h_list,
        x0=_x0_of(args, config),
        params=_params_of(args, config),
        ref_factor=int(_pick(args, config, "ref_factor", 128)),
        n_paths=paths,
        base_seed=int(_pick(args, config, "seed", 0)),
        truncation=_truncation(args, config),
        threads=_pick(args, config, "threads"),
    )
    table = strong_order(cfg)
    rows = list(zip(table.h, table.rms, table.stderr))
    comments = [f"# slope={_fmt(table.slope)}"]
    if table.degenerate:
        comments.append("# degenerate=1 (errors at rounding level)")
    write_csv(_pick(args, config, "out"), ["h", "rms", "stderr"], rows, comments)
    return 0


def cmd_structure(args):
    config = _load_config(args.config)
    mode = _require(_pick(args, config, "mode"), "mode")
    if mode not in _STRUCTURE_DEFAULTS:
        raise ValueError(f"unknown structure mode {mode!r}")
    d_model, d_scheme, d_h, d_tend, d_x0 = _STRUCTURE_DEFAULTS[mode]
    model_name = _pick(args, config, "model", d_model)
    scheme_name = _pick(args, config, "scheme", d_scheme)
    h = _check_positive(float(_pick(args, config, "h", d_h)), "h")
    t_end = _check_positive(float(_pick(args, config, "t_end", d_tend)), "t-end")
    seed = int(_pick(args, config, "seed", 0))
    out = _pick(args, config, "out")
    params = _params_of(args, config)
    truncation = _truncation(args, config)
    n_steps = _steps_for(t_end, h)

    if mode == "energy":
        model = build_model(model_name, params)
        if not hasattr(model, "energy"):
            raise ValueError(f"model {model_name!r} has no invariant energy")
        scheme = _scheme_for(scheme_name, model, truncation)
        x0 = _x0_of(args, config, d_x0)
        grid = _grid_for(seed, 1, n_steps, h)
        traj = simulate_path(model, scheme, x0, h, n_steps, grid)
        energy = poisson_energy(model, traj)
        t = h * np.arange(n_steps + 1)
        write_csv(out, ["t", "energy"],
                  [(t[k], energy[k]) for k in range(n_steps + 1)])
        return 0

    if mode == "growth":
        paths = int(_pick(args, config, "paths", 2000))
        _check_positive(paths, "paths")
        if scheme_name not in SCHEME_NAMES:
            raise ValueError(f"unknown scheme {scheme_name!r}")
        cfg = ExperimentConfig(
            model=model_name, scheme=scheme_name, t_end=t_end, h_list=[h],
            x0=_x0_of(args, config, d_x0), params=params,
            n_paths=paths, base_seed=seed, truncation=truncation,
            threads=_pick(args, config, "threads"),
        )
        report = expectation_growth(cfg)
        rows = list(zip(report.t, report.mean_h1, report.stderr))
        write_csv(out, ["t", "mean_H1", "stderr"], rows)
        return 0

    # triangle mode
    model = build_model(model_name, params)
    scheme = _scheme_for(scheme_name, model, truncation)
    nu = getattr(model, "nu", params.get("nu", 0.0))
    grid = _grid_for(seed, 1, n_steps, h)
    report = triangle_area_track(
        scheme, _TRIANGLE_VERTICES, h, n_steps, grid.increments[0], nu=nu
    )
    rows = list(zip(report.t, report.areas, report.norm_areas))
    write_csv(out, ["t", "area", "norm_area"], rows)
    return 0


def cmd_sweep(args):
    config = _load_config(args.config)
    raw_omegas = _require(_pick(args, config, "omegas"), "omegas")
    omegas = (_parse_floats(raw_omegas, "omega list")
              if isinstance(raw_omegas, str) else list(raw_omegas))
    raw_schemes = _pick(args, config, "schemes", "sedg,sem")
    schemes = ([s.strip() for s in raw_schemes.split(",") if s.strip()]
               if isinstance(raw_schemes, str) else list(raw_schemes))
    for s in schemes:
        if s not in SCHEME_NAMES:
            raise ValueError(f"unknown scheme {s!r}")
    raw_comp = _pick(args, config, "components", "x1,x2")
    components = ([c.strip() for c in raw_comp.split(",") if c.strip()]
                  if isinstance(raw_comp, str) else list(raw_comp))
    for c in components:
        if c not in SWEEP_COMPONENTS:
            raise ValueError(f"unknown component {c!r} (expected {SWEEP_COMPONENTS})")
    paths = int(_pick(args, config, "paths", 1000))
    _check_positive(paths, "paths")
    h = _check_positive(float(_pick(args, config, "h", 0.03125)), "h")
    cfg = ExperimentConfig(
        model="nonlinear_oscillator", scheme="sedg", t_end=max(h, 1.0),
        h_list=[h], x0=_x0_of(args, config, [1.0, 0.0]),
        params=_params_of(args, config),
        ref_factor=int(_pick(args, config, "ref_factor", 128)),
        n_paths=paths, base_seed=int(_pick(args, config, "seed", 0)),
        truncation=_truncation(args, config),
        threads=_pick(args, config, "threads"),
    )
    table = frequency_sweep(cfg, omegas, schemes=tuple(schemes))
    rows = [r for r in table.rows if r[2] in components]
    comments = [
        f"# slope,{name},{comp}={_fmt(slope)}"
        for (name, comp), slope in sorted(table.slopes.items())
        if comp in components
    ]
    write_csv(_pick(args, config, "out"), ["omega", "scheme", "component", "rms"],
              rows, comments)
    return 0


def _add_common(p):
    p.add_argument("--config", help="JSON file with the same keys; flags override")
    p.add_argument("--params", action="append",
                   help="model parameters, e.g. sigma=0.3,lambda=1")
    p.add_argument("--seed", type=int)
    p.add_argument("--truncate-k", type=float, dest="truncate_k",
                   help="enable increment clipping with this exponent")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="output CSV path ('-' or omitted: stdout)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sedgkit",
        description="structure-preserving stochastic integrator experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate one trajectory")
    p.add_argument("--model")
    p.add_argument("--scheme")
    p.add_argument("--h", type=float)
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--x0")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("convergence", help="strong-order table")
    p.add_argument("--model")
    p.add_argument("--scheme")
    p.add_argument("--h-list", dest="h_list")
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--paths", type=int)
    p.add_argument("--ref-factor", type=int, dest="ref_factor")
    p.add_argument("--x0")
    _add_common(p)
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("structure", help="energy / growth / triangle series")
    p.add_argument("--mode", choices=sorted(_STRUCTURE_DEFAULTS))
    p.add_argument("--model")
    p.add_argument("--scheme")
    p.add_argument("--h", type=float)
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--paths", type=int)
    p.add_argument("--x0")
    _add_common(p)
    p.set_defaults(func=cmd_structure)

    p = sub.add_parser("sweep", help="one-step error vs frequency")
    p.add_argument("--omegas")
    p.add_argument("--schemes")
    p.add_argument("--components")
    p.add_argument("--h", type=float)
    p.add_argument("--paths", type=int)
    p.add_argument("--ref-factor", type=int, dest="ref_factor")
    p.add_argument("--x0")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FixedPointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

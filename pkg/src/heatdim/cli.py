"""Command-line interface: ``heatdim <subcommand> [options]``.

Every subcommand accepts ``--config FILE``; values in its ``[params]``
table (and ``seed``, ``replicas``, ``out``) are overridden by flags given
on the command line.  Tables go to ``--out DIR`` as CSV, or to stdout for
the light subcommands when ``--out`` is omitted.

Exit status: 0 on success, 1 if an in-config check failed, 2 on usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

# name -> (parser, default, help); parser is applied to flag strings only
_FLOAT, _INT, _STR = float, int, str


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


PARAMS = {
    "kernel": {
        "r_values": (_floats, [0.01, 0.1, 1.0, 2.0], "comma-separated times r"),
        "n_dist": (_INT, 11, "distances in [0, 1]"),
    },
    "variance": {
        "times": (_floats, [1e-6, 1e-4, 1e-2, 1.0], "comma-separated t"),
        "quadrature": (_INT, 1, "1 to add the quadrature oracle column"),
    },
    "covariance": {
        "t": (_FLOAT, 0.5, "first time"),
        "x": (_FLOAT, 0.0, "first site"),
        "s": (_floats, [0.25, 0.5], "comma-separated second times"),
        "y": (_floats, [0.0, 0.25, 0.5], "comma-separated second sites"),
        "n_modes": (_INT, None, "mode truncation (default: none)"),
    },
    "sample-h": {
        "times": (_floats, [0.5], "comma-separated sample times"),
        "n_sites": (_INT, 1024, "uniform sites -1 + 2j/J"),
        "p": (_INT, 1, "field dimension"),
        "n_modes": (_INT, None, "mode truncation"),
        "format": (_STR, "bin", "payload format: bin or csv"),
    },
    "slnd": {
        "T": (_FLOAT, 1.0, "time horizon"),
        "m_max": (_INT, 8, "largest number of conditioners"),
        "n_configs": (_INT, 200, "random configurations"),
        "n_modes": (_INT, None, "mode truncation (default: none)"),
    },
    "solve": {
        "p": (_INT, 1, "field dimension"),
        "n_sites": (_INT, 256, "grid sites"),
        "dt": (_FLOAT, 1e-3, "time step"),
        "t_end": (_FLOAT, 0.1, "final time"),
        "drift": (_STR, "zero", "zero, linear or saturating"),
        "diffusion": (_STR, "identity", "zero, identity, constant, sine or diag-v1"),
        "drift_rate": (_FLOAT, 1.0, "rate of the linear drift"),
        "diffusion_scale": (_FLOAT, 1.0, "scale of the constant diffusion"),
        "diffusion_amplitude": (_FLOAT, 0.5, "amplitude of the sine diffusion"),
        "initial_data": (_STR, "zero", "zero or trig"),
        "record_times": (_floats, None, "comma-separated output times (default: t_end)"),
        "format": (_STR, "bin", "payload format: bin or csv"),
    },
    "dimension": {
        "kind": (_STR, "fixed-time-spatial", "fixed-time-spatial, fixed-space-temporal or space-time"),
        "set": (_STR, "torus", "torus, cantor or an interval 'a,b'"),
        "p": (_INT, 2, "field dimension"),
        "n_points": (_INT, 2**16, "sample points"),
        "t": (_FLOAT, 0.5, "time for the spatial kind"),
        "x": (_FLOAT, 0.0, "site for the temporal kind"),
        "n_modes": (_INT, None, "mode truncation"),
        "cantor_depth": (_INT, 12, "Cantor depth"),
        "cantor_ratio": (_FLOAT, 1.0 / 3.0, "Cantor ratio"),
        "window": (_ints, None, "fixed scale window 'j_min,j_max' (default: automatic)"),
    },
}
# subcommands that run a registered experiment; their params pass through to it
EXPERIMENT_ALIASES = {"linearize": "linearization", "moments": "increment-moments", "counts": "counting-bound"}
EXTRA = {
    "linearize": {
        "p": (_INT, None, "field dimension"),
        "n_sites": (_INT, None, "grid sites"),
        "diffusion": (_STR, None, "diffusion fixture"),
        "diffusion_amplitude": (_FLOAT, None, "sine amplitude"),
        "initial_data": (_STR, None, "zero or trig"),
    },
    "moments": {"n_sites": (_INT, None, "grid sites"), "t": (_FLOAT, None, "final time")},
    "counts": {
        "p": (_INT, None, "field dimension"),
        "delta": (_FLOAT, None, "lattice exponent delta"),
        "n_range": (_ints, None, "comma-separated n"),
        "times": (_floats, None, "comma-separated times"),
        "n_seeds": (_INT, None, "replicates per time"),
    },
}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML config file")
    parser.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--replicas", type=int, help="number of replicas")
    parser.add_argument("--threads", type=int, help="BLAS/FFT thread count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatdim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    specs = dict(PARAMS)
    specs.update(EXTRA)
    for name in list(PARAMS) + list(EXTRA):
        p = sub.add_parser(name, help=f"{name} subcommand")
        _common(p)
        for key, (_, default, help_) in specs[name].items():
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, type=str, default=None,
                           help=f"{help_} (default {default})")
    rep = sub.add_parser("report", help="summarise manifests")
    rep.add_argument("manifests", nargs="*", type=Path)
    rep.add_argument("--out", type=Path, help="directory for summary.csv and details.csv")
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config_file", type=Path)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", type=Path)
    run.add_argument("--replicas", type=int)
    run.add_argument("--threads", type=int)
    return parser


def _set_threads(n: int | None) -> None:
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _resolve(args, spec: dict) -> tuple[dict, "object"]:
    """Merge defaults, config ``[params]`` and explicit flags."""
    from .config import ExperimentConfig, load

    cfg = load(args.config) if args.config else ExperimentConfig(args.command)
    params = {k: d for k, (_, d, _) in spec.items()}
    params.update(cfg.params)
    for key, (conv, _, _) in spec.items():
        raw = getattr(args, key, None)
        if raw is not None:
            params[key] = conv(raw)
    cfg = cfg.with_overrides(seed=args.seed, replicas=args.replicas, out=args.out)
    return params, cfg


def _emit(out: Path | None, name: str, header, rows) -> None:
    from .records import _csv, write_table

    if out is None:
        sys.stdout.write(_csv([header] + [[repr(float(v)) if isinstance(v, float) else v for v in r] for r in rows]))
    else:
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / f"{name}.csv", header, rows)


def _cmd_kernel(params, cfg, out):
    import numpy as np

    from . import kernel as hk

    rows = []
    for r in params["r_values"]:
        for d in np.linspace(0.0, 1.0, int(params["n_dist"])):
            a, b = float(hk.kernel_image_sum(r, 0.0, d)), float(hk.kernel_fourier(r, 0.0, d))
            rows.append([float(r), float(d), a, b, abs(a - b)])
    _emit(out, "kernel", ["r", "dist", "image_sum", "fourier", "abs_diff"], rows)
    return 0


def _cmd_variance(params, cfg, out):
    from . import kernel as hk

    rows = []
    for t in params["times"]:
        v = float(hk.variance_of_H(t))
        row = [float(t), v, v / t**0.5 if t > 0 else float("nan")]
        if int(params["quadrature"]):
            row.append(hk.variance_of_H_quadrature(t))
        rows.append(row)
    header = ["t", "variance", "ratio_sqrt_t"] + (["quadrature"] if int(params["quadrature"]) else [])
    _emit(out, "variance", header, rows)
    return 0


def _cmd_covariance(params, cfg, out):
    from . import kernel as hk

    rows = [[params["t"], params["x"], s, y, float(hk.covariance_of_H(params["t"], params["x"], s, y, n_modes=params["n_modes"]))]
            for s in params["s"] for y in params["y"]]
    _emit(out, "covariance", ["t", "x", "s", "y", "covariance"], rows)
    return 0


def _cmd_sample_h(params, cfg, out):
    from . import gaussian as gf
    from .records import write_field

    out = out or Path("runs/sample-h")
    out.mkdir(parents=True, exist_ok=True)
    sites = gf.uniform_sites(int(params["n_sites"]))
    n_modes = params["n_modes"] or gf.default_n_modes(params["times"])
    for r in range(cfg.replicas or 1):
        fs = gf.sample_grid(params["times"], sites, int(params["p"]), n_modes, cfg.seed, r)
        write_field(out / f"field_r{r}", fs.times, fs.sites, fs.values,
                    {"seed": cfg.seed, "replica": r, "n_modes": n_modes}, params["format"])
    return 0


def _cmd_slnd(params, cfg, out):
    from . import gaussian as gf

    rep = gf.slnd_ratio_scan(params["T"], int(params["m_max"]), int(params["n_configs"]), cfg.seed, params["n_modes"])
    rows = [[int(rep.m[i]), rep.target_times[i], rep.ratios[i]] for i in range(rep.ratios.size)]
    _emit(out, "slnd", ["m", "t", "ratio"], rows)
    sys.stderr.write(f"min ratio {rep.min_ratio:.6g}, max ratio {rep.max_ratio:.6g}, skipped {rep.n_skipped}\n")
    return 0


def _cmd_solve(params, cfg, out):
    from . import solver as sv
    from .experiments import _u0_fixture
    from .records import write_field, write_table

    out = out or Path("runs/solve")
    out.mkdir(parents=True, exist_ok=True)
    p = int(params["p"])
    coeffs = sv.make_coefficients(p, params["drift"], params["diffusion"], drift_rate=params["drift_rate"],
                                  diffusion_scale=params["diffusion_scale"],
                                  diffusion_amplitude=params["diffusion_amplitude"])
    rec = params["record_times"] or [params["t_end"]]
    conf = sv.SolverConfig(p, int(params["n_sites"]), params["dt"], params["t_end"], _u0_fixture(params["initial_data"], p),
                           cfg.seed, record_times=rec)
    traj = sv.solve_ensemble(conf, coeffs, cfg.replicas or 1)
    for r in range(traj.values.shape[0]):
        write_field(out / f"trajectory_r{r}", traj.times, traj.sites, traj.values[r],
                    {"seed": cfg.seed, "replica": r, "coefficients": coeffs.name, "blowup": bool(traj.blowup[r])},
                    params["format"])
    write_table(out / "diagnostics.csv", ["replica", "t", "sup_norm"],
                [[r, traj.step_times[m], traj.sup_norm[r, m]] for r in range(traj.values.shape[0])
                 for m in range(traj.step_times.size)])
    return 1 if traj.blowup.any() else 0


def _cmd_dimension(params, cfg, out):
    from . import dimension as dim

    kind = params["kind"]
    if params["set"] == "torus":
        spec = "torus"
    elif params["set"] == "cantor":
        spec = dim.CantorSpec(int(params["cantor_depth"]), float(params["cantor_ratio"]))
    else:
        spec = tuple(_floats(params["set"]))
    if kind == "space-time" and not (isinstance(spec, tuple) and len(spec) == 4):
        raise SystemExit("space-time needs --set 'S,T,a,b'")
    if kind == "space-time":
        spec = (spec[:2], spec[2:])
    res = dim.image_dimension_experiment(kind, spec, int(params["p"]), t=params["t"], x=params["x"],
                                         n_points=int(params["n_points"]), seed=cfg.seed, n_modes=params["n_modes"],
                                         window=tuple(params["window"]) if params["window"] else None, fallback=True)
    est = res.estimate
    rows = [[j, int(c)] for j, c in zip(range(est.scales[0], est.scales[1] + 1), est.counts)]
    _emit(out, "box_counts", ["scale_j", "count"], rows)
    summary = {"kind": kind, "slope": est.slope, "ci_half_width": est.ci_half_width, "target": res.target,
               "outside_hypothesis": res.outside_hypothesis, "j_min": est.scales[0], "j_max": est.scales[1]}
    line = json.dumps(summary, sort_keys=True)
    if out is None:
        sys.stderr.write(line + "\n")
    else:
        (out / "summary.ndjson").write_text(line + "\n", encoding="utf-8")
    return 0


def _run_config(cfg, out) -> int:
    from .experiments import run_experiment

    out = out or Path(cfg.out)
    manifest, _ = run_experiment(cfg, out)
    for c in manifest.checks:
        sys.stdout.write(f"{'PASS' if c.passed else 'FAIL'} {manifest.experiment}/{c.name}: "
                         f"measured {json.dumps(c.measured, default=str)} target {c.target}\n")
    return 0 if manifest.passed else 1


def _cmd_experiment(args, spec) -> int:
    params, cfg = _resolve(args, spec)
    name = EXPERIMENT_ALIASES[args.command]
    params = {k: v for k, v in params.items() if v is not None}
    cfg.experiment = name
    cfg = cfg.with_overrides(params=params)
    return _run_config(cfg, args.out or Path(cfg.out if args.config else f"runs/{name}"))


HANDLERS = {
    "kernel": _cmd_kernel,
    "variance": _cmd_variance,
    "covariance": _cmd_covariance,
    "sample-h": _cmd_sample_h,
    "slnd": _cmd_slnd,
    "solve": _cmd_solve,
    "dimension": _cmd_dimension,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(getattr(args, "threads", None))
    from .errors import HeatDimError

    try:
        if args.command == "report":
            from .records import report

            rep = report(args.manifests)
            if args.out:
                args.out.mkdir(parents=True, exist_ok=True)
                (args.out / "summary.csv").write_text(rep.summary_csv(), encoding="utf-8")
                (args.out / "details.csv").write_text(rep.details_csv(), encoding="utf-8")
            sys.stdout.write(rep.text() + "\n")
            return rep.exit_status
        if args.command == "run":
            from .config import load

            cfg = load(args.config_file).with_overrides(seed=args.seed, replicas=args.replicas)
            return _run_config(cfg, args.out)
        if args.command in EXPERIMENT_ALIASES:
            return _cmd_experiment(args, EXTRA[args.command])
        params, cfg = _resolve(args, PARAMS[args.command])
        return HANDLERS[args.command](params, cfg, args.out)
    except (HeatDimError, OSError) as exc:
        sys.stderr.write(f"heatdim: {type(exc).__name__}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands:

``aldi darcy``   run the PDE inversion benchmark grid and write CSV metrics,
                 a manifest, and report figures
``aldi sample``  run one sampler on a configured target and dump the
                 trajectory
``aldi check``   run the property suite and write a pass/fail report

Exit codes: 0 success, 1 failed checks/runs, 2 configuration parse errors,
3 family/target incompatibility.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import darcy
from .benchmark import (
    DEFAULT_FAMILIES,
    DEFAULT_SIZES,
    GRADIENT_MODE,
    BenchmarkPreset,
    run_grid,
)
from .checks import run_property_suite
from .ensemble import ParticleEnsemble
from .samplers import ConfigurationError, DivergenceError, SamplerConfig, run
from .targets import gaussian_target

PRESETS = {
    "paper": {},
    "smoke": {
        "ensemble_sizes": (25,),
        "families": ("aldi_gradient_free",),
        "repetitions": 1,
        "total_time": 1.0,
        "tau": 0.5,
        "window": 0.5,
    },
}


def _int_list(text: str):
    return tuple(int(v) for v in text.split(",") if v)


def _str_list(text: str):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aldi")
    sub = parser.add_subparsers(dest="command", required=True)

    p_darcy = sub.add_parser("darcy", help="run the Darcy inversion benchmark grid")
    p_darcy.add_argument("--preset", choices=sorted(PRESETS), default="paper")
    p_darcy.add_argument("--out", required=True, help="output directory")
    p_darcy.add_argument("--seed", type=int, default=None, help="base seed for the grid")
    p_darcy.add_argument("--families", type=_str_list, default=None)
    p_darcy.add_argument("--sizes", type=_int_list, default=None)
    p_darcy.add_argument("--reps", type=int, default=None)
    p_darcy.add_argument("--dt", type=float, default=None)
    p_darcy.add_argument("--t-end", type=float, default=None)
    p_darcy.add_argument("--tau", type=float, default=None)
    p_darcy.add_argument("--window", type=float, default=None)
    p_darcy.add_argument("--stride", type=int, default=None)
    p_darcy.add_argument("--jitter", type=float, default=None)
    p_darcy.add_argument("--workers", type=int, default=1)
    p_darcy.add_argument("--no-figures", action="store_true")

    p_sample = sub.add_parser("sample", help="run one sampler from a JSON config")
    p_sample.add_argument("--config", required=True, help="JSON target/sampler config")
    p_sample.add_argument("--out", required=True, help="output directory")

    p_check = sub.add_parser("check", help="run the property suite")
    p_check.add_argument("--out", default=None, help="report file (default: stdout only)")
    return parser


def cmd_darcy(args) -> int:
    overrides = dict(PRESETS[args.preset])
    mapping = {
        "seed": "base_seed",
        "families": "families",
        "sizes": "ensemble_sizes",
        "reps": "repetitions",
        "dt": "step_size",
        "t_end": "total_time",
        "tau": "tau",
        "window": "window",
        "stride": "snapshot_stride",
        "jitter": "jitter",
    }
    for arg_name, preset_name in mapping.items():
        value = getattr(args, arg_name)
        if value is not None:
            overrides[preset_name] = value
    try:
        preset = BenchmarkPreset(**overrides)
    except ValueError as exc:
        print(f"error: invalid benchmark configuration: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_grid(
            preset, args.out, workers=args.workers, figures=not args.no_figures
        )
    except DivergenceError as exc:
        print(f"error: run aborted: {exc}", file=sys.stderr)
        return 1
    agg = result["aggregate"]
    for (fam, mode, n), metrics in sorted(agg.items()):
        tag = ("gf-" if mode == "gradient_free" else "g-") + fam
        print(
            f"{tag:>8s}  N={n:<4d} bias={metrics['bias']:.4f} "
            f"spread={metrics['spread']:.4f} (over {metrics['repetitions']} reps)"
        )
    print(f"wrote {args.out}/runs.csv, aggregate.csv, manifest.json")
    return 0


def _load_sample_config(path):
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"JSON parse error at line {exc.lineno}: {exc.msg}")
    for section in ("target", "sampler", "ensemble"):
        if section not in raw:
            raise ValueError(f"missing config section {section!r}")
    return raw


def cmd_sample(args) -> int:
    try:
        raw = _load_sample_config(args.config)
        tgt = raw["target"]
        kind = tgt.get("type")
        ens_cfg = raw["ensemble"]
        size = int(ens_cfg["size"])
        init_rng = np.random.default_rng(int(ens_cfg.get("seed", 0)))
        if kind == "gaussian":
            mean = np.asarray(tgt["mean"], dtype=float)
            precision = np.asarray(tgt["precision"], dtype=float)
            target_or_problem = gaussian_target(mean, precision)
            initial = ParticleEnsemble(
                mean[:, None] + init_rng.standard_normal((mean.size, size))
            )
        elif kind == "darcy":
            model = darcy.DarcyModel(
                grid_size=int(tgt.get("grid_size", 50)),
                obs_count=int(tgt.get("obs_count", 10)),
                noise_var=float(tgt.get("noise_var", 1e-4)),
                prior_mu=float(tgt.get("prior_mu", 100.0)),
            )
            data_rng = np.random.default_rng(int(tgt.get("data_seed", 0)))
            _, y_obs = darcy.make_truth_and_data(
                model, data_rng, noise=bool(tgt.get("noise", True))
            )
            target_or_problem = darcy.make_inverse_problem(model, y_obs)
            initial = darcy.sample_prior(
                model, target_or_problem.prior_precision, size, init_rng
            )
        else:
            raise ValueError(f"unknown target type {kind!r} in field 'target.type'")
        samp = raw["sampler"]
        precond = samp.get("const_preconditioner")
        config = SamplerConfig(
            family=str(samp["family"]),
            step_size=float(samp["step_size"]),
            num_steps=int(samp["num_steps"]),
            seed=int(samp.get("seed", 0)),
            const_preconditioner=None if precond is None else np.asarray(precond, float),
            jitter=float(samp.get("jitter", 0.0)),
        )
        stride = int(raw.get("snapshot_stride", 1))
    except ConfigurationError as exc:
        print(f"error: invalid sampler configuration: {exc}", file=sys.stderr)
        return 2
    except (KeyError, TypeError, ValueError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return 2

    try:
        record = run(initial, config, target_or_problem, snapshot_stride=stride)
    except ConfigurationError as exc:
        print(f"error: family/target mismatch: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"error: run aborted at step {exc.step}: {exc}", file=sys.stderr)
        return 1

    os.makedirs(args.out, exist_ok=True)
    echo = dict(raw)
    with open(os.path.join(args.out, "config_echo.json"), "w") as fh:
        json.dump(echo, fh, indent=2)
    dt = config.step_size
    with open(os.path.join(args.out, "trajectory.csv"), "w") as fh:
        fh.write(f"# config: {json.dumps(echo, sort_keys=True)}\n")
        fh.write("step,particle,component,value\n")
        for t, ens in record.snapshots:
            step_idx = int(round(t / dt)) if dt > 0 else 0
            for i in range(ens.dim_n):
                for c in range(ens.dim_d):
                    fh.write(f"{step_idx},{i},{c},{ens.states[c, i]:.17g}\n")
    with open(os.path.join(args.out, "min_eig.csv"), "w") as fh:
        fh.write("time,min_eigenvalue\n")
        for t, val in record.min_eig_series:
            fh.write(f"{t:.17g},{val:.17g}\n")
    print(f"wrote {args.out}/trajectory.csv ({len(record.snapshots)} snapshots)")
    return 0


def cmd_check(args) -> int:
    results = run_property_suite()
    lines = [r.line() for r in results]
    for line in lines:
        print(line)
    if args.out:
        payload = [asdict(r) for r in results]
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2)
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(results)} properties passed")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "darcy":
        return cmd_darcy(args)
    if args.command == "sample":
        return cmd_sample(args)
    return cmd_check(args)


if __name__ == "__main__":
    sys.exit(main())

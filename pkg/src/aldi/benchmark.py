"""The Darcy inversion benchmark grid: families x ensemble sizes x repetitions.

Each run gets a seed that is a pure function of the base seed and the grid
indices, so reordering or re-running any subset reproduces identical
trajectories.  Per-run metric rows go to a delimited CSV; aggregation over
repetitions is the arithmetic mean, laid out one row per ensemble size and one
column per (family, gradient mode).
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import darcy
from .diagnostics import WindowSpec, bias, spread
from .samplers import SamplerConfig, run

DEFAULT_FAMILIES = ("aldi", "eks", "aldi_gradient_free", "eks_gradient_free")
DEFAULT_SIZES = (25, 52, 100, 200)

#: (base family, gradient mode) for every runnable family name
GRADIENT_MODE = {
    "aldi": ("aldi", "gradient"),
    "eks": ("eks", "gradient"),
    "aldi_gradient_free": ("aldi", "gradient_free"),
    "eks_gradient_free": ("eks", "gradient_free"),
    "enkbf": ("enkbf", "gradient"),
    "enkbf_gradient_free": ("enkbf", "gradient_free"),
    "eki": ("eki", "gradient_free"),
}

CSV_HEADER = ("family", "gradient_mode", "N", "repetition", "bias", "spread", "seed")


@dataclass(frozen=True)
class BenchmarkPreset:
    """Grid definition plus integration and metric-window settings."""

    ensemble_sizes: Sequence[int] = DEFAULT_SIZES
    families: Sequence[str] = DEFAULT_FAMILIES
    repetitions: int = 10
    step_size: float = 0.01
    total_time: float = 20.0
    tau: float = 12.0
    window: float = 8.0
    base_seed: int = 20_260_823
    jitter: float = 0.0
    snapshot_stride: int = 100

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        steps = self.total_time / self.step_size
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("total_time must be an exact multiple of step_size")
        for fam in self.families:
            if fam not in GRADIENT_MODE:
                raise ValueError(f"unknown family {fam!r}")
        if self.tau + self.window > self.total_time + 1e-12:
            raise ValueError("metric window extends past the end of the run")

    @property
    def num_steps(self) -> int:
        return int(round(self.total_time / self.step_size))


def data_seed(preset: BenchmarkPreset, repetition: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([preset.base_seed, 101, repetition])


def init_seed(preset: BenchmarkPreset, size: int, repetition: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([preset.base_seed, 202, size, repetition])


def run_seed(preset: BenchmarkPreset, family: str, size: int, repetition: int) -> int:
    idx = sorted(GRADIENT_MODE).index(family)
    ss = np.random.SeedSequence([preset.base_seed, 303, idx, size, repetition])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_single(
    preset: BenchmarkPreset,
    family: str,
    size: int,
    repetition: int,
    keep_ensembles: bool = False,
) -> Dict:
    """One benchmark run; returns the metric row (and endpoints on request)."""
    model = darcy.DarcyModel()
    truth, y_obs = darcy.make_truth_and_data(
        model, np.random.default_rng(data_seed(preset, repetition))
    )
    problem = darcy.make_inverse_problem(model, y_obs)
    precision = problem.prior_precision
    initial = darcy.sample_prior(
        model, precision, size, np.random.default_rng(init_seed(preset, size, repetition))
    )
    seed = run_seed(preset, family, size, repetition)
    config = SamplerConfig(
        family=family,
        step_size=preset.step_size,
        num_steps=preset.num_steps,
        seed=seed,
        jitter=preset.jitter,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        record = run(
            initial,
            config,
            problem,
            snapshot_stride=preset.snapshot_stride,
            dense_window=(preset.tau, preset.tau + preset.window),
        )
    window = WindowSpec(tau=preset.tau, horizon=preset.window, mesh_h=model.mesh_h)
    base, mode = GRADIENT_MODE[family]
    row = {
        "family": base,
        "gradient_mode": mode,
        "N": size,
        "repetition": repetition,
        "bias": bias(record, truth.log_perm, window),
        "spread": spread(record, window),
        "seed": seed,
    }
    if keep_ensembles:
        row["initial_states"] = initial.states
        row["final_states"] = record.final_ensemble.states
        row["truth"] = truth.log_perm
    return row


def _run_single_args(args) -> Dict:
    return run_single(*args)


def aggregate(rows: List[Dict]) -> Dict[Tuple[str, str, int], Dict[str, float]]:
    """Mean bias/spread over repetitions, keyed by (family, gradient_mode, N)."""
    grouped: Dict[Tuple[str, str, int], List[Dict]] = {}
    for row in rows:
        grouped.setdefault((row["family"], row["gradient_mode"], row["N"]), []).append(row)
    return {
        key: {
            "bias": float(np.mean([r["bias"] for r in group])),
            "spread": float(np.mean([r["spread"] for r in group])),
            "repetitions": len(group),
        }
        for key, group in grouped.items()
    }


def _write_rows(path: str, rows: List[Dict]) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row["family"],
                    row["gradient_mode"],
                    row["N"],
                    row["repetition"],
                    f"{row['bias']:.17g}",
                    f"{row['spread']:.17g}",
                    row["seed"],
                ]
            )
    os.replace(tmp, path)


def _write_aggregate(path: str, preset: BenchmarkPreset, agg: Dict) -> None:
    columns = [GRADIENT_MODE[f] for f in preset.families]
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["metric", "N"] + [f"{mode}-{fam}" for fam, mode in columns]
        )
        for metric in ("bias", "spread"):
            for n in preset.ensemble_sizes:
                writer.writerow(
                    [metric, n]
                    + [f"{agg[(fam, mode, n)][metric]:.17g}" for fam, mode in columns]
                )
    os.replace(tmp, path)


def run_grid(
    preset: BenchmarkPreset,
    out_dir: str,
    workers: int = 1,
    figures: bool = True,
) -> Dict:
    """Run the whole grid, write CSV/manifest/figures, return rows + aggregates.

    On a failed run, completed rows are preserved next to a failure marker
    before the error propagates.
    """
    os.makedirs(out_dir, exist_ok=True)
    model = darcy.DarcyModel()
    truth0, y0 = darcy.make_truth_and_data(model, np.random.default_rng(data_seed(preset, 0)))
    darcy.export_csv(os.path.join(out_dir, "truth.csv"), truth0.log_perm)
    darcy.export_csv(os.path.join(out_dir, "data.csv"), y0)
    darcy.export_csv(os.path.join(out_dir, "forcing.csv"), model.forcing)

    keep = {(min(preset.ensemble_sizes), 0), (max(preset.ensemble_sizes), 0)}
    tasks = [
        (preset, family, size, rep, figures and (size, rep) in keep)
        for family in preset.families
        for size in preset.ensemble_sizes
        for rep in range(preset.repetitions)
    ]
    rows: List[Dict] = []
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for row in pool.map(_run_single_args, tasks):
                    rows.append(row)
        else:
            for task in tasks:
                rows.append(_run_single_args(task))
    except Exception as exc:
        _write_rows(os.path.join(out_dir, "runs_partial.csv"), rows)
        with open(os.path.join(out_dir, "FAILED"), "w") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
        raise

    plain_rows = [{k: v for k, v in row.items() if not isinstance(v, np.ndarray)} for row in rows]
    _write_rows(os.path.join(out_dir, "runs.csv"), plain_rows)
    agg = aggregate(plain_rows)
    _write_aggregate(os.path.join(out_dir, "aggregate.csv"), preset, agg)

    manifest = {
        "preset": {
            **asdict(preset),
            "ensemble_sizes": list(preset.ensemble_sizes),
            "families": list(preset.families),
        },
        "num_steps": preset.num_steps,
        "seeds": {
            f"{fam}/N={size}/rep={rep}": run_seed(preset, fam, size, rep)
            for fam in preset.families
            for size in preset.ensemble_sizes
            for rep in range(preset.repetitions)
        },
        "grid_size": model.grid_size,
        "obs_count": model.obs_count,
    }
    tmp = os.path.join(out_dir, "manifest.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, os.path.join(out_dir, "manifest.json"))

    if figures:
        from . import plots

        plots.render_benchmark_figures(preset, rows, agg, out_dir)
    return {"rows": plain_rows, "aggregate": agg}

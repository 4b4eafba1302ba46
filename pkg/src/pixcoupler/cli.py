"""Command line: ``pixcoupler optimize|analyze|sweep|bench``.

On failure a single line ``<category>: <message>`` goes to stderr and the
exit status is nonzero (2 for errors, 3 for a deliberate ``--halt-after``).
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import bpso, touchstone
from .bpso import TransferKind
from .config import GHZ, RunConfig, load_config
from .coupled_line import (SParameterSet, coupling_coefficient, max_coupling_length,
                           mode_propagation, two_port_sparams)
from .errors import ConfigError, DomainError, FormatError, InfiniteLengthError, PixCouplerError
from .fitness import CouplerFitness, knapsack, knapsack_optimum, onemax, random_knapsack
from .pixels import PixelMask, effective_coupling_area, side_layout

log = logging.getLogger("pixcoupler")

SWEEP_HEADER = ["variable", "value", "peak_s21_db", "peak_frequency_hz", "s21_db_at_target",
                "effective_area_m2", "coupling_coefficient", "max_coupling_length_m"]
BENCH_HEADER = ["problem", "kind", "runs", "successes", "success_rate",
                "median_iterations_to_target", "threshold_rule"]
EXIT_ERROR = 2
EXIT_HALTED = 3


class Halted(PixCouplerError):
    category = "halted"


# --- small file helpers ----------------------------------------------------

def write_summary(path, values: dict):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for key, value in values.items():
            if isinstance(value, float):
                value = repr(value)
            fh.write(f"{key} {value}\n")


def read_summary(path) -> dict:
    out = {}
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition(" ")
            if not sep:
                raise FormatError(f"bad summary line {line!r}", line=lineno, path=str(path))
            out[key] = value
    return out


def write_response_csv(path, sp: SParameterSet):
    with open(path, "w", encoding="ascii", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frequency_hz", "s11_db", "s21_db", "flagged"])
        for f, a, b, flag in zip(sp.frequencies, sp.s11_db, sp.s21_db, sp.flags):
            w.writerow([repr(float(f)), repr(float(a)), repr(float(b)), int(flag)])


def read_csv(path) -> list:
    with open(path, encoding="ascii", newline="") as fh:
        return list(csv.DictReader(fh))


def _parse_values(text: str) -> list:
    """``"a,b,c"`` or ``"start:stop:step"`` -> list of floats."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
            raise DomainError(f"range {text!r} must be start:stop:step with step > 0")
        count = int(math.floor((parts[1] - parts[0]) / parts[2] + 1e-9)) + 1
        return [parts[0] + k * parts[2] for k in range(count)]
    return [float(p) for p in text.split(",") if p.strip()]


def _executor(cfg: RunConfig):
    workers = cfg.getint("run", "workers")
    return ThreadPoolExecutor(workers) if workers > 1 else None


# --- optimize --------------------------------------------------------------

def cmd_optimize(cfg: RunConfig, resume: str | None = None, halt_after: int | None = None) -> dict:
    out = cfg.get("run", "out")
    os.makedirs(out, exist_ok=True)
    cfg.write_snapshot(os.path.join(out, "config_snapshot.ini"))
    spec = cfg.fitness_spec()
    fitness = CouplerFitness(spec)
    fingerprint = cfg.fitness_fingerprint()
    state = None
    if resume:
        state, config, extra = bpso.load_checkpoint(resume)
        if extra.get("fitness_fingerprint") != fingerprint:
            raise ConfigError(f"checkpoint {resume} was written for a different geometry/fitness")
        log.info("resuming from %s at iteration %d", resume, state.iteration)
    else:
        config = cfg.bpso_config(spec.dimension)
    if config.dimension != spec.dimension:
        raise ConfigError(f"optimizer dimension {config.dimension} != fitness {spec.dimension}")
    interval = cfg.getint("run", "checkpoint_interval")
    ckpt = os.path.join(out, "checkpoint.json")
    extra = {"fitness_fingerprint": fingerprint}

    def on_step(st):
        log.info("iteration %d gbest %.4f dB", st.iteration, st.gbest_fitness)
        if (interval > 0 and st.iteration % interval == 0) or st.iteration == halt_after:
            bpso.save_checkpoint(ckpt, st, config, extra)
        if halt_after is not None and st.iteration >= halt_after:
            raise Halted(f"halted after iteration {st.iteration}; checkpoint {ckpt}")

    t0 = time.perf_counter()
    executor = _executor(cfg)
    try:
        result = bpso.run(fitness, config, state=state, callback=on_step, executor=executor)
    finally:
        if executor is not None:
            executor.shutdown()
    wall = time.perf_counter() - t0
    bpso.save_checkpoint(ckpt, result.state, config, extra)

    best = fitness.evaluate(result.best_position)
    best.mask_up.write_pbm(os.path.join(out, "best_mask_up.pbm"))
    best.mask_down.write_pbm(os.path.join(out, "best_mask_down.pbm"))
    touchstone.write(os.path.join(out, "best.s2p"), best.sparams)
    bpso.write_convergence_csv(os.path.join(out, "convergence.csv"), result.history,
                               config.transfer_kind, config.rng_seed)
    peak_f, peak_db = best.sparams.peak_s21()
    summary = {
        "best_fitness_db": float(result.best_fitness),
        "stop_reason": result.stop_reason.value,
        "seed": config.rng_seed,
        "transfer_kind": config.transfer_kind.value,
        "iterations": len(result.history),
        "evaluations": len(result.history) * config.swarm_size,
        "target_frequency_hz": float(spec.target_frequency),
        "evaluated_frequency_hz": float(best.evaluated_frequency),
        "flagged": int(best.flagged),
        "peak_frequency_hz": peak_f,
        "peak_s21_db": peak_db,
        "wall_time_s": round(wall, 3),
    }
    write_summary(os.path.join(out, "summary.txt"), summary)
    return summary


# --- analyze ---------------------------------------------------------------

def _load_masks(cfg: RunConfig, mask_up: str | None, mask_down: str | None, default="zeros"):
    g = cfg.geometry()
    make = PixelMask.ones if default == "ones" else PixelMask.zeros
    up = PixelMask.read_pbm(mask_up) if mask_up else make(g.pixel_rows, g.pixel_cols)
    down = PixelMask.read_pbm(mask_down) if mask_down else (up if mask_up else
                                                             make(g.pixel_rows, g.pixel_cols))
    side_layout(up, g)
    side_layout(down, g)
    return up, down


def cmd_analyze(cfg: RunConfig, mask_up=None, mask_down=None, prefix="analysis") -> dict:
    out = cfg.get("run", "out")
    os.makedirs(out, exist_ok=True)
    up, down = _load_masks(cfg, mask_up, mask_down)
    spec = cfg.fitness_spec()
    ev = CouplerFitness(spec).evaluate_masks(up, down)
    touchstone.write(os.path.join(out, f"{prefix}.s2p"), ev.sparams)
    write_response_csv(os.path.join(out, f"{prefix}.csv"), ev.sparams)
    peak_f, peak_db = ev.sparams.peak_s21()
    summary = {"fitness_db": float(ev.fitness_db),
               "target_frequency_hz": float(spec.target_frequency),
               "evaluated_frequency_hz": float(ev.evaluated_frequency),
               "flagged": int(ev.flagged),
               "peak_frequency_hz": peak_f, "peak_s21_db": peak_db,
               "flagged_points": int(ev.sparams.flags.sum())}
    write_summary(os.path.join(out, f"{prefix}_summary.txt"), summary)
    return summary


# --- sweep -----------------------------------------------------------------

DEFAULT_SWEEPS = {"rotation": "0,45,90", "gap": "3:9:1", "length": "1:400:1"}


def sweep_rows(cfg: RunConfig, variable: str, values, mask_up=None, mask_down=None) -> list:
    variable = variable.lower()
    if variable not in DEFAULT_SWEEPS:
        raise DomainError(f"unknown sweep variable {variable!r} (rotation, gap, length)")
    if len(values) < 2 or len(set(values)) != len(values):
        raise DomainError("sweep range must hold at least two distinct values")
    up, down = _load_masks(cfg, mask_up, mask_down, default="ones")
    base = cfg.fitness_spec()
    rows = []
    if variable == "length":
        # per-unit-length constants fixed by the configured section and masks
        fit = CouplerFitness(base)
        modes = fit.evaluate_masks(up, down).modes
        area = effective_coupling_area(up, down, fit.geometry, base.rotation_deg, base.offset)
        grid = np.asarray(base.frequency_grid)
        for mm in values:
            length = mm / 1e3
            if not length > 0:
                raise DomainError("lengths must be positive")
            sp = two_port_sparams(modes, length, grid, base.reference_impedance,
                                  base.port_topology)
            rows.append(_sweep_row("length", length, sp, base, modes, area, length))
        return rows
    for value in values:
        if variable == "rotation":
            spec = base.replace(rotation_deg=float(value) % 360.0)
            shown = float(value)
        else:
            if not value > 0:
                raise DomainError("gaps must be positive")
            spec = base.replace(gap_override=value / 1e3)
            shown = value / 1e3
        fit = CouplerFitness(spec)
        ev = fit.evaluate_masks(up, down)
        area = effective_coupling_area(up, down, fit.geometry, spec.rotation_deg, spec.offset)
        rows.append(_sweep_row(variable, shown, ev.sparams, spec, ev.modes, area,
                               fit.geometry.coupler_length))
    return rows


def _sweep_row(variable, value, sp, spec, modes, area, length):
    prop = mode_propagation(modes, spec.target_frequency, length)
    cc = float(coupling_coefficient(prop.beta_even, prop.beta_odd, length))
    try:
        lmax = float(max_coupling_length(prop.beta_even, prop.beta_odd))
    except InfiniteLengthError:
        lmax = math.inf
    peak_f, peak_db = sp.peak_s21()
    return {"variable": variable, "value": float(value), "peak_s21_db": peak_db,
            "peak_frequency_hz": peak_f, "s21_db_at_target": sp.s21_db_at(spec.target_frequency),
            "effective_area_m2": float(area), "coupling_coefficient": cc,
            "max_coupling_length_m": lmax}


def cmd_sweep(cfg: RunConfig, variable=None, values=None, mask_up=None, mask_down=None) -> list:
    out = cfg.get("run", "out")
    os.makedirs(out, exist_ok=True)
    variable = (variable or cfg.get("sweep", "variable")).lower()
    text = values or cfg.get("sweep", "values") or DEFAULT_SWEEPS.get(variable, "")
    rows = sweep_rows(cfg, variable, _parse_values(text),
                      mask_up or cfg.get("sweep", "mask_up") or None,
                      mask_down or cfg.get("sweep", "mask_down") or None)
    with open(os.path.join(out, f"sweep_{variable}.csv"), "w", encoding="ascii", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_HEADER, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    cfg.write_snapshot(os.path.join(out, "config_snapshot.ini"))
    return rows


# --- bench -----------------------------------------------------------------

def iterations_to_target(history, threshold: float):
    """1-based iteration where the best first reaches ``threshold`` (None if never)."""
    for i, value in enumerate(history, start=1):
        if value >= threshold:
            return i
    return None


def _bench_problem(cfg: RunConfig, problem: str, seed: int):
    """(fitness, dimension, threshold, rule) for one problem instance."""
    if problem == "onemax":
        n = cfg.getint("bench", "onemax_dimension")
        return onemax, n, float(n), "optimum"
    if problem == "knapsack":
        n = cfg.getint("bench", "knapsack_items")
        frac = cfg.getfloat("bench", "knapsack_fraction")
        weights, values, cap = random_knapsack(np.random.default_rng(1000 + seed), n)
        best = knapsack_optimum(weights, values, cap)
        fit = lambda bits: knapsack(bits, weights, values, cap)  # noqa: E731
        return fit, n, frac * best, f"{frac!r}*optimum"
    if problem == "coupler":
        spec = cfg.fitness_spec()
        return CouplerFitness(spec), spec.dimension, cfg.getfloat("bpso", "target_db"), "target_db"
    raise DomainError(f"unknown bench problem {problem!r} (onemax, knapsack, coupler)")


def cmd_bench(cfg: RunConfig, kinds=None) -> list:
    out = cfg.get("run", "out")
    curves = os.path.join(out, "curves")
    os.makedirs(curves, exist_ok=True)
    problems = [p.strip() for p in cfg.get("bench", "problems").split(",") if p.strip()]
    first = cfg.getint("bench", "first_seed")
    seeds = range(first, first + cfg.getint("bench", "seeds"))
    kinds = kinds or list(TransferKind)
    base = cfg.bpso_config(1)
    table = []
    for problem in problems:
        for kind in kinds:
            reached = []
            for seed in seeds:
                fit, n, threshold, rule = _bench_problem(cfg, problem, seed)
                config = bpso.BpsoConfig(
                    dimension=n, swarm_size=cfg.getint("bench", "swarm_size"),
                    max_iterations=cfg.getint("bench", "max_iterations"), c1=base.c1, c2=base.c2,
                    w_start=base.w_start, w_end=base.w_end, v_max=base.v_max,
                    transfer_kind=kind, rng_seed=seed)
                result = bpso.run(fit, config)
                path = os.path.join(curves, f"{problem}_{kind.value}_seed{seed}.csv")
                bpso.write_convergence_csv(path, result.history, kind, seed)
                reached.append(iterations_to_target(result.history, threshold))
            hits = [r for r in reached if r is not None]
            table.append({"problem": problem, "kind": kind.value, "runs": len(reached),
                          "successes": len(hits), "success_rate": len(hits) / len(reached),
                          "median_iterations_to_target": float(np.median(hits)) if hits else "",
                          "threshold_rule": rule})
            log.info("%s/%s: %d/%d", problem, kind.value, len(hits), len(reached))
    with open(os.path.join(out, "bench_summary.csv"), "w", encoding="ascii", newline="") as fh:
        w = csv.DictWriter(fh, BENCH_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(table)
    cfg.write_snapshot(os.path.join(out, "config_snapshot.ini"))
    return table


# --- argument parsing ------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file; flags override it")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
    common.add_argument("--transfer", choices=["s", "v"], help="transfer function family")
    common.add_argument("--target-ghz", type=float, help="target frequency in GHz")
    common.add_argument("--resume", metavar="CHECKPOINT", help="resume from a checkpoint file")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="pixcoupler", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", parents=[common], help="run the swarm on the coupler")
    p.add_argument("--halt-after", type=int, metavar="K",
                   help="checkpoint and stop after iteration K (interrupt testing)")

    p = sub.add_parser("analyze", parents=[common], help="evaluate fixed masks")
    p.add_argument("--mask-up", help="PBM mask of the up side (default all zeros)")
    p.add_argument("--mask-down", help="PBM mask of the down side (default: same as up)")

    p = sub.add_parser("sweep", parents=[common], help="rotation / gap / length sweeps")
    p.add_argument("variable", nargs="?", choices=sorted(DEFAULT_SWEEPS))
    p.add_argument("--values", help="a,b,c or start:stop:step (deg for rotation, mm otherwise)")
    p.add_argument("--mask-up", help="PBM mask of the up side (default all ones)")
    p.add_argument("--mask-down", help="PBM mask of the down side (default: same as up)")

    p = sub.add_parser("bench", parents=[common], help="S vs V comparison on benchmarks")
    p.add_argument("--problems", help="comma list of onemax, knapsack, coupler")
    p.add_argument("--seeds", type=int, help="number of seeds per (problem, kind)")
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = list(args.set)
    if args.out:
        overrides.append(f"run.out={args.out}")
    if args.seed is not None:
        overrides.append(f"bpso.seed={args.seed}")
    if args.transfer:
        overrides.append(f"bpso.transfer={args.transfer}")
    if args.target_ghz is not None:
        overrides.append(f"fitness.target_ghz={args.target_ghz!r}")
    if getattr(args, "problems", None):
        overrides.append(f"bench.problems={args.problems}")
    if getattr(args, "seeds", None) is not None:
        overrides.append(f"bench.seeds={args.seeds}")
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
        if args.command == "optimize":
            s = cmd_optimize(cfg, args.resume, args.halt_after)
            print(f"best {s['best_fitness_db']:.4f} dB, {s['stop_reason']} "
                  f"after {s['iterations']} iterations -> {cfg.get('run', 'out')}")
        elif args.command == "analyze":
            s = cmd_analyze(cfg, args.mask_up, args.mask_down)
            print(f"|s21| {s['fitness_db']:.4f} dB at "
                  f"{s['evaluated_frequency_hz'] / GHZ:g} GHz, peak {s['peak_s21_db']:.4f} dB "
                  f"at {s['peak_frequency_hz'] / GHZ:g} GHz")
        elif args.command == "sweep":
            rows = cmd_sweep(cfg, args.variable, args.values, args.mask_up, args.mask_down)
            print(f"{len(rows)} sweep points -> {cfg.get('run', 'out')}")
        elif args.command == "bench":
            kinds = [TransferKind.parse(args.transfer)] if args.transfer else None
            for row in cmd_bench(cfg, kinds):
                print(f"{row['problem']:8s} {row['kind']} {row['successes']}/{row['runs']}")
    except Halted as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return EXIT_HALTED
    except PixCouplerError as exc:
        print(f"{exc.category}: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"io: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())

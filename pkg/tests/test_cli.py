import csv
import os

import numpy as np
import pytest

from pixcoupler import bpso, touchstone
from pixcoupler.cli import (BENCH_HEADER, SWEEP_HEADER, cmd_analyze, cmd_bench, cmd_optimize,
                            cmd_sweep, iterations_to_target, main, read_csv, read_summary)
from pixcoupler.config import load_config
from pixcoupler.fitness import check_network
from pixcoupler.pixels import PixelMask

SHORT = ["bpso.max_iterations=12", "bpso.swarm_size=8"]


def cfg_for(tmp_path, *extra, name="run"):
    return load_config(overrides=[f"run.out={tmp_path / name}", *SHORT, *extra])


def files_except_time(out):
    blobs = {}
    for name in sorted(os.listdir(out)):
        with open(os.path.join(out, name), "rb") as fh:
            data = fh.read()
        if name == "summary.txt":
            data = b"".join(l for l in data.splitlines(True) if not l.startswith(b"wall_time_s"))
        blobs[name] = data
    return blobs


# --- exit codes ------------------------------------------------------------

def test_error_exit_is_one_category_line(tmp_path, capsys):
    bad = tmp_path / "bad.pbm"
    bad.write_text("P1\n3 2\n0 1 0\n1 1 7\n")
    code = main(["analyze", "--out", str(tmp_path / "a"), "--mask-up", str(bad)])
    err = capsys.readouterr().err.strip().splitlines()
    assert code == 2 and len(err) == 1
    assert err[0].startswith("format: ") and "bad.pbm:4" in err[0]


@pytest.mark.parametrize("argv,category", [
    (["optimize", "--set", "bpso.nosuch=1"], "config"),
    (["analyze", "--mask-up", "/nonexistent/m.pbm"], "io"),
    (["sweep", "gap", "--values", "5,5"], "domain"),
    (["optimize", "--target-ghz", "9.5"], "config"),
])
def test_error_categories(tmp_path, capsys, argv, category):
    assert main(argv + ["--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err.strip()
    assert "\n" not in err and err.split(":")[0] == category


def test_optimize_success_exit(tmp_path, capsys):
    argv = ["optimize", "--out", str(tmp_path / "o"), "--seed", "4", "--transfer", "s"]
    assert main(argv + sum((["--set", s] for s in SHORT), [])) == 0
    s = read_summary(tmp_path / "o" / "summary.txt")
    assert (s["seed"], s["transfer_kind"], s["iterations"]) == ("4", "s", "12")


# --- optimize ---------------------------------------------------------------

def test_optimize_artifacts_are_consistent(tmp_path):
    cfg = cfg_for(tmp_path, "bpso.seed=2")
    s = cmd_optimize(cfg)
    out = tmp_path / "run"
    hist = [r["gbest_fitness"] for r in bpso.read_convergence_csv(out / "convergence.csv")]
    assert len(hist) == s["iterations"] == 12
    assert all(b >= a for a, b in zip(hist, hist[1:]))
    assert hist[-1] == s["best_fitness_db"]
    sp = touchstone.read(out / "best.s2p")
    check_network(sp)
    assert sp.s21_db_at(3.5e9) == pytest.approx(s["best_fitness_db"], abs=1e-9)
    assert PixelMask.read_pbm(out / "best_mask_up.pbm").bits.shape == (14, 30)


def test_analyze_reproduces_optimize_summary(tmp_path):
    cfg = cfg_for(tmp_path, "bpso.seed=5")
    s = cmd_optimize(cfg)
    out = tmp_path / "run"
    again = load_config(out / "config_snapshot.ini", [f"run.out={tmp_path / 'an'}"])
    a = cmd_analyze(again, str(out / "best_mask_up.pbm"), str(out / "best_mask_down.pbm"))
    assert a["fitness_db"] == s["best_fitness_db"]
    assert a["peak_frequency_hz"] == s["peak_frequency_hz"]


def test_snapshot_rerun_is_bit_identical(tmp_path):
    cfg = cfg_for(tmp_path, "bpso.seed=9", "fitness.rotation_deg=10")
    cmd_optimize(cfg)
    again = load_config(tmp_path / "run" / "config_snapshot.ini", [f"run.out={tmp_path / 'b'}"])
    cmd_optimize(again)
    assert files_except_time(tmp_path / "run") == files_except_time(tmp_path / "b")


@pytest.mark.parametrize("k", [1, 5, 11])
def test_resume_after_halt_matches_uninterrupted(tmp_path, k):
    full = cfg_for(tmp_path, "bpso.seed=6", name="full")
    cmd_optimize(full)
    part = cfg_for(tmp_path, "bpso.seed=6", name="part")
    assert main(["optimize", "--out", str(tmp_path / "part"), "--seed", "6",
                 "--halt-after", str(k)] + sum((["--set", s] for s in SHORT), [])) == 3
    cmd_optimize(part, resume=str(tmp_path / "part" / "checkpoint.json"))
    assert files_except_time(tmp_path / "full") == files_except_time(tmp_path / "part")


def test_resume_rejects_other_geometry(tmp_path, capsys):
    cfg = cfg_for(tmp_path)
    cmd_optimize(cfg)
    code = main(["optimize", "--out", str(tmp_path / "x"), "--set", "geometry.inter_line_gap_mm=6",
                 "--resume", str(tmp_path / "run" / "checkpoint.json")])
    assert code == 2 and capsys.readouterr().err.startswith("config:")


# --- analyze ----------------------------------------------------------------

def test_analyze_zero_masks_passive(tmp_path):
    cfg = cfg_for(tmp_path)
    a = cmd_analyze(cfg)
    sp = touchstone.read(tmp_path / "run" / "analysis.s2p")
    ok = ~sp.flags
    power = np.abs(sp.s11) ** 2 + np.abs(sp.s21) ** 2
    assert np.all(np.abs(power[ok] - 1) <= 1e-9)
    assert np.array_equal(sp.s12, sp.s21)
    rows = read_csv(tmp_path / "run" / "analysis.csv")
    assert list(rows[0]) == ["frequency_hz", "s11_db", "s21_db", "flagged"]
    assert len(rows) == 601 and a["flagged_points"] == 0


# --- sweep ------------------------------------------------------------------

def sweep_csv(tmp_path, variable):
    with open(tmp_path / "run" / f"sweep_{variable}.csv", encoding="ascii") as fh:
        return list(csv.DictReader(fh))


def test_rotation_sweep_defaults(tmp_path):
    rows = cmd_sweep(cfg_for(tmp_path), "rotation")
    written = sweep_csv(tmp_path, "rotation")
    assert list(written[0]) == SWEEP_HEADER
    assert [float(r["value"]) for r in written] == [0.0, 45.0, 90.0]
    areas = [r["effective_area_m2"] for r in rows]
    assert areas[0] == max(areas)
    assert [float(r["effective_area_m2"]) for r in written] == areas


def test_gap_sweep_defaults(tmp_path):
    rows = cmd_sweep(cfg_for(tmp_path), "gap")
    assert [r["value"] for r in rows] == [k / 1e3 for k in range(3, 10)]
    s21 = [r["s21_db_at_target"] for r in rows if r["value"] >= 5e-3]
    assert all(b <= a for a, b in zip(s21, s21[1:]))


def test_length_sweep_peak_at_max_coupling_length(tmp_path):
    rows = cmd_sweep(cfg_for(tmp_path), "length", "1:400:1")
    cc = [r["coupling_coefficient"] for r in rows]
    best = rows[int(np.argmax(cc))]["value"]
    assert abs(best - rows[0]["max_coupling_length_m"]) <= 1e-3


def test_sweep_degenerate_range(tmp_path):
    from pixcoupler.errors import DomainError
    with pytest.raises(DomainError):
        cmd_sweep(cfg_for(tmp_path), "gap", "5:5:1")


# --- bench ------------------------------------------------------------------

def test_bench_table_matches_recount(tmp_path):
    cfg = cfg_for(tmp_path, "bench.seeds=3", "bench.max_iterations=30")
    table = cmd_bench(cfg)
    out = tmp_path / "run"
    with open(out / "bench_summary.csv", encoding="ascii") as fh:
        written = list(csv.DictReader(fh))
    assert list(written[0]) == BENCH_HEADER and len(written) == 4
    for row in table:
        hits = 0
        for seed in range(3):
            rows = bpso.read_convergence_csv(
                out / "curves" / f"{row['problem']}_{row['kind']}_seed{seed}.csv")
            assert {r["seed"] for r in rows} == {seed}
            hist = [r["gbest_fitness"] for r in rows]
            assert len(hist) == 30 and all(b >= a for a, b in zip(hist, hist[1:]))
            if row["problem"] == "onemax":
                threshold = 30.0
            else:
                from pixcoupler.fitness import knapsack_optimum, random_knapsack
                w, v, c = random_knapsack(np.random.default_rng(1000 + seed), 12)
                threshold = 0.9 * knapsack_optimum(w, v, c)
            hits += iterations_to_target(hist, threshold) is not None
        assert row["successes"] == hits


def test_iterations_to_target():
    assert iterations_to_target([1, 2, 3], 2) == 2
    assert iterations_to_target([1, 2, 3], 4) is None

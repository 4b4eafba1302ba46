import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import replay_bpso
from pixcoupler.bpso import (BpsoConfig, StopReason, TransferKind, evaluate_swarm,
                             initialize_swarm, inertia_at, load_checkpoint, read_convergence_csv,
                             run, save_checkpoint, step, transfer, update_position,
                             update_velocity, write_convergence_csv)
from pixcoupler.errors import DomainError, FitnessEvaluationError, FormatError
from pixcoupler.fitness import onemax

S, V = TransferKind.S_SHAPED, TransferKind.V_SHAPED


def cfg(**kw):
    base = dict(dimension=30, swarm_size=20, max_iterations=100, rng_seed=0)
    base.update(kw)
    return BpsoConfig(**base)


# --- config ----------------------------------------------------------------

def test_config_defaults():
    c = BpsoConfig(dimension=5)
    assert (c.swarm_size, c.max_iterations, c.c1, c.c2, c.w_start, c.w_end, c.v_max) == \
        (20, 100, 2.0, 2.0, 0.9, 0.4, 6.0)
    assert BpsoConfig.from_dict(c.to_dict()) == c


@pytest.mark.parametrize("bad", [{"swarm_size": 1}, {"dimension": 0}, {"max_iterations": 0},
                                 {"w_start": 0.3, "w_end": 0.4}, {"w_end": 0.0},
                                 {"v_max": 0.0}, {"rng_seed": -1}, {"rng_seed": 2 ** 64}])
def test_config_validation(bad):
    with pytest.raises(DomainError):
        cfg(**bad)


# --- initialisation --------------------------------------------------------

def test_initialisation_deterministic():
    a, b = initialize_swarm(cfg(rng_seed=9)), initialize_swarm(cfg(rng_seed=9))
    assert np.array_equal(a.positions, b.positions)
    assert a.rng.bit_generator.state == b.rng.bit_generator.state
    c = initialize_swarm(cfg(dimension=64, rng_seed=10))
    d = initialize_swarm(cfg(dimension=64, rng_seed=11))
    assert np.any(c.positions != d.positions)
    assert np.all(a.velocities == 0) and np.all(np.isneginf(a.pbest_fitness))
    assert a.gbest_fitness == -math.inf


def test_initial_fill_ratio():
    for seed in range(20):
        st_ = initialize_swarm(cfg(dimension=420, rng_seed=seed))
        assert 0.45 <= st_.positions.mean() <= 0.55


# --- transfer functions ----------------------------------------------------

def test_transfer_values():
    mpmath.mp.dps = 30
    assert transfer(0.0, S) == 0.5
    assert transfer(0.0, V) == 0.0
    assert transfer(6.0, S) == pytest.approx(float(1 / (1 + mpmath.exp(-6))), rel=1e-15)
    assert transfer(6.0, S) == pytest.approx(0.9975273768433653, rel=1e-15)
    assert transfer(1.0, V) == pytest.approx(float(mpmath.tanh(1)), rel=1e-15)
    assert transfer(1.0, V) == pytest.approx(0.7615941559557649, rel=1e-15)


@given(st.floats(-50, 50))
def test_transfer_shapes(v):
    assert 0.0 <= transfer(v, S) <= 1.0 and 0.0 <= transfer(v, V) <= 1.0
    assert transfer(-v, V) == transfer(v, V)
    assert transfer(v + 0.5, S) >= transfer(v, S)


def test_transfer_kind_parse():
    assert TransferKind.parse("s") is S and TransferKind.parse("V") is V
    assert TransferKind.parse("V_SHAPED") is V and TransferKind.parse(S) is S
    with pytest.raises(DomainError):
        TransferKind.parse("x")


# --- velocity and position -------------------------------------------------

def test_velocity_degenerate_cases():
    rng = np.random.default_rng(0)
    v = rng.uniform(-3, 3, 50)
    x = rng.integers(0, 2, 50)
    pb = rng.integers(0, 2, 50)
    gb = rng.integers(0, 2, 50)
    assert np.array_equal(update_velocity(v, x, pb, gb, 1.0, 0.0, 0.0, rng), v)
    assert np.allclose(update_velocity(v, x, x, x, 0.7, 2.0, 2.0, rng), 0.7 * v, rtol=0, atol=0)


def test_velocity_replay():
    x = np.array([0, 1, 1, 0, 1, 0], float)
    pb = np.array([1, 1, 0, 0, 0, 1], float)
    gb = np.array([1, 0, 0, 1, 1, 1], float)
    v = np.array([0.5, -1.0, 2.0, 5.9, -5.5, 0.0])
    new = update_velocity(v, x, pb, gb, 0.9, 2.0, 2.0, np.random.default_rng(42))
    rec = np.random.default_rng(42)
    r1 = [rec.random() for _ in range(6)]
    r2 = [rec.random() for _ in range(6)]
    for d in range(6):
        ref = 0.9 * v[d] + 2.0 * r1[d] * (pb[d] - x[d]) + 2.0 * r2[d] * (gb[d] - x[d])
        assert new[d] == max(-6.0, min(6.0, ref))


@given(st.integers(0, 2 ** 32))
def test_velocity_clamped(seed):
    rng = np.random.default_rng(seed)
    v = rng.uniform(-6, 6, (5, 40))
    x, pb = rng.integers(0, 2, (2, 5, 40))
    gb = rng.integers(0, 2, 40)
    new = update_velocity(v, x, pb, gb, 0.9, 2.0, 2.0, rng, v_max=6.0)
    assert np.all(np.abs(new) <= 6.0)


def test_position_rules():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 2, 1000).astype(np.uint8)
    assert np.array_equal(update_position(x, np.zeros(1000), V, rng), x)
    ones = update_position(np.zeros(100_000, np.uint8), np.full(100_000, 6.0), S, rng)
    assert abs(ones.mean() - 0.9975273768433653) <= 0.005
    half = update_position(np.zeros(100_000, np.uint8), np.zeros(100_000), S, rng)
    assert abs(half.mean() - 0.5) <= 0.01


# --- inertia ---------------------------------------------------------------

def test_inertia_schedule():
    c = cfg()
    assert inertia_at(1, c) == 0.9
    assert inertia_at(100, c) == pytest.approx(0.4, abs=1e-15)
    assert inertia_at(50, c) == pytest.approx(0.9 - 0.5 * 49 / 99, rel=1e-15)
    assert inertia_at(50, c) == pytest.approx(0.6525252525252525, rel=1e-15)
    assert inertia_at(1, cfg(max_iterations=1)) == 0.9
    for bad in (0, 101):
        with pytest.raises(DomainError):
            inertia_at(bad, c)


# --- step and run ----------------------------------------------------------

def test_constant_fitness():
    res = run(lambda b: 3.25, cfg(max_iterations=5))
    assert res.history == [3.25] * 5


@pytest.mark.parametrize("kind", ["s", "v"])
def test_onemax_trace_matches_replay(kind):
    c = cfg(dimension=16, swarm_size=10, max_iterations=40, rng_seed=123, transfer_kind=kind)
    res = run(onemax, c)
    hist, final = replay_bpso(onemax, 16, 10, 40, 123, kind)
    assert res.history == hist
    assert np.array_equal(res.state.positions, final)


def test_step_is_functional_and_errors_keep_state():
    c = cfg(dimension=8, swarm_size=4)
    s0 = initialize_swarm(c)
    before = s0.positions.copy(), s0.rng.bit_generator.state
    s1 = step(s0, onemax, c)
    assert np.array_equal(s0.positions, before[0]) and s0.rng.bit_generator.state == before[1]
    assert s1.iteration == 1 and s0.iteration == 0

    def flaky(bits, calls=[0]):
        calls[0] += 1
        if calls[0] == 3:
            raise RuntimeError("boom")
        return 1.0
    with pytest.raises(FitnessEvaluationError) as info:
        step(s1, flaky, c)
    assert info.value.particle == 2
    assert s1.iteration == 1
    with pytest.raises(FitnessEvaluationError):
        evaluate_swarm(s1.positions, lambda b: math.nan)


def test_v_shaped_zero_velocity_is_fixed_point():
    c = cfg(dimension=12, swarm_size=5, transfer_kind=V)
    s0 = initialize_swarm(c)
    assert np.array_equal(update_position(s0.positions, s0.velocities, V, s0.rng), s0.positions)


@settings(max_examples=20)
@given(st.integers(0, 2 ** 63), st.sampled_from(["s", "v"]))
def test_run_invariants(seed, kind):
    c = cfg(dimension=20, swarm_size=6, max_iterations=25, rng_seed=seed, transfer_kind=kind)
    states = []
    res = run(onemax, c, callback=states.append)
    assert all(b >= a for a, b in zip(res.history, res.history[1:]))
    assert onemax(res.best_position) == res.best_fitness
    for st_ in states:
        assert np.all(np.abs(st_.velocities) <= c.v_max)
        assert st_.gbest_fitness == st_.pbest_fitness.max()


def test_stop_rules():
    res = run(onemax, cfg(target_fitness=-1.0))
    assert res.stop_reason is StopReason.TARGET_REACHED and len(res.history) == 1
    res = run(onemax, cfg(max_iterations=1))
    assert res.stop_reason is StopReason.BUDGET_EXHAUSTED and len(res.history) == 1


def test_determinism_and_executor():
    from concurrent.futures import ThreadPoolExecutor
    a = run(onemax, cfg(rng_seed=77))
    with ThreadPoolExecutor(3) as ex:
        b = run(onemax, cfg(rng_seed=77), executor=ex)
    assert a.history == b.history and np.array_equal(a.best_position, b.best_position)


# --- persistence -----------------------------------------------------------

@pytest.mark.parametrize("k", [1, 7, 33])
def test_checkpoint_resume_bit_identical(tmp_path, k):
    c = cfg(rng_seed=5, max_iterations=60)
    full = run(onemax, c)
    state = initialize_swarm(c)
    for _ in range(k):
        state = step(state, onemax, c)
    path = tmp_path / "ck.json"
    save_checkpoint(path, state, c, {"note": "x"})
    loaded, c2, extra = load_checkpoint(path)
    assert c2 == c and extra == {"note": "x"}
    resumed = run(onemax, c2, state=loaded)
    assert resumed.history == full.history
    assert np.array_equal(resumed.state.velocities, full.state.velocities)
    assert resumed.state.rng.bit_generator.state == full.state.rng.bit_generator.state


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "ck.json"
    p.write_text("{not json")
    with pytest.raises(FormatError):
        load_checkpoint(p)
    p.write_text('{"format": "other"}')
    with pytest.raises(FormatError):
        load_checkpoint(p)


def test_convergence_csv_round_trip(tmp_path):
    res = run(onemax, cfg(max_iterations=10))
    path = tmp_path / "c.csv"
    write_convergence_csv(path, res.history, V, 3)
    assert path.read_text().splitlines()[0] == "iteration,gbest_fitness,transfer_kind,seed"
    rows = read_convergence_csv(path)
    assert [r["gbest_fitness"] for r in rows] == res.history
    assert rows[0]["iteration"] == 1 and rows[0]["seed"] == 3 and rows[0]["transfer_kind"] is V

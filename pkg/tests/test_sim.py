import math

import numpy as np
import pytest

from tandemtail import (
    EmptyWindow,
    ModelParams,
    SimConfig,
    empirical_ccdf,
    estimate_boundary_transform,
    estimate_regulator_rates,
    run,
    step,
    stream_block_maxima,
    validate,
)
from tandemtail.sim import StationaryAccumulator, default_ccdf_grids, run_replica


GRIDS_A = default_ccdf_grids((2.0, 1.618, 1.7247))


def small_config(**kw):
    base = dict(ccdf_grid=GRIDS_A, dt=1e-3, horizon=50.0, burn_in=0.0, seed=5, replicas=1)
    base.update(kw)
    return SimConfig(**base)


# --- scalar step --------------------------------------------------------------


def test_step_zero_state_hand_values(model_a):
    dt = 1e-3
    (L, Y) = step(((0.0, 0.0, 0.0), (0.0, 0.0, 0.0)), model_a, dt, (0.0, 0.0, 0.0))
    assert L == pytest.approx((0.0, 0.0, 0.0), abs=1e-18)
    assert Y == pytest.approx((1.0 * dt, 1.5 * dt, 2.0 * dt), rel=1e-12)


def test_step_interior_drift_only(model_a):
    dt = 1e-3
    (L, Y) = step(((5.0, 5.0, 5.0), (0.0, 0.0, 0.0)), model_a, dt, (0.0, 0.0, 0.0))
    assert L == pytest.approx((5.0 - dt, 5.0 - 0.5 * dt, 5.0 - 0.5 * dt), rel=1e-12)
    assert Y == (0.0, 0.0, 0.0)


def test_step_invariants_random_walk(model_a):
    rng = np.random.default_rng(3)
    state = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    prev_y = (0.0, 0.0, 0.0)
    for _ in range(4000):
        draws = tuple(rng.standard_normal(3))
        state = step(state, model_a, 1e-3, draws)
        L, Y = state
        assert all(v >= 0.0 for v in L)
        assert all(b >= a for a, b in zip(prev_y, Y))  # regulators nondecreasing
        for i in range(3):
            if Y[i] > prev_y[i]:
                assert L[i] == 0.0  # pushes only at the wall
        prev_y = Y


def test_vectorized_matches_scalar_path(model_a):
    cfg = small_config(horizon=3.0, seed=42)
    acc = run(model_a, cfg)
    rng = np.random.default_rng(np.random.SeedSequence((42, 0)))
    draws = rng.standard_normal((3, cfg.n_steps), dtype=np.float32)
    state = ((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))
    for n in range(cfg.n_steps):
        state = step(state, model_a, cfg.dt, tuple(float(draws[i, n]) for i in range(3)))
    assert acc.regulator_total == pytest.approx(state[1], rel=1e-9)


def test_node1_matches_standalone_reflected_walk(model_a):
    # huge downstream service rates cannot affect node 1 in any way
    decoupled = validate(ModelParams(lam=(1.0, 0.5, 0.5), c=(2.0, 100.0, 200.0), sigma=(1.0, 1.0, 1.0)))
    cfg = small_config(horizon=20.0, seed=9)
    acc_a = run(model_a, cfg)
    acc_d = run(decoupled, cfg)
    assert np.array_equal(acc_a.occupation[0], acc_d.occupation[0])
    assert acc_a.regulator_total[0] == acc_d.regulator_total[0]

    # independent one-dimensional implementation on the same draws
    rng = np.random.default_rng(np.random.SeedSequence((9, 0)))
    draws = rng.standard_normal((3, cfg.n_steps), dtype=np.float32)
    lam, c, sig = 1.0, 2.0, 1.0
    level, total = 0.0, 0.0
    sq = math.sqrt(cfg.dt)
    for n in range(cfg.n_steps):
        tmp = level + (lam - c) * cfg.dt + sig * sq * float(draws[0, n])
        push = max(0.0, -tmp)
        level, total = tmp + push, total + push
    assert acc_a.regulator_total[0] == pytest.approx(total, rel=1e-9)


# --- determinism and merging ---------------------------------------------------


def test_bitwise_determinism_same_config(model_a):
    cfg = small_config(horizon=100.0, replicas=2)
    a = run(model_a, cfg)
    b = run(model_a, cfg)
    assert a.steps == b.steps
    for x, y in zip(a.occupation, b.occupation):
        assert np.array_equal(x, y)
    assert np.array_equal(a.regulator_total, b.regulator_total)
    assert np.array_equal(a.boundary_total, b.boundary_total)


def test_workers_do_not_change_results(model_a):
    cfg1 = small_config(horizon=60.0, replicas=3, workers=1)
    cfg3 = small_config(horizon=60.0, replicas=3, workers=3)
    a, b = run(model_a, cfg1), run(model_a, cfg3)
    for x, y in zip(a.occupation, b.occupation):
        assert np.array_equal(x, y)
    assert np.array_equal(a.regulator_total, b.regulator_total)


def test_merge_of_replicas_equals_combined_run(model_a):
    cfg = small_config(horizon=80.0, replicas=2)
    combined = run(model_a, cfg)
    part0 = run_replica(model_a, cfg, 0)
    part1 = run_replica(model_a, cfg, 1)
    merged = part0.merge(part1)
    assert merged.steps == combined.steps
    for x, y in zip(merged.occupation, combined.occupation):
        assert np.array_equal(x, y)
    assert np.array_equal(merged.regulator_total, combined.regulator_total)


def test_merge_shuffled_completion_order(model_a):
    cfg = small_config(horizon=40.0, replicas=4)
    parts = [run_replica(model_a, cfg, i) for i in range(cfg.replicas)]
    sequential = parts[0].merge(parts[1]).merge(parts[2]).merge(parts[3])
    arrival = [parts[2], parts[0], parts[3], parts[1]]  # completion order shuffled
    by_index = sorted(range(4), key=lambda i: [2, 0, 3, 1][i])
    refolded = arrival[by_index[0]]
    for i in by_index[1:]:
        refolded = refolded.merge(arrival[i])
    assert np.array_equal(sequential.regulator_total, refolded.regulator_total)
    for x, y in zip(sequential.occupation, refolded.occupation):
        assert np.array_equal(x, y)


def test_merge_counter_fields_commute_exactly(model_a):
    cfg = small_config(horizon=30.0, replicas=2)
    a = run_replica(model_a, cfg, 0)
    b = run_replica(model_a, cfg, 1)
    ab, ba = a.merge(b), b.merge(a)
    for x, y in zip(ab.occupation, ba.occupation):
        assert np.array_equal(x, y)  # integer counters commute exactly
    assert ab.regulator_total == pytest.approx(ba.regulator_total, rel=1e-12)


def test_merge_rejects_mismatched_levels(model_a):
    a = run(model_a, small_config(horizon=5.0))
    other = SimConfig(ccdf_grid=default_ccdf_grids((1.0, 1.0, 1.0)), dt=1e-3, horizon=5.0, burn_in=0.0)
    b = run(model_a, other)
    with pytest.raises(ValueError):
        a.merge(b)


# --- accumulator semantics -----------------------------------------------------


def test_empty_window_when_horizon_equals_burn_in(model_a):
    cfg = small_config(horizon=10.0, burn_in=10.0)
    acc = run(model_a, cfg)
    assert acc.steps == 0
    assert all(int(o.sum()) == 0 for o in acc.occupation)
    with pytest.raises(EmptyWindow):
        estimate_regulator_rates(acc)
    with pytest.raises(EmptyWindow):
        empirical_ccdf(acc, 1)


def test_occupation_monotone_and_level_zero_full(model_a):
    acc = run(model_a, small_config(horizon=200.0, seed=17))
    for node in (1, 2, 3):
        levels, probs = empirical_ccdf(acc, node)
        assert levels[0] == 0.0
        assert probs[0] == 1.0
        assert np.all(np.diff(probs) <= 0.0)


def test_regulator_rates_short_run(model_a):
    acc = run(model_a, small_config(horizon=4000.0, burn_in=50.0, seed=31))
    rates = estimate_regulator_rates(acc)
    assert rates == pytest.approx((1.0, 1.5, 2.0), rel=0.1)


def test_boundary_transform_zero_weight_equals_regulator(model_a):
    acc = run(model_a, small_config(horizon=500.0, seed=23))
    rates = estimate_regulator_rates(acc)
    for node in (1, 2, 3):
        assert estimate_boundary_transform(acc, node) == pytest.approx(rates[node - 1], rel=1e-12)
        assert estimate_boundary_transform(acc, node, (0.0, 0.0, 0.0)) == pytest.approx(
            rates[node - 1], rel=1e-12
        )


def test_boundary_transform_weight_must_match_configuration(model_a):
    cfg = small_config(horizon=200.0, boundary_weights=((0, 0, 0), (0, 0, 1.0), (0, 0, 0)), seed=2)
    acc = run(model_a, cfg)
    value = estimate_boundary_transform(acc, 2, (0.0, 0.0, 1.0))
    assert value > estimate_regulator_rates(acc)[1]  # exp weight only inflates
    with pytest.raises(ValueError):
        estimate_boundary_transform(acc, 2, (0.0, 0.0, 0.5))


def test_dt_halving_within_monte_carlo_width(model_a):
    horizon = 3000.0
    rates = {}
    for dt in (2e-3, 1e-3):
        cfg = SimConfig(ccdf_grid=GRIDS_A, dt=dt, horizon=horizon, burn_in=50.0, seed=77, replicas=1)
        rates[dt] = estimate_regulator_rates(run(model_a, cfg))
    width = 3.0 / math.sqrt(horizon)  # generous CLT width for these rates
    for a, b in zip(rates[2e-3], rates[1e-3]):
        assert abs(a - b) <= width


def test_pair_and_triple_levels_must_be_grid_members():
    with pytest.raises(ValueError, match="pair level"):
        SimConfig(ccdf_grid=GRIDS_A, pair_levels=((0.123456,), (), ()), horizon=1.0, burn_in=0.0)
    with pytest.raises(ValueError, match="triple threshold"):
        SimConfig(ccdf_grid=GRIDS_A, triple_thresholds=((0.1, 0.2, 0.3),), horizon=1.0, burn_in=0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(ccdf_grid=GRIDS_A, dt=0.02, horizon=1.0)
    with pytest.raises(ValueError):
        SimConfig(ccdf_grid=GRIDS_A, dt=1e-3, horizon=1.0, burn_in=2.0)
    with pytest.raises(ValueError):
        SimConfig(ccdf_grid=GRIDS_A, replicas=0, horizon=1.0, burn_in=0.0)
    with pytest.raises(ValueError):
        SimConfig(ccdf_grid=((0.0, 0.0, 1.0), (0.0, 1.0), (0.0, 1.0)), horizon=1.0, burn_in=0.0)


def test_replicas_equivalent_to_longer_horizon(model_a):
    # 4 replicas vs one 4x-longer replica: same total mass, compatible rates
    split = run(model_a, small_config(horizon=1000.0, burn_in=20.0, replicas=4, seed=19))
    long = run(model_a, small_config(horizon=4000.0 - 3 * 20.0, burn_in=20.0, replicas=1, seed=91))
    assert split.steps == long.steps
    r_split = estimate_regulator_rates(split)
    r_long = estimate_regulator_rates(long)
    width = 6.0 / math.sqrt(split.window_length)  # generous joint CLT band
    for a, b in zip(r_split, r_long):
        assert abs(a - b) <= width


def test_block_maxima_shape_and_determinism(model_a):
    cfg = small_config(horizon=1.0, burn_in=0.5, seed=13)
    m1 = stream_block_maxima(model_a, cfg, block_length=2.0, n_blocks=25)
    m2 = stream_block_maxima(model_a, cfg, block_length=2.0, n_blocks=25)
    assert m1.shape == (25, 3)
    assert np.array_equal(m1, m2)
    assert np.all(m1 >= 0.0)
    # block maxima should comfortably exceed typical levels
    assert m1[:, 0].mean() > 1.0

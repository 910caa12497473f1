import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaens.errors import DataError, UsageError
from metaens.metatrain import (RolloutConfig, family_risk, harvest, lodo_tune, oracle_gain, risk_table, rollout,
                               train_gain_model, tuning_grid, write_gains_csv)
from metaens.metrics import average_precision
from metaens.selector import SelectionConfig
from conftest import matrix_from_columns, random_problem, synthetic_pool
from oracles import brute_ap, brute_percentile, brute_rollout


def test_gain_examples():
    y = np.array([1, 1, 0, 0])
    perfect = np.array([0.9, 0.8, 0.2, 0.1])
    assert oracle_gain(perfect, perfect, 1, y) == 0.0
    reversed_ = np.array([0.1, 0.2, 0.3, 0.4])
    strong = np.array([1.0, 0.95, 0.0, 0.05])
    g = oracle_gain(reversed_, strong, 1, y)
    assert g > 0
    assert g == pytest.approx(brute_ap((reversed_ + strong) / 2, y) - brute_ap(reversed_, y))
    assert oracle_gain(perfect, perfect[::-1], 1, y) <= 0


def test_rollout_hand_built_pool():
    y = np.array([1, 0, 1, 0, 0, 0])
    pool = synthetic_pool(3)
    ids = sorted(pool.ids)
    cols = {ids[0]: np.array([1.0, 0.9, 0.0, 0.2, 0.1, 0.3]),   # primary, AP 0.75
            ids[1]: np.array([0.0, 0.1, 0.9, 0.2, 0.6, 0.3]),
            ids[2]: np.array([0.1, 0.9, 0.3, 0.2, 0.7, 0.5])}
    sm = matrix_from_columns(pool, [cols[m] for m in pool.ids])
    traj, samples = rollout(sm, y, pool, RolloutConfig(eta=2))
    g1 = brute_ap((cols[ids[0]] + cols[ids[1]]) / 2, y) - brute_ap(cols[ids[0]], y)
    g2 = brute_ap((cols[ids[0]] + cols[ids[2]]) / 2, y) - brute_ap(cols[ids[0]], y)
    assert g1 > g2 and g1 > 0
    assert traj == [ids[0], ids[1]]
    assert len(samples) == 2 and {s.step for s in samples} == {2}
    assert [s.gain for s in samples] == [g1, g2]


def test_no_positive_gain_keeps_samples():
    y = np.array([1, 1, 0, 0])
    pool = synthetic_pool(3)
    perfect = np.array([0.9, 0.8, 0.2, 0.1])
    sm = matrix_from_columns(pool, [perfect, perfect[::-1], perfect[::-1].copy()])
    traj, samples = rollout(sm, y, pool)
    assert len(traj) == 1 and len(samples) == 2
    assert all(s.gain <= 0 for s in samples)


def test_budget_one():
    pool, sm, y = random_problem(np.random.default_rng(0))
    traj, samples = rollout(sm, y, pool, RolloutConfig(eta=1))
    assert len(traj) == 1 and samples == []


def test_rollout_errors():
    pool, sm, y = random_problem(np.random.default_rng(0))
    with pytest.raises(DataError):
        rollout(sm, np.zeros_like(y), pool)
    with pytest.raises(UsageError):
        RolloutConfig(eta=3, length=4)
    with pytest.raises(UsageError):
        RolloutConfig(epsilon=1.5)


@given(st.integers(0, 100_000), st.booleans(), st.integers(1, 3))
@settings(max_examples=60, deadline=None)
def test_rollout_matches_brute_force(seed, discrete, eta):
    rng = np.random.default_rng(seed)
    pool, sm, y = random_problem(rng, k=int(rng.integers(2, 7)), discrete=discrete)
    cols = {m: sm.column(m) for m in pool.ids}
    traj, samples = rollout(sm, y, pool, RolloutConfig(eta=eta))
    ref_traj, ref_n = brute_rollout(cols, y, eta)
    assert traj == ref_traj
    assert len(samples) == ref_n


@given(st.integers(0, 100_000))
@settings(max_examples=40, deadline=None)
def test_greedy_step_optimality(seed):
    rng = np.random.default_rng(seed)
    pool, sm, y = random_problem(rng, k=6)
    traj, samples = rollout(sm, y, pool, RolloutConfig(eta=6))
    for step, pick in zip(range(2, len(traj) + 1), traj[1:]):
        at = [s for s in samples if s.step == step]
        best = max(s.gain for s in at)
        assert [s.gain for s in at if s.candidate == pick] == [best]
        assert best > 0
        # cross-check against a direct AP evaluation of the chosen extension
        ens = np.mean([sm.column(m) for m in traj[:step - 1]], axis=0)
        direct = average_precision(np.mean([sm.column(m) for m in traj[:step]], axis=0), y) \
            - average_precision(ens, y)
        assert best == pytest.approx(direct, abs=1e-12)


def test_epsilon_rollout_is_seeded():
    pool, sm, y = random_problem(np.random.default_rng(4), k=6, n=40)
    a = rollout(sm, y, pool, RolloutConfig(eta=5, epsilon=0.5, seed=3))[0]
    b = rollout(sm, y, pool, RolloutConfig(eta=5, epsilon=0.5, seed=3))[0]
    assert a == b


@pytest.mark.parametrize("gains,expected", [
    ([-0.5, -0.1, 0.0, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], 0.1),
    ([0.0, 0.1, 0.3], 0.0),
    ([], 0.0),
])
def test_family_risk_examples(gains, expected):
    assert family_risk(gains) == pytest.approx(expected, abs=1e-15)


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=40), st.floats(0, 1))
@settings(max_examples=100, deadline=None)
def test_family_risk_matches_percentile_oracle(gains, p):
    assert family_risk(gains, p) == pytest.approx(max(0.0, -brute_percentile(gains, p)), abs=1e-12)


def _meta(n_sets, seed=0, k=5):
    rng = np.random.default_rng(seed)
    pool = synthetic_pool(k)
    out = []
    for i in range(n_sets):
        _, sm, y = random_problem(rng, n=30, k=k)
        out.append((matrix_from_columns(pool, [sm.scores[:, j] for j in range(k)], f"d{i}"), y))
    return pool, out


def test_harvest_sets_and_order_invariance():
    pool, meta = _meta(5)
    h = harvest(meta, pool, RolloutConfig(eta=4))
    h2 = harvest(meta[::-1], pool, RolloutConfig(eta=4))
    assert [s.gain for s in h.samples] == [s.gain for s in h2.samples]
    t1, t2 = risk_table(h.samples, pool), risk_table(h2.samples, pool)
    assert t1 == t2
    assert set(t1.risk) == {"HBOS", "KNN", "LOF"}
    remaining = 0
    for d in h.dataset_ids:
        n_steps = len({s.step for s in h.samples if s.dataset_id == d})
        remaining += sum(len(pool) - j for j in range(1, n_steps + 1))
    # one sample per remaining candidate at every expansion step
    assert len(h.samples) == remaining
    with pytest.raises(UsageError):
        harvest(meta + meta[:1], pool)


def test_empty_family_has_zero_risk():
    pool, meta = _meta(2)
    h = harvest(meta, pool, RolloutConfig(eta=2))
    table = risk_table([s for s in h.samples if s.family != "HBOS"], pool)
    assert table.risk["HBOS"] == 0.0 and table.counts["HBOS"] == 0


def test_regressor_sees_only_positive_gains():
    pool, meta = _meta(4)
    h = harvest(meta, pool)
    _, g = h.matrices()
    model = train_gain_model(h, pool, seed=1, n_cls_trees=5, n_reg_trees=5)
    X, _ = h.matrices()
    pred = model.predict_gains(X)
    assert (pred >= 0).all() and pred.max() <= max(0.0, g.max())
    assert model.config["meta_datasets"] == sorted(d for d in h.dataset_ids)


def test_gains_csv(tmp_path):
    pool, meta = _meta(2)
    h = harvest(meta, pool)
    path = write_gains_csv(h, tmp_path / "gains.csv")
    rows = list(csv.reader(path.open()))
    assert len(rows[0]) == 61 + 5 and len(rows) == len(h.samples) + 1
    assert float(rows[1][61]) == h.samples[0].gain


def test_grid_size():
    grid = tuning_grid()
    assert len(grid) == 294 and len(set(grid)) == 294


def test_lodo_tune_single_point_and_determinism():
    pool, meta = _meta(3)
    kw = dict(tau_grid=[(0.0, 0.0)], beta_grid=[1.0], lambda_grid=[0.4], n_cls_trees=5, n_reg_trees=5)
    r = lodo_tune(meta, pool, **kw)
    assert (r.tau1, r.tau2, r.beta, r.lambda_fam) == (0.0, 0.0, 1.0, 0.4)
    kw = dict(tau_grid=[(0.0, 0.0), (0.001, 0.005)], beta_grid=[0.0, 3.0], lambda_grid=[0.2],
              n_cls_trees=5, n_reg_trees=5)
    assert lodo_tune(meta, pool, **kw) == lodo_tune(meta, pool, **kw)
    with pytest.raises(UsageError):
        lodo_tune(meta[:1], pool)


def test_lodo_ties_prefer_defaults():
    # equal columns make every grid point score the same
    pool = synthetic_pool(3)
    meta = []
    for i in range(2):
        y = np.array([1, 0, 0, 1, 0, 0])
        c = np.array([0.9, 0.1, 0.2, 0.8, 0.3, 0.0])
        meta.append((matrix_from_columns(pool, [c, c, c], f"t{i}"), y))
    r = lodo_tune(meta, pool, n_cls_trees=3, n_reg_trees=3,
                  tau_grid=[(0.0, 0.0), (0.001, 0.005)], beta_grid=[2.0, 3.0], lambda_grid=[0.0, 0.2])
    assert (r.tau1, r.tau2, r.beta, r.lambda_fam) == (0.001, 0.005, 3.0, 0.2)
    assert SelectionConfig().tau1 == r.tau1

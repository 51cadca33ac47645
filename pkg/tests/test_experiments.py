import numpy as np
import pytest

from greedy_unfold import experiments as ex
from greedy_unfold.gradients import NetSpec
from greedy_unfold.solvers import SolverConfig


def exp2_params(m=12, n=64, s=4, factor=2):
    return ex.InstanceParams(
        n=n, m=m, s=s, sigma=1e-3, family="fourier", superset_factor=factor
    )


def test_noiseless_instance_is_consistent():
    params = ex.InstanceParams(n=30, m=15, s=3, sigma=0.0)
    inst = ex.generate_instance(params, seed=5)
    assert np.array_equal(inst.y, inst.a @ inst.x_true)


def test_same_seed_is_bitwise_identical():
    params = ex.InstanceParams(n=40, m=20, s=4, sigma=1e-3)
    a = ex.generate_instance(params, seed=9)
    b = ex.generate_instance(params, seed=9)
    assert np.array_equal(a.a, b.a)
    assert np.array_equal(a.y, b.y)
    assert np.array_equal(a.x_true, b.x_true)
    c = ex.generate_instance(params, seed=10)
    assert not np.array_equal(a.y, c.y)


def test_gaussian_column_norms_concentrate():
    params = ex.InstanceParams(n=400, m=200, s=15, sigma=1e-3)
    inside = 0
    total = 0
    for seed in range(60):
        inst = ex.generate_instance(params, seed=seed)
        norms = np.linalg.norm(inst.a, axis=0)
        inside += int(np.sum((norms >= 0.8) & (norms <= 1.2)))
        total += norms.size
    assert inside / total >= 0.999


def test_fourier_entries_unimodular():
    params = ex.InstanceParams(n=64, m=16, s=3, family="fourier")
    inst = ex.generate_instance(params, seed=2)
    assert np.iscomplexobj(inst.a)
    assert np.max(np.abs(np.abs(inst.a) - 1 / np.sqrt(16))) <= 1e-12


def test_superset_contains_support():
    params = exp2_params()
    inst = ex.generate_instance(params, seed=3)
    assert inst.superset.size == 2 * 4
    assert set(inst.support) <= set(inst.superset)
    assert np.all(inst.x_true[np.setdiff1d(np.arange(64), inst.support)] == 0.0)


def test_dataset_shares_matrix_and_superset():
    params = exp2_params()
    data = ex.generate_dataset(params, seed=4, count=6, split="train")
    assert all(d.a is data[0].a for d in data)
    assert all(np.array_equal(d.superset, data[0].superset) for d in data)
    vals = ex.generate_dataset(params, seed=4, count=6, split="val")
    assert np.array_equal(vals[0].a, data[0].a)
    assert not np.array_equal(vals[0].y, data[0].y)


def test_normalized_columns_flag():
    params = ex.InstanceParams(n=30, m=10, s=3, normalize_columns=True)
    inst = ex.generate_instance(params, seed=6)
    assert np.max(np.abs(np.linalg.norm(inst.a, axis=0) - 1.0)) <= 1e-12


def test_oracle_weights_examples():
    assert np.array_equal(ex.oracle_weights([0, 2], 4), [1.0, 0.0, 1.0, 0.0])
    assert np.array_equal(ex.oracle_weights(np.arange(4), 4), np.ones(4))


def test_experiment_one_small_omp_sweep():
    params = ex.InstanceParams(n=60, m=30, s=4, sigma=1e-3)
    rows, stats, failures = ex.experiment_one(
        params, "omp", tau_grid=[1.0, 1e-7], iter_counts=[2, 4], n_trials=4, seed=11
    )
    assert not failures
    assert len(rows) == 4 * 2 * 2
    tiny = [s for s in stats if s.tau == 1e-7]
    huge = [s for s in stats if s.tau == 1.0]
    assert all(10**s.log_mean <= 1e-6 for s in tiny)
    assert all(10**s.log_mean >= 1e-3 for s in huge)
    assert all(s.n_ok == 4 and s.n_failed == 0 for s in stats)


def test_experiment_one_single_trial_flags_degenerate_std():
    params = ex.InstanceParams(n=40, m=20, s=3, sigma=1e-3)
    rows, stats, _ = ex.experiment_one(
        params, "iht", tau_grid=[1e-5], iter_counts=[3], n_trials=1, seed=12, eta=0.5
    )
    assert len(stats) == 1
    assert stats[0].log_std == 0.0
    assert stats[0].std_degenerate
    # grid of length one: the aggregate is exactly that column's stats
    assert stats[0].log_mean == pytest.approx(np.log10(rows[0].rel_error + 1e-12))


def test_experiment_one_threaded_matches_serial():
    params = ex.InstanceParams(n=50, m=25, s=3, sigma=1e-3)
    r1, s1, _ = ex.experiment_one(
        params, "omp", tau_grid=[1e-2, 1e-6], iter_counts=[3], n_trials=6, seed=13, threads=1
    )
    r4, s4, _ = ex.experiment_one(
        params, "omp", tau_grid=[1e-2, 1e-6], iter_counts=[3], n_trials=6, seed=13, threads=4
    )
    assert [(r.trial, r.tau, r.rel_error) for r in r1] == [
        (r.trial, r.tau, r.rel_error) for r in r4
    ]
    assert [(s.log_mean, s.log_std) for s in s1] == [(s.log_mean, s.log_std) for s in s4]


def smoke_train_cfg(**over):
    base = dict(
        family="omp",
        layers=3,
        tau=1e-3,
        learning_rate=1e-2,
        n_epoch=4,
        n_checkpt=2,
        batch_size=8,
    )
    base.update(over)
    return ex.TrainConfig(**base)


def test_zero_learning_rate_freezes_weights():
    params = exp2_params()
    train = ex.generate_dataset(params, seed=20, count=16, split="train")
    val = ex.generate_dataset(params, seed=20, count=8, split="val")
    state, logs = ex.train_network(train, val, smoke_train_cfg(learning_rate=0.0), seed=21)
    assert np.array_equal(state.w, np.ones(64))
    assert len({l.mse_train for l in logs}) == 1


def test_oracle_weights_recover_where_uniform_fails():
    # the undersampled regime: m = 2s measurements, supports inside a
    # superset of 2s candidates; knowing the superset restores recovery
    params = exp2_params(m=20, n=256, s=10, factor=2)
    data = ex.generate_dataset(params, seed=22, count=16, split="val")
    w_oracle = ex.oracle_weights(data[0].superset, 256)
    net = NetSpec(family="omp", layers=10, tau=1e-3)
    oracle_errs = ex.relative_errors(net, w_oracle, data)
    uniform_errs = ex.relative_errors(net, np.ones(256), data)
    assert np.median(oracle_errs) <= 0.1 * np.median(uniform_errs)
    assert np.median(oracle_errs) <= 1e-2


def test_training_improves_and_checkpoints():
    params = exp2_params(m=12, n=48, s=4, factor=2)
    train = ex.generate_dataset(params, seed=23, count=32, split="train")
    val = ex.generate_dataset(params, seed=23, count=16, split="val")
    cfg = smoke_train_cfg(layers=4, n_epoch=6, n_checkpt=3, batch_size=16)
    state, logs = ex.train_network(train, val, cfg, seed=24)
    assert state.epoch == 6
    assert [c.epoch for c in state.checkpoints] == [0, 3, 6]
    assert state.best.mse_train == min(c.mse_train for c in state.checkpoints)
    assert len(logs) == 7
    assert np.all(state.w >= 0.0)


def test_training_is_seed_deterministic():
    params = exp2_params(m=10, n=32, s=3, factor=2)
    train = ex.generate_dataset(params, seed=25, count=16, split="train")
    val = ex.generate_dataset(params, seed=25, count=8, split="val")
    cfg = smoke_train_cfg(layers=2, n_epoch=3, n_checkpt=1, batch_size=8)
    s1, l1 = ex.train_network(train, val, cfg, seed=26)
    s2, l2 = ex.train_network(train, val, cfg, seed=26)
    assert np.array_equal(s1.w, s2.w)
    assert [(l.mse_train, l.mse_val) for l in l1] == [(l.mse_train, l.mse_val) for l in l2]


def test_boxplot_quantile_convention():
    q = ex.boxplot_quantiles(np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
    assert q["median"] == 3.0
    assert q["q1"] == 2.0
    assert q["q3"] == 4.0
    assert q["min"] == 1.0
    assert q["max"] == 5.0
    assert q["outliers"] == []


def test_boxplot_detects_outliers():
    q = ex.boxplot_quantiles(np.array([1.0, 1.1, 1.2, 1.3, 50.0]))
    assert q["outliers"] == [50.0]
    assert q["whisker_high"] <= 1.3


def test_evaluate_network_perfect_recovery():
    # identity mixing with full-width mask recovers exactly
    n = 6
    eye = np.eye(n)
    insts = []
    params = ex.InstanceParams(n=n, m=n, s=2, sigma=0.0)
    for seed in range(4):
        inst = ex.generate_instance(params, seed=seed)
        inst = ex.ProblemInstance(
            eye, inst.x_true, inst.support, None,
            inst.x_true.copy(), 0.0, "gaussian", seed,
        )
        insts.append(inst)
    cfg = ex.TrainConfig(family="iht", layers=2, tau=1e-9, k=n, eta=1.0)
    stats = ex.evaluate_network(np.ones(n), cfg, insts)
    assert stats.quantiles["max"] <= 1e-10


def test_csv_writers_schemas(tmp_path):
    rows = [ex.Exp1Row("omp", 0, 5, 1e-3, 0.125)]
    stats = [ex.Exp1Stat("omp", 5, 1e-3, -2.5, 0.1, 1, 0)]
    logs = [ex.EpochLog(0, 1.0, 1.5, 0.0, True)]
    ex.write_exp1_errors(tmp_path / "exp1_errors.csv", rows)
    ex.write_exp1_stats(tmp_path / "exp1_stats.csv", stats)
    ex.write_training_log(tmp_path / "training_log.csv", logs)
    ex.write_weights(tmp_path / "weights.csv", np.array([1.0, 0.0]), np.array([0.9, 0.1]))
    ex.write_eval_boxplot(tmp_path / "eval_boxplot.csv", np.array([0.5]))

    assert (tmp_path / "exp1_errors.csv").read_text().splitlines()[0] == "family,trial,n_iter,tau,rel_error"
    assert (tmp_path / "exp1_stats.csv").read_text().splitlines()[0] == "family,n_iter,tau,log_mean,log_std,n_ok,n_failed"
    assert (tmp_path / "training_log.csv").read_text().splitlines()[0] == "epoch,mse_train,mse_val,grad_norm,checkpointed"
    assert (tmp_path / "weights.csv").read_text().splitlines()[0] == "index,oracle_weight,learned_weight"
    assert (tmp_path / "eval_boxplot.csv").read_text().splitlines()[0] == "sample,rel_error"
    assert (tmp_path / "exp1_errors.csv").read_text().splitlines()[1] == "omp,0,5,0.001,0.125"


def test_classical_errors_baseline():
    params = ex.InstanceParams(n=40, m=20, s=3, sigma=0.0)
    insts = [ex.generate_instance(params, seed=s) for s in range(3)]
    errs = ex.classical_errors("omp", insts, k=3)
    assert np.all(errs <= 1e-8)

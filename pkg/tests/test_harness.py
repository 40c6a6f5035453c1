import json
import time

import numpy as np
import pytest

from lengthgen import encodings as enc
from lengthgen import harness as H
from lengthgen import tasks
from lengthgen.config import TrainConfig
from lengthgen.errors import InvalidArgument

TINY = TrainConfig(task="reverse_string", scheme="relative+rand", n_train=6, m_eval=9, max_position=32,
                   steps=30, batch_size=8, d_model=16, blocks=1, heads=2, eval_batch=40, log_every=10)


def report(score_by_length, lr=3e-4, seed=0, scheme="sincos"):
    return H.EvalReport("even_pairs", scheme, seed, lr, 10, score_by_length)


# --- reports and aggregation ----------------------------------------------------


def test_score_is_mean_of_lengths():
    assert report({21: 1.0, 22: 0.5}).score == 0.75


def test_report_lengths_contiguous():
    with pytest.raises(InvalidArgument):
        report({21: 1.0, 23: 0.5})
    with pytest.raises(InvalidArgument):
        report({})


def test_aggregate_max():
    reps = [report({1: s}, seed=k) for k, s in enumerate((0.5, 0.9, 0.7))]
    agg = H.aggregate(reps)
    assert agg.max == 0.9
    assert agg.mean == pytest.approx(0.7)
    assert agg.std == pytest.approx(0.2)


def test_aggregate_single_report_has_zero_std():
    agg = H.aggregate([report({1: 0.6})])
    assert (agg.max, agg.mean, agg.std) == (0.6, 0.6, 0.0)


def test_aggregate_picks_best_lr_group():
    reps = [report({1: 0.5}, lr=1e-4, seed=0), report({1: 0.7}, lr=1e-4, seed=1),
            report({1: 0.9}, lr=5e-4, seed=0), report({1: 0.7}, lr=5e-4, seed=1),
            report({1: 0.95}, lr=3e-4, seed=0), report({1: 0.0}, lr=3e-4, seed=1)]
    agg = H.aggregate(reps)
    assert agg.best_lr == 5e-4
    assert agg.mean == pytest.approx(0.8)
    assert agg.max == 0.95
    assert agg.max >= agg.mean


def test_aggregate_empty_group():
    with pytest.raises(InvalidArgument):
        H.aggregate([])


def test_results_csv_round_trip():
    r = report({21: 0.25, 22: 1 / 3})
    text = r.to_csv()
    assert text.splitlines()[0] == "task,scheme,seed,lr,steps,length,accuracy"
    back = H.EvalReport.from_csv(text)
    assert back.accuracies == r.accuracies and back.lr == r.lr and back.scheme == r.scheme


# --- config validation ------------------------------------------------------------


@pytest.mark.parametrize("changes,match", [
    (dict(task="binary_addition", n_train=2), "minimum"),
    (dict(max_position=10), "L=10"),
    (dict(m_eval=6), "M=6"),
    (dict(scheme="relative+sorted"), "bad scheme"),
    (dict(lr=float("nan")), "learning rate"),
])
def test_invalid_configs(changes, match):
    with pytest.raises(InvalidArgument, match=match):
        H.validate(TINY.replace(**changes))


def test_learned_table_sizes():
    assert H.model_config(TINY.replace(scheme="learned")).learned_rows == 12
    assert H.model_config(TINY.replace(scheme="learned+rand")).learned_rows == 32


# --- training -----------------------------------------------------------------------


def test_curriculum_covers_every_length():
    spec = tasks.get_task("reverse_string")
    rng = np.random.default_rng(0)
    seen = np.zeros(41, int)
    for _ in range(10_000):
        seen[H.curriculum_length(spec, 40, rng)] += 1
    assert seen[0] == 0 and np.all(seen[1:] > 0)
    # each length expects 250 hits; 6 sigma below that is still far above zero
    assert seen[1:].min() >= 250 - 6 * np.sqrt(250)


def test_zero_learning_rate_keeps_initial_params():
    cfg = TINY.replace(lr=0.0, steps=5)
    init = H.fresh_params(cfg)
    result = H.train(cfg)
    for name in init:
        assert np.array_equal(init[name].data, result.params[name].data), name


def test_training_is_deterministic():
    a = H.train(TINY)
    b = H.train(TINY)
    assert [(r.step, r.length, r.loss, r.accuracy) for r in a.trace] == \
        [(r.step, r.length, r.loss, r.accuracy) for r in b.trace]
    assert len(a.trace) == 3 and a.steps_per_sec > 0
    for name in a.params:
        assert a.params[name].data.tobytes() == b.params[name].data.tobytes()


def test_training_reduces_loss():
    cfg = TINY.replace(task="even_pairs", scheme="sincos", steps=300, lr=1e-3, log_every=50)
    trace = H.train(cfg).trace
    assert trace[-1].loss < trace[0].loss


def test_divergence_reports_step_and_config():
    cfg = TINY.replace(steps=3)
    params = H.fresh_params(cfg)
    params["head.b"].data[0] = np.nan
    with pytest.raises(H.TrainingDiverged) as info:
        H.train(cfg, params=params)
    assert info.value.step == 1
    assert "task = reverse_string" in str(info.value)


def test_one_assignment_per_batch(monkeypatch):
    """Every training step samples positions exactly once, for the full padded length."""
    calls = []
    original = enc.sample_positions

    def spy(n, scheme, rng):
        calls.append(n)
        return original(n, scheme, rng)

    monkeypatch.setattr(enc, "sample_positions", spy)
    H.train(TINY.replace(steps=12))
    assert len(calls) == 12
    assert all(n % 2 == 0 and 2 <= n <= 12 for n in calls)


# --- evaluation -------------------------------------------------------------------


def test_untrained_binary_accuracy_near_half():
    cfg = TINY.replace(n_train=20, m_eval=30, max_position=512, eval_batch=500, d_model=32, heads=8, blocks=2)
    rep = H.evaluate(H.fresh_params(cfg), cfg)
    assert rep.lengths == list(range(21, 31))
    for length, acc in rep.accuracies.items():
        assert abs(acc - 0.5) <= 0.05, (length, acc)


def test_evaluation_is_reproducible_and_chunk_independent():
    params = H.fresh_params(TINY)
    a = H.evaluate(params, TINY)
    b = H.evaluate(params, TINY, chunk=7)
    assert a.to_csv() == b.to_csv()


def test_eval_rejects_length_beyond_L():
    cfg = TINY.replace(m_eval=20)
    with pytest.raises(InvalidArgument, match="L = 32"):
        H.evaluate(H.fresh_params(cfg), cfg)


def test_eval_requires_lengths():
    with pytest.raises(InvalidArgument):
        H.evaluate(H.fresh_params(TINY), TINY, lengths=[])


def test_randomized_eval_stays_in_support():
    cfg = TINY.replace(max_position=40, m_eval=20)
    mon = enc.PositionMonitor()
    H.evaluate(H.fresh_params(cfg), cfg, monitor=mon)
    assert 1 <= mon.min_index and mon.max_index <= 40 and not mon.out_of_range


def test_standard_learned_eval_flags_out_of_range():
    cfg = TINY.replace(scheme="learned")
    mon = enc.PositionMonitor()
    H.evaluate(H.fresh_params(cfg), cfg, monitor=mon)
    assert mon.out_of_range and mon.max_index == 2 * cfg.m_eval


def test_eval_cost_grows_with_length():
    cfg = TINY.replace(max_position=512, m_eval=200, eval_batch=100)
    params = H.fresh_params(cfg)
    times = {}
    for length in (10, 200):
        t = time.perf_counter()
        H.evaluate(params, cfg, lengths=[length])
        times[length] = time.perf_counter() - t
    assert times[200] > times[10]


# --- persistence and drivers -----------------------------------------------------


def test_run_member_writes_and_reuses(tmp_path):
    rep = H.run_member(TINY, tmp_path)
    d = H.run_dir(tmp_path, TINY)
    assert d == tmp_path / "reverse_string" / "relative+rand" / "seed0_lr0.0003"
    for name in ("config.txt", "trace.csv", "results.csv", "summary.json", "params.manifest", "params.bin"):
        assert (d / name).exists(), name
    summary = json.loads((d / "summary.json").read_text())
    assert set(summary) == {"score", "max", "mean", "std", "steps_per_sec"}
    assert summary["score"] == pytest.approx(rep.score)
    mtime = (d / "results.csv").stat().st_mtime_ns
    again = H.run_member(TINY, tmp_path)
    assert again.accuracies == rep.accuracies
    assert (d / "results.csv").stat().st_mtime_ns == mtime


def test_ablation_preconditions(tmp_path):
    with pytest.raises(InvalidArgument, match="sorting ablation"):
        H.ablation_sorting(TINY.replace(scheme="relative"), [0], tmp_path)
    with pytest.raises(InvalidArgument, match="below the longest"):
        H.ablation_L_sweep(TINY, [12], [0], tmp_path)


def test_ablation_sorting_runs_both(tmp_path):
    cfg = TINY.replace(steps=5)
    scores = H.ablation_sorting(cfg, [0], tmp_path)
    assert set(scores) == {"sorted", "unsorted"}
    assert (tmp_path / "reverse_string" / "relative+rand+unsorted").is_dir()


def test_ablation_L_sweep_separates_runs(tmp_path):
    scores = H.ablation_L_sweep(TINY.replace(steps=5), [18, 32], [0], tmp_path)
    assert set(scores) == {18, 32}
    assert (tmp_path / "L18").is_dir() and (tmp_path / "L32").is_dir()


def test_measure_steps_per_sec_positive():
    assert H.measure_steps_per_sec(TINY, steps=5, warmup=2) > 0


def test_throughput_overhead_definition():
    t = H.Throughput(100.0, 90.0, 10.0)
    assert t.ratio == 10.0 and t.overhead == pytest.approx(0.1)


@pytest.mark.slow
def test_even_pairs_in_domain_accuracy():
    cfg = TrainConfig(task="even_pairs", scheme="sincos+rand", steps=10_000)
    result = H.train(cfg)
    rep = H.evaluate(result.params, cfg, lengths=range(1, cfg.n_train + 1))
    assert rep.score >= 0.99

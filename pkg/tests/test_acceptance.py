"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Criteria 7-9 read cached desk-scale runs (see ``lengthgen.desk``); members that
are missing are trained on the spot, which takes several hours on one CPU core.
Run ``python scripts/run_desk.py`` beforehand to fill the cache in the background.
"""
import math
from itertools import combinations

import numpy as np
import pytest

from lengthgen import desk
from lengthgen import encodings as enc
from lengthgen import harness as H
from lengthgen import model as M
from lengthgen import tasks
from lengthgen.config import TrainConfig
from lengthgen.gradcheck import check_gradients
from lengthgen.tensor import (Tensor, add, embedding, layer_norm, linear, masked_cross_entropy, matmul, mean_all, mul,
                              relu, reshape, rotate_pairs, softmax, sub, sum_all, transpose)

BASES = ("sincos", "learned", "relative", "alibi", "rope")


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def _model(base, n, rng, dtype="float32"):
    spec = tasks.get_task("reverse_string")
    cfg = M.ModelConfig(spec.vocab_in, spec.vocab_out, enc.parse_scheme(base, n), d_model=16, blocks=2, heads=4,
                        learned_rows=n, dtype=dtype)
    return spec, cfg


# 1 -----------------------------------------------------------------------------


def test_c01_identity_reduction(verdict):
    rng = np.random.default_rng(0)
    failures = []
    for base in BASES:
        for length in (1, 4, 9):
            spec, std = _model(base, 2 * length, rng)
            _, rnd = _model(base + "+rand", 2 * length, rng)
            n = 2 * length
            p_std = enc.sample_positions(n, std.scheme, rng)
            p_rnd = enc.sample_positions(n, rnd.scheme, rng)
            same = np.array_equal(p_std.indices, p_rnd.indices)
            if base in ("sincos", "learned"):
                table = rng.standard_normal((n, 16))
                same &= np.array_equal(enc.encode_additive(std.scheme, p_std, 16, table),
                                       enc.encode_additive(rnd.scheme, p_rnd, 16, table))
            same &= np.array_equal(enc.alibi_bias(p_std, 4), enc.alibi_bias(p_rnd, 4))
            same &= np.array_equal(enc.relative_distances(p_std), enc.relative_distances(p_rnd))
            params = M.init_params(std, rng)
            x, y = spec.sample_batch(length, 3, rng)
            b_std = M.make_batch(x, y, spec.pad_id, p_std)
            b_rnd = M.make_batch(x, y, spec.pad_id, p_rnd)
            l_std, l_rnd = M.forward(params, std, b_std), M.forward(params, rnd, b_rnd)
            same &= np.array_equal(l_std.data, l_rnd.data)
            same &= M.loss_and_accuracy(l_std, b_std)[0].item() == M.loss_and_accuracy(l_rnd, b_rnd)[0].item()
            if not same:
                failures.append(f"{base}@{length}")
    verdict(1, not failures, f"randomized with L = n is exactly standard for {', '.join(BASES)}"
            + (f"; differs: {failures}" if failures else ""))


# 2 -----------------------------------------------------------------------------


def test_c02_sampling_suite(verdict):
    rng = np.random.default_rng(2024)
    draws = 100_000
    # sorted strictly increasing, marginal inclusion n/L
    L, n = 20, 5
    scheme = enc.EncodingScheme("sincos", True, L)
    hits = np.zeros(L + 1, int)
    sorted_ok = True
    for _ in range(draws):
        idx = enc.sample_positions(n, scheme, rng).indices
        sorted_ok &= bool(np.all(np.diff(idx) > 0))
        hits[idx] += 1
    p = n / L
    marg_z = np.abs(hits[1:] - draws * p).max() / math.sqrt(draws * p * (1 - p))
    # all C(6,3) subsets
    scheme = enc.EncodingScheme("sincos", True, 6)
    counts = {c: 0 for c in combinations(range(1, 7), 3)}
    for _ in range(draws):
        counts[tuple(enc.sample_positions(3, scheme, rng).indices.tolist())] += 1
    q = 1 / 20
    subset_z = max(abs(c - draws * q) for c in counts.values()) / math.sqrt(draws * q * (1 - q))
    ok = sorted_ok and marg_z <= 3 and subset_z <= 3 and len(counts) == 20
    verdict(2, ok, f"sorted on every draw={sorted_ok}; marginal max |z|={marg_z:.2f}; "
            f"C(6,3) subset max |z|={subset_z:.2f} (limit 3)")


# 3 -----------------------------------------------------------------------------


def _op_cases(rng):
    def t(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)

    a, b, c = t(3, 4), t(3, 4), t(4)
    m1, m2 = t(2, 3, 4), t(2, 4, 5)
    w, bias = t(4, 6), t(6)
    s = t(2, 5)
    g, beta = t(4), t(4)
    table = t(7, 3)
    ids = rng.integers(0, 7, size=(2, 5))
    x = t(2, 3, 6)
    ang = rng.standard_normal((3, 3))
    logits = t(2, 4, 5)
    targets = rng.integers(0, 5, size=(2, 4))
    mask = np.array([[0, 1, 1, 0], [1, 1, 0, 1]], bool)
    wts = rng.standard_normal((3, 4))
    # fixed weights: reading ``.data`` inside the closure would move with the finite-difference probe
    w_ab, w_s = a.data.reshape(6, 2).copy(), s.data.copy() ** 2
    w_emb, w_x = table.data[ids] + 1, x.data.copy()
    return {
        "add (broadcast)": (lambda: sum_all(mul(add(a, c), wts)), {"a": a, "c": c}),
        "sub": (lambda: sum_all(mul(sub(a, b), wts)), {"a": a, "b": b}),
        "mul": (lambda: sum_all(mul(a, b)), {"a": a, "b": b}),
        "matmul (batched)": (lambda: sum_all(mul(matmul(m1, m2), 0.3)), {"m1": m1, "m2": m2}),
        "linear": (lambda: sum_all(mul(linear(a, w, bias), bias)), {"a": a, "w": w, "b": bias}),
        "reshape/transpose": (lambda: sum_all(mul(transpose(reshape(a, (2, 6)), (1, 0)), w_ab)),
                              {"a": a}),
        "relu": (lambda: sum_all(mul(relu(a), wts)), {"a": a}),
        "mean": (lambda: mean_all(mul(a, a)), {"a": a}),
        "softmax": (lambda: sum_all(mul(softmax(s), w_s)), {"s": s}),
        "layer_norm": (lambda: sum_all(mul(layer_norm(a, g, beta), wts)), {"a": a, "gain": g, "bias": beta}),
        "embedding": (lambda: sum_all(mul(embedding(table, ids), w_emb)), {"table": table}),
        "rotate_pairs": (lambda: sum_all(mul(rotate_pairs(x, np.cos(ang), np.sin(ang)), w_x)), {"x": x}),
        "masked_cross_entropy": (lambda: masked_cross_entropy(logits, targets, mask), {"logits": logits}),
    }


def test_c03_gradient_check(verdict):
    rng = np.random.default_rng(3)
    worst = {}
    for name, (fn, inputs) in _op_cases(rng).items():
        worst[name] = max(r.worst_rel_error for r in check_gradients(fn, inputs))
    for scheme in ("none", "sincos", "learned+rand", "relative+rand", "alibi", "rope+rand"):
        spec = tasks.get_task("reverse_string")
        cfg = M.ModelConfig(spec.vocab_in, spec.vocab_out, enc.parse_scheme(scheme, 32), d_model=8, blocks=2,
                            heads=2, learned_rows=32, dtype="float64")
        params = M.init_params(cfg, rng)
        for pname, p in params.items():
            if pname.endswith(("rel.u", "rel.v", ".b", ".bias")):
                p.data[...] = rng.standard_normal(p.shape) * 0.1
        x, y = spec.sample_batch(3, 2, rng)
        batch = M.make_batch(x, y, spec.pad_id, enc.sample_positions(6, cfg.scheme, rng))
        res = check_gradients(lambda: M.loss_and_accuracy(M.forward(params, cfg, batch), batch)[0],
                              dict(params.items()))
        worst[f"model[{scheme}]"] = max(r.worst_rel_error for r in res)
    top = max(worst, key=worst.get)
    verdict(3, worst[top] <= 1e-4, f"{len(worst)} checks in float64; worst relative error {worst[top]:.2e} "
            f"({top}); limit 1e-4")


# 4 -----------------------------------------------------------------------------


def test_c04_permutation_equivariance(verdict):
    rng = np.random.default_rng(4)
    spec, cfg = _model("none", 64, rng)
    params = M.init_params(cfg, rng)
    worst = 0.0
    for length in (3, 8, 20):
        x, y = spec.sample_batch(length, 4, rng)
        b = M.make_batch(x, y, spec.pad_id, enc.standard_positions(2 * length))
        perm = rng.permutation(b.length)
        pb = M.Batch(b.tokens[:, perm], b.mask[:, perm], b.targets[:, perm], b.positions)
        diff = np.abs(M.forward(params, cfg, b).data[:, perm] - M.forward(params, cfg, pb).data).max()
        worst = max(worst, float(diff))
    verdict(4, worst <= 1e-5, f"scheme none: max |logits(perm x) - perm logits(x)| = {worst:.2e} (limit 1e-5)")


# 5 -----------------------------------------------------------------------------


def test_c05_oracle_suite(verdict):
    problems = []
    exhaustive = 0
    for name in ("parity_check", "even_pairs", "duplicate_string", "odds_first", "reverse_string"):
        r = tasks.exhaustive_check(name, 10)
        exhaustive += r.checked
        if not r.passed:
            problems.append(f"{name}: {len(r.mismatches)} mismatches")
    rng = np.random.default_rng(5)
    spot = 0
    for name in ("modular_arithmetic_simple", "modular_arithmetic", "solve_equation", "binary_addition",
                 "binary_multiplication", "compute_sqrt"):
        spec = tasks.get_task(name)
        r = tasks.spot_check(name, 10_000, range(spec.min_length, 101), rng)
        spot += r.checked
        if not r.passed:
            problems.append(f"{name}: {len(r.mismatches)} spot mismatches")
    verdict(5, not problems, f"{exhaustive} exhaustive inputs (5 tasks, length <= 10) and {spot} arithmetic "
            f"spot checks agree" + (f"; {problems}" if problems else ""))


# 6 -----------------------------------------------------------------------------


def test_c06_ood_detector(verdict):
    base = desk.BASE.replace(task="reverse_string", eval_batch=8)
    std = base.replace(scheme="learned")
    mon_std = enc.PositionMonitor()
    H.evaluate(H.fresh_params(std), std, monitor=mon_std)
    detail = []
    ok = mon_std.out_of_range
    detail.append(f"standard learned flagged={mon_std.out_of_range} (max index {mon_std.max_index} vs "
                  f"{H.model_config(std).learned_rows} rows)")
    for scheme in ("learned+rand", "sincos+rand", "relative+rand", "alibi+rand", "rope+rand"):
        cfg = base.replace(scheme=scheme)
        mon = enc.PositionMonitor()
        H.evaluate(H.fresh_params(cfg), cfg, monitor=mon)
        inside = not mon.out_of_range and mon.min_index >= 1 and mon.max_index <= cfg.max_position
        ok &= inside
        if not inside:
            detail.append(f"{scheme} used [{mon.min_index}, {mon.max_index}]")
    detail.append(f"5 randomized schemes stayed within [1, {base.max_position}] over lengths "
                  f"{base.n_train + 1}..{base.m_eval}")
    verdict(6, ok, "; ".join(detail))


# 7-9: desk-scale runs ----------------------------------------------------------


def _score(group):
    return desk.group_score(group)


@pytest.mark.slow
def test_c07_desk_trends(verdict):
    bucket_rand = _score("bucket_sort/sincos+rand")
    bucket_std = _score("bucket_sort/sincos")
    rev_rand = _score("reverse_string/relative+rand")
    rev_std = _score("reverse_string/relative")
    even_rand = _score("even_pairs/sincos+rand")
    checks = {
        f"bucket_sort sincos+rand {bucket_rand:.3f} >= 0.90": bucket_rand >= 0.90,
        f"bucket_sort sincos {bucket_std:.3f} <= 0.60": bucket_std <= 0.60,
        f"reverse_string relative+rand {rev_rand:.3f} >= relative {rev_std:.3f} + 0.15": rev_rand >= rev_std + 0.15,
        f"even_pairs sincos+rand {even_rand:.3f} >= 0.95": even_rand >= 0.95,
    }
    failed = [k for k, v in checks.items() if not v]
    verdict(7, not failed, "; ".join(checks) + (f" -- failed: {failed}" if failed else ""))


@pytest.mark.slow
def test_c08_sorting_ablation(verdict):
    sorted_score = _score("even_pairs/sincos+rand")
    unsorted_score = _score("even_pairs/sincos+rand+unsorted")
    gap = sorted_score - unsorted_score
    verdict(8, gap >= 0.30, f"even_pairs sorted {sorted_score:.3f} - unsorted {unsorted_score:.3f} = {gap:.3f} "
            f"(need >= 0.30)")


@pytest.mark.slow
def test_c09_L_robustness(verdict):
    scores = {256: _score("reverse_string/relative+rand@L256"), 512: _score("reverse_string/relative+rand"),
              1024: _score("reverse_string/relative+rand@L1024")}
    spread = max(scores.values()) - min(scores.values())
    verdict(9, spread <= 0.15, "reverse_string relative+rand "
            + ", ".join(f"L={k}: {v:.3f}" for k, v in scores.items()) + f"; max pairwise gap {spread:.3f} (<= 0.15)")


# 10 ----------------------------------------------------------------------------

THROUGHPUT_BATCH = 16


@pytest.mark.slow
def test_c10_throughput(verdict):
    base = desk.BASE.replace(task="missing_duplicate", batch_size=THROUGHPUT_BATCH, max_position=2048)
    t = H.throughput_compare(base, short_n=40, long_n=500, steps=200, warmup=50)
    ok = t.ratio >= 4 and t.overhead <= 0.15
    verdict(10, ok, f"relative+rand N=40 {t.short_randomized:.1f} steps/s, relative N=40 {t.short_standard:.1f}, "
            f"relative N=500 {t.long_standard:.2f}; ratio {t.ratio:.1f} (>= 4); rand vs std gap "
            f"{100 * t.overhead:.1f}% (<= 15%); batch {THROUGHPUT_BATCH}")


# 11 ----------------------------------------------------------------------------


def test_c11_reproducibility(verdict, tmp_path):
    cfg = desk.BASE.replace(task="reverse_string", scheme="relative+rand", steps=300, m_eval=40)
    a = H.run_member(cfg, tmp_path / "a")
    b = H.run_member(cfg, tmp_path / "b")
    csv_a = (H.run_dir(tmp_path / "a", cfg) / "results.csv").read_bytes()
    csv_b = (H.run_dir(tmp_path / "b", cfg) / "results.csv").read_bytes()
    same = csv_a == csv_b and a.accuracies == b.accuracies
    # a stored desk checkpoint re-evaluates to its stored CSV as well
    stored = desk.GROUPS["even_pairs/sincos+rand"].replace(seed=0)
    d = desk.run_dir(desk.default_root(), stored)
    replay = None
    if (d / "params.manifest").exists() and desk.cached(stored) is not None:
        from lengthgen.checkpoint import load_params

        replay = H.evaluate(load_params(d / "params"), stored).to_csv() == (d / "results.csv").read_text()
    ok = same and replay is not False
    verdict(11, ok, f"two runs of one (config, seed) give byte-identical results CSV: {same}; "
            f"desk checkpoint re-evaluation matches stored CSV: {'not available' if replay is None else replay}")

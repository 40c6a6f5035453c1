"""Fast oracle and invariant checks run by ``lengthgen selfcheck``."""
from __future__ import annotations

import math
import time
from itertools import combinations

import numpy as np

from . import encodings as enc
from . import model as M
from . import tasks
from .gradcheck import check_gradients


def _small_model(base, task="reverse_string", L=64, dtype="float64", d=8, heads=2):
    spec = tasks.get_task(task)
    scheme = enc.parse_scheme(base, L)
    return M.ModelConfig(spec.vocab_in, spec.vocab_out, scheme, d_model=d, blocks=2, heads=heads,
                         learned_rows=L, dtype=dtype)


def _batch(cfg, rng, length, batch, positions=None, task="reverse_string"):
    spec = tasks.get_task(task)
    x, y = spec.sample_batch(length, batch, rng)
    n = x.shape[1] + y.shape[1]
    pos = positions if positions is not None else enc.sample_positions(n, cfg.scheme, rng)
    return M.make_batch(x, y, spec.pad_id, pos)


def check_oracles():
    for name in ("parity_check", "even_pairs", "duplicate_string", "odds_first", "reverse_string"):
        r = tasks.exhaustive_check(name, 10)
        if not r.passed:
            return f"{name}: {len(r.mismatches)} mismatches"
    rng = np.random.default_rng(0)
    for name in ("modular_arithmetic_simple", "modular_arithmetic", "solve_equation", "binary_addition",
                 "binary_multiplication", "compute_sqrt"):
        r = tasks.spot_check(name, 500, range(3, 80), rng)
        if not r.passed:
            return f"{name}: {len(r.mismatches)} spot mismatches"
    return None


def check_sampling():
    rng = np.random.default_rng(1)
    scheme = enc.EncodingScheme("sincos", True, 6)
    draws = 20_000
    counts = {c: 0 for c in combinations(range(1, 7), 3)}
    for _ in range(draws):
        idx = enc.sample_positions(3, scheme, rng).indices
        if not np.all(np.diff(idx) > 0):
            return f"unsorted draw {idx.tolist()}"
        counts[tuple(idx.tolist())] += 1
    sigma = math.sqrt(draws * 0.05 * 0.95)
    worst = max(abs(c - draws * 0.05) / sigma for c in counts.values())
    return None if worst <= 4 else f"subset frequency off by {worst:.1f} sigma"


def check_identity_reduction():
    rng = np.random.default_rng(2)
    for base in ("sincos", "learned", "relative", "alibi", "rope"):
        n = 10
        std = _small_model(base, L=n, dtype="float32")
        rnd = _small_model(base + "+rand", L=n, dtype="float32")
        params = M.init_params(std, rng)
        b1 = _batch(std, np.random.default_rng(3), 5, 4)
        b2 = _batch(rnd, np.random.default_rng(3), 5, 4)
        if not np.array_equal(M.forward(params, std, b1).data, M.forward(params, rnd, b2).data):
            return f"{base}: randomized with L = n differs from standard"
    return None


def check_gradients_small():
    rng = np.random.default_rng(4)
    for base in ("relative+rand", "rope", "learned+rand"):
        cfg = _small_model(base)
        params = M.init_params(cfg, rng)
        batch = _batch(cfg, rng, 3, 2)
        res = check_gradients(lambda: M.loss_and_accuracy(M.forward(params, cfg, batch), batch)[0],
                              dict(params.items()), max_coords=6, rng=rng)
        bad = [r for r in res if not r.ok(1e-4)]
        if bad:
            return f"{base}: {bad[0].name} relative error {bad[0].worst_rel_error:.2e}"
    return None


def check_equivariance():
    rng = np.random.default_rng(5)
    cfg = _small_model("none", d=16, heads=4)
    params = M.init_params(cfg, rng)
    b = _batch(cfg, rng, 6, 3)
    perm = rng.permutation(b.length)
    pb = M.Batch(b.tokens[:, perm], b.mask[:, perm], b.targets[:, perm], b.positions)
    diff = np.abs(M.forward(params, cfg, b).data[:, perm] - M.forward(params, cfg, pb).data).max()
    return None if diff <= 1e-5 else f"max deviation {diff:.2e}"


def check_ood_monitor():
    rng = np.random.default_rng(6)
    std = _small_model("learned", L=20, dtype="float32")
    params = M.init_params(std, rng)
    mon = enc.PositionMonitor()
    M.forward(params, std, _batch(std, rng, 15, 2), monitor=mon)
    if not mon.out_of_range:
        return "standard learned beyond its table was not flagged"
    rnd = _small_model("learned+rand", L=64, dtype="float32")
    params = M.init_params(rnd, rng)
    mon = enc.PositionMonitor()
    for length in range(11, 33):
        M.forward(params, rnd, _batch(rnd, rng, length, 2), monitor=mon)
    if mon.out_of_range or mon.min_index < 1 or mon.max_index > 64:
        return f"randomized used indices [{mon.min_index}, {mon.max_index}]"
    return None


CHECKS = (
    ("task oracles", check_oracles),
    ("position sampling", check_sampling),
    ("identity reduction", check_identity_reduction),
    ("gradients", check_gradients_small),
    ("permutation equivariance", check_equivariance),
    ("out-of-range detection", check_ood_monitor),
)


def run_all(report=print) -> int:
    failures = 0
    for name, fn in CHECKS:
        start = time.perf_counter()
        problem = fn()
        status = "ok" if problem is None else f"FAIL: {problem}"
        failures += problem is not None
        report(f"{name:<26} {status} ({time.perf_counter() - start:.1f}s)")
    return failures

"""Desk-scale experiment set behind the length-generalization contrasts.

Each contrast is a handful of (task, scheme, L) groups trained for three seeds
at lr 3e-4; a group's score is the best seed. Runs are cached on disk by config
echo, so the acceptance suite and ``scripts/run_desk.py`` share results.
"""
from __future__ import annotations

import os
from pathlib import Path

from .config import TrainConfig

SEEDS = (0, 1, 2)
BASE = TrainConfig(n_train=20, m_eval=100, max_position=512, d_model=32, blocks=2, heads=8,
                   batch_size=64, steps=20_000, lr=3e-4)

GROUPS = {
    "bucket_sort/sincos+rand": BASE.replace(task="bucket_sort", scheme="sincos+rand"),
    "bucket_sort/sincos": BASE.replace(task="bucket_sort", scheme="sincos"),
    "even_pairs/sincos+rand": BASE.replace(task="even_pairs", scheme="sincos+rand"),
    "even_pairs/sincos+rand+unsorted": BASE.replace(task="even_pairs", scheme="sincos+rand+unsorted"),
    "reverse_string/relative+rand": BASE.replace(task="reverse_string", scheme="relative+rand"),
    "reverse_string/relative": BASE.replace(task="reverse_string", scheme="relative"),
    "reverse_string/relative+rand@L256": BASE.replace(task="reverse_string", scheme="relative+rand",
                                                      max_position=256),
    "reverse_string/relative+rand@L1024": BASE.replace(task="reverse_string", scheme="relative+rand",
                                                       max_position=1024),
}


def default_root() -> Path:
    env = os.environ.get("LENGTHGEN_DESK_DIR")
    return Path(env) if env else Path(__file__).resolve().parents[2] / "runs" / "desk"


def members(groups=None, seeds=SEEDS):
    """Seed-major order: every group gets seed 0 before any group gets seed 1."""
    names = list(groups or GROUPS)
    return [(name, GROUPS[name].replace(seed=s)) for s in seeds for name in names]


def run_dir(root, config: TrainConfig) -> Path:
    # L is part of the directory so the L sweep does not collide
    from .harness import run_dir as base_dir

    d = base_dir(root, config)
    return d.parent / f"L{config.max_position}" / d.name


def run(config: TrainConfig, root=None):
    from .harness import run_member_at

    return run_member_at(run_dir(root or default_root(), config), config)


def cached(config: TrainConfig, root=None):
    """The stored report for ``config`` or None when it has not been run."""
    from .harness import load_report

    d = run_dir(root or default_root(), config)
    echo = d / "config.txt"
    if echo.exists() and (d / "summary.json").exists() and echo.read_text() == config.to_text():
        return load_report(d)
    return None


def group_score(name: str, root=None, compute: bool = True):
    """Best score over seeds, or None if a member is missing and ``compute`` is off."""
    scores = []
    for s in SEEDS:
        cfg = GROUPS[name].replace(seed=s)
        rep = run(cfg, root) if compute else cached(cfg, root)
        if rep is None:
            return None
        scores.append(rep.score)
    return max(scores)

"""Command-line experiment runner: ``lengthgen <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, harness, tasks
from .checkpoint import load_params
from .config import LEARNING_RATES, TrainConfig, parse_pairs, from_pairs
from .errors import InvalidArgument, NumericDomainError

log = logging.getLogger("lengthgen")

# flag name -> TrainConfig field
CONFIG_FLAGS = {
    "task": "task", "scheme": "scheme", "n": "n_train", "m": "m_eval", "max_position": "max_position",
    "steps": "steps", "batch_size": "batch_size", "lr": "lr", "seed": "seed", "eval_batch": "eval_batch",
}


def _csv_list(kind):
    def parse(text):
        try:
            items = [kind(v) for v in text.split(",") if v.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None
        if not items:
            raise argparse.ArgumentTypeError("list must not be empty")
        return items
    return parse


def _config_flags(p, lists=()):
    p.add_argument("--config", help="flat 'key = value' file; flags override it")
    p.add_argument("--task")
    p.add_argument("--scheme", type=_csv_list(str) if "scheme" in lists else str,
                   help="<base>[+rand][+unsorted]" + (", comma-separated" if "scheme" in lists else ""))
    p.add_argument("--n", type=int, help="maximum training length N")
    p.add_argument("--m", type=int, help="maximum evaluation length M")
    p.add_argument("--max-position", type=_csv_list(int) if "max_position" in lists else int,
                   help="L for randomized schemes" + (", comma-separated" if "max_position" in lists else ""))
    p.add_argument("--steps", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-batch", type=int, help="instances per evaluation length")
    p.add_argument("--paper-scale", action="store_true", help="N=40, M=500, L=2048, batch 128, 2M steps")
    p.add_argument("--out", help="output root (default $LENGTHGEN_OUT or ./runs)")


def build_config(args, **skip) -> TrainConfig:
    """Defaults, then the config file, then explicit flags."""
    base = TrainConfig.paper_scale() if args.paper_scale else TrainConfig()
    if args.config:
        base = from_pairs(TrainConfig, parse_pairs(Path(args.config).read_text()), base)
    changes = {}
    for flag, name in CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None and flag not in skip:
            changes[name] = value
    return base.replace(**changes)


def out_root(args) -> Path:
    return Path(args.out or os.environ.get("LENGTHGEN_OUT") or "runs")


# ---------------------------------------------------------------------------
# run execution


def _write_error(directory: Path, config: TrainConfig, exc: BaseException) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.txt").write_text(config.to_text())
    body = {"error": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
    step = getattr(exc, "step", None)
    if step is not None:
        body["step"] = step
    (directory / "error.json").write_text(json.dumps(body, indent=2) + "\n")


def execute(config: TrainConfig, directory: Path) -> harness.EvalReport:
    """Train, evaluate and persist one run; failures leave an error manifest behind."""
    harness.validate(config)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.txt").write_text(config.to_text())
    try:
        result = harness.train(config, callback=lambda r: log.info("step %d loss %.4f acc %.3f", r.step, r.loss,
                                                                   r.accuracy))
        (directory / "trace.csv").write_text(harness.trace_csv(result.trace))
        report = harness.evaluate(result.params, config)
        report.steps_per_sec = result.steps_per_sec
        harness.write_run(directory, config, result, report)
    except Exception as exc:
        _write_error(directory, config, exc)
        raise
    return report


def _member(job):
    config, directory = job
    return execute(config, Path(directory))


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args):
    config = build_config(args)
    directory = harness.run_dir(out_root(args), config)
    report = execute(config, directory)
    print(f"{directory}: score {report.score:.4f} ({report.steps_per_sec:.1f} steps/s)")
    if args.capture:
        for func in (cmd_analyze_pca, cmd_analyze_attention):
            func(argparse.Namespace(run=str(directory), m=None, seed=0, output=None))


def cmd_eval(args):
    """Re-evaluate a run; with the stored settings the regenerated CSV must match byte for byte."""
    directory = Path(args.run)
    config = TrainConfig.from_text((directory / "config.txt").read_text())
    overridden = args.m is not None or args.eval_batch is not None
    if args.eval_batch is not None:
        config = config.replace(eval_batch=args.eval_batch)
    if args.m is not None:
        config = config.replace(m_eval=args.m)
    report = harness.evaluate(load_params(directory / "params"), config)
    text = report.to_csv()
    if args.output:
        Path(args.output).write_text(text)
    print(f"score {report.score:.4f}")
    stored = directory / "results.csv"
    if overridden or not stored.exists():
        return 0
    if stored.read_text() != text:
        print("regenerated results differ from the stored results.csv", file=sys.stderr)
        return 1
    print("matches stored results.csv")
    return 0


def cmd_sweep(args):
    base = build_config(args, scheme=True, lr=True, seed=True)
    schemes = args.scheme or [base.scheme]
    seeds = args.seeds or [base.seed]
    lrs = args.lrs or list(LEARNING_RATES)
    root = out_root(args)
    jobs = [(base.replace(scheme=s, seed=k, lr=lr), harness.run_dir(root, base.replace(scheme=s, seed=k, lr=lr)))
            for s in schemes for lr in lrs for k in seeds]
    for cfg, _ in jobs:
        harness.validate(cfg)
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            reports = list(pool.map(_member, jobs))
    else:
        reports = [_member(j) for j in jobs]
    summary = {}
    for (task, scheme), group in harness.group_reports(reports).items():
        agg = harness.aggregate(group)
        summary[f"{task}/{scheme}"] = {"max": agg.max, "mean": agg.mean, "std": agg.std, "best_lr": agg.best_lr,
                                       "runs": agg.count}
        print(f"{task} {scheme}: max {agg.max:.4f} mean {agg.mean:.4f} +- {agg.std:.4f} (lr {agg.best_lr:g})")
    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def cmd_ablate_L(args):
    base = build_config(args, max_position=True)
    values = args.max_position or [256, 512, 1024]
    seeds = args.seeds or [base.seed]
    root = out_root(args) / "ablate-L"
    scores = harness.ablation_L_sweep(base, values, seeds, root)
    for L, s in scores.items():
        print(f"L={L}: {s:.4f}")
    root.mkdir(parents=True, exist_ok=True)
    (root / "scores.json").write_text(json.dumps({str(k): v for k, v in scores.items()}, indent=2) + "\n")


def cmd_ablate_sorting(args):
    base = build_config(args)
    seeds = args.seeds or [base.seed]
    root = out_root(args) / "ablate-sorting"
    scores = harness.ablation_sorting(base, seeds, root)
    for k, v in scores.items():
        print(f"{k}: {v:.4f}")
    (root / "scores.json").write_text(json.dumps(scores, indent=2) + "\n")


def cmd_throughput(args):
    base = build_config(args)
    short_n = args.n or 40
    result = harness.throughput_compare(base.replace(task=args.task or "missing_duplicate"), short_n=short_n,
                                        long_n=args.long_n, steps=args.steps or 200, warmup=args.warmup)
    body = {"short_randomized": result.short_randomized, "short_standard": result.short_standard,
            "long_standard": result.long_standard, "ratio": result.ratio, "overhead": result.overhead}
    print(json.dumps(body, indent=2))
    root = out_root(args)
    root.mkdir(parents=True, exist_ok=True)
    (root / "throughput.json").write_text(json.dumps(body, indent=2) + "\n")


def cmd_dump_corpus(args):
    spec = tasks.get_task(args.task or "reverse_string")
    rng = np.random.default_rng(args.seed or 0)
    hi = args.n or 20
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        for length in range(spec.min_length, hi + 1):
            for _ in range(args.count):
                inst = spec.sample_instance(length, rng)
                out.write(json.dumps({"task": spec.name, "length": length, "input": inst.x.tolist(),
                                      "target": inst.y.tolist()}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()


def _load_run(directory):
    directory = Path(directory)
    config = TrainConfig.from_text((directory / "config.txt").read_text())
    return config, load_params(directory / "params"), harness.model_config(config)


def cmd_analyze_pca(args):
    config, params, mcfg = _load_run(args.run)
    long_len = args.m or min(config.m_eval, 3 * config.n_train)
    rng = np.random.default_rng(args.seed or 0)
    fit = analysis.activation_dumps(params, mcfg, config.task, config.n_train, rng)
    proj = analysis.activation_dumps(params, mcfg, config.task, long_len, rng)
    target = Path(args.output or Path(args.run) / "pca.csv")
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("layer", "length", "pc1", "pc2"))
        for a, b in zip(fit, proj):
            res = analysis.pca_fit_project(a, b)
            for rows, length in ((res.fit, a.length), (res.projected, b.length)):
                for x, y in rows:
                    w.writerow((a.layer, length, repr(float(x)), repr(float(y))))
            print(f"layer {a.layer}: out-of-support {analysis.out_of_support(res.fit, res.projected):.3f}")
    print(f"wrote {target}")


def cmd_analyze_attention(args):
    config, params, mcfg = _load_run(args.run)
    length = args.m or config.n_train
    cap, _ = analysis.capture_run(params, mcfg, config.task, length, 1, np.random.default_rng(args.seed or 0))
    target = Path(args.output or Path(args.run) / f"attention_len{length}.csv")
    with open(target, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("layer", "query", "key", "weight"))
        for layer in range(mcfg.blocks):
            summary = analysis.attention_summary(cap, layer)[0]
            for q, k in np.ndindex(summary.shape):
                w.writerow((layer, q, k, repr(float(summary[q, k]))))
            if config.task == "reverse_string":
                band, mean = analysis.anti_diagonal_contrast(summary, length)
                print(f"layer {layer}: anti-diagonal {band:.4f} vs mean {mean:.4f}")
    print(f"wrote {target}")


def cmd_selfcheck(args):
    from .selfcheck import run_all

    failures = run_all(print)
    return 1 if failures else 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lengthgen", description="Randomized positional encoding experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and evaluate one run")
    _config_flags(p)
    p.add_argument("--capture", action="store_true", help="also dump PCA coordinates and attention maps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="re-evaluate a stored run from its checkpoint and config echo")
    p.add_argument("run", help="run directory")
    p.add_argument("--m", type=int)
    p.add_argument("--eval-batch", type=int)
    p.add_argument("--output", help="write the regenerated results CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid over schemes x lrs x seeds")
    _config_flags(p, lists=("scheme",))
    p.add_argument("--seeds", type=_csv_list(int))
    p.add_argument("--lrs", type=_csv_list(float))
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate-L", help="score across values of L")
    _config_flags(p, lists=("max_position",))
    p.add_argument("--seeds", type=_csv_list(int))
    p.set_defaults(func=cmd_ablate_L)

    p = sub.add_parser("ablate-sorting", help="sorted vs unsorted sampled positions")
    _config_flags(p)
    p.add_argument("--seeds", type=_csv_list(int))
    p.set_defaults(func=cmd_ablate_sorting)

    p = sub.add_parser("throughput", help="training steps/s at two train lengths")
    _config_flags(p)
    p.add_argument("--long-n", type=int, default=500)
    p.add_argument("--warmup", type=int, default=50)
    p.set_defaults(func=cmd_throughput)

    p = sub.add_parser("dump-corpus", help="write sampled instances as JSON lines")
    p.add_argument("--task")
    p.add_argument("--n", type=int, help="longest length to dump")
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int, default=10, help="instances per length")
    p.add_argument("--output")
    p.set_defaults(func=cmd_dump_corpus)

    for name, func, help_ in (("analyze-pca", cmd_analyze_pca, "PCA of activations at length N vs M"),
                              ("analyze-attention", cmd_analyze_attention, "max-over-heads attention maps")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("run", help="run directory")
        p.add_argument("--m", type=int, help="length to analyse")
        p.add_argument("--seed", type=int)
        p.add_argument("--output")
        p.set_defaults(func=func)

    p = sub.add_parser("selfcheck", help="oracle and invariant suites")
    p.set_defaults(func=cmd_selfcheck)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        code = args.func(args)
    except InvalidArgument as exc:
        parser.exit(2, f"lengthgen: error: {exc}\n")
    except NumericDomainError as exc:
        parser.exit(1, f"lengthgen: run failed: {exc}\n")
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())

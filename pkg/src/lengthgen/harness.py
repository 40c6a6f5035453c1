"""Training loop, per-length evaluation, aggregation, throughput and ablation drivers."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encodings as enc
from . import tasks
from .config import TrainConfig
from .errors import InvalidArgument, NumericDomainError
from .model import Batch, ModelConfig, count_correct, forward, init_params, loss_and_accuracy, make_batch
from .optim import AdamState, ParameterStore, adam_step, clip_global_norm
from .tensor import backward, no_grad

log = logging.getLogger(__name__)

CSV_COLUMNS = ("task", "scheme", "seed", "lr", "steps", "length", "accuracy")
EVAL_CHUNK = 100  # sequences per forward pass during evaluation


class TrainingDiverged(NumericDomainError):
    def __init__(self, step: int, config: TrainConfig):
        self.step = step
        self.config = config
        super().__init__(f"non-finite loss at step {step}; config:\n{config.to_text()}")


# ---------------------------------------------------------------------------
# setup


def max_padded_length(spec: tasks.TaskSpec, length: int) -> int:
    return length + spec.output_length(length)


def validate(config: TrainConfig) -> tuple[tasks.TaskSpec, enc.EncodingScheme]:
    spec = tasks.get_task(config.task)
    scheme = enc.parse_scheme(config.scheme, config.max_position)
    if config.n_train < spec.min_length:
        raise InvalidArgument(f"N={config.n_train} is below the {spec.name} minimum length {spec.min_length}")
    if config.m_eval <= config.n_train:
        raise InvalidArgument(f"M={config.m_eval} must exceed N={config.n_train}")
    if config.steps < 0 or config.batch_size < 1 or config.eval_batch < 1:
        raise InvalidArgument("steps must be >= 0, batch sizes >= 1")
    if config.lr < 0 or not math.isfinite(config.lr):
        raise InvalidArgument(f"learning rate must be finite and >= 0, got {config.lr}")
    need = max_padded_length(spec, config.n_train)
    if scheme.randomized and config.max_position < need:
        raise InvalidArgument(f"L={config.max_position} < N + f(N) = {need}")
    return spec, scheme


def model_config(config: TrainConfig) -> ModelConfig:
    spec, scheme = validate(config)
    rows = enc.learned_table_rows(scheme, max_padded_length(spec, config.n_train))
    return ModelConfig(spec.vocab_in, spec.vocab_out, scheme, d_model=config.d_model, blocks=config.blocks,
                       heads=config.heads, learned_rows=rows if scheme.base == "learned" else 0)


def _streams(seed: int):
    """Independent generators for init, data and positions, all derived from ``seed``."""
    init, data, pos = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(data), np.random.default_rng(pos)


def eval_rng(seed: int, length: int) -> np.random.Generator:
    return np.random.default_rng([seed, 0x5EED, length])


def fresh_params(config: TrainConfig) -> ParameterStore:
    return init_params(model_config(config), _streams(config.seed)[0])


# ---------------------------------------------------------------------------
# training


@dataclass
class TraceRow:
    step: int
    length: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    params: ParameterStore
    model: ModelConfig
    trace: list[TraceRow]
    steps_per_sec: float
    seconds: float


def curriculum_length(spec: tasks.TaskSpec, n_train: int, rng: np.random.Generator) -> int:
    """Training length drawn uniformly from ``{min_length, ..., N}``."""
    return int(rng.integers(spec.min_length, n_train + 1))


def _training_batch(spec, scheme, length, batch_size, data_rng, pos_rng) -> Batch:
    x, y = spec.sample_batch(length, batch_size, data_rng)
    n = x.shape[1] + y.shape[1]
    return make_batch(x, y, spec.pad_id, enc.sample_positions(n, scheme, pos_rng))


def train(config: TrainConfig, params: ParameterStore | None = None, callback=None) -> TrainResult:
    """Curriculum training: each step draws one length in ``[min, N]`` shared by the whole batch."""
    spec, scheme = validate(config)
    mcfg = model_config(config)
    init_rng, data_rng, pos_rng = _streams(config.seed)
    if params is None:
        params = init_params(mcfg, init_rng)
    state = AdamState(lr=config.lr)
    trace: list[TraceRow] = []
    window_loss = window_acc = 0.0
    window = 0
    start = time.perf_counter()
    for step in range(1, config.steps + 1):
        length = curriculum_length(spec, config.n_train, data_rng)
        batch = _training_batch(spec, scheme, length, config.batch_size, data_rng, pos_rng)
        params.zero_grad()
        try:
            loss, acc = loss_and_accuracy(forward(params, mcfg, batch), batch)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericDomainError(f"loss is {value}")
            backward(loss)
            clip_global_norm(params, config.max_norm)
            adam_step(params, state)
        except NumericDomainError as exc:
            raise TrainingDiverged(step, config) from exc
        window_loss += value
        window_acc += acc
        window += 1
        if step % config.log_every == 0 or step == config.steps:
            row = TraceRow(step, length, window_loss / window, window_acc / window)
            trace.append(row)
            window_loss = window_acc = 0.0
            window = 0
            if callback is not None:
                callback(row)
    seconds = time.perf_counter() - start
    sps = config.steps / seconds if seconds > 0 else float("inf")
    return TrainResult(params, mcfg, trace, sps, seconds)


def trace_csv(trace: list[TraceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("step", "length", "loss", "accuracy"))
    for r in trace:
        w.writerow((r.step, r.length, repr(r.loss), repr(r.accuracy)))
    return buf.getvalue()


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    task: str
    scheme: str
    seed: int
    lr: float
    steps: int
    accuracies: dict[int, float]
    seconds: float = 0.0
    steps_per_sec: float = float("nan")

    def __post_init__(self):
        if not self.accuracies:
            raise InvalidArgument("EvalReport needs at least one length")
        lengths = sorted(self.accuracies)
        if lengths != list(range(lengths[0], lengths[-1] + 1)):
            raise InvalidArgument("EvalReport lengths must be contiguous")

    @property
    def lengths(self) -> list[int]:
        return sorted(self.accuracies)

    @property
    def score(self) -> float:
        return float(np.mean([self.accuracies[k] for k in self.lengths]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for k in self.lengths:
            w.writerow((self.task, self.scheme, self.seed, repr(self.lr), self.steps, k, repr(self.accuracies[k])))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EvalReport":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise InvalidArgument("results CSV has no rows")
        first = rows[0]
        acc = {int(r["length"]): float(r["accuracy"]) for r in rows}
        return cls(first["task"], first["scheme"], int(first["seed"]), float(first["lr"]), int(first["steps"]), acc)


def evaluate(params: ParameterStore, config: TrainConfig, lengths=None, monitor: enc.PositionMonitor | None = None,
             chunk: int = EVAL_CHUNK) -> EvalReport:
    """Per-token accuracy on one batch of ``eval_batch`` instances per length (default ``N+1..M``)."""
    spec, scheme = validate(config)
    mcfg = model_config(config)
    lengths = list(range(config.n_train + 1, config.m_eval + 1)) if lengths is None else list(lengths)
    if not lengths:
        raise InvalidArgument("evaluate: no lengths given")
    if scheme.randomized:
        for ell in lengths:
            n = max_padded_length(spec, ell)
            if n > config.max_position:
                raise InvalidArgument(f"length {ell} pads to n = {n} > L = {config.max_position}")
    accuracies = {}
    start = time.perf_counter()
    with no_grad():
        for ell in lengths:
            spec.check_length(ell)
            rng = eval_rng(config.seed, ell)
            x, y = spec.sample_batch(ell, config.eval_batch, rng)
            positions = enc.sample_positions(x.shape[1] + y.shape[1], scheme, rng)
            hits = total = 0
            for lo in range(0, config.eval_batch, chunk):
                b = make_batch(x[lo:lo + chunk], y[lo:lo + chunk], spec.pad_id, positions)
                c, t = count_correct(forward(params, mcfg, b, monitor=monitor), b)
                hits += c
                total += t
            accuracies[ell] = hits / total
    return EvalReport(config.task, config.scheme, config.seed, config.lr, config.steps, accuracies,
                      seconds=time.perf_counter() - start)


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class Aggregate:
    max: float
    mean: float
    std: float
    best_lr: float
    count: int


def aggregate(reports) -> Aggregate:
    """Max over every (seed, lr); mean and sample std over seeds at the lr with the highest mean."""
    reports = list(reports)
    if not reports:
        raise InvalidArgument("aggregate: empty group")
    by_lr: dict[float, list[float]] = {}
    for r in reports:
        by_lr.setdefault(r.lr, []).append(r.score)
    best_lr = max(sorted(by_lr), key=lambda lr: np.mean(by_lr[lr]))
    scores = by_lr[best_lr]
    std = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
    return Aggregate(max(r.score for r in reports), float(np.mean(scores)), std, best_lr, len(reports))


def group_reports(reports) -> dict[tuple[str, str], list[EvalReport]]:
    out: dict[tuple[str, str], list[EvalReport]] = {}
    for r in reports:
        out.setdefault((r.task, r.scheme), []).append(r)
    return out


def summary_json(report: EvalReport, agg: Aggregate | None = None) -> str:
    agg = agg or aggregate([report])
    body = {"score": report.score, "max": agg.max, "mean": agg.mean, "std": agg.std,
            "steps_per_sec": report.steps_per_sec}
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# run directories


def run_dir(root, config: TrainConfig) -> Path:
    return Path(root) / config.task / config.scheme / f"seed{config.seed}_lr{config.lr:g}"


def write_run(directory, config: TrainConfig, result: TrainResult, report: EvalReport) -> Path:
    from .checkpoint import save_params

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.txt").write_text(config.to_text())
    (directory / "trace.csv").write_text(trace_csv(result.trace))
    save_params(result.params, directory / "params")
    (directory / "results.csv").write_text(report.to_csv())
    (directory / "summary.json").write_text(summary_json(report))
    return directory


def load_report(directory) -> EvalReport:
    directory = Path(directory)
    report = EvalReport.from_csv((directory / "results.csv").read_text())
    summary = json.loads((directory / "summary.json").read_text())
    report.steps_per_sec = summary.get("steps_per_sec", float("nan"))
    return report


def run_member_at(directory, config: TrainConfig, reuse: bool = True) -> EvalReport:
    """Train and evaluate ``config`` into ``directory``; a finished run with the same config echo is reused."""
    directory = Path(directory)
    echo = directory / "config.txt"
    if reuse and echo.exists() and (directory / "summary.json").exists() and echo.read_text() == config.to_text():
        return load_report(directory)
    log.info("training %s %s seed=%d lr=%g L=%d", config.task, config.scheme, config.seed, config.lr,
             config.max_position)
    result = train(config)
    report = evaluate(result.params, config)
    report.steps_per_sec = result.steps_per_sec
    write_run(directory, config, result, report)
    return report


def run_member(config: TrainConfig, root, reuse: bool = True) -> EvalReport:
    return run_member_at(run_dir(root, config), config, reuse)


# ---------------------------------------------------------------------------
# throughput and ablations


def measure_steps_per_sec(config: TrainConfig, steps: int = 200, warmup: int = 50) -> float:
    """Steady-state optimizer steps per second; the first ``warmup`` steps are not timed."""
    spec, scheme = validate(config)
    mcfg = model_config(config)
    init_rng, data_rng, pos_rng = _streams(config.seed)
    params = init_params(mcfg, init_rng)
    state = AdamState(lr=config.lr)
    start = 0.0
    for step in range(warmup + steps):
        if step == warmup:
            start = time.perf_counter()
        length = curriculum_length(spec, config.n_train, data_rng)
        batch = _training_batch(spec, scheme, length, config.batch_size, data_rng, pos_rng)
        params.zero_grad()
        loss, _ = loss_and_accuracy(forward(params, mcfg, batch), batch)
        backward(loss)
        clip_global_norm(params, config.max_norm)
        adam_step(params, state)
    return steps / (time.perf_counter() - start)


@dataclass
class Throughput:
    short_randomized: float
    short_standard: float
    long_standard: float

    @property
    def ratio(self) -> float:
        return self.short_randomized / self.long_standard

    @property
    def overhead(self) -> float:
        """Relative gap between randomized and standard at the short length."""
        a, b = self.short_randomized, self.short_standard
        return abs(a - b) / max(a, b)


def throughput_compare(base: TrainConfig, short_n: int = 40, long_n: int = 500, steps: int = 200,
                       warmup: int = 50) -> Throughput:
    """Randomized relative at ``short_n`` against standard relative at ``short_n`` and at ``long_n``."""
    spec = tasks.get_task(base.task)
    L = max(base.max_position, max_padded_length(spec, short_n))
    rand = base.replace(scheme="relative+rand", n_train=short_n, m_eval=short_n + 1, max_position=L)
    std = base.replace(scheme="relative", n_train=short_n, m_eval=short_n + 1, max_position=L)
    long = std.replace(n_train=long_n, m_eval=long_n + 1)
    # interleave the two short measurements so drift in machine load hits both
    r1 = measure_steps_per_sec(rand, steps // 2, warmup)
    s1 = measure_steps_per_sec(std, steps // 2, warmup)
    r2 = measure_steps_per_sec(rand, steps - steps // 2, warmup)
    s2 = measure_steps_per_sec(std, steps - steps // 2, warmup)
    return Throughput(2 / (1 / r1 + 1 / r2), 2 / (1 / s1 + 1 / s2), measure_steps_per_sec(long, steps, warmup))


def ablation_L_sweep(base: TrainConfig, L_values, seeds, root) -> dict[int, float]:
    """Best-of-seeds score per ``L``; every ``L`` must cover the longest padded eval length."""
    spec = tasks.get_task(base.task)
    need = max_padded_length(spec, base.m_eval)
    out = {}
    for L in L_values:
        if L < need:
            raise InvalidArgument(f"L={L} is below the longest padded eval length {need}")
        sub = Path(root) / f"L{int(L)}"
        out[int(L)] = max(run_member(base.replace(max_position=int(L), seed=s), sub).score for s in seeds)
    return out


def ablation_sorting(base: TrainConfig, seeds, root) -> dict[str, float]:
    """Best-of-seeds score with sorted and with unsorted sampled positions."""
    scheme = enc.parse_scheme(base.scheme, base.max_position)
    if not scheme.randomized:
        raise InvalidArgument(f"sorting ablation needs a randomized scheme, got {base.scheme}")
    sorted_cfg = base.replace(scheme=f"{scheme.base}+rand")
    unsorted_cfg = base.replace(scheme=f"{scheme.base}+rand+unsorted")
    return {
        "sorted": max(run_member(sorted_cfg.replace(seed=s), root).score for s in seeds),
        "unsorted": max(run_member(unsorted_cfg.replace(seed=s), root).score for s in seeds),
    }

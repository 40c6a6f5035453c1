"""Algorithmic reasoning tasks: generators, oracles and reference implementations.

Each task maps an input token sequence of length ``l`` to a target sequence
of length ``output_length(l)``. Token ids are contiguous from 0 within each
task's input vocabulary; id ``vocab_in`` is the PAD / empty token placed in
the answer slots of the model input.

Every task carries two independent ways of computing the target: ``oracle``
(token-level algorithm, used for data generation) and ``reference`` (a second
formulation, e.g. big-integer arithmetic or a closed form). They are checked
against each other by :func:`exhaustive_check` and :func:`spot_check`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgument

MODULUS = 5

# shared arithmetic token ids (digits are 0..4)
PLUS, MINUS, TIMES, LPAREN, RPAREN, VAR, EQUALS = 5, 6, 7, 8, 9, 10, 11
_ARITH_SYMBOLS = "01234+-*()z="

# stack manipulation ids
POP, PUSH_A, PUSH_B = 2, 3, 4
# missing duplicate placeholder
HOLE = 2
# binary operator token for addition / multiplication
BIN_OP = 2


@dataclass(frozen=True)
class TaskSpec:
    name: str
    level: str
    vocab_in: int
    vocab_out: int
    baseline: float
    min_length: int
    out_len: Callable[[int], int]
    generate: Callable[[np.random.Generator, int], list]
    oracle_fn: Callable[[list], list]
    reference_fn: Callable[[list], list]
    valid_fn: Callable[[list], bool]
    batch_oracle: Callable[[np.ndarray], np.ndarray] | None = None
    uniform_alphabet: bool = False
    permutation_invariant: bool = False
    symbols: str = field(default="")

    @property
    def pad_id(self) -> int:
        return self.vocab_in

    def output_length(self, length: int) -> int:
        return self.out_len(length)

    def check_length(self, length: int) -> None:
        if length < self.min_length:
            raise InvalidArgument(
                f"{self.name}: length {length} below task minimum {self.min_length}"
            )

    def oracle(self, x) -> np.ndarray:
        x = [int(t) for t in x]
        if not self.valid_fn(x):
            raise InvalidArgument(f"{self.name}: malformed input {x}")
        return np.asarray(self.oracle_fn(x), dtype=np.int64)

    def reference(self, x) -> np.ndarray:
        x = [int(t) for t in x]
        return np.asarray(self.reference_fn(x), dtype=np.int64)

    def sample_instance(self, length: int, rng: np.random.Generator) -> "TaskInstance":
        self.check_length(length)
        if self.uniform_alphabet:
            x = rng.integers(0, self.vocab_in, size=length).tolist()
        else:
            x = self.generate(rng, length)
        return TaskInstance(self.name, np.asarray(x, dtype=np.int64), self.oracle(x))

    def sample_batch(self, length: int, batch: int, rng: np.random.Generator):
        """Return ``(inputs, targets)`` integer arrays of shape (batch, l) and (batch, f(l))."""
        self.check_length(length)
        if self.uniform_alphabet and self.batch_oracle is not None:
            xs = rng.integers(0, self.vocab_in, size=(batch, length))
            return xs, self.batch_oracle(xs)
        insts = [self.sample_instance(length, rng) for _ in range(batch)]
        return np.stack([i.x for i in insts]), np.stack([i.y for i in insts])

    def decode(self, tokens) -> str:
        if not self.symbols:
            return " ".join(str(int(t)) for t in tokens)
        return "".join(self.symbols[int(t)] if t < len(self.symbols) else "_" for t in tokens)


@dataclass(frozen=True)
class TaskInstance:
    task: str
    x: np.ndarray
    y: np.ndarray

    @property
    def padded_length(self) -> int:
        return len(self.x) + len(self.y)


# ---------------------------------------------------------------------------
# regular tasks


def _even_pairs(x):
    changes = sum(1 for a, b in zip(x, x[1:]) if a != b)
    return [changes % 2]


def _even_pairs_ref(x):
    return [0 if x[0] == x[-1] else 1]


def _even_pairs_batch(xs):
    return ((xs[:, 1:] != xs[:, :-1]).sum(axis=1) % 2)[:, None]


def _parity(x):
    acc = 0
    for t in x:
        acc ^= t
    return [acc]


def _parity_ref(x):
    return [bin(int("".join(map(str, x)), 2)).count("1") % 2]


def _parity_batch(xs):
    return (xs.sum(axis=1) % 2)[:, None]


_CYCLE_MOVE = (0, 1, -1)


def _cycle(x):
    pos = 0
    for t in x:
        pos = (pos + _CYCLE_MOVE[t]) % MODULUS
    return [pos]


def _cycle_ref(x):
    return [(x.count(1) - x.count(2)) % MODULUS]


def _cycle_batch(xs):
    return (((xs == 1).sum(axis=1) - (xs == 2).sum(axis=1)) % MODULUS)[:, None]


def _flat_expr_gen(rng, length):
    tokens = []
    if length % 2 == 0:
        tokens.append(MINUS)
    operands = (length + 1) // 2
    for k in range(operands):
        if k:
            tokens.append(int(rng.choice((PLUS, MINUS, TIMES))))
        tokens.append(int(rng.integers(0, MODULUS)))
    return tokens


def _flat_expr_valid(x):
    if not x:
        return False
    body = x[1:] if (len(x) % 2 == 0 and x[0] == MINUS) else x
    if len(body) % 2 == 0:
        return False
    for i, t in enumerate(body):
        if i % 2 == 0 and not 0 <= t < MODULUS:
            return False
        if i % 2 == 1 and t not in (PLUS, MINUS, TIMES):
            return False
    return True


def _flat_expr(x):
    # multiplication binds tighter than + and -
    i, sign = 0, 1
    if len(x) % 2 == 0:
        sign, i = -1, 1
    total, term = 0, sign * x[i]
    i += 1
    while i < len(x):
        op, d = x[i], x[i + 1]
        if op == TIMES:
            term = (term * d) % MODULUS
        else:
            total = (total + term) % MODULUS
            term = d if op == PLUS else -d
        i += 2
    return [(total + term) % MODULUS]


def _python_eval(x):
    text = "".join(_ARITH_SYMBOLS[t] for t in x)
    return eval(text, {"__builtins__": {}}, {})  # noqa: S307 - text built from a closed token alphabet


def _flat_expr_ref(x):
    return [_python_eval(x) % MODULUS]


# ---------------------------------------------------------------------------
# deterministic context-free tasks


def _stack_valid(x):
    i = 0
    while i < len(x) and x[i] in (0, 1):
        i += 1
    return all(t in (POP, PUSH_A, PUSH_B) for t in x[i:]) and all(0 <= t <= 4 for t in x)


def _stack_gen(rng, length):
    k = int(rng.integers(0, length + 1))
    stack = rng.integers(0, 2, size=k).tolist()
    actions = rng.choice((POP, PUSH_A, PUSH_B), size=length - k).tolist()
    return stack + [int(a) for a in actions]


def _stack(x):
    stack = []
    for t in x:
        if t in (0, 1):
            stack.append(t)
        elif t == POP:
            if stack:
                stack.pop()
        else:
            stack.append(0 if t == PUSH_A else 1)
    # bottom-to-top contents, padded with token 0 up to the input length
    return stack + [0] * (len(x) - len(stack))


def _stack_ref(x):
    s = ""
    for t in x:
        if t == POP:
            s = s[:-1]
        else:
            s += "ab"[t if t < 2 else t - PUSH_A]
    return ["ab".index(c) for c in s.ljust(len(x), "a")]


def _reverse(x):
    return x[::-1]


def _reverse_ref(x):
    n = len(x)
    return [x[n - 1 - i] for i in range(n)]


def _nested_expr_gen(rng, length, _depth=0):
    if length == 1:
        return [int(rng.integers(0, MODULUS))]
    if length <= 4:
        return [MINUS] + _nested_expr_gen(rng, length - 1)
    left = int(rng.integers(1, length - 3))
    right = length - 3 - left
    op = int(rng.choice((PLUS, MINUS, TIMES)))
    return [LPAREN] + _nested_expr_gen(rng, left) + [op] + _nested_expr_gen(rng, right) + [RPAREN]


def _apply(op, a, b):
    if op == PLUS:
        return (a + b) % MODULUS
    if op == MINUS:
        return (a - b) % MODULUS
    return (a * b) % MODULUS


def _parse_nested(x, z=None):
    """Evaluate E := digit | z | '-' E | '(' E op E ')' over Z_5; raises on malformed input."""
    stack = []  # iterative to avoid recursion limits on long inputs
    # frames: ("neg",) pending negation, ("open",) awaiting left, ("op", left, op) awaiting right
    i, n = 0, len(x)
    value = None
    while True:
        if value is None:
            if i >= n:
                raise InvalidArgument("expression ends early")
            t = x[i]
            i += 1
            if 0 <= t < MODULUS:
                value = t
            elif t == VAR and z is not None:
                value = z
            elif t == MINUS:
                stack.append(("neg",))
                continue
            elif t == LPAREN:
                stack.append(("open",))
                continue
            else:
                raise InvalidArgument(f"unexpected token {t} at {i - 1}")
        if not stack:
            return value, i
        frame = stack.pop()
        if frame[0] == "neg":
            value = (-value) % MODULUS
        elif frame[0] == "open":
            if i >= n or x[i] not in (PLUS, MINUS, TIMES):
                raise InvalidArgument(f"expected operator at {i}")
            stack.append(("op", value, x[i]))
            i += 1
            value = None
        else:
            if i >= n or x[i] != RPAREN:
                raise InvalidArgument(f"expected ')' at {i}")
            i += 1
            value = _apply(frame[2], frame[1], value)


def _nested_valid(x):
    try:
        _, end = _parse_nested(x)
    except InvalidArgument:
        return False
    return end == len(x)


def _nested(x):
    return [_parse_nested(x)[0]]


def _nested_ref(x):
    return [_python_eval(x) % MODULUS]


def _equation_gen(rng, length):
    expr = _nested_expr_gen(rng, length - 2)
    leaves = [i for i, t in enumerate(expr) if 0 <= t < MODULUS]
    slot = leaves[int(rng.integers(0, len(leaves)))]
    rhs = _parse_nested(expr)[0]
    expr[slot] = VAR
    return expr + [EQUALS, rhs]


def _equation_split(x):
    if len(x) < 3 or x[-2] != EQUALS or not 0 <= x[-1] < MODULUS:
        raise InvalidArgument("equation must end with '= digit'")
    return x[:-2], x[-1]


def _equation_valid(x):
    try:
        lhs, _ = _equation_split(x)
        if lhs.count(VAR) != 1:
            return False
        _, end = _parse_nested(lhs, z=0)
    except InvalidArgument:
        return False
    return end == len(lhs) and _equation(x) is not None


def _equation(x):
    lhs, rhs = _equation_split(x)
    for z in range(MODULUS):
        if _parse_nested(lhs, z=z)[0] == rhs:
            return [z]
    return None


def _equation_ref(x):
    lhs, rhs = x[:-2], x[-1]
    for z in range(MODULUS):
        sub = [z if t == VAR else t for t in lhs]
        if _python_eval(sub) % MODULUS == rhs:
            return [z]
    raise InvalidArgument("equation has no solution")


# ---------------------------------------------------------------------------
# context-sensitive tasks


def _duplicate(x):
    return x + x


def _duplicate_ref(x):
    return [x[i % len(x)] for i in range(2 * len(x))]


def _missing_dup_gen(rng, length):
    half = (length + 1) // 2
    x = rng.integers(0, 2, size=half).tolist()
    w = x + x[: length - half]
    candidates = [p for p in range(length) if p >= half or p + half < length]
    w[candidates[int(rng.integers(0, len(candidates)))]] = HOLE
    return w


def _missing_dup_valid(x):
    n = len(x)
    if n < 2 or x.count(HOLE) != 1 or any(t not in (0, 1, HOLE) for t in x):
        return False
    half = (n + 1) // 2
    p = x.index(HOLE)
    if p < half and p + half >= n:
        return False
    return all(x[i] == x[i + half] for i in range(n - half) if HOLE not in (x[i], x[i + half]))


def _missing_dup(x):
    half = (len(x) + 1) // 2
    p = x.index(HOLE)
    return [x[p + half] if p < half else x[p - half]]


def _missing_dup_ref(x):
    half = (len(x) + 1) // 2
    for c in (0, 1):
        filled = [c if t == HOLE else t for t in x]
        if filled == filled[:half] + filled[: len(x) - half]:
            return [c]
    raise InvalidArgument("no consistent fill")


def _odds_first(x):
    return x[0::2] + x[1::2]


def _odds_first_ref(x):
    odd = [t for pos, t in enumerate(x, start=1) if pos % 2 == 1]
    even = [t for pos, t in enumerate(x, start=1) if pos % 2 == 0]
    return odd + even


def _odds_first_batch(xs):
    return np.concatenate([xs[:, 0::2], xs[:, 1::2]], axis=1)


def _binop_gen(rng, length):
    left = int(rng.integers(1, length - 1))
    a = rng.integers(0, 2, size=left).tolist()
    b = rng.integers(0, 2, size=length - 1 - left).tolist()
    return a + [BIN_OP] + b


def _binop_valid(x):
    if x.count(BIN_OP) != 1 or any(t not in (0, 1, BIN_OP) for t in x):
        return False
    k = x.index(BIN_OP)
    return 0 < k < len(x) - 1


def _bits_add(a, b):
    # ripple-carry over msb-first bit lists
    a, b = a[::-1], b[::-1]
    out, carry = [], 0
    for i in range(max(len(a), len(b))):
        s = (a[i] if i < len(a) else 0) + (b[i] if i < len(b) else 0) + carry
        out.append(s & 1)
        carry = s >> 1
    if carry:
        out.append(1)
    return out[::-1]


def _pad_bits(bits, width):
    bits = bits[-width:] if len(bits) > width else bits
    return [0] * (width - len(bits)) + bits


def _binary_addition(x):
    k = x.index(BIN_OP)
    return _pad_bits(_bits_add(x[:k], x[k + 1 :]), len(x) - 1)


def _bits_of(value, width):
    return [int(c) for c in format(value, f"0{width}b")]


def _int_of(bits):
    return int("".join(map(str, bits)), 2)


def _binary_addition_ref(x):
    k = x.index(BIN_OP)
    return _bits_of(_int_of(x[:k]) + _int_of(x[k + 1 :]), len(x) - 1)


def _binary_multiplication(x):
    # shift-and-add over bit lists
    k = x.index(BIN_OP)
    a, b = x[:k], x[k + 1 :]
    acc = [0]
    for shift, bit in enumerate(reversed(b)):
        if bit:
            acc = _bits_add(acc, a + [0] * shift)
    return _pad_bits(acc, len(x) - 1)


def _binary_multiplication_ref(x):
    k = x.index(BIN_OP)
    return _bits_of(_int_of(x[:k]) * _int_of(x[k + 1 :]), len(x) - 1)


def _sqrt(x):
    # digit-by-digit binary square root over bit pairs
    bits = ([0] if len(x) % 2 else []) + x
    root, rem = 0, 0
    for i in range(0, len(bits), 2):
        rem = (rem << 2) | (bits[i] << 1) | bits[i + 1]
        trial = (root << 2) | 1
        root <<= 1
        if rem >= trial:
            rem -= trial
            root |= 1
    width = (len(x) + 1) // 2
    return [(root >> (width - 1 - i)) & 1 for i in range(width)]


def _sqrt_ref(x):
    return _bits_of(math.isqrt(_int_of(x)), (len(x) + 1) // 2)


def _bucket_sort(x):
    counts = [0] * MODULUS
    for t in x:
        counts[t] += 1
    out = []
    for v, c in enumerate(counts):
        out.extend([v] * c)
    return out


def _bucket_sort_ref(x):
    return sorted(x)


def _bucket_sort_batch(xs):
    return np.sort(xs, axis=1)


def _alphabet_valid(size):
    return lambda x: len(x) > 0 and all(0 <= t < size for t in x)


def _one(_):
    return 1


def _same(n):
    return n


TASKS: dict[str, TaskSpec] = {}


def _register(spec: TaskSpec) -> None:
    TASKS[spec.name] = spec


_register(TaskSpec("even_pairs", "R", 2, 2, 0.5, 1, _one, None, _even_pairs, _even_pairs_ref,
                   _alphabet_valid(2), _even_pairs_batch, uniform_alphabet=True, symbols="ab"))
_register(TaskSpec("modular_arithmetic_simple", "R", 8, 5, 0.2, 1, _one, _flat_expr_gen, _flat_expr,
                   _flat_expr_ref, _flat_expr_valid, symbols=_ARITH_SYMBOLS))
_register(TaskSpec("parity_check", "R", 2, 2, 0.5, 1, _one, None, _parity, _parity_ref,
                   _alphabet_valid(2), _parity_batch, uniform_alphabet=True,
                   permutation_invariant=True, symbols="ab"))
_register(TaskSpec("cycle_navigation", "R", 3, 5, 0.2, 1, _one, None, _cycle, _cycle_ref,
                   _alphabet_valid(3), _cycle_batch, uniform_alphabet=True,
                   permutation_invariant=True, symbols="=+-"))
_register(TaskSpec("stack_manipulation", "DCF", 5, 2, 0.5, 1, _same, _stack_gen, _stack, _stack_ref,
                   _stack_valid, symbols="abPAB"))
_register(TaskSpec("reverse_string", "DCF", 2, 2, 0.5, 1, _same, None, _reverse, _reverse_ref,
                   _alphabet_valid(2), lambda xs: xs[:, ::-1].copy(), uniform_alphabet=True, symbols="ab"))
_register(TaskSpec("modular_arithmetic", "DCF", 10, 5, 0.2, 1, _one, _nested_expr_gen, _nested,
                   _nested_ref, _nested_valid, symbols=_ARITH_SYMBOLS))
_register(TaskSpec("solve_equation", "DCF", 12, 5, 0.2, 3, _one, _equation_gen, _equation,
                   _equation_ref, _equation_valid, symbols=_ARITH_SYMBOLS))
_register(TaskSpec("duplicate_string", "CS", 2, 2, 0.5, 1, lambda n: 2 * n, None, _duplicate,
                   _duplicate_ref, _alphabet_valid(2), lambda xs: np.concatenate([xs, xs], axis=1),
                   uniform_alphabet=True, symbols="ab"))
_register(TaskSpec("missing_duplicate", "CS", 3, 2, 0.5, 2, _one, _missing_dup_gen, _missing_dup,
                   _missing_dup_ref, _missing_dup_valid, symbols="ab_"))
_register(TaskSpec("odds_first", "CS", 2, 2, 0.5, 1, _same, None, _odds_first, _odds_first_ref,
                   _alphabet_valid(2), _odds_first_batch, uniform_alphabet=True, symbols="ab"))
_register(TaskSpec("binary_addition", "CS", 3, 2, 0.5, 3, lambda n: n - 1, _binop_gen,
                   _binary_addition, _binary_addition_ref, _binop_valid, symbols="01+"))
_register(TaskSpec("binary_multiplication", "CS", 3, 2, 0.5, 3, lambda n: n - 1, _binop_gen,
                   _binary_multiplication, _binary_multiplication_ref, _binop_valid, symbols="01*"))
_register(TaskSpec("compute_sqrt", "CS", 2, 2, 0.5, 1, lambda n: (n + 1) // 2, None, _sqrt, _sqrt_ref,
                   _alphabet_valid(2), None, uniform_alphabet=True, symbols="01"))
_register(TaskSpec("bucket_sort", "CS", 5, 5, 0.2, 1, _same, None, _bucket_sort, _bucket_sort_ref,
                   _alphabet_valid(5), _bucket_sort_batch, uniform_alphabet=True,
                   permutation_invariant=True, symbols="01234"))

TASK_NAMES = tuple(TASKS)


def get_task(name: str) -> TaskSpec:
    try:
        return TASKS[name]
    except KeyError:
        raise InvalidArgument(f"unknown task {name!r}; expected one of {', '.join(TASKS)}") from None


def sample_instance(task, length: int, rng: np.random.Generator) -> TaskInstance:
    spec = get_task(task) if isinstance(task, str) else task
    return spec.sample_instance(length, rng)


def oracle(task, x) -> np.ndarray:
    spec = get_task(task) if isinstance(task, str) else task
    return spec.oracle(x)


# ---------------------------------------------------------------------------
# oracle validation

ENUMERATION_BUDGET = 2**20


@dataclass
class CheckReport:
    task: str
    checked: int
    mismatches: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and not self.mismatches


def exhaustive_check(task, max_length: int, budget: int = ENUMERATION_BUDGET) -> CheckReport:
    """Compare oracle and reference on every valid input of length <= ``max_length``."""
    spec = get_task(task) if isinstance(task, str) else task
    total = sum(spec.vocab_in**n for n in range(spec.min_length, max_length + 1))
    if total > budget:
        raise InvalidArgument(
            f"{spec.name}: exhaustive check up to length {max_length} needs {total} candidates, budget {budget}"
        )
    report = CheckReport(spec.name, 0)
    for n in range(spec.min_length, max_length + 1):
        for x in itertools.product(range(spec.vocab_in), repeat=n):
            x = list(x)
            if not spec.valid_fn(x):
                continue
            report.checked += 1
            got, want = spec.oracle_fn(x), spec.reference_fn(x)
            if list(got) != list(want) or len(got) != spec.output_length(n):
                report.mismatches.append((x, list(got), list(want)))
    return report


def spot_check(task, count: int, lengths, rng: np.random.Generator) -> CheckReport:
    """Compare oracle and reference on ``count`` sampled instances with lengths drawn from ``lengths``."""
    spec = get_task(task) if isinstance(task, str) else task
    lengths = list(lengths)
    report = CheckReport(spec.name, 0)
    for _ in range(count):
        n = lengths[int(rng.integers(0, len(lengths)))]
        inst = spec.sample_instance(n, rng)
        want = spec.reference(inst.x)
        report.checked += 1
        if not np.array_equal(inst.y, want) or len(inst.y) != spec.output_length(n):
            report.mismatches.append((inst.x.tolist(), inst.y.tolist(), want.tolist()))
    return report

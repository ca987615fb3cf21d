"""Synthetic verifiable-reward sequence tasks.

Three families:

* ``lock``: combination lock, exactly one accepted code.
* ``tree``: multi-path tree, ``n_accepting`` accepted leaves of a fixed depth.
* ``modchain``: a chain of modular operations encoded in the prompt; the
  answer is the final residue emitted as one token.

Every instance records its acceptance probability under the uniform policy,
computed by exact enumeration when it is built.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from uecrl.errors import InvalidArgument
from uecrl.seeding import derive_rng

MAX_VOCAB = 16
MAX_LEN = 8
ENUMERATION_BUDGET = 1_000_000
HARD_MAX_ACCEPTANCE = 1e-3
EASY_MIN_ACCEPTANCE = 0.05


@dataclass(frozen=True)
class TaskInstance:
    prompt_id: str
    family: str
    difficulty: str
    accepting: frozenset
    vocab_size: int
    max_len: int
    terminal_token: int | None = None
    seed: int = 0
    params: dict = field(default_factory=dict, compare=False, hash=False)
    uniform_acceptance: Fraction = Fraction(0)

    @property
    def reference_answer(self) -> tuple[int, ...]:
        """Smallest accepted sequence; a stable choice for warm-start priors."""
        return min(self.accepting)

    def digest(self) -> str:
        text = json.dumps(sorted(list(s) for s in self.accepting))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def verify(task: TaskInstance, output: Sequence[int]) -> int:
    """Binary reward: 1 iff the output, minus a trailing terminal token, is accepted."""
    out = tuple(int(t) for t in output)
    if task.terminal_token is not None and out and out[-1] == task.terminal_token:
        out = out[:-1]
    return int(out in task.accepting)


def _check_enumerable(vocab: int, length: int) -> None:
    if not 2 <= vocab <= MAX_VOCAB:
        raise InvalidArgument(f"vocab must be in [2, {MAX_VOCAB}], got {vocab}")
    if not 1 <= length <= MAX_LEN:
        raise InvalidArgument(f"length must be in [1, {MAX_LEN}], got {length}")
    if vocab**length > ENUMERATION_BUDGET:
        raise InvalidArgument(f"{vocab}^{length} sequences exceed the enumeration budget")


def uniform_acceptance(accepting: Iterable[tuple], vocab: int, max_len: int, terminal_token: int | None = None) -> Fraction:
    """Exact probability that the uniform policy emits an accepted response.

    Enumerates every reachable response (stopping at the terminal token or at
    ``max_len``) with its exact probability.
    """
    accepting = frozenset(accepting)
    total = Fraction(0)

    def walk(prefix: tuple, prob: Fraction) -> None:
        nonlocal total
        for tok in range(vocab):
            seq = prefix + (tok,)
            p = prob / vocab
            if terminal_token is not None and tok == terminal_token:
                if prefix in accepting:
                    total += p
            elif len(seq) == max_len:
                if seq in accepting:
                    total += p
            else:
                walk(seq, p)

    walk((), Fraction(1))
    return total


def _label(acceptance: Fraction) -> str:
    return "hard" if acceptance <= HARD_MAX_ACCEPTANCE else "easy"


def make_combination_lock(vocab: int, code_len: int, seed: int, prompt_id: str | None = None) -> TaskInstance:
    _check_enumerable(vocab, code_len)
    rng = derive_rng(seed, "lock", vocab, code_len)
    code = tuple(int(t) for t in rng.integers(0, vocab, size=code_len))
    accepting = frozenset([code])
    return TaskInstance(
        prompt_id=prompt_id or f"lock-v{vocab}-l{code_len}-s{seed}",
        family="lock",
        difficulty="hard" if vocab**code_len >= 1000 else "easy",
        accepting=accepting,
        vocab_size=vocab,
        max_len=code_len,
        seed=seed,
        params={"vocab": vocab, "code_len": code_len},
        uniform_acceptance=uniform_acceptance(accepting, vocab, code_len),
    )


def make_multipath_tree(vocab: int, depth: int, n_accepting: int, seed: int, prompt_id: str | None = None) -> TaskInstance:
    _check_enumerable(vocab, depth)
    n_leaves = vocab**depth
    if not 1 <= n_accepting <= n_leaves:
        raise InvalidArgument(f"n_accepting must be in [1, {n_leaves}], got {n_accepting}")
    rng = derive_rng(seed, "tree", vocab, depth, n_accepting)
    leaves = rng.choice(n_leaves, size=n_accepting, replace=False)
    accepting = frozenset(tuple(int(d) for d in np.unravel_index(int(i), (vocab,) * depth)) for i in leaves)
    acc = uniform_acceptance(accepting, vocab, depth)
    return TaskInstance(
        prompt_id=prompt_id or f"tree-v{vocab}-d{depth}-n{n_accepting}-s{seed}",
        family="tree",
        difficulty=_label(acc),
        accepting=accepting,
        vocab_size=vocab,
        max_len=depth,
        seed=seed,
        params={"vocab": vocab, "depth": depth, "n_accepting": n_accepting},
        uniform_acceptance=acc,
    )


_MOD_OPS = ("add", "mul", "sub")


def modchain_answer(start: int, ops: Sequence[tuple[str, int]], modulus: int) -> int:
    value = start % modulus
    for op, operand in ops:
        if op == "add":
            value = (value + operand) % modulus
        elif op == "mul":
            value = (value * operand) % modulus
        elif op == "sub":
            value = (value - operand) % modulus
        else:
            raise InvalidArgument(f"unknown modular op {op!r}")
    return value


def make_modular_chain(vocab: int, modulus: int, n_ops: int, seed: int, prompt_id: str | None = None) -> TaskInstance:
    _check_enumerable(vocab, 1)
    if not 2 <= modulus <= vocab:
        raise InvalidArgument("modulus must be in [2, vocab] so every residue is a token")
    rng = derive_rng(seed, "modchain", vocab, modulus, n_ops)
    start = int(rng.integers(0, modulus))
    ops = [(_MOD_OPS[int(rng.integers(0, 3))], int(rng.integers(1, modulus))) for _ in range(n_ops)]
    accepting = frozenset([(modchain_answer(start, ops, modulus),)])
    acc = uniform_acceptance(accepting, vocab, 1)
    return TaskInstance(
        prompt_id=prompt_id or f"mod-v{vocab}-m{modulus}-s{seed}",
        family="modchain",
        difficulty=_label(acc),
        accepting=accepting,
        vocab_size=vocab,
        max_len=1,
        seed=seed,
        params={"vocab": vocab, "modulus": modulus, "n_ops": n_ops, "start": start, "ops": ops},
        uniform_acceptance=acc,
    )


@dataclass
class CurriculumConfig:
    size: int = 20
    hard_fraction: float = 0.3
    vocab_size: int = 8
    hard_code_len: int = 4
    easy_depth: int = 2
    easy_accepting: int = 4
    modchain_fraction: float = 0.0
    modchain_ops: int = 3


@dataclass
class Curriculum:
    instances: list
    hard_fraction: float
    seed: int

    def __len__(self) -> int:
        return len(self.instances)

    def by_difficulty(self, difficulty: str) -> list:
        return [t for t in self.instances if t.difficulty == difficulty]

    def observed_hard_fraction(self) -> float:
        return len(self.by_difficulty("hard")) / len(self.instances)

    def digest(self) -> str:
        h = hashlib.sha256()
        for t in self.instances:
            h.update(f"{t.prompt_id}:{t.digest()};".encode())
        return h.hexdigest()[:16]


def make_curriculum(config: CurriculumConfig, seed: int) -> Curriculum:
    if config.size < 1:
        raise InvalidArgument("curriculum size must be positive")
    if not 0.0 <= config.hard_fraction <= 1.0:
        raise InvalidArgument("hard_fraction must lie in [0, 1]")
    v = config.vocab_size
    n_hard = int(round(config.size * config.hard_fraction))
    n_easy = config.size - n_hard
    n_mod = int(round(n_easy * config.modchain_fraction))
    rng = derive_rng(seed, "curriculum")
    instances = []
    for i in range(n_hard):
        task = make_combination_lock(v, config.hard_code_len, int(rng.integers(2**31)), prompt_id=f"lock-{i:03d}")
        if task.difficulty != "hard" or task.uniform_acceptance > HARD_MAX_ACCEPTANCE:
            raise InvalidArgument(f"hard pool lock {v}^{config.hard_code_len} is not hard")
        instances.append(task)
    for i in range(n_easy):
        if i < n_mod:
            task = make_modular_chain(v, v, config.modchain_ops, int(rng.integers(2**31)), prompt_id=f"mod-{i:03d}")
        else:
            task = make_multipath_tree(v, config.easy_depth, config.easy_accepting, int(rng.integers(2**31)), prompt_id=f"tree-{i:03d}")
        if task.uniform_acceptance < EASY_MIN_ACCEPTANCE:
            raise InvalidArgument(f"easy pool task {task.prompt_id} accepts with probability {float(task.uniform_acceptance):.3g} < {EASY_MIN_ACCEPTANCE}")
        instances.append(task)
    order = rng.permutation(len(instances))
    return Curriculum([instances[i] for i in order], config.hard_fraction, seed)


def _rebuild(record: dict) -> TaskInstance:
    p = record["params"]
    family = record["family"]
    if family == "lock":
        return make_combination_lock(p["vocab"], p["code_len"], record["seed"], prompt_id=record["prompt_id"])
    if family == "tree":
        return make_multipath_tree(p["vocab"], p["depth"], p["n_accepting"], record["seed"], prompt_id=record["prompt_id"])
    if family == "modchain":
        return make_modular_chain(p["vocab"], p["modulus"], p["n_ops"], record["seed"], prompt_id=record["prompt_id"])
    raise InvalidArgument(f"unknown task family {family!r}")


def task_record(task: TaskInstance) -> dict:
    params = {k: v for k, v in task.params.items() if k not in ("start", "ops")}
    return {
        "prompt_id": task.prompt_id,
        "family": task.family,
        "difficulty": task.difficulty,
        "seed": task.seed,
        "params": params,
        "digest": task.digest(),
    }


def save_curriculum(curriculum: Curriculum, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"hard_fraction": curriculum.hard_fraction, "seed": curriculum.seed}) + "\n")
        for task in curriculum.instances:
            fh.write(json.dumps(task_record(task)) + "\n")


def load_curriculum(path) -> Curriculum:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0])
    instances = []
    for line in lines[1:]:
        record = json.loads(line)
        task = _rebuild(record)
        if task.digest() != record["digest"]:
            raise InvalidArgument(f"accepting-set digest mismatch for {record['prompt_id']}")
        instances.append(task)
    return Curriculum(instances, header["hard_fraction"], header["seed"])


def enumerate_sequences(vocab: int, length: int):
    return itertools.product(range(vocab), repeat=length)

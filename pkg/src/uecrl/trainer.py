"""Outer training loop: GRPO, DAPO (clip-higher) or UEC-RL by configuration."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from uecrl import checkpoint as ckpt
from uecrl.controller import ReplayBuffer, UecConfig, replay_batch, uec_step
from uecrl.errors import CorruptState, InvalidArgument
from uecrl.metrics import MetricsWriter, config_hash, step_record, write_run_manifest
from uecrl.objective import ObjectiveConfig, ObjectiveStats, objective_and_gradient
from uecrl.policy import DEFAULT_FEATURIZER, ContextKey, PolicyParams, sample_sequence
from uecrl.seeding import derive_rng
from uecrl.tasks import Curriculum, CurriculumConfig, make_curriculum, verify

log = logging.getLogger(__name__)

ALGORITHMS = ("grpo", "dapo", "uec")
DAPO_EPS_HIGH = 0.3


@dataclass
class PriorConfig:
    """Peaked warm-start standing in for a pretrained model.

    At every context of a task the prior puts logit ``margin`` on the token
    of a reference path. For easy tasks the path is an accepted answer; for
    hard tasks ``hard_deviations`` positions are swapped for wrong tokens, so
    the answer is reachable only through low-probability choices.
    Margins of 0 give the uniform policy.
    """

    margin_easy: float = 0.0
    margin_hard: float = 0.0
    hard_deviations: int = 1


@dataclass
class TrainConfig:
    algorithm: str = "uec"
    learning_rate: float = 0.1
    batch_size: int = 8
    max_steps: int = 300
    eval_every: int = 0
    checkpoint_every: int = 0
    seed: int = 0
    policy_kind: str = "tabular"
    featurizer_id: str = DEFAULT_FEATURIZER
    eval_temperature: float = 0.2
    eval_top_p: float = 0.95
    eval_ks: tuple = (1, 4, 16)
    eval_samples: int = 32
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    uec: UecConfig = field(default_factory=UecConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    prior: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise InvalidArgument(f"algorithm must be one of {ALGORITHMS}")
        if not self.learning_rate > 0:
            raise InvalidArgument("learning_rate must be positive")
        if self.batch_size < 1 or self.max_steps < 0:
            raise InvalidArgument("batch_size must be positive and max_steps non-negative")
        self.eval_ks = tuple(int(k) for k in self.eval_ks)
        if self.eval_ks and max(self.eval_ks) > self.eval_samples:
            raise InvalidArgument("eval_samples must be >= every eval k")

    def effective_objective(self) -> ObjectiveConfig:
        obj = ObjectiveConfig(**asdict(self.objective))
        if self.algorithm == "grpo":
            obj.eps_high = obj.eps_low
        elif self.algorithm == "dapo" and obj.eps_high == obj.eps_low:
            obj.eps_high = DAPO_EPS_HIGH
        return obj

    def effective_uec(self) -> UecConfig:
        u = UecConfig(**asdict(self.uec))
        if self.algorithm != "uec":
            u.explore = False
            u.f_replay = 0
        return u


@dataclass
class TrainState:
    params: PolicyParams
    ref: PolicyParams
    buffer: ReplayBuffer
    curriculum: Curriculum
    global_step: int = 0
    records: list = field(default_factory=list)


def warm_start(params: PolicyParams, curriculum: Curriculum, prior: PriorConfig, seed: int) -> PolicyParams:
    """Write the prior logits for every context of every task (tabular only)."""
    if params.kind != "tabular":
        return params
    for task in curriculum.instances:
        margin = prior.margin_hard if task.difficulty == "hard" else prior.margin_easy
        if margin == 0:
            continue
        path = list(task.reference_answer)
        if task.difficulty == "hard" and prior.hard_deviations:
            rng = derive_rng(seed, "prior", task.prompt_id)
            n_dev = min(prior.hard_deviations, len(path))
            for pos in rng.choice(len(path), size=n_dev, replace=False):
                wrong = int(rng.integers(0, params.vocab_size - 1))
                path[pos] = wrong if wrong < path[pos] else wrong + 1
        prefixes = [()]
        for t in range(task.max_len):
            row = np.zeros(params.vocab_size)
            row[path[t]] = margin
            for prefix in prefixes:
                params.set_row(ContextKey(task.prompt_id, prefix), row)
            if t + 1 < task.max_len:
                prefixes = [p + (tok,) for p in prefixes for tok in range(params.vocab_size)]
    return params


def init_state(config: TrainConfig) -> TrainState:
    curriculum = make_curriculum(config.curriculum, config.seed)
    v = config.curriculum.vocab_size
    if config.policy_kind == "tabular":
        params = PolicyParams.tabular(v)
    elif config.policy_kind == "linear":
        params = PolicyParams.linear(v, config.featurizer_id)
    else:
        raise InvalidArgument(f"unknown policy kind {config.policy_kind!r}")
    warm_start(params, curriculum, config.prior, config.seed)
    return TrainState(
        params=params,
        ref=params.snapshot(),
        buffer=ReplayBuffer(config.uec.s_prime),
        curriculum=curriculum,
    )


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased 1 - C(n-c, k) / C(n, k)."""
    if k > n:
        raise InvalidArgument(f"k={k} exceeds the {n} available samples")
    if n - c < k:
        return 1.0
    return 1.0 - float(np.prod(1.0 - k / np.arange(n - c + 1, n + 1)))


def evaluate(
    params: PolicyParams,
    tasks: Sequence,
    k: int | Sequence[int],
    samples_per_task: int,
    seed: int,
    temperature: float = 0.2,
    top_p: float = 0.95,
    label: object = "eval",
) -> dict:
    """pass@1 and unbiased pass@k per difficulty class, plus ``all``.

    Returns ``{class: {"pass@1": ..., "pass@k": ..., "n_tasks": ...}}``.
    """
    ks = sorted({1, *([k] if isinstance(k, int) else k)})
    if max(ks) > samples_per_task:
        raise InvalidArgument(f"k={max(ks)} exceeds samples_per_task={samples_per_task}")
    frozen = params if params.frozen else params.snapshot()
    per_task = []
    for task in tasks:
        c = 0
        for i in range(samples_per_task):
            rng = derive_rng(seed, label, task.prompt_id, i)
            tokens, _, _ = sample_sequence(frozen, task.prompt_id, temperature, task.max_len, rng, task.terminal_token, top_p)
            c += verify(task, tokens)
        per_task.append((task.difficulty, {kk: pass_at_k(samples_per_task, c, kk) for kk in ks}))
    out = {}
    for cls in ("easy", "hard", "all"):
        rows = [scores for d, scores in per_task if cls == "all" or d == cls]
        if rows:
            out[cls] = {f"pass@{kk}": float(np.mean([r[kk] for r in rows])) for kk in ks}
            out[cls]["n_tasks"] = len(rows)
    return out


def _apply(state: TrainState, batch, obj: ObjectiveConfig, lr: float, stats: ObjectiveStats) -> float:
    value, grad = objective_and_gradient(state.params, batch, obj, state.ref, stats)
    state.params.apply_gradient(grad, lr)
    return value


def _cov_diagnostic(trajectories) -> float:
    lp = [x for t in trajectories for x in t.old_logprobs_t1]
    adv = [t.advantage for t in trajectories for _ in t.tokens]
    if len(lp) < 2:
        return 0.0
    lp = np.array(lp)
    adv = np.array(adv)
    return float(((lp - lp.mean()) * (adv - adv.mean())).mean())


def train_step(state: TrainState, config: TrainConfig) -> dict:
    obj = config.effective_objective()
    ucfg = config.effective_uec()
    step = state.global_step + 1
    cur = state.curriculum.instances
    mb_rng = derive_rng(config.seed, "minibatch", step)
    idx = mb_rng.choice(len(cur), size=config.batch_size, replace=config.batch_size > len(cur))
    tasks = [cur[int(i)] for i in idx]

    old = state.params.snapshot()
    out = uec_step(old, tasks, ucfg, state.buffer if ucfg.exploration_active else None, config.seed, step, obj)

    stats = ObjectiveStats()
    objective = 0.0
    if out.o_eff:
        objective = _apply(state, out.o_eff, obj, config.learning_rate, stats)
    state.global_step = step

    replayed = 0
    if ucfg.replay_active and step % ucfg.f_replay == 0:
        size = ucfg.replay_batch or max(len(out.o_eff), 1)
        batch = replay_batch(state.buffer, size, derive_rng(config.seed, "replay", step))
        if batch:
            _apply(state, batch, obj, config.learning_rate, ObjectiveStats())
            replayed = len(batch)

    if not math.isfinite(objective):
        raise CorruptState(f"non-finite objective at step {step}")

    regular = [t for g in out.regular_groups for t in g.trajectories]
    explored = [t for g in out.exploration_groups for t in g.trajectories]
    generated = regular + explored
    gap = [b - o for t in explored for b, o in zip(t.behavior_logprobs, t.old_logprobs_t1)]
    record = step_record(
        step=step,
        reward_mean=float(np.mean([t.reward for t in regular])),
        token_entropy_mean=float(np.mean([h for t in generated for h in t.entropies])),
        token_entropy_regular=float(np.mean([h for t in regular for h in t.entropies])),
        entropy_seq_mean=float(np.mean([sum(t.entropies) for t in regular])),
        response_length_mean=float(np.mean([len(t) for t in regular])),
        clip_fraction=stats.clip_fraction,
        difficult_fraction=out.difficult / len(tasks),
        buffer_size=len(state.buffer),
        explored_prompts=out.explored,
        o_eff_size=len(out.o_eff),
        replay_size=replayed,
        cov_diagnostic=_cov_diagnostic(out.o_eff),
        offpolicy_gap=float(np.mean(gap)) if gap else 0.0,
        objective=objective,
    )
    if config.eval_every and step % config.eval_every == 0:
        scores = evaluate(state.params, cur, config.eval_ks, config.eval_samples, config.seed, config.eval_temperature, config.eval_top_p, ("eval", step))
        for cls in ("all", "easy", "hard"):
            if cls in scores:
                for key, value in scores[cls].items():
                    if key.startswith("pass@"):
                        record[key if cls == "all" else f"{key}_{cls}"] = value
    return record


@dataclass
class TrainResult:
    state: TrainState
    records: list


def train(
    config: TrainConfig,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    quiet: bool = True,
) -> TrainResult:
    """Run ``config.max_steps`` main updates (resuming from ``resume`` if given).

    With ``out_dir`` the run writes ``metrics.jsonl``, a run manifest, and
    checkpoints every ``checkpoint_every`` steps.
    """
    state = init_state(config)
    if resume is not None:
        ckpt.restore(state, resume)
    writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if resume is None:
            write_run_manifest(out_dir, config, state.curriculum)
        writer = MetricsWriter(out_dir / "metrics.jsonl", append=resume is not None)
    try:
        while state.global_step < config.max_steps:
            record = train_step(state, config)
            state.records.append(record)
            if writer is not None:
                writer.emit(record)
            if not quiet:
                log.info("step %d reward %.3f entropy %.3f", record["step"], record["reward_mean"], record["token_entropy_mean"])
            if out_dir is not None and config.checkpoint_every and state.global_step % config.checkpoint_every == 0:
                ckpt.save(state, config, out_dir)
    except BaseException:
        if out_dir is not None:
            ckpt.save(state, config, out_dir, tag="abort")
        raise
    finally:
        if writer is not None:
            writer.close()
    return TrainResult(state, state.records)


__all__ = [
    "PriorConfig",
    "TrainConfig",
    "TrainResult",
    "TrainState",
    "config_hash",
    "evaluate",
    "init_state",
    "pass_at_k",
    "train",
    "train_step",
    "warm_start",
]

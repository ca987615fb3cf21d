"""Group rollouts under a frozen old-policy snapshot."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from uecrl.errors import InvalidArgument
from uecrl.policy import ContextKey, PolicyParams, context_entropy, sample_sequence
from uecrl.seeding import derive_rng
from uecrl.tasks import TaskInstance, verify

SOURCES = ("regular", "exploratory", "replay")


@dataclass
class Trajectory:
    prompt_id: str
    tokens: tuple
    behavior_logprobs: list
    old_logprobs_t1: list
    reward: int
    advantage: float = 0.0
    source: str = "regular"
    birth_step: int = 0
    # temperature-1 entropy of the snapshot at each generated position
    entropies: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        n = len(self.tokens)
        if n < 1 or len(self.behavior_logprobs) != n or len(self.old_logprobs_t1) != n:
            raise InvalidArgument("token and log-probability tracks must share one non-zero length")
        if self.source not in SOURCES:
            raise InvalidArgument(f"unknown trajectory source {self.source!r}")

    def __len__(self) -> int:
        return len(self.tokens)

    def contexts(self):
        for t in range(len(self.tokens)):
            yield ContextKey(self.prompt_id, tuple(self.tokens[:t])), self.tokens[t]


@dataclass
class RolloutGroup:
    prompt_id: str
    trajectories: list
    group_size: int
    temperature: float

    def __post_init__(self):
        if len(self.trajectories) != self.group_size:
            raise InvalidArgument("group must hold exactly group_size trajectories")

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.trajectories], dtype=float)


def snapshot(params: PolicyParams) -> PolicyParams:
    return params.snapshot()


def rollout_group(
    old: PolicyParams,
    task: TaskInstance,
    group_size: int,
    temperature: float,
    seed: int,
    step: int = 0,
    phase: str = "regular",
) -> RolloutGroup:
    """Sample and verify ``group_size`` responses for one prompt.

    Trajectory ``i`` draws from its own stream derived from
    ``(seed, step, phase, prompt_id, i)`` so groups are reproducible regardless
    of execution order.
    """
    if group_size < 2:
        raise InvalidArgument("group normalization needs group_size >= 2")
    if task.vocab_size != old.vocab_size:
        raise InvalidArgument("task and policy vocabularies differ")
    source = "regular" if temperature == 1.0 else "exploratory"
    trajectories = []
    for i in range(group_size):
        rng = derive_rng(seed, step, phase, task.prompt_id, i)
        tokens, behavior, base = sample_sequence(old, task.prompt_id, temperature, task.max_len, rng, task.terminal_token)
        entropies = [context_entropy(old, ContextKey(task.prompt_id, tokens[:t])) for t in range(len(tokens))]
        trajectories.append(
            Trajectory(
                prompt_id=task.prompt_id,
                tokens=tokens,
                behavior_logprobs=behavior,
                old_logprobs_t1=base,
                reward=verify(task, tokens),
                source=source,
                birth_step=step,
                entropies=entropies,
            )
        )
    return RolloutGroup(task.prompt_id, trajectories, group_size, temperature)


def _fmt(x: float, exact: bool) -> float | str:
    return float(repr(float(x))) if exact else float(f"{x:.9g}")


def trajectory_record(traj: Trajectory, exact: bool = False, **extra) -> dict:
    """JSON-ready record; 9 significant digits unless ``exact``."""
    rec = {
        "prompt_id": traj.prompt_id,
        "tokens": list(traj.tokens),
        "reward": traj.reward,
        "advantage": _fmt(traj.advantage, exact),
        "source": traj.source,
        "birth_step": traj.birth_step,
        "behavior_logprobs": [_fmt(x, exact) for x in traj.behavior_logprobs],
        "old_logprobs_t1": [_fmt(x, exact) for x in traj.old_logprobs_t1],
    }
    rec.update(extra)
    return rec


def trajectory_from_record(rec: dict) -> Trajectory:
    return Trajectory(
        prompt_id=rec["prompt_id"],
        tokens=tuple(rec["tokens"]),
        behavior_logprobs=list(rec["behavior_logprobs"]),
        old_logprobs_t1=list(rec["old_logprobs_t1"]),
        reward=int(rec["reward"]),
        advantage=float(rec["advantage"]),
        source=rec["source"],
        birth_step=int(rec["birth_step"]),
    )


def dump_trajectories(trajectories, fh, exact: bool = False) -> None:
    for traj in trajectories:
        fh.write(json.dumps(trajectory_record(traj, exact)) + "\n")

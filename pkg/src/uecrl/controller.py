"""Difficulty-gated tempered exploration and the high-advantage replay buffer."""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from uecrl.errors import InvalidArgument
from uecrl.objective import ObjectiveConfig, group_advantages
from uecrl.policy import PolicyParams
from uecrl.rollout import RolloutGroup, Trajectory, rollout_group, trajectory_record

log = logging.getLogger(__name__)


@dataclass
class UecConfig:
    G: int = 5
    G_prime: int = 20
    t_prime: float = 1.2
    s_prime: int = 512
    f_replay: int = 5
    A0: float = 1.0
    replay_batch: int = 0  # 0: match the main update's trajectory count
    explore: bool = True

    def __post_init__(self):
        if self.G < 2 or self.G_prime < 2:
            raise InvalidArgument("group sizes must be >= 2")
        if self.G_prime < self.G or self.t_prime < 1.0:
            raise InvalidArgument("exploration must not shrink the group or cool the policy (G' >= G, t' >= 1)")
        if self.s_prime < 1:
            raise InvalidArgument("replay capacity must be positive")
        if self.f_replay < 0 or self.replay_batch < 0:
            raise InvalidArgument("f_replay and replay_batch must be non-negative")

    @property
    def exploration_active(self) -> bool:
        # G' = G at t' = 1 resamples the distribution that just failed: a no-op.
        return self.explore and (self.G_prime > self.G or self.t_prime > 1.0)

    @property
    def replay_active(self) -> bool:
        return self.f_replay > 0


class ReplayBuffer:
    """Bounded FIFO of high-advantage trajectories; the oldest entry is evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidArgument("capacity must be positive")
        self.capacity = capacity
        self.entries: deque = deque(maxlen=capacity)
        self.total_pushed = 0

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def dump(self, fh, exact: bool = False) -> None:
        first = self.total_pushed - len(self.entries)
        for i, traj in enumerate(self.entries):
            fh.write(json.dumps(trajectory_record(traj, exact, insertion_index=first + i)) + "\n")


def is_difficult(group: RolloutGroup) -> bool:
    return bool((group.rewards <= 0).all())


def assign_advantages(group: RolloutGroup, eps_std: float = 1e-8) -> RolloutGroup:
    for traj, a in zip(group.trajectories, group_advantages(group.rewards, eps_std)):
        traj.advantage = float(a)
    return group


def explore(old: PolicyParams, task, cfg: UecConfig, seed: int, step: int = 0, eps_std: float = 1e-8) -> RolloutGroup:
    """Tempered G'-sample rollout, normalized within its own group."""
    group = rollout_group(old, task, cfg.G_prime, cfg.t_prime, seed, step, phase="explore")
    return assign_advantages(group, eps_std)


def filter_regular(group: RolloutGroup) -> list:
    return [t for t in group.trajectories if t.advantage != 0.0]


def filter_exploratory(group: RolloutGroup) -> list:
    return [t for t in group.trajectories if t.advantage > 0.0]


def buffer_push(buffer: ReplayBuffer, candidates, A0: float) -> ReplayBuffer:
    for traj in candidates:
        if traj.advantage > A0:
            buffer.entries.append(traj)
            buffer.total_pushed += 1
    return buffer


def replay_batch(buffer: ReplayBuffer, size: int, rng: np.random.Generator) -> list:
    """Uniform sample without replacement, retagged ``replay``; entries stay buffered."""
    if len(buffer) == 0:
        log.info("replay requested from an empty buffer; skipping")
        return []
    k = min(size, len(buffer))
    idx = rng.choice(len(buffer), size=k, replace=False)
    out = []
    for i in sorted(int(j) for j in idx):
        src = buffer.entries[i]
        out.append(
            Trajectory(
                prompt_id=src.prompt_id,
                tokens=src.tokens,
                behavior_logprobs=src.behavior_logprobs,
                old_logprobs_t1=src.old_logprobs_t1,
                reward=src.reward,
                advantage=src.advantage,
                source="replay",
                birth_step=src.birth_step,
            )
        )
    return out


@dataclass
class StepOutput:
    o_eff: list
    pushed: list
    regular_groups: list
    exploration_groups: list
    difficult: int = 0
    explored: int = 0
    diagnostics: dict = field(default_factory=dict)


def uec_step(
    old: PolicyParams,
    tasks,
    cfg: UecConfig,
    buffer: ReplayBuffer | None,
    seed: int,
    step: int,
    obj_cfg: ObjectiveConfig | None = None,
) -> StepOutput:
    """Collect the effective optimization set for one main update.

    Easy prompts (some regular success) contribute their nonzero-advantage
    samples. Prompts whose whole regular group failed are re-rolled at the
    exploration temperature when exploration is active; their positive
    advantage samples enter the batch and are offered to the buffer.
    """
    eps_std = obj_cfg.eps_std if obj_cfg else 1e-8
    out = StepOutput([], [], [], [])
    for task in tasks:
        group = assign_advantages(rollout_group(old, task, cfg.G, 1.0, seed, step), eps_std)
        out.regular_groups.append(group)
        if not is_difficult(group):
            out.o_eff.extend(filter_regular(group))
            continue
        out.difficult += 1
        if not cfg.exploration_active:
            continue
        out.explored += 1
        xgroup = explore(old, task, cfg, seed, step, eps_std)
        out.exploration_groups.append(xgroup)
        o_h = filter_exploratory(xgroup)
        out.o_eff.extend(o_h)
        candidates = o_h + [t for t in group.trajectories if t.advantage > 0.0]
        if buffer is not None:
            buffer_push(buffer, candidates, cfg.A0)
            out.pushed.extend(t for t in candidates if t.advantage > cfg.A0)
    if not out.o_eff:
        log.info("step %d: empty effective batch, main update skipped", step)
    return out

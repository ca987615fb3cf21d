"""Group-normalized advantages and the clipped surrogate with a KL penalty.

The per-trajectory term is

    (1/|o|) * sum_t [ min(r_t A, clip(r_t, 1 - eps_low, 1 + eps_high) A) - beta * KL_t ]

averaged over the batch. ``eps_high > eps_low`` gives the clip-higher variant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from uecrl.errors import CorruptState, InvalidArgument
from uecrl.policy import (
    ContextKey,
    Gradient,
    PolicyParams,
    accumulate_row,
    action_distribution,
    token_logprob,
)

KL_MODES = ("exact", "k3_estimator")


@dataclass
class ObjectiveConfig:
    eps_low: float = 0.2
    eps_high: float = 0.2
    beta: float = 0.0
    eps_std: float = 1e-8
    kl_mode: str = "exact"

    def __post_init__(self):
        if not (0.0 <= self.eps_low <= 1.0 and math.isfinite(self.eps_high) and self.eps_high >= 0.0):
            raise InvalidArgument("need 0 <= eps_low <= 1 and finite eps_high >= 0")
        if self.beta < 0:
            raise InvalidArgument("beta must be non-negative")
        if self.kl_mode not in KL_MODES:
            raise InvalidArgument(f"kl_mode must be one of {KL_MODES}")


def group_advantages(rewards, eps_std: float = 1e-8) -> np.ndarray:
    """(R - mean) / std with the population std; degenerate groups map to zeros."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise InvalidArgument("group normalization needs at least two rewards")
    std = r.std()
    if std < eps_std:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def importance_ratios(new_params: PolicyParams, trajectory) -> np.ndarray:
    new_lp = np.array([token_logprob(new_params, ctx, tok) for ctx, tok in trajectory.contexts()])
    ratios = np.exp(new_lp - np.asarray(trajectory.old_logprobs_t1))
    if not np.isfinite(ratios).all():
        raise CorruptState(f"non-finite importance ratio for {trajectory.prompt_id}")
    return ratios


def clipped_term(ratio: float, advantage: float, cfg: ObjectiveConfig) -> float:
    clipped = min(max(ratio, 1.0 - cfg.eps_low), 1.0 + cfg.eps_high)
    return min(ratio * advantage, clipped * advantage)


def _is_clipped(ratio: float, advantage: float, cfg: ObjectiveConfig) -> bool:
    """True when the min picks the clamped constant (ties go to the unclipped branch)."""
    clipped = min(max(ratio, 1.0 - cfg.eps_low), 1.0 + cfg.eps_high)
    return clipped * advantage < ratio * advantage


def kl_penalty(new_params: PolicyParams, ref_params: PolicyParams, ctx: ContextKey, mode: str = "exact", token: int | None = None) -> float:
    """KL(pi_new || pi_ref) at one context.

    ``exact`` sums over the vocabulary; ``k3_estimator`` evaluates
    ``rho - 1 - ln rho`` with ``rho = p_ref / p_new`` at the sampled ``token``.
    """
    p = action_distribution(new_params, ctx)
    q = action_distribution(ref_params, ctx)
    if mode == "exact":
        if (q <= 0).any():
            raise InvalidArgument("reference distribution has a zero probability")
        return float(max(0.0, (p * (np.log(p) - np.log(q))).sum()))
    if mode == "k3_estimator":
        if token is None:
            raise InvalidArgument("k3 estimator needs the sampled token")
        log_rho = token_logprob(ref_params, ctx, token) - token_logprob(new_params, ctx, token)
        return float(max(0.0, math.expm1(log_rho) - log_rho))
    raise InvalidArgument(f"unknown kl mode {mode!r}")


def _kl_logit_grad(new_params, ref_params, ctx, token, mode) -> tuple[float, np.ndarray]:
    p = np.array(action_distribution(new_params, ctx))
    if mode == "exact":
        log_ratio = np.log(p) - np.log(np.array(action_distribution(ref_params, ctx)))
        kl = float((p * log_ratio).sum())
        return max(0.0, kl), p * (log_ratio - kl)
    log_rho = token_logprob(ref_params, ctx, token) - token_logprob(new_params, ctx, token)
    rho = math.exp(log_rho)
    g = -p
    g[token] += 1.0
    return max(0.0, rho - 1.0 - log_rho), (1.0 - rho) * g


@dataclass
class ObjectiveStats:
    n_tokens: int = 0
    n_clipped: int = 0

    @property
    def clip_fraction(self) -> float:
        return self.n_clipped / self.n_tokens if self.n_tokens else 0.0


def objective_and_gradient(
    new_params: PolicyParams,
    batch,
    cfg: ObjectiveConfig,
    ref_params: PolicyParams | None = None,
    stats: ObjectiveStats | None = None,
) -> tuple[float, Gradient]:
    """Surrogate objective and its exact parameter gradient over ``batch``."""
    batch = list(batch)
    if not batch:
        raise InvalidArgument("objective needs a non-empty batch")
    if cfg.beta > 0 and ref_params is None:
        raise InvalidArgument("beta > 0 requires reference parameters")
    total = 0.0
    grad: Gradient = {}
    n = len(batch)
    for traj in batch:
        weight = 1.0 / (n * len(traj))
        A = traj.advantage
        for (ctx, tok), old_lp in zip(traj.contexts(), traj.old_logprobs_t1):
            p = action_distribution(new_params, ctx)
            ratio = math.exp(token_logprob(new_params, ctx, tok) - old_lp)
            if not math.isfinite(ratio):
                raise CorruptState(f"non-finite importance ratio for {traj.prompt_id}")
            term = clipped_term(ratio, A, cfg)
            clipped = _is_clipped(ratio, A, cfg)
            if stats is not None:
                stats.n_tokens += 1
                stats.n_clipped += int(clipped)
            logit_grad = np.zeros(new_params.vocab_size)
            if not clipped and A != 0.0:
                logit_grad = -ratio * A * np.array(p)
                logit_grad[tok] += ratio * A
            if cfg.beta > 0:
                kl, kl_grad = _kl_logit_grad(new_params, ref_params, ctx, tok, cfg.kl_mode)
                term -= cfg.beta * kl
                logit_grad = logit_grad - cfg.beta * kl_grad
            total += weight * term
            if logit_grad.any():
                accumulate_row(grad, new_params, ctx, weight * logit_grad)
    if not math.isfinite(total):
        raise CorruptState("non-finite objective")
    return total, grad

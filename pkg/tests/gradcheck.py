"""Random small objective instances and a central-difference gradient oracle."""

import numpy as np

from uecrl.objective import ObjectiveConfig, objective_and_gradient
from uecrl.policy import ContextKey, PolicyParams, token_logprob
from uecrl.rollout import Trajectory

KINK_MARGIN = 1e-3


def _random_params(rng, kind, vocab, prompts, depth):
    if kind == "linear":
        params = PolicyParams.linear(vocab, "ngram2-32")
        for f in range(32):
            params.set_row(f, rng.normal(size=vocab))
        return params
    params = PolicyParams.tabular(vocab)
    for prompt in prompts:
        prefixes = [()]
        for _ in range(depth):
            for pre in prefixes:
                params.set_row(ContextKey(prompt, pre), rng.normal(size=vocab))
            prefixes = [p + (t,) for p in prefixes for t in range(vocab)]
    return params


def random_instance(rng, kind):
    """``(params, ref, batch, cfg)`` with every ratio at least KINK_MARGIN from a clip edge."""
    vocab = int(rng.integers(2, 6))
    prompts = ["a", "b"]
    cfg = ObjectiveConfig(
        eps_low=0.2,
        eps_high=float(rng.choice([0.2, 0.3])),
        beta=float(rng.choice([0.0, 0.05])),
        kl_mode=str(rng.choice(["exact", "k3_estimator"])),
    )
    while True:
        params = _random_params(rng, kind, vocab, prompts, 3)
        ref = _random_params(rng, kind, vocab, prompts, 3)
        batch = []
        for _ in range(int(rng.integers(1, 5))):
            prompt = str(rng.choice(prompts))
            tokens = tuple(int(t) for t in rng.integers(0, vocab, size=int(rng.integers(1, 4))))
            new_lp = [token_logprob(params, ContextKey(prompt, tokens[:t]), tok) for t, tok in enumerate(tokens)]
            old_lp = [lp + float(rng.normal(scale=0.25)) for lp in new_lp]
            adv = 0.0 if rng.random() < 0.1 else float(rng.normal())
            batch.append(Trajectory(prompt, tokens, list(old_lp), old_lp, int(adv > 0), advantage=adv))
        ratios = [np.exp(n - o) for tr in batch for n, o in zip(
            [token_logprob(params, c, t) for c, t in tr.contexts()], tr.old_logprobs_t1)]
        edges = (1 - cfg.eps_low, 1 + cfg.eps_high)
        if all(abs(r - e) > KINK_MARGIN for r in ratios for e in edges):
            return params, ref, batch, cfg


def gradient_error(params, ref, batch, cfg, h=1e-5):
    """Max |analytic - central difference| over all touched entries, relative to the largest FD entry."""
    _, grad = objective_and_gradient(params, batch, cfg, ref)
    keys = {key for tr in batch for ctx, _ in tr.contexts() for key, _ in params.active_rows(ctx)}
    worst_abs = 0.0
    scale = 0.0
    for key in keys:
        base = np.array(params.rows.get(key, np.zeros(params.vocab_size)))
        analytic = grad.get(key, np.zeros(params.vocab_size))
        for j in range(params.vocab_size):
            vals = []
            for sign in (1, -1):
                trial = params.copy()
                row = base.copy()
                row[j] += sign * h
                trial.set_row(key, row)
                vals.append(objective_and_gradient(trial, batch, cfg, ref)[0])
            fd = (vals[0] - vals[1]) / (2 * h)
            worst_abs = max(worst_abs, abs(fd - analytic[j]))
            scale = max(scale, abs(fd))
    return worst_abs / max(scale, 1e-8)

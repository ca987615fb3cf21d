"""Grid sweeps over exploration temperature and replay-buffer capacity."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from uecrl.trainer import TrainConfig, evaluate, train

T_PRIMES = (1.0, 1.1, 1.2)
S_PRIMES = (128, 256, 512)


@dataclass
class SweepCell:
    t_prime: float
    s_prime: int
    accuracy: float
    mean_entropy: float
    per_seed_entropy: list


def run_cell(base: TrainConfig, t_prime: float, s_prime: int, seeds) -> SweepCell:
    accs, ents = [], []
    for seed in seeds:
        cfg = copy.deepcopy(base)
        cfg.algorithm = "uec"
        cfg.seed = int(seed)
        cfg.uec.t_prime = float(t_prime)
        cfg.uec.s_prime = int(s_prime)
        result = train(cfg)
        ents.append(float(np.mean([r["token_entropy_mean"] for r in result.records])) if result.records else 0.0)
        scores = evaluate(
            result.state.params, result.state.curriculum.instances, 1, cfg.eval_samples, cfg.seed,
            cfg.eval_temperature, cfg.eval_top_p, "sweep-eval",
        )
        accs.append(scores["all"]["pass@1"])
    return SweepCell(float(t_prime), int(s_prime), float(np.mean(accs)), float(np.mean(ents)), ents)


def sweep(base: TrainConfig, t_primes=T_PRIMES, s_primes=S_PRIMES, seeds=(0,), progress=None) -> dict:
    cells = {}
    for tp in t_primes:
        for sp in s_primes:
            cells[(float(tp), int(sp))] = cell = run_cell(base, tp, sp, seeds)
            if progress is not None:
                progress(cell)
    return cells


def trend_comparisons(cells: dict) -> list:
    """Adjacent-cell direction checks as ``(description, holds)``.

    Entropy should not fall as t' rises at fixed s', and should not rise as
    s' grows at fixed t' >= 1.1.
    """
    tps = sorted({k[0] for k in cells})
    sps = sorted({k[1] for k in cells})
    out = []
    for sp in sps:
        for a, b in zip(tps, tps[1:]):
            lo, hi = cells[(a, sp)].mean_entropy, cells[(b, sp)].mean_entropy
            out.append((f"s'={sp}: t' {a} -> {b}", hi >= lo))
    for tp in tps:
        if tp < 1.1:
            continue
        for a, b in zip(sps, sps[1:]):
            small, large = cells[(tp, a)].mean_entropy, cells[(tp, b)].mean_entropy
            out.append((f"t'={tp}: s' {a} -> {b}", large <= small))
    return out


def format_table(cells: dict) -> str:
    tps = sorted({k[0] for k in cells})
    sps = sorted({k[1] for k in cells})
    width = 18
    lines = ["t' \\ s'".ljust(9) + "".join(f"s'={sp}".rjust(width) for sp in sps)]
    for tp in tps:
        row = f"t'={tp:<6}"
        for sp in sps:
            c = cells[(tp, sp)]
            row += f"({c.accuracy:.3f}, {c.mean_entropy:.4f})".rjust(width)
        lines.append(row)
    lines.append("cells: (pass@1 over all tasks, mean token entropy in nats)")
    return "\n".join(lines)

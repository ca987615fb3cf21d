"""``uecrl`` command line.

Subcommands: ``train``, ``eval``, ``verify-theorems``, ``sweep``,
``export-plots``. Run ``uecrl <command> --help`` for flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from uecrl import checkpoint as ckpt
from uecrl.config import acceptance_config, dump_config, load_config
from uecrl.errors import CorruptState, InvalidArgument
from uecrl.experiments import S_PRIMES, T_PRIMES, format_table, sweep, trend_comparisons
from uecrl.metrics import export_plots
from uecrl.theory import entropy_change_suite, replay_collapse_suite
from uecrl.trainer import ALGORITHMS, evaluate, init_state, train

log = logging.getLogger("uecrl")


def _base_config(args):
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None) == "acceptance":
        cfg = acceptance_config()
    else:
        cfg = load_config(None)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "algorithm", None):
        cfg.algorithm = args.algorithm
    if getattr(args, "steps", None) is not None:
        cfg.max_steps = args.steps
    cfg.__post_init__()
    return cfg


def cmd_train(args) -> int:
    cfg = _base_config(args)
    out = Path(args.out or f"runs/{cfg.algorithm}-seed{cfg.seed}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(dump_config(cfg))
    result = train(cfg, out, resume=args.checkpoint, quiet=args.quiet)
    ckpt.save(result.state, cfg, out)
    last = result.records[-1] if result.records else None
    if last is not None:
        print(f"step {last['step']}  reward {last['reward_mean']:.3f}  entropy {last['token_entropy_mean']:.4f}  buffer {last['buffer_size']}")
    print(f"wrote {out}")
    return 0


def cmd_eval(args) -> int:
    policy_path = ckpt.resolve(args.checkpoint)
    config_path = args.config or policy_path.parent / "config.ini"
    cfg = load_config(config_path if Path(config_path).exists() else None)
    if args.seed is not None:
        cfg.seed = args.seed
    state = init_state(cfg)
    ckpt.restore(state, policy_path)
    ks = sorted({1, *args.k})
    scores = evaluate(state.params, state.curriculum.instances, ks, args.samples, cfg.seed, cfg.eval_temperature, cfg.eval_top_p, "cli-eval")
    print(f"checkpoint {policy_path} (step {state.global_step})")
    for cls in ("easy", "hard", "all"):
        if cls in scores:
            s = scores[cls]
            cols = "  ".join(f"pass@{k} {s[f'pass@{k}']:.4f}" for k in ks)
            print(f"{cls:<5} tasks {s['n_tasks']:>3}  {cols}")
    if args.json:
        print(json.dumps(scores, sort_keys=True))
    return 0


def cmd_verify(args) -> int:
    rows = entropy_change_suite(range(args.seeds)) + replay_collapse_suite(range(args.replay_seeds))
    if args.out:
        with open(args.out, "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
    summary = {}
    for row in rows:
        tally = summary.setdefault(row["check"], [0, 0])
        tally[0] += row["verdict"] == "pass"
        tally[1] += 1
    print(f"{'check':<26}{'passed':>8}{'total':>8}  verdict")
    ok = True
    for check, (passed, total) in summary.items():
        verdict = "PASS" if passed == total else "FAIL"
        ok &= passed == total
        print(f"{check:<26}{passed:>8}{total:>8}  {verdict}")
    worst = max((r["residual"] for r in rows if r["check"] == "entropy_change" and r["eta"] == 1e-3), default=0.0)
    print(f"max residual at eta=1e-3: {worst:.3e}")
    return 0 if ok else 1


def cmd_sweep(args) -> int:
    base = _base_config(args)

    def progress(cell):
        if not args.quiet:
            print(f"t'={cell.t_prime} s'={cell.s_prime}: accuracy {cell.accuracy:.3f} entropy {cell.mean_entropy:.6f}", file=sys.stderr)

    cells = sweep(base, args.t_primes, args.s_primes, range(base.seed, base.seed + args.n_seeds), progress)
    print(format_table(cells))
    checks = trend_comparisons(cells)
    for desc, holds in checks:
        print(f"{'ok  ' if holds else 'miss'} {desc}")
    print(f"trend comparisons holding: {sum(h for _, h in checks)}/{len(checks)}")
    if args.out:
        with open(args.out, "w") as fh:
            for (tp, sp), c in sorted(cells.items()):
                fh.write(json.dumps({"t_prime": tp, "s_prime": sp, "accuracy": c.accuracy, "mean_entropy": c.mean_entropy}) + "\n")
    return 0


def cmd_export(args) -> int:
    for path in export_plots(args.metrics, args.out):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uecrl", description="Group-relative RL with uncertainty-driven exploration on toy verifiable tasks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, steps=True):
        sp.add_argument("--config", help="INI config file")
        sp.add_argument("--preset", choices=["acceptance"], help="built-in config used when --config is absent")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--algorithm", choices=ALGORITHMS)
        if steps:
            sp.add_argument("--steps", type=int, help="override max_steps")
        sp.add_argument("--quiet", action="store_true")

    t = sub.add_parser("train", help="run training from a config")
    common(t)
    t.add_argument("--out", help="run directory (default runs/<algorithm>-seed<seed>)")
    t.add_argument("--checkpoint", help="resume from a checkpoint file or run directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint with pass@k per difficulty")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="defaults to config.ini next to the checkpoint")
    e.add_argument("--seed", type=int)
    e.add_argument("--k", type=int, nargs="+", default=[1, 4, 16])
    e.add_argument("--samples", type=int, default=32)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("verify-theorems", help="run the seeded entropy-dynamics checks")
    v.add_argument("--seeds", type=int, default=100)
    v.add_argument("--replay-seeds", type=int, default=20)
    v.add_argument("--out", help="write per-check JSONL here")
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("sweep", help="t' x s' grid of (accuracy, mean entropy)")
    common(s)
    s.add_argument("--t-primes", type=float, nargs="+", default=list(T_PRIMES))
    s.add_argument("--s-primes", type=int, nargs="+", default=list(S_PRIMES))
    s.add_argument("--n-seeds", type=int, default=1)
    s.add_argument("--out", help="write cells as JSONL")
    s.set_defaults(func=cmd_sweep)

    x = sub.add_parser("export-plots", help="metrics.jsonl -> per-panel step/value files")
    x.add_argument("metrics")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.INFO if args.verbose or (hasattr(args, "quiet") and not args.quiet and args.command == "train") else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InvalidArgument, CorruptState, OSError) as exc:
        print(f"uecrl: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

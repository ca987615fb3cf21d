"""Deterministic per-step metrics records and plot-series export.

Each line of ``metrics.jsonl`` is one JSON object with keys in this order:

    step, reward_mean, token_entropy_mean, token_entropy_regular,
    entropy_seq_mean, response_length_mean, clip_fraction,
    difficult_fraction, buffer_size, explored_prompts, o_eff_size,
    replay_size, cov_diagnostic, offpolicy_gap, objective

followed, on evaluation steps only, by ``pass@k`` (all tasks) and
``pass@k_easy`` / ``pass@k_hard`` for each evaluated k. Reals carry 9
significant digits. Token entropy is in nats, computed at temperature 1 at
every generated position (regular and exploratory rollouts);
``token_entropy_regular`` restricts to regular rollouts.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, is_dataclass
from pathlib import Path

from uecrl import __version__

FIELD_ORDER = (
    "step",
    "reward_mean",
    "token_entropy_mean",
    "token_entropy_regular",
    "entropy_seq_mean",
    "response_length_mean",
    "clip_fraction",
    "difficult_fraction",
    "buffer_size",
    "explored_prompts",
    "o_eff_size",
    "replay_size",
    "cov_diagnostic",
    "offpolicy_gap",
    "objective",
)
INT_FIELDS = {"step", "buffer_size", "explored_prompts", "o_eff_size", "replay_size"}

PANELS = {
    "entropy": "token_entropy_mean",
    "reward": "reward_mean",
    "response_length": "response_length_mean",
    "clip_fraction": "clip_fraction",
}


def step_record(**values) -> dict:
    missing = [k for k in FIELD_ORDER if k not in values]
    if missing:
        raise ValueError(f"metrics record missing {missing}")
    extra = [k for k in values if k not in FIELD_ORDER]
    if extra:
        raise ValueError(f"unknown metrics fields {extra}")
    return {k: values[k] for k in FIELD_ORDER}


def _format_value(key: str, value) -> str:
    if key in INT_FIELDS:
        return str(int(value))
    return json.dumps(float(f"{float(value):.9g}"))


def format_record(record: dict) -> str:
    return "{" + ", ".join(f"{json.dumps(k)}: {_format_value(k, v)}" for k, v in record.items()) + "}"


def emit_metrics(stream, record: dict) -> None:
    stream.write(format_record(record) + "\n")
    stream.flush()


class MetricsWriter:
    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        self._fh = open(self.path, "a" if append else "w")
        self._last_step = None

    def emit(self, record: dict) -> None:
        if self._last_step is not None and record["step"] <= self._last_step:
            raise ValueError("metrics steps must strictly increase")
        emit_metrics(self._fh, record)
        self._last_step = record["step"]

    def close(self) -> None:
        self._fh.close()


def read_metrics(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def export_plots(metrics_path, out_dir, panels: dict | None = None) -> list:
    """Write one ``step value`` series file per panel; returns the written paths."""
    records = read_metrics(metrics_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, key in (panels or PANELS).items():
        path = out_dir / f"{name}.dat"
        with open(path, "w") as fh:
            for rec in records:
                fh.write(f"{rec['step']} {float(rec[key]):.9g}\n")
        written.append(path)
    eval_keys = sorted({k for rec in records for k in rec if k.startswith("pass@")})
    for key in eval_keys:
        path = out_dir / f"{key.replace('@', '_at_')}.dat"
        with open(path, "w") as fh:
            for rec in records:
                if key in rec:
                    fh.write(f"{rec['step']} {float(rec[key]):.9g}\n")
        written.append(path)
    return written


def _plain(obj):
    if is_dataclass(obj):
        return {k: _plain(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_hash(config) -> str:
    text = json.dumps(_plain(config), sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_run_manifest(out_dir, config, curriculum) -> Path:
    manifest = {
        "config_hash": config_hash(config),
        "seed": config.seed,
        "code_version": __version__,
        "start_time": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "task_suite_digest": curriculum.digest(),
        "config": _plain(config),
    }
    path = Path(out_dir) / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path

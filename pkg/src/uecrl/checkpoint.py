"""Policy and training-state checkpoints.

Policy file: a short ``key value`` header, a ``---`` line, then one row per
line as ``<row key>\\t<logit> <logit> ...``. Tabular row keys read
``c:<prompt_id>|<comma-separated prefix>``; linear ones read ``f:<index>``.
Reals are written with ``repr`` so a reload is bit-exact.

A checkpoint directory holds ``ckpt-<step>.policy``,
``ckpt-<step>.buffer.jsonl`` and a ``manifest.json`` that lists every
checkpoint with the config hash and rng state. All rng streams are derived
from ``(seed, step, ...)``, so the rng state is just the seed and step.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from uecrl.controller import ReplayBuffer
from uecrl.errors import InvalidArgument
from uecrl.metrics import config_hash
from uecrl.policy import ContextKey, PolicyParams
from uecrl.rollout import trajectory_from_record, trajectory_record

MAGIC = "#uecrl-policy 1"


def _encode_key(key) -> str:
    if isinstance(key, ContextKey):
        if any(ch in key.prompt_id for ch in "|\t\n"):
            raise InvalidArgument(f"prompt id {key.prompt_id!r} contains a reserved character")
        return f"c:{key.prompt_id}|{','.join(str(t) for t in key.prefix)}"
    return f"f:{int(key)}"


def _decode_key(text: str):
    if text.startswith("c:"):
        pid, _, prefix = text[2:].rpartition("|")
        return ContextKey(pid, tuple(int(t) for t in prefix.split(",")) if prefix else ())
    if text.startswith("f:"):
        return int(text[2:])
    raise InvalidArgument(f"bad row key {text!r}")


def save_policy(params: PolicyParams, path, global_step: int = 0) -> None:
    lines = [
        MAGIC,
        f"kind {params.kind}",
        f"vocab_size {params.vocab_size}",
        f"featurizer_id {params.featurizer_id or '-'}",
        f"global_step {global_step}",
        "---",
    ]
    encoded = sorted((_encode_key(k), v) for k, v in params.rows.items())
    for key, row in encoded:
        lines.append(key + "\t" + " ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_policy(path) -> tuple[PolicyParams, int]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MAGIC:
        raise InvalidArgument(f"{path} is not a policy checkpoint")
    header = {}
    i = 1
    while lines[i] != "---":
        key, _, value = lines[i].partition(" ")
        header[key] = value
        i += 1
    featurizer = None if header["featurizer_id"] == "-" else header["featurizer_id"]
    params = PolicyParams(header["kind"], int(header["vocab_size"]), featurizer_id=featurizer)
    for line in lines[i + 1:]:
        key, _, values = line.partition("\t")
        params.set_row(_decode_key(key), [float(x) for x in values.split()])
    if not params.is_finite():
        raise InvalidArgument(f"{path} holds non-finite parameters")
    return params, int(header["global_step"])


def save(state, config, out_dir, tag: str | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = f"ckpt-{state.global_step:06d}" + (f"-{tag}" if tag else "")
    save_policy(state.params, out_dir / f"{name}.policy", state.global_step)
    with open(out_dir / f"{name}.buffer.jsonl", "w") as fh:
        fh.write(json.dumps({"capacity": state.buffer.capacity, "total_pushed": state.buffer.total_pushed}) + "\n")
        first = state.buffer.total_pushed - len(state.buffer)
        for j, traj in enumerate(state.buffer):
            fh.write(json.dumps(trajectory_record(traj, exact=True, insertion_index=first + j)) + "\n")
    manifest_path = out_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {"checkpoints": []}
    manifest["config_hash"] = config_hash(config)
    entry = {"name": name, "step": state.global_step, "rng_state": {"seed": config.seed, "global_step": state.global_step}}
    manifest["checkpoints"] = [c for c in manifest["checkpoints"] if c["name"] != name] + [entry]
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out_dir / f"{name}.policy"


def resolve(path) -> Path:
    """Accept a ``.policy`` file or a checkpoint directory (latest regular checkpoint)."""
    path = Path(path)
    if path.is_dir():
        manifest = json.loads((path / "manifest.json").read_text())
        regular = [c for c in manifest["checkpoints"] if not c["name"].endswith("-abort")] or manifest["checkpoints"]
        if not regular:
            raise InvalidArgument(f"no checkpoints listed in {path}")
        latest = max(regular, key=lambda c: c["step"])
        return path / f"{latest['name']}.policy"
    if not path.exists():
        raise InvalidArgument(f"checkpoint {path} not found")
    return path


def restore(state, path) -> None:
    policy_path = resolve(path)
    params, step = load_policy(policy_path)
    if params.vocab_size != state.params.vocab_size or params.kind != state.params.kind:
        raise InvalidArgument("checkpoint policy does not match the configuration")
    state.params = params
    state.global_step = step
    buffer_path = policy_path.with_name(policy_path.name[: -len(".policy")] + ".buffer.jsonl")
    if buffer_path.exists():
        lines = buffer_path.read_text().splitlines()
        header = json.loads(lines[0])
        buf = ReplayBuffer(header["capacity"])
        for line in lines[1:]:
            buf.entries.append(trajectory_from_record(json.loads(line)))
        buf.total_pushed = header["total_pushed"]
        state.buffer = buf

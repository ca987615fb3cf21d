"""INI run configuration.

Sections mirror :class:`~uecrl.trainer.TrainConfig`::

    [train]       algorithm, learning_rate, batch_size, max_steps, ...
    [objective]   eps_low, eps_high, beta, eps_std, kl_mode
    [uec]         G, G_prime, t_prime, s_prime, f_replay, A0, replay_batch, explore
    [curriculum]  size, hard_fraction, vocab_size, ...
    [prior]       margin_easy, margin_hard, hard_deviations

Unknown sections or keys are errors. Any key can be overridden from the
environment as ``UECRL_<SECTION>_<KEY>`` (upper case), e.g.
``UECRL_UEC_T_PRIME=1.1`` or ``UECRL_TRAIN_SEED=3``. Environment values win
over the file.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from pathlib import Path

from uecrl.controller import UecConfig
from uecrl.errors import InvalidArgument
from uecrl.objective import ObjectiveConfig
from uecrl.tasks import CurriculumConfig
from uecrl.trainer import PriorConfig, TrainConfig

ENV_PREFIX = "UECRL_"
SECTIONS = {
    "train": TrainConfig,
    "objective": ObjectiveConfig,
    "uec": UecConfig,
    "curriculum": CurriculumConfig,
    "prior": PriorConfig,
}
_NESTED = {"objective", "uec", "curriculum", "prior"}


def _scalar_fields(cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in _NESTED or f.name.startswith("_"):
            continue
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        out[f.name] = default
    return out


def _coerce(section: str, key: str, text: str, default):
    where = f"[{section}] {key}"
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise InvalidArgument(f"{where}: cannot parse {text!r} as {type(default).__name__}") from None
    return text


def _env_overrides(environ) -> dict:
    known = {(s, k.lower()): k for s, cls in SECTIONS.items() for k in _scalar_fields(cls)}
    out: dict = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section not in SECTIONS:
            continue
        if (section, key) not in known:
            raise InvalidArgument(f"environment variable {name} does not name a config key")
        out.setdefault(section, {})[known[(section, key)]] = value
    return out


def parse_config(text: str = "", environ=None) -> TrainConfig:
    """Build a TrainConfig from INI text plus ``UECRL_*`` overrides."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise InvalidArgument(f"malformed config: {exc}") from None
    values: dict = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise InvalidArgument(f"unknown config section [{section}]")
        values[section] = dict(parser.items(section))
    for section, items in _env_overrides(os.environ if environ is None else environ).items():
        values.setdefault(section, {}).update(items)

    built = {}
    for section, cls in SECTIONS.items():
        fields = _scalar_fields(cls)
        kwargs = {}
        for key, text in values.get(section, {}).items():
            if key not in fields:
                raise InvalidArgument(f"unknown key {key!r} in [{section}]")
            kwargs[key] = _coerce(section, key, text, fields[key])
        built[section] = kwargs
    try:
        return TrainConfig(
            **built["train"],
            objective=ObjectiveConfig(**built["objective"]),
            uec=UecConfig(**built["uec"]),
            curriculum=CurriculumConfig(**built["curriculum"]),
            prior=PriorConfig(**built["prior"]),
        )
    except TypeError as exc:
        raise InvalidArgument(str(exc)) from None


def load_config(path=None, environ=None) -> TrainConfig:
    if path is None:
        return parse_config("", environ)
    path = Path(path)
    if not path.is_file():
        raise InvalidArgument(f"config file {path} not found")
    return parse_config(path.read_text(), environ)


def dump_config(config: TrainConfig) -> str:
    """INI text that :func:`parse_config` maps back to ``config``."""
    lines = []
    for section, cls in SECTIONS.items():
        obj = config if section == "train" else getattr(config, section)
        lines.append(f"[{section}]")
        for key in _scalar_fields(cls):
            value = getattr(obj, key)
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def acceptance_config(algorithm: str = "uec", seed: int = 0, **train_overrides) -> TrainConfig:
    """Desk-scale setup used by the entropy/accuracy acceptance runs.

    40 tasks, 30% hard 8^4 combination locks, a peaked warm start whose hard
    reference paths miss the code by one token, and a step size large
    enough for plain GRPO to collapse within 300 steps.
    """
    cfg = TrainConfig(
        algorithm=algorithm,
        learning_rate=3.0,
        batch_size=8,
        max_steps=300,
        seed=seed,
        curriculum=CurriculumConfig(size=40, hard_fraction=0.3, modchain_fraction=0.5),
        prior=PriorConfig(margin_easy=2.0, margin_hard=6.75, hard_deviations=1),
    )
    for key, value in train_overrides.items():
        if not hasattr(cfg, key):
            raise InvalidArgument(f"unknown train option {key!r}")
        setattr(cfg, key, value)
    return cfg

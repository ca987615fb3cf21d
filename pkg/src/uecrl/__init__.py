"""Desk-scale GRPO / UEC-RL laboratory on synthetic verifiable-reward tasks."""

from uecrl.errors import CorruptState, InvalidArgument

__version__ = "0.1.0"

__all__ = ["CorruptState", "InvalidArgument", "__version__"]

"""Aerial base-station fleet simulator with masked multi-agent Q-learning."""

__version__ = "0.1.0"

from .actions import Action
from .config import SimConfig, desk_preset

__all__ = ["Action", "SimConfig", "desk_preset", "__version__"]

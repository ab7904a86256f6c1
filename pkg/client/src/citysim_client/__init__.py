"""Thin client SDK over the citysim newline-delimited JSON TCP protocol.

The SDK holds no simulation logic: every call serializes to exactly one
documented protocol message, and all world state lives server-side.
"""

from .session import ClientSession, ProtocolError, ServerBusyError
from .gym_adapter import GymEnvAdapter

__all__ = ["ClientSession", "GymEnvAdapter", "ProtocolError",
           "ServerBusyError"]
__version__ = "0.1.0"

"""Regret-driven curriculum training: ACCEL, PLR and DR over grid and terrain levels."""

from accel.core import (
    Level,
    LevelError,
    LevelParseError,
    LevelValidationError,
    RegretScore,
    RngState,
    Trajectory,
    decode_level,
    encode_level,
)

__all__ = [
    "Level",
    "LevelError",
    "LevelParseError",
    "LevelValidationError",
    "RegretScore",
    "RngState",
    "Trajectory",
    "decode_level",
    "encode_level",
]

__version__ = "0.1.0"

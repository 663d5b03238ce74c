"""Utility modules."""

from app.utils.errors import CgVampError
from app.utils.numerics import geometric_spectrum, spawn_generators, to_db

__all__ = ["CgVampError", "geometric_spectrum", "spawn_generators", "to_db"]

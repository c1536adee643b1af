"""Exception types shared across the package.

Every error raised on a user-facing path derives from ObjforgeError so the
CLI can map failures to a single exit code without pattern matching on
message strings.
"""

from __future__ import annotations


class ObjforgeError(Exception):
    """Base class for all package errors."""


class ConfigError(ObjforgeError):
    """Invalid configuration value, file, or flag combination."""


class DataError(ObjforgeError):
    """Malformed or ineligible input data (corpus, vocab, example files)."""


class ShapeError(ObjforgeError):
    """Array arguments whose shapes cannot be reconciled."""

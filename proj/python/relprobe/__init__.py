"""Probing toolkit for relation-extraction encoders."""

from ._relprobe import *  # noqa: F401,F403
from ._relprobe import RelprobeError, run_cli

__all__ = [name for name in dir() if not name.startswith("_")]

"""Shared setup for the demo scripts: the tiny world, resolved from this checkout."""
from pathlib import Path

from specvoc.config import load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def tiny(**overrides):
    return load_config(CONFIGS / "tiny.conf", {"model": str(CONFIGS / "tiny.model"), **overrides})

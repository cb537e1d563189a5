"""Bundled reference data: golden count tables and site/delay configs.

``GHZKIT_DATA`` overrides the directory the accessors read from, so a
checkout can point the toolkit at its own measured tables.
"""

from __future__ import annotations

import json
import os
from importlib import resources
from pathlib import Path


def data_dir() -> Path:
    override = os.environ.get("GHZKIT_DATA")
    if override:
        return Path(override)
    return Path(resources.files(__package__))


def path(name: str) -> Path:
    p = data_dir() / name
    if not p.exists():
        raise FileNotFoundError(f"bundled data file {name!r} not found in {data_dir()}")
    return p


def load_json(name: str) -> dict:
    with open(path(name), "r", encoding="utf-8") as fh:
        return json.load(fh)

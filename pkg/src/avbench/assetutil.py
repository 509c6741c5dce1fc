"""Access to data assets shipped inside the package."""

import json
from importlib import resources
from pathlib import Path


def asset_path(*parts: str) -> Path:
    """Filesystem path of a packaged asset (assets are plain files, not zipped)."""
    root = resources.files("avbench").joinpath("assets")
    return Path(str(root.joinpath(*parts)))


def load_text(*parts: str) -> str:
    return asset_path(*parts).read_text(encoding="utf-8")


def load_json(*parts: str):
    return json.loads(load_text(*parts))


def load_stopwords() -> frozenset:
    words = load_text("stopwords_en.txt").split()
    return frozenset(w.strip().lower() for w in words if w.strip())

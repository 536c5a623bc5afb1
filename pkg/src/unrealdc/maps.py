"""Bundled maps and name/path resolution."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

from .minidoom import DEFAULT_STEP_LIMIT, MapSpec, load_map


def builtin_names() -> list:
    root = resources.files(__package__) / "maps"
    return sorted(p.name[: -len(".map")] for p in root.iterdir() if p.name.endswith(".map"))


def builtin_text(name: str) -> str:
    path = resources.files(__package__) / "maps" / f"{name}.map"
    if not path.is_file():
        raise FileNotFoundError(f"no builtin map named {name!r}; have {builtin_names()}")
    return path.read_text()


def resolve(name_or_path, episode_step_limit: int = DEFAULT_STEP_LIMIT) -> MapSpec:
    """Load a map from a file path, or by builtin name as a fallback."""
    p = Path(name_or_path)
    if p.is_file():
        return load_map(p.read_text(), episode_step_limit=episode_step_limit)
    try:
        text = builtin_text(str(name_or_path))
    except FileNotFoundError:
        raise FileNotFoundError(
            f"map {name_or_path!r}: no such file and no builtin with that name"
        ) from None
    return load_map(text, episode_step_limit=episode_step_limit)

"""Small synthetic corpora bundled for tests, demos and the overfit checks."""

from pathlib import Path

ROOT = Path(__file__).resolve().parent


def path(name: str) -> Path:
    p = ROOT / name
    if not p.exists():
        raise FileNotFoundError(f"no bundled fixture named {name!r}")
    return p

"""Run manifests: enough recorded state to reproduce any CLI output."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def checksum_tree(path: str | Path) -> dict[str, str]:
    """Relative path -> sha256 for a file or every file under a directory."""
    path = Path(path)
    if path.is_file():
        return {path.name: sha256_file(path)}
    out = {}
    for p in sorted(path.rglob("*")):
        if p.is_file() and not p.name.endswith(".manifest.json") \
                and p.name != "manifest.json":
            out[str(p.relative_to(path))] = sha256_file(p)
    return out


def write_manifest(path: str | Path, command: str, argv: list[str],
                   config: dict, seed: int | None,
                   inputs: list[str], outputs: list[str]) -> dict:
    """Write the manifest JSON describing one completed command."""
    manifest = {
        "tool": "edapipe",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config": config,
        "seed": seed,
        "inputs": [str(p) for p in inputs],
        "outputs": {
            str(p): checksum_tree(p) for p in outputs
        },
    }
    Path(path).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


def manifest_path_for(output: str | Path) -> Path:
    """Manifest location: <dir>/manifest.json or <file>.manifest.json."""
    output = Path(output)
    if output.is_dir():
        return output / "manifest.json"
    return output.with_name(output.name + ".manifest.json")


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))

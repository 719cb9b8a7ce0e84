"""Run manifests: config snapshots plus content hashes of inputs/outputs.

Every artifact-producing stage writes one; downstream stages verify their
inputs against the upstream manifest before trusting them.
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

from .errors import IoError


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def hash_paths(base_dir, paths) -> dict[str, str]:
    """Map of path (relative to base_dir when possible) to content hash."""
    base = Path(base_dir)
    out = {}
    for p in paths:
        p = Path(p)
        try:
            key = str(p.relative_to(base))
        except ValueError:
            key = str(p)
        out[key] = sha256_file(p)
    return out


def write_manifest(out_dir, stage: str, config: dict, inputs: dict[str, str],
                   outputs: dict[str, str], seed: int | None,
                   started: float, name: str | None = None) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "stage": stage,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "started": started,
        "finished": time.time(),
    }
    path = out_dir / (name or f"manifest-{stage}.json")
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return path


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"manifest not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def verify_outputs(manifest_path) -> None:
    """Recompute the manifest's output hashes; mismatch raises IoError."""
    manifest = read_manifest(manifest_path)
    base = Path(manifest_path).parent
    for rel, expected in manifest.get("outputs", {}).items():
        target = base / rel
        if not target.is_file():
            raise IoError(f"artifact listed in {manifest_path} is missing: {rel}")
        actual = sha256_file(target)
        if actual != expected:
            raise IoError(
                f"artifact hash mismatch for {rel}: manifest {expected[:12]}..., "
                f"file {actual[:12]}...")


def verify_input_manifest(artifact_path, stage: str | None = None) -> None:
    """If a manifest covering `artifact_path` sits next to it, verify it."""
    artifact_path = Path(artifact_path)
    directory = artifact_path.parent
    candidates = sorted(directory.glob("manifest-*.json"))
    for candidate in candidates:
        manifest = read_manifest(candidate)
        if stage is not None and manifest.get("stage") != stage:
            continue
        if artifact_path.name in manifest.get("outputs", {}):
            expected = manifest["outputs"][artifact_path.name]
            actual = sha256_file(artifact_path)
            if actual != expected:
                raise IoError(
                    f"{artifact_path} does not match its manifest "
                    f"({candidate.name}): {actual[:12]}... != {expected[:12]}...")
            return

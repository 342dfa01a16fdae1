"""Line-delimited stage artifacts with content-hash based resumption.

Each artifact file starts with a versioned header line followed by one JSON
record per line. A stage manifest records the hash of everything that went
into producing the artifact (config fingerprint plus input file hashes) so
re-running a completed stage with unchanged inputs is a no-op.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .errors import MissingArtifact

ARTIFACT_VERSION = 1


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


def write_artifact(path: str | Path, kind: str, records: list[dict]) -> None:
    """Write header + records atomically (tmp file then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(json.dumps({"artifact": kind, "version": ARTIFACT_VERSION}, sort_keys=True) + "\n")
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_artifact(path: str | Path, kind: str, stage: str) -> list[dict]:
    """Read records, raising ``MissingArtifact(stage)`` when the file is absent."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(stage)
    with open(path, encoding="utf-8") as f:
        header_line = f.readline()
        header = json.loads(header_line) if header_line else {}
        if header.get("artifact") != kind:
            raise ValueError(f"{path} holds artifact {header.get('artifact')!r}, expected {kind!r}")
        if header.get("version") != ARTIFACT_VERSION:
            raise ValueError(f"{path} has unsupported artifact version {header.get('version')!r}")
        return [json.loads(line) for line in f if line.strip()]


class StageManifest:
    """Skip-if-unchanged bookkeeping for one stage.

    Paths under the output directory are stored relative to it so two runs
    into different directories produce byte-identical manifests.
    """

    def __init__(self, output_dir: str | Path, stage: str):
        self.stage = stage
        self.root = Path(output_dir)
        self.path = self.root / "manifests" / f"{stage}.json"

    def _rel(self, path: Path) -> str:
        try:
            return str(Path(path).relative_to(self.root))
        except ValueError:
            return str(path)

    def input_hash(self, config_fingerprint: dict, input_paths: list[Path]) -> str:
        return canonical_hash(
            {
                "config": config_fingerprint,
                "inputs": {self._rel(p): file_sha256(p) for p in sorted(input_paths)},
            }
        )

    def is_current(self, input_hash: str, outputs: list[Path]) -> bool:
        if not self.path.exists():
            return False
        try:
            manifest = json.loads(self.path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return False
        if manifest.get("input_hash") != input_hash:
            return False
        recorded = manifest.get("outputs", [])
        return all((self.root / p).exists() for p in recorded) and sorted(recorded) == sorted(
            self._rel(p) for p in outputs
        )

    def record(self, input_hash: str, outputs: list[Path]) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        payload = {
            "stage": self.stage,
            "input_hash": input_hash,
            "outputs": sorted(self._rel(p) for p in outputs),
        }
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self.path)

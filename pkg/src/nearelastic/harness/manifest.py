"""Run manifests: enough to replay a run and check its outputs."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .. import __version__

MANIFEST_NAME = "manifest.json"


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    subcommand: str
    seed: int
    params: dict
    config_sha256: str | None = None
    config_text: str | None = None
    v_table_text: str | None = None
    version: str = __version__
    duration_s: float = 0.0
    outputs: dict = field(default_factory=dict)  # file name -> sha256

    def record_outputs(self, out_dir, names):
        out_dir = Path(out_dir)
        self.outputs = {n: file_sha256(out_dir / n) for n in sorted(names)}

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / MANIFEST_NAME
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(asdict(self), sort_keys=True, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(**data)

    def verify(self, out_dir) -> list:
        """Names of listed outputs whose current hash differs (or that are missing)."""
        out_dir = Path(out_dir)
        bad = []
        for name, digest in self.outputs.items():
            p = out_dir / name
            if not p.exists() or file_sha256(p) != digest:
                bad.append(name)
        return bad

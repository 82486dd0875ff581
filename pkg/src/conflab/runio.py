"""Run-directory bookkeeping: CSV/JSONL writers, checksums, manifest."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

SCHEMA_VERSION = 1


def write_csv(path, fieldnames, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k) for k in fieldnames})


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, default=_coerce)
        f.write("\n")


def _coerce(obj):
    import numpy as np

    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class RunDir:
    """Collects every emitted file so the manifest can checksum them all."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[Path] = []

    def path(self, *parts) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(p)
        return p

    def adopt(self, path) -> None:
        """Track a file written by someone else (e.g. the trainer)."""
        self.files.append(Path(path))

    def write_manifest(self, config_echo: dict, extra: dict | None = None) -> Path:
        entries = []
        for p in sorted(set(self.files)):
            if p.exists():
                entries.append(
                    {"path": str(p.relative_to(self.root)), "sha256": sha256_file(p)}
                )
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "config": config_echo,
            "files": entries,
        }
        if extra:
            manifest.update(extra)
        out = self.root / "manifest.json"
        write_json(out, manifest)
        return out

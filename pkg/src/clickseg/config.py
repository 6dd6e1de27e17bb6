"""Experiment configuration: a JSON file with optional sections (model,
train, guidance, inference) plus top-level dataset/output/seed. CLI flags
passed explicitly always win over config values."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

_SECTIONS = ("model", "train", "guidance", "inference")


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    output: str | None = None
    seed: int | None = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    guidance: dict = field(default_factory=dict)
    inference: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            doc = json.load(f)
        for section in _SECTIONS:
            if section in doc and not isinstance(doc[section], dict):
                raise ValueError(f"config section {section!r} must be an "
                                 f"object")
        return cls(
            dataset=doc.get("dataset"),
            output=doc.get("output"),
            seed=doc.get("seed"),
            **{s: dict(doc.get(s, {})) for s in _SECTIONS},
            raw=doc,
        )

    def section(self, name: str) -> dict:
        return getattr(self, name)


def resolve(explicit, config_value, default):
    """CLI flag (if given) > config file value > hard default."""
    if explicit is not None:
        return explicit
    if config_value is not None:
        return config_value
    return default


def content_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_run_manifest(out_dir, command: str, params: dict,
                       inputs: list | None = None) -> Path:
    """Record what produced this output directory: resolved parameters, a
    hash of them, and content hashes of the inputs, so gen-data and sweep
    reruns are byte-reproducible and auditable."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params_json = json.dumps(params, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "params": json.loads(params_json),
        "config_hash": hashlib.sha256(params_json.encode()).hexdigest(),
        "input_hashes": {
            str(p): content_hash(p)
            for p in (inputs or []) if Path(p).is_file()
        },
    }
    path = out_dir / "run_manifest.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path

"""Run configuration: JSON schema, defaults and typed view."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from fxprobe.effects import TABLE2, SweepSpec
from fxprobe.encoders import EncoderConfig
from fxprobe.errors import ValidationError
from fxprobe.loudness import TARGET_LUFS
from fxprobe.probe import ProbeConfig

SEED_ENV = "FXPROBE_SEED"

_NUM = {"type": "number"}
_INT = {"type": "integer"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["seed", "corpus"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "corpus": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mode", "n_per_instrument"],
                    "properties": {"mode": {"const": "synth"},
                                   "n_per_instrument": {"type": "integer", "minimum": 1}},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mode", "input_dir"],
                    "properties": {"mode": {"const": "external"},
                                   "input_dir": {"type": "string", "minLength": 1}},
                },
            ]
        },
        "target_lufs": _NUM,
        "encoder": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["mel", "random_projection", "external"]},
                "n_fft": {"type": "integer", "minimum": 2},
                "hop": {"type": "integer", "minimum": 1},
                "n_mels": {"type": "integer", "minimum": 8, "maximum": 256},
                "fmin": _NUM,
                "fmax": _NUM,
                "log_floor": {"type": "number", "exclusiveMinimum": 0},
                "dims": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "directory": {"type": "string"},
            },
        },
        "probe": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "max_epochs": {"type": "integer", "minimum": 1},
                "patience": {"type": "integer", "minimum": 1},
                "beta1": _NUM,
                "beta2": _NUM,
                "eps": {"type": "number", "exclusiveMinimum": 0},
                "weight_decay": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
        "sweep": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "param", "min", "max"],
                "properties": {
                    "id": {"enum": ["CHS", "CMP", "DLY", "DIS", "HPF", "LPF", "PS", "RVB"]},
                    "param": {"type": "string"},
                    "min": _NUM,
                    "max": _NUM,
                    "steps": {"type": "integer", "minimum": 2},
                    "scale": {"enum": ["linear", "log"]},
                },
            },
        },
        "sweep_clips_per_instrument": {"type": "integer", "minimum": 1},
        "mask": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"mask_raw": {"type": "boolean"}},
        },
        "project": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"normalize": {"type": "boolean"}},
        },
        "output_dir": {"type": "string", "minLength": 1},
    },
}


@dataclass
class RunConfig:
    seed: int
    corpus: dict
    target_lufs: float
    encoder: EncoderConfig
    probe: ProbeConfig
    sweep: list[SweepSpec]
    sweep_clips_per_instrument: int
    mask_raw: bool
    project_normalize: bool
    output_dir: Path
    raw: dict

    def section_hash(self, *keys: str) -> str:
        """Stable digest of the named raw config sections, for stage caching."""
        part = {k: self.raw.get(k) for k in keys}
        text = json.dumps(part, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def parse_config(doc: dict, output_dir: str | Path | None = None, env: dict | None = None) -> RunConfig:
    """Validate a config document and fill defaults.

    ``FXPROBE_SEED`` in ``env`` (default: the process environment) replaces
    ``seed``; ``output_dir`` replaces the document's output directory.
    """
    doc = copy.deepcopy(doc)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            doc["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ValidationError(f"{SEED_ENV} must be an integer") from exc
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValidationError(f"config {path}: {exc.message}") from exc

    doc.setdefault("target_lufs", TARGET_LUFS)
    doc.setdefault("encoder", {})
    doc.setdefault("probe", {})
    doc["probe"].setdefault("seed", doc["seed"])
    doc.setdefault("sweep", [s.to_dict() for s in TABLE2])
    doc.setdefault("sweep_clips_per_instrument", 16)
    if output_dir is not None:
        doc["output_dir"] = str(output_dir)
    doc.setdefault("output_dir", "fxprobe-out")

    try:
        encoder = EncoderConfig.from_dict(doc["encoder"])
        probe = ProbeConfig.from_dict(doc["probe"])
        sweeps = [SweepSpec.from_dict(s) for s in doc["sweep"]]
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from exc
    return RunConfig(
        seed=doc["seed"],
        corpus=doc["corpus"],
        target_lufs=float(doc["target_lufs"]),
        encoder=encoder,
        probe=probe,
        sweep=sweeps,
        sweep_clips_per_instrument=doc["sweep_clips_per_instrument"],
        mask_raw=doc.get("mask", {}).get("mask_raw", False),
        project_normalize=doc.get("project", {}).get("normalize", False),
        output_dir=Path(doc["output_dir"]),
        raw=doc,
    )


def load_config(path: str | Path, output_dir: str | Path | None = None) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return parse_config(doc, output_dir)

"""Pipeline configuration: one JSON document, one section per stage.

Every field has a default, so ``{}`` is a valid config. Unknown keys are
rejected. Two profiles exist: ``paper`` (the full-scale settings) and
``desk`` (a CPU-sized variant used by the bundled corpus and the tests).
"""

import json
from dataclasses import asdict, dataclass, field, fields, replace

from vqanon.anonymizer import AnonymizationConfig
from vqanon.content import ContentEncoderConfig
from vqanon.errors import DataError
from vqanon.features import FeatureConfig
from vqanon.prosody import ProsodyEncoderConfig
from vqanon.synthesis import GeneratorConfig
from vqanon.training import TrainConfig

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PathsConfig:
    feature_dir: str = "features"
    xvector_dir: str = "xvectors"
    pool_file: str = "pool.pool"
    run_dir: str = ""


_SECTIONS = {
    "features": FeatureConfig,
    "encoder": ContentEncoderConfig,
    "prosody": ProsodyEncoderConfig,
    "anonymizer": AnonymizationConfig,
    "generator": GeneratorConfig,
    "training": TrainConfig,
    "paths": PathsConfig,
}

_PROFILES = {
    "paper": {},
    "desk": {
        "generator": {"base_channels": 256},
        "training": {"batch_size": 8, "max_steps": 2000, "segment_frames": 8,
                     "disc_width_divisor": 16, "checkpoint_every": 50},
    },
}


@dataclass(frozen=True)
class PipelineConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    encoder: ContentEncoderConfig = field(default_factory=ContentEncoderConfig)
    prosody: ProsodyEncoderConfig = field(default_factory=ProsodyEncoderConfig)
    anonymizer: AnonymizationConfig = field(default_factory=AnonymizationConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0
    profile: str = "paper"
    schema_version: int = SCHEMA_VERSION

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _tuplify(value):
    if isinstance(value, list):
        return tuple(_tuplify(v) for v in value)
    return value


def _build_section(name, data):
    cls = _SECTIONS[name]
    if not isinstance(data, dict):
        raise DataError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise DataError(f"unknown key(s) in section {name!r}: {', '.join(unknown)}")
    try:
        return cls(**{k: _tuplify(v) for k, v in data.items()})
    except (TypeError, ValueError) as exc:
        raise DataError(f"invalid section {name!r}: {exc}") from exc


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def from_dict(data, profile=None, seed=None):
    """Resolve a config document, applying the profile then explicit values.

    ``profile`` and ``seed`` arguments (CLI flags) override the document.
    The top-level seed is copied into ``training.seed`` and
    ``anonymizer.rng_seed``.
    """
    if not isinstance(data, dict):
        raise DataError("config must be a JSON object")
    allowed = set(_SECTIONS) | {"seed", "profile", "schema_version"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise DataError(f"unknown top-level key(s): {', '.join(unknown)}")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise DataError(f"unsupported config schema_version {version}")
    profile = profile or data.get("profile", "paper")
    if profile not in _PROFILES:
        raise DataError(f"unknown profile {profile!r}")
    merged = _merge(_PROFILES[profile], {k: v for k, v in data.items() if k in _SECTIONS})
    sections = {name: _build_section(name, merged.get(name, {})) for name in _SECTIONS}
    seed = int(data.get("seed", 0) if seed is None else seed)
    sections["training"] = replace(sections["training"], seed=seed)
    sections["anonymizer"] = replace(sections["anonymizer"], rng_seed=seed)
    return PipelineConfig(**sections, seed=seed, profile=profile)


def load_config(path=None, profile=None, seed=None):
    data = {}
    if path:
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from exc
    return from_dict(data, profile=profile, seed=seed)

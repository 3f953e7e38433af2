"""Pipeline configuration: one YAML file with a section per stage.

Every implementation constant has a named key with its default pinned here
(lambda 0.9, fused k 5, top-20 relevant + 30 random candidates, beam 5,
backbone lr 2e-4, entailment-decoder lr 2e-5). Unknown keys are rejected with
the list of valid keys. Section hashes are embedded in every derived artifact
so stale caches are detected when a config changes.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dual_encoder import DualEncoderConfig
from .errors import ConfigError
from .reader import ReaderConfig
from .segmentation import SegmenterConfig
from .synthetic import SyntheticSpec
from .training import TrainingConfig


@dataclass
class CorpusPaths:
    kb: str | None = None
    train: str | None = None
    dev: str | None = None
    test: str | None = None


@dataclass
class RetrieverSection:
    type: str = "tfidf"  # "tfidf" or "dense"
    top_k: int = 20
    dual: DualEncoderConfig = field(default_factory=DualEncoderConfig)

    def __post_init__(self):
        if self.type not in ("tfidf", "dense"):
            raise ConfigError(f"retriever.type must be 'tfidf' or 'dense', got {self.type!r}")


@dataclass
class FusionSection:
    k: int = 5
    top_relevant: int = 20
    num_random: int = 30
    force_gold: bool = True
    shuffle: bool = True


@dataclass
class ModelSection:
    hidden_dim: int = 128
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 256
    dropout: float = 0.1
    max_input_len: int = 96
    max_target_len: int = 64
    inter_sentence_layers: int = 1
    inter_sentence_heads: int = 8
    pretrained_checkpoint: str | None = None  # full-scale mode: user-supplied weights

    def reader_config(self, vocab_size: int) -> ReaderConfig:
        return ReaderConfig(
            vocab_size=vocab_size,
            hidden_dim=self.hidden_dim,
            num_encoder_layers=self.num_encoder_layers,
            num_decoder_layers=self.num_decoder_layers,
            num_heads=self.num_heads,
            ffn_dim=self.ffn_dim,
            dropout=self.dropout,
            max_input_len=self.max_input_len,
            max_target_len=self.max_target_len,
            inter_sentence_layers=self.inter_sentence_layers,
            inter_sentence_heads=self.inter_sentence_heads,
        )


@dataclass
class EvaluationSection:
    beam_size: int = 5
    max_len: int = 64
    k: int = 5


@dataclass
class PipelineConfig:
    run_dir: str = "runs/default"
    seed: int = 13
    mode: str = "desk"  # "desk" or "full"
    corpus: CorpusPaths = field(default_factory=CorpusPaths)
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    retriever: RetrieverSection = field(default_factory=RetrieverSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    model: ModelSection = field(default_factory=ModelSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)

    def __post_init__(self):
        if self.mode not in ("desk", "full"):
            raise ConfigError(f"mode must be 'desk' or 'full', got {self.mode!r}")

    def effective_training(self) -> TrainingConfig:
        """Training config with the fusion section and global seed folded in.

        The ablation flags on ``training`` stay authoritative; the fusion
        section supplies the candidate-pool constants.
        """
        return dataclasses.replace(
            self.training,
            seed=self.seed,
            fusion_k=self.fusion.k,
            top_relevant=self.fusion.top_relevant,
            num_random=self.fusion.num_random,
            force_gold=self.fusion.force_gold,
            use_shuffle=self.training.use_shuffle and self.fusion.shuffle,
        )


def _coerce(value, annotation):
    origin = typing.get_origin(annotation)
    if origin is tuple and isinstance(value, list):
        return tuple(value)
    return value


def build_section(cls, data, path="config"):
    """Recursive dataclass builder that rejects unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    field_map = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(field_map))
    if unknown:
        raise ConfigError(
            f"{path}: unknown key(s) {unknown}; valid keys: {sorted(field_map)}"
        )
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for name, value in data.items():
        annotation = hints.get(name)
        target = annotation
        if dataclasses.is_dataclass(target) and isinstance(value, dict):
            kwargs[name] = build_section(target, value, f"{path}.{name}")
        else:
            kwargs[name] = _coerce(value, annotation)
    return cls(**kwargs)


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    data = {}
    if path is not None:
        raw = Path(path).read_text(encoding="utf-8")
        data = yaml.safe_load(raw) or {}
    config = build_section(PipelineConfig, data)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if not hasattr(config, key):
            raise ConfigError(f"unknown override {key!r}")
        setattr(config, key, value)
    return config


def config_hash(section) -> str:
    payload = dataclasses.asdict(section) if dataclasses.is_dataclass(section) else section
    blob = json.dumps(payload, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


ABLATION_STAGES = ("s", "a", "i", "f")


def apply_ablation(config: PipelineConfig, spec: str | None) -> PipelineConfig:
    """Map an ablation spec ('s', 's+a', 's+a+i', 's+a+i+f') onto the training
    flags: s drops the RD candidate pool, a the entailment loss, i the order
    shuffle, f multi-candidate fusion (top-1 only)."""
    if not spec:
        return config
    parts = spec.split("+")
    unknown = sorted(set(parts) - set(ABLATION_STAGES))
    if unknown:
        raise ConfigError(
            f"unknown ablation stage(s) {unknown}; valid stages: {list(ABLATION_STAGES)}"
        )
    training = config.training
    if "s" in parts:
        training = dataclasses.replace(training, use_rd_pool=False)
    if "a" in parts:
        training = dataclasses.replace(training, use_entailment_loss=False)
    if "i" in parts:
        training = dataclasses.replace(training, use_shuffle=False)
    if "f" in parts:
        training = dataclasses.replace(training, use_fusion=False)
    return dataclasses.replace(config, training=training)


def snapshot(config: PipelineConfig, run_dir) -> None:
    """Write the config and its section hashes into the run directory."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    payload = dataclasses.asdict(config)
    (run_dir / "config_snapshot.yaml").write_text(
        yaml.safe_dump(payload, sort_keys=True), encoding="utf-8"
    )
    hashes = {
        "pipeline": config_hash(config),
        "segmenter": config_hash(config.segmenter),
        "retriever": config_hash(config.retriever),
        "fusion": config_hash(config.fusion),
        "model": config_hash(config.model),
        "training": config_hash(config.effective_training()),
        "synthetic": config_hash(config.synthetic),
    }
    (run_dir / "hashes.json").write_text(
        json.dumps(hashes, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

"""Experiment configuration: one YAML file with a section per pipeline stage.

CLI flags override file values via dot paths (e.g. ``transfer.lr=3e-4``).
Validation errors always name the offending field path.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from typing import Any

import yaml

from .errors import ConfigError

OUTPUT_ROOT_ENV = "STYLECAST_OUTPUT_ROOT"


@dataclass
class DimsConfig:
    d_b: int = 32          # text embedding width
    d_e: int = 64          # local encoder output width
    d_st: int = 64         # style vector width
    d_a: int = 64          # attention projection width
    d_model: int = 64      # backbone channel width
    n_mels: int = 20
    n_tokens: int = 10     # style token table rows; fixed
    d_speaker: int = 16


@dataclass
class CorpusConfig:
    n_train: int = 2000
    n_test: int = 200
    n_mels: int = 20
    vocab_size: int = 40
    n_phoneme_symbols: int = 24
    words_min: int = 2
    words_max: int = 7
    phonemes_max_l1: int = 6
    phonemes_max_l2: int = 3
    frames_per_phoneme: int = 3
    match_fraction: float = 0.85
    shuffle_l2: bool = True
    rho: float = 0.8
    n_speakers: int = 4
    base_f0: float = 150.0
    speaker_f0_step: float = 12.0
    global_pitch_std: float = 32.0        # Hz, shared across the pair
    word_pitch_std: float = 20.0          # Hz, correlated per mapped word
    global_energy_std: float = 0.10       # log-units, shared; keep well under
                                          # word_energy_std or unrelated pairs
                                          # inherit word-level correlation
    word_energy_std: float = 0.30         # log-units, correlated
    global_rate_std: float = 0.22         # log-units, shared
    word_length_std: float = 0.25         # log-units, correlated
    frame_shift_ms: float = 10.0
    window_ms: float = 25.0


@dataclass
class PretrainConfig:
    steps: int = 5000
    batch_size: int = 32
    lr: float = 1e-3
    grad_clip: float = 1.0
    adversarial_weight: float = 2.0
    grl_lambda: float = 1.0
    style_mean_weight: float = 1.0   # penalty on per-utterance mean of local styles
    log_every: int = 100


@dataclass
class TransferConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-4
    grad_clip: float = 1.0
    temperature: float = 0.5     # attention softmax temperature during training
    prenet_dropout: float = 0.1  # word encoders; high rates starve the heads


@dataclass
class AblationConfig:
    seeds: list[int] = field(default_factory=lambda: [11, 12, 13])
    pretrain_steps: int = 2000
    n_train: int = 800
    n_test: int = 150


@dataclass
class AblationFlags:
    use_global: bool = True
    use_local: bool = True
    directions: str = "both"  # both | 1to2 | 2to1


@dataclass
class ExperimentConfig:
    dims: DimsConfig = field(default_factory=DimsConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)
    flags: AblationFlags = field(default_factory=AblationFlags)
    mode: str = "multiscale"  # multiscale | duration_only | none
    master_seed: int = 1234
    eval_seeds: list[int] = field(default_factory=lambda: [1234, 1235, 1236])
    torch_threads: int = 0   # 0 = leave torch default
    text_provider: str = "synthetic"
    embeddings_dir: str = ""
    output_root: str = "out"

    def resolved_output_root(self) -> str:
        return os.environ.get(OUTPUT_ROOT_ENV, "").strip() or self.output_root


_SECTIONS = {
    "dims": DimsConfig,
    "corpus": CorpusConfig,
    "pretrain": PretrainConfig,
    "transfer": TransferConfig,
    "ablation": AblationConfig,
    "flags": AblationFlags,
}


def _coerce(path: str, value: Any, target_type: type) -> Any:
    try:
        if target_type is bool:
            if isinstance(value, bool):
                return value
            if isinstance(value, str):
                if value.lower() in ("true", "1", "yes"):
                    return True
                if value.lower() in ("false", "0", "no"):
                    return False
            raise ValueError(value)
        if target_type is int:
            out = int(value)
            if isinstance(value, float) and value != out:
                raise ValueError(value)
            return out
        if target_type is float:
            return float(value)
        if target_type is str:
            return str(value)
        if target_type is list:
            if isinstance(value, str):
                return [int(v) for v in value.split(",") if v.strip()]
            return list(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: cannot interpret {value!r} as {target_type.__name__}") from exc
    return value


def _apply_section(section_obj: Any, prefix: str, values: dict) -> None:
    fields = {f.name: f for f in dataclasses.fields(section_obj)}
    for key, value in values.items():
        if key not in fields:
            raise ConfigError(f"{prefix}{key}: unknown configuration key")
        current = getattr(section_obj, key)
        target = list if isinstance(current, list) else type(current)
        setattr(section_obj, key, _coerce(f"{prefix}{key}", value, target))


def from_mapping(data: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if not isinstance(data, dict):
        raise ConfigError("(root): configuration must be a mapping")
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected a mapping of settings")
            _apply_section(getattr(cfg, key), f"{key}.", value)
        else:
            _apply_section(cfg, "", {key: value})
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    except FileNotFoundError as exc:
        raise ConfigError(f"(config file): {path} does not exist") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"(config file): {path} is not valid YAML: {exc}") from exc
    return from_mapping(data)


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> None:
    """Apply ``section.key=value`` (or ``key=value``) override strings."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"{item}: override must look like section.key=value")
        path, _, raw = item.partition("=")
        parts = path.strip().split(".")
        if len(parts) == 1:
            _apply_section(cfg, "", {parts[0]: raw})
        elif len(parts) == 2 and parts[0] in _SECTIONS:
            _apply_section(getattr(cfg, parts[0]), f"{parts[0]}.", {parts[1]: raw})
        else:
            raise ConfigError(f"{path}: unknown configuration key")


def validate(cfg: ExperimentConfig) -> None:
    """Check every invariant; raise ConfigError naming the first bad field."""
    d = cfg.dims
    if d.n_tokens != 10:
        raise ConfigError(f"dims.n_tokens: must be 10, got {d.n_tokens}")
    for name in ("d_b", "d_e", "d_st", "d_a", "d_model", "d_speaker"):
        if getattr(d, name) < 1:
            raise ConfigError(f"dims.{name}: must be >= 1")
    if d.n_mels < 20:
        raise ConfigError(f"dims.n_mels: must be >= 20 (band-split metrics need 10+10 bins)")

    c = cfg.corpus
    if c.n_mels != d.n_mels:
        raise ConfigError(
            f"corpus.n_mels: must match dims.n_mels ({c.n_mels} != {d.n_mels})")
    if c.n_train < 1 or c.n_test < 1:
        raise ConfigError("corpus.n_train: corpus sizes must be >= 1")
    if c.words_min < 1 or c.words_max < c.words_min:
        raise ConfigError("corpus.words_min: need 1 <= words_min <= words_max")
    if c.vocab_size < c.words_max:
        raise ConfigError("corpus.vocab_size: must be >= words_max (words are sampled without replacement)")
    if not 0.0 < c.match_fraction <= 1.0:
        raise ConfigError(f"corpus.match_fraction: must be in (0, 1], got {c.match_fraction}")
    if not -1.0 <= c.rho <= 1.0:
        raise ConfigError(f"corpus.rho: must be in [-1, 1], got {c.rho}")
    if c.frames_per_phoneme < 1:
        raise ConfigError("corpus.frames_per_phoneme: must be >= 1")
    if c.n_speakers < 1:
        raise ConfigError("corpus.n_speakers: must be >= 1")
    if c.frame_shift_ms <= 0:
        raise ConfigError("corpus.frame_shift_ms: must be > 0")

    p = cfg.pretrain
    if p.steps < 1 or p.batch_size < 1:
        raise ConfigError("pretrain.steps: steps and batch_size must be >= 1")
    if p.lr <= 0:
        raise ConfigError(f"pretrain.lr: must be > 0, got {p.lr}")
    if p.adversarial_weight < 0 or p.style_mean_weight < 0:
        raise ConfigError("pretrain.adversarial_weight: auxiliary weights must be >= 0")

    t = cfg.transfer
    if t.epochs < 1 or t.batch_size < 1:
        raise ConfigError("transfer.epochs: epochs and batch_size must be >= 1")
    if t.lr <= 0:
        raise ConfigError(f"transfer.lr: must be > 0, got {t.lr}")
    if t.temperature <= 0:
        raise ConfigError(f"transfer.temperature: must be > 0, got {t.temperature}")
    if not 0.0 <= t.prenet_dropout < 1.0:
        raise ConfigError(f"transfer.prenet_dropout: must be in [0, 1), got {t.prenet_dropout}")

    if cfg.mode not in ("multiscale", "duration_only", "none"):
        raise ConfigError(f"mode: must be multiscale, duration_only or none, got {cfg.mode!r}")
    if cfg.flags.directions not in ("both", "1to2", "2to1"):
        raise ConfigError(f"flags.directions: must be both, 1to2 or 2to1, got {cfg.flags.directions!r}")
    if cfg.text_provider not in ("synthetic", "external"):
        raise ConfigError(f"text_provider: must be synthetic or external, got {cfg.text_provider!r}")
    if cfg.text_provider == "external" and not cfg.embeddings_dir:
        raise ConfigError("embeddings_dir: required when text_provider is external")
    if not cfg.ablation.seeds:
        raise ConfigError("ablation.seeds: at least one seed required")


def to_mapping(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(to_mapping(cfg), fh, sort_keys=False)

"""Experiment configuration: one JSON file, fully materialized defaults.

Every run writes the resolved config next to its outputs so the artifact
tree is self-describing; reruns from that file are byte-identical.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .attacks import AttackName
from .exceptions import ValidationError
from .scalogram import Visualization
from .synth import CLASS_NAMES

DEFAULT_ATTACKS = {
    "fgsm": {"eps": 0.01},
    "bim_a": {"eps": 0.01, "step": 0.003, "iters": 10},
    "bim_b": {"eps": 0.01, "step": 0.003, "iters": 10},
    "jsma": {"budget_fraction": 0.05, "theta": 0.2},
    "cwa": {"c_init": 1.0, "steps": 200, "search_steps": 5, "lr": 0.05},
    "opt": {"c_init": 1.0, "steps": 200, "search_steps": 5, "lr": 0.05},
    "ea": {"step": 0.05, "iters": 200},
    "lfa": {"flip_fraction": 0.2},
}


@dataclass
class CorpusConfig:
    wav_dir: str | None = None  # None -> synthetic corpus
    classes: tuple = CLASS_NAMES
    clips_per_class: int = 60
    duration: float = 1.0
    sample_rate: int = 8000


@dataclass
class SpectrogramConfig:
    n: int = 32
    visualization: str = "log"
    augmentation_scales: tuple = (0.75, 0.9, 1.15, 1.5)
    noise_sigmas: tuple = (0.01, 0.02, 0.04, 0.05)


@dataclass
class VictimConfig:
    mlp_hidden: tuple = (128, 64)
    mlp_epochs: int = 40
    mlp_batch_size: int = 32
    mlp_learning_rate: float = 0.05
    mlp_seed: int = 3
    surrogate_seed: int = 99
    svm_c: float = 10.0
    svm_g: float | None = None
    svm_tol: float = 1e-3


@dataclass
class DetectorConfig:
    reg_strength: float = 1.0
    clip_cap: float = 30.0
    pairs_per_class: int | None = None
    train_attacks: tuple | None = None  # None -> small-budget gradient family
    seed: int = 0


@dataclass
class ChordalConfig:
    probes: int = 16
    seed: int = 0


@dataclass
class ExperimentConfig:
    out_dir: str = "runs/desk"
    seed: int = 0
    workers: int = 1
    epsilon_cap: float = 1.0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    spectrogram: SpectrogramConfig = field(default_factory=SpectrogramConfig)
    attacks: dict = field(
        default_factory=lambda: {k: dict(v) for k, v in DEFAULT_ATTACKS.items()}
    )
    victims: VictimConfig = field(default_factory=VictimConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    chordal: ChordalConfig = field(default_factory=ChordalConfig)


_SECTIONS = {
    "corpus": CorpusConfig,
    "spectrogram": SpectrogramConfig,
    "victims": VictimConfig,
    "detector": DetectorConfig,
    "chordal": ChordalConfig,
}


def _coerce(cls, data, where):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValidationError(f"{where}: unknown key(s) {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data):
    if not isinstance(data, dict):
        raise ValidationError("config root must be a JSON object")
    plain = {k: v for k, v in data.items() if k not in _SECTIONS}
    cfg = _coerce(ExperimentConfig, plain, "config")
    for name, cls in _SECTIONS.items():
        if name in data:
            if not isinstance(data[name], dict):
                raise ValidationError(f"{name}: must be a JSON object")
            setattr(cfg, name, _coerce(cls, data[name], name))
    if not isinstance(cfg.attacks, dict):
        raise ValidationError("attacks: must be a JSON object")
    return cfg


def config_to_dict(cfg):
    out = dataclasses.asdict(cfg)

    def _plain(value):
        if isinstance(value, tuple):
            return [_plain(v) for v in value]
        if isinstance(value, dict):
            return {k: _plain(v) for k, v in value.items()}
        return value

    return _plain(out)


def validate_config(cfg):
    """Fail fast with the dotted path of the first offending field."""
    if cfg.workers < 1:
        raise ValidationError("workers: must be >= 1")
    if not isinstance(cfg.seed, int):
        raise ValidationError("seed: must be an explicit integer")
    if cfg.epsilon_cap <= 0:
        raise ValidationError("epsilon_cap: must be positive")

    c = cfg.corpus
    if c.wav_dir is not None and not os.path.isdir(c.wav_dir):
        raise ValidationError(f"corpus.wav_dir: no such directory {c.wav_dir!r}")
    if len(c.classes) < 2:
        raise ValidationError("corpus.classes: need at least two classes")
    if c.clips_per_class < 3:
        raise ValidationError("corpus.clips_per_class: need at least 3")
    if c.duration <= 0 or c.sample_rate <= 0:
        raise ValidationError("corpus: duration and sample_rate must be positive")

    s = cfg.spectrogram
    if s.n < 2:
        raise ValidationError("spectrogram.n: must be >= 2")
    try:
        Visualization(s.visualization)
    except ValueError:
        raise ValidationError(
            f"spectrogram.visualization: unknown mode {s.visualization!r}"
        ) from None
    for scale in s.augmentation_scales:
        if not 0.5 <= scale <= 2.0:
            raise ValidationError(
                f"spectrogram.augmentation_scales: {scale} outside [0.5, 2.0]"
            )
    if not s.noise_sigmas:
        raise ValidationError("spectrogram.noise_sigmas: must be nonempty")
    if any(sig <= 0 for sig in s.noise_sigmas):
        raise ValidationError("spectrogram.noise_sigmas: must be positive")

    valid_names = {a.value for a in AttackName}
    for name, params in cfg.attacks.items():
        if name not in valid_names:
            raise ValidationError(f"attacks.{name}: unknown attack")
        if not isinstance(params, dict):
            raise ValidationError(f"attacks.{name}: parameters must be an object")

    d = cfg.detector
    if d.reg_strength < 0:
        raise ValidationError("detector.reg_strength: must be >= 0")
    if d.clip_cap <= 0:
        raise ValidationError("detector.clip_cap: must be positive")
    if d.pairs_per_class is not None and d.pairs_per_class < 0:
        raise ValidationError("detector.pairs_per_class: must be >= 0")
    if d.train_attacks is not None:
        for name in d.train_attacks:
            if name not in cfg.attacks:
                raise ValidationError(
                    f"detector.train_attacks: {name!r} not in attacks section"
                )

    if cfg.chordal.probes < 1:
        raise ValidationError("chordal.probes: must be >= 1")
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from None
    return validate_config(config_from_dict(data))


def save_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")

"""Experiment configuration: one INI file with flat key/value sections.

Sections and defaults are documented in the README; unknown keys are an
error so typos fail loudly.  Paths are resolved relative to the config
file's directory.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .training import TrainConfig

ABLATIONS = ("none", "no-prior", "rand-prior", "no-invariance")

_KNOWN_KEYS = {
    "data": {"kind", "train", "test_fault", "test_normal", "truth", "prior",
             "onset", "tep_dir"},
    "model": {"window", "hidden_dim"},
    "training": {"lambda_invariance", "lambda_prior", "lambda_sparsity",
                 "lambda_discrete", "lr_pretrain", "lr_graph", "lr_finetune",
                 "batch_size", "epochs_pretrain", "epochs_graph",
                 "epochs_finetune", "patience", "momentum", "seed", "ablation"},
    "monitoring": {"significance"},
    "diagnosis": {"delta"},
    "synth": {"n_vars", "n_edges", "allow_self", "n_regimes", "regime_length",
              "scale_low", "scale_high", "noise_std", "test_length",
              "fault_variable", "fault_onset", "fault_magnitude",
              "normal_length", "prior_fraction", "seed", "spectral_radius"},
}


@dataclass
class DataConfig:
    kind: str = "synthetic"  # synthetic | tep
    train: Path | None = None
    test_fault: Path | None = None
    test_normal: Path | None = None
    truth: Path | None = None
    prior: Path | None = None
    onset: int | None = None
    tep_dir: Path | None = None


@dataclass
class SynthConfig:
    n_vars: int = 10
    n_edges: int = 15
    allow_self: bool = False
    n_regimes: int = 3
    regime_length: int = 400
    scale_low: float = 0.5
    scale_high: float = 1.5
    noise_std: float = 0.05
    test_length: int = 960
    fault_variable: int = 0
    fault_onset: int = 160
    fault_magnitude: float = 0.5
    normal_length: int = 2000
    prior_fraction: float = 0.3
    spectral_radius: float = 0.85
    seed: int = 0


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    window: int = 5
    hidden_dim: int = 2
    train: TrainConfig = field(default_factory=TrainConfig)
    significance: float = 0.01
    delta: float = 0.1
    ablation: str = "none"
    synth: SynthConfig = field(default_factory=SynthConfig)
    source_path: Path | None = None

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be at least 2")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be at least 1")
        if not 0.0 < self.significance < 0.5:
            raise ValueError("significance must be in (0, 0.5)")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}")


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def load_config(path, check_files=True) -> ExperimentConfig:
    """Parse and validate a config file.

    With ``check_files`` every referenced dataset file must already exist;
    the synthetic generator disables the check because it creates them.
    """
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not parser.read(path):
        raise FileNotFoundError(f"config file not found: {path}")
    base = path.resolve().parent

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ValueError(f"{path}: unknown section [{section}]")
        unknown = set(parser[section]) - _KNOWN_KEYS[section]
        if unknown:
            raise ValueError(f"{path}: unknown keys {sorted(unknown)} in [{section}]")

    def get(section, key, cast, default):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            if cast is bool:
                return parser.getboolean(section, key)
            return cast(raw)
        return default

    data = DataConfig(
        kind=get("data", "kind", str, "synthetic"),
        onset=get("data", "onset", int, None),
    )
    if data.kind not in ("synthetic", "tep"):
        raise ValueError(f"{path}: data kind must be 'synthetic' or 'tep'")
    for key in ("train", "test_fault", "test_normal", "truth", "prior", "tep_dir"):
        if parser.has_option("data", key):
            setattr(data, key, _resolve(base, parser.get("data", key)))

    train = TrainConfig(
        lambda_invariance=get("training", "lambda_invariance", float, 0.02),
        lambda_prior=get("training", "lambda_prior", float, 0.08),
        lambda_sparsity=get("training", "lambda_sparsity", float, 0.01),
        lambda_discrete=get("training", "lambda_discrete", float, 0.03),
        lr_pretrain=get("training", "lr_pretrain", float, 0.05),
        lr_graph=get("training", "lr_graph", float, 0.1),
        lr_finetune=get("training", "lr_finetune", float, 0.05),
        batch_size=get("training", "batch_size", int, 32),
        max_epochs_pretrain=get("training", "epochs_pretrain", int, 60),
        max_epochs_graph=get("training", "epochs_graph", int, 60),
        max_epochs_finetune=get("training", "epochs_finetune", int, 60),
        patience=get("training", "patience", int, 5),
        momentum=get("training", "momentum", float, 0.0),
        seed=get("training", "seed", int, 0),
    )

    synth = SynthConfig(
        n_vars=get("synth", "n_vars", int, 10),
        n_edges=get("synth", "n_edges", int, 15),
        allow_self=get("synth", "allow_self", bool, False),
        n_regimes=get("synth", "n_regimes", int, 3),
        regime_length=get("synth", "regime_length", int, 400),
        scale_low=get("synth", "scale_low", float, 0.5),
        scale_high=get("synth", "scale_high", float, 1.5),
        noise_std=get("synth", "noise_std", float, 0.05),
        test_length=get("synth", "test_length", int, 960),
        fault_variable=get("synth", "fault_variable", int, 0),
        fault_onset=get("synth", "fault_onset", int, 160),
        fault_magnitude=get("synth", "fault_magnitude", float, 0.5),
        normal_length=get("synth", "normal_length", int, 2000),
        prior_fraction=get("synth", "prior_fraction", float, 0.3),
        spectral_radius=get("synth", "spectral_radius", float, 0.85),
        seed=get("synth", "seed", int, 0),
    )

    cfg = ExperimentConfig(
        data=data,
        window=get("model", "window", int, 5),
        hidden_dim=get("model", "hidden_dim", int, 2),
        train=train,
        significance=get("monitoring", "significance", float, 0.01),
        delta=get("diagnosis", "delta", float, 0.1),
        ablation=get("training", "ablation", str, "none"),
        synth=synth,
        source_path=path.resolve(),
    )

    if check_files:
        for key in ("train", "test_fault", "test_normal", "truth", "prior", "tep_dir"):
            value = getattr(data, key)
            if value is not None and not Path(value).exists():
                raise FileNotFoundError(f"{path}: [data] {key} = {value} does not exist")
    return cfg

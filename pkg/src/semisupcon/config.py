"""Experiment configuration files.

A config is an INI file with the sections ``[dataset]``, ``[split]``,
``[train]``, ``[augment]`` and ``[output]``.  Every key is typed by the
dataclass field it fills; unknown sections or keys are a hard error.

Example::

    [dataset]
    kind = blobs
    k = 4
    input_dim = 16

    [train]
    total_steps = 3000
    seeds = 0, 1, 2

    [augment]
    strength = 20
"""
import configparser
import dataclasses
import os
from dataclasses import dataclass, field

from .data import AugmentConfig, gen_gaussian_blobs, gen_two_moons, load_csv, load_idx, split_semi
from .exceptions import ConfigError
from .numerics import SeededRng
from .selftrain import TrainConfig

OUTPUT_DIR_ENV = "SSC_OUTPUT_DIR"
DATASET_KINDS = ("blobs", "moons", "idx", "csv")


@dataclass
class DatasetConfig:
    kind: str = "blobs"
    k: int = 4
    input_dim: int = 16
    n_per_class: int = 629
    spread: float = 0.15
    n: int = 400
    noise: float = 0.1
    images: str = ""
    labels: str = ""
    path: str = ""
    header: bool = False
    standardize: bool = False
    seed: int = 1234


@dataclass
class SplitConfig:
    labels_per_class: int = 4
    val_fraction: float = 0.2
    seed: int = 0


@dataclass
class OutputConfig:
    directory: str = "runs"
    metrics: str = "metrics.ndjson"
    checkpoint: str = "final.ckpt"
    summary: str = "ablation.csv"
    sweep: str = "sweep.csv"


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seeds: tuple = (0, 1, 2)

    @property
    def output_dir(self):
        return os.environ.get(OUTPUT_DIR_ENV) or self.output.directory

    def to_dict(self):
        d = {
            "dataset": dataclasses.asdict(self.dataset),
            "split": dataclasses.asdict(self.split),
            "train": self.train.to_dict(),
            "augment": dataclasses.asdict(self.augment),
            "output": dataclasses.asdict(self.output),
        }
        d["train"]["seeds"] = list(self.seeds)
        d["augment"]["strong_scale_range"] = list(self.augment.strong_scale_range)
        return d

    def with_seed(self, seed):
        """Copy with both the split and the training seed set to ``seed``."""
        return dataclasses.replace(
            self,
            split=dataclasses.replace(self.split, seed=seed),
            train=self.train.replace(seed=seed),
        )


SECTIONS = {
    "dataset": DatasetConfig,
    "split": SplitConfig,
    "train": TrainConfig,
    "augment": AugmentConfig,
    "output": OutputConfig,
}


def _parse_value(raw, default, section, key):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(s) for s in items)
        return raw
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {type(default).__name__}") from None


def parse_config(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None

    values = {}
    seeds = ExperimentConfig().seeds
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        defaults = {f.name: f.default for f in dataclasses.fields(SECTIONS[section])}
        given = {}
        for key, raw in parser.items(section):
            if section == "train" and key == "seeds":
                seeds = _parse_value(raw, (0,), section, key)
                continue
            if key not in defaults:
                raise ConfigError(f"{source}: unknown key '{key}' in [{section}]")
            given[key] = _parse_value(raw, defaults[key], section, key)
        values[section] = given

    dataset = DatasetConfig(**values.get("dataset", {}))
    if dataset.kind not in DATASET_KINDS:
        raise ConfigError(f"{source}: dataset kind must be one of {DATASET_KINDS}")
    train_kw = dict(values.get("train", {}))
    if "k" not in train_kw:
        train_kw["k"] = 2 if dataset.kind == "moons" else dataset.k
    aug_kw = dict(values.get("augment", {}))
    try:
        if set(aug_kw) <= {"strength", "weak_noise_sigma"}:
            augment = AugmentConfig.from_strength(**{"strength": 20, **aug_kw})
        else:
            augment = AugmentConfig(**{**dataclasses.asdict(AugmentConfig()), **aug_kw})
        train = TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return ExperimentConfig(
        dataset=dataset,
        split=SplitConfig(**values.get("split", {})),
        train=train,
        augment=augment,
        output=OutputConfig(**values.get("output", {})),
        seeds=tuple(seeds),
    )


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror or exc}") from None
    return parse_config(text, source=str(path))


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def dump_config(cfg):
    """Serialise every effective value; ``parse_config`` reads it back."""
    lines = []
    for section, values in cfg.to_dict().items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_format_value(v)}" for k, v in values.items())
        lines.append("")
    return "\n".join(lines)


def build_dataset(dcfg):
    rng = SeededRng(dcfg.seed).child("dataset")
    if dcfg.kind == "blobs":
        ds = gen_gaussian_blobs(dcfg.k, dcfg.input_dim, dcfg.n_per_class, dcfg.spread, rng)
    elif dcfg.kind == "moons":
        ds = gen_two_moons(dcfg.n, dcfg.noise, rng)
    elif dcfg.kind == "idx":
        ds = load_idx(dcfg.images, dcfg.labels)
    else:
        ds = load_csv(dcfg.path, header=dcfg.header)
    if dcfg.standardize:
        mean = ds.features.mean(axis=0)
        std = ds.features.std(axis=0)
        ds.features = (ds.features - mean) / (std + (std == 0))
    return ds


def build_split(cfg, dataset=None):
    dataset = dataset if dataset is not None else build_dataset(cfg.dataset)
    if dataset.k != cfg.train.k:
        raise ConfigError(f"dataset has {dataset.k} classes but train.k = {cfg.train.k}")
    rng = SeededRng(cfg.split.seed).child("split")
    return split_semi(dataset, cfg.split.labels_per_class, cfg.split.val_fraction, rng)

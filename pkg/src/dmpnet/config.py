"""Run configuration: a flat ``key = value`` file mapped onto the library configs.

Blank lines and ``#`` comments are ignored. Tuples are comma separated.
Unknown keys are an error. Keys and defaults:

==================  ==================  =======================================
key                 default             meaning
==================  ==================  =======================================
input_size          64                  network input side (divisible by 16)
encoder_widths      8,16,16,24,24,24    conv widths of the six encoder levels
fcc_channels        16                  compressed side-output width
dmp_levels          4,5                 encoder levels refined by DMP
lambda              auto                global-loss weight (number or ``auto``)
modality            rgbd                rgbd | rgb | depth
dmp_channels        16                  DMP feature width
dmp_groups          4                   affinity channel groups
dmp_depth_levels    3,4,5               depth levels feeding each DMP
dmp_iterations      1                   message passing rounds
dmp_level_weights   (ones)              per-depth-level message weights
dmp_fuse_mode       residual            residual | concat
dmp_affinity_softmax false              softmax affinities over sampled nodes
image_size          64                  generated image side
n_train / n_test    200 / 50            generated sample counts
shapes_min/max      2 / 5               clutter shapes per scene
depth_contrast      0.9                 object separability in depth
rgb_contrast        0.2                 object separability in colour
clutter             0.5                 clutter colour spread
lr                  5e-5                Adam learning rate
weight_decay        5e-4                L2 weight decay
beta1 / beta2 / eps 0.9 / 0.999 / 1e-8  Adam moments
epochs              45                  training epochs
batch_size          1                   training batch size
augment             true                random flip + crop
crop_jitter         0.1                 max crop fraction
time_budget         0                   stop after the epoch exceeding this many
                                        seconds (0 = no limit)
seed                0                   seed for init, shuffling and generation
==================  ==================  =======================================
"""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path
from typing import Optional

from dmpnet.dmp import DmpConfig
from dmpnet.network import NetworkConfig
from dmpnet.synth import SynthConfig
from dmpnet.train import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _lambda(text: str):
    return "auto" if text.strip() == "auto" else float(text)


# key -> (section, field, parser)
KEYS = {
    "input_size": ("network", "input_size", int),
    "encoder_widths": ("network", "encoder_widths", _ints),
    "fcc_channels": ("network", "fcc_channels", int),
    "dmp_levels": ("network", "dmp_levels", _ints),
    "lambda": ("network", "lambda_mode", _lambda),
    "modality": ("network", "modality", str),
    "dmp_channels": ("dmp", "channels", int),
    "dmp_groups": ("dmp", "groups", int),
    "dmp_depth_levels": ("dmp", "depth_levels", _ints),
    "dmp_iterations": ("dmp", "iterations", int),
    "dmp_level_weights": ("dmp", "level_weights", _floats),
    "dmp_fuse_mode": ("dmp", "fuse_mode", str),
    "dmp_affinity_softmax": ("dmp", "affinity_softmax", _bool),
    "image_size": ("synth", "image_size", int),
    "n_train": ("synth", "n_train", int),
    "n_test": ("synth", "n_test", int),
    "shapes_min": ("synth", "shapes_min", int),
    "shapes_max": ("synth", "shapes_max", int),
    "depth_contrast": ("synth", "depth_contrast", float),
    "rgb_contrast": ("synth", "rgb_contrast", float),
    "clutter": ("synth", "clutter", float),
    "lr": ("train", "lr", float),
    "weight_decay": ("train", "weight_decay", float),
    "beta1": ("train", "beta1", float),
    "beta2": ("train", "beta2", float),
    "eps": ("train", "eps", float),
    "epochs": ("train", "epochs", int),
    "batch_size": ("train", "batch_size", int),
    "augment": ("train", "augment", _bool),
    "crop_jitter": ("train", "crop_jitter", float),
    "time_budget": ("run", "time_budget", float),
    "seed": ("run", "seed", int),
}


@dataclasses.dataclass
class RunConfig:
    network: NetworkConfig = dataclasses.field(default_factory=NetworkConfig)
    synth: SynthConfig = dataclasses.field(default_factory=SynthConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    seed: int = 0
    time_budget: float = 0.0
    source: Optional[Path] = None

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with ``seed`` applied to generation, initialization and shuffling."""
        return RunConfig(
            network=self.network,
            synth=dataclasses.replace(self.synth, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
            seed=seed,
            time_budget=self.time_budget,
            source=self.source,
        )

    def values(self) -> dict:
        sections = {"network": self.network, "dmp": self.network.dmp, "synth": self.synth, "train": self.train, "run": self}
        return {key: getattr(sections[sec], name) for key, (sec, name, _) in KEYS.items()}

    def dump(self) -> str:
        """Canonical text form: every key in a fixed order, reparseable by :func:`parse`."""

        def fmt(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, tuple):
                return ",".join(fmt(x) for x in v)
            if isinstance(v, float):
                return repr(v)
            return str(v)

        return "".join(f"{k} = {fmt(v)}\n" for k, v in self.values().items())

    def hash(self) -> str:
        return hashlib.sha256(self.dump().encode()).hexdigest()[:16]


def parse(text: str, source: Optional[str] = None) -> RunConfig:
    where = source or "<config>"
    updates: dict = {"network": {}, "dmp": {}, "synth": {}, "train": {}, "run": {}}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{where}:{lineno}: unknown key {key!r}")
        section, name, conv = KEYS[key]
        try:
            updates[section][name] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"{where}:{lineno}: bad value for {key}: {exc}") from None
    run = updates["run"]
    seed = run.get("seed", 0)
    try:
        dmp_cfg = DmpConfig(**updates["dmp"])
        network = NetworkConfig(dmp=dmp_cfg, **updates["network"])
        synth = SynthConfig(**{"seed": seed, **updates["synth"]})
        train = TrainConfig(**{"seed": seed, **updates["train"]})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    if run.get("time_budget", 0.0) < 0:
        raise ConfigError(f"{where}: time_budget must be >= 0")
    return RunConfig(network, synth, train, seed, run.get("time_budget", 0.0))


def load(path) -> RunConfig:
    path = Path(path).resolve()
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = parse(path.read_text(), str(path))
    cfg.source = path
    return cfg

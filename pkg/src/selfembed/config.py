"""Serializable training/model configuration."""

from dataclasses import asdict, dataclass, field, fields
import json

from .losses import LossWeights
from .netblocks import ExtractorSpec


class ConfigError(ValueError):
    """Inconsistent or unknown configuration values."""


@dataclass
class ToyDatasetSpec:
    families: tuple = ("sphere", "box", "torus", "cylinder", "two_box")
    samples_per_family: int = 40
    N: int = 512
    noise: float = 0.0
    seed: int = 0
    # draw oversample*N surface samples, then thin them to N with FPS
    oversample: int = 4

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "families" in d:
            d["families"] = tuple(d["families"])
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown dataset spec keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["families"] = list(self.families)
        return d


@dataclass
class TrainConfig:
    N: int = 512
    n: int = 128
    r: int = 4
    K: int = 8
    m: int = 8
    C: int = 32
    C_prime: int = 64
    k_conv: int = 8
    extractor_blocks: tuple = (24, 24, 24)
    dense: bool = True
    alpha: float = 5.0
    beta: float = 2.0
    lam: float = 100.0
    tau: float = 1e-6
    shape_reduction: str = "sum"
    batch_size: int = 8
    epochs: int = 60
    lr: float = 1e-3
    lr_decay: float = 0.5
    decay_every: int = 20
    lr_floor: float = 1e-6
    augment: bool = True
    seed: int = 0
    dataset: ToyDatasetSpec = field(default_factory=ToyDatasetSpec)

    def __post_init__(self):
        self.extractor_blocks = tuple(int(c) for c in self.extractor_blocks)
        if isinstance(self.dataset, dict):
            self.dataset = ToyDatasetSpec.from_dict(self.dataset)
        self.validate()

    def validate(self):
        for name in ("N", "n", "r", "K", "m", "C", "C_prime", "k_conv", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.r * self.n != self.N:
            raise ConfigError(f"r * n must equal N ({self.r} * {self.n} != {self.N})")
        if not self.K * self.n > self.N:
            raise ConfigError(f"K must exceed N / n = {self.N / self.n}, got K={self.K}")
        if self.K > self.N:
            raise ConfigError("K must not exceed N")
        if not 0 < self.lr_floor <= self.lr:
            raise ConfigError("need 0 < lr_floor <= lr")
        if self.decay_every < 1:
            raise ConfigError("decay_every must be positive")
        self.loss_weights()

    def loss_weights(self):
        return LossWeights(
            alpha=self.alpha, beta=self.beta, lam=self.lam, tau=self.tau, m=self.m,
            shape_reduction=self.shape_reduction,
        )

    def extractor_spec(self):
        return ExtractorSpec(
            out_channels=self.C,
            n_blocks=len(self.extractor_blocks),
            block_channels=self.extractor_blocks,
            dense=self.dense,
            k_conv=self.k_conv,
        )

    def lr_at(self, epoch):
        return max(self.lr_floor, self.lr * self.lr_decay ** (epoch // self.decay_every))

    def to_dict(self):
        d = asdict(self)
        d["extractor_blocks"] = list(self.extractor_blocks)
        d["dataset"] = self.dataset.to_dict()
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

"""Model configuration and the flat ``key=value`` config file format."""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..numerics import ConfigurationError


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple[int, int, int, int] = (32, 48, 64, 80)
    depths: tuple[int, int, int] = (2, 1, 1)
    window: int = 4
    k_clusters: int = 8
    d_state: int = 16
    latent_channels: int = 80
    hyper_channels: int = 48
    head_dim: int = 16
    ema_decay: float = 0.99
    kmeans_iters: int = 5
    cam_stages: tuple[int, ...] = (3, 4, 5)

    def __post_init__(self):
        if len(self.channels) != 4 or len(self.depths) != 3:
            raise ConfigurationError("channels needs 4 entries and depths 3")
        if min(self.channels) < 1 or min(self.depths) < 0:
            raise ConfigurationError("channel widths must be positive and depths non-negative")
        if self.latent_channels != self.channels[3]:
            raise ConfigurationError("latent_channels must equal the 1/16-resolution width channels[3]")
        if self.window < 1 or self.k_clusters < 1 or self.d_state < 1 or self.hyper_channels < 1:
            raise ConfigurationError("window, k_clusters, d_state and hyper_channels must be positive")
        for c in self.channels[:3]:
            if c % self.head_dim:
                raise ConfigurationError(f"stage width {c} is not divisible by head_dim {self.head_dim}")
        if any(s not in range(1, 7) for s in self.cam_stages):
            raise ConfigurationError("cam_stages must be stage numbers 1..6")

    # six stages: three in the analysis transform, their mirror in the synthesis transform
    def stage_width(self, stage: int) -> int:
        return self.channels[[0, 1, 2, 2, 1, 0][stage - 1]]

    def stage_depth(self, stage: int) -> int:
        return self.depths[[0, 1, 2, 2, 1, 0][stage - 1]]

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @property
    def config_id(self) -> int:
        """16-bit identifier of the architecture, stored in coded files."""
        return zlib.crc32(self.to_text().encode()) & 0xFFFF

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kinds = {f.name: f for f in fields(cls)}
        values = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"expected key=value, got {raw!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "preset":
                values = {**asdict(PRESETS[val]), **values}
                continue
            if key not in kinds:
                raise ConfigurationError(f"unknown config key {key!r}")
            default = getattr(cls(), key)
            if isinstance(default, tuple):
                values[key] = tuple(int(x) for x in val.split(",") if x.strip())
            elif isinstance(default, float):
                values[key] = float(val)
            else:
                values[key] = int(val)
        return cls(**values)

    @classmethod
    def load(cls, path: str | Path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())


DESK = ModelConfig()
PAPER = ModelConfig(channels=(128, 192, 256, 320), depths=(3, 2, 2), window=8, k_clusters=64,
                    d_state=16, latent_channels=320, hyper_channels=192)
TINY = ModelConfig(channels=(8, 8, 8, 8), depths=(1, 1, 1), window=2, k_clusters=2, d_state=4,
                   latent_channels=8, hyper_channels=8, head_dim=8, kmeans_iters=2)
PRESETS = {"desk": DESK, "paper": PAPER, "tiny": TINY}


def resolve_config(spec: str | Path | None) -> ModelConfig:
    """A preset name, a config file path, or ``None`` for the desk preset."""
    if spec is None:
        return DESK
    if str(spec) in PRESETS:
        return PRESETS[str(spec)]
    return ModelConfig.load(spec)


__all__ = ["ModelConfig", "ConfigurationError", "DESK", "PAPER", "TINY", "PRESETS", "resolve_config", "replace"]

"""Analysis, synthesis and hyper transforms assembled from a :class:`ModelConfig`."""
from __future__ import annotations

import numpy as np

from ..entropy import SIGMA_FLOOR, FactorizedPrior
from ..numerics import ContractError, Tensor, clip, gelu, lower_bound, no_grad, softplus
from .blocks import CamBlock, Conv, Deconv, Module, TransformBlock
from .config import ModelConfig


class CompressionModel(Module):
    """Four stride-2 stages down to the latent and their mirror back up.

    Stages 1-3 sit in the analysis transform at 1/2, 1/4 and 1/8 resolution;
    stages 4-6 mirror them in the synthesis transform. Stages listed in
    ``config.cam_stages`` get a CAM block in every transform block.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32, init_clusters: bool = True):
        super().__init__()
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        c1, c2, c3, _ = config.channels
        m, hc = config.latent_channels, config.hyper_channels

        self.down = [self.add(f"g_a.down{i}", Conv(a, b, rng, dtype))
                     for i, (a, b) in enumerate([(3, c1), (c1, c2), (c2, c3), (c3, m)], start=1)]
        self.up = [self.add(f"g_s.up{i}", Deconv(a, b, rng, dtype))
                   for i, (a, b) in enumerate([(m, c3), (c3, c2), (c2, c1), (c1, 3)], start=1)]
        self.stages: dict[int, list[TransformBlock]] = {}
        for stage in range(1, 7):
            width = config.stage_width(stage)
            cam = None
            if stage in config.cam_stages:
                cam = dict(d_state=config.d_state, k=config.k_clusters,
                           ema_decay=config.ema_decay, iters=config.kmeans_iters)
            prefix = "g_a" if stage <= 3 else "g_s"
            self.stages[stage] = [
                self.add(f"{prefix}.stage{stage}.block{j}",
                         TransformBlock(width, width // config.head_dim, config.window, rng, dtype, cam))
                for j in range(config.stage_depth(stage))
            ]
        self.h_a = [self.add("h_a.conv1", Conv(m, hc, rng, dtype, kernel=3, stride=1)),
                    self.add("h_a.conv2", Conv(hc, hc, rng, dtype)),
                    self.add("h_a.conv3", Conv(hc, hc, rng, dtype))]
        self.h_s = [self.add("h_s.up1", Deconv(hc, hc, rng, dtype)),
                    self.add("h_s.up2", Deconv(hc, hc, rng, dtype)),
                    self.add("h_s.conv3", Conv(hc, 2 * m, rng, dtype, kernel=3, stride=1))]
        self.prior = FactorizedPrior.init(hc, dtype)
        self._params["prior.loc"] = self.prior.loc
        self._params["prior.raw_scale"] = self.prior.raw_scale
        if init_clusters and config.cam_stages:
            self.init_clusters()

    # ------------------------------------------------------------------
    def cam_blocks(self) -> dict[str, CamBlock]:
        return {name: mod for name, mod in self.named_modules() if isinstance(mod, CamBlock)}

    def _run_stage(self, stage: int, x: Tensor, training: bool) -> Tensor:
        for block in self.stages[stage]:
            x = block(x, training)
        return x

    def analysis(self, x: Tensor, training: bool = False) -> Tensor:
        if x.size == 0:
            raise ContractError("empty image")
        if x.shape[1] % 16 or x.shape[2] % 16:
            raise ContractError(f"image extent {x.shape[1:3]} is not a multiple of 16")
        h = x
        for stage, down in zip((1, 2, 3), self.down[:3]):
            h = self._run_stage(stage, down(h), training)
        return self.down[3](h)

    def synthesis(self, y_hat: Tensor, training: bool = False) -> Tensor:
        """Unclamped reconstruction at the padded size."""
        h = y_hat
        for stage, up in zip((4, 5, 6), self.up[:3]):
            h = self._run_stage(stage, up(h), training)
        return self.up[3](h)

    def hyper_encoder(self, y: Tensor) -> Tensor:
        z = gelu(self.h_a[0](y))
        z = gelu(self.h_a[1](z))
        return self.h_a[2](z)

    def hyper_decoder(self, z_hat: Tensor, latent_hw: tuple[int, int]) -> tuple[Tensor, Tensor]:
        """Gaussian mean and scale for the latent, cropped to ``latent_hw``."""
        p = gelu(self.h_s[0](z_hat))
        p = gelu(self.h_s[1](p))
        p = self.h_s[2](p)
        h, w = latent_hw
        m = self.config.latent_channels
        mu = p[:, :h, :w, :m]
        sigma = lower_bound(softplus(p[:, :h, :w, m:]), SIGMA_FLOOR)
        return mu, sigma

    # ------------------------------------------------------------------
    def init_clusters(self, size: int | None = None) -> None:
        """Seed every CAM block's centers from the tokens of a fixed probe image."""
        k = self.config.k_clusters
        side = 8 * int(np.ceil(np.sqrt(k)))
        size = size or max(64, 16 * int(np.ceil(side / 16)))
        probe = probe_image(size)
        for blk in self.cam_blocks().values():
            blk.cluster = None
        with no_grad():
            y = self.analysis(Tensor(probe[None], dtype=self.dtype))
            self.synthesis(Tensor(np.rint(y.data)))


def probe_image(size: int) -> np.ndarray:
    """Deterministic smooth-plus-texture RGB pattern in [0, 1]."""
    yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="ij")
    r = 0.5 + 0.4 * np.sin(6 * np.pi * xx) * np.cos(4 * np.pi * yy)
    g = xx * 0.8 + 0.1
    b = 0.5 + 0.45 * np.sign(np.sin(10 * np.pi * (xx + yy))) * (yy - 0.5) * 2
    return np.clip(np.stack([r, g, b], axis=-1), 0, 1)


def analysis_transform(x: Tensor, model: CompressionModel) -> Tensor:
    return model.analysis(x)


def synthesis_transform(y_hat: Tensor, model: CompressionModel, out_hw: tuple[int, int] | None = None) -> Tensor:
    """Reconstruction cropped to ``out_hw`` and clamped to [0, 1]."""
    x_hat = model.synthesis(y_hat)
    if out_hw is not None:
        x_hat = x_hat[:, : out_hw[0], : out_hw[1], :]
    return clip(x_hat, 0.0, 1.0)


def hyper_encoder(y: Tensor, model: CompressionModel) -> Tensor:
    return model.hyper_encoder(y)


def hyper_decoder(z_hat: Tensor, model: CompressionModel, latent_hw: tuple[int, int]):
    return model.hyper_decoder(z_hat, latent_hw)

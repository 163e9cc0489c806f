from .blocks import CamBlock, Conv, ConvFFN, Deconv, Module, TransformBlock, WindowAttention
from .config import DESK, PAPER, PRESETS, TINY, ConfigurationError, ModelConfig, resolve_config
from .model import (
    CompressionModel,
    analysis_transform,
    hyper_decoder,
    hyper_encoder,
    probe_image,
    synthesis_transform,
)

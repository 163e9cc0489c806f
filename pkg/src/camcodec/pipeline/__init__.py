from .analysis import (
    CamStack,
    ConvStack,
    cluster_masks,
    conv_receptive_radius,
    erf_gradient,
    erf_map,
    mean_erf,
    outside_radius_mass,
)
from .bitstream import CodedFile, FormatError
from .checkpoint import CheckpointError
from .codec import (
    EncodeResult,
    EncodeStats,
    decode_bytes,
    decode_image,
    encode_array,
    encode_image,
    latent_shapes,
    rd_forward,
)
from .evaluate import EvaluationError, bd_rate, evaluate_directory, evaluate_images, psnr_from_mse
from .imageio import InputError, read_ppm, write_pgm, write_ppm
from .synthetic import synthetic_dataset, synthetic_image
from .training import TrainResult, train

"""Denoising autoencoders with additive and modulated lateral connections."""

from .data import (
    GaussianStream,
    ImageSet,
    PatchStream,
    TransformSets,
    Whitener,
    corrupt,
    fit_stream_whitener,
    fit_whitener,
    load_cifar10,
    load_raw_images,
    make_transform_sets,
    sample_patches,
)
from .gradients import backward, finite_diff_check
from .network import (
    ModelSpec,
    Params,
    count_params,
    forward,
    init_params,
    reconstruction_cost,
    solve_layer_sizes,
    update_centering,
)
from .optimizer import OptState, adadelta_step
from .trainer import TrainConfig, TrainHistory, evaluate, run_alpha_sweep, substream, train

__version__ = "0.1.0"

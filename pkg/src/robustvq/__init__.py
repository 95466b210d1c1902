"""Vector-quantized bottleneck training with robust codebook learning.

Batch normalization before quantization, a boosted codebook learning rate,
the EMA codebook rule and periodic data-dependent codebook reestimation
(reservoir sampling + k-means++), on small numpy models.
"""

from .clustering import Reservoir, kmeanspp_seed, lloyd, reestimate_codebook, reservoir_update
from .config import PRESETS, ExperimentConfig
from .data import Dataset, make_synthetic
from .errors import ConfigError, NumericalError, ShapeError
from .experiment import ablation, run_experiment, scaling_sweep
from .numerics import make_rng
from .metrics import MetricsRow, bpd, nelbo_uniform, nelbo_unigram
from .quantizer import (
    Codebook,
    QuantizerConfig,
    codebook_grad,
    init_codebook,
    nearest_code,
    perplexity,
    quantize,
    straight_through_backward,
    used_tokens,
    vq_loss,
)
from .trainer import (
    EmaState,
    OptimConfig,
    TrainSchedule,
    ema_codebook_update,
    schedule_step,
    sgd_codebook_update,
)

__version__ = "0.1.0"

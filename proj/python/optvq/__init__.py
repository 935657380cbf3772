"""Optimal-transport vector quantization."""

from ._core import (
    CheckpointError,
    ConfigError,
    ConvergenceError,
    DataError,
    NumericalError,
    OptVQError,
    ShapeError,
    commitment_loss,
    dynamics2d,
    load_mnist_idx,
    nn_assign,
    normalize_cost,
    optvq_assign,
    pairwise_sq_distances,
    psnr,
    quantize,
    sinkhorn,
    sinkhorn_converged,
    train,
    usage_stats,
)

__all__ = [name for name in dir() if not name.startswith("_")]

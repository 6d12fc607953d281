"""Alignment-free guided depth super-resolution via multi-order matching."""

from .diffops import EigenField, HessianField, eigenvalues, gradient_magnitude, hessian_field, hessian_norm
from .fusion import FusionState, OrderMatch, PipelineConfig, encode_depth, encode_rgb, moma_step, reconstruct, run_pipeline
from .grid import (
    DepthMap,
    FeatureMap,
    NonFiniteError,
    PatchSet,
    bicubic_resample,
    conv2d,
    extract_patches,
    fold_patches,
    pixel_shuffle,
    pixel_unshuffle,
)
from .losses import LossReport, add_noise, loss_grad, loss_hes, loss_rec, loss_total, rmse_cm
from .matcher import CorrelationSet, MatchResult, correlation_set, correlation_set_naive, match_order, matching_selection, top_k, top_k_naive
from .structdet import DetectorParams, StructureDescriptor, compute_descriptor, detect, normalize_and_compress, structure_descriptor
from .trainer import DivergenceError, FitResult, TrainConfig, fit, numeric_grad
from .scenes import Scene, SceneSpec, render_scene

__version__ = "0.1.0"

__all__ = [
    "CorrelationSet",
    "DepthMap",
    "DetectorParams",
    "DivergenceError",
    "EigenField",
    "FeatureMap",
    "FitResult",
    "FusionState",
    "HessianField",
    "LossReport",
    "MatchResult",
    "NonFiniteError",
    "OrderMatch",
    "PatchSet",
    "PipelineConfig",
    "Scene",
    "SceneSpec",
    "StructureDescriptor",
    "TrainConfig",
    "add_noise",
    "bicubic_resample",
    "compute_descriptor",
    "conv2d",
    "correlation_set",
    "correlation_set_naive",
    "detect",
    "eigenvalues",
    "encode_depth",
    "encode_rgb",
    "extract_patches",
    "fit",
    "fold_patches",
    "gradient_magnitude",
    "hessian_field",
    "hessian_norm",
    "loss_grad",
    "loss_hes",
    "loss_rec",
    "loss_total",
    "match_order",
    "matching_selection",
    "moma_step",
    "normalize_and_compress",
    "numeric_grad",
    "pixel_shuffle",
    "pixel_unshuffle",
    "reconstruct",
    "render_scene",
    "rmse_cm",
    "run_pipeline",
    "structure_descriptor",
    "top_k",
    "top_k_naive",
]

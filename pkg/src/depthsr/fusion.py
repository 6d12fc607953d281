"""End-to-end fusion pipeline: encoders, iterative matching/aggregation,
and residual reconstruction.

Both encoders standardize their input plane and apply the same fixed 3x3
filter bank, so RGB and depth features live on a comparable scale across
modalities. Each iteration matches RGB to the current depth features in up
to three orders, gates the matched features with the structure detector,
and fuses everything through a 1x1 linear map; the head predicts a
pixel-shuffled residual over bicubic upsampling, so an untrained model
reproduces bicubic exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grid import DepthMap, FeatureMap, bicubic_resample, conv2d, pixel_shuffle, sigmoid
from .matcher import ORDERS, match_order
from .structdet import DetectorParams, detect

SCALES = (4, 8, 16)
MAX_CHANNELS = 8
DEFAULT_CHANNELS = 8
DEFAULT_TOPK = 4
DEFAULT_ITERS = 3


def filter_bank(channels: int) -> np.ndarray:
    """First `channels` of the fixed bank: identity, Gaussian, Sobel-x,
    Sobel-y, Laplacian, two oriented edges, box."""
    if not 1 <= channels <= MAX_CHANNELS:
        raise ValueError(f"filter bank provides 1..{MAX_CHANNELS} channels")
    ident = np.zeros((3, 3))
    ident[1, 1] = 1.0
    gauss = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0
    sobel_x = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0
    sobel_y = sobel_x.T.copy()
    laplace = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
    diag_a = np.array([[2.0, 1.0, 0.0], [1.0, 0.0, -1.0], [0.0, -1.0, -2.0]]) / 8.0
    diag_b = np.array([[0.0, 1.0, 2.0], [-1.0, 0.0, 1.0], [-2.0, -1.0, 0.0]]) / 8.0
    box = np.ones((3, 3)) / 9.0
    bank = np.stack((ident, gauss, sobel_x, sobel_y, laplace, diag_a, diag_b, box))
    return bank[:channels, None, :, :]


@dataclass
class PipelineConfig:
    """All pipeline knobs: scale, feature width, matching orders, weights."""

    scale: int = 4
    channels: int = DEFAULT_CHANNELS
    k: int = DEFAULT_TOPK
    moma_iters: int = DEFAULT_ITERS
    orders: tuple[str, ...] = ORDERS
    detector: bool = True
    detector_params: DetectorParams = field(default_factory=DetectorParams)
    w_fuse: np.ndarray | None = None
    w_head: np.ndarray | None = None
    alpha_loss: float = 0.001

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}")
        if not 1 <= self.channels <= MAX_CHANNELS:
            raise ValueError(f"channels must be in 1..{MAX_CHANNELS}")
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.moma_iters < 1:
            raise ValueError("moma_iters must be at least 1")
        if self.alpha_loss < 0:
            raise ValueError("alpha_loss must be non-negative")
        unknown = set(self.orders) - set(ORDERS)
        if unknown:
            raise ValueError(f"unknown orders {sorted(unknown)}")
        self.orders = tuple(o for o in ORDERS if o in self.orders)
        c = self.channels
        if self.w_fuse is None:
            self.w_fuse = default_fuse_weights(c)
        self.w_fuse = np.ascontiguousarray(np.asarray(self.w_fuse, dtype=np.float64))
        if self.w_fuse.shape != (c, 4 * c):
            raise ValueError(f"w_fuse must have shape {(c, 4 * c)}")
        if self.w_head is None:
            self.w_head = default_head_weights(self.scale, c)
        self.w_head = np.ascontiguousarray(np.asarray(self.w_head, dtype=np.float64))
        if self.w_head.shape != (self.scale * self.scale, c):
            raise ValueError(f"w_head must have shape {(self.scale * self.scale, c)}")

    @classmethod
    def tiny(cls, scale: int = 4, **kwargs) -> "PipelineConfig":
        """Lightweight profile: a quarter of the channels, 2 iterations."""
        kwargs.setdefault("channels", max(1, DEFAULT_CHANNELS // 4))
        kwargs.setdefault("moma_iters", 2)
        return cls(scale=scale, **kwargs)

    def copy(self) -> "PipelineConfig":
        return replace(
            self, w_fuse=self.w_fuse.copy(), w_head=self.w_head.copy()
        )


def default_fuse_weights(channels: int) -> np.ndarray:
    """Identity skip on the depth block, zeros on the three RGB blocks."""
    return np.concatenate(
        [np.eye(channels), np.zeros((channels, 3 * channels))], axis=1
    )


def default_head_weights(scale: int, channels: int) -> np.ndarray:
    """Zero residual head: the untrained pipeline reproduces bicubic."""
    return np.zeros((scale * scale, channels))


@dataclass(frozen=True)
class FusionState:
    """Depth features being refined, frozen RGB features, iteration index."""

    f_d: FeatureMap
    f_r: FeatureMap
    iteration: int = 0

    def __post_init__(self):
        if self.f_d.shape != self.f_r.shape:
            raise ValueError(
                f"feature shape mismatch: depth {self.f_d.shape}, rgb {self.f_r.shape}"
            )


@dataclass(frozen=True)
class OrderMatch:
    """Matched RGB features plus the matched prior map (None at zero order)."""

    matched_rgb: FeatureMap
    matched_prior: FeatureMap | None


def _standardize_plane(plane: np.ndarray) -> np.ndarray:
    return (plane - plane.mean()) / (plane.std() + 1e-8)


def bank_features(plane: np.ndarray, channels: int) -> FeatureMap:
    """Standardize a single plane and apply the fixed filter bank."""
    std = _standardize_plane(np.asarray(plane, dtype=np.float64))
    return conv2d(FeatureMap.from_plane(std), filter_bank(channels))


def encode_rgb(img: FeatureMap, scale: int, channels: int) -> FeatureMap:
    """Grayscale, bicubic-downsample by `scale`, then the fixed bank."""
    if img.channels != 3:
        raise ValueError(f"RGB image needs 3 channels, got {img.channels}")
    if scale < 1:
        raise ValueError("scale must be positive")
    if img.height % scale or img.width % scale:
        raise ValueError(
            f"image dims {img.height}x{img.width} not divisible by scale {scale}"
        )
    gray = FeatureMap(img.data.mean(axis=0, keepdims=True))
    if scale > 1:
        gray = bicubic_resample(gray, 1.0 / scale)
    return bank_features(gray.data[0], channels)


def encode_depth(d: DepthMap, channels: int) -> FeatureMap:
    """Fixed-bank features of the (already LR) depth plane."""
    return bank_features(d.depth, channels)


def order_matches(
    f_r: FeatureMap, f_d: FeatureMap, cfg: PipelineConfig
) -> dict[str, OrderMatch]:
    """Run every enabled matching order against the current depth features."""
    out: dict[str, OrderMatch] = {}
    for order in cfg.orders:
        matched_rgb, matched_prior = match_order(f_r, f_d, order, cfg.k)
        out[order] = OrderMatch(matched_rgb, matched_prior)
    return out


def aggregate(
    f_d: FeatureMap,
    f_r: FeatureMap,
    matches: dict[str, OrderMatch],
    cfg: PipelineConfig,
) -> FeatureMap:
    """Fuse depth features with gated matched RGB features.

    Concatenates [depth, zero, sigmoid(grad-prior) * first,
    sigmoid(hessian-prior) * second] with zero blocks for disabled orders,
    then projects back to `channels` with the 1x1 fuse map.
    """
    blocks = [f_d.data]
    for order in ORDERS:
        om = matches.get(order)
        if om is None:
            blocks.append(np.zeros_like(f_d.data))
            continue
        feat = detect(om.matched_rgb, cfg.detector_params) if cfg.detector else om.matched_rgb
        if feat.shape != f_d.shape:
            raise ValueError(f"{order}-order block shape {feat.shape} != {f_d.shape}")
        block = feat.data
        if om.matched_prior is not None:
            block = sigmoid(om.matched_prior.data) * block
        blocks.append(block)
    cat = np.concatenate(blocks, axis=0)
    return FeatureMap(np.einsum("oc,chw->ohw", cfg.w_fuse, cat))


def moma_step(state: FusionState, cfg: PipelineConfig) -> FusionState:
    """One matching + aggregation iteration; RGB features stay fixed."""
    matches = order_matches(state.f_r, state.f_d, cfg)
    fused = aggregate(state.f_d, state.f_r, matches, cfg)
    return FusionState(fused, state.f_r, state.iteration + 1)


def reconstruct(f_d: FeatureMap, d_lr: DepthMap, cfg: PipelineConfig) -> DepthMap:
    """Bicubic upsample of the LR depth plus a pixel-shuffled residual."""
    if f_d.height != d_lr.height or f_d.width != d_lr.width:
        raise ValueError("feature grid does not match LR depth grid")
    res = np.einsum("qc,chw->qhw", cfg.w_head, f_d.data)
    res_hr = pixel_shuffle(FeatureMap(res), cfg.scale).data[0]
    base = bicubic_resample(d_lr, float(cfg.scale))
    depth = base.depth + res_hr
    depth = np.where(base.valid, np.maximum(depth, 1e-6), depth)
    return DepthMap(depth, base.valid)


def run_pipeline(img: FeatureMap, d_lr: DepthMap, cfg: PipelineConfig) -> DepthMap:
    """Encode both modalities, iterate MOMA steps, reconstruct HR depth."""
    if img.height != cfg.scale * d_lr.height or img.width != cfg.scale * d_lr.width:
        raise ValueError(
            f"RGB {img.height}x{img.width} is not {cfg.scale}x the "
            f"LR depth {d_lr.height}x{d_lr.width}"
        )
    f_r = encode_rgb(img, cfg.scale, cfg.channels)
    f_d = encode_depth(d_lr, cfg.channels)
    state = FusionState(f_d, f_r, 0)
    for _ in range(cfg.moma_iters):
        state = moma_step(state, cfg)
    return reconstruct(state.f_d, d_lr, cfg)

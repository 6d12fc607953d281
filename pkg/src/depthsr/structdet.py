"""Hessian-eigenvalue structure detector.

Normalizes and channel-compresses a feature map, takes per-pixel 2x2
Hessian eigenvalues (|l1| >= |l2|), and combines three constraints into a
descriptor in [0, 1]:

    S = (1 - exp(-|l1| / (alpha + eps)))        # structure awareness
        * exp(-|l1 * l2| / (beta + eps))        # texture suppression
        * [l2 < 0]                              # geometric mask (hard)

A small fixed refinement stack (three 3x3 convolutions, widths 1->4->4->1,
zero biases, sigmoid output) turns S into a gate that multiplies the input
features. alpha and beta are the trainable scalars.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffops import EigenField, eigenvalues, hessian_field
from .grid import FeatureMap, conv2d, sigmoid

EPSILON = 1e-8
_STD_GUARD = 1e-8


def default_refine_kernels(width: int = 4) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fixed refinement kernels: Gaussian spread, identity, channel average."""
    gauss = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0
    k1 = np.zeros((width, 1, 3, 3))
    k1[:, 0] = gauss
    k2 = np.zeros((width, width, 3, 3))
    for i in range(width):
        k2[i, i, 1, 1] = 1.0
    k3 = np.zeros((1, width, 3, 3))
    k3[0, :, 1, 1] = 1.0 / width
    return k1, k2, k3


@dataclass(frozen=True)
class DetectorParams:
    """Trainable scalars and fixed refinement kernels of the detector."""

    alpha_det: float = 1.0
    beta: float = 1.0
    epsilon: float = EPSILON
    refine_kernels: tuple[np.ndarray, np.ndarray, np.ndarray] = field(
        default_factory=default_refine_kernels
    )

    def __post_init__(self):
        if self.alpha_det <= 0:
            raise ValueError("alpha_det must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.epsilon != EPSILON:
            raise ValueError(f"epsilon is fixed at {EPSILON}")
        if len(self.refine_kernels) != 3:
            raise ValueError("refinement stack needs exactly 3 kernel tensors")


@dataclass(frozen=True)
class StructureDescriptor:
    """Single-channel descriptor S with 0 <= S <= 1, S = 0 where l2 >= 0."""

    s: FeatureMap

    def __post_init__(self):
        if self.s.channels != 1:
            raise ValueError("descriptor must be single channel")
        if self.s.data.min() < 0.0 or self.s.data.max() > 1.0:
            raise ValueError("descriptor values must lie in [0, 1]")


def normalize_and_compress(f: FeatureMap) -> FeatureMap:
    """Standardize each channel over space, then average channels to one."""
    data = f.data
    mean = data.mean(axis=(1, 2), keepdims=True)
    std = data.std(axis=(1, 2), keepdims=True)
    norm = (data - mean) / (std + _STD_GUARD)
    return FeatureMap(norm.mean(axis=0, keepdims=True))


def structure_descriptor(eig: EigenField, p: DetectorParams) -> StructureDescriptor:
    """Evaluate the triple-constraint descriptor from sorted eigenvalues."""
    l1 = eig.lambda1.data
    l2 = eig.lambda2.data
    awareness = 1.0 - np.exp(-np.abs(l1) / (p.alpha_det + p.epsilon))
    suppression = np.exp(-np.abs(l1 * l2) / (p.beta + p.epsilon))
    mask = (l2 < 0.0).astype(np.float64)
    return StructureDescriptor(FeatureMap(awareness * suppression * mask))


def compute_descriptor(f: FeatureMap, p: DetectorParams) -> StructureDescriptor:
    """Full descriptor pipeline: normalize, compress, Hessian, eigen, S."""
    comp = normalize_and_compress(f)
    return structure_descriptor(eigenvalues(hessian_field(comp)), p)


def refine_gate(descriptor: StructureDescriptor, p: DetectorParams) -> FeatureMap:
    """sigmoid(conv3(relu(conv2(relu(conv1(S)))))), a (0, 1) gate map."""
    k1, k2, k3 = p.refine_kernels
    x = np.maximum(conv2d(descriptor.s, k1).data, 0.0)
    x = np.maximum(conv2d(FeatureMap(x), k2).data, 0.0)
    x = conv2d(FeatureMap(x), k3).data
    return FeatureMap(sigmoid(x))


def detect(f_r: FeatureMap, p: DetectorParams) -> FeatureMap:
    """Gate the input features by the refined structure descriptor."""
    gate = refine_gate(compute_descriptor(f_r, p), p)
    return FeatureMap(gate.data * f_r.data)

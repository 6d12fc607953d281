"""Desk-scale fitting of the small trainable set via numeric gradients.

The trainable parameters are the head weights, the fuse weights, and the
two detector scalars; central differences over the total loss replace an
autodiff engine at this parameter count. Descent follows the negative
gradient normalized to unit max-entry, with step halving on
non-improvement and best-so-far tracking (the L1 objective is piecewise
linear, so a fixed raw-gradient step either stalls or diverges). Enabled
weight matrices start from a seeded fan-in-scaled random init (set
``init_scale = 0`` to fit from the config's weights as-is).

Probes are evaluated in stages that mirror the pipeline's real data flow:
encoders and first-iteration matches depend on no trainable parameter and
are computed once per scene; head-weight probes reuse the fused features
of the base point. Staging changes nothing numerically, every probe value
equals a full pipeline run.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .diffops import gradient_magnitude, hessian_field, hessian_norm
from .fusion import (
    FusionState,
    PipelineConfig,
    aggregate,
    encode_depth,
    encode_rgb,
    order_matches,
)
from .grid import DepthMap, FeatureMap, NonFiniteError, bicubic_resample, pixel_shuffle
from .losses import LossReport
from .scenes import Scene

# Detector scalars stay strictly positive after each descent step.
_PARAM_FLOOR = 1e-6

_MAX_HALVINGS = 12


class DivergenceError(RuntimeError):
    """Loss became non-finite; carries the step index where it happened."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


@dataclass
class TrainConfig:
    """Descent settings and the enabled-parameter subset."""

    steps: int = 50
    lr: float = 0.05
    fd_epsilon: float = 1e-3
    fit_head: bool = True
    fit_fuse: bool = True
    fit_alpha: bool = False
    fit_beta: bool = False
    seed: int = 0
    init_scale: float = 1.0
    log_path: str | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.fd_epsilon <= 0:
            raise ValueError("fd_epsilon must be positive")
        if self.init_scale < 0:
            raise ValueError("init_scale must be non-negative")


def central_difference(fn, x: np.ndarray, eps: float) -> np.ndarray:
    """Central-difference gradient of a scalar function at x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for i in range(x.size):
        probe = x.copy()
        probe[i] = x[i] + eps
        hi = fn(probe)
        probe[i] = x[i] - eps
        lo = fn(probe)
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad


def pack_params(cfg: PipelineConfig, tcfg: TrainConfig) -> np.ndarray:
    """Flatten the enabled parameter subset into one vector."""
    parts = []
    if tcfg.fit_head:
        parts.append(cfg.w_head.ravel())
    if tcfg.fit_fuse:
        parts.append(cfg.w_fuse.ravel())
    if tcfg.fit_alpha:
        parts.append(np.array([cfg.detector_params.alpha_det]))
    if tcfg.fit_beta:
        parts.append(np.array([cfg.detector_params.beta]))
    if not parts:
        return np.empty(0)
    return np.concatenate(parts)


def unpack_params(vec: np.ndarray, cfg: PipelineConfig, tcfg: TrainConfig) -> PipelineConfig:
    """Rebuild a config with the vector's values on the enabled subset."""
    out = cfg.copy()
    i = 0
    if tcfg.fit_head:
        n = out.w_head.size
        out.w_head = vec[i : i + n].reshape(out.w_head.shape).copy()
        i += n
    if tcfg.fit_fuse:
        n = out.w_fuse.size
        out.w_fuse = vec[i : i + n].reshape(out.w_fuse.shape).copy()
        i += n
    dp = out.detector_params
    if tcfg.fit_alpha:
        dp = replace(dp, alpha_det=max(float(vec[i]), _PARAM_FLOOR))
        i += 1
    if tcfg.fit_beta:
        dp = replace(dp, beta=max(float(vec[i]), _PARAM_FLOOR))
        i += 1
    out.detector_params = dp
    if i != vec.size:
        raise ValueError(f"parameter vector length {vec.size}, consumed {i}")
    return out


class SceneLoss:
    """Loss evaluator for one scene with parameter-independent work cached.

    Cached pieces: both encoders, the first iteration's matches (the
    matching inputs cannot depend on any trainable parameter there), the
    bicubic base, and the GT-side derivative maps of the loss.
    """

    def __init__(self, scene: Scene, cfg: PipelineConfig, tcfg: TrainConfig):
        self.cfg = cfg
        self.tcfg = tcfg
        self.d_lr = scene.d_lr
        self.f_r = encode_rgb(scene.rgb, cfg.scale, cfg.channels)
        self.f_d0 = encode_depth(scene.d_lr, cfg.channels)
        self.first_matches = order_matches(self.f_r, self.f_d0, cfg)
        self.base = bicubic_resample(scene.d_lr, float(cfg.scale))
        self.mask = scene.d_gt.valid
        if not self.mask.any():
            raise ValueError("no valid pixels in GT depth")
        self.gt = scene.d_gt.depth
        gt_feature = scene.d_gt.as_feature()
        self.gt_grad = gradient_magnitude(gt_feature).data[0]
        self.gt_hes = hessian_norm(hessian_field(gt_feature)).data[0]
        self.valid_count = int(self.mask.sum())
        # Parameter vector layout, for stage-aware probing.
        self.n_head = cfg.w_head.size if tcfg.fit_head else 0

    def fused_features(self, cfg: PipelineConfig) -> FeatureMap:
        """Run the MOMA iterations under a probe config."""
        state = FusionState(self.f_d0, self.f_r, 0)
        for i in range(cfg.moma_iters):
            matches = (
                self.first_matches if i == 0 else order_matches(self.f_r, state.f_d, cfg)
            )
            state = FusionState(aggregate(state.f_d, self.f_r, matches, cfg), self.f_r, i + 1)
        return state.f_d

    def head_report(self, f_d: FeatureMap, cfg: PipelineConfig) -> LossReport:
        """Reconstruct from fused features and evaluate the loss."""
        res = np.einsum("qc,chw->qhw", cfg.w_head, f_d.data)
        res_hr = pixel_shuffle(FeatureMap(res), cfg.scale).data[0]
        depth = self.base.depth + res_hr
        depth = np.where(self.base.valid, np.maximum(depth, 1e-6), depth)
        pred = DepthMap(depth, self.base.valid)
        pred_feature = pred.as_feature()
        rec = float(np.abs(self.gt - pred.depth)[self.mask].sum())
        grad = float(
            np.abs(self.gt_grad - gradient_magnitude(pred_feature).data[0])[self.mask].sum()
        )
        hes = float(
            np.abs(self.gt_hes - hessian_norm(hessian_field(pred_feature)).data[0])[
                self.mask
            ].sum()
        )
        return LossReport(rec, grad, hes, rec + grad + cfg.alpha_loss * hes, self.valid_count)

    def report(self, vec: np.ndarray) -> LossReport:
        cfg = unpack_params(vec, self.cfg, self.tcfg)
        return self.head_report(self.fused_features(cfg), cfg)

    def __call__(self, vec: np.ndarray) -> float:
        return self.report(vec).l_total

    def gradient(self, vec: np.ndarray, step: int) -> np.ndarray:
        """Central-difference gradient, staged per parameter block.

        Head coordinates do not influence the fused features, so their
        probes reuse the base point's features; all other coordinates run
        the matching iterations. Values equal plain central differences.
        """
        eps = self.tcfg.fd_epsilon
        grad = np.empty_like(vec)
        base_cfg = unpack_params(vec, self.cfg, self.tcfg)
        base_features = self.fused_features(base_cfg)

        def head_value(probe: np.ndarray) -> float:
            cfg = unpack_params(probe, self.cfg, self.tcfg)
            return self._check(self.head_report(base_features, cfg).l_total, step)

        def full_value(probe: np.ndarray) -> float:
            return self._check(self.report(probe).l_total, step)

        for i in range(vec.size):
            value = head_value if i < self.n_head else full_value
            probe = vec.copy()
            probe[i] = vec[i] + eps
            hi = value(probe)
            probe[i] = vec[i] - eps
            lo = value(probe)
            grad[i] = (hi - lo) / (2.0 * eps)
        return grad

    def _check(self, value: float, step: int) -> float:
        if not np.isfinite(value):
            raise DivergenceError(step)
        return value


def scene_loss_fn(scene: Scene, cfg: PipelineConfig, tcfg: TrainConfig) -> SceneLoss:
    """Build a cached vector -> loss evaluator for a fixed scene."""
    return SceneLoss(scene, cfg, tcfg)


def numeric_grad(
    params: np.ndarray, scene: Scene, cfg: PipelineConfig, tcfg: TrainConfig
) -> np.ndarray:
    """Central-difference gradient of the total loss at `params`."""
    loss = SceneLoss(scene, cfg, tcfg)
    try:
        return loss.gradient(np.asarray(params, dtype=np.float64), 0)
    except NonFiniteError as exc:
        raise DivergenceError(0, f"non-finite probe: {exc}") from exc


@dataclass(frozen=True)
class FitResult:
    """Best-loss configuration plus the per-step loss history."""

    config: PipelineConfig
    history: list[LossReport]


def _initial_params(cfg: PipelineConfig, tcfg: TrainConfig) -> np.ndarray:
    """Seeded fan-in-scaled random init added to the enabled weight blocks.

    The detector scalars keep their configured values; `init_scale = 0`
    fits from the config's weights unchanged.
    """
    params = pack_params(cfg, tcfg)
    if params.size == 0 or tcfg.init_scale == 0:
        return params
    rng = np.random.default_rng(tcfg.seed)
    noise = np.zeros_like(params)
    i = 0
    if tcfg.fit_head:
        n = cfg.w_head.size
        std = tcfg.init_scale / np.sqrt(cfg.channels)
        noise[i : i + n] = rng.normal(0.0, std, size=n)
        i += n
    if tcfg.fit_fuse:
        n = cfg.w_fuse.size
        std = tcfg.init_scale / np.sqrt(4 * cfg.channels)
        noise[i : i + n] = rng.normal(0.0, std, size=n)
        i += n
    return params + noise


def fit(scene: Scene, tcfg: TrainConfig, cfg: PipelineConfig) -> FitResult:
    """Descent on the enabled parameters; returns the best parameters seen.

    When `tcfg.log_path` is set, writes a step,l_rec,l_grad,l_hes,l_total
    CSV covering the whole trajectory. Aborts with DivergenceError
    (carrying the step index) if the loss goes non-finite.
    """
    if pack_params(cfg, tcfg).size == 0:
        loss = SceneLoss(scene, cfg, tcfg)
        history = [_evaluate(loss, np.empty(0), 0)]
        _write_log(tcfg, history)
        return FitResult(cfg.copy(), history)

    loss = SceneLoss(scene, cfg, tcfg)
    params = _initial_params(cfg, tcfg)
    history = [_evaluate(loss, params, 0)]
    current = history[0].l_total
    best_params = params.copy()
    best_loss = current

    for step in range(1, tcfg.steps + 1):
        try:
            grad = loss.gradient(params, step)
        except NonFiniteError as exc:
            raise DivergenceError(step, str(exc)) from exc
        scale = np.abs(grad).max()
        if scale == 0.0:
            history.append(_evaluate(loss, params, step))
            continue
        direction = grad / scale
        # Fresh line search from the base step: halve until the move
        # improves, then take the last candidate regardless (best-so-far
        # tracking protects the result).
        trial = tcfg.lr
        candidate = params - trial * direction
        report = _evaluate(loss, candidate, step)
        while report.l_total >= current and trial > tcfg.lr * 2.0**-_MAX_HALVINGS:
            trial *= 0.5
            candidate = params - trial * direction
            report = _evaluate(loss, candidate, step)
        params = candidate
        history.append(report)
        current = report.l_total
        if current < best_loss:
            best_loss = current
            best_params = params.copy()

    _write_log(tcfg, history)
    return FitResult(unpack_params(best_params, cfg, tcfg), history)


def _evaluate(loss: SceneLoss, params: np.ndarray, step: int) -> LossReport:
    try:
        report = loss.report(params)
    except NonFiniteError as exc:
        raise DivergenceError(step, f"non-finite loss at step {step}: {exc}") from exc
    if not np.isfinite(report.l_total):
        raise DivergenceError(step)
    return report


def _write_log(tcfg: TrainConfig, history: list[LossReport]) -> None:
    if tcfg.log_path is None:
        return
    with open(tcfg.log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "l_rec", "l_grad", "l_hes", "l_total"])
        for step, rep in enumerate(history):
            writer.writerow(
                [
                    step,
                    f"{rep.l_rec:.9f}",
                    f"{rep.l_grad:.9f}",
                    f"{rep.l_hes:.9f}",
                    f"{rep.l_total:.9f}",
                ]
            )

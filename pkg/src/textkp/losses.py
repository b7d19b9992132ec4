"""Reference training losses with analytic gradients.

All reductions go through ``np.sum`` on contiguous float64 arrays, which
uses pairwise summation, so values do not depend on pixel order beyond
rounding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 2.0
    beta: float = 4.0
    lambda_mask: float = 0.1
    lambda_link: float = 1.0
    epsilon: float = 1e-6

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if self.lambda_mask < 0 or self.lambda_link < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 0.5)")


@dataclass(frozen=True)
class LossValueGrad:
    value: float
    grad: np.ndarray


def _clamp(pred: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    active = (p > eps) & (p < 1.0 - eps)
    return np.clip(p, eps, 1.0 - eps), active


def _total(x: np.ndarray) -> float:
    return float(np.sum(np.ascontiguousarray(x, dtype=np.float64).ravel()))


def keypoint_loss(pred, target, cfg: LossConfig = LossConfig()) -> LossValueGrad:
    """Focal-style keypoint loss summed jointly over all heat channels.

    ``N`` is the number of entries with target exactly 1.
    """
    y = np.asarray(target, dtype=np.float64)
    if np.shape(pred) != y.shape:
        raise ValueError(f"shape mismatch {np.shape(pred)} vs {y.shape}")
    p, active = _clamp(pred, cfg.epsilon)
    pos = y == 1.0
    n = int(np.count_nonzero(pos))
    if n == 0:
        raise ValueError("keypoint loss needs at least one positive (y == 1) entry")
    a, b = cfg.alpha, cfg.beta
    logp, log1p = np.log(p), np.log1p(-p)
    neg_w = (1.0 - y) ** b
    term = np.where(pos, (1.0 - p) ** a * logp, neg_w * p**a * log1p)
    dterm = np.where(
        pos,
        -a * (1.0 - p) ** (a - 1.0) * logp + (1.0 - p) ** a / p,
        neg_w * (a * p ** (a - 1.0) * log1p - p**a / (1.0 - p)),
    )
    return LossValueGrad(-_total(term) / n, np.where(active, -dterm / n, 0.0))


def mask_loss(pred, target, cfg: LossConfig = LossConfig()) -> LossValueGrad:
    """Mean binary cross-entropy over all pixels."""
    y = np.asarray(target, dtype=np.float64)
    if np.shape(pred) != y.shape:
        raise ValueError(f"shape mismatch {np.shape(pred)} vs {y.shape}")
    p, active = _clamp(pred, cfg.epsilon)
    n = y.size
    ce = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = (p - y) / (p * (1.0 - p)) / n
    return LossValueGrad(_total(ce) / n, np.where(active, grad, 0.0))


def smooth_l1(x) -> np.ndarray:
    ax = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(ax < 1.0, 0.5 * ax * ax, ax - 0.5)


def _expand_valid(valid, shape) -> np.ndarray:
    v = np.asarray(valid, dtype=bool)
    if v.shape == shape:
        return v
    if v.shape == shape[1:]:
        return np.broadcast_to(v, shape)
    if v.ndim == len(shape) and v.shape[0] * 2 == shape[0] and v.shape[1:] == shape[1:]:
        return np.repeat(v, 2, axis=0)  # one plane per (dx, dy) pair
    raise ValueError(f"validity shape {v.shape} does not fit prediction shape {shape}")


def link_loss(pred, target, valid) -> LossValueGrad:
    """Smooth-L1 averaged over valid entries of the link planes.

    ``valid`` may be one (H, W) plane shared by all channels, one plane per
    link pair (C/2, H, W), or per channel.
    """
    p = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {y.shape}")
    v = _expand_valid(valid, p.shape)
    count = int(np.count_nonzero(v))
    if count == 0:
        raise ValueError("link loss needs at least one valid pixel")
    diff = np.where(v, p - y, 0.0)
    value = _total(np.where(v, smooth_l1(diff), 0.0)) / count
    grad = np.where(v, np.clip(diff, -1.0, 1.0), 0.0) / count
    return LossValueGrad(value, grad)


def total_loss(parts: Sequence[float], cfg: LossConfig = LossConfig()) -> float:
    kp, mask, link = parts
    return kp + cfg.lambda_mask * mask + cfg.lambda_link * link


def numeric_grad(fn: Callable[[np.ndarray], float], x, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn(x)
        flat[i] = orig - h
        down = fn(x)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return g

"""Classification metrics and structural similarity.

AUC uses the Mann-Whitney rank statistic with midrank tie handling, which
is exact (no trapezoid approximation). SSIM is the standard sliding
Gaussian-window formulation.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, DimensionError


def accuracy(pred_labels, labels) -> float:
    pred_labels = np.asarray(pred_labels)
    labels = np.asarray(labels)
    if pred_labels.shape != labels.shape:
        raise DimensionError(
            f"accuracy: {pred_labels.shape} predictions vs {labels.shape} labels"
        )
    return float((pred_labels == labels).mean())


def roc_auc(scores, labels) -> float | None:
    """Probability a random positive outscores a random negative.

    Computed from midranks: ``(R_pos - n_pos(n_pos+1)/2) / (n_pos * n_neg)``.
    Returns None (with a warning) when the split has a single class.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DimensionError(f"roc_auc: {scores.shape} scores vs {labels.shape} labels")
    n_pos = int((labels == 1).sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        warnings.warn("AUC undefined on a single-class split; reporting None")
        return None
    ranks = rankdata(scores, method="average")
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def f1_binary(pred_labels, labels, positive: int = 1) -> float:
    """F1 of the positive class; 0 when there are no positives anywhere."""
    pred_labels = np.asarray(pred_labels)
    labels = np.asarray(labels)
    if pred_labels.shape != labels.shape:
        raise DimensionError(f"f1: {pred_labels.shape} predictions vs {labels.shape} labels")
    tp = int(((pred_labels == positive) & (labels == positive)).sum())
    fp = int(((pred_labels == positive) & (labels != positive)).sum())
    fn = int(((pred_labels != positive) & (labels == positive)).sum())
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma * sigma))
    k = np.outer(g, g)
    return k / k.sum()


def _filter_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    wins = np.lib.stride_tricks.sliding_window_view(img, window.shape)
    return np.einsum("hwuv,uv->hw", wins, window)


def ssim(a, b, window_size: int = 11, sigma: float = 1.5, dynamic_range: float = 1.0) -> float:
    """Mean structural similarity over sliding Gaussian windows.

    Stability constants are ``(0.01 L)^2`` and ``(0.03 L)^2`` for dynamic
    range L. Inputs must be 2-D, same shape, at least as large as the
    window. ``ssim(x, x)`` is exactly 1; the value is symmetric in its
    arguments and lies in [-1, 1].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape != b.shape:
        raise DimensionError(f"ssim: shapes {a.shape} and {b.shape} must be equal 2-D")
    if min(a.shape) < window_size:
        raise DimensionError(
            f"ssim: image {a.shape} smaller than {window_size}x{window_size} window"
        )
    win = _gaussian_window(window_size, sigma)
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    mu_a = _filter_valid(a, win)
    mu_b = _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a * mu_a
    var_b = _filter_valid(b * b, win) - mu_b * mu_b
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((num / den).mean())


def attention_received_grid(attention: np.ndarray, grid_h: int, grid_w: int) -> np.ndarray:
    """Fold an N x N attention map to the patch grid by column sums.

    Column j's sum is the attention token j receives; the sums are
    renormalized to a distribution and reshaped to (grid_h, grid_w).
    """
    attention = np.asarray(attention, dtype=np.float64)
    n = grid_h * grid_w
    if attention.shape != (n, n):
        raise DimensionError(
            f"attention_received_grid: map {attention.shape} vs grid {grid_h}x{grid_w}"
        )
    received = attention.sum(axis=0)
    total = received.sum()
    if total > 0:
        received = received / total
    return received.reshape(grid_h, grid_w)


def upsample_nearest(grid: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(grid, factor, axis=0), factor, axis=1)


def peak_normalize(grid: np.ndarray) -> np.ndarray:
    m = grid.max()
    return grid / m if m > 0 else grid.copy()


def attention_gaze_ssim(attention: np.ndarray, gaze_grid: np.ndarray, patch_size: int) -> float:
    """SSIM between spatialized attention and the patch-pooled gaze map.

    Both grids are peak-normalized and nearest-neighbor upsampled back to
    pixel scale so the standard 11x11 window applies.
    """
    gh, gw = gaze_grid.shape
    att = attention_received_grid(attention, gh, gw)
    a = upsample_nearest(peak_normalize(att), patch_size)
    g = upsample_nearest(peak_normalize(gaze_grid), patch_size)
    return ssim(a, g)

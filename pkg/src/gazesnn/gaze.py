"""Eye-gaze guidance: heatmaps, image enhancement, and alignment losses.

Fixation records are rendered into peak-normalized heatmaps. A heatmap can
then (a) multiplicatively enhance the image it belongs to, emphasizing
fixated regions without discarding the rest, and (b) be pooled onto the
token grid to form the target attention map that the alignment loss pulls
the model's attention toward.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .errors import ContractError, DimensionError
from .pgm import write_pgm16
from .tensor import Tensor


@dataclass
class GazeRecord:
    """Fixations for one image: (x, y, duration_ms) triples."""

    image_id: str
    fixations: list = field(default_factory=list)


@dataclass
class GazeMask:
    """Spatial gaze density in [0, 1]; peaks at 1 whenever fixations exist."""

    mask: Tensor

    @property
    def shape(self):
        return self.mask.shape


@dataclass
class GazeTokenAttention:
    """Row-stochastic token-level target: every row is the gaze distribution."""

    matrix: Tensor


def heatmap_from_fixations(record: GazeRecord, sigma: float, height: int, width: int) -> GazeMask:
    """Render fixations as a duration-weighted sum of isotropic Gaussians.

    The sum is normalized by its peak, so the mask lands in [0, 1] and
    scaling every duration by a constant changes nothing. Out-of-bounds
    fixations are clamped to the image; an empty record gives a zero mask.
    Fixations with all-zero durations fall back to unit weights so the mask
    still marks their locations.
    """
    if sigma <= 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    acc = np.zeros((height, width))
    if record.fixations:
        ys = np.arange(height)[:, None]
        xs = np.arange(width)[None, :]
        weights = [max(0.0, float(d)) for (_, _, d) in record.fixations]
        if sum(weights) == 0.0:
            weights = [1.0] * len(record.fixations)
        inv = 1.0 / (2.0 * sigma * sigma)
        for (x, y, _), wgt in zip(record.fixations, weights):
            cx = min(max(float(x), 0.0), width - 1.0)
            cy = min(max(float(y), 0.0), height - 1.0)
            acc += wgt * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) * inv)
        acc /= acc.max()
    return GazeMask(mask=tn.constant(acc))


def apply_gaze_mask(image, mask: GazeMask, alpha: float, clip=(0.0, 1.0)) -> Tensor:
    """Enhance an image by ``image * (1 + alpha * mask)``.

    ``image`` is channel-first (C, H, W); the mask broadcasts over channels.
    The result is clipped back to the image value range so downstream
    normalization sees in-range pixels. With ``alpha`` 0 the multiply is by
    exactly 1 and in-range inputs pass through bit-identical.
    """
    if alpha < 0:
        raise ContractError(f"alpha must be >= 0, got {alpha}")
    img = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float64)
    m = mask.mask.data
    if img.ndim != 3 or img.shape[1:] != m.shape:
        raise DimensionError(
            f"apply_gaze_mask: image {tuple(img.shape)} does not match mask {tuple(m.shape)} "
            f"(need (C, H, W) with matching spatial dims)"
        )
    out = img * (1.0 + alpha * m)[None, :, :]
    if clip is not None:
        np.clip(out, clip[0], clip[1], out=out)
    return tn.constant(out)


def gaze_token_attention(mask: GazeMask, patch_size: int) -> GazeTokenAttention:
    """Pool the mask onto the patch grid and broadcast it into an N x N target.

    Every query row equals the normalized per-patch gaze mass, so aligned
    attention sends each token's attention to where the gaze landed. An
    all-zero mask yields the uniform distribution.
    """
    h, w = mask.mask.shape
    if h % patch_size or w % patch_size:
        raise ContractError(
            f"mask dims ({h}x{w}) not divisible by patch_size {patch_size}"
        )
    gh, gw = h // patch_size, w // patch_size
    pooled = mask.mask.data.reshape(gh, patch_size, gw, patch_size).sum(axis=(1, 3))
    g = pooled.ravel()
    total = g.sum()
    n = g.size
    g = g / total if total > 0 else np.full(n, 1.0 / n)
    return GazeTokenAttention(matrix=tn.constant(np.tile(g, (n, 1))))


def alignment_loss(a_t: Tensor, a_g: GazeTokenAttention) -> Tensor:
    """Mean squared difference between model and gaze attention maps.

    Differentiable w.r.t. the model map; the gaze target is a constant.
    """
    target = a_g.matrix
    if a_t.shape != target.shape:
        raise DimensionError(
            f"alignment_loss: attention {tuple(a_t.shape)} vs gaze {tuple(target.shape)}"
        )
    diff = tn.sub(a_t, target)
    return tn.scale(tn.sum_all(tn.mul(diff, diff)), 1.0 / a_t.size)


def total_loss(cls_loss: Tensor, align_loss: Tensor, lambda_weight: float) -> Tensor:
    """Classification loss plus the weighted alignment penalty."""
    if lambda_weight < 0:
        raise ContractError(f"lambda_weight must be >= 0, got {lambda_weight}")
    return tn.add(cls_loss, tn.scale(align_loss, lambda_weight))


# ---------------------------------------------------------------------------
# fixation file I/O
# ---------------------------------------------------------------------------

GAZE_CSV_HEADER = ["image_id", "x", "y", "duration_ms"]


def write_gaze_csv(path, records) -> None:
    """One fixation per line, header required; UTF-8."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(GAZE_CSV_HEADER)
        for rec in records:
            for (x, y, d) in rec.fixations:
                writer.writerow([rec.image_id, repr(float(x)), repr(float(y)), repr(float(d))])


def read_gaze_csv(path) -> dict:
    """Parse fixations back into records, keyed and ordered by image id."""
    records: dict[str, GazeRecord] = {}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != GAZE_CSV_HEADER:
            raise ContractError(
                f"{path}: expected header {','.join(GAZE_CSV_HEADER)}, got {header}"
            )
        for row in reader:
            if not row:
                continue
            image_id, x, y, d = row
            rec = records.setdefault(image_id, GazeRecord(image_id=image_id))
            rec.fixations.append((float(x), float(y), float(d)))
    return records


def export_mask_pgm(mask: GazeMask, path) -> None:
    """Dump a mask as a 16-bit grey map for visual inspection."""
    write_pgm16(path, mask.mask.data)

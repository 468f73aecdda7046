"""
Robustness - per-frame merge confidence on the half-resolution guide grid
Compares noise-corrected local colour statistics of the aligned frame against
the base, scales by a motion prior and rejects aliased high-frequency regions.
"""
import os
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from burstfuse.align import AlignmentField
from burstfuse.errors import InvariantError
from burstfuse.imagefiles import write_png8_heatmap
from burstfuse.noisemodel import NoiseTables, TuningParams, c4_correction
from burstfuse.rawcore import GuideImage, LumaImage, guide_luma

logger = logging.getLogger(__name__)

DEFAULT_LOSS_THRESHOLD = 0.5
MIN_FILTER_SIZE = 5
WINDOW_SAMPLES = 9
VARIANCE_GUARD = 1e-12


@dataclass(frozen=True)
class LocalStats:
    mean_base: np.ndarray   # (h, w, 3)
    mean_frame: np.ndarray  # (h, w, 3)
    sigma_ms: np.ndarray    # (h, w)
    d_ms: np.ndarray        # (h, w)


@dataclass(frozen=True)
class RobustnessMask:
    values: np.ndarray
    frame_index: int

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.size and (values.min() < 0.0 or values.max() > 1.0):
            raise InvariantError(f"robustness mask of frame {self.frame_index} leaves [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def ones(cls, shape: Tuple[int, int], frame_index: int) -> 'RobustnessMask':
        return cls(np.ones(shape), frame_index)


@dataclass(frozen=True)
class RobustnessOptions:
    """Feature switches of the confidence model"""
    robustness: bool = True
    noise_model: bool = True
    motion_prior: bool = True
    hf_reject: bool = True
    loss_threshold: float = DEFAULT_LOSS_THRESHOLD


def _half_res_vectors(field: AlignmentField, shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """Alignment vector of every half-res pixel, in half-res units"""
    height, width = shape
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    vx, vy = field.vectors_at(2.0 * xx + 0.5, 2.0 * yy + 0.5)
    return vx / 2.0, vy / 2.0


def _aligned(plane: np.ndarray, vx: np.ndarray, vy: np.ndarray) -> np.ndarray:
    height, width = plane.shape
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    return ndimage.map_coordinates(plane, [yy + vy, xx + vx], order=1, mode='nearest')


def _windows(image: np.ndarray) -> np.ndarray:
    """The nine 3x3-neighbourhood copies of an (h, w, ...) array, edge-clamped"""
    height, width = image.shape[:2]
    pad = [(1, 1), (1, 1)] + [(0, 0)] * (image.ndim - 2)
    padded = np.pad(image, pad, mode='edge')
    return np.stack([padded[dy:dy + height, dx:dx + width] for dy in range(3) for dx in range(3)])


def local_statistics(guide_base: GuideImage, guide_frame: GuideImage, field: AlignmentField) -> LocalStats:
    """
    3x3 colour means and spatial std of the aligned frame against the base

    sigma_ms is the largest per-channel std of the frame, estimated the same
    way as the calibrated noise std (c4-corrected sample std), d_ms the
    largest per-channel absolute mean difference.
    """
    if guide_base.shape != guide_frame.shape:
        raise InvariantError(f"guide sizes differ: {guide_base.shape} vs {guide_frame.shape}")
    vx, vy = _half_res_vectors(field, guide_base.shape)
    frame_rgb = np.stack([_aligned(np.asarray(c), vx, vy) for c in (guide_frame.r, guide_frame.g, guide_frame.b)],
                         axis=-1)
    base_rgb = guide_base.stack()

    frame_windows = _windows(frame_rgb)
    mean_frame = frame_windows.mean(axis=0)
    # Centred on the middle sample so flat windows give exactly 0
    centred = frame_windows - frame_windows[WINDOW_SAMPLES // 2]
    std_frame = centred.std(axis=0, ddof=1) / c4_correction(WINDOW_SAMPLES)
    mean_base = _windows(base_rgb).mean(axis=0)

    return LocalStats(
        mean_base=mean_base,
        mean_frame=mean_frame,
        sigma_ms=std_frame.max(axis=-1),
        d_ms=np.abs(mean_frame - mean_base).max(axis=-1),
    )


def noise_corrected_stats(stats: LocalStats, tables: NoiseTables) -> Tuple[np.ndarray, np.ndarray]:
    """Floor sigma at the expected noise std and Wiener-shrink d by the expected noise difference"""
    brightness = np.clip(guide_luma(stats.mean_base), 0.0, 1.0)
    sigma_md = tables.sigma_at(brightness)
    d_md = tables.d_at(brightness)
    sigma = np.maximum(stats.sigma_ms, sigma_md)
    d_sq = stats.d_ms ** 2
    denom = d_sq + d_md ** 2
    d = np.divide(stats.d_ms * d_sq, denom, out=np.zeros_like(denom), where=denom > 0)
    return sigma, d


def motion_extent(field: AlignmentField) -> np.ndarray:
    """Per tile, the norm of the vector spans over the 3x3 tile neighbourhood"""
    spans = []
    for axis in range(2):
        v = field.vectors[..., axis]
        spans.append(ndimage.maximum_filter(v, size=3, mode='nearest')
                     - ndimage.minimum_filter(v, size=3, mode='nearest'))
    return np.hypot(spans[0], spans[1])


def motion_prior_scale(field: AlignmentField, tune: TuningParams) -> np.ndarray:
    """s1 where the local motion extent exceeds M_th, s2 elsewhere (per tile)"""
    return np.where(motion_extent(field) > tune.m_th, tune.s1, tune.s2)


def tiles_to_half_res(tile_values: np.ndarray, field: AlignmentField, shape: Tuple[int, int]) -> np.ndarray:
    height, width = shape
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    row, col = field.tile_index(2.0 * xx + 0.5, 2.0 * yy + 0.5)
    return tile_values[row, col]


def robustness_map(sigma: np.ndarray, d: np.ndarray, s, tune: TuningParams,
                   frame_index: int = -1) -> RobustnessMask:
    """R = clamp(s * exp(-d^2 / sigma^2) - t, 0, 1), then the 5x5 minimum"""
    sigma = np.asarray(sigma, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), d.shape)
    safe_sigma = np.where(sigma > 0, sigma, 1.0)
    similarity = np.where(sigma > 0, np.exp(-(d * d) / (safe_sigma * safe_sigma)),
                          np.where(d == 0, 1.0, 0.0))
    raw = np.clip(s * similarity - tune.t, 0.0, 1.0)
    refined = ndimage.minimum_filter(raw, size=MIN_FILTER_SIZE, mode='nearest')
    return RobustnessMask(refined, frame_index)


def _local_variance(image: np.ndarray) -> np.ndarray:
    return _windows(image).var(axis=0)


def hf_variance_reject(luma_frame: LumaImage, field: AlignmentField, mask: RobustnessMask,
                       tune: Optional[TuningParams] = None,
                       loss_threshold: float = DEFAULT_LOSS_THRESHOLD) -> RobustnessMask:
    """
    Zero the mask where a 3x3 box lowpass destroys most of the local variance
    and the surrounding tiles disagree in motion

    Only aliasing-prone content under inconsistent alignment is rejected; the
    rest of the mask is untouched.
    """
    tune = tune or TuningParams()
    luma = np.asarray(luma_frame.data)
    if luma.shape != mask.values.shape:
        raise InvariantError(f"luma {luma.shape} and mask {mask.values.shape} differ in size")
    vx, vy = _half_res_vectors(field, luma.shape)
    aligned = _aligned(luma, vx, vy)

    before = _local_variance(aligned)
    after = _local_variance(ndimage.uniform_filter(aligned, size=3, mode='nearest'))
    ratio = np.divide(after, before, out=np.ones_like(before), where=before > VARIANCE_GUARD)

    extent = tiles_to_half_res(motion_extent(field), field, luma.shape)
    reject = (ratio < loss_threshold) & (extent > tune.m_th)
    if not reject.any():
        return mask
    logger.debug(f"High-frequency rejection zeroed {int(reject.sum())} pixels of frame {mask.frame_index}")
    return RobustnessMask(np.where(reject, 0.0, mask.values), mask.frame_index)


def frame_robustness(guide_base: GuideImage, guide_frame: GuideImage, luma_frame: LumaImage,
                     field: AlignmentField, tables: NoiseTables, tune: TuningParams,
                     options: RobustnessOptions) -> RobustnessMask:
    """Full confidence pipeline of one non-base frame"""
    shape = guide_base.shape
    if not options.robustness:
        return RobustnessMask.ones(shape, field.frame_index)

    stats = local_statistics(guide_base, guide_frame, field)
    if not options.noise_model:
        tables = NoiseTables.zeros()
    sigma, d = noise_corrected_stats(stats, tables)

    if options.motion_prior:
        s = tiles_to_half_res(motion_prior_scale(field, tune), field, shape)
    else:
        s = tune.s2
    mask = robustness_map(sigma, d, s, tune, field.frame_index)

    if options.hf_reject:
        mask = hf_variance_reject(luma_frame, field, mask, tune, options.loss_threshold)
    return mask


class MaskAccumulator:
    """Running mean of per-frame masks"""

    def __init__(self, shape: Tuple[int, int]):
        self.total = np.zeros(shape)
        self.count = 0

    def add(self, mask: RobustnessMask):
        self.total += mask.values
        self.count += 1

    def mean(self) -> Optional[np.ndarray]:
        if self.count == 0:
            return None
        return self.total / self.count


def accumulated_mask(masks) -> np.ndarray:
    masks = list(masks)
    if not masks:
        raise InvariantError("no masks to accumulate")
    acc = MaskAccumulator(masks[0].values.shape)
    for mask in masks:
        acc.add(mask)
    return acc.mean()


def save_robustness_debug(accumulator: MaskAccumulator, directory: str):
    mean = accumulator.mean()
    if mean is None:
        return
    os.makedirs(directory, exist_ok=True)
    write_png8_heatmap(os.path.join(directory, 'accumulated_robustness.png'), mean, 0.0, 1.0)

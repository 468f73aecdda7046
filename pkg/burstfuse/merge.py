"""
Merge Engine - online kernel-regression fusion of an aligned Bayer burst
Each frame is splatted into a per-channel weighted accumulator on the output
grid; the final image is the ratio of accumulated contributions to weights.
"""
import os
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage

from burstfuse.align import AlignConfig, AlignmentField, block_match, full_res_gray, refine_lucas_kanade
from burstfuse.config import Config
from burstfuse.errors import InputError, InvariantError, UsageError
from burstfuse.kernelfield import KernelField, build_kernel_field, kernel_covariance_at, sample_weight, save_kernel_debug
from burstfuse.noisemodel import NoiseTables, TuningParams, estimate_snr, tuning_for_snr
from burstfuse.rawcore import (
    CFA_RGGB, BayerFrame, Burst, bilinear_demosaic_baseline, build_guide_image, decimate_luma,
)
from burstfuse.robustness import (
    MaskAccumulator, RobustnessMask, RobustnessOptions, frame_robustness, save_robustness_debug,
)
from burstfuse.synthburst import OffsetList, applied_shift
from burstfuse.tablecache import TableCache

logger = logging.getLogger(__name__)

ALIGNMENT_MODES = ('auto', 'oracle', 'csv')
FIXED_POINT_SCALE = float(2 ** 40)
DEN_EPSILON = 1e-8
MAX_SUPPORTED_ZOOM = 3.0
UNSHARP_SIGMA = 3.0
UNSHARP_AMOUNT = 1.0
DISPLAY_GAMMA = 2.2
DIAGNOSTIC_COLUMNS = ['frame', 'mean_mask', 'mean_|v|']


@dataclass(frozen=True)
class MergeConfig:
    zoom: float = 1.0
    frame_cap: int = 15
    alignment: str = 'auto'
    finish: bool = False
    kernel: str = 'aniso'
    robustness: RobustnessOptions = field(default_factory=RobustnessOptions)
    align: AlignConfig = field(default_factory=AlignConfig)
    tuning_overrides: Mapping[str, Any] = field(default_factory=dict)
    noise_bins: int = 64
    noise_samples: int = 100_000
    noise_seed: int = 0
    cache_dir: Optional[str] = None
    threads: int = 1
    debug_robustness: Optional[str] = None
    debug_kernels: Optional[str] = None

    def __post_init__(self):
        if self.zoom < 1.0:
            raise UsageError(f"zoom must be at least 1 (got {self.zoom})")
        if self.zoom > MAX_SUPPORTED_ZOOM:
            logger.warning(f"Zoom {self.zoom} is beyond the supported range [1, {MAX_SUPPORTED_ZOOM}]")
        if self.alignment not in ALIGNMENT_MODES:
            raise UsageError(f"unknown alignment mode '{self.alignment}' (expected one of {ALIGNMENT_MODES})")

    @classmethod
    def from_config(cls, config: Config, cache_dir: Optional[str] = None) -> 'MergeConfig':
        return cls(
            zoom=config.zoom,
            frame_cap=config.frame_cap,
            alignment=config.alignment,
            finish=config.finish,
            kernel=config.kernel,
            robustness=RobustnessOptions(
                robustness=config.robustness,
                noise_model=config.noise_model,
                motion_prior=config.motion_prior,
                hf_reject=config.hf_reject,
                loss_threshold=config.hf_loss_threshold,
            ),
            align=AlignConfig(
                tile_size=config.tile_size or AlignConfig.tile_size,
                pyramid_levels=config.pyramid_levels,
                search_radius=config.search_radius,
                lk_iterations=config.lk_iterations,
            ),
            tuning_overrides=config.tuning_overrides(),
            noise_bins=config.noise_bins,
            noise_samples=config.noise_samples,
            noise_seed=config.noise_seed,
            cache_dir=cache_dir,
            threads=config.worker_threads(),
            debug_robustness=config.debug_robustness,
            debug_kernels=config.debug_kernels,
        )


def output_shape(input_shape: Tuple[int, int], zoom: float) -> Tuple[int, int]:
    """z*H x z*W rounded down to even"""
    height, width = input_shape
    out_h = int(math.floor(zoom * height + 1e-9)) // 2 * 2
    out_w = int(math.floor(zoom * width + 1e-9)) // 2 * 2
    return out_h, out_w


class Accumulator:
    """
    Per output pixel and channel: fixed-point sums of weighted samples and
    weights, plus the range of the samples that contributed

    Integer sums make the result independent of accumulation order.
    """

    def __init__(self, shape: Tuple[int, int], zoom: float):
        self.shape = shape
        self.zoom = zoom
        self.num_fixed = np.zeros(shape + (3,), dtype=np.int64)
        self.den_fixed = np.zeros(shape + (3,), dtype=np.int64)
        self.low = np.full(shape + (3,), np.inf)
        self.high = np.full(shape + (3,), -np.inf)
        self.frames = 0

    @property
    def num(self) -> np.ndarray:
        return self.num_fixed / FIXED_POINT_SCALE

    @property
    def den(self) -> np.ndarray:
        return self.den_fixed / FIXED_POINT_SCALE

    @property
    def nbytes(self) -> int:
        return self.num_fixed.nbytes + self.den_fixed.nbytes + self.low.nbytes + self.high.nbytes


def _splat_rows(acc: Accumulator, frame: BayerFrame, field: AlignmentField, kernels: KernelField,
                mask: RobustnessMask, rows: Tuple[int, int]):
    """Accumulate one frame into output rows [start, stop)"""
    start, stop = rows
    zoom = acc.zoom
    height, width = frame.data.shape
    mask_h, mask_w = mask.values.shape

    out_y, out_x = np.mgrid[start:stop, 0:acc.shape[1]].astype(np.float64)
    base_x = out_x / zoom
    base_y = out_y / zoom
    vx, vy = field.vectors_at(base_x, base_y)
    pos_x = base_x + vx
    pos_y = base_y + vy

    _, omega_inv = kernel_covariance_at(kernels, (pos_x - 0.5) / 2.0, (pos_y - 0.5) / 2.0)
    mask_row = np.clip(np.floor((base_y + 0.5) / 2.0).astype(np.int64), 0, mask_h - 1)
    mask_col = np.clip(np.floor((base_x + 0.5) / 2.0).astype(np.int64), 0, mask_w - 1)
    confidence = mask.values[mask_row, mask_col]

    centre_x = np.floor(pos_x + 0.5).astype(np.int64)
    centre_y = np.floor(pos_y + 0.5).astype(np.int64)

    num = acc.num_fixed[start:stop]
    den = acc.den_fixed[start:stop]
    low = acc.low[start:stop]
    high = acc.high[start:stop]

    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            sx = centre_x + dx
            sy = centre_y + dy
            inside = (sx >= 0) & (sx < width) & (sy >= 0) & (sy < height)
            sxc = np.clip(sx, 0, width - 1)
            syc = np.clip(sy, 0, height - 1)
            value = frame.data[syc, sxc]
            channel = CFA_RGGB[syc % 2, sxc % 2].astype(np.int64)[..., None]

            weight = sample_weight(sx - pos_x, sy - pos_y, omega_inv) * confidence
            w_fixed = np.where(inside, np.rint(weight * FIXED_POINT_SCALE), 0.0).astype(np.int64)
            c_fixed = np.where(inside, np.rint(value * weight * FIXED_POINT_SCALE), 0.0).astype(np.int64)
            used = w_fixed > 0

            cur = np.take_along_axis(den, channel, axis=2)
            np.put_along_axis(den, channel, cur + w_fixed[..., None], axis=2)
            cur = np.take_along_axis(num, channel, axis=2)
            np.put_along_axis(num, channel, cur + c_fixed[..., None], axis=2)

            cur = np.take_along_axis(low, channel, axis=2)[..., 0]
            np.put_along_axis(low, channel, np.where(used, np.minimum(cur, value), cur)[..., None], axis=2)
            cur = np.take_along_axis(high, channel, axis=2)[..., 0]
            np.put_along_axis(high, channel, np.where(used, np.maximum(cur, value), cur)[..., None], axis=2)


def _row_bands(rows: int, threads: int) -> List[Tuple[int, int]]:
    bands = max(1, min(threads, rows))
    edges = np.linspace(0, rows, bands + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def accumulate_frame(acc: Accumulator, frame: BayerFrame, field: AlignmentField, kernels: KernelField,
                     mask: RobustnessMask, cfg: MergeConfig) -> Accumulator:
    """
    Splat the 3x3 nearest raw samples around every aligned output position

    Output rows are split into disjoint bands processed in parallel when
    cfg.threads > 1.
    """
    if field.image_shape != frame.data.shape:
        raise InvariantError(f"field geometry {field.image_shape} does not match frame {frame.data.shape}")
    bands = _row_bands(acc.shape[0], cfg.threads)
    if len(bands) == 1:
        _splat_rows(acc, frame, field, kernels, mask, bands[0])
    else:
        with ThreadPoolExecutor(max_workers=len(bands)) as executor:
            futures = [executor.submit(_splat_rows, acc, frame, field, kernels, mask, band) for band in bands]
            for future in futures:
                future.result()
    acc.frames += 1
    return acc


def resample_bilinear(rgb: np.ndarray, shape: Tuple[int, int], zoom: float) -> np.ndarray:
    """Sample an input-grid RGB image at output positions (x / z, y / z)"""
    out_y, out_x = np.mgrid[0:shape[0], 0:shape[1]].astype(np.float64)
    coords = [out_y / zoom, out_x / zoom]
    return np.stack([ndimage.map_coordinates(rgb[..., c], coords, order=1, mode='nearest') for c in range(3)],
                    axis=-1)


def finalize_merge(acc: Accumulator, base: BayerFrame) -> np.ndarray:
    """num / den per channel, clipped to the contributing sample range; empty pixels fall back to bilinear"""
    empty = acc.den_fixed < DEN_EPSILON * FIXED_POINT_SCALE
    safe_den = np.where(empty, 1, acc.den_fixed)
    ratio = acc.num_fixed / safe_den
    ratio = np.clip(ratio, np.where(empty, 0.0, acc.low), np.where(empty, 1.0, acc.high))

    if empty.any():
        baseline = bilinear_demosaic_baseline(base)
        if acc.shape != base.data.shape or acc.zoom != 1.0:
            baseline = resample_bilinear(baseline, acc.shape, acc.zoom)
        ratio = np.where(empty, baseline, ratio)
        logger.debug(f"{int(empty.sum())} channel samples fell back to bilinear demosaic")
    return ratio


def _smoothstep(values: np.ndarray) -> np.ndarray:
    return values * values * (3.0 - 2.0 * values)


def finish_image(rgb: np.ndarray, radius_sigma: float = UNSHARP_SIGMA, gamma_curve: bool = True,
                 sharpen: bool = True) -> np.ndarray:
    """Unsharp mask, then gamma 1/2.2 composed with a smoothstep S-curve; clamped to [0, 1]"""
    out = np.asarray(rgb, dtype=np.float64)
    if sharpen and radius_sigma > 0:
        blurred = ndimage.gaussian_filter(out, sigma=(radius_sigma, radius_sigma, 0), mode='nearest')
        out = out + UNSHARP_AMOUNT * (out - blurred)
    out = np.clip(out, 0.0, 1.0)
    if gamma_curve:
        out = _smoothstep(out ** (1.0 / DISPLAY_GAMMA))
    return np.clip(out, 0.0, 1.0)


@dataclass
class MergeResult:
    rgb: np.ndarray
    diagnostics: pd.DataFrame
    snr: float
    tuning: TuningParams
    fields: List[AlignmentField]
    accumulator_bytes: int = 0
    mean_mask: Optional[np.ndarray] = None


def noise_tables_for(burst: Burst, cfg: MergeConfig) -> NoiseTables:
    if not cfg.robustness.noise_model or (burst.noise.slope == 0 and burst.noise.intercept == 0):
        return NoiseTables.zeros()
    return TableCache(cfg.cache_dir).get_or_create_tables(
        burst.noise, bins=cfg.noise_bins, samples=cfg.noise_samples, seed=cfg.noise_seed,
    )


class _FieldSource:
    """Alignment field of each frame according to the configured mode"""

    def __init__(self, burst: Burst, cfg: MergeConfig, tune: TuningParams,
                 offsets: Optional[OffsetList], fields: Optional[Mapping[int, AlignmentField]]):
        self.burst = burst
        self.mode = cfg.alignment
        self.align = AlignConfig(tune.tile_size, cfg.align.pyramid_levels,
                                 cfg.align.search_radius, cfg.align.lk_iterations)
        self.offsets = offsets
        self.fields = fields
        if self.mode == 'oracle':
            if offsets is None:
                raise UsageError("oracle alignment needs an offsets CSV")
            if len(offsets) != len(burst):
                raise InputError(f"offsets list has {len(offsets)} entries for {len(burst)} frames")
        if self.mode == 'csv' and fields is None:
            raise UsageError("csv alignment needs a fields CSV")
        self.base_luma = decimate_luma(burst.base)
        self.base_gray = full_res_gray(burst.base) if self.mode == 'auto' else None

    def field_for(self, index: int, luma) -> AlignmentField:
        if index == self.burst.base_index:
            return AlignmentField.zeros(self.burst.shape, self.align.tile_size, index)
        if self.mode == 'oracle':
            dx, dy = applied_shift(*self.offsets[index])
            return AlignmentField.constant(self.burst.shape, self.align.tile_size, index, dx, dy)
        if self.mode == 'csv':
            if index not in self.fields:
                raise InputError(f"fields CSV has no vectors for frame {index}")
            return self.fields[index]
        frame = self.burst.frames[index]
        vectors = block_match(self.base_luma, luma, self.align, self.base_gray, full_res_gray(frame))
        coarse = AlignmentField(vectors, self.align.tile_size, index, self.burst.shape)
        return refine_lucas_kanade(self.base_luma, luma, coarse, self.align.lk_iterations)


def merge_burst(burst: Burst, cfg: MergeConfig, offsets: Optional[OffsetList] = None,
                fields: Optional[Mapping[int, AlignmentField]] = None) -> MergeResult:
    """
    Align, weight and fuse every frame of the burst

    Tuning is chosen once from the base frame's SNR. Frames are processed one
    at a time in burst order so memory depends only on the output size.

    Args:
        burst: input burst (base frame at burst.base_index)
        cfg: merge configuration
        offsets: synthesis offsets; oracle alignment uses the whole-pixel shift each one produced
        fields: precomputed alignment fields (keyed by frame index) for csv alignment

    Returns:
        MergeResult with the linear (or finished) RGB image and per-frame diagnostics
    """
    if len(burst) == 0:
        raise InvariantError("cannot merge an empty burst")
    if len(burst) > cfg.frame_cap:
        logger.warning(f"Burst has {len(burst)} frames, merging the first {cfg.frame_cap}")
        burst = burst.prefix(cfg.frame_cap)

    snr = estimate_snr(burst.base, burst.noise)
    tune = tuning_for_snr(snr).with_overrides(dict(cfg.tuning_overrides))
    logger.info(f"Base frame SNR {snr:.1f}: tile {tune.tile_size}, k_detail {tune.k_detail:.3f}, "
                f"k_denoise {tune.k_denoise:.2f}")
    tables = noise_tables_for(burst, cfg)

    source = _FieldSource(burst, cfg, tune, offsets, fields)
    base_guide = build_guide_image(burst.base)
    acc = Accumulator(output_shape(burst.shape, cfg.zoom), cfg.zoom)
    mask_mean = MaskAccumulator(base_guide.shape)

    rows = []
    used_fields = []
    for index, frame in enumerate(burst.frames):
        luma = decimate_luma(frame)
        align_field = source.field_for(index, luma)
        kernels = build_kernel_field(luma, tune, cfg.kernel)
        if index == burst.base_index:
            mask = RobustnessMask.ones(base_guide.shape, index)
        else:
            mask = frame_robustness(base_guide, build_guide_image(frame), luma, align_field,
                                    tables, tune, cfg.robustness)
            used_fields.append(align_field)

        accumulate_frame(acc, frame, align_field, kernels, mask, cfg)
        mask_mean.add(mask)
        if cfg.debug_kernels:
            save_kernel_debug(kernels, cfg.debug_kernels, index)

        mean_v = float(np.hypot(align_field.vectors[..., 0], align_field.vectors[..., 1]).mean())
        rows.append({'frame': index, 'mean_mask': float(mask.values.mean()), 'mean_|v|': mean_v})
        logger.info(f"Merged frame {index + 1}/{len(burst)} (mean mask {rows[-1]['mean_mask']:.3f}, "
                    f"mean |v| {mean_v:.2f} px)")

    rgb = finalize_merge(acc, burst.base)
    if cfg.finish:
        rgb = finish_image(rgb)
    if cfg.debug_robustness:
        save_robustness_debug(mask_mean, cfg.debug_robustness)

    return MergeResult(
        rgb=rgb,
        diagnostics=pd.DataFrame(rows, columns=DIAGNOSTIC_COLUMNS),
        snr=snr,
        tuning=tune,
        fields=used_fields,
        accumulator_bytes=acc.nbytes,
        mean_mask=mask_mean.mean(),
    )


def save_diagnostics_csv(result: MergeResult, path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    result.diagnostics.to_csv(path, index=False, float_format='%.6f')

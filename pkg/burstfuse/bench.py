"""
Bench - desk-scale quality and scaling experiments on synthetic bursts
Every experiment synthesizes bursts from ground-truth RGB images, merges them
under a set of configurations and reports PSNR / SSIM / sharpness rows.
"""
import time
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage, stats

from burstfuse.align import (
    AlignConfig, AlignmentField, coverage_bins, register_burst, subpixel_offset_counts, uniformity_pvalue,
)
from burstfuse.dataset import TruthImage, scan_dataset
from burstfuse.merge import MergeConfig, MergeResult, merge_burst
from burstfuse.metrics import crop_border, psnr, sharpness_metric, ssim
from burstfuse.noisemodel import NoiseParams
from burstfuse.rawcore import Burst, bilinear_demosaic_baseline
from burstfuse.synthburst import (
    CorruptionSpec, OffsetList, corrupt_fields, generate_burst_offsets, oracle_fields, synthesize_burst,
)
from burstfuse.worker import BenchJob, BenchWorker

logger = logging.getLogger(__name__)

BORDER_CROP = 8


@dataclass(frozen=True)
class BenchSettings:
    frames: int = 15
    sigma: float = 2.0
    seeds: Tuple[int, ...] = (0,)
    crop: Optional[int] = None
    border: int = BORDER_CROP
    oracle_only: bool = False
    noise: Optional[NoiseParams] = None
    threads: int = 1

    def header(self, dataset: str, cfg: MergeConfig) -> Dict[str, object]:
        return {
            'dataset': dataset,
            'frames': self.frames,
            'offset_sigma': self.sigma,
            'seeds': ' '.join(str(s) for s in self.seeds),
            'crop': self.crop or 'none',
            'border_crop': self.border,
            'zoom': cfg.zoom,
            'kernel': cfg.kernel,
            'robustness': cfg.robustness.robustness,
        }


def evaluate(truth: np.ndarray, rgb: np.ndarray, border: int) -> Dict[str, float]:
    truth = crop_border(truth, border)
    rgb = crop_border(rgb, border)
    return {'psnr_db': psnr(rgb, truth), 'ssim': ssim(rgb, truth), 'sharpness': sharpness_metric(rgb)}


def _row(image: TruthImage, config_id: str, metrics: Dict[str, float], wall_ms: float) -> Dict:
    return {'dataset': image.dataset, 'image_id': image.image_id, 'config_id': config_id,
            'wall_ms': wall_ms, **metrics}


def timed_merge(burst: Burst, cfg: MergeConfig, offsets: Optional[OffsetList] = None,
                fields: Optional[Dict[int, AlignmentField]] = None) -> Tuple[MergeResult, float]:
    start = time.perf_counter()
    result = merge_burst(burst, cfg, offsets=offsets, fields=fields)
    return result, (time.perf_counter() - start) * 1000.0


def _compare_output(result_rgb: np.ndarray, truth: np.ndarray, cfg: MergeConfig) -> np.ndarray:
    if cfg.zoom == 1.0:
        return result_rgb
    # Sample the zoomed output back on the input grid positions
    height, width = truth.shape[:2]
    out_y, out_x = np.mgrid[0:height, 0:width].astype(np.float64)
    coords = [out_y * cfg.zoom, out_x * cfg.zoom]
    return np.stack([ndimage.map_coordinates(result_rgb[..., c], coords, order=1, mode='nearest')
                     for c in range(3)], axis=-1)


def _burst_for(image: TruthImage, settings: BenchSettings, seed: int) -> Tuple[Burst, OffsetList]:
    offsets = generate_burst_offsets(settings.frames, settings.sigma, seed)
    return synthesize_burst(image.rgb, offsets, noise=settings.noise, seed=seed), offsets


def _seed_suffix(settings: BenchSettings, seed: int) -> str:
    return f"_s{seed}" if len(settings.seeds) > 1 else ''


def synthetic_image_rows(image: TruthImage, cfg: MergeConfig, settings: BenchSettings) -> List[Dict]:
    """Bilinear, single-frame and full-burst merges of one ground-truth image"""
    rows = []
    for seed in settings.seeds:
        suffix = _seed_suffix(settings, seed)
        burst, offsets = _burst_for(image, settings, seed)

        start = time.perf_counter()
        baseline = bilinear_demosaic_baseline(burst.base)
        rows.append(_row(image, f"bilinear{suffix}", evaluate(image.rgb, baseline, settings.border),
                         (time.perf_counter() - start) * 1000.0))

        single, wall = timed_merge(burst.prefix(1), replace(cfg, alignment='oracle'), offsets=OffsetList(offsets.offsets[:1]))
        rows.append(_row(image, f"single_frame{suffix}",
                         evaluate(image.rgb, _compare_output(single.rgb, image.rgb, cfg), settings.border), wall))

        oracle, wall = timed_merge(burst, replace(cfg, alignment='oracle'), offsets=offsets)
        rows.append(_row(image, f"oracle_n{settings.frames:02d}{suffix}",
                         evaluate(image.rgb, _compare_output(oracle.rgb, image.rgb, cfg), settings.border), wall))

        if not settings.oracle_only:
            auto, wall = timed_merge(burst, replace(cfg, alignment='auto'))
            rows.append(_row(image, f"auto_n{settings.frames:02d}{suffix}",
                             evaluate(image.rgb, _compare_output(auto.rgb, image.rgb, cfg), settings.border), wall))
    return rows


def _run_jobs(images: Sequence[TruthImage], handler, settings: BenchSettings) -> List[Dict]:
    worker = BenchWorker(handler, threads=settings.threads)
    jobs = [BenchJob(f"{image.dataset}/{image.image_id}", image) for image in images]
    return worker.run(jobs)


def run_synthetic_bench(dataset: str, cfg: MergeConfig, seeds: Sequence[int],
                        settings: Optional[BenchSettings] = None) -> List[Dict]:
    """
    Synthetic-burst quality on every image of a dataset

    Returns:
        Report rows for the bilinear, single-frame, oracle and auto configurations
    """
    settings = replace(settings or BenchSettings(), seeds=tuple(seeds))
    images, summary = scan_dataset(dataset, settings.crop)
    logger.info(f"Synthetic bench on {summary['loaded']} images ({summary['skipped']} skipped)")
    return _run_jobs(images, lambda image: synthetic_image_rows(image, cfg, settings), settings)


def corruption_config_id(spec: CorruptionSpec) -> str:
    if spec.mode == 'tile_replace':
        return f"tile_replace_p{spec.p:.2f}"
    return f"vector_noise_sigma{spec.sigma:.2f}"


def corruption_image_rows(image: TruthImage, specs: Sequence[CorruptionSpec], cfg: MergeConfig,
                          settings: BenchSettings) -> List[Dict]:
    rows = []
    for seed in settings.seeds:
        suffix = _seed_suffix(settings, seed)
        burst, offsets = _burst_for(image, settings, seed)
        csv_cfg = replace(cfg, alignment='csv')
        clean_fields = oracle_fields(offsets, burst.shape, cfg.align.tile_size)

        clean, wall = timed_merge(burst, csv_cfg, fields={f.frame_index: f for f in clean_fields})
        rows.append(_row(image, f"clean{suffix}",
                         evaluate(image.rgb, _compare_output(clean.rgb, image.rgb, cfg), settings.border), wall))

        single, wall = timed_merge(burst.prefix(1), replace(cfg, alignment='oracle'), offsets=OffsetList(offsets.offsets[:1]))
        rows.append(_row(image, f"single_frame{suffix}",
                         evaluate(image.rgb, _compare_output(single.rgb, image.rgb, cfg), settings.border), wall))

        for spec in specs:
            spec = replace(spec, rng_seed=spec.rng_seed + seed)
            corrupted = corrupt_fields(clean_fields, spec)
            result, wall = timed_merge(burst, csv_cfg, fields={f.frame_index: f for f in corrupted})
            rows.append(_row(image, f"{corruption_config_id(spec)}{suffix}",
                             evaluate(image.rgb, _compare_output(result.rgb, image.rgb, cfg), settings.border), wall))
    return rows


def run_corruption_bench(dataset: str, specs: Sequence[CorruptionSpec], cfg: Optional[MergeConfig] = None,
                         settings: Optional[BenchSettings] = None) -> List[Dict]:
    """
    Merge quality under corrupted alignment

    The oracle alignment of each synthetic burst is corrupted per CorruptionSpec and fed
    to the merge as precomputed fields; a clean and a single-frame run give the
    reference points of the degradation curve.
    """
    cfg = cfg or MergeConfig()
    settings = settings or BenchSettings()
    images, _ = scan_dataset(dataset, settings.crop)
    return _run_jobs(images, lambda image: corruption_image_rows(image, specs, cfg, settings), settings)


def frames_sweep_rows(image: TruthImage, n_values: Sequence[int], cfg: MergeConfig,
                      settings: BenchSettings) -> List[Dict]:
    rows = []
    for seed in settings.seeds:
        suffix = _seed_suffix(settings, seed)
        burst, offsets = _burst_for(image, settings, seed)
        reference, _ = timed_merge(burst, cfg, offsets=offsets)
        for n in sorted(set(n_values)):
            if not 1 <= n <= len(burst):
                logger.warning(f"Skipping n={n}: burst has {len(burst)} frames")
                continue
            result, wall = timed_merge(burst.prefix(n), cfg, offsets=OffsetList(offsets.offsets[:n]))
            versus_ref = evaluate(reference.rgb, result.rgb, settings.border)
            versus_truth = evaluate(image.rgb, _compare_output(result.rgb, image.rgb, cfg), settings.border)
            rows.append(_row(image, f"n{n:02d}_vs_ref{suffix}", versus_ref, wall))
            rows.append(_row(image, f"n{n:02d}_vs_truth{suffix}", versus_truth, wall))
    return rows


def run_frames_sweep(dataset: str, n_values: Sequence[int], cfg: Optional[MergeConfig] = None,
                     settings: Optional[BenchSettings] = None) -> List[Dict]:
    """PSNR of n-frame prefixes against the full-burst merge and against the ground truth"""
    cfg = cfg or MergeConfig(alignment='oracle')
    settings = settings or BenchSettings()
    images, _ = scan_dataset(dataset, settings.crop)
    return _run_jobs(images, lambda image: frames_sweep_rows(image, n_values, cfg, settings), settings)


def textured_truth(side: int, seed: int) -> np.ndarray:
    """Smooth random RGB texture of side x side pixels"""
    rng = np.random.default_rng(seed)
    noise = rng.uniform(0.0, 1.0, size=(side, side, 3))
    smooth = ndimage.gaussian_filter(noise, sigma=(1.5, 1.5, 0), mode='reflect')
    low, high = smooth.min(), smooth.max()
    return 0.05 + 0.9 * (smooth - low) / max(high - low, 1e-12)


def measure_scaling(sizes_mpix: Sequence[float], frames: int, seed: int,
                    cfg: Optional[MergeConfig] = None) -> Dict[str, object]:
    """
    Wall time per frame against pixel count, and accumulator memory against N

    Returns:
        dict with rows (mpix, wall_ms_per_frame), the linear-fit R^2 and the
        accumulator sizes of a 2-frame and a full merge
    """
    cfg = cfg or MergeConfig(alignment='oracle')
    rows = []
    memory = {}
    for mpix in sizes_mpix:
        side = int(round(np.sqrt(mpix * 1e6))) // 2 * 2
        truth = textured_truth(side, seed)
        offsets = generate_burst_offsets(frames, 2.0, seed)
        burst = synthesize_burst(truth, offsets)
        result, wall = timed_merge(burst, cfg, offsets=offsets)
        rows.append({'mpix': side * side / 1e6, 'wall_ms_per_frame': wall / frames})
        logger.info(f"Scaling: {side}x{side} took {wall / frames:.1f} ms per frame")
        if mpix == sizes_mpix[0]:
            short, _ = timed_merge(burst.prefix(2), cfg, offsets=OffsetList(offsets.offsets[:2]))
            memory = {'accumulator_bytes_n2': short.accumulator_bytes,
                      f'accumulator_bytes_n{frames}': result.accumulator_bytes}

    r_squared = float('nan')
    if len(rows) >= 2:
        fit = stats.linregress([r['mpix'] for r in rows], [r['wall_ms_per_frame'] for r in rows])
        r_squared = float(fit.rvalue ** 2)
    return {'rows': rows, 'r_squared': r_squared, **memory}


def run_subpixel_analysis(fields: Sequence[AlignmentField], bins: int = 10) -> Dict[str, object]:
    """Fractional-offset histogram, per-axis coverage and chi-square uniformity of alignment fields"""
    counts = subpixel_offset_counts(fields, bins)
    covered_x, covered_y = coverage_bins(fields, bins)
    return {
        'histogram': counts / counts.sum(),
        'coverage_x': covered_x,
        'coverage_y': covered_y,
        'pvalue': uniformity_pvalue(counts),
    }


def analyze_burst_offsets(burst: Burst, align: AlignConfig, bins: int = 10) -> Dict[str, object]:
    return run_subpixel_analysis(register_burst(burst, align), bins)

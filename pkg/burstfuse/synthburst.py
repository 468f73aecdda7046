"""
Synthetic Bursts - shifted, mosaicked copies of an RGB ground truth
Also injects the alignment corruptions used by the robustness experiments.
"""
import os
import math
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from burstfuse.align import AlignmentField
from burstfuse.errors import InputError, InvariantError, OffsetTooLarge, UsageError
from burstfuse.noisemodel import NoiseParams, noise_variance_at
from burstfuse.rawcore import DEFAULT_FRAME_CAP, BayerFrame, Burst, cfa_channels, save_bayer_frame

logger = logging.getLogger(__name__)

CORRUPTION_MODES = ('tile_replace', 'vector_noise')
OFFSET_COLUMNS = ['frame', 'dx', 'dy']


@dataclass(frozen=True)
class OffsetList:
    """Per-frame (dx, dy) ground-truth displacement; the base frame has (0, 0)"""
    offsets: Tuple[Tuple[float, float], ...]
    rng_seed: int = 0
    base_index: int = 0

    def __post_init__(self):
        offsets = tuple((float(dx), float(dy)) for dx, dy in self.offsets)
        object.__setattr__(self, 'offsets', offsets)
        if not offsets:
            raise InvariantError("offset list is empty")
        if not 0 <= self.base_index < len(offsets):
            raise InvariantError(f"base_index {self.base_index} out of range for {len(offsets)} offsets")
        if offsets[self.base_index] != (0.0, 0.0):
            raise InvariantError(f"base frame offset must be (0, 0), got {offsets[self.base_index]}")

    def __len__(self) -> int:
        return len(self.offsets)

    def __getitem__(self, index: int) -> Tuple[float, float]:
        return self.offsets[index]


@dataclass(frozen=True)
class CorruptionSpec:
    mode: str
    p: float = 0.0
    sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in CORRUPTION_MODES:
            raise UsageError(f"unknown corruption mode '{self.mode}' (expected one of {CORRUPTION_MODES})")
        if not 0.0 <= self.p <= 1.0:
            raise UsageError(f"corruption fraction p must lie in [0, 1], got {self.p}")
        if self.sigma < 0:
            raise UsageError(f"corruption sigma must be non-negative, got {self.sigma}")


def generate_burst_offsets(n: int, sigma: float, seed: int) -> OffsetList:
    """i.i.d. bivariate Gaussian offsets with per-axis std sigma; frame 0 is the base"""
    if n < 1:
        raise UsageError(f"burst needs at least one frame (got {n})")
    if sigma < 0:
        raise UsageError(f"offset sigma must be non-negative (got {sigma})")
    rng = np.random.default_rng(seed)
    draws = rng.normal(0.0, sigma, size=(n, 2)) if sigma > 0 else np.zeros((n, 2))
    draws[0] = 0.0
    return OffsetList(tuple(map(tuple, draws)), rng_seed=seed)


def generate_linear_motion_offsets(n: int, step: Tuple[float, float]) -> OffsetList:
    """Regular hand drift: frame k is displaced by k * step"""
    if n < 1:
        raise UsageError(f"burst needs at least one frame (got {n})")
    return OffsetList(tuple((k * step[0], k * step[1]) for k in range(n)))


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5).astype(np.int64)


def applied_shift(dx: float, dy: float) -> Tuple[float, float]:
    """Whole-pixel displacement that shift_nearest realises for a requested (dx, dy)"""
    return float(-math.floor(-dx + 0.5)), float(-math.floor(-dy + 0.5))


def shift_nearest(truth: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Nearest-neighbour resample so that shifted[y, x] = truth[y - dy, x - dx] (clamped)"""
    height, width = truth.shape[:2]
    src_y = np.clip(_round_half_up(np.arange(height) - dy), 0, height - 1)
    src_x = np.clip(_round_half_up(np.arange(width) - dx), 0, width - 1)
    return truth[src_y[:, None], src_x[None, :]]


def mosaic(rgb: np.ndarray) -> np.ndarray:
    """Keep one RGGB channel per pixel"""
    height, width = rgb.shape[:2]
    channels = cfa_channels(height, width)
    return np.take_along_axis(rgb, channels[..., None].astype(np.int64), axis=2)[..., 0]


def add_sensor_noise(frame: BayerFrame, params: NoiseParams, rng: np.random.Generator) -> BayerFrame:
    """Heteroscedastic Gaussian noise with variance slope * v + intercept, clamped to [0,1]"""
    std = np.sqrt(noise_variance_at(frame.data, params))
    noisy = np.clip(frame.data + rng.normal(size=frame.data.shape) * std, 0.0, 1.0)
    return BayerFrame(noisy, frame.pattern, frame.black_level, frame.white_level, frame.exposure_tag)


def synthesize_burst(truth: np.ndarray, offsets: OffsetList, noise: Optional[NoiseParams] = None,
                     seed: int = 0) -> Burst:
    """
    Shift the ground truth by each offset and mosaic it to RGGB

    Args:
        truth: (H, W, 3) RGB in [0,1], even dimensions
        offsets: per-frame displacement
        noise: when given, heteroscedastic noise is added to every frame
        seed: noise seed

    Returns:
        Burst whose frame k satisfies frame[y, x] = truth[y - dy_k, x - dx_k] on its CFA channel
    """
    truth = np.asarray(truth, dtype=np.float64)
    if truth.ndim != 3 or truth.shape[2] != 3:
        raise InvariantError(f"ground truth must be (H, W, 3), got {truth.shape}")
    height, width = truth.shape[:2]
    if height % 2 or width % 2:
        raise InvariantError(f"ground truth dimensions must be even, got {width}x{height}")

    limit = min(width, height) / 4.0
    for index, (dx, dy) in enumerate(offsets.offsets):
        if math.hypot(dx, dy) > limit:
            raise OffsetTooLarge(f"offset ({dx:.2f}, {dy:.2f}) of frame {index} exceeds {limit:.1f} px")

    rng = np.random.default_rng(seed)
    frames = []
    for index, (dx, dy) in enumerate(offsets.offsets):
        frame = BayerFrame(mosaic(shift_nearest(truth, dx, dy)), exposure_tag=f"synth_{index:02d}")
        if noise is not None and (noise.slope > 0 or noise.intercept > 0):
            frame = add_sensor_noise(frame, noise, rng)
        frames.append(frame)
    logger.debug(f"Synthesized {len(frames)} frames of {width}x{height}")
    return Burst(tuple(frames), base_index=offsets.base_index, noise=noise or NoiseParams(),
                 frame_cap=max(DEFAULT_FRAME_CAP, len(frames)))


def offset_fields(offsets: OffsetList, image_shape: Tuple[int, int], tile_size: int) -> List[AlignmentField]:
    """Constant alignment fields holding the listed offsets of every non-base frame"""
    return [
        AlignmentField.constant(image_shape, tile_size, index, dx, dy)
        for index, (dx, dy) in enumerate(offsets.offsets)
        if index != offsets.base_index
    ]


def oracle_fields(offsets: OffsetList, image_shape: Tuple[int, int], tile_size: int) -> List[AlignmentField]:
    """Exact alignment of a synthesized burst: the whole-pixel shift each frame received"""
    return [
        AlignmentField.constant(image_shape, tile_size, index, *applied_shift(dx, dy))
        for index, (dx, dy) in enumerate(offsets.offsets)
        if index != offsets.base_index
    ]


def corrupt_alignment_tiles(field: AlignmentField, spec: CorruptionSpec) -> AlignmentField:
    """Replace round(p * tiles) random tiles with vectors copied from random other tiles"""
    if spec.mode != 'tile_replace':
        raise UsageError(f"corrupt_alignment_tiles needs mode tile_replace, got {spec.mode}")
    original = field.vectors.reshape(-1, 2)
    count = original.shape[0]
    replaced = int(math.floor(spec.p * count + 0.5))
    if replaced == 0 or count < 2:
        return field

    rng = np.random.default_rng(spec.rng_seed)
    targets = rng.choice(count, size=replaced, replace=False)
    # Draw from the count - 1 other tiles, skipping the target itself
    sources = rng.integers(0, count - 1, size=replaced)
    sources = np.where(sources >= targets, sources + 1, sources)

    vectors = original.copy()
    vectors[targets] = original[sources]
    return field.with_vectors(vectors.reshape(field.vectors.shape))


def jitter_alignment_vectors(field: AlignmentField, spec: CorruptionSpec) -> AlignmentField:
    """Add i.i.d. zero-mean Gaussian noise with per-axis std sigma to every tile vector"""
    if spec.mode != 'vector_noise':
        raise UsageError(f"jitter_alignment_vectors needs mode vector_noise, got {spec.mode}")
    if spec.sigma == 0:
        return field
    rng = np.random.default_rng(spec.rng_seed)
    return field.with_vectors(field.vectors + rng.normal(0.0, spec.sigma, size=field.vectors.shape))


def corrupt_fields(fields: Sequence[AlignmentField], spec: CorruptionSpec) -> List[AlignmentField]:
    """Apply one corruption to every field, with a distinct derived seed per frame"""
    corrupted = []
    for f in fields:
        frame_spec = CorruptionSpec(spec.mode, spec.p, spec.sigma, spec.rng_seed * 1000 + f.frame_index)
        if spec.mode == 'tile_replace':
            corrupted.append(corrupt_alignment_tiles(f, frame_spec))
        else:
            corrupted.append(jitter_alignment_vectors(f, frame_spec))
    return corrupted


def save_offsets_csv(offsets: OffsetList, path: str):
    df = pd.DataFrame(
        [{'frame': i, 'dx': dx, 'dy': dy} for i, (dx, dy) in enumerate(offsets.offsets)],
        columns=OFFSET_COLUMNS,
    )
    df.to_csv(path, index=False, float_format='%.17g')


def load_offsets_csv(path: str, base_index: int = 0) -> OffsetList:
    try:
        df = pd.read_csv(path, float_precision='round_trip')
    except (OSError, pd.errors.ParserError) as e:
        raise InputError(f"cannot read offsets CSV {path}: {e}")
    if list(df.columns) != OFFSET_COLUMNS:
        raise InputError(f"{path}: offsets CSV must have columns {OFFSET_COLUMNS}")
    df = df.sort_values('frame')
    if df['frame'].tolist() != list(range(len(df))):
        raise InputError(f"{path}: frame column must list 0..N-1 exactly once")
    return OffsetList(tuple(zip(df['dx'], df['dy'])), base_index=base_index)


def save_synthetic_burst(burst: Burst, offsets: OffsetList, directory: str) -> List[str]:
    """Write frame_XX.pgm + sidecars and offsets.csv; returns the frame paths"""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for index, frame in enumerate(burst.frames):
        path = os.path.join(directory, f"frame_{index:02d}.pgm")
        extra = {'base_index': burst.base_index} if index == 0 else None
        save_bayer_frame(frame, path, burst.noise, extra)
        paths.append(path)
    save_offsets_csv(offsets, os.path.join(directory, 'offsets.csv'))
    logger.info(f"Wrote {len(paths)} frames and offsets.csv to {directory}")
    return paths

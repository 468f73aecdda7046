"""
Raw Core - Bayer frames, bursts and the half-resolution images derived from them
All intensities are normalized floats in [0,1]; the CFA layout is RGGB.
"""
import os
import glob
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from burstfuse.errors import (
    InputError, InvariantError, MissingSidecarField, OddDimensions,
    UnsupportedPattern, DimensionMismatch, EmptyBurst,
)
from burstfuse.imagefiles import (
    RAW_SUFFIXES, read_raw_plane, write_raw_plane, read_sidecar, write_sidecar, sidecar_path_for,
)
from burstfuse.noisemodel import NoiseParams

logger = logging.getLogger(__name__)

PATTERN = 'RGGB'
SIDECAR_FIELDS = ('pattern', 'black', 'white', 'noise_slope', 'noise_intercept')
DEFAULT_FRAME_CAP = 15

# Channel index (0=R, 1=G, 2=B) at [y % 2, x % 2]
CFA_RGGB = np.array([[0, 1], [1, 2]], dtype=np.int8)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class BayerFrame:
    """One normalized raw CFA plane"""
    data: np.ndarray
    pattern: str = PATTERN
    black_level: int = 0
    white_level: int = 65535
    exposure_tag: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'data', _frozen(self.data))
        if self.data.ndim != 2:
            raise InvariantError(f"Bayer data must be 2D (got shape {self.data.shape})")
        height, width = self.data.shape
        if width % 2 or height % 2:
            raise OddDimensions(self.exposure_tag or '<frame>', width, height)
        if self.pattern != PATTERN:
            raise UnsupportedPattern(self.exposure_tag or '<frame>', self.pattern)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LumaImage:
    """Half-resolution luminance, one pixel per Bayer quad"""
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'data', _frozen(self.data))


@dataclass(frozen=True)
class GuideImage:
    """Half-resolution RGB: red and blue taken directly, greens averaged"""
    r: np.ndarray
    g: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for name in ('r', 'g', 'b'):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.r.shape

    def stack(self) -> np.ndarray:
        """(H/2, W/2, 3) view of the three channels"""
        return np.stack([self.r, self.g, self.b], axis=-1)


@dataclass(frozen=True)
class Burst:
    """Ordered frames sharing one geometry; frames[base_index] is the reference"""
    frames: Tuple[BayerFrame, ...]
    base_index: int = 0
    noise: NoiseParams = field(default_factory=NoiseParams)
    frame_cap: int = DEFAULT_FRAME_CAP

    def __post_init__(self):
        object.__setattr__(self, 'frames', tuple(self.frames))
        if not self.frames:
            raise EmptyBurst("burst contains no frames")
        if len(self.frames) > self.frame_cap:
            raise InvariantError(f"burst has {len(self.frames)} frames, cap is {self.frame_cap}")
        if not 0 <= self.base_index < len(self.frames):
            raise InvariantError(f"base_index {self.base_index} out of range for {len(self.frames)} frames")
        shape = self.frames[0].data.shape
        for index, frame in enumerate(self.frames):
            if frame.data.shape != shape:
                raise DimensionMismatch(f"frame {index} is {frame.data.shape}, base geometry is {shape}")
            if frame.pattern != self.frames[0].pattern:
                raise DimensionMismatch(f"frame {index} has pattern {frame.pattern}")

    @property
    def base(self) -> BayerFrame:
        return self.frames[self.base_index]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frames[0].data.shape

    def __len__(self) -> int:
        return len(self.frames)

    def prefix(self, n: int) -> 'Burst':
        """First n frames (the base frame must be among them)"""
        return Burst(self.frames[:n], self.base_index, self.noise, self.frame_cap)


def cfa_channels(height: int, width: int) -> np.ndarray:
    """Per-pixel channel index map for an RGGB mosaic"""
    return np.tile(CFA_RGGB, (height // 2, width // 2))


def normalize_raw(values: np.ndarray, black: float, white: float) -> np.ndarray:
    """(v - black) / (white - black), clamped to [0,1]"""
    values = np.asarray(values, dtype=np.float64)
    return np.clip((values - black) / float(white - black), 0.0, 1.0)


def _parse_sidecar(meta: str) -> Dict[str, str]:
    values = read_sidecar(meta)
    for name in SIDECAR_FIELDS:
        if name not in values:
            raise MissingSidecarField(meta, name)
    return values


def read_noise_params(meta: str) -> NoiseParams:
    values = _parse_sidecar(meta)
    try:
        return NoiseParams(float(values['noise_slope']), float(values['noise_intercept']))
    except ValueError as e:
        raise InputError(f"{meta}: malformed noise parameters ({e})")


def load_bayer_frame(path: str, meta: str) -> BayerFrame:
    """
    Load a 16-bit raw plane and normalize it with the sidecar's levels

    Args:
        path: 16-bit PGM or greyscale PNG
        meta: key=value sidecar (pattern, black, white, noise_slope, noise_intercept)

    Returns:
        Normalized BayerFrame
    """
    values = _parse_sidecar(meta)
    pattern = values['pattern'].upper()
    if pattern != PATTERN:
        raise UnsupportedPattern(meta, pattern)
    try:
        black = int(values['black'])
        white = int(values['white'])
    except ValueError as e:
        raise InputError(f"{meta}: malformed black/white level ({e})")
    if white <= black:
        raise InputError(f"{meta}: white level {white} must exceed black level {black}")

    raw = read_raw_plane(path)
    height, width = raw.shape
    if width % 2 or height % 2:
        raise OddDimensions(path, width, height)

    return BayerFrame(
        data=normalize_raw(raw, black, white),
        pattern=pattern,
        black_level=black,
        white_level=white,
        exposure_tag=values.get('exposure_tag', os.path.basename(path)),
    )


def save_bayer_frame(frame: BayerFrame, path: str, noise: NoiseParams, extra: Optional[Dict[str, object]] = None):
    """Quantize back to raw levels and write the plane plus its sidecar"""
    span = frame.white_level - frame.black_level
    raw = np.rint(frame.black_level + frame.data * span).astype(np.uint16)
    write_raw_plane(path, raw)
    values = {
        'pattern': frame.pattern,
        'black': frame.black_level,
        'white': frame.white_level,
        'noise_slope': repr(noise.slope),
        'noise_intercept': repr(noise.intercept),
    }
    if frame.exposure_tag:
        values['exposure_tag'] = frame.exposure_tag
    values.update(extra or {})
    write_sidecar(sidecar_path_for(path), values)


def list_burst_files(directory: str) -> List[str]:
    if not os.path.isdir(directory):
        raise InputError(f"burst directory not found: {directory}")
    paths = []
    for suffix in RAW_SUFFIXES:
        paths.extend(glob.glob(os.path.join(directory, f"*{suffix}")))
    return sorted(paths)


def load_burst(directory: str, cap: int = DEFAULT_FRAME_CAP) -> Burst:
    """Load every raw plane of a directory in name order; noise and base index come from the first sidecar"""
    paths = list_burst_files(directory)
    if not paths:
        raise EmptyBurst(f"no .pgm/.png frames in {directory}")
    if len(paths) > cap:
        logger.warning(f"Burst has {len(paths)} frames, keeping the first {cap}")
        paths = paths[:cap]

    first_meta = sidecar_path_for(paths[0])
    noise = read_noise_params(first_meta)
    base_index = int(read_sidecar(first_meta).get('base_index', 0))

    frames = [load_bayer_frame(p, sidecar_path_for(p)) for p in paths]
    logger.info(f"Loaded burst of {len(frames)} frames from {directory} "
                f"({frames[0].width}x{frames[0].height}, base {base_index})")
    return Burst(tuple(frames), base_index=base_index, noise=noise, frame_cap=cap)


def decimate_luma(frame: BayerFrame) -> LumaImage:
    """Mean of each 2x2 quad: (R + G1 + G2 + B) / 4"""
    data = frame.data
    quads = data[0::2, 0::2] + data[0::2, 1::2] + data[1::2, 0::2] + data[1::2, 1::2]
    return LumaImage(quads / 4.0)


def build_guide_image(frame: BayerFrame) -> GuideImage:
    data = frame.data
    return GuideImage(
        r=data[0::2, 0::2],
        g=(data[0::2, 1::2] + data[1::2, 0::2]) / 2.0,
        b=data[1::2, 1::2],
    )


def guide_luma(rgb: np.ndarray) -> np.ndarray:
    """Quad-mean luminance of guide RGB values, (r + 2g + b) / 4"""
    return (rgb[..., 0] + 2.0 * rgb[..., 1] + rgb[..., 2]) / 4.0


# Bilinear interpolation weights: R/B from 2 or 4 neighbours, G from the 4-cross
_KERNEL_RB = np.array([[0.25, 0.5, 0.25],
                       [0.5, 1.0, 0.5],
                       [0.25, 0.5, 0.25]])
_KERNEL_G = np.array([[0.0, 0.25, 0.0],
                      [0.25, 1.0, 0.25],
                      [0.0, 0.25, 0.0]])


def _interpolate_channel(data: np.ndarray, mask: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Mask-normalized convolution; the result is clipped to the range of the samples used"""
    masked = np.where(mask, data, 0.0)
    num = ndimage.convolve(masked, kernel, mode='nearest')
    den = ndimage.convolve(mask.astype(np.float64), kernel, mode='nearest')
    estimate = np.divide(num, den, out=np.zeros_like(num), where=den > 0)

    footprint = kernel > 0
    low = ndimage.minimum_filter(np.where(mask, data, np.inf), footprint=footprint, mode='nearest')
    high = ndimage.maximum_filter(np.where(mask, data, -np.inf), footprint=footprint, mode='nearest')
    estimate = np.clip(estimate, low, high)
    return np.where(mask, data, estimate)


def bilinear_demosaic_baseline(frame: BayerFrame) -> np.ndarray:
    """
    Classic per-channel bilinear demosaic with clamped-border replication

    Returns:
        (H, W, 3) float RGB
    """
    channels = cfa_channels(frame.height, frame.width)
    rgb = np.empty(frame.data.shape + (3,))
    for channel, kernel in ((0, _KERNEL_RB), (1, _KERNEL_G), (2, _KERNEL_RB)):
        rgb[..., channel] = _interpolate_channel(frame.data, channels == channel, kernel)
    return rgb

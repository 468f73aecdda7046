"""
Noise Model - heteroscedastic sensor noise, Monte Carlo statistics and SNR tuning
Noise variance is a linear function of brightness; expected local statistics on
flat patches are tabulated by simulation so sensor clipping is accounted for.
"""
import hashlib
import logging
import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Dict, Union

import numpy as np
import pandas as pd
from scipy.special import gammaln

from burstfuse.errors import InputError, InvariantError

if TYPE_CHECKING:
    from burstfuse.rawcore import BayerFrame

logger = logging.getLogger(__name__)

SNR_CAP = 100.0
SNR_LOW = 6.0
SNR_HIGH = 30.0
TILE_SIZES = (16, 32, 64)
PATCH_SAMPLES = 9  # 3x3 neighbourhood

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class NoiseParams:
    """Noise variance = slope * brightness + intercept (normalized intensity^2)"""
    slope: float = 0.0
    intercept: float = 0.0

    def __post_init__(self):
        if self.slope < 0 or self.intercept < 0:
            raise InvariantError(f"noise parameters must be non-negative (slope={self.slope}, intercept={self.intercept})")

    def cache_key(self, bins: int, samples: int, seed: int) -> str:
        text = f"{self.slope!r}:{self.intercept!r}:{bins}:{samples}:{seed}"
        return hashlib.sha1(text.encode('ascii')).hexdigest()[:16]


@dataclass(frozen=True)
class NoiseTables:
    """Expected 3x3 spatial std and inter-frame mean difference on flat patches"""
    brightness_bins: np.ndarray
    sigma_md: np.ndarray
    d_md: np.ndarray

    def sigma_at(self, brightness: ArrayLike) -> ArrayLike:
        return np.interp(brightness, self.brightness_bins, self.sigma_md)

    def d_at(self, brightness: ArrayLike) -> ArrayLike:
        return np.interp(brightness, self.brightness_bins, self.d_md)

    @classmethod
    def zeros(cls, bins: int = 16) -> 'NoiseTables':
        """Tables of a noiseless sensor (used when the noise model is disabled)"""
        return cls(np.linspace(0.0, 1.0, bins), np.zeros(bins), np.zeros(bins))


@dataclass(frozen=True)
class TuningParams:
    """SNR-dependent merge tuning (sizes in pixels, gradients in normalized units)"""
    tile_size: int = 16
    k_detail: float = 0.25
    k_denoise: float = 3.0
    d_th: float = 0.001
    d_tr: float = 0.006
    k_stretch: float = 4.0
    k_shrink: float = 2.0
    t: float = 0.12
    s1: float = 12.0
    s2: float = 2.0
    m_th: float = 0.8

    def with_overrides(self, overrides: Dict[str, float]) -> 'TuningParams':
        if not overrides:
            return self
        values = dict(overrides)
        if 'tile_size' in values:
            values['tile_size'] = int(values['tile_size'])
        return replace(self, **values)


def noise_variance_at(brightness: ArrayLike, params: NoiseParams) -> ArrayLike:
    return params.slope * brightness + params.intercept


def c4_correction(n: int) -> float:
    """Bias of the sample standard deviation of n Gaussian samples"""
    return math.sqrt(2.0 / (n - 1)) * math.exp(gammaln(n / 2.0) - gammaln((n - 1) / 2.0))


def mc_calibrate_tables(params: NoiseParams, bins: int = 64, samples: int = 100_000,
                        seed: int = 0) -> NoiseTables:
    """
    Simulate flat noisy 3x3 patches at every brightness level

    The same standard-normal draws are scaled for every bin, so the tables are
    exactly monotone wherever clipping does not bite.

    Args:
        params: sensor noise model
        bins: number of brightness levels in [0, 1]
        samples: simulated patches per level
        seed: random seed; identical seeds give identical tables

    Returns:
        NoiseTables with sigma_md (bias-corrected sample std) and d_md
        (mean absolute difference of two independent patch means)
    """
    if bins < 16:
        raise InvariantError(f"noise table needs at least 16 bins (got {bins})")
    if samples < 10_000:
        raise InvariantError(f"noise calibration needs at least 10^4 samples per bin (got {samples})")

    rng = np.random.default_rng(seed)
    base_draws = rng.standard_normal((samples, PATCH_SAMPLES))
    other_draws = rng.standard_normal((samples, PATCH_SAMPLES))
    c4 = c4_correction(PATCH_SAMPLES)

    brightness = np.linspace(0.0, 1.0, bins)
    sigma_md = np.zeros(bins)
    d_md = np.zeros(bins)

    for index, level in enumerate(brightness):
        std = math.sqrt(noise_variance_at(level, params))
        if std == 0.0:
            continue
        patches = np.clip(level + std * base_draws, 0.0, 1.0)
        others = np.clip(level + std * other_draws, 0.0, 1.0)
        sigma_md[index] = np.std(patches, axis=1, ddof=1).mean() / c4
        d_md[index] = np.abs(patches.mean(axis=1) - others.mean(axis=1)).mean()

    logger.info(f"Calibrated noise tables: {bins} bins x {samples} samples "
                f"(slope={params.slope}, intercept={params.intercept})")
    return NoiseTables(brightness, sigma_md, d_md)


def estimate_snr(base: 'BayerFrame', params: NoiseParams) -> float:
    """Single-frame SNR from the mean brightness and the noise model"""
    mean = float(np.mean(base.data))
    variance = noise_variance_at(mean, params)
    if variance <= 0.0:
        return SNR_CAP
    return min(mean / math.sqrt(variance), SNR_CAP)


def _lerp(low_snr_value: float, high_snr_value: float, alpha: float) -> float:
    return (1.0 - alpha) * low_snr_value + alpha * high_snr_value


def tuning_for_snr(snr: float) -> TuningParams:
    """
    Piece-wise linear tuning over SNR in [6, 30], clamped outside

    Low SNR gets the stronger denoising end of every range; a black frame
    (SNR 0) takes the low end.
    """
    if math.isnan(snr) or snr < 0:
        raise InvariantError(f"SNR must be a non-negative number (got {snr})")
    alpha = min(max((snr - SNR_LOW) / (SNR_HIGH - SNR_LOW), 0.0), 1.0)

    raw_tile = _lerp(64.0, 16.0, alpha)
    tile_size = min(TILE_SIZES, key=lambda size: (abs(size - raw_tile), size))

    return TuningParams(
        tile_size=tile_size,
        k_detail=_lerp(0.33, 0.25, alpha),
        k_denoise=_lerp(5.0, 3.0, alpha),
        d_th=_lerp(0.010, 0.001, alpha),
        d_tr=_lerp(0.020, 0.006, alpha),
    )


def save_tables_csv(tables: NoiseTables, path: str):
    df = pd.DataFrame({
        'brightness': tables.brightness_bins,
        'sigma_md': tables.sigma_md,
        'd_md': tables.d_md,
    })
    df.to_csv(path, index=False, float_format='%.17g')


def load_tables_csv(path: str) -> NoiseTables:
    try:
        df = pd.read_csv(path, float_precision='round_trip')
    except (OSError, pd.errors.ParserError) as e:
        raise InputError(f"cannot read noise tables {path}: {e}")
    missing = {'brightness', 'sigma_md', 'd_md'} - set(df.columns)
    if missing:
        raise InputError(f"{path}: noise table is missing columns {sorted(missing)}")
    return NoiseTables(
        df['brightness'].to_numpy(dtype=np.float64),
        df['sigma_md'].to_numpy(dtype=np.float64),
        df['d_md'].to_numpy(dtype=np.float64),
    )

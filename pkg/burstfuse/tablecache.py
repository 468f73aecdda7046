"""
Noise Table Cache - calibrated tables persisted on disk
Keyed by a hash of NoiseParams and the calibration settings
"""
import os
import logging
from typing import Optional

from burstfuse.noisemodel import (
    NoiseParams, NoiseTables, mc_calibrate_tables, save_tables_csv, load_tables_csv,
)

logger = logging.getLogger(__name__)


class TableCache:
    """Get-or-create store for Monte Carlo noise tables"""

    def __init__(self, cache_dir: Optional[str]):
        self.cache_dir = cache_dir
        if cache_dir:
            os.makedirs(cache_dir, exist_ok=True)

    def path_for(self, params: NoiseParams, bins: int, samples: int, seed: int) -> Optional[str]:
        if not self.cache_dir:
            return None
        return os.path.join(self.cache_dir, f"noise_{params.cache_key(bins, samples, seed)}.csv")

    def get_or_create_tables(self, params: NoiseParams, bins: int = 64,
                             samples: int = 100_000, seed: int = 0) -> NoiseTables:
        """Return cached tables, calibrating and storing them on a miss"""
        path = self.path_for(params, bins, samples, seed)

        # Try to get existing
        if path and os.path.exists(path):
            try:
                tables = load_tables_csv(path)
                if len(tables.brightness_bins) == bins:
                    logger.debug(f"Noise tables cache hit: {path}")
                    return tables
                logger.warning(f"Ignoring cached tables with {len(tables.brightness_bins)} bins: {path}")
            except Exception as e:
                logger.warning(f"Discarding unreadable cached tables {path}: {e}")

        # Create new
        tables = mc_calibrate_tables(params, bins=bins, samples=samples, seed=seed)
        if path:
            try:
                save_tables_csv(tables, path)
                logger.info(f"Cached noise tables at {path}")
            except OSError as e:
                logger.warning(f"Could not cache noise tables at {path}: {e}")
        return tables

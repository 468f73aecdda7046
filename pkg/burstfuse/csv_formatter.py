"""
CSV Formatter - Convert bench results and offset histograms to fixed-column rows
"""
import math
import logging
from typing import Dict, Iterable, List, Sequence

import numpy as np
import pandas as pd

from burstfuse.metrics import psnr_for_report

logger = logging.getLogger(__name__)

REPORT_SORT_KEYS = ['dataset', 'image_id', 'config_id']


def format_report_rows(results: Iterable[Dict]) -> List[Dict]:
    """
    Convert raw bench results to report rows

    Args:
        results: dicts with dataset, image_id, config_id, psnr_db, ssim, sharpness, wall_ms

    Returns:
        Rows in report column order, PSNR capped for the CSV, sorted by
        (dataset, image_id, config_id)
    """
    formatted_rows = []

    for result in results:
        try:
            psnr_db = float(result['psnr_db'])
            row = {
                'dataset': str(result['dataset']),
                'image_id': str(result['image_id']),
                'config_id': str(result['config_id']),
                'psnr_db': psnr_for_report(psnr_db),
                'ssim': float(result['ssim']),
                'sharpness': float(result.get('sharpness', math.nan)),
                'wall_ms': float(result.get('wall_ms', 0.0)),
            }
            formatted_rows.append(row)

        except (KeyError, TypeError, ValueError) as e:
            logger.error(f"Error formatting bench result {result.get('image_id')}: {e}")
            continue

    formatted_rows.sort(key=lambda r: tuple(r[k] for k in REPORT_SORT_KEYS))
    return formatted_rows


def get_report_column_order() -> List[str]:
    return ['dataset', 'image_id', 'config_id', 'psnr_db', 'ssim', 'sharpness', 'wall_ms']


def format_histogram_rows(histogram: np.ndarray) -> List[Dict]:
    """One row per (bin_x, bin_y) cell with the bin's lower edges and its frequency"""
    bins_x, bins_y = histogram.shape
    rows = []
    for i in range(bins_x):
        for j in range(bins_y):
            rows.append({
                'bin_x': i,
                'bin_y': j,
                'frac_x': i / bins_x,
                'frac_y': j / bins_y,
                'frequency': float(histogram[i, j]),
            })
    return rows


def get_histogram_column_order() -> List[str]:
    return ['bin_x', 'bin_y', 'frac_x', 'frac_y', 'frequency']


def write_csv_with_header(rows: Sequence[Dict], columns: List[str], path: str, header: Dict[str, object]):
    """Write '# key: value' lines followed by the CSV body"""
    df = pd.DataFrame(list(rows), columns=columns)
    with open(path, 'w', newline='') as handle:
        for key, value in header.items():
            handle.write(f"# {key}: {value}\n")
        df.to_csv(handle, index=False, float_format='%.6f')
    logger.info(f"Wrote {len(df)} rows to {path}")


def summarize_report(rows: Sequence[Dict]) -> pd.DataFrame:
    """Per (dataset, config_id) means of the metric columns"""
    df = pd.DataFrame(list(rows), columns=get_report_column_order())
    if df.empty:
        return df
    return (df.groupby(['dataset', 'config_id'], sort=True)[['psnr_db', 'ssim', 'sharpness', 'wall_ms']]
              .mean()
              .reset_index())

"""
Dataset Scanning - ground-truth RGB images for the bench experiments
"""
import os
import glob
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from burstfuse.errors import InputError
from burstfuse.imagefiles import read_rgb_image

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = ('.png',)


@dataclass(frozen=True)
class TruthImage:
    dataset: str
    image_id: str
    rgb: np.ndarray


def center_crop(rgb: np.ndarray, crop: Optional[int]) -> np.ndarray:
    """Centre crop to at most crop x crop, then trim to even dimensions"""
    height, width = rgb.shape[:2]
    if crop:
        top = max((height - crop) // 2, 0)
        left = max((width - crop) // 2, 0)
        rgb = rgb[top:top + crop, left:left + crop]
        height, width = rgb.shape[:2]
    return rgb[:height - height % 2, :width - width % 2]


def list_dataset_images(directory: str) -> List[str]:
    if not os.path.isdir(directory):
        raise InputError(f"dataset directory not found: {directory}")
    paths = []
    for suffix in IMAGE_SUFFIXES:
        paths.extend(glob.glob(os.path.join(directory, f"*{suffix}")))
    return sorted(paths)


def scan_dataset(directory: str, crop: Optional[int] = None) -> Tuple[List[TruthImage], Dict]:
    """
    Load every ground-truth image of a dataset directory

    Args:
        directory: folder of 8- or 16-bit RGB PNGs
        crop: optional centre crop size

    Returns:
        (images sorted by id, summary dict with loaded, skipped, total)
    """
    results = {
        'loaded': 0,
        'skipped': 0,
        'total': 0,
    }
    dataset = os.path.basename(os.path.normpath(directory))
    paths = list_dataset_images(directory)
    results['total'] = len(paths)

    images = []
    for path in paths:
        image_id = os.path.splitext(os.path.basename(path))[0]
        try:
            rgb = center_crop(read_rgb_image(path), crop)
            if min(rgb.shape[:2]) < 16:
                logger.warning(f"Skipping {path}: {rgb.shape[1]}x{rgb.shape[0]} is too small")
                results['skipped'] += 1
                continue
            images.append(TruthImage(dataset, image_id, rgb))
            results['loaded'] += 1
        except (OSError, ValueError) as e:
            logger.warning(f"Skipping unreadable image {path}: {e}")
            results['skipped'] += 1

    logger.info(f"Dataset {dataset}: {results['loaded']} images loaded, {results['skipped']} skipped")
    return images, results

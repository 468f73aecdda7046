"""
Image Files - 16-bit PGM/PNG raw planes, sidecars, RGB and heatmap PNG output
"""
import os
import logging
from typing import Dict, Tuple

import numpy as np
import png

from burstfuse.errors import InputError, UnsupportedBitDepth

logger = logging.getLogger(__name__)

RAW_SUFFIXES = ('.pgm', '.png')


def _read_pnm_token(data: bytes, pos: int) -> Tuple[bytes, int]:
    """Read one whitespace-delimited header token, skipping '#' comments"""
    length = len(data)
    while pos < length:
        if data[pos:pos + 1] == b'#':
            while pos < length and data[pos:pos + 1] not in (b'\n', b'\r'):
                pos += 1
        elif data[pos:pos + 1].isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < length and not data[pos:pos + 1].isspace():
        pos += 1
    return data[start:pos], pos


def read_pgm16(path: str) -> np.ndarray:
    """Read a binary (P5) 16-bit PGM into a uint16 array of shape (H, W)"""
    try:
        with open(path, 'rb') as handle:
            data = handle.read()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}")

    magic, pos = _read_pnm_token(data, 0)
    if magic != b'P5':
        raise InputError(f"{path}: not a binary PGM (magic {magic!r})")
    width_tok, pos = _read_pnm_token(data, pos)
    height_tok, pos = _read_pnm_token(data, pos)
    maxval_tok, pos = _read_pnm_token(data, pos)
    try:
        width, height, maxval = int(width_tok), int(height_tok), int(maxval_tok)
    except ValueError:
        raise InputError(f"{path}: malformed PGM header")
    if maxval < 256 or maxval > 65535:
        raise UnsupportedBitDepth(path, f"PGM maxval {maxval}")

    # Exactly one whitespace byte separates the header from the raster
    raster = data[pos + 1:]
    expected = width * height * 2
    if len(raster) < expected:
        raise InputError(f"{path}: truncated raster ({len(raster)} of {expected} bytes)")
    return np.frombuffer(raster[:expected], dtype='>u2').reshape(height, width).astype(np.uint16)


def write_pgm16(path: str, data: np.ndarray):
    data = np.asarray(data, dtype=np.uint16)
    height, width = data.shape
    with open(path, 'wb') as handle:
        handle.write(f"P5\n{width} {height}\n65535\n".encode('ascii'))
        handle.write(data.astype('>u2').tobytes())


def read_png16_gray(path: str) -> np.ndarray:
    """Read a 16-bit single-channel PNG into a uint16 array of shape (H, W)"""
    try:
        width, height, rows, info = png.Reader(filename=path).read()
        pixels = np.vstack([np.asarray(row, dtype=np.uint16) for row in rows])
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}")
    except png.Error as e:
        raise InputError(f"{path}: invalid PNG ({e})")

    if info.get('planes', 1) != 1 or not info.get('greyscale', False):
        raise UnsupportedBitDepth(path, f"{info.get('planes')} planes")
    if info.get('bitdepth') != 16:
        raise UnsupportedBitDepth(path, f"{info.get('bitdepth')}-bit PNG")
    return pixels.reshape(height, width)


def write_png16_gray(path: str, data: np.ndarray):
    data = np.asarray(data, dtype=np.uint16)
    height, width = data.shape
    writer = png.Writer(width, height, greyscale=True, bitdepth=16)
    with open(path, 'wb') as handle:
        writer.write(handle, data.tolist())


def read_raw_plane(path: str) -> np.ndarray:
    """Dispatch on file suffix to the 16-bit reader"""
    suffix = os.path.splitext(path)[1].lower()
    if suffix == '.pgm':
        return read_pgm16(path)
    if suffix == '.png':
        return read_png16_gray(path)
    raise InputError(f"{path}: unsupported raw file type '{suffix}'")


def write_raw_plane(path: str, data: np.ndarray):
    suffix = os.path.splitext(path)[1].lower()
    if suffix == '.pgm':
        write_pgm16(path, data)
    elif suffix == '.png':
        write_png16_gray(path, data)
    else:
        raise InputError(f"{path}: unsupported raw file type '{suffix}'")


def read_sidecar(path: str) -> Dict[str, str]:
    """Read a plain-text key=value sidecar; '#' starts a comment"""
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            lines = handle.read().splitlines()
    except OSError as e:
        raise InputError(f"cannot read sidecar {path}: {e}")

    values = {}
    for line in lines:
        line = line.split('#', 1)[0].strip()
        if not line or '=' not in line:
            continue
        key, value = line.split('=', 1)
        values[key.strip().lower()] = value.strip()
    return values


def write_sidecar(path: str, values: Dict[str, object]):
    with open(path, 'w', encoding='utf-8') as handle:
        for key, value in values.items():
            handle.write(f"{key}={value}\n")


def sidecar_path_for(raw_path: str) -> str:
    """frame_03.pgm -> frame_03.txt"""
    return os.path.splitext(raw_path)[0] + '.txt'


def read_rgb_image(path: str) -> np.ndarray:
    """
    Read an 8- or 16-bit PNG as float RGB in [0,1]

    Greyscale images are replicated to three channels and alpha is dropped.

    Returns:
        Array of shape (H, W, 3), float64
    """
    try:
        width, height, rows, info = png.Reader(filename=path).asDirect()
        pixels = np.vstack([np.asarray(row, dtype=np.float64) for row in rows])
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}")
    except png.Error as e:
        raise InputError(f"{path}: invalid PNG ({e})")

    planes = info['planes']
    pixels = pixels.reshape(height, width, planes)
    if info.get('alpha'):
        pixels = pixels[..., :planes - 1]
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    scale = float(2 ** info['bitdepth'] - 1)
    return pixels / scale


def write_png16_rgb(path: str, rgb: np.ndarray):
    """Write float RGB in [0,1] as a 16-bit PNG"""
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    height, width, _ = rgb.shape
    quantized = np.rint(rgb * 65535.0).astype(np.uint16).reshape(height, width * 3)
    writer = png.Writer(width, height, greyscale=False, bitdepth=16)
    with open(path, 'wb') as handle:
        writer.write(handle, quantized.tolist())


def write_png8_heatmap(path: str, values: np.ndarray, vmin: float = 0.0, vmax: float = 1.0):
    """Write a scalar map as an 8-bit greyscale PNG, linearly mapping [vmin, vmax] to [0, 255]"""
    values = np.asarray(values, dtype=np.float64)
    span = vmax - vmin if vmax > vmin else 1.0
    scaled = np.clip((values - vmin) / span, 0.0, 1.0)
    quantized = np.rint(scaled * 255.0).astype(np.uint8)
    height, width = quantized.shape
    writer = png.Writer(width, height, greyscale=True, bitdepth=8)
    with open(path, 'wb') as handle:
        writer.write(handle, quantized.tolist())
    logger.debug(f"Wrote heatmap {path} ({width}x{height})")

"""
Frame Registration - coarse-to-fine tile block matching with Lucas-Kanade refinement
Alignment runs on half-resolution luma; vectors are reported in full-resolution
Bayer pixels. Also hosts the subpixel displacement analysis.
"""
import math
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import ndimage, stats

from burstfuse.errors import InputError, InvariantError
from burstfuse.rawcore import BayerFrame, Burst, LumaImage, decimate_luma

logger = logging.getLogger(__name__)

MIN_TOP_LEVEL = 32
LK_MIN_UPDATE = 1e-3
LK_MAX_STEP = 2.0
FIELD_COLUMNS = ['frame', 'tile_x', 'tile_y', 'tile_size', 'v_x', 'v_y']


@dataclass(frozen=True)
class AlignmentField:
    """Per-tile (v_x, v_y) of one frame relative to the base, full-resolution pixels"""
    vectors: np.ndarray  # (tiles_y, tiles_x, 2)
    tile_size: int
    frame_index: int
    image_shape: Tuple[int, int]  # full-resolution (H, W)

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64, copy=True)
        vectors.setflags(write=False)
        object.__setattr__(self, 'vectors', vectors)
        expected = grid_shape(self.image_shape, self.tile_size)
        if vectors.shape != expected + (2,):
            raise InvariantError(f"alignment grid {vectors.shape[:2]} does not match {expected} "
                                 f"for {self.image_shape} with tile size {self.tile_size}")
        if not np.all(np.isfinite(vectors)):
            raise InvariantError(f"alignment field of frame {self.frame_index} has non-finite vectors")

    @property
    def grid(self) -> Tuple[int, int]:
        return self.vectors.shape[:2]

    def with_vectors(self, vectors: np.ndarray) -> 'AlignmentField':
        return AlignmentField(vectors, self.tile_size, self.frame_index, self.image_shape)

    def tile_index(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Tile row/column of continuous full-resolution positions (nearest pixel's tile)"""
        tiles_y, tiles_x = self.grid
        col = np.clip(np.floor((np.asarray(x) + 0.5) / self.tile_size).astype(np.int64), 0, tiles_x - 1)
        row = np.clip(np.floor((np.asarray(y) + 0.5) / self.tile_size).astype(np.int64), 0, tiles_y - 1)
        return row, col

    def vectors_at(self, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        row, col = self.tile_index(x, y)
        return self.vectors[row, col, 0], self.vectors[row, col, 1]

    @classmethod
    def zeros(cls, image_shape: Tuple[int, int], tile_size: int, frame_index: int) -> 'AlignmentField':
        return cls(np.zeros(grid_shape(image_shape, tile_size) + (2,)), tile_size, frame_index, image_shape)

    @classmethod
    def constant(cls, image_shape: Tuple[int, int], tile_size: int, frame_index: int,
                 v_x: float, v_y: float) -> 'AlignmentField':
        vectors = np.zeros(grid_shape(image_shape, tile_size) + (2,))
        vectors[..., 0] = v_x
        vectors[..., 1] = v_y
        return cls(vectors, tile_size, frame_index, image_shape)


@dataclass(frozen=True)
class AlignConfig:
    tile_size: int = 16
    pyramid_levels: int = 4
    search_radius: int = 4
    lk_iterations: int = 3


@dataclass(frozen=True)
class Pyramid:
    levels: Tuple[np.ndarray, ...]


def grid_shape(image_shape: Tuple[int, int], tile_size: int) -> Tuple[int, int]:
    height, width = image_shape
    return math.ceil(height / tile_size), math.ceil(width / tile_size)


def _box_decimate(image: np.ndarray) -> np.ndarray:
    height, width = image.shape
    image = image[:height - height % 2, :width - width % 2]
    return (image[0::2, 0::2] + image[0::2, 1::2] + image[1::2, 0::2] + image[1::2, 1::2]) / 4.0


def max_pyramid_levels(shape: Tuple[int, int]) -> int:
    """Deepest pyramid whose top level keeps at least 32 px on the short side"""
    short = min(shape)
    levels = 1
    while short // 2 >= MIN_TOP_LEVEL:
        short //= 2
        levels += 1
    return levels


def build_pyramid(luma: LumaImage, levels: int) -> Pyramid:
    """Level 0 is the luma itself; every next level is a 2x2 box-filtered, 2x decimated copy"""
    if levels < 1:
        raise InvariantError(f"pyramid needs at least one level (got {levels})")
    if levels > max_pyramid_levels(luma.data.shape):
        raise InvariantError(f"{levels} pyramid levels is too deep for a {luma.data.shape} image")
    stack = [np.asarray(luma.data)]
    for _ in range(levels - 1):
        stack.append(_box_decimate(stack[-1]))
    return Pyramid(tuple(stack))


def full_res_gray(frame: BayerFrame) -> np.ndarray:
    """
    Stride-1 2x2 box mean of the mosaic

    Every 2x2 window of an RGGB mosaic holds one R, two G and one B sample, so
    this luminance is independent of the CFA phase and shifts exactly with
    integer full-resolution translations.
    """
    data = np.pad(frame.data, ((0, 1), (0, 1)), mode='edge')
    return (data[:-1, :-1] + data[:-1, 1:] + data[1:, :-1] + data[1:, 1:]) / 4.0


def _tile_sum(values: np.ndarray, tile: int, grid: Tuple[int, int]) -> np.ndarray:
    """Sum a per-pixel map over tiles, ignoring the padding beyond the image"""
    tiles_y, tiles_x = grid
    padded = np.zeros((tiles_y * tile, tiles_x * tile) + values.shape[2:])
    padded[:values.shape[0], :values.shape[1]] = values
    return padded.reshape(tiles_y, tile, tiles_x, tile, *values.shape[2:]).sum(axis=(1, 3))


def _expand_tiles(tile_values: np.ndarray, tile: int, shape: Tuple[int, int]) -> np.ndarray:
    expanded = np.repeat(np.repeat(tile_values, tile, axis=0), tile, axis=1)
    return expanded[:shape[0], :shape[1]]


def _candidate_offsets(radius: int) -> List[Tuple[int, int]]:
    """All integer offsets within the radius, nearest first so ties favour small motion"""
    offsets = [(dx, dy) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    return sorted(offsets, key=lambda o: (o[0] ** 2 + o[1] ** 2, o[1], o[0]))


def _search_level(base: np.ndarray, frame: np.ndarray, tile: int,
                  initial: np.ndarray, radius: int) -> np.ndarray:
    """Exhaustive integer search of +/- radius around each tile's initial vector (L2 tile error)"""
    height, width = base.shape
    grid = initial.shape[:2]
    yy, xx = np.mgrid[0:height, 0:width]
    init_x = _expand_tiles(initial[..., 0], tile, base.shape).astype(np.int64)
    init_y = _expand_tiles(initial[..., 1], tile, base.shape).astype(np.int64)

    best_cost = np.full(grid, np.inf)
    best = initial.copy()
    for dx, dy in _candidate_offsets(radius):
        sx = np.clip(xx + init_x + dx, 0, width - 1)
        sy = np.clip(yy + init_y + dy, 0, height - 1)
        cost = _tile_sum((frame[sy, sx] - base) ** 2, tile, grid)
        better = cost < best_cost
        best_cost = np.where(better, cost, best_cost)
        best[..., 0] = np.where(better, initial[..., 0] + dx, best[..., 0])
        best[..., 1] = np.where(better, initial[..., 1] + dy, best[..., 1])
    return best


def _propagate(parent: np.ndarray, parent_tile: int, grid: Tuple[int, int], tile: int) -> np.ndarray:
    """Initial vectors for a finer level: twice the vector of the parent tile under each tile centre"""
    tiles_y, tiles_x = grid
    centre_y = (np.arange(tiles_y) + 0.5) * tile / 2.0
    centre_x = (np.arange(tiles_x) + 0.5) * tile / 2.0
    rows = np.clip((centre_y // parent_tile).astype(np.int64), 0, parent.shape[0] - 1)
    cols = np.clip((centre_x // parent_tile).astype(np.int64), 0, parent.shape[1] - 1)
    return 2.0 * parent[rows[:, None], cols[None, :]]


def _polish_full_res(base_gray: np.ndarray, frame_gray: np.ndarray, vectors: np.ndarray,
                     tile_size: int) -> np.ndarray:
    """+/-1 px integer search at full resolution to recover odd displacements"""
    return _search_level(base_gray, frame_gray, tile_size, vectors, 1)


def block_match(base_luma: LumaImage, frame_luma: LumaImage, cfg: AlignConfig,
                base_gray: Optional[np.ndarray] = None,
                frame_gray: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Coarse-to-fine block matching of one frame

    Returns:
        (tiles_y, tiles_x, 2) integer vectors in full-resolution pixels
    """
    luma_tile = max(cfg.tile_size // 2, 1)
    levels = min(cfg.pyramid_levels, max_pyramid_levels(base_luma.data.shape))
    if levels < cfg.pyramid_levels:
        logger.debug(f"Pyramid depth reduced to {levels} for a {base_luma.data.shape} luma image")
    base_pyr = build_pyramid(base_luma, levels)
    frame_pyr = build_pyramid(frame_luma, levels)

    vectors = None
    previous_tile = luma_tile
    for level in reversed(range(levels)):
        base, frame = base_pyr.levels[level], frame_pyr.levels[level]
        grid = grid_shape(base.shape, luma_tile)
        if vectors is None:
            initial = np.zeros(grid + (2,))
        else:
            initial = _propagate(vectors, previous_tile, grid, luma_tile)
        vectors = _search_level(base, frame, luma_tile, initial, cfg.search_radius)
        previous_tile = luma_tile

    full = 2.0 * vectors
    if base_gray is not None and frame_gray is not None:
        full_grid = grid_shape(base_gray.shape, cfg.tile_size)
        full = _fit_grid(full, full_grid)
        full = _polish_full_res(base_gray, frame_gray, full, cfg.tile_size)
    return full


def _fit_grid(vectors: np.ndarray, grid: Tuple[int, int]) -> np.ndarray:
    """Pad (edge) or crop a tile grid to the requested shape"""
    pad_y = max(grid[0] - vectors.shape[0], 0)
    pad_x = max(grid[1] - vectors.shape[1], 0)
    if pad_y or pad_x:
        vectors = np.pad(vectors, ((0, pad_y), (0, pad_x), (0, 0)), mode='edge')
    return vectors[:grid[0], :grid[1]]


def align_burst(burst: Burst, cfg: AlignConfig,
                lumas: Optional[Sequence[LumaImage]] = None) -> List[AlignmentField]:
    """
    Block-match every non-base frame against the base frame

    Args:
        burst: input burst
        cfg: tile size, pyramid depth and per-level search radius
        lumas: precomputed half-resolution lumas (one per frame)

    Returns:
        One AlignmentField per non-base frame, in burst order
    """
    if lumas is None:
        lumas = [decimate_luma(frame) for frame in burst.frames]
    base_luma = lumas[burst.base_index]
    base_gray = full_res_gray(burst.base)

    fields = []
    for index, frame in enumerate(burst.frames):
        if index == burst.base_index:
            continue
        vectors = block_match(base_luma, lumas[index], cfg, base_gray, full_res_gray(frame))
        fields.append(AlignmentField(vectors, cfg.tile_size, index, burst.shape))
        logger.debug(f"Block matching frame {index}: mean |v| = "
                     f"{np.hypot(vectors[..., 0], vectors[..., 1]).mean():.3f} px")
    return fields


def _warp(image: np.ndarray, ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
    """Cubic-spline resample of image at (x + ux, y + uy)"""
    height, width = image.shape
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    return ndimage.map_coordinates(image, [yy + uy, xx + ux], order=3, mode='nearest')


def _luma_residual(base: np.ndarray, frame: np.ndarray, u_tiles: np.ndarray,
                   luma_tile: int) -> np.ndarray:
    ux = _expand_tiles(u_tiles[..., 0], luma_tile, base.shape)
    uy = _expand_tiles(u_tiles[..., 1], luma_tile, base.shape)
    return _warp(frame, ux, uy) - base


def tile_residuals(base_luma: LumaImage, frame_luma: LumaImage, field: AlignmentField) -> np.ndarray:
    """Per-tile sum of squared luma differences between the base and the aligned frame"""
    base = np.asarray(base_luma.data)
    luma_tile = max(field.tile_size // 2, 1)
    residual = _luma_residual(base, np.asarray(frame_luma.data), np.asarray(field.vectors) / 2.0, luma_tile)
    return _tile_sum(residual ** 2, luma_tile, field.grid)


def refine_lucas_kanade(base_luma: LumaImage, frame_luma: LumaImage, field: AlignmentField,
                        iters: int = 3) -> AlignmentField:
    """
    Translation-only Lucas-Kanade refinement per tile

    Each iteration solves the 2x2 normal equations of the tile's base-luma
    gradients against the cubic-spline warped residual. Updates are clamped to
    +/-2 px, a tile stops once its update falls below 1e-3 px, and an update
    that would raise the tile's residual is rejected. Flat tiles (singular
    systems) keep their vector.
    """
    base = np.asarray(base_luma.data)
    frame = np.asarray(frame_luma.data)
    luma_tile = max(field.tile_size // 2, 1)
    grid = field.grid
    luma_grid = grid_shape(base.shape, luma_tile)
    if luma_grid != grid:
        raise InvariantError(f"luma tile grid {luma_grid} does not match field grid {grid}")

    grad_y, grad_x = np.gradient(base)
    hxx = _tile_sum(grad_x * grad_x, luma_tile, grid)
    hxy = _tile_sum(grad_x * grad_y, luma_tile, grid)
    hyy = _tile_sum(grad_y * grad_y, luma_tile, grid)
    det = hxx * hyy - hxy * hxy
    trace = hxx + hyy
    solvable = (trace > 1e-12) & (det > 1e-6 * trace * trace)

    # Work in luma pixels: half of the full-resolution displacement
    u = np.array(field.vectors) / 2.0
    active = solvable.copy()

    residual = _luma_residual(base, frame, u, luma_tile)
    cost = _tile_sum(residual ** 2, luma_tile, grid)
    for iteration in range(iters):
        if not active.any():
            break
        bx = _tile_sum(grad_x * residual, luma_tile, grid)
        by = _tile_sum(grad_y * residual, luma_tile, grid)
        safe_det = np.where(solvable, det, 1.0)
        step_x = -(hyy * bx - hxy * by) / safe_det
        step_y = -(hxx * by - hxy * bx) / safe_det
        limit = LK_MAX_STEP / 2.0
        step = np.stack([np.clip(step_x, -limit, limit), np.clip(step_y, -limit, limit)], axis=-1)
        step[~active] = 0.0

        candidate = u + step
        new_cost = _tile_sum(_luma_residual(base, frame, candidate, luma_tile) ** 2, luma_tile, grid)
        accept = active & (new_cost <= cost)
        u = np.where(accept[..., None], candidate, u)
        cost = np.where(accept, new_cost, cost)
        residual = _luma_residual(base, frame, u, luma_tile)

        converged = np.abs(step).max(axis=-1) * 2.0 < LK_MIN_UPDATE
        active &= accept & ~converged
        logger.debug(f"LK iteration {iteration + 1}: {int(accept.sum())} tiles updated, "
                     f"{int(active.sum())} still active")

    return field.with_vectors(u * 2.0)


def register_burst(burst: Burst, cfg: AlignConfig,
                   lumas: Optional[Sequence[LumaImage]] = None) -> List[AlignmentField]:
    """Block matching followed by Lucas-Kanade refinement for every non-base frame"""
    if lumas is None:
        lumas = [decimate_luma(frame) for frame in burst.frames]
    fields = align_burst(burst, cfg, lumas)
    base_luma = lumas[burst.base_index]
    return [refine_lucas_kanade(base_luma, lumas[f.frame_index], f, cfg.lk_iterations) for f in fields]


def _fractions(fields: Sequence[AlignmentField]) -> Tuple[np.ndarray, np.ndarray]:
    v = np.concatenate([f.vectors.reshape(-1, 2) for f in fields], axis=0)
    frac = v - np.floor(v)
    # Values a rounding error below an integer belong to the zero bin
    frac[frac > 1.0 - 1e-9] = 0.0
    return frac[:, 0], frac[:, 1]


def subpixel_offset_counts(fields: Sequence[AlignmentField], bins: int) -> np.ndarray:
    """(bins_x, bins_y) counts of the fractional parts of all tile vectors"""
    if not fields:
        raise InvariantError("subpixel histogram needs at least one alignment field")
    frac_x, frac_y = _fractions(fields)
    counts, _, _ = np.histogram2d(frac_x, frac_y, bins=bins, range=[[0.0, 1.0], [0.0, 1.0]])
    return counts


def subpixel_offset_histogram(fields: Sequence[AlignmentField], bins: int) -> np.ndarray:
    """Normalized 2D histogram of fractional offsets; frequencies sum to 1"""
    counts = subpixel_offset_counts(fields, bins)
    return counts / counts.sum()


def coverage_bins(fields: Sequence[AlignmentField], bins: int) -> Tuple[int, int]:
    """Number of occupied fractional bins along x and along y"""
    histogram = subpixel_offset_counts(fields, bins)
    return int((histogram.sum(axis=1) > 0).sum()), int((histogram.sum(axis=0) > 0).sum())


def uniformity_pvalue(counts: np.ndarray) -> float:
    """Chi-square goodness of fit of the counts against a uniform distribution"""
    return float(stats.chisquare(np.asarray(counts, dtype=np.float64).ravel()).pvalue)


def fields_to_frame(fields: Sequence[AlignmentField]) -> pd.DataFrame:
    rows = []
    for f in fields:
        tiles_y, tiles_x = f.grid
        for ty in range(tiles_y):
            for tx in range(tiles_x):
                rows.append({
                    'frame': f.frame_index, 'tile_x': tx, 'tile_y': ty, 'tile_size': f.tile_size,
                    'v_x': f.vectors[ty, tx, 0], 'v_y': f.vectors[ty, tx, 1],
                })
    return pd.DataFrame(rows, columns=FIELD_COLUMNS)


def save_fields_csv(fields: Sequence[AlignmentField], path: str):
    fields_to_frame(fields).to_csv(path, index=False, float_format='%.17g')


def load_fields_csv(path: str, image_shape: Tuple[int, int]) -> Dict[int, AlignmentField]:
    """Read fields written by save_fields_csv, keyed by frame index"""
    try:
        df = pd.read_csv(path, float_precision='round_trip')
    except (OSError, pd.errors.ParserError) as e:
        raise InputError(f"cannot read alignment CSV {path}: {e}")
    missing = set(FIELD_COLUMNS) - set(df.columns)
    if missing:
        raise InputError(f"{path}: alignment CSV is missing columns {sorted(missing)}")

    fields = {}
    for frame_index, group in df.groupby('frame', sort=True):
        tile_size = int(group['tile_size'].iloc[0])
        vectors = np.zeros(grid_shape(image_shape, tile_size) + (2,))
        try:
            vectors[group['tile_y'].to_numpy(), group['tile_x'].to_numpy(), 0] = group['v_x'].to_numpy()
            vectors[group['tile_y'].to_numpy(), group['tile_x'].to_numpy(), 1] = group['v_y'].to_numpy()
        except IndexError:
            raise InputError(f"{path}: tile indices of frame {frame_index} exceed the {image_shape} image")
        fields[int(frame_index)] = AlignmentField(vectors, tile_size, int(frame_index), image_shape)
    return fields

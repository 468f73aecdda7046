"""
Kernel Field - anisotropic merge kernels from the local gradient structure
Kernels are built per half-resolution pixel and queried bilinearly.
"""
import os
import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np
from scipy import ndimage

from burstfuse.imagefiles import write_png8_heatmap
from burstfuse.noisemodel import TuningParams
from burstfuse.rawcore import LumaImage

logger = logging.getLogger(__name__)

KERNEL_MODES = ('aniso', 'iso')
EIGEN_TIE = 1e-12
ANISOTROPY_GUARD = 1e-12
VARIANCE_FLOOR = 1e-6


@dataclass(frozen=True)
class StructureTensor:
    ixx: np.ndarray
    ixy: np.ndarray
    iyy: np.ndarray


@dataclass(frozen=True)
class EigenPair:
    """lambda1 >= lambda2 >= 0 with orthonormal eigenvectors in the last axis (x, y)"""
    lambda1: np.ndarray
    lambda2: np.ndarray
    e1: np.ndarray
    e2: np.ndarray


@dataclass(frozen=True)
class KernelShape:
    k1: np.ndarray
    k2: np.ndarray
    anisotropy: np.ndarray
    denoise: np.ndarray


@dataclass(frozen=True)
class KernelField:
    """Per half-res pixel covariance entries (omega_xx, omega_xy, omega_yy) in full-res px^2"""
    omega: np.ndarray  # (h, w, 3)
    shape: KernelShape

    @property
    def size(self) -> Tuple[int, int]:
        return self.omega.shape[:2]


def structure_tensor_field(luma: LumaImage) -> StructureTensor:
    """
    Gradient structure tensor averaged over each 3x3 window

    The window holds four 2x2 sub-squares; each yields one horizontal and one
    vertical gradient (mean of its two forward differences). The tensor entries
    are the mean products over those four gradients. Borders are clamped.
    """
    padded = np.pad(np.asarray(luma.data), 1, mode='edge')
    gx = ((padded[:-1, 1:] - padded[:-1, :-1]) + (padded[1:, 1:] - padded[1:, :-1])) / 2.0
    gy = ((padded[1:, :-1] - padded[:-1, :-1]) + (padded[1:, 1:] - padded[:-1, 1:])) / 2.0

    def window_mean(values):
        return (values[:-1, :-1] + values[:-1, 1:] + values[1:, :-1] + values[1:, 1:]) / 4.0

    return StructureTensor(window_mean(gx * gx), window_mean(gx * gy), window_mean(gy * gy))


def eigen2x2(ixx, ixy, iyy) -> EigenPair:
    """Closed-form eigendecomposition of symmetric 2x2 matrices [[ixx, ixy], [ixy, iyy]]"""
    ixx, ixy, iyy = (np.asarray(v, dtype=np.float64) for v in (ixx, ixy, iyy))
    half_trace = (ixx + iyy) / 2.0
    radius = np.sqrt(((ixx - iyy) / 2.0) ** 2 + ixy ** 2)
    lambda1 = half_trace + radius
    lambda2 = np.maximum(half_trace - radius, 0.0)
    lambda1 = np.maximum(lambda1, lambda2)

    # Two candidate eigenvectors for lambda1; the longer one is numerically stable
    a = np.stack([lambda1 - iyy, ixy], axis=-1)
    b = np.stack([ixy, lambda1 - ixx], axis=-1)
    norm_a = np.linalg.norm(a, axis=-1)
    norm_b = np.linalg.norm(b, axis=-1)
    use_a = norm_a >= norm_b
    vec = np.where(use_a[..., None], a, b)
    norm = np.where(use_a, norm_a, norm_b)

    tie = (lambda1 - lambda2 < EIGEN_TIE) | (norm < EIGEN_TIE)
    safe = np.where(tie, 1.0, norm)
    e1 = vec / safe[..., None]
    e1 = np.where(tie[..., None], np.array([1.0, 0.0]), e1)
    e2 = np.stack([-e1[..., 1], e1[..., 0]], axis=-1)
    return EigenPair(lambda1, lambda2, e1, e2)


def kernel_shape_params(lambda1, lambda2, tune: TuningParams) -> KernelShape:
    """Anisotropy A, denoise blend D and the kernel variances k1 (stretched) and k2 (shrunk)"""
    lambda1 = np.asarray(lambda1, dtype=np.float64)
    lambda2 = np.asarray(lambda2, dtype=np.float64)
    total = lambda1 + lambda2
    ratio = np.divide(lambda1 - lambda2, total, out=np.zeros_like(total), where=total >= ANISOTROPY_GUARD)
    anisotropy = 1.0 + np.sqrt(np.clip(ratio, 0.0, 1.0))
    denoise = np.clip(1.0 - np.sqrt(lambda1) / tune.d_tr + tune.d_th, 0.0, 1.0)

    k1_hat = tune.k_detail * (tune.k_stretch * anisotropy)
    k2_hat = tune.k_detail / (tune.k_shrink * anisotropy)
    k_flat = tune.k_detail * tune.k_denoise
    k1 = ((1.0 - denoise) * k1_hat + denoise * k_flat) ** 2
    k2 = ((1.0 - denoise) * k2_hat + denoise * k_flat) ** 2
    return KernelShape(k1, k2, anisotropy, denoise)


def assemble_covariance(e1: np.ndarray, e2: np.ndarray, k1, k2) -> np.ndarray:
    """Omega = [e1 e2] diag(k1, k2) [e1 e2]^T as (..., 3) entries (xx, xy, yy)"""
    k1 = np.maximum(np.asarray(k1, dtype=np.float64), VARIANCE_FLOOR)
    k2 = np.maximum(np.asarray(k2, dtype=np.float64), VARIANCE_FLOOR)
    oxx = k1 * e1[..., 0] ** 2 + k2 * e2[..., 0] ** 2
    oxy = k1 * e1[..., 0] * e1[..., 1] + k2 * e2[..., 0] * e2[..., 1]
    oyy = k1 * e1[..., 1] ** 2 + k2 * e2[..., 1] ** 2
    return np.stack([oxx, oxy, oyy], axis=-1)


def invert_covariance(omega: np.ndarray) -> np.ndarray:
    oxx, oxy, oyy = omega[..., 0], omega[..., 1], omega[..., 2]
    det = oxx * oyy - oxy * oxy
    return np.stack([oyy / det, -oxy / det, oxx / det], axis=-1)


def build_kernel_field(luma: LumaImage, tune: TuningParams, mode: str = 'aniso') -> KernelField:
    """
    Kernel covariances of one frame

    The stretched variance k1 is laid along the edge tangent (the tensor's
    minor eigenvector) and the shrunk k2 across the edge. In iso mode the
    anisotropy is forced to 1 with unit stretch and shrink.
    """
    if mode not in KERNEL_MODES:
        raise ValueError(f"unknown kernel mode '{mode}' (expected one of {KERNEL_MODES})")
    tensor = structure_tensor_field(luma)
    eig = eigen2x2(tensor.ixx, tensor.ixy, tensor.iyy)
    if mode == 'iso':
        tune = replace(tune, k_stretch=1.0, k_shrink=1.0)
        shape = kernel_shape_params(eig.lambda1, eig.lambda1, tune)
    else:
        shape = kernel_shape_params(eig.lambda1, eig.lambda2, tune)
    omega = assemble_covariance(eig.e2, eig.e1, shape.k1, shape.k2)
    return KernelField(omega, shape)


def kernel_covariance_at(field: KernelField, x: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Bilinearly interpolated covariance and its inverse at continuous half-res positions

    Returns:
        (omega, omega_inv), each (..., 3) entries (xx, xy, yy)
    """
    height, width = field.size
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, width - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, height - 1)
    omega = np.stack([
        ndimage.map_coordinates(field.omega[..., k], [y, x], order=1, mode='nearest')
        for k in range(3)
    ], axis=-1)
    return omega, invert_covariance(omega)


def sample_weight(dx, dy, omega_inv: np.ndarray):
    """exp(-1/2 d^T Omega^-1 d)"""
    dx = np.asarray(dx, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    quad = omega_inv[..., 0] * dx * dx + 2.0 * omega_inv[..., 1] * dx * dy + omega_inv[..., 2] * dy * dy
    return np.exp(-0.5 * quad)


def save_kernel_debug(field: KernelField, directory: str, frame_index: int):
    """Anisotropy (A - 1) and denoise D heatmaps of one frame"""
    os.makedirs(directory, exist_ok=True)
    write_png8_heatmap(os.path.join(directory, f"anisotropy_{frame_index:02d}.png"),
                       field.shape.anisotropy - 1.0, 0.0, 1.0)
    write_png8_heatmap(os.path.join(directory, f"denoise_{frame_index:02d}.png"),
                       field.shape.denoise, 0.0, 1.0)
    logger.debug(f"Kernel debug maps of frame {frame_index} written to {directory}")

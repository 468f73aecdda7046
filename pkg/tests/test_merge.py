import os
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from burstfuse.align import AlignmentField
from burstfuse.bench import textured_truth
from burstfuse.config import Config
from burstfuse.errors import InputError, UsageError
from burstfuse.kernelfield import build_kernel_field
from burstfuse.merge import (
    Accumulator, MergeConfig, accumulate_frame, finalize_merge, finish_image, merge_burst, output_shape,
    resample_bilinear, save_diagnostics_csv,
)
from burstfuse.metrics import crop_border, psnr
from burstfuse.noisemodel import NoiseParams, TuningParams
from burstfuse.rawcore import BayerFrame, Burst, bilinear_demosaic_baseline, decimate_luma
from burstfuse.robustness import RobustnessMask
from burstfuse.synthburst import OffsetList, generate_burst_offsets, synthesize_burst

ORACLE = MergeConfig(alignment='oracle')
SHIFTS = ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (-1.0, 2.0))


def _permuted(burst, offsets, order):
    frames = tuple(burst.frames[i] for i in order)
    return Burst(frames, noise=burst.noise), OffsetList(tuple(offsets.offsets[i] for i in order))


def test_output_shape():
    assert output_shape((32, 32), 1.0) == (32, 32)
    assert output_shape((32, 32), 1.5) == (48, 48)
    assert output_shape((30, 30), 1.5) == (44, 44)
    assert output_shape((32, 48), 2.0) == (64, 96)


def test_constant_burst_is_reproduced_exactly(constant_burst):
    result = merge_burst(constant_burst, MergeConfig())
    assert result.rgb.shape == (32, 32, 3)
    np.testing.assert_array_equal(result.rgb, 0.4)


def test_constant_burst_with_zoom(constant_burst):
    result = merge_burst(constant_burst, MergeConfig(zoom=2.0))
    assert result.rgb.shape == (64, 64, 3)
    np.testing.assert_array_equal(result.rgb, 0.4)


def test_zero_offsets_reproduce_the_sampled_channels(colour_truth):
    offsets = OffsetList(((0.0, 0.0),) * 15)
    burst = synthesize_burst(colour_truth, offsets)
    result = merge_burst(burst, ORACLE, offsets=offsets)
    np.testing.assert_array_equal(result.rgb[0::2, 0::2, 0], colour_truth[0::2, 0::2, 0])
    np.testing.assert_array_equal(result.rgb[1::2, 1::2, 2], colour_truth[1::2, 1::2, 2])
    assert len(result.diagnostics) == 15


def test_frame_order_does_not_change_the_result(colour_truth):
    offsets = OffsetList(SHIFTS)
    burst = synthesize_burst(colour_truth, offsets)
    reference = merge_burst(burst, ORACLE, offsets=offsets)
    permuted_burst, permuted_offsets = _permuted(burst, offsets, [0, 3, 1, 4, 2])
    permuted = merge_burst(permuted_burst, ORACLE, offsets=permuted_offsets)
    np.testing.assert_array_equal(reference.rgb, permuted.rgb)


def test_threads_do_not_change_the_result(colour_truth):
    offsets = OffsetList(SHIFTS)
    burst = synthesize_burst(colour_truth, offsets)
    single = merge_burst(burst, ORACLE, offsets=offsets)
    banded = merge_burst(burst, replace(ORACLE, threads=3), offsets=offsets)
    np.testing.assert_array_equal(single.rgb, banded.rgb)


def test_zero_mask_leaves_the_accumulator_unchanged(colour_truth):
    burst = synthesize_burst(colour_truth, OffsetList(((0.0, 0.0),)))
    frame = burst.frames[0]
    acc = Accumulator((48, 48), 1.0)
    kernels = build_kernel_field(decimate_luma(frame), TuningParams())
    mask = RobustnessMask(np.zeros((24, 24)), 0)
    accumulate_frame(acc, frame, AlignmentField.zeros((48, 48), 16, 0), kernels, mask, MergeConfig())
    assert not acc.num_fixed.any()
    assert not acc.den_fixed.any()
    assert acc.frames == 1


def test_empty_accumulator_falls_back_to_bilinear(colour_truth):
    burst = synthesize_burst(colour_truth, OffsetList(((0.0, 0.0),)))
    rgb = finalize_merge(Accumulator((48, 48), 1.0), burst.base)
    np.testing.assert_array_equal(rgb, bilinear_demosaic_baseline(burst.base))


def test_empty_accumulator_with_zoom_is_resampled(constant_burst):
    rgb = finalize_merge(Accumulator((64, 64), 2.0), constant_burst.base)
    assert rgb.shape == (64, 64, 3)
    np.testing.assert_allclose(rgb, 0.4)


def test_accumulator_memory_is_independent_of_frames(constant_burst):
    acc = Accumulator((32, 32), 1.0)
    assert acc.nbytes == 4 * 32 * 32 * 3 * 8
    result = merge_burst(constant_burst, MergeConfig())
    assert result.accumulator_bytes == acc.nbytes


def test_resample_identity(colour_truth):
    np.testing.assert_allclose(resample_bilinear(colour_truth, (48, 48), 1.0), colour_truth)


def test_frame_cap_truncates_the_burst(constant_burst):
    result = merge_burst(constant_burst, MergeConfig(frame_cap=2))
    assert result.diagnostics['frame'].tolist() == [0, 1]


def test_diagnostics(constant_burst, tmp_path):
    result = merge_burst(constant_burst, MergeConfig())
    assert list(result.diagnostics.columns) == ['frame', 'mean_mask', 'mean_|v|']
    assert result.diagnostics['mean_mask'].tolist() == [1.0] * 4
    assert len(result.fields) == 3
    path = str(tmp_path / "out" / "diagnostics.csv")
    save_diagnostics_csv(result, path)
    assert pd.read_csv(path)['frame'].tolist() == [0, 1, 2, 3]


def test_oracle_needs_offsets(constant_burst):
    with pytest.raises(UsageError):
        merge_burst(constant_burst, ORACLE)


def test_oracle_offsets_must_match_the_burst(constant_burst):
    with pytest.raises(InputError):
        merge_burst(constant_burst, ORACLE, offsets=OffsetList(((0.0, 0.0), (1.0, 0.0))))


def test_csv_fields_must_cover_every_frame(constant_burst):
    cfg = MergeConfig(alignment='csv')
    with pytest.raises(UsageError):
        merge_burst(constant_burst, cfg)
    fields = {1: AlignmentField.zeros((32, 32), 16, 1), 2: AlignmentField.zeros((32, 32), 16, 2)}
    with pytest.raises(InputError):
        merge_burst(constant_burst, cfg, fields=fields)


def test_csv_fields_are_used(constant_burst):
    fields = {i: AlignmentField.constant((32, 32), 16, i, 0.5, 0.0) for i in (1, 2, 3)}
    result = merge_burst(constant_burst, MergeConfig(alignment='csv'), fields=fields)
    assert result.diagnostics['mean_|v|'].tolist() == [0.0, 0.5, 0.5, 0.5]


def test_config_validation():
    with pytest.raises(UsageError):
        MergeConfig(zoom=0.5)
    with pytest.raises(UsageError):
        MergeConfig(alignment='optical_flow')


def test_finish_image_range():
    ramp = np.linspace(0.0, 1.0, 64)[None, :, None].repeat(8, axis=0).repeat(3, axis=2)
    finished = finish_image(ramp)
    assert finished.min() >= 0.0 and finished.max() <= 1.0
    np.testing.assert_allclose(finish_image(np.zeros((8, 8, 3))), 0.0)
    np.testing.assert_allclose(finish_image(np.ones((8, 8, 3))), 1.0)
    mid = 0.5 ** (1.0 / 2.2)
    np.testing.assert_allclose(finish_image(np.full((8, 8, 3), 0.5)), mid * mid * (3.0 - 2.0 * mid))


def test_finished_merge(constant_burst):
    result = merge_burst(constant_burst, MergeConfig(finish=True))
    mid = 0.4 ** (1.0 / 2.2)
    np.testing.assert_allclose(result.rgb, mid * mid * (3.0 - 2.0 * mid))


def test_debug_outputs(constant_burst, tmp_path):
    cfg = MergeConfig(debug_robustness=str(tmp_path / "rob"), debug_kernels=str(tmp_path / "ker"))
    merge_burst(constant_burst, cfg)
    assert os.path.exists(tmp_path / "rob" / "accumulated_robustness.png")
    assert os.path.exists(tmp_path / "ker" / "anisotropy_00.png")
    assert os.path.exists(tmp_path / "ker" / "denoise_03.png")


def test_mean_mask_is_reported(constant_burst):
    result = merge_burst(constant_burst, MergeConfig())
    np.testing.assert_array_equal(result.mean_mask, 1.0)
    assert result.mean_mask.shape == (16, 16)


def _smooth_truth(size=64):
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    return np.stack([
        0.5 + 0.1 * np.sin(2 * np.pi * xx / 64),
        0.45 + 0.1 * np.cos(2 * np.pi * yy / 48),
        0.4 + 0.05 * np.sin(2 * np.pi * (xx + yy) / 64),
    ], axis=-1)


def test_oracle_alignment_of_fractional_offsets_matches_the_frames():
    truth = textured_truth(64, seed=4)
    offsets = OffsetList(((0.0, 0.0), (0.4, 0.0), (1.6, -0.7), (-0.3, 1.4)))
    burst = synthesize_burst(truth, offsets)
    result = merge_burst(burst, ORACLE, offsets=offsets)
    np.testing.assert_array_equal(result.fields[0].vectors, 0.0)
    np.testing.assert_array_equal(result.fields[1].vectors[..., 0], 2.0)
    np.testing.assert_array_equal(result.fields[1].vectors[..., 1], -1.0)
    np.testing.assert_array_equal(result.fields[2].vectors[..., 1], 1.0)


def test_full_burst_beats_a_single_frame():
    truth = textured_truth(96, seed=3)
    offsets = generate_burst_offsets(15, 2.0, seed=0)
    burst = synthesize_burst(truth, offsets)
    full = merge_burst(burst, ORACLE, offsets=offsets)
    single = merge_burst(burst.prefix(1), ORACLE, offsets=OffsetList(offsets.offsets[:1]))
    full_db = psnr(crop_border(full.rgb, 8), crop_border(truth, 8))
    single_db = psnr(crop_border(single.rgb, 8), crop_border(truth, 8))
    assert full_db > single_db


def test_zoomed_merge_downsamples_to_the_unzoomed_one():
    truth = _smooth_truth()
    offsets = generate_burst_offsets(8, 2.0, seed=1)
    burst = synthesize_burst(truth, offsets)
    plain = merge_burst(burst, ORACLE, offsets=offsets).rgb
    zoomed = merge_burst(burst, replace(ORACLE, zoom=2.0), offsets=offsets).rgb
    assert zoomed.shape == (128, 128, 3)
    boxed = (zoomed[0::2, 0::2] + zoomed[1::2, 0::2] + zoomed[0::2, 1::2] + zoomed[1::2, 1::2]) / 4.0
    assert psnr(crop_border(boxed, 8), crop_border(plain, 8)) >= 45.0


def test_black_burst_merges_to_black(tmp_path):
    frames = tuple(BayerFrame(np.zeros((128, 128))) for _ in range(3))
    burst = Burst(frames, noise=NoiseParams(0.002, 1e-5))
    cfg = MergeConfig(cache_dir=str(tmp_path), noise_bins=16, noise_samples=10_000)
    result = merge_burst(burst, cfg)
    assert result.snr == 0.0
    assert result.tuning.tile_size == 64
    np.testing.assert_array_equal(result.rgb, 0.0)


def test_cached_noise_tables_give_the_same_merge(tmp_path, colour_truth):
    noise = NoiseParams(0.001, 1e-5)
    burst = synthesize_burst(colour_truth, generate_burst_offsets(4, 1.0, seed=5), noise=noise, seed=5)
    cfg = MergeConfig(cache_dir=str(tmp_path), noise_bins=16, noise_samples=10_000)
    cold = merge_burst(burst, cfg)
    assert len(os.listdir(tmp_path)) == 1
    warm = merge_burst(burst, cfg)
    np.testing.assert_array_equal(cold.rgb, warm.rgb)


def test_configured_tile_size_reaches_the_alignment():
    assert MergeConfig.from_config(Config(tile_size=32)).align.tile_size == 32
    assert MergeConfig.from_config(Config()).align.tile_size == 16

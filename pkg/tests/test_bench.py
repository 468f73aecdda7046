import math

import numpy as np
import pytest

from burstfuse.bench import (
    BenchSettings, analyze_burst_offsets, corruption_config_id, evaluate, measure_scaling,
    run_corruption_bench, run_frames_sweep, run_subpixel_analysis, run_synthetic_bench, textured_truth,
)
from burstfuse.align import AlignConfig
from burstfuse.merge import MergeConfig
from burstfuse.synthburst import CorruptionSpec, OffsetList, generate_linear_motion_offsets, offset_fields, synthesize_burst
from conftest import write_rgb_png

SETTINGS = BenchSettings(frames=4, sigma=1.0, seeds=(0,))


@pytest.fixture
def dataset(tmp_path):
    directory = tmp_path / "tiny"
    directory.mkdir()
    write_rgb_png(str(directory / "img1.png"), textured_truth(48, seed=1))
    write_rgb_png(str(directory / "img2.png"), textured_truth(48, seed=2))
    return str(directory)


def _by_config(rows, image_id='img1'):
    return {row['config_id']: row for row in rows if row['image_id'] == image_id}


def test_textured_truth_range():
    truth = textured_truth(32, seed=0)
    assert truth.shape == (32, 32, 3)
    assert truth.min() == pytest.approx(0.05)
    assert truth.max() == pytest.approx(0.95)
    np.testing.assert_array_equal(truth, textured_truth(32, seed=0))


def test_evaluate_crops_the_border():
    truth = np.zeros((32, 32, 3))
    rgb = truth.copy()
    rgb[:4] = 1.0
    scores = evaluate(truth, rgb, 8)
    assert scores['psnr_db'] == math.inf
    assert scores['ssim'] == 1.0
    assert scores['sharpness'] == 0.0


def test_synthetic_bench(dataset):
    rows = run_synthetic_bench(dataset, MergeConfig(), [0], SETTINGS)
    assert len(rows) == 8
    configs = _by_config(rows)
    assert sorted(configs) == ['auto_n04', 'bilinear', 'oracle_n04', 'single_frame']
    assert all(row['dataset'] == 'tiny' for row in rows)
    for row in rows:
        assert 0.0 < row['ssim'] <= 1.0
        assert row['psnr_db'] > 10.0
        assert row['wall_ms'] >= 0.0


def test_synthetic_bench_seed_suffixes(dataset):
    settings = BenchSettings(frames=3, sigma=1.0, oracle_only=True)
    rows = run_synthetic_bench(dataset, MergeConfig(), [0, 1], settings)
    assert sorted(_by_config(rows)) == [
        'bilinear_s0', 'bilinear_s1', 'oracle_n03_s0', 'oracle_n03_s1', 'single_frame_s0', 'single_frame_s1',
    ]


def test_corruption_ids():
    assert corruption_config_id(CorruptionSpec('tile_replace', p=0.1)) == 'tile_replace_p0.10'
    assert corruption_config_id(CorruptionSpec('vector_noise', sigma=0.25)) == 'vector_noise_sigma0.25'


def test_uncorrupted_runs_match_the_clean_merge(dataset):
    specs = [CorruptionSpec('tile_replace', p=0.0), CorruptionSpec('tile_replace', p=0.5)]
    configs = _by_config(run_corruption_bench(dataset, specs, MergeConfig(), SETTINGS))
    assert sorted(configs) == ['clean', 'single_frame', 'tile_replace_p0.00', 'tile_replace_p0.50']
    assert configs['tile_replace_p0.00']['psnr_db'] == configs['clean']['psnr_db']
    assert configs['tile_replace_p0.00']['ssim'] == configs['clean']['ssim']


def test_zero_jitter_matches_the_clean_merge(dataset):
    specs = [CorruptionSpec('vector_noise', sigma=0.0)]
    configs = _by_config(run_corruption_bench(dataset, specs, MergeConfig(), SETTINGS))
    assert configs['vector_noise_sigma0.00']['psnr_db'] == configs['clean']['psnr_db']


def test_frames_sweep(dataset):
    configs = _by_config(run_frames_sweep(dataset, [1, 4, 9], settings=SETTINGS))
    assert sorted(configs) == ['n01_vs_ref', 'n01_vs_truth', 'n04_vs_ref', 'n04_vs_truth']
    assert configs['n04_vs_ref']['psnr_db'] == math.inf
    assert configs['n04_vs_ref']['ssim'] == 1.0
    assert configs['n01_vs_ref']['psnr_db'] < math.inf


def test_measure_scaling():
    scaling = measure_scaling((0.001, 0.002), frames=3, seed=0)
    assert [row['mpix'] for row in scaling['rows']] == [32 * 32 / 1e6, 44 * 44 / 1e6]
    assert all(row['wall_ms_per_frame'] > 0 for row in scaling['rows'])
    assert 0.0 <= scaling['r_squared'] <= 1.0
    # Accumulator size depends on the output size only
    assert scaling['accumulator_bytes_n2'] == scaling['accumulator_bytes_n3']


def test_subpixel_analysis_of_linear_motion():
    fields = offset_fields(generate_linear_motion_offsets(15, (0.618034, 0.414214)), (32, 32), 16)
    analysis = run_subpixel_analysis(fields, bins=10)
    assert (analysis['coverage_x'], analysis['coverage_y']) == (10, 10)
    assert analysis['histogram'].shape == (10, 10)
    assert analysis['histogram'].sum() == pytest.approx(1.0)
    assert 0.0 <= analysis['pvalue'] <= 1.0


def test_offsets_of_a_registered_burst(grey_truth):
    burst = synthesize_burst(grey_truth, OffsetList(((0.0, 0.0), (2.0, 1.0), (-3.0, 2.0))))
    analysis = analyze_burst_offsets(burst, AlignConfig(tile_size=16), bins=4)
    assert analysis['histogram'].sum() == pytest.approx(1.0)
    assert 1 <= analysis['coverage_x'] <= 4

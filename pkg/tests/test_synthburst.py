import numpy as np
import pytest

from burstfuse.align import AlignmentField
from burstfuse.errors import InvariantError, OffsetTooLarge, UsageError
from burstfuse.noisemodel import NoiseParams
from burstfuse.rawcore import BayerFrame, load_burst
from burstfuse.synthburst import (
    CorruptionSpec, OffsetList, add_sensor_noise, applied_shift, corrupt_alignment_tiles, corrupt_fields,
    generate_burst_offsets, generate_linear_motion_offsets, jitter_alignment_vectors, load_offsets_csv,
    mosaic, offset_fields, oracle_fields, save_offsets_csv, save_synthetic_burst, shift_nearest, synthesize_burst,
)


def _indexed_field(tiles_y=10, tiles_x=10, tile=16):
    vectors = np.zeros((tiles_y, tiles_x, 2))
    vectors[..., 0] = np.arange(tiles_y * tiles_x).reshape(tiles_y, tiles_x)
    return AlignmentField(vectors, tile, 1, (tiles_y * tile, tiles_x * tile))


def test_gaussian_offsets():
    offsets = generate_burst_offsets(15, 2.0, seed=4)
    assert len(offsets) == 15
    assert offsets[0] == (0.0, 0.0)
    assert np.std(np.array(offsets.offsets[1:])) > 0.5


def test_zero_sigma_gives_zero_offsets():
    assert all(o == (0.0, 0.0) for o in generate_burst_offsets(5, 0.0, seed=1).offsets)


def test_offsets_are_deterministic():
    assert generate_burst_offsets(8, 2.0, seed=9) == generate_burst_offsets(8, 2.0, seed=9)
    assert generate_burst_offsets(8, 2.0, seed=9) != generate_burst_offsets(8, 2.0, seed=10)


def test_base_offset_must_be_zero():
    with pytest.raises(InvariantError):
        OffsetList(((1.0, 0.0), (0.0, 0.0)))


def test_linear_motion_offsets():
    offsets = generate_linear_motion_offsets(4, (0.5, 0.25))
    assert offsets.offsets == ((0.0, 0.0), (0.5, 0.25), (1.0, 0.5), (1.5, 0.75))


def test_zero_offset_frame_is_the_mosaic_of_the_truth(colour_truth):
    burst = synthesize_burst(colour_truth, OffsetList(((0.0, 0.0), (0.0, 0.0))))
    np.testing.assert_array_equal(burst.frames[1].data, mosaic(colour_truth))
    assert burst.frames[0].data[0, 0] == colour_truth[0, 0, 0]
    assert burst.frames[0].data[1, 1] == colour_truth[1, 1, 2]


def test_integer_offset_shifts_by_whole_columns(colour_truth):
    burst = synthesize_burst(colour_truth, OffsetList(((0.0, 0.0), (1.0, 0.0))))
    shifted = colour_truth.copy()
    shifted[:, 1:] = colour_truth[:, :-1]
    np.testing.assert_array_equal(burst.frames[1].data, mosaic(shifted))


def test_fractional_offsets_round_half_up():
    truth = np.arange(4, dtype=float)[None, :, None].repeat(2, axis=0).repeat(3, axis=2)
    # x - 0.5 rounds up to x, so a half-pixel shift leaves the image in place
    np.testing.assert_array_equal(shift_nearest(truth, 0.5, 0.0), truth)
    np.testing.assert_array_equal(shift_nearest(truth, 0.6, 0.0)[0, :, 0], [0, 0, 1, 2])


def test_oversized_offset_is_rejected(colour_truth):
    with pytest.raises(OffsetTooLarge):
        synthesize_burst(colour_truth, OffsetList(((0.0, 0.0), (13.0, 0.0))))


def test_noise_is_added_only_when_requested(colour_truth):
    offsets = OffsetList(((0.0, 0.0), (0.0, 0.0)))
    clean = synthesize_burst(colour_truth, offsets)
    noisy = synthesize_burst(colour_truth, offsets, noise=NoiseParams(0.001, 1e-4), seed=2)
    assert not np.array_equal(clean.frames[0].data, noisy.frames[0].data)
    assert noisy.noise == NoiseParams(0.001, 1e-4)


def test_sensor_noise_stays_in_range():
    frame = BayerFrame(np.full((16, 16), 0.99))
    noisy = add_sensor_noise(frame, NoiseParams(0.1, 0.01), np.random.default_rng(0))
    assert noisy.data.min() >= 0.0 and noisy.data.max() <= 1.0


def test_applied_shift_matches_the_resampled_frame():
    truth = np.random.default_rng(0).random((24, 24, 3))
    for dx, dy in [(0.3, -0.7), (1.5, -0.5), (-2.49, 2.51), (0.5, 0.0)]:
        ax, ay = applied_shift(dx, dy)
        assert ax == round(ax) and ay == round(ay)
        shifted = shift_nearest(truth, dx, dy)
        np.testing.assert_array_equal(shift_nearest(truth, ax, ay)[4:-4, 4:-4], shifted[4:-4, 4:-4])
    assert applied_shift(0.0, 0.0) == (0.0, 0.0)


def test_oracle_fields_hold_the_applied_shift():
    fields = oracle_fields(OffsetList(((0.0, 0.0), (1.5, -0.5))), (64, 32), 16)
    assert len(fields) == 1
    assert fields[0].frame_index == 1
    assert fields[0].grid == (4, 2)
    np.testing.assert_array_equal(fields[0].vectors[..., 0], 1.0)
    np.testing.assert_array_equal(fields[0].vectors[..., 1], -1.0)


def test_offset_fields_keep_fractional_offsets():
    fields = offset_fields(OffsetList(((0.0, 0.0), (1.5, -0.5))), (64, 32), 16)
    np.testing.assert_array_equal(fields[0].vectors[..., 0], 1.5)
    np.testing.assert_array_equal(fields[0].vectors[..., 1], -0.5)


def test_tile_replacement_boundaries():
    field = _indexed_field()
    assert corrupt_alignment_tiles(field, CorruptionSpec('tile_replace', p=0.0)) is field
    replaced = corrupt_alignment_tiles(field, CorruptionSpec('tile_replace', p=1.0, rng_seed=3))
    assert np.all(replaced.vectors[..., 0] != field.vectors[..., 0])


def test_tile_replacement_count_and_untouched_tiles():
    field = _indexed_field()
    corrupted = corrupt_alignment_tiles(field, CorruptionSpec('tile_replace', p=0.5, rng_seed=11))
    changed = corrupted.vectors[..., 0] != field.vectors[..., 0]
    assert changed.sum() == 50
    np.testing.assert_array_equal(corrupted.vectors[~changed], field.vectors[~changed])
    # Replacement vectors come from the same field
    assert set(corrupted.vectors[changed][:, 0]) <= set(field.vectors[..., 0].ravel())


def test_tile_replacement_is_deterministic():
    spec = CorruptionSpec('tile_replace', p=0.3, rng_seed=5)
    first = corrupt_alignment_tiles(_indexed_field(), spec)
    second = corrupt_alignment_tiles(_indexed_field(), spec)
    np.testing.assert_array_equal(first.vectors, second.vectors)


def test_jitter_statistics():
    field = AlignmentField.constant((1600, 1600), 16, 1, 2.0, -1.0)
    assert jitter_alignment_vectors(field, CorruptionSpec('vector_noise', sigma=0.0)) is field
    jittered = jitter_alignment_vectors(field, CorruptionSpec('vector_noise', sigma=0.25, rng_seed=1))
    noise = jittered.vectors - field.vectors
    assert noise.std() == pytest.approx(0.25, rel=0.05)
    assert abs(noise.mean()) < 0.01


def test_corruption_spec_validation():
    with pytest.raises(UsageError):
        CorruptionSpec('shuffle')
    with pytest.raises(UsageError):
        CorruptionSpec('tile_replace', p=1.5)
    with pytest.raises(UsageError):
        jitter_alignment_vectors(_indexed_field(), CorruptionSpec('tile_replace', p=0.1))


def test_corrupt_fields_uses_distinct_seeds_per_frame():
    fields = [AlignmentField.constant((160, 160), 16, index, 0.0, 0.0) for index in (1, 2)]
    jittered = corrupt_fields(fields, CorruptionSpec('vector_noise', sigma=0.1, rng_seed=2))
    assert not np.array_equal(jittered[0].vectors, jittered[1].vectors)
    assert [f.frame_index for f in jittered] == [1, 2]


def test_offsets_csv_round_trip(tmp_path):
    offsets = generate_burst_offsets(5, 2.0, seed=3)
    path = str(tmp_path / "offsets.csv")
    save_offsets_csv(offsets, path)
    assert load_offsets_csv(path).offsets == offsets.offsets


def test_synthetic_burst_round_trips_through_files(tmp_path, colour_truth):
    offsets = generate_burst_offsets(3, 1.0, seed=2)
    burst = synthesize_burst(colour_truth, offsets)
    save_synthetic_burst(burst, offsets, str(tmp_path))
    loaded = load_burst(str(tmp_path))
    assert len(loaded) == 3
    np.testing.assert_allclose(loaded.frames[2].data, burst.frames[2].data, atol=1e-5)
    assert load_offsets_csv(str(tmp_path / "offsets.csv")).offsets == offsets.offsets

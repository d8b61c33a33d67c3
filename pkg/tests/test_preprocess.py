import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dcacsi import preprocess as pp

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def complex_arrays(shape):
    return st.tuples(hnp.arrays(np.float64, shape, elements=finite),
                     hnp.arrays(np.float64, shape, elements=finite)).map(
        lambda ri: ri[0] + 1j * ri[1])


def test_pilot_grid_defaults():
    cfg = pp.PilotConfig()
    assert cfg.m_f == 86
    assert cfg.indices[1] == 12 and cfg.indices[-1] == 1020


def test_pilot_offset_validation():
    assert pp.PilotConfig(n_f=24, dr_f=12, offset=3).indices.tolist() == [3, 15]
    with pytest.raises(ValueError):
        pp.PilotConfig(offset=12)


def test_truncation_config_validation():
    pp.TruncationConfig(32, 4).validate(pp.PilotConfig())
    with pytest.raises(ValueError):
        pp.TruncationConfig(24, 4).validate(pp.PilotConfig())
    with pytest.raises(ValueError):
        pp.TruncationConfig(96, 4).validate(pp.PilotConfig())


def test_dft_matrix_unitary_and_fft_equivalence():
    f = pp.dft_matrix(86)
    np.testing.assert_allclose(f.conj().T @ f, np.eye(86), atol=1e-12)
    x = np.random.default_rng(0).standard_normal((3, 86)) + 0j
    np.testing.assert_allclose(pp.to_delay_truncated(x, 86), x @ f, atol=1e-12)


def test_truncate_then_restore_is_exact_for_short_channels():
    rng = np.random.default_rng(1)
    taps = np.zeros((2, 4, 86), complex)
    taps[..., :32] = rng.standard_normal((2, 4, 32)) + 1j * rng.standard_normal((2, 4, 32))
    h_pilot = pp.delay_to_pilot_freq(taps, 86)
    h_t = pp.to_delay_truncated(h_pilot, 32)
    np.testing.assert_allclose(h_t, taps[..., :32], atol=1e-12)
    back = pp.delay_to_pilot_freq(h_t, pp.PilotConfig())
    rel = np.linalg.norm(back - h_pilot) / np.linalg.norm(h_pilot)
    assert rel <= 1e-5


@settings(max_examples=30, deadline=None)
@given(complex_arrays((8, 86)), st.sampled_from([1, 2, 4, 8]))
def test_segment_concatenate_bit_exact(h, k):
    parts = pp.segment(h, k)
    assert len(parts) == 8 // k
    assert all(p.shape == (k, 86) for p in parts)
    np.testing.assert_array_equal(pp.concatenate(parts), h)


@settings(max_examples=30, deadline=None)
@given(complex_arrays((2, 4, 6)))
def test_split_combine_bit_exact(h):
    re, im = pp.split_complex(h)
    np.testing.assert_array_equal(pp.combine_complex(re, im), h)


@settings(max_examples=30, deadline=None)
@given(complex_arrays((3, 8, 16)), st.sampled_from([1, 2, 4, 8]))
def test_segments_roundtrip_bit_exact(h, k):
    segs = pp.to_segments(h, k, np.float64)
    assert segs.shape == (3 * 2 * 8 // k, k, 16)
    np.testing.assert_array_equal(pp.from_segments(segs, 8), h)


def test_segment_ordering_sample_part_block():
    h = (np.arange(2 * 4 * 2) + 100j * np.arange(2 * 4 * 2)).reshape(2, 4, 2)
    segs = pp.to_segments(h, 2, np.float64)
    np.testing.assert_array_equal(segs[0], h[0, :2].real)
    np.testing.assert_array_equal(segs[1], h[0, 2:].real)
    np.testing.assert_array_equal(segs[2], h[0, :2].imag)
    np.testing.assert_array_equal(segs[4], h[1, :2].real)


def test_segment_rejects_non_divisor():
    with pytest.raises(ValueError):
        pp.segment(np.zeros((6, 4)), 4)
    with pytest.raises(ValueError):
        pp.SegmentationConfig(3, 8)
    with pytest.raises(ValueError):
        pp.concatenate([np.zeros((2, 4)), np.zeros((2, 5))])


def test_norm_scale_maps_into_unit_box():
    h = np.array([[1 - 4j, 2 + 0.5j]])
    scale = pp.fit_norm(h)
    assert scale.max_abs == 4.0
    n = pp.apply_norm(h, scale)
    assert max(np.abs(n.real).max(), np.abs(n.imag).max()) == 1.0
    np.testing.assert_array_equal(pp.undo_norm(n, scale), h)
    with pytest.raises(ValueError):
        pp.fit_norm(np.zeros((2, 2), complex))


def test_energy_fraction():
    taps = np.zeros((1, 2, 86), complex)
    taps[0, :, 3] = 3.0
    taps[0, 0, 40] = 1.0
    frac = pp.delay_energy_fraction(pp.delay_to_pilot_freq(taps, 86), 32)
    assert frac[0] == pytest.approx(18 / 19)

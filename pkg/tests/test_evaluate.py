import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcacsi import channel_gen as cg
from dcacsi import evaluate as ev
from dcacsi import preprocess as pp
from dcacsi.scenet import SCEnet, SCEnetConfig


def rand_complex(shape, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_nmse_reference_values():
    h = rand_complex((4, 8, 16))
    assert ev.nmse(h, h) == 0.0
    assert ev.to_db(ev.nmse(h, h)) == -100.0
    assert ev.nmse(h, np.zeros_like(h)) == pytest.approx(1.0)
    assert ev.to_db(ev.nmse(h, np.zeros_like(h))) == pytest.approx(0.0, abs=1e-12)
    # half of every sample's energy recovered exactly, the rest missed
    g = np.ones((3, 2, 4), complex)
    est = g.copy()
    est[:, 1] = 0
    assert ev.to_db(ev.nmse(g, est)) == pytest.approx(-3.0103, abs=1e-4)


def test_nmse_is_mean_of_per_sample_ratios():
    truth = np.array([[[1.0 + 0j]], [[2.0 + 0j]]])
    est = np.array([[[0.0 + 0j]], [[2.0 + 1j]]])
    np.testing.assert_allclose(ev.nmse_per_sample(truth, est), [1.0, 0.25])
    assert ev.nmse(truth, est) == pytest.approx(0.625)


def test_nmse_rejects_zero_truth_and_shape_mismatch():
    with pytest.raises(ValueError):
        ev.nmse(np.zeros((1, 2, 2)), np.ones((1, 2, 2)))
    with pytest.raises(ValueError):
        ev.nmse(np.ones((1, 2, 2)), np.ones((1, 2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 100), st.floats(-np.pi, np.pi), st.integers(0, 1000))
def test_nmse_invariant_to_common_complex_scaling(mag, phase, seed):
    h = rand_complex((3, 4, 8), seed)
    est = h + 0.3 * rand_complex((3, 4, 8), seed + 1)
    c = mag * np.exp(1j * phase)
    assert ev.nmse(c * h, c * est) == pytest.approx(ev.nmse(h, est), rel=1e-9)


def test_nmse_result_db_and_rates():
    res = ev.NmseResult([0.1, 1.0, 0.0], 5)
    assert res.db == pytest.approx([-10.0, 0.0, -100.0])
    assert res.compression_ratios == [2, 4, 8]
    with pytest.raises(ValueError):
        ev.NmseResult([-0.1], 1)


def test_beam_basis_is_unitary():
    b = ev.beam_basis(cg.ArrayGeometry())
    np.testing.assert_allclose(b.conj().T @ b, np.eye(32), atol=1e-12)


def test_single_beam_samples_are_uncorrelated_across_beams():
    geom = cg.ArrayGeometry()
    basis = ev.beam_basis(geom)
    rng = np.random.default_rng(0)
    # every sample excites exactly one beam, so cross terms vanish by orthogonality
    picks = np.arange(64) % 32
    gains = rand_complex((64, 1, 8), 1)
    h = basis[:, picks].T[:, :, None] * gains
    corr = ev.beam_cross_correlation(h[rng.permutation(64)], geom)
    np.testing.assert_array_equal(np.diag(corr), 1.0)
    assert (corr - np.eye(32)).max() < 1e-12


def test_beam_correlation_symmetric_unit_diagonal():
    corr = ev.beam_cross_correlation(rand_complex((20, 8, 6)))
    np.testing.assert_allclose(corr, corr.T)
    np.testing.assert_array_equal(np.diag(corr), 1.0)
    assert corr.max() <= 1.0 + 1e-12


def test_beam_correlation_errors():
    with pytest.raises(ValueError):
        ev.beam_cross_correlation(np.zeros((0, 8, 4)))
    with pytest.raises(ValueError):
        ev.beam_cross_correlation(rand_complex((2, 8, 4)), cg.ArrayGeometry())
    with pytest.raises(ValueError):
        ev.beam_cross_correlation(np.zeros((2, 4, 4), complex))


def test_delay_correlation_lag_zero_and_white_profiles():
    curves = ev.delay_tap_correlation(rand_complex((400, 4, 32), 3), max_lag=5)
    assert curves.shape == (4, 6)
    np.testing.assert_allclose(curves[:, 0], 1.0)
    # mean-removed i.i.d. profiles: correlation at lag l is about -1/T
    assert np.abs(curves[:, 1:]).max() < 0.06


def test_delay_correlation_of_identical_antennas_is_identical():
    one = rand_complex((10, 1, 16), 4)
    curves = ev.delay_tap_correlation(np.repeat(one, 3, axis=1))
    np.testing.assert_allclose(curves[0], curves[2])
    np.testing.assert_allclose(ev.curve_similarity(curves), 1.0)


def test_curve_similarity_orthogonal():
    sim = ev.curve_similarity(np.array([[1.0, 0.0], [0.0, 2.0]]))
    np.testing.assert_allclose(sim, np.eye(2))
    with pytest.raises(ValueError):
        ev.curve_similarity(np.zeros((2, 3)))


def test_correlation_report_summary():
    rep = ev.correlation_report(rand_complex((50, 8, 16), 1))
    assert 0 <= rep.mean_off_diagonal < 1
    assert rep.similarity.shape == (8, 8)


def generated_pilots(count=6, n_a=8):
    ds = cg.generate_dataset(cg.ArrayGeometry(), cg.scenario_preset("indoor"), count, seed=3)
    return pp.downsample_pilots(ds.samples[:, :n_a], pp.PilotConfig()).astype(np.complex128)


def test_pilot_domain_nmse_equals_delay_domain_nmse():
    h_pilot = generated_pilots()
    model = SCEnet(SCEnetConfig(k=2, n_t=32, refine_blocks=1), seed=0)
    h_t = pp.to_delay_truncated(h_pilot, 32)
    scale = pp.fit_norm(h_t)
    res = ev.evaluate_model(model, h_pilot, scale)
    recs = ev.reconstruct(model, pp.apply_norm(h_t, scale))
    for lin, rec in zip(res.linear, recs):
        delay_nmse = ev.nmse(h_t, pp.undo_norm(rec.astype(np.complex128), scale))
        assert lin == pytest.approx(delay_nmse, rel=1e-6)
    assert (res.k, res.n_a, res.count) == (2, 8, 6)


def test_scalability_with_single_segment_equals_plain_eval():
    h_pilot = generated_pilots(n_a=32)
    model = SCEnet(SCEnetConfig(k=8, n_t=32, refine_blocks=1), seed=0)
    scale = pp.fit_norm(pp.to_delay_truncated(h_pilot, 32))
    sweep = ev.scalability_eval(model, h_pilot, scale, (8, 16, 32))
    plain = ev.evaluate_model(model, h_pilot[:, :8], scale)
    assert sweep[8].linear == plain.linear
    assert [sweep[n].n_a for n in (8, 16, 32)] == [8, 16, 32]
    with pytest.raises(ValueError):
        ev.scalability_eval(model, h_pilot, scale, (12,))
    with pytest.raises(ValueError):
        ev.scalability_eval(model, h_pilot, scale, (64,))

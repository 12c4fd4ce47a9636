import numpy as np
import pytest

from dualmaxwell import spectral as spc
from dualmaxwell.fields import GridSpec, VectorField


def test_projection_identities(rng):
    g = GridSpec(8)
    E = rng.standard_normal(g.shape + (3,))
    X, Y = spc.split_real(E, g)
    assert np.allclose(X + Y, E, atol=1e-13)
    assert abs(np.sum(X * Y)) < 1e-12 * np.sum(E * E)
    assert np.allclose(spc.split_real(X, g)[1], 0, atol=1e-13)
    Xh = spc.fft(VectorField(g, X))
    assert spc.divergence_defect(Xh) < 1e-13
    assert spc.curlfree_is_gradient_check(spc.fft(VectorField(g, Y)))


def test_gradient_of_potential_is_curl_free(rng):
    g = GridSpec(8)
    u = rng.standard_normal(g.shape)
    Y = spc.grad_op(spc.fft_scalar(g, u))
    assert np.abs(spc.curl_op(Y).coeffs).max() < 1e-12 * np.abs(Y.coeffs).max()


def test_constant_field_is_not_a_gradient():
    g = GridSpec(4)
    E = VectorField(g, np.broadcast_to([1.0, 2.0, 0.0], g.shape + (3,)))
    assert not spc.curlfree_is_gradient_check(spc.fft(E))


def test_plane_wave_curlcurl():
    g = GridSpec(8)
    E = VectorField.from_function(g, lambda x, y, z: (np.sin(2 * z), 0 * x, 0 * x))
    cc = spc.ifft(spc.curlcurl_apply(spc.fft(E)))
    assert np.allclose(cc.data, 4 * E.data, atol=1e-12)


def test_resolvent_plane_wave():
    g = GridSpec(8)
    E = VectorField.from_function(g, lambda x, y, z: (np.cos(3 * y), 0 * x, 0 * x))
    R = spc.ifft(spc.resolvent_R(spc.fft(E), 2.5))
    assert np.allclose(R.data, E.data / (9 - 2.5), atol=1e-13)


def test_resolvent_on_resonance_raises():
    g = GridSpec(8)
    with pytest.raises(spc.ResonanceError):
        spc.resolvent_R(spc.fft(VectorField.zeros(g)), 2.0)


def test_resolvent_rejects_gradient(rng):
    g = GridSpec(8)
    _, Y = spc.split_real(rng.standard_normal(g.shape + (3,)), g)
    with pytest.raises(spc.NotDivergenceFreeError):
        spc.resolvent_R(spc.fft(VectorField(g, Y)), 2.5)


def test_symbol_set_integer_on_2pi_cell():
    s = spc.symbol_set(GridSpec(4))
    assert np.allclose(s, np.round(s))
    assert spc.resonance_gap(GridSpec(4), 2.5) == pytest.approx(0.5)


def test_spectral_save_load(tmp_path, rng):
    g = GridSpec(4)
    Eh = spc.fft(VectorField(g, rng.standard_normal(g.shape + (3,))))
    spc.save_spectral(tmp_path / "s", Eh)
    back = spc.load_spectral(tmp_path / "s")
    assert np.array_equal(back.coeffs, Eh.coeffs)

import numpy as np
import pytest

from dualmaxwell.fields import (FieldFormatError, GridMismatchError, GridSpec, Medium, VectorField, inner_eps,
                                load_field, lp_norm, read_sidecar, save_field)


@pytest.mark.parametrize("n", [3, 6, 2, 0])
def test_grid_rejects_non_power_of_two(n):
    with pytest.raises(ValueError):
        GridSpec(n)


def test_grid_geometry():
    g = GridSpec(8, 2.0, "cavity")
    assert g.spacing == 0.25
    assert g.dV == pytest.approx(0.25 ** 3)
    assert g.axis()[0] == pytest.approx(0.125)
    assert GridSpec(8, 2.0).axis()[0] == 0.0


def test_constant_field_norms():
    g = GridSpec(8)
    E = VectorField(g, np.broadcast_to([1.0, 0.0, 0.0], g.shape + (3,)))
    assert lp_norm(E, 2) == pytest.approx(np.sqrt(g.volume))
    assert lp_norm(E, np.inf) == 1.0
    assert inner_eps(E, E, Medium(eps0=2.0)) == pytest.approx(2 * g.volume)


def test_inner_eps_symmetric_with_tensor(rng):
    n = 4
    A = rng.standard_normal((n, n, n, 3, 3))
    eps = np.einsum("...ij,...kj->...ik", A, A) + np.eye(3)
    m = Medium(eps_field=eps)
    g = GridSpec(n, 1.0, "cavity")
    E, F = (VectorField(g, rng.standard_normal(g.shape + (3,))) for _ in range(2))
    assert inner_eps(E, F, m) == inner_eps(F, E, m)
    assert inner_eps(E, E, m) > 0


def test_medium_rejects_indefinite():
    eps = np.broadcast_to(np.diag([1.0, -1.0, 1.0]), (4, 4, 4, 3, 3)).copy()
    with pytest.raises(ValueError):
        Medium(eps_field=eps)


def test_grid_mismatch():
    a = VectorField.zeros(GridSpec(4))
    b = VectorField.zeros(GridSpec(8))
    with pytest.raises(GridMismatchError):
        a + b


def test_save_load_roundtrip(tmp_path, rng):
    g = GridSpec(4, 1.5, "cavity")
    E = VectorField(g, rng.standard_normal(g.shape + (3,)))
    p = save_field(tmp_path / "f", E)
    F = load_field(p)
    assert F.grid == g
    assert np.array_equal(F.data, E.data)
    _, _, meta = read_sidecar(p)
    assert meta["format_version"] == 1


def test_corrupted_field_file(tmp_path):
    g = GridSpec(4)
    p = save_field(tmp_path / "f", VectorField.zeros(g))
    p.write_bytes(b"\x00" * 16)
    with pytest.raises(FieldFormatError):
        load_field(p)

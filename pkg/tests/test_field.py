import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ddtd.field import (
    DensityField, Mesh, export_vtk, load_field, node_index, save_field,
    uniform_field, validate,
)


def test_node_index_examples():
    assert node_index(Mesh((2, 2)), (0, 0)) == 0
    assert node_index(Mesh((2, 2)), (2, 2)) == 8
    assert node_index(Mesh((1, 1, 1)), (1, 1, 1)) == 7


def test_node_index_out_of_range():
    with pytest.raises(IndexError):
        node_index(Mesh((2, 2)), (3, 0))
    with pytest.raises(IndexError):
        node_index(Mesh((2, 2)), (0, -1))


@pytest.mark.parametrize("dims", [(3, 2), (4, 1), (2, 3, 2)])
def test_node_index_is_bijection(dims):
    mesh = Mesh(dims)
    lattice = itertools.product(*[range(d + 1) for d in dims])
    indices = sorted(node_index(mesh, c) for c in lattice)
    assert indices == list(range(mesh.n_nodes))


def test_node_index_matches_coordinates():
    mesh = Mesh((3, 2, 2), 0.5)
    xyz = mesh.node_coordinates()
    assert np.allclose(xyz[node_index(mesh, (3, 1, 2))], [1.5, 0.5, 1.0])


def test_mesh_invariants():
    with pytest.raises(ValueError):
        Mesh((0, 2))
    with pytest.raises(ValueError):
        Mesh((2, 2), 0.0)
    m = Mesh((4, 3, 2))
    assert m.n_nodes == 5 * 4 * 3 and m.n_elements == 24


def test_element_nodes_are_corners():
    mesh = Mesh((3, 2))
    conn = mesh.element_nodes()
    xyz = mesh.node_coordinates()
    centers = mesh.element_centers()
    for e in range(mesh.n_elements):
        assert np.allclose(xyz[conn[e]].mean(axis=0), centers[e])
    mesh3 = Mesh((2, 2, 2))
    conn3 = mesh3.element_nodes()
    xyz3 = mesh3.node_coordinates()
    assert np.allclose(xyz3[conn3].mean(axis=1), mesh3.element_centers())


@pytest.mark.parametrize("dims,value,n", [((2, 2), 1.0, 9), ((2, 2), 0.0, 9), ((1, 1, 1), 0.5, 8)])
def test_uniform_field(dims, value, n):
    f = uniform_field(Mesh(dims), value)
    assert f.values.shape == (n,) and np.all(f.values == value)


def test_uniform_field_rejects_out_of_range():
    with pytest.raises(ValueError):
        uniform_field(Mesh((2, 2)), 1.5)


def test_validate():
    mesh = Mesh((2, 2))
    assert validate(uniform_field(mesh, 0.5)) == []
    vals = np.full(9, 0.5)
    vals[4] = 1.2
    problems = validate(DensityField(mesh, vals))
    assert len(problems) == 1 and "node 4" in problems[0]
    problems = validate(DensityField(mesh, np.full(7, 0.5)))
    assert len(problems) == 1 and "length" in problems[0]


def test_field_is_immutable():
    f = uniform_field(Mesh((2, 2)), 0.5)
    with pytest.raises(ValueError):
        f.values[0] = 1.0


@given(st.lists(st.floats(0, 1), min_size=12, max_size=12), st.booleans())
def test_serialization_roundtrip_bit_exact(tmp_path_factory, values, binary):
    mesh = Mesh((3, 2), 0.013)
    field = DensityField(mesh, values)
    path = tmp_path_factory.mktemp("f") / "field.ddtd"
    save_field(field, path, binary=binary)
    back = load_field(path)
    assert back.mesh == mesh
    assert back.values.tobytes() == field.values.tobytes()


def test_roundtrip_3d_random(tmp_path, rng):
    mesh = Mesh((3, 2, 4), 0.01)
    field = DensityField(mesh, rng.random(mesh.n_nodes))
    for binary in (False, True):
        save_field(field, tmp_path / "f", binary=binary)
        assert np.array_equal(load_field(tmp_path / "f").values, field.values)


def test_load_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_text("hello\n")
    with pytest.raises(ValueError):
        load_field(tmp_path / "bad")


def test_vtk_export(tmp_path):
    mesh = Mesh((2, 1))
    export_vtk(uniform_field(mesh, 1.0), tmp_path / "f.vtk")
    text = (tmp_path / "f.vtk").read_text().splitlines()
    assert "DATASET STRUCTURED_POINTS" in text
    assert "DIMENSIONS 3 2 1" in text
    assert "POINT_DATA 6" in text
    assert text[-6:] == ["1.0"] * 6

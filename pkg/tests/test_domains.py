"""Domain loading, FEM assembly, graph Laplacians, eigenbases."""

import numpy as np
import pytest
import scipy.sparse as sp

from leno.domains import (
    GraphDomain,
    Mesh2D,
    assemble_fem,
    blob_mesh,
    build_graph_laplacian,
    compute_eigenbasis,
    eigenbasis_for,
    load_graph,
    load_mesh,
    random_geometric_graph,
    save_graph,
    save_mesh,
    unit_square_mesh,
)
from leno.errors import InputError

PI2 = np.pi**2


def write(path, text):
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------------------
# mesh file format
# ---------------------------------------------------------------------------

TWO_TRI_SQUARE = """\
# unit square, two triangles
4 2
0 0
1 0
1 1
0 1
0 1 2
0 2 3
"""


def test_load_two_triangle_square(tmp_path):
    mesh = load_mesh(write(tmp_path / "sq.mesh", TWO_TRI_SQUARE))
    assert mesh.n_vertices == 4
    assert mesh.n_triangles == 2
    assert np.allclose(mesh.vertices[2], [1.0, 1.0])


def test_load_mesh_dangling_index(tmp_path):
    bad = TWO_TRI_SQUARE.replace("0 2 3", "0 2 7")
    with pytest.raises(InputError, match="out of range"):
        load_mesh(write(tmp_path / "bad.mesh", bad))


def test_load_mesh_parse_error_reports_line(tmp_path):
    bad = TWO_TRI_SQUARE.replace("1 1", "1 one")
    with pytest.raises(InputError, match=":5"):
        load_mesh(write(tmp_path / "bad.mesh", bad))


def test_load_mesh_zero_area(tmp_path):
    text = "3 1\n0 0\n1 0\n2 0\n0 1 2\n"
    with pytest.raises(InputError, match="zero area"):
        load_mesh(write(tmp_path / "flat.mesh", text))


def test_load_mesh_disconnected(tmp_path):
    text = (
        "6 2\n0 0\n1 0\n0 1\n5 5\n6 5\n5 6\n0 1 2\n3 4 5\n"
    )
    with pytest.raises(InputError, match="connected components"):
        load_mesh(write(tmp_path / "two.mesh", text))


def test_mesh_orientation_normalized(tmp_path):
    # second triangle listed clockwise; loader must flip it
    text = "4 2\n0 0\n1 0\n1 1\n0 1\n0 1 2\n0 3 2\n"
    mesh = load_mesh(write(tmp_path / "cw.mesh", text))
    v, t = mesh.vertices, mesh.triangles
    p1, p2, p3 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    signed = (p2[:, 0] - p1[:, 0]) * (p3[:, 1] - p1[:, 1]) - (
        p3[:, 0] - p1[:, 0]
    ) * (p2[:, 1] - p1[:, 1])
    assert (signed > 0).all()


def test_blob_mesh_roundtrip_preserves_counts(tmp_path):
    mesh = blob_mesh(n_rings=6, n_sectors=20)
    save_mesh(mesh, str(tmp_path / "blob.mesh"))
    back = load_mesh(str(tmp_path / "blob.mesh"))
    assert back.n_vertices == mesh.n_vertices == 1 + 6 * 20
    assert back.n_triangles == mesh.n_triangles
    assert np.array_equal(back.vertices, mesh.vertices)


# ---------------------------------------------------------------------------
# FEM assembly
# ---------------------------------------------------------------------------

def test_reference_triangle_element_matrices():
    # single right triangle (0,0),(1,0),(0,1): hand-integrated P1 matrices
    mesh = Mesh2D(
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
        triangles=np.array([[0, 1, 2]]),
    )
    stiffness, mass = assemble_fem(mesh)
    k_expect = np.array([[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]])
    m_expect = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 24.0
    assert np.allclose(stiffness.toarray(), k_expect, atol=1e-15)
    assert np.allclose(mass.toarray(), m_expect, atol=1e-15)


def test_stiffness_annihilates_constants():
    mesh = unit_square_mesh(9)
    stiffness, _ = assemble_fem(mesh)
    ones = np.ones(mesh.n_vertices)
    assert np.abs(stiffness @ ones).max() < 1e-12


def test_mass_sums_to_area():
    mesh = unit_square_mesh(7)
    _, mass = assemble_fem(mesh)
    assert abs(mass.sum() - 1.0) < 1e-12
    blob = blob_mesh(5, 16)
    _, bmass = assemble_fem(blob)
    # polygon area oracle: sum of triangle areas computed independently
    v, t = blob.vertices, blob.triangles
    a = v[t[:, 1]] - v[t[:, 0]]
    b = v[t[:, 2]] - v[t[:, 0]]
    area = 0.5 * np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]).sum()
    assert abs(bmass.sum() - area) < 1e-12


def test_fem_matrices_symmetric():
    mesh = blob_mesh(5, 16)
    stiffness, mass = assemble_fem(mesh)
    assert np.abs((stiffness - stiffness.T).toarray()).max() < 1e-13
    assert np.abs((mass - mass.T).toarray()).max() < 1e-15


# ---------------------------------------------------------------------------
# graphs
# ---------------------------------------------------------------------------

def path3_graph():
    w = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    return GraphDomain(weights=w)


def test_graph_laplacian_path3():
    lap, ident = build_graph_laplacian(path3_graph())
    expect = np.array([[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]])
    assert np.array_equal(lap.toarray(), expect)
    assert np.array_equal(ident.toarray(), np.eye(3))


def test_graph_negative_weight_rejected(tmp_path):
    text = "2\n0 -1\n-1 0\n"
    with pytest.raises(InputError, match="negative weight"):
        load_graph(write(tmp_path / "neg.graph", text))


def test_graph_asymmetry_rejected(tmp_path):
    text = "2\n0 1\n2 0\n"
    with pytest.raises(InputError, match="not symmetric"):
        load_graph(write(tmp_path / "asym.graph", text))


def test_graph_roundtrip_bitexact(tmp_path):
    g = random_geometric_graph(20, 0.45, seed=3)
    save_graph(g, str(tmp_path / "g.graph"))
    back = load_graph(str(tmp_path / "g.graph"))
    assert np.array_equal(back.weights, g.weights)


def test_random_geometric_graph_connected_and_deterministic():
    g1 = random_geometric_graph(68, 0.25, seed=11)
    g2 = random_geometric_graph(68, 0.25, seed=11)
    assert np.array_equal(g1.weights, g2.weights)
    assert np.array_equal(g1.weights, g1.weights.T)


# ---------------------------------------------------------------------------
# eigenbasis
# ---------------------------------------------------------------------------

def test_path3_eigenvalues_exact():
    # analytic spectrum of the path graph on three nodes: {0, 1, 3}
    lap, ident = build_graph_laplacian(path3_graph())
    basis = compute_eigenbasis(lap, ident, 3)
    assert np.allclose(basis.eigenvalues, [0.0, 1.0, 3.0], atol=1e-10)
    # first mode is constant up to normalization
    first = basis.modes[:, 0]
    assert np.abs(first - first[0]).max() < 1e-10


def test_unit_square_eigenvalues_match_continuum():
    # Neumann Laplacian on [0,1]^2 has eigenvalues pi^2 (m^2 + k^2)
    basis = eigenbasis_for(unit_square_mesh(21), 8)
    expect = PI2 * np.array([0.0, 1.0, 1.0, 2.0])
    assert abs(basis.eigenvalues[0]) < 1e-8
    rel = np.abs(basis.eigenvalues[1:4] - expect[1:]) / expect[1:]
    assert rel.max() < 0.02


def test_eigenbasis_m_orthonormal_and_residual():
    mesh = blob_mesh(6, 18)
    stiffness, mass = assemble_fem(mesh)
    basis = compute_eigenbasis(stiffness, mass, 12)
    gram = basis.modes.T @ (mass @ basis.modes)
    assert np.abs(gram - np.eye(12)).max() < 1e-8
    for i in range(12):
        phi = basis.modes[:, i]
        res = stiffness @ phi - basis.eigenvalues[i] * (mass @ phi)
        assert np.linalg.norm(res) <= 1e-8 * (1.0 + basis.eigenvalues[i])


def test_eigenvalues_sorted_and_first_zero():
    basis = eigenbasis_for(random_geometric_graph(40, 0.35, seed=5), 10)
    assert (np.diff(basis.eigenvalues) >= -1e-12).all()
    assert abs(basis.eigenvalues[0]) < 1e-8


def test_zero_eigenvalue_multiplicity_counts_components():
    # two disjoint triangles: Laplacian has a two-dimensional nullspace
    w = np.zeros((6, 6))
    for a, b in [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]:
        w[a, b] = w[b, a] = 1.0
    lap, ident = build_graph_laplacian(GraphDomain(weights=w))
    basis = compute_eigenbasis(lap, ident, 6)
    assert (np.abs(basis.eigenvalues) < 1e-10).sum() == 2


def test_eigenbasis_deterministic_bitwise():
    mesh = unit_square_mesh(15)
    b1 = eigenbasis_for(mesh, 10)
    b2 = eigenbasis_for(mesh, 10)
    assert np.array_equal(b1.eigenvalues, b2.eigenvalues)
    assert np.array_equal(b1.modes, b2.modes)
    assert b1.digest == b2.digest


def test_eigenbasis_sign_convention():
    basis = eigenbasis_for(unit_square_mesh(13), 6)
    for i in range(6):
        mode = basis.modes[:, i]
        lead = np.argmax(np.abs(mode))
        assert mode[lead] > 0


def test_eigenbasis_against_dense_numpy_oracle():
    # independent route: dense generalized eigenproblem via numpy on M^-1/2
    g = random_geometric_graph(30, 0.4, seed=7)
    lap, ident = build_graph_laplacian(g)
    basis = compute_eigenbasis(lap, ident, 8)
    oracle = np.sort(np.linalg.eigvalsh(lap.toarray()))[:8]
    assert np.allclose(basis.eigenvalues, oracle, atol=1e-9)


def test_eigensolver_iterative_path_matches_dense():
    # above the dense cutoff: exercise shift-invert and compare eigenvalues
    mesh = unit_square_mesh(24)  # 576 vertices > 500
    stiffness, mass = assemble_fem(mesh)
    basis = compute_eigenbasis(stiffness, mass, 6)
    import scipy.linalg

    dense = scipy.linalg.eigh(
        stiffness.toarray(), mass.toarray(), eigvals_only=True,
        subset_by_index=[0, 5],
    )
    assert np.allclose(basis.eigenvalues, dense, rtol=1e-8, atol=1e-8)
    gram = basis.modes.T @ (mass @ basis.modes)
    assert np.abs(gram - np.eye(6)).max() < 1e-8


def test_fem_eigenvalue_convergence_under_refinement():
    coarse = eigenbasis_for(unit_square_mesh(11), 2).eigenvalues[1]
    fine = eigenbasis_for(unit_square_mesh(21), 2).eigenvalues[1]
    assert abs(fine - PI2) < abs(coarse - PI2)


def test_n_modes_out_of_range():
    lap, ident = build_graph_laplacian(path3_graph())
    with pytest.raises(InputError, match="out of range"):
        compute_eigenbasis(lap, ident, 4)


def test_unused_vertex_rejected():
    mesh = Mesh2D(
        vertices=np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [9.0, 9.0]]),
        triangles=np.array([[0, 1, 2]]),
    )
    with pytest.raises(InputError, match="not referenced"):
        assemble_fem(mesh)

"""Spatial domains and their Laplacian eigenbases.

Two domain flavours are supported:

* ``Mesh2D``: a 2D triangulated region. Diffusion is discretized with linear
  (P1) finite elements under natural boundary conditions, giving the
  generalized eigenproblem ``K phi = lambda M phi`` with stiffness ``K`` and
  consistent mass ``M``.
* ``GraphDomain``: a weighted undirected graph. Diffusion uses the graph
  Laplacian ``L = D - W`` and the identity as inner-product weight.

Both reduce to an ``EigenBasis``: the first ``P`` eigenpairs, M-orthonormal,
eigenvalues ascending, with a deterministic sign convention (the first
component of largest magnitude of each mode is made positive).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla

from .errors import InputError, NumericalError

# Dense LAPACK is used below this size; above it, shift-invert Lanczos.
_DENSE_LIMIT = 500

# Triangles with twice-area below this are rejected as degenerate.
_AREA_TOL = 1e-14


@dataclass
class Mesh2D:
    """Triangulated 2D domain.

    Attributes:
        vertices: (V, 2) float array of node coordinates.
        triangles: (T, 3) int array of 0-based vertex indices, counter
            clockwise orientation (normalized on load).
    """

    vertices: np.ndarray
    triangles: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


@dataclass
class GraphDomain:
    """Weighted undirected graph domain.

    Attributes:
        weights: (n, n) symmetric matrix of nonnegative connection weights
            (arbitrary positive scale). Diagonal entries are ignored: self
            loops cancel out of the Laplacian.
        coords: optional (n, 2) node coordinates, used only for reporting and
            interaction-length statistics.
    """

    weights: np.ndarray
    coords: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]


@dataclass
class EigenBasis:
    """Truncated Laplacian eigenbasis of a domain.

    Attributes:
        eigenvalues: (P,) ascending, first one ~0 for connected domains.
        modes: (V, P), M-orthonormal columns with deterministic signs.
        weight: (V, V) sparse inner-product matrix (FEM mass for meshes,
            identity for graphs).
    """

    eigenvalues: np.ndarray
    modes: np.ndarray
    weight: sp.csr_matrix
    integral_weights: np.ndarray | None = None
    weighted_modes: np.ndarray = field(init=False)
    digest: str = field(init=False)

    def __post_init__(self):
        if self.integral_weights is None:
            # 1^T M u: row sums of the weight matrix
            self.integral_weights = np.asarray(self.weight.sum(axis=0)).ravel()
        self.weighted_modes = np.asarray(self.weight @ self.modes)
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.eigenvalues).tobytes())
        h.update(np.ascontiguousarray(self.modes).tobytes())
        h.update(np.ascontiguousarray(self.weighted_modes).tobytes())
        self.digest = h.hexdigest()

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.modes.shape[0]


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _data_lines(path: str) -> list[tuple[int, str]]:
    """Read a text file, strip '#' comments, return (lineno, content) pairs."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                out.append((lineno, line))
    return out


def load_mesh(path: str) -> Mesh2D:
    """Load a mesh from text: header ``V T``, V coordinate lines ``x y``,
    T connectivity lines ``i j k`` (0-based). ``#`` starts a comment.

    Raises InputError with the offending line number on parse failures,
    out-of-range indices, degenerate triangles, or a disconnected mesh.
    """
    lines = _data_lines(path)
    if not lines:
        raise InputError(f"{path}: empty mesh file")
    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 2:
        raise InputError(f"{path}:{lineno}: expected header 'V T', got {header!r}")
    try:
        n_v, n_t = int(parts[0]), int(parts[1])
    except ValueError:
        raise InputError(f"{path}:{lineno}: non-integer mesh header {header!r}")
    if n_v < 3 or n_t < 1:
        raise InputError(f"{path}:{lineno}: need at least 3 vertices and 1 triangle")
    if len(lines) != 1 + n_v + n_t:
        raise InputError(
            f"{path}: header promises {n_v} vertices and {n_t} triangles "
            f"but file has {len(lines) - 1} data lines"
        )

    vertices = np.empty((n_v, 2), dtype=np.float64)
    for row, (lineno, line) in enumerate(lines[1 : 1 + n_v]):
        parts = line.split()
        if len(parts) != 2:
            raise InputError(f"{path}:{lineno}: expected 'x y', got {line!r}")
        try:
            vertices[row] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric coordinate in {line!r}")

    triangles = np.empty((n_t, 3), dtype=np.int64)
    for row, (lineno, line) in enumerate(lines[1 + n_v :]):
        parts = line.split()
        if len(parts) != 3:
            raise InputError(f"{path}:{lineno}: expected 'i j k', got {line!r}")
        try:
            tri = [int(parts[0]), int(parts[1]), int(parts[2])]
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-integer vertex index in {line!r}")
        for idx in tri:
            if idx < 0 or idx >= n_v:
                raise InputError(
                    f"{path}:{lineno}: vertex index {idx} out of range [0, {n_v})"
                )
        if len(set(tri)) != 3:
            raise InputError(f"{path}:{lineno}: repeated vertex in triangle {tri}")
        triangles[row] = tri

    mesh = Mesh2D(vertices=vertices, triangles=triangles)
    _validate_mesh(mesh, path)
    return mesh


def save_mesh(mesh: Mesh2D, path: str) -> None:
    """Write a mesh in the text format accepted by :func:`load_mesh`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.n_triangles}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")


def _validate_mesh(mesh: Mesh2D, origin: str = "<mesh>") -> None:
    """Normalize orientation in place and verify areas and connexity."""
    v, t = mesh.vertices, mesh.triangles
    p1, p2, p3 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    twice_area = (p2[:, 0] - p1[:, 0]) * (p3[:, 1] - p1[:, 1]) - (
        p3[:, 0] - p1[:, 0]
    ) * (p2[:, 1] - p1[:, 1])
    degenerate = np.abs(twice_area) < _AREA_TOL
    if degenerate.any():
        bad = int(np.argmax(degenerate))
        raise InputError(f"{origin}: triangle {bad} has zero area")
    flip = twice_area < 0
    if flip.any():
        # normalize to counterclockwise
        t[flip, 1], t[flip, 2] = t[flip, 2].copy(), t[flip, 1].copy()

    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[t.ravel()] = True
    if not used.all():
        bad = int(np.argmin(used))
        raise InputError(f"{origin}: vertex {bad} not referenced by any triangle")

    rows = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    cols = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    adj = sp.coo_matrix(
        (np.ones(rows.size), (rows, cols)), shape=(mesh.n_vertices,) * 2
    )
    n_comp, _ = csgraph.connected_components(adj, directed=False)
    if n_comp != 1:
        raise InputError(f"{origin}: mesh has {n_comp} connected components")


def load_graph(path: str) -> GraphDomain:
    """Load a graph from text: header ``n``, then n rows of n nonnegative
    whitespace-separated weights. Must be symmetric."""
    lines = _data_lines(path)
    if not lines:
        raise InputError(f"{path}: empty graph file")
    lineno, header = lines[0]
    try:
        n = int(header)
    except ValueError:
        raise InputError(f"{path}:{lineno}: expected node count header, got {header!r}")
    if n < 2:
        raise InputError(f"{path}:{lineno}: need at least 2 nodes")
    if len(lines) != 1 + n:
        raise InputError(
            f"{path}: header promises {n} rows but file has {len(lines) - 1}"
        )
    weights = np.empty((n, n), dtype=np.float64)
    for row, (lineno, line) in enumerate(lines[1:]):
        parts = line.split()
        if len(parts) != n:
            raise InputError(
                f"{path}:{lineno}: expected {n} weights, got {len(parts)}"
            )
        try:
            weights[row] = [float(p) for p in parts]
        except ValueError:
            raise InputError(f"{path}:{lineno}: non-numeric weight on row {row}")
    graph = GraphDomain(weights=weights)
    _validate_graph(graph, path)
    return graph


def save_graph(graph: GraphDomain, path: str) -> None:
    """Write a graph in the text format accepted by :func:`load_graph`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{graph.n_nodes}\n")
        for row in graph.weights:
            fh.write(" ".join(f"{w:.17g}" for w in row) + "\n")


def _validate_graph(graph: GraphDomain, origin: str = "<graph>") -> None:
    w = graph.weights
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise InputError(f"{origin}: weight matrix must be square, got {w.shape}")
    if (w < 0).any():
        i, j = np.argwhere(w < 0)[0]
        raise InputError(f"{origin}: negative weight at ({i}, {j})")
    if not np.array_equal(w, w.T):
        raise InputError(f"{origin}: weight matrix is not symmetric")


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def assemble_fem(mesh: Mesh2D) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Assemble P1 stiffness and consistent mass matrices.

    Natural (no-flux) boundary conditions: nothing is imposed, so the
    stiffness nullspace is the constant vector. Element matrices, for a
    triangle of area A with edge vectors e_i opposite vertex i:

        K_e[i, j] = (e_i . e_j) / (4 A)        M_e = (A / 12) [[2,1,1],
                                                              [1,2,1],
                                                              [1,1,2]]

    Returns:
        (stiffness, mass) as CSR matrices of shape (V, V).
    """
    _validate_mesh(mesh)
    v, t = mesh.vertices, mesh.triangles
    p1, p2, p3 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    # edge vector opposite vertex i
    e1 = p3 - p2
    e2 = p1 - p3
    e3 = p2 - p1
    twice_area = e3[:, 0] * (-e2[:, 1]) - (-e2[:, 0]) * e3[:, 1]
    area = 0.5 * twice_area  # positive after orientation normalization

    edges = np.stack([e1, e2, e3], axis=1)  # (T, 3, 2)
    # k_elem[t, i, j] = (e_i . e_j) / (4 A)
    k_elem = np.einsum("tix,tjx->tij", edges, edges) / (4.0 * area)[:, None, None]
    m_ref = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
    m_elem = m_ref[None, :, :] * area[:, None, None]

    rows = np.repeat(t, 3, axis=1).ravel()  # i index varies slower
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    stiffness = sp.coo_matrix((k_elem.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mass = sp.coo_matrix((m_elem.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    return stiffness, mass


def build_graph_laplacian(graph: GraphDomain) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Graph Laplacian ``L = D - W`` and identity weight matrix.

    The diagonal of W is zeroed first (self loops cancel out of L anyway).
    Returns (laplacian, identity) as CSR, mirroring :func:`assemble_fem`.
    """
    _validate_graph(graph)
    w = graph.weights.copy()
    np.fill_diagonal(w, 0.0)
    degree = w.sum(axis=1)
    lap = np.diag(degree) - w
    n = graph.n_nodes
    return sp.csr_matrix(lap), sp.identity(n, format="csr")


def compute_eigenbasis(
    stiffness: sp.spmatrix,
    mass: sp.spmatrix,
    n_modes: int,
    integral_weights: np.ndarray | None = None,
) -> EigenBasis:
    """Solve ``K phi = lambda M phi`` for the lowest ``n_modes`` eigenpairs.

    Dense LAPACK for small problems (V <= 500), otherwise shift-invert
    Lanczos with a deterministic start vector. Eigenvalues come back
    ascending; modes are M-orthonormal with the sign convention that each
    mode's first largest-magnitude component is positive.

    Raises:
        InputError: if n_modes exceeds the problem dimension.
        NumericalError: if the iterative solver fails to converge.
    """
    stiffness = sp.csr_matrix(stiffness)
    mass = sp.csr_matrix(mass)
    n = stiffness.shape[0]
    if stiffness.shape != (n, n) or mass.shape != (n, n):
        raise InputError(
            f"stiffness {stiffness.shape} and mass {mass.shape} must be square and equal"
        )
    if not 1 <= n_modes <= n:
        raise InputError(f"n_modes={n_modes} out of range [1, {n}]")

    if n <= _DENSE_LIMIT or n_modes > n - 2:
        vals, vecs = scipy.linalg.eigh(
            stiffness.toarray(), mass.toarray(), subset_by_index=[0, n_modes - 1]
        )
    else:
        # shift slightly negative: K is singular (constant nullspace) so the
        # factorization of (K - sigma M) needs sigma != 0
        scale = float(np.abs(stiffness.diagonal()).mean()) or 1.0
        sigma = -1e-2 * scale
        v0 = np.random.default_rng(8675309).standard_normal(n)
        try:
            vals, vecs = spla.eigsh(
                stiffness, k=n_modes, M=mass, sigma=sigma, which="LM", v0=v0
            )
        except spla.ArpackNoConvergence as exc:
            raise NumericalError(f"eigensolver failed to converge: {exc}") from exc

    order = np.argsort(vals, kind="stable")
    vals = np.ascontiguousarray(vals[order])
    vecs = np.ascontiguousarray(vecs[:, order])

    # deterministic signs: first component of largest magnitude made positive
    lead = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    vecs = vecs * signs

    return EigenBasis(
        eigenvalues=vals, modes=vecs, weight=mass, integral_weights=integral_weights
    )


def eigenbasis_for(domain: Mesh2D | GraphDomain, n_modes: int) -> EigenBasis:
    """Assemble the right operator pair for the domain and solve for modes.

    The field integral used by the cognition coupling is the FEM integral
    1^T M u on meshes and the plain node mean on graphs (the mean keeps the
    coupling magnitude comparable across graph sizes).
    """
    if isinstance(domain, Mesh2D):
        stiffness, mass = assemble_fem(domain)
        integral_weights = None
    elif isinstance(domain, GraphDomain):
        stiffness, mass = build_graph_laplacian(domain)
        integral_weights = np.full(domain.n_nodes, 1.0 / domain.n_nodes)
    else:
        raise InputError(f"unsupported domain type {type(domain).__name__}")
    return compute_eigenbasis(stiffness, mass, n_modes, integral_weights)


# ---------------------------------------------------------------------------
# fixture generators
# ---------------------------------------------------------------------------

def unit_square_mesh(n: int) -> Mesh2D:
    """Structured triangulation of [0,1]^2 with n x n vertices (h = 1/(n-1))."""
    if n < 2:
        raise InputError("unit_square_mesh needs n >= 2")
    xs = np.linspace(0.0, 1.0, n)
    xx, yy = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])
    tris = []
    for j in range(n - 1):
        for i in range(n - 1):
            v00 = j * n + i
            v10 = v00 + 1
            v01 = v00 + n
            v11 = v01 + 1
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))
    return Mesh2D(vertices=vertices, triangles=np.array(tris, dtype=np.int64))


def blob_mesh(n_rings: int = 8, n_sectors: int = 24) -> Mesh2D:
    """Star-shaped 'slice' domain: a disk with a wavy boundary, fan
    triangulated from the center. Deterministic; used as an irregular mesh
    fixture."""
    if n_rings < 1 or n_sectors < 3:
        raise InputError("blob_mesh needs n_rings >= 1 and n_sectors >= 3")
    theta = np.linspace(0.0, 2.0 * np.pi, n_sectors, endpoint=False)
    boundary_r = 1.0 + 0.15 * np.sin(2 * theta) + 0.08 * np.cos(3 * theta)
    verts = [(0.0, 0.0)]
    for ring in range(1, n_rings + 1):
        frac = ring / n_rings
        r = frac * boundary_r
        verts.extend(zip(r * np.cos(theta), r * np.sin(theta)))
    vertices = np.array(verts, dtype=np.float64)

    tris = []
    for s in range(n_sectors):
        tris.append((0, 1 + s, 1 + (s + 1) % n_sectors))
    for ring in range(1, n_rings):
        base_in = 1 + (ring - 1) * n_sectors
        base_out = 1 + ring * n_sectors
        for s in range(n_sectors):
            s2 = (s + 1) % n_sectors
            tris.append((base_in + s, base_out + s, base_out + s2))
            tris.append((base_in + s, base_out + s2, base_in + s2))
    return Mesh2D(vertices=vertices, triangles=np.array(tris, dtype=np.int64))


def random_geometric_graph(
    n: int, radius: float, seed: int, weight: float = 0.05
) -> GraphDomain:
    """Random geometric graph: n nodes uniform in the unit square, edges of
    constant weight between pairs within ``radius``. Raises InputError if the
    result is disconnected (pick another seed or a larger radius)."""
    if n < 2:
        raise InputError("random_geometric_graph needs n >= 2")
    if radius <= 0 or weight <= 0:
        raise InputError("radius and weight must be positive")
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0.0, 1.0, size=(n, 2))
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    w = np.where((dist > 0) & (dist <= radius), weight, 0.0)
    graph = GraphDomain(weights=w, coords=coords)
    n_comp, _ = csgraph.connected_components(sp.csr_matrix(w), directed=False)
    if n_comp != 1:
        raise InputError(
            f"random geometric graph (n={n}, radius={radius}, seed={seed}) "
            f"has {n_comp} components"
        )
    return graph

"""Mechanistic readouts of trained operators.

The drive networks act on spectral coefficients, so their exact Jacobians
live in coefficient space.  Conjugating with the basis maps a unit nodal
perturbation of an input species to the nodal rate change of an output
species:

    R = Phi J Phi^T M

where Phi stacks the modes column-wise and M is the inner-product weight
(FEM mass on meshes, identity on graphs, so one formula serves both).  Edge
exports and the interaction-length statistic summarize R; the length is this
package's own definition: the |weight|-weighted mean distance spanned by the
above-threshold edges, optionally mass-weighted per node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path
from scipy.spatial.distance import cdist

from .domains import EigenBasis, GraphDomain, Mesh2D
from .errors import InputError
from .networks import MlpParams, jacobian
from .training import SPECIES_INPUTS, LenoModel


@dataclass
class InteractionMatrix:
    """Directional influence: entry (r, s) is d(rate at node r)/d(state at node s)."""

    matrix: np.ndarray
    output_species: str
    input_species: str
    state_label: str = ""

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise InputError(f"interaction matrix must be square, got {self.matrix.shape}")
        if not np.isfinite(self.matrix).all():
            raise InputError("interaction matrix has non-finite entries")

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]


def jacobian_spectral(net: MlpParams, beta_point: np.ndarray) -> np.ndarray:
    """Exact reverse-mode Jacobian of a drive net at one coefficient point,
    shape (d_out, d_in)."""
    return jacobian(net, beta_point)


def jacobian_regional(
    model: LenoModel,
    output_species: str,
    input_species: str,
    state_fields: dict[str, np.ndarray],
    basis: EigenBasis,
    state_label: str = "",
) -> InteractionMatrix:
    """Nodal influence matrix of one drive with respect to one of its inputs.

    state_fields supplies the nodal evaluation state for every species the
    output's drive reads; the Jacobian block of the chosen input species is
    conjugated into node space.
    """
    if output_species not in SPECIES_INPUTS:
        raise InputError(f"no drive network for species {output_species!r}")
    inputs = SPECIES_INPUTS[output_species]
    if input_species not in inputs:
        raise InputError(
            f"drive of {output_species!r} does not read {input_species!r} "
            f"(inputs are {inputs})"
        )
    model.check_basis(basis)
    model.require_trained(output_species)

    blocks = []
    for s in inputs:
        if s not in state_fields:
            raise InputError(f"missing state field for {s!r}")
        f = np.asarray(state_fields[s], dtype=np.float64)
        if f.shape != (basis.n_nodes,):
            raise InputError(f"state field {s!r} has shape {f.shape}")
        blocks.append(f @ basis.weighted_modes)
    beta_point = np.concatenate(blocks)

    jac = jacobian(model.nets[output_species], beta_point)
    p = basis.n_modes
    i = inputs.index(input_species)
    block = jac[:, i * p : (i + 1) * p]
    regional = basis.modes @ block @ basis.weighted_modes.T
    return InteractionMatrix(regional, output_species, input_species, state_label)


def connectivity_export(
    mat: InteractionMatrix, threshold: float
) -> list[tuple[int, int, float]]:
    """Directed edges (target r, source s, weight) with |weight| at least
    threshold times the largest magnitude, strongest first, ties by (r, s)."""
    if not 0.0 <= threshold <= 1.0:
        raise InputError(f"threshold must lie in [0, 1], got {threshold}")
    a = np.abs(mat.matrix)
    cut = threshold * a.max()
    rows, cols = np.nonzero(a >= cut)
    order = np.lexsort((cols, rows, -a[rows, cols]))
    return [
        (int(rows[i]), int(cols[i]), float(mat.matrix[rows[i], cols[i]]))
        for i in order
    ]


def interaction_length(
    mat: InteractionMatrix,
    distances: np.ndarray,
    threshold: float = 0.0,
    node_weights: np.ndarray | None = None,
) -> float:
    """|weight|-weighted mean distance of above-threshold edges.

    node_weights (e.g. lumped masses) multiply each edge by the product of
    its endpoint weights; pairs with non-finite distance (unreachable graph
    nodes) are excluded.  A matrix with no surviving edges has length 0.
    """
    if not 0.0 <= threshold <= 1.0:
        raise InputError(f"threshold must lie in [0, 1], got {threshold}")
    distances = np.asarray(distances, dtype=np.float64)
    if distances.shape != mat.matrix.shape:
        raise InputError(
            f"distance matrix shape {distances.shape} != {mat.matrix.shape}"
        )
    a = np.abs(mat.matrix)
    keep = (a >= threshold * a.max()) & np.isfinite(distances)
    w = np.where(keep, a, 0.0)
    if node_weights is not None:
        node_weights = np.asarray(node_weights, dtype=np.float64)
        if node_weights.shape != (mat.n_nodes,):
            raise InputError(f"node weights have shape {node_weights.shape}")
        w = w * np.outer(node_weights, node_weights)
    total = w.sum()
    if total == 0.0:
        return 0.0
    return float((w * distances).sum() / total)


def mesh_distances(mesh: Mesh2D) -> np.ndarray:
    """Pairwise Euclidean distances between mesh vertices."""
    return cdist(mesh.vertices, mesh.vertices)


def graph_distances(graph: GraphDomain) -> np.ndarray:
    """Pairwise shortest-path hop counts (inf for unreachable pairs)."""
    return shortest_path(graph.weights != 0, method="D", unweighted=True)

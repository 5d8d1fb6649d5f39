"""Tree-cotree gauging on the control-mesh graph.

The curl-curl operator is singular on the full edge-function space; its
gradient kernel is removed by zeroing the degrees of freedom on a spanning
tree of the control graph and solving on the complementary cotree.  The
tree is grown breadth first region by region: Dirichlet boundary first,
then the remaining boundary, then the interior.  On the dependent side of
a mortar interface the interface subgraph is spanned first and its edge
dofs are afterwards returned to the cotree, since the multiplier, not the
gauge, constrains them.  Harmonic fields on non-contractible or periodic
topologies are removed by a rank-based enrichment: cotree edges are moved
to the tree until the reduced stiffness is regular.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularSystemError
from .mesh import ControlMesh
from .spaces import DiscreteSpace

__all__ = [
    "ControlGraph",
    "GaugePartition",
    "ReducedSystem",
    "build_graph",
    "spanning_tree",
    "dependent_tree",
    "enrich_cohomology",
    "gauge_reduce",
    "dump_tree_csv",
]

REGIONS = ("dirichlet", "interface", "neumann", "interior")


class ControlGraph:
    """Vertices and edges of an identified control mesh, with edge labels.

    Each edge carries its boundary-region membership flags, the owning
    (patch, direction, multi-index) key used for deterministic ordering,
    and whether its degree of freedom is constrained by the Dirichlet
    conditions of the accompanying space.
    """

    def __init__(self, mesh: ControlMesh, space: DiscreteSpace):
        if space.form_degree != 1:
            raise ValueError("gauging applies to the curl-conforming space")
        self.mesh = mesh
        self.num_vertices = mesh.num_vertices
        self.num_edges = mesh.num_entities[1]
        self.edge_endpoints = mesh.edge_endpoints
        self.on_dirichlet = mesh.mask("dirichlet", 1)
        self.on_neumann = mesh.mask("neumann", 1)
        self.on_interface = mesh.mask("interface", 1)
        self.constrained = space.dirichlet_mask.copy()
        self.owner = mesh.edge_owner
        order = np.lexsort(tuple(self.owner[:, c] for c in range(self.owner.shape[1] - 1, -1, -1)))
        self.edge_order = np.empty(self.num_edges, dtype=np.int64)
        self.edge_order[order] = np.arange(self.num_edges)
        adj = [[] for _ in range(self.num_vertices)]
        for e in order:
            a, b = self.edge_endpoints[e]
            adj[a].append(e)
            adj[b].append(e)
        self.adjacency = adj

    def regions(self, priority):
        """Region label per edge under a membership priority order."""
        labels = np.full(self.num_edges, "interior", dtype=object)
        masks = {
            "dirichlet": self.on_dirichlet,
            "interface": self.on_interface,
            "neumann": self.on_neumann,
        }
        assigned = np.zeros(self.num_edges, dtype=bool)
        for name in priority:
            if name == "interior":
                continue
            m = masks[name] & ~assigned
            labels[m] = name
            assigned |= m
        return labels


@dataclass
class GaugePartition:
    """Tree/cotree split of the unconstrained edge dofs.

    ``tree_dofs`` are gauged to zero, ``cotree_dofs`` stay unknowns,
    ``tree_edges`` is the full spanning forest on the graph (it may
    contain constrained and interface edges that are not gauged dofs).
    """

    tree_dofs: np.ndarray
    cotree_dofs: np.ndarray
    tree_edges: np.ndarray
    enrichment_dofs: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    report: dict = field(default_factory=dict)

    @property
    def num_gauged(self):
        return len(self.tree_dofs) + len(self.enrichment_dofs)

    def gauged_dofs(self):
        return np.sort(np.concatenate([self.tree_dofs, self.enrichment_dofs]))


def build_graph(control_mesh: ControlMesh, space1: DiscreteSpace, tags=None) -> ControlGraph:
    """Graph of identified control vertices and edges with region data."""
    return ControlGraph(control_mesh, space1)


def _grow(graph: ControlGraph, phase_mask, visited, tree_flags, reverse=False):
    """One BFS phase over a subgraph; returns (edges added, seeds used)."""
    added = 0
    seeds = 0
    incident = np.zeros(graph.num_vertices, dtype=bool)
    ends = graph.edge_endpoints[phase_mask]
    incident[ends.ravel()] = True

    def neighbor_list(v):
        edges = graph.adjacency[v]
        return reversed(edges) if reverse else edges

    while True:
        frontier = deque(np.where(visited & incident)[0])
        while frontier:
            v = frontier.popleft()
            for e in neighbor_list(v):
                if not phase_mask[e]:
                    continue
                a, b = graph.edge_endpoints[e]
                w = b if a == v else a
                if visited[w]:
                    continue
                visited[w] = True
                tree_flags[e] = True
                added += 1
                frontier.append(w)
        remaining = np.where(~visited & incident)[0]
        if len(remaining) == 0:
            return added, seeds
        # disconnected piece of this phase's subgraph: seed it and regrow
        visited[remaining[0]] = True
        seeds += 1


def _build_tree(graph: ControlGraph, phases, reverse=False):
    visited = np.zeros(graph.num_vertices, dtype=bool)
    tree_flags = np.zeros(graph.num_edges, dtype=bool)
    report = {}
    for name, mask in phases:
        added, seeds = _grow(graph, mask, visited, tree_flags, reverse=reverse)
        report[name] = {"edges": added, "seeds": seeds}
    if not np.all(visited):
        report["unreached_vertices"] = int(np.sum(~visited))
    report["tree_edges"] = int(np.sum(tree_flags))
    report["components"] = graph.num_vertices - int(np.sum(tree_flags))
    return tree_flags, report


def _partition_from_tree(graph: ControlGraph, tree_flags, drop_from_gauge=None, report=None):
    free = ~graph.constrained
    gauged = tree_flags & free
    if drop_from_gauge is not None:
        gauged &= ~drop_from_gauge
    cotree = free & ~gauged
    return GaugePartition(
        tree_dofs=np.where(gauged)[0],
        cotree_dofs=np.where(cotree)[0],
        tree_edges=np.where(tree_flags)[0],
        report=report or {},
    )


def spanning_tree(graph: ControlGraph, reverse=False) -> GaugePartition:
    """Dirichlet-first spanning tree (single or independent subdomain).

    Phases: Dirichlet subgraph, then the remaining boundary (Neumann and
    any interface treated as Neumann), then the interior.  Dirichlet edges
    never enter the cotree since their dofs are imposed strongly.
    """
    labels = graph.regions(("dirichlet", "interface", "neumann", "interior"))
    phases = [
        ("dirichlet", labels == "dirichlet"),
        ("boundary", (labels == "neumann") | (labels == "interface")),
        ("interior", labels == "interior"),
    ]
    tree_flags, report = _build_tree(graph, phases, reverse=reverse)
    return _partition_from_tree(graph, tree_flags, report=report)


def dependent_tree(graph: ControlGraph, reverse=False) -> GaugePartition:
    """Interface-first tree for the dependent side of a mortar interface.

    The interface subgraph is spanned first so that the rest of the tree
    never cuts through it; all unconstrained interface edge dofs are then
    restored to the cotree, where the multiplier controls them.
    """
    labels = graph.regions(("interface", "dirichlet", "neumann", "interior"))
    phases = [
        ("interface", labels == "interface"),
        ("dirichlet", labels == "dirichlet"),
        ("neumann", labels == "neumann"),
        ("interior", labels == "interior"),
    ]
    tree_flags, report = _build_tree(graph, phases, reverse=reverse)
    restore = labels == "interface"
    report["interface_restored"] = int(np.sum(tree_flags & restore & ~graph.constrained))
    return _partition_from_tree(graph, tree_flags, drop_from_gauge=restore, report=report)


# ---------------------------------------------------------------------------
# cohomology enrichment and system reduction
# ---------------------------------------------------------------------------


def _as_matrix(oracle):
    return oracle() if callable(oracle) else oracle


def _regular(mat, rel_tol=1e-10):
    """Cheap nonsingularity test through sparse LU pivots."""
    if mat.shape[0] == 0:
        return True
    try:
        lu = spla.splu(sp.csc_matrix(mat), permc_spec="COLAMD",
                       options={"SymmetricMode": True})
    except RuntimeError:
        return False
    d = np.abs(lu.U.diagonal())
    return d.min() > rel_tol * d.max()


def _null_basis(dense, rel_tol=1e-8):
    w, v = np.linalg.eigh(dense)
    scale = max(abs(w[0]), abs(w[-1]), 1e-300)
    null = np.abs(w) < rel_tol * scale
    return v[:, null]


def enrich_cohomology(graph: ControlGraph, partition: GaugePartition,
                      stiffness_oracle) -> GaugePartition:
    """Move cotree edges into the tree until the reduced stiffness is regular.

    The number of moved edges equals the number of independent harmonic
    fields of the gauged problem (the rank of the first cohomology group
    relative to the Dirichlet boundary).  Candidates are ranked by their
    weight in the current null-space basis; the count, not the choice, is
    the meaningful result.
    """
    K = sp.csr_matrix(_as_matrix(stiffness_oracle))
    cotree = np.array(partition.cotree_dofs, dtype=np.int64)
    kcc = K[np.ix_(cotree, cotree)]
    if _regular(kcc):
        return GaugePartition(
            partition.tree_dofs, cotree, partition.tree_edges,
            enrichment_dofs=np.empty(0, dtype=np.int64),
            report={**partition.report, "enrichment": 0},
        )
    moved = []
    dense = kcc.toarray()
    keep = np.arange(len(cotree))
    for _ in range(len(cotree)):
        basis = _null_basis(dense)
        if basis.shape[1] == 0:
            break
        score = np.linalg.norm(basis, axis=1)
        pick = int(np.argmax(score))
        moved.append(int(cotree[keep[pick]]))
        keep = np.delete(keep, pick)
        dense = np.delete(np.delete(dense, pick, axis=0), pick, axis=1)
    else:
        raise SingularSystemError("cohomology enrichment did not terminate")
    moved = np.array(sorted(moved), dtype=np.int64)
    new_cotree = np.setdiff1d(cotree, moved)
    return GaugePartition(
        partition.tree_dofs, new_cotree, partition.tree_edges,
        enrichment_dofs=moved,
        report={**partition.report, "enrichment": len(moved)},
    )


@dataclass
class ReducedSystem:
    """Cotree-restricted linear system with an expander to full vectors."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    dofs: np.ndarray
    full_dim: int

    def expand(self, reduced: np.ndarray) -> np.ndarray:
        out = np.zeros(self.full_dim)
        out[self.dofs] = reduced
        return out

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.dofs]


def gauge_reduce(matrix, rhs, partition: GaugePartition) -> ReducedSystem:
    """Restrict an operator and right-hand side to the cotree dofs."""
    matrix = sp.csr_matrix(matrix)
    dofs = np.asarray(partition.cotree_dofs, dtype=np.int64)
    reduced = matrix[np.ix_(dofs, dofs)]
    rhs = np.zeros(matrix.shape[0]) if rhs is None else np.asarray(rhs, dtype=float)
    return ReducedSystem(reduced.tocsr(), rhs[dofs], dofs, matrix.shape[0])


def dump_tree_csv(graph: ControlGraph, partition: GaugePartition, path):
    """Edge listing with phase membership for inspection."""
    tree = set(int(e) for e in partition.tree_edges)
    gauged = set(int(e) for e in partition.tree_dofs) | set(
        int(e) for e in partition.enrichment_dofs
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patch", "direction", "index", "dirichlet", "interface",
                         "neumann", "constrained", "tree", "gauged"])
        for e in range(graph.num_edges):
            owner = graph.owner[e]
            writer.writerow([
                int(owner[0]), int(owner[1]),
                "x".join(str(int(i)) for i in owner[2:]),
                int(graph.on_dirichlet[e]), int(graph.on_interface[e]),
                int(graph.on_neumann[e]), int(graph.constrained[e]),
                int(e in tree), int(e in gauged),
            ])

"""Discrete de Rham spaces on multi-patch domains.

Form degrees 0..d are discretized with tensor-product splines whose
per-direction degrees follow the de Rham pattern: the gradient-conforming
space uses the full degree everywhere, the curl-conforming space reduces
the degree along each component's own direction, the divergence-conforming
space reduces it along the two transverse directions, and densities are
reduced everywhere.  Every basis function is keyed to one control-mesh
entity of the matching dimension, which makes the differential operators
signed incidence matrices of the control mesh.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .geometry import MultiPatchDomain, side_axis
from .mesh import ControlMesh, extract_control_mesh
from .splines import ReducedKnotVector, TensorBasis

__all__ = [
    "DiscreteSpace",
    "TraceSpace",
    "build_space",
    "gradient_matrix",
    "curl_matrix",
    "divergence_matrix",
    "restrict_dirichlet",
    "trace_space",
]


def _component_bases(kvs, form_degree, comp):
    """Per-direction bases for one vector component of a k-form space."""
    d = len(kvs)
    bases = []
    for direction, kv in enumerate(kvs):
        if form_degree == 0:
            reduced = False
        elif form_degree == 1:
            reduced = direction == comp
        elif form_degree == 2 and d == 3:
            reduced = direction != comp
        else:  # densities: k == d
            reduced = True
        bases.append(ReducedKnotVector(kv) if reduced else kv)
    return TensorBasis(bases)


class DiscreteSpace:
    """One member of the discrete de Rham sequence on a (sub)domain."""

    def __init__(self, domain: MultiPatchDomain, mesh: ControlMesh, form_degree: int,
                 degree: int):
        d = domain.dim
        if not 0 <= form_degree <= d:
            raise ValueError("form degree out of range for the domain dimension")
        if form_degree >= 1 and degree < 2:
            raise ValueError("vector-valued spaces need degree at least 2")
        self.domain = domain
        self.mesh = mesh
        self.form_degree = form_degree
        self.degree = degree
        if form_degree == 0:
            self.components = (None,)
        elif form_degree == d:
            self.components = (None,)
        elif form_degree in (1, 2):
            self.components = tuple(range(d))
        self._bases = {}
        for pid in mesh.pids:
            kvs = mesh.kvs[pid]
            for comp in self.components:
                basis = _component_bases(kvs, form_degree, comp)
                expected = self._entity_key(comp)
                assert basis.shape == mesh.gids(pid, *expected).shape
                self._bases[(pid, comp)] = basis

    def _entity_key(self, comp):
        """(kind, comp) of the control-mesh entities carrying this component."""
        k, d = self.form_degree, self.domain.dim
        if k == 0:
            return (0, None)
        if k == d:
            return (d, None)
        return (k, comp)

    @property
    def dim(self) -> int:
        return self.mesh.num_entities[self.form_degree]

    @property
    def pids(self):
        return self.mesh.pids

    def basis(self, pid, comp=None) -> TensorBasis:
        return self._bases[(pid, comp)]

    def gid_array(self, pid, comp=None):
        return self.mesh.gids(pid, *self._entity_key(comp))

    def sign_array(self, pid, comp=None):
        return self.mesh.signs(pid, *self._entity_key(comp))

    @property
    def dirichlet_mask(self):
        return self.mesh.mask("dirichlet", self.form_degree)

    @property
    def dirichlet_dofs(self):
        return np.where(self.dirichlet_mask)[0]

    @property
    def free_dofs(self):
        return np.where(~self.dirichlet_mask)[0]

    def local_coefficients(self, coeffs, pid, comp=None):
        """Patch-local coefficient grid of a global coefficient vector."""
        g = self.gid_array(pid, comp)
        s = self.sign_array(pid, comp)
        return np.asarray(coeffs)[g] * s

    def __repr__(self):
        return (
            f"DiscreteSpace(k={self.form_degree}, p={self.degree}, dim={self.dim}, "
            f"patches={len(self.pids)})"
        )


def build_space(
    domain: MultiPatchDomain,
    form_degree: int,
    degree: int,
    spans: int,
    multiplicity: int = 1,
    subdomain=None,
    mesh: ControlMesh | None = None,
) -> DiscreteSpace:
    """Construct a de Rham space with a uniform open knot discretization.

    A prebuilt control mesh for the same resolution can be shared between
    the spaces of one sequence.
    """
    if mesh is None:
        mesh = extract_control_mesh(domain, degree, spans, multiplicity, subdomain)
    return DiscreteSpace(domain, mesh, form_degree, degree)


def restrict_dirichlet(space: DiscreteSpace, domain: MultiPatchDomain | None = None):
    """Global dofs constrained to zero by the Dirichlet boundary tags."""
    return space.dirichlet_dofs


# ---------------------------------------------------------------------------
# incidence matrices
# ---------------------------------------------------------------------------


def _assemble_incidence(rows, cols, vals, shape):
    return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()


def gradient_matrix(space0: DiscreteSpace, space1: DiscreteSpace) -> sp.csr_matrix:
    """Signed vertex-edge incidence: coefficients of the gradient map."""
    _check_pair(space0, space1, 0, 1)
    mesh = space0.mesh
    rows, cols, vals = [], [], []
    written = np.zeros(space1.dim, dtype=bool)
    for pid in mesh.pids:
        vg = space0.gid_array(pid)
        for comp in space1.components:
            eg = space1.gid_array(pid, comp)
            es = space1.sign_array(pid, comp)
            shape = eg.shape
            head = np.roll(np.arange(space0.domain.dim), 0)
            for flat in range(eg.size):
                idx = np.unravel_index(flat, shape)
                g = eg[idx]
                if written[g]:
                    continue
                written[g] = True
                s = int(es[idx])
                hid = list(idx)
                hid[comp] += 1
                rows.extend((g, g))
                cols.extend((vg[tuple(hid)], vg[idx]))
                vals.extend((s, -s))
    return _assemble_incidence(rows, cols, vals, (space1.dim, space0.dim))


def curl_matrix(space1: DiscreteSpace, space2: DiscreteSpace) -> sp.csr_matrix:
    """Signed edge-facet incidence: coefficients of the curl map."""
    _check_pair(space1, space2, 1, 2)
    mesh = space1.mesh
    d = space1.domain.dim
    rows, cols, vals = [], [], []
    written = np.zeros(space2.dim, dtype=bool)
    for pid in mesh.pids:
        for fcomp in space2.components:
            fg = space2.gid_array(pid, fcomp)
            fs = space2.sign_array(pid, fcomp)
            if d == 3:
                a, b = [ax for ax in range(3) if ax != fcomp]
                sigma = 1 if fcomp in (0, 2) else -1
            else:
                a, b = 0, 1
                sigma = 1
            eg_a = space1.gid_array(pid, a)
            es_a = space1.sign_array(pid, a)
            eg_b = space1.gid_array(pid, b)
            es_b = space1.sign_array(pid, b)
            shape = fg.shape
            for flat in range(fg.size):
                idx = np.unravel_index(flat, shape)
                g = fg[idx]
                if written[g]:
                    continue
                written[g] = True
                S = sigma * int(fs[idx])
                # d_a of component b
                up = list(idx)
                up[a] += 1
                rows.extend((g, g))
                cols.extend((eg_b[tuple(up)], eg_b[idx]))
                vals.extend((S * int(es_b[tuple(up)]), -S * int(es_b[idx])))
                # minus d_b of component a
                up = list(idx)
                up[b] += 1
                rows.extend((g, g))
                cols.extend((eg_a[tuple(up)], eg_a[idx]))
                vals.extend((-S * int(es_a[tuple(up)]), S * int(es_a[idx])))
    return _assemble_incidence(rows, cols, vals, (space2.dim, space1.dim))


def divergence_matrix(space2: DiscreteSpace, space3: DiscreteSpace) -> sp.csr_matrix:
    """Signed facet-cell incidence: coefficients of the divergence map."""
    _check_pair(space2, space3, 2, 3)
    mesh = space2.mesh
    rows, cols, vals = [], [], []
    written = np.zeros(space3.dim, dtype=bool)
    for pid in mesh.pids:
        cg = space3.gid_array(pid)
        shape = cg.shape
        for flat in range(cg.size):
            idx = np.unravel_index(flat, shape)
            g = cg[idx]
            if written[g]:
                continue
            written[g] = True
            for comp in space2.components:
                fg = space2.gid_array(pid, comp)
                fsign = space2.sign_array(pid, comp)
                up = list(idx)
                up[comp] += 1
                rows.extend((g, g))
                cols.extend((fg[tuple(up)], fg[idx]))
                vals.extend((int(fsign[tuple(up)]), -int(fsign[idx])))
    return _assemble_incidence(rows, cols, vals, (space3.dim, space2.dim))


def _check_pair(sa, sb, ka, kb):
    if sa.form_degree != ka or sb.form_degree != kb:
        raise ValueError(f"expected a ({ka}, {kb})-form pair")
    if sa.mesh is not sb.mesh:
        raise ValueError("spaces must share one control mesh")


# ---------------------------------------------------------------------------
# trace spaces
# ---------------------------------------------------------------------------


class TraceSpace:
    """Tangential-trace or rotated-trace space on one boundary face.

    The curl flavor is the image of the tangential trace of the parent
    curl-conforming space; its dofs are exactly the parent's edge dofs
    lying in the face, recorded in ``parent_gids``/``parent_signs`` per
    component.  The div flavor swaps the per-direction degree reduction.
    """

    def __init__(self, parent: DiscreteSpace, face, flavor="curl"):
        pid, side = face
        if parent.form_degree != 1:
            raise ValueError("trace spaces are built from the curl-conforming space")
        axis, end = side_axis(side)
        tag = parent.domain.tag_of(pid, side)
        if tag is None:
            raise ValueError(f"face ({pid}, {side}) is interior (glued)")
        self.parent = parent
        self.pid = pid
        self.side = side
        self.axis = axis
        self.end = end
        self.flavor = flavor
        self.tangents = tuple(t for t in range(parent.domain.dim) if t != axis)
        kvs = parent.mesh.kvs[pid]
        t1, t2 = self.tangents
        if flavor == "curl":
            self.comps = (
                TensorBasis([ReducedKnotVector(kvs[t1]), kvs[t2]]),
                TensorBasis([kvs[t1], ReducedKnotVector(kvs[t2])]),
            )
        elif flavor == "div":
            self.comps = (
                TensorBasis([kvs[t1], ReducedKnotVector(kvs[t2])]),
                TensorBasis([ReducedKnotVector(kvs[t1]), kvs[t2]]),
            )
        else:
            raise ValueError("flavor must be 'curl' or 'div'")
        self.parent_gids = []
        self.parent_signs = []
        if flavor == "curl":
            for k_ax, t in enumerate(self.tangents):
                g, s = parent.mesh.face_entity_gids(pid, side, 1, t)
                self.parent_gids.append(g)
                self.parent_signs.append(s)

    @property
    def dim(self):
        return sum(c.dim for c in self.comps)

    def component_shapes(self):
        return tuple(c.shape for c in self.comps)

    def __repr__(self):
        return f"TraceSpace({self.flavor}, face=({self.pid}, {self.side}), dim={self.dim})"


def trace_space(space1: DiscreteSpace, face, flavor="curl") -> TraceSpace:
    return TraceSpace(space1, face, flavor)

"""Control mesh of a multi-patch discretization.

The basis functions of the discrete de Rham spaces correspond one to one
with the vertices, edges, facets and cells of the structured control grid
of each patch.  This module numbers those entities globally: coincident
boundary entities of conformingly glued patches are identified once,
periodic pairs are identified with their translation, and weak-interface
faces are deliberately left separate on both sides.

Identification works on index correspondences between matched face grids,
with a signed union-find.  Edge degrees of freedom pick up a sign when
their direction is reversed across a glue map, facet degrees of freedom
when the normal alignment flips; this is exactly what makes the global
incidence matrices of the de Rham complex exact.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import TopologyError
from .geometry import FaceChart, MultiPatchDomain, side_axis
from .splines import KnotVector, greville_abscissae, uniform_open_knots

__all__ = ["ControlMesh", "extract_control_mesh", "match_faces"]


class _SignedUnionFind:
    """Union-find with a +-1 weight from each element to its root."""

    def __init__(self, n):
        self.parent = np.arange(n, dtype=np.int64)
        self.sign = np.ones(n, dtype=np.int8)

    def find(self, i):
        path = []
        root = i
        while self.parent[root] != root:
            path.append(root)
            root = self.parent[root]
        # compress the path, accumulating signs from the root outwards
        acc = 1
        for node in reversed(path):
            acc = int(self.sign[node]) * acc
            self.parent[node] = root
            self.sign[node] = acc
        return int(root), (int(self.sign[i]) if path else 1)

    def union(self, i, j, rel):
        """Declare value(i) = rel * value(j)."""
        ri, si = self.find(i)
        rj, sj = self.find(j)
        if ri == rj:
            if si != rel * sj:
                raise TopologyError("inconsistent orientation in entity identification")
            return
        if ri < rj:
            self.parent[rj] = ri
            self.sign[rj] = si * rel * sj
        else:
            self.parent[ri] = rj
            self.sign[ri] = sj * rel * si


def _correspondence_candidates(nf):
    """All index maps of an nf-dimensional face grid: permutation + flips."""
    for perm in itertools.permutations(range(nf)):
        for flips in itertools.product((False, True), repeat=nf):
            yield perm, flips


def _remap_grid(grid, perm, flips):
    """Apply an axis permutation and flips to the leading nf axes."""
    nf = len(perm)
    out = np.moveaxis(grid, list(range(nf)), [perm[k] for k in range(nf)])
    for axis, f in enumerate([flips[perm.index(a)] for a in range(nf)]):
        if f:
            out = np.flip(out, axis=axis)
    return out


def match_faces(chart_a: FaceChart, chart_b: FaceChart, tol=1e-10, translation=None,
                grids=None):
    """Find the index correspondence between two matched face grids.

    Returns ``((perm, flips), max_deviation)`` such that grid point
    ``idx`` of face a coincides with point ``map(idx)`` of face b (up to
    the optional translation, for periodic pairs).  Raises TopologyError
    when no candidate matches.
    """
    if grids is None:
        ga = chart_a.patch.greville_grid(chart_a.patch.kvs)
        gb = chart_b.patch.greville_grid(chart_b.patch.kvs)
        ga = _face_slice(ga, chart_a)
        gb = _face_slice(gb, chart_b)
    else:
        ga, gb = grids
    if translation is not None:
        ga = ga + np.asarray(translation, dtype=float)
    best = None
    for perm, flips in _correspondence_candidates(ga.ndim - 1):
        shape_mapped = tuple(ga.shape[perm.index(a)] for a in range(len(perm)))
        if shape_mapped != gb.shape[:-1]:
            continue
        mapped = _remap_grid(ga, perm, flips)
        dev = float(np.max(np.linalg.norm(mapped - gb, axis=-1)))
        if dev <= tol:
            return (perm, flips), dev
        if best is None or dev < best[1]:
            best = ((perm, flips), dev)
    raise TopologyError(
        f"faces ({chart_a.pid}, {chart_a.side}) and ({chart_b.pid}, {chart_b.side}) "
        f"do not match; best deviation {best[1]:.3e}" if best else "faces do not match"
    )


def _face_slice(grid, chart: FaceChart):
    """Restrict a full patch grid (shape n + (amb,)) to a face layer."""
    idx = [slice(None)] * (grid.ndim - 1)
    idx[chart.axis] = 0 if chart.end == 0 else grid.shape[chart.axis] - 1
    return grid[tuple(idx)]


def _entity_shape(n, kind, comp):
    """Grid shape of the entities of one kind on a patch with n = k0 shape."""
    d = len(n)
    if kind == 0:
        return tuple(n)
    if kind == 1:
        return tuple(n[a] - 1 if a == comp else n[a] for a in range(d))
    if kind == 2 and d == 3:
        return tuple(n[a] if a == comp else n[a] - 1 for a in range(d))
    # top-dimensional cells
    return tuple(na - 1 for na in n)


def _kind_comps(dim, kind):
    if kind in (0, dim):
        return (None,)
    return tuple(range(dim))


class ControlMesh:
    """Globally numbered control-mesh entities of a (sub)domain.

    Entity dimensions k = 0..d index vertices, edges, facets (3D) and
    cells.  ``gids(pid, k, comp)`` returns the global-id array of one
    patch-local entity grid and ``signs(pid, k, comp)`` the orientation
    signs relative to the global representative.
    """

    def __init__(self, domain: MultiPatchDomain, kvs_per_patch, pids):
        self.domain = domain
        self.pids = list(pids)
        self.dim = domain.dim
        self.kvs = {pid: tuple(kvs_per_patch[pid]) for pid in self.pids}
        self.shape = {pid: tuple(kv.num_basis for kv in self.kvs[pid]) for pid in self.pids}
        self._greville = {
            pid: domain.patches[pid].greville_grid(self.kvs[pid]) for pid in self.pids
        }
        self._build()

    # -- construction ----------------------------------------------------

    def _offsets(self):
        offs = {}
        total = {k: 0 for k in range(self.dim + 1)}
        for pid in self.pids:
            n = self.shape[pid]
            for kind in range(self.dim + 1):
                for comp in _kind_comps(self.dim, kind):
                    size = int(np.prod(_entity_shape(n, kind, comp)))
                    offs[(pid, kind, comp)] = total[kind]
                    total[kind] += size
        return offs, total

    def _build(self):
        dom = self.domain
        self._offs, self._total = self._offsets()
        uf = {k: _SignedUnionFind(self._total[k]) for k in range(self.dim + 1)}

        pid_set = set(self.pids)
        for rec in dom.glue:
            if rec.patch_a in pid_set and rec.patch_b in pid_set:
                self._identify(uf, rec.patch_a, rec.side_a, rec.patch_b, rec.side_b, None)
        for rec in dom.periodic:
            if rec.patch_a in pid_set and rec.patch_b in pid_set:
                self._identify(
                    uf, rec.patch_a, rec.side_a, rec.patch_b, rec.side_b, rec.translation
                )

        # assign global ids in root order and store per-patch arrays
        self._gid = {}
        self._sign = {}
        self.num_entities = {}
        for k in range(self.dim + 1):
            roots = {}
            for pid in self.pids:
                for comp in _kind_comps(self.dim, k):
                    shape = _entity_shape(self.shape[pid], k, comp)
                    base = self._offs[(pid, k, comp)]
                    flat_gid = np.empty(int(np.prod(shape)), dtype=np.int64)
                    flat_sign = np.empty(int(np.prod(shape)), dtype=np.int8)
                    for flat in range(flat_gid.size):
                        root, s = uf[k].find(base + flat)
                        gid = roots.setdefault(root, len(roots))
                        flat_gid[flat] = gid
                        flat_sign[flat] = s
                    self._gid[(pid, k, comp)] = flat_gid.reshape(shape)
                    self._sign[(pid, k, comp)] = flat_sign.reshape(shape)
            self.num_entities[k] = len(roots)

        self._build_vertex_data()
        self._build_edge_data()
        self._build_masks()

    def _identify(self, uf, pa, sa, pb, sb, translation):
        axis_a, end_a = side_axis(sa)
        axis_b, end_b = side_axis(sb)
        ca = FaceChart(self.domain.patches[pa], pa, sa)
        cb = FaceChart(self.domain.patches[pb], pb, sb)
        ga = _face_slice(self._greville[pa], ca)
        gb = _face_slice(self._greville[pb], cb)
        if sorted(ga.shape[:-1]) != sorted(gb.shape[:-1]):
            raise TopologyError(
                f"glued faces ({pa}, {sa}) and ({pb}, {sb}) have different grids"
            )
        (perm, flips), _ = match_faces(ca, cb, tol=1e-10, translation=translation,
                                       grids=(ga, gb))

        tan_a, tan_b = ca.tangents, cb.tangents
        # orientation consistency: the full parametric transition must be
        # orientation preserving, otherwise one patch map is inverted
        s_n = 1 if end_a != end_b else -1
        full_perm = {axis_a: axis_b}
        sign_prod = s_n
        for k_ax in range(len(tan_a)):
            full_perm[tan_a[k_ax]] = tan_b[perm[k_ax]]
            if flips[k_ax]:
                sign_prod *= -1
        perm_list = [full_perm[a] for a in range(self.dim)]
        parity = _permutation_sign(perm_list)
        if parity * sign_prod != 1:
            raise TopologyError(
                f"glue between ({pa}, {sa}) and ({pb}, {sb}) reverses orientation"
            )

        na, nb = self.shape[pa], self.shape[pb]
        layer_a = 0 if end_a == 0 else na[axis_a] - 1
        layer_b = 0 if end_b == 0 else nb[axis_b] - 1

        def face_index_map(sizes_a, sizes_b):
            """Pairs of flat indices between two face entity grids."""
            idx_a = np.indices(sizes_a).reshape(len(sizes_a), -1)
            idx_b = np.empty_like(idx_a)
            for k_ax in range(len(sizes_a)):
                src = idx_a[k_ax]
                tgt = sizes_b[perm[k_ax]] - 1 - src if flips[k_ax] else src
                idx_b[perm[k_ax]] = tgt
            return idx_a, idx_b

        def full_multi(face_idx, axis, layer, tangents, shape):
            full = np.empty((self.dim, face_idx.shape[1]), dtype=np.int64)
            full[axis] = layer
            for k_ax, t in enumerate(tangents):
                full[t] = face_idx[k_ax]
            return np.ravel_multi_index(tuple(full), shape)

        # vertices
        sizes_a = tuple(na[t] for t in tan_a)
        sizes_b = tuple(nb[t] for t in tan_b)
        ia, ib = face_index_map(sizes_a, sizes_b)
        fa = full_multi(ia, axis_a, layer_a, tan_a, _entity_shape(na, 0, None))
        fb = full_multi(ib, axis_b, layer_b, tan_b, _entity_shape(nb, 0, None))
        base_a = self._offs[(pa, 0, None)]
        base_b = self._offs[(pb, 0, None)]
        for x, y in zip(fa, fb):
            uf[0].union(base_a + x, base_b + y, 1)

        # tangential edges, one family per face axis
        for k_ax in range(len(tan_a)):
            comp_a, comp_b = tan_a[k_ax], tan_b[perm[k_ax]]
            shape_a = _entity_shape(na, 1, comp_a)
            shape_b = _entity_shape(nb, 1, comp_b)
            sizes_a = tuple(shape_a[t] for t in tan_a)
            sizes_b = tuple(shape_b[t] for t in tan_b)
            ia, ib = face_index_map(sizes_a, sizes_b)
            fa = full_multi(ia, axis_a, layer_a, tan_a, shape_a)
            fb = full_multi(ib, axis_b, layer_b, tan_b, shape_b)
            rel = -1 if flips[k_ax] else 1
            base_a = self._offs[(pa, 1, comp_a)]
            base_b = self._offs[(pb, 1, comp_b)]
            for x, y in zip(fa, fb):
                uf[1].union(base_a + x, base_b + y, rel)

        # in-face facets (3D only), normal along the glue axis
        if self.dim == 3:
            shape_a = _entity_shape(na, 2, axis_a)
            shape_b = _entity_shape(nb, 2, axis_b)
            sizes_a = tuple(shape_a[t] for t in tan_a)
            sizes_b = tuple(shape_b[t] for t in tan_b)
            ia, ib = face_index_map(sizes_a, sizes_b)
            fa = full_multi(ia, axis_a, layer_a, tan_a, shape_a)
            fb = full_multi(ib, axis_b, layer_b, tan_b, shape_b)
            base_a = self._offs[(pa, 2, axis_a)]
            base_b = self._offs[(pb, 2, axis_b)]
            for x, y in zip(fa, fb):
                uf[2].union(base_a + x, base_b + y, s_n)

    def _build_vertex_data(self):
        coords = np.empty((self.num_entities[0], self.domain.ambient))
        seen = np.zeros(self.num_entities[0], dtype=bool)
        for pid in self.pids:
            g = self._gid[(pid, 0, None)].ravel()
            pts = self._greville[pid].reshape(-1, self.domain.ambient)
            new = ~seen[g]
            coords[g[new]] = pts[new]
            seen[g[new]] = True
        self.vertex_coords = coords

    def _build_edge_data(self):
        E = self.num_entities[1]
        endpoints = np.full((E, 2), -1, dtype=np.int64)
        owner = np.full((E, 2 + self.dim), np.iinfo(np.int64).max, dtype=np.int64)
        for pid in self.pids:
            vg = self._gid[(pid, 0, None)]
            for comp in range(self.dim):
                eg = self._gid[(pid, 1, comp)]
                es = self._sign[(pid, 1, comp)]
                shape = eg.shape
                for flat in range(eg.size):
                    idx = np.unravel_index(flat, shape)
                    g = eg[idx]
                    key = (pid, comp) + idx
                    if key < tuple(owner[g]):
                        owner[g] = key
                        tail = vg[idx]
                        head_idx = list(idx)
                        head_idx[comp] += 1
                        head = vg[tuple(head_idx)]
                        if es[idx] < 0:
                            tail, head = head, tail
                        endpoints[g] = (tail, head)
        self.edge_endpoints = endpoints
        self.edge_owner = owner

    def _build_masks(self):
        self._masks = {}
        self._interface_masks = {}
        dom = self.domain
        for k in range(self.dim + 1):
            self._masks[("dirichlet", k)] = np.zeros(self.num_entities[k], dtype=bool)
            self._masks[("neumann", k)] = np.zeros(self.num_entities[k], dtype=bool)
            self._masks[("interface", k)] = np.zeros(self.num_entities[k], dtype=bool)
        for (pid, side), tag in sorted(dom.face_tags.items()):
            if pid not in self.kvs:
                continue
            if tag == "dirichlet":
                self._tag_face(pid, side, ("dirichlet",))
            elif tag == "neumann":
                self._tag_face(pid, side, ("neumann",))
            elif isinstance(tag, tuple) and tag[0] == "interface":
                self._tag_face(pid, side, ("interface",), interface_id=tag[1])

    def _tag_face(self, pid, side, names, interface_id=None):
        axis, end = side_axis(side)
        n = self.shape[pid]
        for kind in range(self.dim + 1):
            for comp in _kind_comps(self.dim, kind):
                if kind == self.dim:
                    continue
                if kind == 1 and comp == axis:
                    continue
                if kind == 2 and self.dim == 3 and comp != axis:
                    continue
                gids = self._gid[(pid, kind, comp)]
                shape = gids.shape
                sl = [slice(None)] * self.dim
                sl[axis] = 0 if end == 0 else shape[axis] - 1
                sel = gids[tuple(sl)].ravel()
                for name in names:
                    self._masks[(name, kind)][sel] = True
                if interface_id is not None:
                    key = (interface_id, kind)
                    if key not in self._interface_masks:
                        self._interface_masks[key] = np.zeros(
                            self.num_entities[kind], dtype=bool
                        )
                    self._interface_masks[key][sel] = True

    # -- queries ---------------------------------------------------------

    def gids(self, pid, kind, comp=None):
        return self._gid[(pid, kind, comp)]

    def signs(self, pid, kind, comp=None):
        return self._sign[(pid, kind, comp)]

    def mask(self, name, kind):
        return self._masks[(name, kind)]

    def interface_mask(self, interface_id, kind):
        key = (interface_id, kind)
        if key in self._interface_masks:
            return self._interface_masks[key]
        return np.zeros(self.num_entities[kind], dtype=bool)

    @property
    def num_vertices(self):
        return self.num_entities[0]

    @property
    def num_edges(self):
        return self.num_entities[1]

    @property
    def num_faces(self):
        return self.num_entities[2] if self.dim == 3 else self.num_entities[2]

    @property
    def num_cells(self):
        return self.num_entities[self.dim]

    def euler_characteristic(self, pid):
        n = self.shape[pid]
        total = 0
        for kind in range(self.dim + 1):
            count = sum(
                int(np.prod(_entity_shape(n, kind, comp)))
                for comp in _kind_comps(self.dim, kind)
            )
            total += count if kind % 2 == 0 else -count
        return total

    def structured_edge_count(self, pid, comp):
        return int(np.prod(_entity_shape(self.shape[pid], 1, comp)))

    def face_entity_gids(self, pid, side, kind, comp=None):
        """Global ids (and signs) of the entities lying in a patch face.

        Returns ``(gids, signs)`` arrays indexed by the face grid, axes in
        increasing tangential order.
        """
        axis, end = side_axis(side)
        if kind == 1 and comp == axis:
            raise ValueError("edges along the face normal do not lie in the face")
        gids = self._gid[(pid, kind, comp)]
        signs = self._sign[(pid, kind, comp)]
        sl = [slice(None)] * self.dim
        sl[axis] = 0 if end == 0 else gids.shape[axis] - 1
        return gids[tuple(sl)], signs[tuple(sl)]

    def interface_faces(self, interface_id, role="dependent"):
        """Faces of an interface present in this mesh, sorted by patch."""
        out = []
        for rec in self.domain.interface_records(interface_id):
            face = rec.dependent if role == "dependent" else rec.independent
            if face is not None and face[0] in self.kvs and face not in out:
                out.append(face)
        return sorted(out)

    def interface_internal_vertices(self, interface_id):
        """Vertices interior to the interface where three or more of its
        faces meet; these carry the multiplier enrichment."""
        count = {}
        for pid, side in self.interface_faces(interface_id, "dependent"):
            vg, _ = self.face_entity_gids(pid, side, 0)
            corners = vg[tuple(np.meshgrid(*[(0, -1)] * vg.ndim, indexing="ij"))].ravel()
            for g in corners:
                count[int(g)] = count.get(int(g), 0) + 1
        return np.array(sorted(g for g, c in count.items() if c >= 3), dtype=np.int64)


def _permutation_sign(perm):
    sign = 1
    perm = list(perm)
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            sign = -sign
    return sign


def extract_control_mesh(
    domain: MultiPatchDomain,
    degree=None,
    spans=None,
    multiplicity=1,
    subdomain=None,
) -> ControlMesh:
    """Build the identified control mesh of a (sub)domain.

    With ``degree`` and ``spans`` given, every patch and direction uses a
    uniform open knot vector with interior knots of the given multiplicity
    (the discretization grid).  Without them the geometry's own knot
    vectors are used.
    """
    pids = domain.subdomain_patches(subdomain)
    kvs_per_patch = {}
    for pid in pids:
        patch = domain.patches[pid]
        if degree is None:
            kvs_per_patch[pid] = patch.kvs
        else:
            kv = uniform_open_knots(degree, spans, multiplicity)
            kvs_per_patch[pid] = (kv,) * patch.dim
    return ControlMesh(domain, kvs_per_patch, pids)

"""Quadrature, element loops and interface coupling.

Volume operators (curl-curl stiffness, vector mass, load) are assembled
per patch with Gauss quadrature on every knot span and the usual
push-forwards: scalar composition for 0-forms, covariant for the
curl-conforming space, contravariant over the Jacobian determinant for
fluxes.  Interface operators pair tangential traces with div-conforming
multiplier functions; that pairing is metric free in parametric
coordinates, which keeps non-matching quadrature simple and exact.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError
from .geometry import FaceChart, InterfaceRecord, MultiPatchDomain
from .mesh import ControlMesh
from .spaces import DiscreteSpace
from .splines import ReducedKnotVector, TensorBasis

__all__ = [
    "QuadratureRule",
    "MultiplierSpace",
    "assemble_curlcurl",
    "assemble_mass",
    "assemble_load",
    "build_multiplier",
    "assemble_coupling",
    "multiplier_gram",
    "evaluate_field",
    "export_triplets",
]


def gauss_on_spans(breaks, npts):
    """Gauss points and weights per span: arrays shaped (nspans, npts)."""
    xg, wg = np.polynomial.legendre.leggauss(npts)
    lo = breaks[:-1][:, None]
    hi = breaks[1:][:, None]
    pts = 0.5 * (hi - lo) * (xg + 1.0) + lo
    wts = 0.5 * (hi - lo) * np.broadcast_to(wg, pts.shape)
    return pts, wts


class QuadratureRule:
    """Tensor Gauss rule on the knot spans of a patch discretization.

    ``npts`` Gauss points per direction and span are exact for polynomial
    degree 2*npts - 1, at least 2p + 1 for the default npts = p + 1.
    """

    def __init__(self, breaks_per_dir, npts):
        self.npts = npts
        self.points = []
        self.weights = []
        for breaks in breaks_per_dir:
            p, w = gauss_on_spans(np.asarray(breaks, dtype=float), npts)
            self.points.append(p)
            self.weights.append(w)

    @property
    def num_spans(self):
        return tuple(p.shape[0] for p in self.points)


def _material(fun, x, vector=False):
    if callable(fun):
        out = np.asarray(fun(x), dtype=float)
        return out
    if vector:
        return np.broadcast_to(np.asarray(fun, dtype=float), x.shape)
    return np.full(x.shape[:-1], float(fun))


class _PatchWork:
    """Per-patch tabulation shared by the volume assembly loops."""

    def __init__(self, space: DiscreteSpace, pid: int, npts: int):
        domain = space.domain
        mesh = space.mesh
        self.space = space
        self.pid = pid
        self.dim = domain.dim
        kvs = mesh.kvs[pid]
        breaks = [kv.breaks for kv in kvs]
        for comp in space.components:
            for d, b in enumerate(space.basis(pid, comp).bases):
                assert np.array_equal(b.breaks, breaks[d])
        self.rule = QuadratureRule(breaks, npts)
        self.q = npts
        self.nspans = self.rule.num_spans
        flat_pts = [p.ravel() for p in self.rule.points]
        self.x, self.jac = domain.patches[pid].evaluate_grid(flat_pts)
        if domain.ambient != domain.dim:
            raise AssemblyError("volume assembly needs patches of full ambient dimension")
        self.det = np.linalg.det(self.jac)
        if np.any(self.det <= 0):
            bad = np.argwhere(self.det <= 0)[0]
            raise AssemblyError(
                f"singular Jacobian in patch {pid} near quadrature index {tuple(bad)}"
            )
        self.jac_inv_t = np.swapaxes(np.linalg.inv(self.jac), -1, -2)
        # univariate tables: full and reduced values/derivatives per direction
        self.tabs = {}
        for d, kv in enumerate(kvs):
            tb = TensorBasis(kvs)
            first, table = tb.tabulate(d, flat_pts[d], nders=1)
            self.tabs[("full", d)] = (first, table)
            rb = TensorBasis([ReducedKnotVector(kv) for kv in kvs])
            first_r, table_r = rb.tabulate(d, flat_pts[d], nders=1)
            self.tabs[("red", d)] = (first_r, table_r)
        self.weights = [w.ravel() for w in self.rule.weights]

    def span_slices(self, span):
        return tuple(slice(s * self.q, (s + 1) * self.q) for s in span)

    def local_tables(self, comp, span):
        """Value and derivative factor matrices (q, order) per direction."""
        vals, ders, firsts = [], [], []
        for d in range(self.dim):
            kind = "red" if self._is_reduced(comp, d) else "full"
            first, table = self.tabs[(kind, d)]
            sl = slice(span[d] * self.q, (span[d] + 1) * self.q)
            vals.append(table[sl, 0, :])
            ders.append(table[sl, 1, :])
            firsts.append(int(first[span[d] * self.q]))
        return vals, ders, firsts

    def _is_reduced(self, comp, direction):
        k = self.space.form_degree
        if k == 0:
            return False
        if k == 1:
            return direction == comp
        if k == 2 and self.dim == 3:
            return direction != comp
        return True

    def element_dofs(self, comp, firsts, orders):
        g = self.space.gid_array(self.pid, comp)
        s = self.space.sign_array(self.pid, comp)
        ix = np.ix_(*[range(f, f + o) for f, o in zip(firsts, orders)])
        return g[ix].ravel(), s[ix].ravel().astype(float)


def _factor_product(factors):
    """Tensor product of per-direction factor matrices.

    factors[d] has shape (q_d, o_d); result is (q_1*..*q_d, o_1*..*o_d).
    """
    if len(factors) == 2:
        out = np.einsum("qa,rb->qrab", factors[0], factors[1])
        q = factors[0].shape[0] * factors[1].shape[0]
        return out.reshape(q, -1)
    out = np.einsum("qa,rb,sc->qrsabc", factors[0], factors[1], factors[2])
    q = factors[0].shape[0] * factors[1].shape[0] * factors[2].shape[0]
    return out.reshape(q, -1)


_EPS3 = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _EPS3[_i, _j, _k] = 1.0
    _EPS3[_i, _k, _j] = -1.0


class _K1ElementData:
    """Physical values and curls of all active H(curl) functions on one element."""

    def __init__(self, work: _PatchWork, span):
        dim = work.dim
        sl = work.span_slices(span)
        grid_idx = np.ix_(*[np.arange(s.start, s.stop) for s in sl])
        self.x = work.x[grid_idx].reshape(-1, work.space.domain.ambient)
        jac = work.jac[grid_idx].reshape(-1, dim, dim)
        self.det = work.det[grid_idx].reshape(-1)
        jac_inv_t = work.jac_inv_t[grid_idx].reshape(-1, dim, dim)
        wq = work.weights[0][sl[0]]
        for d in range(1, dim):
            wq = np.multiply.outer(wq, work.weights[d][sl[d]])
        self.wq = wq.reshape(-1)

        vals_phys = []
        curls_param = []
        dofs = []
        signs = []
        for comp in work.space.components:
            vals, ders, firsts = work.local_tables(comp, span)
            orders = [v.shape[1] for v in vals]
            value = _factor_product(vals)  # (Q, nloc)
            nloc = value.shape[1]
            dof, sign = work.element_dofs(comp, firsts, orders)
            dofs.append(dof)
            signs.append(sign)
            # parametric vector value: component `comp` only
            v_param = np.zeros((value.shape[0], dim, nloc))
            v_param[:, comp, :] = value
            vals_phys.append(np.einsum("qij,qjn->qin", jac_inv_t, v_param))
            if dim == 3:
                c_param = np.zeros((value.shape[0], 3, nloc))
                for c in range(3):
                    if c == comp:
                        continue
                    a = 3 - c - comp
                    factors = [ders[d] if d == a else vals[d] for d in range(3)]
                    c_param[:, c, :] = _EPS3[c, a, comp] * _factor_product(factors)
                curls_param.append(np.einsum("qij,qjn->qin", jac, c_param))
            else:
                a = 1 - comp
                sign_c = 1.0 if comp == 1 else -1.0
                factors = [ders[d] if d == a else vals[d] for d in range(2)]
                curls_param.append(sign_c * _factor_product(factors))
        self.value = np.concatenate(vals_phys, axis=2)
        axis = 2 if dim == 3 else 1
        self.curl = np.concatenate(curls_param, axis=axis)
        self.dofs = np.concatenate(dofs)
        self.signs = np.concatenate(signs)


def _scatter(rows, cols, vals, local, dofs, signs):
    # element blocks are symmetric up to summation order; make them exact
    local = 0.5 * (local + local.T)
    block = local * np.outer(signs, signs)
    r = np.repeat(dofs, len(dofs))
    c = np.tile(dofs, len(dofs))
    rows.append(r)
    cols.append(c)
    vals.append(block.ravel())


def _sweep_k1(space: DiscreteSpace, npts, element_cb):
    for pid in space.pids:
        work = _PatchWork(space, pid, npts)
        for span in np.ndindex(*work.nspans):
            element_cb(_K1ElementData(work, span))


def assemble_curlcurl(space1: DiscreteSpace, domain: MultiPatchDomain, nu=1.0,
                      npts: int | None = None) -> sp.csr_matrix:
    """Stiffness of the curl-curl operator with reluctivity nu."""
    npts = npts or space1.degree + 1
    rows, cols, vals = [], [], []

    def element(el):
        w = el.wq * _material(nu, el.x) / el.det
        if space1.domain.dim == 3:
            local = np.einsum("qim,qin,q->mn", el.curl, el.curl, w)
        else:
            local = np.einsum("qm,qn,q->mn", el.curl, el.curl, w)
        _scatter(rows, cols, vals, local, el.dofs, el.signs)

    _sweep_k1(space1, npts, element)
    return _symmetric_csr(rows, cols, vals, space1.dim)


def assemble_mass(space1: DiscreteSpace, domain: MultiPatchDomain, eps=1.0,
                  npts: int | None = None) -> sp.csr_matrix:
    """Vector mass matrix with permittivity eps."""
    npts = npts or space1.degree + 1
    rows, cols, vals = [], [], []

    def element(el):
        w = el.wq * _material(eps, el.x) * el.det
        local = np.einsum("qim,qin,q->mn", el.value, el.value, w)
        _scatter(rows, cols, vals, local, el.dofs, el.signs)

    _sweep_k1(space1, npts, element)
    return _symmetric_csr(rows, cols, vals, space1.dim)


def _symmetric_csr(rows, cols, vals, n):
    """Sum COO triplets and enforce exact symmetry of the result.

    Duplicate summation order is not reproducible across transposed index
    pairs, so matching entries of the assembled operator can differ by one
    ulp; averaging with the transpose restores exact symmetry.
    """
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    return (mat + mat.T) * 0.5


def assemble_load(space1: DiscreteSpace, domain: MultiPatchDomain, j_src=None,
                  m_mag=None, npts: int | None = None) -> np.ndarray:
    """Load vector of a source current and a magnetisation.

    The magnetisation enters through the curl of the test function, so the
    data never needs to be differentiated.
    """
    npts = npts or space1.degree + 1
    out = np.zeros(space1.dim)

    def element(el):
        f = np.zeros(len(el.dofs))
        if j_src is not None:
            jv = _material(j_src, el.x, vector=True)
            f += np.einsum("qi,qin,q->n", jv, el.value, el.wq * el.det)
        if m_mag is not None:
            mv = _material(m_mag, el.x, vector=True)
            if space1.domain.dim == 3:
                f += np.einsum("qi,qin,q->n", mv, el.curl, el.wq)
            else:
                f += np.einsum("q,qn,q->n", mv, el.curl, el.wq)
        np.add.at(out, el.dofs, f * el.signs)

    _sweep_k1(space1, npts, element)
    return out


# ---------------------------------------------------------------------------
# field evaluation
# ---------------------------------------------------------------------------


def _collocation(basis, direction, pts, der=0):
    b = basis.bases[direction]
    first, table = basis.tabulate(direction, pts, nders=der)
    mat = np.zeros((len(pts), b.num_basis))
    for i in range(len(pts)):
        mat[i, first[i]: first[i] + b.order] = table[i, der]
    return mat


def evaluate_field(space1: DiscreteSpace, coeffs, pid, pts_per_dir):
    """Physical point grid, field value and curl of an H(curl) coefficient vector."""
    domain = space1.domain
    dim = domain.dim
    pts_per_dir = [np.asarray(p, dtype=float).ravel() for p in pts_per_dir]
    x, jac = domain.patches[pid].evaluate_grid(pts_per_dir)
    det = np.linalg.det(jac)
    jac_inv_t = np.swapaxes(np.linalg.inv(jac), -1, -2)
    grid = x.shape[:-1]
    value_param = np.zeros(grid + (dim,))
    if dim == 3:
        curl_param = np.zeros(grid + (3,))
    else:
        curl_param = np.zeros(grid)
    for comp in space1.components:
        basis = space1.basis(pid, comp)
        cloc = space1.local_coefficients(coeffs, pid, comp)
        mats_v = [_collocation(basis, d, pts_per_dir[d]) for d in range(dim)]
        mats_d = [_collocation(basis, d, pts_per_dir[d], der=1) for d in range(dim)]

        def contract(mats):
            out = cloc
            for d, m in enumerate(mats):
                out = np.moveaxis(np.tensordot(m, out, axes=(1, d)), 0, d)
            return out

        value_param[..., comp] = contract(mats_v)
        if dim == 3:
            for c in range(3):
                if c == comp:
                    continue
                a = 3 - c - comp
                mats = [mats_d[d] if d == a else mats_v[d] for d in range(3)]
                curl_param[..., c] += _EPS3[c, a, comp] * contract(mats)
        else:
            a = 1 - comp
            sign_c = 1.0 if comp == 1 else -1.0
            mats = [mats_d[d] if d == a else mats_v[d] for d in range(2)]
            curl_param += sign_c * contract(mats)
    value = np.einsum("...ij,...j->...i", jac_inv_t, value_param)
    if dim == 3:
        curl = np.einsum("...ij,...j->...i", jac, curl_param) / det[..., None]
    else:
        curl = curl_param / det
    return x, value, curl


# ---------------------------------------------------------------------------
# multiplier spaces and interface coupling
# ---------------------------------------------------------------------------


class _MultiplierFace:
    def __init__(self, mesh: ControlMesh, pid, side, offset):
        self.chart = FaceChart(mesh.domain.patches[pid], pid, side)
        self.pid = pid
        self.side = side
        kvs = mesh.kvs[pid]
        t1, t2 = self.chart.tangents
        r1, r2 = ReducedKnotVector(kvs[t1]), ReducedKnotVector(kvs[t2])
        rr1, rr2 = ReducedKnotVector(r1), ReducedKnotVector(r2)
        # div-conforming layout one degree below the field space
        self.comps = (TensorBasis([r1, rr2]), TensorBasis([rr1, r2]))
        self.offset = offset
        self.breaks = [np.asarray(kvs[t1].breaks), np.asarray(kvs[t2].breaks)]

    @property
    def dim(self):
        return sum(c.dim for c in self.comps)


class _Enrichment:
    def __init__(self, vertex_gid, entries):
        self.vertex_gid = vertex_gid
        # entries: list of (face_index, (iu, iv)) corner index per adjacent face
        self.entries = entries


class MultiplierSpace:
    """Per-face div-conforming multiplier, optionally gradient enriched.

    The standard block lives on the dependent interface faces with the
    dependent knots at one degree lower and is not glued across faces.
    The enrichment appends the surface gradients of the scalar basis
    functions sitting on interface-internal vertices; each of those spans
    all faces around its vertex.
    """

    def __init__(self, mesh: ControlMesh, interface_id=0, enriched=False):
        self.mesh = mesh
        self.interface_id = interface_id
        self.enriched = enriched
        self.faces = []
        offset = 0
        for pid, side in mesh.interface_faces(interface_id, "dependent"):
            face = _MultiplierFace(mesh, pid, side, offset)
            offset += face.dim
            self.faces.append(face)
        self.standard_dim = offset
        self.enrichment = []
        if enriched:
            z = mesh.interface_internal_vertices(interface_id)
            for g in z:
                entries = []
                for f_idx, face in enumerate(self.faces):
                    vg, _ = mesh.face_entity_gids(face.pid, face.side, 0)
                    hits = np.argwhere(vg == g)
                    for iu, iv in hits:
                        if (iu in (0, vg.shape[0] - 1)) and (iv in (0, vg.shape[1] - 1)):
                            entries.append((f_idx, (int(iu), int(iv))))
                if entries:
                    self.enrichment.append(_Enrichment(int(g), entries))

    @property
    def dim(self):
        return self.standard_dim + len(self.enrichment)

    @property
    def num_internal_vertices(self):
        return len(self.enrichment)

    def face_rows(self, f_idx):
        face = self.faces[f_idx]
        return np.arange(face.offset, face.offset + face.dim)


def build_multiplier(domain: MultiPatchDomain, dep_space: DiscreteSpace,
                     interface_id=0, enriched=False) -> MultiplierSpace:
    """Multiplier space on the dependent side of an interface."""
    return MultiplierSpace(dep_space.mesh, interface_id, enriched)


def _merged_breaks(face: _MultiplierFace, rec: InterfaceRecord | None, indep_breaks=None):
    """Per-direction quadrature breakpoints on the dependent face.

    With a record given, the independent side's breakpoints are pulled
    back through the affine map, wrap seams are added, and the result is
    clipped to the overlap of the two faces.
    """
    out = []
    for k in range(2):
        b = set(np.round(face.breaks[k], 14))
        lo, hi = 0.0, 1.0
        if rec is not None:
            off = rec.offset[k]
            period = rec.wrap[k]
            ib = np.asarray(indep_breaks[k], dtype=float)
            if rec.flip[k]:
                ib = 1.0 - ib[::-1]
            if period:
                # candidate preimages of independent breaks in [0, 1]
                base = ib - off
                for shift in range(-3, 4):
                    for v in base + shift * period:
                        if -1e-12 < v < 1 + 1e-12:
                            b.add(float(np.round(v, 14)))
            else:
                lo = max(lo, -off)
                hi = min(hi, 1.0 - off)
                if hi <= lo + 1e-12:
                    return None
                for v in ib - off:
                    if lo - 1e-12 < v < hi + 1e-12:
                        b.add(float(np.round(v, 14)))
        b.add(float(np.round(lo, 14)))
        b.add(float(np.round(hi, 14)))
        arr = np.array(sorted(x for x in b if lo - 1e-12 <= x <= hi + 1e-12))
        keep = np.concatenate([[True], np.diff(arr) > 1e-12])
        out.append(arr[keep])
    return out


def _face_values(tb: TensorBasis, pts_u, pts_v, der=(0, 0)):
    mu = _collocation(tb, 0, pts_u, der=der[0])
    mv = _collocation(tb, 1, pts_v, der=der[1])
    return mu, mv


def _metric(chart: FaceChart, pts_u, pts_v):
    _, js = chart.evaluate_grid([pts_u, pts_v])
    g = np.einsum("...ij,...ik->...jk", js, js)
    detg = np.linalg.det(g)
    sqrtg = np.sqrt(detg)
    ginv = np.linalg.inv(g)
    return g, ginv, sqrtg


class _TraceTables:
    """Collocation tables of the tangential trace of an H(curl) space."""

    def __init__(self, space: DiscreteSpace, pid, side, pts_u, pts_v):
        self.space = space
        chart = FaceChart(space.domain.patches[pid], pid, side)
        self.tangents = chart.tangents
        mesh = space.mesh
        self.gids = []
        self.signs = []
        self.mats = []
        kvs = mesh.kvs[pid]
        for t in self.tangents:
            g, s = mesh.face_entity_gids(pid, side, 1, t)
            self.gids.append(g)
            self.signs.append(s)
        t1, t2 = self.tangents
        comp_bases = (
            TensorBasis([ReducedKnotVector(kvs[t1]), kvs[t2]]),
            TensorBasis([kvs[t1], ReducedKnotVector(kvs[t2])]),
        )
        for tb in comp_bases:
            self.mats.append(_face_values(tb, pts_u, pts_v))

    def component(self, k):
        """(npts_u, npts_v, n_u, n_v) value tensor and dof arrays."""
        mu, mv = self.mats[k]
        vals = np.einsum("ua,vb->uvab", mu, mv)
        return vals, self.gids[k], self.signs[k]


def assemble_coupling(space_dep: DiscreteSpace, space_indep: DiscreteSpace | None,
                      multiplier: MultiplierSpace, interface_id=0,
                      npts: int | None = None):
    """Interface pairing matrices of both subdomains with the multiplier.

    Returns ``(G_dep, G_indep)``; the dependent block carries a minus
    sign, the independent block a plus sign, matching the weak-continuity
    equation.  ``G_indep`` is None for one-sided interfaces.
    """
    mesh = multiplier.mesh
    npts = npts or space_dep.degree + 3
    m = multiplier.dim
    acc_dep = _CooAccumulator((m, space_dep.dim))
    for f_idx, face in enumerate(multiplier.faces):
        breaks = _merged_breaks(face, None)
        _accumulate_face(
            acc_dep, multiplier, f_idx, space_dep, (face.pid, face.side),
            breaks, npts, sign=-1.0, par_map=None,
        )
    g_indep = None
    if space_indep is not None:
        acc_ind = _CooAccumulator((m, space_indep.dim))
        recs = [r for r in mesh.domain.interface_records(interface_id) if r.independent]
        for rec in recs:
            f_idx = next(
                i for i, f in enumerate(multiplier.faces)
                if (f.pid, f.side) == tuple(rec.dependent)
            )
            face = multiplier.faces[f_idx]
            ip, iside = rec.independent
            ichart = FaceChart(space_indep.domain.patches[ip], ip, iside)
            ikvs = space_indep.mesh.kvs[ip]
            indep_breaks = [ikvs[t].breaks for t in ichart.tangents]
            breaks = _merged_breaks(face, rec, indep_breaks)
            if breaks is None:
                continue
            _accumulate_face(
                acc_ind, multiplier, f_idx, space_indep, rec.independent,
                breaks, npts, sign=+1.0, par_map=rec,
            )
        g_indep = acc_ind.tocsr()
    return acc_dep.tocsr(), g_indep


def _map_points(rec: InterfaceRecord, k, pts):
    """Dependent face coordinates to independent ones along one direction."""
    e = pts + rec.offset[k]
    if rec.wrap[k]:
        e = e - np.floor(e / rec.wrap[k]) * rec.wrap[k]
    if rec.flip[k]:
        e = 1.0 - e
    return e


def _accumulate_face(gmat, multiplier: MultiplierSpace, f_idx, space, face_key,
                     breaks, npts, sign, par_map):
    """Add one face's (or face pair's) pairing integrals into gmat."""
    face = multiplier.faces[f_idx]
    pid, side = face_key
    pu, wu = gauss_on_spans(breaks[0], npts)
    pv, wv = gauss_on_spans(breaks[1], npts)
    pts_u, wts_u = pu.ravel(), wu.ravel()
    pts_v, wts_v = pv.ravel(), wv.ravel()

    if par_map is None:
        trace_u, trace_v = pts_u, pts_v
        flip_sign = (1.0, 1.0)
    else:
        trace_u = _map_points(par_map, 0, pts_u)
        trace_v = _map_points(par_map, 1, pts_v)
        flip_sign = tuple(-1.0 if f else 1.0 for f in par_map.flip)

    trace = _TraceTables(space, pid, side, trace_u, trace_v)
    wgrid = np.multiply.outer(wts_u, wts_v)

    # standard rows: metric-free pairing of trace and multiplier components
    row0 = face.offset
    for k in range(2):
        mult_u, mult_v = _face_values(face.comps[k], pts_u, pts_v)
        tvals, tg, ts = trace.component(k)
        local = np.einsum("ua,vb,uvcd,uv->abcd", mult_u, mult_v, tvals, wgrid)
        nm = face.comps[k].shape
        local = local.reshape(nm[0] * nm[1], -1) * flip_sign[k]
        rows = np.arange(row0, row0 + local.shape[0])
        gmat.add(rows, tg.ravel(), ts.ravel().astype(float), sign * local)
        row0 += local.shape[0]

    # enrichment rows: surface gradient of interface-vertex functions,
    # always expressed in the dependent face's chart and scalar basis
    if multiplier.enrichment:
        _, ginv, sqrtg = _metric(face.chart, pts_u, pts_v)
        weight = ginv * sqrtg[..., None, None] * wgrid[..., None, None]
        kvs = multiplier.mesh.kvs[face.pid]
        t1, t2 = face.chart.tangents
        scalar = TensorBasis([kvs[t1], kvs[t2]])
        su_v = _collocation(scalar, 0, pts_u)
        su_d = _collocation(scalar, 0, pts_u, der=1)
        sv_v = _collocation(scalar, 1, pts_v)
        sv_d = _collocation(scalar, 1, pts_v, der=1)
        for e_idx, enr in enumerate(multiplier.enrichment):
            for fi, (iu, iv) in enr.entries:
                if fi != f_idx:
                    continue
                grad = np.stack(
                    [
                        np.multiply.outer(su_d[:, iu], sv_v[:, iv]),
                        np.multiply.outer(su_v[:, iu], sv_d[:, iv]),
                    ],
                    axis=-1,
                )
                for k in range(2):
                    tvals, tg, ts = trace.component(k)
                    integ = np.einsum("uvij,uvj->uvi", weight, grad)[..., k]
                    local = np.einsum("uv,uvcd->cd", integ, tvals).ravel() * flip_sign[k]
                    row = multiplier.standard_dim + e_idx
                    gmat.add(
                        np.array([row]), tg.ravel(), ts.ravel().astype(float),
                        sign * local[None, :],
                    )


class _CooAccumulator:
    def __init__(self, shape):
        self.shape = shape
        self.rows = []
        self.cols = []
        self.vals = []

    def add(self, rows, col_gids, col_signs, block):
        vals = block * col_signs[None, :]
        r = np.repeat(rows, len(col_gids))
        c = np.tile(col_gids, len(rows))
        self.rows.append(r)
        self.cols.append(c)
        self.vals.append(vals.ravel())

    def tocsr(self):
        if not self.rows:
            return sp.csr_matrix(self.shape)
        m = sp.coo_matrix(
            (np.concatenate(self.vals),
             (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=self.shape,
        ).tocsr()
        m.sum_duplicates()
        m.data[np.abs(m.data) < 1e-300] = 0.0
        m.eliminate_zeros()
        return m


def multiplier_gram(multiplier: MultiplierSpace, npts: int | None = None) -> np.ndarray:
    """Surface L2 Gram matrix of the multiplier space (dense)."""
    m = multiplier.dim
    p = multiplier.mesh.kvs[multiplier.faces[0].pid][0].degree
    npts = npts or p + 3
    out = np.zeros((m, m))
    for f_idx, face in enumerate(multiplier.faces):
        breaks = _merged_breaks(face, None)
        pu, wu = gauss_on_spans(breaks[0], npts)
        pv, wv = gauss_on_spans(breaks[1], npts)
        pts_u, wts_u = pu.ravel(), wu.ravel()
        pts_v, wts_v = pv.ravel(), wv.ravel()
        wgrid = np.multiply.outer(wts_u, wts_v)
        g, ginv, sqrtg = _metric(face.chart, pts_u, pts_v)

        # component value tensors of the standard block, as surface vectors
        comp_tables = []
        row0 = face.offset
        for k in range(2):
            mu, mv = _face_values(face.comps[k], pts_u, pts_v)
            vals = np.einsum("ua,vb->uvab", mu, mv)
            nm = face.comps[k].shape
            comp_tables.append((k, row0, vals.reshape(vals.shape[0], vals.shape[1], -1)))
            row0 += nm[0] * nm[1]

        # contravariant-contravariant: integrand mu^T g nu / sqrt(g)
        for (ka, ra, va) in comp_tables:
            for (kb, rb, vb) in comp_tables:
                wk = g[..., ka, kb] / sqrtg * wgrid
                block = np.einsum("uvm,uvn,uv->mn", va, vb, wk)
                out[ra: ra + va.shape[2], rb: rb + vb.shape[2]] += block

        if multiplier.enrichment:
            kvs = multiplier.mesh.kvs[face.pid]
            t1, t2 = face.chart.tangents
            scalar = TensorBasis([kvs[t1], kvs[t2]])
            su_v = _collocation(scalar, 0, pts_u)
            su_d = _collocation(scalar, 0, pts_u, der=1)
            sv_v = _collocation(scalar, 1, pts_v)
            sv_d = _collocation(scalar, 1, pts_v, der=1)
            grads = {}
            for e_idx, enr in enumerate(multiplier.enrichment):
                for fi, (iu, iv) in enr.entries:
                    if fi != f_idx:
                        continue
                    grads[e_idx] = np.stack(
                        [
                            np.multiply.outer(su_d[:, iu], sv_v[:, iv]),
                            np.multiply.outer(su_v[:, iu], sv_d[:, iv]),
                        ],
                        axis=-1,
                    )
            # covariant-covariant and mixed terms
            for ea, ga_ in grads.items():
                ra = multiplier.standard_dim + ea
                for eb, gb_ in grads.items():
                    rb = multiplier.standard_dim + eb
                    val = np.einsum("uvi,uvij,uvj,uv->", ga_, ginv, gb_, sqrtg * wgrid)
                    out[ra, rb] += val
                for (kb, rblk, vb) in comp_tables:
                    val = np.einsum("uv,uvn,uv->n", ga_[..., kb], vb, wgrid)
                    out[ra, rblk: rblk + vb.shape[2]] += val
                    out[rblk: rblk + vb.shape[2], ra] += val
    return out


def export_triplets(matrix, path):
    """Write a sparse matrix as 'row col value' text lines."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")

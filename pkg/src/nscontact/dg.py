"""Interface segments and discontinuous-Galerkin stabilization terms.

The stabilization subtracts the weighted residual of the interface tractions
so that, on a non-conforming interface, equilibrium of tractions is enforced
between the two element traces (total-Lagrangian form, first Piola stress P
and material normals):

    + 1/2 int_{A+} P N+ . (w+ - w-) dA  +  1/2 int_{A-} P N- . (w- - w+) dA

Both integrals collapse onto a shared 1D quadrature with per-side material
measures; with N+ = -N- the combined contribution at one quadrature point is
the *average* traction acting on the *jump* of the test functions, which
vanishes identically when the test space is continuous across the segment
and exactly cancels the element boundary terms of a constant-stress state
(hence the patch test passes to machine precision).

For contact interfaces only the normal components are stabilized: traction
and test jump are both projected on the current interface normal, leaving
tangential sliding free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import elements as el
from .assembly import _normal_orientation
from .quadrature import gauss_1d


@dataclass
class SegmentSide:
    elem: int
    face: tuple       # (axis, value)
    s_range: tuple    # face parameters of the segment endpoints


@dataclass
class InterfaceSegment:
    plus: SegmentSide
    minus: SegmentSide
    ends: np.ndarray          # (2, 2) segment endpoints (frame of detection)
    npts: int = 3
    arc0: float = 0.0         # arc-length offset for stress-trace export

    def length(self):
        return float(np.hypot(*(self.ends[1] - self.ends[0])))


def _edge_endpoints(mesh, e, face, d=None):
    coords = mesh.element_X(e) if d is None else mesh.element_x(e, d)
    topo = mesh.topologies[e]
    a = el.map_to_physical(topo, el.face_point(face[0], face[1], -1.0), coords)
    b = el.map_to_physical(topo, el.face_point(face[0], face[1], 1.0), coords)
    return a, b


def detect_interface_segments(mesh, set_plus, set_minus, tol=1e-9, npts=3, d=None,
                              proximity=None):
    """Pairwise 1D overlap of two edge sets (material frame by default).

    Edges are assumed straight (mid-edge nodes at geometric midpoints), so
    the face parameter varies affinely along each edge.  Raises when the two
    sets' common extent is not covered exactly once within ``tol``.
    Passing ``d`` builds segments in the displaced configuration (contact);
    ``proximity`` then skips edge pairs farther apart than that distance
    instead of raising.
    """
    edges_p = mesh.edge_sets[set_plus]
    edges_m = mesh.edge_sets[set_minus]
    ref_a, ref_b = _edge_endpoints(mesh, *edges_p[0], d=d)
    u = ref_b - ref_a
    L = np.hypot(*u)
    if L <= 0:
        raise ValueError("degenerate reference edge")
    u = u / L
    nvec = np.array([-u[1], u[0]])
    scale = max(mesh.element_diameter(e) for e, _ in list(edges_p) + list(edges_m))
    line_tol = proximity if proximity is not None else tol * scale + 1e-14

    def interval(e, face):
        a, b = _edge_endpoints(mesh, e, face, d=d)
        off = max(abs((a - ref_a) @ nvec), abs((b - ref_a) @ nvec))
        return (a - ref_a) @ u, (b - ref_a) @ u, off

    segments = []
    covered = 0.0
    for ep, fp in edges_p:
        ta0, ta1, offa = interval(ep, fp)
        if offa > line_tol:
            raise ValueError(f"edge ({ep}, {fp}) lies {offa:.2e} off the interface line")
        for em, fm in edges_m:
            tb0, tb1, offb = interval(em, fm)
            if offb > line_tol:
                if proximity is not None:
                    continue
                raise ValueError(f"edge ({em}, {fm}) lies {offb:.2e} off the interface line")
            lo = max(min(ta0, ta1), min(tb0, tb1))
            hi = min(max(ta0, ta1), max(tb0, tb1))
            if hi - lo <= tol * scale:
                continue

            def s_of(t, t0, t1):
                return -1.0 + 2.0 * (t - t0) / (t1 - t0)

            sp = (s_of(lo, ta0, ta1), s_of(hi, ta0, ta1))
            sm = (s_of(lo, tb0, tb1), s_of(hi, tb0, tb1))
            ends = np.array([ref_a + lo * u, ref_a + hi * u])
            segments.append(InterfaceSegment(
                SegmentSide(ep, fp, sp), SegmentSide(em, fm, sm), ends, npts, arc0=lo,
            ))
            covered += hi - lo
    if proximity is None:
        ap = [interval(e, f)[:2] for e, f in edges_p]
        am = [interval(e, f)[:2] for e, f in edges_m]
        lo = max(min(min(t) for t in ap), min(min(t) for t in am))
        hi = min(max(max(t) for t in ap), max(max(t) for t in am))
        expect = max(0.0, hi - lo)
        if abs(covered - expect) > tol * max(scale, expect):
            raise ValueError(
                f"interface coverage {covered:.12g} != common extent {expect:.12g}"
            )
    return segments


# ---------------------------------------------------------------------------
# Stabilization integrals
# ---------------------------------------------------------------------------

@dataclass
class _SideEval:
    dofs: np.ndarray
    N: np.ndarray
    gradX: np.ndarray
    P: np.ndarray
    A: np.ndarray
    measure: float        # dA/dxi (material)
    tau_cur: np.ndarray   # current face tangent


def _eval_side(mesh, dofmap, d, side, xi, model, want_tangent):
    e = side.elem
    topo = mesh.topologies[e]
    axis, value = side.face
    s0, s1 = side.s_range
    s = 0.5 * (s0 + s1) + 0.5 * (s1 - s0) * xi
    z = el.face_point(axis, value, s)
    Xe = mesh.element_X(e)
    de = dofmap.gather(d, mesh.conn[e])
    N = el.shape_eval(topo, z)
    dN = el.shape_grad(topo, z)
    J = Xe.T @ dN
    gradX = dN @ np.linalg.inv(J)
    G = de.T @ gradX
    tauX = dN[:, 1 - axis] @ Xe
    measure = np.hypot(*tauX) * 0.5 * abs(s1 - s0)
    tau_cur = dN[:, 1 - axis] @ (Xe + de)
    P = model.piola_G(G)
    A = model.tangent_G(G) if want_tangent else None
    return _SideEval(dofmap.elem_dofs(e), N, gradX, P, A, measure, tau_cur), s


def _material_normal(mesh, side_minus, s):
    e = side_minus.elem
    axis, value = side_minus.face
    z = el.face_point(axis, value, s)
    tau = el.shape_grad(mesh.topologies[e], z)[:, 1 - axis] @ mesh.element_X(e)
    nrm = _normal_orientation(axis, value) * np.array([tau[1], -tau[0]])
    return nrm / np.hypot(*nrm)


def stabilization_terms(mesh, dofmap, d, material_of, segments, normal_only=False,
                        want_tangent=True):
    """Global residual vector and tangent COO triplets of the DG terms.

    The tangent differentiates the stress through the material tangent on
    both sides; test-jump weights (and, for the normal-only contact variant,
    the current normal) are held fixed within an iteration.  The operator is
    nonsymmetric.
    """
    r = np.zeros(dofmap.n_dofs)
    rows, cols, vals = [], [], []
    for seg in segments:
        xi, w = gauss_1d(seg.npts)
        for k in range(seg.npts):
            plus, _ = _eval_side(mesh, dofmap, d, seg.plus, xi[k],
                                 material_of(seg.plus.elem), want_tangent)
            minus, sm = _eval_side(mesh, dofmap, d, seg.minus, xi[k],
                                   material_of(seg.minus.elem), want_tangent)
            Nm = _material_normal(mesh, seg.minus, sm)
            ncur = None
            if normal_only:
                ncur = _normal_orientation(*seg.minus.face) * np.array(
                    [minus.tau_cur[1], -minus.tau_cur[0]])
                ncur = ncur / np.hypot(*ncur)
            tbar = 0.5 * (plus.measure * plus.P + minus.measure * minus.P) @ Nm
            force = (ncur @ tbar) * ncur if normal_only else tbar
            # test-jump weights: +N_a on the plus side, -N_b on the minus side
            for side, sgn in ((plus, 1.0), (minus, -1.0)):
                contrib = sgn * w[k] * np.outer(side.N, force)
                np.add.at(r, side.dofs.reshape(-1, 2)[:, 0], contrib[:, 0])
                np.add.at(r, side.dofs.reshape(-1, 2)[:, 1], contrib[:, 1])
            if not want_tangent:
                continue
            for trial in (plus, minus):
                # d(force)/d(d^trial_bk): 1/2 m A[i,J,k,L] Nm_J gradX[b,L]
                dt = 0.5 * trial.measure * np.einsum(
                    "iJkL,J,bL->ibk", trial.A, Nm, trial.gradX)
                if normal_only:
                    dt = np.einsum("i,jbk,j->ibk", ncur, dt, ncur)
                for side, sgn in ((plus, 1.0), (minus, -1.0)):
                    block = sgn * w[k] * np.einsum("a,ibk->aibk", side.N, dt)
                    n_a, n_b = len(side.N), dt.shape[1]
                    rr, cc = np.meshgrid(side.dofs, trial.dofs, indexing="ij")
                    rows.append(rr.ravel())
                    cols.append(cc.ravel())
                    vals.append(block.reshape(2 * n_a, 2 * n_b).ravel())
    if rows:
        coo = (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))
    else:
        coo = (np.array([], dtype=int), np.array([], dtype=int), np.array([]))
    return r, coo


def stabilization_residual(mesh, dofmap, d, material_of, segments, normal_only=False):
    return stabilization_terms(mesh, dofmap, d, material_of, segments,
                               normal_only, want_tangent=False)[0]


def interface_stress_trace(mesh, dofmap, d, material_of, segments):
    """Cauchy stress at every segment quadrature point from both traces.

    Rows: (s, sigma11, sigma22, sigma12, side) with s the arc-length
    coordinate along the interface and side in {+1, -1}.
    """
    out = []
    for seg in segments:
        xi, w = gauss_1d(seg.npts)
        for k in range(seg.npts):
            for side_desc, side_id in ((seg.plus, 1), (seg.minus, -1)):
                ev, _ = _eval_side(mesh, dofmap, d, side_desc, xi[k],
                                   material_of(side_desc.elem), False)
                de = dofmap.gather(d, mesh.conn[side_desc.elem])
                F = np.eye(2) + de.T @ ev.gradX
                J = F[0, 0] * F[1, 1] - F[0, 1] * F[1, 0]
                # trace export only; precision of P came from the G-form
                sig = ev.P @ F.T / J
                arc = seg.arc0 + 0.5 * (xi[k] + 1.0) * seg.length()
                out.append((arc, sig[0, 0], sig[1, 1], sig[0, 1], side_id))
    return np.array(out)

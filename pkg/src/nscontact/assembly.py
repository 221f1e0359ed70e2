"""Element integrals and global assembly.

Total-Lagrangian kernels: internal force T^alpha = int P grad_X N^alpha dV,
consistent/lumped mass, dead external loads (edge tractions, pressure, body
force) integrated in the material frame, and COO scatter into sparse global
operators through a DofMap.

Dirichlet conditions are handled by elimination: solvers restrict every
system to the free degrees of freedom with prescribed values substituted.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import elements as el
from .quadrature import default_rule, gauss_1d


class DofMap:
    """Two dofs per node, with optional node identification (merged dofs).

    ``merge`` maps a node id to the node whose dofs it shares; chains are
    flattened.  Realizes the Boolean gather/scatter of element vectors.
    """

    def __init__(self, mesh, merge=None):
        n = mesh.n_nodes
        rep = np.arange(n)
        if merge:
            for a, b in merge.items():
                root = b
                seen = set()
                while root in merge and root not in seen:
                    seen.add(root)
                    root = merge[root]
                rep[a] = root
        reps = np.unique(rep)
        slot = {r: i for i, r in enumerate(reps)}
        self.node_slot = np.array([slot[r] for r in rep], dtype=int)
        self.n_dofs = 2 * len(reps)
        self.mesh = mesh
        self._elem_dofs = [self._build_elem(mesh.conn[e]) for e in range(mesh.n_elements)]

    def _build_elem(self, conn):
        base = 2 * self.node_slot[conn]
        return np.column_stack([base, base + 1]).ravel()

    def refresh(self, e):
        """Re-derive element dof indices after a connectivity change."""
        self._elem_dofs[e] = self._build_elem(self.mesh.conn[e])

    def elem_dofs(self, e):
        return self._elem_dofs[e]

    def node_dofs(self, node):
        base = 2 * self.node_slot[node]
        return np.array([base, base + 1])

    def gather(self, d, conn):
        base = 2 * self.node_slot[conn]
        return np.column_stack([d[base], d[base + 1]])


@lru_cache(maxsize=None)
def _tables(topo, orders):
    """Shape values/gradients at the rule points of ``topo``; cached."""
    from .quadrature import gauss_rule
    rule = gauss_rule(orders)
    N = np.array([el.shape_eval(topo, z) for z in rule.points])
    dN = np.array([el.shape_grad(topo, z) for z in rule.points])
    return rule, N, dN


def _rule_orders(topo, rule=None):
    return (rule or default_rule(topo)).orders


def element_kinematics(topo, X_e, d_e, rule=None):
    """Per-quadrature-point material gradients and displacement gradients.

    Returns (weights*detJ, grad_X N (nq,n,2), G (nq,2,2)) with G = du/dX;
    G is exact in the nodal data, which keeps small-strain stresses clean.
    """
    rule, _, dN = _tables(topo, _rule_orders(topo, rule))
    wdet = np.empty(len(rule))
    gradX = np.empty_like(dN)
    Gs = np.empty((len(rule), 2, 2))
    for q, dNq in enumerate(dN):
        J = X_e.T @ dNq
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if det <= 0.0:
            raise el.InvertedElementError(f"det J = {det:.3e} in element quadrature")
        Jinv = np.array([[J[1, 1], -J[0, 1]], [-J[1, 0], J[0, 0]]]) / det
        g = dNq @ Jinv
        gradX[q] = g
        wdet[q] = rule.weights[q] * det
        Gs[q] = d_e.T @ g
    return wdet, gradX, Gs


def element_internal_force(topo, X_e, d_e, model, rule=None):
    """T^alpha = int P grad_X N^alpha dV, shape (n, 2)."""
    wdet, gradX, Gs = element_kinematics(topo, X_e, d_e, rule)
    T = np.zeros_like(X_e)
    for q in range(len(wdet)):
        P = model.piola_G(Gs[q])
        T += wdet[q] * gradX[q] @ P.T
    return T


def element_tangent(topo, X_e, d_e, model, rule=None):
    """K = dT/dd, shape (2n, 2n) in node-major dof order."""
    wdet, gradX, Gs = element_kinematics(topo, X_e, d_e, rule)
    n = len(X_e)
    K = np.zeros((n, 2, n, 2))
    for q in range(len(wdet)):
        A = model.tangent_G(Gs[q])
        K += wdet[q] * np.einsum("aJ,iJkL,bL->aibk", gradX[q], A, gradX[q])
    return K.reshape(2 * n, 2 * n)


def element_strain_energy(topo, X_e, d_e, model, rule=None):
    wdet, _, Gs = element_kinematics(topo, X_e, d_e, rule)
    return sum(w * model.energy_G(G) for w, G in zip(wdet, Gs))


def element_mass(topo, X_e, rho0, rule=None, lumped=False):
    """Consistent mass int N^a rho0 N^b dV expanded to dof level (2n, 2n);
    lumping adds each row's off-diagonal terms to the diagonal."""
    rule, N, dN = _tables(topo, _rule_orders(topo, rule))
    n = len(X_e)
    m = np.zeros((n, n))
    for q, Nq in enumerate(N):
        J = X_e.T @ dN[q]
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        m += rule.weights[q] * det * rho0 * np.outer(Nq, Nq)
    if lumped:
        m = np.diag(m.sum(axis=1))
    M = np.zeros((2 * n, 2 * n))
    M[0::2, 0::2] = m
    M[1::2, 1::2] = m
    return M


# ---------------------------------------------------------------------------
# External loads (dead, material frame)
# ---------------------------------------------------------------------------

def _normal_orientation(axis, value):
    # Rotating the face tangent dX/ds by -90 deg gives +/- the outward normal
    # on a positively oriented element; this is the sign.
    return value * (1.0 if axis == 0 else -1.0)


def edge_traction_vector(mesh, dofmap, e, face, traction, F_out, s_range=(-1.0, 1.0),
                         npts=None, pressure=None):
    """Accumulate int N^a h0 dA over (part of) an element face into F_out.

    ``traction`` is a constant 2-vector or a callable X -> 2-vector; with
    ``pressure`` given instead, h0 = -q n0 along the outward material normal.
    The face sub-interval ``s_range`` is in face-parameter coordinates.
    """
    topo = mesh.topologies[e]
    Xe = mesh.element_X(e)
    axis, value = face
    npts = npts or el.face_quadrature_order(topo, axis, value)
    xi, w = gauss_1d(npts)
    s0, s1 = s_range
    sig = _normal_orientation(axis, value)
    dofs = dofmap.elem_dofs(e).reshape(-1, 2)
    for k in range(npts):
        s = 0.5 * (s0 + s1) + 0.5 * (s1 - s0) * xi[k]
        z = el.face_point(axis, value, s)
        N = el.shape_eval(topo, z)
        tau = el.shape_grad(topo, z)[:, 1 - axis] @ Xe  # dX/ds
        mag = np.hypot(tau[0], tau[1])
        dA = mag * 0.5 * (s1 - s0)
        if pressure is not None:
            nrm = sig * np.array([tau[1], -tau[0]]) / mag
            h = -pressure * nrm
        else:
            X = N @ Xe
            h = np.asarray(traction(X) if callable(traction) else traction, dtype=float)
        contrib = w[k] * dA * np.outer(N, h)
        np.add.at(F_out, dofs[:, 0], contrib[:, 0])
        np.add.at(F_out, dofs[:, 1], contrib[:, 1])


def edge_outward_normal(mesh, e, face, s, d=None):
    """Unit outward normal of an element face (material if d is None)."""
    topo = mesh.topologies[e]
    coords = mesh.element_X(e) if d is None else mesh.element_x(e, d)
    axis, value = face
    z = el.face_point(axis, value, s)
    tau = el.shape_grad(topo, z)[:, 1 - axis] @ coords
    nrm = _normal_orientation(axis, value) * np.array([tau[1], -tau[0]])
    return nrm / np.hypot(nrm[0], nrm[1])


def external_load_vector(mesh, dofmap, loads, time=0.0):
    """Assemble the global dead-load vector F(t).

    Load entries (dicts):
      {"type": "edge_traction", "edge_set": name, "value": [tx, ty] | callable}
      {"type": "edge_pressure", "edge_set": name, "q": scalar}
      {"type": "body_force", "value": [bx, by]}
      {"type": "point_force", "node_set"|"node": ..., "value": [fx, fy]}
    A scalar "scale" or callable "scale(t)" multiplies the entry.
    """
    F = np.zeros(dofmap.n_dofs)
    for ld in loads:
        scale = ld.get("scale", 1.0)
        scale = scale(time) if callable(scale) else float(scale)
        kind = ld["type"]
        if kind == "edge_traction":
            val = ld["value"]
            trac = (lambda X, v=val: scale * np.asarray(v(X), dtype=float)) if callable(val) \
                else scale * np.asarray(val, dtype=float)
            for e, face in mesh.edge_sets[ld["edge_set"]]:
                edge_traction_vector(mesh, dofmap, e, face, trac, F)
        elif kind == "edge_pressure":
            q = scale * float(ld["q"])
            for e, face in mesh.edge_sets[ld["edge_set"]]:
                edge_traction_vector(mesh, dofmap, e, face, None, F, pressure=q)
        elif kind == "body_force":
            b = scale * np.asarray(ld["value"], dtype=float)
            for e in range(mesh.n_elements):
                topo = mesh.topologies[e]
                rule, N, dN = _tables(topo, _rule_orders(topo))
                Xe = mesh.element_X(e)
                dofs = dofmap.elem_dofs(e).reshape(-1, 2)
                for q_, Nq in enumerate(N):
                    J = Xe.T @ dN[q_]
                    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
                    contrib = rule.weights[q_] * det * np.outer(Nq, b)
                    np.add.at(F, dofs[:, 0], contrib[:, 0])
                    np.add.at(F, dofs[:, 1], contrib[:, 1])
        elif kind == "point_force":
            nodes = (mesh.node_sets[ld["node_set"]] if "node_set" in ld
                     else np.atleast_1d(ld["node"]))
            f = scale * np.asarray(ld["value"], dtype=float)
            for node in nodes:
                F[dofmap.node_dofs(node)] += f
        else:
            raise ValueError(f"unknown load type {kind!r}")
    return F


# ---------------------------------------------------------------------------
# Global assembly
# ---------------------------------------------------------------------------

def _n_workers():
    try:
        return max(1, int(os.environ.get("NSCONTACT_THREADS", "1")))
    except ValueError:
        return 1


def assemble_internal_force(mesh, dofmap, d, material_of, rules=None):
    r = np.zeros(dofmap.n_dofs)

    def work(e):
        topo = mesh.topologies[e]
        Xe = mesh.element_X(e)
        de = dofmap.gather(d, mesh.conn[e])
        rule = rules[e] if rules else None
        return e, element_internal_force(topo, Xe, de, material_of(e), rule)

    for e, T in _map(work, range(mesh.n_elements)):
        np.add.at(r, dofmap.elem_dofs(e), T.ravel())
    return r


def assemble_tangent(mesh, dofmap, d, material_of, rules=None, extra_coo=None):
    rows, cols, vals = [], [], []

    def work(e):
        topo = mesh.topologies[e]
        Xe = mesh.element_X(e)
        de = dofmap.gather(d, mesh.conn[e])
        rule = rules[e] if rules else None
        return e, element_tangent(topo, Xe, de, material_of(e), rule)

    for e, K in _map(work, range(mesh.n_elements)):
        dofs = dofmap.elem_dofs(e)
        rr, cc = np.meshgrid(dofs, dofs, indexing="ij")
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        vals.append(K.ravel())
    if extra_coo is not None:
        r2, c2, v2 = extra_coo
        rows.append(np.asarray(r2, dtype=int))
        cols.append(np.asarray(c2, dtype=int))
        vals.append(np.asarray(v2, dtype=float))
    n = dofmap.n_dofs
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()


def assemble_mass(mesh, dofmap, rho_of, lumped=False):
    rows, cols, vals = [], [], []
    for e in range(mesh.n_elements):
        topo = mesh.topologies[e]
        M = element_mass(topo, mesh.element_X(e), rho_of(e), lumped=lumped)
        dofs = dofmap.elem_dofs(e)
        rr, cc = np.meshgrid(dofs, dofs, indexing="ij")
        rows.append(rr.ravel())
        cols.append(cc.ravel())
        vals.append(M.ravel())
    n = dofmap.n_dofs
    M = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()
    if lumped:
        M = sp.diags(np.asarray(M.sum(axis=1)).ravel()).tocsr()
    return M


def total_strain_energy(mesh, dofmap, d, material_of, rules=None):
    return sum(
        element_strain_energy(
            mesh.topologies[e], mesh.element_X(e), dofmap.gather(d, mesh.conn[e]),
            material_of(e), rules[e] if rules else None,
        )
        for e in range(mesh.n_elements)
    )


def _map(fn, items):
    """Fan element work out to NSCONTACT_THREADS workers; scatter stays serial."""
    workers = _n_workers()
    if workers == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))

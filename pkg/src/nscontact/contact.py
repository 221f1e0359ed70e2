"""Non-smooth contact: reference-coordinate gap functions and their algebra.

A candidate node p is mapped into the parent domain of a target element by
the inverse isoparametric map.  Relative to the element face zeta_j = c the
signed offset w = zeta_j^p - c changes sign exactly when p crosses that
face, so the constraint

    g = beta * (zeta_j^p - c) >= 0,   beta = sign of w in the last known
                                      penetration-free configuration

is a gap function written in the reference coordinates of the penetrated
element: no surface normal is needed, which is what makes corner and edge
contact well defined.  Divergence of the inverse map is a negative result
(the node is outside).

Constraint gradient and Hessian follow the chain rule through the implicit
map (with J_p the isoparametric Jacobian at zeta^p and e_j the parent axis
of the face):

    grad g = beta [D_p^T - N^a D_a^T] J_p^{-T} e_j
    H      = -beta [T + T^T + P_p^T J_p^{-T} (gamma^a H_a) J_p^{-1} P_p]

with P_p = D_p - N^a D_a, T = D_a^T [J_p^{-T} e_j (x) grad N^a] J_p^{-1} P_p,
gamma^a = x^a . J_p^{-T} e_j and H_a the parent-coordinate Hessians of the
shape functions.  gradient/Hessian are returned over the local dofs of
(node p, element nodes) plus an index list for scatter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import elements as el
from .errors import OutsideElementError

FACES = ((0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0))


@dataclass
class ContactConstraint:
    node: int          # penetrating node p
    elem: int          # target element
    axis: int          # face axis j
    value: float       # face value c (+/-1)
    beta: float        # sign normalization from previous configuration
    lam: float = 0.0   # multiplier (negative contact pressure resultant)
    gap0: float = 0.0  # violation magnitude at detection time

    @property
    def key(self):
        return (self.node, self.elem, self.axis, self.value)


@dataclass
class ActiveSet:
    constraints: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)

    def keys(self):
        return {c.key for c in self.constraints}

    def add(self, con):
        if con.key in self.keys():
            raise ValueError(f"duplicate constraint {con.key}")
        self.constraints.append(con)

    def remove_negative(self, tol=0.0):
        """Drop constraints violating the optimality condition lam >= 0."""
        dropped = [c for c in self.constraints if c.lam < -abs(tol)]
        if dropped:
            self.constraints = [c for c in self.constraints if c.lam >= -abs(tol)]
        return dropped


def resolve_zeta(mesh, d, con_or_pair, max_iter=30):
    """Parent coordinates of a node in a target element's current frame,
    or None when the inverse map signals "outside"."""
    if isinstance(con_or_pair, ContactConstraint):
        node, e = con_or_pair.node, con_or_pair.elem
    else:
        node, e = con_or_pair
    x_node = mesh.X[node] + d.reshape(-1, 2)[node]
    coords = mesh.element_x(e, d)
    try:
        return el.inverse_map(mesh.topologies[e], x_node, coords, max_iter=max_iter)
    except OutsideElementError:
        return None


def gap(mesh, d, con):
    """g = beta (zeta_j^p - c); raises OutsideElementError on divergence."""
    z = resolve_zeta(mesh, d, con)
    if z is None:
        raise OutsideElementError(f"node {con.node} outside element {con.elem}")
    return con.beta * (z[con.axis] - con.value)


def _local_dofs(mesh, dofmap, con):
    nodes = np.concatenate([[con.node], mesh.conn[con.elem]])
    return np.concatenate([dofmap.node_dofs(n) for n in nodes])


def constraint_gradient(mesh, dofmap, d, con, zeta=None):
    """(dof indices, gradient values) over node p and the element's nodes."""
    if zeta is None:
        z = resolve_zeta(mesh, d, con)
        if z is None:
            raise OutsideElementError(f"node {con.node} left element {con.elem}")
    else:
        z = zeta
    topo = mesh.topologies[con.elem]
    coords = mesh.element_x(con.elem, d)
    N = el.shape_eval(topo, z)
    J = coords.T @ el.shape_grad(topo, z)
    f = con.beta * np.linalg.solve(J.T, np.eye(2)[con.axis])  # beta J^{-T} e_j
    vals = np.concatenate([f, np.outer(-N, f).ravel()])
    return _local_dofs(mesh, dofmap, con), vals


def constraint_hessian(mesh, dofmap, d, con, zeta=None):
    """(dof indices, symmetric local Hessian of g) over (p, element nodes)."""
    if zeta is None:
        z = resolve_zeta(mesh, d, con)
        if z is None:
            raise OutsideElementError(f"node {con.node} left element {con.elem}")
    else:
        z = zeta
    topo = mesh.topologies[con.elem]
    coords = mesh.element_x(con.elem, d)
    n = len(coords)
    N = el.shape_eval(topo, z)
    dN = el.shape_grad(topo, z)          # (n, 2)
    d2N = el.shape_hess(topo, z)         # (n, 2, 2)
    J = coords.T @ dN
    Jinv = np.linalg.inv(J)
    f = Jinv.T @ np.eye(2)[con.axis]     # J^{-T} e_j (beta applied at the end)

    # P_p over local dofs (2 x 2(n+1)): identity at p, -N^a at element nodes
    m = 2 * (n + 1)
    P = np.zeros((2, m))
    P[:, 0:2] = np.eye(2)
    for a in range(n):
        P[:, 2 * (a + 1): 2 * (a + 2)] = -N[a] * np.eye(2)

    JinvP = Jinv @ P                     # (2, m)
    H = np.zeros((m, m))
    # T^c + T^c^T
    for a in range(n):
        rowblock = np.outer(f, dN[a]) @ JinvP   # (2, m)
        H[2 * (a + 1): 2 * (a + 2), :] += rowblock
        H[:, 2 * (a + 1): 2 * (a + 2)] += rowblock.T
    # curvature term
    gamma = coords @ f                   # (n,)
    M2 = np.einsum("a,aij->ij", gamma, d2N)
    H += JinvP.T @ M2 @ JinvP
    H *= -con.beta
    return _local_dofs(mesh, dofmap, con), H


# ---------------------------------------------------------------------------
# Detection
# ---------------------------------------------------------------------------

@dataclass
class ContactPair:
    """A declared pairing of two surfaces: nodes of each side are tested
    against the boundary elements of the other (two-pass by default)."""

    nodes_a: np.ndarray
    elems_a: list
    nodes_b: np.ndarray
    elems_b: list

    @classmethod
    def from_edge_sets(cls, mesh, set_a, set_b):
        return cls(
            mesh.edge_set_nodes(set_a), sorted({e for e, _ in mesh.edge_sets[set_a]}),
            mesh.edge_set_nodes(set_b), sorted({e for e, _ in mesh.edge_sets[set_b]}),
        )

    def candidates(self, mesh, d, margin_factor=1.0):
        """Broad-phase (node, element) candidates via AABB overlap with a
        margin of one element diameter."""
        out = []
        xs = mesh.X + d.reshape(-1, 2)
        for nodes, elems in ((self.nodes_a, self.elems_b), (self.nodes_b, self.elems_a)):
            for e in elems:
                xe = xs[mesh.conn[e]]
                lo = xe.min(axis=0)
                hi = xe.max(axis=0)
                margin = margin_factor * el.element_diameter(xe)
                for p in nodes:
                    if mesh.node_body[p] == mesh.elem_body[e]:
                        continue
                    if p in mesh.conn[e]:
                        continue
                    xp = xs[p]
                    if np.all(xp >= lo - margin) and np.all(xp <= hi + margin):
                        out.append((int(p), int(e)))
        return out


class BetaRegistry:
    """Sign normalization store, refreshed at penetration-free configurations.

    Offsets inside the dead band (a node resting exactly on a face) do not
    overwrite the recorded sign: the approach direction stays authoritative
    through persistent contact.
    """

    def __init__(self, dead_band=1e-8):
        self.signs = {}
        self.dead_band = dead_band

    def refresh(self, mesh, d, pairs, margin_factor=1.5):
        for pair in pairs:
            for p, e in pair.candidates(mesh, d, margin_factor):
                z = resolve_zeta(mesh, d, (p, e))
                if z is None:
                    continue
                for j, c in FACES:
                    w = z[j] - c
                    if abs(w) > self.dead_band:
                        self.signs[(p, e, j, c)] = 1.0 if w > 0 else -1.0

    def get(self, p, e, j, c):
        return self.signs.get((p, e, j, c))


def detect_contacts(mesh, d, pairs, beta_reg, active_keys=(), inside_tol=1e-9,
                    pen_tol=0.0):
    """Violated constraints at displacement d, most violated first.

    A candidate violates face (j, c) when its parent image is inside the
    element on the other axis and beta*(zeta_j - c) < -pen_tol.  Missing
    beta entries fall back to the outside sign of the shallowest face.
    Per (node, axis) only the deepest violation across elements is kept.
    """
    found = {}
    for pair in pairs:
        for p, e in pair.candidates(mesh, d):
            z = resolve_zeta(mesh, d, (p, e))
            if z is None:
                continue
            if np.abs(z).max() > 1.0 + inside_tol:
                continue
            depths = {(j, c): abs(z[j] - c) for j, c in FACES}
            shallowest = min(depths, key=depths.get)
            for j, c in FACES:
                beta = beta_reg.get(p, e, j, c)
                if beta is None:
                    if (j, c) != shallowest:
                        continue
                    beta = c  # outside sign of the entry face
                g = beta * (z[j] - c)
                if g < -pen_tol and (p, e, j, c) not in active_keys:
                    con = ContactConstraint(p, e, j, c, beta, gap0=g)
                    prev = found.get((p, j))
                    if prev is None or abs(g) > abs(prev.gap0):
                        found[(p, j)] = con
    out = sorted(found.values(), key=lambda c: (-abs(c.gap0), c.node, c.elem))
    return out


def most_violated(violated):
    """Largest |g|; ties broken by lowest (node id, element id)."""
    return violated[0] if violated else None

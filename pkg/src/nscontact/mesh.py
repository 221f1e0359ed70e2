"""Mesh container and structured quadrilateral mesh builders.

A mesh is the single source of topology: material node coordinates, element
connectivities (Q4/Q8, possibly enriched), and named node/edge sets used for
boundary conditions, loads, contact pairs and coupling interfaces.

Edge sets are lists of (element id, face) pairs with face = (axis, value) in
parent coordinates.  Q8 node ordering is corners counterclockwise then
mid-edge nodes counterclockwise, starting at the lower-left corner.
"""

from __future__ import annotations

import numpy as np

from . import elements as el


class Mesh:
    def __init__(self, nodes, element_list, node_sets=None, edge_sets=None,
                 node_body=None, elem_body=None):
        self.X = np.asarray(nodes, dtype=float).copy()
        self.topologies = [t for t, _ in element_list]
        self.conn = [np.asarray(c, dtype=int).copy() for _, c in element_list]
        self.node_sets = {k: np.asarray(v, dtype=int) for k, v in (node_sets or {}).items()}
        self.edge_sets = {k: [(int(e), (int(f[0]), float(f[1]))) for e, f in v]
                          for k, v in (edge_sets or {}).items()}
        n = len(self.X)
        self.node_body = (np.zeros(n, dtype=int) if node_body is None
                          else np.asarray(node_body, dtype=int).copy())
        self.elem_body = (np.zeros(len(self.conn), dtype=int) if elem_body is None
                          else np.asarray(elem_body, dtype=int).copy())
        self._validate()

    # -- basic queries ----------------------------------------------------

    @property
    def n_nodes(self):
        return len(self.X)

    @property
    def n_elements(self):
        return len(self.conn)

    def element_X(self, e):
        return self.X[self.conn[e]]

    def element_diameter(self, e):
        return el.element_diameter(self.element_X(e))

    def edge_set_nodes(self, name):
        """Unique node ids on an edge set, in ascending order."""
        ids = []
        for e, face in self.edge_sets[name]:
            local = el.face_nodes(self.topologies[e], *face)
            ids.extend(self.conn[e][local])
        return np.unique(np.asarray(ids, dtype=int))

    def _validate(self):
        for e, (topo, conn) in enumerate(zip(self.topologies, self.conn)):
            if topo.node_count != len(conn):
                raise ValueError(f"element {e}: connectivity length {len(conn)} "
                                 f"!= node count {topo.node_count}")
            if conn.min() < 0 or conn.max() >= self.n_nodes:
                raise ValueError(f"element {e}: connectivity index out of range")
            if len(np.unique(conn)) != len(conn):
                raise ValueError(f"element {e}: repeated node in connectivity")

    def validate_geometry(self):
        """det J > 0 at the default quadrature points of every element."""
        from .quadrature import default_rule
        for e in range(self.n_elements):
            topo = self.topologies[e]
            Xe = self.element_X(e)
            for zeta in default_rule(topo).points:
                el.jacobian_at(topo, zeta, Xe)

    # -- mutation (enrichment) --------------------------------------------

    def add_enrichment(self, e, axis, value, s, X_new=None, new_node=None):
        """Enrich element ``e`` on face (axis, value) at face parameter s.

        Either attach an existing node (``new_node``, coupling mode: the
        element simply gains that node) or append a fresh node with material
        coordinates ``X_new`` (contact mode).  Returns the node id.
        """
        topo = self.topologies[e].enriched(axis, value, s)
        if new_node is None:
            if X_new is None:
                raise ValueError("either X_new or new_node is required")
            new_node = self.n_nodes
            self.X = np.vstack([self.X, np.asarray(X_new, dtype=float)])
            self.node_body = np.append(self.node_body, self.elem_body[e])
        self.topologies[e] = topo
        self.conn[e] = np.append(self.conn[e], new_node)
        return int(new_node)

    def update_enrichment_site(self, e, index, s, X_r):
        """Move enrichment ``index`` of element ``e`` to face parameter s and
        update the enrichment node's material coordinates."""
        topo = self.topologies[e]
        enrs = list(topo.enrichments)
        old = enrs[index]
        moved = el.FaceEnrichment(old.axis, old.value, float(s))
        # re-run the site check against every other node of the element
        others = el.Topology(topo.base, tuple(enrs[:index] + enrs[index + 1:]))
        others.enriched(moved.axis, moved.value, moved.s)
        enrs[index] = moved
        self.topologies[e] = el.Topology(topo.base, tuple(enrs))
        node = self.conn[e][topo.base_count + index]
        self.X[node] = X_r

    # -- geometry in a displaced configuration ------------------------------

    def element_x(self, e, d):
        """Current nodal coordinates of element ``e`` given the global
        displacement vector ``d`` (length 2*n_nodes)."""
        c = self.conn[e]
        return self.X[c] + d.reshape(-1, 2)[c]


# ---------------------------------------------------------------------------
# Structured builders
# ---------------------------------------------------------------------------

def _grid_breaks(a, b, n, breaks):
    if breaks is not None:
        arr = np.asarray(breaks, dtype=float)
        if abs(arr[0] - a) > 1e-12 or abs(arr[-1] - b) > 1e-12:
            raise ValueError("custom breaks must span the interval")
        return arr
    return np.linspace(a, b, n + 1)


def rect_mesh(kind, x0, x1, y0, y1, nx, ny, x_breaks=None, y_breaks=None, body=0):
    """Structured mesh of a rectangle with canonical boundary sets.

    Node sets and edge sets: "left", "right", "bottom", "top".
    """
    xs = _grid_breaks(x0, x1, nx, x_breaks)
    ys = _grid_breaks(y0, y1, ny, y_breaks)
    nx, ny = len(xs) - 1, len(ys) - 1
    if kind == "Q4":
        nodes, conn = _q4_grid(xs, ys)
        topo = el.Q4
    elif kind == "Q8":
        nodes, conn = _q8_grid(xs, ys)
        topo = el.Q8
    else:
        raise ValueError(f"unknown element kind {kind!r}")

    tol = 1e-9 * max(x1 - x0, y1 - y0)
    node_sets = {
        "left": np.where(np.abs(nodes[:, 0] - x0) < tol)[0],
        "right": np.where(np.abs(nodes[:, 0] - x1) < tol)[0],
        "bottom": np.where(np.abs(nodes[:, 1] - y0) < tol)[0],
        "top": np.where(np.abs(nodes[:, 1] - y1) < tol)[0],
    }
    edge_sets = {
        "left": [(j * nx, (0, -1.0)) for j in range(ny)],
        "right": [(j * nx + nx - 1, (0, 1.0)) for j in range(ny)],
        "bottom": [(i, (1, -1.0)) for i in range(nx)],
        "top": [((ny - 1) * nx + i, (1, 1.0)) for i in range(nx)],
    }
    element_list = [(topo, c) for c in conn]
    nb = np.full(len(nodes), body, dtype=int)
    eb = np.full(len(element_list), body, dtype=int)
    return Mesh(nodes, element_list, node_sets, edge_sets, nb, eb)


def _q4_grid(xs, ys):
    nx, ny = len(xs) - 1, len(ys) - 1
    XX, YY = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([XX.ravel(), YY.ravel()])
    conn = []
    for j in range(ny):
        for i in range(nx):
            n0 = j * (nx + 1) + i
            conn.append([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    return nodes, np.asarray(conn, dtype=int)


def _q8_grid(xs, ys):
    # Corner lattice plus mid-edge nodes on every horizontal/vertical edge.
    nx, ny = len(xs) - 1, len(ys) - 1
    xm = 0.5 * (xs[:-1] + xs[1:])
    ym = 0.5 * (ys[:-1] + ys[1:])
    nodes = []
    corner = {}
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            corner[(i, j)] = len(nodes)
            nodes.append((x, y))
    hmid = {}
    for j, y in enumerate(ys):
        for i, x in enumerate(xm):
            hmid[(i, j)] = len(nodes)
            nodes.append((x, y))
    vmid = {}
    for j, y in enumerate(ym):
        for i, x in enumerate(xs):
            vmid[(i, j)] = len(nodes)
            nodes.append((x, y))
    conn = []
    for j in range(ny):
        for i in range(nx):
            conn.append([
                corner[(i, j)], corner[(i + 1, j)],
                corner[(i + 1, j + 1)], corner[(i, j + 1)],
                hmid[(i, j)], vmid[(i + 1, j)], hmid[(i, j + 1)], vmid[(i, j)],
            ])
    return np.asarray(nodes, dtype=float), np.asarray(conn, dtype=int)


def merge_meshes(parts, names=None):
    """Concatenate meshes into one, prefixing their sets with "<name>:".

    Bodies keep distinct ids (re-numbered by part order); nodes are not
    fused -- ties between parts are created by contact/coupling machinery.
    """
    names = names or [f"body{i}" for i in range(len(parts))]
    nodes = []
    element_list = []
    node_sets = {}
    edge_sets = {}
    node_body = []
    elem_body = []
    off = 0
    eoff = 0
    for bid, (m, name) in enumerate(zip(parts, names)):
        nodes.append(m.X)
        for topo, c in zip(m.topologies, m.conn):
            element_list.append((topo, c + off))
        for k, v in m.node_sets.items():
            node_sets[f"{name}:{k}"] = v + off
        for k, v in m.edge_sets.items():
            edge_sets[f"{name}:{k}"] = [(e + eoff, f) for e, f in v]
        node_body.append(np.full(m.n_nodes, bid, dtype=int))
        elem_body.append(np.full(m.n_elements, bid, dtype=int))
        off += m.n_nodes
        eoff += m.n_elements
    return Mesh(np.vstack(nodes), element_list, node_sets, edge_sets,
                np.concatenate(node_body), np.concatenate(elem_body))

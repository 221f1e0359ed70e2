"""Isoparametric quadrilateral elements: Q4, Q8 and face-enriched variants.

The parent domain is the biunit square with coordinates ``zeta = (z1, z2)``,
each component in [-1, 1].  A face is identified by ``(axis, value)`` with
``axis`` in {0, 1} and ``value`` in {-1.0, +1.0}; the coordinate along the
face (the "face parameter" s) is the other axis.

Enrichment inserts an extra interpolation node on a face.  The added shape
function has the form f(zeta)/f(zeta_r) where f vanishes at every existing
node, and the existing functions are corrected to stay interpolatory:

    N~_r     = f(zeta) / f(zeta_r)
    N~_alpha = N_alpha - N_alpha(zeta_r) * N~_r

Multiple enrichments are applied recursively, one at a time, each treating
the previously enriched set as the base.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DegenerateEnrichmentError, InvertedElementError, OutsideElementError

# Minimum face-parameter distance between an enrichment and any existing node
# on the same face; closer placements drive the element Jacobian to zero.
DZETA_MIN = 1e-2

_Q4_NODES = np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
_Q8_NODES = np.array(
    [
        [-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0],
        [0.0, -1.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0],
    ]
)


@dataclass(frozen=True)
class FaceEnrichment:
    """One inserted node on face ``axis = value`` at face parameter ``s``."""

    axis: int
    value: float
    s: float

    @property
    def zeta(self):
        z = np.empty(2)
        z[self.axis] = self.value
        z[1 - self.axis] = self.s
        return z


@dataclass(frozen=True)
class Topology:
    """Element topology: a base quadrilateral family plus ordered enrichments."""

    base: str = "Q4"
    enrichments: tuple[FaceEnrichment, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.base not in ("Q4", "Q8"):
            raise ValueError(f"unknown base topology {self.base!r}")

    @property
    def base_count(self):
        return 4 if self.base == "Q4" else 8

    @property
    def node_count(self):
        return self.base_count + len(self.enrichments)

    @property
    def degree(self):
        return 1 if self.base == "Q4" else 2

    def enriched(self, axis, value, s):
        """Return a new topology with one more enrichment (validated)."""
        enr = FaceEnrichment(axis, float(value), float(s))
        _validate_site(self, enr)
        return Topology(self.base, self.enrichments + (enr,))


Q4 = Topology("Q4")
Q8 = Topology("Q8")

FACES = ((0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0))


def parent_nodes(topo):
    """Parent coordinates of all nodes, enrichment nodes appended in order."""
    base = _Q4_NODES if topo.base == "Q4" else _Q8_NODES
    if not topo.enrichments:
        return base.copy()
    extra = np.array([e.zeta for e in topo.enrichments])
    return np.vstack([base, extra])


def _face_params(nodes, axis, value, tol=1e-12):
    """Face parameters s of the nodes lying on face ``axis = value``."""
    on = np.abs(nodes[:, axis] - value) <= tol
    return nodes[on, 1 - axis]


def _validate_site(topo, enr):
    if enr.axis not in (0, 1) or enr.value not in (-1.0, 1.0):
        raise ValueError(f"enrichment must sit on a face, got {enr}")
    if abs(enr.s) > 1.0:
        raise DegenerateEnrichmentError(f"face parameter {enr.s} outside [-1, 1]")
    nodes = parent_nodes(topo)
    s_existing = _face_params(nodes, enr.axis, enr.value)
    gap = np.min(np.abs(s_existing - enr.s))
    if gap < DZETA_MIN:
        raise DegenerateEnrichmentError(
            f"enrichment at s={enr.s:.6g} within {gap:.2e} of an existing node"
        )


def min_site_gap(topo, axis, value, s):
    """Distance in face parameter from ``s`` to the nearest node on that face."""
    s_existing = _face_params(parent_nodes(topo), axis, value)
    return float(np.min(np.abs(s_existing - s))), s_existing


# ---------------------------------------------------------------------------
# Base shape functions
# ---------------------------------------------------------------------------

def _q4_eval(z):
    z1, z2 = z
    a = _Q4_NODES
    N = 0.25 * (1 + z1 * a[:, 0]) * (1 + z2 * a[:, 1])
    dN = np.empty((4, 2))
    dN[:, 0] = 0.25 * a[:, 0] * (1 + z2 * a[:, 1])
    dN[:, 1] = 0.25 * a[:, 1] * (1 + z1 * a[:, 0])
    d2 = np.zeros((4, 2, 2))
    d2[:, 0, 1] = d2[:, 1, 0] = 0.25 * a[:, 0] * a[:, 1]
    return N, dN, d2


def _q8_eval(z):
    z1, z2 = z
    N = np.empty(8)
    dN = np.empty((8, 2))
    d2 = np.empty((8, 2, 2))
    for i in range(4):
        a1, a2 = _Q8_NODES[i]
        N[i] = 0.25 * (1 + z1 * a1) * (1 + z2 * a2) * (z1 * a1 + z2 * a2 - 1)
        dN[i, 0] = 0.25 * a1 * (1 + z2 * a2) * (2 * z1 * a1 + z2 * a2)
        dN[i, 1] = 0.25 * a2 * (1 + z1 * a1) * (2 * z2 * a2 + z1 * a1)
        d2[i, 0, 0] = 0.5 * (1 + z2 * a2)
        d2[i, 1, 1] = 0.5 * (1 + z1 * a1)
        d2[i, 0, 1] = d2[i, 1, 0] = 0.25 * a1 * a2 * (2 * z1 * a1 + 2 * z2 * a2 + 1)
    for i in (4, 6):  # mid-edge nodes on z2 = +/-1
        a2 = _Q8_NODES[i, 1]
        N[i] = 0.5 * (1 - z1 * z1) * (1 + z2 * a2)
        dN[i, 0] = -z1 * (1 + z2 * a2)
        dN[i, 1] = 0.5 * a2 * (1 - z1 * z1)
        d2[i, 0, 0] = -(1 + z2 * a2)
        d2[i, 1, 1] = 0.0
        d2[i, 0, 1] = d2[i, 1, 0] = -z1 * a2
    for i in (5, 7):  # mid-edge nodes on z1 = +/-1
        a1 = _Q8_NODES[i, 0]
        N[i] = 0.5 * (1 + z1 * a1) * (1 - z2 * z2)
        dN[i, 0] = 0.5 * a1 * (1 - z2 * z2)
        dN[i, 1] = -z2 * (1 + z1 * a1)
        d2[i, 0, 0] = 0.0
        d2[i, 1, 1] = -(1 + z1 * a1)
        d2[i, 0, 1] = d2[i, 1, 0] = -z2 * a1
    return N, dN, d2


def _bubble(nodes_before, enr, z):
    """f(zeta) vanishing at all nodes listed in ``nodes_before``.

    f = w(z_axis) * prod_k (s - s_k) with w = (1 + value*z_axis)/2 and s_k the
    face parameters of the existing nodes on the enriched face.  Returns
    (f, grad f, hess f).
    """
    j = enr.axis
    js = 1 - j
    roots = _face_params(nodes_before, j, enr.value)
    w = 0.5 * (1.0 + enr.value * z[j])
    dw = 0.5 * enr.value
    s = z[js]
    diffs = s - roots
    p = np.prod(diffs)
    dp = 0.0
    ddp = 0.0
    for k in range(len(roots)):
        leave = np.prod(np.delete(diffs, k))
        dp += leave
        for m in range(len(roots)):
            if m == k:
                continue
            ddp += np.prod(np.delete(diffs, [k, m]))
    f = w * p
    g = np.zeros(2)
    g[j] = dw * p
    g[js] = w * dp
    h = np.zeros((2, 2))
    h[j, js] = h[js, j] = dw * dp
    h[js, js] = w * ddp
    return f, g, h


@lru_cache(maxsize=None)
def _plan(topo):
    """Per-level constants of the recursive enrichment construction.

    For level k (0-based over topo.enrichments) stores the node table of the
    element *before* that enrichment, the normalization f(zeta_r), and the
    values of the level-k shape functions at zeta_r.
    """
    steps = []
    for k, enr in enumerate(topo.enrichments):
        prefix = Topology(topo.base, topo.enrichments[:k])
        nodes_before = parent_nodes(prefix)
        fr, _, _ = _bubble(nodes_before, enr, enr.zeta)
        if abs(fr) < 1e-14:
            raise DegenerateEnrichmentError("enrichment normalization vanished")
        vals_r = shape_eval(prefix, enr.zeta)
        steps.append((nodes_before, fr, vals_r))
    return tuple(steps)


def shape_eval(topo, zeta):
    """Shape function values N^alpha(zeta), enrichment entries appended."""
    z = np.asarray(zeta, dtype=float)
    vals = _q4_eval(z)[0] if topo.base == "Q4" else _q8_eval(z)[0]
    for enr, (nodes_before, fr, vals_r) in zip(topo.enrichments, _plan(topo)):
        f, _, _ = _bubble(nodes_before, enr, z)
        Nr = f / fr
        vals = np.concatenate([vals - vals_r * Nr, [Nr]])
    return vals


def shape_grad(topo, zeta):
    """Parent-coordinate gradients dN/dzeta, shape (node_count, 2)."""
    z = np.asarray(zeta, dtype=float)
    _, grads, _ = _q4_eval(z) if topo.base == "Q4" else _q8_eval(z)
    for enr, (nodes_before, fr, vals_r) in zip(topo.enrichments, _plan(topo)):
        _, g, _ = _bubble(nodes_before, enr, z)
        dNr = g / fr
        grads = np.vstack([grads - np.outer(vals_r, dNr), dNr[None, :]])
    return grads


def shape_hess(topo, zeta):
    """Second parent derivatives d2N/dzeta2, shape (node_count, 2, 2)."""
    z = np.asarray(zeta, dtype=float)
    _, _, hess = _q4_eval(z) if topo.base == "Q4" else _q8_eval(z)
    for enr, (nodes_before, fr, vals_r) in zip(topo.enrichments, _plan(topo)):
        _, _, h = _bubble(nodes_before, enr, z)
        d2Nr = h / fr
        hess = np.concatenate(
            [hess - vals_r[:, None, None] * d2Nr[None, :, :], d2Nr[None, :, :]]
        )
    return hess


# ---------------------------------------------------------------------------
# Isoparametric mapping
# ---------------------------------------------------------------------------

def map_to_physical(topo, zeta, coords):
    """x = N^alpha(zeta) x^alpha for nodal coordinates ``coords`` (n, 2)."""
    return shape_eval(topo, zeta) @ coords


def jacobian_at(topo, zeta, coords, require_positive=True):
    """Mapping Jacobian J = dx/dzeta (2x2) and its determinant.

    J = sum_alpha x^alpha (x) grad N^alpha.  det J <= 0 flags an inverted or
    degenerate element when ``require_positive``.
    """
    J = coords.T @ shape_grad(topo, zeta)
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    if require_positive and det <= 0.0:
        raise InvertedElementError(f"det J = {det:.3e} at zeta={np.asarray(zeta)}")
    return J, det


def element_diameter(coords):
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    return float(np.hypot(*(hi - lo)))


def inverse_map(topo, x_target, coords, tol=None, max_iter=30):
    """Solve N^alpha(zeta) x^alpha = x_target for zeta by Newton iteration.

    Starts from the centroid.  Raises OutsideElementError on divergence or a
    singular Jacobian, which detection treats as "the point is outside".
    """
    x_target = np.asarray(x_target, dtype=float)
    if tol is None:
        # machine-level: gap functions and their gradients inherit this noise
        tol = 50.0 * np.finfo(float).eps * max(element_diameter(coords), 1e-300)
    z = np.zeros(2)
    for _ in range(max_iter):
        res = map_to_physical(topo, z, coords) - x_target
        if np.hypot(res[0], res[1]) <= tol:
            return z
        J = coords.T @ shape_grad(topo, z)
        det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
        if abs(det) < 1e-14 * max(abs(J).max() ** 2, 1e-300):
            raise OutsideElementError("singular Jacobian during inverse map")
        z = z - np.array(
            [J[1, 1] * res[0] - J[0, 1] * res[1], -J[1, 0] * res[0] + J[0, 0] * res[1]]
        ) / det
        if np.abs(z).max() > 1e3:
            raise OutsideElementError("inverse map iterate blew up")
    raise OutsideElementError(f"no convergence in {max_iter} Newton iterations")


def inverse_map_face(topo, axis, value, x_target, coords, tol=None, max_iter=30):
    """Find the face parameter s with x(face point(s)) closest to ``x_target``.

    Gauss-Newton on the single unknown s; intended for points lying on (or
    within tolerance of) the face.  Returns (s, residual_norm).
    """
    x_target = np.asarray(x_target, dtype=float)
    if tol is None:
        tol = 50.0 * np.finfo(float).eps * max(element_diameter(coords), 1e-300)
    s = 0.0
    z = np.empty(2)
    for _ in range(max_iter):
        z[axis] = value
        z[1 - axis] = s
        res = map_to_physical(topo, z, coords) - x_target
        tau = shape_grad(topo, z)[:, 1 - axis] @ coords  # dx/ds
        denom = tau @ tau
        if denom < 1e-30:
            raise OutsideElementError("degenerate face tangent")
        ds = -(tau @ res) / denom
        s += ds
        if abs(ds) <= tol / np.sqrt(denom):
            break
        if abs(s) > 10.0:
            raise OutsideElementError("face inverse map diverged")
    z[axis] = value
    z[1 - axis] = s
    res = map_to_physical(topo, z, coords) - x_target
    return s, float(np.hypot(res[0], res[1]))


def face_nodes(topo, axis, value, tol=1e-12):
    """Local indices of the nodes on a face, ordered by face parameter."""
    nodes = parent_nodes(topo)
    on = np.where(np.abs(nodes[:, axis] - value) <= tol)[0]
    return on[np.argsort(nodes[on, 1 - axis])]


def face_point(axis, value, s):
    z = np.empty(2)
    z[axis] = value
    z[1 - axis] = np.asarray(s, dtype=float)
    return z


def face_quadrature_order(topo, axis, value):
    """1D Gauss point count integrating face traces of N exactly.

    Base trace degree is 1 (Q4) or 2 (Q8); every enrichment on the face adds
    one.  n points integrate degree 2n-1; pair with |dx/ds| up to base degree.
    """
    deg = topo.degree
    deg += sum(1 for e in topo.enrichments if e.axis == axis and e.value == value)
    return max(2, (2 * deg + 2) // 2)

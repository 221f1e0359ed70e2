"""Local interface enrichment: static (coupling) and moving (contact).

Coupling mode inserts an opposing interface node into the host element's
interpolation directly: the element gains the partner node itself, so the
node-to-node continuity condition is handled by assembly with no multiplier.
The insertion site is solved in the material domain (the mesh/material map
is unaffected by enrichment).

Contact mode appends a fresh node r glued to the host face; the contacting
node p keeps independent dofs so the pair can separate.  As p slides, the
enrichment reference is updated by the five-step procedure:

  1. map p into the enriched host:  x^p = N~(zeta^p) x
  2. pin the face component:        zeta^{r*} = zeta^p with zeta_j = c
  3. re-interpolate x^{r*} (enriched, spatial) and X^{r*} (base, material)
  4. commit x^r = x^{r*}, X^r = X^{r*}
  5. u^r = x^r - X^r

Moving the reference is an exact change of interpolation basis, so the
deformation field is preserved; the convective terms cancel identically
(the enrichment function has the form f(zeta)/f(zeta^r)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import elements as el
from .errors import DegenerateEnrichmentError, OutsideElementError


@dataclass
class EnrichmentRecord:
    elem: int
    axis: int
    value: float
    index: int        # position within the element's enrichment tuple
    node_r: int       # global id of the inserted node
    partner: int      # the opposing node this enrichment tracks
    mode: str         # "coupling" | "contact"
    retired: bool = False

    @property
    def s(self):
        return None  # looked up live from the mesh topology

    def site(self, mesh):
        return mesh.topologies[self.elem].enrichments[self.index]


def _clamped_site(topo, axis, value, s, dz_min=el.DZETA_MIN):
    """Shift s out of the exclusion zone around existing face nodes.

    Returns (s_ok, snapped_node_param) where snapped_node_param is not None
    when s sat within dz_min of an existing node (caller may then fall back
    to a node-to-node treatment).
    """
    s = float(np.clip(s, -1.0, 1.0))
    gap_val, s_existing = el.min_site_gap(topo, axis, value, s)
    if gap_val >= dz_min:
        return s, None
    nearest = s_existing[np.argmin(np.abs(s_existing - s))]
    for cand in (nearest + dz_min, nearest - dz_min):
        if abs(cand) <= 1.0 and el.min_site_gap(topo, axis, value, cand)[0] >= dz_min:
            return cand, nearest
    raise DegenerateEnrichmentError(
        f"no admissible enrichment site near s={s} on face ({axis}, {value})"
    )


def enrich_for_coupling(mesh, node_p, e, face, tol=None):
    """Insert node p into host element e on ``face``; material-domain solve.

    Returns (kind, payload): ("merge", host_node) when p coincides with an
    existing node of the host within the site tolerance (the caller
    identifies the dofs), or ("enriched", EnrichmentRecord).
    """
    axis, value = face
    topo = mesh.topologies[e]
    Xe = mesh.element_X(e)
    if tol is None:
        tol = 1e-8 * el.element_diameter(Xe)
    s, res = el.inverse_map_face(topo, axis, value, mesh.X[node_p], Xe)
    if res > tol:
        raise OutsideElementError(
            f"node {node_p} lies {res:.3e} off the host face (tol {tol:.3e})"
        )
    gap_val, s_existing = el.min_site_gap(topo, axis, value, s)
    if gap_val < el.DZETA_MIN:
        nearest = s_existing[np.argmin(np.abs(s_existing - s))]
        local = el.face_nodes(topo, axis, value)
        snodes = el.parent_nodes(topo)[local][:, 1 - axis]
        host_node = mesh.conn[e][local[np.argmin(np.abs(snodes - nearest))]]
        return "merge", int(host_node)
    index = len(topo.enrichments)
    mesh.add_enrichment(e, axis, value, s, new_node=node_p)
    return "enriched", EnrichmentRecord(e, axis, value, index, node_p, node_p, "coupling")


def enrich_for_contact(mesh, d, con):
    """Insert a moving enrichment node under contact constraint ``con``.

    Returns (record, extra_dof_values): the new node's displacement to append
    to the global vector, or (None, None) when the site snapped onto an
    existing node and the constraint stays node-to-(existing-)node.
    """
    e = con.elem
    axis, value = con.axis, con.value
    topo = mesh.topologies[e]
    coords = mesh.element_x(e, d)
    x_p = mesh.X[con.node] + d.reshape(-1, 2)[con.node]
    zp = el.inverse_map(topo, x_p, coords)
    s = float(np.clip(zp[1 - axis], -1.0, 1.0))
    gap_val, _ = el.min_site_gap(topo, axis, value, s)
    if gap_val < el.DZETA_MIN:
        # within tolerance of an existing node: no enrichment, the constraint
        # is effectively node-to-(existing-)node for this step
        return None, None
    zr = el.face_point(axis, value, s)
    x_r = el.map_to_physical(topo, zr, coords)
    X_r = el.map_to_physical(topo, zr, mesh.element_X(e))
    index = len(topo.enrichments)
    node_r = mesh.add_enrichment(e, axis, value, s, X_new=X_r)
    rec = EnrichmentRecord(e, axis, value, index, node_r, con.node, "contact")
    return rec, x_r - X_r


def update_moving_enrichment(mesh, d, rec):
    """Five-step reference update; returns ("ok" | "handoff" | "separated", d).

    "handoff": the partner slid past the host face extent; the record is
    retired (the node stays in the element as a plain interpolation node) and
    the caller re-detects contact so a fresh enrichment is created in the
    neighbor.
    """
    if rec.retired or rec.mode != "contact":
        return "ok", d
    e = rec.elem
    topo = mesh.topologies[e]
    coords = mesh.element_x(e, d)
    x_p = mesh.X[rec.partner] + d.reshape(-1, 2)[rec.partner]
    try:
        zp = el.inverse_map(topo, x_p, coords)
    except OutsideElementError:
        rec.retired = True
        return "handoff", d
    s_new = zp[1 - rec.axis]
    if abs(s_new) > 1.0:
        rec.retired = True
        return "handoff", d
    old_site = rec.site(mesh)
    if abs(s_new - old_site.s) < 1e-14:
        return "ok", d
    try:
        s_new, _ = _clamped_site_excluding(mesh, rec, s_new)
    except DegenerateEnrichmentError:
        rec.retired = True
        return "handoff", d
    zr_new = el.face_point(rec.axis, rec.value, s_new)
    x_r = el.map_to_physical(topo, zr_new, coords)          # enriched, spatial
    base = el.Topology(topo.base)
    Xe_base = mesh.element_X(e)[: topo.base_count]
    X_r = el.map_to_physical(base, zr_new, Xe_base)         # base, material
    mesh.update_enrichment_site(e, rec.index, s_new, X_r)
    d = d.copy()
    d.reshape(-1, 2)[rec.node_r] = x_r - X_r
    return "ok", d


def _clamped_site_excluding(mesh, rec, s):
    """Clamp a new site against every node of the host except rec's own."""
    topo = mesh.topologies[rec.elem]
    enrs = list(topo.enrichments)
    del enrs[rec.index]
    probe = el.Topology(topo.base, tuple(enrs))
    return _clamped_site(probe, rec.axis, rec.value, s)

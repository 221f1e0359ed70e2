"""Simulation model: mesh + materials + loads + constraints in one place.

A Model owns the DofMap and provides the residual/tangent/mass/energy
callables the solvers drive.  It also carries the interface machinery:

* coupling interfaces (mesh tying): enriched node-to-node mode (dofs merged
  by the assembly map, optional DG stabilization) or MPC mode (single- or
  two-pass multi-point constraint rows enforced by multipliers);
* contact configuration: surface pairs, sign registry, optional moving
  enrichment and normal-only DG stabilization of resolved contact patches.

Mesh mutation (contact enrichment) invalidates the DofMap and every cached
operator; ``rebuild`` re-derives them and resizes state vectors.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import assembly as asm
from . import contact as ct
from . import dg
from . import elements as el
from . import enrichment as enr
from .errors import ScenarioError


class CouplingInterface:
    """A declared tie between two edge sets of different bodies."""

    def __init__(self, set_a, set_b, mode="enriched_dg", tol=1e-8):
        if mode not in ("enriched_dg", "enriched", "mpc_single_pass",
                        "mpc_two_pass", "mpc_two_pass_dg", "none"):
            raise ScenarioError(f"unknown coupling mode {mode!r}", "coupling/mode")
        self.set_a = set_a
        self.set_b = set_b
        self.mode = mode
        self.tol = tol
        self.segments = []
        self.mpc_specs = []     # (slave node, elem, weights over conn nodes)
        self.merges = {}        # slave node -> master node
        self.records = []

    @property
    def stabilized(self):
        return self.mode in ("enriched_dg", "mpc_two_pass_dg")


class ContactConfig:
    def __init__(self, pairs, enrichment=False, stabilization="off", tied=False,
                 detect_tol=1e-9):
        self.pair_names = pairs
        self.pairs = []
        self.enrichment = enrichment
        self.stabilization = stabilization   # "off" | "normal" | "full"
        self.tied = tied
        self.detect_tol = detect_tol
        self.registry = ct.BetaRegistry()
        self.records = []
        self.segments = []


class Model:
    def __init__(self, mesh, materials, rho=1.0, loads=(), dirichlet=(),
                 coupling=(), contact=None, rules=None):
        self.mesh = mesh
        self._materials = materials if isinstance(materials, (list, tuple)) else [materials]
        self._rho = rho if isinstance(rho, (list, tuple)) else [rho]
        self.loads = list(loads)
        self.dirichlet = list(dirichlet)
        self.coupling = list(coupling)
        self.contact = contact
        self.rules = rules
        self._mass = {}
        self._setup_coupling()
        self.rebuild()
        if contact is not None:
            contact.pairs = [ct.ContactPair.from_edge_sets(mesh, a, b)
                             for a, b in contact.pair_names]
            contact.registry.refresh(mesh, np.zeros(self.n_dofs), contact.pairs)

    # -- materials ----------------------------------------------------------

    def material_of(self, e):
        body = self.mesh.elem_body[e]
        return self._materials[min(body, len(self._materials) - 1)]

    def rho_of(self, e):
        body = self.mesh.elem_body[e]
        return self._rho[min(body, len(self._rho) - 1)]

    # -- construction -------------------------------------------------------

    def _setup_coupling(self):
        """Create enrichment/merge/MPC data for declared ties (material frame)."""
        mesh = self.mesh
        for itf in self.coupling:
            if itf.mode == "none":
                itf.segments = dg.detect_interface_segments(mesh, itf.set_a, itf.set_b)
                continue
            sides = [(itf.set_a, itf.set_b), (itf.set_b, itf.set_a)]
            if itf.mode == "mpc_single_pass":
                # the first-named set supplies the slave nodes
                sides = sides[:1]
            if itf.mode.startswith("mpc"):
                for node_set, elem_set in sides:
                    self._mpc_pass(itf, node_set, elem_set)
            else:
                for node_set, elem_set in sides:
                    self._enrich_pass(itf, node_set, elem_set)
            itf.segments = dg.detect_interface_segments(mesh, itf.set_a, itf.set_b)

    def _host_on_face(self, node, edge_set_name, skip_merged=()):
        """Find the (elem, face) of an edge set whose face contains the node
        in the material configuration."""
        mesh = self.mesh
        X = mesh.X[node]
        best = None
        for e, face in mesh.edge_sets[edge_set_name]:
            if node in mesh.conn[e]:
                return None  # already a node of the host: conforming
            try:
                s, res = el.inverse_map_face(mesh.topologies[e], face[0], face[1],
                                             X, mesh.element_X(e))
            except Exception:
                continue
            tol = 1e-8 * mesh.element_diameter(e)
            if res <= tol and abs(s) <= 1.0 + 1e-9:
                in_interior = abs(s) <= 1.0 - 1e-9
                cand = (e, face, s)
                if in_interior:
                    return cand
                best = best or cand
        return best

    def _enrich_pass(self, itf, node_set, elem_set):
        mesh = self.mesh
        for node in mesh.edge_set_nodes(node_set):
            if node in itf.merges:
                continue
            host = self._host_on_face(node, elem_set)
            if host is None:
                continue
            e, face, _ = host
            kind, payload = enr.enrich_for_coupling(mesh, int(node), e, face)
            if kind == "merge":
                if itf.merges.get(payload) == node:
                    continue  # reverse of an existing identification
                itf.merges[int(node)] = int(payload)
            else:
                itf.records.append(payload)

    def _mpc_pass(self, itf, node_set, elem_set):
        mesh = self.mesh
        for node in mesh.edge_set_nodes(node_set):
            host = self._host_on_face(node, elem_set)
            if host is None:
                continue
            e, face, s = host
            z = el.face_point(face[0], face[1], s)
            N = el.shape_eval(mesh.topologies[e], z)
            conn = mesh.conn[e]
            near = int(np.argmax(N))
            if N[near] > 1.0 - 1e-9:
                # coincides with a host node: node-to-node tie; dedup reversals
                a, b = sorted((int(node), int(conn[near])))
                if ("pair", a, b) not in [(k, x, y) for k, x, y in
                                          [spec for spec in itf.mpc_specs
                                           if spec[0] == "pair"]]:
                    itf.mpc_specs.append(("pair", a, b))
            else:
                itf.mpc_specs.append(("surface", int(node), (int(e), N.copy())))

    def rebuild(self):
        merge = {}
        for itf in self.coupling:
            merge.update(itf.merges)
        self.dofmap = asm.DofMap(self.mesh, merge)
        self._mass.clear()
        self._dirichlet_cache = None

    @property
    def n_dofs(self):
        return self.dofmap.n_dofs

    # -- boundary conditions -------------------------------------------------

    def prescribed(self, t):
        """(dof indices, values) of every prescribed dof at time t."""
        idx = []
        vals = []
        mesh = self.mesh
        for bc in self.dirichlet:
            nodes = (mesh.node_sets[bc["node_set"]] if "node_set" in bc
                     else np.atleast_1d(bc["nodes"]))
            comps = bc.get("component", "both")
            comps = (0, 1) if comps == "both" else (int(comps),)
            value = bc.get("value", 0.0)
            for n in nodes:
                dofs = self.dofmap.node_dofs(n)
                v = value(t, mesh.X[n]) if callable(value) else value
                v = np.atleast_1d(np.asarray(v, dtype=float))
                for c in comps:
                    idx.append(dofs[c])
                    vals.append(v[c] if len(v) == 2 else v[0])
        if not idx:
            return np.array([], dtype=int), np.array([])
        idx = np.asarray(idx, dtype=int)
        vals = np.asarray(vals, dtype=float)
        # merged dofs may appear twice (identical values); keep the first
        _, keep = np.unique(idx, return_index=True)
        return idx[keep], vals[keep]

    def free_mask(self, t=0.0):
        mask = np.ones(self.n_dofs, dtype=bool)
        idx, _ = self.prescribed(t)
        mask[idx] = False
        return mask

    def apply_prescribed(self, d, t):
        idx, vals = self.prescribed(t)
        d = d.copy()
        d[idx] = vals
        return d

    # -- operators ------------------------------------------------------------

    def external_force(self, t=0.0):
        return asm.external_load_vector(self.mesh, self.dofmap, self.loads, t)

    def internal_force(self, d):
        r = asm.assemble_internal_force(self.mesh, self.dofmap, d, self.material_of,
                                        self.rules)
        r += self._stabilization(d, want_tangent=False)[0]
        return r

    def tangent(self, d):
        _, coo = self._stabilization(d, want_tangent=True)
        return asm.assemble_tangent(self.mesh, self.dofmap, d, self.material_of,
                                    self.rules, extra_coo=coo)

    def _stabilization(self, d, want_tangent):
        r = np.zeros(self.n_dofs)
        rows = [np.array([], dtype=int)]
        cols = [np.array([], dtype=int)]
        vals = [np.array([])]
        for itf in self.coupling:
            if itf.stabilized and itf.segments:
                ri, (rr, cc, vv) = dg.stabilization_terms(
                    self.mesh, self.dofmap, d, self.material_of, itf.segments,
                    normal_only=False, want_tangent=want_tangent)
                r += ri
                rows.append(rr), cols.append(cc), vals.append(vv)
        if self.contact and self.contact.stabilization != "off" and self.contact.segments:
            ri, (rr, cc, vv) = dg.stabilization_terms(
                self.mesh, self.dofmap, d, self.material_of, self.contact.segments,
                normal_only=(self.contact.stabilization == "normal"),
                want_tangent=want_tangent)
            r += ri
            rows.append(rr), cols.append(cc), vals.append(vv)
        return r, (np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))

    def strain_energy(self, d):
        return asm.total_strain_energy(self.mesh, self.dofmap, d, self.material_of,
                                       self.rules)

    def mass_matrix(self, lumped=False):
        key = bool(lumped)
        if key not in self._mass:
            self._mass[key] = asm.assemble_mass(self.mesh, self.dofmap, self.rho_of,
                                                lumped=lumped)
        return self._mass[key]

    # -- constraint rows -------------------------------------------------------

    def mpc_rows(self):
        """Equality rows (index array, value array) of every MPC tie; the
        constraint is row . d = 0 per displacement component."""
        rows = []
        for itf in self.coupling:
            for spec in itf.mpc_specs:
                if spec[0] == "pair":
                    _, a, b = spec
                    for c in range(2):
                        idx = np.array([self.dofmap.node_dofs(a)[c],
                                        self.dofmap.node_dofs(b)[c]])
                        rows.append((idx, np.array([1.0, -1.0])))
                else:
                    _, node, (e, N) = spec
                    conn = self.mesh.conn[e]
                    for c in range(2):
                        idx = [self.dofmap.node_dofs(node)[c]]
                        val = [1.0]
                        for a, w in zip(conn, N):
                            idx.append(self.dofmap.node_dofs(a)[c])
                            val.append(-w)
                        rows.append((np.asarray(idx), np.asarray(val)))
        return rows

    # -- postprocessing ---------------------------------------------------------

    def stress_samples(self, d):
        """Cauchy stress at the quadrature points of every element.

        Returns rows (elem, x, y, s11, s22, s12) in the current configuration.
        """
        out = []
        for e in range(self.mesh.n_elements):
            topo = self.mesh.topologies[e]
            Xe = self.mesh.element_X(e)
            de = self.dofmap.gather(d, self.mesh.conn[e])
            model = self.material_of(e)
            rule = self.rules[e] if self.rules else None
            from .quadrature import default_rule
            rule = rule or default_rule(topo)
            for z in rule.points:
                dN = el.shape_grad(topo, z)
                J = Xe.T @ dN
                gradX = dN @ np.linalg.inv(J)
                G = de.T @ gradX
                P = model.piola_G(G)
                F = np.eye(2) + G
                jdet = F[0, 0] * F[1, 1] - F[0, 1] * F[1, 0]
                sig = P @ F.T / jdet
                x = el.shape_eval(topo, z) @ (Xe + de)
                out.append((e, x[0], x[1], sig[0, 0], sig[1, 1], sig[0, 1]))
        return np.array(out)

    def momenta(self, d, v, lumped=False):
        """Linear momentum (2,) and angular momentum about the origin."""
        M = self.mass_matrix(lumped)
        mv = M @ v
        mvn = mv.reshape(-1, 2)
        p = mvn.sum(axis=0)
        # current node positions; merged slots take the representative's X
        xs = np.zeros((self.n_dofs // 2, 2))
        counts = np.zeros(self.n_dofs // 2)
        for node in range(self.mesh.n_nodes):
            slot = self.dofmap.node_slot[node]
            xs[slot] += self.mesh.X[node]
            counts[slot] += 1
        xs /= counts[:, None]
        xs += d.reshape(-1, 2)
        L = float(np.sum(xs[:, 0] * mvn[:, 1] - xs[:, 1] * mvn[:, 0]))
        return p, L

    # -- contact plumbing --------------------------------------------------------

    def contact_detect(self, d, active_keys, touch_tol=None):
        """Violated constraints; ``touch_tol`` > 0 also reports zero-gap
        (touching) candidates, used to seed a floating body's active set."""
        cfg = self.contact
        if cfg is None:
            return []
        if touch_tol is not None:
            return ct.detect_contacts(self.mesh, d, cfg.pairs, cfg.registry,
                                      active_keys, inside_tol=10.0 * touch_tol,
                                      pen_tol=-touch_tol)
        return ct.detect_contacts(self.mesh, d, cfg.pairs, cfg.registry,
                                  active_keys, pen_tol=cfg.detect_tol)

    def refresh_betas(self, d):
        if self.contact:
            self.contact.registry.refresh(self.mesh, d, self.contact.pairs)

    def add_contact_enrichment(self, d, con):
        """Enrich the target element for ``con`` if configured; returns the
        (possibly resized) displacement vector."""
        cfg = self.contact
        if not cfg.enrichment:
            return d
        topo = self.mesh.topologies[con.elem]
        for rec in cfg.records:
            if not rec.retired and rec.elem == con.elem and rec.partner == con.node:
                return d  # already tracked
        rec, u_r = enr.enrich_for_contact(self.mesh, d, con)
        if rec is None:
            return d
        cfg.records.append(rec)
        self.rebuild()
        d2 = np.zeros(self.n_dofs)
        d2[: len(d)] = d
        d2[self.dofmap.node_dofs(rec.node_r)] = u_r
        return d2

    def update_moving_enrichments(self, d):
        cfg = self.contact
        if not cfg or not cfg.enrichment:
            return d, False
        changed = False
        for rec in list(cfg.records):
            status, d = enr.update_moving_enrichment(self.mesh, d, rec)
            if status == "handoff":
                changed = True
        return d, changed

    def rebuild_contact_segments(self, d):
        cfg = self.contact
        if not cfg or cfg.stabilization == "off":
            return
        scale = max(self.mesh.element_diameter(e)
                    for pair in cfg.pairs for e in pair.elems_a + pair.elems_b)
        segs = []
        for (a, b) in cfg.pair_names:
            segs += dg.detect_interface_segments(
                self.mesh, a, b, d=d, proximity=1e-6 * scale)
        cfg.segments = segs

"""Solution drivers: direct solves, constrained Newton, quasi-static stepping.

The constrained Newton iterates on the bordered system

    [ K_hat   -J ] [dd ]   [ -r ]
    [ rho J^T  0 ] [dl ] = [ -g ]

with K_hat the tangent minus the multiplier-weighted constraint Hessians,
J the matrix of constraint gradients (columns), and rho a per-constraint
row scaling (1 for quasi-statics, 2 for midpoint dynamics where constraints
are functions of d_{n+1} = 2y - d_n).  The system is nonsymmetric in
general and is factorized directly.

The quasi-static driver runs the active-set strategy: solve, remove
constraints with negative multipliers, add the single most violated
constraint, repeat to a fixed point; enrichment insertion and the moving
reference update happen between converged increments.  Non-convergence
halves the increment (bounded retries).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import contact as ct
from .errors import (ConvergenceError, InvertedElementError, OutsideElementError,
                     SingularSystemError)


def linear_solve(K, rhs):
    """Direct sparse LU solve with a residual guard (nonsymmetric-capable)."""
    K = sp.csc_matrix(K)
    try:
        lu = spla.splu(K)
        x = lu.solve(rhs)
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystemError("non-finite solution from factorization")
    nb = np.linalg.norm(rhs)
    res = np.linalg.norm(K @ x - rhs)
    if res > max(1e-10 * nb, 1e-13 * max(nb, 1.0)):
        raise SingularSystemError(f"direct solve residual {res:.2e} vs |b| {nb:.2e}")
    return x


def solve_bordered(K, free, cols, row_scales, r, g):
    """Solve the bordered KKT system on the free dofs.

    cols: list of (dof indices, values) constraint gradients (full-dof);
    row_scales: per-constraint factor on the transposed row block.
    Returns (full-size dd with zeros at prescribed dofs, dlam).
    """
    nf = int(free.sum())
    m = len(cols)
    pos = np.cumsum(free) - 1  # full dof -> free index
    Kff = K[free][:, free] if sp.issparse(K) else sp.csr_matrix(K[np.ix_(free, free)])
    if m == 0:
        dd_f = linear_solve(Kff, -r[free])
        dd = np.zeros(len(free))
        dd[free] = dd_f
        return dd, np.zeros(0)
    Jd = np.zeros((nf, m))
    for j, (idx, vals) in enumerate(cols):
        keep = free[idx]
        np.add.at(Jd[:, j], pos[idx[keep]], vals[keep])
    J = sp.csc_matrix(Jd)
    R = sp.diags(np.asarray(row_scales, dtype=float))
    A = sp.bmat([[Kff, -J], [R @ J.T, None]], format="csc")
    rhs = np.concatenate([-r[free], -np.asarray(g)])
    x = linear_solve(A, rhs)
    dd = np.zeros(len(free))
    dd[free] = x[:nf]
    return dd, x[nf:]


# ---------------------------------------------------------------------------
# Constraint wrappers for the static problem
# ---------------------------------------------------------------------------

class MpcConstraint:
    """Linear tie row . d = 0; permanently active, no optimality check."""

    rho = 1.0

    def __init__(self, idx, vals, tol_scale=1.0):
        self.idx = idx
        self.vals = vals
        self.lam = 0.0
        self.tol_scale = tol_scale
        self.permanent = True

    def gap(self, model, d):
        return float(self.vals @ d[self.idx])

    def gradient(self, model, d):
        return self.idx, self.vals

    def hessian(self, model, d):
        return None


class ContactWrapper:
    """Quasi-static view of a contact constraint (evaluated at current d)."""

    rho = 1.0

    def __init__(self, con, tied=False):
        self.con = con
        self.tol_scale = 1.0
        self.permanent = tied

    @property
    def lam(self):
        return self.con.lam

    @lam.setter
    def lam(self, v):
        self.con.lam = v

    def gap(self, model, d):
        return ct.gap(model.mesh, d, self.con)

    def gradient(self, model, d):
        return ct.constraint_gradient(model.mesh, model.dofmap, d, self.con)

    def hessian(self, model, d):
        return ct.constraint_hessian(model.mesh, model.dofmap, d, self.con)


@dataclass
class NewtonOptions:
    tol_r: float = 1e-10
    tol_g: float = 1e-10
    max_iter: int = 50
    max_outer: int = 60
    max_halvings: int = 4
    lam_drop_tol: float = 0.0
    ref_floor: float = 1e-30


def newton_static(model, d, t, cons, opts):
    """Newton on T(d) + F^c - F(t) = 0 with the active constraints held.

    Returns (d, residual history).  Multipliers are updated in place.
    """
    F = model.external_force(t)
    free = model.free_mask(t)
    hist = []
    ref = max(np.linalg.norm(F[free]), opts.ref_floor)
    for it in range(opts.max_iter):
        r = model.internal_force(d) - F
        ref = max(ref, np.linalg.norm(r[free] + F[free]))
        grads = []
        gaps = []
        hess = []
        for c in cons:
            gi = c.gradient(model, d)
            grads.append(gi)
            gaps.append(c.gap(model, d))
            r[gi[0]] -= c.lam * gi[1]
            hess.append(c.hessian(model, d))
        rn = np.linalg.norm(r[free])
        hist.append(rn)
        g_ok = all(abs(g) <= opts.tol_g * c.tol_scale for g, c in zip(gaps, cons))
        if rn <= opts.tol_r * max(ref, opts.ref_floor) and g_ok:
            return d, hist
        # round-off floor: accept a stagnated iterate whose residual and gaps
        # sit at machine level relative to the force/coordinate scales
        eps = np.finfo(float).eps
        stagnated = len(hist) >= 3 and rn >= 0.5 * hist[-2] and hist[-2] >= 0.5 * hist[-3]
        g_floor = all(abs(g) <= max(opts.tol_g * c.tol_scale, 1e4 * eps)
                      for g, c in zip(gaps, cons))
        if stagnated and rn <= 1e4 * eps * max(ref, opts.ref_floor) and g_floor:
            return d, hist
        extra = None
        if any(h is not None for h in hess):
            rows, colsx, vals = [], [], []
            for c, h in zip(cons, hess):
                if h is None or c.lam == 0.0:
                    continue
                idx, H = h
                rr, cc = np.meshgrid(idx, idx, indexing="ij")
                rows.append(rr.ravel())
                colsx.append(cc.ravel())
                vals.append((-c.lam) * H.ravel())
            if rows:
                extra = (np.concatenate(rows), np.concatenate(colsx),
                         np.concatenate(vals))
        K = model.tangent(d)
        if extra is not None:
            K = K + sp.coo_matrix((extra[2], (extra[0], extra[1])),
                                  shape=K.shape).tocsr()
        dd, dl = solve_bordered(K, free, grads, [c.rho for c in cons], r, gaps)
        d = d + dd
        for c, dli in zip(cons, dl):
            c.lam += dli
        if not np.all(np.isfinite(d)) or (len(hist) > 3 and rn > 1e6 * (hist[0] + ref)):
            break
    raise ConvergenceError(f"static Newton: no convergence, |r| history {hist[-4:]}")


# ---------------------------------------------------------------------------
# Quasi-static driver
# ---------------------------------------------------------------------------

@dataclass
class Increment:
    t: float
    d: np.ndarray
    active: list
    newton_history: list = field(default_factory=list)


def quasi_static_solve(model, times, opts=None, on_increment=None):
    """March prescribed time stations; returns the list of Increments.

    Active-set loop per increment: converge, drop lambda < 0 (unless tied),
    add the most violated detection, repeat.  Contact enrichment (when
    configured) is inserted at constraint activation; moving references are
    updated after convergence, retiring records (handoff) re-enters the
    loop so a fresh enrichment is created in the neighbor element.
    """
    opts = opts or NewtonOptions()
    d = np.zeros(model.n_dofs)
    active = []
    history = []
    tied = bool(model.contact and model.contact.tied)
    t_prev = 0.0
    queue = [(float(t), 0) for t in times]
    queue.reverse()
    while queue:
        t, depth = queue.pop()
        try:
            d_new, hist = _solve_increment(model, d, t, active, opts, tied)
        except (ConvergenceError, SingularSystemError, OutsideElementError,
                InvertedElementError):
            if depth >= opts.max_halvings:
                raise
            mid = 0.5 * (t_prev + t)
            queue.append((t, depth + 1))
            queue.append((mid, depth + 1))
            continue
        d = d_new
        t_prev = t
        history.append(Increment(t, d.copy(), [c.key for c in active], hist))
        if on_increment:
            on_increment(model, history[-1])
    return history


def _solve_increment(model, d, t, active, opts, tied):
    d = model.apply_prescribed(d, t)
    has_contact = model.contact is not None
    hist = []
    for outer in range(opts.max_outer):
        if has_contact:
            _drop_dangling(model, d, active)
        cons = [MpcConstraint(*row) for row in model.mpc_rows()]
        cons += [ContactWrapper(c, tied) for c in active]
        try:
            d, h = newton_static(model, d, t, cons, opts)
        except SingularSystemError:
            # a floating body: seed the active set with a touching candidate
            # (zero-gap contacts do not register as violations)
            if not has_contact:
                raise
            touching = model.contact_detect(d, {c.key for c in active},
                                            touch_tol=1e-5)
            if not touching:
                raise
            con = touching[0]
            d = model.add_contact_enrichment(d, con)
            active.append(con)
            continue
        hist.append(h)
        if has_contact and not tied:
            sc = max((abs(c.lam) for c in active), default=0.0)
            dropped = [c for c in active if c.lam < -max(opts.lam_drop_tol,
                                                         1e-12 * sc)]
            if dropped:
                active[:] = [c for c in active if c not in dropped]
                continue
        if has_contact:
            violated = model.contact_detect(d, {c.key for c in active})
            if violated:
                con = violated[0]
                d = model.add_contact_enrichment(d, con)
                active.append(con)
                continue
        # converged with a consistent active set: commit-phase updates
        if has_contact:
            d, changed = model.update_moving_enrichments(d)
            changed |= _drop_dangling(model, d, active)
            if changed:
                continue
            model.rebuild_contact_segments(d)
            model.refresh_betas(d)
        return d, hist
    raise ConvergenceError(f"active-set loop did not settle at t={t}")


def _drop_dangling(model, d, active):
    """Remove constraints whose node left the face extent of its element
    (slid past a corner); detection re-adds them against the neighbor."""
    drop = []
    for c in active:
        z = ct.resolve_zeta(model.mesh, d, c)
        if z is None or abs(z[1 - c.axis]) > 1.0 + 1e-6:
            drop.append(c)
        rec_retired = any(r.retired and r.partner == c.node and r.elem == c.elem
                          for r in (model.contact.records if model.contact else []))
        if rec_retired and c not in drop:
            drop.append(c)
    if drop:
        active[:] = [c for c in active if c not in drop]
        return True
    return False

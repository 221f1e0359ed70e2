"""Constrained midpoint dynamics with an energy Lagrange multiplier.

Midpoint step (unknown y = d_{n+1/2}, so d_{n+1} = 2y - d_n):

    r(y) = M [4/dt^2 (y - d_n) - 2/dt v_n] + T(y) - F_{n+1/2}
           + F^c(2y - d_n) + F^E = 0
    g_i^c(2y - d_n) = 0             (active contact constraints)
    g^E(2y - d_n)   = 0             (energy balance over the step)

with F^c = -sum lam_i grad g_i^c(d_{n+1}), F^E = -lam^E grad g^E and

    g^E = 1/2 v_{n+1}.M v_{n+1} + Phi_{n+1}
        - 1/2 v_n.M v_n - Phi_n - F_{n+1/2}.(d_{n+1} - d_n),
    v_{n+1} = (4/dt)(y - d_n) - v_n.

grad g^E = (2/dt) M v_{n+1} + T(d_{n+1}) - F_{n+1/2}   (w.r.t. d_{n+1};
the chain rule to y doubles it, hence the factor-2 row scaling), and its
y-derivative is H^E = 8/dt^2 M + 2 K_t(d_{n+1}).

Newton iterates on the bordered system with K_eff = 4/dt^2 M + K_t(y)
- 2 sum lam_i H_i^c - lam^E H^E; the multiplier columns are -grad g and the
constraint rows are 2 grad g^T (constraints live at d_{n+1}).

The energy constraint exists only on steps where contact participates
("contact_only", the default), always, or never, per configuration.  For
persistent contact the converged lam^E is zero; at impact it supplies the
algorithmic velocity correction that restores the end-of-step energy
balance.

Comparison integrators: trapezoidal Newmark (beta=1/4, gamma=1/2) and
Generalized-alpha with interpolated displacement/forcing (alpha_H) and
acceleration (alpha_B); their contact constraints are enforced at the end
of the step without the energy multiplier.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import contact as ct
from .errors import ConvergenceError, InvertedElementError, OutsideElementError, \
    SingularSystemError
from .solver import linear_solve, solve_bordered


@dataclass
class StepState:
    d: np.ndarray
    v: np.ndarray
    t: float = 0.0
    a: np.ndarray = None          # used by Newmark / generalized-alpha
    active: list = field(default_factory=list)
    lamE: float = 0.0


@dataclass
class EnergyLedger:
    step: int
    t: float
    kinetic_mid: float
    potential_mid: float
    total_mid: float
    kinetic_end: float
    potential_end: float
    total_end: float
    px: float
    py: float
    L: float
    lambdaE: float
    work_contact: float = 0.0     # accumulated work of the contact forces
    work_external: float = 0.0

    CSV_COLUMNS = ("step,t,kinetic_mid,potential_mid,total_mid,"
                   "kinetic_end,potential_end,total_end,px,py,L,lambdaE")

    def csv_row(self):
        return (f"{self.step},{self.t:.12g},{self.kinetic_mid:.12g},"
                f"{self.potential_mid:.12g},{self.total_mid:.12g},"
                f"{self.kinetic_end:.12g},{self.potential_end:.12g},"
                f"{self.total_end:.12g},{self.px:.12g},{self.py:.12g},"
                f"{self.L:.12g},{self.lambdaE:.12g}")


@dataclass
class DynamicOptions:
    dt: float = 1e-5
    steps: int = 15
    lumped: bool = True
    scheme: str = "midpoint"        # "midpoint" | "newmark" | "generalized_alpha"
    alpha_h: float = 0.5
    alpha_b: float = 0.5
    energy_constraint: str = "contact_only"   # "always" | "contact_only" | "off"
    energy_restrict: bool = False   # restrict g^E to the contacting bodies
    tol_r: float = 1e-10
    tol_g: float = 1e-10
    tol_e: float = 1e-10
    max_newton: int = 50
    max_halvings: int = 4
    ref_floor: float = 1e-30


# ---------------------------------------------------------------------------
# Midpoint pieces (exposed for direct verification)
# ---------------------------------------------------------------------------

def midpoint_velocity(y, d_n, v_n, dt):
    return (4.0 / dt) * (y - d_n) - v_n


def midpoint_residual(system, y, d_n, v_n, dt, F_mid, active=(), lamE=0.0,
                      mask=None):
    """r(y) of the midpoint system, including contact and energy forces."""
    M = system.mass
    d1 = 2.0 * y - d_n
    r = M @ ((4.0 / dt**2) * (y - d_n) - (2.0 / dt) * v_n)
    r = r + system.internal_force(y) - F_mid
    for con in active:
        idx, vals = system.constraint_gradient(d1, con)
        r[idx] -= con.lam * vals
    if lamE != 0.0:
        r = r - lamE * energy_gradient(system, y, d_n, v_n, dt, F_mid, mask)[0]
    return r


def energy_constraint(system, y, d_n, v_n, dt, F_mid, mask=None, phi_n=None):
    """g^E over [t_n, t_{n+1}] with midpoint kinematics."""
    M = system.mass
    d1 = 2.0 * y - d_n
    v1 = midpoint_velocity(y, d_n, v_n, dt)
    if mask is not None:
        v1 = v1 * mask
        v_n = v_n * mask
    kin1 = 0.5 * v1 @ (M @ v1)
    kin0 = 0.5 * v_n @ (M @ v_n)
    phi1 = system.strain_energy(d1)
    phi0 = system.strain_energy(d_n) if phi_n is None else phi_n
    dd = d1 - d_n
    if mask is not None:
        dd = dd * mask
    return kin1 + phi1 - kin0 - phi0 - F_mid @ dd


def energy_gradient(system, y, d_n, v_n, dt, F_mid, mask=None):
    """(grad g^E w.r.t. d_{n+1}, callable building H^E w.r.t. y)."""
    M = system.mass
    d1 = 2.0 * y - d_n
    v1 = midpoint_velocity(y, d_n, v_n, dt)
    g = (2.0 / dt) * (M @ (v1 * mask if mask is not None else v1))
    g = g + system.internal_force(d1) - F_mid
    if mask is not None:
        g = g * mask

    def hessian():
        H = (8.0 / dt**2) * M + 2.0 * system.tangent(d1)
        if mask is not None:
            D = sp.diags(mask.astype(float))
            H = D @ H @ D
        return H

    return g, hessian


def kkt_iterate(system, y, d_n, v_n, dt, F_mid, active, lamE, energy_on,
                free, mask=None):
    """One Newton increment of the bordered midpoint system.

    Returns (dy, dlam array, residual norm, gap array, gE, force reference).
    """
    d1 = 2.0 * y - d_n
    accel_part = system.mass @ ((4.0 / dt**2) * (y - d_n))
    vel_part = system.mass @ ((2.0 / dt) * v_n)
    T = system.internal_force(y)
    ref = max(np.linalg.norm(accel_part[free]), np.linalg.norm(vel_part[free]),
              np.linalg.norm(T[free]), np.linalg.norm(F_mid))
    r = accel_part - vel_part + T - F_mid
    cols = []
    gaps = []
    hess_coo = []
    for con in active:
        idx, vals = system.constraint_gradient(d1, con)
        r[idx] -= con.lam * vals
        cols.append((idx, vals))
        gaps.append(system.constraint_gap(d1, con))
        if con.lam != 0.0:
            hidx, H = system.constraint_hessian(d1, con)
            rr, cc = np.meshgrid(hidx, hidx, indexing="ij")
            hess_coo.append((rr.ravel(), cc.ravel(),
                             (-2.0 * con.lam) * H.ravel()))
    gE = 0.0
    if energy_on:
        gradE, hessE = energy_gradient(system, y, d_n, v_n, dt, F_mid, mask)
        r = r - lamE * gradE
        gE = energy_constraint(system, y, d_n, v_n, dt, F_mid, mask)
    K = (4.0 / dt**2) * system.mass + system.tangent(y)
    if energy_on and lamE != 0.0:
        K = K - lamE * hessE()
    if hess_coo:
        rows = np.concatenate([h[0] for h in hess_coo])
        ccs = np.concatenate([h[1] for h in hess_coo])
        vvs = np.concatenate([h[2] for h in hess_coo])
        K = sp.csr_matrix(K) + sp.coo_matrix((vvs, (rows, ccs)), shape=K.shape).tocsr()
    if energy_on:
        cols = cols + [(np.arange(len(r)), gradE)]
        gaps = gaps + [gE]
    rho = [2.0] * len(gaps)
    dd, dl = solve_bordered(sp.csr_matrix(K), free, cols, rho, r, gaps)
    rn = np.linalg.norm(r[free])
    return dd, dl, rn, np.asarray(gaps), gE, ref


# ---------------------------------------------------------------------------
# System adapter: wraps a Model (or any stub with the same surface)
# ---------------------------------------------------------------------------

class DynamicSystem:
    """Holds the constant mass matrix and closes over the model operators."""

    def __init__(self, model, lumped=True):
        self.model = model
        self.mass = model.mass_matrix(lumped)
        self.lumped = lumped

    def internal_force(self, d):
        return self.model.internal_force(d)

    def tangent(self, d):
        return self.model.tangent(d)

    def strain_energy(self, d):
        return self.model.strain_energy(d)

    def constraint_gap(self, d, con):
        return ct.gap(self.model.mesh, d, con)

    def constraint_gradient(self, d, con):
        return ct.constraint_gradient(self.model.mesh, self.model.dofmap, d, con)

    def constraint_hessian(self, d, con):
        return ct.constraint_hessian(self.model.mesh, self.model.dofmap, d, con)


def _contact_body_mask(model, active):
    bodies = set()
    for con in active:
        bodies.add(int(model.mesh.node_body[con.node]))
        bodies.add(int(model.mesh.elem_body[con.elem]))
    mask = np.zeros(model.n_dofs, dtype=bool)
    for node in range(model.mesh.n_nodes):
        if model.mesh.node_body[node] in bodies:
            mask[model.dofmap.node_dofs(node)] = True
    return mask


# ---------------------------------------------------------------------------
# Steppers
# ---------------------------------------------------------------------------

def advance_step(model, system, state, opts):
    """One midpoint step with active-set resolution and energy multiplier.

    Returns (new state, work of contact forces, work of external forces).
    """
    dt = opts.dt
    d_n, v_n, t = state.d, state.v, state.t
    F_mid = model.external_force(t + 0.5 * dt)
    free = model.free_mask(t + dt)
    active = list(state.active)
    contact_touched = bool(active)
    y = model.apply_prescribed(d_n + 0.5 * dt * v_n, t + 0.5 * dt)
    lamE = 0.0
    e_scale = max(abs(0.5 * v_n @ (system.mass @ v_n)) +
                  abs(system.strain_energy(d_n)), 1.0)
    f_scale = max(np.linalg.norm(F_mid), opts.ref_floor)

    for outer in range(60):
        energy_on = opts.energy_constraint == "always" or (
            opts.energy_constraint == "contact_only" and contact_touched)
        mask = None
        if energy_on and opts.energy_restrict and active:
            mask = _contact_body_mask(model, active)
        lamE = lamE if energy_on else 0.0
        ok = False
        for it in range(opts.max_newton):
            dd, dl, rn, gaps, gE, ref = kkt_iterate(
                system, y, d_n, v_n, dt, F_mid, active, lamE, energy_on, free, mask)
            ref = max(ref, f_scale, opts.ref_floor)
            g_ok = True
            if len(gaps):
                gc = gaps[:-1] if energy_on else gaps
                g_ok = np.all(np.abs(gc) <= opts.tol_g) if len(gc) else True
                if energy_on:
                    g_ok = g_ok and abs(gaps[-1]) <= opts.tol_e * e_scale
            if rn <= opts.tol_r * ref and g_ok:
                ok = True
                break
            y = y + dd
            nlam = len(active)
            for con, dli in zip(active, dl[:nlam]):
                con.lam += dli
            if energy_on:
                lamE += dl[-1]
            if not np.all(np.isfinite(y)):
                break
        if not ok:
            raise ConvergenceError(f"midpoint Newton stalled at t={t:.6g}")
        # optimality: drop negative multipliers, re-solve
        sc = max((abs(c.lam) for c in active), default=0.0)
        dropped = [c for c in active if c.lam < -1e-12 * sc]
        if dropped:
            for c in dropped:
                active.remove(c)
            contact_touched = True
            continue
        # detection at the end-of-step configuration
        d1 = 2.0 * y - d_n
        violated = model.contact_detect(d1, {c.key for c in active})
        if violated:
            active.append(violated[0])
            contact_touched = True
            continue
        break
    else:
        raise ConvergenceError(f"active-set loop did not settle at t={t:.6g}")

    d1 = 2.0 * y - d_n
    v1 = midpoint_velocity(y, d_n, v_n, dt)
    dd_step = d1 - d_n
    w_con = 0.0
    for con in active:
        idx, vals = system.constraint_gradient(d1, con)
        w_con += con.lam * (vals @ dd_step[idx])
    w_ext = F_mid @ dd_step
    new = StepState(d1, v1, t + dt, None, active, lamE)
    model.refresh_betas(d1)
    return new, w_con, w_ext


def alt_integrator_step(model, system, state, opts):
    """Trapezoidal Newmark or generalized-alpha step, contact at end of step.

    Newmark beta = 1/4, gamma = 1/2; generalized-alpha interpolates
    displacement/forcing with alpha_H and acceleration with alpha_B.
    """
    dt = opts.dt
    if opts.scheme == "newmark":
        aH = aB = 1.0
    else:
        aH, aB = opts.alpha_h, opts.alpha_b
    d_n, v_n, t = state.d, state.v, state.t
    a_n = state.a
    if a_n is None:
        a_n = initial_acceleration(model, system, state)
    F1 = model.external_force(t + dt)
    Fn = model.external_force(t)
    Fa = aH * F1 + (1.0 - aH) * Fn
    free = model.free_mask(t + dt)
    active = list(state.active)
    d1 = model.apply_prescribed(d_n + dt * v_n + 0.5 * dt**2 * a_n, t + dt)

    def kinematics(d1):
        a1 = (4.0 / dt**2) * (d1 - d_n - dt * v_n) - a_n
        v1 = v_n + 0.5 * dt * (a_n + a1)
        return a1, v1

    for outer in range(60):
        ok = False
        for it in range(opts.max_newton):
            a1, v1 = kinematics(d1)
            da = aH * d1 + (1.0 - aH) * d_n
            r = system.mass @ (aB * a1 + (1.0 - aB) * a_n)
            r = r + system.internal_force(da) - Fa
            cols = []
            gaps = []
            hess_coo = []
            for con in active:
                idx, vals = system.constraint_gradient(d1, con)
                r[idx] -= con.lam * vals
                cols.append((idx, vals))
                gaps.append(system.constraint_gap(d1, con))
                if con.lam != 0.0:
                    hidx, H = system.constraint_hessian(d1, con)
                    rr, cc = np.meshgrid(hidx, hidx, indexing="ij")
                    hess_coo.append((rr.ravel(), cc.ravel(), (-con.lam) * H.ravel()))
            rn = np.linalg.norm(r[free])
            ref = max(np.linalg.norm(Fa),
                      np.linalg.norm(system.internal_force(da)[free]),
                      np.linalg.norm((system.mass @ ((4.0 / dt**2) * (d1 - d_n)))[free]),
                      np.linalg.norm((system.mass @ ((4.0 / dt) * v_n))[free]),
                      opts.ref_floor)
            g_ok = np.all(np.abs(gaps) <= opts.tol_g) if gaps else True
            if rn <= opts.tol_r * ref and g_ok:
                ok = True
                break
            K = aB * (4.0 / dt**2) * system.mass + aH * system.tangent(da)
            if hess_coo:
                rows = np.concatenate([h[0] for h in hess_coo])
                ccs = np.concatenate([h[1] for h in hess_coo])
                vvs = np.concatenate([h[2] for h in hess_coo])
                K = sp.csr_matrix(K) + sp.coo_matrix(
                    (vvs, (rows, ccs)), shape=K.shape).tocsr()
            dd, dl = solve_bordered(sp.csr_matrix(K), free, cols,
                                    [1.0] * len(gaps), r, gaps)
            d1 = d1 + dd
            for con, dli in zip(active, dl):
                con.lam += dli
            if not np.all(np.isfinite(d1)):
                break
        if not ok:
            raise ConvergenceError(f"{opts.scheme} Newton stalled at t={t:.6g}")
        sc = max((abs(c.lam) for c in active), default=0.0)
        dropped = [c for c in active if c.lam < -1e-12 * sc]
        if dropped:
            for c in dropped:
                active.remove(c)
            continue
        violated = model.contact_detect(d1, {c.key for c in active})
        if violated:
            active.append(violated[0])
            continue
        break
    else:
        raise ConvergenceError(f"active-set loop did not settle at t={t:.6g}")

    a1, v1 = kinematics(d1)
    dd_step = d1 - d_n
    w_con = 0.0
    for con in active:
        idx, vals = system.constraint_gradient(d1, con)
        w_con += con.lam * (vals @ dd_step[idx])
    w_ext = Fa @ dd_step
    new = StepState(d1, v1, t + dt, a1, active, 0.0)
    model.refresh_betas(d1)
    return new, w_con, w_ext


def initial_acceleration(model, system, state):
    """Solve M a0 = F(t0) - T(d0) on the free dofs."""
    free = model.free_mask(state.t)
    rhs = model.external_force(state.t) - system.internal_force(state.d)
    a0 = np.zeros_like(state.d)
    M = sp.csc_matrix(system.mass)[free][:, free]
    a0[free] = linear_solve(M, rhs[free])
    return a0


def diagnostics(model, system, step, state, y_mid=None, v_mid=None,
                work_contact=0.0, work_external=0.0):
    """Energy/momentum ledger row at a committed step."""
    M = system.mass
    kin_end = 0.5 * state.v @ (M @ state.v)
    pot_end = system.strain_energy(state.d) - work_external
    if y_mid is None:
        kin_mid, pot_mid = kin_end, pot_end
    else:
        kin_mid = 0.5 * v_mid @ (M @ v_mid)
        pot_mid = system.strain_energy(y_mid) - work_external
    p, L = model.momenta(state.d, state.v, lumped=system.lumped)
    return EnergyLedger(step, state.t, kin_mid, pot_mid, kin_mid + pot_mid,
                        kin_end, pot_end, kin_end + pot_end, p[0], p[1], L,
                        state.lamE, work_contact, work_external)


def dynamic_solve(model, opts, d0=None, v0=None, on_step=None):
    """March ``opts.steps`` steps of the configured scheme.

    Returns (list of StepState, list of EnergyLedger).  Newton failures halve
    the step (bounded by ``opts.max_halvings``); ledger rows are emitted at
    the nominal stations only.
    """
    n = model.n_dofs
    d = np.zeros(n) if d0 is None else np.asarray(d0, dtype=float).copy()
    v = np.zeros(n) if v0 is None else np.asarray(v0, dtype=float).copy()
    system = DynamicSystem(model, opts.lumped)
    state = StepState(model.apply_prescribed(d, 0.0), v, 0.0)
    if opts.scheme in ("newmark", "generalized_alpha"):
        state.a = initial_acceleration(model, system, state)
    states = [state]
    rows = []
    w_con_acc = 0.0
    w_ext_acc = 0.0
    for k in range(opts.steps):
        state, w_con, w_ext = _try_step(model, system, state, opts, opts.dt, 0)
        w_con_acc += w_con
        w_ext_acc += w_ext
        if opts.scheme == "midpoint":
            y_mid = 0.5 * (state.d + states[-1].d)
            v_mid = 0.5 * (state.v + states[-1].v)
        else:
            y_mid = v_mid = None
        row = diagnostics(model, system, k + 1, state, y_mid, v_mid,
                          w_con_acc, w_ext_acc)
        rows.append(row)
        states.append(state)
        if on_step:
            on_step(model, state, row)
    return states, rows


def _try_step(model, system, state, opts, dt, depth):
    sub = replace(opts, dt=dt)
    try:
        if opts.scheme == "midpoint":
            return advance_step(model, system, state, sub)
        return alt_integrator_step(model, system, state, sub)
    except (ConvergenceError, SingularSystemError, OutsideElementError,
            InvertedElementError):
        if depth >= opts.max_halvings:
            raise
        half, w1, e1 = _try_step(model, system, state, opts, 0.5 * dt, depth + 1)
        full, w2, e2 = _try_step(model, system, half, opts, 0.5 * dt, depth + 1)
        return full, w1 + w2, e1 + e2

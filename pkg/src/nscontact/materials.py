"""Hyperelastic constitutive models under a plane-strain embedding.

The 2x2 in-plane deformation gradient F is embedded as diag(F, 1): the
out-of-plane stretch is one, so J = det F and tr C_3d = tr(F^T F) + 1.
All models return energy density, first Piola-Kirchhoff stress P = d(psi)/dF
and the tangent A = dP/dF as a (2, 2, 2, 2) array A[i, J, k, L].

Models
------
NeoHookeanLog(lam, mu):
    psi = lam/2 (ln J)^2 - mu ln J + mu/2 (tr C - 3)

NeoHookeanVol(kappa, mu):
    psi = kappa/2 [ (J^2 - 1)/2 - ln J ] + mu/2 [ J^(-2/3) tr C - 3 ]
    with kappa = E/3(1-2nu) and mu = E/2(1+nu) the bulk and shear moduli.

StVenantKirchhoff(lam, mu):
    psi = lam/2 (tr E)^2 + mu E:E,  E = (C - I)/2

At strains below ~1e-4 the three models agree on stress to O(strain), which
is why StVenantKirchhoff doubles as the "linear elastic" patch-test material
inside the finite-strain machinery.

Internally every model evaluates from the displacement gradient G = F - I
(the quantity assembly actually knows): at patch-test strain levels, forming
C - I from F throws away ten digits, while E = (G + G^T + G^T G)/2 and
ln J = log1p(tr G + det G) keep stresses accurate to round-off in G.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPhysicalStateError

_I2 = np.eye(2)
# identity 4-tensor d(F)/d(F): I4[i,J,k,L] = delta_ik delta_JL
_I4 = np.einsum("ik,JL->iJkL", _I2, _I2)


def _jm1(G):
    """det(I + G) - 1 = tr G + det G, exact in G (no O(1) cancellation)."""
    return G[0, 0] + G[1, 1] + G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]


def _check_J(jm1):
    J = 1.0 + jm1
    if J <= 0.0:
        raise NonPhysicalStateError(f"det F = {J:.4e} <= 0")
    return J


def _invT(F, J):
    return np.array([[F[1, 1], -F[1, 0]], [-F[0, 1], F[0, 0]]]) / J


@dataclass(frozen=True)
class NeoHookeanLog:
    lam: float
    mu: float

    def energy_G(self, G):
        jm1 = _jm1(G)
        _check_J(jm1)
        lnJ = np.log1p(jm1)
        # tr C - 3 = 2 tr G + G:G (with the out-of-plane stretch fixed at 1)
        trCm3 = 2.0 * (G[0, 0] + G[1, 1]) + np.einsum("ij,ij->", G, G)
        return 0.5 * self.lam * lnJ ** 2 - self.mu * lnJ + 0.5 * self.mu * trCm3

    def piola_G(self, G):
        jm1 = _jm1(G)
        J = _check_J(jm1)
        F = _I2 + G
        FinvT = _invT(F, J)
        # mu (F - F^-T) = mu (J F - adj(F)^T)/J expanded to O(G) products so
        # no O(1) terms cancel at small strain
        dFT = np.array([
            [jm1 * F[0, 0] + G[0, 0] - G[1, 1], J * G[0, 1] + G[1, 0]],
            [J * G[1, 0] + G[0, 1], jm1 * F[1, 1] + G[1, 1] - G[0, 0]],
        ]) / J
        return self.mu * dFT + (self.lam * np.log1p(jm1)) * FinvT

    def tangent_G(self, G):
        jm1 = _jm1(G)
        J = _check_J(jm1)
        F = _I2 + G
        FinvT = _invT(F, J)
        c = self.lam * np.log1p(jm1) - self.mu
        A = self.mu * _I4
        A = A + self.lam * np.einsum("iJ,kL->iJkL", FinvT, FinvT)
        A = A - c * np.einsum("iL,kJ->iJkL", FinvT, FinvT)
        return A


@dataclass(frozen=True)
class NeoHookeanVol:
    kappa: float
    mu: float

    def energy_G(self, G):
        jm1 = _jm1(G)
        J = _check_J(jm1)
        trC = 2.0 + 2.0 * (G[0, 0] + G[1, 1]) + np.einsum("ij,ij->", G, G) + 1.0
        vol = 0.5 * jm1 * (J + 1.0) - np.log1p(jm1)
        return 0.5 * self.kappa * vol + 0.5 * self.mu * (J ** (-2.0 / 3.0) * trC - 3.0)

    def piola_G(self, G):
        jm1 = _jm1(G)
        J = _check_J(jm1)
        F = _I2 + G
        FinvT = _invT(F, J)
        trC = np.einsum("iJ,iJ->", F, F) + 1.0
        Jm23 = J ** (-2.0 / 3.0)
        return (0.5 * self.kappa * jm1 * (J + 1.0) * FinvT
                + self.mu * Jm23 * (F - (trC / 3.0) * FinvT))

    def tangent_G(self, G):
        jm1 = _jm1(G)
        J = _check_J(jm1)
        F = _I2 + G
        FinvT = _invT(F, J)
        trC = np.einsum("iJ,iJ->", F, F) + 1.0
        Jm23 = J ** (-2.0 / 3.0)
        FF = np.einsum("iJ,kL->iJkL", FinvT, FinvT)
        FxF = np.einsum("iL,kJ->iJkL", FinvT, FinvT)  # -d(F^-T)/dF contraction
        A = self.kappa * J * J * FF - 0.5 * self.kappa * jm1 * (J + 1.0) * FxF
        A = A + self.mu * Jm23 * (
            _I4
            - (2.0 / 3.0) * np.einsum("iJ,kL->iJkL", F - (trC / 3.0) * FinvT, FinvT)
            - (2.0 / 3.0) * np.einsum("iJ,kL->iJkL", FinvT, F)
            + (trC / 3.0) * FxF
        )
        return A


@dataclass(frozen=True)
class StVenantKirchhoff:
    lam: float
    mu: float

    def _green(self, G):
        return 0.5 * (G + G.T + G.T @ G)

    def energy_G(self, G):
        _check_J(_jm1(G))
        E = self._green(G)
        return 0.5 * self.lam * np.trace(E) ** 2 + self.mu * np.einsum("ij,ij->", E, E)

    def piola_G(self, G):
        _check_J(_jm1(G))
        E = self._green(G)
        S = self.lam * np.trace(E) * _I2 + 2.0 * self.mu * E
        return (_I2 + G) @ S

    def tangent_G(self, G):
        _check_J(_jm1(G))
        F = _I2 + G
        E = self._green(G)
        S = self.lam * np.trace(E) * _I2 + 2.0 * self.mu * E
        C = (self.lam * np.einsum("MJ,NL->MJNL", _I2, _I2)
             + self.mu * (np.einsum("MN,JL->MJNL", _I2, _I2)
                          + np.einsum("ML,JN->MJNL", _I2, _I2)))
        A = np.einsum("iM,MJNL,kN->iJkL", F, C, F)
        A = A + np.einsum("ik,JL->iJkL", _I2, S)
        return A


# Public face: the contract takes the deformation gradient F itself.  Forming
# G = F - I here re-introduces the O(eps) absolute error the G-forms avoid,
# which only matters if the caller built F by adding the identity anyway.

def strain_energy(model, F):
    return model.energy_G(np.asarray(F, dtype=float) - _I2)


def piola_stress(model, F):
    return model.piola_G(np.asarray(F, dtype=float) - _I2)


def tangent_modulus(model, F):
    return model.tangent_G(np.asarray(F, dtype=float) - _I2)


def moduli_view(A):
    """Flattened 4x4 view of a (2, 2, 2, 2) tangent, row/col = (i, J)."""
    return np.asarray(A).reshape(4, 4)


def lame_from_E_nu(E, nu):
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return lam, mu


def bulk_shear_from_E_nu(E, nu):
    kappa = E / (3.0 * (1.0 - 2.0 * nu))
    mu = E / (2.0 * (1.0 + nu))
    return kappa, mu


def plane_stress_equivalent(E, nu):
    """(E*, nu*) such that a plane-strain kernel reproduces the plane-stress
    compliance of (E, nu); used by manufactured-solution studies."""
    nu_s = nu / (1.0 + nu)
    return E * (1.0 - nu_s ** 2), nu_s


def from_config(cfg):
    """Build a model from scenario material config.

    Accepts {"model": name, ...constants...} with constants as (lam, mu),
    (kappa, mu) or (E, nu).  Model names: "neo_hookean_log",
    "neo_hookean_vol", "st_venant_kirchhoff".
    """
    name = cfg.get("model", "neo_hookean_log")
    if "E" in cfg:
        E, nu = float(cfg["E"]), float(cfg["nu"])
        if cfg.get("two_d_reduction") == "plane_stress_equivalent":
            E, nu = plane_stress_equivalent(E, nu)
        lam, mu = lame_from_E_nu(E, nu)
        kappa, _ = bulk_shear_from_E_nu(E, nu)
    else:
        lam = float(cfg.get("lam", 0.0))
        mu = float(cfg["mu"])
        kappa = float(cfg.get("kappa", lam + 2.0 * mu / 3.0))
    if name == "neo_hookean_log":
        return NeoHookeanLog(lam, mu)
    if name == "neo_hookean_vol":
        return NeoHookeanVol(kappa, mu)
    if name == "st_venant_kirchhoff":
        return StVenantKirchhoff(lam, mu)
    raise ValueError(f"unknown material model {name!r}")

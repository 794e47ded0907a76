"""Gradient of the entropic transport cost with respect to the atoms of the
discrete measure (weights and positions).

The transport cost reported is the sharp one, ``W = <G, pi>``, where the plan
``pi`` depends on the atoms both directly and through the optimal dual
potentials.  The dependence through the potentials is obtained by the
implicit function theorem applied to the stationarity conditions of the dual
problem.  The dual Hessian has the block form ``-(1/zeta) [[A, B], [B^T, D]]``
with ``A`` diagonal, so every solve goes through the Schur complement
``F = D - B^T A^{-1} B`` of size ``(m-1) x (m-1)``; the full inverse is never
formed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import NumericalStateError
from .sinkhorn import DualPotentials, TransportPlan, eot_cost, schur_complement, sinkhorn_solve

logger = logging.getLogger(__name__)

LOW_TRUST_CANCELLATION = 1e6


@dataclass
class DualJacobian:
    """Factored dual Hessian at a converged plan."""

    schur: np.ndarray
    plan: TransportPlan
    potentials: DualPotentials
    zeta: float
    row_mass: np.ndarray
    margin: np.ndarray
    _factor: tuple | None = None

    def solve(self, r, q):
        """Solve ``[[A, B], [B^T, D]] [u; v] = [r; q]`` for stacked right-hand sides."""
        B = self.plan.masses[:, :-1]
        A = self.row_mass
        r = np.asarray(r, dtype=float)
        q = np.asarray(q, dtype=float)
        if B.shape[1] == 0:
            v = np.zeros((0,) + r.shape[1:])
        else:
            rhs = q - B.T @ (r / A[:, None])
            v = linalg.cho_solve(self._factor, rhs)
        u = (r - B @ v) / A[:, None]
        return u, v


@dataclass
class DualDerivatives:
    """Sensitivities of the gauge-fixed potentials.

    ``dalpha_dw[s, i]``, ``dbeta_dw[j, i]``, ``dalpha_dy[s, i, c]`` and
    ``dbeta_dy[j, i, c]``; the last row of both beta blocks is zero because
    ``beta[-1]`` is pinned.
    """

    dalpha_dw: np.ndarray
    dbeta_dw: np.ndarray
    dalpha_dy: np.ndarray
    dbeta_dy: np.ndarray
    zeta: float


@dataclass
class GradientReport:
    dW_dw: np.ndarray
    dW_dy: np.ndarray
    w_value: float
    cancellation: float = 1.0
    low_trust: bool = False


def build_dual_jacobian(plan: TransportPlan, potentials: DualPotentials, src_w, tgt_w, zeta: float) -> DualJacobian:
    """Assemble and factor the Schur complement ``F``.

    ``A`` and ``D`` are taken from the plan's actual marginals, which equal
    ``src_w``/``tgt_w`` up to the solver tolerance and keep ``F`` exactly
    (weakly) diagonally dominant by construction; the margin of row ``j`` is
    the mass it shares with the pinned atom.
    """
    P = plan.masses
    m = P.shape[1]
    A = P.sum(axis=1)
    if np.any(A <= 0):
        raise NumericalStateError("a source point carries no mass in the plan")

    if m > 1:
        F, margin = schur_complement(P, A)
        try:
            factor = linalg.cho_factor(F, lower=True, check_finite=True)
        except linalg.LinAlgError as exc:
            raise NumericalStateError(f"Schur complement is singular: {exc}") from exc
    else:
        F = np.zeros((0, 0))
        margin = np.zeros(0)
        factor = None
    return DualJacobian(F, plan, potentials, zeta, A, margin, factor)


def dual_derivatives(jac: DualJacobian, cost_grads) -> DualDerivatives:
    """Derivatives of ``(alpha, beta)`` with respect to atom weights and positions.

    ``cost_grads`` is the ``(N, m, d)`` array of ``grad_y g(x_s, y_i)``.
    """
    P = jac.plan.masses
    N, m = P.shape
    w = jac.plan.target_weights
    zeta = jac.zeta
    Gy = np.asarray(cost_grads, dtype=float)
    d = Gy.shape[2]

    # weight direction: dN/dw_i = (-pi_i / w_i, 0)
    r_w = -P / w[None, :]
    q_w = np.zeros((m - 1, m))
    u_w, v_w = jac.solve(r_w, q_w)
    dalpha_dw = zeta * u_w
    dbeta_dw = np.zeros((m, m))
    dbeta_dw[:-1] = zeta * v_w

    # position direction: dN/dy_i = (pi_i grad g / zeta, delta_ij sum_s pi_i grad g / zeta);
    # the zeta factors cancel against the zeta of the inverse
    PG = P[:, :, None] * Gy
    r_y = PG.reshape(N, m * d)
    q_full = np.zeros((m, m, d))
    q_full[np.arange(m), np.arange(m)] = PG.sum(axis=0)
    q_y = q_full[:-1].reshape(m - 1, m * d)
    u_y, v_y = jac.solve(r_y, q_y)
    dalpha_dy = u_y.reshape(N, m, d)
    dbeta_dy = np.zeros((m, m, d))
    dbeta_dy[:-1] = v_y.reshape(m - 1, m, d)
    return DualDerivatives(dalpha_dw, dbeta_dw, dalpha_dy, dbeta_dy, zeta)


def _contraction_weights(P, G):
    GP = G * P
    return GP.sum(axis=1), GP.sum(axis=0)


def grad_w(plan: TransportPlan, potentials: DualPotentials, derivs: DualDerivatives, cost_matrix, project: bool = True):
    """Weight gradient, projected onto the sum-zero subspace by default."""
    P = plan.masses
    G = np.asarray(cost_matrix, dtype=float)
    w = plan.target_weights
    direct = (G * P).sum(axis=0) / w
    c_s, e_j = _contraction_weights(P, G)
    implicit = (c_s @ derivs.dalpha_dw + e_j @ derivs.dbeta_dw) / derivs.zeta
    g = direct + implicit
    if project:
        g = g - g.mean()
    return g


def _grad_y_terms(plan, derivs, cost_matrix, cost_grads):
    P = plan.masses
    G = np.asarray(cost_matrix, dtype=float)
    Gy = np.asarray(cost_grads, dtype=float)
    zeta = derivs.zeta
    direct = np.einsum("sic,si->ic", Gy, (1.0 - G / zeta) * P)
    c_s, e_j = _contraction_weights(P, G)
    implicit = (np.einsum("s,sic->ic", c_s, derivs.dalpha_dy) + np.einsum("j,jic->ic", e_j, derivs.dbeta_dy)) / zeta
    return direct, implicit


def grad_y(plan: TransportPlan, potentials: DualPotentials, derivs: DualDerivatives, cost_matrix, cost_grads):
    """Position gradient, one tangent vector per atom (``(m, d)``)."""
    direct, implicit = _grad_y_terms(plan, derivs, cost_matrix, cost_grads)
    return direct + implicit


def cancellation_ratio(direct, implicit) -> float:
    """How much of the two position-gradient terms cancels, as a magnitude ratio."""
    total = np.linalg.norm(direct + implicit)
    parts = np.linalg.norm(direct) + np.linalg.norm(implicit)
    if parts == 0:
        return 1.0
    if total == 0:
        return np.inf
    return float(parts / total)


def compute_gradient(
    chart,
    samples,
    positions,
    weights,
    zeta: float,
    src_w=None,
    tol: float = 1e-9,
    max_iter: int = 10_000,
    init_beta=None,
):
    """Solve the transport problem and assemble both gradients.

    Returns ``(GradientReport, potentials, plan)``.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    weights = np.asarray(weights, dtype=float)
    N = samples.shape[0]
    a = np.full(N, 1.0 / N) if src_w is None else np.asarray(src_w, dtype=float)
    G = chart.cost_matrix(samples, positions)
    potentials, plan = sinkhorn_solve(G, a, weights, zeta, tol=tol, max_iter=max_iter, init_beta=init_beta)
    Gy = chart.cost_grad_matrix(samples, positions)
    jac = build_dual_jacobian(plan, potentials, a, weights, zeta)
    derivs = dual_derivatives(jac, Gy)
    gw = grad_w(plan, potentials, derivs, G)
    direct, implicit = _grad_y_terms(plan, derivs, G, Gy)
    gy = direct + implicit
    ratio = cancellation_ratio(direct, implicit)
    low_trust = ratio > LOW_TRUST_CANCELLATION
    if low_trust:
        logger.warning("position gradient cancellation %.3g exceeds %.0e; gradient is low-trust", ratio, LOW_TRUST_CANCELLATION)
    else:
        logger.debug("position gradient cancellation %.3g", ratio)
    report = GradientReport(gw, gy, eot_cost(plan, G), ratio, low_trust)
    return report, potentials, plan

"""Centralized inexact Newton with the adaptive (or fixed) Polyak-style step.

Shares the forcing/step/acceptance machinery with the distributed loop, so
a single-node network run and this solver produce identical trajectories.
The infinity norm is used throughout for parity with the distributed path.

The trial point is ``y - alpha * d`` with ``d`` the inexact Newton
direction (the same direction the acceptance analysis is built on).
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .accounting import CostLedger, ops_dense_solve
from .core import (
    REJECTED,
    REJECTION_CAP,
    IterationRecord,
    RunResult,
    acceptance_check,
    adaptive_step,
    forcing_term,
)
from .objectives import ProblemConstants


@dataclass
class CentralizedProblem:
    cost: object
    constants: ProblemConstants | None = None


def dense_newton_solver(hessian, gradient, eta):
    """Direct solve of the Newton system; reports the measured residual
    (effectively zero, so any eta >= 0 is satisfied)."""
    d = np.linalg.solve(hessian, gradient)
    resid = float(np.max(np.abs(hessian @ d - gradient)))
    return d, resid


def fixed_polyak_step(constants, eta_k, grad_norm):
    """Step ``min(1, (1-eta)/(1+eta)^2 * (mu^2/L) / ||g||)`` from known
    curvature constants; with L = 0 the bound is vacuous and the full step
    is returned."""
    if grad_norm <= 0.0:
        raise ValueError("step undefined at a stationary point")
    if constants.lip_hess <= 0.0:
        return 1.0
    gamma = constants.mu**2 / constants.lip_hess
    return adaptive_step(eta_k, gamma, grad_norm)


def dinasc_run(problem, y0, schedule, controller_init, linear_solver=dense_newton_solver,
               tol=1e-5, max_outer=5000, fixed_gamma=None, ledger=None,
               collect_iterates=False):
    """Centralized run.

    ``linear_solver(hessian, gradient, eta)`` must return a direction whose
    residual infinity norm is below ``eta * ||gradient||_inf``.  When
    ``fixed_gamma`` is given the controller never shrinks: steps are always
    committed and failed decrease checks are only counted.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    cost = problem.cost
    y = np.asarray(y0, dtype=np.float64).copy()
    ledger = ledger if ledger is not None else CostLedger()
    controller = replace(controller_init)
    n = cost.dim

    g = cost.gradient(y)
    ledger.add_ops(cost.gradient_ops + n)
    grad_inf = float(np.max(np.abs(g)))

    records = []
    iterates = [y.copy()] if collect_iterates else None
    prev_eta = math.inf
    k = 0
    while grad_inf > tol and k < max_outer:
        eta_k = forcing_term(schedule, grad_inf, prev_eta)
        prev_eta = eta_k
        hess = cost.hessian(y)
        ledger.add_ops(cost.hessian_ops)
        d, resid = linear_solver(hess, g, eta_k)
        ledger.add_ops(ops_dense_solve(n))
        if resid > eta_k * grad_inf and resid > 1e-14:
            raise RuntimeError(
                f"linear solver returned residual {resid:.3e} above the "
                f"forcing target {eta_k * grad_inf:.3e}"
            )
        rejections = 0
        while True:
            gamma = fixed_gamma if fixed_gamma is not None else controller.gamma
            alpha = adaptive_step(eta_k, gamma, grad_inf)
            y_hat = y - alpha * d
            g_hat = cost.gradient(y_hat)
            ledger.add_ops(cost.gradient_ops + 2 * n + 8)
            new_inf = float(np.max(np.abs(g_hat)))
            condition = acceptance_check(alpha, new_inf, grad_inf, eta_k, gamma)
            if condition != REJECTED:
                break
            rejections += 1
            if fixed_gamma is not None:
                # corollary mode: commit anyway, the miss is only recorded
                condition = REJECTED
                break
            controller.reduce()
            ledger.add_ops(1)
            if rejections > REJECTION_CAP:
                raise RuntimeError(
                    f"step controller stalled after {rejections} rejections "
                    f"at iteration {k}"
                )
        records.append(
            IterationRecord(
                k=k,
                grad_inf=grad_inf,
                eta_k=eta_k,
                alpha_k=alpha,
                gamma_k=gamma,
                inner_iterations=0,
                rejections=rejections,
                condition=condition,
                scalar_ops_cum=ledger.scalar_ops,
                scalars_sent_cum=ledger.scalars_sent,
            )
        )
        y = y_hat
        g = g_hat
        grad_inf = new_inf
        k += 1
        if collect_iterates:
            iterates.append(y.copy())
    return RunResult(
        records=records,
        x_final=y,
        grad_inf_final=grad_inf,
        converged=grad_inf <= tol,
        ledger=ledger,
        gamma_final=fixed_gamma if fixed_gamma is not None else controller.gamma,
        gamma_reductions=controller.reductions,
        iterates=iterates,
    )

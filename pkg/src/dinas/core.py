"""Outer loop of the distributed inexact Newton method with adaptive steps.

Each outer iteration: solve the Newton system inexactly to the current
forcing tolerance, take the adaptive step ``alpha = min(1, c(eta) * gamma /
||g||_inf)``, exchange trial blocks, agree on the new gradient norm by
scalar flooding, and accept or shrink ``gamma`` and retry with the same
direction.  All quantities any node uses are either local or reproduced
identically at every node, so the simulation advances one global state.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .accounting import CostLedger
from .linear_solvers import (
    JOR,
    assemble_block_hessian,
    inner_iteration_bound,
    inner_solve,
    iteration_matrix_inf_norm,
)
from .objectives import check_stacked, penalty_gradient, stacked_inf_norm

COND1 = "cond1"
COND2 = "cond2"
REJECTED = "rejected"

REJECTION_CAP = 200


@dataclass
class ForcingSchedule:
    """Forcing sequence eta_k = min(eta, eta * ||g||_inf^delta)."""

    eta: float
    delta: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.eta < 1.0:
            raise ValueError("eta must lie in (0, 1)")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must lie in [0, 1]")


def forcing_term(schedule, grad_inf, prev_eta=math.inf):
    """Next forcing term, clamped so the sequence never increases."""
    if grad_inf < 0:
        raise ValueError("gradient norm must be nonnegative")
    raw = min(schedule.eta, schedule.eta * grad_inf**schedule.delta)
    return min(raw, prev_eta)


@dataclass
class StepController:
    """Current gamma, the shrink factor q, and how often gamma was cut."""

    gamma: float
    q: float
    reductions: int = 0

    def __post_init__(self):
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must lie in (0, 1)")

    def reduce(self):
        self.gamma *= self.q
        self.reductions += 1


def adaptive_step(eta_k, gamma_k, grad_inf):
    """alpha = min(1, (1 - eta) / (1 + eta)^2 * gamma / ||g||_inf)."""
    if grad_inf <= 0.0:
        raise ValueError("adaptive step undefined at a stationary point")
    return min(1.0, (1.0 - eta_k) / (1.0 + eta_k) ** 2 * gamma_k / grad_inf)


def acceptance_check(alpha, new_grad_inf, grad_inf, eta_k, gamma_k):
    """Gradient-decrease test guarding the step.

    A damped step must cut the norm by a fixed amount; a full step must land
    within the inexact-Newton contraction envelope.
    """
    if alpha < 1.0:
        threshold = grad_inf - 0.5 * (1.0 - eta_k) ** 2 / (1.0 + eta_k) ** 2 * gamma_k
        return COND1 if new_grad_inf <= threshold else REJECTED
    threshold = eta_k * grad_inf + (1.0 + eta_k) ** 2 / (2.0 * gamma_k) * grad_inf**2
    return COND2 if new_grad_inf <= threshold else REJECTED


def dsf_max(local_values, topology):
    """Scalar flooding: every round each node forwards every value it knows
    that it has neither sent to nor received from that neighbor, until all
    nodes hold all values (at most N - 1 rounds, in practice the diameter).

    Returns (max_value, rounds, scalars_sent).
    """
    n = topology.node_count
    values = [float(v) for v in local_values]
    if len(values) != n:
        raise ValueError("need one scalar per node")
    if n == 1:
        return values[0], 0, 0
    adj = topology.neighbor_lists()
    known = [{i} for i in range(n)]
    sent = {}
    for i in range(n):
        for j in adj[i]:
            sent[(i, j)] = set()
    rounds = 0
    messages = 0
    while rounds < n - 1 and any(len(k) < n for k in known):
        plan = []
        for i in range(n):
            for j in adj[i]:
                fresh = known[i] - sent[(i, j)] - sent[(j, i)]
                if fresh:
                    plan.append((i, j, fresh))
        for i, j, fresh in plan:
            sent[(i, j)] |= fresh
            known[j] |= fresh
            messages += len(fresh)
        rounds += 1
    return max(values), rounds, messages


@dataclass
class IterationRecord:
    k: int
    grad_inf: float
    eta_k: float
    alpha_k: float
    gamma_k: float
    inner_iterations: int
    rejections: int
    condition: str
    scalar_ops_cum: int
    scalars_sent_cum: int


CSV_COLUMNS = (
    "k",
    "grad_inf",
    "eta_k",
    "alpha_k",
    "gamma_k",
    "inner_iters",
    "rejections",
    "condition",
    "scalar_ops_cum",
    "scalars_sent_cum",
)


def record_to_row(rec):
    return (
        rec.k,
        rec.grad_inf,
        rec.eta_k,
        rec.alpha_k,
        rec.gamma_k,
        rec.inner_iterations,
        rec.rejections,
        rec.condition,
        rec.scalar_ops_cum,
        rec.scalars_sent_cum,
    )


@dataclass
class RunResult:
    records: list
    x_final: np.ndarray
    grad_inf_final: float
    converged: bool
    ledger: CostLedger
    gamma_final: float = math.nan
    gamma_reductions: int = 0
    stopped_early: bool = False
    diverged: bool = False
    diagnostics: dict = field(default_factory=dict)
    iterates: list | None = None

    @property
    def iterations(self):
        return len(self.records)


@dataclass
class DinasState:
    x: np.ndarray
    g: np.ndarray
    grad_inf: float
    blocks: object
    k: int = 0
    prev_eta: float = math.inf
    prev_direction: np.ndarray | None = None


@dataclass
class DinasConfig:
    """Bundle of outer-loop hyperparameters for batch drivers."""

    forcing: ForcingSchedule
    solver: object
    gamma0: float = 1.0
    q: float = 0.5
    max_outer: int = 5000
    warm_start: bool = True


def _charge_trial(problem, ledger, dsf_messages):
    # trial-point arithmetic, neighbor exchange, new gradient, local norms
    n = problem.dim
    n_nodes = problem.n_nodes
    degrees = problem.consensus.topology.degrees()
    sum_deg = int(degrees.sum())
    grad_ops = sum(c.gradient_ops + (int(d) + 2) * n for c, d in zip(problem.costs, degrees))
    ledger.add_ops(n_nodes * n)  # form the trial blocks
    ledger.add_sent(sum_deg * n)  # share trial blocks with neighbors
    ledger.add_ops(grad_ops)  # local gradient blocks
    ledger.add_ops(n_nodes * n)  # local infinity norms
    ledger.add_sent(dsf_messages)
    ledger.add_ops(dsf_messages)  # one comparison per received scalar
    ledger.add_ops(4 * n_nodes)  # step size and acceptance arithmetic


def _charge_assembly(problem, ledger):
    n = problem.dim
    ledger.add_ops(sum(c.hessian_ops for c in problem.costs) + problem.n_nodes * n)


def dinas_iteration(state, problem, schedule, controller, solver_config, ledger,
                    warm_start=True, diagnostics=None):
    """One accepted outer iteration (including any rejected trials).

    The direction and forcing term are fixed while gamma shrinks; only the
    step size and trial point are recomputed on rejection.
    """
    if state.grad_inf <= 0.0:
        raise ValueError("iteration called at a stationary point")
    topo = problem.consensus.topology
    eta_k = forcing_term(schedule, state.grad_inf, state.prev_eta)

    d0 = None
    if warm_start and state.prev_direction is not None:
        d0 = state.prev_direction
    d, inner_report = inner_solve(state.blocks, state.g, eta_k, solver_config, d0)
    ledger.add_ops(inner_report.scalar_ops)
    ledger.add_sent(inner_report.scalars_sent)

    if diagnostics is not None and solver_config.mode == JOR:
        m_norm = iteration_matrix_inf_norm(state.blocks, solver_config.omega)
        bound = None
        if 0.0 < m_norm < 1.0 and 0.0 < eta_k < 1.0:
            bound = inner_iteration_bound(eta_k, m_norm)
        diagnostics.setdefault("jor_matrix_inf_norms", []).append(m_norm)
        diagnostics.setdefault("jor_round_bounds", []).append(bound)

    rejections = 0
    while True:
        alpha = adaptive_step(eta_k, controller.gamma, state.grad_inf)
        x_hat = state.x - alpha * d
        g_hat = penalty_gradient(problem, x_hat)
        local_norms = np.max(np.abs(g_hat), axis=1) if g_hat.size else np.zeros(1)
        new_inf, _, dsf_messages = dsf_max(local_norms, topo)
        _charge_trial(problem, ledger, dsf_messages)
        condition = acceptance_check(alpha, new_inf, state.grad_inf, eta_k, controller.gamma)
        if condition != REJECTED:
            break
        controller.reduce()
        ledger.add_ops(problem.n_nodes)  # gamma update at every node
        rejections += 1
        if rejections > REJECTION_CAP:
            raise RuntimeError(
                f"step controller stalled: {rejections} consecutive rejections at "
                f"iteration {state.k} (gamma={controller.gamma:.3e}, "
                f"grad_inf={state.grad_inf:.3e})"
            )

    new_blocks = assemble_block_hessian(problem, x_hat)
    _charge_assembly(problem, ledger)
    record = IterationRecord(
        k=state.k,
        grad_inf=state.grad_inf,
        eta_k=eta_k,
        alpha_k=alpha,
        gamma_k=controller.gamma,
        inner_iterations=inner_report.iterations,
        rejections=rejections,
        condition=condition,
        scalar_ops_cum=ledger.scalar_ops,
        scalars_sent_cum=ledger.scalars_sent,
    )
    new_state = DinasState(
        x=x_hat,
        g=g_hat,
        grad_inf=new_inf,
        blocks=new_blocks,
        k=state.k + 1,
        prev_eta=eta_k,
        prev_direction=d,
    )
    return new_state, record


def dinas_run(problem, x0, schedule, controller_init, solver_config, tol_inf,
              max_outer=5000, ledger=None, warm_start=True, stop_callback=None,
              collect_iterates=False):
    """Iterate until ``||g||_inf <= tol_inf`` or the outer cap.

    ``stop_callback(state)`` may halt the run early (simulator-side, e.g. a
    consensus-error target); hitting ``max_outer`` flags the result as
    non-converged rather than raising.
    """
    if tol_inf <= 0.0:
        raise ValueError("tol_inf must be positive")
    x = check_stacked(problem, x0).copy()
    ledger = ledger if ledger is not None else CostLedger()
    controller = replace(controller_init)
    topo = problem.consensus.topology
    n = problem.dim
    degrees = topo.degrees()

    # initial neighbor exchange, local gradients, and norm agreement
    ledger.add_sent(int(degrees.sum()) * n)
    g = penalty_gradient(problem, x)
    ledger.add_ops(sum(c.gradient_ops + (int(d) + 2) * n for c, d in zip(problem.costs, degrees)))
    local_norms = np.max(np.abs(g), axis=1) if g.size else np.zeros(1)
    grad_inf, _, dsf_messages = dsf_max(local_norms, topo)
    ledger.add_sent(dsf_messages)
    ledger.add_ops(dsf_messages + problem.n_nodes * n)

    blocks = assemble_block_hessian(problem, x)
    _charge_assembly(problem, ledger)
    state = DinasState(x=x, g=g, grad_inf=grad_inf, blocks=blocks)

    records = []
    iterates = [x.copy()] if collect_iterates else None
    diagnostics = {}
    stopped_early = False
    while state.grad_inf > tol_inf and state.k < max_outer:
        if stop_callback is not None and stop_callback(state):
            stopped_early = True
            break
        state, record = dinas_iteration(
            state, problem, schedule, controller, solver_config, ledger,
            warm_start=warm_start, diagnostics=diagnostics,
        )
        records.append(record)
        if collect_iterates:
            iterates.append(state.x.copy())
    return RunResult(
        records=records,
        x_final=state.x,
        grad_inf_final=state.grad_inf,
        converged=state.grad_inf <= tol_inf,
        ledger=ledger,
        gamma_final=controller.gamma,
        gamma_reductions=controller.reductions,
        stopped_early=stopped_early,
        diagnostics=diagnostics,
        iterates=iterates,
    )


def complexity_bound(grad0_inf, eta_bar, q, mu, lip_hess, tol):
    """Worst-case outer-iteration count to reach ``||g||_inf <= tol``.

    Returns None when the hessian Lipschitz constant is zero (the bound
    degenerates).  The contraction factor is the worse of the full-step
    envelope (1 + eta)/2 and the damped-step decrement relative to the
    starting norm.
    """
    if lip_hess <= 0.0:
        return None
    if grad0_inf <= 0.0 or tol <= 0.0:
        raise ValueError("need positive gradient norm and tolerance")
    if not 0.0 <= eta_bar < 1.0 or not 0.0 < q < 1.0 or mu <= 0.0:
        raise ValueError("invalid constants")
    c = q * (mu**2 / lip_hess) * (1.0 - eta_bar) ** 2 / (1.0 + eta_bar) ** 2
    rho_hat = max((1.0 + eta_bar) / 2.0, 1.0 - c / grad0_inf)
    assert 0.0 < rho_hat < 1.0
    k = math.ceil(math.log(grad0_inf / tol) / math.log(1.0 / rho_hat) + 1.0)
    return max(1, k)


def gamma_reduction_bound(gamma0, q, mu, lip_hess):
    """Cap on how many times gamma can shrink before it must be accepted."""
    if lip_hess <= 0.0:
        return 0
    ratio = gamma0 * lip_hess / mu**2
    if ratio <= 1.0:
        return 0
    return math.ceil(math.log(ratio) / math.log(1.0 / q))


def damped_phase_bound(grad_at_stable, eta_bar, q, mu, lip_hess):
    """Upper bound on the number of damped (alpha < 1) iterations once gamma
    has stabilized, evaluated with run-measured quantities."""
    if lip_hess <= 0.0:
        return None
    gamma_floor = q * mu**2 / lip_hess
    c = gamma_floor * (1.0 - eta_bar) ** 2 / (1.0 + eta_bar) ** 2
    inner = (grad_at_stable - gamma_floor * (1.0 - eta_bar) / (1.0 + eta_bar) ** 2) / c
    return max(0, math.ceil(inner + 1.0))


def communication_decay_proxy(result, tail=5):
    """Finite-sample per-round decay factor over the tail of a run.

    For each of the last ``tail`` accepted iterations with at least one
    inner round, computes (||g_{k+1}|| / ||g_k||)^(1/rounds_k); the
    asymptotic analogue is the inner contraction factor.
    """
    recs = result.records
    norms = [r.grad_inf for r in recs] + [result.grad_inf_final]
    factors = []
    for idx in range(max(0, len(recs) - tail), len(recs)):
        rounds = recs[idx].inner_iterations
        if rounds <= 0 or norms[idx] <= 0.0 or norms[idx + 1] <= 0.0:
            continue
        ratio = norms[idx + 1] / norms[idx]
        if ratio > 0.0:
            factors.append(ratio ** (1.0 / rounds))
    return factors

"""Block-sparse Newton systems and the distributed inner solvers.

The stacked Newton system ``H d = g`` has one dense n-by-n diagonal block
per node and scalar-times-identity off-diagonal blocks on network edges, so
it is stored blockwise and never densified on the simulated-protocol path
(a dense materialization exists as a test oracle).

Three solve modes are provided:

* ``JOR``: relaxed Jacobi, one neighbor exchange per round, needs a
  relaxation parameter below ``2*beta*(1 - w_bar) / (M + 2*beta)``;
* ``DampedBlock``: each node solves a local regularized system per round
  (factorization cached per assembly), contraction ``1/(1 + beta*mu)``
  independent of curvature spread;
* ``DenseOracle``: direct solve of the stacked system, test-only.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .accounting import (
    ops_damped_round,
    ops_dense_factorization,
    ops_dense_solve,
    ops_jor_round,
)
from .objectives import stacked_inf_norm

JOR = "JOR"
DAMPED_BLOCK = "DampedBlock"
DENSE_ORACLE = "DenseOracle"
_MODES = (JOR, DAMPED_BLOCK, DENSE_ORACLE)


class InnerSolverStalled(RuntimeError):
    """Raised when the round cap is hit before the residual target."""

    def __init__(self, message, best_residual):
        super().__init__(message)
        self.best_residual = best_residual


@dataclass
class SolverConfig:
    mode: str = DAMPED_BLOCK
    omega: float | None = None
    sigma_cap: float = 0.99
    max_inner_iters: int | None = None

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if not 0.0 < self.sigma_cap < 1.0:
            raise ValueError("sigma_cap must lie in (0, 1)")
        if self.mode == JOR and self.omega is not None and self.omega <= 0.0:
            raise ValueError("JOR relaxation omega must be positive")


@dataclass
class InnerSolveReport:
    iterations: int
    final_residual_inf: float
    scalars_sent: int
    scalar_ops: int


@dataclass
class BlockHessian:
    """Row-block storage of the stacked penalty hessian at an iterate."""

    diag_blocks: np.ndarray  # (N, n, n): local hessian + (1/beta)(1 - w_ii) I
    indptr: np.ndarray  # (N+1,) neighbor offsets
    indices: np.ndarray  # neighbor node ids
    coefs: np.ndarray  # -w_ij / beta per neighbor entry
    w_self: np.ndarray  # (N,) diagonal consensus weights
    beta: float
    degrees: np.ndarray
    _damped_inv: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return self.diag_blocks.shape[0]

    @property
    def dim(self):
        return self.diag_blocks.shape[1]

    @property
    def diagonal(self):
        return np.ascontiguousarray(
            np.diagonal(self.diag_blocks, axis1=1, axis2=2)
        )

    def dense(self):
        n_nodes, n = self.n_nodes, self.dim
        h = np.zeros((n_nodes * n, n_nodes * n))
        eye = np.eye(n)
        for i in range(n_nodes):
            h[i * n : (i + 1) * n, i * n : (i + 1) * n] = self.diag_blocks[i]
            for e in range(self.indptr[i], self.indptr[i + 1]):
                j = self.indices[e]
                h[i * n : (i + 1) * n, j * n : (j + 1) * n] = self.coefs[e] * eye
        return h

    def damped_inverse(self):
        """Inverses of the local blocks ``hess f_i + (1/beta) I``, computed
        once per assembly (a cholesky factorization guards definiteness).
        Returns (inverses, freshly_computed)."""
        if self._damped_inv is not None:
            return self._damped_inv, False
        n = self.dim
        inv = np.empty_like(self.diag_blocks)
        shift = (1.0 / self.beta) * self.w_self  # restores the full 1/beta ridge
        eye = np.eye(n)
        for i in range(self.n_nodes):
            local = self.diag_blocks[i] + shift[i] * eye
            try:
                np.linalg.cholesky(local)
            except np.linalg.LinAlgError as err:
                raise RuntimeError(
                    f"local damped block at node {i} is not positive definite"
                ) from err
            inv[i] = np.linalg.inv(local)
        self._damped_inv = inv
        return inv, True


def assemble_block_hessian(problem, x):
    """Row blocks of the penalty hessian at the stacked point ``x``; each
    node's row depends only on its own hessian and incident weights."""
    from .objectives import check_stacked

    x = check_stacked(problem, x)
    n_nodes, n = x.shape
    w = problem.consensus.weights
    topo = problem.consensus.topology
    inv_beta = 1.0 / problem.beta
    adj = topo.neighbor_lists()
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    indices = []
    coefs = []
    diag_blocks = np.empty((n_nodes, n, n))
    eye = np.eye(n)
    for i in range(n_nodes):
        diag_blocks[i] = problem.costs[i].hessian(x[i]) + inv_beta * (1.0 - w[i, i]) * eye
        for j in adj[i]:
            indices.append(j)
            coefs.append(-inv_beta * w[i, j])
        indptr[i + 1] = len(indices)
    return BlockHessian(
        diag_blocks=diag_blocks,
        indptr=indptr,
        indices=np.asarray(indices, dtype=np.int64),
        coefs=np.asarray(coefs, dtype=np.float64),
        w_self=np.ascontiguousarray(np.diag(w)),
        beta=problem.beta,
        degrees=topo.degrees(),
    )


def block_matvec(blocks, d):
    d = np.asarray(d, dtype=np.float64)
    return _kernels.block_matvec(
        blocks.diag_blocks, blocks.indptr, blocks.indices, blocks.coefs, d
    )


def jor_omega_bound(big_m, beta, w_bar):
    """Strict upper bound ``2*beta*(1 - w_bar) / (M + 2*beta)`` for the JOR
    relaxation; zero when w_bar = 1 (single node or degenerate weights), in
    which case callers must pick another mode."""
    if big_m <= 0 or beta <= 0:
        raise ValueError("need M > 0 and beta > 0")
    if not 0.0 < w_bar <= 1.0:
        raise ValueError("w_bar must lie in (0, 1]")
    return 2.0 * beta * (1.0 - w_bar) / (big_m + 2.0 * beta)


def default_jor_omega(big_m, beta, w_bar, safety=0.95):
    bound = jor_omega_bound(big_m, beta, w_bar)
    if bound <= 0.0:
        raise ValueError("JOR unusable: relaxation bound is zero (w_bar = 1)")
    return safety * bound


def jor_step(blocks, d, g, omega):
    """One synchronous relaxed-Jacobi round; every node reads only the
    neighbors' current blocks."""
    d = np.asarray(d, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    diag = blocks.diagonal
    if np.any(np.abs(diag) < 1e-300):
        raise ZeroDivisionError("JOR diagonal breakdown: zero diagonal entry")
    r = g - block_matvec(blocks, d)
    return d + omega * (r / diag)


def damped_block_step(problem, blocks, d, g):
    """One round of the locally-damped fixed point: each node solves its
    regularized local system against the weighted pull of the current
    blocks (own block included) plus its gradient."""
    d = np.asarray(d, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    inv, _ = blocks.damped_inverse()
    inv_beta = 1.0 / blocks.beta
    rhs = g + (inv_beta * blocks.w_self)[:, None] * d
    for i in range(blocks.n_nodes):
        lo, hi = blocks.indptr[i], blocks.indptr[i + 1]
        if hi > lo:
            rhs[i] -= blocks.coefs[lo:hi] @ d[blocks.indices[lo:hi]]
    return np.einsum("kab,kb->ka", inv, rhs)


def iteration_matrix_inf_norm(blocks, omega):
    """Infinity norm of ``I - omega * H * D^{-1}`` computed one block row at
    a time (simulator-side diagnostic, not available in-protocol)."""
    diag = blocks.diagonal
    worst = 0.0
    for i in range(blocks.n_nodes):
        block = blocks.diag_blocks[i]
        scaled = np.abs(block) / diag[i][None, :]
        row_sums = omega * scaled.sum(axis=1)
        # the diagonal entry is 1 - omega exactly, not |1 - omega*h/d| + extras
        row_sums += np.abs(1.0 - omega) - omega * np.abs(np.diag(block)) / diag[i]
        lo, hi = blocks.indptr[i], blocks.indptr[i + 1]
        for e in range(lo, hi):
            j = blocks.indices[e]
            row_sums += omega * np.abs(blocks.coefs[e]) / diag[j]
        worst = max(worst, float(row_sums.max()))
    return worst


def inner_iteration_bound(eta_k, m_norm):
    """Round count certificate ``ceil(ln eta / ln m_norm)`` valid when the
    iteration matrix contracts in the infinity norm."""
    if not 0.0 < eta_k < 1.0:
        raise ValueError("eta_k must lie in (0, 1)")
    if not 0.0 < m_norm < 1.0:
        raise ValueError("no contraction certificate: iteration-matrix norm >= 1")
    return math.ceil(math.log(eta_k) / math.log(m_norm))


def resolve_max_inner(config, eta_k):
    if config.max_inner_iters is not None:
        return config.max_inner_iters
    eta_eff = min(max(eta_k, 1e-12), 1.0 - 1e-12)
    return min(100_000, 10 * inner_iteration_bound(eta_eff, config.sigma_cap))


def inner_solve(blocks, g, eta_k, config, d0=None):
    """Drive the configured mode until every node's residual satisfies
    ``||H_i d - g_i||_inf <= eta_k * ||g||_inf``.

    Returns the direction and an :class:`InnerSolveReport` counting rounds,
    scalars exchanged (n per neighbor per round) and scalar operations.
    The residual test is evaluated centrally by the simulator each round.
    """
    g = np.asarray(g, dtype=np.float64)
    n_nodes, n = g.shape
    if d0 is None:
        d0 = np.zeros_like(g)
    else:
        d0 = np.asarray(d0, dtype=np.float64)
        if d0.shape != g.shape:
            raise ValueError("warm-start direction has the wrong shape")
    g_inf = stacked_inf_norm(g)
    tol = eta_k * g_inf

    if config.mode == DENSE_ORACLE:
        if eta_k < 0.0:
            raise ValueError("eta_k must be nonnegative")
        h = blocks.dense()
        d = np.linalg.solve(h, g.reshape(-1)).reshape(g.shape)
        resid = stacked_inf_norm(block_matvec(blocks, d) - g)
        report = InnerSolveReport(
            iterations=0,
            final_residual_inf=resid,
            scalars_sent=0,
            scalar_ops=ops_dense_solve(n_nodes * n),
        )
        return d, report

    if not 0.0 < eta_k < 1.0:
        raise ValueError("iterative modes need eta_k in (0, 1)")
    max_rounds = resolve_max_inner(config, eta_k)
    degrees = blocks.degrees
    sent_per_round = int(degrees.sum()) * n
    extra_ops = 0

    if config.mode == JOR:
        if config.omega is None:
            raise ValueError("JOR mode requires a resolved omega")
        diag = blocks.diagonal
        if np.any(np.abs(diag) < 1e-300):
            raise ZeroDivisionError("JOR diagonal breakdown: zero diagonal entry")
        d, rounds, resid, best = _kernels.jor_sweep(
            blocks.diag_blocks,
            blocks.indptr,
            blocks.indices,
            blocks.coefs,
            1.0 / diag,
            g,
            d0,
            config.omega,
            tol,
            max_rounds,
        )
        ops_round = ops_jor_round(degrees, n)
    else:
        inv, fresh = blocks.damped_inverse()
        if fresh:
            extra_ops += blocks.n_nodes * ops_dense_factorization(n)
        d, rounds, resid, best = _kernels.damped_sweep(
            blocks.diag_blocks,
            blocks.indptr,
            blocks.indices,
            blocks.coefs,
            inv,
            (1.0 / blocks.beta) * blocks.w_self,
            g,
            d0,
            tol,
            max_rounds,
        )
        ops_round = ops_damped_round(degrees, n)

    if resid > tol:
        raise InnerSolverStalled(
            f"inner solver stalled: residual {resid:.3e} > target {tol:.3e} "
            f"after {rounds} rounds (best {best:.3e})",
            best_residual=best,
        )
    report = InnerSolveReport(
        iterations=int(rounds),
        final_residual_inf=float(resid),
        scalars_sent=int(rounds) * sent_per_round,
        scalar_ops=int(rounds) * ops_round + extra_ops,
    )
    return d, report

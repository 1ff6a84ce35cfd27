"""Local cost functions, problem generators, and the penalty objective.

A :class:`LocalCost` exposes value/gradient/hessian plus nominal operation
counts used by the cost ledger.  The penalty objective over stacked per-node
points adds the quadratic disagreement term ``x'(I - W (x) I) x / (2 beta)``,
evaluated edge-wise so the stacked matrix is never materialized.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


class LocalCost:
    """Twice-differentiable strongly convex local objective."""

    dim = None

    def value(self, y):
        raise NotImplementedError

    def gradient(self, y):
        raise NotImplementedError

    def hessian(self, y):
        raise NotImplementedError

    # nominal scalar-op charges, see accounting.op_counting_conventions()
    @property
    def value_ops(self):
        raise NotImplementedError

    @property
    def gradient_ops(self):
        raise NotImplementedError

    @property
    def hessian_ops(self):
        raise NotImplementedError


class QuadraticCost(LocalCost):
    """y'Ay + y'b with A symmetric positive definite (no 1/2 factor, so the
    hessian is the constant 2A)."""

    def __init__(self, a_matrix, b_vector):
        a = np.asarray(a_matrix, dtype=np.float64)
        b = np.asarray(b_vector, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("A must be square")
        if not np.allclose(a, a.T, rtol=0.0, atol=1e-12):
            raise ValueError("A must be symmetric")
        if b.shape != (a.shape[0],):
            raise ValueError("b has wrong shape")
        self.a_matrix = a
        self.b_vector = b
        self.dim = a.shape[0]
        self._hess = 2.0 * a

    def value(self, y):
        y = np.asarray(y, dtype=np.float64)
        return float(y @ (self.a_matrix @ y) + y @ self.b_vector)

    def gradient(self, y):
        y = np.asarray(y, dtype=np.float64)
        return 2.0 * (self.a_matrix @ y) + self.b_vector

    def hessian(self, y):
        return self._hess

    @property
    def value_ops(self):
        n = self.dim
        return n * n + 3 * n

    @property
    def gradient_ops(self):
        n = self.dim
        return n * n + 2 * n

    @property
    def hessian_ops(self):
        return 0


class LogisticCost(LocalCost):
    """l2-regularized logistic loss over a local data block.

    value(y) = sum_j log(1 + exp(-b_j a_j.y)) + (rho/2) ||y||^2
    """

    def __init__(self, points, labels, rho):
        a = np.asarray(points, dtype=np.float64)
        b = np.asarray(labels, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("points must be an m-by-n matrix")
        if b.shape != (a.shape[0],):
            raise ValueError("labels must be an m-vector")
        if not np.all(np.isin(b, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")
        if rho <= 0:
            raise ValueError("rho must be positive")
        self.points = a
        self.labels = b
        self.rho = float(rho)
        self.dim = a.shape[1]
        self.n_points = a.shape[0]

    def _margins(self, y):
        return self.labels * (self.points @ y)

    def value(self, y):
        y = np.asarray(y, dtype=np.float64)
        t = self._margins(y)
        # log(1 + exp(-t)) evaluated in the overflow-safe branch
        losses = np.logaddexp(0.0, -t)
        return float(losses.sum() + 0.5 * self.rho * (y @ y))

    def gradient(self, y):
        y = np.asarray(y, dtype=np.float64)
        t = self._margins(y)
        s = expit(-t)  # sigma(-t) = 1 - sigma(t)
        return -(self.points.T @ (s * self.labels)) + self.rho * y

    def hessian(self, y):
        y = np.asarray(y, dtype=np.float64)
        t = self._margins(y)
        w = expit(t) * expit(-t)  # sigma'(t), label sign squares away
        h = (self.points * w[:, None]).T @ self.points
        h[np.diag_indices_from(h)] += self.rho
        return h

    @property
    def value_ops(self):
        m, n = self.n_points, self.dim
        return m * (n + 3) + n + 1

    @property
    def gradient_ops(self):
        m, n = self.n_points, self.dim
        return m * (2 * n + 3) + n

    @property
    def hessian_ops(self):
        m, n = self.n_points, self.dim
        return m * (n * n + n + 2) + n


def make_quadratic(a_matrix, b_vector):
    return QuadraticCost(a_matrix, b_vector)


def make_logistic(points, labels, rho):
    return LogisticCost(points, labels, rho)


def generate_quadratic_family(n, n_nodes, lambda_min, lambda_max, rng_seed):
    """Per node, A_i = P_i D_i P_i' with D_i uniform in [lambda_min, lambda_max]
    and P_i Haar-orthogonal (QR of a Gaussian matrix, sign-fixed diagonal);
    b_i uniform in [0, 1]."""
    if not 0 < lambda_min <= lambda_max:
        raise ValueError("need 0 < lambda_min <= lambda_max")
    rng = np.random.default_rng(rng_seed)
    costs = []
    for _ in range(n_nodes):
        d = rng.uniform(lambda_min, lambda_max, size=n)
        gauss = rng.standard_normal((n, n))
        q, r = np.linalg.qr(gauss)
        q = q * np.sign(np.diag(r))
        a = (q * d) @ q.T
        a = 0.5 * (a + a.T)
        b = rng.uniform(0.0, 1.0, size=n)
        costs.append(QuadraticCost(a, b))
    return costs


def generate_logistic_partition(n, m, n_nodes, rng_seed):
    """Synthetic classification data split into contiguous per-node blocks.

    Features are uniform(0,1), labels are +-1 equiprobable, node i receives
    rows i*(m/N) .. (i+1)*(m/N)-1, and every local cost uses the global
    regularization rho = 0.01*m.
    """
    if m % n_nodes != 0:
        raise ValueError(f"m={m} must be divisible by n_nodes={n_nodes}")
    rng = np.random.default_rng(rng_seed)
    points = rng.uniform(0.0, 1.0, size=(m, n))
    labels = rng.integers(0, 2, size=m) * 2.0 - 1.0
    return partition_dataset(points, labels, n_nodes, rho=0.01 * m)


def partition_dataset(points, labels, n_nodes, rho=None):
    """Contiguous-block split of a dataset; rho defaults to 0.01 * (total m)."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    m = points.shape[0]
    if m % n_nodes != 0:
        raise ValueError(f"m={m} must be divisible by n_nodes={n_nodes}")
    if rho is None:
        rho = 0.01 * m
    block = m // n_nodes
    return [
        LogisticCost(points[i * block : (i + 1) * block], labels[i * block : (i + 1) * block], rho)
        for i in range(n_nodes)
    ]


def load_logistic_csv(path, n_nodes, rho=None):
    """CSV rows are feature columns followed by a final +-1 label column; a
    header line is skipped if the first field does not parse as a number."""
    with open(path) as fh:
        first = fh.readline()
    skip = 0
    try:
        float(first.split(",")[0])
    except ValueError:
        skip = 1
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    points, labels = data[:, :-1], data[:, -1]
    return partition_dataset(points, labels, n_nodes, rho=rho)


@dataclass(frozen=True)
class ProblemConstants:
    """Curvature bounds mu, M and the hessian Lipschitz constant L."""

    mu: float
    big_m: float
    lip_hess: float

    def __post_init__(self):
        if not 0 < self.mu <= self.big_m:
            raise ValueError("need 0 < mu <= M")
        if self.lip_hess < 0:
            raise ValueError("L must be nonnegative")


@dataclass
class PenaltyProblem:
    """N local costs coupled through a consensus matrix and penalty weight."""

    costs: list
    beta: float
    consensus: "ConsensusMatrix"

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if len(self.costs) != self.consensus.node_count:
            raise ValueError("number of costs must match the consensus matrix")
        dims = {c.dim for c in self.costs}
        if len(dims) != 1:
            raise ValueError("all local costs must share the same dimension")
        self.dim = dims.pop()

    @property
    def n_nodes(self):
        return len(self.costs)


def check_stacked(problem, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (problem.n_nodes, problem.dim):
        raise ValueError(
            f"stacked point has shape {x.shape}, expected {(problem.n_nodes, problem.dim)}"
        )
    return x


def stacked_inf_norm(x):
    """Max over nodes of the per-block infinity norm."""
    return float(np.max(np.abs(x))) if x.size else 0.0


def _disagreement(problem, x, i):
    # sum_j w_ij (x_i - x_j) over neighbors; exactly zero at consensus
    w = problem.consensus.weights
    acc = np.zeros(problem.dim)
    for j in problem.consensus.topology.neighbors(i):
        acc += w[i, j] * (x[i] - x[j])
    return acc


def penalty_value(problem, x):
    """F(x) plus the disagreement penalty, accumulated one block row at a
    time (equal to x'(I-W(x)I)x / (2 beta) without densifying)."""
    x = check_stacked(problem, x)
    total = sum(c.value(x[i]) for i, c in enumerate(problem.costs))
    quad = sum(float(x[i] @ _disagreement(problem, x, i)) for i in range(problem.n_nodes))
    return total + quad / (2.0 * problem.beta)


def penalty_gradient(problem, x):
    """Per-node blocks g_i = grad f_i(x_i) + (1/beta) sum_j w_ij (x_i - x_j)."""
    x = check_stacked(problem, x)
    g = np.empty_like(x)
    inv_beta = 1.0 / problem.beta
    for i, cost in enumerate(problem.costs):
        g[i] = cost.gradient(x[i]) + inv_beta * _disagreement(problem, x, i)
    return g


def sample_box_around(points, margin=1.0):
    """Axis-aligned box enclosing the given points, padded by ``margin``."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return pts.min(axis=0) - margin, pts.max(axis=0) + margin


def estimate_constants(costs, sample_box, n_samples=50, rng_seed=0):
    """Sampled curvature bounds over a box.

    mu and M are the extreme hessian eigenvalues seen at the samples; L is
    the largest ratio ||H(y) - H(z)||_inf / ||y - z||_inf over sample pairs.
    Constant hessians (quadratics) yield L = 0 exactly.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    lo, hi = sample_box
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    rng = np.random.default_rng(rng_seed)
    n = costs[0].dim
    samples = rng.uniform(0.0, 1.0, size=(n_samples, n)) * (hi - lo) + lo
    mu = np.inf
    big_m = 0.0
    lip = 0.0
    for cost in costs:
        hessians = [cost.hessian(y) for y in samples]
        for h in hessians:
            eigs = np.linalg.eigvalsh(h)
            mu = min(mu, float(eigs[0]))
            big_m = max(big_m, float(eigs[-1]))
        for a in range(n_samples):
            for b in range(a + 1, n_samples):
                dy = float(np.max(np.abs(samples[a] - samples[b])))
                if dy == 0.0:
                    continue
                dh = float(np.max(np.abs(hessians[a] - hessians[b]).sum(axis=1)))
                lip = max(lip, dh / dy)
    return ProblemConstants(mu=mu, big_m=big_m, lip_hess=lip)


def reference_solution(costs, tol=1e-10, max_iters=100):
    """Minimizer of the summed cost via a centralized damped Newton oracle.

    Quadratics are solved exactly through the stationarity system; otherwise
    Newton steps with halving until the gradient infinity norm is below
    ``tol`` (tighter than the downstream consensus-error tolerances need).
    """
    n = costs[0].dim
    if all(isinstance(c, QuadraticCost) for c in costs):
        a_sum = sum(c.a_matrix for c in costs)
        b_sum = sum(c.b_vector for c in costs)
        return np.linalg.solve(2.0 * a_sum, -b_sum)

    def grad(y):
        return sum(c.gradient(y) for c in costs)

    def val(y):
        return sum(c.value(y) for c in costs)

    y = np.zeros(n)
    for _ in range(max_iters):
        g = grad(y)
        if np.max(np.abs(g)) <= tol:
            return y
        h = sum(c.hessian(y) for c in costs)
        d = np.linalg.solve(h, g)
        t = 1.0
        f0 = val(y)
        while val(y - t * d) > f0 and t > 1e-12:
            t *= 0.5
        y = y - t * d
    if np.max(np.abs(grad(y))) <= tol:
        return y
    raise RuntimeError(f"reference oracle did not reach tolerance {tol} in {max_iters} iterations")

"""Hot inner-loop kernels: relaxed Jacobi sweeps, damped block sweeps, and
full-run loops for the first-order baselines on quadratic costs.

Each kernel exists twice: a plain-loop version compiled with numba and a
vectorized numpy version.  The active implementation is chosen at import
time; set ``DINAS_NUMBA=0`` to force the numpy path (the two agree to
floating-point roundoff, see benchmarks/bench_kernels.py for timings).

Block systems are passed as flat arrays: ``hblocks`` holds the N dense
diagonal blocks, while ``indptr``/``indices``/``coefs`` describe the
off-diagonal structure in compressed row form (one scalar coefficient per
directed neighbor pair, multiplying the identity).
"""

import os

import numpy as np

_flag = os.environ.get("DINAS_NUMBA", "1").strip().lower()
_WANT_NUMBA = _flag not in ("0", "false", "off", "no")

try:
    if not _WANT_NUMBA:
        raise ImportError
    from numba import njit

    NUMBA_ENABLED = True
except ImportError:
    njit = None
    NUMBA_ENABLED = False


# ------------------------------------------------------------------ loops

def _block_matvec_loops(hblocks, indptr, indices, coefs, d):
    n_nodes, n = d.shape
    out = np.zeros((n_nodes, n))
    for i in range(n_nodes):
        for a in range(n):
            acc = 0.0
            for b in range(n):
                acc += hblocks[i, a, b] * d[i, b]
            out[i, a] = acc
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            c = coefs[e]
            for a in range(n):
                out[i, a] += c * d[j, a]
    return out


def _jor_sweep_loops(hblocks, indptr, indices, coefs, dinv, g, d0, omega, tol, max_rounds):
    n_nodes, n = g.shape
    d = d0.copy()
    r = np.empty((n_nodes, n))
    rounds = 0
    best = np.inf
    while True:
        resid = 0.0
        for i in range(n_nodes):
            for a in range(n):
                acc = 0.0
                for b in range(n):
                    acc += hblocks[i, a, b] * d[i, b]
                r[i, a] = g[i, a] - acc
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                c = coefs[e]
                for a in range(n):
                    r[i, a] -= c * d[j, a]
            for a in range(n):
                v = abs(r[i, a])
                if v > resid:
                    resid = v
        if resid < best:
            best = resid
        if resid <= tol or rounds >= max_rounds:
            return d, rounds, resid, best
        for i in range(n_nodes):
            for a in range(n):
                d[i, a] = d[i, a] + omega * dinv[i, a] * r[i, a]
        rounds += 1


def _damped_sweep_loops(
    hblocks, indptr, indices, coefs, inv_blocks, self_pull, g, d0, tol, max_rounds
):
    # self_pull[i] = w_ii / beta; the off-diagonal pull is -coefs (coefs = -w_ij/beta)
    n_nodes, n = g.shape
    d = d0.copy()
    d_new = np.empty((n_nodes, n))
    rhs = np.empty(n)
    r = np.empty((n_nodes, n))
    rounds = 0
    best = np.inf
    while True:
        resid = 0.0
        for i in range(n_nodes):
            for a in range(n):
                acc = 0.0
                for b in range(n):
                    acc += hblocks[i, a, b] * d[i, b]
                r[i, a] = g[i, a] - acc
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                c = coefs[e]
                for a in range(n):
                    r[i, a] -= c * d[j, a]
            for a in range(n):
                v = abs(r[i, a])
                if v > resid:
                    resid = v
        if resid < best:
            best = resid
        if resid <= tol or rounds >= max_rounds:
            return d, rounds, resid, best
        for i in range(n_nodes):
            for a in range(n):
                rhs[a] = g[i, a] + self_pull[i] * d[i, a]
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                c = coefs[e]
                for a in range(n):
                    rhs[a] -= c * d[j, a]
            for a in range(n):
                acc = 0.0
                for b in range(n):
                    acc += inv_blocks[i, a, b] * rhs[b]
                d_new[i, a] = acc
        for i in range(n_nodes):
            for a in range(n):
                d[i, a] = d_new[i, a]
        rounds += 1


def _mixdiff_loops(indptr, indices, wvals, x, out):
    # out_i = sum_j w_ij (x_j - x_i); exactly zero when all blocks agree
    n_nodes, n = x.shape
    for i in range(n_nodes):
        for a in range(n):
            out[i, a] = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            j = indices[e]
            w = wvals[e]
            for a in range(n):
                out[i, a] += w * (x[j, a] - x[i, a])
    return out


def _quad_grads_loops(amats, bvecs, x, out):
    n_nodes, n = x.shape
    for i in range(n_nodes):
        for a in range(n):
            acc = 0.0
            for b in range(n):
                acc += amats[i, a, b] * x[i, b]
            out[i, a] = 2.0 * acc + bvecs[i, a]
    return out


def _make_baseline_driver(mixdiff, quad_grads):
    def driver(
        method,
        amats,
        bvecs,
        indptr,
        indices,
        wvals,
        x0,
        step,
        max_iters,
        y_star,
        target_e,
        target_grad,
        record_every,
        rec_k,
        rec_grad,
        rec_e,
    ):
        """Run DG (method 0), EXTRA-style (1), or gradient tracking (2) on
        quadratic costs.  Fills the record arrays every ``record_every``
        iterations plus once at stop; returns (x, iters, status, n_records)
        with status 0 = consensus target, 1 = cap, 2 = diverged, 3 = grad tol.
        """
        n_nodes, n = x0.shape
        x = x0.copy()
        grads = np.empty((n_nodes, n))
        quad_grads(amats, bvecs, x, grads)
        grads_old = np.empty((n_nodes, n))
        md = np.empty((n_nodes, n))
        md_prev = np.empty((n_nodes, n))
        x_prev = np.empty((n_nodes, n))
        y_track = np.empty((n_nodes, n))
        grads_next = np.empty((n_nodes, n))
        ynorm2 = 0.0
        for a in range(n):
            ynorm2 += y_star[a] * y_star[a]
        if method == 2:
            for i in range(n_nodes):
                for a in range(n):
                    y_track[i, a] = grads[i, a]
        n_rec = 0
        it = 0
        status = 1
        while True:
            gmax = 0.0
            xmax = 0.0
            for i in range(n_nodes):
                for a in range(n):
                    v = abs(grads[i, a])
                    if v > gmax:
                        gmax = v
                    v = abs(x[i, a])
                    if v > xmax:
                        xmax = v
            if ynorm2 > 0.0:
                e_k = 0.0
                for i in range(n_nodes):
                    acc = 0.0
                    for a in range(n):
                        dv = x[i, a] - y_star[a]
                        acc += dv * dv
                    e_k += acc / ynorm2
                e_k /= n_nodes
            else:
                e_k = np.inf
            record_now = (it % record_every == 0) or it == max_iters
            stop = False
            if xmax > 1e12:
                status = 2
                stop = True
            elif target_e > 0.0 and ynorm2 > 0.0 and e_k <= target_e:
                status = 0
                stop = True
            elif target_grad > 0.0 and gmax <= target_grad:
                status = 3
                stop = True
            elif it >= max_iters:
                status = 1
                stop = True
            if record_now or stop:
                rec_k[n_rec] = it
                rec_grad[n_rec] = gmax
                rec_e[n_rec] = e_k
                n_rec += 1
            if stop:
                return x, it, status, n_rec

            if method == 0:  # mix, then local gradient step
                mixdiff(indptr, indices, wvals, x, md)
                for i in range(n_nodes):
                    for a in range(n):
                        x[i, a] = x[i, a] + md[i, a] - step * grads[i, a]
                quad_grads(amats, bvecs, x, grads)
            elif method == 1:  # two-matrix corrected recursion
                mixdiff(indptr, indices, wvals, x, md)
                if it == 0:
                    for i in range(n_nodes):
                        for a in range(n):
                            x_prev[i, a] = x[i, a]
                            md_prev[i, a] = md[i, a]
                            x[i, a] = x[i, a] + md[i, a] - step * grads[i, a]
                else:
                    for i in range(n_nodes):
                        for a in range(n):
                            xn = (
                                2.0 * x[i, a]
                                + md[i, a]
                                - x_prev[i, a]
                                - 0.5 * md_prev[i, a]
                                - step * (grads[i, a] - grads_old[i, a])
                            )
                            x_prev[i, a] = x[i, a]
                            md_prev[i, a] = md[i, a]
                            x[i, a] = xn
                for i in range(n_nodes):
                    for a in range(n):
                        grads_old[i, a] = grads[i, a]
                quad_grads(amats, bvecs, x, grads)
            else:  # track the average gradient alongside the iterate
                mixdiff(indptr, indices, wvals, x, md)
                for i in range(n_nodes):
                    for a in range(n):
                        x[i, a] = x[i, a] + md[i, a] - step * y_track[i, a]
                quad_grads(amats, bvecs, x, grads_next)
                mixdiff(indptr, indices, wvals, y_track, md)
                for i in range(n_nodes):
                    for a in range(n):
                        y_track[i, a] = (
                            y_track[i, a] + md[i, a] + grads_next[i, a] - grads[i, a]
                        )
                        grads[i, a] = grads_next[i, a]
            it += 1

    return driver


# ------------------------------------------------------------------ numpy twins

def _block_matvec_np(hblocks, indptr, indices, coefs, d):
    out = np.einsum("kab,kb->ka", hblocks, d)
    for i in range(d.shape[0]):
        lo, hi = indptr[i], indptr[i + 1]
        if hi > lo:
            out[i] += coefs[lo:hi] @ d[indices[lo:hi]]
    return out


def _jor_sweep_np(hblocks, indptr, indices, coefs, dinv, g, d0, omega, tol, max_rounds):
    d = d0.copy()
    rounds = 0
    best = np.inf
    while True:
        r = g - _block_matvec_np(hblocks, indptr, indices, coefs, d)
        resid = float(np.max(np.abs(r)))
        best = min(best, resid)
        if resid <= tol or rounds >= max_rounds:
            return d, rounds, resid, best
        d = d + omega * dinv * r
        rounds += 1


def _damped_sweep_np(
    hblocks, indptr, indices, coefs, inv_blocks, self_pull, g, d0, tol, max_rounds
):
    d = d0.copy()
    rounds = 0
    best = np.inf
    n_nodes = g.shape[0]
    while True:
        r = g - _block_matvec_np(hblocks, indptr, indices, coefs, d)
        resid = float(np.max(np.abs(r)))
        best = min(best, resid)
        if resid <= tol or rounds >= max_rounds:
            return d, rounds, resid, best
        rhs = g + self_pull[:, None] * d
        for i in range(n_nodes):
            lo, hi = indptr[i], indptr[i + 1]
            if hi > lo:
                rhs[i] -= coefs[lo:hi] @ d[indices[lo:hi]]
        d = np.einsum("kab,kb->ka", inv_blocks, rhs)
        rounds += 1


def _mixdiff_np(indptr, indices, wvals, x, out):
    out[:] = 0.0
    for i in range(x.shape[0]):
        lo, hi = indptr[i], indptr[i + 1]
        if hi > lo:
            out[i] = wvals[lo:hi] @ (x[indices[lo:hi]] - x[i])
    return out


def _quad_grads_np(amats, bvecs, x, out):
    out[:] = 2.0 * np.einsum("kab,kb->ka", amats, x) + bvecs
    return out


# ------------------------------------------------------------------ dispatch

block_matvec_numpy = _block_matvec_np
jor_sweep_numpy = _jor_sweep_np
damped_sweep_numpy = _damped_sweep_np
baseline_quad_numpy = _make_baseline_driver(_mixdiff_np, _quad_grads_np)

if NUMBA_ENABLED:
    block_matvec_numba = njit(cache=True)(_block_matvec_loops)
    jor_sweep_numba = njit(cache=True)(_jor_sweep_loops)
    damped_sweep_numba = njit(cache=True)(_damped_sweep_loops)
    _mixdiff_numba = njit(cache=True)(_mixdiff_loops)
    _quad_grads_numba = njit(cache=True)(_quad_grads_loops)
    # the driver closes over jitted callees, which numba cannot disk-cache
    baseline_quad_numba = njit(_make_baseline_driver(_mixdiff_numba, _quad_grads_numba))
    block_matvec = block_matvec_numba
    jor_sweep = jor_sweep_numba
    damped_sweep = damped_sweep_numba
    baseline_quad = baseline_quad_numba
else:
    block_matvec_numba = None
    jor_sweep_numba = None
    damped_sweep_numba = None
    baseline_quad_numba = None
    block_matvec = _block_matvec_np
    jor_sweep = _jor_sweep_np
    damped_sweep = _damped_sweep_np
    baseline_quad = baseline_quad_numpy

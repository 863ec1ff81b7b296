"""Block-Jacobi PCG, prolongation and the post-coarsening correction."""
from dataclasses import dataclass, field

import numpy as np

from .assemble import build_coarse_system, prolongate, to_bsr
from .errors import IllConditionedError, IndefiniteMatrixError, NumericalBreakdownError

# condition number above which a diagonal block counts as singular
SINGULAR_COND = 1e14


@dataclass(frozen=True)
class PcgConfig:
    rel_tol: float = 1e-3
    max_iters: int = 1000
    post_coarsen_max_iters: int = 10

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iters < 1 or self.post_coarsen_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass
class PcgStats:
    iterations: int
    converged: bool
    residual_history: list


@dataclass
class SolveStats:
    coarse_iters: int
    post_iters: int
    coarse_dof: int
    residual_history: list = field(default_factory=list)


def _dot(a, b):
    # numpy's pairwise sum: fixed order for a given length
    return float(np.sum(a * b))


def block_jacobi_preconditioner(triplets, n_nodes=None):
    """Inverse of every 3x3 diagonal block, shape (n_nodes, 3, 3)."""
    n = triplets.n_nodes() if n_nodes is None else n_nodes
    diag = np.zeros((n, 3, 3))
    present = np.zeros(n, dtype=bool)
    on = triplets.rows == triplets.cols
    np.add.at(diag, triplets.rows[on], triplets.blocks[on])
    present[triplets.rows[on]] = True
    if not present.all():
        raise IllConditionedError(int(np.flatnonzero(~present)[0]))
    cond = np.linalg.cond(diag)
    bad = np.flatnonzero(~(cond < SINGULAR_COND))
    if len(bad):
        raise IllConditionedError(int(bad[0]))
    return np.linalg.inv(diag)


def _apply(prec, r):
    return np.einsum("nij,nj->ni", prec, r.reshape(-1, 3)).reshape(-1)


def pcg(triplets, rhs, preconditioner, config, x0=None, max_iters=None):
    """Preconditioned CG on deduplicated, key-sorted triplets.

    Stops when ||b - A x|| <= rel_tol ||b|| (recursive residual) or after
    ``max_iters`` iterations.
    """
    b = np.asarray(rhs, dtype=float).reshape(-1)
    n_nodes = len(b) // 3
    A = to_bsr(triplets, n_nodes)
    cap = config.max_iters if max_iters is None else max_iters
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float).reshape(-1)
    if not np.all(np.isfinite(b)) or not np.all(np.isfinite(x)):
        raise NumericalBreakdownError("non-finite right-hand side or initial guess")

    r = b - A @ x
    target = config.rel_tol * np.sqrt(_dot(b, b))
    rnorm = np.sqrt(_dot(r, r))
    history = [rnorm]
    if rnorm <= target:
        return x, PcgStats(0, True, history)
    z = _apply(preconditioner, r)
    p = z.copy()
    rz = _dot(r, z)
    for k in range(1, cap + 1):
        Ap = A @ p
        pAp = _dot(p, Ap)
        if not np.isfinite(pAp):
            raise NumericalBreakdownError(f"non-finite curvature at PCG iteration {k}")
        if pAp <= 0:
            raise IndefiniteMatrixError(f"p^T A p = {pAp:.3e} at PCG iteration {k}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.sqrt(_dot(r, r))
        history.append(rnorm)
        if not np.isfinite(rnorm):
            raise NumericalBreakdownError(f"non-finite residual at PCG iteration {k}")
        if rnorm <= target:
            return x, PcgStats(k, True, history)
        z = _apply(preconditioner, r)
        rz_new = _dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, PcgStats(cap, False, history)


def post_coarsen(d0, fine_triplets, g_f, config, preconditioner=None):
    """Capped PCG on the fine system H d = -g starting from ``d0``."""
    n = len(np.asarray(g_f).reshape(-1)) // 3
    if preconditioner is None:
        preconditioner = block_jacobi_preconditioner(fine_triplets, n)
    d, stats = pcg(fine_triplets, -np.asarray(g_f, dtype=float).reshape(-1), preconditioner,
                   config, x0=d0, max_iters=config.post_coarsen_max_iters)
    return d.reshape(-1, 3), stats


def solve_fine(fine_triplets, g_f, config):
    """Full-space direction: PCG on H d = -g from zero."""
    n = len(np.asarray(g_f).reshape(-1)) // 3
    prec = block_jacobi_preconditioner(fine_triplets, n)
    d, stats = pcg(fine_triplets, -np.asarray(g_f, dtype=float).reshape(-1), prec, config)
    return d.reshape(-1, 3), SolveStats(stats.iterations, 0, 3 * n, stats.residual_history)


def solve_coarsened(fine_triplets, g_f, classification, affine, config):
    """Coarse PCG from zero, prolongation, then the fine post-coarsening pass.

    Raises :class:`IllConditionedError` or :class:`IndefiniteMatrixError` when
    the coarse system is singular (e.g. a flat affine aggregate).
    """
    system = build_coarse_system(fine_triplets, g_f, classification, affine)
    prec = block_jacobi_preconditioner(system.hessian, system.expanded_node_count)
    d_c, cstats = pcg(system.hessian, -system.gradient, prec, config)
    d0 = prolongate(d_c, classification, affine)
    d, pstats = post_coarsen(d0, fine_triplets, g_f, config)
    return d, SolveStats(cstats.iterations, pstats.iterations, system.dof,
                         cstats.residual_history + pstats.residual_history)

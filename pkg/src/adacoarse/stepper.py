"""Implicit time stepping: Newton iterations with per-iteration re-coarsening."""
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .assemble import AffineBasis, reduce_triplets
from .coarsen import (active_ratio, all_3dof, build_map, classify_dof, identity_classification,
                      tag_edges)
from .energy import IncrementalPotential, strain_increment_norms
from .errors import (IllConditionedError, IndefiniteMatrixError, InfeasibleStateError,
                     LineSearchError, NewtonConvergenceError)
from .mesh import order_and_group
from .solve import PcgConfig, solve_coarsened, solve_fine
from .triplets import Triplets

log = logging.getLogger(__name__)

MODES = ("adaptive", "full-space", "all-collapse")
MIN_ALPHA = 1e-12


@dataclass
class StepConfig:
    dt: float = 1e-2
    newton_tol_factor: float = 1e-3
    max_newton_iters: int = 200
    coarsen_threshold: float = 5e-5
    gravity: tuple = (0.0, -9.8, 0.0)
    ccd_slack: float = 0.9
    affine_threshold: int = 32
    group_size: int = 32
    mode: str = "adaptive"
    pcg: PcgConfig = field(default_factory=PcgConfig)
    workers: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.newton_tol_factor <= 0:
            raise ValueError("dt and newton_tol_factor must be positive")
        if not 0 < self.ccd_slack < 1:
            raise ValueError("ccd_slack must lie in (0, 1)")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class SimState:
    x: np.ndarray
    v: np.ndarray
    t: float = 0.0
    prev_strains: np.ndarray = None
    pinned: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    step: int = 0


@dataclass
class IterationStats:
    step: int
    iter: int
    n3: int
    n12: int
    coarse_dof: int
    active_ratio: float
    pcg_iters: int
    post_iters: int
    energy: float
    dinf: float
    energy_prev: float = 0.0
    alpha: float = 1.0
    min_distance: float = np.inf


def predict(state, config, mesh):
    """xhat = x + dt v + dt^2 g; pinned vertices stay put."""
    dt = config.dt
    xhat = state.x + dt * state.v + dt * dt * np.asarray(config.gravity, dtype=float)
    if len(state.pinned):
        xhat[state.pinned] = state.x[state.pinned]
    return xhat


def max_feasible_step(x, d, barrier_params, slack=0.9):
    """Largest alpha <= 1 keeping every vertex short of each plane by a ``slack`` fraction."""
    if barrier_params is None or not barrier_params.planes:
        return 1.0
    n = barrier_params.normals
    dist = x @ n.T - barrier_params.offsets
    approach = -(np.asarray(d).reshape(-1, 3) @ n.T)
    moving = approach > 0
    if not moving.any():
        return 1.0
    return float(min(1.0, np.min(slack * dist[moving] / approach[moving])))


def line_search(x_prev, d, alpha0, energy, e_prev, breakdown=None):
    """Halve alpha until energy(x_prev + alpha d) < e_prev; returns (x, alpha, E)."""
    alpha = alpha0
    while alpha >= MIN_ALPHA:
        x = x_prev + alpha * d
        try:
            e = energy(x)
        except InfeasibleStateError:
            e = np.inf
        if e < e_prev:
            return x, alpha, e
        alpha *= 0.5
    info = breakdown(x_prev) if breakdown else {}
    raise LineSearchError(f"no descent down to alpha={alpha:.1e} (E_prev={e_prev:.6e})", info)


def _constrain(triplets, pinned, n):
    """Drop blocks touching pinned vertices and put identity on their diagonals."""
    if not len(pinned):
        return triplets
    mask = np.zeros(n, dtype=bool)
    mask[pinned] = True
    keep = ~(mask[triplets.rows] | mask[triplets.cols])
    p = np.asarray(pinned, dtype=np.int64)
    return Triplets.concat([
        Triplets(triplets.rows[keep], triplets.cols[keep], triplets.blocks[keep]),
        Triplets(p, p, np.broadcast_to(np.eye(3), (len(p), 3, 3))),
    ])


class Simulator:
    """Owns the static scene data and advances a :class:`SimState`."""

    def __init__(self, mesh, material, barrier_params, config, element_material=None):
        self.mesh = mesh
        self.material = material
        self.barrier_params = barrier_params
        self.config = config
        self.model = IncrementalPotential(mesh, material, barrier_params, config.dt, config.workers,
                                          element_material=element_material)
        self.last_classification = None
        self.affine = AffineBasis(mesh.rest_positions)
        self.ordering = order_and_group(mesh, config.group_size)
        self.scene_scale = mesh.bbox_diagonal()
        self.eps_d = config.newton_tol_factor * self.scene_scale

    def initial_state(self, x=None, v=None, pinned=()):
        x = self.mesh.rest_positions.copy() if x is None else np.array(x, dtype=float)
        v = np.zeros_like(x) if v is None else np.broadcast_to(np.asarray(v, dtype=float), x.shape).copy()
        pinned = np.unique(np.asarray(pinned, dtype=np.int64))
        v[pinned] = 0.0
        self.model._check_feasible(self.model.distances(x))
        return SimState(x=x, v=v, prev_strains=self.model.strains(x), pinned=pinned)

    # ---- coarsening -----------------------------------------------------
    def classify(self, G_prev, G_curr, pinned, skip):
        n = self.mesh.n_vertices
        mode = self.config.mode
        if mode == "full-space" or skip:
            return identity_classification(n)
        if mode == "all-collapse":
            tags = np.ones(self.mesh.n_edges, dtype=np.uint8)
        else:
            inc = strain_increment_norms(G_prev, G_curr)
            tags = tag_edges(inc, self.config.coarsen_threshold, self.mesh)
        if len(pinned):
            for v in pinned:
                tags[self.mesh.vertex_to_edges[v]] = 0
        fmap = build_map(tags, self.ordering, self.mesh, self.config.workers)
        return classify_dof(fmap, self.config.affine_threshold)

    def direction(self, H, g, classification):
        cfg = self.config
        if cfg.mode == "full-space":
            return solve_fine(H, g, cfg.pcg), classification
        try:
            return solve_coarsened(H, g, classification, self.affine, cfg.pcg), classification
        except (IllConditionedError, IndefiniteMatrixError) as exc:
            if classification.n12 == 0:
                raise
            log.info("degenerate affine aggregate (%s); retrying with 3-DoF nodes", exc)
            fallback = all_3dof(classification.aggregation)
            return solve_coarsened(H, g, fallback, self.affine, cfg.pcg), fallback

    # ---- time stepping --------------------------------------------------
    def newton_solve(self, state):
        """One time step; returns (new state, list of IterationStats)."""
        cfg = self.config
        n = self.mesh.n_vertices
        model = self.model
        xt = state.x
        xhat = predict(state, cfg, self.mesh)
        energy = lambda y: model.energy(y, xhat)
        x = xt.copy()
        G_prev = model.strains(xt)
        stats = []
        for it in range(1, cfg.max_newton_iters + 1):
            e_prev = energy(x)
            g = model.gradient(x, xhat, state.pinned)
            H = reduce_triplets(_constrain(model.hessian(x, xhat), state.pinned, n))
            G_curr = model.strains(x)
            skip = state.step == 0 and it == 1
            cls = self.classify(G_prev, G_curr, state.pinned, skip)
            (d, sstats), cls = self.direction(H, g, cls)
            self.last_classification = cls
            if len(state.pinned):
                d[state.pinned] = 0.0
            dinf = float(np.max(np.abs(d))) if d.size else 0.0
            converged = dinf / cfg.dt <= self.eps_d
            alpha0 = max_feasible_step(x, d, self.barrier_params, cfg.ccd_slack)
            try:
                x_new, alpha, e_new = line_search(x, d, alpha0, energy, e_prev,
                                                  lambda y: model.breakdown(y, xhat))
            except LineSearchError:
                if not converged:
                    raise
                # step below round-off; the current iterate already satisfies the tolerance
                x_new, alpha, e_new = x, 0.0, e_prev
            dist = model.distances(x_new)
            stats.append(IterationStats(
                step=state.step, iter=it, n3=cls.n3, n12=cls.n12, coarse_dof=cls.coarse_dof,
                active_ratio=active_ratio(cls, n), pcg_iters=sstats.coarse_iters,
                post_iters=sstats.post_iters, energy=e_new, dinf=dinf, energy_prev=e_prev,
                alpha=alpha, min_distance=float(dist.min()) if dist.size else np.inf))
            G_prev = G_curr
            x = x_new
            if converged:
                break
        else:
            raise NewtonConvergenceError(
                f"step {state.step}: no convergence in {cfg.max_newton_iters} Newton iterations", stats)
        v = (x - xt) / cfg.dt
        new_state = replace(state, x=x, v=v, t=state.t + cfg.dt, prev_strains=model.strains(x),
                            step=state.step + 1)
        return new_state, stats

    def run(self, state, steps, callback=None):
        all_stats = []
        for _ in range(steps):
            state, stats = self.newton_solve(state)
            all_stats.extend(stats)
            if callback is not None:
                callback(state, stats)
        return state, all_stats

"""Incremental potential: inertia, StVK elasticity and half-space barriers.

The potential minimized each time step is

    E(x) = 1/2 (x - xhat)^T M (x - xhat) + dt^2 Psi(x) + B(x)

with Psi the StVK energy integrated over element measure and B a sum of
log-barriers between every vertex and every contact plane.  The same
deformation-gradient code serves edges, triangles and tets by treating the
rest shape in a local k-dimensional frame (k = 1, 2, 3).
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleStateError, MeshError
from .parallel import chunked_map
from .triplets import Triplets


@dataclass(frozen=True)
class MaterialParams:
    youngs_modulus: float
    poisson_ratio: float
    density: float

    def __post_init__(self):
        if self.youngs_modulus <= 0 or self.density <= 0:
            raise ValueError("Young's modulus and density must be positive")
        if not 0 < self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must lie in (0, 0.5)")

    @property
    def lame(self):
        E, nu = self.youngs_modulus, self.poisson_ratio
        mu = E / (2 * (1 + nu))
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        return mu, lam


@dataclass(frozen=True)
class Plane:
    """Half-space ``normal . x >= offset``."""

    normal: tuple
    offset: float = 0.0


@dataclass(frozen=True)
class BarrierParams:
    dhat: float
    kappa: float
    planes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.dhat <= 0 or self.kappa <= 0:
            raise ValueError("dhat and kappa must be positive")
        for p in self.planes:
            if abs(np.linalg.norm(p.normal) - 1.0) > 1e-12:
                raise ValueError(f"plane normal {p.normal} is not unit length")

    @property
    def normals(self):
        return np.array([p.normal for p in self.planes], dtype=float).reshape(-1, 3)

    @property
    def offsets(self):
        return np.array([p.offset for p in self.planes], dtype=float)


def barrier(d, dhat, kappa):
    """Value, first and second derivative of -kappa (d - dhat)^2 ln(d / dhat)."""
    d = np.asarray(d, dtype=float)
    active = d < dhat
    dd = np.where(active, d - dhat, 0.0)
    ratio = np.where(active, d / dhat, 1.0)
    dsafe = np.where(active, d, dhat)
    log = np.log(ratio)
    b = -kappa * dd * dd * log
    db = -kappa * (2 * dd * log + dd * dd / dsafe)
    d2b = -kappa * (2 * log + 4 * dd / dsafe - dd * dd / (dsafe * dsafe))
    return b, db, d2b


def green_strain(F):
    """G = 1/2 (F^T F - I); a scalar F is treated as a 1x1 stretch."""
    F = np.asarray(F, dtype=float)
    if F.ndim == 0:
        return 0.5 * (F * F - 1.0)
    FtF = np.swapaxes(F, -1, -2) @ F
    return 0.5 * (FtF - np.eye(FtF.shape[-1]))


def strain_increment_norms(G_prev, G_curr):
    """Per-element Frobenius norm of the strain change."""
    diff = np.asarray(G_curr, dtype=float) - np.asarray(G_prev, dtype=float)
    if diff.ndim == 1:
        return np.abs(diff)
    return np.sqrt(np.sum(diff * diff, axis=(-2, -1)))


def _rest_frames(kind, rest_positions, elements):
    """Per-element (B, Dm_inv): F = X_e^T B with X_e the (nv, 3) element positions."""
    p = rest_positions[elements]
    ne = len(elements)
    if kind == "tet":
        Dm = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=-1)
    elif kind == "triangle":
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        t1 = e1 / np.linalg.norm(e1, axis=1, keepdims=True)
        n = np.cross(e1, e2)
        t2 = np.cross(n, t1)
        t2 /= np.linalg.norm(t2, axis=1, keepdims=True)
        Dm = np.stack([np.stack([np.einsum("ij,ij->i", t1, e1), np.einsum("ij,ij->i", t1, e2)], -1),
                       np.stack([np.einsum("ij,ij->i", t2, e1), np.einsum("ij,ij->i", t2, e2)], -1)], 1)
    else:
        Dm = np.linalg.norm(p[:, 1] - p[:, 0], axis=1).reshape(ne, 1, 1)
    k = Dm.shape[-1]
    det = np.linalg.det(Dm) if ne else np.zeros(0)
    bad = np.flatnonzero(np.abs(det) < 1e-300)
    if len(bad):
        raise MeshError("singular rest shape matrix", element=int(bad[0]))
    Dm_inv = np.linalg.inv(Dm) if ne else np.zeros((0, k, k))
    D = np.vstack([-np.ones((1, k)), np.eye(k)])
    return np.einsum("vk,nkj->nvj", D, Dm_inv), Dm_inv


def deformation_gradient(element, x, mesh):
    """Deformation gradient of one element: 3x3 (tet), 3x2 (triangle) or scalar (edge)."""
    frame, _ = _rest_frames(mesh.kind, mesh.rest_positions, mesh.elements[element:element + 1])
    F = np.asarray(x, dtype=float)[mesh.elements[element]].T @ frame[0]
    if mesh.kind == "edge":
        return float(np.linalg.norm(F))
    return F


class IncrementalPotential:
    """Evaluates E, its gradient, and an SPD proxy Hessian for one scene."""

    def __init__(self, mesh, material, barrier_params=None, dt=1e-2, workers=1,
                 element_material=None):
        """``element_material`` optionally maps each element to an entry of a
        list of MaterialParams passed as ``material``."""
        self.mesh = mesh
        self.material = material
        self.barrier_params = barrier_params
        self.dt = float(dt)
        self.workers = workers
        if element_material is None:
            mu, lam = material.lame
            self.mu = np.full(mesh.n_elements, mu)
            self.lam = np.full(mesh.n_elements, lam)
        else:
            lame = np.array([m.lame for m in material]).reshape(-1, 2)
            idx = np.asarray(element_material, dtype=np.int64)
            self.mu, self.lam = lame[idx, 0], lame[idx, 1]
        self.frames, _ = _rest_frames(mesh.kind, mesh.rest_positions, mesh.elements)

    # ---- elasticity -----------------------------------------------------
    def deformation_gradients(self, x):
        xe = x[self.mesh.elements]
        return np.einsum("nvi,nvk->nik", xe, self.frames)

    def strains(self, x):
        """Per-element Green strain (ne, k, k); edges give (ne,) scalars."""
        G = green_strain(self.deformation_gradients(x))
        return G[:, 0, 0] if self.mesh.kind == "edge" else G

    def _elastic_chunk(self, x, sl, want_grad, want_hess, project=True):
        mu, lam = self.mu[sl, None, None], self.lam[sl, None, None]
        B = self.frames[sl]
        vol = self.mesh.measures[sl]
        F = np.einsum("nvi,nvk->nik", x[self.mesh.elements[sl]], B)
        k = F.shape[-1]
        I = np.eye(k)
        G = green_strain(F)
        trG = np.trace(G, axis1=1, axis2=2)
        psi = mu[:, 0, 0] * np.sum(G * G, axis=(1, 2)) + 0.5 * lam[:, 0, 0] * trG ** 2
        out = [vol * psi]
        if want_grad or want_hess:
            S = 2 * mu * G + lam * trG[:, None, None] * I
            P = F @ S
            if want_grad:
                # dPsi/dx_v = vol * P B_v
                out.append(vol[:, None, None] * np.einsum("nik,nvk->nvi", P, B))
            if want_hess:
                I3 = np.eye(3)
                FFt = F @ np.swapaxes(F, 1, 2)
                m4, l4 = mu[..., None, None], lam[..., None, None]
                C = (np.einsum("ae,nfb->nabef", I3, S)
                     + m4 * np.einsum("naf,neb->nabef", F, F)
                     + m4 * np.einsum("nae,bf->nabef", FFt, I)
                     + l4 * np.einsum("nab,nef->nabef", F, F))
                H = vol[:, None, None, None, None] * np.einsum("ncbdf,nvb,nwf->nvcwd", C, B, B)
                nv = B.shape[1]
                H = H.reshape(-1, 3 * nv, 3 * nv)
                H = 0.5 * (H + np.swapaxes(H, 1, 2))
                if project:
                    w, V = np.linalg.eigh(H)
                    H = np.einsum("nij,nj,nkj->nik", V, np.maximum(w, 0.0), V)
                    H = 0.5 * (H + np.swapaxes(H, 1, 2))
                out.append(H.reshape(-1, nv, 3, nv, 3))
        return out

    def _elastic(self, x, want_grad=False, want_hess=False, project=True):
        parts = chunked_map(lambda sl: self._elastic_chunk(x, sl, want_grad, want_hess, project),
                            self.mesh.n_elements, self.workers)
        return [np.concatenate([p[i] for p in parts]) for i in range(len(parts[0]))] if parts else None

    def elastic_energy(self, x):
        if self.mesh.n_elements == 0:
            return 0.0
        return float(np.sum(self._elastic(x)[0]))

    # ---- contact --------------------------------------------------------
    def distances(self, x):
        """(n_vertices, n_planes) signed distances."""
        bp = self.barrier_params
        if bp is None or not bp.planes:
            return np.zeros((len(x), 0))
        return x @ bp.normals.T - bp.offsets

    def _check_feasible(self, d):
        if d.size and d.min() <= 0:
            v, p = np.unravel_index(np.argmin(d), d.shape)
            raise InfeasibleStateError(f"vertex {v} at distance {d[v, p]:.3e} from plane {p}")

    def barrier_energy(self, x):
        d = self.distances(x)
        self._check_feasible(d)
        if not d.size:
            return 0.0
        b, _, _ = barrier(d, self.barrier_params.dhat, self.barrier_params.kappa)
        return float(np.sum(b))

    # ---- totals ---------------------------------------------------------
    def breakdown(self, x, xhat):
        dx = x - xhat
        return {
            "inertia": float(0.5 * np.sum(self.mesh.vertex_mass[:, None] * dx * dx)),
            "elastic": self.dt ** 2 * self.elastic_energy(x),
            "barrier": self.barrier_energy(x),
        }

    def energy(self, x, xhat):
        return sum(self.breakdown(x, xhat).values())

    def gradient(self, x, xhat, pinned=None):
        g = self.mesh.vertex_mass[:, None] * (x - xhat)
        if self.mesh.n_elements:
            ge = self._elastic(x, want_grad=True)[1]
            np.add.at(g, self.mesh.elements, self.dt ** 2 * ge)
        d = self.distances(x)
        self._check_feasible(d)
        if d.size:
            _, db, _ = barrier(d, self.barrier_params.dhat, self.barrier_params.kappa)
            g += db @ self.barrier_params.normals
        if pinned is not None and len(pinned):
            g[np.asarray(pinned)] = 0.0
        return g

    def hessian(self, x, xhat=None, project=True):
        """Unreduced triplets: element blocks, then mass diagonals, then barrier blocks.

        With ``project=False`` the exact elastic Hessian is emitted (testing only).
        """
        parts = []
        n = self.mesh.n_vertices
        if self.mesh.n_elements:
            He = self.dt ** 2 * self._elastic(x, want_hess=True, project=project)[1]
            elems = self.mesh.elements
            nv = elems.shape[1]
            rows = np.repeat(elems, nv, axis=1)
            cols = np.tile(elems, (1, nv))
            blocks = np.swapaxes(He, 2, 3).reshape(-1, 3, 3)
            parts.append(Triplets(rows.reshape(-1), cols.reshape(-1), blocks))
        idx = np.arange(n)
        parts.append(Triplets(idx, idx, self.mesh.vertex_mass[:, None, None] * np.eye(3)))
        d = self.distances(x)
        self._check_feasible(d)
        if d.size:
            bp = self.barrier_params
            _, _, d2b = barrier(d, bp.dhat, bp.kappa)
            v, p = np.nonzero(d < bp.dhat)
            if len(v):
                nrm = bp.normals[p]
                curv = np.maximum(d2b[v, p], 0.0) if project else d2b[v, p]
                blocks = curv[:, None, None] * np.einsum("ki,kj->kij", nrm, nrm)
                parts.append(Triplets(v, v, blocks))
        return Triplets.concat(parts)


def incremental_potential(x, xhat, mesh, material, barrier_params, dt):
    return IncrementalPotential(mesh, material, barrier_params, dt).energy(x, xhat)


def ip_gradient(x, xhat, mesh, material, barrier_params, dt, pinned=None):
    return IncrementalPotential(mesh, material, barrier_params, dt).gradient(x, xhat, pinned)


def ip_hessian(x, xhat, mesh, material, barrier_params, dt):
    return IncrementalPotential(mesh, material, barrier_params, dt).hessian(x, xhat)

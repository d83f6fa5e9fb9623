"""Rotation-invariant geometric energies with analytic gradients.

All energies take an ``(m, n)`` parameter matrix and expose ``value``,
``gradient`` and ``value_and_gradient``. Deformation energies (symmetric
Dirichlet, ARAP) are 2-D and compare the deformed positions against the
mesh's rest configuration.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mesh import TriMesh

ENERGIES = ("laplacian", "umbrella", "symdir", "arap", "quad")


class DegenerateTriangleError(ValueError):
    def __init__(self, index: int, det: float):
        super().__init__(f"triangle {index} is inverted or degenerate (area ratio {det:.3g})")
        self.index = index


class Energy:
    """Base class. Subclasses implement ``value_and_gradient``."""

    shape: tuple

    def value_and_gradient(self, p):
        raise NotImplementedError

    def value(self, p) -> float:
        return self.value_and_gradient(p)[0]

    def gradient(self, p) -> np.ndarray:
        return self.value_and_gradient(p)[1]

    def _check(self, p):
        p = np.asarray(p, dtype=np.float64)
        if p.shape != tuple(self.shape):
            raise ValueError(f"{type(self).__name__} expects shape {self.shape}, got {p.shape}")
        return p


class QuadEnergy(Energy):
    """0.5 * ||p - target||_F^2."""

    def __init__(self, target):
        self.target = np.array(target, dtype=np.float64)
        self.shape = self.target.shape

    def value_and_gradient(self, p):
        d = self._check(p) - self.target
        return 0.5 * float(np.sum(d * d)), d


def _adjacency(mesh: TriMesh):
    m = mesh.n_vertices
    e = mesh.edges()
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    if np.any(deg == 0):
        raise ValueError(f"isolated vertex {int(np.argmin(deg))} has no neighbours")
    return adj, deg


class LaplacianEnergy(Energy):
    """Uniform graph-Laplacian quadratic form: sum over edges of |v_i - v_j|^2.

    Equals trace(p^T K p) with K = D - A. Used for the shrinkage experiments
    because its conditioning keeps normalized-step optimizers numerically
    stable on finely sampled circles (see :class:`UmbrellaEnergy`).
    """

    def __init__(self, mesh: TriMesh):
        adj, deg = _adjacency(mesh)
        self.K = (sp.diags(deg) - adj).tocsr()
        self.shape = (mesh.n_vertices, mesh.dim)

    def value_and_gradient(self, p):
        p = self._check(p)
        Kp = self.K @ p
        return float(np.sum(p * Kp)), 2.0 * Kp


class UmbrellaEnergy(Energy):
    """Squared umbrella vectors: sum_i |v_i - mean of neighbours of i|^2.

    Its Hessian spans eigenvalues from ~(2 pi / k)^4 to 8 on a k-gon, so Adam
    style updates at alpha >= 1e-3 turn chaotic on circle:64 and finer:
    1-ulp input differences grow to O(alpha) within a few steps.
    """

    def __init__(self, mesh: TriMesh):
        adj, deg = _adjacency(mesh)
        m = mesh.n_vertices
        self.L = (sp.identity(m, format="csr") - sp.diags(1.0 / deg) @ adj).tocsr()
        self.LT = self.L.T.tocsr()
        self.shape = (m, mesh.dim)

    def umbrella(self, p):
        return self.L @ self._check(p)

    def value_and_gradient(self, p):
        u = self.umbrella(p)
        return float(np.sum(u * u)), 2.0 * (self.LT @ u)


class SymmetricDirichletEnergy(Energy):
    """Area-weighted sum over triangles of |J|_F^2 + |J^-1|_F^2.

    ``J`` maps rest edge vectors to deformed ones. Inverted or collapsed
    triangles (det J < 1e-12) raise :class:`DegenerateTriangleError`.
    """

    def __init__(self, mesh: TriMesh):
        rest = mesh.rest()
        if rest.shape[1] != 2:
            raise ValueError("symmetric Dirichlet energy is implemented for 2-D meshes only")
        if not len(mesh.triangles):
            raise ValueError("symmetric Dirichlet energy needs a triangle mesh")
        self.tris = mesh.triangles
        dr = self._edge_matrices(rest)
        det = np.linalg.det(dr)
        if np.any(det <= 0):
            raise ValueError(f"rest triangle {int(np.argmin(det))} has non-positive area")
        self.area = 0.5 * det
        self.dr_inv = np.linalg.inv(dr)
        self.shape = rest.shape

    def _edge_matrices(self, p):
        t = self.tris
        # columns are the two edge vectors leaving vertex 0
        return np.stack([p[t[:, 1]] - p[t[:, 0]], p[t[:, 2]] - p[t[:, 0]]], axis=2)

    def jacobians(self, p):
        return self._edge_matrices(self._check(p)) @ self.dr_inv

    def _terms(self, p):
        J = self.jacobians(p)
        det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        bad = det < 1e-12
        if bad.any():
            k = int(np.argmax(bad))
            raise DegenerateTriangleError(k, float(det[k]))
        fro2 = np.einsum("tij,tij->t", J, J)
        # for 2x2 matrices |J^-1|_F = |J|_F / |det J|
        return J, float(np.sum(self.area * fro2 * (1.0 + 1.0 / det**2)))

    def value(self, p) -> float:
        return self._terms(p)[1]

    def value_and_gradient(self, p):
        J, value = self._terms(p)

        Jinv = np.linalg.inv(J)
        JinvT = np.transpose(Jinv, (0, 2, 1))
        dJ = 2.0 * self.area[:, None, None] * (J - JinvT @ Jinv @ JinvT)
        dDs = dJ @ np.transpose(self.dr_inv, (0, 2, 1))
        g = np.zeros(self.shape)
        t = self.tris
        np.add.at(g, t[:, 1], dDs[:, :, 0])
        np.add.at(g, t[:, 2], dDs[:, :, 1])
        np.add.at(g, t[:, 0], -(dDs[:, :, 0] + dDs[:, :, 1]))
        return value, g


class ArapEnergy(Energy):
    """2-D as-rigid-as-possible energy with uniform edge weights.

    Each vertex i owns the directed edges to its one-ring and a best-fit
    rotation R_i; the energy is sum_i sum_j |(p_i - p_j) - R_i (r_i - r_j)|^2
    with r the rest positions. R_i is fitted in closed form, so the gradient
    holds it fixed.
    """

    def __init__(self, mesh: TriMesh):
        rest = mesh.rest()
        if rest.shape[1] != 2:
            raise ValueError("ARAP energy is implemented for 2-D meshes only")
        e = mesh.edges()
        if not len(e):
            raise ValueError("ARAP energy needs a mesh with edges")
        self.src = np.concatenate([e[:, 0], e[:, 1]])
        self.dst = np.concatenate([e[:, 1], e[:, 0]])
        self.rest_edges = rest[self.src] - rest[self.dst]
        self.shape = rest.shape

    def rotations(self, p):
        """Per-vertex best-fit rotation matrices, shape ``(m, 2, 2)``."""
        p = self._check(p)
        d = p[self.src] - p[self.dst]
        e = self.rest_edges
        m = self.shape[0]
        # argmax_theta tr(R(theta)^T C_i) with C_i = sum_j d_ij e_ij^T
        sin_part = np.bincount(self.src, d[:, 1] * e[:, 0] - d[:, 0] * e[:, 1], minlength=m)
        cos_part = np.bincount(self.src, d[:, 0] * e[:, 0] + d[:, 1] * e[:, 1], minlength=m)
        theta = np.arctan2(sin_part, cos_part)
        theta[(sin_part == 0) & (cos_part == 0)] = 0.0
        c, s = np.cos(theta), np.sin(theta)
        return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)

    def _residuals(self, p):
        p = self._check(p)
        R = self.rotations(p)
        d = p[self.src] - p[self.dst]
        return d - np.einsum("eij,ej->ei", R[self.src], self.rest_edges)

    def value(self, p) -> float:
        r = self._residuals(p)
        return float(np.sum(r * r))

    def value_and_gradient(self, p):
        r = self._residuals(p)
        value = float(np.sum(r * r))
        g = np.zeros(self.shape)
        np.add.at(g, self.src, 2.0 * r)
        np.add.at(g, self.dst, -2.0 * r)
        return value, g


def deform(vertices) -> np.ndarray:
    """Smooth non-rigid, orientation-preserving warp used as a starting shape.

    On the unit disk the Jacobian determinant stays above 0.88.
    """
    v = np.array(vertices, dtype=np.float64)
    x, y = v[:, 0].copy(), v[:, 1].copy()
    v[:, 0] = 1.3 * x + 0.15 * y * y
    v[:, 1] = 0.75 * y + 0.1 * np.sin(3.0 * x)
    if v.shape[1] == 3:
        v[:, 2] *= 0.9
    return v


def make_energy(energy_id: str, mesh: TriMesh) -> Energy:
    """Energy by id. ``quad`` pulls towards the mesh's rest positions."""
    if energy_id == "laplacian":
        return LaplacianEnergy(mesh)
    if energy_id == "umbrella":
        return UmbrellaEnergy(mesh)
    if energy_id == "symdir":
        return SymmetricDirichletEnergy(mesh)
    if energy_id == "arap":
        return ArapEnergy(mesh)
    if energy_id == "quad":
        return QuadEnergy(mesh.rest())
    raise ValueError(f"unknown energy {energy_id!r}; expected one of {ENERGIES}")


def initial_params(energy_id: str, mesh: TriMesh) -> np.ndarray:
    """Starting configuration for an experiment.

    The Laplacian regularizers start from the mesh itself; the other energies
    are zero there, so they start from :func:`deform` applied to the rest shape.
    """
    if energy_id in ("laplacian", "umbrella"):
        return mesh.vertices.copy()
    return deform(mesh.rest())

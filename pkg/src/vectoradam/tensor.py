"""Parameter matrices, row-wise vector helpers and rotation sampling.

A parameter matrix is a plain ``(m, n)`` float64 numpy array where each row
is one n-dimensional vector quantity (a vertex position, an RGB colour, ...).
Gradients use the same layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ParamMatrix = np.ndarray

ORTHO_TOL = 1e-12


def as_param_matrix(x, copy: bool = False) -> ParamMatrix:
    """Coerce ``x`` into a finite, C-contiguous ``(m, n)`` float64 array.

    1-D input is treated as a single column (``n = 1``).
    """
    arr = np.array(x, dtype=np.float64) if copy else np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"parameter matrix must be 2-D, got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise ValueError("vector dimension n must be >= 1")
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr))[0, 0])
        raise ValueError(f"parameter matrix has non-finite entries (row {bad})")
    return np.ascontiguousarray(arr)


def row_norms(p: ParamMatrix) -> np.ndarray:
    """Euclidean norm of every row."""
    p = np.asarray(p, dtype=np.float64)
    return np.sqrt(np.einsum("ij,ij->i", p, p))


@dataclass(frozen=True)
class Rotation:
    """An element of SO(n), stored as its ``n x n`` matrix."""

    mat: np.ndarray

    def __post_init__(self):
        mat = np.array(self.mat, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError(f"rotation matrix must be square, got {mat.shape}")
        n = mat.shape[0]
        if np.max(np.abs(mat @ mat.T - np.eye(n))) > ORTHO_TOL:
            raise ValueError("rotation matrix is not orthogonal")
        if abs(np.linalg.det(mat) - 1.0) > ORTHO_TOL:
            raise ValueError("rotation matrix must have determinant +1")
        mat.setflags(write=False)
        object.__setattr__(self, "mat", mat)

    @property
    def n(self) -> int:
        return self.mat.shape[0]

    def inverse(self) -> "Rotation":
        return Rotation(self.mat.T)

    @classmethod
    def identity(cls, n: int) -> "Rotation":
        return cls(np.eye(n))

    @classmethod
    def from_angle(cls, phi: float) -> "Rotation":
        """Planar rotation by ``phi`` radians (counter-clockwise)."""
        c, s = np.cos(phi), np.sin(phi)
        return cls(np.array([[c, -s], [s, c]]))

    @classmethod
    def from_quaternion(cls, q) -> "Rotation":
        w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
        mat = np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])
        return cls(mat)

    def to_list(self) -> list:
        return self.mat.tolist()


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def random_rotation(n: int, seed) -> Rotation:
    """Haar-uniform rotation in SO(2) or SO(3).

    SO(2) draws a uniform angle in [0, 2pi); SO(3) normalises a 4-D Gaussian
    sample into a uniform unit quaternion. ``seed`` may be an int or a numpy
    Generator (consumed in place).
    """
    rng = _rng(seed)
    if n == 2:
        return Rotation.from_angle(rng.uniform(0.0, 2.0 * np.pi))
    if n == 3:
        return Rotation.from_quaternion(rng.standard_normal(4))
    raise NotImplementedError(f"no rotation sampler for n={n} (supported: 2, 3)")


def apply_rotation(r: Rotation, p: ParamMatrix) -> ParamMatrix:
    """Rotate every row of ``p`` by ``r``."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != r.n:
        raise ValueError(f"rotation of dimension {r.n} cannot act on matrix of shape {p.shape}")
    return p @ r.mat.T

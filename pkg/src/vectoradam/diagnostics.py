"""Experiments measuring rotation equivariance and coordinate-system bias.

Each function is deterministic for a fixed seed and returns a small report
dataclass with ``to_dict`` (JSON metrics) and ``csv_rows`` (per-step or
per-bin series).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .energy import make_energy, initial_params
from .mesh import TriMesh
from .optim import Hyper, run
from .tensor import Rotation, apply_rotation, random_rotation, row_norms

# Per-energy probe step for gradcheck. Central differences are exact for the
# quadratic, so a larger step only lowers roundoff.
DEFAULT_FD_STEP = {"quad": 1e-4, "laplacian": 1e-6, "umbrella": 1e-6, "symdir": 1e-6, "arap": 1e-6}
GRADCHECK_TOL = {"quad": 1e-9, "laplacian": 1e-5, "umbrella": 1e-5, "symdir": 1e-5, "arap": 1e-4}


@dataclass
class EquivarianceReport:
    optimizer: str
    energy: str
    rotation: list
    deviations: list
    tolerance: float
    expect: str = "equivariant"

    @property
    def max_deviation(self) -> float:
        return max(self.deviations) if self.deviations else 0.0

    @property
    def passed(self) -> bool:
        if self.expect == "equivariant":
            return self.max_deviation < self.tolerance
        return self.max_deviation > self.tolerance

    def to_dict(self) -> dict:
        return {
            "optimizer": self.optimizer,
            "energy": self.energy,
            "rotation": self.rotation,
            "expect": self.expect,
            "tolerance": self.tolerance,
            "max_deviation": self.max_deviation,
            "passed": self.passed,
        }

    def csv_rows(self):
        yield ("step", "deviation")
        for t, d in enumerate(self.deviations, 1):
            yield (t, repr(d))


def check_equivariance(optimizer, energy_id, mesh: TriMesh, steps=100, seed=0, hyper: Hyper | None = None,
                       rotation: Rotation | None = None, tolerance=1e-6, expect="equivariant"):
    """Run from ``p0`` and from ``R p0``; compare after rotating the second run back.

    ``rotation`` overrides the seeded Haar sample. ``expect="nonequivariant"``
    flips the verdict so the report passes when the deviation exceeds
    ``tolerance``.
    """
    if expect not in ("equivariant", "nonequivariant"):
        raise ValueError(f"expect must be 'equivariant' or 'nonequivariant', got {expect!r}")
    hyper = hyper or Hyper()
    energy = make_energy(energy_id, mesh)
    p0 = initial_params(energy_id, mesh)
    R = rotation if rotation is not None else random_rotation(p0.shape[1], seed)
    ref = run(optimizer, hyper, energy, p0, steps)
    rot = run(optimizer, hyper, energy, apply_rotation(R, p0), steps)
    back = R.inverse()
    devs = [float(np.max(np.abs(apply_rotation(back, b) - a)))
            for a, b in zip(ref.params[1:], rot.params[1:])]
    return EquivarianceReport(optimizer, energy_id, R.to_list(), devs, tolerance, expect)


@dataclass
class AngleHistogram:
    edges: np.ndarray
    counts: np.ndarray
    skipped: int
    spike: float  # fraction of directions near a diagonal
    spike_halfwidth: float = 5.0

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def bins(self) -> int:
        return len(self.counts)

    @property
    def uniformity(self) -> float:
        """Largest absolute gap between a bin's frequency and 1/bins."""
        if not self.total:
            return 0.0
        return float(np.max(np.abs(self.counts / self.total - 1.0 / self.bins)))

    def to_dict(self) -> dict:
        return {
            "bins": self.bins,
            "total": self.total,
            "skipped": self.skipped,
            "spike_halfwidth_deg": self.spike_halfwidth,
            "spike": self.spike,
            "uniformity": self.uniformity,
        }

    def csv_rows(self):
        yield ("bin_start_deg", "bin_end_deg", "count")
        for a, b, c in zip(self.edges[:-1], self.edges[1:], self.counts):
            yield (repr(float(a)), repr(float(b)), int(c))


def _angle_deg(vecs):
    return np.mod(np.degrees(np.arctan2(vecs[:, 1], vecs[:, 0])), 360.0)


def near_diagonal(angles_deg, halfwidth=5.0) -> np.ndarray:
    """Mask of angles within ``halfwidth`` degrees of 45, 135, 225 or 315."""
    off = np.abs(np.mod(angles_deg, 90.0) - 45.0)
    return off <= halfwidth


def first_step_histogram(optimizer, energy_id, mesh: TriMesh, trials=100, steps=100, seed=0,
                         hyper: Hyper | None = None, bins=36, spike_halfwidth=5.0):
    """Histogram of per-vertex update directions over randomly rotated starts.

    Every trial rotates the starting shape by a Haar-random angle, runs
    ``steps`` iterations and records the direction of each vertex's update at
    every step. Zero-length updates are counted in ``skipped``.
    """
    hyper = hyper or Hyper()
    energy = make_energy(energy_id, mesh)
    p0 = initial_params(energy_id, mesh)
    if p0.shape[1] != 2:
        raise ValueError("direction histograms need a 2-D problem")
    rng = np.random.default_rng(seed)
    edges = np.linspace(0.0, 360.0, bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    near = 0
    skipped = 0
    for _ in range(trials):
        R = random_rotation(2, rng)
        traj = run(optimizer, hyper, energy, apply_rotation(R, p0), steps)
        upd = np.diff(np.stack(traj.params), axis=0).reshape(-1, 2)
        moving = row_norms(upd) > 0
        skipped += int(np.count_nonzero(~moving))
        ang = _angle_deg(upd[moving])
        counts += np.histogram(ang, bins=edges)[0]
        near += int(np.count_nonzero(near_diagonal(ang, spike_halfwidth)))
    total = int(counts.sum())
    return AngleHistogram(edges, counts, skipped, near / total if total else 0.0, spike_halfwidth)


@dataclass
class AnisotropyReport:
    optimizer: str
    ratios: list
    mean_radius: list
    cone_deg: float

    def milestone(self, fraction=0.5):
        """``(step, ratio)`` at the first step whose mean radius is <= fraction * initial."""
        r0 = self.mean_radius[0]
        for t, r in enumerate(self.mean_radius):
            if r <= fraction * r0:
                return t, self.ratios[t]
        return None, None

    def to_dict(self) -> dict:
        step, ratio = self.milestone()
        return {"optimizer": self.optimizer, "cone_deg": self.cone_deg,
                "half_radius_step": step, "half_radius_ratio": ratio,
                "final_ratio": self.ratios[-1]}

    def csv_rows(self):
        yield ("step", "mean_radius", "diagonal_axis_ratio")
        for t, (r, q) in enumerate(zip(self.mean_radius, self.ratios)):
            yield (t, repr(r), repr(q))


def _directions(n):
    axes = np.vstack([np.eye(n), -np.eye(n)])
    corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * n)).reshape(n, -1).T
    return corners / np.sqrt(n), axes


def diagonal_axis_ratio(p, cone_deg=10.0) -> float:
    """Mean distance from the origin of vertices near diagonal vs axis directions.

    NaN when either set of cones is empty (e.g. after the shape collapses).
    """
    diag, axes = _directions(p.shape[1])
    r = row_norms(p)
    u = p / np.where(r > 0, r, 1.0)[:, None]
    cos_lim = np.cos(np.radians(cone_deg))
    in_diag = np.any(u @ diag.T >= cos_lim, axis=1)
    in_axis = np.any(u @ axes.T >= cos_lim, axis=1)
    if not in_diag.any() or not in_axis.any():
        return float("nan")
    return float(r[in_diag].mean() / r[in_axis].mean())


def anisotropy_track(optimizer, mesh: TriMesh, steps, hyper: Hyper | None = None, cone_deg=10.0):
    """Track the diagonal/axis radius ratio while the Laplacian shrinks ``mesh``."""
    hyper = hyper or Hyper()
    energy = make_energy("laplacian", mesh)
    traj = run(optimizer, hyper, energy, mesh.vertices, steps)
    ratios = [diagonal_axis_ratio(p, cone_deg) for p in traj.params]
    radii = [float(row_norms(p).mean()) for p in traj.params]
    return AnisotropyReport(optimizer, ratios, radii, cone_deg)


@dataclass
class GradcheckResult:
    energy: str
    h: float
    max_error: float
    worst: tuple  # (probe, row, col)
    per_probe: list
    failed_probes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"energy": self.energy, "h": self.h, "max_error": self.max_error,
                "worst_index": list(self.worst), "per_probe": self.per_probe,
                "failed_probes": self.failed_probes}


def finite_difference(f, p, h):
    """Central-difference gradient of scalar ``f`` at ``p``."""
    g = np.zeros_like(p)
    q = p.copy()
    for idx in np.ndindex(p.shape):
        x = q[idx]
        q[idx] = x + h
        fp = f(q)
        q[idx] = x - h
        fm = f(q)
        q[idx] = x
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def gradient_error(analytic, numeric) -> np.ndarray:
    """Per-entry error relative to the gradient's scale.

    Each entry's difference is divided by ``max(|a_i|, |n_i|, max|a|)`` so
    that near-zero entries are not judged against their own tiny magnitude.
    """
    scale = max(float(np.max(np.abs(analytic))), 1e-300)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), scale)
    return np.abs(analytic - numeric) / denom


def gradcheck(energy_id, mesh: TriMesh, points=20, h=None, seed=0, scale=0.01):
    """Compare analytic gradients with central differences at random probes.

    Probes are the experiment's starting shape plus Gaussian noise of std
    ``scale``. A probe where the energy fails is recorded, not raised.
    """
    h = DEFAULT_FD_STEP.get(energy_id, 1e-6) if h is None else h
    energy = make_energy(energy_id, mesh)
    base = initial_params(energy_id, mesh)
    rng = np.random.default_rng(seed)
    worst, worst_idx, per_probe, failed = 0.0, (-1, -1, -1), [], []
    for k in range(points):
        p = base + scale * rng.standard_normal(base.shape)
        try:
            err = gradient_error(energy.gradient(p), finite_difference(energy.value, p, h))
        except Exception as exc:
            failed.append({"probe": k, "error": str(exc)})
            per_probe.append(None)
            continue
        i, j = np.unravel_index(int(np.argmax(err)), err.shape)
        per_probe.append(float(err[i, j]))
        if err[i, j] > worst or worst_idx[0] < 0:
            worst, worst_idx = float(err[i, j]), (k, int(i), int(j))
    return GradcheckResult(energy_id, h, worst, worst_idx, per_probe, failed)


@dataclass
class SpreadReport:
    optimizer: str
    energy: str
    angles: list
    losses: np.ndarray  # (rotations, steps + 1)

    @property
    def spread(self) -> np.ndarray:
        return self.losses.max(axis=0) - self.losses.min(axis=0)

    @property
    def normalized(self) -> np.ndarray:
        """Spread divided by 1 + the unrotated run's loss."""
        return self.spread / (1.0 + np.abs(self.losses[0]))

    def to_dict(self) -> dict:
        return {"optimizer": self.optimizer, "energy": self.energy,
                "rotations": len(self.angles), "angles_rad": self.angles,
                "max_spread": float(self.spread.max()),
                "max_normalized_spread": float(self.normalized.max()),
                "final_losses": self.losses[:, -1].tolist()}

    def csv_rows(self):
        yield ("step", "spread", "normalized_spread")
        for t, (s, q) in enumerate(zip(self.spread, self.normalized)):
            yield (t, repr(float(s)), repr(float(q)))

    def curve_rows(self):
        yield ("step",) + tuple(f"rot{k}" for k in range(len(self.angles)))
        for t in range(self.losses.shape[1]):
            yield (t,) + tuple(repr(float(x)) for x in self.losses[:, t])


def rotated_loss_spread(optimizer, energy_id, mesh: TriMesh, rotations=16, steps=200,
                        hyper: Hyper | None = None):
    """Loss curves from the start shape rotated by ``2 pi k / rotations``."""
    if rotations < 1:
        raise ValueError("rotations must be >= 1")
    hyper = hyper or Hyper()
    energy = make_energy(energy_id, mesh)
    p0 = initial_params(energy_id, mesh)
    if p0.shape[1] != 2:
        raise ValueError("rotated loss spread is defined for 2-D problems")
    angles = [2.0 * np.pi * k / rotations for k in range(rotations)]
    curves = []
    for k, phi in enumerate(angles):
        start = p0 if k == 0 else apply_rotation(Rotation.from_angle(phi), p0)
        curves.append(run(optimizer, hyper, energy, start, steps, keep_params=False).losses)
    return SpreadReport(optimizer, energy_id, angles, np.array(curves))

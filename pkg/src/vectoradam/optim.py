"""Gradient descent, Adam, VectorAdam and the infinity-norm VectorAdam.

Every step function is pure: it takes parameters, gradients and the current
state and returns new parameters and the successor state. Nothing is updated
in place, so a trajectory can be replayed or forked from any saved state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import ParamMatrix, as_param_matrix, row_norms

OPTIMIZERS = ("gd", "adam", "vectoradam", "vectoradam-inf")


class NonFiniteGradientError(ValueError):
    """Raised when a gradient contains NaN or Inf entries."""

    def __init__(self, row: int):
        super().__init__(f"non-finite gradient in row {row}")
        self.row = row


class EnergyEvaluationError(RuntimeError):
    """An energy failed during an optimization run; carries the step index."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"energy evaluation failed at step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass(frozen=True)
class Hyper:
    alpha: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 <= b < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {b}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class GDState:
    t: int = 0

    def moment_count(self) -> int:
        return 0


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0)

    def moment_count(self) -> int:
        return self.m.size + self.v.size


@dataclass(frozen=True)
class VectorAdamState:
    m: np.ndarray
    v: np.ndarray  # (m, 1): one second moment per vector
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "VectorAdamState":
        rows, _ = shape
        return cls(np.zeros(shape), np.zeros((rows, 1)), 0)

    def moment_count(self) -> int:
        return self.m.size + self.v.size


@dataclass(frozen=True)
class InfVectorAdamState:
    m: np.ndarray
    v: float = 0.0
    t: int = 0

    @classmethod
    def zeros(cls, shape) -> "InfVectorAdamState":
        return cls(np.zeros(shape), 0.0, 0)

    def moment_count(self) -> int:
        return self.m.size + 1


def _check(p, g):
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: params {p.shape} vs gradient {g.shape}")
    bad = ~np.isfinite(g)
    if bad.any():
        raise NonFiniteGradientError(int(np.argwhere(bad)[0, 0]))
    return p, g


def gd_step(p: ParamMatrix, g: ParamMatrix, alpha: float) -> ParamMatrix:
    p, g = _check(p, g)
    return p - alpha * g


def adam_step(p, g, s: AdamState, h: Hyper = Hyper()):
    """One per-scalar Adam update; epsilon is added outside the square root."""
    p, g = _check(p, g)
    if s.m.shape != p.shape:
        raise ValueError(f"state shape {s.m.shape} does not match params {p.shape}")
    t = s.t + 1
    m = h.beta1 * s.m + (1 - h.beta1) * g
    v = h.beta2 * s.v + (1 - h.beta2) * (g * g)
    m_hat = m / (1 - h.beta1 ** t)
    v_hat = v / (1 - h.beta2 ** t)
    p_new = p - h.alpha * m_hat / (np.sqrt(v_hat) + h.epsilon)
    return p_new, AdamState(m, v, t)


def vector_adam_step(p, g, s: VectorAdamState, h: Hyper = Hyper()):
    """One VectorAdam update: the second moment tracks squared row norms."""
    p, g = _check(p, g)
    if s.m.shape != p.shape or s.v.shape != (p.shape[0], 1):
        raise ValueError(f"state shapes {s.m.shape}/{s.v.shape} do not match params {p.shape}")
    t = s.t + 1
    sq = np.einsum("ij,ij->i", g, g)[:, None]
    m = h.beta1 * s.m + (1 - h.beta1) * g
    v = h.beta2 * s.v + (1 - h.beta2) * sq
    m_hat = m / (1 - h.beta1 ** t)
    v_hat = v / (1 - h.beta2 ** t)
    p_new = p - h.alpha * m_hat / (np.sqrt(v_hat) + h.epsilon)
    return p_new, VectorAdamState(m, v, t)


def vector_adam_inf_step(p, g, s: InfVectorAdamState, h: Hyper = Hyper()):
    """VectorAdam with one shared second moment: the EMA of max_i |g_i|^2.

    The maximum is taken over the current gradient before it enters the
    moving average.
    """
    p, g = _check(p, g)
    if s.m.shape != p.shape:
        raise ValueError(f"state shape {s.m.shape} does not match params {p.shape}")
    t = s.t + 1
    peak = float(np.max(row_norms(g))) if g.size else 0.0
    m = h.beta1 * s.m + (1 - h.beta1) * g
    v = h.beta2 * s.v + (1 - h.beta2) * peak * peak
    m_hat = m / (1 - h.beta1 ** t)
    v_hat = v / (1 - h.beta2 ** t)
    p_new = p - h.alpha * m_hat / (np.sqrt(v_hat) + h.epsilon)
    return p_new, InfVectorAdamState(m, v, t)


def init_state(optimizer: str, shape):
    if optimizer == "gd":
        return GDState()
    if optimizer == "adam":
        return AdamState.zeros(shape)
    if optimizer == "vectoradam":
        return VectorAdamState.zeros(shape)
    if optimizer == "vectoradam-inf":
        return InfVectorAdamState.zeros(shape)
    raise ValueError(f"unknown optimizer {optimizer!r}; expected one of {OPTIMIZERS}")


def step(optimizer: str, p, g, state, h: Hyper = Hyper()):
    """Dispatch one step by optimizer id; returns ``(params, state)``."""
    if optimizer == "gd":
        return gd_step(p, g, h.alpha), GDState(state.t + 1)
    if optimizer == "adam":
        return adam_step(p, g, state, h)
    if optimizer == "vectoradam":
        return vector_adam_step(p, g, state, h)
    if optimizer == "vectoradam-inf":
        return vector_adam_inf_step(p, g, state, h)
    raise ValueError(f"unknown optimizer {optimizer!r}; expected one of {OPTIMIZERS}")


@dataclass
class Trajectory:
    """Snapshots ``params[0..steps]`` and the loss at each of them.

    ``losses[t]`` is the energy of ``params[t]``, so ``losses[:-1]`` are the
    values seen before each step.
    """

    optimizer: str
    hyper: Hyper
    params: list = field(default_factory=list)
    losses: list = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.params[-1]


def run(optimizer: str, hyper: Hyper, energy, p0, steps: int, keep_params: bool = True) -> Trajectory:
    """Run ``steps`` iterations of ``optimizer`` on ``energy`` from ``p0``.

    With ``keep_params=False`` only the first and last snapshots are kept.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    p = as_param_matrix(p0, copy=True)
    if hasattr(energy, "shape") and tuple(energy.shape) != p.shape:
        raise ValueError(f"energy expects shape {energy.shape}, got {p.shape}")
    state = init_state(optimizer, p.shape)
    traj = Trajectory(optimizer, hyper, [p], [])
    for t in range(steps):
        try:
            loss, g = energy.value_and_gradient(p)
        except Exception as exc:
            raise EnergyEvaluationError(t, exc) from exc
        traj.losses.append(loss)
        p, state = step(optimizer, p, g, state, hyper)
        if keep_params:
            traj.params.append(p)
    try:
        traj.losses.append(energy.value(p))
    except Exception as exc:
        raise EnergyEvaluationError(steps, exc) from exc
    if not keep_params:
        traj.params.append(p)
    return traj

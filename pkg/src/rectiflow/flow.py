"""Straight-path transport: interpolation, the chord-regression loss, the
analytic chord oracle, and the Euler / mean-value samplers.

Everything here is plain numpy and pure in its inputs; the learned network
enters only through the ``field(z, t, cond) -> velocity`` callable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, NumericError, ShapeMismatchError, SingularTimeError

EULER = "euler"
MEANVALUE = "meanvalue"

# field(z, t, cond) -> velocity with z.shape
VelocityField = Callable[[np.ndarray, float, object], np.ndarray]


@dataclass(frozen=True)
class SamplePair:
    """Endpoints of one transport path: z0 from the noise source, z1 clean."""

    z0: np.ndarray
    z1: np.ndarray

    def __post_init__(self):
        if self.z0.shape != self.z1.shape:
            raise ShapeMismatchError(
                f"pair endpoints disagree: {self.z0.shape} vs {self.z1.shape}")
        if not (np.isfinite(self.z0).all() and np.isfinite(self.z1).all()):
            raise NumericError("non-finite entries in sample pair")


@dataclass(frozen=True)
class FlowState:
    zt: np.ndarray
    t: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise DomainError(f"t={self.t} outside [0, 1]")


@dataclass
class SamplerConfig:
    """Inference schedule: `mode` in {euler, meanvalue}, N uniform segments,
    midpoint index k (meanvalue only)."""

    mode: str = MEANVALUE
    n: int = 5
    k: int = 3
    jump_from_origin: bool = False

    def __post_init__(self):
        if self.mode not in (EULER, MEANVALUE):
            raise DomainError(f"unknown sampler mode {self.mode!r}")
        if self.n < 1:
            raise DomainError(f"N must be >= 1, got {self.n}")
        if not 0 <= self.k < self.n:
            raise DomainError(f"k={self.k} outside [0, N-1] for N={self.n}")


def interpolate(pair: SamplePair, t: float) -> FlowState:
    """Point on the straight line between the endpoints: t*z1 + (1-t)*z0.

    Computed in double precision so the chord oracle stays exact even close
    to t=1, where (z1-zt)/(1-t) amplifies rounding error.
    """
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t={t} outside [0, 1]")
    t64 = np.float64(t)
    zt = t64 * pair.z1 + (np.float64(1.0) - t64) * pair.z0
    return FlowState(zt=zt, t=float(t))


def flow_loss(pair: SamplePair, v_pred: np.ndarray) -> float:
    """Mean squared error between the predicted velocity and the chord z1-z0."""
    if v_pred.shape != pair.z0.shape:
        raise ShapeMismatchError(
            f"prediction shape {v_pred.shape} != pair shape {pair.z0.shape}")
    resid = pair.z1 - pair.z0 - v_pred
    return float(np.mean(resid * resid))


def oracle_velocity(z1: np.ndarray, state: FlowState, t_eps: float = 1e-6) -> np.ndarray:
    """Exact chord velocity (z1 - zt)/(1 - t); equals z1 - z0 on-path."""
    if state.t >= 1.0 - t_eps:
        raise SingularTimeError(f"t={state.t} within {t_eps} of 1")
    if z1.shape != state.zt.shape:
        raise ShapeMismatchError(
            f"target shape {z1.shape} != state shape {state.zt.shape}")
    return (z1 - state.zt) / np.float64(1.0 - state.t)


def _step_velocity(field, z, t, cond, step_idx):
    v = field(z, t, cond)
    if np.asarray(v).shape != np.asarray(z).shape:
        raise ShapeMismatchError(
            f"field output shape {np.asarray(v).shape} != state shape {np.asarray(z).shape}")
    if not np.all(np.isfinite(v)):
        raise NumericError(f"non-finite velocity at step {step_idx} (t={t})")
    return v


def euler_sample(field: VelocityField, z0: np.ndarray, cond, cfg: SamplerConfig) -> np.ndarray:
    """Forward Euler over N uniform segments; exactly N field evaluations."""
    if cfg.mode != EULER:
        raise DomainError(f"euler_sample called with mode {cfg.mode!r}")
    n = cfg.n
    dt = 1.0 / n
    z = np.array(z0, copy=True)
    for i in range(n):
        v = _step_velocity(field, z, i * dt, cond, i)
        z = z + dt * v
    return z


def meanvalue_sample(field: VelocityField, z0: np.ndarray, cond, cfg: SamplerConfig) -> np.ndarray:
    """k short Euler steps to the midpoint, then one long jump along the
    midpoint velocity; exactly k+1 field evaluations."""
    if cfg.mode != MEANVALUE:
        raise DomainError(f"meanvalue_sample called with mode {cfg.mode!r}")
    n, k = cfg.n, cfg.k
    dt = 1.0 / n
    z = np.array(z0, copy=True)
    for i in range(k):
        v = _step_velocity(field, z, i * dt, cond, i)
        z = z + dt * v
    t_mid = k * dt
    v_mid = _step_velocity(field, z, t_mid, cond, k)
    if cfg.jump_from_origin:
        return np.asarray(z0) + v_mid
    return z + (1.0 - t_mid) * v_mid


def sample(field: VelocityField, z0: np.ndarray, cond, cfg: SamplerConfig) -> np.ndarray:
    """Dispatch on cfg.mode."""
    if cfg.mode == EULER:
        return euler_sample(field, z0, cond, cfg)
    return meanvalue_sample(field, z0, cond, cfg)


def sweep_midpoint(field: VelocityField,
                   eval_set: Sequence[tuple],
                   n: int,
                   metric: Callable[[np.ndarray, np.ndarray], float]) -> int:
    """Pick the midpoint index k in [0, N-1] maximizing the mean metric of
    the mean-value sample against each reference; ties go to the smallest k
    (fewest evaluations). eval_set holds (z0, cond, reference) triples."""
    if len(eval_set) == 0:
        raise DomainError("sweep_midpoint needs a non-empty eval set")
    best_k, best_score = 0, -np.inf
    for k in range(n):
        cfg = SamplerConfig(mode=MEANVALUE, n=n, k=k)
        scores = [metric(meanvalue_sample(field, z0, cond, cfg), ref)
                  for z0, cond, ref in eval_set]
        score = float(np.mean(scores))
        if score > best_score:
            best_k, best_score = k, score
    return best_k


def sweep_midpoint_scores(field, eval_set, n, metric):
    """Per-k mean metric values, same protocol as sweep_midpoint."""
    if len(eval_set) == 0:
        raise DomainError("sweep_midpoint needs a non-empty eval set")
    out = []
    for k in range(n):
        cfg = SamplerConfig(mode=MEANVALUE, n=n, k=k)
        scores = [metric(meanvalue_sample(field, z0, cond, cfg), ref)
                  for z0, cond, ref in eval_set]
        out.append(float(np.mean(scores)))
    return out

"""Reference mini-batch Adam (bias-corrected, eps under the square root) and SGD with momentum."""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .problems import (
    DIVERGENCE_CUTOFF,
    PartitionSpec,
    PerSampleProblem,
    batch_loss_grad,
)

TRAJECTORY_SCHEMA = "optbias.trajectory.v1"


class Algo(enum.Enum):
    ADAM = "adam"
    SGDM = "sgdm"


@dataclass(frozen=True)
class HyperParams:
    """Step size, the two Adam averaging factors, eps, and the SGDM momentum factor."""

    eta: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    beta: float = 0.9
    horizon: int | None = None

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        for name in ("beta1", "beta2", "beta"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    def with_eta(self, eta: float) -> "HyperParams":
        return replace(self, eta=eta)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("step counter must be nonnegative")
        if np.any(self.v < 0):
            raise ValueError("second-moment accumulator must be elementwise nonnegative")

    @classmethod
    def zeros(cls, dim: int) -> "AdamState":
        return cls(m=np.zeros(dim), v=np.zeros(dim), t=0)


def adam_step(
    state: AdamState, grad: np.ndarray, hp: HyperParams
) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected update; returns the new state and the parameter delta.

    The denominator is sqrt(v_hat + eps): eps sits inside the square root.
    """
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise ValueError("gradient contains nonfinite entries")
    t_next = state.t + 1
    m = hp.beta1 * state.m + (1.0 - hp.beta1) * grad
    v = hp.beta2 * state.v + (1.0 - hp.beta2) * grad**2
    m_hat = m / (1.0 - hp.beta1**t_next)
    v_hat = v / (1.0 - hp.beta2**t_next)
    delta = -hp.eta * m_hat / np.sqrt(v_hat + hp.eps)
    return AdamState(m=m, v=v, t=t_next), delta


def sgdm_step(
    velocity: np.ndarray, grad: np.ndarray, hp: HyperParams
) -> tuple[np.ndarray, np.ndarray]:
    """Heavy-ball accumulation: velocity' = beta * velocity + grad, delta = -eta * velocity'."""
    grad = np.asarray(grad, dtype=float)
    velocity = np.asarray(velocity, dtype=float)
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(velocity))):
        raise ValueError("nonfinite gradient or velocity")
    new_velocity = hp.beta * velocity + grad
    return new_velocity, -hp.eta * new_velocity


@dataclass
class Trajectory:
    """Iterates theta_0..theta_T plus the run description that produced them."""

    points: np.ndarray
    algo: Algo
    hp: HyperParams
    m: int
    b: int
    perm: tuple[int, ...] | None = None
    diverged: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2:
            raise ValueError("points must be a (T+1, dim) array")

    @property
    def n_steps(self) -> int:
        return self.points.shape[0] - 1

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {TRAJECTORY_SCHEMA}\n")
            writer = csv.writer(fh)
            writer.writerow(["t"] + [f"theta_{i + 1}" for i in range(self.dim)])
            for t, row in enumerate(self.points):
                writer.writerow([t] + [repr(float(x)) for x in row])

    def to_json_dict(self) -> dict:
        return {
            "schema": TRAJECTORY_SCHEMA,
            "algo": self.algo.value,
            "eta": self.hp.eta,
            "beta1": self.hp.beta1,
            "beta2": self.hp.beta2,
            "eps": self.hp.eps,
            "beta": self.hp.beta,
            "m": self.m,
            "b": self.b,
            "diverged": self.diverged,
            "points": [[float(x) for x in row] for row in self.points],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _resolve_steps(partition: PartitionSpec, hp: HyperParams, n_steps: int | None) -> int:
    steps = n_steps if n_steps is not None else (hp.horizon or partition.m)
    if steps < 0:
        raise ValueError("step count must be nonnegative")
    if steps > partition.m:
        raise ValueError(
            f"single-epoch run allows at most m={partition.m} steps, requested {steps}"
        )
    return steps


def run_epoch(
    problem: PerSampleProblem,
    partition: PartitionSpec,
    hp: HyperParams,
    theta0: np.ndarray,
    algo: Algo,
    n_steps: int | None = None,
    n_epochs: int = 1,
    rng: np.random.Generator | None = None,
) -> Trajectory:
    """Run mini-batch steps through the partition in order.

    A single epoch takes at most m steps.  With n_epochs > 1 a fresh uniform
    permutation is drawn per epoch from rng (required in that mode).
    """
    theta = np.asarray(theta0, dtype=float).copy()
    if theta.shape != (problem.dim,):
        raise ValueError(f"theta0 has shape {theta.shape}, expected ({problem.dim},)")
    if n_epochs < 1:
        raise ValueError("n_epochs must be >= 1")
    if n_epochs > 1 and rng is None:
        raise ValueError("multi-epoch mode needs an rng for fresh permutations")

    points = [theta.copy()]
    diverged = False
    adam_state = AdamState.zeros(problem.dim)
    velocity = np.zeros(problem.dim)

    current = partition
    for epoch in range(n_epochs):
        if epoch > 0:
            current = PartitionSpec.random(partition.m, partition.b, rng)
        steps = _resolve_steps(current, hp, n_steps) if epoch == 0 else current.m
        for k in range(steps):
            _, grad = batch_loss_grad(problem, current, k, theta)
            if algo is Algo.ADAM:
                adam_state, delta = adam_step(adam_state, grad, hp)
            else:
                velocity, delta = sgdm_step(velocity, grad, hp)
            theta = theta + delta
            points.append(theta.copy())
            if np.max(np.abs(theta)) > DIVERGENCE_CUTOFF or not np.all(np.isfinite(theta)):
                diverged = True
                break
        if diverged:
            break

    return Trajectory(
        points=np.asarray(points),
        algo=algo,
        hp=hp,
        m=partition.m,
        b=partition.b,
        perm=partition.perm,
        diverged=diverged,
        meta={"n_epochs": n_epochs},
    )

"""Gradient-noise scale, the batch-size regime ratio, and the momentum recommendation."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .optimizers import Trajectory
from .problems import (
    DEGENERATE_GRAD_TOL,
    DegenerateGradientError,
    PerSampleProblem,
    per_sample_tables,
)

REGIME_SCHEMA = "optbias.regime.v1"


class NoiseScaleMethod(enum.Enum):
    EXACT_PER_SAMPLE = "exact_per_sample"
    SAMPLED_GRADIENTS = "sampled_gradients"


@dataclass
class NoiseScaleEstimate:
    """trace of the gradient covariance divided by the squared gradient norm."""

    b_simple: float
    at_point: np.ndarray
    method: NoiseScaleMethod


def b_simple(
    problem: PerSampleProblem,
    theta: np.ndarray,
    method: NoiseScaleMethod = NoiseScaleMethod.EXACT_PER_SAMPLE,
    sample_size: int | None = None,
    seed: int | None = None,
) -> NoiseScaleEstimate:
    """Noise-to-signal scalar at one point; undefined near stationary points."""
    theta = np.asarray(theta, dtype=float)
    _, grads, _ = per_sample_tables(problem, theta, need_hess=False)
    g = grads.mean(axis=0)
    gnorm_sq = float(g @ g)
    if gnorm_sq <= DEGENERATE_GRAD_TOL**2:
        raise DegenerateGradientError(
            "gradient norm is below the degeneracy tolerance; the noise scale is undefined"
        )
    dev = grads - g
    if method is NoiseScaleMethod.SAMPLED_GRADIENTS:
        if sample_size is None or seed is None:
            raise ValueError("sampled estimation needs sample_size and seed")
        rng = np.random.default_rng(seed)
        pick = rng.choice(problem.n_samples, size=min(sample_size, problem.n_samples), replace=False)
        dev = dev[pick]
    trace_sigma = float(np.mean(np.sum(dev**2, axis=1)))
    return NoiseScaleEstimate(b_simple=trace_sigma / gnorm_sq, at_point=theta, method=method)


def lambda_ratio(n_samples: int, batch_size: float, noise_scale: float) -> float:
    """((N/b - 1)/(N - 1)) * B: decreasing in b, equal to B at b=1 and 0 at b=N.

    Pure formula: b does not have to divide N here.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    if not 1 <= batch_size <= n_samples:
        raise ValueError("batch size must lie in [1, N]")
    if noise_scale < 0:
        raise ValueError("noise scale must be nonnegative")
    return (n_samples / batch_size - 1.0) / (n_samples - 1.0) * noise_scale


def batch_thresholds(n_samples: int, noise_scale: float) -> tuple[float, float]:
    """Batch sizes where the regime ratio crosses 1 and 0.5 respectively."""
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    if noise_scale <= 0:
        raise ValueError("noise scale must be positive")
    n, bs = float(n_samples), float(noise_scale)
    small = n * bs / (n + bs - 1.0)
    large = 2.0 * n * bs / (n + 2.0 * bs - 1.0)
    return small, large


class Regime(enum.Enum):
    SMALL_BATCH = "small_batch"
    TRANSITION = "transition"
    LARGE_BATCH = "large_batch"


@dataclass
class RegimeAdvice:
    lam: float
    small_batch_threshold: float
    large_batch_threshold: float
    regime: Regime
    recommendation: str
    n_samples: int
    batch_size: float
    noise_scale: float

    def to_json_dict(self) -> dict:
        return {
            "schema": REGIME_SCHEMA,
            "lambda": self.lam,
            "small_batch_threshold": self.small_batch_threshold,
            "large_batch_threshold": self.large_batch_threshold,
            "regime": self.regime.value,
            "recommendation": self.recommendation,
            "n_samples": self.n_samples,
            "batch_size": self.batch_size,
            "b_simple": self.noise_scale,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


_SMALL_BATCH_TEXT = (
    "Noise-dominated regime: keep the first averaging factor low and the second high; "
    "(beta1, beta2) = (0.9, 0.999) is a reasonable starting point. Directional advice only."
)
_LARGE_BATCH_TEXT = (
    "Low-noise regime: set beta1 = beta2 and push them as high as training stays "
    "convergent, e.g. 0.999. Directional advice only."
)
_TRANSITION_TEXT = (
    "Between the two thresholds no monotone direction is claimed; sweep beta2 locally "
    "around the batch sizes printed above."
)


def recommend(n_samples: int, batch_size: float, noise_scale: float) -> RegimeAdvice:
    """Classify the batch size against the two regime thresholds and phrase advice."""
    lam = lambda_ratio(n_samples, batch_size, noise_scale)
    small, large = batch_thresholds(n_samples, noise_scale)
    if lam > 1.0:
        regime, text = Regime.SMALL_BATCH, _SMALL_BATCH_TEXT
    elif lam < 0.5:
        regime, text = Regime.LARGE_BATCH, _LARGE_BATCH_TEXT
    else:
        regime, text = Regime.TRANSITION, _TRANSITION_TEXT
    return RegimeAdvice(
        lam=lam,
        small_batch_threshold=small,
        large_batch_threshold=large,
        regime=regime,
        recommendation=text,
        n_samples=n_samples,
        batch_size=batch_size,
        noise_scale=noise_scale,
    )


@dataclass
class TracePoint:
    t: int
    estimate: NoiseScaleEstimate | None
    flagged: bool


def b_simple_trace(
    problem: PerSampleProblem, trajectory: Trajectory, every: int = 1
) -> list[TracePoint]:
    """Noise scale along a trajectory; degenerate-gradient points are flagged and skipped."""
    if every < 1:
        raise ValueError("every must be >= 1")
    out: list[TracePoint] = []
    for t in range(0, trajectory.points.shape[0], every):
        theta = trajectory.points[t]
        try:
            est = b_simple(problem, theta)
        except DegenerateGradientError:
            out.append(TracePoint(t=t, estimate=None, flagged=True))
        else:
            out.append(TracePoint(t=t, estimate=est, flagged=False))
    return out

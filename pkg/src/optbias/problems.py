"""Per-sample objective families with analytic derivatives and mini-batch noise statistics.

A problem is a family of N smooth per-sample losses over a shared parameter
vector.  Everything downstream (optimizers, correction terms, permutation
expectations) is driven by three per-sample oracles: value, gradient and
Hessian.  Derivatives are analytic for every built-in family; finite
differences exist only in the test suite as an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEGENERATE_GRAD_TOL = 1e-10
DIVERGENCE_CUTOFF = 1e8


class DegenerateGradientError(ValueError):
    """A full-batch gradient coordinate is too close to zero for 1/|g_j| terms."""


def degenerate_mask(grad: np.ndarray, tol: float = DEGENERATE_GRAD_TOL) -> np.ndarray:
    return np.abs(np.asarray(grad, dtype=float)) < tol


def require_nondegenerate(grad: np.ndarray, context: str = "") -> None:
    mask = degenerate_mask(grad)
    if mask.any():
        coords = np.flatnonzero(mask).tolist()
        where = f" in {context}" if context else ""
        raise DegenerateGradientError(
            f"gradient coordinates {coords} have |g_j| < {DEGENERATE_GRAD_TOL:g}{where}; "
            "move the evaluation point away from stationary coordinates"
        )


# ---------------------------------------------------------------------------
# Problem families
# ---------------------------------------------------------------------------


class PerSampleProblem:
    """Base class: N per-sample losses with analytic value/grad/Hessian."""

    family_id: str = "abstract"
    n_samples: int
    dim: int

    def per_sample_value(self, p: int, theta: np.ndarray) -> float:
        raise NotImplementedError

    def per_sample_grad(self, p: int, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def per_sample_hess(self, p: int, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check_theta(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(
                f"parameter vector has shape {theta.shape}, expected ({self.dim},)"
            )
        return theta


class ShiftedQuadratic(PerSampleProblem):
    """Per-sample loss 0.5 * ||theta - shift_p||^2.

    Identical unit Hessians, so all noise lives in the gradients and the
    per-sample gradient deviations do not depend on theta.
    """

    family_id = "shifted_quadratic"

    def __init__(self, shifts: np.ndarray):
        shifts = np.atleast_2d(np.asarray(shifts, dtype=float))
        if shifts.ndim != 2:
            raise ValueError("shifts must be an (N, dim) array")
        self.shifts = shifts
        self.n_samples, self.dim = shifts.shape

    @classmethod
    def from_values(cls, values) -> "ShiftedQuadratic":
        """One-dimensional family from a flat list of shifts."""
        return cls(np.asarray(values, dtype=float).reshape(-1, 1))

    @classmethod
    def generate(cls, n_samples: int, dim: int, seed: int, spread: float = 2.0) -> "ShiftedQuadratic":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(scale=spread, size=(n_samples, dim)))

    def per_sample_value(self, p, theta):
        theta = self._check_theta(theta)
        diff = theta - self.shifts[p]
        return 0.5 * float(diff @ diff)

    def per_sample_grad(self, p, theta):
        theta = self._check_theta(theta)
        return theta - self.shifts[p]

    def per_sample_hess(self, p, theta):
        self._check_theta(theta)
        return np.eye(self.dim)


class RandomPSDQuadratic(PerSampleProblem):
    """Per-sample loss 0.5 * (theta - a_p)' H_p (theta - a_p) with random PSD H_p.

    Per-sample curvature varies, so Hessian noise and the gradient of the
    covariance diagonal are both nonzero.
    """

    family_id = "random_psd_quadratic"

    def __init__(self, mats: np.ndarray, shifts: np.ndarray):
        mats = np.asarray(mats, dtype=float)
        shifts = np.asarray(shifts, dtype=float)
        if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
            raise ValueError("mats must be an (N, dim, dim) array")
        if shifts.shape != mats.shape[:2]:
            raise ValueError("shifts must be an (N, dim) array matching mats")
        self.mats = mats
        self.shifts = shifts
        self.n_samples, self.dim = shifts.shape

    @classmethod
    def generate(
        cls,
        n_samples: int,
        dim: int,
        seed: int,
        ridge: float = 0.1,
        spread: float = 1.0,
    ) -> "RandomPSDQuadratic":
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(n_samples, dim, dim))
        mats = np.einsum("pki,pkj->pij", a, a) / dim + ridge * np.eye(dim)
        shifts = rng.normal(scale=spread, size=(n_samples, dim))
        return cls(mats, shifts)

    def per_sample_value(self, p, theta):
        theta = self._check_theta(theta)
        diff = theta - self.shifts[p]
        return 0.5 * float(diff @ self.mats[p] @ diff)

    def per_sample_grad(self, p, theta):
        theta = self._check_theta(theta)
        return self.mats[p] @ (theta - self.shifts[p])

    def per_sample_hess(self, p, theta):
        self._check_theta(theta)
        return self.mats[p].copy()


def _expit(u: float) -> float:
    if u >= 0.0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


class Logistic2D(PerSampleProblem):
    """Two-dimensional logistic regression losses log(1 + exp(-y_p x_p . theta))."""

    family_id = "logistic_2d"

    def __init__(self, xs: np.ndarray, ys: np.ndarray):
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        if xs.ndim != 2 or xs.shape[1] != 2:
            raise ValueError("xs must be an (N, 2) array")
        if ys.shape != (xs.shape[0],) or not np.all(np.abs(ys) == 1.0):
            raise ValueError("ys must hold labels +/-1, one per sample")
        self.xs = xs
        self.ys = ys
        self.n_samples = xs.shape[0]
        self.dim = 2

    @classmethod
    def generate(cls, n_samples: int, seed: int, flip_prob: float = 0.1) -> "Logistic2D":
        rng = np.random.default_rng(seed)
        xs = rng.normal(size=(n_samples, 2))
        w_true = rng.normal(size=2)
        ys = np.sign(xs @ w_true)
        ys[ys == 0] = 1.0
        flips = rng.random(n_samples) < flip_prob
        ys[flips] *= -1.0
        return cls(xs, ys)

    def _margin(self, p, theta):
        return -self.ys[p] * float(self.xs[p] @ theta)

    def per_sample_value(self, p, theta):
        theta = self._check_theta(theta)
        # log(1 + exp(u)) evaluated stably
        return float(np.logaddexp(0.0, self._margin(p, theta)))

    def per_sample_grad(self, p, theta):
        theta = self._check_theta(theta)
        sig = _expit(self._margin(p, theta))
        return -self.ys[p] * sig * self.xs[p]

    def per_sample_hess(self, p, theta):
        theta = self._check_theta(theta)
        sig = _expit(self._margin(p, theta))
        return sig * (1.0 - sig) * np.outer(self.xs[p], self.xs[p])


class TeacherStudentMLP(PerSampleProblem):
    """Squared-error regression of a one-hidden-layer tanh network on noisy teacher labels.

    Parameter layout: [W1 rows (hidden x in_dim), b1 (hidden), w2 (hidden), b2].
    Gradients and Hessians are assembled analytically from the tanh chain rule,
    which keeps the parameter count small enough for exact full Hessians.
    """

    family_id = "teacher_student_mlp"

    def __init__(self, inputs: np.ndarray, targets: np.ndarray, hidden: int):
        inputs = np.asarray(inputs, dtype=float)
        targets = np.asarray(targets, dtype=float)
        if inputs.ndim != 2:
            raise ValueError("inputs must be an (N, in_dim) array")
        if targets.shape != (inputs.shape[0],):
            raise ValueError("targets must be an (N,) array")
        self.inputs = inputs
        self.targets = targets
        self.hidden = hidden
        self.in_dim = inputs.shape[1]
        self.n_samples = inputs.shape[0]
        self.dim = hidden * self.in_dim + 2 * hidden + 1

    @classmethod
    def generate(
        cls,
        n_samples: int,
        in_dim: int,
        hidden: int,
        seed: int,
        label_noise: float = 0.3,
    ) -> "TeacherStudentMLP":
        train, _ = cls.train_val_pair(n_samples, 0, in_dim, hidden, seed, label_noise)
        return train

    @classmethod
    def train_val_pair(
        cls,
        n_train: int,
        n_val: int,
        in_dim: int,
        hidden: int,
        seed: int,
        label_noise: float = 0.3,
    ) -> tuple["TeacherStudentMLP", "TeacherStudentMLP | None"]:
        """Train and held-out splits labelled by the same random teacher network."""
        rng = np.random.default_rng(seed)
        teacher_hidden = hidden
        tw1 = rng.normal(scale=1.0, size=(teacher_hidden, in_dim))
        tb1 = rng.normal(scale=0.5, size=teacher_hidden)
        tw2 = rng.normal(scale=1.0, size=teacher_hidden)
        tb2 = float(rng.normal(scale=0.5))

        def teacher(x):
            return tw2 @ np.tanh(tw1 @ x + tb1) + tb2

        def draw(n):
            xs = rng.normal(size=(n, in_dim))
            ys = np.array([teacher(x) for x in xs])
            ys += label_noise * rng.normal(size=n)
            return xs, ys

        xs, ys = draw(n_train)
        train = cls(xs, ys, hidden)
        if n_val <= 0:
            return train, None
        xv, yv = draw(n_val)
        return train, cls(xv, yv, hidden)

    def unpack(self, theta):
        h, d = self.hidden, self.in_dim
        w1 = theta[: h * d].reshape(h, d)
        b1 = theta[h * d : h * d + h]
        w2 = theta[h * d + h : h * d + 2 * h]
        b2 = theta[-1]
        return w1, b1, w2, b2

    def init_point(self, seed: int, scale: float = 0.5) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return scale * rng.normal(size=self.dim)

    def _forward(self, p, theta):
        w1, b1, w2, b2 = self.unpack(theta)
        x = self.inputs[p]
        z = w1 @ x + b1
        hdn = np.tanh(z)
        out = float(w2 @ hdn + b2)
        return x, hdn, w2, out

    def per_sample_value(self, p, theta):
        theta = self._check_theta(theta)
        _, _, _, out = self._forward(p, theta)
        return 0.5 * (out - self.targets[p]) ** 2

    def _output_grad(self, x, hdn, w2):
        h, d = self.hidden, self.in_dim
        hprime = 1.0 - hdn**2
        grad = np.empty(self.dim)
        grad[: h * d] = np.outer(w2 * hprime, x).ravel()
        grad[h * d : h * d + h] = w2 * hprime
        grad[h * d + h : h * d + 2 * h] = hdn
        grad[-1] = 1.0
        return grad

    def per_sample_grad(self, p, theta):
        theta = self._check_theta(theta)
        x, hdn, w2, out = self._forward(p, theta)
        return (out - self.targets[p]) * self._output_grad(x, hdn, w2)

    def per_sample_hess(self, p, theta):
        theta = self._check_theta(theta)
        x, hdn, w2, out = self._forward(p, theta)
        h, d = self.hidden, self.in_dim
        resid = out - self.targets[p]
        gout = self._output_grad(x, hdn, w2)
        hess = np.outer(gout, gout)

        # residual times the network's own second derivative
        hprime = 1.0 - hdn**2
        hsecond = -2.0 * hdn * hprime
        xe = np.append(x, 1.0)  # pre-activation inputs including the bias slot
        for j in range(h):
            uidx = list(range(j * d, (j + 1) * d)) + [h * d + j]
            block = resid * w2[j] * hsecond[j] * np.outer(xe, xe)
            hess[np.ix_(uidx, uidx)] += block
            cross = resid * hprime[j] * xe
            w2_idx = h * d + h + j
            hess[uidx, w2_idx] += cross
            hess[w2_idx, uidx] += cross
        return hess


class NoiseScaled(PerSampleProblem):
    """Replaces each per-sample loss by mean + delta * (loss - mean).

    The full-batch loss is untouched while every noise tensor is scaled by
    exactly delta, which makes remainder-order ladders possible.
    """

    def __init__(self, base: PerSampleProblem, delta: float):
        if delta < 0:
            raise ValueError("noise scale delta must be nonnegative")
        self.base = base
        self.delta = float(delta)
        self.n_samples = base.n_samples
        self.dim = base.dim

    @property
    def family_id(self) -> str:  # type: ignore[override]
        return self.base.family_id

    def _mean(self, fn, theta):
        total = fn(0, theta)
        for p in range(1, self.n_samples):
            total = total + fn(p, theta)
        return total / self.n_samples

    def per_sample_value(self, p, theta):
        mean = self._mean(self.base.per_sample_value, theta)
        return mean + self.delta * (self.base.per_sample_value(p, theta) - mean)

    def per_sample_grad(self, p, theta):
        mean = self._mean(self.base.per_sample_grad, theta)
        return mean + self.delta * (self.base.per_sample_grad(p, theta) - mean)

    def per_sample_hess(self, p, theta):
        mean = self._mean(self.base.per_sample_hess, theta)
        return mean + self.delta * (self.base.per_sample_hess(p, theta) - mean)


def scale_noise(problem: PerSampleProblem, delta: float) -> PerSampleProblem:
    """Return the family with noise tensors scaled by delta (delta=1 is the identity)."""
    if delta < 0:
        raise ValueError("noise scale delta must be nonnegative")
    if isinstance(problem, NoiseScaled):
        return NoiseScaled(problem.base, problem.delta * delta)
    return NoiseScaled(problem, delta)


class Replicated(PerSampleProblem):
    """The same sample set repeated `copies` times.

    Keeps the full-batch loss and the empirical covariance fixed while letting
    the number of batches in an epoch grow.
    """

    def __init__(self, base: PerSampleProblem, copies: int):
        if copies < 1:
            raise ValueError("copies must be >= 1")
        self.base = base
        self.copies = copies
        self.n_samples = base.n_samples * copies
        self.dim = base.dim

    @property
    def family_id(self) -> str:  # type: ignore[override]
        return self.base.family_id

    def per_sample_value(self, p, theta):
        return self.base.per_sample_value(p % self.base.n_samples, theta)

    def per_sample_grad(self, p, theta):
        return self.base.per_sample_grad(p % self.base.n_samples, theta)

    def per_sample_hess(self, p, theta):
        return self.base.per_sample_hess(p % self.base.n_samples, theta)


def replicated(problem: PerSampleProblem, copies: int) -> PerSampleProblem:
    return problem if copies == 1 else Replicated(problem, copies)


# ---------------------------------------------------------------------------
# Partitions and aggregate quantities
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PartitionSpec:
    """An epoch layout: m batches of b samples in permutation order (0-based)."""

    m: int
    b: int
    perm: tuple[int, ...]

    def __post_init__(self):
        if self.m < 1 or self.b < 1:
            raise ValueError("batch count and batch size must be positive")
        n = self.m * self.b
        if len(self.perm) != n or sorted(self.perm) != list(range(n)):
            raise ValueError(f"perm must be a permutation of 0..{n - 1}")

    @property
    def n_samples(self) -> int:
        return self.m * self.b

    def batch_indices(self, k: int) -> tuple[int, ...]:
        if not 0 <= k < self.m:
            raise ValueError(f"batch index {k} outside 0..{self.m - 1}")
        return self.perm[k * self.b : (k + 1) * self.b]

    @classmethod
    def identity(cls, m: int, b: int) -> "PartitionSpec":
        return cls(m, b, tuple(range(m * b)))

    @classmethod
    def random(cls, m: int, b: int, rng: np.random.Generator) -> "PartitionSpec":
        return cls(m, b, tuple(int(i) for i in rng.permutation(m * b)))


def _check_partition(problem: PerSampleProblem, partition: PartitionSpec) -> None:
    if partition.n_samples != problem.n_samples:
        raise ValueError(
            f"partition covers {partition.n_samples} samples, "
            f"problem has {problem.n_samples}"
        )


@dataclass
class FullBatch:
    """Full-batch loss value, gradient and Hessian at one point."""

    value: float
    grad: np.ndarray
    hess: np.ndarray

    @property
    def sign(self) -> np.ndarray:
        return np.sign(self.grad)

    def l1_grad_norm_gradient(self) -> np.ndarray:
        """Gradient of ||grad L||_1: component j is sum_i sign(g_i) * hess[i, j]."""
        return np.einsum("ij,i->j", self.hess, self.sign)


@dataclass
class NoiseTensors:
    """Deviation of one mini-batch loss from the full-batch loss, with derivatives."""

    value: float
    grad: np.ndarray
    hess: np.ndarray


@dataclass
class EmpiricalCovariance:
    """Covariance of per-sample gradients plus the gradient of its diagonal.

    grad_sigma_diag[i, j] is the i-th partial derivative of sigma[j, j].
    """

    sigma: np.ndarray
    grad_sigma_diag: np.ndarray


def per_sample_tables(
    problem: PerSampleProblem, theta: np.ndarray, need_hess: bool = True
):
    """Stack per-sample values/gradients/Hessians at one point for reuse."""
    n = problem.n_samples
    values = np.array([problem.per_sample_value(p, theta) for p in range(n)])
    grads = np.stack([problem.per_sample_grad(p, theta) for p in range(n)])
    hesses = None
    if need_hess:
        hesses = np.stack([problem.per_sample_hess(p, theta) for p in range(n)])
    return values, grads, hesses


def full_loss_grad(problem: PerSampleProblem, theta: np.ndarray) -> FullBatch:
    values, grads, hesses = per_sample_tables(problem, theta)
    return FullBatch(
        value=float(values.mean()),
        grad=grads.mean(axis=0),
        hess=hesses.mean(axis=0),
    )


def batch_loss_grad(
    problem: PerSampleProblem,
    partition: PartitionSpec,
    k: int,
    theta: np.ndarray,
    need_hess: bool = False,
):
    """Mini-batch value and gradient (optionally Hessian) for batch k."""
    _check_partition(problem, partition)
    idx = partition.batch_indices(k)
    value = np.mean([problem.per_sample_value(p, theta) for p in idx])
    grad = np.mean([problem.per_sample_grad(p, theta) for p in idx], axis=0)
    if not need_hess:
        return float(value), grad
    hess = np.mean([problem.per_sample_hess(p, theta) for p in idx], axis=0)
    return float(value), grad, hess


def minibatch_noise(
    problem: PerSampleProblem,
    partition: PartitionSpec,
    k: int,
    theta: np.ndarray,
) -> NoiseTensors:
    """Batch-k deviation tensors: value, gradient and Hessian differences."""
    _check_partition(problem, partition)
    if not 0 <= k < partition.m:
        raise ValueError(f"batch index {k} outside 0..{partition.m - 1}")
    full = full_loss_grad(problem, theta)
    value, grad, hess = batch_loss_grad(problem, partition, k, theta, need_hess=True)
    return NoiseTensors(
        value=value - full.value,
        grad=grad - full.grad,
        hess=hess - full.hess,
    )


def all_minibatch_noise(
    problem: PerSampleProblem, partition: PartitionSpec, theta: np.ndarray
) -> list[NoiseTensors]:
    """Noise tensors for every batch, sharing one full-batch evaluation."""
    _check_partition(problem, partition)
    values, grads, hesses = per_sample_tables(problem, theta)
    fv, fg, fh = values.mean(), grads.mean(axis=0), hesses.mean(axis=0)
    out = []
    for k in range(partition.m):
        idx = list(partition.batch_indices(k))
        out.append(
            NoiseTensors(
                value=float(values[idx].mean() - fv),
                grad=grads[idx].mean(axis=0) - fg,
                hess=hesses[idx].mean(axis=0) - fh,
            )
        )
    return out


def empirical_covariance(
    problem: PerSampleProblem, theta: np.ndarray
) -> EmpiricalCovariance:
    _, grads, hesses = per_sample_tables(problem, theta)
    dev_g = grads - grads.mean(axis=0)
    dev_h = hesses - hesses.mean(axis=0)
    n = problem.n_samples
    sigma = dev_g.T @ dev_g / n
    # d/d theta_i of sigma[j, j] = (2/N) sum_p dev_hess[p, i, j] dev_grad[p, j]
    grad_sigma_diag = 2.0 / n * np.einsum("pij,pj->ij", dev_h, dev_g)
    return EmpiricalCovariance(sigma=sigma, grad_sigma_diag=grad_sigma_diag)


# ---------------------------------------------------------------------------
# Config-driven construction
# ---------------------------------------------------------------------------

_FAMILY_KEYS = {
    "shifted_quadratic",
    "random_psd_quadratic",
    "logistic_2d",
    "teacher_student_mlp",
}


def problem_from_config(cfg: dict) -> PerSampleProblem:
    """Build a problem family from parsed key-value config entries.

    Required keys: family, n_samples, seed.  dim is required except for the
    two-dimensional logistic family.  Construction is deterministic given seed.
    """
    family = str(cfg.get("family", "")).strip()
    if family not in _FAMILY_KEYS:
        raise ValueError(f"unknown problem family {family!r}; choose one of {sorted(_FAMILY_KEYS)}")
    try:
        n = int(cfg["n_samples"])
        seed = int(cfg["seed"])
    except KeyError as exc:
        raise ValueError(f"problem config missing required key {exc.args[0]!r}") from exc
    if family == "shifted_quadratic":
        return ShiftedQuadratic.generate(n, int(cfg.get("dim", 2)), seed)
    if family == "random_psd_quadratic":
        return RandomPSDQuadratic.generate(
            n, int(cfg.get("dim", 2)), seed, ridge=float(cfg.get("ridge", 0.1))
        )
    if family == "logistic_2d":
        return Logistic2D.generate(n, seed, flip_prob=float(cfg.get("flip_prob", 0.1)))
    return TeacherStudentMLP.generate(
        n,
        int(cfg.get("dim", 4)),
        int(cfg.get("hidden", 8)),
        seed,
        label_noise=float(cfg.get("label_noise", 0.3)),
    )

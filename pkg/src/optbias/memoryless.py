"""Memory-free approximating iterations for Adam and SGD with momentum.

A history-dependent update theta_{t+1} = theta_t - eta * F_t(theta_t, ..., theta_0)
is replaced by a one-point iteration

    theta~_{t+1} = theta~_t - eta * main_t(theta~_t) - eta^2 * corr_t(theta~_t),

where main_t collapses the history to the current point and corr_t contracts
the partial derivatives of F_t with respect to older arguments against the
accumulated update directions.  Trajectories of the two iterations stay
within O(eta^2) of each other over a fixed physical horizon, which the
closeness harness checks by fitting the gap against a step-size ladder.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .optimizers import Algo, HyperParams, Trajectory, run_epoch
from .problems import (
    DIVERGENCE_CUTOFF,
    PartitionSpec,
    PerSampleProblem,
    batch_loss_grad,
)
from .weights import weight_vector

CLOSENESS_SCHEMA = "optbias.closeness.v1"


@dataclass
class AuxiliaryTerms:
    """Per-coordinate building blocks of the Adam correction at one point.

    M is the bias-corrected gradient average, R the bias-corrected root of
    squared gradients (eps inside the root, so R >= sqrt(eps) elementwise),
    L_term and P the Hessian-weighted history contractions.
    """

    M: np.ndarray
    R: np.ndarray
    L_term: np.ndarray
    P: np.ndarray


def _batch_grads(problem, partition, theta, upto: int) -> list[np.ndarray]:
    return [batch_loss_grad(problem, partition, k, theta)[1] for k in range(upto + 1)]


def _batch_hessians(problem, partition, theta, upto: int) -> list[np.ndarray]:
    return [
        batch_loss_grad(problem, partition, k, theta, need_hess=True)[2]
        for k in range(upto + 1)
    ]


def adam_main_term(
    problem: PerSampleProblem,
    partition: PartitionSpec,
    theta: np.ndarray,
    t: int,
    hp: HyperParams,
) -> np.ndarray:
    """Adam's update direction with every historical gradient evaluated at theta."""
    if not 0 <= t < partition.m:
        raise ValueError(f"step index {t} outside the epoch 0..{partition.m - 1}")
    grads = _batch_grads(problem, partition, theta, t)
    mu = weight_vector(t, hp.beta1)
    nu = weight_vector(t, hp.beta2)
    num = sum(mu[k] * grads[k] for k in range(t + 1))
    den = np.sqrt(sum(nu[k] * grads[k] ** 2 for k in range(t + 1)) + hp.eps)
    return num / den


def adam_auxiliary(
    problem: PerSampleProblem,
    partition: PartitionSpec,
    theta: np.ndarray,
    t: int,
    hp: HyperParams,
) -> AuxiliaryTerms:
    """M, R, L and P at step t, all mini-batch losses frozen at theta."""
    if not 0 <= t < partition.m:
        raise ValueError(f"step index {t} outside the epoch 0..{partition.m - 1}")
    grads = _batch_grads(problem, partition, theta, t)
    dim = problem.dim

    # running bias-corrected averages M_l and roots R_l for l = 0..t
    raw_m = np.zeros(dim)
    raw_v = np.zeros(dim)
    ratios = []  # M_l / R_l for l = 0..t-1
    m_t = r_t = None
    for level in range(t + 1):
        raw_m = hp.beta1 * raw_m + grads[level]
        raw_v = hp.beta2 * raw_v + grads[level] ** 2
        m_level = (1.0 - hp.beta1) * raw_m / (1.0 - hp.beta1 ** (level + 1))
        r_level = np.sqrt(
            (1.0 - hp.beta2) * raw_v / (1.0 - hp.beta2 ** (level + 1)) + hp.eps
        )
        if level == t:
            m_t, r_t = m_level, r_level
        else:
            ratios.append(m_level / r_level)

    l_term = np.zeros(dim)
    p_term = np.zeros(dim)
    if t > 0:
        hessians = _batch_hessians(problem, partition, theta, t - 1)
        mu = weight_vector(t, hp.beta1)
        nu = weight_vector(t, hp.beta2)
        # suffix[k] = sum of M_l / R_l over l = k..t-1
        suffix = np.zeros((t, dim))
        acc = np.zeros(dim)
        for level in range(t - 1, -1, -1):
            acc = acc + ratios[level]
            suffix[level] = acc
        for k in range(t):
            hs = np.einsum("ij,i->j", hessians[k], suffix[k])
            l_term += mu[k] * hs
            p_term += nu[k] * grads[k] * hs

    return AuxiliaryTerms(M=m_t, R=r_t, L_term=l_term, P=p_term)


def adam_correction_term(
    problem: PerSampleProblem,
    partition: PartitionSpec,
    theta: np.ndarray,
    t: int,
    hp: HyperParams,
) -> np.ndarray:
    """Second-order drift L/R - M*P/R^3; zero at t=0 and whenever beta1=beta2=0."""
    aux = adam_auxiliary(problem, partition, theta, t, hp)
    return aux.L_term / aux.R - aux.M * aux.P / aux.R**3


def sgdm_main_correction(
    problem: PerSampleProblem,
    partition: PartitionSpec,
    theta: np.ndarray,
    t: int,
    hp: HyperParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Momentum main term and its Hessian-gradient correction at one point.

    main = sum_k beta^(t-k) grad L_k(theta); the correction contracts each
    batch Hessian against the accumulated momentum directions of the steps
    that separate it from the present.
    """
    if not 0 <= t < partition.m:
        raise ValueError(f"step index {t} outside the epoch 0..{partition.m - 1}")
    grads = _batch_grads(problem, partition, theta, t)
    beta = hp.beta
    main = sum(beta ** (t - k) * grads[k] for k in range(t + 1))
    corr = np.zeros(problem.dim)
    if t == 0 or beta == 0.0:
        return main, corr

    hessians = _batch_hessians(problem, partition, theta, t - 1)
    # momentum mains F_s(theta) for s = 0..t-1, then suffix sums over s
    mains = []
    f = np.zeros(problem.dim)
    for s in range(t):
        f = beta * f + grads[s]
        mains.append(f.copy())
    suffix = np.zeros((t, problem.dim))
    acc = np.zeros(problem.dim)
    for s in range(t - 1, -1, -1):
        acc = acc + mains[s]
        suffix[s] = acc
    for k in range(1, t + 1):
        corr += beta**k * (hessians[t - k] @ suffix[t - k])
    return main, corr


def run_memoryless(
    problem: PerSampleProblem,
    partition: PartitionSpec,
    hp: HyperParams,
    theta0: np.ndarray,
    algo: Algo,
    n_steps: int | None = None,
) -> Trajectory:
    """Iterate theta~ <- theta~ - eta * main - eta^2 * corr through the epoch."""
    theta = np.asarray(theta0, dtype=float).copy()
    steps = n_steps if n_steps is not None else (hp.horizon or partition.m)
    if steps > partition.m:
        raise ValueError(f"at most m={partition.m} steps per epoch, requested {steps}")
    points = [theta.copy()]
    diverged = False
    for t in range(steps):
        if algo is Algo.ADAM:
            # one auxiliary evaluation yields both the main term M/R and the correction
            aux = adam_auxiliary(problem, partition, theta, t, hp)
            main = aux.M / aux.R
            corr = aux.L_term / aux.R - aux.M * aux.P / aux.R**3
        else:
            main, corr = sgdm_main_correction(problem, partition, theta, t, hp)
        theta = theta - hp.eta * main - hp.eta**2 * corr
        points.append(theta.copy())
        if np.max(np.abs(theta)) > DIVERGENCE_CUTOFF or not np.all(np.isfinite(theta)):
            diverged = True
            break
    return Trajectory(
        points=np.asarray(points),
        algo=algo,
        hp=hp,
        m=partition.m,
        b=partition.b,
        perm=partition.perm,
        diverged=diverged,
        meta={"memoryless": True},
    )


# ---------------------------------------------------------------------------
# Generic memory removal by numerical differentiation (slow cross-check path)
# ---------------------------------------------------------------------------


def numeric_memory_removal_correction(update_map, t: int, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Correction for an arbitrary history-dependent update, via central differences.

    update_map(s, history) must return the update direction at step s given
    history[i] = theta_i for i = 0..s.  All partial derivatives with respect
    to older arguments are estimated numerically at the frozen point, so this
    path is only meant for cross-checking the analytic corrections on small
    dimensions.
    """
    theta = np.asarray(theta, dtype=float)
    dim = theta.shape[0]
    base_hist = np.tile(theta, (t + 1, 1))
    corr = np.zeros(dim)
    if t == 0:
        return corr
    mains = [np.asarray(update_map(s, base_hist[: s + 1])) for s in range(t)]
    suffix = np.zeros((t, dim))
    acc = np.zeros(dim)
    for s in range(t - 1, -1, -1):
        acc = acc + mains[s]
        suffix[s] = acc
    for k in range(1, t + 1):
        slot = t - k
        jac = np.zeros((dim, dim))
        for i in range(dim):
            hist_plus = base_hist.copy()
            hist_plus[slot, i] += h
            hist_minus = base_hist.copy()
            hist_minus[slot, i] -= h
            jac[:, i] = (
                np.asarray(update_map(t, hist_plus)) - np.asarray(update_map(t, hist_minus))
            ) / (2.0 * h)
        corr += jac @ suffix[slot]
    return corr


def adam_history_map(problem, partition, hp):
    """Adam's raw update as a function of the whole history, for the numeric path."""

    def update(s, history):
        mu = weight_vector(s, hp.beta1)
        nu = weight_vector(s, hp.beta2)
        grads = [
            batch_loss_grad(problem, partition, k, history[k])[1] for k in range(s + 1)
        ]
        num = sum(mu[k] * grads[k] for k in range(s + 1))
        den = np.sqrt(sum(nu[k] * grads[k] ** 2 for k in range(s + 1)) + hp.eps)
        return num / den

    return update


def sgdm_history_map(problem, partition, hp):
    def update(s, history):
        return sum(
            hp.beta ** (s - k) * batch_loss_grad(problem, partition, k, history[k])[1]
            for k in range(s + 1)
        )

    return update


# ---------------------------------------------------------------------------
# Trajectory-closeness harness
# ---------------------------------------------------------------------------


@dataclass
class ClosenessReport:
    """Gap between the true and memory-free trajectories across a step-size ladder."""

    eta_ladder: list[float]
    per_step_errors: list[list[float]]
    max_errors: list[float]
    max_inf_error: float
    fitted_exponent: float
    diverged: list[bool]
    algo: str

    def to_json_dict(self) -> dict:
        return {
            "schema": CLOSENESS_SCHEMA,
            "algo": self.algo,
            "eta_ladder": self.eta_ladder,
            "max_errors": self.max_errors,
            "max_inf_error": self.max_inf_error,
            "fitted_exponent": self.fitted_exponent,
            "diverged": self.diverged,
            "per_step_errors": self.per_step_errors,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema: {CLOSENESS_SCHEMA}\n")
            writer = csv.writer(fh)
            writer.writerow(["eta", "max_error"])
            for eta, err in zip(self.eta_ladder, self.max_errors):
                writer.writerow([repr(float(eta)), repr(float(err))])


def closeness_scaling(
    problem: PerSampleProblem,
    partition: PartitionSpec,
    hp_base: HyperParams,
    theta0: np.ndarray,
    algo: Algo,
    eta_ladder,
    horizon: float = 1.0,
) -> ClosenessReport:
    """Run both iterations per ladder entry and fit the log-log gap slope.

    The physical horizon is fixed, so floor(horizon / eta) steps are taken per
    entry, capped at the m batches the epoch offers.  Divergent entries are
    reported with a flag and excluded from the fit, never dropped silently.
    """
    etas = [float(e) for e in eta_ladder]
    if len(etas) < 3:
        raise ValueError("need at least 3 ladder entries")
    if any(nxt >= cur for cur, nxt in zip(etas, etas[1:])):
        raise ValueError("eta ladder must be strictly decreasing")

    per_step_errors: list[list[float]] = []
    max_errors: list[float] = []
    diverged_flags: list[bool] = []
    for eta in etas:
        hp = hp_base.with_eta(eta)
        steps = min(int(np.floor(horizon / eta)), partition.m)
        true_traj = run_epoch(problem, partition, hp, theta0, algo, n_steps=steps)
        approx_traj = run_memoryless(problem, partition, hp, theta0, algo, n_steps=steps)
        upto = min(true_traj.points.shape[0], approx_traj.points.shape[0])
        gaps = np.max(
            np.abs(true_traj.points[:upto] - approx_traj.points[:upto]), axis=1
        )
        flag = true_traj.diverged or approx_traj.diverged or not np.all(np.isfinite(gaps))
        per_step_errors.append([float(g) for g in gaps])
        max_errors.append(float(np.max(gaps)) if len(gaps) else 0.0)
        diverged_flags.append(bool(flag))

    usable = [
        (e, err)
        for e, err, flag in zip(etas, max_errors, diverged_flags)
        if not flag and np.isfinite(err) and err > 0.0
    ]
    if len(usable) >= 2:
        xs = np.log([u[0] for u in usable])
        ys = np.log([u[1] for u in usable])
        exponent = float(np.polyfit(xs, ys, 1)[0])
    else:
        exponent = float("nan")

    overall = max((m for m, f in zip(max_errors, diverged_flags) if not f), default=0.0)
    return ClosenessReport(
        eta_ladder=etas,
        per_step_errors=per_step_errors,
        max_errors=max_errors,
        max_inf_error=float(overall),
        fitted_exponent=exponent,
        diverged=diverged_flags,
        algo=algo.value,
    )

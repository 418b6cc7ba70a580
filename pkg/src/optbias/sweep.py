"""Multi-epoch training sweeps over the averaging factors and batch sizes.

Desk-scale stand-in for large overfitting studies: a noisy teacher-student
regression (or the 2-d logistic task) is trained with mini-batch Adam long
enough to overfit, the best held-out loss per run is recorded, and seed
averages of that best loss are fitted against beta2 per batch size.  The
fitted slopes are reported as data; whether their signs differ between the
smallest and largest batch is an empirical question the suite only logs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .advisor import b_simple
from .optimizers import Algo, HyperParams, adam_step, AdamState
from .problems import (
    DIVERGENCE_CUTOFF,
    DegenerateGradientError,
    Logistic2D,
    PartitionSpec,
    PerSampleProblem,
    TeacherStudentMLP,
    batch_loss_grad,
    empirical_covariance,
    full_loss_grad,
)

SWEEP_CSV_SCHEMA = "optbias.sweep.v1"
SWEEP_REPORT_SCHEMA = "optbias.sweep-report.v1"
SWEEP_CSV_HEADER = [
    "beta1",
    "beta2",
    "batch_size",
    "eta",
    "seed",
    "epoch_of_best",
    "best_val_loss",
    "sharpness_l1",
    "trace_sigma",
    "lambda_at_best",
    "diverged",
]


@dataclass
class SweepRecord:
    beta1: float
    beta2: float
    batch_size: int
    eta: float
    seed: int
    epoch_of_best: int
    best_val_loss: float
    sharpness_l1: float
    trace_sigma: float
    lambda_at_best: float
    diverged: bool

    def row(self) -> list:
        return [
            repr(self.beta1),
            repr(self.beta2),
            self.batch_size,
            repr(self.eta),
            self.seed,
            self.epoch_of_best,
            repr(self.best_val_loss),
            repr(self.sharpness_l1),
            repr(self.trace_sigma),
            repr(self.lambda_at_best),
            int(self.diverged),
        ]


@dataclass(frozen=True)
class SweepConfig:
    task: str = "teacher_student_mlp"
    n_train: int = 256
    n_val: int = 256
    in_dim: int = 4
    hidden: int = 8
    label_noise: float = 0.4
    flip_prob: float = 0.1
    beta1: float = 0.9
    beta2_grid: tuple[float, ...] = (0.9, 0.95, 0.99, 0.999)
    batch_sizes: tuple[int, ...] = (8, 256)
    eta: float = 0.01
    eps: float = 1e-8
    n_epochs: int = 40
    n_seeds: int = 3
    seed: int = 1234

    def __post_init__(self):
        if self.n_seeds < 3:
            raise ValueError("sweeps average over at least 3 seeds")
        if not self.beta2_grid or not self.batch_sizes:
            raise ValueError("grids must be nonempty")
        for b in self.batch_sizes:
            if self.n_train % b != 0:
                raise ValueError(f"batch size {b} does not divide n_train = {self.n_train}")


def _make_split(cfg: SweepConfig, seed: int):
    if cfg.task == "teacher_student_mlp":
        train, val = TeacherStudentMLP.train_val_pair(
            cfg.n_train, cfg.n_val, cfg.in_dim, cfg.hidden, seed, cfg.label_noise
        )
        theta0 = train.init_point(seed + 1)
        return train, val, theta0
    if cfg.task == "logistic_2d":
        train = Logistic2D.generate(cfg.n_train, seed, cfg.flip_prob)
        val = Logistic2D.generate(cfg.n_val, seed + 10_000, cfg.flip_prob)
        theta0 = 0.5 * np.random.default_rng(seed + 1).normal(size=2)
        return train, val, theta0
    raise ValueError(f"unknown sweep task {cfg.task!r}")


def _val_loss(problem: PerSampleProblem, theta) -> float:
    return float(
        np.mean([problem.per_sample_value(p, theta) for p in range(problem.n_samples)])
    )


def run_single(cfg: SweepConfig, beta2: float, batch_size: int, seed: int) -> SweepRecord:
    """Train one (beta2, batch size, seed) cell and record the early-best point."""
    train, val, theta = _make_split(cfg, seed)
    hp = HyperParams(eta=cfg.eta, beta1=cfg.beta1, beta2=beta2, eps=cfg.eps)
    m = cfg.n_train // batch_size
    rng = np.random.default_rng(seed + 77)

    state = AdamState.zeros(train.dim)
    best_val = _val_loss(val, theta)
    best_theta = theta.copy()
    best_epoch = 0
    diverged = False
    for epoch in range(1, cfg.n_epochs + 1):
        part = PartitionSpec.random(m, batch_size, rng)
        for k in range(m):
            _, grad = batch_loss_grad(train, part, k, theta)
            state, delta = adam_step(state, grad, hp)
            theta = theta + delta
            if np.max(np.abs(theta)) > DIVERGENCE_CUTOFF or not np.all(np.isfinite(theta)):
                diverged = True
                break
        if diverged:
            break
        vl = _val_loss(val, theta)
        if vl < best_val:
            best_val = vl
            best_theta = theta.copy()
            best_epoch = epoch

    full = full_loss_grad(train, best_theta)
    sharpness = float(np.sum(np.abs(full.grad)))
    trace_sigma = float(np.trace(empirical_covariance(train, best_theta).sigma))
    try:
        est = b_simple(train, best_theta)
        lam = (cfg.n_train / batch_size - 1.0) / (cfg.n_train - 1.0) * est.b_simple
    except DegenerateGradientError:
        lam = float("nan")
    return SweepRecord(
        beta1=cfg.beta1,
        beta2=beta2,
        batch_size=batch_size,
        eta=cfg.eta,
        seed=seed,
        epoch_of_best=best_epoch,
        best_val_loss=best_val,
        sharpness_l1=sharpness,
        trace_sigma=trace_sigma,
        lambda_at_best=lam,
        diverged=diverged,
    )


def _cell(args):
    cfg, beta2, batch_size, seed = args
    return run_single(cfg, beta2, batch_size, seed)


def run_sweep(cfg: SweepConfig, workers: int = 1) -> list[SweepRecord]:
    """All grid cells, every seed; rows come back in a fixed deterministic order."""
    seeds = [cfg.seed + 1000 * i for i in range(cfg.n_seeds)]
    cells = [
        (cfg, beta2, batch_size, seed)
        for batch_size in cfg.batch_sizes
        for beta2 in cfg.beta2_grid
        for seed in seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_cell, cells))
    else:
        records = [_cell(c) for c in cells]
    records.sort(key=lambda r: (r.batch_size, r.beta2, r.seed))
    return records


def write_records_csv(records: list[SweepRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {SWEEP_CSV_SCHEMA}\n")
        writer = csv.writer(fh)
        writer.writerow(SWEEP_CSV_HEADER)
        for rec in records:
            writer.writerow(rec.row())


def slope_report(cfg: SweepConfig, records: list[SweepRecord]) -> dict:
    """Seed-averaged best losses per cell plus fitted loss-vs-beta2 slopes.

    Slopes at the smallest and largest batch sizes are the headline numbers;
    the sign comparison is informational, not a guarantee.
    """
    by_cell: dict[tuple[int, float], list[SweepRecord]] = {}
    for rec in records:
        by_cell.setdefault((rec.batch_size, rec.beta2), []).append(rec)

    mean_losses: dict[str, dict[str, float]] = {}
    slopes: dict[str, float] = {}
    for batch_size in cfg.batch_sizes:
        means = []
        for beta2 in cfg.beta2_grid:
            cell = by_cell[(batch_size, beta2)]
            usable = [r.best_val_loss for r in cell if not r.diverged]
            means.append(float(np.mean(usable)) if usable else float("nan"))
        mean_losses[str(batch_size)] = {
            repr(b2): mv for b2, mv in zip(cfg.beta2_grid, means)
        }
        xs = np.asarray(cfg.beta2_grid, dtype=float)
        ys = np.asarray(means)
        keep = np.isfinite(ys)
        slopes[str(batch_size)] = (
            float(np.polyfit(xs[keep], ys[keep], 1)[0]) if keep.sum() >= 2 else float("nan")
        )

    smallest, largest = min(cfg.batch_sizes), max(cfg.batch_sizes)
    s_small, s_large = slopes[str(smallest)], slopes[str(largest)]
    return {
        "schema": SWEEP_REPORT_SCHEMA,
        "task": cfg.task,
        "beta1": cfg.beta1,
        "beta2_grid": list(cfg.beta2_grid),
        "batch_sizes": list(cfg.batch_sizes),
        "eta": cfg.eta,
        "n_epochs": cfg.n_epochs,
        "n_seeds": cfg.n_seeds,
        "seeds": [cfg.seed + 1000 * i for i in range(cfg.n_seeds)],
        "mean_best_val_loss": mean_losses,
        "loss_vs_beta2_slope": slopes,
        "slope_smallest_batch": s_small,
        "slope_largest_batch": s_large,
        "slope_sign_reversed": bool(
            np.isfinite(s_small) and np.isfinite(s_large) and s_small * s_large < 0
        ),
    }


def write_report_json(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")

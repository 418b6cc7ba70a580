"""Averaging-weight series, the correction-constant family, and its regime lemmas.

The expected Adam correction decomposes into a handful of exponential series
in the two averaging factors.  Each series has a closed-form large-horizon
limit, and combinations of those limits give the constants that multiply the
covariance moments.  This module evaluates the series directly at finite n,
transcribes the closed forms, composes the constants both ways, and scans the
aggregate coefficient for the monotonicity regimes the advisor relies on.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .problems import (
    PerSampleProblem,
    empirical_covariance,
    full_loss_grad,
    require_nondegenerate,
)
from .weights import weight, weight_vector

BETA_UPPER_GUARD = 1.0 - 1e-9


@dataclass(frozen=True)
class BetaPair:
    beta1: float
    beta2: float

    def __post_init__(self):
        for name, v in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")


def mu_nu(t: int, k: int, betas: BetaPair) -> tuple[float, float]:
    """The two bias-corrected weights of the step-k gradient at step t."""
    return weight(t, k, betas.beta1), weight(t, k, betas.beta2)


# ---------------------------------------------------------------------------
# Series: direct finite-n summation and closed-form limits
# ---------------------------------------------------------------------------


class SeriesId(enum.Enum):
    """The weight series whose limits build the correction constants.

    MU/NU name the weight family at the outer level n; AGE is an (n-k)
    factor; LP marks double sums that run over an inner level l with its own
    weight row; DIAG keeps only matching indices of an inner difference;
    CROSS couples the level-n weights with an inner difference; TIMES marks a
    product of two independent single sums.
    """

    MU_AGE = "mu_age"
    NU_AGE = "nu_age"
    NU_MU_AGE = "nu_mu_age"
    NU2_AGE = "nu2_age"
    NU_AGE_MU2NU = "nu_age_mu2nu"
    NU32_TIMES_MU_AGE = "nu32_times_mu_age"
    NU_AGE_TIMES_NU42 = "nu_age_times_nu42"
    NU_AGE_TIMES_NU_MU2NU = "nu_age_times_nu_mu2nu"
    NU_AGE_TIMES_NU32 = "nu_age_times_nu32"
    MU_NU32_LP = "mu_nu32_lp"
    NU_NU32_LP = "nu_nu32_lp"
    MU_DIFF_DIAG = "mu_diff_diag"
    NU_DIFF_DIAG = "nu_diff_diag"
    MU_NU_DIFF_CROSS = "mu_nu_diff_cross"
    NU_DIFF_NU_CROSS = "nu_diff_nu_cross"
    NU_DIFF_MU2NU = "nu_diff_mu2nu"


class _SeriesCtx:
    """Shared finite-n arrays: weight rows at level n and inner prefix sums.

    Inner sums over a level l <= n-1 collapse to geometric prefix tables, so
    every double sum is a single vectorized pass over l.  All tables are
    built by actual cumulative summation rather than closed forms.
    """

    def __init__(self, betas: BetaPair, n: int):
        if n < 1:
            raise ValueError("n must be >= 1")
        x, y = betas.beta1, betas.beta2
        self.x, self.y, self.n = x, y, n
        self.mu_n = weight_vector(n, x)
        self.nu_n = weight_vector(n, y)
        self.ages = np.arange(n, -1, -1, dtype=float)

        ls = np.arange(n, dtype=float)  # inner levels l = 0..n-1
        q = np.arange(n, dtype=float)
        self.g_x2 = np.cumsum(x ** (2 * q))
        self.g_y2 = np.cumsum(y ** (2 * q))
        self.g_xy = np.cumsum((x * y) ** q)
        self.den_x = 1.0 - x ** (ls + 1)
        self.den_y = 1.0 - y ** (ls + 1)
        self.den_xn = 1.0 - x ** (n + 1)
        self.den_yn = 1.0 - y ** (n + 1)
        self.x_pow_nl = x ** (n - ls)
        self.y_pow_nl = y ** (n - ls)
        self.prefix_mu = np.cumsum(self.mu_n)[:n]
        self.prefix_nu = np.cumsum(self.nu_n)[:n]

    # inner sums over p = 0..l, one value per l = 0..n-1
    def sum_nu_l_sq(self):
        return ((1.0 - self.y) / self.den_y) ** 2 * self.g_y2

    def sum_mu_l_nu_l(self):
        return (1.0 - self.x) * (1.0 - self.y) / (self.den_x * self.den_y) * self.g_xy

    def sum_mun_mul(self):
        return (
            (1.0 - self.x) ** 2
            * self.x_pow_nl
            * self.g_x2
            / (self.den_xn * self.den_x)
        )

    def sum_mun_nul(self):
        return (
            (1.0 - self.x)
            * (1.0 - self.y)
            * self.x_pow_nl
            * self.g_xy
            / (self.den_xn * self.den_y)
        )

    def sum_nun_mul(self):
        return (
            (1.0 - self.x)
            * (1.0 - self.y)
            * self.y_pow_nl
            * self.g_xy
            / (self.den_yn * self.den_x)
        )

    def sum_nun_nul(self):
        return (
            (1.0 - self.y) ** 2
            * self.y_pow_nl
            * self.g_y2
            / (self.den_yn * self.den_y)
        )


def _series_partial(sid: SeriesId, betas: BetaPair, n: int) -> float:
    c = _SeriesCtx(betas, n)
    mu, nu, ages = c.mu_n, c.nu_n, c.ages
    if sid is SeriesId.MU_AGE:
        return float(np.sum(mu * ages))
    if sid is SeriesId.NU_AGE:
        return float(np.sum(nu * ages))
    if sid is SeriesId.NU_MU_AGE:
        return float(np.sum(nu * mu * ages))
    if sid is SeriesId.NU2_AGE:
        return float(np.sum(nu**2 * ages))
    if sid is SeriesId.NU_AGE_MU2NU:
        return float(np.sum(ages * nu * (mu - 2.0 * nu)))
    if sid is SeriesId.NU32_TIMES_MU_AGE:
        return float(np.sum(3.0 * nu**2 - nu) * np.sum(mu * ages))
    if sid is SeriesId.NU_AGE_TIMES_NU42:
        return float(np.sum(ages * nu) * np.sum(4.0 * nu**2 - nu - 2.0 * mu * nu))
    if sid is SeriesId.NU_AGE_TIMES_NU_MU2NU:
        return float(np.sum(ages * nu) * np.sum(nu * (mu - 2.0 * nu)))
    if sid is SeriesId.NU_AGE_TIMES_NU32:
        return float(np.sum(ages * nu) * np.sum(3.0 * nu**2 - nu))
    if sid is SeriesId.MU_NU32_LP:
        inner = (3.0 * c.sum_nu_l_sq() - 1.0 - 2.0 * c.sum_mu_l_nu_l()) / 2.0
        return float(np.sum(c.prefix_mu * inner))
    if sid is SeriesId.NU_NU32_LP:
        inner = 3.0 * c.sum_nu_l_sq() - 1.0 - 2.0 * c.sum_mu_l_nu_l()
        return float(np.sum(c.prefix_nu * inner))
    if sid is SeriesId.MU_DIFF_DIAG:
        return float(np.sum(c.sum_mun_mul() - c.sum_mun_nul()))
    if sid is SeriesId.NU_DIFF_DIAG:
        return float(np.sum(c.sum_nun_mul() - c.sum_nun_nul()))
    if sid is SeriesId.MU_NU_DIFF_CROSS:
        inner = c.sum_nun_mul() - c.sum_nun_nul()
        return float(np.sum(c.prefix_mu * inner))
    if sid is SeriesId.NU_DIFF_NU_CROSS:
        inner = c.sum_nun_mul() - c.sum_nun_nul()
        return float(np.sum(c.prefix_nu * inner))
    if sid is SeriesId.NU_DIFF_MU2NU:
        inner = (
            c.sum_mun_mul()
            - 2.0 * c.sum_nun_mul()
            - c.sum_mun_nul()
            + 2.0 * c.sum_nun_nul()
        )
        return float(np.sum(c.prefix_nu * inner))
    raise ValueError(f"unknown series id {sid!r}")


def _series_limit(sid: SeriesId, betas: BetaPair) -> float:
    x, y = betas.beta1, betas.beta2
    if sid is SeriesId.MU_AGE:
        return x / (1.0 - x)
    if sid is SeriesId.NU_AGE:
        return y / (1.0 - y)
    if sid is SeriesId.NU_MU_AGE:
        return x * y * (1.0 - x) * (1.0 - y) / (1.0 - x * y) ** 2
    if sid is SeriesId.NU2_AGE:
        return y**2 / (1.0 + y) ** 2
    if sid is SeriesId.NU_AGE_MU2NU:
        return (
            x * y * (1.0 - x) * (1.0 - y) / (1.0 - x * y) ** 2
            - 2.0 * y**2 / (1.0 + y) ** 2
        )
    if sid is SeriesId.NU32_TIMES_MU_AGE:
        return 2.0 * x * (1.0 - 2.0 * y) / ((1.0 - x) * (1.0 + y))
    if sid is SeriesId.NU_AGE_TIMES_NU42:
        return y * (3.0 - 5.0 * y) / (1.0 - y**2) - 2.0 * y * (1.0 - x) / (1.0 - x * y)
    if sid is SeriesId.NU_AGE_TIMES_NU_MU2NU:
        return -y * (1.0 - y) * (1.0 + x) / ((1.0 - x * y) * (1.0 + y))
    if sid is SeriesId.NU_AGE_TIMES_NU32:
        return 2.0 * y * (1.0 - 2.0 * y) / ((1.0 - y) * (1.0 + y))
    if sid is SeriesId.MU_NU32_LP:
        return (
            x
            * (x * y**2 - x * y + x + y**2 - 2.0 * y)
            / ((1.0 - x) * (1.0 + y) * (1.0 - x * y))
        )
    if sid is SeriesId.NU_NU32_LP:
        return (
            2.0
            * y
            * (x * y**2 - x * y + x + y**2 - 2.0 * y)
            / ((1.0 + y) * (1.0 - y) * (1.0 - x * y))
        )
    if sid is SeriesId.MU_DIFF_DIAG:
        return x * (y - x) / ((1.0 + x) * (1.0 - x * y))
    if sid is SeriesId.NU_DIFF_DIAG:
        return y * (y - x) / ((1.0 + y) * (1.0 - x * y))
    if sid is SeriesId.MU_NU_DIFF_CROSS:
        return x * y * (y - x) * (1.0 - y) / ((1.0 + y) * (1.0 - x * y) ** 2)
    if sid is SeriesId.NU_DIFF_NU_CROSS:
        return y**2 * (y - x) / ((1.0 + y) ** 2 * (1.0 - x * y))
    if sid is SeriesId.NU_DIFF_MU2NU:
        inner = (
            x**2 * y**2
            - 2.0 * x**2 * y
            - x**2
            + 3.0 * x * y**2
            + x
            - 2.0 * y
        )
        return y * (y - x) * inner / ((1.0 + x) * (1.0 + y) ** 2 * (1.0 - x * y) ** 2)
    raise ValueError(f"unknown series id {sid!r}")


def series_partial_and_limit(sid: SeriesId, betas: BetaPair, n: int) -> tuple[float, float]:
    """Direct summation at horizon n paired with the closed-form limit."""
    return _series_partial(sid, betas, n), _series_limit(sid, betas)


# ---------------------------------------------------------------------------
# The constants and their aggregate
# ---------------------------------------------------------------------------


def _c1(x, y):
    return (
        (1.0 - x**2) / (x * (1.0 - x * y))
        + (1.0 - x) ** 2 / (x * (1.0 - x * y) ** 2)
        + 3.0 * (1.0 + x) / (2.0 * (1.0 - x) * (1.0 + y))
        - 2.0 / (x * (1.0 - x))
        + 3.0 / (2.0 - 2.0 * y)
        + 3.0 / (1.0 + y) ** 2
        - 2.0
    )


def _c2(x, y):
    return (
        (x - y)
        * (x * y**2 - x * y + x + y**2 - 2.0 * y)
        / ((1.0 - x) * (1.0 - y) * (1.0 + y) * (1.0 - x * y))
    )


def _c3(x, y):
    poly = (
        -2.0 * x**2 * y**5
        + (x**2 + 8.0 * x) * y**4
        + (-5.0 * x**2 + 2.0 * x - 4.0) * y**3
        + (2.0 * x**2 - 2.0 * x - 1.0) * y
        - 2.0 * x * y**5
        + (2.0 * x + 1.0) * y**2
    )
    return poly / ((1.0 - y) * (1.0 + y) ** 2 * (1.0 - x * y) ** 2)


def _c4(x, y):
    return -((x - y) ** 2) / ((1.0 + x) * (1.0 + y) * (1.0 - x * y))


def _c5(x, y):
    return (
        y
        * (y - x)
        * (2.0 * y - 3.0 * x - 1.0)
        / ((1.0 + x) * (1.0 + y) ** 2 * (1.0 - x * y))
    )


def _fb(x, y):
    return x / (1.0 - x) - y / (1.0 - y)


@dataclass(frozen=True)
class CoefficientSet:
    """C1..C5, the memory-only coefficient, and the aggregate as a function of lambda."""

    betas: BetaPair
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    fb: float

    def c_total_at(self, lam: float) -> float:
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        return self.fb + (self.c1 + self.c2) * lam


def constants(betas: BetaPair) -> CoefficientSet:
    """Closed forms of the five noise constants and the memory-only coefficient."""
    x, y = betas.beta1, betas.beta2
    if x >= BETA_UPPER_GUARD or y >= BETA_UPPER_GUARD:
        raise ValueError(f"betas must stay below {BETA_UPPER_GUARD} (all constants blow up at 1)")
    if x == 0.0:
        raise ValueError("c1 is undefined at beta1 = 0; use beta1 > 0")
    return CoefficientSet(
        betas=betas,
        c1=float(_c1(x, y)),
        c2=float(_c2(x, y)),
        c3=float(_c3(x, y)),
        c4=float(_c4(x, y)),
        c5=float(_c5(x, y)),
        fb=float(_fb(x, y)),
    )


def c_total(betas: BetaPair, lam: float) -> float:
    return constants(betas).c_total_at(lam)


_SID = SeriesId


def compose_constants_from_series(betas: BetaPair, n: int) -> dict[str, float]:
    """Rebuild every constant from the finite-n series, independent of the closed forms.

    The combination mirrors how the two halves of the correction contribute:
    the first half adds its series, the second half subtracts its own.
    """
    s = {sid: _series_partial(sid, betas, n) for sid in SeriesId}
    c1 = (
        s[_SID.NU32_TIMES_MU_AGE] / 2.0
        - s[_SID.NU_AGE_TIMES_NU42]
        - s[_SID.NU_AGE_MU2NU]
        + s[_SID.NU_AGE_TIMES_NU_MU2NU]
        - s[_SID.NU_AGE_TIMES_NU32] / 2.0
        + s[_SID.NU2_AGE]
    )
    c2 = s[_SID.MU_NU32_LP] - s[_SID.NU_NU32_LP] / 2.0
    c3 = -s[_SID.NU_MU_AGE] - s[_SID.NU_AGE_MU2NU] + s[_SID.NU2_AGE] - s[_SID.NU_AGE]
    c4 = s[_SID.MU_DIFF_DIAG] - s[_SID.NU_DIFF_DIAG]
    c5 = (
        -s[_SID.MU_NU_DIFF_CROSS]
        - s[_SID.NU_DIFF_MU2NU]
        + s[_SID.NU_DIFF_NU_CROSS]
        - s[_SID.NU_DIFF_DIAG]
    )
    fb = s[_SID.MU_AGE] - s[_SID.NU_AGE]
    return {"c1": c1, "c2": c2, "c3": c3, "c4": c4, "c5": c5, "fb": fb}


# ---------------------------------------------------------------------------
# Assembled expectation of the correction
# ---------------------------------------------------------------------------


@dataclass
class CorrectionBreakdown:
    """Per-coordinate pieces of the expected correction, scaled by |g_j|.

    total approximates |g_j| times the expected correction; expected_correction
    divides it back by |g_j| so it is directly comparable with the brute-force
    permutation average.
    """

    fb_term: np.ndarray
    mbn1: np.ndarray
    mbn2: np.ndarray
    mbn3: np.ndarray
    mbn4: np.ndarray
    mbn5: np.ndarray
    total: np.ndarray
    expected_correction: np.ndarray

    def to_json_dict(self) -> dict:
        out = {}
        for name in ("fb_term", "mbn1", "mbn2", "mbn3", "mbn4", "mbn5", "total", "expected_correction"):
            out[name] = [float(v) for v in getattr(self, name)]
        return out


def assemble_expected_correction(
    problem: PerSampleProblem,
    theta: np.ndarray,
    betas: BetaPair,
    m: int,
    b: int,
) -> CorrectionBreakdown:
    """Evaluate the covariance form of the expected correction coordinatewise.

    All six pieces are kept, including the two the smallness bounds justify
    ignoring in interpretation; neglecting them is an analysis step, not an
    evaluation step.
    """
    if m * b != problem.n_samples:
        raise ValueError(f"m*b = {m * b} does not cover the {problem.n_samples} samples")
    full = full_loss_grad(problem, theta)
    require_nondegenerate(full.grad, context="assemble_expected_correction")
    cov = empirical_covariance(problem, theta)
    cs = constants(betas)

    g = full.grad
    s = full.sign
    hess = full.hess
    absg = np.abs(g)
    l1g = full.l1_grad_norm_gradient()
    n = m * b
    w = (m - 1) / (n - 1) if n > 1 else 0.0
    sig = cov.sigma
    dsig = cov.grad_sigma_diag  # dsig[i, j] = d sigma[j, j] / d theta_i

    fb_term = cs.fb * l1g
    mbn1 = cs.c1 * l1g * w * np.diag(sig) / g**2
    # sum_i (d|g_i|/d theta_j) * w * sigma_ii / g_i^2
    mbn2 = cs.c2 * np.einsum("i,ij,i->j", s, hess, w * np.diag(sig) / g**2)
    # E[d_{0,ij} d_{0,j}] = w/2 * dsig[i, j]
    mbn3 = cs.c3 * (s / absg) * np.einsum("i,ij->j", s, (w / 2.0) * dsig)
    # E[d_{0,ij} d_{0,i}] = w/2 * dsig[j, i]
    mbn4 = cs.c4 * (w / 2.0) * np.einsum("i,ji->j", 1.0 / absg, dsig)
    mbn5 = cs.c5 * (s / absg) * np.einsum("ij,i,ij->j", hess, 1.0 / absg, w * sig)

    total = fb_term + mbn1 + mbn2 + mbn3 + mbn4 + mbn5
    return CorrectionBreakdown(
        fb_term=fb_term,
        mbn1=mbn1,
        mbn2=mbn2,
        mbn3=mbn3,
        mbn4=mbn4,
        mbn5=mbn5,
        total=total,
        expected_correction=total / absg,
    )


# ---------------------------------------------------------------------------
# Smallness bounds and monotonicity regimes
# ---------------------------------------------------------------------------


@dataclass
class RatioBound:
    name: str
    sup: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.sup < self.bound


@dataclass
class SmallnessReport:
    entries: list[RatioBound]
    grid_step: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def to_json_dict(self) -> dict:
        return {
            "schema": "optbias.smallness.v1",
            "grid_step": self.grid_step,
            "passed": self.passed,
            "entries": [
                {"name": e.name, "sup": e.sup, "bound": e.bound, "passed": e.passed}
                for e in self.entries
            ],
        }


def _beta_grid(lo: float, step: float) -> np.ndarray:
    hi = 1.0 - 1e-6
    grid = np.arange(lo, hi, step)
    return np.append(grid, hi)


def _sup_ratio(num: np.ndarray, den: np.ndarray) -> float:
    # ratios where the denominator constant vanishes are removable zeros
    mask = np.abs(den) > 1e-300
    return float(np.max(np.abs(num[mask] / den[mask])))


def verify_smallness_lemma(step: float = 1e-5) -> SmallnessReport:
    """Sup of the six small-over-large constant ratios on dense one-beta grids."""
    g = _beta_grid(0.9, step)
    entries = [
        RatioBound("c4_over_c1_beta1_0.9", _sup_ratio(_c4(0.9, g), _c1(0.9, g)), 3e-4),
        RatioBound("c5_over_c1_beta1_0.9", _sup_ratio(_c5(0.9, g), _c1(0.9, g)), 4e-3),
        RatioBound("c4_over_c2_beta1_0.99", _sup_ratio(_c4(0.99, g), _c2(0.99, g)), 1e-3),
        RatioBound("c5_over_c2_beta1_0.99", _sup_ratio(_c5(0.99, g), _c2(0.99, g)), 6e-3),
        RatioBound("c4_over_c2_beta2_0.999", _sup_ratio(_c4(g, 0.999), _c2(g, 0.999)), 6e-5),
        RatioBound("c5_over_c2_beta2_0.999", _sup_ratio(_c5(g, 0.999), _c2(g, 0.999)), 5e-4),
    ]
    return SmallnessReport(entries=entries, grid_step=step)


class Direction(enum.Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"
    CONVEX_INTERIOR_MIN = "convex_interior_min"
    MIXED = "mixed"


@dataclass(frozen=True)
class SweepMode:
    """Which beta is swept and which stays fixed."""

    vary: str  # "beta1", "beta2" or "diagonal"
    fixed: float | None

    def __post_init__(self):
        if self.vary not in ("beta1", "beta2", "diagonal"):
            raise ValueError("vary must be 'beta1', 'beta2' or 'diagonal'")
        if (self.vary == "diagonal") != (self.fixed is None):
            raise ValueError("diagonal sweeps take no fixed beta; the others need one")


def fix_beta1(value: float) -> SweepMode:
    """Sweep beta2 with beta1 pinned."""
    return SweepMode(vary="beta2", fixed=value)


def fix_beta2(value: float) -> SweepMode:
    """Sweep beta1 with beta2 pinned."""
    return SweepMode(vary="beta1", fixed=value)


DIAGONAL = SweepMode(vary="diagonal", fixed=None)

STRICTNESS_MARGIN = 1e-12


def _c_total_grid(mode: SweepMode, lam: float, step: float) -> tuple[np.ndarray, np.ndarray]:
    lo = 0.5 if mode.vary == "diagonal" else 0.9
    grid = _beta_grid(lo, step)
    if mode.vary == "beta2":
        b1, b2 = mode.fixed, grid
    elif mode.vary == "beta1":
        b1, b2 = grid, mode.fixed
    else:
        b1 = b2 = grid
    values = _fb(b1, b2) + (_c1(b1, b2) + _c2(b1, b2)) * lam
    return grid, values


def monotone_direction(mode: SweepMode, lam: float, step: float = 1e-4) -> Direction:
    """Classify the aggregate coefficient along a beta sweep at fixed lambda.

    Strictness uses successive grid differences with a tiny margin; the
    convex class additionally demands positive second differences and a
    single sign change of the first differences.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    _, values = _c_total_grid(mode, lam, step)
    diffs = np.diff(values)
    if np.all(diffs > STRICTNESS_MARGIN):
        return Direction.INCREASING
    if np.all(diffs < -STRICTNESS_MARGIN):
        return Direction.DECREASING
    second = np.diff(values, 2)
    sign_changes = np.count_nonzero(np.diff(diffs > 0))
    if (
        diffs[0] < 0
        and diffs[-1] > 0
        and sign_changes == 1
        and np.all(second > -STRICTNESS_MARGIN * np.maximum(1.0, np.abs(values[:-2])))
    ):
        return Direction.CONVEX_INTERIOR_MIN
    return Direction.MIXED


def monotonicity_report(step: float = 1e-4) -> dict:
    """Machine-readable sweep classifications, including unclaimed gap regions."""
    cases = [
        ("fix_beta1_0.9", fix_beta1(0.9), [0.3, 0.494, 0.5082, 1.0]),
        ("fix_beta1_0.99", fix_beta1(0.99), [0.3, 1.0, 2.685]),
        ("fix_beta2_0.999", fix_beta2(0.999), [0.5, 0.995, 1.002, 2.0]),
        ("diagonal", DIAGONAL, [0.1, 1.0, 10.0]),
    ]
    out: dict = {"schema": "optbias.monotonicity.v1", "step": step, "cases": []}
    for name, mode, lams in cases:
        for lam in lams:
            out["cases"].append(
                {
                    "sweep": name,
                    "lambda": lam,
                    "direction": monotone_direction(mode, lam, step).value,
                }
            )
    return out


def lemma_report_json(path, step: float = 1e-4, smallness_step: float = 1e-5) -> None:
    report = {
        "smallness": verify_smallness_lemma(smallness_step).to_json_dict(),
        "monotonicity": monotonicity_report(step),
    }
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


COEFFS_CSV_SCHEMA = "optbias.coeffs.v1"
COEFFS_CSV_HEADER = "beta1,beta2,c1,c2,c3,c4,c5,fb"


def render_coeffs_csv(beta1s, beta2s) -> str:
    """Constant table over the grid product, one row per (beta1, beta2)."""
    lines = [f"# schema: {COEFFS_CSV_SCHEMA}", COEFFS_CSV_HEADER]
    for b1 in beta1s:
        for b2 in beta2s:
            cs = constants(BetaPair(float(b1), float(b2)))
            lines.append(
                ",".join(
                    repr(float(v))
                    for v in (b1, b2, cs.c1, cs.c2, cs.c3, cs.c4, cs.c5, cs.fb)
                )
            )
    return "\n".join(lines) + "\n"

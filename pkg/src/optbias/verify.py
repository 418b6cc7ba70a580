"""Named verification suites covering every module invariant.

Each suite bundles related checks and reports one pass/fail line; the first
failing check carries a serialized counterexample.  The checks here are the
same routines the acceptance tests call, at the stated tolerances.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from . import advisor, coefficients, expansions, memoryless, optimizers, permstats, sweep
from .coefficients import BetaPair, SeriesId
from .optimizers import Algo, HyperParams
from .problems import (
    Logistic2D,
    PartitionSpec,
    PerSampleProblem,
    RandomPSDQuadratic,
    ShiftedQuadratic,
    TeacherStudentMLP,
    empirical_covariance,
    full_loss_grad,
    all_minibatch_noise,
    replicated,
    scale_noise,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)


@dataclass
class SuiteResult:
    name: str
    checks: list[CheckResult]
    elapsed_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def first_failure(self) -> CheckResult | None:
        return next((c for c in self.checks if not c.passed), None)


@dataclass
class VerifyReport:
    suites: list[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def to_json_dict(self) -> dict:
        return {
            "schema": "optbias.verify.v1",
            "passed": self.passed,
            "suites": [
                {
                    "name": s.name,
                    "passed": s.passed,
                    "elapsed_s": s.elapsed_s,
                    "checks": [
                        {"name": c.name, "passed": c.passed, "detail": _jsonable(c.detail)}
                        for c in s.checks
                    ],
                }
                for s in self.suites
            ],
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# Finite differences (independent derivative oracle)
# ---------------------------------------------------------------------------

FD_STEP = 1e-5
FD_REL_TOL = 1e-6


def fd_gradient(f, theta: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        up[i] += h
        dn = theta.copy()
        dn[i] -= h
        grad[i] = (f(up) - f(dn)) / (2.0 * h)
    return grad


def fd_hessian_from_grad(gfun, theta: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    cols = []
    for i in range(theta.size):
        up = theta.copy()
        up[i] += h
        dn = theta.copy()
        dn[i] -= h
        cols.append((gfun(up) - gfun(dn)) / (2.0 * h))
    return np.stack(cols, axis=1)


def _rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(exact))), 1.0)
    return float(np.max(np.abs(approx - exact)) / scale)


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------


def _verification_families(seed: int) -> list[PerSampleProblem]:
    return [
        ShiftedQuadratic.generate(6, 3, seed),
        RandomPSDQuadratic.generate(6, 3, seed + 1),
        Logistic2D.generate(8, seed + 2),
        TeacherStudentMLP.generate(6, 2, 3, seed + 3, label_noise=0.2),
    ]


def expectation_fixture(seed: int = 0):
    """The N = 8 quadratic used for the brute-force-versus-assembled ladder.

    Deliberate choices: equal averaging factors make the finite-horizon
    memory-only coefficient vanish identically (so no constant offset floors
    the ladder), and one outlier sample per coordinate skews the noise so the
    cubic term dominates the 1/(N-1) covariance pollution the covariance form
    ignores.
    """
    rng = np.random.default_rng(seed)
    shifts = -1.0 + 0.15 * rng.normal(size=(8, 3))
    for d in range(3):
        shifts[d % 8, d] = 7.0 + 0.3 * rng.normal()
    rng2 = np.random.default_rng(seed + 3)
    mats = np.stack([np.eye(3) * (1.0 + 0.02 * rng2.normal()) for _ in range(8)])
    mats[1] = np.eye(3) * 1.35 + 0.05 * np.ones((3, 3))
    problem = RandomPSDQuadratic(mats, shifts)
    theta = np.array([4.0, -5.0, 4.5])
    betas = BetaPair(0.5, 0.5)
    hp = HyperParams(eta=0.0, beta1=betas.beta1, beta2=betas.beta2, eps=1e-12)
    return problem, theta, betas, hp


def closeness_fixture(seed: int = 13, n_samples: int = 800, dim: int = 4):
    problem = RandomPSDQuadratic.generate(n_samples, dim, seed, ridge=0.4, spread=1.0)
    rng = np.random.default_rng(seed + 1)
    theta0 = 3.0 * np.sign(rng.normal(size=dim)) + rng.normal(scale=0.3, size=dim)
    partition = PartitionSpec.random(n_samples // 2, 2, np.random.default_rng(seed + 2))
    return problem, partition, theta0


def expected_correction_residuals(
    problem,
    theta,
    betas: BetaPair,
    hp: HyperParams,
    m: int,
    b: int,
    deltas=(0.2, 0.1, 0.05),
) -> tuple[np.ndarray, list[float]]:
    """Gap between brute-force and assembled expectations along a noise ladder.

    Residuals are measured on |g_j| * expectation to match the assembled form.
    Returns the (ladder, dim) residual matrix and one fitted log-log slope per
    coordinate.
    """
    full = full_loss_grad(problem, theta)
    absg = np.abs(full.grad)
    rows = []
    for delta in deltas:
        scaled = scale_noise(problem, delta)
        brute = permstats.bruteforce_expected_correction(scaled, m, b, theta, hp)
        assembled = coefficients.assemble_expected_correction(scaled, theta, betas, m, b)
        rows.append(np.abs(absg * brute - assembled.total))
    residuals = np.asarray(rows)
    logd = np.log(np.asarray(deltas, dtype=float))
    slopes = [
        float(np.polyfit(logd, np.log(residuals[:, j]), 1)[0])
        for j in range(residuals.shape[1])
    ]
    return residuals, slopes


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------


def _suite_problems(seed: int) -> list[CheckResult]:
    checks = []
    rng = np.random.default_rng(seed)
    worst = {"family": None, "rel_err": 0.0}
    ok = True
    for problem in _verification_families(seed):
        for point in range(20):
            theta = rng.normal(scale=1.0, size=problem.dim)
            p = point % problem.n_samples
            g_fd = fd_gradient(lambda th: problem.per_sample_value(p, th), theta)
            h_fd = fd_hessian_from_grad(lambda th: problem.per_sample_grad(p, th), theta)
            ge = _rel_err(g_fd, problem.per_sample_grad(p, theta))
            he = _rel_err(h_fd, problem.per_sample_hess(p, theta))
            err = max(ge, he)
            if err > worst["rel_err"]:
                worst = {"family": problem.family_id, "rel_err": err}
            if err > FD_REL_TOL:
                ok = False
    checks.append(CheckResult("finite-difference-derivatives", ok, worst))

    quad = ShiftedQuadratic.generate(6, 2, seed + 10)
    ok = True
    detail = {}
    for m, b in ((2, 3), (3, 2), (6, 1)):
        for trial in range(5):
            part = PartitionSpec.random(m, b, rng)
            theta = rng.normal(size=quad.dim)
            full = full_loss_grad(quad, theta)
            batch_vals = [
                optimizers.batch_loss_grad(quad, part, k, theta)[0] for k in range(m)
            ]
            gap = abs(np.mean(batch_vals) - full.value)
            if gap > 1e-12:
                ok = False
                detail = {"m": m, "b": b, "gap": gap}
    checks.append(CheckResult("batch-mean-identity", ok, detail))

    ok = True
    detail = {}
    for problem in _verification_families(seed + 20):
        theta = rng.normal(size=problem.dim)
        cov = empirical_covariance(problem, theta)
        sym = float(np.max(np.abs(cov.sigma - cov.sigma.T)))
        min_eig = float(np.linalg.eigvalsh(cov.sigma).min())
        scaled = empirical_covariance(scale_noise(problem, 0.5), theta)
        scale_gap = float(np.max(np.abs(scaled.sigma - 0.25 * cov.sigma)))
        if sym > 1e-12 or min_eig < -1e-10 or scale_gap > 1e-12 * max(1.0, np.abs(cov.sigma).max()):
            ok = False
            detail = {
                "family": problem.family_id,
                "asymmetry": sym,
                "min_eig": min_eig,
                "scale_gap": scale_gap,
            }
    checks.append(CheckResult("covariance-psd-and-noise-scaling", ok, detail))

    ok = True
    detail = {}
    for problem in _verification_families(seed + 30):
        n = problem.n_samples
        for m, b in ((n, 1), (2, n // 2)) if n % 2 == 0 else ((n, 1),):
            part = PartitionSpec.random(m, b, rng)
            theta = rng.normal(size=problem.dim)
            noises = all_minibatch_noise(problem, part, theta)
            gv = abs(np.mean([nz.value for nz in noises]))
            gg = float(np.max(np.abs(np.mean([nz.grad for nz in noises], axis=0))))
            gh = float(np.max(np.abs(np.mean([nz.hess for nz in noises], axis=0))))
            if max(gv, gg, gh) > 1e-12:
                ok = False
                detail = {"family": problem.family_id, "max_mean": max(gv, gg, gh)}
    checks.append(CheckResult("noise-averages-to-zero", ok, detail))
    return checks


def _suite_optimizers(seed: int) -> list[CheckResult]:
    checks = []
    rng = np.random.default_rng(seed)

    hp = HyperParams(eta=0.3, beta1=0.0, beta2=0.0, eps=1e-16)
    state = optimizers.AdamState.zeros(4)
    ok = True
    for _ in range(5):
        grad = rng.normal(size=4)
        grad[np.abs(grad) < 0.3] = 0.5
        state, delta = optimizers.adam_step(state, grad, hp)
        if np.max(np.abs(delta + hp.eta * np.sign(grad))) > 1e-12:
            ok = False
    checks.append(CheckResult("adam-sign-step-reduction", ok))

    quad = ShiftedQuadratic.generate(6, 2, seed)
    theta0 = rng.normal(size=2)
    hp = HyperParams(eta=0.05)
    t1 = optimizers.run_epoch(quad, PartitionSpec.identity(1, 6), hp, theta0, Algo.ADAM)
    t2 = optimizers.run_epoch(
        quad, PartitionSpec.random(1, 6, rng), hp, theta0, Algo.ADAM
    )
    checks.append(
        CheckResult("full-batch-permutation-invariance", bool(np.array_equal(t1.points, t2.points)))
    )

    part = PartitionSpec.random(3, 2, np.random.default_rng(seed + 5))
    runs = [
        optimizers.run_epoch(
            quad, part, hp, theta0, Algo.SGDM, n_epochs=2, rng=np.random.default_rng(99)
        )
        for _ in range(2)
    ]
    checks.append(
        CheckResult("bitwise-determinism", bool(np.array_equal(runs[0].points, runs[1].points)))
    )
    return checks


def _moment_specs(dim: int, m: int):
    specs = []
    for i in range(dim):
        for j in range(dim):
            specs.append(("same_gg", permstats.MomentSpec.same_batch_grad_grad(i, j)))
            specs.append(("same_hg", permstats.MomentSpec.same_batch_hess_grad(i, j)))
            if m > 1:
                specs.append(("cross_gg", permstats.MomentSpec.cross_batch_grad_grad(i, j)))
    return specs


def moment_agreement_worst_gap(problems_with_thetas, tol: float = 1e-10):
    """Exact enumeration against closed forms over every divisor split; worst gap."""
    worst = {"gap": 0.0}
    for problem, theta in problems_with_thetas:
        n = problem.n_samples
        for m in range(1, n + 1):
            if n % m != 0:
                continue
            b = n // m
            for kind, spec in _moment_specs(problem.dim, m):
                exact = permstats.exact_moment(problem, theta, m, b, spec)
                closed = permstats.closed_form_moment(problem, theta, m, b, spec)
                gap = abs(exact.value - closed.value)
                if gap > worst["gap"]:
                    worst = {
                        "gap": gap,
                        "kind": kind,
                        "family": problem.family_id,
                        "m": m,
                        "b": b,
                    }
    return worst, worst["gap"] <= tol


def _suite_moments(seed: int) -> list[CheckResult]:
    checks = []
    rng = np.random.default_rng(seed)
    problems = [
        (ShiftedQuadratic.generate(8, 2, seed), rng.normal(size=2)),
        (RandomPSDQuadratic.generate(8, 2, seed + 1), rng.normal(size=2)),
        (RandomPSDQuadratic.generate(6, 3, seed + 2), rng.normal(size=3)),
        (Logistic2D.generate(8, seed + 3), rng.normal(size=2)),
        (ShiftedQuadratic.generate(6, 2, seed + 4), rng.normal(size=2)),
    ]
    worst, ok = moment_agreement_worst_gap(problems)
    checks.append(CheckResult("exact-vs-closed-moments", ok, worst))

    quad = RandomPSDQuadratic.generate(6, 2, seed + 5)
    theta = rng.normal(size=2)
    ok = True
    worst = 0.0
    for k, order, coords in ((0, 1, (0,)), (1, 1, (1,)), (0, 2, (0, 1)), (2, 0, ())):
        spec = permstats.MomentSpec((permstats.Factor(k, order, coords),))
        val = permstats.exact_moment(quad, theta, 3, 2, spec).value
        worst = max(worst, abs(val))
        if abs(val) > 1e-12:
            ok = False
    checks.append(CheckResult("single-noise-factor-mean-zero", ok, {"max_abs": worst}))

    base = RandomPSDQuadratic.generate(4, 2, seed + 6)
    doubled = replicated(base, 2)
    theta = rng.normal(size=2)
    spec = permstats.MomentSpec.cross_batch_grad_grad(0, 1)
    small = permstats.exact_moment(base, theta, 2, 2, spec).value
    big = permstats.exact_moment(doubled, theta, 4, 2, spec).value
    gap = abs(small * (4 - 1) - big * (8 - 1))
    checks.append(
        CheckResult(
            "cross-batch-inverse-size-decay",
            gap <= 1e-10,
            {"scaled_gap": gap, "small": small, "big": big},
        )
    )

    ok = True
    vals = []
    for k in (0, 1, 2):
        spec = permstats.MomentSpec.same_batch_grad_grad(0, 1, k=k)
        vals.append(permstats.exact_moment(quad, theta, 3, 2, spec).value)
    if max(vals) - min(vals) > 1e-12:
        ok = False
    checks.append(CheckResult("batch-index-exchangeability", ok, {"values": vals}))

    ok = True
    worst = {"gap": 0.0}
    small6 = RandomPSDQuadratic.generate(6, 2, seed + 7)
    theta6 = rng.normal(size=2)
    for m, b in ((2, 3), (3, 2), (6, 1)):
        for _, spec in _moment_specs(2, m)[:6]:
            red = permstats.exact_moment(small6, theta6, m, b, spec).value
            fulle = permstats.exact_moment_full(small6, theta6, m, b, spec).value
            gap = abs(red - fulle)
            if gap > worst["gap"]:
                worst = {"gap": gap, "m": m, "b": b}
            if gap > 1e-12:
                ok = False
    checks.append(CheckResult("reduced-enumeration-uniformity", ok, worst))
    return checks


def series_consistency_worst(
    n: int = 5000,
    n_pairs: int = 50,
    seed: int = 314,
    corrupt_constant: str | None = None,
):
    """Closed-form constants against the composed finite-n series on random betas."""
    rng = np.random.default_rng(seed)
    worst = {"gap": 0.0}
    ok = True
    for _ in range(n_pairs):
        b1, b2 = rng.uniform(0.5, 0.99, size=2)
        betas = BetaPair(float(b1), float(b2))
        cs = coefficients.constants(betas)
        closed = {
            "c1": cs.c1,
            "c2": cs.c2,
            "c3": cs.c3,
            "c4": cs.c4,
            "c5": cs.c5,
            "fb": cs.fb,
        }
        if corrupt_constant in closed:
            closed[corrupt_constant] += 1e-3
        composed = coefficients.compose_constants_from_series(betas, n)
        for name, value in closed.items():
            gap = abs(value - composed[name])
            if gap > worst["gap"]:
                worst = {"gap": gap, "constant": name, "beta1": b1, "beta2": b2}
            if gap > 1e-6:
                ok = False
    return worst, ok


def _suite_series(seed: int, corrupt_constant: str | None = None) -> list[CheckResult]:
    checks = []
    betas = BetaPair(0.8, 0.95)
    ns = [50, 100, 150, 200, 300, 400, 500]
    ok = True
    worst = {"slope": 0.0}
    for sid in SeriesId:
        errs = []
        for n in ns:
            partial, limit = coefficients.series_partial_and_limit(sid, betas, n)
            errs.append(abs(partial - limit))
        if min(errs) == 0.0:
            continue
        slope = float(np.polyfit(ns, np.log(errs), 1)[0])
        if slope >= 0.0:
            ok = False
        if slope > worst["slope"]:
            worst = {"slope": slope, "series": sid.value}
    checks.append(CheckResult("series-exponential-convergence", ok, worst))

    worst, ok = series_consistency_worst(corrupt_constant=corrupt_constant)
    checks.append(CheckResult("series-consistency", ok, worst))
    return checks


MONOTONICITY_CASES = [
    ("fix_beta1_0.9_lam_1.0", coefficients.fix_beta1(0.9), 1.0, coefficients.Direction.INCREASING),
    ("fix_beta1_0.9_lam_0.3", coefficients.fix_beta1(0.9), 0.3, coefficients.Direction.DECREASING),
    ("fix_beta2_0.999_lam_2.0", coefficients.fix_beta2(0.999), 2.0, coefficients.Direction.DECREASING),
    ("fix_beta2_0.999_lam_0.5", coefficients.fix_beta2(0.999), 0.5, coefficients.Direction.INCREASING),
    ("fix_beta1_0.99_lam_1.0", coefficients.fix_beta1(0.99), 1.0, coefficients.Direction.CONVEX_INTERIOR_MIN),
    ("diagonal_lam_0.1", coefficients.DIAGONAL, 0.1, coefficients.Direction.INCREASING),
    ("diagonal_lam_1.0", coefficients.DIAGONAL, 1.0, coefficients.Direction.INCREASING),
    ("diagonal_lam_10.0", coefficients.DIAGONAL, 10.0, coefficients.Direction.INCREASING),
]


def _suite_lemmas(seed: int) -> list[CheckResult]:
    checks = []
    report = coefficients.verify_smallness_lemma(step=1e-5)
    detail = {e.name: {"sup": e.sup, "bound": e.bound} for e in report.entries}
    checks.append(CheckResult("constant-ratio-smallness", report.passed, detail))

    ok = True
    detail = {}
    for name, mode, lam, expected in MONOTONICITY_CASES:
        got = coefficients.monotone_direction(mode, lam)
        detail[name] = got.value
        if got is not expected:
            ok = False
    checks.append(CheckResult("aggregate-coefficient-monotonicity", ok, detail))
    return checks


def _suite_closeness(seed: int) -> list[CheckResult]:
    # the scaling study runs on the pinned fixture; seed only varies elsewhere
    checks = []
    problem, partition, theta0 = closeness_fixture()
    ladder = [1e-2, 5e-3, 2.5e-3]
    for algo, hp in (
        (Algo.SGDM, HyperParams(eta=0.0, beta=0.6)),
        (Algo.ADAM, HyperParams(eta=0.0, beta1=0.9, beta2=0.9, eps=1e-6)),
    ):
        report = memoryless.closeness_scaling(
            problem, partition, hp, theta0, algo, ladder, horizon=1.0
        )
        slope_ok = 1.7 <= report.fitted_exponent <= 2.3 and not any(report.diverged)
        checks.append(
            CheckResult(
                f"eta-squared-closeness-{algo.value}",
                slope_ok,
                {"fitted_exponent": report.fitted_exponent, "max_errors": report.max_errors},
            )
        )
        ratios = [
            report.max_errors[i] / report.max_errors[i + 1]
            for i in range(len(ladder) - 1)
            if report.max_errors[i + 1] > 0
        ]
        ratio_ok = all(3.0 <= r <= 5.0 for r in ratios)
        checks.append(
            CheckResult(
                f"halving-eta-quarters-error-{algo.value}", ratio_ok, {"ratios": ratios}
            )
        )
    return checks


def _suite_memoryless(seed: int) -> list[CheckResult]:
    checks = []
    rng = np.random.default_rng(seed)

    base = RandomPSDQuadratic.generate(6, 2, seed)
    noiseless = scale_noise(base, 0.0)
    part = PartitionSpec.random(3, 2, rng)
    theta = rng.normal(size=2) + 2.0
    hp = HyperParams(eta=0.05, beta1=0.8, beta2=0.9, eps=1e-8)
    full_grad = full_loss_grad(noiseless, theta).grad
    ok = True
    worst = 0.0
    for t in range(3):
        main = memoryless.adam_main_term(noiseless, part, theta, t, hp)
        ref = full_grad / np.sqrt(full_grad**2 + hp.eps)
        gap = float(np.max(np.abs(main - ref)))
        worst = max(worst, gap)
        if gap > 1e-12:
            ok = False
    checks.append(CheckResult("zero-noise-main-term-collapse", ok, {"max_gap": worst}))

    quad = RandomPSDQuadratic.generate(6, 3, seed + 1)
    part = PartitionSpec.random(3, 2, rng)
    theta = rng.normal(size=3) + 1.5
    ok = True
    worst = 0.0
    for t in (1, 2):
        analytic = memoryless.adam_correction_term(quad, part, theta, t, hp)
        numeric = memoryless.numeric_memory_removal_correction(
            memoryless.adam_history_map(quad, part, hp), t, theta
        )
        gap = float(np.max(np.abs(analytic - numeric)))
        worst = max(worst, gap)
        if gap > 1e-6:
            ok = False
        main, corr = memoryless.sgdm_main_correction(quad, part, theta, t, HyperParams(eta=0.0, beta=0.6))
        numeric = memoryless.numeric_memory_removal_correction(
            memoryless.sgdm_history_map(quad, part, HyperParams(eta=0.0, beta=0.6)), t, theta
        )
        gap = float(np.max(np.abs(corr - numeric)))
        worst = max(worst, gap)
        if gap > 1e-6:
            ok = False
    checks.append(CheckResult("numeric-memory-removal-crosscheck", ok, {"max_gap": worst}))

    tiny = ShiftedQuadratic(np.array([[1.0, 1.0], [-1.0, 1.0]]))
    # first coordinate of the mean gradient vanishes at theta = (0, y)
    theta = np.array([0.0, 5.0])
    part = PartitionSpec.identity(2, 1)
    corr = memoryless.adam_correction_term(tiny, part, theta, 1, hp)
    checks.append(
        CheckResult(
            "finite-correction-at-degenerate-gradient",
            bool(np.all(np.isfinite(corr))),
            {"corr": corr},
        )
    )
    return checks


REMAINDER_LADDER = (0.2, 0.1, 0.05, 0.025)


def remainder_fixture(seed: int = 3):
    problem = RandomPSDQuadratic.generate(6, 3, seed, ridge=0.3)
    theta = np.array([2.0, -2.4, 2.2])
    part = PartitionSpec.identity(3, 2)
    hp = HyperParams(eta=0.0, beta1=0.6, beta2=0.7, eps=1e-8)
    return problem, part, theta, hp


def _suite_remainders(seed: int) -> list[CheckResult]:
    checks = []
    problem, part, theta, hp = remainder_fixture()
    t = part.m - 1
    ok = True
    detail = {}
    for eid in expansions.ExpansionId:
        report = expansions.remainder_order(
            eid, problem, part, theta, t, hp, REMAINDER_LADDER
        )
        if eid is expansions.ExpansionId.M:
            good = max(report.residuals) <= 1e-12
            detail[eid.value] = {"max_residual": max(report.residuals)}
        else:
            good = report.fitted_slope >= 2.7
            detail[eid.value] = {"slope": report.fitted_slope}
        if not good:
            ok = False
    checks.append(CheckResult("remainder-cubic-order", ok, detail))

    noiseless = scale_noise(problem, 0.0)
    full = full_loss_grad(noiseless, theta)
    l1g = full.l1_grad_norm_gradient()
    absg = np.abs(full.grad)
    from .weights import weight_vector

    mu = weight_vector(t, hp.beta1)
    nu = weight_vector(t, hp.beta2)
    ages = np.arange(t, -1, -1, dtype=float)
    lo = expansions.expansion_value(
        expansions.ExpansionId.L_OVER_R, noiseless, part, theta, t, hp, order=2
    )
    mp = expansions.expansion_value(
        expansions.ExpansionId.MP_OVER_R3, noiseless, part, theta, t, hp, order=2
    )
    gap = max(
        float(np.max(np.abs(lo - float(mu @ ages) * l1g / absg))),
        float(np.max(np.abs(mp - float(nu @ ages) * l1g / absg))),
    )
    checks.append(CheckResult("zero-noise-degree0-closed-sums", gap <= 1e-10, {"max_gap": gap}))

    base = RandomPSDQuadratic.generate(4, 2, seed + 1, ridge=0.3)
    theta2 = np.array([1.8, -2.1])
    hp_small = HyperParams(eta=0.0, beta1=0.6, beta2=0.7, eps=1e-8)
    hp_tiny = HyperParams(eta=0.0, beta1=0.6, beta2=0.7, eps=1e-9)
    scaled = scale_noise(base, 0.15)
    doubled = replicated(scaled, 2)
    gap_small = expansions.expectation_chain_gap(scaled, 2, 2, theta2, hp_small)
    gap_big = expansions.expectation_chain_gap(doubled, 4, 2, theta2, hp_small)
    gap_true_small = expansions.expectation_chain_gap(
        scaled, 2, 2, theta2, hp_small, use_expansion=False
    )
    gap_true_big = expansions.expectation_chain_gap(
        doubled, 4, 2, theta2, hp_tiny, use_expansion=False
    )
    ok = gap_big < gap_small and gap_true_big < gap_true_small
    checks.append(
        CheckResult(
            "expectation-chain-trend",
            ok,
            {
                "expansion_gaps": [gap_small, gap_big],
                "true_gaps": [gap_true_small, gap_true_big],
            },
        )
    )
    return checks


def _suite_expectation(seed: int) -> list[CheckResult]:
    checks = []
    problem, theta, betas, hp = expectation_fixture()

    scaled = scale_noise(problem, 0.0)
    breakdown = coefficients.assemble_expected_correction(scaled, theta, betas, 8, 1)
    noise_terms = max(
        float(np.max(np.abs(getattr(breakdown, name))))
        for name in ("mbn1", "mbn2", "mbn3", "mbn4", "mbn5")
    )
    checks.append(
        CheckResult(
            "zero-noise-assembly-collapses-to-memory-term",
            noise_terms <= 1e-12
            and float(np.max(np.abs(breakdown.total - breakdown.fb_term))) <= 1e-12,
            {"max_noise_term": noise_terms},
        )
    )

    equal = BetaPair(0.7, 0.7)
    breakdown = coefficients.assemble_expected_correction(problem, theta, equal, 8, 1)
    gaps = {
        name: float(np.max(np.abs(getattr(breakdown, name))))
        for name in ("fb_term", "mbn2", "mbn4", "mbn5")
    }
    checks.append(
        CheckResult(
            "equal-betas-kill-antisymmetric-terms",
            all(v <= 1e-12 for v in gaps.values()),
            gaps,
        )
    )

    sub = permstats.reference_expected_correction(problem, 4, 2, theta, hp, max_assignments=40)
    grads, hesses = _sample_tables(problem, theta)
    total = np.zeros(problem.dim)
    for idx, assignment in enumerate(permstats.iter_batch_assignments(8, 4, 2)):
        if idx >= 40:
            break
        g, h = permstats._assignment_batch_tensors(grads, hesses, [assignment])
        total += permstats._corrections_for_assignments(g, h, hp)[0]
    gap = float(np.max(np.abs(total / 40 - sub)))
    checks.append(CheckResult("stacked-correction-matches-reference", gap <= 1e-12, {"gap": gap}))

    residuals, slopes = expected_correction_residuals(problem, theta, betas, hp, 8, 1)
    checks.append(
        CheckResult(
            "bruteforce-vs-assembled-cubic-remainder",
            min(slopes) >= 2.5,
            {"residuals": residuals, "slopes": slopes},
        )
    )
    return checks


def _sample_tables(problem, theta):
    from .problems import per_sample_tables

    _, grads, hesses = per_sample_tables(problem, theta)
    return grads, hesses


def _suite_advisor(seed: int) -> list[CheckResult]:
    checks = []
    rng = np.random.default_rng(seed)

    ok = True
    for _ in range(20):
        n = int(rng.integers(4, 1000))
        bs = float(rng.uniform(0.5, 3 * n))
        lams = [advisor.lambda_ratio(n, b, bs) for b in range(1, n + 1)]
        if not all(a > b for a, b in zip(lams, lams[1:])):
            ok = False
    checks.append(CheckResult("lambda-strictly-decreasing-in-batch", ok))

    ok = True
    detail = {}
    exact1 = all(
        advisor.lambda_ratio(n, 1, bs) == bs and advisor.lambda_ratio(n, n, bs) == 0.0
        for n, bs in ((10, 3.5), (1000, 250.0), (17, 0.25))
    )
    for _ in range(100):
        n = int(rng.integers(10, 100_000))
        bs = float(rng.uniform(0.5, 2.0 * n))
        small, large = advisor.batch_thresholds(n, bs)
        for threshold, cut in ((small, 1.0), (large, 0.5)):
            for bi in (int(np.floor(threshold)), int(np.ceil(threshold))):
                if not 1 <= bi <= n:
                    continue
                lam = advisor.lambda_ratio(n, bi, bs)
                advice = advisor.recommend(n, bi, bs)
                if lam > 1.0 and advice.regime is not advisor.Regime.SMALL_BATCH:
                    ok = False
                    detail = {"n": n, "b": bi, "lambda": lam}
                if lam < 0.5 and advice.regime is not advisor.Regime.LARGE_BATCH:
                    ok = False
                    detail = {"n": n, "b": bi, "lambda": lam}
                if 0.5 <= lam <= 1.0 and advice.regime is not advisor.Regime.TRANSITION:
                    ok = False
                    detail = {"n": n, "b": bi, "lambda": lam}
    checks.append(
        CheckResult("regime-boundaries-match-thresholds", ok and exact1, detail)
    )

    base = RandomPSDQuadratic.generate(6, 2, seed)
    theta = rng.normal(size=2) + 1.0

    class _Shifted(RandomPSDQuadratic):
        def per_sample_value(self, p, th):
            return super().per_sample_value(p, th) + 3.7

    shifted = _Shifted(base.mats, base.shifts)
    gap = abs(
        advisor.b_simple(base, theta).b_simple - advisor.b_simple(shifted, theta).b_simple
    )
    checks.append(CheckResult("noise-scale-invariant-to-loss-offsets", gap == 0.0, {"gap": gap}))
    return checks


def _suite_cli(seed: int) -> list[CheckResult]:
    checks = []
    text = coefficients.render_coeffs_csv([0.9], [0.9, 0.99])
    lines = text.splitlines()
    header_ok = lines[1] == coefficients.COEFFS_CSV_HEADER
    checks.append(
        CheckResult("coeffs-csv-golden-header", header_ok, {"header": lines[1]})
    )
    again = coefficients.render_coeffs_csv([0.9], [0.9, 0.99])
    sweep_header_ok = sweep.SWEEP_CSV_HEADER[0] == "beta1"
    checks.append(
        CheckResult("rendering-deterministic", text == again and sweep_header_ok)
    )
    advice1 = advisor.recommend(10_000, 100, 500.0).to_json_dict()
    advice2 = advisor.recommend(10_000, 100, 500.0).to_json_dict()
    checks.append(CheckResult("regime-advice-deterministic", advice1 == advice2))
    return checks


SUITES = {
    "problems": _suite_problems,
    "optimizers": _suite_optimizers,
    "moments": _suite_moments,
    "series": _suite_series,
    "lemmas": _suite_lemmas,
    "memoryless": _suite_memoryless,
    "closeness": _suite_closeness,
    "remainders": _suite_remainders,
    "expectation": _suite_expectation,
    "advisor": _suite_advisor,
    "cli": _suite_cli,
}


def run_verify(
    only: list[str] | None = None,
    seed: int = 2024,
    corrupt_constant: str | None = None,
) -> VerifyReport:
    names = list(SUITES) if not only else only
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suites {unknown}; available: {sorted(SUITES)}")
    suites = []
    for name in names:
        start = time.perf_counter()
        if name == "series":
            checks = _suite_series(seed, corrupt_constant=corrupt_constant)
        else:
            checks = SUITES[name](seed)
        suites.append(SuiteResult(name=name, checks=checks, elapsed_s=time.perf_counter() - start))
    return VerifyReport(suites=suites)

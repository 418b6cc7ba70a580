"""Permutation expectations of mini-batch noise monomials.

Three evaluation routes with increasing reach and decreasing exactness:
exact enumeration (N <= 8), closed forms in the empirical covariance, and
seeded Monte Carlo over permutations.  The same enumeration machinery also
averages the full Adam correction term over partitions, which is the oracle
the assembled covariance expression is judged against.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .memoryless import adam_correction_term
from .optimizers import HyperParams
from .problems import (
    PartitionSpec,
    PerSampleProblem,
    empirical_covariance,
    per_sample_tables,
)
from .weights import weight_matrix, weight_vector

EXACT_ENUMERATION_LIMIT = 8
FULL_ENUMERATION_LIMIT = 6


class MomentMethod(enum.Enum):
    EXACT = "exact"
    CLOSED_FORM = "closed_form"
    MONTE_CARLO = "monte_carlo"


@dataclass(frozen=True)
class Factor:
    """One noise factor d, d_i or d_ij: (batch index, derivative order, coordinates)."""

    batch: int
    order: int
    coords: tuple[int, ...]

    def __post_init__(self):
        if self.batch < 0:
            raise ValueError("batch index must be nonnegative")
        if self.order not in (0, 1, 2):
            raise ValueError("derivative order must be 0, 1 or 2")
        if len(self.coords) != self.order:
            raise ValueError("coordinate tuple length must equal the derivative order")


@dataclass(frozen=True)
class MomentSpec:
    """A degree <= 2 monomial in noise derivatives, e.g. d_{0,i} * d_{0,j}."""

    factors: tuple[Factor, ...]

    def __post_init__(self):
        if not 1 <= len(self.factors) <= 2:
            raise ValueError("a moment spec holds one or two factors")

    @classmethod
    def same_batch_grad_grad(cls, i: int, j: int, k: int = 0) -> "MomentSpec":
        return cls((Factor(k, 1, (i,)), Factor(k, 1, (j,))))

    @classmethod
    def same_batch_hess_grad(cls, i: int, j: int, k: int = 0) -> "MomentSpec":
        """d_{k,ij} * d_{k,j}: Hessian entry times the matching gradient entry."""
        return cls((Factor(k, 2, (i, j)), Factor(k, 1, (j,))))

    @classmethod
    def cross_batch_grad_grad(cls, i: int, j: int, p: int = 0, q: int = 1) -> "MomentSpec":
        if p == q:
            raise ValueError("cross-batch spec needs two distinct batches")
        return cls((Factor(p, 1, (i,)), Factor(q, 1, (j,))))

    def referenced_batches(self) -> tuple[int, ...]:
        return tuple(sorted({f.batch for f in self.factors}))

    def to_json_dict(self) -> list:
        return [[f.batch, f.order, list(f.coords)] for f in self.factors]


@dataclass
class MomentResult:
    value: float
    method: MomentMethod
    n_perms_or_samples: int
    mc_stderr: float | None = None

    def to_json_dict(self, spec: MomentSpec, m: int, b: int) -> dict:
        return {
            "spec": spec.to_json_dict(),
            "m": m,
            "b": b,
            "method": self.method.value,
            "value": self.value,
            "stderr": self.mc_stderr,
            "n": self.n_perms_or_samples,
        }


class _NoiseTables:
    """Per-sample deviations from the full-batch mean, stacked once per point."""

    def __init__(self, problem: PerSampleProblem, theta: np.ndarray, need_hess: bool):
        values, grads, hesses = per_sample_tables(problem, theta, need_hess=need_hess)
        self.dev_values = values - values.mean()
        self.dev_grads = grads - grads.mean(axis=0)
        self.dev_hesses = hesses - hesses.mean(axis=0) if need_hess else None

    def factor_value(self, factor: Factor, batch_samples) -> float:
        idx = list(batch_samples)
        if factor.order == 0:
            return float(self.dev_values[idx].mean())
        if factor.order == 1:
            return float(self.dev_grads[idx, factor.coords[0]].mean())
        i, j = factor.coords
        return float(self.dev_hesses[idx, i, j].mean())


def _spec_needs_hess(spec: MomentSpec) -> bool:
    return any(f.order == 2 for f in spec.factors)


def _validate_mb(problem: PerSampleProblem, m: int, b: int) -> None:
    if m < 1 or b < 1:
        raise ValueError("m and b must be positive")
    if m * b != problem.n_samples:
        raise ValueError(f"m*b = {m * b} does not cover the {problem.n_samples} samples")


def _validate_spec_batches(spec: MomentSpec, m: int) -> None:
    for f in spec.factors:
        if f.batch >= m:
            raise ValueError(f"spec references batch {f.batch} but only {m} batches exist")


def _disjoint_subset_tuples(n: int, b: int, count: int):
    """Ordered tuples of `count` pairwise-disjoint b-subsets of range(n)."""

    def rec(available: tuple[int, ...], left: int):
        if left == 0:
            yield ()
            return
        for subset in itertools.combinations(available, b):
            remaining = tuple(x for x in available if x not in subset)
            for rest in rec(remaining, left - 1):
                yield (subset, *rest)

    yield from rec(tuple(range(n)), count)


def exact_moment(
    problem: PerSampleProblem,
    theta: np.ndarray,
    m: int,
    b: int,
    spec: MomentSpec,
) -> MomentResult:
    """Average the monomial over the uniform law on sample permutations.

    The value of a noise monomial depends on the permutation only through the
    unordered contents of the batches it references, and those contents are
    uniform over ordered disjoint b-subsets.  Enumerating subsets instead of
    all N! permutations changes nothing about the law (the agreement with a
    direct permutation enumeration is asserted in the test suite).
    """
    _validate_mb(problem, m, b)
    _validate_spec_batches(spec, m)
    n = problem.n_samples
    if n > EXACT_ENUMERATION_LIMIT:
        raise ValueError(
            f"exact enumeration refuses N = {n} > {EXACT_ENUMERATION_LIMIT}; use mc_moment"
        )
    if m == 1:
        return MomentResult(0.0, MomentMethod.EXACT, 1)

    tables = _NoiseTables(problem, theta, _spec_needs_hess(spec))
    batches = spec.referenced_batches()
    batch_slot = {k: slot for slot, k in enumerate(batches)}
    total = 0.0
    count = 0
    for subsets in _disjoint_subset_tuples(n, b, len(batches)):
        prod = 1.0
        for f in spec.factors:
            prod *= tables.factor_value(f, subsets[batch_slot[f.batch]])
        total += prod
        count += 1
    return MomentResult(total / count, MomentMethod.EXACT, count)


def exact_moment_full(
    problem: PerSampleProblem,
    theta: np.ndarray,
    m: int,
    b: int,
    spec: MomentSpec,
) -> MomentResult:
    """Reference average over all N! permutations; only for N <= 6 uniformity checks."""
    _validate_mb(problem, m, b)
    _validate_spec_batches(spec, m)
    n = problem.n_samples
    if n > FULL_ENUMERATION_LIMIT:
        raise ValueError(f"full enumeration limited to N <= {FULL_ENUMERATION_LIMIT}")
    tables = _NoiseTables(problem, theta, _spec_needs_hess(spec))
    total = 0.0
    count = 0
    for perm in itertools.permutations(range(n)):
        prod = 1.0
        for f in spec.factors:
            prod *= tables.factor_value(f, perm[f.batch * b : (f.batch + 1) * b])
        total += prod
        count += 1
    return MomentResult(total / count, MomentMethod.EXACT, count)


def closed_form_moment(
    problem: PerSampleProblem,
    theta: np.ndarray,
    m: int,
    b: int,
    spec: MomentSpec,
) -> MomentResult:
    """Covariance-based closed forms for the three supported monomial shapes.

    Same-batch grad-grad:   (m-1)/(mb-1) * sigma[i, j]
    Same-batch hess-grad:   (m-1)/(2(mb-1)) * d(sigma[j, j])/d theta_i
    Cross-batch grad-grad:  -sigma[i, j]/(mb-1)
    """
    _validate_mb(problem, m, b)
    _validate_spec_batches(spec, m)
    n = m * b
    cov = empirical_covariance(problem, theta)
    orders = sorted(f.order for f in spec.factors)

    if len(spec.factors) == 2 and orders == [1, 1]:
        fa, fb_ = spec.factors
        i, j = fa.coords[0], fb_.coords[0]
        if fa.batch == fb_.batch:
            value = (m - 1) / (n - 1) * cov.sigma[i, j] if m > 1 else 0.0
        else:
            value = -cov.sigma[i, j] / (n - 1)
        return MomentResult(float(value), MomentMethod.CLOSED_FORM, 0)

    if len(spec.factors) == 2 and orders == [1, 2]:
        hess_f = next(f for f in spec.factors if f.order == 2)
        grad_f = next(f for f in spec.factors if f.order == 1)
        if hess_f.batch != grad_f.batch:
            raise ValueError("hess-grad closed form requires a same-batch spec")
        i, j = hess_f.coords
        (gcoord,) = grad_f.coords
        # the gradient coordinate must match one slot of the symmetric Hessian entry
        if gcoord == j:
            other = i
        elif gcoord == i:
            other = j
        else:
            raise ValueError(
                "hess-grad closed form needs the gradient coordinate to appear in the Hessian entry"
            )
        value = (
            (m - 1) / (2.0 * (n - 1)) * cov.grad_sigma_diag[other, gcoord]
            if m > 1
            else 0.0
        )
        return MomentResult(float(value), MomentMethod.CLOSED_FORM, 0)

    raise ValueError("unsupported moment shape for the closed-form route")


def mc_moment(
    problem: PerSampleProblem,
    theta: np.ndarray,
    m: int,
    b: int,
    spec: MomentSpec,
    n_samples: int,
    seed: int,
) -> MomentResult:
    """Plain Monte Carlo over uniformly drawn permutations, deterministic given seed."""
    _validate_mb(problem, m, b)
    _validate_spec_batches(spec, m)
    if n_samples < 100:
        raise ValueError("use at least 100 Monte Carlo samples")
    if m == 1:
        return MomentResult(0.0, MomentMethod.MONTE_CARLO, n_samples, mc_stderr=0.0)
    tables = _NoiseTables(problem, theta, _spec_needs_hess(spec))
    rng = np.random.default_rng(seed)
    n = problem.n_samples
    draws = np.empty(n_samples)
    for s in range(n_samples):
        perm = rng.permutation(n)
        prod = 1.0
        for f in spec.factors:
            prod *= tables.factor_value(f, perm[f.batch * b : (f.batch + 1) * b])
        draws[s] = prod
    stderr = float(draws.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return MomentResult(float(draws.mean()), MomentMethod.MONTE_CARLO, n_samples, mc_stderr=stderr)


# ---------------------------------------------------------------------------
# Brute-force expectation of the Adam correction term
# ---------------------------------------------------------------------------


def iter_batch_assignments(n: int, m: int, b: int):
    """Ordered assignments of range(n) into m batches of b, unordered inside batches.

    Every permutation maps to exactly (b!)^m assignments, so the uniform law
    on permutations induces the uniform law here.
    """
    yield from _disjoint_subset_tuples(n, b, m)


def n_batch_assignments(n: int, m: int, b: int) -> int:
    return math.factorial(n) // math.factorial(b) ** m


def _corrections_for_assignments(
    batch_grads: np.ndarray, batch_hesses: np.ndarray, hp: HyperParams
) -> np.ndarray:
    """Adam correction at step t = m-1 for a stack of partitions at one point.

    batch_grads has shape (C, m, dim) and batch_hesses (C, m, dim, dim); the
    result is (C, dim).  This mirrors the per-partition auxiliary computation
    but runs it across the whole stack at once.
    """
    c, m, dim = batch_grads.shape
    t = m - 1
    if t == 0:
        return np.zeros((c, dim))
    mu_mat = weight_matrix(t, hp.beta1)
    nu_mat = weight_matrix(t, hp.beta2)
    m_all = np.einsum("lk,ckd->cld", mu_mat, batch_grads)
    r_all = np.sqrt(np.einsum("lk,ckd->cld", nu_mat, batch_grads**2) + hp.eps)
    ratio = m_all / r_all
    # suffix[c, k, :] = sum of ratio over levels k..t-1
    suffix = np.cumsum(ratio[:, :t][:, ::-1, :], axis=1)[:, ::-1, :]
    hs = np.einsum("ckij,cki->ckj", batch_hesses[:, :t], suffix)
    mu_t = weight_vector(t, hp.beta1)
    nu_t = weight_vector(t, hp.beta2)
    l_term = np.einsum("k,ckj->cj", mu_t[:t], hs)
    p_term = np.einsum("k,ckj->cj", nu_t[:t], batch_grads[:, :t] * hs)
    m_t = m_all[:, t]
    r_t = r_all[:, t]
    return l_term / r_t - m_t * p_term / r_t**3


def _assignment_batch_tensors(grads, hesses, assignments):
    idx = np.asarray(assignments)  # (C, m, b)
    g = grads[idx].mean(axis=2)
    h = hesses[idx].mean(axis=2)
    return g, h


def bruteforce_expected_correction(
    problem: PerSampleProblem,
    m: int,
    b: int,
    theta: np.ndarray,
    hp: HyperParams,
    method: str = "exact",
    n_samples: int | None = None,
    seed: int | None = None,
    chunk: int = 4096,
) -> np.ndarray:
    """Average the step-(m-1) Adam correction over partitions at a frozen point.

    method="exact" enumerates all distinct batch assignments (N <= 8);
    method="mc" averages over seeded random permutations.  Chunks are reduced
    in a fixed order, so results do not depend on the chunk size.
    """
    _validate_mb(problem, m, b)
    n = problem.n_samples
    _, grads, hesses = per_sample_tables(problem, theta, need_hess=True)
    total = np.zeros(problem.dim)
    count = 0

    if method == "exact":
        if n > EXACT_ENUMERATION_LIMIT:
            raise ValueError(
                f"exact enumeration refuses N = {n} > {EXACT_ENUMERATION_LIMIT}; use method='mc'"
            )
        buffer = []
        for assignment in iter_batch_assignments(n, m, b):
            buffer.append(assignment)
            if len(buffer) == chunk:
                g, h = _assignment_batch_tensors(grads, hesses, buffer)
                total += _corrections_for_assignments(g, h, hp).sum(axis=0)
                count += len(buffer)
                buffer = []
        if buffer:
            g, h = _assignment_batch_tensors(grads, hesses, buffer)
            total += _corrections_for_assignments(g, h, hp).sum(axis=0)
            count += len(buffer)
        return total / count

    if method == "mc":
        if n_samples is None or seed is None:
            raise ValueError("method='mc' needs n_samples and seed")
        rng = np.random.default_rng(seed)
        done = 0
        while done < n_samples:
            take = min(chunk, n_samples - done)
            perms = np.stack([rng.permutation(n) for _ in range(take)])
            assignment = perms.reshape(take, m, b)
            g, h = _assignment_batch_tensors(grads, hesses, assignment)
            total += _corrections_for_assignments(g, h, hp).sum(axis=0)
            done += take
        return total / n_samples

    raise ValueError(f"unknown method {method!r}, expected 'exact' or 'mc'")


def reference_expected_correction(
    problem: PerSampleProblem,
    m: int,
    b: int,
    theta: np.ndarray,
    hp: HyperParams,
    max_assignments: int | None = None,
) -> np.ndarray:
    """Slow per-partition average through the scalar correction implementation.

    Exists to pin the vectorized stack evaluation to the reference path.
    """
    _validate_mb(problem, m, b)
    n = problem.n_samples
    total = np.zeros(problem.dim)
    count = 0
    for assignment in iter_batch_assignments(n, m, b):
        perm = tuple(itertools.chain.from_iterable(assignment))
        part = PartitionSpec(m, b, perm)
        total += adam_correction_term(problem, part, theta, m - 1, hp)
        count += 1
        if max_assignments is not None and count >= max_assignments:
            break
    return total / count


def moment_records_json(records: list[dict], path) -> None:
    with open(path, "w") as fh:
        json.dump({"schema": "optbias.moments.v1", "records": records}, fh, indent=2, sort_keys=True)
        fh.write("\n")

"""Noise-degree expansions of the correction building blocks and remainder-order checks.

Each tracked quantity admits an expansion in the mini-batch noise tensors
truncated after degree 2, with remainder of cubic order.  The components here
are transcribed term by term; the degree-1 parts of the two quotient
quantities are assembled from the factor expansions by the product rule at
matching total degree (they average to zero over partitions, so they only
matter for per-realization remainder tests).  Vanishing-eps factors are taken
as exactly one and eps is held small and fixed.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .memoryless import adam_auxiliary
from .optimizers import HyperParams
from .problems import (
    PartitionSpec,
    PerSampleProblem,
    all_minibatch_noise,
    empirical_covariance,
    full_loss_grad,
    require_nondegenerate,
    scale_noise,
)
from .weights import weight_vector

GRADIENT_DOMINANCE_RATIO = 0.2


class ExpansionId(Enum):
    RINV = "rinv"
    M = "m"
    L = "l"
    P = "p"
    P_RINV = "p_rinv"
    M_RINV2 = "m_rinv2"
    L_OVER_R = "l_over_r"
    MP_OVER_R3 = "mp_over_r3"


@dataclass
class OrderFitReport:
    expansion: str
    delta_ladder: list[float]
    residuals: list[float]
    fitted_slope: float

    def to_json_dict(self) -> dict:
        return {
            "schema": "optbias.remainder.v1",
            "expansion": self.expansion,
            "delta_ladder": self.delta_ladder,
            "residuals": self.residuals,
            "fitted_slope": self.fitted_slope,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class _Ctx:
    """Everything the component formulas consume, evaluated once per point."""

    def __init__(self, problem, partition, theta, t, hp):
        if not 0 <= t < partition.m:
            raise ValueError(f"step index {t} outside the epoch 0..{partition.m - 1}")
        full = full_loss_grad(problem, theta)
        require_nondegenerate(full.grad, context="expansion evaluation")
        self.t = t
        self.g = full.grad
        self.absg = np.abs(full.grad)
        self.s = full.sign
        self.hess = full.hess
        self.l1g = full.l1_grad_norm_gradient()

        noises = all_minibatch_noise(problem, partition, theta)[: t + 1]
        self.dg = np.stack([n.grad for n in noises])  # (t+1, dim)
        self.dh = np.stack([n.hess for n in noises])  # (t+1, dim, dim)
        self.sq = self.dg**2

        self.mu = weight_vector(t, hp.beta1)
        self.nu = weight_vector(t, hp.beta2)
        self.ages = np.arange(t, -1, -1, dtype=float)
        self.mu_rows = [weight_vector(l, hp.beta1) for l in range(t)]
        self.nu_rows = [weight_vector(l, hp.beta2) for l in range(t)]

        self.A = float(self.mu @ self.ages)
        self.B = float(self.nu @ self.ages)
        self.Dnu = self.nu @ self.dg
        self.Dmu2nu = (self.mu - 2.0 * self.nu) @ self.dg
        self.NAG = (self.nu * self.ages) @ self.dg
        self.MAH = np.einsum("k,kij->ij", self.mu * self.ages, self.dh)
        self.NAH = np.einsum("k,kij->ij", self.nu * self.ages, self.dh)
        # Z[i, j] = sum_k age_k nu_k d_{k,j} d_{k,ij}
        self.Z = np.einsum("k,kij,kj->ij", self.nu * self.ages, self.dh, self.dg)

        # pair sums over p < q at level t:
        # sum (wa_p wb_q + wa_q wb_p) d_p d_q = (wa.d)(wb.d) - sum wa wb d^2
        self.pair_nn = self.Dnu**2 - (self.nu**2) @ self.sq
        Dmu = self.mu @ self.dg
        self.pair_mn = Dmu * self.Dnu - (self.mu * self.nu) @ self.sq

        if t > 0:
            self.prefix_mu = np.cumsum(self.mu)[:t]
            self.prefix_nu = np.cumsum(self.nu)[:t]
            dim = self.g.shape[0]
            w1 = np.zeros((t, dim))
            w2 = np.zeros((t, dim))
            w3 = np.zeros((t, dim))
            for l in range(t):
                mu_l = self.mu_rows[l]
                nu_l = self.nu_rows[l]
                d = self.dg[: l + 1]
                sqd = self.sq[: l + 1]
                w1[l] = (mu_l - nu_l) @ d
                w2[l] = (3.0 * nu_l**2 - nu_l - 2.0 * mu_l * nu_l) @ sqd
                pair_nn_l = (nu_l @ d) ** 2 - (nu_l**2) @ sqd
                pair_mn_l = (mu_l @ d) * (nu_l @ d) - (mu_l * nu_l) @ sqd
                w3[l] = 1.5 * pair_nn_l - pair_mn_l
            self.w1, self.w2, self.w3 = w1, w2, w3
            self.PMW1 = self.prefix_mu @ w1
            self.PMW2 = self.prefix_mu @ w2
            self.PMW3 = self.prefix_mu @ w3
            self.PNW1 = self.prefix_nu @ w1
            self.PNW2 = self.prefix_nu @ w2
            self.PNW3 = self.prefix_nu @ w3
            # cumulative outer-weighted noise tensors over k <= l
            self.mh = np.cumsum(self.mu[:t, None, None] * self.dh[:t], axis=0)
            self.nh = np.cumsum(self.nu[:t, None, None] * self.dh[:t], axis=0)
            self.ng = np.cumsum(self.nu[:t, None] * self.dg[:t], axis=0)
            self.X2m = np.einsum("lij,li->ij", self.mh, w1)
            self.X2n = np.einsum("lij,li->ij", self.nh, w1)
            # Y[i, j] = sum_l w1[l, i] * ng[l, j]
            self.Y = np.einsum("li,lj->ij", w1, self.ng)


def _zero3(dim):
    return {0: np.zeros(dim), 1: np.zeros(dim), 2: np.zeros(dim)}


def _comp_m(c: _Ctx):
    return {0: c.g.copy(), 1: c.mu @ c.dg, 2: np.zeros_like(c.g)}


def _comp_rinv(c: _Ctx):
    deg0 = 1.0 / c.absg
    deg1 = -c.s / c.g**2 * c.Dnu
    deg2 = ((3.0 * c.nu**2 - c.nu) @ c.sq) / (2.0 * c.absg**3) + 1.5 * c.pair_nn / c.absg**3
    return {0: deg0, 1: deg1, 2: deg2}


def _comp_m_rinv2(c: _Ctx):
    deg0 = c.s / c.absg
    deg1 = c.Dmu2nu / c.g**2
    deg2 = (
        c.s / c.absg**3 * ((4.0 * c.nu**2 - c.nu - 2.0 * c.mu * c.nu) @ c.sq)
        + 2.0 * c.s / c.absg**3 * (2.0 * c.pair_nn - c.pair_mn)
    )
    return {0: deg0, 1: deg1, 2: deg2}


def _comp_l(c: _Ctx):
    if c.t == 0:
        return _zero3(c.g.shape[0])
    h, s, absg = c.hess, c.s, c.absg
    deg0 = c.l1g * c.A
    deg1 = np.einsum("ij,i->j", h, c.PMW1 / absg) + np.einsum("i,ij->j", s, c.MAH)
    deg2 = (
        np.einsum("ij,i->j", h, s * c.PMW2 / (2.0 * c.g**2))
        + np.einsum("ij,i->j", c.X2m, 1.0 / absg)
        + np.einsum("ij,i->j", h, s * c.PMW3 / c.g**2)
    )
    return {0: deg0, 1: deg1, 2: deg2}


def _comp_p(c: _Ctx):
    if c.t == 0:
        return _zero3(c.g.shape[0])
    h, s, g, absg = c.hess, c.s, c.g, c.absg
    deg0 = g * c.l1g * c.B
    deg1 = (
        g * np.einsum("ij,i->j", h, c.PNW1 / absg)
        + g * np.einsum("i,ij->j", s, c.NAH)
        + c.l1g * c.NAG
    )
    deg2 = (
        g * np.einsum("ij,i->j", h, s * c.PNW2 / (2.0 * g**2))
        + g * np.einsum("ij,i->j", h, s * c.PNW3 / g**2)
        + g * np.einsum("ij,i->j", c.X2n, 1.0 / absg)
        + np.einsum("ij,ij,i->j", h, c.Y, 1.0 / absg)
        + np.einsum("i,ij->j", s, c.Z)
    )
    return {0: deg0, 1: deg1, 2: deg2}


def _comp_p_rinv(c: _Ctx):
    if c.t == 0:
        return _zero3(c.g.shape[0])
    h, s, g, absg, l1g = c.hess, c.s, c.g, c.absg, c.l1g
    deg0 = s * l1g * c.B
    deg1 = (
        s * np.einsum("ij,i->j", h, c.PNW1 / absg)
        + s * np.einsum("i,ij->j", s, c.NAH)
        + l1g / absg * c.NAG
        - l1g / absg * c.B * c.Dnu
    )
    deg2 = (
        s * l1g / (2.0 * g**2) * c.B * ((3.0 * c.nu**2 - c.nu) @ c.sq)
        + s * l1g / g**2 * c.B * 1.5 * c.pair_nn
        - (1.0 / absg) * c.Dnu * np.einsum("ij,i->j", h, c.PNW1 / absg)
        - (1.0 / absg) * c.Dnu * np.einsum("i,ij->j", s, c.NAH)
        - s * l1g / g**2 * c.NAG * c.Dnu
        + s * np.einsum("ij,i->j", h, s * c.PNW2 / (2.0 * g**2))
        + s * np.einsum("ij,i->j", h, s * c.PNW3 / g**2)
        + s * np.einsum("ij,i->j", c.X2n, 1.0 / absg)
        + (1.0 / absg) * np.einsum("ij,ij,i->j", h, c.Y, 1.0 / absg)
        + (1.0 / absg) * np.einsum("i,ij->j", s, c.Z)
    )
    return {0: deg0, 1: deg1, 2: deg2}


def _comp_l_over_r(c: _Ctx):
    dim = c.g.shape[0]
    if c.t == 0:
        out = _zero3(dim)
        return out
    comp_l = _comp_l(c)
    h, s, g, absg, l1g = c.hess, c.s, c.g, c.absg, c.l1g
    deg0 = l1g / absg * c.A
    # product rule at total degree 1: [L]_1 [1/R]_0 + [L]_0 [1/R]_1
    deg1 = comp_l[1] / absg + comp_l[0] * (-s / g**2) * c.Dnu
    deg2 = (
        (1.0 / absg) * np.einsum("ij,i->j", h, s * c.PMW2 / (2.0 * g**2))
        + (1.0 / absg) * np.einsum("ij,i->j", c.X2m, 1.0 / absg)
        + (1.0 / absg) * np.einsum("ij,i->j", h, s * c.PMW3 / g**2)
        - (s / g**2) * c.Dnu * np.einsum("ij,i->j", h, c.PMW1 / absg)
        - (s / g**2) * c.Dnu * np.einsum("i,ij->j", s, c.MAH)
        + l1g / (2.0 * absg**3) * c.A * ((3.0 * c.nu**2 - c.nu) @ c.sq)
        + l1g / absg**3 * c.A * 1.5 * c.pair_nn
    )
    return {0: deg0, 1: deg1, 2: deg2}


def _comp_mp_over_r3(c: _Ctx):
    dim = c.g.shape[0]
    if c.t == 0:
        return _zero3(dim)
    pr = _comp_p_rinv(c)
    h, s, g, absg, l1g = c.hess, c.s, c.g, c.absg, c.l1g
    deg0 = l1g / absg * c.B
    # product rule: [P/R]_1 [M/R^2]_0 + [P/R]_0 [M/R^2]_1
    deg1 = pr[1] * (s / absg) + pr[0] * c.Dmu2nu / g**2

    hp1 = np.einsum("ij,i->j", h, c.PNW1 / absg)
    snah = np.einsum("i,ij->j", s, c.NAH)
    deg2 = (
        l1g / absg**3 * c.B * ((4.0 * c.nu**2 - c.nu - 2.0 * c.mu * c.nu) @ c.sq)
        + 2.0 * l1g / absg**3 * c.B * (2.0 * c.pair_nn - c.pair_mn)
        + (s / g**2) * c.Dmu2nu * hp1
        + (s / g**2) * c.Dmu2nu * snah
        + l1g / absg**3 * c.NAG * c.Dmu2nu
        - l1g / absg**3 * c.B * c.Dnu * c.Dmu2nu
        + l1g / (2.0 * absg**3) * c.B * ((3.0 * c.nu**2 - c.nu) @ c.sq)
        + l1g / absg**3 * c.B * 1.5 * c.pair_nn
        - (s / g**2) * c.Dnu * hp1
        - (s / g**2) * c.Dnu * snah
        - l1g / absg**3 * c.NAG * c.Dnu
        + (1.0 / absg) * np.einsum("ij,i->j", h, s * c.PNW2 / (2.0 * g**2))
        + (1.0 / absg) * np.einsum("ij,i->j", h, s * c.PNW3 / g**2)
        + (1.0 / absg) * np.einsum("ij,i->j", c.X2n, 1.0 / absg)
        + (s / g**2) * np.einsum("ij,ij,i->j", h, c.Y, 1.0 / absg)
        + (s / g**2) * np.einsum("i,ij->j", s, c.Z)
    )
    return {0: deg0, 1: deg1, 2: deg2}


_COMPONENT_FNS = {
    ExpansionId.M: _comp_m,
    ExpansionId.RINV: _comp_rinv,
    ExpansionId.M_RINV2: _comp_m_rinv2,
    ExpansionId.L: _comp_l,
    ExpansionId.P: _comp_p,
    ExpansionId.P_RINV: _comp_p_rinv,
    ExpansionId.L_OVER_R: _comp_l_over_r,
    ExpansionId.MP_OVER_R3: _comp_mp_over_r3,
}


def expansion_components(
    eid: ExpansionId,
    problem: PerSampleProblem,
    partition: PartitionSpec,
    theta: np.ndarray,
    t: int,
    hp: HyperParams,
) -> dict[int, np.ndarray]:
    """Degree-0/1/2 components of the chosen quantity, one vector each."""
    ctx = _Ctx(problem, partition, theta, t, hp)
    return _COMPONENT_FNS[eid](ctx)


def expansion_value(
    eid: ExpansionId,
    problem: PerSampleProblem,
    partition: PartitionSpec,
    theta: np.ndarray,
    t: int,
    hp: HyperParams,
    order: int = 2,
) -> np.ndarray:
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    comps = expansion_components(eid, problem, partition, theta, t, hp)
    return sum(comps[d] for d in range(order + 1))


def true_value(
    eid: ExpansionId,
    problem: PerSampleProblem,
    partition: PartitionSpec,
    theta: np.ndarray,
    t: int,
    hp: HyperParams,
) -> np.ndarray:
    """The non-expanded quantity, straight from the correction auxiliaries."""
    aux = adam_auxiliary(problem, partition, theta, t, hp)
    if eid is ExpansionId.M:
        return aux.M
    if eid is ExpansionId.RINV:
        return 1.0 / aux.R
    if eid is ExpansionId.M_RINV2:
        return aux.M / aux.R**2
    if eid is ExpansionId.L:
        return aux.L_term
    if eid is ExpansionId.P:
        return aux.P
    if eid is ExpansionId.P_RINV:
        return aux.P / aux.R
    if eid is ExpansionId.L_OVER_R:
        return aux.L_term / aux.R
    return aux.M * aux.P / aux.R**3


def _dominance_ratio(problem, partition, theta, t) -> float:
    full = full_loss_grad(problem, theta)
    noises = all_minibatch_noise(problem, partition, theta)[: t + 1]
    dg = np.stack([n.grad for n in noises])
    return float(np.max(np.abs(dg) / np.abs(full.grad)))


def remainder_order(
    eid: ExpansionId,
    problem: PerSampleProblem,
    partition: PartitionSpec,
    theta: np.ndarray,
    t: int,
    hp: HyperParams,
    delta_ladder,
) -> OrderFitReport:
    """Residual of the degree-2 truncation along a noise-scale ladder, with log-log slope.

    The whole ladder must stay in the gradient-dominated region
    (componentwise noise at most GRADIENT_DOMINANCE_RATIO of the gradient).
    """
    deltas = [float(d) for d in delta_ladder]
    if any(nxt >= cur for cur, nxt in zip(deltas, deltas[1:])) or len(deltas) < 2:
        raise ValueError("delta ladder must be strictly decreasing with >= 2 entries")
    worst = _dominance_ratio(scale_noise(problem, deltas[0]), partition, theta, t)
    if worst > GRADIENT_DOMINANCE_RATIO:
        raise ValueError(
            f"ladder leaves the gradient-dominated region: max noise/gradient ratio "
            f"{worst:.3g} > {GRADIENT_DOMINANCE_RATIO}"
        )
    residuals = []
    for delta in deltas:
        scaled = scale_noise(problem, delta)
        truth = true_value(eid, scaled, partition, theta, t, hp)
        approx = expansion_value(eid, scaled, partition, theta, t, hp, order=2)
        residuals.append(float(np.max(np.abs(truth - approx))))
    finite = [(d, r) for d, r in zip(deltas, residuals) if r > 0.0]
    if len(finite) >= 2:
        slope = float(
            np.polyfit(np.log([f[0] for f in finite]), np.log([f[1] for f in finite]), 1)[0]
        )
    else:
        slope = float("nan")
    return OrderFitReport(
        expansion=eid.value,
        delta_ladder=deltas,
        residuals=residuals,
        fitted_slope=slope,
    )


# ---------------------------------------------------------------------------
# Expectation chain: averaged expansion vs the covariance-form limit
# ---------------------------------------------------------------------------


def _mp_closed_expectation(problem, theta, hp, m, b) -> np.ndarray:
    """Large-horizon covariance form of the expected second correction half.

    The published display writes its coefficients in two generic symbols; we
    read them as the second and first averaging factors respectively, which
    the series consistency checks confirm numerically.
    """
    x, y = hp.beta1, hp.beta2
    full = full_loss_grad(problem, theta)
    cov = empirical_covariance(problem, theta)
    g, s, h = full.grad, full.sign, full.hess
    absg = np.abs(g)
    l1g = full.l1_grad_norm_gradient()
    n = m * b
    w = (m - 1) / (n - 1)
    sig, dsig = cov.sigma, cov.grad_sigma_diag

    den = (1.0 - y) * (1.0 + y) ** 2 * (1.0 - x * y) ** 2
    big = (
        4 * x**2 * y**5 + 2 * x * y**5 + 3 * x**2 * y**4 - 6 * x * y**4 - 3 * y**4
        - 5 * x**2 * y**3 - 10 * x * y**3 + 3 * y**3 + 3 * x**2 * y**2 + 6 * x * y**2
        + 9 * y**2 + x**2 * y - 4 * x * y - 3 * y
    ) / den
    b_ij = (
        y * (y - x)
        * (x**2 * (y**2 - 3 * y - 1) + x * (3 * y**2 - y + 2) + 1 - 2 * y)
        / ((1 + x) * (1 + y) ** 2 * (1 - x * y) ** 2)
    )
    b_hess = (
        3 * x**2 * y**5 - x**2 * y**4 + 3 * x**2 * y**3 - x**2 * y + x * y**5
        - 8 * x * y**4 - 2 * x * y**2 + x * y + 4 * y**3 - y**2 + y
    ) / den
    b_d2 = y * (x * y**2 - x * y + x + y**2 - 2 * y) / ((1 + y) * (1 - y) * (1 - x * y))
    b_hg = y * (y - x) / ((1 + y) * (1 - x * y))

    out = y / (1.0 - y) * l1g / absg
    out = out - big * l1g / absg**3 * w * np.diag(sig)
    out = out + b_ij * (s / g**2) * np.einsum("ij,i,ij->j", h, 1.0 / absg, w * sig)
    out = out + b_hess * (s / g**2) * np.einsum("i,ij->j", s, (w / 2.0) * dsig)
    out = out + b_d2 * (1.0 / absg) * np.einsum("ij,i->j", h, s * w * np.diag(sig) / g**2)
    out = out + b_hg * (1.0 / absg) * ((w / 2.0) * np.einsum("i,ji->j", 1.0 / absg, dsig))
    return out


def _average_over_partitions(problem, m, b, fn) -> np.ndarray:
    from .permstats import iter_batch_assignments

    total = None
    count = 0
    for assignment in iter_batch_assignments(problem.n_samples, m, b):
        perm = tuple(itertools.chain.from_iterable(assignment))
        part = PartitionSpec(m, b, perm)
        val = fn(part)
        total = val if total is None else total + val
        count += 1
    return total / count


def expectation_chain_gap(
    problem: PerSampleProblem,
    m: int,
    b: int,
    theta: np.ndarray,
    hp: HyperParams,
    use_expansion: bool = True,
) -> float:
    """Max-norm gap between the partition-averaged quantity and its covariance form.

    With use_expansion the degree-2 truncation is averaged; otherwise the true
    quantity is, which additionally exposes the eps sensitivity.
    """
    t = m - 1
    if use_expansion:
        fn = lambda part: expansion_value(
            ExpansionId.MP_OVER_R3, problem, part, theta, t, hp, order=2
        )
    else:
        fn = lambda part: true_value(ExpansionId.MP_OVER_R3, problem, part, theta, t, hp)
    averaged = _average_over_partitions(problem, m, b, fn)
    closed = _mp_closed_expectation(problem, theta, hp, m, b)
    return float(np.max(np.abs(averaged - closed)))

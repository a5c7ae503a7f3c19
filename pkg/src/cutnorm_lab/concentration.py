"""Concentration statistics, pointwise inequalities and bound expressions.

This module hosts the measurable statistics of a sample (section-integral
and row-average deviations), the probability-bound evaluators (generalized
Chebyshev, the dispersion tail, the good-event probability), the pointwise
inequalities that hold almost surely and are therefore checkable per draw
(coordinate replacement, the q-subsample inequalities), and the closed-form
right-hand sides of the sampling bounds keyed by name.

Bounds are keyed by *name* (upper / lower / second / ...) rather than by a
numbered statement because the sources the formulas were assembled from
number them inconsistently; reports carry both variants where the sources
disagree (exceptional-probability exponent phi*p vs phi, and the vector
net-size exponent).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from math import comb

import numpy as np

from . import rng as _rng
from .cutnorm import cut_norm_exact, cut_norm_plus_exact
from .kernels import Kernel, SamplePoints, StepKernel, sample_matrix
from .truncation import second_lemma_threshold, truncation_l1_error_bound


class ParameterError(ValueError):
    """A bound was requested outside its admissible parameter window."""


@dataclass
class ConcentrationParams:
    """Parameter bundle for the concentration bounds.

    Constraint windows (gamma in (1/p, 1/2), phi > 0, gamma*p > 1, ...)
    are checked on demand by the evaluator that needs them, so a bundle can
    carry values only some expressions use.
    """

    p: float
    nu: float = 1.0
    gamma: float = 0.3
    phi: float = 0.1
    lam: float = 1.0
    q: int = 2

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "nu": self.nu,
            "gamma": self.gamma,
            "phi": self.phi,
            "lam": self.lam,
            "q": self.q,
        }

    @staticmethod
    def from_json(obj: dict) -> "ConcentrationParams":
        return ConcentrationParams(**obj)


@dataclass
class DeltaReport:
    """Per-coordinate deviations of section integrals and row averages."""

    delta_value: float
    per_j_section: np.ndarray
    per_j_average: np.ndarray
    l1_norm: float
    k: int

    def in_l0(self, nu: float, gamma: float) -> bool:
        """Membership in the good event {Delta <= nu k^gamma ||U||_1}."""
        return self.delta_value <= nu * self.k**gamma * self.l1_norm


def delta_U(U: Kernel, X: SamplePoints) -> DeltaReport:
    """Maximal deviation of sample section integrals and row averages.

    Coordinate j contributes |U_{X_j} - ||U||_1| and
    |sum_{i != j} |U(X_i, X_j)| / (k-1) - ||U||_1|; the statistic is the
    max over both families.
    """
    coords = X.coords
    k = X.k
    l1 = U.lp_norm(1.0)
    sections = np.abs(U.section_integral(coords) - l1)
    abs_vals = np.abs(U.eval(coords[:, None], coords[None, :]))
    np.fill_diagonal(abs_vals, 0.0)
    row_means = abs_vals.sum(axis=0) / (k - 1)
    averages = np.abs(row_means - l1)
    delta = float(max(sections.max(), averages.max()))
    return DeltaReport(
        delta_value=delta,
        per_j_section=sections,
        per_j_average=averages,
        l1_norm=l1,
        k=k,
    )


def l0_probability_bound(U: Kernel, p: float, nu: float, gamma: float, k: int) -> float:
    """Lower bound 1 - 2k 2^p ||U||_p^p / (nu^p k^(gamma p) ||U||_1^p).

    Reported raw; the value can be negative at small k.
    """
    if gamma * p <= 1:
        raise ParameterError(f"requires gamma*p > 1, got gamma*p = {gamma * p}")
    lp = U.lp_norm(p)
    l1 = U.lp_norm(1.0)
    return 1.0 - 2.0 * k * (2.0**p * lp**p) / (nu**p * k ** (gamma * p) * l1**p)


def chebyshev_bound(moment_p: float, delta: float, p: float) -> float:
    """Generalized Chebyshev tail bound min{1, 2^p m_p / delta^p}."""
    if moment_p < 0:
        raise ValueError("p-th absolute moment must be nonnegative")
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    return min(1.0, 2.0**p * moment_p / delta**p)


def replace_coordinate(X: SamplePoints, a: int, x0: float) -> SamplePoints:
    """The vector with coordinate ``a`` (0-based) replaced by ``x0``.

    The seed of the input is kept for provenance; the edited coordinate
    vector is of course no longer reproducible from it.
    """
    if not (0 <= a < X.k):
        raise IndexError(f"coordinate index {a} out of range [0, {X.k})")
    if not (0.0 <= x0 <= 1.0):
        raise ValueError(f"replacement value must lie in [0, 1], got {x0}")
    coords = X.coords.copy()
    coords[a] = x0
    return SamplePoints(k=X.k, seed=X.seed, coords=coords)


@dataclass
class InequalityCheck:
    lhs: float
    rhs: float
    holds: bool
    aux: dict = field(default_factory=dict)


_FP_SLACK = 1e-9


def replacement_inequality_check(
    U: Kernel, X: SamplePoints, a: int, x0: float, use_one_sided: bool
) -> InequalityCheck:
    """Pointwise norm-change bound under replacement of one coordinate.

    |k^2 ||sample(X)|| - k^2 ||sample(Y)|| | is at most twice the absolute
    row mass of the old and new coordinate; holds almost surely for both
    the cut norm and its one-sided version.
    """
    k = X.k
    if k > 30:
        raise ValueError("exact cut norms limit the replacement check to k <= 30")
    Y = replace_coordinate(X, a, x0)
    norm = cut_norm_plus_exact if use_one_sided else cut_norm_exact
    n_x = norm(sample_matrix(U, X.coords)).value
    n_y = norm(sample_matrix(U, Y.coords)).value
    lhs = abs(k**2 * n_x - k**2 * n_y)
    others = np.delete(X.coords, a)
    rhs = 2.0 * float(np.abs(U.eval(x0, others)).sum()) + 2.0 * float(
        np.abs(U.eval(X.coords[a], others)).sum()
    )
    return InequalityCheck(lhs=lhs, rhs=rhs, holds=lhs <= rhs + _FP_SLACK)


def azuma_alpha(U: Kernel, k: int, nu: float, gamma: float) -> float:
    """Martingale-difference cap (6/k) ||U||_1 (1 + nu k^gamma)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return 6.0 / k * U.lp_norm(1.0) * (1.0 + nu * k**gamma)


def dispersion_tail_bound(
    U: Kernel, params: ConcentrationParams, k: int
) -> tuple[float, float]:
    """Deviation threshold lambda*alpha*sqrt(k) and its probability bound.

    The probability is 2 e^(-2 lambda^2) plus the complement bound of the
    good event.
    """
    p, nu, gamma, lam = params.p, params.nu, params.gamma, params.lam
    if gamma * p <= 1:
        raise ParameterError(f"requires gamma*p > 1, got gamma*p = {gamma * p}")
    alpha = azuma_alpha(U, k, nu, gamma)
    threshold = lam * alpha * math.sqrt(k)
    lp = U.lp_norm(p)
    l1 = U.lp_norm(1.0)
    tail = 2.0 * k * min(1.0, (2.0**p * lp**p) / (nu**p * k ** (gamma * p) * l1**p))
    prob = 2.0 * math.exp(-2.0 * lam**2) + tail
    return threshold, prob


# ---------------------------------------------------------------------------
# q-subsample machinery
# ---------------------------------------------------------------------------


def _as_index_array(subset, n: int) -> np.ndarray:
    idx = np.asarray(sorted(int(i) for i in subset), dtype=int)
    if len(idx) and (idx[0] < 0 or idx[-1] >= n):
        raise IndexError(f"subset indices out of range [0, {n})")
    return idx


def rplus_sets(W: StepKernel, R1, R2) -> tuple[tuple, tuple]:
    """Strictly-positive selection sets.

    R1_plus collects the columns whose sum over the rows R1 is positive;
    R2_plus collects the rows whose sum over the columns R2 is positive.
    Zero sums join neither set.
    """
    V = W.values
    r1 = _as_index_array(R1, W.n)
    r2 = _as_index_array(R2, W.n)
    col = V[r1, :].sum(axis=0) if len(r1) else np.zeros(W.n)
    row = V[:, r2].sum(axis=1) if len(r2) else np.zeros(W.n)
    r1_plus = tuple(int(j) for j in np.nonzero(col > 0.0)[0])
    r2_plus = tuple(int(i) for i in np.nonzero(row > 0.0)[0])
    return r1_plus, r2_plus


def _rect_sum(V: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> float:
    if len(rows) == 0 or len(cols) == 0:
        return 0.0
    return float(V[np.ix_(rows, cols)].sum())


MAX_EXACT_SUBSETS = 10**6
_MC_SUBSETS = 10**4


@dataclass
class SubsampleCheck(InequalityCheck):
    exact: bool = True
    stderr: float | None = None


def bs12_check(W: StepKernel, R1, R2, q: int, seed: int = 0) -> SubsampleCheck:
    """Rectangle sum vs the q-subsample row-selection average.

    W(R1, R2) <= E_Q[ W((Q cap R2)^+, R2) ] + (k^2 / sqrt(q)) ||W||_2 with
    Q a uniform random q-subset of the index set.  The expectation is exact
    by enumeration when C(k, q) is small, otherwise Monte Carlo with a
    reported standard error.
    """
    k = W.n
    if not (1 <= q <= k):
        raise ValueError(f"q must be in [1, k], got {q}")
    V = W.values
    r1 = _as_index_array(R1, k)
    r2 = _as_index_array(R2, k)
    lhs = _rect_sum(V, r1, r2)
    r2_mask = np.zeros(k, dtype=bool)
    r2_mask[r2] = True

    def term(Q: np.ndarray) -> float:
        inter = Q[r2_mask[Q]]
        if len(inter) == 0:
            return 0.0
        cols = V[inter, :].sum(axis=0)
        rows_plus = np.nonzero(cols > 0.0)[0]
        return _rect_sum(V, rows_plus, r2)

    exact = comb(k, q) <= MAX_EXACT_SUBSETS
    if exact:
        terms = [term(np.asarray(Q)) for Q in itertools.combinations(range(k), q)]
        stderr = None
    else:
        gen = _rng.stream(seed, "bs12-mc")
        terms = [term(gen.choice(k, size=q, replace=False)) for _ in range(_MC_SUBSETS)]
        stderr = float(np.std(terms, ddof=1) / math.sqrt(len(terms)))
    expectation = float(np.mean(terms))
    rhs = expectation + k**2 / math.sqrt(q) * W.l2_norm()
    return SubsampleCheck(
        lhs=lhs,
        rhs=rhs,
        holds=lhs <= rhs + _FP_SLACK,
        aux={"expectation": expectation},
        exact=exact,
        stderr=stderr,
    )


def _subsets_upto(k: int, q: int):
    """All subsets of [k] with size <= q, as index arrays."""
    out = []
    for size in range(q + 1):
        out.extend(np.asarray(c, dtype=int) for c in itertools.combinations(range(k), size))
    return out


def bplus_upper_check(W: StepKernel, q: int) -> SubsampleCheck:
    """One-sided cut norm vs the doubly-averaged q-subsample maximum.

    ||W||^+_cut <= (1/k^2) E_{Q1,Q2}[ max_{R_i subset Q_i} W(R2^+, R1^+) ]
    + (2/sqrt(q)) ||W||_2, exact by enumerating both q-subsets and all
    rectangle choices inside them.
    """
    k = W.n
    if not (1 <= q <= k):
        raise ValueError(f"q must be in [1, k], got {q}")
    if k > 14 or comb(k, q) ** 2 > MAX_EXACT_SUBSETS:
        raise ValueError("exact double expectation needs k <= 14 and C(k,q)^2 <= 1e6")
    V = W.values
    lhs = cut_norm_plus_exact(W).value

    subsets = _subsets_upto(k, q)
    subset_id = {tuple(s.tolist()): i for i, s in enumerate(subsets)}
    # value table over all (R1, R2) pairs of small subsets
    col_plus = []
    row_plus = []
    for s in subsets:
        cols = V[s, :].sum(axis=0) if len(s) else np.zeros(k)
        rows = V[:, s].sum(axis=1) if len(s) else np.zeros(k)
        col_plus.append(cols > 0.0)  # R1 -> columns selected
        row_plus.append(rows > 0.0)  # R2 -> rows selected
    sel_cols = np.array(col_plus, dtype=float)
    sel_rows = np.array(row_plus, dtype=float)
    table = (sel_rows @ V @ sel_cols.T).T  # [R1 index, R2 index]

    qsets = list(itertools.combinations(range(k), q))
    ids = np.zeros((len(qsets), 1 << q), dtype=int)
    for qi, Q in enumerate(qsets):
        members = list(
            itertools.chain.from_iterable(
                itertools.combinations(Q, size) for size in range(q + 1)
            )
        )
        ids[qi] = [subset_id[tuple(c)] for c in members]

    # max over R1 in Q1, R2 in Q2, then average over the Q pairs
    gathered = table[ids[:, None, :, None], ids[None, :, None, :]]
    expectation = float(gathered.max(axis=(2, 3)).mean())
    rhs = expectation / k**2 + 2.0 / math.sqrt(q) * W.l2_norm()
    return SubsampleCheck(
        lhs=lhs,
        rhs=rhs,
        holds=lhs <= rhs + _FP_SLACK,
        aux={"expectation": expectation / k**2},
        exact=True,
        stderr=None,
    )


@dataclass
class FrobeniusCheck:
    empirical_mean_sq: float
    target: float
    z_score: float
    stderr: float
    trials: int


def frobenius_check(U: Kernel, k: int, trials: int, seed: int = 0) -> FrobeniusCheck:
    """Monte Carlo mean of ||sample||_2^2 against ((k-1)/k) ||U||_2^2."""
    if trials < 100:
        raise ValueError(f"need at least 100 trials, got {trials}")
    target = (k - 1) / k * U.lp_norm(2.0) ** 2
    values = np.empty(trials)
    for t in range(trials):
        gen = _rng.stream(seed, "frobenius", t)
        coords = gen.random(k)
        vals = U.eval(coords[:, None], coords[None, :])
        np.fill_diagonal(vals, 0.0)
        values[t] = np.mean(vals**2)
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(trials))
    z = (mean - target) / stderr if stderr > 0 else 0.0
    return FrobeniusCheck(
        empirical_mean_sq=mean, target=target, z_score=float(z), stderr=stderr, trials=trials
    )


# ---------------------------------------------------------------------------
# closed-form bound expressions, keyed by name
# ---------------------------------------------------------------------------


@dataclass
class BoundValue:
    """A bound's right-hand side, its probability guarantee, and extras."""

    value: float
    probability: float | None
    aux: dict = field(default_factory=dict)


def _require(cond: bool, message: str):
    if not cond:
        raise ParameterError(message)


def _first_upper(l1, lp, p, phi, k, nu=None):
    _require(phi > 0, "upper bound requires phi > 0")
    _require(p > 2, "upper bound requires p > 2")
    lead = 30.0 * lp
    if nu is None:
        coeff = l1 + 2.0 * lp
        prob = 1.0 - 3.0 * k ** (-phi * p)
    else:
        _require(nu > 0, "upper bound requires nu > 0")
        coeff = (1.0 + nu) * l1
        prob = 1.0 - (2.0 + 2.0**p * lp**p / (nu**p * l1**p)) * k ** (-phi * p)
    drift = 6.0 * math.sqrt(phi * p / 2.0) * coeff * math.sqrt(math.log(k)) / k ** (
        (p - 3.0) / (4.0 * p) - phi
    )
    value = (lead + drift) * k ** (-0.25 + 1.0 / (4.0 * p))
    return value, prob, {"lead_term": lead * k ** (-0.25 + 1.0 / (4.0 * p))}


def _first_lower(lcut, l1, lp, p, gamma, k, nu=None):
    _require(p > 2, "lower bound requires p > 2")
    _require(1.0 / p < gamma < 0.5, "lower bound requires gamma in (1/p, 1/2)")
    if nu is None:
        coeff = l1 + 2.0 * lp
        prob = 1.0 - 3.0 * k ** (1.0 - gamma * p)
    else:
        _require(nu > 0, "lower bound requires nu > 0")
        coeff = (1.0 + nu) * l1
        prob = 1.0 - (2.0 + 2.0**p * lp**p / (nu**p * l1**p)) * k ** (1.0 - gamma * p)
    value = (
        (lcut + math.sqrt(18.0 * (gamma * p - 1.0)) * coeff)
        * k ** (-0.5 + gamma)
        * math.sqrt(math.log(k))
    )
    return value, prob, {}


def _second_chain(U: Kernel, p: float, phi: float, k: int):
    """Four-term distance bound at threshold 3 ||U||_p (ln k)^(1/(2p)).

    The explicit constant is reconstructed by evaluating the proof chain:
    twice the truncation L1 charge, the expected-norm drift of the clamped
    residue, the dispersion drift, and the bounded-kernel distance term
    20 f(k) / sqrt(log2 k).
    """
    _require(p > 2, "distance bound requires p > 2")
    _require(0 < phi < 0.5 - 1.0 / p, "distance bound requires phi in (0, 1/2 - 1/p)")
    l1 = U.lp_norm(1.0)
    lp = U.lp_norm(p)
    f_k = second_lemma_threshold(U, p, k)
    t1 = 2.0 * truncation_l1_error_bound(U, p, f_k)
    t2 = 30.0 * lp * k ** (-0.25 + 1.0 / (4.0 * p))
    t3 = (
        6.0
        * math.sqrt(phi * p / 2.0)
        * (l1 + 2.0 * lp)
        * math.sqrt(math.log(k))
        * k ** (-0.5 + 1.0 / p + phi)
    )
    t4 = 20.0 * f_k / math.sqrt(math.log2(k))
    value = t1 + t2 + t3 + t4
    prob = 1.0 - math.exp(-(k**2) / (2.0 * math.log2(k))) - 3.0 * k ** (-phi * p)
    prob_stated = 1.0 - math.exp(-(k**2) / (2.0 * math.log2(k))) - 3.0 * k ** (-phi)
    rate = math.log(k) ** (-0.5 + 1.0 / (2.0 * p))
    aux = {
        "truncation_term": t1,
        "systematic_term": t2,
        "dispersion_term": t3,
        "bounded_distance_term": t4,
        "threshold": f_k,
        "implied_C": value / rate / (l1 + lp),
        "probability_phi_exponent_variant": prob_stated,
    }
    return value, prob, aux


def _appendix_max_expect(lplus, l1, lp, p, gamma, q, k):
    _require(p >= 2, "max-expectation bound requires p >= 2")
    _require(gamma > 0, "max-expectation bound requires gamma > 0")
    _require(1 <= q <= k, "max-expectation bound requires q in [1, k]")
    _require(2 * p > 3, "max-expectation bound requires 2p > 3")
    kappa_term = 1.0 + k ** (1.0 - gamma * p) * 3.0 * 2.0 ** (p + 1.0) * lp**p / (
        l1**p * (2.0 * p - 3.0)
    )
    value = (
        (k - q) ** 2 * lplus
        + 4.0 * (k + q) * q * l1
        + 4.0
        * k**gamma
        * (k - 1.0)
        * math.sqrt(k * math.log(k))
        * l1
        * math.sqrt(q * p * (gamma + 3.0) / 2.0)
        * kappa_term
    )
    return value, None, {"kappa_term": kappa_term}


def _appendix_q_sample(l1, l2, lp, p, k):
    """Per-side systematic-error bound with the canonical gamma and q.

    Composition of the max-expectation bound (normalized by k^2, dropping
    its nonpositive (k-q)^2/k^2 - 1 leading difference) with the Frobenius
    term at gamma = 1/p and q = ceil(k^(1/2-1/p) / sqrt(ln k)).
    """
    _require(p > 2, "q-sample bound requires p > 2")
    gamma = 1.0 / p
    q = max(1, math.ceil(k ** (0.5 - 1.0 / p) / math.sqrt(math.log(k))))
    q = min(q, k)
    kappa_term = 1.0 + k ** (1.0 - gamma * p) * 3.0 * 2.0 ** (p + 1.0) * lp**p / (
        l1**p * (2.0 * p - 3.0)
    )
    mid = (
        4.0
        * k**gamma
        * (k - 1.0)
        * math.sqrt(k * math.log(k))
        * l1
        * math.sqrt(q * p * (gamma + 3.0) / 2.0)
        * kappa_term
        / k**2
    )
    edges = 4.0 * (k + q) * q * l1 / k**2
    frob = 2.0 / math.sqrt(q) * math.sqrt((k - 1.0) / k) * l2
    value = edges + mid + frob
    rate = k ** (-0.25 + 1.0 / (2.0 * p)) * math.log(k) ** 0.25
    return value, None, {"q": q, "gamma": gamma, "implied_C": value / rate}


def theorem_bound(
    expr_id: str, U: Kernel, params: ConcentrationParams, k: int
) -> BoundValue:
    """Evaluate a named closed-form bound expression for kernel U at size k.

    Known ids: first_upper, first_upper_param, first_lower,
    first_lower_param, second, second_bounded, systematic_upper,
    systematic_lower, appendix_max_expect, appendix_q_sample.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    p = params.p
    l1 = U.lp_norm(1.0)

    if expr_id == "first_upper":
        value, prob, aux = _first_upper(l1, U.lp_norm(p), p, params.phi, k)
        return BoundValue(value, prob, aux)
    if expr_id == "first_upper_param":
        value, prob, aux = _first_upper(l1, U.lp_norm(p), p, params.phi, k, nu=params.nu)
        return BoundValue(value, prob, aux)
    if expr_id == "first_lower":
        lcut = U.cut_norm_reference().value
        value, prob, aux = _first_lower(lcut, l1, U.lp_norm(p), p, params.gamma, k)
        return BoundValue(value, prob, aux)
    if expr_id == "first_lower_param":
        lcut = U.cut_norm_reference().value
        value, prob, aux = _first_lower(
            lcut, l1, U.lp_norm(p), p, params.gamma, k, nu=params.nu
        )
        return BoundValue(value, prob, aux)
    if expr_id == "second":
        value, prob, aux = _second_chain(U, p, params.phi, k)
        return BoundValue(value, prob, aux)
    if expr_id == "second_bounded":
        linf = U.linf_norm()
        _require(math.isfinite(linf), "bounded distance term requires a bounded kernel")
        value = 20.0 / math.sqrt(math.log2(k)) * linf
        prob = 1.0 - math.exp(-(k**2) / (2.0 * math.log2(k)))
        return BoundValue(value, prob, {})
    if expr_id == "systematic_upper":
        _require(p >= 1, "systematic upper bound requires p >= 1")
        value = 30.0 * U.lp_norm(p) * k ** (-0.25 + 1.0 / (4.0 * p))
        return BoundValue(value, None, {})
    if expr_id == "systematic_lower":
        value = (k - 1.0) / k * U.cut_norm_reference().value
        return BoundValue(value, None, {})
    if expr_id == "appendix_max_expect":
        lplus = U.cut_norm_plus_reference().value
        value, prob, aux = _appendix_max_expect(
            lplus, l1, U.lp_norm(p), p, params.gamma, params.q, k
        )
        return BoundValue(value, prob, aux)
    if expr_id == "appendix_q_sample":
        value, prob, aux = _appendix_q_sample(l1, U.lp_norm(2.0), U.lp_norm(p), p, k)
        return BoundValue(value, prob, aux)
    raise ValueError(f"unknown bound expression: {expr_id!r}")

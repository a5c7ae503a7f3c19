import itertools
import math

import numpy as np
import pytest
from scipy import integrate

from conftest import random_symmetric
from cutnorm_lab.cutdist import (
    AnnealBudget,
    _best_permutation_one_direction,
    blowup,
    cut_distance_lower,
    cut_distance_upper,
    discretize_kernel,
)
from cutnorm_lab.cutnorm import cut_norm_exact
from cutnorm_lab.kernels import (
    Checkerboard,
    KernelError,
    PowCorner,
    SignedPow,
    StepKernel,
    StepSpec,
    TruncatedKernel,
    draw_sample,
)


def step(mat, zero_diag=False):
    mat = np.asarray(mat, dtype=float)
    return StepKernel(len(mat), mat, zero_diagonal=zero_diag)


# --- blow-up ----------------------------------------------------------------


def test_blowup_identity(rng):
    W = step(random_symmetric(rng, 4))
    assert np.array_equal(blowup(W, 1).values, W.values)


def test_blowup_preserves_cut_norm_and_l1(rng):
    W = step(random_symmetric(rng, 5))
    W3 = blowup(W, 3)
    assert W3.n == 15
    assert cut_norm_exact(W3).value == pytest.approx(cut_norm_exact(W).value, rel=1e-12)
    assert W3.l1_norm() == pytest.approx(W.l1_norm(), rel=1e-14)


def test_blowup_guard():
    with pytest.raises(ValueError):
        blowup(step(np.zeros((10, 10))), 500)


# --- distance upper estimator -----------------------------------------------


def test_recovers_permutation_exactly(rng):
    W = step(random_symmetric(rng, 6))
    perm = rng.permutation(6)
    est = cut_distance_upper(W, W.permute(perm), seed=1)
    assert est.method == "exact-perm"
    assert est.upper == 0.0
    assert est.lower == 0.0


def test_self_distance_zero(rng):
    W = step(random_symmetric(rng, 5))
    est = cut_distance_upper(W, W, seed=2)
    assert est.upper == 0.0


def test_upper_at_least_lower_and_cross_check(rng):
    _, A = draw_sample(PowCorner(0.2, 1.0), 8, seed=101)
    _, B = draw_sample(PowCorner(0.2, 1.0), 8, seed=202)
    est = cut_distance_upper(A, B, seed=3)
    assert est.upper >= est.lower >= 0.0
    assert math.isfinite(est.upper)
    # oracle: exhaustive permutation search evaluated independently
    best = min(
        cut_norm_exact(step(A.values - B.values[np.ix_(p, p)])).value
        for p in itertools.permutations(range(8))
    )
    assert est.upper == pytest.approx(best, abs=1e-12)


def test_symmetry_of_upper(rng):
    A = step(random_symmetric(rng, 4))
    B = step(random_symmetric(rng, 6))
    ab = cut_distance_upper(A, B, seed=7)
    ba = cut_distance_upper(B, A, seed=7)
    assert ab.upper == pytest.approx(ba.upper, abs=1e-12)
    assert ab.blowup_size == ba.blowup_size == 12


def test_annealed_never_beats_exact(rng, monkeypatch):
    # force the annealing machinery onto instances the exact search covers
    import cutnorm_lab.cutdist as cd

    budget = AnnealBudget(sweeps=6, proposals_per_block=40, restarts=3)
    for trial in range(5):
        A = step(random_symmetric(rng, 6))
        B = step(random_symmetric(rng, 6))
        exact_val, _, method = _best_permutation_one_direction(A, B, budget, seed=trial)
        assert method == "exact-perm"
        monkeypatch.setattr(cd, "MAX_EXACT_PERM_N", 0)
        annealed_val, _, method2 = _best_permutation_one_direction(A, B, budget, seed=trial)
        monkeypatch.setattr(cd, "MAX_EXACT_PERM_N", 8)
        assert method2 == "annealed"
        assert annealed_val >= exact_val - 1e-12


def test_permuted_distance_zero_for_all_small_perms(rng):
    W = step(random_symmetric(rng, 4))
    for perm in itertools.permutations(range(4)):
        est = cut_distance_upper(W, W.permute(np.array(perm)), seed=5)
        assert est.upper == 0.0


def test_blowup_cap_enforced(rng):
    A = step(random_symmetric(rng, 17))
    B = step(random_symmetric(rng, 16))
    with pytest.raises(ValueError):
        cut_distance_upper(A, B, seed=0)  # lcm = 272 > 128


# --- distance lower estimator -----------------------------------------------


def test_lower_self_and_zero(rng):
    W = step(random_symmetric(rng, 5))
    assert cut_distance_lower(W, W) == 0.0
    Z = step(np.zeros((5, 5)))
    assert cut_distance_lower(W, Z) == pytest.approx(cut_norm_exact(W).value, abs=1e-15)


def test_lower_checkerboard_pair():
    A = step(Checkerboard(2, 1.0).step_matrix())
    B = step(Checkerboard(2, 2.0).step_matrix())
    assert cut_distance_lower(A, B) == pytest.approx(0.25, abs=1e-14)


def test_lower_heuristic_regime_returns_zero(rng):
    big = step(random_symmetric(rng, 32))
    small = step(random_symmetric(rng, 4))
    assert cut_distance_lower(big, small) == 0.0


# --- discretization ---------------------------------------------------------


def test_discretize_step_family_self_refinement():
    spec = StepSpec.from_matrix([[1.0, -1.0], [-1.0, 0.5]])
    stepk, err = discretize_kernel(spec, 2)
    assert err == 0.0
    assert np.allclose(stepk.values, spec.matrix())
    refined, err4 = discretize_kernel(spec, 4)
    assert err4 == 0.0
    assert np.allclose(refined.values, blowup(stepk, 2).values)


def test_discretize_checkerboard_refinement():
    stepk, err = discretize_kernel(Checkerboard(2, 1.5), 4)
    assert err == 0.0
    mids = (np.arange(4) + 0.5) / 4
    expected = Checkerboard(2, 1.5).eval(mids[:, None], mids[None, :])
    assert np.allclose(stepk.values, expected)


def test_discretize_pow_block_means_match_quadrature():
    U = PowCorner(0.2, 1.0)
    stepk, err = discretize_kernel(U, 16)
    for (i, j) in ((0, 0), (3, 11), (15, 15)):
        val, _ = integrate.dblquad(
            lambda x, y: U.eval(x, y),
            i / 16, (i + 1) / 16, j / 16, (j + 1) / 16,
            epsabs=1e-12, epsrel=1e-12,
        )
        assert stepk.values[j, i] == pytest.approx(val * 256.0, rel=1e-6)
    assert err > 0.0


def test_discretize_pow_error_bound_valid():
    # certified bound must dominate a fine-grid estimate of the true L1 gap
    U = PowCorner(0.2, 1.0)
    for m in (4, 8, 16):
        stepk, err = discretize_kernel(U, m)
        xs = (np.arange(600) + 0.5) / 600
        idx = np.minimum((xs * m).astype(int), m - 1)
        approx = stepk.values[np.ix_(idx, idx)]
        exact = U.eval(xs[:, None], xs[None, :])
        sampled = float(np.mean(np.abs(exact - approx)))
        assert sampled <= err
    # refinement shrinks the certified bound
    errs = [discretize_kernel(U, m)[1] for m in (4, 8, 16, 32)]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_discretize_signed_block_profile_vs_quadrature():
    S = SignedPow(0.3, 1.5)
    stepk, err = discretize_kernel(S, 5)
    # straddling block and an off block, cross-checked by quadrature
    for (i, j) in ((2, 2), (0, 3)):
        val, _ = integrate.dblquad(
            lambda x, y: S.eval(x, y),
            i / 5, (i + 1) / 5, j / 5, (j + 1) / 5,
            epsabs=1e-12, epsrel=1e-12,
        )
        assert stepk.values[j, i] == pytest.approx(val * 25.0, rel=1e-9, abs=1e-12)
    assert err > 0.0


def test_discretize_truncated_unsupported():
    T = TruncatedKernel(PowCorner(0.2, 1.0), 2.0)
    with pytest.raises(KernelError):
        discretize_kernel(T, 4)


def test_distance_estimate_serialization(rng):
    W = step(random_symmetric(rng, 4))
    est = cut_distance_upper(W, W.permute(rng.permutation(4)), seed=1)
    blob = est.to_json()
    assert blob["upper"] == 0.0
    assert sorted(blob["permutation_witness"]) == [0, 1, 2, 3]

import json
import math

import numpy as np
import pytest

from cutnorm_lab.kernels import (
    Checkerboard,
    DomainError,
    IntegrabilityError,
    KernelError,
    PowCorner,
    SamplePoints,
    SignedPow,
    StepKernel,
    StepSpec,
    TruncatedKernel,
    draw_sample,
    kernel_from_json,
    lp_norm_quad,
    sample_matrix,
    section_integral_quad,
)

QUAD_RTOL = 1e-7


def catalog():
    return [
        PowCorner(0.2, 1.0),
        PowCorner(0.35, 0.7),
        SignedPow(0.2, 1.0),
        SignedPow(0.3, 2.0),
        Checkerboard(2, 1.0),
        Checkerboard(3, 0.5),
        StepSpec.from_matrix([[1.0, -2.0], [-2.0, 0.5]]),
    ]


# --- eval -------------------------------------------------------------------


def test_pow_corner_eval_at_origin():
    assert PowCorner(0.2, 1.0).eval(0.0, 0.0) == 1.0


def test_checkerboard_opposite_blocks():
    assert Checkerboard(2, 1.0).eval(0.1, 0.9) == -1.0


def test_signed_pow_eval_closed_form():
    # independent scalar evaluator for the same formula
    def reference(x, y, alpha, c):
        s = (1.0 if x < 0.5 else -1.0) * (1.0 if y < 0.5 else -1.0)
        return c * s * math.exp(-alpha * (math.log(1.0 - x) + math.log(1.0 - y)))

    val = SignedPow(0.25, 2.0).eval(0.25, 0.75)
    assert val == pytest.approx(-2.0 * (0.75 * 0.25) ** (-0.25), rel=1e-14)
    assert val == pytest.approx(reference(0.25, 0.75, 0.25, 2.0), rel=1e-12)


def test_eval_symmetry(rng):
    for U in catalog():
        xs = rng.random(20) * 0.99
        ys = rng.random(20) * 0.99
        assert np.array_equal(U.eval(xs, ys), U.eval(ys, xs))


def test_eval_domain_errors():
    U = PowCorner(0.2, 1.0)
    with pytest.raises(DomainError):
        U.eval(-0.1, 0.5)
    with pytest.raises(DomainError):
        U.eval(0.5, 1.5)
    with pytest.raises(DomainError):
        U.eval(1.0, 0.5)  # singular boundary


def test_spec_validation():
    with pytest.raises(KernelError):
        PowCorner(1.0, 1.0)
    with pytest.raises(KernelError):
        PowCorner(0.2, -1.0)
    with pytest.raises(KernelError):
        StepSpec.from_matrix([[1.0, 2.0], [3.0, 4.0]])


# --- L^p norms --------------------------------------------------------------


def test_pow_corner_lp_closed_form_vs_quadrature():
    U = PowCorner(0.2, 1.0)
    assert U.lp_norm(1.0) == pytest.approx(1.5625, rel=1e-14)
    for p in (1.0, 2.0, 3.0, 4.0):
        assert U.lp_norm(p) == pytest.approx(1.0 * (1 - 0.2 * p) ** (-2.0 / p), rel=1e-14)
        assert U.lp_norm(p) == pytest.approx(lp_norm_quad(U, p, tol=1e-9), rel=QUAD_RTOL)


def test_lp_norm_quadrature_grid():
    # every catalog kernel, every integrable p on a small grid
    for U in catalog():
        for p in (1.0, 1.5, 2.5):
            if isinstance(U, (PowCorner, SignedPow)) and U.alpha * p >= 1:
                continue
            assert U.lp_norm(p) == pytest.approx(lp_norm_quad(U, p, tol=1e-9), rel=QUAD_RTOL)


def test_checkerboard_lp_is_c():
    for p in (1.0, 2.0, 7.0):
        assert Checkerboard(4, 0.75).lp_norm(p) == 0.75


def test_integrability_rejection():
    U = PowCorner(0.25, 1.0)
    with pytest.raises(IntegrabilityError):
        U.lp_norm(4.0)  # alpha * p = 1
    with pytest.raises(IntegrabilityError):
        SignedPow(0.5, 1.0).lp_norm(2.0)


# --- section integrals ------------------------------------------------------


def test_section_integral_closed_forms():
    U = PowCorner(0.3, 1.2)
    S = SignedPow(0.3, 1.2)
    for x in (0.1, 0.5, 0.9):
        expected = 1.2 * (1 - x) ** (-0.3) / 0.7
        assert U.section_integral(x) == pytest.approx(expected, rel=1e-14)
        assert S.section_integral(x) == pytest.approx(expected, rel=1e-14)
        assert U.section_integral(x) == pytest.approx(
            section_integral_quad(U, x), rel=QUAD_RTOL
        )
    assert Checkerboard(3, 0.5).section_integral(0.37) == 0.5


# --- cut norm references ----------------------------------------------------


def test_cut_norm_reference_pow_corner():
    ref = PowCorner(0.2, 1.0).cut_norm_reference()
    assert ref.value == pytest.approx(1.5625, rel=1e-14)
    assert ref.method == "analytic"


def test_cut_norm_reference_checkerboard_brute_force():
    # oracle: all 16 block-rectangle pairs of the 2x2 step kernel
    mat = Checkerboard(2, 1.0).step_matrix()
    best = 0.0
    for s_mask in range(4):
        for t_mask in range(4):
            rows = [i for i in range(2) if (s_mask >> i) & 1]
            cols = [j for j in range(2) if (t_mask >> j) & 1]
            total = sum(mat[i, j] for i in rows for j in cols)
            best = max(best, abs(total) / 4.0)
    ref = Checkerboard(2, 1.0).cut_norm_reference()
    assert best == 0.25
    assert ref.value == pytest.approx(best, abs=1e-15)
    assert ref.method == "exact-step"


def test_cut_norm_reference_negation_invariance():
    mat = np.array([[1.0, -2.0], [-2.0, 0.5]])
    a = StepSpec.from_matrix(mat).cut_norm_reference().value
    b = StepSpec.from_matrix(-mat).cut_norm_reference().value
    assert a == pytest.approx(b, abs=1e-15)


def test_cut_norm_reference_signed_rank1():
    # (max(int f+, int f-))^2 evaluated directly
    alpha, c = 0.2, 1.0
    root = math.sqrt(c)
    f_pos = root * (1 - 0.5 ** (1 - alpha)) / (1 - alpha)
    f_neg = root * 0.5 ** (1 - alpha) / (1 - alpha)
    ref = SignedPow(alpha, c).cut_norm_reference()
    assert ref.value == pytest.approx(max(f_pos, f_neg) ** 2, rel=1e-14)
    assert ref.method == "analytic-rank1"


def test_cut_norm_dominated_by_l1():
    for U in catalog():
        assert U.cut_norm_reference().value <= U.lp_norm(1.0) + 1e-12


# --- sampling ---------------------------------------------------------------


def test_draw_sample_constant_kernel():
    const = StepSpec.from_matrix([[3.0]])
    _, samp = draw_sample(const, 3, seed=5)
    assert np.all(np.diag(samp.values) == 0.0)
    off = samp.values[~np.eye(3, dtype=bool)]
    assert np.all(off == 3.0)


def test_draw_sample_deterministic():
    U = PowCorner(0.2, 1.0)
    _, a = draw_sample(U, 9, seed=123)
    _, b = draw_sample(U, 9, seed=123)
    assert np.array_equal(a.values, b.values)
    _, c = draw_sample(U, 9, seed=124)
    assert not np.array_equal(a.values, c.values)


def test_draw_sample_matches_scalar_eval():
    U = PowCorner(0.2, 1.0)
    pts, samp = draw_sample(U, 4, seed=77)
    for i in range(4):
        for j in range(4):
            expected = 0.0 if i == j else U.eval(pts.coords[i], pts.coords[j])
            assert samp.values[i, j] == pytest.approx(expected, rel=1e-15)


def test_sample_permutation_consistency(rng):
    U = SignedPow(0.2, 1.0)
    coords = rng.random(7)
    samp = sample_matrix(U, coords)
    perm = rng.permutation(7)
    samp_p = sample_matrix(U, coords[perm])
    assert np.array_equal(samp_p.values, samp.values[np.ix_(perm, perm)])


def test_sample_entry_mean_matches_l1():
    # E |sample entry| = ||U||_1 for the nonnegative family, to 4 stderr
    U = PowCorner(0.2, 1.0)
    k, trials = 8, 20000
    gen = np.random.default_rng(99)
    coords = gen.random((trials, k))
    g = U.rank1_factor(coords)
    means = (g.sum(axis=1) ** 2 - (g**2).sum(axis=1)) / (k * (k - 1))
    stderr = means.std(ddof=1) / math.sqrt(trials)
    assert abs(means.mean() - U.lp_norm(1.0)) <= 4.0 * stderr


def test_sample_points_validation():
    with pytest.raises(ValueError):
        SamplePoints(k=1, seed=0, coords=np.array([0.5]))
    with pytest.raises(ValueError):
        draw_sample(PowCorner(0.2, 1.0), 1, seed=0)


# --- truncated wrapper ------------------------------------------------------


def test_truncated_clamp_pointwise_oracle():
    U = PowCorner(0.2, 1.0)
    T = TruncatedKernel(U, 2.0)
    xs = np.linspace(0.0, 0.99, 100)
    X, Y = np.meshgrid(xs, xs)
    assert np.allclose(T.eval(X, Y), np.minimum(U.eval(X, Y), 2.0), atol=0, rtol=1e-15)


def test_truncated_norms_vs_quadrature():
    T = TruncatedKernel(PowCorner(0.2, 1.0), 2.0)
    for p in (1.0, 3.0, 6.0):  # bounded: integrable for every p
        assert T.lp_norm(p) == pytest.approx(lp_norm_quad(T, p, tol=3e-9), rel=1e-7)
    for x in (0.2, 0.9, 0.999):
        assert T.section_integral(x) == pytest.approx(
            section_integral_quad(T, x), rel=1e-9
        )


def test_truncated_wrapper_rejects_bounded_sources():
    with pytest.raises(KernelError):
        TruncatedKernel(Checkerboard(2, 1.0), 0.5)


# --- serialization ----------------------------------------------------------


def test_kernel_json_round_trip():
    for U in catalog() + [TruncatedKernel(PowCorner(0.2, 1.0), 2.5)]:
        blob = json.dumps(U.to_json())
        back = kernel_from_json(json.loads(blob))
        assert back.to_json() == U.to_json()
        assert back.eval(0.3, 0.6) == U.eval(0.3, 0.6)


def test_step_kernel_json_round_trip(rng):
    from conftest import random_symmetric

    W = StepKernel(5, random_symmetric(rng, 5), zero_diagonal=True)
    back = StepKernel.from_json(json.loads(json.dumps(W.to_json())))
    assert back.n == W.n
    assert back.zero_diagonal == W.zero_diagonal
    assert np.array_equal(back.values, W.values)


def test_step_kernel_validation():
    with pytest.raises(ValueError):
        StepKernel(2, np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ValueError):
        StepKernel(2, np.array([[1.0, 0.0], [0.0, 1.0]]), zero_diagonal=True)

import math

import numpy as np
import pytest
from scipy import integrate

from cutnorm_lab.kernels import Checkerboard, KernelError, PowCorner, SignedPow, StepSpec
from cutnorm_lab.truncation import (
    first_lemma_threshold,
    second_lemma_threshold,
    truncate_kernel,
    truncation_l1_error_bound,
    truncation_l1_error_exact,
    truncation_l1_mass_above,
)

U = PowCorner(0.2, 1.0)
S = SignedPow(0.2, 1.0)


# --- the clamp operator -----------------------------------------------------


def test_truncate_bounded_family_unchanged():
    cb = Checkerboard(2, 1.0)
    T = truncate_kernel(cb, 5.0)
    assert isinstance(T, Checkerboard) and T.c == 1.0
    xs = np.linspace(0, 1, 9)
    assert np.array_equal(T.eval(xs[:, None], xs[None, :]), cb.eval(xs[:, None], xs[None, :]))


def test_truncate_step_family_clamps_values():
    spec = StepSpec.from_matrix([[3.0, -2.0], [-2.0, 0.5]])
    T = truncate_kernel(spec, 1.0)
    assert np.array_equal(T.matrix(), [[1.0, -1.0], [-1.0, 0.5]])


def test_truncate_pointwise_oracle_grid():
    T = truncate_kernel(U, 2.0)
    xs = np.linspace(0.0, 0.995, 100)
    X, Y = np.meshgrid(xs, xs)
    assert np.array_equal(T.eval(X, Y), np.minimum(U.eval(X, Y), 2.0))


def test_truncate_preserves_sign(rng):
    T = truncate_kernel(S, 1.5)
    xs = rng.random(40) * 0.99
    vals = T.eval(xs[:, None], xs[None, :])
    orig = S.eval(xs[:, None], xs[None, :])
    assert np.all(np.sign(vals) == np.sign(orig))
    assert np.all(np.abs(vals) <= 1.5 + 1e-15)


def test_truncate_rejects_nonpositive_threshold():
    with pytest.raises(KernelError):
        truncate_kernel(U, 0.0)


def test_truncated_lp_never_exceeds_source():
    for f in (1.2, 2.0, 5.0):
        T = truncate_kernel(U, f)
        for p in (1.0, 2.0, 3.0, 4.0):
            assert T.lp_norm(p) <= U.lp_norm(p) + 1e-12


# --- thresholds -------------------------------------------------------------


def test_first_threshold_value():
    unit = PowCorner(0.0, 1.0)  # ||U||_p = 1 for every p
    assert unit.lp_norm(2.0) == 1.0
    val = first_lemma_threshold(unit, 2.0, 16)
    assert val == pytest.approx(3.0 * 16 ** (1.0 / 8.0), rel=1e-14)
    assert val == pytest.approx(3.0 * math.exp(math.log(16) / 8.0), rel=1e-14)


def test_first_threshold_monotone_and_linear():
    assert first_lemma_threshold(U, 3.0, 2**10) > first_lemma_threshold(U, 3.0, 2**5)
    doubled = PowCorner(0.2, 2.0)  # doubles every lp norm
    assert first_lemma_threshold(doubled, 3.0, 64) == pytest.approx(
        2.0 * first_lemma_threshold(U, 3.0, 64), rel=1e-14
    )


def test_second_threshold_values():
    unit = PowCorner(0.0, 1.0)
    k_e = math.ceil(math.e)  # ln k = 1 is only conceptual; check the formula
    assert second_lemma_threshold(unit, 4.0, 3) == pytest.approx(
        3.0 * math.log(3) ** (1.0 / 8.0), rel=1e-14
    )
    val = second_lemma_threshold(U, 3.0, 2**10)
    assert val == pytest.approx(3.0 * U.lp_norm(3) * math.log(1024) ** (1 / 6), rel=1e-14)
    # below 3 ||U||_p at k = 2 since ln 2 < 1
    assert second_lemma_threshold(unit, 3.0, 2) < 3.0
    assert second_lemma_threshold(U, 3.0, 2**10) > second_lemma_threshold(U, 3.0, 2**5)


def test_threshold_parameter_guards():
    with pytest.raises(KernelError):
        first_lemma_threshold(U, 1.0, 16)
    with pytest.raises(ValueError):
        second_lemma_threshold(U, 3.0, 1)


# --- error functionals ------------------------------------------------------


def test_error_bound_positive_and_decreasing():
    f16 = first_lemma_threshold(U, 3.0, 16)
    val = truncation_l1_error_bound(U, 3.0, f16)
    assert 0.0 < val < math.inf
    grid = np.linspace(U.lp_norm(1.0) + 0.5, 30.0, 25)
    vals = [truncation_l1_error_bound(U, 3.0, f) for f in grid]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_error_bound_requires_f_above_l1():
    with pytest.raises(KernelError):
        truncation_l1_error_bound(U, 3.0, 1.0)


def test_exact_error_closed_form_vs_quadrature():
    for f in (2.0, 4.0):
        closed = truncation_l1_error_exact(U, f)
        quad, _ = integrate.dblquad(
            lambda x, y: max(U.eval(x, y) - f, 0.0), 0, 1, 0, 1, epsabs=1e-11, epsrel=1e-11
        )
        assert closed == pytest.approx(quad, rel=1e-7)


def test_mass_above_closed_form_vs_quadrature():
    f = 2.0
    t0 = (1.0 / f) ** (1.0 / 0.2)
    closed = truncation_l1_mass_above(U, f)

    def inner(y):
        # integrand is discontinuous across the level hyperbola; hint it
        x_cut = 1.0 - t0 / (1.0 - y) if t0 < (1.0 - y) else None
        pts = [x_cut] if x_cut is not None else None
        val, _ = integrate.quad(
            lambda x: U.eval(x, y) if U.eval(x, y) > f else 0.0,
            0.0, 1.0, points=pts, epsabs=1e-12, epsrel=1e-12, limit=300,
        )
        return val

    outer, _ = integrate.quad(inner, 0.0, 1.0, points=[1.0 - t0], epsabs=1e-11, epsrel=1e-11, limit=300)
    assert closed == pytest.approx(outer, rel=1e-8)


def test_error_chain_on_f_grid():
    # exact clamp error <= super-level mass <= Chebyshev-route bound
    l1 = U.lp_norm(1.0)
    lp = U.lp_norm(3.0)
    for frac in np.linspace(0.05, 1.0, 12):
        f = l1 + frac * (8.0 * lp - l1)
        exact = truncation_l1_error_exact(U, f)
        mass = truncation_l1_mass_above(U, f)
        bound = truncation_l1_error_bound(U, 3.0, f)
        assert exact <= mass + 1e-14
        assert mass <= bound + 1e-12


def test_exact_error_nonincreasing_in_f():
    grid = np.linspace(0.5, 20.0, 40)
    vals = [truncation_l1_error_exact(U, f) for f in grid]
    assert all(b <= a + 1e-14 for a, b in zip(vals, vals[1:]))
    assert truncation_l1_error_exact(U, 1e9) < 1e-6


def test_bounded_family_zero_error():
    cb = Checkerboard(3, 1.0)
    assert truncation_l1_error_exact(cb, 1.0) == 0.0
    assert truncation_l1_mass_above(cb, 1.0) == 0.0
    assert truncation_l1_mass_above(cb, 0.5) == 1.0


def test_signed_matches_unsigned_error():
    # |signed| equals the unsigned kernel, so all error functionals agree
    for f in (1.5, 3.0):
        assert truncation_l1_error_exact(S, f) == pytest.approx(
            truncation_l1_error_exact(U, f), rel=1e-14
        )
        assert truncation_l1_mass_above(S, f) == pytest.approx(
            truncation_l1_mass_above(U, f), rel=1e-14
        )


def test_truncated_json_round_trip():
    from cutnorm_lab.kernels import kernel_from_json

    T = truncate_kernel(U, 2.5)
    back = kernel_from_json(T.to_json())
    assert back.to_json() == T.to_json()
    assert back.eval(0.9, 0.95) == T.eval(0.9, 0.95)

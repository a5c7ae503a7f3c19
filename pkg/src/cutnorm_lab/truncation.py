"""Clamping of catalog kernels and the closed-form truncation error bounds.

Truncation here means hard clamping at +-f: it keeps the kernel where
|U| <= f, caps the magnitude at f, and preserves the sign pointwise.  Two
error functionals are tracked separately: the L1 error of the clamp itself,
int (|U| - f)^+, and the larger super-level mass int_{|U|>f} |U| that the
Chebyshev-style bound actually dominates.  Both are closed-form for the
power families (the super-level set is the hyperbolic corner patch
{(1-x)(1-y) < (c/f)^(1/alpha)}).
"""

from __future__ import annotations

import math

from .kernels import (
    Checkerboard,
    Kernel,
    KernelError,
    PowCorner,
    SignedPow,
    StepSpec,
    TruncatedKernel,
    _log_weighted_pow_integral_lower,
    hyperbola_region_measure,
)
import numpy as np


def truncate_kernel(U: Kernel, f: float) -> Kernel:
    """Clamp U to [-f, f] as a derived catalog kernel.

    Bounded families clamp into their own family; the unbounded power
    families return a ``truncated`` wrapper that keeps closed-form norms.
    """
    if f <= 0:
        raise KernelError(f"threshold must be positive, got {f}")
    if isinstance(U, Checkerboard):
        return Checkerboard(U.m, min(U.c, f))
    if isinstance(U, StepSpec):
        return StepSpec.from_matrix(np.clip(U.matrix(), -f, f))
    if isinstance(U, (PowCorner, SignedPow)):
        return TruncatedKernel(source=U, threshold=f)
    raise KernelError(f"truncation is not supported for family {U.family!r}")


def first_lemma_threshold(U: Kernel, p: float, k: int) -> float:
    """Threshold 3 ||U||_p k^(1/(4p)) balancing the systematic-error terms."""
    if p <= 1:
        raise KernelError(f"p must be > 1, got {p}")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    return 3.0 * U.lp_norm(p) * k ** (1.0 / (4.0 * p))


def second_lemma_threshold(U: Kernel, p: float, k: int) -> float:
    """Threshold 3 ||U||_p (ln k)^(1/(2p)) balancing the distance-bound terms.

    At k = 2 the log is below 1 and the value dips below 3 ||U||_p; that is
    allowed and the function stays monotone increasing in k.
    """
    if p <= 1:
        raise KernelError(f"p must be > 1, got {p}")
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    return 3.0 * U.lp_norm(p) * math.log(k) ** (1.0 / (2.0 * p))


def truncation_l1_error_bound(U: Kernel, p: float, f: float) -> float:
    """Chebyshev-route bound 2^p ||U||_p^p f / (f - ||U||_1)^p on the tail mass."""
    l1 = U.lp_norm(1.0)
    if f <= l1:
        raise KernelError(f"threshold f={f} must exceed ||U||_1={l1}")
    lp = U.lp_norm(p)
    return 2.0**p * lp**p * f / (f - l1) ** p


def _power_t0(U, f: float) -> float:
    if U.alpha == 0.0:
        return 1.0 if f < U.c else 0.0
    return min(1.0, (U.c / f) ** (1.0 / U.alpha))


def truncation_l1_error_exact(U: Kernel, f: float) -> float:
    """Exact L1 error of the clamp, int (|U| - f)^+."""
    if f <= 0:
        raise KernelError(f"threshold must be positive, got {f}")
    if isinstance(U, Checkerboard):
        return max(U.c - f, 0.0)
    if isinstance(U, StepSpec):
        return float(np.mean(np.maximum(np.abs(U.matrix()) - f, 0.0)))
    if isinstance(U, (PowCorner, SignedPow)):
        t0 = _power_t0(U, f)
        if t0 <= 0.0:
            return 0.0
        mass = U.c * _log_weighted_pow_integral_lower(U.alpha, t0)
        return mass - f * hyperbola_region_measure(t0)
    raise KernelError(f"truncation error is not available for family {U.family!r}")


def truncation_l1_mass_above(U: Kernel, f: float) -> float:
    """Super-level mass int_{|U| > f} |U|; dominates the exact clamp error."""
    if f <= 0:
        raise KernelError(f"threshold must be positive, got {f}")
    if isinstance(U, Checkerboard):
        return U.c if U.c > f else 0.0
    if isinstance(U, StepSpec):
        vals = np.abs(U.matrix())
        return float(np.mean(np.where(vals > f, vals, 0.0)))
    if isinstance(U, (PowCorner, SignedPow)):
        t0 = _power_t0(U, f)
        if t0 <= 0.0:
            return 0.0
        return U.c * _log_weighted_pow_integral_lower(U.alpha, t0)
    raise KernelError(f"truncation error is not available for family {U.family!r}")

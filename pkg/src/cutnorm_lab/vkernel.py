"""Vector-valued step kernels with an l1 target norm.

The cut norm of an R^d-valued kernel is the supremum of scalar cut norms
of its pairings <f, W> over the l-infinity unit ball of test vectors.  For
a step kernel that map f -> ||<f, W>||_cut is a maximum of absolute values
of linear functionals of f, hence convex, so the supremum over the ball is
attained at a vertex: enumerating the 2^(d-1) sign patterns (antipodal
pairs coincide) and taking exact scalar cut norms gives the exact value.

A face-grid epsilon-net over the l-infinity sphere turns the same supremum
into a finite maximum at a (1-eps)^(-1) cost; the net is constructive and
its covering radius, not its cardinality, is what the sandwich bound uses.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .concentration import BoundValue, ConcentrationParams, ParameterError, _require
from .cutdist import discretize_kernel
from .cutnorm import cut_norm_exact, cut_norm_exact_values_batch
from .kernels import (
    Checkerboard,
    Kernel,
    SamplePoints,
    StepKernel,
    integral_quad,
    sample_matrix,
)
from . import rng

MAX_SIGN_DIM = 20
MAX_NET_POINTS = 10**7


@dataclass
class VectorStepKernel:
    """Symmetric n x n step kernel with R^d block values."""

    d: int
    n: int
    values: np.ndarray  # (n, n, d)
    zero_diagonal: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.n, self.n, self.d):
            raise ValueError(f"values must have shape ({self.n}, {self.n}, {self.d})")
        if not np.array_equal(self.values, np.swapaxes(self.values, 0, 1)):
            raise ValueError("vector step kernel must be blockwise symmetric")
        if self.zero_diagonal and np.any(self.values[np.arange(self.n), np.arange(self.n)] != 0):
            raise ValueError("zero_diagonal set but diagonal blocks are nonzero")

    def l1_block_norms(self) -> StepKernel:
        """Scalar step kernel of pointwise l1 norms ||W(x,y)||_1."""
        return StepKernel(self.n, np.abs(self.values).sum(axis=2), self.zero_diagonal)

    def lp_norm(self, p: float) -> float:
        """L^p norm of the pointwise l1 norm of the blocks."""
        return float(np.mean(self.l1_block_norms().values ** p) ** (1.0 / p))

    def component(self, j: int) -> StepKernel:
        return StepKernel(self.n, self.values[:, :, j], self.zero_diagonal)

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "zero_diagonal": self.zero_diagonal,
            "values": self.values.tolist(),
        }

    @staticmethod
    def from_json(obj: dict) -> "VectorStepKernel":
        return VectorStepKernel(
            d=int(obj["d"]),
            n=int(obj["n"]),
            values=np.asarray(obj["values"], dtype=float),
            zero_diagonal=bool(obj.get("zero_diagonal", False)),
        )


def scalarize(W: VectorStepKernel, f) -> StepKernel:
    """Blockwise pairing <f, W> as a scalar step kernel."""
    f = np.asarray(f, dtype=float)
    if f.shape != (W.d,):
        raise ValueError(f"test vector must have dimension {W.d}, got shape {f.shape}")
    return StepKernel(W.n, W.values @ f, W.zero_diagonal)


@dataclass
class VectorCutNorm:
    value: float
    witness_f: np.ndarray
    witness_S: tuple
    witness_T: tuple


def _sign_patterns(d: int) -> np.ndarray:
    """All sign vectors with first coordinate +1 (antipodal pairs merged)."""
    tail = np.array(list(itertools.product((1.0, -1.0), repeat=d - 1)))
    if d == 1:
        return np.ones((1, 1))
    return np.concatenate([np.ones((len(tail), 1)), tail], axis=1)


def vector_cut_norm_exact(W: VectorStepKernel) -> VectorCutNorm:
    """Exact vector cut norm via l-infinity vertex enumeration."""
    if W.d > MAX_SIGN_DIM:
        raise ValueError(f"sign enumeration is limited to d <= {MAX_SIGN_DIM}, got {W.d}")
    if W.n > 30:
        raise ValueError(f"exact scalar cut norms are limited to n <= 30, got {W.n}")
    signs = _sign_patterns(W.d)
    mats = np.einsum("ijc,sc->sij", W.values, signs)
    vals = cut_norm_exact_values_batch(mats)
    arg = int(np.argmax(vals))
    best_f = signs[arg]
    result = cut_norm_exact(scalarize(W, best_f))
    return VectorCutNorm(
        value=float(vals[arg]),
        witness_f=best_f,
        witness_S=result.witness_S,
        witness_T=result.witness_T,
    )


@dataclass
class EpsilonNet:
    """Finite subset of the l-infinity unit sphere with covering radius eps."""

    epsilon: float
    points: np.ndarray  # (m, d), every row has sup-norm exactly 1

    @property
    def size(self) -> int:
        return len(self.points)


def build_epsilon_net(d: int, epsilon: float) -> EpsilonNet:
    """Face grids of pitch <= epsilon on the 2d faces of the sup-norm sphere.

    Grid points on each face keep one coordinate at +-1 and run a uniform
    grid over the free coordinates, so every unit vector lies within
    epsilon (in fact epsilon/2 per free coordinate) of a net point on its
    own face.  The size is reported, not asserted against any cardinality
    target.
    """
    if d < 2:
        raise ValueError(f"net construction needs d >= 2, got {d}")
    if not (0.0 < epsilon < 1.0):
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    per_axis = math.ceil(2.0 / epsilon) + 1
    projected = 2 * d * per_axis ** (d - 1)
    if projected > MAX_NET_POINTS:
        raise MemoryError(f"net of projected size {projected} exceeds {MAX_NET_POINTS}")
    grid = np.linspace(-1.0, 1.0, per_axis)
    points = []
    for axis in range(d):
        free = [grid] * (d - 1)
        mesh = np.meshgrid(*free, indexing="ij") if free else []
        flat = (
            np.stack([m.reshape(-1) for m in mesh], axis=1)
            if free
            else np.zeros((1, 0))
        )
        for sign in (1.0, -1.0):
            face = np.insert(flat, axis, sign, axis=1)
            points.append(face)
    merged = np.unique(np.concatenate(points, axis=0), axis=0)
    return EpsilonNet(epsilon=epsilon, points=merged)


def vector_cut_norm_net(W: VectorStepKernel, net: EpsilonNet) -> float:
    """Max of exact scalar cut norms over the net; a (1-eps) under-estimate."""
    if W.n > 30:
        raise ValueError(f"exact scalar cut norms are limited to n <= 30, got {W.n}")
    mats = np.einsum("ijc,sc->sij", W.values, net.points)
    return float(cut_norm_exact_values_batch(mats).max())


@dataclass(frozen=True)
class VectorKernelNorms:
    """Reference norms of a vector kernel used by the bound expressions."""

    cut: float
    l1: float
    lp: float


def vector_theorem_bounds(
    norms: VectorKernelNorms, params: ConcentrationParams, k: int, d: int
) -> tuple[BoundValue, BoundValue]:
    """Lower and upper sampling-deviation bounds for R^d-valued kernels.

    The lower bound matches the scalar named form; the upper bound pays the
    (1-eps)^(-1) < 10 net factor with eps = k^(-1/4+1/(4p)) baked in, and
    its exceptional probability grows with the net size.  The probability
    exponent follows the union-bound derivation, -phi p + (d-1)(p-1)/(4p);
    the display variant with /4 instead of /(4p) is reported alongside.
    """
    p, gamma, phi = params.p, params.gamma, params.phi
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    _require(p > 2, "vector bounds require p > 2")
    _require(1.0 / p < gamma < 0.5, "vector lower bound requires gamma in (1/p, 1/2)")
    _require(phi > 0, "vector upper bound requires phi > 0")
    _require(d >= 2, "vector bounds are stated for d >= 2")

    lower_value = (
        (norms.cut + math.sqrt(18.0 * (gamma * p - 1.0)) * (norms.l1 + 2.0 * norms.lp))
        * k ** (-0.5 + gamma)
        * math.sqrt(math.log(k))
    )
    lower = BoundValue(lower_value, 1.0 - 3.0 * k ** (1.0 - gamma * p), {})

    eps = k ** (-0.25 + 1.0 / (4.0 * p))
    drift = (
        6.0
        * math.sqrt(phi * p / 2.0)
        * (norms.l1 + 2.0 * norms.lp)
        * math.sqrt(math.log(k))
        / k ** ((p - 3.0) / (4.0 * p) - phi)
    )
    upper_value = 10.0 * (norms.cut + 30.0 * norms.lp + drift) * k ** (-0.25 + 1.0 / (4.0 * p))
    exponent = -phi * p + (d - 1.0) * (p - 1.0) / (4.0 * p)
    exponent_display = -phi * p + (d - 1.0) * (p - 1.0) / 4.0
    prob = 1.0 - 6.0 * d ** ((3.0 - d) / 2.0) * k**exponent
    upper = BoundValue(
        upper_value,
        prob,
        {
            "epsilon": eps,
            "probability_display_variant": 1.0
            - 6.0 * d ** ((3.0 - d) / 2.0) * k**exponent_display,
        },
    )
    return lower, upper


def draw_vector_sample(
    components, k: int, seed: int
) -> tuple[SamplePoints, VectorStepKernel]:
    """Componentwise k-sample of a vector kernel given by scalar components.

    All components are sampled at the same coordinate vector, so component
    j of the result equals the scalar sample of component j at that X.
    """
    if k < 2:
        raise ValueError(f"need k >= 2, got {k}")
    components = list(components)
    if not components:
        raise ValueError("need at least one component kernel")
    gen = rng.stream(seed, "coords")
    coords = gen.random(k)
    points = SamplePoints(k=k, seed=int(seed), coords=coords)
    mats = [sample_matrix(U, coords).values for U in components]
    values = np.stack(mats, axis=2)
    return points, VectorStepKernel(
        d=len(components), n=k, values=values, zero_diagonal=True
    )


def vector_lp_norm(components, p: float, tol: float = 1e-9) -> float:
    """L^p norm of the pointwise l1 norm of a tuple of scalar kernels.

    p = 1 is always the sum of component L1 norms.  For integer p with at
    most one non-constant-|.| component (a power family mixed with
    checkerboards) a binomial expansion gives a closed form; anything else
    falls back to adaptive quadrature.
    """
    components = list(components)
    if p == 1.0:
        return sum(U.lp_norm(1.0) for U in components)
    const_abs = [U.c for U in components if isinstance(U, Checkerboard)]
    varying = [U for U in components if not isinstance(U, Checkerboard)]
    if float(p).is_integer() and len(varying) <= 1:
        p_int = int(p)
        base = sum(const_abs)
        if not varying:
            return base
        U = varying[0]
        total = 0.0
        for j in range(p_int + 1):
            moment = U.lp_norm(j) ** j if j >= 1 else 1.0
            total += math.comb(p_int, j) * base ** (p_int - j) * moment
        return total ** (1.0 / p_int)

    class _L1Combo:
        def eval(self, x, y):
            return sum(abs(U.eval(x, y)) for U in components)

    return integral_quad(_L1Combo(), transform=lambda v: v**p, tol=tol) ** (1.0 / p)


def vector_cut_norm_reference_upper(components, m: int = 24) -> float:
    """Certified upper bound on the cut norm of a continuum vector kernel.

    Each sign-vertex pairing is a linear combination of catalog kernels;
    discretizing each component at m blocks gives an exact step cut norm plus
    a triangle-inequality L1 charge for the discretization of each
    component.  The max over vertices bounds the vector cut norm from
    above because the supremum over the ball is attained at a vertex.
    """
    components = list(components)
    d = len(components)
    discretized = [discretize_kernel(U, m) for U in components]
    charges = sum(err for _, err in discretized)
    mats = np.stack([step.values for step, _ in discretized], axis=2)
    best = 0.0
    for signs in _sign_patterns(d):
        combined = StepKernel(m, mats @ signs)
        best = max(best, cut_norm_exact(combined).value + charges)
    return best

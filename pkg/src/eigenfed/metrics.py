"""Subspace distances, effective dimension, bound formulas, assumption checks.

All logarithms are natural.  Bound formulas return rates with no hidden
constants; any empirical envelope constant belongs to the caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingBound,
    NotOrthonormal,
    NotPSD,
    ZeroMatrix,
)
from .linalg import basis_of, orthonormality_defect, symmetrize

# Inputs to the distance functions may come off the wire; allow a looser
# defect than freshly computed bases would have.
DIST_ORTHONORMAL_TOL = 1e-8


def _checked_basis(subspace, name: str) -> np.ndarray:
    b = basis_of(subspace)
    defect = orthonormality_defect(b)
    if defect > DIST_ORTHONORMAL_TOL:
        raise NotOrthonormal(f"{name} is not orthonormal (defect {defect:.3e})")
    return b


def subspace_dist2(u, v) -> float:
    """Spectral-norm distance between the projectors of two subspaces.

    Equals the largest principal sine between the spans, computed as the
    top singular value of (I - U U.T) V; always in [0, 1], symmetric in
    its arguments, and invariant to the choice of orthonormal basis.

    Examples
    --------
    Identical spans give 0; orthogonal spans give 1; a one-dimensional
    span at 45 degrees to another gives sin(45) ~ 0.7071.
    """
    bu = _checked_basis(u, "first subspace")
    bv = _checked_basis(v, "second subspace")
    if bu.shape != bv.shape:
        raise DimensionMismatch(f"subspace shapes differ: {bu.shape} vs {bv.shape}")
    residual = bv - bu @ (bu.T @ bv)
    top = float(np.linalg.svd(residual, compute_uv=False)[0])
    return min(max(top, 0.0), 1.0)


def subspace_distF(u, v) -> float:
    """Frobenius-norm distance between the projectors of two subspaces.

    Computed through ||U U.T - V V.T||_F^2 = 2 r - 2 ||U.T V||_F^2,
    which avoids forming the d x d projectors.  Bounded between the
    spectral distance and sqrt(2 r) times it.
    """
    bu = _checked_basis(u, "first subspace")
    bv = _checked_basis(v, "second subspace")
    if bu.shape != bv.shape:
        raise DimensionMismatch(f"subspace shapes differ: {bu.shape} vs {bv.shape}")
    r = bu.shape[1]
    cross = float(np.linalg.norm(bu.T @ bv, "fro") ** 2)
    return math.sqrt(max(2.0 * r - 2.0 * cross, 0.0))


def spectral_norm_symmetric(a) -> float:
    """Largest absolute eigenvalue of a symmetric matrix."""
    sym = symmetrize(a)
    w = np.linalg.eigvalsh(sym)
    return float(max(abs(w[0]), abs(w[-1])))


def intdim(a) -> float:
    """Effective (intrinsic) dimension trace(A) / ||A||_2 of a PSD matrix.

    Always between 1 and d for nonzero PSD input.
    """
    sym = symmetrize(a)
    w = np.linalg.eigvalsh(sym)
    top = float(w[-1])
    if top <= 0.0:
        if float(w[0]) == 0.0 and top == 0.0:
            raise ZeroMatrix("intdim of the zero matrix is undefined")
        raise NotPSD(f"matrix has top eigenvalue {top:.3e}")
    if float(w[0]) < -1e-8 * top:
        raise NotPSD(f"matrix has eigenvalue {float(w[0]):.3e}")
    return float(np.sum(w)) / top


@dataclass(frozen=True)
class BoundInputs:
    """Problem parameters the error-rate formulas consume.

    b is the squared radius bound for bounded sample models (samples on
    the sphere of radius sqrt(d) have b = d exactly); it stays None for
    unbounded models.
    """

    delta: float
    m: int
    n: int
    d: int
    r_star: float
    p: float
    b: float | None = None
    norm_x: float = 1.0

    def __post_init__(self):
        if self.delta <= 0.0:
            raise DimensionMismatch(f"need delta > 0, got {self.delta}")
        if self.m < 1 or self.n < 1 or self.d < 1:
            raise DimensionMismatch("need m, n, d >= 1")
        if self.r_star <= 0.0:
            raise DimensionMismatch(f"need r_star > 0, got {self.r_star}")
        if not (0.0 < self.p < 1.0):
            raise DimensionMismatch(f"need failure probability in (0, 1), got {self.p}")
        if self.norm_x <= 0.0:
            raise DimensionMismatch(f"need norm_x > 0, got {self.norm_x}")


def bound_bounded_case(inputs: BoundInputs) -> float:
    """Error rate for samples bounded as ||x||^2 <= b.

    sqrt(b^2 log(2 d / p) / (delta^2 m n)) + b^2 log(2 d m / p) / (delta^2 n).
    The first term is the averaged fluctuation; the second is the
    per-node bias and does not shrink with m.
    """
    if inputs.b is None:
        raise MissingBound("bounded-case rate needs the sample radius bound b")
    b2 = float(inputs.b) ** 2
    d2 = inputs.delta**2
    fluct = math.sqrt(b2 * math.log(2.0 * inputs.d / inputs.p) / (d2 * inputs.m * inputs.n))
    bias = b2 * math.log(2.0 * inputs.d * inputs.m / inputs.p) / (d2 * inputs.n)
    return fluct + bias


def bound_subgaussian(
    inputs: BoundInputs, c1: float = 2.0
) -> tuple[float, bool]:
    """Error rate for subgaussian samples, plus a sample-size precondition flag.

    (r_star + log(m/p)) / n * (norm_x / delta)^2
      + sqrt((r_star + log(c1 n)) / (m n)) * (norm_x / delta).
    The flag reports whether n >= (r_star + log(m/p)) / delta^2, the
    regime the rate is meaningful in; c1 is an absolute constant and
    defaults to 2.
    """
    if c1 <= 0.0:
        raise DimensionMismatch(f"need c1 > 0, got {c1}")
    ratio = inputs.norm_x / inputs.delta
    head = (inputs.r_star + math.log(inputs.m / inputs.p)) / inputs.n
    bias = head * ratio**2
    fluct = math.sqrt((inputs.r_star + math.log(c1 * inputs.n)) / (inputs.m * inputs.n)) * ratio
    ok = inputs.n >= (inputs.r_star + math.log(inputs.m / inputs.p)) / inputs.delta**2
    return bias + fluct, ok


def bound_simplified(r_star: float, n: int, m: int, delta: float) -> float:
    """Plot-ready rate: (r_star + log m)/(delta^2 n) + sqrt((r_star + 2 log n)/(delta^2 m n))."""
    if r_star <= 0.0 or n < 1 or m < 1 or delta <= 0.0:
        raise DimensionMismatch("need r_star > 0, n >= 1, m >= 1, delta > 0")
    bias = (r_star + math.log(m)) / (delta**2 * n)
    fluct = math.sqrt((r_star + 2.0 * math.log(n)) / (delta**2 * m * n))
    return bias + fluct


@dataclass(frozen=True)
class AssumptionReport:
    """What the theory needs from an instance, measured on that instance."""

    delta: float
    eigengap_ok: bool
    max_local_error: float
    local_error_ok: bool
    mean_error: float


def check_assumptions(x, x_hats: list, r: int) -> AssumptionReport:
    """Measure the eigengap and perturbation sizes of a synthetic instance.

    delta is taken from the spectrum of the ground truth x at the r-th
    gap; local_error_ok reports whether every ||X_hat_i - X||_2 stays
    below delta / 8, the perturbation regime the alignment analysis
    assumes.
    """
    sym = symmetrize(x)
    d = sym.shape[0]
    if not (1 <= r < d):
        raise DimensionMismatch(f"need 1 <= r < d, got r={r}, d={d}")
    if not x_hats:
        raise DimensionMismatch("need at least one local matrix")
    w = np.linalg.eigvalsh(sym)[::-1]
    delta = float(w[r - 1] - w[r])
    errors = []
    mean_hat = np.zeros_like(sym)
    for xh in x_hats:
        diff = symmetrize(xh) - sym
        errors.append(spectral_norm_symmetric(diff))
        mean_hat += symmetrize(xh)
    mean_hat /= len(x_hats)
    max_err = max(errors)
    return AssumptionReport(
        delta=delta,
        eigengap_ok=delta > 0.0,
        max_local_error=max_err,
        local_error_ok=max_err < delta / 8.0,
        mean_error=spectral_norm_symmetric(mean_hat - sym),
    )


def deterministic_bound_rhs(x, x_hats: list, delta: float) -> float:
    """Instance-level error bound shape, up to an absolute constant.

    max_i ||X_hat_i - X||_2^2 / delta^2 + ||mean(X_hat) - X||_2 / delta.
    The first term is the alignment bias each node contributes; the
    second is what a pooled estimator would already pay.
    """
    if delta <= 0.0:
        raise DimensionMismatch(f"need delta > 0, got {delta}")
    if not x_hats:
        raise DimensionMismatch("need at least one local matrix")
    sym = symmetrize(x)
    max_err = 0.0
    mean_hat = np.zeros_like(sym)
    for xh in x_hats:
        xs = symmetrize(xh)
        max_err = max(max_err, spectral_norm_symmetric(xs - sym))
        mean_hat += xs
    mean_hat /= len(x_hats)
    mean_err = spectral_norm_symmetric(mean_hat - sym)
    return max_err**2 / delta**2 + mean_err / delta

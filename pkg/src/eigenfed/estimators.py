"""Local eigensolvers and the aggregation rules that combine them.

Averaging eigenvector bases straight off the wire fails because each
worker's basis is only defined up to an orthogonal transform; the
aggregators here differ in how they remove that ambiguity before (or
instead of) averaging.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, RankDeficient
from .linalg import (
    SubspaceEstimate,
    basis_of,
    procrustes_rotation,
    qr_orthonormalize,
    svd_orthonormalize,
    top_eigenspace,
)
from .models import NodeDataset


@dataclass(frozen=True)
class LocalSolution:
    """One worker's eigenspace estimate plus bookkeeping."""

    node_id: int
    estimate: SubspaceEstimate
    local_error_norm: float | None = None


@dataclass(frozen=True)
class AggregateSolution:
    """Combined estimate.

    pre_qr_sigma_min is the smallest singular value of the averaged
    matrix before re-orthonormalization (for the eigendecomposition
    routes, the spectral margin at the cut, clamped at zero).  When the
    average collapses below numerical rank r the estimate is None and
    degenerate is set; the collapse itself is the diagnostic.
    """

    estimate: SubspaceEstimate | None
    method: str
    pre_qr_sigma_min: float
    rounds_used: int = 1
    degenerate: bool = False


def solve_local(x_hat, r: int, node_id: int = 0) -> LocalSolution:
    """Leading r-dimensional eigenspace of one worker's symmetric matrix."""
    estimate, _ = top_eigenspace(x_hat, r)
    return LocalSolution(node_id=node_id, estimate=estimate)


def _stack(solutions: list[LocalSolution]) -> list[np.ndarray]:
    if not solutions:
        raise DimensionMismatch("need at least one local solution")
    bases = [s.estimate.basis for s in solutions]
    shape = bases[0].shape
    for b in bases[1:]:
        if b.shape != shape:
            raise DimensionMismatch(f"solution shapes differ: {shape} vs {b.shape}")
    return bases


def orthonormalized_mean(
    aligned: list[np.ndarray], method: str, rounds_used: int = 1
) -> AggregateSolution:
    """Average the given matrices and re-orthonormalize.

    QR first, SVD as the robust fallback; if the average is numerically
    rank deficient the result is flagged degenerate instead of raising.
    """
    mean = np.mean(np.stack(aligned), axis=0)
    sigma = np.linalg.svd(mean, compute_uv=False)
    sigma_min = float(sigma[-1])
    try:
        estimate, _ = qr_orthonormalize(mean)
    except RankDeficient:
        try:
            estimate = svd_orthonormalize(mean)
        except RankDeficient:
            return AggregateSolution(
                estimate=None,
                method=method,
                pre_qr_sigma_min=sigma_min,
                rounds_used=rounds_used,
                degenerate=True,
            )
    return AggregateSolution(
        estimate=estimate,
        method=method,
        pre_qr_sigma_min=sigma_min,
        rounds_used=rounds_used,
    )


def naive_average(solutions: list[LocalSolution]) -> AggregateSolution:
    """Average the bases with no alignment at all.

    Kept as a control: the per-worker orthogonal ambiguity makes the
    unaligned average collapse or drift, and the degenerate flag plus
    pre_qr_sigma_min record exactly how.
    """
    return orthonormalized_mean(_stack(solutions), "naive")


def sign_fix_average(
    solutions: list[LocalSolution], reference_index: int = 0
) -> AggregateSolution:
    """One-dimensional alignment: flip each vector to match the reference sign.

    Only defined for r == 1.  A zero inner product counts as +1, so the
    rule is total.
    """
    bases = _stack(solutions)
    if bases[0].shape[1] != 1:
        raise DimensionMismatch(
            f"sign fixing needs one-column bases, got r={bases[0].shape[1]}"
        )
    ref = bases[reference_index]
    aligned = []
    for b in bases:
        inner = float(b[:, 0] @ ref[:, 0])
        aligned.append(b if inner >= 0.0 else -b)
    return orthonormalized_mean(aligned, "sign_fix")


def procrustes_fix_average(
    solutions: list[LocalSolution], reference=None
) -> AggregateSolution:
    """Align every basis to a common reference, then average and re-orthonormalize.

    Each basis is rotated by its own orthogonal Procrustes solution
    against the reference (default: the first worker's estimate), which
    removes the per-worker ambiguity before the entries are averaged.
    """
    bases = _stack(solutions)
    ref = basis_of(solutions[0].estimate if reference is None else reference)
    if ref.shape != bases[0].shape:
        raise DimensionMismatch(
            f"reference shape {ref.shape} does not match solutions {bases[0].shape}"
        )
    aligned = [b @ procrustes_rotation(b, ref).matrix for b in bases]
    return orthonormalized_mean(aligned, "procrustes")


def iterative_refinement(
    solutions: list[LocalSolution], n_iter: int
) -> AggregateSolution:
    """Repeat Procrustes fixing, feeding each round's output back as the reference.

    Round one aligns to the first worker's estimate; every later round
    aligns the original local estimates to the previous round's output.
    """
    if n_iter < 1:
        raise DimensionMismatch(f"need n_iter >= 1, got {n_iter}")
    ref = solutions[0].estimate if solutions else None
    result = None
    completed = 0
    for _ in range(n_iter):
        result = procrustes_fix_average(solutions, reference=ref)
        completed += 1
        if result.degenerate:
            break
        ref = result.estimate
    return AggregateSolution(
        estimate=result.estimate,
        method="iterative",
        pre_qr_sigma_min=result.pre_qr_sigma_min,
        rounds_used=completed,
        degenerate=result.degenerate,
    )


def projector_average(solutions: list[LocalSolution]) -> AggregateSolution:
    """Average the projectors V V.T instead of the bases, then re-extract.

    Projectors are ambiguity-free, so no alignment is needed; the cost
    is a d x d eigendecomposition at the coordinator.
    """
    bases = _stack(solutions)
    d = bases[0].shape[0]
    r = bases[0].shape[1]
    mean_proj = np.zeros((d, d))
    for b in bases:
        mean_proj += b @ b.T
    mean_proj /= len(bases)
    estimate, eigenvalues = top_eigenspace(mean_proj, r)
    return AggregateSolution(
        estimate=estimate,
        method="projector_avg",
        pre_qr_sigma_min=max(float(eigenvalues[r - 1]), 0.0),
    )


def central_estimator(datasets: list[NodeDataset], r: int) -> AggregateSolution:
    """Pool every worker's local matrix and eigensolve once.

    The communication-heavy yardstick the aligned averages are measured
    against.
    """
    if not datasets:
        raise DimensionMismatch("need at least one dataset")
    shape = datasets[0].local_matrix.shape
    pooled = np.zeros(shape)
    for ds in datasets:
        if ds.local_matrix.shape != shape:
            raise DimensionMismatch(
                f"local matrix shapes differ: {shape} vs {ds.local_matrix.shape}"
            )
        pooled += ds.local_matrix
    pooled /= len(datasets)
    estimate, eigenvalues = top_eigenspace(pooled, r)
    return AggregateSolution(
        estimate=estimate,
        method="central",
        pre_qr_sigma_min=max(float(eigenvalues[r - 1]), 0.0),
    )


def generic_align_average(
    factors: list[np.ndarray], reference_index: int = 0
) -> np.ndarray:
    """Align arbitrary (not necessarily orthonormal) factors, then average.

    Each factor Z_i is multiplied by the orthogonal transform closest to
    mapping it onto the reference factor, and the aligned factors are
    averaged with no re-orthonormalization.  Useful whenever a model is
    identified only up to a rotation of its factor, not just for
    eigenvector matrices.
    """
    if not factors:
        raise DimensionMismatch("need at least one factor")
    arrs = [np.asarray(f, dtype=np.float64) for f in factors]
    shape = arrs[0].shape
    for a in arrs:
        if a.ndim != 2 or a.shape != shape:
            raise DimensionMismatch(f"factor shapes differ: {shape} vs {a.shape}")
    ref = arrs[reference_index]
    aligned = []
    for a in arrs:
        u, _, vt = np.linalg.svd(a.T @ ref, full_matrices=True)
        aligned.append(a @ (u @ vt))
    return np.mean(np.stack(aligned), axis=0)

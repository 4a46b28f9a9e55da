"""Deterministic dense linear-algebra kernels.

All routines fix explicit sign conventions so that repeated calls on
identical inputs produce bit-identical outputs, which the federation
layer relies on for placement transparency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotOrthonormal, NotSymmetric, RankDeficient

# Orthonormality defect allowed on freshly produced bases.
ORTHONORMAL_TOL = 1e-10
# Relative symmetry defect allowed on matrices fed to eigensolvers.
SYMMETRY_TOL = 1e-10
# Relative singular-value cutoff for numerical rank decisions.
RANK_REL_TOL = 1e-12


def orthonormality_defect(basis: np.ndarray) -> float:
    """Frobenius norm of basis.T @ basis - I."""
    b = np.asarray(basis, dtype=np.float64)
    gram = b.T @ b
    return float(np.linalg.norm(gram - np.eye(b.shape[1]), "fro"))


def _as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be a 2-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{name} contains non-finite entries")
    return arr


def basis_of(subspace) -> np.ndarray:
    """Accept either a SubspaceEstimate or a raw (d, r) array; return the array."""
    if isinstance(subspace, SubspaceEstimate):
        return subspace.basis
    return _as_matrix(subspace, "basis")


@dataclass(frozen=True)
class SubspaceEstimate:
    """An r-dimensional subspace of R^d held as a (d, r) orthonormal basis."""

    basis: np.ndarray

    def __post_init__(self):
        b = _as_matrix(self.basis, "basis")
        if b.shape[1] > b.shape[0]:
            raise DimensionMismatch(
                f"basis has more columns than rows: {b.shape}"
            )
        defect = orthonormality_defect(b)
        if defect > ORTHONORMAL_TOL:
            raise NotOrthonormal(
                f"basis columns are not orthonormal (defect {defect:.3e})"
            )
        object.__setattr__(self, "basis", b)

    @property
    def dim_ambient(self) -> int:
        return self.basis.shape[0]

    @property
    def dim_subspace(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class OrthogonalTransform:
    """An r x r orthogonal matrix, rotation or reflection."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_matrix(self.matrix, "transform")
        if m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"transform must be square, got {m.shape}")
        defect = orthonormality_defect(m)
        if defect > ORTHONORMAL_TOL:
            raise NotOrthonormal(
                f"transform is not orthogonal (defect {defect:.3e})"
            )
        object.__setattr__(self, "matrix", m)


def numerical_rank(a: np.ndarray) -> int:
    """Rank with singular values below RANK_REL_TOL * sigma_max treated as zero."""
    s = np.linalg.svd(_as_matrix(a), compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_REL_TOL * s[0]))


def qr_orthonormalize(a) -> tuple[SubspaceEstimate, np.ndarray]:
    """Thin QR with the R diagonal forced strictly positive.

    Returns (Q, R) with Q orthonormal spanning the column space of `a`.
    Raises RankDeficient (carrying the observed rank) when the columns
    are numerically dependent.
    """
    arr = _as_matrix(a)
    d, r = arr.shape
    if r > d:
        raise DimensionMismatch(f"cannot orthonormalize {r} columns in R^{d}")
    rank = numerical_rank(arr)
    if rank < r:
        raise RankDeficient(rank)
    q, rmat = np.linalg.qr(arr)
    signs = np.where(np.diag(rmat) < 0.0, -1.0, 1.0)
    q = q * signs
    rmat = rmat * signs[:, None]
    return SubspaceEstimate(q), rmat


def svd_orthonormalize(a) -> SubspaceEstimate:
    """Orthonormal basis for the column space of `a` from its left singular vectors.

    More robust than QR near rank deficiency; still raises RankDeficient
    when the numerical rank falls below the number of columns.
    """
    arr = _as_matrix(a)
    d, r = arr.shape
    if r > d:
        raise DimensionMismatch(f"cannot orthonormalize {r} columns in R^{d}")
    u, s, _ = np.linalg.svd(arr, full_matrices=False)
    if s[0] == 0.0 or int(np.sum(s > RANK_REL_TOL * s[0])) < r:
        raise RankDeficient(0 if s[0] == 0.0 else int(np.sum(s > RANK_REL_TOL * s[0])))
    u = u[:, :r]
    return SubspaceEstimate(_fix_column_signs(u))


def _fix_column_signs(v: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive.

    np.argmax takes the lowest index on ties, which pins the convention.
    """
    out = v.copy()
    for j in range(out.shape[1]):
        idx = int(np.argmax(np.abs(out[:, j])))
        if out[idx, j] < 0.0:
            out[:, j] = -out[:, j]
    return out


def symmetrize(s) -> np.ndarray:
    """(S + S.T) / 2 after checking S is symmetric up to tolerance."""
    arr = _as_matrix(s, "S")
    if arr.shape[0] != arr.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {arr.shape}")
    scale = np.linalg.norm(arr, "fro")
    defect = np.linalg.norm(arr - arr.T, "fro")
    if defect > SYMMETRY_TOL * max(scale, 1e-300):
        raise NotSymmetric(
            f"asymmetry {defect:.3e} exceeds tolerance {SYMMETRY_TOL:.0e} * {scale:.3e}"
        )
    return (arr + arr.T) / 2.0


def top_eigenspace(s, r: int) -> tuple[SubspaceEstimate, np.ndarray]:
    """Leading r-dimensional invariant subspace of a symmetric matrix.

    Returns (V, eigenvalues) where V holds the eigenvectors of the r
    largest eigenvalues (by signed value, descending) and eigenvalues is
    the full spectrum, descending.  Each eigenvector is sign-fixed so
    its largest-magnitude entry is positive.
    """
    sym = symmetrize(s)
    d = sym.shape[0]
    if not (1 <= r <= d):
        raise DimensionMismatch(f"r={r} outside [1, {d}]")
    w, v = np.linalg.eigh(sym)
    w = w[::-1]
    v = v[:, ::-1]
    return SubspaceEstimate(_fix_column_signs(v[:, :r])), w


def procrustes_rotation(a, b) -> OrthogonalTransform:
    """Orthogonal Z minimizing ||A @ Z - B||_F over the orthogonal group.

    A and B are (d, r) orthonormal bases.  With A.T @ B = P @ diag(s) @ Q.T
    the minimizer is Z = P @ Q.T; the full SVD keeps Z orthogonal even
    when A.T @ B is singular.  Reflections are allowed, so the residual
    is never worse than any rotation-only alignment.
    """
    ba = basis_of(a)
    bb = basis_of(b)
    if ba.shape != bb.shape:
        raise DimensionMismatch(f"shapes differ: {ba.shape} vs {bb.shape}")
    m = ba.T @ bb
    u, _, vt = np.linalg.svd(m, full_matrices=True)
    return OrthogonalTransform(u @ vt)


def align(subspace, reference) -> np.ndarray:
    """Rotate `subspace` onto `reference`: basis @ procrustes_rotation(basis, ref)."""
    b = basis_of(subspace)
    z = procrustes_rotation(b, basis_of(reference))
    return b @ z.matrix

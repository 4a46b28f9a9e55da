"""Shared oracles and builders for the test suite.

Everything here is computed with raw numpy so the tests do not lean on
the code under test: brute-force alignment search, hand-rolled frames,
reference spectra.
"""

import numpy as np


def random_orthonormal(d: int, r: int, seed: int) -> np.ndarray:
    """A (d, r) orthonormal frame, sign-stabilized, via plain QR."""
    rng = np.random.default_rng(seed)
    q, rmat = np.linalg.qr(rng.standard_normal((d, r)))
    return q * np.where(np.diag(rmat) < 0.0, -1.0, 1.0)


def random_orthogonal(r: int, seed: int) -> np.ndarray:
    """An (r, r) orthogonal matrix; det may be +1 or -1."""
    return random_orthonormal(r, r, seed)


def procrustes_residual(a: np.ndarray, b: np.ndarray, z: np.ndarray) -> float:
    return float(np.linalg.norm(a @ z - b, ord="fro"))


def o2_candidates(npts: int) -> np.ndarray:
    """(npts, 2, 2) stack covering O(2): half rotations, half reflections."""
    theta = np.linspace(0.0, 2.0 * np.pi, npts // 2, endpoint=False)
    c, s = np.cos(theta), np.sin(theta)
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    refl = np.stack([np.stack([c, s], -1), np.stack([s, -c], -1)], -2)
    return np.concatenate([rot, refl], axis=0)


def brute_force_residual_r1(a: np.ndarray, b: np.ndarray) -> float:
    """Exact minimum of ||a z - b||_F over z in {+1, -1}."""
    return min(
        procrustes_residual(a, b, np.array([[1.0]])),
        procrustes_residual(a, b, np.array([[-1.0]])),
    )


def brute_force_residual_r2(a: np.ndarray, b: np.ndarray, npts: int = 10_000) -> float:
    """Grid minimum of ||a Z - b||_F over an O(2) grid of npts candidates."""
    zs = o2_candidates(npts)
    diff = np.einsum("ij,njk->nik", a, zs) - b[None, :, :]
    res = np.sqrt(np.einsum("nik,nik->n", diff, diff))
    return float(res.min())


def dense_symmetric(d: int, seed: int, scale: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((d, d))
    return scale * (g + g.T) / 2.0


def m1_spectrum_oracle(d: int, r: int, lam_lo: float, delta: float) -> np.ndarray:
    """Reference spectrum for the linear-head model, built with a plain loop."""
    vals = []
    for i in range(1, r + 1):
        if r == 1:
            vals.append(1.0)
        else:
            vals.append(1.0 - (1.0 - lam_lo) * (i - 1) / (r - 1))
    for j in range(1, d - r + 1):
        vals.append((lam_lo - delta) * 0.9 ** (j - 1))
    return np.array(vals)


def m2_spectrum_oracle(d: int, r: int, delta: float, r_star: float) -> np.ndarray:
    """Reference spectrum for the flat-head model, built with a plain loop."""
    alpha = 1.0 - (1.0 - delta) / (r_star - r)
    vals = [1.0] * r
    for j in range(1, d - r + 1):
        vals.append((1.0 - delta) * alpha**j)
    return np.array(vals)


def projector_distance_oracle(u: np.ndarray, v: np.ndarray, ord=2) -> float:
    """Distance between spans via the explicit d x d projectors."""
    return float(np.linalg.norm(u @ u.T - v @ v.T, ord=ord))

"""Synthetic data models: spiked spectra, sample generators, sensing instances.

Two spectrum constructions are provided.  The linear-head model takes a
spectrum falling linearly from lambda_hi to lambda_lo across the leading
r values, then decaying geometrically (base 0.9) below the gap.  The
flat-head model keeps the leading r values at 1 and tunes the geometric
tail so its effective dimension approaches a requested target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidModelParams, NotPSD, ZeroMatrix
from .linalg import SubspaceEstimate, basis_of, symmetrize
from .seeding import derive_seed

# Geometric decay base for the linear-head model's tail.
TAIL_DECAY = 0.9
# Eigenvalues of a covariance may dip this far below zero before we refuse to sample.
PSD_FLOOR = -1e-10


@dataclass(frozen=True)
class SpectralModel:
    """A ground-truth symmetric matrix described by its spectrum.

    eigenvalues are descending with eigenvalues[0] == 1; delta records
    the realized gap eigenvalues[r-1] - eigenvalues[r].  For the
    flat-head builder, r_star_target keeps the requested effective
    dimension (the realized value is the intdim property).
    """

    d: int
    r: int
    eigenvalues: np.ndarray
    basis_seed: int
    delta: float
    r_star_target: float | None = None

    @property
    def intdim(self) -> float:
        """Realized effective dimension: trace over spectral norm."""
        return float(self.eigenvalues.sum() / self.eigenvalues[0])


def model_m1(
    d: int,
    r: int,
    lambda_lo: float,
    lambda_hi: float,
    delta: float,
    basis_seed: int = 0,
) -> SpectralModel:
    """Linear-head spectrum: lambda_hi down to lambda_lo over r values, then a 0.9-tail.

    Requires 0 < delta < lambda_lo <= lambda_hi == 1.  For r >= 2 the
    realized gap equals delta exactly; for r == 1 the head is the single
    value lambda_hi and the realized gap is lambda_hi - (lambda_lo - delta).
    """
    _check_dims(d, r)
    if not (0.0 < delta < lambda_lo <= lambda_hi):
        raise InvalidModelParams(
            f"need 0 < delta < lambda_lo <= lambda_hi, got delta={delta}, "
            f"lambda_lo={lambda_lo}, lambda_hi={lambda_hi}"
        )
    if lambda_hi != 1.0:
        raise InvalidModelParams("lambda_hi must be 1.0 (spectra are normalized)")
    tau = np.empty(d, dtype=np.float64)
    if r == 1:
        tau[0] = lambda_hi
    else:
        i = np.arange(1, r + 1, dtype=np.float64)
        tau[:r] = lambda_hi - (lambda_hi - lambda_lo) * (i - 1.0) / (r - 1.0)
    j = np.arange(1, d - r + 1, dtype=np.float64)
    tau[r:] = (lambda_lo - delta) * TAIL_DECAY ** (j - 1.0)
    return SpectralModel(
        d=d,
        r=r,
        eigenvalues=tau,
        basis_seed=basis_seed,
        delta=float(tau[r - 1] - tau[r]),
    )


def model_m2(
    d: int,
    r: int,
    delta: float,
    r_star: float,
    basis_seed: int = 0,
) -> SpectralModel:
    """Flat-head spectrum: r ones, then (1 - delta) * alpha**(i - r).

    alpha = 1 - (1 - delta)/(r_star - r), so the infinite tail would sum
    to (1 - delta) * alpha / (1 - alpha) and the effective dimension
    approaches r + that sum as d grows; the length-d truncation realizes
    slightly less, which the intdim property reports.  Requires
    0 < delta < 1 and r_star > r + (1 - delta) so that alpha lies in (0, 1).
    """
    _check_dims(d, r)
    if not (0.0 < delta < 1.0):
        raise InvalidModelParams(f"need 0 < delta < 1, got {delta}")
    if not r_star > r + (1.0 - delta):
        raise InvalidModelParams(
            f"need r_star > r + (1 - delta) = {r + 1.0 - delta}, got {r_star}"
        )
    alpha = 1.0 - (1.0 - delta) / (r_star - r)
    tau = np.empty(d, dtype=np.float64)
    tau[:r] = 1.0
    j = np.arange(1, d - r + 1, dtype=np.float64)
    tau[r:] = (1.0 - delta) * alpha**j
    return SpectralModel(
        d=d,
        r=r,
        eigenvalues=tau,
        basis_seed=basis_seed,
        delta=float(1.0 - (1.0 - delta) * alpha),
        r_star_target=float(r_star),
    )


def _check_dims(d: int, r: int):
    if d < 2 or not (1 <= r < d):
        raise InvalidModelParams(f"need d >= 2 and 1 <= r < d, got d={d}, r={r}")


def haar_orthogonal(d: int, seed: int) -> np.ndarray:
    """Haar-distributed d x d orthogonal matrix.

    QR of a standard Gaussian matrix, with columns rescaled so the R
    diagonal is positive; that correction is what makes the law Haar.
    """
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((d, d))
    q, rmat = np.linalg.qr(g)
    return q * np.where(np.diag(rmat) < 0.0, -1.0, 1.0)


def realize_matrix(model: SpectralModel) -> tuple[np.ndarray, SubspaceEstimate]:
    """Draw X = U diag(tau) U.T with Haar U from the model's basis_seed.

    Returns (X, V1) where V1 spans the leading r eigenvectors, i.e. the
    first r columns of U.
    """
    u = haar_orthogonal(model.d, model.basis_seed)
    x = (u * model.eigenvalues) @ u.T
    x = (x + x.T) / 2.0
    return x, SubspaceEstimate(u[:, : model.r])


def sample_gaussian(x, n: int, seed: int) -> np.ndarray:
    """n i.i.d. centered Gaussian rows with covariance x.

    The square root is taken through the symmetric eigendecomposition
    (never Cholesky, which rejects semidefinite inputs); eigenvalues may
    dip to -1e-10 from roundoff and are clamped at zero.
    """
    cov = symmetrize(x)
    if n < 1:
        raise InvalidModelParams(f"need n >= 1, got {n}")
    w, v = np.linalg.eigh(cov)
    if w[0] < PSD_FLOOR * max(1.0, abs(w[-1])):
        raise NotPSD(f"covariance has eigenvalue {w[0]:.3e}")
    w = np.clip(w, 0.0, None)
    root = (v * np.sqrt(w)) @ v.T
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, cov.shape[0])) @ root


def discrete_uniform_atoms(k: int, d: int, seed: int) -> np.ndarray:
    """k atoms drawn uniformly on the sphere of radius sqrt(d), as rows."""
    if k < 2:
        raise InvalidModelParams(f"need k >= 2 atoms, got {k}")
    if d < 1:
        raise InvalidModelParams(f"need d >= 1, got {d}")
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((k, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroMatrix("degenerate zero draw for an atom")
    return g / norms * np.sqrt(d)


def sample_discrete_uniform(
    k: int,
    d: int,
    n: int,
    seed: int,
    atom_seed: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """n uniform picks from k fixed atoms on the sphere of radius sqrt(d).

    Returns (samples, population_second_moment) where the second moment
    is the exact atom average (1/k) sum_j y_j y_j.T.  Passing atom_seed
    lets several nodes share one atom set while drawing independent picks.
    """
    atoms = discrete_uniform_atoms(k, d, seed if atom_seed is None else atom_seed)
    if n < 1:
        raise InvalidModelParams(f"need n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, k, size=n)
    second_moment = atoms.T @ atoms / k
    return atoms[picks], (second_moment + second_moment.T) / 2.0


def local_covariance(samples) -> np.ndarray:
    """Uncentered second-moment matrix (1/n) samples.T @ samples, exactly symmetric."""
    arr = np.asarray(samples, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise DimensionMismatch(f"samples must be (n, d) with n >= 1, got {arr.shape}")
    c = arr.T @ arr / arr.shape[0]
    return (c + c.T) / 2.0


@dataclass(frozen=True)
class NodeDataset:
    """One worker's data: optional raw samples plus the local symmetric matrix."""

    node_id: int
    local_matrix: np.ndarray
    n: int
    samples: np.ndarray | None = None

    @classmethod
    def from_samples(cls, node_id: int, samples: np.ndarray) -> "NodeDataset":
        return cls(
            node_id=node_id,
            local_matrix=local_covariance(samples),
            n=samples.shape[0],
            samples=samples,
        )


def gaussian_node_datasets(x, m: int, n: int, seed: int) -> list[NodeDataset]:
    """m nodes, each with n Gaussian samples of covariance x, seeds derived per node."""
    if m < 1:
        raise InvalidModelParams(f"need m >= 1 nodes, got {m}")
    return [
        NodeDataset.from_samples(i, sample_gaussian(x, n, derive_seed(seed, "node", i)))
        for i in range(m)
    ]


def discrete_node_datasets(
    k: int, d: int, m: int, n: int, seed: int
) -> tuple[list[NodeDataset], np.ndarray]:
    """m nodes sampling from one shared k-atom distribution.

    Atoms are drawn once from a seed derived for the instance; each node
    draws its n picks with its own derived seed.  Returns the datasets
    and the exact population second moment.
    """
    if m < 1:
        raise InvalidModelParams(f"need m >= 1 nodes, got {m}")
    atom_seed = derive_seed(seed, "atoms")
    datasets = []
    population = None
    for i in range(m):
        samples, population = sample_discrete_uniform(
            k, d, n, derive_seed(seed, "node", i), atom_seed=atom_seed
        )
        datasets.append(NodeDataset.from_samples(i, samples))
    return datasets, population


@dataclass(frozen=True)
class SensingInstance:
    """Quadratic-sensing data: y_i = ||X_sharp.T a_i||^2 plus optional noise."""

    x_sharp: SubspaceEstimate
    designs: np.ndarray
    measurements: np.ndarray
    truncation_tau: float

    @property
    def n_total(self) -> int:
        return self.designs.shape[0]


def sensing_instance(
    d: int,
    r: int,
    n_total: int,
    seed: int,
    tau_mult: float = 9.0,
    noise_sd: float = 0.0,
    x_sharp=None,
) -> SensingInstance:
    """Draw a quadratic-sensing instance with Gaussian designs.

    The truncation level is tau_mult times the mean measurement; 9 keeps
    roughly the nine-sigma tail out of the surrogate.  x_sharp may be
    forced (any (d, r) orthonormal array) for diagnostics; by default it
    is a uniformly random orthonormal frame.
    """
    if d < 1 or not (1 <= r <= d):
        raise InvalidModelParams(f"need 1 <= r <= d, got d={d}, r={r}")
    if n_total < 1:
        raise InvalidModelParams(f"need n_total >= 1, got {n_total}")
    if tau_mult <= 0.0:
        raise InvalidModelParams(f"need tau_mult > 0, got {tau_mult}")
    if noise_sd < 0.0:
        raise InvalidModelParams(f"need noise_sd >= 0, got {noise_sd}")
    rng = np.random.default_rng(seed)
    if x_sharp is None:
        g = rng.standard_normal((d, r))
        q, rmat = np.linalg.qr(g)
        frame = SubspaceEstimate(q * np.where(np.diag(rmat) < 0.0, -1.0, 1.0))
    else:
        frame = x_sharp if isinstance(x_sharp, SubspaceEstimate) else SubspaceEstimate(x_sharp)
        if frame.dim_ambient != d or frame.dim_subspace != r:
            raise DimensionMismatch(
                f"x_sharp shape {frame.basis.shape} does not match (d, r)=({d}, {r})"
            )
    designs = rng.standard_normal((n_total, d))
    y = np.einsum("ij,ij->i", designs @ frame.basis, designs @ frame.basis)
    if noise_sd > 0.0:
        y = y + noise_sd * rng.standard_normal(n_total)
    tau = float(tau_mult * np.mean(y))
    return SensingInstance(
        x_sharp=frame, designs=designs, measurements=y, truncation_tau=tau
    )


def sensing_surrogate(instance: SensingInstance, node_slice) -> np.ndarray:
    """Surrogate matrix (1/N) sum of t(y_i) a_i a_i.T over one node's measurements.

    t(y) = y when y <= truncation_tau, else 0; the truncation keeps the
    heavy upper tail of the quadratic measurements from dominating.
    """
    a = instance.designs[node_slice]
    y = instance.measurements[node_slice]
    if a.shape[0] < 1:
        raise DimensionMismatch("node_slice selects no measurements")
    w = np.where(y <= instance.truncation_tau, y, 0.0)
    surrogate = (a * w[:, None]).T @ a / a.shape[0]
    return (surrogate + surrogate.T) / 2.0

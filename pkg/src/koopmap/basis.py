"""Data-driven orthonormal basis via variable-bandwidth diffusion maps.

The pipeline has two phases. A density phase estimates the sampling density
with an ad-hoc k-nearest-neighbor bandwidth and an automatically tuned scale.
The main phase builds a variable-bandwidth Gaussian kernel whose per-point
bandwidths are a power of that density (or of per-sample speeds for the
time-change variant, or of a shift-robust proxy for noisy delay data),
applies the diffusion-maps Markov normalization, and diagonalizes the
resulting symmetric operator. The eigenvectors, divided componentwise by the
leading one, form an orthonormal set under the returned weights ``w``, with
``phi[:, 0]`` constant.
"""

import os
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import pairwise
from .exceptions import (
    ConnectivityError,
    DegenerateGeometryError,
    ParameterError,
    SpectrumDegeneracyError,
    TuningError,
)
from .kmatio import read_matrix, write_matrix

__all__ = [
    "KernelSpec",
    "DensityEstimate",
    "BandwidthTuning",
    "MarkovOperators",
    "DiffusionBasis",
    "default_epsilon_grid",
    "adhoc_bandwidth",
    "tune_bandwidth",
    "estimate_density",
    "noisy_density_proxy",
    "build_kernel",
    "markov_normalize",
    "eigensolve_basis",
    "compute_basis",
    "save_basis",
    "load_basis",
]

VARIANTS = ("standard", "delay", "noisy", "time_change")

_DENSE_LIMIT = 4096  # all-pairs kernels below this size
_DEFAULT_KNN = 1024


@dataclass(frozen=True)
class KernelSpec:
    """Configuration of one kernel-basis construction.

    ``epsilon`` is the kernel bandwidth scale; ``None`` selects it
    automatically by maximizing the log-log slope of the kernel sum.
    ``m`` is the manifold dimension entering the bandwidth exponents.
    ``bandwidth_inflation`` multiplies the tuned scale (``None`` picks the
    variant default: 1 for standard/time_change, 4 for delay/noisy).
    """

    variant: str = "standard"
    epsilon: float | None = None
    m: int = 2
    knn_truncation: int | None = None
    bandwidth_inflation: float | None = None
    density_knn: int = 8

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown kernel variant {self.variant!r}", key="kernel")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ParameterError("epsilon must be positive", key="epsilon")
        if self.m < 1:
            raise ParameterError("manifold dimension m must be >= 1", key="m")
        infl = self.inflation
        if not 1.0 <= infl <= 16.0:
            raise ParameterError(
                f"bandwidth_inflation must lie in [1, 16], got {infl}", key="inflation"
            )

    @property
    def inflation(self) -> float:
        if self.bandwidth_inflation is not None:
            return float(self.bandwidth_inflation)
        return 4.0 if self.variant in ("delay", "noisy") else 1.0


@dataclass(frozen=True)
class BandwidthTuning:
    epsilon_star: float
    m_est: float
    grid: np.ndarray
    sums: np.ndarray
    slopes: np.ndarray


@dataclass(frozen=True)
class DensityEstimate:
    """Sampling density relative to the Riemannian measure, per sample."""

    sigma: np.ndarray
    epsilon_star: float
    m_est: float
    adhoc_r: np.ndarray


@dataclass(frozen=True)
class MarkovOperators:
    P: object  # row-stochastic (dense ndarray or CSR)
    S: object  # symmetric, similar to P
    q: np.ndarray
    deg: np.ndarray


@dataclass(frozen=True)
class DiffusionBasis:
    """Orthonormal eigenfunctions of the kernel diffusion operator.

    ``phi[:, i]`` are orthonormal under ``sum_k w_k phi_ki phi_kj``;
    ``phi[:, 0]`` is the constant function 1. ``eta`` holds eigenvalues
    normalized so ``eta[0] = 0`` and ``eta[1] = 1``; ``varphi`` rescales
    column i by ``eta_i**-0.5`` so every element has unit discrete Dirichlet
    energy.
    """

    eta: np.ndarray
    phi: np.ndarray
    varphi: np.ndarray
    w: np.ndarray
    kappa: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.phi.shape[0]

    @property
    def n_functions(self) -> int:
        return self.phi.shape[1]


def default_epsilon_grid() -> np.ndarray:
    """Bandwidth candidates 2^l for l in {-30, -29.9, ..., 10}."""
    return 2.0 ** np.arange(-30.0, 10.0 + 1e-9, 0.1)


def adhoc_bandwidth(points: np.ndarray, k_nn: int) -> np.ndarray:
    """Root-mean-square distance to the k_nn - 1 nearest neighbors.

    Neighbor 1 is the point itself and is excluded from the average.
    Exact duplicates would give a zero bandwidth; those entries are perturbed
    to a tiny positive value with a warning.
    """
    n = points.shape[0]
    if not 2 <= k_nn <= n:
        raise ParameterError(f"k_nn must lie in [2, {n}], got {k_nn}", key="density_knn")
    d2, _ = pairwise.knn(points, k_nn)
    r = np.sqrt(d2[:, 1:].sum(axis=1) / (k_nn - 1))
    if np.all(r == 0.0):
        raise DegenerateGeometryError("all points coincide; no usable geometry")
    if np.any(r == 0.0):
        fill = r[r > 0].min() * 1e-6
        warnings.warn(
            f"{int(np.sum(r == 0))} duplicate points produced zero ad-hoc bandwidths; "
            f"perturbing them to {fill:.3e}",
            stacklevel=2,
        )
        r = np.where(r == 0.0, fill, r)
    return r


def tune_bandwidth(points: np.ndarray, bandwidths: np.ndarray,
                   epsilon_grid: np.ndarray | None = None,
                   max_points: int = 4096) -> BandwidthTuning:
    """Pick the kernel scale maximizing the log-log slope of the kernel sum.

    The maximal slope also estimates the manifold dimension as twice its
    value.
    """
    grid = default_epsilon_grid() if epsilon_grid is None else np.asarray(epsilon_grid)
    if grid.ndim != 1 or len(grid) < 3 or np.any(np.diff(grid) <= 0):
        raise ParameterError("epsilon grid must be increasing with length >= 3", key="grid")
    sums = pairwise.tuning_sums(points, bandwidths, grid, max_points=max_points)
    if not np.all(np.isfinite(sums)) or np.any(sums <= 0):
        raise TuningError("kernel sums vanished over the whole grid", key="grid")
    slopes = np.diff(np.log(sums)) / np.diff(np.log(grid))
    # the scaling law holds while the kernel is local (mean mass well below
    # saturation); the slope keeps creeping in the saturating tail, so the
    # argmax is restricted to the local regime when possible
    n_full = points.shape[0]
    local = sums[:-1] <= max(1.0 / np.sqrt(n_full), 32.0 / n_full)
    candidates = np.where(local)[0]
    if candidates.size:
        best = int(candidates[np.argmax(slopes[candidates])])
    else:
        best = int(np.argmax(slopes))
    if slopes[best] <= 0:
        raise TuningError("no positive log-log slope found; grid does not bracket the scale")
    return BandwidthTuning(
        epsilon_star=float(grid[best]),
        m_est=float(2.0 * slopes[best]),
        grid=grid,
        sums=sums,
        slopes=slopes,
    )


def estimate_density(points: np.ndarray, r: np.ndarray, epsilon: float, m: int,
                     m_est: float | None = None) -> DensityEstimate:
    """Kernel density estimate with ad-hoc bandwidths ``r``.

    ``sigma_i = sum_j exp(-d2_ij / (eps r_i r_j)) / (N (pi eps r_i^2)^(m/2))``.
    """
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive", key="epsilon")
    if m < 1:
        raise ParameterError("m must be >= 1", key="m")
    n = points.shape[0]
    rowsums = pairwise.kernel_rowsums(points, r, epsilon)
    sigma = rowsums / (n * (np.pi * epsilon * r**2) ** (m / 2.0))
    return DensityEstimate(
        sigma=sigma,
        epsilon_star=float(epsilon),
        m_est=float(m if m_est is None else m_est),
        adhoc_r=r,
    )


def noisy_density_proxy(delay_points: np.ndarray, epsilon: float) -> np.ndarray:
    """Density proxy robust to a constant shift of squared pairwise distances.

    Uses the fixed-bandwidth kernel normalized by its global mean, so a
    multiplicative bias common to all entries cancels:
    ``tau_i = mean_j k(i, j) / mean_kl k(k, l)``.
    """
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive", key="epsilon")
    ones = np.ones(delay_points.shape[0])
    rowsums = pairwise.kernel_rowsums(delay_points, ones, epsilon)
    return rowsums / rowsums.mean()


def _floor_speeds(xi: np.ndarray) -> np.ndarray:
    # speeds vanish only on a measure-zero set; flooring keeps bandwidths finite
    xi = np.asarray(xi, dtype=np.float64)
    if np.any(xi < 0):
        raise ParameterError("speeds must be nonnegative", key="xi")
    floor = np.percentile(xi, 0.1)
    if floor <= 0:
        positive = xi[xi > 0]
        if positive.size == 0:
            raise ParameterError("all speeds vanish; no usable time change", key="xi")
        floor = positive.min()
    return np.maximum(xi, floor)


def bandwidth_vector(spec: KernelSpec, density_or_tau: np.ndarray,
                     xi: np.ndarray | None = None) -> np.ndarray:
    """Per-point bandwidth factors ``b_i^(-1/m)`` entering the kernel."""
    base = np.asarray(density_or_tau, dtype=np.float64)
    if np.any(base <= 0):
        raise ParameterError("density values must be positive", key="density")
    if spec.variant == "time_change":
        if xi is None:
            raise ParameterError("time_change kernel needs speeds xi", key="xi")
        base = base * _floor_speeds(xi)
    return base ** (-1.0 / spec.m)


def build_kernel(spec: KernelSpec, points: np.ndarray, density_or_tau: np.ndarray,
                 xi: np.ndarray | None = None, epsilon: float | None = None):
    """Variable-bandwidth kernel matrix for the configured variant.

    Returns a dense array for small N (or when truncation is disabled) and a
    max-symmetrized k-nearest-neighbor CSR matrix otherwise. ``K_ii = 1`` and
    ``K = K.T`` in either representation.
    """
    eps = epsilon if epsilon is not None else spec.epsilon
    if eps is None or eps <= 0:
        raise ParameterError("build_kernel needs a positive epsilon", key="epsilon")
    b = bandwidth_vector(spec, density_or_tau, xi)
    n = points.shape[0]
    k = spec.knn_truncation
    if k is None:
        k = n if n <= _DENSE_LIMIT else _DEFAULT_KNN
    if k < 2:
        raise ParameterError("knn_truncation must be >= 2", key="knn")
    if k >= n:
        d2 = pairwise.sq_dists(points, points)
        return pairwise.kernel_from_sq_dists(d2, eps, bandwidths=b)
    return pairwise.sparse_bandwidth_kernel(points, b, eps, k)


def markov_normalize(kernel, exclude_diagonal: bool = False) -> MarkovOperators:
    """Diffusion-maps normalization of a symmetric nonnegative kernel.

    Divides by the outer product of the row sums ``q`` (removing the
    sampling-density bias), then row-normalizes to the stochastic matrix
    ``P`` and forms the symmetric ``S = D^1/2 P D^-1/2`` sharing its
    spectrum. With ``exclude_diagonal`` the self-pairs are dropped first,
    which makes the construction exactly invariant under a constant shift of
    all off-diagonal squared distances.
    """
    sparse = sp.issparse(kernel)
    K = kernel.copy()
    if exclude_diagonal:
        if sparse:
            K = K.tolil()
            K.setdiag(0.0)
            K = K.tocsr()
        else:
            np.fill_diagonal(K, 0.0)
    q = np.asarray(K.sum(axis=1)).ravel()
    if np.any(q <= 0):
        raise ConnectivityError("kernel has empty rows; graph is disconnected", key="knn")
    if sparse:
        inv_q = sp.diags(1.0 / q)
        ktilde = inv_q @ K @ inv_q
        deg = np.asarray(ktilde.sum(axis=1)).ravel()
        if np.any(deg <= 0):
            raise ConnectivityError("normalized kernel has empty rows", key="knn")
        P = sp.diags(1.0 / deg) @ ktilde
        half = sp.diags(1.0 / np.sqrt(deg))
        S = (half @ ktilde @ half).tocsr()
        P = P.tocsr()
    else:
        ktilde = K / np.outer(q, q)
        deg = ktilde.sum(axis=1)
        if np.any(deg <= 0):
            raise ConnectivityError("normalized kernel has empty rows", key="knn")
        P = ktilde / deg[:, None]
        half = 1.0 / np.sqrt(deg)
        S = ktilde * np.outer(half, half)
    return MarkovOperators(P=P, S=S, q=q, deg=deg)


def eigensolve_basis(S, deg: np.ndarray, n: int, seed: int = 0,
                     meta: dict | None = None) -> DiffusionBasis:
    """Top-n eigendecomposition of ``S`` mapped to the diffusion basis.

    The eigenvectors of the row-stochastic operator are obtained by dividing
    each eigenvector of ``S`` componentwise by the leading one, which makes
    column 0 constant and the rest orthonormal under ``w = phi0**2``.
    """
    n_pts = S.shape[0]
    if not 1 <= n <= n_pts:
        raise ParameterError(f"n must lie in [1, {n_pts}]", key="n")
    iterative = n < n_pts // 3 and n_pts > 512
    if iterative:
        v0 = np.sqrt(deg)
        v0 /= np.linalg.norm(v0)
        kappa, vecs = spla.eigsh(S, k=n, which="LA", v0=v0)
        order = np.argsort(kappa)[::-1]
        kappa, vecs = kappa[order], vecs[:, order]
    else:
        dense = S.toarray() if sp.issparse(S) else np.asarray(S)
        kappa, vecs = scipy.linalg.eigh(dense)
        kappa, vecs = kappa[::-1][:n].copy(), vecs[:, ::-1][:, :n].copy()
    if vecs[:, 0].sum() < 0:
        vecs[:, 0] = -vecs[:, 0]
    lead = vecs[:, 0]
    if np.min(lead) <= 0:
        raise ConnectivityError(
            "leading eigenvector is not strictly positive; kernel graph is "
            "effectively disconnected", key="knn"
        )
    if kappa[0] < 1 - 1e-6:
        warnings.warn(f"leading eigenvalue {kappa[0]:.6f} deviates from 1", stacklevel=2)
    if n >= 2 and kappa[1] >= 1.0:
        raise SpectrumDegeneracyError("second eigenvalue reached 1; graph is disconnected")
    usable = n
    if np.any(kappa <= 0):
        usable = int(np.argmax(kappa <= 0))
        warnings.warn(
            f"eigenvalues beyond index {usable - 1} are nonpositive; truncating basis",
            stacklevel=2,
        )
        kappa, vecs = kappa[:usable], vecs[:, :usable]
    w = lead**2
    w = w / w.sum()
    phi = vecs / lead[:, None]
    log_kappa = np.log(kappa)
    eta = log_kappa / log_kappa[1] if usable >= 2 else np.zeros(usable)
    eta[0] = 0.0
    varphi = phi.copy()
    if usable >= 2:
        varphi[:, 1:] = phi[:, 1:] / np.sqrt(eta[1:])[None, :]
    return DiffusionBasis(
        eta=eta, phi=phi, varphi=varphi, w=w, kappa=kappa, meta=dict(meta or {})
    )


def compute_basis(points: np.ndarray, spec: KernelSpec, n: int,
                  xi: np.ndarray | None = None, seed: int = 0,
                  epsilon_grid: np.ndarray | None = None,
                  tuning_points: int = 4096):
    """Full basis construction: density phase, kernel, normalization, eigen.

    Returns ``(DiffusionBasis, DensityEstimate)``. ``points`` for the delay
    and noisy variants should already be delay-embedded (and scaled, see
    :meth:`koopmap.dataset.DelayEmbeddedSeries.scaled_points`). ``xi`` (per-
    sample speeds) is required for the time-change variant.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    r = adhoc_bandwidth(points, spec.density_knn)
    den_tuning = tune_bandwidth(points, r, epsilon_grid, max_points=tuning_points)
    density = estimate_density(points, r, den_tuning.epsilon_star, spec.m,
                               m_est=den_tuning.m_est)
    if spec.variant == "noisy":
        ones = np.ones(points.shape[0])
        tau_tuning = tune_bandwidth(points, ones, epsilon_grid, max_points=tuning_points)
        base = noisy_density_proxy(points, tau_tuning.epsilon_star)
        density = replace(density, sigma=base)
    else:
        base = density.sigma
    b = bandwidth_vector(spec, base, xi)
    if spec.epsilon is not None:
        eps_main = spec.epsilon
    else:
        main_tuning = tune_bandwidth(points, b, epsilon_grid, max_points=tuning_points)
        eps_main = main_tuning.epsilon_star * spec.inflation
    kernel = build_kernel(spec, points, base, xi, epsilon=eps_main)
    ops = markov_normalize(kernel, exclude_diagonal=(spec.variant == "noisy"))
    meta = {
        "variant": spec.variant,
        "epsilon": float(eps_main),
        "m": int(spec.m),
        "N": int(points.shape[0]),
        "n": int(n),
        "knn": int(spec.knn_truncation or 0),
        "inflation": float(spec.inflation),
        "seed": int(seed),
    }
    basis = eigensolve_basis(ops.S, ops.deg, n, seed=seed, meta=meta)
    return basis, density


def save_basis(basis: DiffusionBasis, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    write_matrix(basis.eta, os.path.join(directory, "eta.kmat"))
    write_matrix(basis.phi, os.path.join(directory, "phi.kmat"))
    write_matrix(basis.w, os.path.join(directory, "w.kmat"))
    write_matrix(basis.kappa, os.path.join(directory, "kappa.kmat"))
    lines = [f"{k}={basis.meta[k]}" for k in sorted(basis.meta)]
    with open(os.path.join(directory, "meta"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_basis(directory) -> DiffusionBasis:
    eta = read_matrix(os.path.join(directory, "eta.kmat")).ravel()
    phi = read_matrix(os.path.join(directory, "phi.kmat"))
    w = read_matrix(os.path.join(directory, "w.kmat")).ravel()
    kappa = read_matrix(os.path.join(directory, "kappa.kmat")).ravel()
    meta = {}
    meta_path = os.path.join(directory, "meta")
    if os.path.exists(meta_path):
        with open(meta_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if "=" in line:
                    key, val = line.strip().split("=", 1)
                    meta[key] = val
    varphi = phi.copy()
    if phi.shape[1] >= 2:
        varphi[:, 1:] = phi[:, 1:] / np.sqrt(eta[1:])[None, :]
    return DiffusionBasis(eta=eta, phi=phi, varphi=varphi, w=w, kappa=kappa, meta=meta)

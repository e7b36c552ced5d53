"""Product eigenfunction basis, mode decomposition, and density forecasting.

The generating eigenfunctions are unit-modulus, so integer powers and
products of them span a function algebra indexed by integer vectors. In that
basis the observation map yields Koopman modes, the generator splits into one
reconstructed vector field per basic frequency, and densities evolve as
uncoupled harmonic oscillators (or coupled ones after a time change).
"""

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dataset import TimeSeries, central_difference_field
from .exceptions import CapacityError, DensityError, ParameterError
from .galerkin import GeneratingSet

__all__ = [
    "ProductBasis",
    "KoopmanModes",
    "VFDecomposition",
    "ForecastResult",
    "TimeChangeCouplings",
    "build_product_basis",
    "koopman_modes",
    "decompose_vector_field",
    "decompose_all",
    "reconstruction_residual",
    "coupling_matrices",
    "expand_and_forecast",
    "matrix_exponential",
]

_DEFAULT_Z_CAP = 4 * 2**30  # bytes of product-basis sample matrix


@dataclass(frozen=True)
class ProductBasis:
    """Multiplicative basis generated by the unit-circle eigenfunctions.

    ``index_set[k]`` is the integer vector of generator powers for column k
    (the zero vector comes first, the rest in lexicographic order);
    ``omega[k]`` the associated frequency; ``G`` the Gram matrix under the
    sampling weights ``w``.
    """

    index_set: np.ndarray  # (n, m) integers
    z: np.ndarray          # (N, n) complex, unit modulus entries
    omega: np.ndarray      # (n,)
    G: np.ndarray          # (n, n) Hermitian
    w: np.ndarray
    l: int

    @property
    def n_functions(self) -> int:
        return self.z.shape[1]

    def conjugate_index(self) -> np.ndarray:
        """Position of -k for every index vector k."""
        lookup = {tuple(v): i for i, v in enumerate(self.index_set)}
        return np.array([lookup[tuple(-v)] for v in self.index_set])


@dataclass(frozen=True)
class KoopmanModes:
    """Spatial expansion coefficients of the observation map."""

    Fhat: np.ndarray  # (d, n) complex


@dataclass(frozen=True)
class VFDecomposition:
    """Reconstructed commuting (or coupled) components of the velocity field."""

    components: list  # m arrays of shape (d, N)
    residual: float


@dataclass(frozen=True)
class ForecastResult:
    times: np.ndarray
    rho: np.ndarray    # (N, n_times) density samples
    means: np.ndarray  # (s, n_times)
    stds: np.ndarray   # (s, n_times)


@dataclass(frozen=True)
class TimeChangeCouplings:
    """Oscillator couplings induced by a time change.

    ``H`` approximates products against the time-change function (weighted by
    the speeds), ``Hprime`` the plain ergodic Gram matrix; both are needed to
    propagate densities and read off expectations of the original flow in the
    time-changed eigenbasis.
    """

    H: np.ndarray
    Hprime: np.ndarray


def _solve_gram(G: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve G x = rhs with a Tikhonov fallback for ill-conditioned G."""
    try:
        ch = scipy.linalg.cho_factor(G, check_finite=False)
        d = np.abs(np.diag(ch[0]))
        if (d.max() / d.min()) ** 2 < 1e12:
            return scipy.linalg.cho_solve(ch, rhs, check_finite=False)
    except scipy.linalg.LinAlgError:
        pass
    lam = 1e-10 * np.trace(G).real / G.shape[0]
    warnings.warn("Gram matrix ill-conditioned; solving with Tikhonov shift", stacklevel=3)
    return scipy.linalg.solve(G + lam * np.eye(G.shape[0]), rhs, assume_a="her")


def build_product_basis(gens: GeneratingSet, l: int, w: np.ndarray,
                        max_bytes: int = _DEFAULT_Z_CAP) -> ProductBasis:
    """All products of generator powers up to order ``l`` per generator.

    Powers are taken of the pointwise-rescaled generators, negative powers as
    complex conjugates, so conjugate index vectors give exactly conjugate
    columns. The Gram matrix is accumulated in row blocks.
    """
    if l < 0:
        raise ParameterError("spectral order l must be >= 0", key="l")
    m = gens.n_generators
    n = (2 * l + 1) ** m
    n_samples = gens.zeta.shape[0]
    need = 16 * n * n_samples
    if need > max_bytes:
        raise CapacityError(
            f"product basis needs {need / 2**30:.2f} GiB for n={n}, cap is "
            f"{max_bytes / 2**30:.2f} GiB", key="l"
        )
    idx = [(0,) * m] + [k for k in itertools.product(range(-l, l + 1), repeat=m)
                        if any(k)]
    index_set = np.array(idx, dtype=np.int64)
    # power tables per generator; p[q] = zeta**q, negatives by conjugation
    powers = []
    for j in range(m):
        table = np.empty((2 * l + 1, n_samples), dtype=np.complex128)
        table[l] = 1.0
        for q in range(1, l + 1):
            table[l + q] = table[l + q - 1] * gens.zeta[:, j]
            table[l - q] = np.conj(table[l + q])
        powers.append(table)
    z = np.empty((n_samples, n), dtype=np.complex128)
    for col, k in enumerate(index_set):
        acc = powers[0][l + k[0]].copy()
        for j in range(1, m):
            acc *= powers[j][l + k[j]]
        z[:, col] = acc
    omega = index_set @ np.asarray(gens.Omega)
    w = np.asarray(w, dtype=np.float64)
    G = np.zeros((n, n), dtype=np.complex128)
    block = max(1, int(2**27 / max(n, 1)))
    for lo in range(0, n_samples, block):
        hi = min(lo + block, n_samples)
        zb = z[lo:hi]
        G += zb.conj().T @ (w[lo:hi, None] * zb)
    G = 0.5 * (G + G.conj().T)
    return ProductBasis(index_set=index_set, z=z, omega=omega, G=G, w=w, l=int(l))


def koopman_modes(x, pb: ProductBasis, w: np.ndarray | None = None) -> KoopmanModes:
    """Expansion coefficients of the observation map, one column per index."""
    data = x.samples if isinstance(x, TimeSeries) else np.asarray(x)
    w = pb.w if w is None else np.asarray(w)
    if data.shape[0] != pb.z.shape[0]:
        raise ParameterError("data rows must align with basis samples", key="N")
    return KoopmanModes(Fhat=data.T @ (w[:, None] * np.conj(pb.z)))


def _synthesis_coeffs(pb: ProductBasis, fhat: np.ndarray) -> np.ndarray:
    # analysis -> synthesis coefficients: Ftilde = Fhat G^-T  (rows per dim)
    return _solve_gram(pb.G.T, fhat.T).T


def decompose_vector_field(x, gens: GeneratingSet, pb: ProductBasis, i: int,
                           xi: np.ndarray | None = None) -> np.ndarray:
    """Data-space reconstruction of the i-th commuting component.

    Returns the real (d, N) field ``Re(i * Ftilde * diag(q_i Omega_i) *
    z^T)``, multiplied pointwise by the speeds ``xi`` for the time-changed
    decomposition.
    """
    if not 0 <= i < gens.n_generators:
        raise ParameterError(f"component index {i} out of range", key="component")
    modes = koopman_modes(x, pb)
    ftilde = _synthesis_coeffs(pb, modes.Fhat)
    scale = 1j * pb.index_set[:, i] * gens.Omega[i]
    comp = (ftilde * scale[None, :]) @ pb.z.T
    if xi is not None:
        comp = comp * np.asarray(xi)[None, :]
    return np.real(comp)


def reconstruction_residual(ts: TimeSeries, components) -> float:
    """Relative RMS error of the summed components against central differences."""
    total = np.zeros_like(components[0])
    for c in components:
        total = total + c
    fd = central_difference_field(ts)
    diff = total[:, 1:-1].T - fd.vectors
    return float(np.sqrt(np.mean(np.sum(diff**2, axis=1)) /
                         np.mean(np.sum(fd.vectors**2, axis=1))))


def decompose_all(ts: TimeSeries, gens: GeneratingSet, pb: ProductBasis,
                  xi: np.ndarray | None = None) -> VFDecomposition:
    """All components plus the relative RMS residual of their sum."""
    components = [decompose_vector_field(ts, gens, pb, i, xi=xi)
                  for i in range(gens.n_generators)]
    return VFDecomposition(components=components,
                           residual=reconstruction_residual(ts, components))


def coupling_matrices(pb: ProductBasis, w: np.ndarray, xi: np.ndarray) -> TimeChangeCouplings:
    """Oscillator coupling matrices for the time-changed forecast."""
    xi = np.asarray(xi, dtype=np.float64)
    if xi.shape[0] != pb.z.shape[0]:
        raise ParameterError("xi must align with basis samples", key="xi")
    if np.any(xi < 0):
        raise ParameterError("speeds must be nonnegative", key="xi")
    floor = np.percentile(xi, 0.1)
    if floor <= 0:
        floor = np.min(xi[xi > 0]) if np.any(xi > 0) else 1.0
    xi = np.maximum(xi, floor)
    w = np.asarray(w, dtype=np.float64)
    H = pb.z.conj().T @ ((w * xi)[:, None] * pb.z)
    H = 0.5 * (H + H.conj().T)
    # plain ergodic average; avoids dividing samples by the speeds
    Hp = pb.z.conj().T @ pb.z / pb.z.shape[0]
    Hp = 0.5 * (Hp + Hp.conj().T)
    return TimeChangeCouplings(H=H, Hprime=Hp)


def matrix_exponential(mat: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring (Pade core)."""
    mat = np.asarray(mat)
    if not np.all(np.isfinite(mat)):
        raise ParameterError("matrix exponential of non-finite input", key="times")
    out = scipy.linalg.expm(mat)
    if not np.all(np.isfinite(out)):
        raise ParameterError("matrix exponential overflowed", key="times")
    return out


def _propagators(pb: ProductBasis, couplings: TimeChangeCouplings | None,
                 times: np.ndarray, tilde0: np.ndarray) -> np.ndarray:
    """Coefficient trajectories (n, n_times) under the chosen dynamics."""
    if couplings is None:
        phase = np.exp(-1j * np.outer(pb.omega, times))
        return phase * tilde0[:, None]
    gen = -1j * _solve_gram(pb.G, couplings.H) * pb.omega[None, :]
    order = np.argsort(times)
    sorted_t = times[order]
    out = np.empty((pb.n_functions, len(times)), dtype=np.complex128)
    diffs = np.diff(np.concatenate([[0.0], sorted_t]))
    uniform = len(sorted_t) > 2 and np.allclose(
        diffs[1:], diffs[1], rtol=1e-9, atol=1e-12
    ) and abs(sorted_t[0] - diffs[1]) < 1e-9 * max(1.0, sorted_t[-1])
    if uniform:
        step = matrix_exponential(gen * diffs[1])
        current = tilde0.copy()
        if abs(sorted_t[0]) < 1e-14:
            out[:, order[0]] = current
            start = 1
        else:
            start = 0
        for pos in range(start, len(sorted_t)):
            current = step @ current
            out[:, order[pos]] = current
    else:
        for pos, t in enumerate(sorted_t):
            out[:, order[pos]] = matrix_exponential(gen * t) @ tilde0
    return out


def expand_and_forecast(rho0: np.ndarray, observables: np.ndarray, pb: ProductBasis,
                        w: np.ndarray | None = None, times=None,
                        couplings: TimeChangeCouplings | None = None) -> ForecastResult:
    """Expand a density, propagate it, and read off observable statistics.

    ``rho0`` holds density samples relative to the invariant measure and is
    normalized to unit weighted mean. Without couplings every coefficient
    rotates at its own frequency; with couplings the coefficient vector is
    propagated by the matrix exponential of the coupled generator, and
    expectations are contracted through the coupling Gram matrix. Standard
    deviations come from forecasting the squared observables alongside.
    """
    w = pb.w if w is None else np.asarray(w, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    rho0 = np.asarray(rho0, dtype=np.float64)
    mass = float(w @ rho0)
    if mass <= 0:
        raise DensityError(f"density has nonpositive weighted mean {mass}", key="density")
    rho0 = rho0 / mass
    f = np.atleast_2d(np.asarray(observables, dtype=np.float64))
    if f.shape[1] != rho0.shape[0]:
        raise ParameterError("observables must align with density samples", key="observables")
    zc = np.conj(pb.z)
    rho_hat = zc.T @ (w * rho0)
    tilde0 = _solve_gram(pb.G, rho_hat)
    f_hat = f @ (w[:, None] * zc)
    fsq_hat = (f**2) @ (w[:, None] * zc)
    tilde_t = _propagators(pb, couplings, times, tilde0)
    rho_t = np.real(pb.z @ tilde_t)
    if couplings is None:
        read = tilde_t
    else:
        read = _solve_gram(pb.G, couplings.Hprime @ tilde_t)
    means = np.real(f_hat @ np.conj(read))
    meansq = np.real(fsq_hat @ np.conj(read))
    stds = np.sqrt(np.clip(meansq - means**2, 0.0, None))
    return ForecastResult(times=times, rho=rho_t, means=means, stds=stds)

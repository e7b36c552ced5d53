"""Regularized-generator Galerkin eigenproblem and generator selection.

The generator of the Koopman group is represented in the energy-rescaled
diffusion basis by a matrix of weighted central differences along the
trajectory; a small diffusion term (the identity on the nonconstant modes,
thanks to the rescaling) regularizes the dense spectrum. Eigenpairs are
ranked by discrete Dirichlet energy, and a set of rationally independent
basic frequencies is selected from the least-rough eigenfunctions.
"""

import json
import os
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .basis import DiffusionBasis
from .exceptions import EigensolverError, ParameterError, SelectionError
from .kmatio import read_matrix, write_matrix

__all__ = [
    "GalerkinSystem",
    "KoopmanSpectrum",
    "GeneratingSet",
    "assemble",
    "solve",
    "check_asymptotic",
    "select_generators",
    "rationally_independent",
    "save_spectrum",
    "load_spectrum",
    "save_generators",
    "load_generators",
]


@dataclass(frozen=True)
class GalerkinSystem:
    """Matrices of the regularized advection eigenproblem.

    ``V`` is the advection form, ``b_diag`` the diagonal of the mass form
    (1, 1, 1/eta_2, ...), ``A = V - epsilon * D`` with ``D`` the diagonal
    (0, 1, 1, ...) representing the rough-mode penalty (constants carry no
    energy). ``varphi`` and ``w`` are kept for reconstructing eigenfunctions
    on the samples.
    """

    V: np.ndarray
    b_diag: np.ndarray
    A: np.ndarray
    epsilon: float
    dt: float
    varphi: np.ndarray
    w: np.ndarray


@dataclass(frozen=True)
class KoopmanSpectrum:
    """Eigenpairs of the regularized generator, sorted by Dirichlet energy.

    ``funcs[:, k]`` is the eigenfunction sampled on the data, normalized to
    unit weighted norm; ``energies[k]`` is the squared coefficient norm over
    the nonconstant modes.
    """

    gamma: np.ndarray
    coeffs: np.ndarray
    funcs: np.ndarray
    energies: np.ndarray
    order: np.ndarray
    w: np.ndarray

    @property
    def n_pairs(self) -> int:
        return self.gamma.shape[0]


@dataclass(frozen=True)
class GeneratingSet:
    """Selected basic frequencies and unit-circle generating eigenfunctions."""

    Omega: np.ndarray
    zeta: np.ndarray        # pointwise rescaled to |zeta| = 1
    zeta_raw: np.ndarray    # before rescaling, unit weighted norm
    gamma_raw: np.ndarray
    dirichlet: np.ndarray
    indices: np.ndarray     # positions in the energy-sorted spectrum
    delta: float
    qbar: int

    @property
    def n_generators(self) -> int:
        return self.Omega.shape[0]


def assemble(basis: DiffusionBasis, n: int, epsilon: float, dt: float | None = None,
             xi: np.ndarray | None = None) -> GalerkinSystem:
    """Assemble the advection and mass matrices in the rescaled basis.

    ``V_ij = sum_k varphi_ki w_k (varphi_(k+1)j - varphi_(k-1)j) / (2 dt)``
    over interior samples. With per-sample speeds ``xi`` the difference
    quotient is divided by the speed, which represents the time-changed
    generator instead. ``epsilon >= 0`` scales the diffusion penalty.
    """
    if dt is None:
        dt = float(basis.meta.get("dt", 0.0)) or None
    if dt is None or dt <= 0:
        raise ParameterError("assemble needs the sampling interval dt", key="dt")
    if not 1 <= n <= basis.n_functions:
        raise ParameterError(
            f"n={n} exceeds basis width {basis.n_functions}", key="n"
        )
    if epsilon < 0:
        raise ParameterError("epsilon must be nonnegative", key="galerkin_epsilon")
    varphi = basis.varphi[:, :n]
    w = basis.w
    diff = (varphi[2:, :] - varphi[:-2, :]) / (2.0 * dt)
    weights = w[1:-1]
    if xi is not None:
        xi = np.asarray(xi, dtype=np.float64)
        if xi.shape[0] != varphi.shape[0]:
            raise ParameterError("xi must align with the basis samples", key="xi")
        floor = np.percentile(xi, 0.1)
        if floor <= 0:
            floor = np.min(xi[xi > 0]) if np.any(xi > 0) else 1.0
        diff = diff / np.maximum(xi[1:-1], floor)[:, None]
    V = varphi[1:-1, :].T @ (weights[:, None] * diff)
    b_diag = np.ones(n)
    if n >= 3:
        b_diag[2:] = 1.0 / basis.eta[2:n]
    d_diag = np.ones(n)
    d_diag[0] = 0.0  # constants carry no roughness penalty
    A = V - epsilon * np.diag(d_diag)
    return GalerkinSystem(V=V, b_diag=b_diag, A=A, epsilon=float(epsilon),
                          dt=float(dt), varphi=varphi, w=w)


def solve(system: GalerkinSystem) -> KoopmanSpectrum:
    """Solve the generalized eigenproblem and sort by Dirichlet energy.

    The mass matrix is diagonal, so the pencil reduces to a standard dense
    nonsymmetric problem. Eigenfunctions are normalized to unit weighted
    norm with the phase fixed by making the entry of largest modulus real
    and positive.
    """
    n = system.A.shape[0]
    m_inv = 1.0 / system.b_diag
    try:
        gamma, coeffs = scipy.linalg.eig(m_inv[:, None] * system.A)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - rare
        raise EigensolverError(f"dense eigensolver failed: {exc}") from exc
    funcs = system.varphi @ coeffs
    norms = np.sqrt(np.einsum("i,ik->k", system.w, np.abs(funcs) ** 2))
    if np.any(norms == 0):
        raise EigensolverError("eigenvector with vanishing weighted norm")
    funcs /= norms[None, :]
    coeffs /= norms[None, :]
    # deterministic phase: entry of largest modulus real-positive
    anchor = np.argmax(np.abs(funcs), axis=0)
    phases = funcs[anchor, np.arange(n)]
    phases = phases / np.abs(phases)
    funcs *= np.conj(phases)[None, :]
    coeffs *= np.conj(phases)[None, :]
    energies = np.sum(np.abs(coeffs[1:, :]) ** 2, axis=0)
    order = np.argsort(energies, kind="stable")
    return KoopmanSpectrum(
        gamma=gamma[order],
        coeffs=coeffs[:, order],
        funcs=funcs[:, order],
        energies=energies[order],
        order=order,
        w=system.w,
    )


def check_asymptotic(spectrum: KoopmanSpectrum, epsilon: float) -> np.ndarray:
    """Damping-rate-to-energy ratios of the eigenpairs.

    In the smooth-eigenfunction regime the diffusion penalty shifts each
    eigenvalue by ``-epsilon * E_k``, so the returned ratio
    ``-Re(gamma_k) / (epsilon * E_k)`` is close to 1. Modes with negligible
    energy (the constant mode) yield NaN.
    """
    if epsilon <= 0:
        raise ParameterError("epsilon must be positive", key="galerkin_epsilon")
    denom = epsilon * spectrum.energies
    out = np.full(spectrum.n_pairs, np.nan)
    ok = denom > 1e-14
    out[ok] = -np.real(spectrum.gamma[ok]) / denom[ok]
    return out


def rationally_independent(candidate: float, accepted, delta: float | None,
                           qbar: int) -> bool:
    """Pairwise rational-independence test at precision ``(delta, qbar)``.

    ``candidate`` fails if integers ``1 <= p, q <= qbar`` exist with
    ``|q * Omega_i - p * candidate| <= delta`` for some accepted frequency.
    With ``delta=None`` the tolerance is ``1e-3`` times the largest frequency
    involved.
    """
    qs = np.arange(1, qbar + 1)
    for omega in accepted:
        tol = delta if delta is not None else 1e-3 * max(candidate, omega)
        residues = np.abs(qs[:, None] * omega - qs[None, :] * candidate)
        if np.min(residues) <= tol:
            return False
    return True


def select_generators(spectrum: KoopmanSpectrum, m: int, delta: float | None = None,
                      qbar: int = 10, spurious_tol: float = 1e-6) -> GeneratingSet:
    """Pick ``m`` rationally independent frequencies of least Dirichlet energy.

    Walks the energy-sorted eigenpairs, keeping the positive-frequency member
    of each conjugate pair, skipping the constant mode and near-zero
    frequencies, and accepting a frequency only if it passes the pairwise
    independence test against all previously accepted ones. Each accepted
    eigenfunction is returned both raw and rescaled pointwise to the unit
    circle.
    """
    if m < 1:
        raise ParameterError("need m >= 1 generators", key="m")
    omegas, idxs = [], []
    for k in range(spectrum.n_pairs):
        freq = float(np.imag(spectrum.gamma[k]))
        if freq <= spurious_tol:
            continue  # constant mode, spurious real mode, or negative partner
        if not rationally_independent(freq, omegas, delta, qbar):
            continue
        omegas.append(freq)
        idxs.append(k)
        if len(omegas) == m:
            break
    if len(omegas) < m:
        raise SelectionError(
            f"found {len(omegas)} independent frequencies, needed {m}", key="m"
        )
    idxs = np.asarray(idxs)
    raw = spectrum.funcs[:, idxs]
    mods = np.abs(raw)
    if np.any(mods == 0):
        raise SelectionError("generator eigenfunction vanishes at a sample")
    zeta = raw / mods
    eff_delta = delta if delta is not None else 1e-3 * max(omegas)
    return GeneratingSet(
        Omega=np.asarray(omegas),
        zeta=zeta,
        zeta_raw=raw,
        gamma_raw=spectrum.gamma[idxs],
        dirichlet=spectrum.energies[idxs],
        indices=idxs,
        delta=float(eff_delta),
        qbar=int(qbar),
    )


def save_spectrum(spectrum: KoopmanSpectrum, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    write_matrix(spectrum.gamma[:, None], os.path.join(directory, "gamma.kmat"))
    write_matrix(spectrum.coeffs, os.path.join(directory, "coeffs.kmat"))
    write_matrix(spectrum.funcs, os.path.join(directory, "funcs.kmat"))
    write_matrix(spectrum.energies, os.path.join(directory, "energies.kmat"))
    write_matrix(spectrum.w, os.path.join(directory, "w.kmat"))


def load_spectrum(directory) -> KoopmanSpectrum:
    gamma = read_matrix(os.path.join(directory, "gamma.kmat")).ravel()
    coeffs = read_matrix(os.path.join(directory, "coeffs.kmat"))
    funcs = read_matrix(os.path.join(directory, "funcs.kmat"))
    energies = read_matrix(os.path.join(directory, "energies.kmat")).ravel().real
    w = read_matrix(os.path.join(directory, "w.kmat")).ravel().real
    return KoopmanSpectrum(gamma=gamma, coeffs=coeffs, funcs=funcs,
                           energies=energies, order=np.arange(len(gamma)), w=w)


def save_generators(gens: GeneratingSet, path, extra: dict | None = None) -> None:
    payload = {
        "Omega": [float(v) for v in gens.Omega],
        "indices": [int(v) for v in gens.indices],
        "dirichlet": [float(v) for v in gens.dirichlet],
        "gamma": [[float(g.real), float(g.imag)] for g in gens.gamma_raw],
        "delta": gens.delta,
        "qbar": gens.qbar,
    }
    payload.update(extra or {})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_generators(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
